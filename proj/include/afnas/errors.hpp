#ifndef AFNAS_ERRORS_HPP
#define AFNAS_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace afnas {

// Violated precondition or broken invariant on the caller's side.
struct ContractError : std::logic_error {
    explicit ContractError(const std::string& msg) : std::logic_error(msg) {}
};

// A network whose shape chain collapses below its kernel sizes. The search
// treats this as data (rejected genome), not as a crash.
struct InfeasibleShapeError : std::runtime_error {
    explicit InfeasibleShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ParseError : std::runtime_error {
    ParseError(const std::string& msg, std::size_t where)
        : std::runtime_error(msg + " (at " + std::to_string(where) + ")"), location(where) {}
    std::size_t location; // line number for text inputs, byte offset for binary
};

// Malformed deployment blob or checkpoint.
struct FormatError : std::runtime_error {
    FormatError(const std::string& msg, std::size_t offset_bytes)
        : std::runtime_error(msg + " (offset " + std::to_string(offset_bytes) + ")"),
          offset(offset_bytes) {}
    std::size_t offset;
};

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct UndefinedMetricError : std::runtime_error {
    explicit UndefinedMetricError(const std::string& msg) : std::runtime_error(msg) {}
};

struct TrainingFailureError : std::runtime_error {
    explicit TrainingFailureError(const std::string& msg) : std::runtime_error(msg) {}
};

// Random generation/repair could not produce a valid genome within its retry budget.
struct GenerationError : std::runtime_error {
    explicit GenerationError(const std::string& msg) : std::runtime_error(msg) {}
};

// Engine-internal fault, e.g. a stalled pipeline. Carries a stage trace.
struct InternalError : std::runtime_error {
    explicit InternalError(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace afnas

#endif
