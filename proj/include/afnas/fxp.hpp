#ifndef AFNAS_FXP_HPP
#define AFNAS_FXP_HPP

#include <array>
#include <cmath>
#include <cstdint>
#include <string>

#include "afnas/errors.hpp"

namespace afnas::fxp {

// Two's-complement fixed-point format: `width_bits` total bits of which
// `precision_bits` are fractional.
struct FxpFormat {
    int width_bits = 16;
    int precision_bits = 8;

    friend bool operator==(const FxpFormat&, const FxpFormat&) = default;
};

inline void check_format(const FxpFormat& fmt) {
    if (fmt.width_bits < 2 || fmt.width_bits > 32)
        throw ContractError("fxp: width_bits must be in [2,32], got " + std::to_string(fmt.width_bits));
    if (fmt.precision_bits < 0 || fmt.precision_bits >= fmt.width_bits)
        throw ContractError("fxp: precision_bits must be in [0,width), got " +
                            std::to_string(fmt.precision_bits));
}

// Real-valued clip bounds of the quantizer. The upper bound is the literal
// 2^(w-p-1) - 1; kMaxCode instead clips at the largest representable code,
// 2^(w-p-1) - 2^-p.
enum class ClipMode { kLiteral, kMaxCode };

inline double clip_lo(const FxpFormat& fmt) {
    return -std::ldexp(1.0, fmt.width_bits - fmt.precision_bits - 1);
}

inline double clip_hi(const FxpFormat& fmt, ClipMode mode = ClipMode::kLiteral) {
    const double range = std::ldexp(1.0, fmt.width_bits - fmt.precision_bits - 1);
    if (mode == ClipMode::kLiteral) return range - 1.0;
    return range - std::ldexp(1.0, -fmt.precision_bits);
}

// Round |x| half away from zero onto the 2^-p grid, then clip. All arithmetic
// is exact in doubles for any format up to 32 bits.
inline double quantize(double x, const FxpFormat& fmt, ClipMode mode = ClipMode::kLiteral) {
    if (!std::isfinite(x)) throw std::domain_error("fxp: quantize of non-finite value");
    const double scale = std::ldexp(1.0, fmt.precision_bits);
    const double magnitude = std::floor(std::abs(x) * scale + 0.5) / scale;
    const double rounded = std::copysign(magnitude, x);
    const double lo = clip_lo(fmt);
    const double hi = clip_hi(fmt, mode);
    if (rounded < lo) return lo;
    if (rounded > hi) return hi;
    return rounded;
}

// Integer code of an already-quantized value.
inline std::int64_t to_code(double x, const FxpFormat& fmt) {
    const double scaled = std::ldexp(x, fmt.precision_bits);
    const auto code = static_cast<std::int64_t>(std::llround(scaled));
    const std::int64_t min_code = -(std::int64_t(1) << (fmt.width_bits - 1));
    const std::int64_t max_code = (std::int64_t(1) << (fmt.width_bits - 1)) - 1;
    if (code < min_code || code > max_code)
        throw std::out_of_range("fxp: code " + std::to_string(code) + " does not fit " +
                                std::to_string(fmt.width_bits) + " bits");
    return code;
}

inline double from_code(std::int64_t code, const FxpFormat& fmt) {
    const std::int64_t min_code = -(std::int64_t(1) << (fmt.width_bits - 1));
    const std::int64_t max_code = (std::int64_t(1) << (fmt.width_bits - 1)) - 1;
    if (code < min_code || code > max_code)
        throw std::out_of_range("fxp: code " + std::to_string(code) + " does not fit " +
                                std::to_string(fmt.width_bits) + " bits");
    return std::ldexp(static_cast<double>(code), -fmt.precision_bits);
}

// Clipped straight-through estimator: the surrogate gradient passes upstream
// through the rounding but dies in the saturated region.
inline double ste_grad(double upstream, double x, const FxpFormat& fmt,
                       ClipMode mode = ClipMode::kLiteral) {
    if (x > clip_lo(fmt) && x < clip_hi(fmt, mode)) return upstream;
    return 0.0;
}

// Weight/activation format pair attached to a network.
struct QuantPair {
    FxpFormat weights;
    FxpFormat activations;

    friend bool operator==(const QuantPair&, const QuantPair&) = default;
};

// Formats the search draws from.
inline constexpr std::array<FxpFormat, 7> kSearchFormats = {{
    {32, 16}, {24, 16}, {16, 10}, {16, 8}, {16, 12}, {12, 6}, {12, 8},
}};

} // namespace afnas::fxp

#endif
