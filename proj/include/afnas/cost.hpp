#ifndef AFNAS_COST_HPP
#define AFNAS_COST_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "afnas/genome.hpp"

namespace afnas::cost {

struct CostReport {
    std::int64_t params = 0;
    std::int64_t weight_bytes = 0;
    std::int64_t macs_per_window = 0;
    std::int64_t max_layer_output = 0; // elements, max over layers of H_i * C_i
    std::int64_t activation_bytes = 0;
    std::int64_t linebuffer_bytes = 0;
    int total_bits = 0; // w_w + w_a
};

struct ConstraintConfig {
    std::int64_t max_params = 1000000;
    int max_layers = 5;
    int max_kernel = 32;
    double metric_floor = 0.7;
    bool require_pow2 = true;
    bool require_stride_le_kernel = true;
    // 0 disables the cap. Extra knob that bounds per-candidate training
    // cost so desk-profile searches stay within their time budget.
    std::int64_t max_macs_per_window = 0;
};

enum class ViolationCode {
    kStrideExceedsKernel,
    kNotPowerOfTwo,
    kTooManyLayers,
    kKernelTooLarge,
    kTooManyParams,
    kShapeInfeasible,
    kTooManyMacs,
};

const char* violation_name(ViolationCode code);

struct Violation {
    ViolationCode code;
    std::string message;
};

// Empty result means the genome satisfies every constraint. All violations
// are reported, not only the first.
std::vector<Violation> validate(const Genome& g, const ConstraintConfig& cfg, int input_length);

// Proxy resource figures. MACs use the nominal cost expression evaluated
// at floor(H_i/S) output positions per layer; shape-dependent fields use the
// exact valid-padding chain.
CostReport report(const Genome& g, int input_length, int input_channels = 2);

std::string report_text(const CostReport& r);

} // namespace afnas::cost

#endif
