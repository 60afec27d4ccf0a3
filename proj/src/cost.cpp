#include "afnas/cost.hpp"

#include <sstream>

#include "afnas/nn.hpp"

namespace afnas::cost {

namespace {

bool is_pow2(int v) { return v > 0 && (v & (v - 1)) == 0; }

std::int64_t ceil_div(std::int64_t a, std::int64_t b) { return (a + b - 1) / b; }

// Nominal MAC figure for the whole genome: each layer contributes
// floor(H_in/S) * C_in * (K + C_out); the shape chain itself is exact.
std::int64_t nominal_macs(const Genome& g, int input_length, int input_channels) {
    std::int64_t macs = 0;
    int h = input_length;
    int cin = input_channels;
    for (const auto& l : g.layers) {
        macs += static_cast<std::int64_t>(h / l.stride) * cin * (l.kernel + l.out_channels);
        h = nn::conv_output_length(h, l.kernel, l.stride);
        cin = l.out_channels;
    }
    return macs;
}

} // namespace

const char* violation_name(ViolationCode code) {
    switch (code) {
        case ViolationCode::kStrideExceedsKernel: return "stride-exceeds-kernel";
        case ViolationCode::kNotPowerOfTwo: return "not-power-of-two";
        case ViolationCode::kTooManyLayers: return "too-many-layers";
        case ViolationCode::kKernelTooLarge: return "kernel-too-large";
        case ViolationCode::kTooManyParams: return "too-many-params";
        case ViolationCode::kShapeInfeasible: return "shape-infeasible";
        case ViolationCode::kTooManyMacs: return "too-many-macs";
    }
    throw ContractError("violation_name: bad enum value");
}

std::vector<Violation> validate(const Genome& g, const ConstraintConfig& cfg, int input_length) {
    std::vector<Violation> out;
    const auto add = [&out](ViolationCode code, std::string msg) {
        out.push_back({code, std::move(msg)});
    };

    if (g.layers.empty()) {
        add(ViolationCode::kShapeInfeasible, "genome has no layers");
        return out;
    }
    if (static_cast<int>(g.layers.size()) > cfg.max_layers)
        add(ViolationCode::kTooManyLayers, std::to_string(g.layers.size()) + " layers exceed " +
                                               std::to_string(cfg.max_layers));

    for (std::size_t i = 0; i < g.layers.size(); ++i) {
        const LayerGene& l = g.layers[i];
        const std::string at = "layer " + std::to_string(i) + ": ";
        if (cfg.require_pow2) {
            if (!is_pow2(l.kernel)) add(ViolationCode::kNotPowerOfTwo, at + "kernel " + std::to_string(l.kernel));
            if (!is_pow2(l.out_channels))
                add(ViolationCode::kNotPowerOfTwo, at + "channels " + std::to_string(l.out_channels));
            if (!is_pow2(l.stride)) add(ViolationCode::kNotPowerOfTwo, at + "stride " + std::to_string(l.stride));
        }
        if (cfg.require_stride_le_kernel && l.stride > l.kernel)
            add(ViolationCode::kStrideExceedsKernel,
                at + "stride " + std::to_string(l.stride) + " > kernel " + std::to_string(l.kernel));
        if (l.kernel > cfg.max_kernel)
            add(ViolationCode::kKernelTooLarge,
                at + "kernel " + std::to_string(l.kernel) + " > " + std::to_string(cfg.max_kernel));
        if (l.kernel < 1 || l.out_channels < 1 || l.stride < 1)
            add(ViolationCode::kShapeInfeasible, at + "non-positive dimension");
    }

    bool shapes_ok = true;
    {
        int h = input_length;
        for (std::size_t i = 0; i < g.layers.size(); ++i) {
            const LayerGene& l = g.layers[i];
            if (l.kernel < 1 || l.stride < 1) {
                shapes_ok = false;
                break;
            }
            if (h < l.kernel) {
                add(ViolationCode::kShapeInfeasible,
                    "layer " + std::to_string(i) + ": length " + std::to_string(h) + " < kernel " +
                        std::to_string(l.kernel));
                shapes_ok = false;
                break;
            }
            h = nn::conv_output_length(h, l.kernel, l.stride);
        }
    }

    bool dims_positive = true;
    for (const auto& l : g.layers)
        dims_positive = dims_positive && l.kernel >= 1 && l.out_channels >= 1 && l.stride >= 1;

    if (dims_positive) {
        const std::int64_t params = nn::param_count(g, 2);
        if (params > cfg.max_params)
            add(ViolationCode::kTooManyParams,
                std::to_string(params) + " params exceed " + std::to_string(cfg.max_params));
        if (cfg.max_macs_per_window > 0 && shapes_ok) {
            const std::int64_t macs = nominal_macs(g, input_length, 2);
            if (macs > cfg.max_macs_per_window)
                add(ViolationCode::kTooManyMacs,
                    std::to_string(macs) + " MACs/window exceed " +
                        std::to_string(cfg.max_macs_per_window));
        }
    }
    return out;
}

CostReport report(const Genome& g, int input_length, int input_channels) {
    if (g.layers.empty()) throw ContractError("cost report: genome has no layers");
    fxp::check_format(g.quant.weights);
    fxp::check_format(g.quant.activations);

    CostReport r;
    r.params = nn::param_count(g, input_channels);
    r.total_bits = g.quant.weights.width_bits + g.quant.activations.width_bits;
    r.weight_bytes = ceil_div(r.params * g.quant.weights.width_bits, 8);
    r.macs_per_window = nominal_macs(g, input_length, input_channels);

    const auto shapes = nn::output_shapes(g, input_length); // throws if infeasible
    const std::int64_t act_word = ceil_div(g.quant.activations.width_bits, 8);

    std::vector<std::int64_t> out_bytes;
    int cin = input_channels;
    for (std::size_t i = 0; i < shapes.size(); ++i) {
        const auto elements = static_cast<std::int64_t>(shapes[i].first) * shapes[i].second;
        r.max_layer_output = std::max(r.max_layer_output, elements);
        out_bytes.push_back(elements * act_word);
        r.linebuffer_bytes += static_cast<std::int64_t>(g.layers[i].kernel) * cin * act_word;
        cin = g.layers[i].out_channels;
    }
    // Streaming double buffer: producer and consumer layer outputs coexist.
    r.activation_bytes = out_bytes[0];
    for (std::size_t i = 0; i + 1 < out_bytes.size(); ++i)
        r.activation_bytes = std::max(r.activation_bytes, out_bytes[i] + out_bytes[i + 1]);
    return r;
}

std::string report_text(const CostReport& r) {
    std::ostringstream out;
    out << "params " << r.params << "\n"
        << "weight_bytes " << r.weight_bytes << "\n"
        << "macs_per_window " << r.macs_per_window << "\n"
        << "max_layer_output " << r.max_layer_output << "\n"
        << "activation_bytes " << r.activation_bytes << "\n"
        << "linebuffer_bytes " << r.linebuffer_bytes << "\n"
        << "total_bits " << r.total_bits << "\n";
    return out.str();
}

} // namespace afnas::cost
