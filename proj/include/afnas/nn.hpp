#ifndef AFNAS_NN_HPP
#define AFNAS_NN_HPP

#include <cstdint>
#include <optional>
#include <vector>

#include "afnas/errors.hpp"
#include "afnas/fxp.hpp"
#include "afnas/genome.hpp"

namespace afnas::nn {

// Row-major H x C buffer of samples.
struct FeatureMap {
    int length = 0;   // H
    int channels = 0; // C
    std::vector<double> values;

    FeatureMap() = default;
    FeatureMap(int h, int c) : length(h), channels(c), values(static_cast<std::size_t>(h) * c, 0.0) {}

    double& at(int h, int c) { return values[static_cast<std::size_t>(h) * channels + c]; }
    double at(int h, int c) const { return values[static_cast<std::size_t>(h) * channels + c]; }
    double* row(int h) { return values.data() + static_cast<std::size_t>(h) * channels; }
    const double* row(int h) const { return values.data() + static_cast<std::size_t>(h) * channels; }
};

struct BatchNormParams {
    std::vector<double> mean;     // moving mean, used in eval mode
    std::vector<double> variance; // moving variance
    std::vector<double> scale;    // trainable, multiplies the normalized value
    std::vector<double> bias;     // trainable additive term
    double epsilon = 1e-5;
    double momentum = 0.99; // moving = momentum*moving + (1-momentum)*batch
};

struct DsConvLayer {
    int kernel = 1;
    int in_channels = 1;
    int out_channels = 1;
    int stride = 1;
    std::vector<double> depthwise_weights; // K x C_in, row-major [k][c]
    std::vector<double> pointwise_weights; // C_in x C_out, row-major [ci][co]
    BatchNormParams bn;
    bool has_bn = true;
    std::vector<double> bias; // per-out-channel, only set on folded layers
    bool relu = true;

    double& dw(int k, int c) { return depthwise_weights[static_cast<std::size_t>(k) * in_channels + c]; }
    double dw(int k, int c) const { return depthwise_weights[static_cast<std::size_t>(k) * in_channels + c]; }
    double& pw(int ci, int co) { return pointwise_weights[static_cast<std::size_t>(ci) * out_channels + co]; }
    double pw(int ci, int co) const { return pointwise_weights[static_cast<std::size_t>(ci) * out_channels + co]; }
};

struct QuantizedNetwork {
    std::vector<DsConvLayer> layers; // 1..5
    std::vector<double> head_weights;
    double head_bias = 0.0;
    fxp::QuantPair quant;
    int input_channels = 2;
};

enum class Mode { kTrain, kEval };

// Per-stage accumulator formats for emulating the hardware MAC width. Unset
// entries accumulate in plain doubles (the training path).
struct AccumulatorFormats {
    std::optional<fxp::FxpFormat> depthwise;
    std::optional<fxp::FxpFormat> pointwise;
    std::optional<fxp::FxpFormat> head;
};

struct ForwardOptions {
    Mode mode = Mode::kEval;
    bool bypass_quant = false; // identity quantizers; used by gradient oracles
    fxp::ClipMode clip_mode = fxp::ClipMode::kLiteral;
    std::vector<AccumulatorFormats> accumulators; // per layer; empty = none
    AccumulatorFormats head_accumulator;          // only `head` is consulted
    std::uint64_t* mac_counter = nullptr;         // incremented per multiply-accumulate
};

// Everything the backward pass needs from one layer's forward evaluation.
// Pre-quantization values are kept so STE masks can be recomputed exactly.
struct LayerCache {
    std::vector<FeatureMap> input;       // x (pre input-quantization)
    std::vector<FeatureMap> input_q;     // Q_a(x)
    std::vector<FeatureMap> dw_raw;      // depthwise accumulator output
    std::vector<FeatureMap> dw_q;        // Q_a of it
    std::vector<FeatureMap> pw_raw;      // pointwise accumulator output
    std::vector<FeatureMap> pw_q;        // Q_a of it
    std::vector<FeatureMap> bn_raw;      // batchnorm output before Q_a
    std::vector<FeatureMap> out;         // after Q_a and optional ReLU
    std::vector<double> batch_mean;      // per channel (train mode)
    std::vector<double> batch_var;
    std::vector<double> mu_used;         // statistics entering the normalization
    std::vector<double> sigma_used;      // stddev before weight quantization
    std::vector<double> mu_q;            // Q_w of the mean
    std::vector<double> sigma_q_vec;     // Q_w of the stddev
    std::vector<double> denom;           // sqrt(Q_w(sigma)^2 + eps)
};

struct ForwardCache {
    std::vector<LayerCache> layers;
    std::vector<FeatureMap> head_input;
    std::vector<std::vector<double>> channel_means; // per window
    std::vector<double> logits;
};

struct Gradients {
    struct Layer {
        std::vector<double> depthwise;
        std::vector<double> pointwise;
        std::vector<double> bn_scale;
        std::vector<double> bn_bias;
    };
    std::vector<Layer> layers;
    std::vector<double> head_weights;
    double head_bias = 0.0;
};

// --- single operations -----------------------------------------------------

FeatureMap dsconv_forward(const FeatureMap& x, const DsConvLayer& layer,
                          const fxp::QuantPair& quant, const ForwardOptions& opts = {});

FeatureMap batchnorm_forward(const FeatureMap& x, BatchNormParams& bn,
                             const fxp::QuantPair& quant, const ForwardOptions& opts = {});

double gap_fc_forward(const FeatureMap& x, const std::vector<double>& head_weights,
                      double head_bias, const fxp::QuantPair& quant,
                      const ForwardOptions& opts = {});

// --- whole network ----------------------------------------------------------

double network_forward(QuantizedNetwork& net, const FeatureMap& x, Mode mode);

// Batched forward; batch statistics are shared across the batch in train mode.
std::vector<double> network_forward_batch(QuantizedNetwork& net,
                                          const std::vector<FeatureMap>& batch,
                                          const ForwardOptions& opts,
                                          ForwardCache* cache = nullptr);

// Mean sigmoid-cross-entropy over the batch, given targets in {0,1}.
double bce_loss(const std::vector<double>& logits, const std::vector<double>& targets);

// Gradients of the mean BCE loss for the batch recorded in `cache`.
Gradients network_backward(const QuantizedNetwork& net, const ForwardCache& cache,
                           const std::vector<double>& targets, const ForwardOptions& opts);

std::int64_t param_count(const QuantizedNetwork& net);
std::int64_t param_count(const Genome& genome, int input_channels);

// (H_i, C_i) after each layer; throws InfeasibleShapeError when a kernel no
// longer fits.
std::vector<std::pair<int, int>> output_shapes(const Genome& genome, int input_length);
std::vector<std::pair<int, int>> output_shapes(const QuantizedNetwork& net, int input_length);

inline int conv_output_length(int input_length, int kernel, int stride) {
    return (input_length - kernel) / stride + 1;
}

// Multiply-accumulate count of one layer at the given input length, matching
// what dsconv_forward executes: output positions times C_in*(K + C_out).
std::int64_t layer_macs(int input_length, int kernel, int in_channels, int out_channels, int stride);

// Network skeleton with zeroed parameters from a genome.
QuantizedNetwork build_network(const Genome& genome, int input_channels);

} // namespace afnas::nn

#endif
