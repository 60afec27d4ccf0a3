#ifndef AFNAS_DEPLOY_HPP
#define AFNAS_DEPLOY_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "afnas/data.hpp"
#include "afnas/fxp.hpp"
#include "afnas/nn.hpp"

namespace afnas::deploy {

// One layer of a batchnorm-folded model, everything stored as integer codes of
// the weight format. Accumulator widths carry 12 fractional bits plus the
// profiled integer range.
struct FoldedLayer {
    int kernel = 1;
    int in_channels = 1;
    int out_channels = 1;
    int stride = 1;
    bool relu = true;
    std::vector<std::int64_t> depthwise_codes; // K x C_in, same layout as nn
    std::vector<std::int64_t> pointwise_codes; // C_in x C_out, folded
    std::vector<std::int64_t> bias_codes;      // per out channel
    int dw_acc_width = 32;                     // accumulator total bits
    int pw_acc_width = 32;
};

struct FoldedModel {
    std::vector<FoldedLayer> layers;
    std::vector<std::int64_t> head_codes;
    std::int64_t head_bias_code = 0;
    int head_acc_width = 32;
    fxp::QuantPair quant;

    int input_channels() const { return layers.empty() ? 0 : layers.front().in_channels; }
    std::int64_t code_count() const;
};

// Absorbs eval-mode batchnorm into the pointwise weights and a bias, matching
// the eval forward's quantization sequence: scale = Q_w(gamma)/sqrt(Q_w(sigma)^2
// + eps), results re-quantized to the weight format. Throws std::domain_error
// when a channel's sigma^2 + eps is not positive.
FoldedModel fold_batchnorm(const nn::QuantizedNetwork& net);

// The folded model as a float network (identity bn, bias materialized); forward
// on it with folded_forward_options() is the streaming engine's reference.
nn::QuantizedNetwork folded_to_network(const FoldedModel& m);
nn::ForwardOptions folded_forward_options(const FoldedModel& m);

// Sizes the accumulator widths so none of the given windows clips, plus one
// safety bit. Widths are clamped to [14, 32].
void profile_accumulators(FoldedModel& m, const std::vector<data::LabeledWindow>& windows);

struct StreamOptions {
    std::uint64_t schedule_seed = 0;    // 0 = fixed round-robin stage order
    std::optional<int> queue_capacity;  // frames; test override for every queue
    bool checked = false;               // throw if an accumulator would clip
};

struct StreamResult {
    std::int64_t head_code = 0;  // logit at the head accumulator grid (12 frac bits)
    std::int64_t logit_code = 0; // logit re-quantized to the activation format
    double logit = 0.0;          // real value of head_code
    bool af = false;             // head_code > 0
};

// Integer-only pipelined inference: one depthwise and one pointwise stage per
// layer plus a fused GAP/FC sink, connected by bounded FIFO queues sized to the
// depthwise line buffer (K frames). Output is invariant to stage scheduling.
// A stalled pipeline raises InternalError carrying a per-stage trace.
StreamResult stream_infer(const FoldedModel& m, const nn::FeatureMap& window,
                          const StreamOptions& opts = {});

// Binary blob: magic "AFNN", version, per-layer headers, then all codes packed
// little-endian two's-complement at ceil(w_w/8) bytes. load() rejects bad
// magic/version, truncation and codes outside their declared width.
void export_model(const FoldedModel& m, const std::string& path);
FoldedModel load_model(const std::string& path);

// Bytes the packed codes occupy, excluding headers.
std::int64_t payload_bytes(const FoldedModel& m);

struct Prediction {
    std::string window_id;
    std::int64_t logit_code = 0;
    bool af = false;
};

// window_id,logit_code,label rows for downstream tooling.
void write_predictions_csv(const std::string& path, const std::vector<Prediction>& rows);

} // namespace afnas::deploy

#endif
