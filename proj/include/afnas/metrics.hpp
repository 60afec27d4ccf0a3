#ifndef AFNAS_METRICS_HPP
#define AFNAS_METRICS_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "afnas/data.hpp"
#include "afnas/errors.hpp"
#include "afnas/nn.hpp"

namespace afnas::metrics {

struct ConfusionCounts {
    std::int64_t tp = 0;
    std::int64_t fp = 0;
    std::int64_t tn = 0;
    std::int64_t fn = 0;

    std::int64_t total() const { return tp + fp + tn + fn; }
};

// AF is the positive class; a window is predicted positive when its logit is
// strictly greater than zero.
struct EvalResult {
    ConfusionCounts overall; // AF/NORMAL windows
    ConfusionCounts noise;   // NOISE windows (ground truth all negative)
};

double sensitivity(const ConfusionCounts& c);
double specificity(const ConfusionCounts& c);
double noise_specificity(const ConfusionCounts& noise_subset);

EvalResult evaluate(nn::QuantizedNetwork& net, const std::vector<data::LabeledWindow>& windows);

// Counts from precomputed logits; keeps evaluation reusable for the streaming
// engine, whose forward pass is elsewhere.
EvalResult tally(const std::vector<double>& logits, const std::vector<data::Label>& labels);

// "key value" lines: sensitivity, specificity, noise_specificity plus raw counts.
std::string report_text(const EvalResult& r);

} // namespace afnas::metrics

#endif
