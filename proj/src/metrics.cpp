#include "afnas/metrics.hpp"

#include <sstream>

namespace afnas::metrics {

double sensitivity(const ConfusionCounts& c) {
    if (c.tp + c.fn <= 0) throw UndefinedMetricError("sensitivity: no positive windows");
    return static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
}

double specificity(const ConfusionCounts& c) {
    if (c.tn + c.fp <= 0) throw UndefinedMetricError("specificity: no negative windows");
    return static_cast<double>(c.tn) / static_cast<double>(c.tn + c.fp);
}

double noise_specificity(const ConfusionCounts& noise_subset) {
    if (noise_subset.tn + noise_subset.fp <= 0)
        throw UndefinedMetricError("noise specificity: no noise windows");
    return static_cast<double>(noise_subset.tn) /
           static_cast<double>(noise_subset.tn + noise_subset.fp);
}

EvalResult tally(const std::vector<double>& logits, const std::vector<data::Label>& labels) {
    if (logits.size() != labels.size()) throw ContractError("tally: size mismatch");
    if (logits.empty()) throw ContractError("tally: empty evaluation set");
    EvalResult r;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        const bool positive = logits[i] > 0.0;
        switch (labels[i]) {
            case data::Label::kAf:
                positive ? ++r.overall.tp : ++r.overall.fn;
                break;
            case data::Label::kNormal:
                positive ? ++r.overall.fp : ++r.overall.tn;
                break;
            case data::Label::kNoise:
                positive ? ++r.noise.fp : ++r.noise.tn;
                break;
        }
    }
    return r;
}

EvalResult evaluate(nn::QuantizedNetwork& net, const std::vector<data::LabeledWindow>& windows) {
    if (windows.empty()) throw ContractError("evaluate: empty window set");
    std::vector<double> logits(windows.size());
    std::vector<data::Label> labels(windows.size());
    for (std::size_t i = 0; i < windows.size(); ++i) {
        logits[i] = nn::network_forward(net, windows[i].samples, nn::Mode::kEval);
        labels[i] = windows[i].label;
    }
    return tally(logits, labels);
}

std::string report_text(const EvalResult& r) {
    std::ostringstream out;
    const auto rate = [](auto fn, const ConfusionCounts& c) -> std::string {
        try {
            return std::to_string(fn(c));
        } catch (const UndefinedMetricError&) {
            return "undefined";
        }
    };
    out << "sensitivity " << rate(sensitivity, r.overall) << "\n";
    out << "specificity " << rate(specificity, r.overall) << "\n";
    out << "noise_specificity " << rate(noise_specificity, r.noise) << "\n";
    out << "tp " << r.overall.tp << "\n";
    out << "fp " << r.overall.fp << "\n";
    out << "tn " << r.overall.tn << "\n";
    out << "fn " << r.overall.fn << "\n";
    out << "noise_tn " << r.noise.tn << "\n";
    out << "noise_fp " << r.noise.fp << "\n";
    return out.str();
}

} // namespace afnas::metrics
