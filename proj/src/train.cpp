#include "afnas/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include "afnas/metrics.hpp"
#include "afnas/rng.hpp"

namespace afnas::train {

namespace {

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

void glorot_fill(std::vector<double>& w, int fan_in, int fan_out, Rng& rng) {
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    for (double& v : w) v = rng.uniform(-limit, limit);
}

// Flat parameter view in a fixed order shared with flatten_grads.
std::vector<double*> parameter_view(nn::QuantizedNetwork& net) {
    std::vector<double*> out;
    for (auto& layer : net.layers) {
        for (double& v : layer.depthwise_weights) out.push_back(&v);
        for (double& v : layer.pointwise_weights) out.push_back(&v);
        for (double& v : layer.bn.scale) out.push_back(&v);
        for (double& v : layer.bn.bias) out.push_back(&v);
    }
    for (double& v : net.head_weights) out.push_back(&v);
    out.push_back(&net.head_bias);
    return out;
}

std::vector<double> flatten_grads(const nn::Gradients& g) {
    std::vector<double> out;
    for (const auto& layer : g.layers) {
        out.insert(out.end(), layer.depthwise.begin(), layer.depthwise.end());
        out.insert(out.end(), layer.pointwise.begin(), layer.pointwise.end());
        out.insert(out.end(), layer.bn_scale.begin(), layer.bn_scale.end());
        out.insert(out.end(), layer.bn_bias.begin(), layer.bn_bias.end());
    }
    out.insert(out.end(), g.head_weights.begin(), g.head_weights.end());
    out.push_back(g.head_bias);
    return out;
}

} // namespace

double lr_at(const TrainConfig& cfg, int epoch) {
    double lr = cfg.lr_initial;
    for (const int drop : cfg.lr_drop_epochs)
        if (epoch > drop) lr /= cfg.lr_drop_divisor;
    return lr;
}

double target_for(data::Label label) { return label == data::Label::kAf ? 1.0 : 0.0; }

void initialize_parameters(nn::QuantizedNetwork& net, std::uint64_t seed) {
    Rng rng(Rng::derive(seed, "init"));
    for (auto& layer : net.layers) {
        glorot_fill(layer.depthwise_weights, layer.kernel, 1, rng);
        glorot_fill(layer.pointwise_weights, layer.in_channels, layer.out_channels, rng);
        std::fill(layer.bn.mean.begin(), layer.bn.mean.end(), 0.0);
        std::fill(layer.bn.variance.begin(), layer.bn.variance.end(), 1.0);
        std::fill(layer.bn.scale.begin(), layer.bn.scale.end(), 1.0);
        std::fill(layer.bn.bias.begin(), layer.bn.bias.end(), 0.0);
        for (double& v : layer.depthwise_weights) v = fxp::quantize(v, net.quant.weights);
        for (double& v : layer.pointwise_weights) v = fxp::quantize(v, net.quant.weights);
    }
    glorot_fill(net.head_weights, static_cast<int>(net.head_weights.size()), 1, rng);
    for (double& v : net.head_weights) v = fxp::quantize(v, net.quant.weights);
    net.head_bias = 0.0;
}

double eval_loss(nn::QuantizedNetwork& net, const std::vector<data::LabeledWindow>& windows,
                 int batch_size) {
    if (windows.empty()) throw ContractError("eval_loss: empty window set");
    nn::ForwardOptions opts; // eval mode
    double total = 0.0;
    std::size_t done = 0;
    while (done < windows.size()) {
        const std::size_t n = std::min<std::size_t>(batch_size, windows.size() - done);
        std::vector<nn::FeatureMap> batch;
        std::vector<double> targets;
        for (std::size_t i = 0; i < n; ++i) {
            batch.push_back(windows[done + i].samples);
            targets.push_back(target_for(windows[done + i].label));
        }
        const auto logits = nn::network_forward_batch(net, batch, opts, nullptr);
        total += nn::bce_loss(logits, targets) * static_cast<double>(n);
        done += n;
    }
    return total / static_cast<double>(windows.size());
}

TrainHistory train(nn::QuantizedNetwork& net, const data::DatasetSplit& split,
                   const TrainConfig& cfg) {
    if (cfg.epochs < 1 || !(cfg.lr_initial >= 0) || !(cfg.grad_clip_norm > 0) ||
        cfg.batch_size < 1)
        throw ContractError("train: bad configuration");
    if (split.train.empty()) throw ContractError("train: empty training split");

    for (auto& layer : net.layers) layer.bn.momentum = cfg.bn_momentum;

    // Shape feasibility up front so the failure is immediate.
    nn::output_shapes(net, split.train.front().samples.length);

    // Index pools per class for balanced sampling.
    std::vector<std::size_t> pools[3];
    for (std::size_t i = 0; i < split.train.size(); ++i)
        pools[static_cast<int>(split.train[i].label)].push_back(i);
    std::vector<int> present;
    for (int c = 0; c < 3; ++c)
        if (!pools[c].empty()) present.push_back(c);

    const auto n_train = split.train.size();
    const int steps_per_epoch =
        static_cast<int>((n_train + cfg.batch_size - 1) / cfg.batch_size);

    // Momentum state, laid out like the flat gradient vector.
    std::vector<double*> params = parameter_view(net);
    std::vector<double> velocity(params.size(), 0.0);

    nn::ForwardOptions fwd;
    fwd.mode = nn::Mode::kTrain;

    TrainHistory history;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        Rng rng(Rng::derive(cfg.seed, "epoch-" + std::to_string(epoch)));
        const double lr = lr_at(cfg, epoch);

        // Plain sampling walks a fresh shuffle of the training set.
        std::vector<std::size_t> order(n_train);
        for (std::size_t i = 0; i < n_train; ++i) order[i] = i;
        for (std::size_t i = n_train; i > 1; --i)
            std::swap(order[i - 1], order[rng.uniform_index(i)]);

        double loss_sum = 0.0;
        double max_post_clip = 0.0;
        for (int step = 0; step < steps_per_epoch; ++step) {
            std::vector<nn::FeatureMap> batch;
            std::vector<double> targets;
            const std::size_t want =
                cfg.balanced_sampling
                    ? static_cast<std::size_t>(cfg.batch_size)
                    : std::min<std::size_t>(cfg.batch_size,
                                            n_train - static_cast<std::size_t>(step) * cfg.batch_size);
            for (std::size_t b = 0; b < want; ++b) {
                std::size_t idx;
                if (cfg.balanced_sampling) {
                    const int cls = present[rng.uniform_index(present.size())];
                    idx = pools[cls][rng.uniform_index(pools[cls].size())];
                } else {
                    idx = order[static_cast<std::size_t>(step) * cfg.batch_size + b];
                }
                const data::LabeledWindow& w = split.train[idx];
                if (cfg.augment) {
                    batch.push_back(data::augment(w, cfg.augmentation, rng).samples);
                } else {
                    batch.push_back(w.samples);
                }
                targets.push_back(target_for(w.label));
            }

            nn::ForwardCache cache;
            const auto logits = nn::network_forward_batch(net, batch, fwd, &cache);
            const double loss = nn::bce_loss(logits, targets);
            if (!std::isfinite(loss))
                throw TrainingFailureError("loss diverged at epoch " + std::to_string(epoch) +
                                           " step " + std::to_string(step));
            loss_sum += loss;

            const nn::Gradients grads = nn::network_backward(net, cache, targets, fwd);
            std::vector<double> g = flatten_grads(grads);

            double norm_sq = 0.0;
            for (const double v : g) norm_sq += v * v;
            double norm = std::sqrt(norm_sq);
            if (norm > cfg.grad_clip_norm) {
                const double scale = cfg.grad_clip_norm / norm;
                for (double& v : g) v *= scale;
                norm = cfg.grad_clip_norm;
            }
            max_post_clip = std::max(max_post_clip, norm);

            for (std::size_t i = 0; i < g.size(); ++i) {
                velocity[i] = cfg.momentum * velocity[i] + g[i];
                const double step_dir = cfg.nesterov ? g[i] + cfg.momentum * velocity[i]
                                                     : velocity[i];
                *params[i] -= lr * step_dir;
            }
        }

        EpochStats stats;
        stats.epoch = epoch;
        stats.lr = lr;
        stats.train_loss = loss_sum / steps_per_epoch;
        stats.max_post_clip_norm = max_post_clip;
        stats.val_loss = kNan;
        stats.sensitivity = kNan;
        stats.specificity = kNan;
        stats.noise_specificity = kNan;
        if (cfg.eval_every_epoch && !split.validation.empty()) {
            stats.val_loss = eval_loss(net, split.validation, cfg.batch_size);
            const auto r = metrics::evaluate(net, split.validation);
            try {
                stats.sensitivity = metrics::sensitivity(r.overall);
            } catch (const UndefinedMetricError&) {
            }
            try {
                stats.specificity = metrics::specificity(r.overall);
            } catch (const UndefinedMetricError&) {
            }
            try {
                stats.noise_specificity = metrics::noise_specificity(r.noise);
            } catch (const UndefinedMetricError&) {
            }
        }
        history.epochs.push_back(stats);
    }
    return history;
}

// --- checkpoint io -----------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'A', 'F', 'C', 'K'};
constexpr std::uint16_t kVersion = 1;

void put_u16(std::ostream& out, std::uint16_t v) {
    const char b[2] = {static_cast<char>(v & 0xff), static_cast<char>(v >> 8)};
    out.write(b, 2);
}

void put_u32(std::ostream& out, std::uint32_t v) {
    char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    out.write(b, 4);
}

void put_f64(std::ostream& out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
    out.write(b, 8);
}

struct Reader {
    std::ifstream in;
    std::size_t offset = 0;
    explicit Reader(const std::string& path) : in(path, std::ios::binary) {
        if (!in) throw ConfigError("cannot open checkpoint: " + path);
    }
    void bytes(char* dst, std::size_t n) {
        in.read(dst, static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(in.gcount()) != n)
            throw FormatError("checkpoint truncated", offset);
        offset += n;
    }
    std::uint16_t u16() {
        unsigned char b[2];
        bytes(reinterpret_cast<char*>(b), 2);
        return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
    }
    std::uint32_t u32() {
        unsigned char b[4];
        bytes(reinterpret_cast<char*>(b), 4);
        return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
               (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
    }
    double f64() {
        unsigned char b[8];
        bytes(reinterpret_cast<char*>(b), 8);
        std::uint64_t bits = 0;
        for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
        double v;
        std::memcpy(&v, &bits, 8);
        return v;
    }
};

void put_vec(std::ostream& out, const std::vector<double>& v) {
    for (const double x : v) put_f64(out, x);
}

void get_vec(Reader& r, std::vector<double>& v) {
    for (double& x : v) x = r.f64();
}

} // namespace

void save_checkpoint(const std::string& path, const Genome& genome,
                     const nn::QuantizedNetwork& net, const TrainHistory& history) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write checkpoint: " + path);
    out.write(kMagic, 4);
    put_u16(out, kVersion);

    const std::string gtext = genome_to_string(genome);
    put_u32(out, static_cast<std::uint32_t>(gtext.size()));
    out.write(gtext.data(), static_cast<std::streamsize>(gtext.size()));
    put_u32(out, static_cast<std::uint32_t>(net.input_channels));

    for (const auto& layer : net.layers) {
        put_vec(out, layer.depthwise_weights);
        put_vec(out, layer.pointwise_weights);
        put_vec(out, layer.bn.mean);
        put_vec(out, layer.bn.variance);
        put_vec(out, layer.bn.scale);
        put_vec(out, layer.bn.bias);
        put_f64(out, layer.bn.epsilon);
        put_f64(out, layer.bn.momentum);
    }
    put_vec(out, net.head_weights);
    put_f64(out, net.head_bias);

    put_u32(out, static_cast<std::uint32_t>(history.epochs.size()));
    for (const auto& e : history.epochs) {
        put_u32(out, static_cast<std::uint32_t>(e.epoch));
        put_f64(out, e.lr);
        put_f64(out, e.train_loss);
        put_f64(out, e.max_post_clip_norm);
        put_f64(out, e.val_loss);
        put_f64(out, e.sensitivity);
        put_f64(out, e.specificity);
        put_f64(out, e.noise_specificity);
    }
    if (!out) throw ConfigError("checkpoint write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    Reader r(path);
    char magic[4];
    r.bytes(magic, 4);
    if (std::memcmp(magic, kMagic, 4) != 0) throw FormatError("bad checkpoint magic", 0);
    const std::uint16_t version = r.u16();
    if (version != kVersion)
        throw FormatError("unsupported checkpoint version " + std::to_string(version), 4);

    const std::uint32_t glen = r.u32();
    if (glen > 1 << 20) throw FormatError("genome text length implausible", r.offset - 4);
    std::string gtext(glen, '\0');
    r.bytes(gtext.data(), glen);

    Checkpoint ck;
    ck.genome = genome_from_string(gtext);
    const auto input_channels = static_cast<int>(r.u32());
    ck.net = nn::build_network(ck.genome, input_channels);

    for (auto& layer : ck.net.layers) {
        get_vec(r, layer.depthwise_weights);
        get_vec(r, layer.pointwise_weights);
        get_vec(r, layer.bn.mean);
        get_vec(r, layer.bn.variance);
        get_vec(r, layer.bn.scale);
        get_vec(r, layer.bn.bias);
        layer.bn.epsilon = r.f64();
        layer.bn.momentum = r.f64();
    }
    get_vec(r, ck.net.head_weights);
    ck.net.head_bias = r.f64();

    const std::uint32_t n_epochs = r.u32();
    if (n_epochs > 1 << 20) throw FormatError("epoch count implausible", r.offset - 4);
    for (std::uint32_t i = 0; i < n_epochs; ++i) {
        EpochStats e;
        e.epoch = static_cast<int>(r.u32());
        e.lr = r.f64();
        e.train_loss = r.f64();
        e.max_post_clip_norm = r.f64();
        e.val_loss = r.f64();
        e.sensitivity = r.f64();
        e.specificity = r.f64();
        e.noise_specificity = r.f64();
        ck.history.epochs.push_back(e);
    }
    return ck;
}

} // namespace afnas::train
