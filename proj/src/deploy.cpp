#include "afnas/deploy.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <deque>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>

#include "afnas/errors.hpp"
#include "afnas/rng.hpp"

namespace afnas::deploy {
namespace {

using std::int64_t;
using std::size_t;
using int128 = __int128; // products of 32-bit codes summed over wide layers

std::string i128_str(int128 v) {
    if (v == 0) return "0";
    const bool neg = v < 0;
    unsigned __int128 u = neg ? static_cast<unsigned __int128>(-(v + 1)) + 1
                              : static_cast<unsigned __int128>(v);
    std::string s;
    while (u > 0) {
        s.push_back(static_cast<char>('0' + static_cast<int>(u % 10)));
        u /= 10;
    }
    if (neg) s.push_back('-');
    std::reverse(s.begin(), s.end());
    return s;
}

int64_t grid_lo(int width) { return -(int64_t{1} << (width - 1)); }
int64_t grid_hi(int width, int frac) {
    return (int64_t{1} << (width - 1)) - (int64_t{1} << frac);
}

// Round-half-away-from-zero rescale between fractional-bit grids. Exactly
// mirrors fxp::quantize applied to a value already on the source grid.
int128 rescale(int128 code, int from_frac, int to_frac) {
    if (to_frac >= from_frac) return code << (to_frac - from_frac);
    const int shift = from_frac - to_frac;
    const int128 half = int128{1} << (shift - 1);
    if (code < 0) return -((-code + half) >> shift);
    return (code + half) >> shift;
}

int64_t clip_to(int128 code, int width, int frac, bool checked, const std::string& where) {
    const int64_t lo = grid_lo(width);
    const int64_t hi = grid_hi(width, frac);
    if (code < lo || code > hi) {
        if (checked)
            throw InternalError("checked arithmetic: " + where + " code " + i128_str(code) +
                                " outside " + std::to_string(width) + "-bit range");
        return code < lo ? lo : hi;
    }
    return static_cast<int64_t>(code);
}

using Frame = std::vector<int64_t>;

struct Queue {
    std::deque<Frame> frames;
    size_t cap = 1;
    bool closed = false; // producer finished

    bool full() const { return frames.size() >= cap; }
};

struct Stage {
    virtual ~Stage() = default;
    virtual bool step() = 0;
    virtual std::string trace() const = 0;
};

struct SourceStage : Stage {
    const std::vector<Frame>* input = nullptr;
    Queue* out = nullptr;
    size_t next = 0;

    bool step() override {
        if (next < input->size()) {
            if (out->full()) return false;
            out->frames.push_back((*input)[next]);
            ++next;
            if (next == input->size()) out->closed = true;
            return true;
        }
        if (!out->closed) {
            out->closed = true;
            return true;
        }
        return false;
    }
    std::string trace() const override {
        std::ostringstream os;
        os << "source[emitted " << next << "/" << input->size() << ", out " << out->frames.size()
           << "/" << out->cap << (out->closed ? " closed" : "") << "]";
        return os.str();
    }
};

struct DwStage : Stage {
    const FoldedLayer* layer = nullptr;
    const FoldedModel* model = nullptr;
    Queue* in = nullptr;
    Queue* out = nullptr;
    bool checked = false;
    int skip = 0; // frames to drop before the next window when stride > kernel
    int64_t emitted = 0;
    std::string label;

    bool step() override {
        if (skip > 0 && !in->frames.empty()) {
            in->frames.pop_front();
            --skip;
            return true;
        }
        const size_t kernel = static_cast<size_t>(layer->kernel);
        if (skip == 0 && in->frames.size() >= kernel) {
            if (out->full()) return false;
            const int pa = model->quant.activations.precision_bits;
            const int pw = model->quant.weights.precision_bits;
            Frame f(static_cast<size_t>(layer->in_channels));
            for (int c = 0; c < layer->in_channels; ++c) {
                int128 acc = 0;
                for (int k = 0; k < layer->kernel; ++k)
                    acc += static_cast<int128>(in->frames[static_cast<size_t>(k)][static_cast<size_t>(c)]) *
                           layer->depthwise_codes[static_cast<size_t>(k) * layer->in_channels + c];
                const int64_t a12 = clip_to(rescale(acc, pa + pw, 12), layer->dw_acc_width, 12,
                                            checked, label + " accumulator");
                f[static_cast<size_t>(c)] = clip_to(rescale(a12, 12, pa),
                                                    model->quant.activations.width_bits, pa, false, label);
            }
            const int pops = std::min(layer->stride, layer->kernel);
            for (int i = 0; i < pops; ++i) in->frames.pop_front();
            skip = layer->stride - pops;
            out->frames.push_back(std::move(f));
            ++emitted;
            if (in->closed && in->frames.size() < kernel + static_cast<size_t>(skip))
                out->closed = true;
            return true;
        }
        if (in->closed && in->frames.size() < kernel + static_cast<size_t>(skip) && !out->closed) {
            out->closed = true;
            return true;
        }
        return false;
    }
    std::string trace() const override {
        std::ostringstream os;
        os << label << "[in " << in->frames.size() << "/" << in->cap
           << (in->closed ? " closed" : "") << ", skip " << skip << ", emitted " << emitted << "]";
        return os.str();
    }
};

struct PwStage : Stage {
    const FoldedLayer* layer = nullptr;
    const FoldedModel* model = nullptr;
    Queue* in = nullptr;
    Queue* out = nullptr;
    bool checked = false;
    int64_t emitted = 0;
    std::string label;

    bool step() override {
        if (!in->frames.empty()) {
            if (out->full()) return false;
            const Frame& d = in->frames.front();
            const int pa = model->quant.activations.precision_bits;
            const int pw = model->quant.weights.precision_bits;
            Frame f(static_cast<size_t>(layer->out_channels));
            for (int o = 0; o < layer->out_channels; ++o) {
                int128 acc = 0;
                for (int c = 0; c < layer->in_channels; ++c)
                    acc += static_cast<int128>(d[static_cast<size_t>(c)]) *
                           layer->pointwise_codes[static_cast<size_t>(c) * layer->out_channels + o];
                // bias lives on the weight grid; align to the product grid exactly
                acc += static_cast<int128>(layer->bias_codes[static_cast<size_t>(o)]) << pa;
                const int64_t a12 = clip_to(rescale(acc, pa + pw, 12), layer->pw_acc_width, 12,
                                            checked, label + " accumulator");
                int64_t code = clip_to(rescale(a12, 12, pa), model->quant.activations.width_bits, pa,
                                       false, label);
                if (layer->relu && code < 0) code = 0;
                f[static_cast<size_t>(o)] = code;
            }
            in->frames.pop_front();
            out->frames.push_back(std::move(f));
            ++emitted;
            if (in->closed && in->frames.empty()) out->closed = true;
            return true;
        }
        if (in->closed && !out->closed) {
            out->closed = true;
            return true;
        }
        return false;
    }
    std::string trace() const override {
        std::ostringstream os;
        os << label << "[in " << in->frames.size() << "/" << in->cap
           << (in->closed ? " closed" : "") << ", emitted " << emitted << "]";
        return os.str();
    }
};

// Fused global-average-pool + fully-connected sink. Per-channel sums stay
// integer; the mean's division by the frame count happens once, inside the
// final rounding, so the logit code is exact.
struct HeadStage : Stage {
    const FoldedModel* model = nullptr;
    Queue* in = nullptr;
    bool checked = false;
    std::vector<int64_t> sums;
    int64_t frames_seen = 0;
    bool finished = false;
    int64_t head_code = 0; // at 12 fractional bits

    bool step() override {
        if (!in->frames.empty()) {
            const Frame& f = in->frames.front();
            for (size_t c = 0; c < sums.size(); ++c) sums[c] += f[c];
            ++frames_seen;
            in->frames.pop_front();
            return true;
        }
        if (in->closed && !finished) {
            finalize();
            finished = true;
            return true;
        }
        return false;
    }

    void finalize() {
        const int pa = model->quant.activations.precision_bits;
        const int pw = model->quant.weights.precision_bits;
        int128 t = 0;
        for (size_t c = 0; c < sums.size(); ++c)
            t += static_cast<int128>(model->head_codes[c]) * sums[c];
        // logit * 2^12 = (t*2^12 + bias*H*2^(pa+12)) / (H * 2^(pa+pw))
        int128 num = (t << 12) + ((static_cast<int128>(model->head_bias_code) * frames_seen) << (pa + 12));
        const int128 den = static_cast<int128>(frames_seen) << (pa + pw);
        const bool neg = num < 0;
        int128 mag = neg ? -num : num;
        int128 rounded = (2 * mag + den) / (2 * den);
        head_code = clip_to(neg ? -rounded : rounded, model->head_acc_width, 12, checked,
                            "head accumulator");
    }
    std::string trace() const override {
        std::ostringstream os;
        os << "head[in " << in->frames.size() << "/" << in->cap << (in->closed ? " closed" : "")
           << ", frames " << frames_seen << (finished ? ", finished" : "") << "]";
        return os.str();
    }
};

void check_model(const FoldedModel& m) {
    if (m.layers.empty()) throw ContractError("folded model has no layers");
    fxp::check_format(m.quant.weights);
    fxp::check_format(m.quant.activations);
    int cin = m.layers.front().in_channels;
    for (const auto& l : m.layers) {
        if (l.kernel < 1 || l.in_channels < 1 || l.out_channels < 1 || l.stride < 1)
            throw ContractError("folded layer has non-positive shape");
        if (l.in_channels != cin) throw ContractError("folded layer channel chain broken");
        if (l.depthwise_codes.size() != static_cast<size_t>(l.kernel) * l.in_channels ||
            l.pointwise_codes.size() != static_cast<size_t>(l.in_channels) * l.out_channels ||
            l.bias_codes.size() != static_cast<size_t>(l.out_channels))
            throw ContractError("folded layer code buffers do not match its shape");
        cin = l.out_channels;
    }
    if (m.head_codes.size() != static_cast<size_t>(m.layers.back().out_channels))
        throw ContractError("head code count does not match final channel count");
}

// --- export/load ------------------------------------------------------------

constexpr char kMagic[4] = {'A', 'F', 'N', 'N'};
constexpr std::uint16_t kVersion = 1;

void put_u16(std::string& out, std::uint16_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_code(std::string& out, int64_t code, int nbytes) {
    auto u = static_cast<std::uint64_t>(code);
    for (int i = 0; i < nbytes; ++i) out.push_back(static_cast<char>((u >> (8 * i)) & 0xff));
}

struct Reader {
    const std::string& buf;
    size_t pos = 0;

    void need(size_t n, const char* what) const {
        if (pos + n > buf.size()) throw FormatError(std::string("truncated before ") + what, pos);
    }
    std::uint8_t u8(const char* what) {
        need(1, what);
        return static_cast<std::uint8_t>(buf[pos++]);
    }
    std::uint16_t u16(const char* what) {
        need(2, what);
        std::uint16_t v = static_cast<std::uint8_t>(buf[pos]) |
                          (static_cast<std::uint16_t>(static_cast<std::uint8_t>(buf[pos + 1])) << 8);
        pos += 2;
        return v;
    }
    int64_t code(int nbytes, int width, const char* what) {
        need(static_cast<size_t>(nbytes), what);
        std::uint64_t u = 0;
        for (int i = 0; i < nbytes; ++i)
            u |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(buf[pos + static_cast<size_t>(i)]))
                 << (8 * i);
        const size_t at = pos;
        pos += static_cast<size_t>(nbytes);
        const int bits = 8 * nbytes;
        if (bits < 64 && (u & (std::uint64_t{1} << (bits - 1))) != 0)
            u |= ~((std::uint64_t{1} << bits) - 1); // sign extend
        const auto v = static_cast<int64_t>(u);
        if (v < -(int64_t{1} << (width - 1)) || v > (int64_t{1} << (width - 1)) - 1)
            throw FormatError(std::string(what) + " does not fit declared width", at);
        return v;
    }
};

fxp::FxpFormat read_format(Reader& r, const char* what) {
    const size_t at = r.pos;
    const int w = r.u8(what);
    const int p = r.u8(what);
    fxp::FxpFormat fmt{w, p};
    try {
        fxp::check_format(fmt);
    } catch (const ContractError& e) {
        throw FormatError(std::string(what) + ": " + e.what(), at);
    }
    return fmt;
}

} // namespace

int64_t FoldedModel::code_count() const {
    int64_t n = 0;
    for (const auto& l : layers)
        n += static_cast<int64_t>(l.kernel) * l.in_channels +
             static_cast<int64_t>(l.in_channels) * l.out_channels + l.out_channels;
    return n + static_cast<int64_t>(head_codes.size()) + 1;
}

FoldedModel fold_batchnorm(const nn::QuantizedNetwork& net) {
    if (net.layers.empty()) throw ContractError("fold_batchnorm: network has no layers");
    if (net.head_weights.size() != static_cast<size_t>(net.layers.back().out_channels))
        throw ContractError("fold_batchnorm: head width does not match final channels");
    const fxp::FxpFormat wf = net.quant.weights;
    const auto qw = [&](double v) { return fxp::quantize(v, wf); };

    FoldedModel m;
    m.quant = net.quant;
    for (const auto& layer : net.layers) {
        if (!layer.has_bn || !layer.bias.empty())
            throw ContractError("fold_batchnorm: layer is already folded");
        const auto channels = static_cast<size_t>(layer.out_channels);
        if (layer.bn.mean.size() != channels || layer.bn.variance.size() != channels ||
            layer.bn.scale.size() != channels || layer.bn.bias.size() != channels)
            throw ContractError("fold_batchnorm: batchnorm statistics missing");

        FoldedLayer f;
        f.kernel = layer.kernel;
        f.in_channels = layer.in_channels;
        f.out_channels = layer.out_channels;
        f.stride = layer.stride;
        f.relu = layer.relu;
        f.depthwise_codes.resize(layer.depthwise_weights.size());
        for (size_t i = 0; i < layer.depthwise_weights.size(); ++i)
            f.depthwise_codes[i] = fxp::to_code(qw(layer.depthwise_weights[i]), wf);

        // Same quantization sequence as the eval-mode normalization: the scale
        // uses Q_w of sigma, gamma, mu, beta, so folding reproduces it exactly
        // up to the one eliminated activation re-quantization.
        f.pointwise_codes.resize(layer.pointwise_weights.size());
        f.bias_codes.resize(channels);
        for (size_t c = 0; c < channels; ++c) {
            if (layer.bn.variance[c] < 0.0)
                throw std::domain_error("fold_batchnorm: negative variance");
            const double sigma_q = qw(std::sqrt(layer.bn.variance[c]));
            const double denom2 = sigma_q * sigma_q + layer.bn.epsilon;
            if (denom2 <= 0.0)
                throw std::domain_error("fold_batchnorm: sigma^2 + epsilon is not positive");
            const double s = qw(layer.bn.scale[c]) / std::sqrt(denom2);
            const double mu_q = qw(layer.bn.mean[c]);
            for (int ci = 0; ci < layer.in_channels; ++ci)
                f.pointwise_codes[static_cast<size_t>(ci) * layer.out_channels + c] =
                    fxp::to_code(qw(qw(layer.pw(ci, static_cast<int>(c))) * s), wf);
            f.bias_codes[c] = fxp::to_code(qw(qw(layer.bn.bias[c]) - mu_q * s), wf);
        }
        m.layers.push_back(std::move(f));
    }

    m.head_codes.resize(net.head_weights.size());
    for (size_t c = 0; c < net.head_weights.size(); ++c)
        m.head_codes[c] = fxp::to_code(qw(net.head_weights[c]), wf);
    m.head_bias_code = fxp::to_code(qw(net.head_bias), wf);
    return m;
}

nn::QuantizedNetwork folded_to_network(const FoldedModel& m) {
    check_model(m);
    const fxp::FxpFormat wf = m.quant.weights;
    nn::QuantizedNetwork net;
    net.quant = m.quant;
    net.input_channels = m.layers.front().in_channels;
    for (const auto& f : m.layers) {
        nn::DsConvLayer L;
        L.kernel = f.kernel;
        L.in_channels = f.in_channels;
        L.out_channels = f.out_channels;
        L.stride = f.stride;
        L.relu = f.relu;
        L.has_bn = false;
        L.depthwise_weights.resize(f.depthwise_codes.size());
        for (size_t i = 0; i < f.depthwise_codes.size(); ++i)
            L.depthwise_weights[i] = fxp::from_code(f.depthwise_codes[i], wf);
        L.pointwise_weights.resize(f.pointwise_codes.size());
        for (size_t i = 0; i < f.pointwise_codes.size(); ++i)
            L.pointwise_weights[i] = fxp::from_code(f.pointwise_codes[i], wf);
        L.bias.resize(f.bias_codes.size());
        for (size_t i = 0; i < f.bias_codes.size(); ++i)
            L.bias[i] = fxp::from_code(f.bias_codes[i], wf);
        net.layers.push_back(std::move(L));
    }
    net.head_weights.resize(m.head_codes.size());
    for (size_t c = 0; c < m.head_codes.size(); ++c)
        net.head_weights[c] = fxp::from_code(m.head_codes[c], wf);
    net.head_bias = fxp::from_code(m.head_bias_code, wf);
    return net;
}

nn::ForwardOptions folded_forward_options(const FoldedModel& m) {
    nn::ForwardOptions opts;
    opts.mode = nn::Mode::kEval;
    for (const auto& l : m.layers) {
        nn::AccumulatorFormats acc;
        acc.depthwise = fxp::FxpFormat{l.dw_acc_width, 12};
        acc.pointwise = fxp::FxpFormat{l.pw_acc_width, 12};
        opts.accumulators.push_back(acc);
    }
    opts.head_accumulator.head = fxp::FxpFormat{m.head_acc_width, 12};
    return opts;
}

void profile_accumulators(FoldedModel& m, const std::vector<data::LabeledWindow>& windows) {
    check_model(m);
    if (windows.empty()) throw ContractError("profile_accumulators: no windows");
    nn::QuantizedNetwork net = folded_to_network(m);
    nn::ForwardOptions opts; // raw double accumulators: cache holds unclipped values
    opts.mode = nn::Mode::kEval;

    std::vector<double> dw_max(m.layers.size(), 0.0), pw_max(m.layers.size(), 0.0);
    double head_max = 0.0;
    constexpr size_t kBatch = 16;
    for (size_t at = 0; at < windows.size(); at += kBatch) {
        std::vector<nn::FeatureMap> batch;
        for (size_t i = at; i < std::min(at + kBatch, windows.size()); ++i)
            batch.push_back(windows[i].samples);
        nn::ForwardCache cache;
        nn::network_forward_batch(net, batch, opts, &cache);
        for (size_t li = 0; li < m.layers.size(); ++li) {
            for (const auto& fmap : cache.layers[li].dw_raw)
                for (double v : fmap.values) dw_max[li] = std::max(dw_max[li], std::abs(v));
            for (const auto& fmap : cache.layers[li].pw_raw)
                for (double v : fmap.values) pw_max[li] = std::max(pw_max[li], std::abs(v));
        }
        for (double l : cache.logits) head_max = std::max(head_max, std::abs(l));
    }

    const auto width_for = [](double bound) {
        int int_bits = 1;
        while (int_bits < 19 && static_cast<double>((int64_t{1} << int_bits) - 1) < bound) ++int_bits;
        return std::clamp(13 + int_bits + 1, 14, 32); // sign + frac + range + safety bit
    };
    for (size_t li = 0; li < m.layers.size(); ++li) {
        m.layers[li].dw_acc_width = width_for(dw_max[li]);
        m.layers[li].pw_acc_width = width_for(pw_max[li]);
    }
    m.head_acc_width = width_for(head_max);
}

StreamResult stream_infer(const FoldedModel& m, const nn::FeatureMap& window,
                          const StreamOptions& opts) {
    check_model(m);
    if (window.channels != m.layers.front().in_channels)
        throw ContractError("stream_infer: window channel count does not match the model");
    int h = window.length;
    for (const auto& l : m.layers) {
        if (h < l.kernel)
            throw InfeasibleShapeError("stream_infer: window too short for kernel " +
                                       std::to_string(l.kernel));
        h = nn::conv_output_length(h, l.kernel, l.stride);
    }

    const fxp::FxpFormat af = m.quant.activations;
    std::vector<Frame> input(static_cast<size_t>(window.length));
    for (int t = 0; t < window.length; ++t) {
        Frame f(static_cast<size_t>(window.channels));
        for (int c = 0; c < window.channels; ++c)
            f[static_cast<size_t>(c)] = fxp::to_code(fxp::quantize(window.at(t, c), af), af);
        input[static_cast<size_t>(t)] = std::move(f);
    }

    // One queue in front of every depthwise stage sized to its line buffer (K
    // frames); pointwise stages and the head sink run unbuffered.
    std::vector<std::unique_ptr<Queue>> queues;
    std::vector<std::unique_ptr<Stage>> stages;
    const auto make_queue = [&](size_t cap) {
        queues.push_back(std::make_unique<Queue>());
        queues.back()->cap = opts.queue_capacity ? static_cast<size_t>(std::max(0, *opts.queue_capacity))
                                                 : cap;
        return queues.back().get();
    };

    auto source = std::make_unique<SourceStage>();
    source->input = &input;
    Queue* prev = make_queue(static_cast<size_t>(m.layers.front().kernel));
    source->out = prev;
    stages.push_back(std::move(source));

    for (size_t li = 0; li < m.layers.size(); ++li) {
        const FoldedLayer& l = m.layers[li];
        auto dw = std::make_unique<DwStage>();
        dw->layer = &l;
        dw->model = &m;
        dw->in = prev;
        dw->out = make_queue(1);
        dw->checked = opts.checked;
        dw->label = "layer" + std::to_string(li) + ".dw";
        Queue* mid = dw->out;
        stages.push_back(std::move(dw));

        auto pw = std::make_unique<PwStage>();
        pw->layer = &l;
        pw->model = &m;
        pw->in = mid;
        const size_t next_cap =
            li + 1 < m.layers.size() ? static_cast<size_t>(m.layers[li + 1].kernel) : 1;
        pw->out = make_queue(next_cap);
        pw->checked = opts.checked;
        pw->label = "layer" + std::to_string(li) + ".pw";
        prev = pw->out;
        stages.push_back(std::move(pw));
    }

    auto head_owner = std::make_unique<HeadStage>();
    HeadStage* head = head_owner.get();
    head->model = &m;
    head->in = prev;
    head->checked = opts.checked;
    head->sums.assign(m.head_codes.size(), 0);
    stages.push_back(std::move(head_owner));

    Rng rng(opts.schedule_seed);
    std::vector<size_t> order(stages.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    while (!head->finished) {
        if (opts.schedule_seed != 0)
            for (size_t i = order.size(); i > 1; --i)
                std::swap(order[i - 1], order[rng.uniform_index(i)]);
        bool progress = false;
        for (size_t idx : order) progress = stages[idx]->step() || progress;
        if (!progress && !head->finished) {
            std::string msg = "stream pipeline stalled; stages:";
            for (const auto& s : stages) msg += " " + s->trace();
            throw InternalError(msg);
        }
    }

    StreamResult r;
    r.head_code = head->head_code;
    r.logit_code = clip_to(rescale(head->head_code, 12, af.precision_bits), af.width_bits, af.precision_bits, false, "logit");
    r.logit = fxp::from_code(r.head_code, fxp::FxpFormat{m.head_acc_width, 12});
    r.af = head->head_code > 0;
    return r;
}

int64_t payload_bytes(const FoldedModel& m) {
    return m.code_count() * ((m.quant.weights.width_bits + 7) / 8);
}

void export_model(const FoldedModel& m, const std::string& path) {
    check_model(m);
    if (m.layers.size() > 255) throw ContractError("export: too many layers");
    std::string out;
    out.append(kMagic, 4);
    put_u16(out, kVersion);
    out.push_back(static_cast<char>(m.layers.size()));
    for (const auto& l : m.layers) {
        put_u16(out, static_cast<std::uint16_t>(l.kernel));
        put_u16(out, static_cast<std::uint16_t>(l.in_channels));
        put_u16(out, static_cast<std::uint16_t>(l.out_channels));
        put_u16(out, static_cast<std::uint16_t>(l.stride));
        out.push_back(static_cast<char>(m.quant.weights.width_bits));
        out.push_back(static_cast<char>(m.quant.weights.precision_bits));
        out.push_back(static_cast<char>(m.quant.activations.width_bits));
        out.push_back(static_cast<char>(m.quant.activations.precision_bits));
        out.push_back(static_cast<char>(l.relu ? 1 : 0));
        out.push_back(static_cast<char>(l.dw_acc_width));
        out.push_back(static_cast<char>(l.pw_acc_width));
    }
    out.push_back(static_cast<char>(m.head_acc_width));

    const int nbytes = (m.quant.weights.width_bits + 7) / 8;
    for (const auto& l : m.layers) {
        for (int64_t c : l.depthwise_codes) put_code(out, c, nbytes);
        for (int64_t c : l.pointwise_codes) put_code(out, c, nbytes);
        for (int64_t c : l.bias_codes) put_code(out, c, nbytes);
    }
    for (int64_t c : m.head_codes) put_code(out, c, nbytes);
    put_code(out, m.head_bias_code, nbytes);

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw ContractError("export: cannot open " + path);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw ContractError("export: short write to " + path);
}

FoldedModel load_model(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("cannot open " + path, 0);
    std::ostringstream ss;
    ss << f.rdbuf();
    const std::string buf = ss.str();

    Reader r{buf};
    r.need(4, "magic");
    if (buf.compare(0, 4, kMagic, 4) != 0) throw FormatError("bad magic", 0);
    r.pos = 4;
    const std::uint16_t version = r.u16("version");
    if (version != kVersion)
        throw FormatError("unsupported version " + std::to_string(version), 4);
    const int layer_count = r.u8("layer count");
    if (layer_count < 1) throw FormatError("no layers", 6);

    FoldedModel m;
    bool first = true;
    int chain = 0;
    for (int li = 0; li < layer_count; ++li) {
        FoldedLayer l;
        const size_t at = r.pos;
        l.kernel = r.u16("kernel");
        l.in_channels = r.u16("in channels");
        l.out_channels = r.u16("out channels");
        l.stride = r.u16("stride");
        if (l.kernel < 1 || l.in_channels < 1 || l.out_channels < 1 || l.stride < 1)
            throw FormatError("non-positive layer shape", at);
        const fxp::FxpFormat wf = read_format(r, "weight format");
        const fxp::FxpFormat afmt = read_format(r, "activation format");
        if (first) {
            m.quant = fxp::QuantPair{wf, afmt};
            chain = l.in_channels;
            first = false;
        } else if (wf.width_bits != m.quant.weights.width_bits || wf.precision_bits != m.quant.weights.precision_bits ||
                   afmt.width_bits != m.quant.activations.width_bits || afmt.precision_bits != m.quant.activations.precision_bits) {
            throw FormatError("inconsistent quantization formats", at + 8);
        }
        if (l.in_channels != chain) throw FormatError("broken channel chain", at + 2);
        chain = l.out_channels;
        const int relu = r.u8("relu flag");
        if (relu > 1) throw FormatError("bad relu flag", r.pos - 1);
        l.relu = relu == 1;
        l.dw_acc_width = r.u8("dw accumulator width");
        l.pw_acc_width = r.u8("pw accumulator width");
        if (l.dw_acc_width < 13 || l.dw_acc_width > 32 || l.pw_acc_width < 13 || l.pw_acc_width > 32)
            throw FormatError("accumulator width out of range", r.pos - 2);
        m.layers.push_back(std::move(l));
    }
    m.head_acc_width = r.u8("head accumulator width");
    if (m.head_acc_width < 13 || m.head_acc_width > 32)
        throw FormatError("accumulator width out of range", r.pos - 1);

    const int nbytes = (m.quant.weights.width_bits + 7) / 8;
    const int width = m.quant.weights.width_bits;
    for (auto& l : m.layers) {
        l.depthwise_codes.resize(static_cast<size_t>(l.kernel) * l.in_channels);
        for (auto& c : l.depthwise_codes) c = r.code(nbytes, width, "depthwise code");
        l.pointwise_codes.resize(static_cast<size_t>(l.in_channels) * l.out_channels);
        for (auto& c : l.pointwise_codes) c = r.code(nbytes, width, "pointwise code");
        l.bias_codes.resize(static_cast<size_t>(l.out_channels));
        for (auto& c : l.bias_codes) c = r.code(nbytes, width, "bias code");
    }
    m.head_codes.resize(static_cast<size_t>(m.layers.back().out_channels));
    for (auto& c : m.head_codes) c = r.code(nbytes, width, "head code");
    m.head_bias_code = r.code(nbytes, width, "head bias code");
    if (r.pos != buf.size()) throw FormatError("trailing bytes", r.pos);
    return m;
}

void write_predictions_csv(const std::string& path, const std::vector<Prediction>& rows) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw ContractError("cannot open " + path);
    f << "window_id,logit_code,label\n";
    for (const auto& p : rows)
        f << p.window_id << "," << p.logit_code << "," << (p.af ? "AF" : "not-AF") << "\n";
    if (!f) throw ContractError("short write to " + path);
}

} // namespace afnas::deploy
