// Finite-difference oracle for the analytic backward pass. Shared between the
// unit tests and the acceptance suite.
#ifndef AFNAS_TESTS_FD_CHECK_HPP
#define AFNAS_TESTS_FD_CHECK_HPP

#include <cmath>
#include <functional>
#include <vector>

#include "afnas/nn.hpp"
#include "afnas/rng.hpp"

namespace fdcheck {

struct Result {
    int checked = 0;
    int skipped = 0;   // boundary-adjacent points (two-scale FD disagreement)
    int failed = 0;
    double worst = 0.0; // largest surviving mixed relative error
};

// Mixed relative/absolute error with unit floor; the acceptance threshold is
// interpreted against this (plain relative error is meaningless for gradients
// that are legitimately ~0).
inline double mixed_error(double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1.0});
}

inline afnas::nn::QuantizedNetwork random_small_network(afnas::Rng& rng, int max_layers = 3) {
    using namespace afnas;
    Genome g;
    const int n_layers = 1 + static_cast<int>(rng.uniform_index(max_layers));
    for (int i = 0; i < n_layers; ++i) {
        const int kernel = 1 << rng.uniform_index(4);  // 1..8
        const int channels = 2 << rng.uniform_index(2); // 2..4
        const int stride = 1 << rng.uniform_index(2);   // 1..2
        g.layers.push_back({kernel, channels, std::min(stride, kernel)});
    }
    // Generous formats so the quantizer grid (2^-26) is far below the FD step.
    g.quant = {{32, 26}, {32, 26}};
    nn::QuantizedNetwork net = nn::build_network(g, 2);
    for (auto& layer : net.layers) {
        for (double& w : layer.depthwise_weights) w = rng.normal(0.0, 0.4);
        for (double& w : layer.pointwise_weights) w = rng.normal(0.0, 0.4);
        for (double& s : layer.bn.scale) s = rng.uniform(0.7, 1.3);
        for (double& b : layer.bn.bias) b = rng.uniform(-0.3, 0.3);
    }
    for (double& w : net.head_weights) w = rng.normal(0.0, 0.5);
    net.head_bias = rng.uniform(-0.2, 0.2);
    return net;
}

// Runs the analytic-vs-FD comparison for every trainable parameter of `net`
// on one random batch. `tolerance` bounds the mixed error; parameters whose
// FD estimates at h and h/2 disagree are counted as boundary-adjacent and
// skipped (a kink or rounding step inside the stencil).
inline Result check_network(afnas::nn::QuantizedNetwork& net, afnas::Rng& rng,
                            double h = 1e-3, double tolerance = 1e-4) {
    using namespace afnas;
    const int batch = 2;
    const int base_len = 24 + static_cast<int>(rng.uniform_index(24));
    int min_len = 1;
    {
        int need = 1;
        for (auto it = net.layers.rbegin(); it != net.layers.rend(); ++it)
            need = (need - 1) * it->stride + it->kernel;
        min_len = need;
    }
    const int len = std::max(base_len, min_len);

    std::vector<nn::FeatureMap> windows;
    std::vector<double> targets;
    for (int b = 0; b < batch; ++b) {
        nn::FeatureMap w(len, net.input_channels);
        for (double& v : w.values) v = rng.uniform(-2.0, 2.0);
        windows.push_back(std::move(w));
        targets.push_back(rng.coin(0.5) ? 1.0 : 0.0);
    }

    nn::ForwardOptions opts;
    opts.mode = nn::Mode::kTrain;

    // Loss plus the on/off pattern of every ReLU. A pattern change inside the
    // FD stencil marks a kink between the sampled points: central differences
    // are then measuring the wrong one-sided slope and the point is excluded
    // as boundary-adjacent.
    const auto loss_at = [&](std::vector<char>* pattern) {
        // Batchnorm moving averages must not drift across FD evaluations.
        nn::QuantizedNetwork copy = net;
        nn::ForwardCache cache;
        const auto logits = nn::network_forward_batch(copy, windows, opts, &cache);
        if (pattern) {
            pattern->clear();
            for (std::size_t li = 0; li < cache.layers.size(); ++li) {
                if (!net.layers[li].relu) continue;
                for (const auto& fm : cache.layers[li].out)
                    for (double v : fm.values) pattern->push_back(v > 0.0 ? 1 : 0);
            }
        }
        return nn::bce_loss(logits, targets);
    };

    nn::ForwardCache cache;
    std::vector<char> center_pattern;
    {
        nn::QuantizedNetwork copy = net;
        nn::network_forward_batch(copy, windows, opts, &cache);
        loss_at(&center_pattern);
    }
    const nn::Gradients grads = nn::network_backward(net, cache, targets, opts);

    Result res;
    std::vector<char> pattern;
    const auto probe = [&](double& param, double analytic) {
        const double saved = param;
        bool crossed = false;
        const auto fd_at = [&](double step) {
            param = saved + step;
            const double up = loss_at(&pattern);
            crossed = crossed || pattern != center_pattern;
            param = saved - step;
            const double down = loss_at(&pattern);
            crossed = crossed || pattern != center_pattern;
            param = saved;
            return (up - down) / (2.0 * step);
        };
        const double fd = fd_at(h);
        const double fd_half = fd_at(h / 2.0);
        // Trust the stencil only where it is self-consistent: quantizer
        // staircase noise grows as 1/h and shows up as scale disagreement.
        if (crossed || mixed_error(fd, fd_half) > 0.1 * tolerance) {
            ++res.skipped;
            return;
        }
        // Richardson extrapolation cancels the h^2 truncation term, so the
        // comparison measures the analytic gradient, not the stencil.
        const double fd_rich = (4.0 * fd_half - fd) / 3.0;
        const double err = mixed_error(analytic, fd_rich);
        ++res.checked;
        res.worst = std::max(res.worst, err);
        if (err > tolerance) ++res.failed;
    };

    for (std::size_t li = 0; li < net.layers.size(); ++li) {
        auto& layer = net.layers[li];
        const auto& lg = grads.layers[li];
        for (std::size_t i = 0; i < layer.depthwise_weights.size(); ++i)
            probe(layer.depthwise_weights[i], lg.depthwise[i]);
        for (std::size_t i = 0; i < layer.pointwise_weights.size(); ++i)
            probe(layer.pointwise_weights[i], lg.pointwise[i]);
        for (std::size_t i = 0; i < layer.bn.scale.size(); ++i)
            probe(layer.bn.scale[i], lg.bn_scale[i]);
        for (std::size_t i = 0; i < layer.bn.bias.size(); ++i)
            probe(layer.bn.bias[i], lg.bn_bias[i]);
    }
    for (std::size_t i = 0; i < net.head_weights.size(); ++i)
        probe(net.head_weights[i], grads.head_weights[i]);
    probe(net.head_bias, grads.head_bias);
    return res;
}

} // namespace fdcheck

#endif
