#include "doctest.h"

#include <cmath>

#include "afnas/nn.hpp"
#include "afnas/rng.hpp"
#include "fd_check.hpp"

using namespace afnas;
using nn::FeatureMap;

namespace {

// Batchnorm parameters that normalize to identity with *exact* double
// arithmetic: sigma = 255/256 is representable in every weight format with
// p >= 8, and sigma^2 + eps = 65025/65536 + 511/65536 = 1 exactly.
nn::BatchNormParams identity_bn(int channels) {
    nn::BatchNormParams bn;
    const double sigma = 255.0 / 256.0;
    bn.mean.assign(channels, 0.0);
    bn.variance.assign(channels, sigma * sigma);
    bn.scale.assign(channels, 1.0);
    bn.bias.assign(channels, 0.0);
    bn.epsilon = 511.0 / 65536.0;
    return bn;
}

FeatureMap single_channel(std::initializer_list<double> vals) {
    FeatureMap m(static_cast<int>(vals.size()), 1);
    int i = 0;
    for (double v : vals) m.at(i++, 0) = v;
    return m;
}

} // namespace

TEST_SUITE_BEGIN("nn");

TEST_CASE("dsconv: K=1 identity kernel returns quantized input") {
    nn::DsConvLayer layer;
    layer.kernel = 1;
    layer.in_channels = 1;
    layer.out_channels = 1;
    layer.stride = 1;
    layer.depthwise_weights = {1.0};
    layer.pointwise_weights = {1.0};

    FeatureMap x(16, 1);
    Rng rng(7);
    for (double& v : x.values) v = rng.uniform(-3.0, 3.0);

    const fxp::QuantPair q{{32, 16}, {32, 16}};
    const FeatureMap y = nn::dsconv_forward(x, layer, q);
    REQUIRE(y.length == 16);
    REQUIRE(y.channels == 1);
    for (int h = 0; h < 16; ++h) CHECK(y.at(h, 0) == fxp::quantize(x.at(h, 0), q.activations));
}

TEST_CASE("dsconv: pairwise mean at stride 2") {
    nn::DsConvLayer layer;
    layer.kernel = 2;
    layer.in_channels = 1;
    layer.out_channels = 1;
    layer.stride = 2;
    layer.depthwise_weights = {0.5, 0.5};
    layer.pointwise_weights = {1.0};

    const FeatureMap x = single_channel({1, 1, 2, 2, 4, 4, 8, 8});
    const FeatureMap y = nn::dsconv_forward(x, layer, {{16, 8}, {16, 8}});
    REQUIRE(y.length == 4);
    CHECK(y.at(0, 0) == 1.0);
    CHECK(y.at(1, 0) == 2.0);
    CHECK(y.at(2, 0) == 4.0);
    CHECK(y.at(3, 0) == 8.0);
}

TEST_CASE("dsconv: shape contract violations") {
    nn::DsConvLayer layer;
    layer.kernel = 8;
    layer.in_channels = 2;
    layer.out_channels = 4;
    layer.stride = 1;
    layer.depthwise_weights.assign(16, 0.1);
    layer.pointwise_weights.assign(8, 0.1);

    FeatureMap wrong_channels(16, 3);
    CHECK_THROWS_AS(nn::dsconv_forward(wrong_channels, layer, {}), ContractError);
    FeatureMap too_short(4, 2);
    CHECK_THROWS_AS(nn::dsconv_forward(too_short, layer, {}), InfeasibleShapeError);
}

TEST_CASE("dsconv: measured MACs equal the cost formula") {
    Rng rng(42);
    for (int iter = 0; iter < 50; ++iter) {
        const int k = 1 << rng.uniform_index(5);
        const int cin = 1 + static_cast<int>(rng.uniform_index(8));
        const int cout = 1 + static_cast<int>(rng.uniform_index(16));
        const int stride = 1 << rng.uniform_index(3);
        const int h = k + static_cast<int>(rng.uniform_index(100));

        nn::DsConvLayer layer;
        layer.kernel = k;
        layer.in_channels = cin;
        layer.out_channels = cout;
        layer.stride = stride;
        layer.depthwise_weights.assign(static_cast<std::size_t>(k) * cin, 0.01);
        layer.pointwise_weights.assign(static_cast<std::size_t>(cin) * cout, 0.01);

        FeatureMap x(h, cin);
        std::uint64_t macs = 0;
        nn::ForwardOptions opts;
        opts.mac_counter = &macs;
        nn::dsconv_forward(x, layer, {{16, 8}, {16, 8}}, opts);

        const auto h_out = static_cast<std::uint64_t>(nn::conv_output_length(h, k, stride));
        CHECK(macs == h_out * cin * (k + cout));
        CHECK(macs == static_cast<std::uint64_t>(nn::layer_macs(h, k, cin, cout, stride)));
    }
    // Headline case at stride 1: H'=H-K+1 output positions.
    CHECK(nn::layer_macs(1024 + 15, 16, 8, 32, 1) == 1024 * 8 * (16 + 32));
}

TEST_CASE("batchnorm: identity parameters pass input through") {
    auto bn = identity_bn(2);
    FeatureMap x(8, 2);
    Rng rng(3);
    for (double& v : x.values) v = rng.uniform(-4.0, 4.0);

    nn::ForwardOptions opts; // eval mode
    const FeatureMap y = nn::batchnorm_forward(x, bn, {{16, 8}, {16, 8}}, opts);
    for (std::size_t i = 0; i < x.values.size(); ++i)
        CHECK(y.values[i] == fxp::quantize(x.values[i], {16, 8}));
}

TEST_CASE("batchnorm: zero numerator leaves only the bias") {
    nn::BatchNormParams bn;
    bn.mean = {2.0};
    bn.variance = {0.7};
    bn.scale = {13.0};
    bn.bias = {0.5};

    FeatureMap x(5, 1);
    for (double& v : x.values) v = 2.0;
    const FeatureMap y = nn::batchnorm_forward(x, bn, {{16, 8}, {16, 8}}, {});
    for (double v : y.values) CHECK(v == 0.5);
}

TEST_CASE("batchnorm: zero scale and bias annihilate") {
    nn::BatchNormParams bn;
    bn.mean = {0.3};
    bn.variance = {1.1};
    bn.scale = {0.0};
    bn.bias = {0.0};
    FeatureMap x(4, 1);
    x.values = {1.0, -2.0, 0.25, 3.0};
    const FeatureMap y = nn::batchnorm_forward(x, bn, {{16, 8}, {16, 8}}, {});
    for (double v : y.values) CHECK(v == 0.0);
}

TEST_CASE("batchnorm: train mode uses batch statistics and updates averages") {
    nn::BatchNormParams bn;
    bn.mean = {10.0};
    bn.variance = {5.0};
    bn.scale = {1.0};
    bn.bias = {0.0};
    bn.momentum = 0.9;

    // Batch with mean 1, variance 1 per construction: values {0, 2}.
    FeatureMap x(2, 1);
    x.values = {0.0, 2.0};
    nn::ForwardOptions train_opts;
    train_opts.mode = nn::Mode::kTrain;
    const FeatureMap y = nn::batchnorm_forward(x, bn, {{32, 16}, {32, 16}}, train_opts);
    // Normalized values +-1/sqrt(1+eps).
    const double expect = 1.0 / std::sqrt(1.0 + bn.epsilon);
    CHECK(y.at(0, 0) == doctest::Approx(-expect).epsilon(1e-4));
    CHECK(y.at(1, 0) == doctest::Approx(expect).epsilon(1e-4));
    CHECK(bn.mean[0] == doctest::Approx(0.9 * 10.0 + 0.1 * 1.0));
    CHECK(bn.variance[0] == doctest::Approx(0.9 * 5.0 + 0.1 * 1.0));
}

TEST_CASE("batchnorm: channel mismatch rejected") {
    nn::BatchNormParams bn = identity_bn(3);
    FeatureMap x(4, 2);
    CHECK_THROWS_AS(nn::batchnorm_forward(x, bn, {}, {}), ContractError);
}

TEST_CASE("gap_fc: hand examples") {
    const fxp::QuantPair q{{16, 8}, {16, 8}};
    FeatureMap zeros(6, 3);
    CHECK(nn::gap_fc_forward(zeros, {0.5, 0.5, 0.5}, 0.25, q) == 0.25);

    FeatureMap ones(4, 3);
    for (double& v : ones.values) v = 1.0;
    CHECK(nn::gap_fc_forward(ones, {0.25, 0.5, 1.0}, 0.125, q) == 0.25 + 0.5 + 1.0 + 0.125);

    const FeatureMap ramp = single_channel({1, 2, 3, 4});
    CHECK(nn::gap_fc_forward(ramp, {2.0}, 0.0, q) == 5.0);

    CHECK_THROWS_AS(nn::gap_fc_forward(ramp, {1.0, 1.0}, 0.0, q), ContractError);
}

TEST_CASE("network_forward: zero input yields quantized head bias") {
    Genome g;
    g.layers = {{4, 8, 2}};
    g.quant = {{16, 8}, {16, 8}};
    nn::QuantizedNetwork net = nn::build_network(g, 2);
    net.head_bias = 0.308; // quantizes to 79/256
    for (auto& layer : net.layers) layer.bn = identity_bn(layer.out_channels);

    FeatureMap x(32, 2);
    const double logit = nn::network_forward(net, x, nn::Mode::kEval);
    CHECK(logit == fxp::quantize(0.308, {16, 8}));
}

TEST_CASE("network_forward: composed single-layer example") {
    Genome g;
    g.layers = {{2, 1, 2}};
    g.quant = {{16, 8}, {16, 8}};
    nn::QuantizedNetwork net = nn::build_network(g, 1);
    net.layers[0].depthwise_weights = {0.5, 0.5};
    net.layers[0].pointwise_weights = {1.0};
    net.layers[0].bn = identity_bn(1);
    net.head_weights = {1.0};
    net.head_bias = 0.0;

    const FeatureMap x = single_channel({1, 1, 2, 2, 4, 4, 8, 8});
    CHECK(nn::network_forward(net, x, nn::Mode::kEval) == 3.75);
}

TEST_CASE("network_forward: infeasible shape raises") {
    Genome g;
    g.layers = {{8, 4, 1}};
    g.quant = {{16, 8}, {16, 8}};
    nn::QuantizedNetwork net = nn::build_network(g, 2);
    FeatureMap x(4, 2);
    CHECK_THROWS_AS(nn::network_forward(net, x, nn::Mode::kEval), InfeasibleShapeError);
}

TEST_CASE("quantization closure of every stage output") {
    Rng rng(11);
    Genome g;
    g.layers = {{4, 8, 2}, {2, 4, 1}};
    g.quant = {{12, 6}, {12, 8}};
    nn::QuantizedNetwork net = nn::build_network(g, 2);
    for (auto& layer : net.layers) {
        for (double& w : layer.depthwise_weights) w = rng.normal(0.0, 0.5);
        for (double& w : layer.pointwise_weights) w = rng.normal(0.0, 0.5);
        for (double& s : layer.bn.scale) s = rng.uniform(0.5, 1.5);
        for (double& b : layer.bn.bias) b = rng.uniform(-0.5, 0.5);
    }
    for (double& w : net.head_weights) w = rng.normal(0.0, 0.5);

    std::vector<FeatureMap> batch;
    FeatureMap x(64, 2);
    for (double& v : x.values) v = rng.uniform(-2.0, 2.0);
    batch.push_back(x);

    nn::ForwardOptions opts;
    opts.mode = nn::Mode::kTrain;
    nn::ForwardCache cache;
    nn::network_forward_batch(net, batch, opts, &cache);

    for (const auto& lc : cache.layers) {
        for (const auto& fm : lc.dw_q)
            for (double v : fm.values) CHECK(v == fxp::quantize(v, net.quant.activations));
        for (const auto& fm : lc.pw_q)
            for (double v : fm.values) CHECK(v == fxp::quantize(v, net.quant.activations));
        for (const auto& fm : lc.out)
            for (double v : fm.values) CHECK(v == fxp::quantize(v, net.quant.activations));
    }
}

TEST_CASE("shape law and chaining") {
    Genome g;
    g.layers = {{16, 8, 4}, {8, 16, 2}, {2, 4, 1}};
    const auto shapes = nn::output_shapes(g, 1024);
    REQUIRE(shapes.size() == 3);
    CHECK(shapes[0] == std::pair{(1024 - 16) / 4 + 1, 8}); // 253
    CHECK(shapes[1] == std::pair{(253 - 8) / 2 + 1, 16});  // 123
    CHECK(shapes[2] == std::pair{(123 - 2) / 1 + 1, 4});   // 122
    CHECK_THROWS_AS(nn::output_shapes(g, 20), InfeasibleShapeError);
}

TEST_CASE("param_count formula") {
    Genome g;
    g.layers = {{16, 32, 1}};
    CHECK(nn::param_count(g, 2) == 32 + 64 + 64 + 33);

    nn::QuantizedNetwork net = nn::build_network(g, 2);
    CHECK(nn::param_count(net) == 193);

    Genome empty;
    CHECK_THROWS_AS(nn::param_count(empty, 2), ContractError);
}

TEST_CASE("bit-for-bit float equality on exactly representable nets") {
    // All parameters and inputs on dyadic grids; batchnorm denominators exactly
    // 1.0 (eval mode). The quantizers then never round, so the bypass path and
    // the quantized path must agree to the last bit.
    Rng rng(99);
    Genome g;
    g.layers = {{4, 4, 2}, {2, 8, 1}};
    g.quant = {{32, 16}, {32, 16}};
    nn::QuantizedNetwork net = nn::build_network(g, 2);
    for (auto& layer : net.layers) layer.bn = identity_bn(layer.out_channels);

    // First layer weights on the 2^-8 grid, deeper weights integers.
    for (double& w : net.layers[0].depthwise_weights)
        w = static_cast<double>(static_cast<int>(rng.uniform_index(129)) - 64) / 256.0;
    for (double& w : net.layers[0].pointwise_weights)
        w = static_cast<double>(static_cast<int>(rng.uniform_index(5)) - 2);
    for (double& w : net.layers[1].depthwise_weights)
        w = static_cast<double>(static_cast<int>(rng.uniform_index(5)) - 2);
    for (double& w : net.layers[1].pointwise_weights)
        w = static_cast<double>(static_cast<int>(rng.uniform_index(3)) - 1);
    for (auto& layer : net.layers)
        for (double& s : layer.bn.scale) s = rng.coin(0.5) ? 1.0 : 2.0;
    for (auto& layer : net.layers)
        for (double& b : layer.bn.bias)
            b = static_cast<double>(static_cast<int>(rng.uniform_index(65)) - 32) / 65536.0;
    for (double& w : net.head_weights)
        w = static_cast<double>(static_cast<int>(rng.uniform_index(7)) - 3);
    net.head_bias = 5.0 / 65536.0;

    std::vector<FeatureMap> batch;
    for (int b = 0; b < 3; ++b) {
        FeatureMap x(32, 2);
        for (double& v : x.values)
            v = static_cast<double>(static_cast<int>(rng.uniform_index(2049)) - 1024) / 256.0;
        batch.push_back(std::move(x));
    }

    nn::ForwardOptions quantized;
    nn::ForwardOptions bypass;
    bypass.bypass_quant = true;
    const auto a = nn::network_forward_batch(net, batch, quantized, nullptr);
    const auto b = nn::network_forward_batch(net, batch, bypass, nullptr);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("backward: analytic head-bias gradient on the trivial network") {
    Genome g;
    g.layers = {{2, 4, 1}};
    g.quant = {{16, 8}, {16, 8}};
    nn::QuantizedNetwork net = nn::build_network(g, 2);
    net.head_bias = 0.5;

    std::vector<FeatureMap> batch{FeatureMap(8, 2)};
    nn::ForwardOptions opts;
    opts.mode = nn::Mode::kTrain;
    nn::ForwardCache cache;
    nn::network_forward_batch(net, batch, opts, &cache);
    const auto grads = nn::network_backward(net, cache, {1.0}, opts);

    const double qb = fxp::quantize(0.5, {16, 8});
    const double expect = 1.0 / (1.0 + std::exp(-qb)) - 1.0;
    CHECK(grads.head_bias == doctest::Approx(expect).epsilon(1e-12));

    // Zero upstream everywhere: all conv weights see zero input, so their
    // gradients vanish.
    for (const auto& lg : grads.layers)
        for (double v : lg.depthwise) CHECK(v == 0.0);
}

TEST_CASE("backward matches finite differences on random small networks") {
    Rng rng(2024);
    int total_checked = 0;
    for (int trial = 0; trial < 5; ++trial) {
        auto net = fdcheck::random_small_network(rng);
        const auto res = fdcheck::check_network(net, rng);
        INFO("trial ", trial, " worst mixed error ", res.worst, " skipped ", res.skipped);
        CHECK(res.failed == 0);
        CHECK(res.checked > 0);
        // Boundary-adjacent (skipped) points must stay a minority.
        CHECK(res.skipped <= res.checked);
        total_checked += res.checked;
    }
    CHECK(total_checked > 120);
}

TEST_SUITE_END();
