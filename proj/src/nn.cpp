#include "afnas/nn.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace afnas::nn {

namespace {

// Quantizer view honoring the bypass switch of ForwardOptions.
struct Quant {
    fxp::FxpFormat fmt;
    fxp::ClipMode clip;
    bool bypass;

    double operator()(double x) const { return bypass ? x : fxp::quantize(x, fmt, clip); }
    double grad_mask(double x) const { return bypass ? 1.0 : fxp::ste_grad(1.0, x, fmt, clip); }
};

Quant make_quant(const fxp::FxpFormat& fmt, const ForwardOptions& opts) {
    return Quant{fmt, opts.clip_mode, opts.bypass_quant};
}

void apply_quant(FeatureMap& m, const Quant& q) {
    if (q.bypass) return;
    for (double& v : m.values) v = fxp::quantize(v, q.fmt, q.clip);
}

FeatureMap quantized_copy(const FeatureMap& m, const Quant& q) {
    FeatureMap out = m;
    apply_quant(out, q);
    return out;
}

void maybe_quant_accumulator(FeatureMap& m, const std::optional<fxp::FxpFormat>& fmt,
                             const ForwardOptions& opts) {
    if (!fmt || opts.bypass_quant) return;
    for (double& v : m.values) v = fxp::quantize(v, *fmt, opts.clip_mode);
}

void check_layer_shapes(const FeatureMap& x, const DsConvLayer& layer) {
    if (x.channels != layer.in_channels)
        throw ContractError("dsconv: input has " + std::to_string(x.channels) +
                            " channels, layer expects " + std::to_string(layer.in_channels));
    if (x.length < layer.kernel)
        throw InfeasibleShapeError("dsconv: input length " + std::to_string(x.length) +
                                   " shorter than kernel " + std::to_string(layer.kernel));
    if (layer.stride < 1) throw ContractError("dsconv: stride must be positive");
}

FeatureMap depthwise_stage(const FeatureMap& xq, const DsConvLayer& layer,
                           const std::vector<double>& dw_q, const ForwardOptions& opts) {
    const int out_len = conv_output_length(xq.length, layer.kernel, layer.stride);
    const int cin = layer.in_channels;
    FeatureMap out(out_len, cin);
    for (int ho = 0; ho < out_len; ++ho) {
        double* orow = out.row(ho);
        const int base = ho * layer.stride;
        for (int k = 0; k < layer.kernel; ++k) {
            const double* xrow = xq.row(base + k);
            const double* wrow = &dw_q[static_cast<std::size_t>(k) * cin];
            for (int c = 0; c < cin; ++c) orow[c] += xrow[c] * wrow[c];
        }
    }
    if (opts.mac_counter)
        *opts.mac_counter += static_cast<std::uint64_t>(out_len) * layer.kernel * cin;
    return out;
}

FeatureMap pointwise_stage(const FeatureMap& a, const DsConvLayer& layer,
                           const std::vector<double>& pw_q, const ForwardOptions& opts) {
    const int cin = layer.in_channels;
    const int cout = layer.out_channels;
    FeatureMap out(a.length, cout);
    for (int h = 0; h < a.length; ++h) {
        const double* arow = a.row(h);
        double* orow = out.row(h);
        for (int ci = 0; ci < cin; ++ci) {
            const double v = arow[ci];
            const double* wrow = &pw_q[static_cast<std::size_t>(ci) * cout];
            for (int co = 0; co < cout; ++co) orow[co] += v * wrow[co];
        }
    }
    if (opts.mac_counter)
        *opts.mac_counter += static_cast<std::uint64_t>(a.length) * cin * cout;
    return out;
}

std::vector<double> quantize_vector(const std::vector<double>& v, const Quant& q) {
    std::vector<double> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = q(v[i]);
    return out;
}

const AccumulatorFormats kNoAccumulators{};

const AccumulatorFormats& layer_accumulators(const ForwardOptions& opts, std::size_t layer_idx) {
    if (layer_idx < opts.accumulators.size()) return opts.accumulators[layer_idx];
    return kNoAccumulators;
}

} // namespace

FeatureMap dsconv_forward(const FeatureMap& x, const DsConvLayer& layer,
                          const fxp::QuantPair& quant, const ForwardOptions& opts) {
    check_layer_shapes(x, layer);
    const Quant qa = make_quant(quant.activations, opts);
    const Quant qw = make_quant(quant.weights, opts);

    FeatureMap xq = quantized_copy(x, qa);
    const std::vector<double> dw_q = quantize_vector(layer.depthwise_weights, qw);
    FeatureMap d = depthwise_stage(xq, layer, dw_q, opts);
    apply_quant(d, qa);

    const std::vector<double> pw_q = quantize_vector(layer.pointwise_weights, qw);
    FeatureMap p = pointwise_stage(d, layer, pw_q, opts);
    apply_quant(p, qa);
    return p;
}

FeatureMap batchnorm_forward(const FeatureMap& x, BatchNormParams& bn,
                             const fxp::QuantPair& quant, const ForwardOptions& opts) {
    const auto channels = static_cast<std::size_t>(x.channels);
    if (bn.mean.size() != channels || bn.variance.size() != channels ||
        bn.scale.size() != channels || bn.bias.size() != channels)
        throw ContractError("batchnorm: parameter vectors do not match channel count");

    const Quant qa = make_quant(quant.activations, opts);
    const Quant qw = make_quant(quant.weights, opts);

    FeatureMap u = quantized_copy(x, qa);

    std::vector<double> mu(channels, 0.0), var(channels, 0.0);
    if (opts.mode == Mode::kTrain) {
        const double n = x.length;
        for (int h = 0; h < x.length; ++h) {
            const double* row = u.row(h);
            for (std::size_t c = 0; c < channels; ++c) mu[c] += row[c];
        }
        for (std::size_t c = 0; c < channels; ++c) mu[c] /= n;
        for (int h = 0; h < x.length; ++h) {
            const double* row = u.row(h);
            for (std::size_t c = 0; c < channels; ++c) {
                const double d = row[c] - mu[c];
                var[c] += d * d;
            }
        }
        for (std::size_t c = 0; c < channels; ++c) var[c] /= n;
        for (std::size_t c = 0; c < channels; ++c) {
            bn.mean[c] = bn.momentum * bn.mean[c] + (1.0 - bn.momentum) * mu[c];
            bn.variance[c] = bn.momentum * bn.variance[c] + (1.0 - bn.momentum) * var[c];
        }
    } else {
        mu = bn.mean;
        var = bn.variance;
    }

    FeatureMap out(x.length, x.channels);
    for (std::size_t c = 0; c < channels; ++c) {
        if (var[c] < 0.0) throw ContractError("batchnorm: negative variance");
        const double sq = qw(std::sqrt(var[c]));
        const double denom = std::sqrt(sq * sq + bn.epsilon);
        const double muq = qw(mu[c]);
        const double g = qw(bn.scale[c]);
        const double b = qw(bn.bias[c]);
        for (int h = 0; h < x.length; ++h)
            out.at(h, static_cast<int>(c)) = (u.at(h, static_cast<int>(c)) - muq) / denom * g + b;
    }
    apply_quant(out, qa);
    return out;
}

double gap_fc_forward(const FeatureMap& x, const std::vector<double>& head_weights,
                      double head_bias, const fxp::QuantPair& quant, const ForwardOptions& opts) {
    if (x.length < 1 || x.channels < 1) throw ContractError("gap_fc: empty feature map");
    if (head_weights.size() != static_cast<std::size_t>(x.channels))
        throw ContractError("gap_fc: head weight count does not match channels");

    const Quant qw = make_quant(quant.weights, opts);
    std::vector<double> sums(x.channels, 0.0);
    for (int h = 0; h < x.length; ++h) {
        const double* row = x.row(h);
        for (int c = 0; c < x.channels; ++c) sums[c] += row[c];
    }
    double logit = qw(head_bias);
    for (int c = 0; c < x.channels; ++c) logit += qw(head_weights[c]) * (sums[c] / x.length);
    if (opts.mac_counter) *opts.mac_counter += static_cast<std::uint64_t>(x.channels);

    if (!opts.bypass_quant && opts.head_accumulator.head)
        logit = fxp::quantize(logit, *opts.head_accumulator.head, opts.clip_mode);
    return logit;
}

namespace {

// Shared body for the batched forward. Fills the cache when requested.
std::vector<double> forward_impl(QuantizedNetwork& net, const std::vector<FeatureMap>& batch,
                                 const ForwardOptions& opts, ForwardCache* cache) {
    if (net.layers.empty()) throw ContractError("network: no layers");
    if (batch.empty()) throw ContractError("network: empty batch");
    for (const auto& x : batch)
        if (x.channels != net.input_channels)
            throw ContractError("network: window channel count mismatch");

    const Quant qa = make_quant(net.quant.activations, opts);
    const Quant qw = make_quant(net.quant.weights, opts);
    const std::size_t batch_size = batch.size();

    if (cache) {
        cache->layers.assign(net.layers.size(), {});
        cache->head_input.clear();
        cache->channel_means.clear();
        cache->logits.clear();
    }

    std::vector<FeatureMap> cur = batch;
    for (std::size_t li = 0; li < net.layers.size(); ++li) {
        DsConvLayer& layer = net.layers[li];
        const AccumulatorFormats& acc = layer_accumulators(opts, li);
        LayerCache* lc = cache ? &cache->layers[li] : nullptr;
        if (lc) lc->input = cur;

        const std::vector<double> dw_q = quantize_vector(layer.depthwise_weights, qw);
        const std::vector<double> pw_q = quantize_vector(layer.pointwise_weights, qw);

        std::vector<FeatureMap> pw_out(batch_size);
        for (std::size_t b = 0; b < batch_size; ++b) {
            check_layer_shapes(cur[b], layer);
            FeatureMap xq = quantized_copy(cur[b], qa);
            if (lc) lc->input_q.push_back(xq);

            FeatureMap d = depthwise_stage(xq, layer, dw_q, opts);
            maybe_quant_accumulator(d, acc.depthwise, opts);
            if (lc) lc->dw_raw.push_back(d);
            apply_quant(d, qa);
            if (lc) lc->dw_q.push_back(d);

            FeatureMap p = pointwise_stage(d, layer, pw_q, opts);
            if (!layer.bias.empty()) {
                for (int h = 0; h < p.length; ++h) {
                    double* row = p.row(h);
                    for (int c = 0; c < p.channels; ++c) row[c] += layer.bias[c];
                }
            }
            maybe_quant_accumulator(p, acc.pointwise, opts);
            if (lc) lc->pw_raw.push_back(p);
            apply_quant(p, qa);
            if (lc) lc->pw_q.push_back(p);
            pw_out[b] = std::move(p);
        }

        if (layer.has_bn) {
            const auto channels = static_cast<std::size_t>(layer.out_channels);
            BatchNormParams& bn = layer.bn;
            if (bn.mean.size() != channels || bn.variance.size() != channels ||
                bn.scale.size() != channels || bn.bias.size() != channels)
                throw ContractError("batchnorm: parameter vectors do not match channel count");

            std::vector<double> mu(channels, 0.0), var(channels, 0.0);
            if (opts.mode == Mode::kTrain) {
                double n = 0;
                for (const auto& m : pw_out) n += m.length;
                for (const auto& m : pw_out)
                    for (int h = 0; h < m.length; ++h) {
                        const double* row = m.row(h);
                        for (std::size_t c = 0; c < channels; ++c) mu[c] += row[c];
                    }
                for (std::size_t c = 0; c < channels; ++c) mu[c] /= n;
                for (const auto& m : pw_out)
                    for (int h = 0; h < m.length; ++h) {
                        const double* row = m.row(h);
                        for (std::size_t c = 0; c < channels; ++c) {
                            const double d = row[c] - mu[c];
                            var[c] += d * d;
                        }
                    }
                for (std::size_t c = 0; c < channels; ++c) var[c] /= n;
                for (std::size_t c = 0; c < channels; ++c) {
                    bn.mean[c] = bn.momentum * bn.mean[c] + (1.0 - bn.momentum) * mu[c];
                    bn.variance[c] = bn.momentum * bn.variance[c] + (1.0 - bn.momentum) * var[c];
                }
            } else {
                mu = bn.mean;
                var = bn.variance;
            }

            std::vector<double> mu_q(channels), sigma(channels), sigma_q(channels), denom(channels),
                gamma_q(channels), beta_q(channels);
            for (std::size_t c = 0; c < channels; ++c) {
                if (var[c] < 0.0) throw ContractError("batchnorm: negative variance");
                sigma[c] = std::sqrt(var[c]);
                sigma_q[c] = qw(sigma[c]);
                denom[c] = std::sqrt(sigma_q[c] * sigma_q[c] + bn.epsilon);
                mu_q[c] = qw(mu[c]);
                gamma_q[c] = qw(bn.scale[c]);
                beta_q[c] = qw(bn.bias[c]);
            }
            if (lc) {
                lc->batch_mean = mu;
                lc->batch_var = var;
                lc->mu_used = mu;
                lc->sigma_used = sigma;
                lc->mu_q = mu_q;
                lc->sigma_q_vec = sigma_q;
                lc->denom = denom;
            }

            for (auto& m : pw_out) {
                FeatureMap z(m.length, m.channels);
                for (int h = 0; h < m.length; ++h) {
                    const double* row = m.row(h);
                    double* zrow = z.row(h);
                    for (std::size_t c = 0; c < channels; ++c)
                        zrow[c] = (row[c] - mu_q[c]) / denom[c] * gamma_q[c] + beta_q[c];
                }
                m = std::move(z);
            }
        }

        for (std::size_t b = 0; b < batch_size; ++b) {
            FeatureMap& m = pw_out[b];
            if (lc && layer.has_bn) lc->bn_raw.push_back(m);
            apply_quant(m, qa);
            if (layer.relu)
                for (double& v : m.values) v = std::max(0.0, v);
            if (lc) lc->out.push_back(m);
        }
        cur = std::move(pw_out);
    }

    std::vector<double> logits(batch_size);
    for (std::size_t b = 0; b < batch_size; ++b) {
        if (cache) cache->head_input.push_back(cur[b]);
        const FeatureMap& f = cur[b];
        std::vector<double> means(f.channels, 0.0);
        for (int h = 0; h < f.length; ++h) {
            const double* row = f.row(h);
            for (int c = 0; c < f.channels; ++c) means[c] += row[c];
        }
        for (int c = 0; c < f.channels; ++c) means[c] /= f.length;
        double logit = qw(net.head_bias);
        for (int c = 0; c < f.channels; ++c) logit += qw(net.head_weights[c]) * means[c];
        if (opts.mac_counter) *opts.mac_counter += static_cast<std::uint64_t>(f.channels);
        if (!opts.bypass_quant && opts.head_accumulator.head)
            logit = fxp::quantize(logit, *opts.head_accumulator.head, opts.clip_mode);
        logits[b] = logit;
        if (cache) cache->channel_means.push_back(std::move(means));
    }
    if (cache) cache->logits = logits;
    return logits;
}

} // namespace

std::vector<double> network_forward_batch(QuantizedNetwork& net, const std::vector<FeatureMap>& batch,
                                          const ForwardOptions& opts, ForwardCache* cache) {
    return forward_impl(net, batch, opts, cache);
}

double network_forward(QuantizedNetwork& net, const FeatureMap& x, Mode mode) {
    ForwardOptions opts;
    opts.mode = mode;
    return forward_impl(net, {x}, opts, nullptr)[0];
}

double bce_loss(const std::vector<double>& logits, const std::vector<double>& targets) {
    if (logits.size() != targets.size() || logits.empty())
        throw ContractError("bce_loss: size mismatch");
    double total = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        const double l = logits[i];
        // max(l,0) - l*t + log(1 + exp(-|l|)), stable for large |l|
        total += std::max(l, 0.0) - l * targets[i] + std::log1p(std::exp(-std::abs(l)));
    }
    return total / static_cast<double>(logits.size());
}

Gradients network_backward(const QuantizedNetwork& net, const ForwardCache& cache,
                           const std::vector<double>& targets, const ForwardOptions& opts) {
    const std::size_t batch_size = cache.logits.size();
    if (targets.size() != batch_size) throw ContractError("backward: target count mismatch");
    if (cache.layers.size() != net.layers.size())
        throw ContractError("backward: cache does not match network");
    for (const auto& layer : net.layers)
        if (!layer.bias.empty() || !layer.has_bn)
            throw ContractError("backward: only unfolded batchnorm layers are trainable");

    const Quant qa = make_quant(net.quant.activations, opts);
    const Quant qw = make_quant(net.quant.weights, opts);

    Gradients grads;
    grads.layers.resize(net.layers.size());
    for (std::size_t li = 0; li < net.layers.size(); ++li) {
        const auto& layer = net.layers[li];
        grads.layers[li].depthwise.assign(layer.depthwise_weights.size(), 0.0);
        grads.layers[li].pointwise.assign(layer.pointwise_weights.size(), 0.0);
        grads.layers[li].bn_scale.assign(layer.bn.scale.size(), 0.0);
        grads.layers[li].bn_bias.assign(layer.bn.bias.size(), 0.0);
    }
    grads.head_weights.assign(net.head_weights.size(), 0.0);

    // Head: dL/dlogit, then distribute through GAP.
    std::vector<FeatureMap> delta(batch_size); // gradient w.r.t. the layer output `out`
    for (std::size_t b = 0; b < batch_size; ++b) {
        const double logit = cache.logits[b];
        const double dlogit = (1.0 / (1.0 + std::exp(-logit)) - targets[b]) /
                              static_cast<double>(batch_size);
        const FeatureMap& f = cache.head_input[b];
        grads.head_bias += dlogit * qw.grad_mask(net.head_bias);
        for (int c = 0; c < f.channels; ++c)
            grads.head_weights[c] += dlogit * cache.channel_means[b][c] *
                                     qw.grad_mask(net.head_weights[c]);
        FeatureMap d(f.length, f.channels);
        for (int c = 0; c < f.channels; ++c) {
            const double g = dlogit * qw(net.head_weights[c]) / f.length;
            for (int h = 0; h < f.length; ++h) d.at(h, c) = g;
        }
        delta[b] = std::move(d);
    }

    for (std::size_t li = net.layers.size(); li-- > 0;) {
        const DsConvLayer& layer = net.layers[li];
        const LayerCache& lc = cache.layers[li];
        auto& lg = grads.layers[li];
        const auto channels = static_cast<std::size_t>(layer.out_channels);

        const std::vector<double> dw_q = quantize_vector(layer.depthwise_weights, qw);
        const std::vector<double> pw_q = quantize_vector(layer.pointwise_weights, qw);

        // ReLU and the output quantizer.
        std::vector<FeatureMap> dz(batch_size);
        for (std::size_t b = 0; b < batch_size; ++b) {
            const FeatureMap& out = lc.out[b];
            const FeatureMap& bn_raw = lc.bn_raw[b];
            FeatureMap d = delta[b];
            for (std::size_t i = 0; i < d.values.size(); ++i) {
                double g = d.values[i];
                if (layer.relu && out.values[i] <= 0.0) g = 0.0;
                g *= qa.grad_mask(bn_raw.values[i]);
                d.values[i] = g;
            }
            dz[b] = std::move(d);
        }

        // Batchnorm: z = (p - mu_q)/denom * gamma_q + beta_q with batch
        // statistics mu, sigma functions of p (train mode).
        double n_total = 0;
        for (std::size_t b = 0; b < batch_size; ++b) n_total += lc.pw_q[b].length;
        std::vector<double> sum_dz(channels, 0.0), sum_dz_dev(channels, 0.0);
        for (std::size_t b = 0; b < batch_size; ++b) {
            const FeatureMap& p = lc.pw_q[b];
            const FeatureMap& d = dz[b];
            for (int h = 0; h < p.length; ++h) {
                const double* prow = p.row(h);
                const double* drow = d.row(h);
                for (std::size_t c = 0; c < channels; ++c) {
                    sum_dz[c] += drow[c];
                    sum_dz_dev[c] += drow[c] * (prow[c] - lc.mu_q[c]);
                }
            }
        }
        std::vector<double> gamma_q(channels), mask_gamma(channels), mask_beta(channels),
            mask_mu(channels), mask_sigma(channels);
        for (std::size_t c = 0; c < channels; ++c) {
            gamma_q[c] = qw(layer.bn.scale[c]);
            mask_gamma[c] = qw.grad_mask(layer.bn.scale[c]);
            mask_beta[c] = qw.grad_mask(layer.bn.bias[c]);
            mask_mu[c] = qw.grad_mask(lc.mu_used[c]);
            mask_sigma[c] = qw.grad_mask(lc.sigma_used[c]);
            lg.bn_scale[c] += sum_dz_dev[c] / lc.denom[c] * mask_gamma[c];
            lg.bn_bias[c] += sum_dz[c] * mask_beta[c];
        }

        std::vector<FeatureMap> dp(batch_size); // gradient w.r.t. pw_q values
        for (std::size_t b = 0; b < batch_size; ++b) {
            const FeatureMap& p = lc.pw_q[b];
            const FeatureMap& d = dz[b];
            FeatureMap g(p.length, p.channels);
            for (int h = 0; h < p.length; ++h) {
                const double* prow = p.row(h);
                const double* drow = d.row(h);
                double* grow = g.row(h);
                for (std::size_t c = 0; c < channels; ++c) {
                    const double scale = gamma_q[c] / lc.denom[c];
                    double val = drow[c] * scale;
                    val -= scale * mask_mu[c] * sum_dz[c] / n_total;
                    const double sigma = lc.sigma_used[c];
                    if (sigma > 1e-12) {
                        // through denom: d(denom)/dp_j = sigma_q*m_sigma/(denom) * (p_j-mu)/(n*sigma)
                        const double coeff = gamma_q[c] * sum_dz_dev[c] /
                                             (lc.denom[c] * lc.denom[c] * lc.denom[c]);
                        val -= coeff * lc.sigma_q_vec[c] * mask_sigma[c] *
                               (prow[c] - lc.batch_mean[c]) / (n_total * sigma);
                    }
                    grow[c] = val;
                }
            }
            dp[b] = std::move(g);
        }

        // Pointwise conv and its quantizers.
        std::vector<FeatureMap> da(batch_size); // gradient w.r.t. dw_q values
        for (std::size_t b = 0; b < batch_size; ++b) {
            const FeatureMap& praw = lc.pw_raw[b];
            const FeatureMap& a = lc.dw_q[b];
            FeatureMap& g = dp[b];
            for (std::size_t i = 0; i < g.values.size(); ++i)
                g.values[i] *= qa.grad_mask(praw.values[i]);
            FeatureMap ga(a.length, a.channels);
            for (int h = 0; h < a.length; ++h) {
                const double* arow = a.row(h);
                const double* grow = g.row(h);
                double* garow = ga.row(h);
                for (int ci = 0; ci < layer.in_channels; ++ci) {
                    const double* wrow = &pw_q[static_cast<std::size_t>(ci) * channels];
                    double acc = 0.0;
                    for (std::size_t co = 0; co < channels; ++co) {
                        lg.pointwise[static_cast<std::size_t>(ci) * channels + co] +=
                            arow[ci] * grow[co];
                        acc += grow[co] * wrow[co];
                    }
                    garow[ci] = acc;
                }
            }
            da[b] = std::move(ga);
        }
        for (std::size_t i = 0; i < lg.pointwise.size(); ++i)
            lg.pointwise[i] *= qw.grad_mask(layer.pointwise_weights[i]);

        // Depthwise conv and the input quantizer.
        std::vector<FeatureMap> dx(batch_size);
        for (std::size_t b = 0; b < batch_size; ++b) {
            const FeatureMap& draw = lc.dw_raw[b];
            const FeatureMap& xq = lc.input_q[b];
            FeatureMap& g = da[b];
            for (std::size_t i = 0; i < g.values.size(); ++i)
                g.values[i] *= qa.grad_mask(draw.values[i]);
            FeatureMap gx(xq.length, xq.channels);
            for (int ho = 0; ho < g.length; ++ho) {
                const int base = ho * layer.stride;
                const double* grow = g.row(ho);
                for (int k = 0; k < layer.kernel; ++k) {
                    const double* xrow = xq.row(base + k);
                    double* gxrow = gx.row(base + k);
                    const double* wrow = &dw_q[static_cast<std::size_t>(k) * layer.in_channels];
                    double* wgrow = &lg.depthwise[static_cast<std::size_t>(k) * layer.in_channels];
                    for (int c = 0; c < layer.in_channels; ++c) {
                        wgrow[c] += xrow[c] * grow[c];
                        gxrow[c] += grow[c] * wrow[c];
                    }
                }
            }
            const FeatureMap& x = lc.input[b];
            for (std::size_t i = 0; i < gx.values.size(); ++i)
                gx.values[i] *= qa.grad_mask(x.values[i]);
            dx[b] = std::move(gx);
        }
        for (std::size_t i = 0; i < lg.depthwise.size(); ++i)
            lg.depthwise[i] *= qw.grad_mask(layer.depthwise_weights[i]);

        delta = std::move(dx);
    }
    return grads;
}

std::int64_t param_count(const QuantizedNetwork& net) {
    if (net.layers.empty()) throw ContractError("param_count: no layers");
    std::int64_t total = 0;
    for (const auto& l : net.layers)
        total += static_cast<std::int64_t>(l.kernel) * l.in_channels +
                 static_cast<std::int64_t>(l.in_channels) * l.out_channels + 2 * l.out_channels;
    total += static_cast<std::int64_t>(net.head_weights.size()) + 1;
    return total;
}

std::int64_t param_count(const Genome& genome, int input_channels) {
    if (genome.layers.empty()) throw ContractError("param_count: no layers");
    std::int64_t total = 0;
    int cin = input_channels;
    for (const auto& l : genome.layers) {
        total += static_cast<std::int64_t>(l.kernel) * cin +
                 static_cast<std::int64_t>(cin) * l.out_channels + 2 * l.out_channels;
        cin = l.out_channels;
    }
    total += cin + 1;
    return total;
}

std::vector<std::pair<int, int>> output_shapes(const Genome& genome, int input_length) {
    std::vector<std::pair<int, int>> shapes;
    int h = input_length;
    for (const auto& l : genome.layers) {
        if (h < l.kernel)
            throw InfeasibleShapeError("shape chain: length " + std::to_string(h) +
                                       " < kernel " + std::to_string(l.kernel));
        h = conv_output_length(h, l.kernel, l.stride);
        shapes.emplace_back(h, l.out_channels);
    }
    return shapes;
}

std::vector<std::pair<int, int>> output_shapes(const QuantizedNetwork& net, int input_length) {
    Genome g;
    for (const auto& l : net.layers) g.layers.push_back({l.kernel, l.out_channels, l.stride});
    return output_shapes(g, input_length);
}

std::int64_t layer_macs(int input_length, int kernel, int in_channels, int out_channels, int stride) {
    const std::int64_t out_len = conv_output_length(input_length, kernel, stride);
    return out_len * in_channels * (static_cast<std::int64_t>(kernel) + out_channels);
}

QuantizedNetwork build_network(const Genome& genome, int input_channels) {
    if (genome.layers.empty() || genome.layers.size() > kMaxLayers)
        throw ContractError("build_network: layer count must be 1..5");
    QuantizedNetwork net;
    net.quant = genome.quant;
    net.input_channels = input_channels;
    int cin = input_channels;
    for (std::size_t i = 0; i < genome.layers.size(); ++i) {
        const LayerGene& gene = genome.layers[i];
        DsConvLayer layer;
        layer.kernel = gene.kernel;
        layer.in_channels = cin;
        layer.out_channels = gene.out_channels;
        layer.stride = gene.stride;
        layer.depthwise_weights.assign(static_cast<std::size_t>(gene.kernel) * cin, 0.0);
        layer.pointwise_weights.assign(static_cast<std::size_t>(cin) * gene.out_channels, 0.0);
        layer.bn.mean.assign(gene.out_channels, 0.0);
        layer.bn.variance.assign(gene.out_channels, 1.0);
        layer.bn.scale.assign(gene.out_channels, 1.0);
        layer.bn.bias.assign(gene.out_channels, 0.0);
        layer.relu = i + 1 < genome.layers.size(); // last layer feeds GAP unrectified
        cin = gene.out_channels;
        net.layers.push_back(std::move(layer));
    }
    net.head_weights.assign(cin, 0.0);
    return net;
}

} // namespace afnas::nn
