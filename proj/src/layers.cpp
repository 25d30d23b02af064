#include "objex/layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace objex {

namespace {

[[noreturn]] void layer_error(const LayerSpec& spec, const std::string& msg) {
    throw std::runtime_error("layer '" + spec.name + "' (" + layer_kind_name(spec.kind) +
                             "): " + msg);
}

void require_3d(const LayerSpec& spec, const std::vector<int>& s) {
    if (s.size() != 3) layer_error(spec, "expected h x w x c input, got rank " + std::to_string(s.size()));
}

int conv_out_extent(int in, int pad, int k, int stride) {
    return (in + 2 * pad - k) / stride + 1;
}

}  // namespace

const char* layer_kind_name(LayerKind k) {
    switch (k) {
        case LayerKind::Conv: return "conv";
        case LayerKind::ResponseNorm: return "response_norm";
        case LayerKind::MaxPool: return "maxpool";
        case LayerKind::FullConn: return "full_conn";
        case LayerKind::LogisticOutput: return "logistic";
    }
    return "?";
}

LayerSpec LayerSpec::conv(std::string name, int kernels, int kh, int kw, int kc, int stride,
                          int pad, bool relu) {
    LayerSpec s;
    s.kind = LayerKind::Conv;
    s.name = std::move(name);
    s.kernels = kernels;
    s.kh = kh;
    s.kw = kw;
    s.kc = kc;
    s.stride = stride;
    s.pad = pad;
    s.relu = relu;
    return s;
}

LayerSpec LayerSpec::response_norm(std::string name) {
    LayerSpec s;
    s.kind = LayerKind::ResponseNorm;
    s.name = std::move(name);
    return s;
}

LayerSpec LayerSpec::maxpool(std::string name) {
    LayerSpec s;
    s.kind = LayerKind::MaxPool;
    s.name = std::move(name);
    return s;
}

LayerSpec LayerSpec::full_conn(std::string name, int out, bool relu) {
    LayerSpec s;
    s.kind = LayerKind::FullConn;
    s.name = std::move(name);
    s.out = out;
    s.relu = relu;
    return s;
}

LayerSpec LayerSpec::logistic(std::string name) {
    LayerSpec s;
    s.kind = LayerKind::LogisticOutput;
    s.name = std::move(name);
    return s;
}

void LayerParams::zero_grads() {
    weight_grads.fill(0.0);
    bias_grads.fill(0.0);
}

std::vector<int> infer_output_shape(const LayerSpec& spec, const std::vector<int>& in_shape) {
    switch (spec.kind) {
        case LayerKind::Conv: {
            require_3d(spec, in_shape);
            if (in_shape[2] != spec.kc)
                layer_error(spec, "kernel channels " + std::to_string(spec.kc) +
                                      " != input channels " + std::to_string(in_shape[2]));
            const int oh = conv_out_extent(in_shape[0], spec.pad, spec.kh, spec.stride);
            const int ow = conv_out_extent(in_shape[1], spec.pad, spec.kw, spec.stride);
            if (oh <= 0 || ow <= 0) layer_error(spec, "kernel larger than padded input");
            return {oh, ow, spec.kernels};
        }
        case LayerKind::ResponseNorm:
            require_3d(spec, in_shape);
            return in_shape;
        case LayerKind::MaxPool: {
            require_3d(spec, in_shape);
            const int oh = (in_shape[0] - spec.pool) / spec.pool_stride + 1;
            const int ow = (in_shape[1] - spec.pool) / spec.pool_stride + 1;
            if (oh <= 0 || ow <= 0) layer_error(spec, "pool window larger than input");
            return {oh, ow, in_shape[2]};
        }
        case LayerKind::FullConn:
            return {spec.out};
        case LayerKind::LogisticOutput:
            return in_shape;
    }
    layer_error(spec, "unknown kind");
}

LayerParams make_params(const LayerSpec& spec, const std::vector<int>& in_shape) {
    LayerParams p;
    switch (spec.kind) {
        case LayerKind::Conv:
            infer_output_shape(spec, in_shape);  // shape validation
            p.weights = Tensor({spec.kernels, spec.kh, spec.kw, spec.kc});
            p.biases = Tensor({spec.kernels});
            break;
        case LayerKind::FullConn: {
            const int in = static_cast<int>(Tensor::count(in_shape));
            p.weights = Tensor({spec.out, in});
            p.biases = Tensor({spec.out});
            break;
        }
        default:
            return p;  // parameterless
    }
    p.weight_grads = Tensor(p.weights.shape);
    p.bias_grads = Tensor(p.biases.shape);
    return p;
}

void init_params(LayerParams& p, Rng& rng, double sigma) {
    if (sigma < 0.0 && !p.empty()) {
        // Fan-in scaled draw; without pretraining a fixed sigma starves deep
        // stacks of signal.
        const auto& s = p.weights.shape;
        std::size_t fan_in = 1;
        for (std::size_t i = 1; i < s.size(); ++i) fan_in *= static_cast<std::size_t>(s[i]);
        sigma = std::sqrt(2.0 / static_cast<double>(fan_in));
    }
    for (double& w : p.weights.data) w = sigma * rng.normal();
    p.biases.fill(0.0);
}

Tensor conv_forward(const Tensor& input, const LayerParams& p, const LayerSpec& spec,
                    LayerCache* cache) {
    const auto out_shape = infer_output_shape(spec, input.shape);
    const int ih = input.shape[0], iw = input.shape[1], ic = input.shape[2];
    const int oh = out_shape[0], ow = out_shape[1], ko = spec.kernels;
    Tensor out(out_shape);
    Tensor preact;
    if (spec.relu && cache) preact = Tensor(out_shape);

    for (int y = 0; y < oh; ++y) {
        const int y0 = y * spec.stride - spec.pad;
        for (int x = 0; x < ow; ++x) {
            const int x0 = x * spec.stride - spec.pad;
            for (int o = 0; o < ko; ++o) {
                double acc = p.biases[o];
                const double* wbase = &p.weights.data[static_cast<std::size_t>(o) * spec.kh * spec.kw * spec.kc];
                for (int ky = 0; ky < spec.kh; ++ky) {
                    const int yy = y0 + ky;
                    if (yy < 0 || yy >= ih) continue;
                    for (int kx = 0; kx < spec.kw; ++kx) {
                        const int xx = x0 + kx;
                        if (xx < 0 || xx >= iw) continue;
                        const double* in = &input.data[(static_cast<std::size_t>(yy) * iw + xx) * ic];
                        const double* w = wbase + (ky * spec.kw + kx) * spec.kc;
                        for (int c = 0; c < ic; ++c) acc += in[c] * w[c];
                    }
                }
                const std::size_t oi = (static_cast<std::size_t>(y) * ow + x) * ko + o;
                if (spec.relu) {
                    if (cache) preact.data[oi] = acc;
                    out.data[oi] = acc > 0.0 ? acc : 0.0;
                } else {
                    out.data[oi] = acc;
                }
            }
        }
    }
    if (cache) {
        cache->input = input;
        cache->preact = std::move(preact);
    }
    assert_finite(out, "conv_forward");
    return out;
}

Tensor conv_backward(const Tensor& upstream, LayerParams& p, const LayerSpec& spec,
                     const LayerCache& cache) {
    const Tensor& input = cache.input;
    const auto out_shape = infer_output_shape(spec, input.shape);
    if (upstream.shape != out_shape)
        layer_error(spec, "upstream grad shape " + upstream.shape_str() +
                              " != forward output shape");
    const int ih = input.shape[0], iw = input.shape[1], ic = input.shape[2];
    const int oh = out_shape[0], ow = out_shape[1], ko = spec.kernels;
    Tensor din(input.shape);

    for (int y = 0; y < oh; ++y) {
        const int y0 = y * spec.stride - spec.pad;
        for (int x = 0; x < ow; ++x) {
            const int x0 = x * spec.stride - spec.pad;
            for (int o = 0; o < ko; ++o) {
                const std::size_t oi = (static_cast<std::size_t>(y) * ow + x) * ko + o;
                double g = upstream.data[oi];
                if (spec.relu && cache.preact.data[oi] <= 0.0) continue;
                if (g == 0.0) continue;
                p.bias_grads[o] += g;
                double* wg = &p.weight_grads.data[static_cast<std::size_t>(o) * spec.kh * spec.kw * spec.kc];
                const double* w = &p.weights.data[static_cast<std::size_t>(o) * spec.kh * spec.kw * spec.kc];
                for (int ky = 0; ky < spec.kh; ++ky) {
                    const int yy = y0 + ky;
                    if (yy < 0 || yy >= ih) continue;
                    for (int kx = 0; kx < spec.kw; ++kx) {
                        const int xx = x0 + kx;
                        if (xx < 0 || xx >= iw) continue;
                        const std::size_t ii = (static_cast<std::size_t>(yy) * iw + xx) * ic;
                        const std::size_t ki = (static_cast<std::size_t>(ky) * spec.kw + kx) * ic;
                        for (int c = 0; c < ic; ++c) {
                            wg[ki + c] += g * input.data[ii + c];
                            din.data[ii + c] += g * w[ki + c];
                        }
                    }
                }
            }
        }
    }
    assert_finite(din, "conv_backward");
    return din;
}

Tensor maxpool_forward(const Tensor& input, const LayerSpec& spec, LayerCache* cache) {
    const auto out_shape = infer_output_shape(spec, input.shape);
    const int iw = input.shape[1], ic = input.shape[2];
    const int oh = out_shape[0], ow = out_shape[1];
    Tensor out(out_shape);
    std::vector<int> argmax(out.data.size());

    for (int y = 0; y < oh; ++y) {
        for (int x = 0; x < ow; ++x) {
            for (int c = 0; c < ic; ++c) {
                double best = -std::numeric_limits<double>::infinity();
                int best_i = -1;
                for (int py = 0; py < spec.pool; ++py) {
                    const int yy = y * spec.pool_stride + py;
                    for (int px = 0; px < spec.pool; ++px) {
                        const int xx = x * spec.pool_stride + px;
                        const int ii = (yy * iw + xx) * ic + c;
                        if (input.data[ii] > best) {
                            best = input.data[ii];
                            best_i = ii;
                        }
                    }
                }
                const std::size_t oi = (static_cast<std::size_t>(y) * ow + x) * ic + c;
                out.data[oi] = best;
                argmax[oi] = best_i;
            }
        }
    }
    if (cache) {
        cache->input = input;
        cache->argmax = std::move(argmax);
    }
    return out;
}

Tensor maxpool_backward(const Tensor& upstream, const LayerSpec& spec, const LayerCache& cache) {
    if (upstream.data.size() != cache.argmax.size())
        layer_error(spec, "upstream grad size != recorded pooling output size");
    Tensor din(cache.input.shape);
    for (std::size_t i = 0; i < cache.argmax.size(); ++i)
        din.data[cache.argmax[i]] += upstream.data[i];
    return din;
}

// Cross-channel normalization: out_c = in_c / (k + alpha * sum_{|j-c|<=n/2} in_j^2)^beta.
Tensor response_norm_forward(const Tensor& input, const LayerSpec& spec, LayerCache* cache) {
    require_3d(spec, input.shape);
    const int hw = input.shape[0] * input.shape[1];
    const int nc = input.shape[2];
    const int half = spec.rn_n / 2;
    Tensor out(input.shape);
    Tensor denom(input.shape);

    for (int p = 0; p < hw; ++p) {
        const double* in = &input.data[static_cast<std::size_t>(p) * nc];
        double* d = &denom.data[static_cast<std::size_t>(p) * nc];
        double* o = &out.data[static_cast<std::size_t>(p) * nc];
        for (int c = 0; c < nc; ++c) {
            double s = 0.0;
            const int lo = c - half > 0 ? c - half : 0;
            const int hi = c + half < nc - 1 ? c + half : nc - 1;
            for (int j = lo; j <= hi; ++j) s += in[j] * in[j];
            d[c] = spec.rn_k + spec.rn_alpha * s;
            o[c] = in[c] * std::pow(d[c], -spec.rn_beta);
        }
    }
    if (cache) {
        cache->input = input;
        cache->denom = std::move(denom);
    }
    assert_finite(out, "response_norm_forward");
    return out;
}

Tensor response_norm_backward(const Tensor& upstream, const LayerSpec& spec,
                              const LayerCache& cache) {
    const Tensor& input = cache.input;
    if (upstream.shape != input.shape)
        layer_error(spec, "upstream grad shape != input shape");
    const int hw = input.shape[0] * input.shape[1];
    const int nc = input.shape[2];
    const int half = spec.rn_n / 2;
    Tensor din(input.shape);

    for (int p = 0; p < hw; ++p) {
        const double* in = &input.data[static_cast<std::size_t>(p) * nc];
        const double* d = &cache.denom.data[static_cast<std::size_t>(p) * nc];
        const double* up = &upstream.data[static_cast<std::size_t>(p) * nc];
        double* g = &din.data[static_cast<std::size_t>(p) * nc];
        for (int c = 0; c < nc; ++c) {
            // d out_c / d in_i = delta_ci * d_c^-b  -  2 a b in_c in_i d_c^-(b+1), i in window of c
            const double dcb = std::pow(d[c], -spec.rn_beta);
            g[c] += up[c] * dcb;
            const double common = up[c] * 2.0 * spec.rn_alpha * spec.rn_beta * in[c] *
                                  std::pow(d[c], -spec.rn_beta - 1.0);
            const int lo = c - half > 0 ? c - half : 0;
            const int hi = c + half < nc - 1 ? c + half : nc - 1;
            for (int i = lo; i <= hi; ++i) g[i] -= common * in[i];
        }
    }
    assert_finite(din, "response_norm_backward");
    return din;
}

Tensor fc_forward(const Tensor& input, const LayerParams& p, const LayerSpec& spec,
                  LayerCache* cache) {
    const int in_n = input.size();
    if (p.weights.shape.size() != 2 || p.weights.shape[1] != in_n || p.weights.shape[0] != spec.out)
        layer_error(spec, "weight shape " + p.weights.shape_str() +
                              " incompatible with input size " + std::to_string(in_n));
    Tensor out({spec.out});
    Tensor preact;
    if (spec.relu && cache) preact = Tensor({spec.out});
    for (int o = 0; o < spec.out; ++o) {
        const double* w = &p.weights.data[static_cast<std::size_t>(o) * in_n];
        double acc = p.biases[o];
        for (int i = 0; i < in_n; ++i) acc += w[i] * input.data[i];
        if (spec.relu) {
            if (cache) preact[o] = acc;
            out[o] = acc > 0.0 ? acc : 0.0;
        } else {
            out[o] = acc;
        }
    }
    if (cache) {
        cache->input = input;
        cache->preact = std::move(preact);
    }
    assert_finite(out, "fc_forward");
    return out;
}

Tensor fc_backward(const Tensor& upstream, LayerParams& p, const LayerSpec& spec,
                   const LayerCache& cache) {
    if (upstream.size() != spec.out) layer_error(spec, "upstream grad size != output size");
    const Tensor& input = cache.input;
    const int in_n = input.size();
    Tensor din(input.shape);
    for (int o = 0; o < spec.out; ++o) {
        double g = upstream[o];
        if (spec.relu && cache.preact[o] <= 0.0) continue;
        if (g == 0.0) continue;
        p.bias_grads[o] += g;
        double* wg = &p.weight_grads.data[static_cast<std::size_t>(o) * in_n];
        const double* w = &p.weights.data[static_cast<std::size_t>(o) * in_n];
        for (int i = 0; i < in_n; ++i) {
            wg[i] += g * input.data[i];
            din.data[i] += g * w[i];
        }
    }
    return din;
}

Tensor logistic_forward(const Tensor& input, LayerCache* cache) {
    Tensor out(input.shape);
    for (int i = 0; i < input.size(); ++i) {
        const double s = 1.0 / (1.0 + std::exp(-input[i]));
        // Saturated doubles would leave the open interval (0,1).
        out[i] = std::clamp(s, 1e-12, 1.0 - 1e-12);
    }
    if (cache) cache->preact = out;
    assert_finite(out, "logistic_forward");
    return out;
}

Tensor logistic_backward(const Tensor& upstream, const LayerCache& cache) {
    Tensor din(cache.preact.shape);
    for (int i = 0; i < din.size(); ++i) {
        const double s = cache.preact[i];
        din[i] = upstream[i] * s * (1.0 - s);
    }
    return din;
}

Tensor layer_forward(const LayerSpec& spec, const LayerParams& p, const Tensor& input,
                     LayerCache* cache) {
    switch (spec.kind) {
        case LayerKind::Conv: return conv_forward(input, p, spec, cache);
        case LayerKind::ResponseNorm: return response_norm_forward(input, spec, cache);
        case LayerKind::MaxPool: return maxpool_forward(input, spec, cache);
        case LayerKind::FullConn: return fc_forward(input, p, spec, cache);
        case LayerKind::LogisticOutput: return logistic_forward(input, cache);
    }
    layer_error(spec, "unknown kind");
}

Tensor layer_backward(const LayerSpec& spec, LayerParams& p, const Tensor& upstream,
                      const LayerCache& cache) {
    switch (spec.kind) {
        case LayerKind::Conv: return conv_backward(upstream, p, spec, cache);
        case LayerKind::ResponseNorm: return response_norm_backward(upstream, spec, cache);
        case LayerKind::MaxPool: return maxpool_backward(upstream, spec, cache);
        case LayerKind::FullConn: return fc_backward(upstream, p, spec, cache);
        case LayerKind::LogisticOutput: return logistic_backward(upstream, cache);
    }
    layer_error(spec, "unknown kind");
}

void sgd_step(LayerParams& p, double learning_rate, double momentum) {
    if (p.empty()) return;
    if (momentum > 0.0) {
        if (p.weight_vel.size() == 0) {
            p.weight_vel = Tensor(p.weights.shape);
            p.bias_vel = Tensor(p.biases.shape);
        }
        for (int i = 0; i < p.weights.size(); ++i) {
            p.weight_vel[i] = momentum * p.weight_vel[i] + p.weight_grads[i];
            p.weights[i] -= learning_rate * p.weight_vel[i];
        }
        for (int i = 0; i < p.biases.size(); ++i) {
            p.bias_vel[i] = momentum * p.bias_vel[i] + p.bias_grads[i];
            p.biases[i] -= learning_rate * p.bias_vel[i];
        }
    } else {
        for (int i = 0; i < p.weights.size(); ++i)
            p.weights[i] -= learning_rate * p.weight_grads[i];
        for (int i = 0; i < p.biases.size(); ++i) p.biases[i] -= learning_rate * p.bias_grads[i];
    }
    p.zero_grads();
}

}  // namespace objex
