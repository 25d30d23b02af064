#include "objex/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

namespace objex {

namespace {

double rel_err(double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1.0});
}

Tensor random_tensor(std::vector<int> shape, Rng& rng, double scale = 1.0) {
    Tensor t(std::move(shape));
    for (auto& v : t.data) v = scale * (rng.uniform() * 2.0 - 1.0);
    return t;
}

// Scalar objective: random fixed projection of the layer output.
struct Probe {
    Tensor coeffs;
    double operator()(const Tensor& out) const {
        double s = 0.0;
        for (int i = 0; i < out.size(); ++i) s += coeffs[i] * out[i];
        return s;
    }
};

// FD kinks: ReLU preactivations within fd reach of zero, or near-tied pool
// windows, break the central-difference oracle. Inputs are redrawn until the
// forward pass is locally smooth.
bool relu_safe(const Tensor& preact, double margin) {
    for (double v : preact.data)
        if (std::abs(v) < margin) return false;
    return true;
}

bool pool_safe(const Tensor& in, const LayerSpec& spec, double margin) {
    const auto out_shape = infer_output_shape(spec, in.shape);
    const int iw = in.shape[1], ic = in.shape[2];
    for (int y = 0; y < out_shape[0]; ++y)
        for (int x = 0; x < out_shape[1]; ++x)
            for (int c = 0; c < ic; ++c) {
                double top = -1e30, second = -1e30;
                for (int py = 0; py < spec.pool; ++py)
                    for (int px = 0; px < spec.pool; ++px) {
                        const double v =
                            in.data[((y * spec.pool_stride + py) * iw + x * spec.pool_stride + px) *
                                        ic +
                                    c];
                        if (v > top) {
                            second = top;
                            top = v;
                        } else if (v > second) {
                            second = v;
                        }
                    }
                if (top - second < margin) return false;
            }
    return true;
}

struct CaseResult {
    double max_rel = 0.0;
};

// One configuration: compares d probe / d theta for every parameter and every
// input element.
CaseResult check_case(const LayerSpec& spec, LayerParams params, Tensor input, Rng& rng,
                      double fd_eps, double bias) {
    const auto out_shape = infer_output_shape(spec, input.shape);
    Probe probe{random_tensor({static_cast<int>(Tensor::count(out_shape))}, rng)};

    auto forward = [&](const Tensor& in, const LayerParams& p) {
        return layer_forward(spec, p, in, nullptr);
    };

    // Analytic pass.
    LayerCache cache;
    const Tensor out = layer_forward(spec, params, input, &cache);
    Tensor upstream(out.shape);
    for (int i = 0; i < out.size(); ++i) upstream[i] = probe.coeffs[i];
    params.zero_grads();
    const Tensor din = layer_backward(spec, params, upstream, cache);

    CaseResult res;
    auto compare = [&](double analytic, std::function<void(double)> set, double base) {
        set(base + fd_eps);
        const double jp = probe(forward(input, params));
        set(base - fd_eps);
        const double jm = probe(forward(input, params));
        set(base);
        const double fd = (jp - jm) / (2.0 * fd_eps);
        res.max_rel = std::max(res.max_rel, rel_err(analytic + bias, fd));
    };

    for (int i = 0; i < params.weights.size(); ++i)
        compare(params.weight_grads[i], [&](double v) { params.weights[i] = v; },
                params.weights[i]);
    for (int i = 0; i < params.biases.size(); ++i)
        compare(params.bias_grads[i], [&](double v) { params.biases[i] = v; }, params.biases[i]);
    for (int i = 0; i < input.size(); ++i)
        compare(din[i], [&](double v) { input[i] = v; }, input[i]);
    return res;
}

LayerSpec random_spec(LayerKind kind, Rng& rng, std::vector<int>* in_shape) {
    switch (kind) {
        case LayerKind::Conv: {
            const int ic = 1 + static_cast<int>(rng.uniform_int(3));
            const int ih = 3 + static_cast<int>(rng.uniform_int(4));
            const int iw = 3 + static_cast<int>(rng.uniform_int(4));
            const int k = 1 + static_cast<int>(rng.uniform_int(3));
            const int kh = 1 + static_cast<int>(rng.uniform_int(3));
            const int kw = 1 + static_cast<int>(rng.uniform_int(3));
            const int stride = 1 + static_cast<int>(rng.uniform_int(2));
            const int pad = static_cast<int>(rng.uniform_int(2));
            *in_shape = {ih, iw, ic};
            return LayerSpec::conv("gc_conv", k, kh, kw, ic, stride, pad,
                                   rng.uniform() < 0.5);
        }
        case LayerKind::ResponseNorm: {
            const int ic = 1 + static_cast<int>(rng.uniform_int(8));
            *in_shape = {2 + static_cast<int>(rng.uniform_int(3)),
                         2 + static_cast<int>(rng.uniform_int(3)), ic};
            return LayerSpec::response_norm("gc_rn");
        }
        case LayerKind::MaxPool: {
            *in_shape = {3 + static_cast<int>(rng.uniform_int(5)),
                         3 + static_cast<int>(rng.uniform_int(5)),
                         1 + static_cast<int>(rng.uniform_int(3))};
            return LayerSpec::maxpool("gc_mp");
        }
        case LayerKind::FullConn: {
            const int in = 4 + static_cast<int>(rng.uniform_int(9));
            *in_shape = {in};
            return LayerSpec::full_conn("gc_fc", 1 + static_cast<int>(rng.uniform_int(6)),
                                        rng.uniform() < 0.5);
        }
        case LayerKind::LogisticOutput:
            *in_shape = {2 + static_cast<int>(rng.uniform_int(12))};
            return LayerSpec::logistic("gc_logit");
    }
    throw std::runtime_error("unreachable");
}

}  // namespace

std::vector<GradCheckReport> run_gradcheck(uint64_t seed, int configs_per_kind, double fd_eps,
                                           double tol, std::optional<LayerKind> corrupt) {
    const LayerKind kinds[] = {LayerKind::Conv, LayerKind::ResponseNorm, LayerKind::MaxPool,
                               LayerKind::FullConn, LayerKind::LogisticOutput};
    std::vector<GradCheckReport> reports;
    Rng rng(seed, "gradcheck");

    for (LayerKind kind : kinds) {
        GradCheckReport rep;
        rep.kind = kind;
        const double bias = (corrupt && *corrupt == kind) ? 0.5 : 0.0;
        for (int c = 0; c < configs_per_kind; ++c) {
            std::vector<int> in_shape;
            LayerSpec spec;
            LayerParams params;
            Tensor input;
            // Redraw until the forward pass is smooth around the probe point.
            for (int attempt = 0; attempt < 500; ++attempt) {
                spec = random_spec(kind, rng, &in_shape);
                params = make_params(spec, in_shape);
                for (auto& v : params.weights.data) v = rng.uniform() * 2.0 - 1.0;
                for (auto& v : params.biases.data) v = rng.uniform() * 0.5 - 0.25;
                input = random_tensor(in_shape, rng);
                if (kind == LayerKind::MaxPool && !pool_safe(input, spec, 1e-3)) continue;
                if (spec.relu) {
                    LayerCache cache;
                    layer_forward(spec, params, input, &cache);
                    if (!relu_safe(cache.preact, 1e-3)) continue;
                }
                break;
            }
            const CaseResult r = check_case(spec, std::move(params), std::move(input), rng,
                                            fd_eps, bias);
            rep.max_rel_err = std::max(rep.max_rel_err, r.max_rel);
            ++rep.configs;
        }
        rep.passed = rep.max_rel_err < tol;
        reports.push_back(rep);
    }
    return reports;
}

bool all_passed(const std::vector<GradCheckReport>& reports) {
    for (const auto& r : reports)
        if (!r.passed) return false;
    return true;
}

}  // namespace objex
