#pragma once

#include <array>
#include <string>
#include <vector>

#include "objex/rng.hpp"
#include "objex/tensor.hpp"

namespace objex {

enum class LayerKind { Conv, ResponseNorm, MaxPool, FullConn, LogisticOutput };

const char* layer_kind_name(LayerKind k);

struct LayerSpec {
    LayerKind kind = LayerKind::Conv;
    std::string name;

    // Conv
    int kernels = 0;
    int kh = 0, kw = 0, kc = 0;
    int stride = 1;
    int pad = 0;

    // Conv / FullConn
    bool relu = false;

    // MaxPool (3x3 window, stride 2 by default)
    int pool = 3;
    int pool_stride = 2;

    // ResponseNorm, cross-channel scheme
    double rn_k = 2.0;
    int rn_n = 5;
    double rn_alpha = 1e-4;
    double rn_beta = 0.75;

    // FullConn
    int out = 0;

    static LayerSpec conv(std::string name, int kernels, int kh, int kw, int kc,
                          int stride = 1, int pad = 0, bool relu = true);
    static LayerSpec response_norm(std::string name);
    static LayerSpec maxpool(std::string name);
    static LayerSpec full_conn(std::string name, int out, bool relu = false);
    static LayerSpec logistic(std::string name);
};

struct LayerParams {
    Tensor weights;
    Tensor biases;
    Tensor weight_grads;
    Tensor bias_grads;
    Tensor weight_vel;  // momentum state, allocated on first use
    Tensor bias_vel;

    bool empty() const { return weights.size() == 0 && biases.size() == 0; }
    void zero_grads();
};

// Per-call state recorded by a forward pass and consumed by the matching
// backward pass. Owned by the caller, so shared parameters stay read-only
// during concurrent inference.
struct LayerCache {
    Tensor input;
    Tensor preact;            // pre-ReLU values (Conv/FullConn) or outputs (Logistic)
    std::vector<int> argmax;  // MaxPool routing, flat input index per output element
    Tensor denom;             // ResponseNorm per-element normalizer
};

// Allocates parameter tensors for a spec given its input shape; throws on
// incompatible shapes, naming the layer.
LayerParams make_params(const LayerSpec& spec, const std::vector<int>& in_shape);

// sigma < 0 selects fan-in scaling: sqrt(2 / fan_in) per layer.
void init_params(LayerParams& p, Rng& rng, double sigma);

std::vector<int> infer_output_shape(const LayerSpec& spec, const std::vector<int>& in_shape);

Tensor conv_forward(const Tensor& input, const LayerParams& p, const LayerSpec& spec,
                    LayerCache* cache = nullptr);
Tensor conv_backward(const Tensor& upstream, LayerParams& p, const LayerSpec& spec,
                     const LayerCache& cache);

Tensor maxpool_forward(const Tensor& input, const LayerSpec& spec, LayerCache* cache = nullptr);
Tensor maxpool_backward(const Tensor& upstream, const LayerSpec& spec, const LayerCache& cache);

Tensor response_norm_forward(const Tensor& input, const LayerSpec& spec,
                             LayerCache* cache = nullptr);
Tensor response_norm_backward(const Tensor& upstream, const LayerSpec& spec,
                              const LayerCache& cache);

Tensor fc_forward(const Tensor& input, const LayerParams& p, const LayerSpec& spec,
                  LayerCache* cache = nullptr);
Tensor fc_backward(const Tensor& upstream, LayerParams& p, const LayerSpec& spec,
                   const LayerCache& cache);

Tensor logistic_forward(const Tensor& input, LayerCache* cache = nullptr);
Tensor logistic_backward(const Tensor& upstream, const LayerCache& cache);

// Dispatch over kinds. Parameterless layers ignore `p`.
Tensor layer_forward(const LayerSpec& spec, const LayerParams& p, const Tensor& input,
                     LayerCache* cache = nullptr);
Tensor layer_backward(const LayerSpec& spec, LayerParams& p, const Tensor& upstream,
                      const LayerCache& cache);

// w <- w - lr * grad, then grads are zeroed. With momentum > 0 a velocity
// buffer accumulates: v <- momentum * v + grad, w <- w - lr * v (config hook,
// off by default).
void sgd_step(LayerParams& p, double learning_rate, double momentum = 0.0);

}  // namespace objex
