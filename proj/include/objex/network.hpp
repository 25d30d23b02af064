#pragma once

#include <string>
#include <vector>

#include "objex/layers.hpp"
#include "objex/rng.hpp"
#include "objex/tensor.hpp"

namespace objex {

struct NetworkConfig {
    std::string name;  // "loc" or "seg"
    std::vector<LayerSpec> layers;
    int in_h = 0, in_w = 0, in_c = 3;
    int out_len = 0;
    double init_sigma = 0.01;

    // Validates the layer chain end to end; returns the shape after every
    // layer (element 0 is the input shape). Throws naming the first bad layer.
    std::vector<std::vector<int>> infer_shapes() const;
};

// Joint model configuration: both nets plus the shared geometry constants.
struct ModelConfig {
    std::string profile;  // "paper" or "desk"
    double frame = 224.0;     // normalized coordinate range of the loc net
    int mask_side = 50;       // m: seg net emits an m x m mask
    double threshold = 0.5;   // strictly-greater binarization threshold
    double min_box_side = 10.0;
    NetworkConfig loc;
    NetworkConfig seg;

    static ModelConfig paper_profile();
    static ModelConfig desk_profile();
    static ModelConfig from_json_file(const std::string& path);
    void to_json_file(const std::string& path) const;
    std::string to_json() const;
    static ModelConfig from_json(const std::string& text);
};

class Network {
public:
    Network() = default;
    explicit Network(NetworkConfig cfg);

    void init(Rng& rng);

    const NetworkConfig& config() const { return cfg_; }
    std::vector<LayerParams>& params() { return params_; }
    const std::vector<LayerParams>& params() const { return params_; }

    // Forward pass; when `tape` is given, per-layer caches are recorded for a
    // later backward(). The tape is caller-owned, so concurrent forward calls
    // sharing these parameters are safe.
    Tensor forward(const Tensor& input, std::vector<LayerCache>* tape = nullptr) const;

    // Backpropagates `upstream` (dLoss/dOutput), accumulating parameter
    // gradients. Returns dLoss/dInput. With `skip_last`, upstream is taken as
    // the gradient at the input of the final layer (used to fuse
    // cross-entropy with the logistic output).
    Tensor backward(const Tensor& upstream, const std::vector<LayerCache>& tape,
                    bool skip_last = false);

    void zero_grads();
    bool grads_finite(std::string* bad_layer) const;

    // One SGD step; conv layers use conv_lr, everything else fc_lr.
    void step(double fc_lr, double conv_lr, double momentum = 0.0);

    std::size_t param_count() const;

private:
    NetworkConfig cfg_;
    std::vector<LayerParams> params_;
};

}  // namespace objex
