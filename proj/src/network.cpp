#include "objex/network.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace objex {

using nlohmann::json;

std::vector<std::vector<int>> NetworkConfig::infer_shapes() const {
    std::vector<std::vector<int>> shapes;
    shapes.push_back({in_h, in_w, in_c});
    for (const auto& spec : layers) shapes.push_back(infer_output_shape(spec, shapes.back()));
    const auto& last = shapes.back();
    if (static_cast<int>(Tensor::count(last)) != out_len)
        throw std::runtime_error("network '" + name + "': final shape has " +
                                 std::to_string(Tensor::count(last)) + " elements, expected " +
                                 std::to_string(out_len));
    return shapes;
}

Network::Network(NetworkConfig cfg) : cfg_(std::move(cfg)) {
    auto shapes = cfg_.infer_shapes();
    params_.reserve(cfg_.layers.size());
    for (std::size_t i = 0; i < cfg_.layers.size(); ++i)
        params_.push_back(make_params(cfg_.layers[i], shapes[i]));
}

void Network::init(Rng& rng) {
    for (auto& p : params_) init_params(p, rng, cfg_.init_sigma);
}

Tensor Network::forward(const Tensor& input, std::vector<LayerCache>* tape) const {
    if (input.shape != std::vector<int>{cfg_.in_h, cfg_.in_w, cfg_.in_c})
        throw std::runtime_error("network '" + cfg_.name + "': input shape " + input.shape_str() +
                                 " does not match configured input");
    if (tape) tape->assign(cfg_.layers.size(), LayerCache{});
    Tensor cur = input;
    for (std::size_t i = 0; i < cfg_.layers.size(); ++i)
        cur = layer_forward(cfg_.layers[i], params_[i], cur, tape ? &(*tape)[i] : nullptr);
    return cur;
}

Tensor Network::backward(const Tensor& upstream, const std::vector<LayerCache>& tape,
                         bool skip_last) {
    if (tape.size() != cfg_.layers.size())
        throw std::runtime_error("network '" + cfg_.name + "': backward without matching tape");
    Tensor grad = upstream;
    std::size_t start = cfg_.layers.size();
    if (skip_last && start > 0) --start;
    for (std::size_t i = start; i-- > 0;)
        grad = layer_backward(cfg_.layers[i], params_[i], grad, tape[i]);
    return grad;
}

void Network::zero_grads() {
    for (auto& p : params_) p.zero_grads();
}

bool Network::grads_finite(std::string* bad_layer) const {
    for (std::size_t i = 0; i < params_.size(); ++i) {
        if (params_[i].empty()) continue;
        if (!params_[i].weight_grads.all_finite() || !params_[i].bias_grads.all_finite()) {
            if (bad_layer) *bad_layer = cfg_.layers[i].name;
            return false;
        }
    }
    return true;
}

void Network::step(double fc_lr, double conv_lr, double momentum) {
    for (std::size_t i = 0; i < params_.size(); ++i) {
        if (params_[i].empty()) continue;
        sgd_step(params_[i], cfg_.layers[i].kind == LayerKind::Conv ? conv_lr : fc_lr, momentum);
    }
}

std::size_t Network::param_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.weights.data.size() + p.biases.data.size();
    return n;
}

// ---------------------------------------------------------------------------
// Profiles

ModelConfig ModelConfig::paper_profile() {
    ModelConfig m;
    m.profile = "paper";
    m.frame = 224.0;
    m.mask_side = 50;

    // Localization: five conv + three FC, 224x224x3 in, 4 coordinates out.
    NetworkConfig& l = m.loc;
    l.name = "loc";
    l.in_h = l.in_w = 224;
    l.in_c = 3;
    l.out_len = 4;
    l.layers = {
        LayerSpec::conv("loc_conv1", 96, 11, 11, 3, 4, 2),
        LayerSpec::response_norm("loc_rn1"),
        LayerSpec::maxpool("loc_mp1"),
        LayerSpec::conv("loc_conv2", 256, 5, 5, 96, 1, 2),
        LayerSpec::response_norm("loc_rn2"),
        LayerSpec::maxpool("loc_mp2"),
        LayerSpec::conv("loc_conv3", 384, 3, 3, 256, 1, 1),
        LayerSpec::conv("loc_conv4", 384, 3, 3, 384, 1, 1),
        LayerSpec::conv("loc_conv5", 256, 3, 3, 384, 1, 1),
        LayerSpec::maxpool("loc_mp5"),
        LayerSpec::full_conn("loc_fc6", 4096, true),
        LayerSpec::full_conn("loc_fc7", 4096, true),
        LayerSpec::full_conn("loc_fc8", 4),
    };

    // Segmentation: C(256,5x5x3)-RN-MP-C(384,3x3x256)-C(384,3x3x384)-
    // C(256,3x3x384)-MP-FC, 55x55x3 in, 50x50 logistic mask out.
    NetworkConfig& s = m.seg;
    s.name = "seg";
    s.in_h = s.in_w = 55;
    s.in_c = 3;
    s.out_len = 2500;
    s.layers = {
        LayerSpec::conv("seg_conv1", 256, 5, 5, 3, 1, 0),
        LayerSpec::response_norm("seg_rn1"),
        LayerSpec::maxpool("seg_mp1"),
        LayerSpec::conv("seg_conv2", 384, 3, 3, 256, 1, 1),
        LayerSpec::conv("seg_conv3", 384, 3, 3, 384, 1, 1),
        LayerSpec::conv("seg_conv4", 256, 3, 3, 384, 1, 1),
        LayerSpec::maxpool("seg_mp2"),
        LayerSpec::full_conn("seg_fc", 2500),
        LayerSpec::logistic("seg_out"),
    };
    return m;
}

ModelConfig ModelConfig::desk_profile() {
    ModelConfig m;
    m.profile = "desk";
    m.frame = 64.0;
    m.mask_side = 26;

    // Same layer kinds and ordering as the paper profile, shrunk until both
    // nets train in minutes on a CPU.
    NetworkConfig& l = m.loc;
    l.name = "loc";
    l.in_h = l.in_w = 64;
    l.in_c = 3;
    l.out_len = 4;
    l.init_sigma = -1.0;  // fan-in scaled
    l.layers = {
        LayerSpec::conv("loc_conv1", 16, 5, 5, 3, 2, 2),
        LayerSpec::response_norm("loc_rn1"),
        LayerSpec::maxpool("loc_mp1"),
        LayerSpec::conv("loc_conv2", 24, 3, 3, 16, 1, 1),
        LayerSpec::conv("loc_conv3", 32, 3, 3, 24, 1, 1),
        LayerSpec::full_conn("loc_fc1", 96, true),
        LayerSpec::full_conn("loc_fc2", 4),
    };

    NetworkConfig& s = m.seg;
    s.name = "seg";
    s.in_h = s.in_w = 31;
    s.in_c = 3;
    s.out_len = 26 * 26;
    s.init_sigma = -1.0;  // fan-in scaled
    s.layers = {
        LayerSpec::conv("seg_conv1", 16, 5, 5, 3, 1, 0),
        LayerSpec::response_norm("seg_rn1"),
        LayerSpec::maxpool("seg_mp1"),
        LayerSpec::conv("seg_conv2", 24, 3, 3, 16, 1, 1),
        LayerSpec::conv("seg_conv3", 24, 3, 3, 24, 1, 1),
        LayerSpec::conv("seg_conv4", 16, 3, 3, 24, 1, 1),
        LayerSpec::maxpool("seg_mp2"),
        LayerSpec::full_conn("seg_fc", 26 * 26),
        LayerSpec::logistic("seg_out"),
    };
    return m;
}

// ---------------------------------------------------------------------------
// JSON round-trip

namespace {

json spec_to_json(const LayerSpec& s) {
    json j;
    j["kind"] = layer_kind_name(s.kind);
    j["name"] = s.name;
    switch (s.kind) {
        case LayerKind::Conv:
            j["kernels"] = s.kernels;
            j["size"] = {s.kh, s.kw, s.kc};
            j["stride"] = s.stride;
            j["pad"] = s.pad;
            j["relu"] = s.relu;
            break;
        case LayerKind::FullConn:
            j["out"] = s.out;
            j["relu"] = s.relu;
            break;
        case LayerKind::MaxPool:
            j["pool"] = s.pool;
            j["stride"] = s.pool_stride;
            break;
        case LayerKind::ResponseNorm:
            j["k"] = s.rn_k;
            j["n"] = s.rn_n;
            j["alpha"] = s.rn_alpha;
            j["beta"] = s.rn_beta;
            break;
        case LayerKind::LogisticOutput:
            break;
    }
    return j;
}

LayerSpec spec_from_json(const json& j) {
    const std::string kind = j.at("kind");
    const std::string name = j.value("name", "");
    if (kind == "conv") {
        auto sz = j.at("size");
        return LayerSpec::conv(name, j.at("kernels"), sz.at(0), sz.at(1), sz.at(2),
                               j.value("stride", 1), j.value("pad", 0), j.value("relu", true));
    }
    if (kind == "full_conn") return LayerSpec::full_conn(name, j.at("out"), j.value("relu", false));
    if (kind == "maxpool") {
        LayerSpec s = LayerSpec::maxpool(name);
        s.pool = j.value("pool", 3);
        s.pool_stride = j.value("stride", 2);
        return s;
    }
    if (kind == "response_norm") {
        LayerSpec s = LayerSpec::response_norm(name);
        s.rn_k = j.value("k", 2.0);
        s.rn_n = j.value("n", 5);
        s.rn_alpha = j.value("alpha", 1e-4);
        s.rn_beta = j.value("beta", 0.75);
        return s;
    }
    if (kind == "logistic") return LayerSpec::logistic(name);
    throw std::runtime_error("unknown layer kind in config: " + kind);
}

json net_to_json(const NetworkConfig& n) {
    json j;
    j["name"] = n.name;
    j["input"] = {n.in_h, n.in_w, n.in_c};
    j["output_len"] = n.out_len;
    j["init_sigma"] = n.init_sigma;
    j["layers"] = json::array();
    for (const auto& s : n.layers) j["layers"].push_back(spec_to_json(s));
    return j;
}

NetworkConfig net_from_json(const json& j) {
    NetworkConfig n;
    n.name = j.value("name", "");
    auto in = j.at("input");
    n.in_h = in.at(0);
    n.in_w = in.at(1);
    n.in_c = in.at(2);
    n.out_len = j.at("output_len");
    n.init_sigma = j.value("init_sigma", 0.01);
    for (const auto& l : j.at("layers")) n.layers.push_back(spec_from_json(l));
    return n;
}

}  // namespace

std::string ModelConfig::to_json() const {
    json j;
    j["profile"] = profile;
    j["frame"] = frame;
    j["mask_side"] = mask_side;
    j["threshold"] = threshold;
    j["min_box_side"] = min_box_side;
    j["loc"] = net_to_json(loc);
    j["seg"] = net_to_json(seg);
    return j.dump(2);
}

ModelConfig ModelConfig::from_json(const std::string& text) {
    json j = json::parse(text);
    ModelConfig m;
    m.profile = j.value("profile", "custom");
    m.frame = j.at("frame");
    m.mask_side = j.at("mask_side");
    m.threshold = j.value("threshold", 0.5);
    m.min_box_side = j.value("min_box_side", 10.0);
    m.loc = net_from_json(j.at("loc"));
    m.seg = net_from_json(j.at("seg"));
    return m;
}

ModelConfig ModelConfig::from_json_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open network config: " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return from_json(ss.str());
}

void ModelConfig::to_json_file(const std::string& path) const {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write network config: " + path);
    f << to_json() << "\n";
}

}  // namespace objex
