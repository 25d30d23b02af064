#include "objex/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace objex {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format is little-endian; byte swapping not implemented");

namespace {

constexpr char kMagic[8] = {'O', 'B', 'J', 'E', 'X', 'C', 'K', '1'};

void write_u32(std::ofstream& f, uint32_t v) {
    f.write(reinterpret_cast<const char*>(&v), 4);
}

uint32_t read_u32(std::ifstream& f) {
    uint32_t v = 0;
    f.read(reinterpret_cast<char*>(&v), 4);
    return v;
}

void write_tensor(std::ofstream& f, const Tensor& t) {
    write_u32(f, static_cast<uint32_t>(t.shape.size()));
    for (int d : t.shape) write_u32(f, static_cast<uint32_t>(d));
    f.write(reinterpret_cast<const char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * sizeof(double)));
}

Tensor read_tensor(std::ifstream& f) {
    const uint32_t rank = read_u32(f);
    if (rank > 4) throw std::runtime_error("corrupt checkpoint: tensor rank > 4");
    std::vector<int> shape(rank);
    for (auto& d : shape) d = static_cast<int>(read_u32(f));
    Tensor t(shape);
    f.read(reinterpret_cast<char*>(t.data.data()),
           static_cast<std::streamsize>(t.data.size() * sizeof(double)));
    return t;
}

void write_net_params(std::ofstream& f, const Network& net) {
    for (const auto& p : net.params()) {
        if (p.empty()) continue;
        write_tensor(f, p.weights);
        write_tensor(f, p.biases);
    }
}

void read_net_params(std::ifstream& f, Network& net) {
    for (auto& p : net.params()) {
        if (p.empty()) continue;
        Tensor w = read_tensor(f);
        Tensor b = read_tensor(f);
        if (w.shape != p.weights.shape || b.shape != p.biases.shape)
            throw std::runtime_error("checkpoint tensor shapes do not match the network config");
        p.weights = std::move(w);
        p.biases = std::move(b);
    }
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write checkpoint: " + path);

    nlohmann::json meta;
    meta["config"] = nlohmann::json::parse(ck.config.to_json());
    meta["epoch"] = ck.epoch;
    meta["seed"] = ck.seed;
    if (!ck.extra_json.empty()) meta["train_state"] = nlohmann::json::parse(ck.extra_json);
    const std::string header = meta.dump();

    f.write(kMagic, sizeof(kMagic));
    write_u32(f, 1);  // format version
    write_u32(f, static_cast<uint32_t>(header.size()));
    f.write(header.data(), static_cast<std::streamsize>(header.size()));
    write_net_params(f, ck.loc);
    write_net_params(f, ck.seg);
    if (!f) throw std::runtime_error("failed writing checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open checkpoint: " + path);

    char magic[8];
    f.read(magic, sizeof(magic));
    if (!f || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw std::runtime_error("not an objex checkpoint: " + path);
    const uint32_t version = read_u32(f);
    if (version != 1)
        throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
    const uint32_t hlen = read_u32(f);
    std::string header(hlen, '\0');
    f.read(header.data(), hlen);

    nlohmann::json meta = nlohmann::json::parse(header);
    Checkpoint ck;
    ck.config = ModelConfig::from_json(meta.at("config").dump());
    ck.epoch = meta.value("epoch", 0);
    ck.seed = meta.value("seed", uint64_t{0});
    if (meta.contains("train_state")) ck.extra_json = meta["train_state"].dump();
    ck.loc = Network(ck.config.loc);
    ck.seg = Network(ck.config.seg);
    read_net_params(f, ck.loc);
    read_net_params(f, ck.seg);
    if (!f) throw std::runtime_error("truncated checkpoint: " + path);
    return ck;
}

}  // namespace objex
