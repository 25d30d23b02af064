#pragma once

#include <string>

#include "objex/network.hpp"

namespace objex {

// Joint model checkpoint: both networks' parameters plus the ModelConfig
// needed to rebuild them. Single file, versioned header, little-endian
// doubles, shape manifest per tensor.
struct Checkpoint {
    ModelConfig config;
    Network loc;
    Network seg;
    int epoch = 0;
    uint64_t seed = 0;
    std::string extra_json;  // optional trainer state (latent adjustments, history)
};

void save_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace objex
