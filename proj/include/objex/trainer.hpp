#pragma once

#include <string>
#include <vector>

#include "objex/dataset.hpp"
#include "objex/network.hpp"
#include "objex/sampler.hpp"

namespace objex {

enum class LatentMode { Mcmc, Enumerate, Zero };

const char* latent_mode_name(LatentMode m);
LatentMode latent_mode_from_name(const std::string& s);

struct TrainConfig {
    double eps1 = 1e-6;   // segmentation lr, all layers
    double eps2 = 1e-8;   // localization FC lr; conv layers get eps2 / 100
    double momentum = 0.0;  // plain SGD by default
    int k_moves = 20;     // K
    int epochs = 30;
    int batch_size = 16;
    uint64_t seed = 0;
    LatentMode latent_mode = LatentMode::Mcmc;
    int threads = 1;

    int m_passes = 1;              // M-step passes per E-step
    int warmup_epochs = 0;         // epochs trained at dl = 0 before sampling starts
                                   // (stand-in for the pretrained localization net)
    bool warm_start = true;        // chain starts at last epoch's adjustment
    bool shared_stats = false;     // mu/sigma pooled across samples
    bool per_batch_alternation = false;
    int slic_segments = 200;
    double slic_compactness = 10.0;
    int pc_samples = 200;          // c
    double early_stop_rel = 1e-4;
    int early_stop_window = 5;
    int checkpoint_every = 1;      // epoch-numbered checkpoints; 0 = only last/final
    bool dump_chains = false;
    std::string out_dir;
    std::string cache_dir;   // superpixel cache; defaults to <out_dir>/spx_cache
    std::string resume_path; // continue from a checkpoint written by em_train
};

struct CostReport {
    double total = 0.0;
    double loc_term = 0.0;
    double seg_term = 0.0;
};

struct EpochRecord {
    int epoch = 0;
    CostReport cost;
    double wall_seconds = 0.0;
};

struct TrainResult {
    Network loc;
    Network seg;
    std::vector<EpochRecord> history;
    std::vector<LatentAdjustment> adjustments;  // final per-sample latent state
};

// Eq.-style joint cost: mean over samples of the squared localization
// residual plus the segmentation cross-entropy at the adjusted box.
CostReport joint_cost(const std::vector<Sample>& samples,
                      const std::vector<LatentAdjustment>& adjustments, const Network& loc,
                      const Network& seg, const ModelConfig& cfg, int threads = 1);

// One minibatch-SGD pass over the dataset with fixed adjustments; returns the
// post-update cost. `order` gives the sample visit order.
CostReport m_step(const std::vector<Sample>& samples,
                  const std::vector<LatentAdjustment>& adjustments, Network& loc, Network& seg,
                  const ModelConfig& cfg, const TrainConfig& tc, const std::vector<int>& order);

TrainResult em_train(const std::vector<Sample>& samples, const ModelConfig& cfg,
                     const TrainConfig& tc);

}  // namespace objex
