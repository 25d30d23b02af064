#pragma once

#include <string>
#include <vector>

#include "objex/dataset.hpp"
#include "objex/network.hpp"

namespace objex {

struct SampleScore {
    std::string id;
    double precision = 0.0;
    double jaccard = 0.0;
    double time_ms = 0.0;
};

struct EvalResult {
    double precision = 0.0;  // mean over samples
    double jaccard = 0.0;
    double mean_time_ms = 0.0;
    std::vector<SampleScore> per_sample;
};

// Fraction of pixels labeled correctly as foreground or background
// (the paper calls this Precision; it is pixel accuracy).
double precision(const Mask& pred, const Mask& gt);

// Intersection-over-union of foreground sets. Both empty -> 1, exactly one
// empty -> 0.
double jaccard(const Mask& pred, const Mask& gt);

// Union-of-top-K protocol for ranked segment lists: for each sample, unions
// the top K masks for every K <= k_max and keeps the per-sample best score
// (independently for precision and jaccard). Aggregates are means of the
// per-sample bests.
EvalResult topk_union_eval(const std::vector<std::vector<Mask>>& ranked_segments,
                           const std::vector<Mask>& gt, int k_max);

// Runs extract over every sample, scoring the painted-back full mask against
// groundtruth. Writes results.csv and summary.txt when out_dir is non-empty.
EvalResult evaluate(const std::vector<Sample>& samples, const Network& loc, const Network& seg,
                    const ModelConfig& cfg, const std::string& out_dir = "", int threads = 1);

void write_eval_csv(const std::string& path, const EvalResult& r);

}  // namespace objex
