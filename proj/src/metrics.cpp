#include "objex/metrics.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "objex/pipeline.hpp"

namespace objex {

namespace {

void require_same_dims(const Mask& a, const Mask& b, const char* op) {
    if (a.h != b.h || a.w != b.w)
        throw std::runtime_error(std::string(op) + ": mask dimensions differ");
}

}  // namespace

double precision(const Mask& pred, const Mask& gt) {
    require_same_dims(pred, gt, "precision");
    std::size_t agree = 0;
    for (std::size_t i = 0; i < pred.v.size(); ++i) agree += pred.v[i] == gt.v[i];
    return static_cast<double>(agree) / static_cast<double>(pred.v.size());
}

double jaccard(const Mask& pred, const Mask& gt) {
    require_same_dims(pred, gt, "jaccard");
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < pred.v.size(); ++i) {
        inter += pred.v[i] && gt.v[i];
        uni += pred.v[i] || gt.v[i];
    }
    if (uni == 0) return 1.0;  // both empty
    return static_cast<double>(inter) / static_cast<double>(uni);
}

EvalResult topk_union_eval(const std::vector<std::vector<Mask>>& ranked_segments,
                           const std::vector<Mask>& gt, int k_max) {
    if (ranked_segments.size() != gt.size())
        throw std::runtime_error("topk_union_eval: segment list / groundtruth size mismatch");
    EvalResult r;
    for (std::size_t s = 0; s < gt.size(); ++s) {
        const auto& segs = ranked_segments[s];
        if (segs.empty()) throw std::runtime_error("topk_union_eval: sample has no segments");
        Mask u(gt[s].h, gt[s].w);
        SampleScore best;
        best.id = std::to_string(s);
        const int kk = std::min<int>(k_max, static_cast<int>(segs.size()));
        for (int k = 0; k < kk; ++k) {
            require_same_dims(segs[k], gt[s], "topk_union_eval");
            for (std::size_t i = 0; i < u.v.size(); ++i) u.v[i] = u.v[i] || segs[k].v[i];
            best.precision = std::max(best.precision, precision(u, gt[s]));
            best.jaccard = std::max(best.jaccard, jaccard(u, gt[s]));
        }
        r.per_sample.push_back(best);
        r.precision += best.precision;
        r.jaccard += best.jaccard;
    }
    r.precision /= static_cast<double>(gt.size());
    r.jaccard /= static_cast<double>(gt.size());
    return r;
}

EvalResult evaluate(const std::vector<Sample>& samples, const Network& loc, const Network& seg,
                    const ModelConfig& cfg, const std::string& out_dir, int threads) {
    if (samples.empty()) throw std::runtime_error("evaluate: empty dataset");
    EvalResult r;
    r.per_sample.resize(samples.size());

#pragma omp parallel for schedule(dynamic) num_threads(threads > 0 ? threads : 1)
    for (long i = 0; i < static_cast<long>(samples.size()); ++i) {
        const Sample& s = samples[i];
        const auto t0 = std::chrono::steady_clock::now();
        const Extraction e = extract(s.image, loc, seg, cfg);
        const auto t1 = std::chrono::steady_clock::now();
        SampleScore& sc = r.per_sample[i];
        sc.id = s.id;
        sc.precision = precision(e.full_mask, s.mask);
        sc.jaccard = jaccard(e.full_mask, s.mask);
        sc.time_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
    }

    for (const auto& sc : r.per_sample) {
        r.precision += sc.precision;
        r.jaccard += sc.jaccard;
        r.mean_time_ms += sc.time_ms;
    }
    r.precision /= static_cast<double>(samples.size());
    r.jaccard /= static_cast<double>(samples.size());
    r.mean_time_ms /= static_cast<double>(samples.size());

    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        write_eval_csv(out_dir + "/results.csv", r);
        std::ofstream sum(out_dir + "/summary.txt");
        char buf[256];
        std::snprintf(buf, sizeof(buf),
                      "samples %zu\nprecision %.6f\njaccard %.6f\nmean_time_ms %.3f\n",
                      samples.size(), r.precision, r.jaccard, r.mean_time_ms);
        sum << buf;
    }
    return r;
}

void write_eval_csv(const std::string& path, const EvalResult& r) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write " + path);
    f << "id,precision,jaccard,time_ms\n";
    char buf[256];
    for (const auto& s : r.per_sample) {
        std::snprintf(buf, sizeof(buf), "%s,%.9f,%.9f,%.3f\n", s.id.c_str(), s.precision,
                      s.jaccard, s.time_ms);
        f << buf;
    }
}

}  // namespace objex
