#include "objex/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "objex/checkpoint.hpp"
#include "objex/pipeline.hpp"

namespace fs = std::filesystem;

namespace objex {

namespace {

constexpr double kProbEps = 1e-7;

// Cost contribution of one sample at a fixed adjustment; optionally
// accumulates gradients for both networks, scaled by `grad_scale`.
ScoreParts sample_cost(const Sample& s, const LatentAdjustment& a, Network& loc, Network& seg,
                       const ModelConfig& cfg, double grad_scale, bool with_grads,
                       const std::string& sample_id_for_errors = "") {
    ScoreParts parts;
    const Box tight = s.tight_box(cfg.frame);
    const double target[4] = {tight.x1 + a.dl[0], tight.y1 + a.dl[1], tight.x2 + a.dl[2],
                              tight.y2 + a.dl[3]};

    std::vector<LayerCache> loc_tape, seg_tape;
    const Tensor loc_in = image_to_tensor(s.image, loc.config().in_h, loc.config().in_w);
    const Tensor loc_out = loc.forward(loc_in, with_grads ? &loc_tape : nullptr);
    for (int k = 0; k < 4; ++k) {
        const double d = loc_out[k] - target[k];
        parts.loc_residual += d * d;
    }

    const Box adj = clamp_box({target[0], target[1], target[2], target[3]}, cfg.frame,
                              cfg.min_box_side);
    const CropResult cr = crop_resize(s.image, adj, cfg);
    const Mask tgt = target_mask(s.mask, cr.px_box, cfg.mask_side);
    const Tensor seg_in = image_to_tensor(cr.crop, cr.crop.h, cr.crop.w);
    const Tensor p = seg.forward(seg_in, with_grads ? &seg_tape : nullptr);

    for (int j = 0; j < p.size(); ++j) {
        const double pj = std::clamp(p[j], kProbEps, 1.0 - kProbEps);
        parts.seg_ce -= tgt.v[j] ? std::log(pj) : std::log(1.0 - pj);
    }

    if (with_grads) {
        Tensor dloc({4});
        for (int k = 0; k < 4; ++k) dloc[k] = 2.0 * (loc_out[k] - target[k]) * grad_scale;
        loc.backward(dloc, loc_tape);

        // Cross-entropy through the logistic output collapses to p - y, fed
        // below the output layer.
        Tensor dz(p.shape);
        for (int j = 0; j < p.size(); ++j)
            dz[j] = (p[j] - static_cast<double>(tgt.v[j])) * grad_scale;
        seg.backward(dz, seg_tape, /*skip_last=*/true);

        std::string bad;
        if (!loc.grads_finite(&bad) || !seg.grads_finite(&bad))
            throw std::runtime_error("NaN gradient in layer '" + bad + "' at sample '" +
                                     sample_id_for_errors + "'");
    }
    return parts;
}

std::vector<int> shuffled_order(std::size_t n, uint64_t seed, int epoch) {
    std::vector<int> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = static_cast<int>(i);
    Rng rng(seed, "order/" + std::to_string(epoch));
    for (std::size_t i = n; i > 1; --i) {
        const std::size_t j = rng.uniform_int(i);
        std::swap(order[i - 1], order[j]);
    }
    return order;
}

Rng chain_rng(uint64_t seed, int epoch, int sample_idx) {
    // Per-sample stream: schedule-independent under parallel E-steps.
    return Rng(Rng::mix(seed ^ Rng::fnv1a("chain")) ^
               Rng::mix((static_cast<uint64_t>(epoch) << 32) | static_cast<uint64_t>(sample_idx)));
}

}  // namespace

const char* latent_mode_name(LatentMode m) {
    switch (m) {
        case LatentMode::Mcmc: return "mcmc";
        case LatentMode::Enumerate: return "enumerate";
        case LatentMode::Zero: return "zero";
    }
    return "?";
}

LatentMode latent_mode_from_name(const std::string& s) {
    if (s == "mcmc") return LatentMode::Mcmc;
    if (s == "enumerate") return LatentMode::Enumerate;
    if (s == "zero") return LatentMode::Zero;
    throw std::runtime_error("unknown latent mode: " + s + " (expected mcmc|enumerate|zero)");
}

CostReport joint_cost(const std::vector<Sample>& samples,
                      const std::vector<LatentAdjustment>& adjustments, const Network& loc,
                      const Network& seg, const ModelConfig& cfg, int threads) {
    if (samples.empty()) throw std::runtime_error("joint_cost: empty dataset");
    if (adjustments.size() != samples.size())
        throw std::runtime_error("joint_cost: one adjustment per sample required");

    std::vector<ScoreParts> parts(samples.size());
#pragma omp parallel for schedule(dynamic) num_threads(threads > 0 ? threads : 1)
    for (long i = 0; i < static_cast<long>(samples.size()); ++i) {
        // Forward-only; const_cast is confined to the no-grad path.
        parts[i] = sample_cost(samples[i], adjustments[i], const_cast<Network&>(loc),
                               const_cast<Network&>(seg), cfg, 0.0, false);
    }
    CostReport r;
    for (const auto& p : parts) {
        r.loc_term += p.loc_residual;
        r.seg_term += p.seg_ce;
    }
    const double n = static_cast<double>(samples.size());
    r.loc_term /= n;
    r.seg_term /= n;
    r.total = r.loc_term + r.seg_term;
    return r;
}

CostReport m_step(const std::vector<Sample>& samples,
                  const std::vector<LatentAdjustment>& adjustments, Network& loc, Network& seg,
                  const ModelConfig& cfg, const TrainConfig& tc, const std::vector<int>& order) {
    if (samples.empty()) throw std::runtime_error("m_step: empty dataset");
    for (std::size_t b = 0; b < order.size(); b += tc.batch_size) {
        const std::size_t end = std::min(order.size(), b + tc.batch_size);
        const double scale = 1.0 / static_cast<double>(end - b);
        loc.zero_grads();
        seg.zero_grads();
        for (std::size_t k = b; k < end; ++k) {
            const int i = order[k];
            sample_cost(samples[i], adjustments[i], loc, seg, cfg, scale, true, samples[i].id);
        }
        seg.step(tc.eps1, tc.eps1, tc.momentum);
        loc.step(tc.eps2, tc.eps2 / 100.0, tc.momentum);
    }
    return joint_cost(samples, adjustments, loc, seg, cfg, tc.threads);
}

TrainResult em_train(const std::vector<Sample>& samples, const ModelConfig& cfg,
                     const TrainConfig& tc) {
    if (samples.empty()) throw std::runtime_error("em_train: empty dataset");
    const std::size_t n = samples.size();

    if (!tc.out_dir.empty()) fs::create_directories(tc.out_dir);
    const std::string cache_dir =
        !tc.cache_dir.empty() ? tc.cache_dir
                              : (tc.out_dir.empty() ? std::string("spx_cache")
                                                    : tc.out_dir + "/spx_cache");

    TrainResult res;
    res.loc = Network(cfg.loc);
    res.seg = Network(cfg.seg);
    {
        Rng r_loc(tc.seed, "init_loc");
        Rng r_seg(tc.seed, "init_seg");
        res.loc.init(r_loc);
        res.seg.init(r_seg);
    }
    res.adjustments.assign(n, LatentAdjustment{});
    std::vector<ProposalStats> stats(tc.shared_stats ? 1 : n);
    int start_epoch = 1;

    // The seg net's output layer must be logistic for the fused backward.
    if (cfg.seg.layers.empty() || cfg.seg.layers.back().kind != LayerKind::LogisticOutput)
        throw std::runtime_error("segmentation network must end in a logistic output layer");

    if (!tc.resume_path.empty()) {
        Checkpoint ck = load_checkpoint(tc.resume_path);
        res.loc = std::move(ck.loc);
        res.seg = std::move(ck.seg);
        start_epoch = ck.epoch + 1;
        if (!ck.extra_json.empty()) {
            const auto st = nlohmann::json::parse(ck.extra_json);
            const auto& adj = st.at("adjustments");
            if (adj.size() == n)
                for (std::size_t i = 0; i < n; ++i)
                    for (int k = 0; k < 4; ++k) res.adjustments[i].dl[k] = adj[i][k];
            if (st.contains("history")) {
                const auto& hist = st.at("history");
                for (std::size_t s = 0; s < stats.size() && s < hist.size(); ++s) {
                    ProposalStats ps;
                    for (const auto& h : hist[s]) {
                        LatentAdjustment a;
                        for (int k = 0; k < 4; ++k) a.dl[k] = h[k];
                        ps.add(a);
                    }
                    stats[s] = std::move(ps);
                }
            }
        }
    }

    // P_c over the lattice, cached per sample; only the MCMC proposal needs
    // the superpixel pre-processing.
    std::vector<std::array<double, kLatticeSize>> pc;
    if (tc.latent_mode == LatentMode::Mcmc) {
        pc.resize(n);
#pragma omp parallel for schedule(dynamic) num_threads(tc.threads > 0 ? tc.threads : 1)
        for (long i = 0; i < static_cast<long>(n); ++i) {
            const std::string key =
                superpixel_cache_key(samples[i].image, tc.slic_segments, tc.slic_compactness);
            SuperpixelMap map;
            if (!load_cached_superpixels(cache_dir, key, &map)) {
                map = slic(samples[i].image, tc.slic_segments, tc.slic_compactness);
                store_cached_superpixels(cache_dir, key, map);
            }
            pc[i] = boundary_term(map, samples[i], cfg, tc.pc_samples);
        }
    }

    const std::string costs_path = tc.out_dir.empty() ? "" : tc.out_dir + "/costs.csv";
    std::ofstream costs;
    if (!costs_path.empty()) {
        costs.open(costs_path, start_epoch > 1 ? std::ios::app : std::ios::out);
        if (start_epoch == 1) costs << "epoch,total,loc_term,seg_term,wall_seconds\n";
    }
    auto emit = [&](const EpochRecord& rec) {
        res.history.push_back(rec);
        if (costs.is_open()) {
            char buf[256];
            std::snprintf(buf, sizeof(buf), "%d,%.12g,%.12g,%.12g,%.3f\n", rec.epoch,
                          rec.cost.total, rec.cost.loc_term, rec.cost.seg_term, rec.wall_seconds);
            costs << buf;
            costs.flush();
        }
    };

    auto save = [&](const std::string& name, int epoch) {
        if (tc.out_dir.empty()) return;
        Checkpoint ck;
        ck.config = cfg;
        ck.loc = res.loc;
        ck.seg = res.seg;
        ck.epoch = epoch;
        ck.seed = tc.seed;
        nlohmann::json st;
        st["adjustments"] = nlohmann::json::array();
        for (const auto& a : res.adjustments) st["adjustments"].push_back(a.dl);
        st["history"] = nlohmann::json::array();
        for (const auto& s : stats) st["history"].push_back(s.history);
        ck.extra_json = st.dump();
        save_checkpoint(tc.out_dir + "/" + name, ck);
    };

    if (start_epoch == 1) {
        EpochRecord rec;
        rec.epoch = 0;
        rec.cost = joint_cost(samples, res.adjustments, res.loc, res.seg, cfg, tc.threads);
        rec.wall_seconds = 0.0;
        emit(rec);
        save("last.ckpt", 0);
    }

    auto e_step_one = [&](int epoch, int i) {
        ProposalStats& st = stats[tc.shared_stats ? 0 : i];
        if (tc.latent_mode == LatentMode::Enumerate) {
            res.adjustments[i] = enumerate_best(samples[i], res.loc, res.seg, cfg);
            return;
        }
        Rng rng = chain_rng(tc.seed, epoch, i);
        const LatentAdjustment init = tc.warm_start ? res.adjustments[i] : LatentAdjustment{};
        const LatentAdjustment prev = res.adjustments[i];
        double best_lp = 0.0;
        std::vector<ChainMove> trace;
        LatentAdjustment chosen =
            run_chain(samples[i], st, pc[i], res.loc, res.seg, cfg, tc.k_moves, rng, init,
                      tc.dump_chains ? &trace : nullptr, &best_lp);
        if (!tc.warm_start && !(prev == chosen)) {
            // Cold-start chains must still never lose ground epoch to epoch.
            const double prev_lp = log_invariant(samples[i], prev, res.loc, res.seg, cfg);
            if (prev_lp > best_lp) chosen = prev;
        }
        res.adjustments[i] = chosen;
        if (tc.dump_chains && !tc.out_dir.empty()) {
            char fname[64];
            std::snprintf(fname, sizeof(fname), "%s/chains_epoch_%04d.csv", tc.out_dir.c_str(),
                          epoch);
#pragma omp critical(objex_chain_dump)
            {
                std::ofstream f(fname, std::ios::app);
                for (const auto& mv : trace)
                    f << samples[i].id << "," << mv.move << "," << mv.proposal.dl[0] << ","
                      << mv.proposal.dl[1] << "," << mv.proposal.dl[2] << "," << mv.proposal.dl[3]
                      << "," << mv.proposal_log_pi << "," << (mv.accepted ? 1 : 0) << ","
                      << mv.best_log_pi << "\n";
            }
        }
    };

    int last_epoch = start_epoch - 1;
    for (int epoch = start_epoch; epoch <= tc.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        const std::vector<int> order = shuffled_order(n, tc.seed, epoch);

        CostReport epoch_cost;
        bool have_cost = false;
        const bool sampling_on =
            tc.latent_mode != LatentMode::Zero && epoch > tc.warmup_epochs;
        if (tc.per_batch_alternation) {
            for (std::size_t b = 0; b < order.size(); b += tc.batch_size) {
                const std::size_t end = std::min(order.size(), b + tc.batch_size);
                if (sampling_on) {
                    if (tc.shared_stats) {
                        for (std::size_t k = b; k < end; ++k) e_step_one(epoch, order[k]);
                    } else {
#pragma omp parallel for schedule(dynamic) num_threads(tc.threads > 0 ? tc.threads : 1)
                        for (long k = static_cast<long>(b); k < static_cast<long>(end); ++k)
                            e_step_one(epoch, order[k]);
                    }
                }
                const double scale = 1.0 / static_cast<double>(end - b);
                res.loc.zero_grads();
                res.seg.zero_grads();
                for (std::size_t k = b; k < end; ++k) {
                    const int i = order[k];
                    sample_cost(samples[i], res.adjustments[i], res.loc, res.seg, cfg, scale,
                                true, samples[i].id);
                }
                res.seg.step(tc.eps1, tc.eps1, tc.momentum);
                res.loc.step(tc.eps2, tc.eps2 / 100.0, tc.momentum);
            }
        } else {
            if (sampling_on) {
                if (tc.shared_stats) {
                    for (std::size_t i = 0; i < n; ++i) e_step_one(epoch, static_cast<int>(i));
                } else {
#pragma omp parallel for schedule(dynamic) num_threads(tc.threads > 0 ? tc.threads : 1)
                    for (long i = 0; i < static_cast<long>(n); ++i)
                        e_step_one(epoch, static_cast<int>(i));
                }
            }
            for (int p = 0; p < std::max(1, tc.m_passes); ++p)
                epoch_cost = m_step(samples, res.adjustments, res.loc, res.seg, cfg, tc, order);
            have_cost = true;
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.cost = have_cost
                       ? epoch_cost
                       : joint_cost(samples, res.adjustments, res.loc, res.seg, cfg, tc.threads);
        rec.wall_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        emit(rec);
        last_epoch = epoch;

        save("last.ckpt", epoch);
        if (tc.checkpoint_every > 0 && epoch % tc.checkpoint_every == 0) {
            char name[48];
            std::snprintf(name, sizeof(name), "ckpt_epoch_%04d.ckpt", epoch);
            save(name, epoch);
        }

        // Early stop when the running best has stalled; robust to the
        // oscillation SGD-with-momentum produces.
        const int w = tc.early_stop_window;
        if (tc.early_stop_rel > 0.0 && static_cast<int>(res.history.size()) > w + 1) {
            double best_before = res.history[0].cost.total;
            for (std::size_t i = 0; i + w < res.history.size(); ++i)
                best_before = std::min(best_before, res.history[i].cost.total);
            double best_now = best_before;
            for (const auto& h : res.history) best_now = std::min(best_now, h.cost.total);
            if ((best_before - best_now) / std::max(std::abs(best_before), 1e-12) <
                tc.early_stop_rel)
                break;
        }
    }

    save("final.ckpt", last_epoch);
    return res;
}

}  // namespace objex
