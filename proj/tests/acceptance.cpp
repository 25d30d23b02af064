// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure. Heavier criteria reuse artifacts from earlier ones; everything
// lives under ./acceptance_work.
#include <array>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "objex/checkpoint.hpp"
#include "objex/gradcheck.hpp"
#include "objex/metrics.hpp"
#include "objex/pipeline.hpp"
#include "objex/sampler.hpp"
#include "objex/trainer.hpp"
#include "oracles.hpp"

using namespace objex;
namespace fs = std::filesystem;

namespace {

struct Criterion {
    int id;
    std::string label;
    bool passed;
    std::string detail;
};

std::vector<Criterion> g_results;

void report(int id, const std::string& label, bool passed, const std::string& detail) {
    g_results.push_back({id, label, passed, detail});
    std::printf("[%s] criterion %d: %s  (%s)\n", passed ? "PASS" : "FAIL", id, label.c_str(),
                detail.c_str());
    std::fflush(stdout);
}

double now_s() {
    return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

const std::string kWork = "acceptance_work";

// Tuned desk-scale training configuration (constants pinned here; the spec's
// paper-profile defaults stay on TrainConfig itself).
TrainConfig desk_train(const std::string& out, LatentMode mode, uint64_t seed, int epochs,
                       int threads) {
    TrainConfig tc;
    tc.eps1 = 1e-3;
    tc.eps2 = 2e-4;
    tc.momentum = 0.9;
    tc.k_moves = 20;
    tc.epochs = epochs;
    tc.batch_size = 16;
    tc.seed = seed;
    tc.latent_mode = mode;
    tc.threads = threads;
    tc.checkpoint_every = 0;
    tc.early_stop_rel = 1e-5;
    tc.out_dir = out;
    tc.cache_dir = kWork + "/spx_cache";
    return tc;
}

std::string fmt(const char* f, ...) {
    char buf[512];
    va_list ap;
    va_start(ap, f);
    std::vsnprintf(buf, sizeof(buf), f, ap);
    va_end(ap);
    return buf;
}

Mask make_mask(int h, int w, std::initializer_list<std::array<int, 2>> fg) {
    Mask m(h, w);
    for (const auto& p : fg) m.at(p[0], p[1]) = 1;
    return m;
}

ModelConfig mini_model() {
    ModelConfig m;
    m.profile = "mini";
    m.frame = 16.0;
    m.mask_side = 4;
    m.min_box_side = 4.0;
    m.loc.name = "loc";
    m.loc.in_h = m.loc.in_w = 8;
    m.loc.out_len = 4;
    m.loc.init_sigma = -1.0;
    m.loc.layers = {LayerSpec::conv("loc_c1", 2, 3, 3, 3, 2, 1, true),
                    LayerSpec::full_conn("loc_fc", 4)};
    m.seg.name = "seg";
    m.seg.in_h = m.seg.in_w = 9;
    m.seg.out_len = 16;
    m.seg.init_sigma = -1.0;
    m.seg.layers = {LayerSpec::conv("seg_c1", 2, 3, 3, 3, 1, 0, true),
                    LayerSpec::response_norm("seg_rn"),
                    LayerSpec::maxpool("seg_mp"),
                    LayerSpec::full_conn("seg_fc", 16),
                    LayerSpec::logistic("seg_out")};
    return m;
}

std::vector<Sample> gen_and_load(const std::string& dir, int count, uint64_t seed) {
    if (!fs::exists(dir + "/images")) {
        SynthConfig cfg;
        cfg.count = count;
        cfg.seed = seed;
        gen_synthetic(dir, cfg);
    }
    return load_dataset(dir).samples;
}

std::string file_bytes(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

std::string costs_without_wall(const std::string& path) {
    std::ifstream f(path);
    std::string line, out;
    while (std::getline(f, line)) {
        out += line.substr(0, line.rfind(','));
        out += '\n';
    }
    return out;
}

// ---------------------------------------------------------------------------

void criterion1_gradients() {
    const double t0 = now_s();
    const auto reports = run_gradcheck(20250607, 20);
    const double secs = now_s() - t0;
    double worst = 0.0;
    for (const auto& r : reports) worst = std::max(worst, r.max_rel_err);
    const bool ok = all_passed(reports) && secs < 60.0;
    report(1, "gradient correctness (all layer kinds, FD, 20 configs)", ok,
           fmt("max_rel_err %.3e, %.1f s", worst, secs));
}

void criterion2_cost_oracle() {
    const ModelConfig m = mini_model();
    const std::string dir = kWork + "/toy2";
    if (!fs::exists(dir + "/images")) {
        SynthConfig cfg;
        cfg.count = 2;
        cfg.seed = 71;
        cfg.size = 16;
        cfg.min_radius = 3;
        cfg.max_radius = 5;
        gen_synthetic(dir, cfg);
    }
    auto samples = load_dataset(dir).samples;
    Network loc(m.loc), seg(m.seg);
    Rng r1(6, "init_loc"), r2(6, "init_seg");
    loc.init(r1);
    seg.init(r2);
    const std::vector<LatentAdjustment> adj = {LatentAdjustment{{5, -5, 0, 10}},
                                               LatentAdjustment{{0, 0, -10, 5}}};
    auto loc_fwd = [&](const Image& img) {
        return loc.forward(image_to_tensor(img, m.loc.in_h, m.loc.in_w));
    };
    auto seg_fwd = [&](const Image& crop) {
        return seg.forward(image_to_tensor(crop, m.seg.in_h, m.seg.in_w));
    };
    double want_total = 0.0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto d = oracle::direct_cost(samples[i].image, samples[i].mask,
                                           samples[i].tight_box(m.frame), adj[i].dl, m.frame,
                                           m.min_box_side, m.mask_side, m.seg.in_h, m.seg.in_w,
                                           loc_fwd, seg_fwd);
        want_total += d.loc + d.seg;
    }
    want_total /= static_cast<double>(samples.size());
    const CostReport got = joint_cost(samples, adj, loc, seg, m);
    const double rel = std::abs(got.total - want_total) / std::abs(want_total);
    report(2, "joint cost matches direct-summation oracle", rel < 1e-10,
           fmt("relative error %.3e", rel));
}

void criterion3_sampler_tv() {
    const double t0 = now_s();
    // Synthetic target: Gaussian bump over the lattice, exactly enumerable.
    const std::array<double, 4> center{0, 0, 5, 5};
    std::array<double, kLatticeSize> log_pi_table;
    std::array<double, kLatticeSize> exact;
    double z = 0.0;
    for (int i = 0; i < kLatticeSize; ++i) {
        const LatentAdjustment a = lattice_point(i);
        double d2 = 0.0;
        for (int k = 0; k < 4; ++k) d2 += (a.dl[k] - center[k]) * (a.dl[k] - center[k]);
        log_pi_table[i] = -d2 / 50.0;
        exact[i] = std::exp(log_pi_table[i]);
        z += exact[i];
    }
    for (auto& v : exact) v /= z;

    ProposalStats st;
    st.sigma = {100, 0, 0, 0, 0, 100, 0, 0, 0, 0, 100, 0, 0, 0, 0, 100};
    std::array<double, kLatticeSize> pc;
    pc.fill(1.0);
    const ProposalDist q = build_proposal(st, pc);
    const LogPiFn score = [&](const LatentAdjustment& a) { return log_pi_table[lattice_index(a)]; };

    Rng rng(555);
    ChainState state;
    state.current_log_pi = score(state.current);
    state.best_log_pi = state.current_log_pi;
    const int steps = 1000000;
    std::vector<int64_t> visits(kLatticeSize, 0);
    for (int i = 0; i < steps; ++i) {
        mh_step(state, q, score, rng);
        ++visits[lattice_index(state.current)];
    }
    double tv = 0.0;
    for (int i = 0; i < kLatticeSize; ++i)
        tv += std::abs(static_cast<double>(visits[i]) / steps - exact[i]);
    tv *= 0.5;
    const double secs = now_s() - t0;
    report(3, "MH chain matches synthetic pi (TV after 1e6 steps)", tv <= 0.02 && secs < 120.0,
           fmt("TV %.4f, %.1f s", tv, secs));
}

void criterion7_metric_oracles() {
    bool ok = true;
    std::string why = "all fixtures and invariants hold";
    auto expect = [&](bool cond, const char* what) {
        if (!cond && ok) {
            ok = false;
            why = std::string("failed: ") + what;
        }
    };

    const Mask gt = make_mask(10, 10, {{1, 1}, {2, 2}, {3, 3}});
    expect(precision(gt, gt) == 1.0, "precision identity");
    Mask inv(10, 10);
    for (std::size_t i = 0; i < gt.v.size(); ++i) inv.v[i] = gt.v[i] ? 0 : 1;
    expect(precision(inv, gt) == 0.0, "precision complement");
    Mask p87 = gt;
    int flips = 0;
    for (std::size_t i = 0; i < p87.v.size() && flips < 13; ++i)
        if (!p87.v[i]) {
            p87.v[i] = 1;
            ++flips;
        }
    expect(precision(p87, gt) == 0.87, "precision 87/100 fixture");

    const Mask sq = make_mask(8, 8, {{1, 1}, {1, 2}, {2, 1}, {2, 2}});
    expect(jaccard(sq, sq) == 1.0, "jaccard identity");
    expect(jaccard(make_mask(8, 8, {{6, 6}}), sq) == 0.0, "jaccard disjoint");
    expect(jaccard(make_mask(8, 8, {{1, 1}, {1, 2}}), sq) == 0.5, "jaccard half");
    const Mask empty(8, 8);
    expect(jaccard(empty, empty) == 1.0, "jaccard both empty");
    expect(jaccard(empty, sq) == 0.0, "jaccard one empty");

    Rng rng(300);
    for (int t = 0; t < 40 && ok; ++t) {
        Mask a(6, 6), b(6, 6);
        for (auto& v : a.v) v = rng.uniform() < 0.5;
        for (auto& v : b.v) v = rng.uniform() < 0.5;
        expect(jaccard(a, b) == jaccard(b, a), "jaccard symmetry");
        expect(precision(a, b) == precision(b, a), "precision symmetry");
        const bool both_one = precision(a, b) == 1.0 && jaccard(a, b) == 1.0;
        expect(both_one == (a.v == b.v), "both 1 iff equal");
    }

    // Top-K protocol: hand fixture plus monotonicity in k_max.
    const Mask g1 = make_mask(4, 4, {{0, 0}, {0, 1}});
    const std::vector<Mask> segs = {make_mask(4, 4, {{0, 0}}), make_mask(4, 4, {{0, 1}}),
                                    make_mask(4, 4, {{3, 3}})};
    expect(topk_union_eval({segs}, {g1}, 1).jaccard == 0.5, "topk K=1");
    expect(topk_union_eval({segs}, {g1}, 2).jaccard == 1.0, "topk picks K=2");
    double prev = 0.0;
    for (int k = 1; k <= 3; ++k) {
        const double j = topk_union_eval({segs}, {g1}, k).jaccard;
        expect(j >= prev, "topk monotone in k_max");
        prev = j;
    }
    report(7, "metric oracles and invariants", ok, why);
}

void criterion6_overfit() {
    const ModelConfig m = ModelConfig::desk_profile();
    auto samples = gen_and_load(kWork + "/overfit1", 1, 404);
    Network loc(m.loc), seg(m.seg);
    Rng r1(12, "init_loc"), r2(12, "init_seg");
    loc.init(r1);
    seg.init(r2);
    TrainConfig tc;
    tc.eps1 = 3e-3;
    tc.eps2 = 1e-4;
    tc.batch_size = 1;
    const std::vector<LatentAdjustment> adj(1);
    double loc_term = 1e18;
    int steps = 0;
    double j = 0.0;
    for (; steps < 5000; ++steps) {
        loc_term = m_step(samples, adj, loc, seg, m, tc, {0}).loc_term;
        if (loc_term < 1e-3 && steps % 25 == 0) {
            j = evaluate(samples, loc, seg, m).jaccard;
            if (j >= 0.9) break;
        }
    }
    if (j < 0.9) j = evaluate(samples, loc, seg, m).jaccard;
    report(6, "single-sample overfit (loc < 1e-3, J >= 0.9, <= 5000 steps)",
           loc_term < 1e-3 && j >= 0.9 && steps < 5000,
           fmt("loc_term %.2e, jaccard %.3f after %d steps", loc_term, j, steps + 1));
}

void criterion8_reproducibility() {
    auto samples = gen_and_load(kWork + "/repro", 24, 505);
    auto run = [&](const std::string& out) {
        fs::remove_all(out);
        TrainConfig tc = desk_train(out, LatentMode::Mcmc, 777, 3, /*threads=*/1);
        tc.k_moves = 5;
        em_train(samples, ModelConfig::desk_profile(), tc);
    };
    const std::string a = kWork + "/repro_a", b = kWork + "/repro_b";
    run(a);
    run(b);
    // wall_seconds is wall clock and cannot be bit-identical; every numeric
    // column and the final checkpoint must be.
    const bool costs_ok =
        costs_without_wall(a + "/costs.csv") == costs_without_wall(b + "/costs.csv");
    const bool ckpt_ok = file_bytes(a + "/final.ckpt") == file_bytes(b + "/final.ckpt");
    report(8, "bit-identical repeated runs (costs.csv sans wall clock, checkpoints)",
           costs_ok && ckpt_ok,
           fmt("costs %s, checkpoint %s", costs_ok ? "identical" : "differ",
               ckpt_ok ? "identical" : "differ"));
}

struct TrainedPair {
    std::string mcmc_ckpt;
};

TrainedPair criterion5_joint_vs_separate(int threads) {
    const double t0 = now_s();
    auto train_set = gen_and_load(kWork + "/train500", 500, 1001);
    auto test_set = gen_and_load(kWork + "/test200", 200, 2002);
    const ModelConfig m = ModelConfig::desk_profile();
    const int epochs = 60;

    const std::string out_m = kWork + "/run_mcmc", out_z = kWork + "/run_zero";
    fs::remove_all(out_m);
    fs::remove_all(out_z);
    const TrainResult rm =
        em_train(train_set, m, desk_train(out_m, LatentMode::Mcmc, 42, epochs, threads));
    const TrainResult rz =
        em_train(train_set, m, desk_train(out_z, LatentMode::Zero, 42, epochs, threads));

    const double cost_m = rm.history.back().cost.total;
    const double cost_z = rz.history.back().cost.total;
    const EvalResult ev_m = evaluate(test_set, rm.loc, rm.seg, m, out_m + "/eval", threads);
    const EvalResult ev_z = evaluate(test_set, rz.loc, rz.seg, m, out_z + "/eval", threads);
    const double hours = (now_s() - t0) / 3600.0;

    const bool ok = cost_m < cost_z && ev_m.jaccard >= ev_z.jaccard + 0.02 && hours < 2.0;
    report(5, "joint training beats zero-adjustment training (cost and test J)", ok,
           fmt("cost %.4g vs %.4g; test J %.4f vs %.4f (gap %.1f pts); P %.4f vs %.4f; %.2f h",
               cost_m, cost_z, ev_m.jaccard, ev_z.jaccard, 100.0 * (ev_m.jaccard - ev_z.jaccard),
               ev_m.precision, ev_z.precision, hours));

    return TrainedPair{out_m + "/final.ckpt"};
}

void criterion4_sampler_vs_enumeration(const TrainedPair& tp, int threads) {
    const ModelConfig m = ModelConfig::desk_profile();
    const Checkpoint ck = load_checkpoint(tp.mcmc_ckpt);
    auto train_set = gen_and_load(kWork + "/train500", 500, 1001);

    // (a) chain quality vs the 625-point enumeration on trained nets.
    const int n_samples = 25;
    int good = 0;
    double enum_secs = 0.0, chain_secs = 0.0;
    for (int i = 0; i < n_samples; ++i) {
        const Sample& s = train_set[i * 7];  // spread over the set
        const SuperpixelMap map = slic(s.image, 200, 10.0);
        const auto pc = boundary_term(map, s, m);

        std::array<double, kLatticeSize> table;
        double enum_best = 0.0;
        double t1 = now_s();
        enumerate_best(s, ck.loc, ck.seg, m, &enum_best, &table);
        enum_secs += now_s() - t1;

        ProposalStats st;
        Rng rng(Rng::mix(4242) ^ static_cast<uint64_t>(i));
        double chain_best = 0.0;
        t1 = now_s();
        run_chain(s, st, pc, ck.loc, ck.seg, m, 20, rng, {}, nullptr, &chain_best);
        chain_secs += now_s() - t1;

        std::array<double, kLatticeSize> sorted = table;
        std::sort(sorted.begin(), sorted.end());
        const double pct90 = sorted[static_cast<int>(std::ceil(0.9 * kLatticeSize)) - 1];
        good += chain_best >= pct90;
    }
    const double frac = static_cast<double>(good) / n_samples;
    const double ratio = enum_secs / std::max(chain_secs, 1e-9);

    // (b) paired trainings: mcmc vs exhaustive-enumeration E-steps.
    auto pair_train = gen_and_load(kWork + "/train64", 64, 3003);
    auto pair_test = gen_and_load(kWork + "/test200", 200, 2002);
    const int epochs = 25;
    const std::string out_a = kWork + "/pair_mcmc", out_b = kWork + "/pair_enum";
    fs::remove_all(out_a);
    fs::remove_all(out_b);
    const TrainResult ra =
        em_train(pair_train, m, desk_train(out_a, LatentMode::Mcmc, 11, epochs, threads));
    const TrainResult rb =
        em_train(pair_train, m, desk_train(out_b, LatentMode::Enumerate, 11, epochs, threads));
    const double ja = evaluate(pair_test, ra.loc, ra.seg, m, "", threads).jaccard;
    const double jb = evaluate(pair_test, rb.loc, rb.seg, m, "", threads).jaccard;

    const bool ok = frac >= 0.9 && std::abs(ja - jb) <= 0.02;
    report(4, "K=20 chain reaches 90th-percentile log pi; enumeration parity", ok,
           fmt("%.0f%% of samples >= p90 (need 90%%); paired test J %.4f (mcmc) vs %.4f (enum), "
               "gap %.1f pts; enum/chain E-step time ratio %.0fx (paper ~30x)",
               100.0 * frac, ja, jb, 100.0 * std::abs(ja - jb), ratio));
}

void criterion9_timing(const TrainedPair& tp, int threads) {
    const Checkpoint ck = load_checkpoint(tp.mcmc_ckpt);
    auto test_set = gen_and_load(kWork + "/test200", 200, 2002);
    const EvalResult r = evaluate(test_set, ck.loc, ck.seg, ck.config, "", threads);
    // Reference context only: the original full-scale system reported
    // 0.014 s per image; nothing is asserted about our absolute time.
    report(9, "timing report (reference 0.014 s/image at full scale, not asserted)", true,
           fmt("mean %.2f ms/image over %zu images", r.mean_time_ms, r.per_sample.size()));
}

}  // namespace

int main(int argc, char** argv) {
    int threads = 2;
    for (int i = 1; i < argc; ++i) {
        const std::string a = argv[i];
        if (a == "--threads" && i + 1 < argc) threads = std::atoi(argv[++i]);
    }
    fs::create_directories(kWork);
    const double t0 = now_s();

    criterion1_gradients();
    criterion2_cost_oracle();
    criterion3_sampler_tv();
    criterion7_metric_oracles();
    criterion6_overfit();
    criterion8_reproducibility();
    const TrainedPair tp = criterion5_joint_vs_separate(threads);
    criterion4_sampler_vs_enumeration(tp, threads);
    criterion9_timing(tp, threads);

    std::printf("\n==== acceptance summary (%.1f min) ====\n", (now_s() - t0) / 60.0);
    bool all_ok = true;
    for (const auto& c : g_results) {
        std::printf("  criterion %d: %s  %s\n", c.id, c.passed ? "PASS" : "FAIL",
                    c.detail.c_str());
        all_ok = all_ok && c.passed;
    }
    std::printf("overall: %s\n", all_ok ? "PASS" : "FAIL");
    return all_ok ? 0 : 1;
}
