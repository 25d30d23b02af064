#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "objex/checkpoint.hpp"
#include "objex/metrics.hpp"
#include "objex/pipeline.hpp"
#include "objex/trainer.hpp"
#include "oracles.hpp"

using namespace objex;
namespace fs = std::filesystem;

namespace {

ModelConfig mini_model() {
    ModelConfig m;
    m.profile = "mini";
    m.frame = 16.0;
    m.mask_side = 4;
    m.min_box_side = 4.0;
    m.loc.name = "loc";
    m.loc.in_h = m.loc.in_w = 8;
    m.loc.out_len = 4;
    m.loc.init_sigma = 0.05;
    m.loc.layers = {LayerSpec::conv("loc_c1", 2, 3, 3, 3, 2, 1, true),
                    LayerSpec::full_conn("loc_fc", 4)};
    m.seg.name = "seg";
    m.seg.in_h = m.seg.in_w = 9;
    m.seg.out_len = 16;
    m.seg.init_sigma = 0.05;
    m.seg.layers = {LayerSpec::conv("seg_c1", 2, 3, 3, 3, 1, 0, true),
                    LayerSpec::response_norm("seg_rn"),
                    LayerSpec::maxpool("seg_mp"),
                    LayerSpec::full_conn("seg_fc", 16),
                    LayerSpec::logistic("seg_out")};
    return m;
}

std::vector<Sample> toy_samples(int n, uint64_t seed) {
    const std::string dir =
        (fs::temp_directory_path() / ("objex_toy_" + std::to_string(seed))).string();
    fs::remove_all(dir);
    SynthConfig cfg;
    cfg.count = n;
    cfg.seed = seed;
    cfg.size = 16;
    cfg.min_radius = 3;
    cfg.max_radius = 5;
    cfg.max_distractors = 2;
    gen_synthetic(dir, cfg);
    auto samples = load_dataset(dir).samples;
    fs::remove_all(dir);
    return samples;
}

std::string file_bytes(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

// costs.csv with the volatile wall_seconds column stripped.
std::string costs_without_wall(const std::string& path) {
    std::ifstream f(path);
    std::string line, out;
    while (std::getline(f, line)) {
        const auto pos = line.rfind(',');
        out += line.substr(0, pos);
        out += '\n';
    }
    return out;
}

}  // namespace

TEST_CASE("joint_cost analytic special cases") {
    const ModelConfig m = mini_model();
    auto samples = toy_samples(2, 41);
    const std::vector<LatentAdjustment> zero(samples.size());

    SUBCASE("all-zero nets: p = 0.5 everywhere, seg term is m^2 ln 2 per sample") {
        Network loc(m.loc), seg(m.seg);
        const CostReport r = joint_cost(samples, zero, loc, seg, m);
        CHECK(r.seg_term == doctest::Approx(16.0 * std::log(2.0)).epsilon(1e-12));
        CHECK(r.total == r.loc_term + r.seg_term);
    }

    SUBCASE("perfect localization output zeroes the loc term") {
        // One sample, loc output forced to the tight box via output biases.
        std::vector<Sample> one = {samples[0]};
        const Box t = one[0].tight_box(m.frame);
        Network loc(m.loc), seg(m.seg);
        loc.params()[1].biases[0] = t.x1;
        loc.params()[1].biases[1] = t.y1;
        loc.params()[1].biases[2] = t.x2;
        loc.params()[1].biases[3] = t.y2;
        const CostReport r = joint_cost(one, {LatentAdjustment{}}, loc, seg, m);
        CHECK(r.loc_term == doctest::Approx(0.0).epsilon(1e-18));
    }

    SUBCASE("empty dataset is an error") {
        Network loc(m.loc), seg(m.seg);
        CHECK_THROWS_AS(joint_cost({}, {}, loc, seg, m), std::runtime_error);
    }
}

TEST_CASE("joint_cost matches the direct-summation oracle on a 2-sample fixture") {
    const ModelConfig m = mini_model();
    auto samples = toy_samples(2, 42);
    Network loc(m.loc), seg(m.seg);
    Rng r1(7, "init_loc"), r2(7, "init_seg");
    loc.init(r1);
    seg.init(r2);
    const std::vector<LatentAdjustment> adj = {LatentAdjustment{{5, 0, -5, 10}},
                                               LatentAdjustment{{0, -5, 0, 0}}};

    auto loc_fwd = [&](const Image& img) {
        return loc.forward(image_to_tensor(img, m.loc.in_h, m.loc.in_w));
    };
    auto seg_fwd = [&](const Image& crop) {
        return seg.forward(image_to_tensor(crop, m.seg.in_h, m.seg.in_w));
    };
    double want_loc = 0.0, want_seg = 0.0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto d = oracle::direct_cost(samples[i].image, samples[i].mask,
                                           samples[i].tight_box(m.frame), adj[i].dl, m.frame,
                                           m.min_box_side, m.mask_side, m.seg.in_h, m.seg.in_w,
                                           loc_fwd, seg_fwd);
        want_loc += d.loc;
        want_seg += d.seg;
    }
    want_loc /= 2.0;
    want_seg /= 2.0;

    const CostReport got = joint_cost(samples, adj, loc, seg, m);
    CHECK(got.loc_term == doctest::Approx(want_loc).epsilon(1e-10));
    CHECK(got.seg_term == doctest::Approx(want_seg).epsilon(1e-10));
    CHECK(got.total == doctest::Approx(want_loc + want_seg).epsilon(1e-10));
}

TEST_CASE("m_step with zero learning rates leaves the cost unchanged") {
    const ModelConfig m = mini_model();
    auto samples = toy_samples(3, 43);
    const std::vector<LatentAdjustment> zero(samples.size());
    Network loc(m.loc), seg(m.seg);
    Rng r1(3, "init_loc"), r2(3, "init_seg");
    loc.init(r1);
    seg.init(r2);

    const CostReport before = joint_cost(samples, zero, loc, seg, m);
    TrainConfig tc;
    tc.eps1 = 0.0;
    tc.eps2 = 0.0;
    tc.batch_size = 2;
    const std::vector<int> order = {0, 1, 2};
    const CostReport after = m_step(samples, zero, loc, seg, m, tc, order);
    CHECK(after.total == before.total);
    CHECK(after.loc_term == before.loc_term);
    CHECK(after.seg_term == before.seg_term);
}

TEST_CASE("gradient of joint_cost w.r.t. probed weights matches finite differences") {
    const ModelConfig m = mini_model();
    auto samples = toy_samples(2, 44);
    const std::vector<LatentAdjustment> adj(samples.size());
    Network loc(m.loc), seg(m.seg);
    Rng r1(5, "init_loc"), r2(5, "init_seg");
    loc.init(r1);
    seg.init(r2);

    // Analytic batch gradient (scale 1/N like the cost).
    loc.zero_grads();
    seg.zero_grads();
    TrainConfig tc;
    tc.eps1 = 0.0;  // zero rates: m_step accumulates-then-consumes, so probe
    tc.eps2 = 0.0;  // gradients directly instead.

    // Recompute gradients by hand through the public pieces: run one batch
    // pass with zero lr is not observable, so accumulate via a private-like
    // path: forward/backward using Network directly.
    auto grad_of = [&](Network& net, bool is_seg, int layer, int index) {
        loc.zero_grads();
        seg.zero_grads();
        const double scale = 1.0 / static_cast<double>(samples.size());
        for (std::size_t i = 0; i < samples.size(); ++i) {
            const Box tight = samples[i].tight_box(m.frame);
            const double target[4] = {tight.x1, tight.y1, tight.x2, tight.y2};
            std::vector<LayerCache> ltape, stape;
            const Tensor lo =
                loc.forward(image_to_tensor(samples[i].image, m.loc.in_h, m.loc.in_w), &ltape);
            Tensor dl({4});
            for (int k = 0; k < 4; ++k) dl[k] = 2.0 * (lo[k] - target[k]) * scale;
            loc.backward(dl, ltape);

            const Box adj_box = clamp_box({target[0], target[1], target[2], target[3]}, m.frame,
                                          m.min_box_side);
            const CropResult cr = crop_resize(samples[i].image, adj_box, m);
            const Mask tgt = target_mask(samples[i].mask, cr.px_box, m.mask_side);
            const Tensor p =
                seg.forward(image_to_tensor(cr.crop, cr.crop.h, cr.crop.w), &stape);
            Tensor dz(p.shape);
            for (int j = 0; j < p.size(); ++j)
                dz[j] = (p[j] - static_cast<double>(tgt.v[j])) * scale;
            seg.backward(dz, stape, true);
        }
        return is_seg ? net.params()[layer].weight_grads[index]
                      : net.params()[layer].weight_grads[index];
    };

    const double fd_eps = 1e-6;
    struct ProbeSpec {
        bool is_seg;
        int layer, index;
    };
    const ProbeSpec probes[] = {{false, 0, 3}, {false, 1, 10}, {true, 0, 5}, {true, 3, 17}};
    for (const auto& pr : probes) {
        Network& net = pr.is_seg ? seg : loc;
        const double analytic = grad_of(net, pr.is_seg, pr.layer, pr.index);
        double& w = net.params()[pr.layer].weights[pr.index];
        const double w0 = w;
        w = w0 + fd_eps;
        const double jp = joint_cost(samples, adj, loc, seg, m).total;
        w = w0 - fd_eps;
        const double jm = joint_cost(samples, adj, loc, seg, m).total;
        w = w0;
        const double fd = (jp - jm) / (2.0 * fd_eps);
        const double rel =
            std::abs(analytic - fd) / std::max({std::abs(analytic), std::abs(fd), 1.0});
        INFO("layer " << pr.layer << " index " << pr.index);
        CHECK(rel < 1e-4);
    }
}

TEST_CASE("an m_step with small learning rates does not increase the batch cost") {
    const ModelConfig m = mini_model();
    auto samples = toy_samples(4, 45);
    const std::vector<LatentAdjustment> adj(samples.size());
    Network loc(m.loc), seg(m.seg);
    Rng r1(11, "init_loc"), r2(11, "init_seg");
    loc.init(r1);
    seg.init(r2);

    const CostReport before = joint_cost(samples, adj, loc, seg, m);
    TrainConfig tc;
    tc.eps1 = 1e-6;
    tc.eps2 = 1e-6;
    tc.batch_size = 4;  // single batch: the descent guarantee applies to it
    const CostReport after = m_step(samples, adj, loc, seg, m, tc, {0, 1, 2, 3});
    CHECK(after.total <= before.total);
}

TEST_CASE("single-sample overfit drives the localization term down hard") {
    const ModelConfig m = mini_model();
    auto samples = toy_samples(1, 46);
    const std::vector<LatentAdjustment> adj(1);
    Network loc(m.loc), seg(m.seg);
    Rng r1(21, "init_loc"), r2(21, "init_seg");
    loc.init(r1);
    seg.init(r2);

    TrainConfig tc;
    tc.eps1 = 3e-3;
    tc.eps2 = 3e-4;
    tc.batch_size = 1;
    double final_loc = 1e9;
    for (int step = 0; step < 3000; ++step)
        final_loc = m_step(samples, adj, loc, seg, m, tc, {0}).loc_term;
    CHECK(final_loc < 1e-3);
}

TEST_CASE("em_train with latent_mode=zero equals decoupled per-network training") {
    const ModelConfig m = mini_model();
    auto samples = toy_samples(6, 47);

    TrainConfig tc;
    tc.latent_mode = LatentMode::Zero;
    tc.epochs = 3;
    tc.batch_size = 2;
    tc.eps1 = 1e-4;
    tc.eps2 = 1e-4;
    tc.seed = 99;
    const TrainResult joint = em_train(samples, m, tc);
    for (const auto& a : joint.adjustments) CHECK(a == LatentAdjustment{});

    // Decoupled oracle: each net trained alone against groundtruth tight
    // boxes, consuming the same named RNG streams.
    Network loc(m.loc), seg(m.seg);
    {
        Rng rl(tc.seed, "init_loc"), rs(tc.seed, "init_seg");
        loc.init(rl);
        seg.init(rs);
    }
    for (int epoch = 1; epoch <= tc.epochs; ++epoch) {
        std::vector<int> order(samples.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
        Rng rng(tc.seed, "order/" + std::to_string(epoch));
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[rng.uniform_int(i)]);

        for (std::size_t b = 0; b < order.size(); b += tc.batch_size) {
            const std::size_t end = std::min(order.size(), b + tc.batch_size);
            const double scale = 1.0 / static_cast<double>(end - b);
            loc.zero_grads();
            seg.zero_grads();
            for (std::size_t k = b; k < end; ++k) {
                const Sample& s = samples[order[k]];
                const Box t = s.tight_box(m.frame);
                std::vector<LayerCache> ltape, stape;
                const Tensor lo =
                    loc.forward(image_to_tensor(s.image, m.loc.in_h, m.loc.in_w), &ltape);
                Tensor dl({4});
                dl[0] = 2.0 * (lo[0] - t.x1) * scale;
                dl[1] = 2.0 * (lo[1] - t.y1) * scale;
                dl[2] = 2.0 * (lo[2] - t.x2) * scale;
                dl[3] = 2.0 * (lo[3] - t.y2) * scale;
                loc.backward(dl, ltape);

                const Box cb = clamp_box(t, m.frame, m.min_box_side);
                const CropResult cr = crop_resize(s.image, cb, m);
                const Mask tgt = target_mask(s.mask, cr.px_box, m.mask_side);
                const Tensor p =
                    seg.forward(image_to_tensor(cr.crop, cr.crop.h, cr.crop.w), &stape);
                Tensor dz(p.shape);
                for (int j = 0; j < p.size(); ++j)
                    dz[j] = (p[j] - static_cast<double>(tgt.v[j])) * scale;
                seg.backward(dz, stape, true);
            }
            seg.step(tc.eps1, tc.eps1);
            loc.step(tc.eps2, tc.eps2 / 100.0);
        }
    }

    // Bit-identical parameter trajectories imply bit-identical costs.
    for (std::size_t l = 0; l < loc.params().size(); ++l)
        CHECK(loc.params()[l].weights.data == joint.loc.params()[l].weights.data);
    for (std::size_t l = 0; l < seg.params().size(); ++l)
        CHECK(seg.params()[l].weights.data == joint.seg.params()[l].weights.data);

    const std::vector<LatentAdjustment> zero(samples.size());
    const CostReport mine = joint_cost(samples, zero, loc, seg, m);
    CHECK(mine.total == joint.history.back().cost.total);
}

TEST_CASE("warm-started chains never lose ground against the previous adjustment") {
    const ModelConfig m = mini_model();
    auto samples = toy_samples(4, 48);
    Network loc(m.loc), seg(m.seg);
    Rng r1(31, "init_loc"), r2(31, "init_seg");
    loc.init(r1);
    seg.init(r2);

    for (const auto& s : samples) {
        const SuperpixelMap map = slic(s.image, 8);
        const auto pc = boundary_term(map, s, m);
        ProposalStats st;
        LatentAdjustment prev;
        for (int epoch = 0; epoch < 3; ++epoch) {
            SampleScorer scorer(s, loc, seg, m);
            const double prev_lp = scorer.log_pi(prev);
            Rng rng(1000 + epoch);
            double best_lp = 0.0;
            const LatentAdjustment next =
                run_chain(s, st, pc, loc, seg, m, 10, rng, prev, nullptr, &best_lp);
            CHECK(best_lp >= prev_lp);  // the init state counts as visited
            prev = next;
        }
    }
}

TEST_CASE("NaN gradients abort with the layer and sample named") {
    const ModelConfig m = mini_model();
    auto samples = toy_samples(1, 49);
    Network loc(m.loc), seg(m.seg);
    Rng r1(1, "init_loc"), r2(1, "init_seg");
    loc.init(r1);
    seg.init(r2);
    // Weights large enough to overflow the squared-error backward.
    for (auto& w : loc.params()[1].weights.data) w = 1e200;
    TrainConfig tc;
    tc.batch_size = 1;
    CHECK_THROWS_WITH_AS(m_step(samples, {LatentAdjustment{}}, loc, seg, m, tc, {0}),
                         doctest::Contains("sample"), std::runtime_error);
}

TEST_CASE("em_train is reproducible and resumable bit-for-bit") {
    const ModelConfig m = mini_model();
    auto samples = toy_samples(5, 50);

    auto run = [&](const std::string& dir, int epochs, const std::string& resume) {
        TrainConfig tc;
        tc.latent_mode = LatentMode::Mcmc;
        tc.k_moves = 4;
        tc.epochs = epochs;
        tc.batch_size = 2;
        tc.eps1 = 1e-4;
        tc.eps2 = 1e-4;
        tc.seed = 7;
        tc.slic_segments = 8;
        tc.out_dir = dir;
        tc.checkpoint_every = 0;
        tc.resume_path = resume;
        tc.early_stop_rel = 0.0;  // fixed epoch budget for the comparison
        return em_train(samples, m, tc);
    };

    const std::string d1 = (fs::temp_directory_path() / "objex_tr_a").string();
    const std::string d2 = (fs::temp_directory_path() / "objex_tr_b").string();
    const std::string d3 = (fs::temp_directory_path() / "objex_tr_c").string();
    fs::remove_all(d1);
    fs::remove_all(d2);
    fs::remove_all(d3);

    const TrainResult a = run(d1, 4, "");
    const TrainResult b = run(d2, 4, "");
    REQUIRE(a.history.size() == b.history.size());
    for (std::size_t i = 0; i < a.history.size(); ++i)
        CHECK(a.history[i].cost.total == b.history[i].cost.total);
    CHECK(file_bytes(d1 + "/final.ckpt") == file_bytes(d2 + "/final.ckpt"));
    CHECK(costs_without_wall(d1 + "/costs.csv") == costs_without_wall(d2 + "/costs.csv"));

    // Interrupted + resumed run reproduces the uninterrupted one exactly.
    run(d3, 2, "");
    run(d3, 4, d3 + "/last.ckpt");
    CHECK(file_bytes(d3 + "/final.ckpt") == file_bytes(d1 + "/final.ckpt"));

    fs::remove_all(d1);
    fs::remove_all(d2);
    fs::remove_all(d3);
}

TEST_CASE("per-batch alternation runs and records costs") {
    const ModelConfig m = mini_model();
    auto samples = toy_samples(4, 51);
    TrainConfig tc;
    tc.latent_mode = LatentMode::Mcmc;
    tc.k_moves = 3;
    tc.epochs = 2;
    tc.batch_size = 2;
    tc.eps1 = 1e-4;
    tc.eps2 = 1e-4;
    tc.seed = 3;
    tc.slic_segments = 8;
    tc.per_batch_alternation = true;
    const TrainResult r = em_train(samples, m, tc);
    CHECK(r.history.size() == 3u);  // epoch 0 record plus two epochs
    CHECK(std::isfinite(r.history.back().cost.total));
}
