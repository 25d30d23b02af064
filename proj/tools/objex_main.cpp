// objex: salient-object extraction by a jointly trained localization +
// segmentation network pair. Subcommands cover the full pipeline: synthetic
// data generation, EM training, inference, evaluation, gradient checking and
// sampler diagnostics.

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "objex/checkpoint.hpp"
#include "objex/dataset.hpp"
#include "objex/gradcheck.hpp"
#include "objex/metrics.hpp"
#include "objex/pipeline.hpp"
#include "objex/sampler.hpp"
#include "objex/superpixels.hpp"
#include "objex/trainer.hpp"

namespace fs = std::filesystem;
using namespace objex;

namespace {

constexpr const char* kVersion = "objex 0.1.0";

std::string timestamp() {
    const std::time_t t = std::time(nullptr);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
    return buf;
}

uint64_t dataset_hash(const std::vector<Sample>& samples) {
    uint64_t h = 1469598103934665603ull;
    auto mix64 = [&](uint64_t v) {
        for (int i = 0; i < 8; ++i) {
            h ^= (v >> (8 * i)) & 0xff;
            h *= 1099511628211ull;
        }
    };
    for (const auto& s : samples) {
        h ^= Rng::fnv1a(s.id);
        h *= 1099511628211ull;
        mix64(content_hash(s.image));
    }
    return h;
}

std::string out_dir_override(const std::string& flag_value) {
    // Env var override for the output dir only.
    if (const char* env = std::getenv("OBJEX_OUT_DIR"); env && *env) return env;
    return flag_value;
}

ModelConfig resolve_model(const std::string& profile, const std::string& net_config) {
    if (!net_config.empty()) return ModelConfig::from_json_file(net_config);
    if (profile == "paper") return ModelConfig::paper_profile();
    if (profile == "desk") return ModelConfig::desk_profile();
    throw std::runtime_error("unknown profile: " + profile + " (expected desk|paper)");
}

void write_manifest(const std::string& out_dir, const std::string& command,
                    const nlohmann::json& config, uint64_t seed,
                    const std::vector<Sample>* samples, const std::string& dataset_path,
                    const std::string& started, const std::string& finished) {
    nlohmann::json m;
    m["command"] = command;
    m["code_version"] = kVersion;
    m["seed"] = seed;
    m["config"] = config;
    if (samples) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%016llx",
                      static_cast<unsigned long long>(dataset_hash(*samples)));
        m["dataset"] = {{"path", dataset_path}, {"hash", buf}, {"count", samples->size()}};
    }
    m["started_at"] = started;
    m["finished_at"] = finished;
    fs::create_directories(out_dir);
    std::ofstream f(out_dir + "/manifest.json");
    f << m.dump(2) << "\n";
}

nlohmann::json train_config_json(const TrainConfig& tc, const ModelConfig& mc) {
    nlohmann::json j;
    j["eps1"] = tc.eps1;
    j["eps2"] = tc.eps2;
    j["momentum"] = tc.momentum;
    j["m_passes"] = tc.m_passes;
    j["warmup_epochs"] = tc.warmup_epochs;
    j["k_moves"] = tc.k_moves;
    j["epochs"] = tc.epochs;
    j["batch_size"] = tc.batch_size;
    j["latent_mode"] = latent_mode_name(tc.latent_mode);
    j["threads"] = tc.threads;
    j["warm_start"] = tc.warm_start;
    j["shared_stats"] = tc.shared_stats;
    j["per_batch_alternation"] = tc.per_batch_alternation;
    j["slic_segments"] = tc.slic_segments;
    j["slic_compactness"] = tc.slic_compactness;
    j["pc_samples"] = tc.pc_samples;
    j["model"] = nlohmann::json::parse(mc.to_json());
    return j;
}

int cmd_gen_data(const std::string& out, const SynthConfig& cfg) {
    gen_synthetic(out, cfg);
    std::cout << "wrote " << cfg.count << " samples to " << out << "\n";
    return 0;
}

int cmd_train(const std::string& data, const std::string& out, const ModelConfig& mc,
              TrainConfig tc) {
    tc.out_dir = out;
    const std::string started = timestamp();
    Dataset ds = load_dataset(data);
    for (const auto& w : ds.skipped) std::cerr << "warning: skipped " << w << "\n";

    TrainResult res = em_train(ds.samples, mc, tc);

    write_manifest(out, "train", train_config_json(tc, mc), tc.seed, &ds.samples, data, started,
                   timestamp());
    const auto& last = res.history.back();
    std::printf("epoch %d done: total %.6g (loc %.6g, seg %.6g)\n", last.epoch, last.cost.total,
                last.cost.loc_term, last.cost.seg_term);
    std::printf("checkpoints and costs.csv in %s\n", out.c_str());
    return 0;
}

int cmd_infer(const std::string& ckpt_path, const std::string& input, const std::string& out) {
    const Checkpoint ck = load_checkpoint(ckpt_path);
    fs::create_directories(out);

    std::vector<fs::path> inputs;
    if (fs::is_directory(input)) {
        for (const auto& e : fs::directory_iterator(input))
            if (e.path().extension() == ".png") inputs.push_back(e.path());
        std::sort(inputs.begin(), inputs.end());
    } else {
        inputs.push_back(input);
    }
    if (inputs.empty()) throw std::runtime_error("no .png inputs under " + input);

    double total_ms = 0.0;
    for (const auto& p : inputs) {
        const Image img = read_image_png(p.string());
        const auto t0 = std::chrono::steady_clock::now();
        const Extraction e = extract(img, ck.loc, ck.seg, ck.config);
        total_ms += std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                        .count();
        const std::string stem = p.stem().string();
        std::ofstream boxf(out + "/" + stem + "_box.txt");
        char line[128];
        std::snprintf(line, sizeof(line), "%.4f %.4f %.4f %.4f\n", e.box.x1, e.box.y1, e.box.x2,
                      e.box.y2);
        boxf << line;
        write_mask(out + "/" + stem + "_mask.png", e.full_mask);
    }
    std::printf("%zu image(s), mean %.3f ms per extraction\n", inputs.size(),
                total_ms / static_cast<double>(inputs.size()));
    return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data, const std::string& out,
             int threads, uint64_t seed) {
    const std::string started = timestamp();
    const Checkpoint ck = load_checkpoint(ckpt_path);
    Dataset ds = load_dataset(data);
    for (const auto& w : ds.skipped) std::cerr << "warning: skipped " << w << "\n";

    const EvalResult r = evaluate(ds.samples, ck.loc, ck.seg, ck.config, out, threads);
    write_manifest(out, "eval", {{"checkpoint", ckpt_path}}, seed, &ds.samples, data, started,
                   timestamp());
    std::printf("samples %zu  precision %.4f  jaccard %.4f  mean %.3f ms/image\n",
                ds.samples.size(), r.precision, r.jaccard, r.mean_time_ms);
    return 0;
}

int cmd_gradcheck(uint64_t seed, int configs, const std::string& corrupt) {
    std::optional<LayerKind> bad;
    if (!corrupt.empty()) {
        if (corrupt == "conv") bad = LayerKind::Conv;
        else if (corrupt == "response_norm") bad = LayerKind::ResponseNorm;
        else if (corrupt == "maxpool") bad = LayerKind::MaxPool;
        else if (corrupt == "full_conn") bad = LayerKind::FullConn;
        else if (corrupt == "logistic") bad = LayerKind::LogisticOutput;
        else throw std::runtime_error("unknown layer kind: " + corrupt);
    }
    const auto t0 = std::chrono::steady_clock::now();
    const auto reports = run_gradcheck(seed, configs, 1e-5, 1e-4, bad);
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    bool ok = true;
    std::vector<std::string> failures;
    for (const auto& r : reports) {
        std::printf("%-14s configs %-3d max_rel_err %.3e  %s\n", layer_kind_name(r.kind),
                    r.configs, r.max_rel_err, r.passed ? "ok" : "FAIL");
        if (!r.passed) {
            ok = false;
            failures.push_back(layer_kind_name(r.kind));
        }
    }
    std::printf("gradcheck %s in %.2f s\n", ok ? "passed" : "FAILED", secs);
    if (!ok) {
        std::fprintf(stderr, "failing layers:");
        for (const auto& f : failures) std::fprintf(stderr, " %s", f.c_str());
        std::fprintf(stderr, "\n");
        return 1;
    }
    return 0;
}

int cmd_sample_diag(const std::string& ckpt_path, const std::string& data, const std::string& out,
                    int k_moves, int max_samples, uint64_t seed, bool enumerate_mode) {
    const Checkpoint ck = load_checkpoint(ckpt_path);
    Dataset ds = load_dataset(data);
    fs::create_directories(out);

    const int n = std::min<int>(max_samples, static_cast<int>(ds.samples.size()));
    std::ofstream summary(out + "/sample_diag.csv");
    summary << "id,chain_log_pi,enum_log_pi,percentile\n";
    std::ofstream traces(out + "/chain_traces.csv");
    traces << "id,move,dl0,dl1,dl2,dl3,log_pi,accepted,best_log_pi\n";

    std::vector<double> percentiles;
    for (int i = 0; i < n; ++i) {
        const Sample& s = ds.samples[i];
        SuperpixelMap map = slic(s.image, 200, 10.0);
        const auto pc = boundary_term(map, s, ck.config);

        std::array<double, kLatticeSize> table;
        double enum_best = 0.0;
        enumerate_best(s, ck.loc, ck.seg, ck.config, &enum_best, &table);

        double chain_best = 0.0;
        std::vector<ChainMove> trace;
        if (enumerate_mode) {
            chain_best = enum_best;
        } else {
            ProposalStats stats;
            Rng rng(Rng::mix(seed ^ Rng::fnv1a("diag")) ^ static_cast<uint64_t>(i));
            run_chain(s, stats, pc, ck.loc, ck.seg, ck.config, k_moves, rng, {}, &trace,
                      &chain_best);
        }
        int at_or_below = 0;
        for (double v : table) at_or_below += v <= chain_best;
        const double pct = 100.0 * at_or_below / kLatticeSize;
        percentiles.push_back(pct);

        char row[160];
        std::snprintf(row, sizeof(row), "%s,%.9g,%.9g,%.3f\n", s.id.c_str(), chain_best,
                      enum_best, pct);
        summary << row;
        for (const auto& mv : trace)
            traces << s.id << "," << mv.move << "," << mv.proposal.dl[0] << ","
                   << mv.proposal.dl[1] << "," << mv.proposal.dl[2] << "," << mv.proposal.dl[3]
                   << "," << mv.proposal_log_pi << "," << (mv.accepted ? 1 : 0) << ","
                   << mv.best_log_pi << "\n";
    }
    std::sort(percentiles.begin(), percentiles.end());
    const double median = percentiles[percentiles.size() / 2];
    std::printf("%d samples, median chain percentile %.1f (K=%d%s)\n", n, median, k_moves,
                enumerate_mode ? ", enumeration mode" : "");
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"joint localization + segmentation object extraction"};
    app.set_version_flag("--version", kVersion);
    app.require_subcommand(1);

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "render a synthetic shape dataset");
    std::string gen_out = "data";
    SynthConfig synth;
    gen->add_option("--out", gen_out, "output directory")->required();
    gen->add_option("--count", synth.count, "number of images");
    gen->add_option("--seed", synth.seed, "RNG seed");
    gen->add_option("--size", synth.size, "image side length");
    gen->add_option("--min-radius", synth.min_radius, "smallest object radius");
    gen->add_option("--max-radius", synth.max_radius, "largest object radius");
    gen->add_option("--color-margin", synth.color_margin, "min fg/bg color distance");
    gen->add_option("--max-distractors", synth.max_distractors, "clutter shapes per image");

    // train
    auto* train = app.add_subcommand("train", "EM training of both networks");
    std::string train_data, train_out = "run", profile = "desk", net_config, latent = "mcmc";
    TrainConfig tc;
    train->add_option("--data", train_data, "dataset directory")->required();
    train->add_option("--out", train_out, "output directory");
    train->add_option("--profile", profile, "network profile: desk|paper");
    train->add_option("--net-config", net_config, "network config JSON (overrides profile)");
    train->add_option("--latent-mode", latent, "mcmc|enumerate|zero");
    train->add_option("--eps1", tc.eps1, "segmentation learning rate");
    train->add_option("--eps2", tc.eps2, "localization FC learning rate (conv = eps2/100)");
    train->add_option("--momentum", tc.momentum, "SGD momentum (0 = plain SGD)");
    train->add_option("--m-passes", tc.m_passes, "M-step passes per E-step");
    train->add_option("--warmup-epochs", tc.warmup_epochs,
                      "train at zero adjustment first (localization warm-up)");
    train->add_option("--latent-k", tc.k_moves, "MCMC moves per sample per epoch");
    train->add_option("--epochs", tc.epochs, "epoch budget");
    train->add_option("--batch-size", tc.batch_size, "minibatch size");
    train->add_option("--seed", tc.seed, "RNG seed");
    train->add_option("--threads", tc.threads, "worker threads (1 = reproducibility mode)");
    train->add_flag("--cold-start,!--warm-start", [&tc](int64_t v) { tc.warm_start = v <= 0; },
                    "chain init at zero each epoch instead of previous adjustment");
    train->add_flag("--shared-stats", tc.shared_stats, "pool proposal stats across samples");
    train->add_flag("--per-batch", tc.per_batch_alternation, "alternate E/M per minibatch");
    train->add_option("--slic-segments", tc.slic_segments, "superpixel target count");
    train->add_option("--slic-compactness", tc.slic_compactness, "SLIC compactness");
    train->add_option("--pc-samples", tc.pc_samples, "perimeter samples c");
    train->add_option("--checkpoint-every", tc.checkpoint_every,
                      "epoch interval for numbered checkpoints (0 = last/final only)");
    train->add_flag("--dump-chains", tc.dump_chains, "write per-epoch chain trace CSVs");
    train->add_option("--resume", tc.resume_path, "continue from a checkpoint");
    train->add_option("--early-stop-rel", tc.early_stop_rel, "relative improvement threshold");
    train->add_option("--early-stop-window", tc.early_stop_window, "epochs per early-stop check");

    // infer
    auto* infer = app.add_subcommand("infer", "predict box + mask for image(s)");
    std::string inf_ckpt, inf_input, inf_out = "infer_out";
    infer->add_option("--checkpoint", inf_ckpt, "trained checkpoint")->required();
    infer->add_option("--input", inf_input, "PNG image or directory of PNGs")->required();
    infer->add_option("--out", inf_out, "output directory");

    // eval
    auto* eval = app.add_subcommand("eval", "score a checkpoint on a dataset");
    std::string ev_ckpt, ev_data, ev_out = "eval_out";
    int ev_threads = 1;
    uint64_t ev_seed = 0;
    eval->add_option("--checkpoint", ev_ckpt, "trained checkpoint")->required();
    eval->add_option("--data", ev_data, "dataset directory")->required();
    eval->add_option("--out", ev_out, "output directory");
    eval->add_option("--threads", ev_threads, "worker threads");
    eval->add_option("--seed", ev_seed, "recorded in the manifest");

    // gradcheck
    auto* gc = app.add_subcommand("gradcheck", "finite-difference check of every layer kind");
    uint64_t gc_seed = 0;
    int gc_configs = 20;
    std::string gc_corrupt;
    gc->add_option("--seed", gc_seed, "RNG seed");
    gc->add_option("--configs", gc_configs, "random configurations per layer kind");
    gc->add_option("--corrupt", gc_corrupt, "bias one layer kind's gradients (negative control)");

    // sample-diag
    auto* diag = app.add_subcommand("sample-diag", "chain quality vs exhaustive enumeration");
    std::string dg_ckpt, dg_data, dg_out = "diag_out";
    int dg_k = 20, dg_samples = 20;
    uint64_t dg_seed = 0;
    bool dg_enum = false;
    diag->add_option("--checkpoint", dg_ckpt, "trained checkpoint")->required();
    diag->add_option("--data", dg_data, "dataset directory")->required();
    diag->add_option("--out", dg_out, "output directory");
    diag->add_option("--k", dg_k, "chain moves");
    diag->add_option("--samples", dg_samples, "samples to diagnose");
    diag->add_option("--seed", dg_seed, "RNG seed");
    diag->add_flag("--enumerate", dg_enum, "use exhaustive enumeration instead of the chain");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;  // help/version -> 0, usage errors -> 2
    }

    try {
        if (gen->parsed()) return cmd_gen_data(out_dir_override(gen_out), synth);
        if (train->parsed()) {
            tc.latent_mode = latent_mode_from_name(latent);
            return cmd_train(train_data, out_dir_override(train_out),
                             resolve_model(profile, net_config), tc);
        }
        if (infer->parsed()) return cmd_infer(inf_ckpt, inf_input, out_dir_override(inf_out));
        if (eval->parsed())
            return cmd_eval(ev_ckpt, ev_data, out_dir_override(ev_out), ev_threads, ev_seed);
        if (gc->parsed()) return cmd_gradcheck(gc_seed, gc_configs, gc_corrupt);
        if (diag->parsed())
            return cmd_sample_diag(dg_ckpt, dg_data, out_dir_override(dg_out), dg_k, dg_samples,
                                   dg_seed, dg_enum);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
