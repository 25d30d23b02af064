#include "objex/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace objex {

namespace {

constexpr double kProbEps = 1e-7;  // probability clamp inside the log terms

int step_index(int v) {
    for (int i = 0; i < 5; ++i)
        if (kLatticeSteps[i] == v) return i;
    throw std::invalid_argument("adjustment component " + std::to_string(v) +
                                " is not a lattice member");
}

// Cholesky factorization of a 4x4 SPD matrix; false if not PD.
bool cholesky4(const std::array<double, 16>& a, std::array<double, 16>& l) {
    l.fill(0.0);
    for (int i = 0; i < 4; ++i) {
        for (int j = 0; j <= i; ++j) {
            double s = a[i * 4 + j];
            for (int k = 0; k < j; ++k) s -= l[i * 4 + k] * l[j * 4 + k];
            if (i == j) {
                if (s <= 0.0) return false;
                l[i * 4 + i] = std::sqrt(s);
            } else {
                l[i * 4 + j] = s / l[j * 4 + j];
            }
        }
    }
    return true;
}

// Quadratic form (x-mu)^T Sigma^-1 (x-mu) via forward substitution on L.
double mahalanobis2(const std::array<double, 16>& l, const std::array<double, 4>& d) {
    std::array<double, 4> y{};
    for (int i = 0; i < 4; ++i) {
        double s = d[i];
        for (int k = 0; k < i; ++k) s -= l[i * 4 + k] * y[k];
        y[i] = s / l[i * 4 + i];
    }
    return y[0] * y[0] + y[1] * y[1] + y[2] * y[2] + y[3] * y[3];
}

}  // namespace

int lattice_index(const LatentAdjustment& a) {
    int idx = 0;
    for (int k = 0; k < 4; ++k) idx = idx * 5 + step_index(a.dl[k]);
    return idx;
}

LatentAdjustment lattice_point(int index) {
    LatentAdjustment a;
    for (int k = 3; k >= 0; --k) {
        a.dl[k] = kLatticeSteps[index % 5];
        index /= 5;
    }
    return a;
}

void ProposalStats::add(const LatentAdjustment& a) {
    history.push_back(a.dl);
    const double n = static_cast<double>(history.size());
    mu = {0, 0, 0, 0};
    for (const auto& h : history)
        for (int k = 0; k < 4; ++k) mu[k] += h[k];
    for (int k = 0; k < 4; ++k) mu[k] /= n;

    std::array<double, 16> cov{};
    for (const auto& h : history)
        for (int i = 0; i < 4; ++i)
            for (int j = 0; j < 4; ++j) cov[i * 4 + j] += (h[i] - mu[i]) * (h[j] - mu[j]);
    for (auto& v : cov) v /= n;

    // Blend with the sigma0 = 5 prior so short or constant histories cannot
    // collapse the proposal to a point mass; the chain keeps exploring early
    // and concentrates as evidence accumulates. The ridge keeps sigma PD for
    // any history.
    const double prior_weight = 5.0;
    const double w = prior_weight / (n + prior_weight);
    for (int i = 0; i < 16; ++i) cov[i] *= 1.0 - w;
    for (int i = 0; i < 4; ++i) cov[i * 4 + i] += w * 25.0 + 1e-3;
    sigma = cov;
}

int ProposalDist::draw(Rng& rng) const {
    const double u = rng.uniform();
    const auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
    return static_cast<int>(std::min<std::ptrdiff_t>(it - cdf.begin(), kLatticeSize - 1));
}

std::array<double, kLatticeSize> boundary_term(const SuperpixelMap& map, const Sample& sample,
                                               const ModelConfig& cfg, int c) {
    const Box tight = sample.tight_box(cfg.frame);
    std::array<double, kLatticeSize> pc;
    for (int i = 0; i < kLatticeSize; ++i) {
        const LatentAdjustment a = lattice_point(i);
        const Box adj = clamp_box({tight.x1 + a.dl[0], tight.y1 + a.dl[1], tight.x2 + a.dl[2],
                                   tight.y2 + a.dl[3]},
                                  cfg.frame, cfg.min_box_side);
        const Box px = box_to_pixels(adj, cfg.frame, sample.image.w, sample.image.h);
        pc[i] = boundary_fraction(map, px, c);
    }
    return pc;
}

ProposalDist build_proposal(const ProposalStats& stats, const std::array<double, kLatticeSize>& pc,
                            int c) {
    std::array<double, 16> l;
    std::array<double, 16> sigma = stats.sigma;
    // stats.add keeps sigma PD; the ridge here only guards hand-built stats.
    while (!cholesky4(sigma, l))
        for (int i = 0; i < 4; ++i) sigma[i * 4 + i] += 1e-3;

    const double eps_pc = 1.0 / static_cast<double>(c);
    ProposalDist q;
    double max_log = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < kLatticeSize; ++i) {
        const LatentAdjustment a = lattice_point(i);
        std::array<double, 4> d;
        for (int k = 0; k < 4; ++k) d[k] = a.dl[k] - stats.mu[k];
        q.log_pmf[i] = -0.5 * mahalanobis2(l, d) + std::log(std::max(pc[i], eps_pc));
        max_log = std::max(max_log, q.log_pmf[i]);
    }
    double z = 0.0;
    for (int i = 0; i < kLatticeSize; ++i) z += std::exp(q.log_pmf[i] - max_log);
    const double log_z = max_log + std::log(z);
    double acc = 0.0;
    for (int i = 0; i < kLatticeSize; ++i) {
        q.log_pmf[i] -= log_z;
        acc += std::exp(q.log_pmf[i]);
        q.cdf[i] = acc;
    }
    q.cdf[kLatticeSize - 1] = 1.0;
    return q;
}

LatentAdjustment propose(const ProposalStats& stats, const SuperpixelMap& map,
                         const Sample& sample, const ModelConfig& cfg, Rng& rng) {
    const auto pc = boundary_term(map, sample, cfg);
    const ProposalDist q = build_proposal(stats, pc);
    return lattice_point(q.draw(rng));
}

// ---------------------------------------------------------------------------
// Scoring

SampleScorer::SampleScorer(const Sample& sample, const Network& loc, const Network& seg,
                           const ModelConfig& cfg)
    : sample_(sample), seg_(seg), cfg_(cfg), memo_(kLatticeSize) {
    tight_ = sample.tight_box(cfg.frame);
    const Tensor out = loc.forward(image_to_tensor(sample.image, loc.config().in_h,
                                                   loc.config().in_w));
    for (int k = 0; k < 4; ++k) loc_out_[k] = out[k];
}

ScoreParts SampleScorer::score(const LatentAdjustment& a) {
    const int idx = lattice_index(a);
    if (memo_[idx]) return *memo_[idx];

    ScoreParts parts;
    // Localization residual against the raw (unclamped) reference, per the
    // squared-error likelihood.
    const double target[4] = {tight_.x1 + a.dl[0], tight_.y1 + a.dl[1], tight_.x2 + a.dl[2],
                              tight_.y2 + a.dl[3]};
    for (int k = 0; k < 4; ++k) {
        const double d = loc_out_[k] - target[k];
        parts.loc_residual += d * d;
    }

    // Segmentation likelihood of the crop at the clamped reference box.
    const Box adj = clamp_box({target[0], target[1], target[2], target[3]}, cfg_.frame,
                              cfg_.min_box_side);
    const CropResult cr = crop_resize(sample_.image, adj, cfg_);
    const Mask target_m = target_mask(sample_.mask, cr.px_box, cfg_.mask_side);
    const Tensor p = seg_.forward(image_to_tensor(cr.crop, cr.crop.h, cr.crop.w));
    ++seg_forwards_;

    double ce = 0.0;
    for (int j = 0; j < p.size(); ++j) {
        const double pj = std::clamp(p[j], kProbEps, 1.0 - kProbEps);
        ce -= target_m.v[j] ? std::log(pj) : std::log(1.0 - pj);
    }
    parts.seg_ce = ce;

    memo_[idx] = parts;
    return parts;
}

double log_invariant(const Sample& sample, const LatentAdjustment& a, const Network& loc,
                     const Network& seg, const ModelConfig& cfg) {
    SampleScorer scorer(sample, loc, seg, cfg);
    return scorer.log_pi(a);
}

// ---------------------------------------------------------------------------
// Chain

void mh_step(ChainState& state, const ProposalDist& q, const LogPiFn& log_pi, Rng& rng,
             ChainMove* trace) {
    const int prop_idx = q.draw(rng);
    const LatentAdjustment proposal = lattice_point(prop_idx);
    const double prop_log_pi = log_pi(proposal);
    const int cur_idx = lattice_index(state.current);

    // log alpha = log pi(x') + log q(x'->x) - log pi(x) - log q(x->x').
    // The proposal is state-independent within a chain, so q(x'->x) = q(x).
    const double log_alpha =
        prop_log_pi + q.log_pmf[cur_idx] - state.current_log_pi - q.log_pmf[prop_idx];
    const double u = rng.uniform();
    const bool accept = log_alpha >= 0.0 || std::log(u + 1e-300) < log_alpha;

    if (accept) {
        state.current = proposal;
        state.current_log_pi = prop_log_pi;
    }
    if (prop_log_pi > state.best_log_pi) {
        state.best = proposal;
        state.best_log_pi = prop_log_pi;
    }
    ++state.moves_done;

    if (trace) {
        trace->move = state.moves_done;
        trace->proposal = proposal;
        trace->proposal_log_pi = prop_log_pi;
        trace->accepted = accept;
        trace->current = state.current;
        trace->best_log_pi = state.best_log_pi;
    }
}

ChainState run_chain_generic(const LogPiFn& log_pi, const ProposalDist& q,
                             const LatentAdjustment& init, int k_moves, Rng& rng,
                             std::vector<ChainMove>* trace) {
    if (k_moves < 1) throw std::invalid_argument("run_chain needs K >= 1");
    ChainState state;
    state.current = init;
    state.current_log_pi = log_pi(init);
    state.best = init;
    state.best_log_pi = state.current_log_pi;
    for (int k = 0; k < k_moves; ++k) {
        ChainMove mv;
        mh_step(state, q, log_pi, rng, trace ? &mv : nullptr);
        if (trace) trace->push_back(mv);
    }
    return state;
}

LatentAdjustment run_chain(const Sample& sample, ProposalStats& stats,
                           const std::array<double, kLatticeSize>& pc, const Network& loc,
                           const Network& seg, const ModelConfig& cfg, int k_moves, Rng& rng,
                           const LatentAdjustment& init, std::vector<ChainMove>* trace,
                           double* best_log_pi) {
    SampleScorer scorer(sample, loc, seg, cfg);
    const ProposalDist q = build_proposal(stats, pc);
    const ChainState state = run_chain_generic(
        [&scorer](const LatentAdjustment& a) { return scorer.log_pi(a); }, q, init, k_moves, rng,
        trace);
    stats.add(state.best);
    if (best_log_pi) *best_log_pi = state.best_log_pi;
    return state.best;
}

LatentAdjustment enumerate_best(const LogPiFn& log_pi, double* best_log_pi,
                                std::array<double, kLatticeSize>* table) {
    int best_idx = 0;
    double best = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < kLatticeSize; ++i) {
        const double v = log_pi(lattice_point(i));
        if (table) (*table)[i] = v;
        if (v > best) {  // strict: lexicographically smallest index wins ties
            best = v;
            best_idx = i;
        }
    }
    if (best_log_pi) *best_log_pi = best;
    return lattice_point(best_idx);
}

LatentAdjustment enumerate_best(const Sample& sample, const Network& loc, const Network& seg,
                                const ModelConfig& cfg, double* best_log_pi,
                                std::array<double, kLatticeSize>* table) {
    SampleScorer scorer(sample, loc, seg, cfg);
    return enumerate_best([&scorer](const LatentAdjustment& a) { return scorer.log_pi(a); },
                          best_log_pi, table);
}

}  // namespace objex
