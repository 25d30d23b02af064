#pragma once

#include <array>
#include <functional>
#include <optional>
#include <vector>

#include "objex/dataset.hpp"
#include "objex/network.hpp"
#include "objex/pipeline.hpp"
#include "objex/rng.hpp"
#include "objex/superpixels.hpp"

namespace objex {

// Discrete adjustment lattice: each of the four box coordinates moves by one
// of {-10,-5,0,5,10} normalized units; 5^4 = 625 joint proposals.
inline constexpr std::array<int, 5> kLatticeSteps = {-10, -5, 0, 5, 10};
inline constexpr int kLatticeSize = 625;

struct LatentAdjustment {
    std::array<int, 4> dl{0, 0, 0, 0};
    bool operator==(const LatentAdjustment&) const = default;
};

// Lexicographic index over (dl[0], dl[1], dl[2], dl[3]); index 0 is
// (-10,-10,-10,-10).
int lattice_index(const LatentAdjustment& a);
LatentAdjustment lattice_point(int index);

// Mean/covariance of the adjustments accepted in previous EM iterations,
// driving the Gaussian factor of the proposal. Before any history exists the
// prior is mu = 0, sigma = diag(25) (one lattice step per axis).
struct ProposalStats {
    std::array<double, 4> mu{0, 0, 0, 0};
    std::array<double, 16> sigma{25, 0, 0, 0, 0, 25, 0, 0, 0, 0, 25, 0, 0, 0, 0, 25};
    std::vector<std::array<int, 4>> history;

    // Appends one chosen adjustment and refreshes mu/sigma. Sigma gets a
    // +1e-3 I ridge while history is short (< 5) or the covariance is not
    // positive-definite.
    void add(const LatentAdjustment& a);
};

struct ChainState {
    LatentAdjustment current;
    double current_log_pi = 0.0;
    LatentAdjustment best;
    double best_log_pi = 0.0;
    int moves_done = 0;
};

// Exact proposal mass function over the lattice:
//   q(x) proportional to N(x | mu, sigma) * max(P_c(x), eps_pc).
// The Gaussian is evaluated at the lattice points and normalized over them,
// so q is a proper pmf and the MH ratio is computable exactly.
struct ProposalDist {
    std::array<double, kLatticeSize> log_pmf;
    std::array<double, kLatticeSize> cdf;

    int draw(Rng& rng) const;
};

// P_c per lattice point for one sample: the fraction of c equidistant
// perimeter samples of clamp(L + dl) lying on superpixel boundaries.
// Depends only on the image and box, so callers cache it per sample.
std::array<double, kLatticeSize> boundary_term(const SuperpixelMap& map, const Sample& sample,
                                               const ModelConfig& cfg, int c = 200);

ProposalDist build_proposal(const ProposalStats& stats,
                            const std::array<double, kLatticeSize>& pc, int c = 200);

LatentAdjustment propose(const ProposalStats& stats, const SuperpixelMap& map,
                         const Sample& sample, const ModelConfig& cfg, Rng& rng);

// log pi(dl) evaluator plus the cost split it is derived from.
struct ScoreParts {
    double loc_residual = 0.0;  // || F_loc(I) - L - dl ||^2
    double seg_ce = 0.0;        // pixelwise cross-entropy of the crop at L + dl
    double log_pi() const { return -loc_residual - seg_ce; }
};

// Scores lattice points for one sample with fixed networks. The localization
// forward runs once; segmentation forwards are memoized per lattice point, so
// chains that revisit states pay nothing.
class SampleScorer {
public:
    SampleScorer(const Sample& sample, const Network& loc, const Network& seg,
                 const ModelConfig& cfg);

    ScoreParts score(const LatentAdjustment& a);
    double log_pi(const LatentAdjustment& a) { return score(a).log_pi(); }

    int seg_forwards() const { return seg_forwards_; }

private:
    const Sample& sample_;
    const Network& seg_;
    const ModelConfig& cfg_;
    Box tight_;
    std::array<double, 4> loc_out_;
    std::vector<std::optional<ScoreParts>> memo_;
    int seg_forwards_ = 0;
};

// Single evaluation of the invariant distribution (both forward passes).
double log_invariant(const Sample& sample, const LatentAdjustment& a, const Network& loc,
                     const Network& seg, const ModelConfig& cfg);

using LogPiFn = std::function<double(const LatentAdjustment&)>;

struct ChainMove {
    int move = 0;
    LatentAdjustment proposal;
    double proposal_log_pi = 0.0;
    bool accepted = false;
    LatentAdjustment current;
    double best_log_pi = 0.0;
};

// One Metropolis-Hastings transition with the exact acceptance ratio
//   alpha = min(1, pi(x') q(x) / (pi(x) q(x'))).
void mh_step(ChainState& state, const ProposalDist& q, const LogPiFn& log_pi, Rng& rng,
             ChainMove* trace = nullptr);

// K moves from `init`; returns the best-scoring state visited (the chain
// initialization counts as visited).
ChainState run_chain_generic(const LogPiFn& log_pi, const ProposalDist& q,
                             const LatentAdjustment& init, int k_moves, Rng& rng,
                             std::vector<ChainMove>* trace = nullptr);

// Network-backed chain for one sample. Appends the chosen adjustment to
// stats.history and refreshes mu/sigma.
LatentAdjustment run_chain(const Sample& sample, ProposalStats& stats,
                           const std::array<double, kLatticeSize>& pc, const Network& loc,
                           const Network& seg, const ModelConfig& cfg, int k_moves, Rng& rng,
                           const LatentAdjustment& init = {},
                           std::vector<ChainMove>* trace = nullptr,
                           double* best_log_pi = nullptr);

// Exhaustive E-step: argmax of log pi over all 625 lattice points,
// lexicographic tie-break.
LatentAdjustment enumerate_best(const LogPiFn& log_pi, double* best_log_pi = nullptr,
                                std::array<double, kLatticeSize>* table = nullptr);
LatentAdjustment enumerate_best(const Sample& sample, const Network& loc, const Network& seg,
                                const ModelConfig& cfg, double* best_log_pi = nullptr,
                                std::array<double, kLatticeSize>* table = nullptr);

}  // namespace objex
