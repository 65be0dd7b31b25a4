#pragma once

#include <deque>
#include <optional>
#include <vector>

#include "uikf/rkf.hpp"

namespace uikf {

/// Discrete input hypotheses {N_1, ..., N_K}, pairwise distinct, K >= 2.
struct ModeSet {
    std::vector<Vector> modes;

    explicit ModeSet(std::vector<Vector> values);
    int count() const { return static_cast<int>(modes.size()); }
    int input_dim() const { return static_cast<int>(modes.front().size()); }
};

/// Probability weight per mode; sums to one, floored at `floor` so a dead
/// mode stays revivable when the true input switches mid-run.
struct ModeWeights {
    Vector weights;
    double floor = 1e-6;

    static ModeWeights uniform(int count, double floor = 1e-6);
};

/// Sliding lock rule: when one mode has been the weight argmax for at least
/// 90% of the last window_len steps, decisions freeze on it until the rule
/// breaks.
struct DecisionState {
    std::optional<int> locked;
    std::deque<int> history;
    int window_len = 50;
};

/// Density of the innovation under mode N_i: N(y_tilde; C G N_i, S).
double mode_log_likelihood(const Innovation& innov, const SystemModel& model,
                           const Vector& mode, int step);
double mode_likelihood(const Innovation& innov, const SystemModel& model,
                       const Vector& mode, int step);

struct WeightUpdateResult {
    ModeWeights weights;
    bool all_zero = false; // likelihoods vanished; weights left unchanged
};

/// Bayes update w_i <- w_i L_i / sum_j w_j L_j, floored and renormalized.
/// All-zero likelihoods leave the weights unchanged and set the flag; use the
/// log-space path when densities underflow.
WeightUpdateResult update_weights(const ModeWeights& w, const Vector& likelihoods);

/// Same update driven by log-likelihoods via log-sum-exp; immune to underflow.
ModeWeights update_weights_log(const ModeWeights& w, const Vector& log_likelihoods);

struct Decision {
    Vector input;
    int mode_index = 0;
    DecisionState state;
};

/// Per-step hard decision: argmax of the likelihoods (ties to the lowest
/// index). The weight-argmax history drives the lock rule; a locked mode is
/// returned unchanged until it loses its window majority.
Decision decide_input(const ModeWeights& w, const Vector& log_likelihoods,
                      DecisionState dec, const ModeSet& modes);

/// Soft-decision compensated update
///   x <- A x + K (y - C A x) + (I - K C) G sum_i w_i N_i
/// with the standard Kalman gain K; covariance is the Joseph form for K
/// (shared by every mode hypothesis).
GaussianBelief amm_update_state(const GaussianBelief& belief, const Vector& y,
                                const SystemModel& model, const ModeSet& modes,
                                const ModeWeights& w);

/// Mixture covariance P = sum_i w_i [P_i + e_i e_i^T], e_i = mixed - mean_i.
Matrix mixed_covariance(const std::vector<Matrix>& sub_covs,
                        const std::vector<Vector>& sub_means, const Vector& mixed_mean,
                        const ModeWeights& w);

struct DetectionResult {
    double p_d = 0.5;
    bool degenerate = false; // equal hypothesis means
};

/// Single-step right-decision probability of a scalar two-hypothesis test.
/// The decision boundary is the equal-density point of the two hypothesis
/// densities (for unequal variances, the crossing nearest the segment between
/// the means); P_D is the mass the true hypothesis `a` places on its side of
/// the boundary, the side away from mean_b. Equal-variance closed form:
/// Phi(|mean_a - mean_b| / (2 sigma)).
DetectionResult detection_probability(double mean_a, double mean_b, double sigma_a,
                                      double sigma_b);

/// Multivariate reduction: projects onto the S-whitened mode-difference
/// direction, where the test is scalar with unit variances and separation
/// equal to the Mahalanobis distance between the mode-conditioned innovation
/// means.
DetectionResult detection_probability_projected(const Matrix& cg, const Matrix& s,
                                                const Vector& mode_a,
                                                const Vector& mode_b);

struct AmmStepResult {
    GaussianBelief belief;
    ModeWeights weights;
    DecisionState decision_state;
    Vector input;
    int decided_mode = 0;
};

/// One multi-mode recursion: predict -> innovation -> per-mode likelihoods ->
/// weight update -> decision -> compensated state update -> mixture
/// covariance.
AmmStepResult amm_step(const GaussianBelief& belief, const Vector& y,
                       const SystemModel& model, const ModeSet& modes,
                       const ModeWeights& w, DecisionState dec);

} // namespace uikf
