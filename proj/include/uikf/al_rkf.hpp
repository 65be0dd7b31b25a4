#pragma once

#include "uikf/rkf.hpp"

namespace uikf {

/// Component-wise box prior on the input, in input units.
struct BoxConstraint {
    Vector lower;
    Vector upper;

    BoxConstraint(Vector lo, Vector hi);

    int dim() const { return static_cast<int>(lower.size()); }
    bool contains(const Vector& d, double tol = 0.0) const;
    Vector clamp(const Vector& d) const;
    /// Largest one-sided violation, 0 when inside.
    double violation(const Vector& d) const;
};

struct ALParams {
    double sigma = 1e3;          // base penalty factor, fixed per step
    double tol_step = 1e-6;      // outer threshold on ||M_{j+1} - M_j||_F
    double tol_grad = 1e-12;     // inner gradient tolerance, scaled by curvature
    int max_outer = 100;
    int max_inner = 2000;
    double constraint_tol = 1e-6;
    double sigma_growth = 1.0;   // > 1 enables x-growth on stalled feasibility
};

/// Multiplier state of the augmented Lagrangian. The equality constraint
/// h(M) = M C G - I is matrix-valued, so its multiplier mu is m x m with the
/// Frobenius inner product. lambda stacks the 2m inequality multipliers:
/// first the m lower-bound rows (g = M y - N1 >= 0), then the m upper-bound
/// rows (g = N2 - M y >= 0).
struct ALState {
    Matrix gain;
    Matrix mu;
    Vector lambda;
    int outer_iter = 0;

    static ALState initial(const Matrix& gain0);
};

/// Augmented Lagrangian value
///   Tr(M S M^T) - <mu, h(M)> + (sigma/2) ||h(M)||_F^2
///   + (1/2 sigma) sum_i { max(0, lambda_i - sigma g_i(M))^2 - lambda_i^2 }
/// with the squared-slack variables eliminated analytically.
double al_objective(const Matrix& gain, const Matrix& mu, const Vector& lambda,
                    double sigma, const Matrix& s, const Matrix& cg,
                    const Vector& y_tilde, const BoxConstraint& box);

struct InnerResult {
    Matrix gain;
    double grad_norm = 0.0;
    int iterations = 0;
    bool hit_max_iterations = false;
};

/// Minimizes al_objective in M by gradient descent with Armijo backtracking
/// (factor 0.5, slope 1e-4). The objective is convex piecewise-quadratic, so
/// descent converges globally; the trial step uses a Barzilai-Borwein
/// estimate to keep iteration counts practical at penalty-induced condition
/// numbers.
InnerResult inner_minimize(const ALState& state, const ALParams& params, const Matrix& s,
                           const Matrix& cg, const Vector& y_tilde,
                           const BoxConstraint& box, double sigma);

/// lambda_i <- max(0, lambda_i - sigma g_i(M)); mu <- mu - sigma h(M).
ALState update_multipliers(ALState state, double sigma, const Matrix& cg,
                           const Vector& y_tilde, const BoxConstraint& box);

struct ConstrainedGainResult {
    Matrix gain;
    bool converged = false;
    bool skipped = false;       // closed-form gain was already feasible
    int outer_iterations = 0;
    double eq_residual = 0.0;   // ||M CG - I||_F at the returned gain
    double box_violation = 0.0; // worst inequality violation of M y_tilde
    bool monotone_feasibility = true;
    bool inner_hit_max = false;
};

/// Per-step constrained input gain.
/// The closed-form gain M0 is computed first; if M0 y_tilde already satisfies
/// the box the solve is skipped and M0 is returned unchanged. Otherwise the
/// multiplier loop runs until ||M_{j+1} - M_j||_F < tol_step or max_outer.
/// `converged` additionally requires both constraint residuals within
/// constraint_tol; otherwise the best iterate is returned with its residuals
/// and the caller decides whether to clamp or accept.
ConstrainedGainResult solve_constrained_gain(const Matrix& s, const Matrix& cg,
                                             const Vector& y_tilde,
                                             const BoxConstraint& box,
                                             const ALParams& params);

struct AlRkfStepResult {
    GaussianBelief belief;
    InputEstimate input;
    ConstrainedGainResult solve;
};

/// rkf_step with the input gain replaced by the box-constrained solution.
/// The state update is the same joint-gain update; only M changes. The input
/// estimate is never clamped here even if the solver reports no convergence.
AlRkfStepResult al_rkf_step(const GaussianBelief& belief, const Vector& y,
                            const SystemModel& model, const BoxConstraint& box,
                            const ALParams& params);

} // namespace uikf
