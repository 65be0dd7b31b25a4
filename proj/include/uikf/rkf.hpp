#pragma once

#include <utility>

#include "uikf/lti_system.hpp"

namespace uikf {

/// Filter posterior: mean and covariance at step index `step` (x_{step|step}).
struct GaussianBelief {
    Vector mean;
    Matrix cov;
    int step = 0;
};

/// Measurement-prediction residual and its covariance S = C P_pred C^T + R.
struct Innovation {
    Vector value;
    Matrix cov;
};

/// Input estimate d_hat = M * innovation with Cov = M S M^T.
struct InputEstimate {
    Vector mean;
    Matrix cov;
    Matrix gain;
};

/// Prediction: x_pred = A x, P_pred = A P A^T + Q. The input term is absent
/// on purpose: d is unknown at prediction time.
std::pair<Vector, Matrix> predict(const GaussianBelief& belief, const SystemModel& model);

Innovation innovation(const Vector& y, const Vector& x_pred, const Matrix& p_pred,
                      const SystemModel& model, int step);

/// Minimum-variance unbiased input gain
///   M = [(CG)^T S^-1 (CG)]^-1 (CG)^T S^-1
/// satisfying M C G = I_m. Throws SingularInnovationCovariance /
/// RankDeficient on the respective singularities.
Matrix input_gain(const SystemModel& model, const Matrix& s, int step);

/// Same closed form, taking the combined matrix CG directly.
Matrix mvu_gain(const Matrix& cg, const Matrix& s);

InputEstimate estimate_input(const Matrix& gain, const Innovation& innov);

/// Joint state update with gain L = K + (I - K C) G M, K = P_pred C^T S^-1.
/// Covariance in Joseph form (I - L C) P (I - L C)^T + L R L^T, then
/// symmetrized. L C G = G holds whenever M C G = I, which cancels the
/// unknown-input term in the state error.
GaussianBelief update_state(const Vector& x_pred, const Matrix& p_pred,
                            const InputEstimate& input, const Innovation& innov,
                            const SystemModel& model, int step);

/// One recursion of the joint input/state filter:
/// predict -> innovation -> input_gain -> estimate_input -> update_state.
/// Consumes measurement y_{k+1} where k = belief.step; the returned input
/// estimate refers to d_k.
std::pair<GaussianBelief, InputEstimate> rkf_step(const GaussianBelief& belief,
                                                  const Vector& y,
                                                  const SystemModel& model);

/// Input-blind Kalman filter baseline; biased whenever d != 0.
GaussianBelief kf_step_blind(const GaussianBelief& belief, const Vector& y,
                             const SystemModel& model);

} // namespace uikf
