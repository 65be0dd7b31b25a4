#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "uikf/linalg.hpp"

namespace uikf {

/// A matrix that is either constant or supplied per step index.
/// Constant models are the common case; time-varying ones wrap a provider.
class MatrixSchedule {
public:
    /*implicit*/ MatrixSchedule(Matrix constant) : constant_(std::move(constant)) {}
    template <typename Derived>
    /*implicit*/ MatrixSchedule(const Eigen::MatrixBase<Derived>& constant)
        : constant_(constant) {}
    explicit MatrixSchedule(std::function<Matrix(int)> provider)
        : provider_(std::move(provider)) {}

    bool is_constant() const { return !provider_; }
    Matrix at(int step) const { return provider_ ? provider_(step) : constant_; }

private:
    Matrix constant_;
    std::function<Matrix(int)> provider_;
};

/// Linear time-varying system
///   x_{k+1} = A_k x_k + G_k d_k + w_k,   w ~ N(0, Q)
///   y_{k+1} = C_{k+1} x_{k+1} + v_{k+1}, v ~ N(0, R)
/// with state dimension n, input dimension m and measurement dimension p.
///
/// Construction validates: Q symmetric PSD, R symmetric PD, m <= p, and all
/// dimensions mutually consistent (checked at step 0 for scheduled matrices).
class SystemModel {
public:
    SystemModel(MatrixSchedule a, MatrixSchedule g, MatrixSchedule c, Matrix q, Matrix r);

    int n() const { return n_; }
    int m() const { return m_; }
    int p() const { return p_; }

    Matrix a(int step) const { return a_.at(step); }
    Matrix g(int step) const { return g_.at(step); }
    Matrix c(int step) const { return c_.at(step); }
    const Matrix& q() const { return q_; }
    const Matrix& r() const { return r_; }

private:
    MatrixSchedule a_, g_, c_;
    Matrix q_, r_;
    int n_ = 0, m_ = 0, p_ = 0;
};

/// Ground-truth simulation output. Lengths: states has T+1 entries,
/// inputs and measurements have T (measurement y_{k+1} follows state x_{k+1}).
struct Trajectory {
    std::vector<Vector> states;
    std::vector<Vector> inputs;
    std::vector<Vector> measurements;
    double dt = 1.0;
    std::uint64_t seed = 0;
};

struct RankReport {
    bool ok = false;
    int failed_step = -1;
    int rank_cg = 0;
    int rank_g = 0;
    std::string message;
};

/// Checks rank(C_k G_k) = rank(G_k) = m via singular values.
/// For scheduled matrices the first `steps` indices are checked.
RankReport validate_rank(const SystemModel& model, int steps = 1);

/// Draws x ~ N(0, Sigma). Accepts PSD-singular Sigma: Cholesky first, falling
/// back to an eigendecomposition with eigenvalues clamped at -1e-10 relative
/// tolerance (more negative throws std::invalid_argument).
///
/// Normal variates come from a fixed Box-Muller transform over mt19937_64
/// rather than std::normal_distribution, whose algorithm is
/// implementation-defined; traces must reproduce bit-exactly across standard
/// libraries.
class GaussianSampler {
public:
    explicit GaussianSampler(const Matrix& sigma);

    Vector sample(std::mt19937_64& rng) const;
    bool is_zero() const { return zero_; }

    static double standard_normal(std::mt19937_64& rng);

private:
    Matrix factor_; // factor_ * z reproduces Sigma
    bool zero_ = false;
};

/// Per-run noise source owning the RNG stream; draws process noise w_k then
/// measurement noise v_{k+1} in a fixed order each step.
class NoiseSource {
public:
    NoiseSource(const SystemModel& model, std::uint64_t seed);

    Vector process_noise();
    Vector measurement_noise();

private:
    GaussianSampler q_sampler_;
    GaussianSampler r_sampler_;
    std::mt19937_64 rng_;
};

/// One truth step: x_next = A x + G d + w, y_next = C x_next + v.
std::pair<Vector, Vector> step_truth(const SystemModel& model, const Vector& x,
                                     const Vector& d, NoiseSource& noise, int step = 0);

/// Repeated step_truth over T steps; deterministic given the seed.
Trajectory simulate(const SystemModel& model, const Vector& x0,
                    const std::function<Vector(int)>& input_signal, int steps,
                    std::uint64_t seed, double dt = 1.0);

} // namespace uikf
