#include "uikf/lti_system.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "uikf/errors.hpp"

namespace uikf {

namespace {

void require(bool cond, const std::string& what) {
    if (!cond) throw std::invalid_argument(what);
}

} // namespace

SystemModel::SystemModel(MatrixSchedule a, MatrixSchedule g, MatrixSchedule c, Matrix q,
                         Matrix r)
    : a_(std::move(a)), g_(std::move(g)), c_(std::move(c)), q_(std::move(q)),
      r_(std::move(r)) {
    const Matrix a0 = a_.at(0);
    const Matrix g0 = g_.at(0);
    const Matrix c0 = c_.at(0);
    n_ = static_cast<int>(a0.rows());
    m_ = static_cast<int>(g0.cols());
    p_ = static_cast<int>(c0.rows());

    require(a0.rows() == a0.cols(), "A must be square");
    require(g0.rows() == n_, "G row count must equal n");
    require(c0.cols() == n_, "C column count must equal n");
    require(q_.rows() == n_ && q_.cols() == n_, "Q must be n x n");
    require(r_.rows() == p_ && r_.cols() == p_, "R must be p x p");
    require(m_ >= 1 && p_ >= 1 && n_ >= 1, "dimensions must be positive");
    require(m_ <= p_, "m <= p is required for the input rank condition");

    require(is_symmetric(q_), "Q must be symmetric");
    require(is_symmetric(r_), "R must be symmetric");

    Eigen::SelfAdjointEigenSolver<Matrix> eq(q_, Eigen::EigenvaluesOnly);
    const double q_scale = std::max(1.0, eq.eigenvalues().cwiseAbs().maxCoeff());
    require(eq.eigenvalues().minCoeff() >= -1e-10 * q_scale,
            "Q must be positive semidefinite");

    Eigen::SelfAdjointEigenSolver<Matrix> er(r_, Eigen::EigenvaluesOnly);
    require(er.eigenvalues().minCoeff() > 0.0, "R must be positive definite");
}

RankReport validate_rank(const SystemModel& model, int steps) {
    RankReport report;
    for (int k = 0; k < std::max(1, steps); ++k) {
        const Matrix g = model.g(k);
        const Matrix cg = model.c(k + 1) * g;
        const int rank_g = numerical_rank(g);
        const int rank_cg = numerical_rank(cg);
        if (rank_cg != model.m() || rank_g != model.m()) {
            report.ok = false;
            report.failed_step = k;
            report.rank_cg = rank_cg;
            report.rank_g = rank_g;
            std::ostringstream os;
            os << "rank condition failed at step " << k << ": rank(CG)=" << rank_cg
               << ", rank(G)=" << rank_g << ", m=" << model.m();
            report.message = os.str();
            return report;
        }
        report.rank_cg = rank_cg;
        report.rank_g = rank_g;
    }
    report.ok = true;
    report.message = "rank(CG) = rank(G) = m";
    return report;
}

GaussianSampler::GaussianSampler(const Matrix& sigma) {
    if (!is_symmetric(sigma)) {
        throw std::invalid_argument("noise covariance must be symmetric");
    }
    if (sigma.norm() == 0.0) {
        factor_ = Matrix::Zero(sigma.rows(), sigma.cols());
        zero_ = true;
        return;
    }
    Eigen::LLT<Matrix> llt(sigma);
    if (llt.info() == Eigen::Success) {
        factor_ = llt.matrixL();
        return;
    }
    // PSD-but-singular: eigendecomposition, clamping slightly negative
    // eigenvalues at -1e-10 relative tolerance.
    Eigen::SelfAdjointEigenSolver<Matrix> eig(sigma);
    const Vector& ev = eig.eigenvalues();
    const double scale = std::max(1.0, ev.cwiseAbs().maxCoeff());
    Vector clamped = ev;
    for (int i = 0; i < ev.size(); ++i) {
        if (ev(i) < -1e-10 * scale) {
            throw std::invalid_argument("noise covariance has negative eigenvalue " +
                                        std::to_string(ev(i)));
        }
        clamped(i) = std::max(0.0, ev(i));
    }
    factor_ = eig.eigenvectors() * clamped.cwiseSqrt().asDiagonal();
}

double GaussianSampler::standard_normal(std::mt19937_64& rng) {
    // Box-Muller, cosine branch only; u1 in (0, 1], u2 in [0, 1).
    const double u1 = (static_cast<double>(rng() >> 11) + 1.0) * 0x1.0p-53;
    const double u2 = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

Vector GaussianSampler::sample(std::mt19937_64& rng) const {
    const int dim = static_cast<int>(factor_.rows());
    if (zero_) return Vector::Zero(dim);
    Vector z(dim);
    for (int i = 0; i < dim; ++i) z(i) = standard_normal(rng);
    return factor_ * z;
}

NoiseSource::NoiseSource(const SystemModel& model, std::uint64_t seed)
    : q_sampler_(model.q()), r_sampler_(model.r()), rng_(seed) {}

Vector NoiseSource::process_noise() { return q_sampler_.sample(rng_); }

Vector NoiseSource::measurement_noise() { return r_sampler_.sample(rng_); }

std::pair<Vector, Vector> step_truth(const SystemModel& model, const Vector& x,
                                     const Vector& d, NoiseSource& noise, int step) {
    const Vector x_next =
        model.a(step) * x + model.g(step) * d + noise.process_noise();
    const Vector y_next = model.c(step + 1) * x_next + noise.measurement_noise();
    return {x_next, y_next};
}

Trajectory simulate(const SystemModel& model, const Vector& x0,
                    const std::function<Vector(int)>& input_signal, int steps,
                    std::uint64_t seed, double dt) {
    if (steps < 1) throw std::invalid_argument("simulate requires steps >= 1");
    if (x0.size() != model.n()) throw std::invalid_argument("x0 dimension mismatch");

    Trajectory traj;
    traj.dt = dt;
    traj.seed = seed;
    traj.states.reserve(static_cast<std::size_t>(steps) + 1);
    traj.inputs.reserve(steps);
    traj.measurements.reserve(steps);

    NoiseSource noise(model, seed);
    Vector x = x0;
    traj.states.push_back(x);
    for (int k = 0; k < steps; ++k) {
        const Vector d = input_signal(k);
        auto [x_next, y_next] = step_truth(model, x, d, noise, k);
        traj.states.push_back(x_next);
        traj.inputs.push_back(d);
        traj.measurements.push_back(y_next);
        x = x_next;
    }
    return traj;
}

} // namespace uikf
