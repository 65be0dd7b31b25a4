#include <doctest.h>

#include <cmath>
#include <random>

#include "uikf/errors.hpp"
#include "uikf/rkf.hpp"

using namespace uikf;

namespace {

SystemModel scalar_model(double a, double g, double c, double q, double r) {
    return SystemModel(Matrix::Constant(1, 1, a), Matrix::Constant(1, 1, g),
                       Matrix::Constant(1, 1, c), Matrix::Constant(1, 1, q),
                       Matrix::Constant(1, 1, r));
}

Matrix random_spd(int n, std::mt19937_64& rng, double ridge = 0.1) {
    std::normal_distribution<double> normal;
    Matrix a(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) a(i, j) = normal(rng);
    return a * a.transpose() + ridge * Matrix::Identity(n, n);
}

} // namespace

TEST_CASE("predict leaves the belief unchanged for A=I, Q=0") {
    SystemModel model = scalar_model(1.0, 1.0, 1.0, 0.0, 1.0);
    GaussianBelief belief{Vector::Constant(1, 2.0), Matrix::Constant(1, 1, 0.7), 0};
    auto [x, p] = predict(belief, model);
    CHECK(x(0) == 2.0);
    CHECK(p(0, 0) == 0.7);
}

TEST_CASE("predict scalar arithmetic") {
    SystemModel model = scalar_model(2.0, 1.0, 1.0, 0.5, 1.0);
    GaussianBelief belief{Vector::Zero(1), Matrix::Constant(1, 1, 1.0), 0};
    auto [x, p] = predict(belief, model);
    CHECK(p(0, 0) == doctest::Approx(4.5));
}

TEST_CASE("predict matches the direct matrix product on a 2-D model") {
    Matrix a(2, 2);
    a << 1.0, 2.5, 0.0, 1.0;
    Matrix g(2, 1);
    g << 0.0625, 0.05;
    Matrix q(2, 2);
    q << 0.05, 0.0, 0.0, 0.02;
    SystemModel model(a, g, Matrix::Identity(2, 2), q, 0.05 * Matrix::Identity(2, 2));
    Matrix p0(2, 2);
    p0 << 1.0, 0.2, 0.2, 0.8;
    Vector x0(2);
    x0 << 1.0, -0.5;
    GaussianBelief belief{x0, p0, 0};
    auto [x, p] = predict(belief, model);
    const Matrix expected = a * p0 * a.transpose() + q;
    CHECK((p - expected).norm() < 1e-14);
    CHECK((x - a * x0).norm() < 1e-14);
}

TEST_CASE("innovation examples") {
    SystemModel unit = scalar_model(1.0, 1.0, 1.0, 0.0, 1.0);
    Vector x_pred = Vector::Constant(1, 3.0);
    Matrix p_pred = Matrix::Zero(1, 1);

    Innovation zero = innovation(Vector::Constant(1, 3.0), x_pred, p_pred, unit, 1);
    CHECK(zero.value(0) == 0.0);
    CHECK(zero.cov(0, 0) == doctest::Approx(1.0));

    SystemModel m2 = scalar_model(1.0, 1.0, 2.0, 0.0, 0.5);
    Innovation innov =
        innovation(Vector::Zero(1), Vector::Zero(1), Matrix::Constant(1, 1, 0.25), m2, 1);
    CHECK(innov.cov(0, 0) == doctest::Approx(1.5)); // 4 * 0.25 + 0.5
}

TEST_CASE("input gain closed form") {
    SUBCASE("scalar identity") {
        SystemModel model = scalar_model(1.0, 1.0, 1.0, 0.0, 1.0);
        const Matrix m = input_gain(model, Matrix::Identity(1, 1), 0);
        CHECK(m(0, 0) == doctest::Approx(1.0));
    }
    SUBCASE("scalar CG=2") {
        SystemModel model = scalar_model(1.0, 2.0, 1.0, 0.0, 1.0);
        const Matrix m = input_gain(model, Matrix::Identity(1, 1), 0);
        CHECK(m(0, 0) == doctest::Approx(0.5));
        CHECK(m(0, 0) * 2.0 == doctest::Approx(1.0));
    }
    SUBCASE("least squares over p=2") {
        Matrix cg(2, 1);
        cg << 1, 1;
        const Matrix m = mvu_gain(cg, Matrix::Identity(2, 2));
        CHECK(m(0, 0) == doctest::Approx(0.5));
        CHECK(m(0, 1) == doctest::Approx(0.5));
    }
}

TEST_CASE("input gain failure modes") {
    Matrix cg(2, 1);
    cg << 1, 1;
    // singular S
    Matrix s_singular(2, 2);
    s_singular << 1.0, 1.0, 1.0, 1.0;
    CHECK_THROWS_AS(mvu_gain(cg, s_singular), SingularInnovationCovariance);
    // rank-deficient CG
    CHECK_THROWS_AS(mvu_gain(Matrix::Zero(2, 1), Matrix::Identity(2, 2)), RankDeficient);
}

TEST_CASE("estimate_input covariance forms agree") {
    Matrix m(1, 2);
    m << 0.5, 0.5;
    Innovation innov{Vector::Zero(2), Matrix::Identity(2, 2)};
    InputEstimate est = estimate_input(m, innov);
    CHECK(est.mean(0) == 0.0);
    CHECK(est.cov(0, 0) == doctest::Approx(0.5));
    // equals [(CG)^T S^-1 CG]^-1 for CG=[1,1]^T, S=I
    Matrix cg(2, 1);
    cg << 1, 1;
    const double gram = (cg.transpose() * cg)(0, 0);
    CHECK(est.cov(0, 0) == doctest::Approx(1.0 / gram));

    InputEstimate scalar = estimate_input(Matrix::Identity(1, 1),
                                          Innovation{Vector::Zero(1), Matrix::Identity(1, 1)});
    CHECK(scalar.cov(0, 0) == doctest::Approx(1.0));
}

TEST_CASE("update_state zero innovation keeps the prediction") {
    SystemModel model = scalar_model(1.0, 1.0, 1.0, 0.1, 1.0);
    Innovation innov{Vector::Zero(1), Matrix::Constant(1, 1, 1.1)};
    InputEstimate est = estimate_input(Matrix::Constant(1, 1, 1.0 / 1.0), innov);
    GaussianBelief out = update_state(Vector::Constant(1, 4.0),
                                      Matrix::Constant(1, 1, 0.1), est, innov, model, 1);
    CHECK(out.mean(0) == doctest::Approx(4.0));
}

TEST_CASE("update_state scalar closed form: K=0, L=1") {
    // A=C=G=1, P_pred=0, R=1 -> S=1, M=1: K = 0, L = K + (1-0)*1*1 = 1.
    SystemModel model = scalar_model(1.0, 1.0, 1.0, 0.0, 1.0);
    Innovation innov{Vector::Constant(1, 0.3), Matrix::Constant(1, 1, 1.0)};
    InputEstimate est = estimate_input(Matrix::Identity(1, 1), innov);
    GaussianBelief out = update_state(Vector::Constant(1, 2.0), Matrix::Zero(1, 1), est,
                                      innov, model, 1);
    CHECK(out.mean(0) == doctest::Approx(2.3));
    // Joseph form with L=1, C=1: (1-1)P(1-1) + 1*R*1 = R.
    CHECK(out.cov(0, 0) == doctest::Approx(1.0));
}

TEST_CASE("update_state covariance equals the Joseph form evaluated directly") {
    std::mt19937_64 rng(2718);
    Matrix a(2, 2);
    a << 1.0, 1.0, 0.0, 1.0;
    Matrix g(2, 1);
    g << 0.5, 1.0;
    SystemModel model(a, g, Matrix::Identity(2, 2), 0.05 * Matrix::Identity(2, 2),
                      0.2 * Matrix::Identity(2, 2));
    for (int trial = 0; trial < 20; ++trial) {
        const Matrix p_pred = random_spd(2, rng);
        const Vector x_pred = Vector::Random(2);
        const Vector y = Vector::Random(2);
        const Innovation innov = innovation(y, x_pred, p_pred, model, 1);
        const Matrix gain = input_gain(model, innov.cov, 0);
        const InputEstimate est = estimate_input(gain, innov);
        const GaussianBelief out = update_state(x_pred, p_pred, est, innov, model, 1);

        const Matrix c = model.c(1);
        const Matrix k = p_pred * c.transpose() * innov.cov.inverse();
        const Matrix l = k + (Matrix::Identity(2, 2) - k * c) * g * gain;
        const Matrix i_lc = Matrix::Identity(2, 2) - l * c;
        const Matrix joseph =
            i_lc * p_pred * i_lc.transpose() + l * model.r() * l.transpose();
        CHECK((out.cov - joseph).norm() < 1e-10);
        // the unknown-input term cancels: L C G = G
        CHECK((l * c * g - g).norm() < 1e-8);
    }
}

TEST_CASE("rkf_step recovers a constant input exactly in the noiseless limit") {
    SystemModel model = scalar_model(1.0, 1.0, 1.0, 1e-12, 1e-12);
    GaussianBelief belief{Vector::Zero(1), Matrix::Constant(1, 1, 1.0), 0};
    NoiseSource noise(model, 4);
    Vector x_true = Vector::Zero(1);
    const Vector d = Vector::Constant(1, 3.0);
    for (int k = 0; k < 5; ++k) {
        auto [x_next, y] = step_truth(model, x_true, d, noise, k);
        auto [updated, input] = rkf_step(belief, y, model);
        belief = updated;
        x_true = x_next;
        if (k >= 1) {
            CHECK(input.mean(0) == doctest::Approx(3.0).epsilon(1e-6));
            CHECK(belief.mean(0) == doctest::Approx(x_true(0)).epsilon(1e-6));
        }
    }
}

TEST_CASE("rkf_step input estimate is unbiased over replications") {
    Matrix a(2, 2);
    a << 1.0, 1.0, 0.0, 1.0;
    Matrix g(2, 1);
    g << 0.5, 1.0;
    SystemModel model(a, g, Matrix::Identity(2, 2), 0.05 * Matrix::Identity(2, 2),
                      0.05 * Matrix::Identity(2, 2));
    const int reps = 1000, steps = 20;
    std::vector<double> rep_means;
    for (int rep = 0; rep < reps; ++rep) {
        const Trajectory traj = simulate(
            model, Vector::Zero(2), [](int) { return Vector::Zero(1); }, steps, 100 + rep);
        GaussianBelief belief{Vector::Zero(2), Matrix::Identity(2, 2), 0};
        double acc = 0.0;
        for (int k = 0; k < steps; ++k) {
            auto [updated, input] = rkf_step(belief, traj.measurements[k], model);
            belief = updated;
            acc += input.mean(0);
        }
        rep_means.push_back(acc / steps);
    }
    double mean = 0.0;
    for (double v : rep_means) mean += v;
    mean /= reps;
    double var = 0.0;
    for (double v : rep_means) var += (v - mean) * (v - mean);
    var /= (reps - 1);
    const double se = std::sqrt(var / reps);
    CHECK(std::abs(mean) < 3.0 * se);
}

TEST_CASE("minimum variance among random feasible gains") {
    std::mt19937_64 rng(99);
    std::normal_distribution<double> normal;
    for (int instance = 0; instance < 20; ++instance) {
        const int p = 2 + (instance % 2);
        Matrix cg(p, 1);
        for (int i = 0; i < p; ++i) cg(i, 0) = normal(rng);
        if (cg.norm() < 0.3) continue;
        const Matrix s = random_spd(p, rng);
        const Matrix m_star = mvu_gain(cg, s);
        const double best = (m_star * s * m_star.transpose())(0, 0);
        const Vector u = cg / cg.norm();
        for (int alt = 0; alt < 100; ++alt) {
            Vector w(p);
            for (int i = 0; i < p; ++i) w(i) = normal(rng);
            const Vector z = w - (w.dot(u)) * u; // z . cg = 0
            const Matrix m_alt = m_star + 2.0 * z.transpose();
            CHECK((m_alt * cg - Matrix::Identity(1, 1)).norm() < 1e-9);
            const double v = (m_alt * s * m_alt.transpose())(0, 0);
            CHECK(v >= best - 1e-10);
        }
    }
}

TEST_CASE("gain identity M C G = I on random well-conditioned models") {
    std::mt19937_64 rng(123);
    std::normal_distribution<double> normal;
    for (int instance = 0; instance < 100; ++instance) {
        const int m = 1 + (instance % 2);
        const int p = m + 1 + (instance % 3);
        Matrix cg(p, m);
        for (int i = 0; i < p; ++i)
            for (int j = 0; j < m; ++j) cg(i, j) = normal(rng);
        Eigen::JacobiSVD<Matrix> svd(cg);
        if (svd.singularValues().minCoeff() < 0.2) continue;
        const Matrix s = random_spd(p, rng);
        const Matrix gain = mvu_gain(cg, s);
        CHECK((gain * cg - Matrix::Identity(m, m)).norm() < 1e-8);
    }
}

TEST_CASE("kf_step_blind zero correction when the measurement matches") {
    SystemModel model = scalar_model(1.1, 1.0, 1.0, 0.1, 0.5);
    GaussianBelief belief{Vector::Constant(1, 2.0), Matrix::Constant(1, 1, 0.4), 0};
    const Vector y = Vector::Constant(1, 1.1 * 2.0);
    const GaussianBelief out = kf_step_blind(belief, y, model);
    CHECK(out.mean(0) == doctest::Approx(2.2));
    CHECK(out.step == 1);
}

TEST_CASE("blind filter develops a bias under a step input while the joint filter does not") {
    Matrix a(2, 2);
    a << 1.0, 1.0, 0.0, 1.0;
    Matrix g(2, 1);
    g << 0.5, 1.0;
    SystemModel model(a, g, Matrix::Identity(2, 2), 0.01 * Matrix::Identity(2, 2),
                      0.01 * Matrix::Identity(2, 2));
    const int steps = 40;
    const Trajectory traj = simulate(
        model, Vector::Zero(2), [](int) { return Vector::Constant(1, 3.0); }, steps, 8);
    GaussianBelief kf{Vector::Zero(2), Matrix::Identity(2, 2), 0};
    GaussianBelief rkf = kf;
    double kf_err = 0.0, rkf_err = 0.0;
    for (int k = 0; k < steps; ++k) {
        kf = kf_step_blind(kf, traj.measurements[k], model);
        auto [updated, input] = rkf_step(rkf, traj.measurements[k], model);
        rkf = updated;
        if (k >= 10) {
            kf_err += (kf.mean - traj.states[k + 1]).norm();
            rkf_err += (rkf.mean - traj.states[k + 1]).norm();
        }
    }
    CHECK(kf_err > 3.0 * rkf_err);
}

TEST_CASE("covariance stays near-PSD and input covariance matches the sample covariance") {
    Matrix a(2, 2);
    a << 1.0, 1.0, 0.0, 1.0;
    Matrix g(2, 1);
    g << 0.5, 1.0;
    SystemModel model(a, g, Matrix::Identity(2, 2), 0.05 * Matrix::Identity(2, 2),
                      0.05 * Matrix::Identity(2, 2));
    const int reps = 1000, probe_step = 10;
    double claimed = 0.0;
    std::vector<double> errors;
    for (int rep = 0; rep < reps; ++rep) {
        const Trajectory traj = simulate(
            model, Vector::Zero(2), [](int) { return Vector::Constant(1, 1.0); },
            probe_step + 1, 4000 + rep);
        GaussianBelief belief{Vector::Zero(2), Matrix::Identity(2, 2), 0};
        for (int k = 0; k <= probe_step; ++k) {
            auto [updated, input] = rkf_step(belief, traj.measurements[k], model);
            belief = updated;
            Eigen::SelfAdjointEigenSolver<Matrix> eig(belief.cov, Eigen::EigenvaluesOnly);
            CHECK(eig.eigenvalues().minCoeff() >=
                  -1e-9 * belief.cov.trace() / belief.cov.rows());
            if (k == probe_step) {
                claimed = input.cov(0, 0);
                errors.push_back(input.mean(0) - traj.inputs[k](0));
            }
        }
    }
    double mean = 0.0;
    for (double e : errors) mean += e;
    mean /= errors.size();
    double var = 0.0;
    for (double e : errors) var += (e - mean) * (e - mean);
    var /= (errors.size() - 1);
    CHECK(std::abs(var - claimed) / claimed < 0.15);
}
