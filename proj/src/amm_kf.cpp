#include "uikf/amm_kf.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "uikf/errors.hpp"

namespace uikf {

namespace {

/// Floor then renormalize, looping until both constraints hold exactly:
/// floored entries stay at the floor, the rest share the remaining mass.
Vector floor_and_normalize(Vector w, double floor) {
    const int n = static_cast<int>(w.size());
    if (floor * n >= 1.0) throw std::invalid_argument("weight floor too large");
    w /= w.sum();
    for (int pass = 0; pass < n + 1; ++pass) {
        bool any_below = false;
        double floored_mass = 0.0;
        double free_mass = 0.0;
        for (int i = 0; i < n; ++i) {
            if (w(i) <= floor) {
                any_below = any_below || w(i) < floor;
                floored_mass += floor;
            } else {
                free_mass += w(i);
            }
        }
        if (!any_below) break;
        const double scale = (1.0 - floored_mass) / free_mass;
        for (int i = 0; i < n; ++i) w(i) = (w(i) <= floor) ? floor : w(i) * scale;
    }
    // Absorb the residual rounding error into the largest weight.
    int imax = 0;
    w.maxCoeff(&imax);
    w(imax) += 1.0 - w.sum();
    return w;
}

int argmax_lowest_tie(const Vector& v) {
    int best = 0;
    for (int i = 1; i < v.size(); ++i) {
        if (v(i) > v(best)) best = i;
    }
    return best;
}

} // namespace

ModeSet::ModeSet(std::vector<Vector> values) : modes(std::move(values)) {
    if (modes.size() < 2) throw std::invalid_argument("mode set needs at least 2 modes");
    const auto dim = modes.front().size();
    for (std::size_t i = 0; i < modes.size(); ++i) {
        if (modes[i].size() != dim) {
            throw std::invalid_argument("modes must share one dimension");
        }
        for (std::size_t j = i + 1; j < modes.size(); ++j) {
            if (modes[i].size() == modes[j].size() && modes[i] == modes[j]) {
                throw std::invalid_argument("modes must be pairwise distinct");
            }
        }
    }
}

ModeWeights ModeWeights::uniform(int count, double floor) {
    ModeWeights w;
    w.weights = Vector::Constant(count, 1.0 / count);
    w.floor = floor;
    return w;
}

double mode_log_likelihood(const Innovation& innov, const SystemModel& model,
                           const Vector& mode, int step) {
    const Matrix cg = model.c(step) * model.g(step - 1);
    const Vector residual = innov.value - cg * mode;
    const SpdFactor s_factor(innov.cov, "innovation covariance");
    const double maha = residual.dot(s_factor.solve(residual));
    const double p = static_cast<double>(innov.value.size());
    return -0.5 * (p * std::log(2.0 * M_PI) + s_factor.log_det() + maha);
}

double mode_likelihood(const Innovation& innov, const SystemModel& model,
                       const Vector& mode, int step) {
    return std::exp(mode_log_likelihood(innov, model, mode, step));
}

WeightUpdateResult update_weights(const ModeWeights& w, const Vector& likelihoods) {
    if (likelihoods.size() != w.weights.size()) {
        throw std::invalid_argument("likelihood count mismatch");
    }
    if (likelihoods.minCoeff() < 0.0) {
        throw std::invalid_argument("likelihoods must be non-negative");
    }
    WeightUpdateResult result;
    const Vector posterior = w.weights.cwiseProduct(likelihoods);
    const double total = posterior.sum();
    if (total <= 0.0) {
        result.weights = w;
        result.all_zero = true;
        return result;
    }
    result.weights.floor = w.floor;
    result.weights.weights = floor_and_normalize(posterior / total, w.floor);
    return result;
}

ModeWeights update_weights_log(const ModeWeights& w, const Vector& log_likelihoods) {
    if (log_likelihoods.size() != w.weights.size()) {
        throw std::invalid_argument("likelihood count mismatch");
    }
    Vector log_post(w.weights.size());
    for (int i = 0; i < log_post.size(); ++i) {
        log_post(i) = std::log(w.weights(i)) + log_likelihoods(i);
    }
    const double shift = log_post.maxCoeff();
    Vector posterior = (log_post.array() - shift).exp();
    ModeWeights out;
    out.floor = w.floor;
    out.weights = floor_and_normalize(posterior, w.floor);
    return out;
}

Decision decide_input(const ModeWeights& w, const Vector& log_likelihoods,
                      DecisionState dec, const ModeSet& modes) {
    const int argmax_weight = argmax_lowest_tie(w.weights);
    dec.history.push_back(argmax_weight);
    while (static_cast<int>(dec.history.size()) > dec.window_len) dec.history.pop_front();

    const bool window_full = static_cast<int>(dec.history.size()) == dec.window_len;
    auto window_count = [&](int mode) {
        return static_cast<int>(std::count(dec.history.begin(), dec.history.end(), mode));
    };
    // >= 90% of the window, compared exactly in integers.
    auto dominates = [&](int mode) {
        return window_full && 10 * window_count(mode) >= 9 * dec.window_len;
    };

    if (dec.locked && !dominates(*dec.locked)) dec.locked.reset();
    if (!dec.locked && dominates(argmax_weight)) dec.locked = argmax_weight;

    Decision decision;
    decision.mode_index = dec.locked ? *dec.locked : argmax_lowest_tie(log_likelihoods);
    decision.input = modes.modes[static_cast<std::size_t>(decision.mode_index)];
    decision.state = std::move(dec);
    return decision;
}

GaussianBelief amm_update_state(const GaussianBelief& belief, const Vector& y,
                                const SystemModel& model, const ModeSet& modes,
                                const ModeWeights& w) {
    const int next = belief.step + 1;
    auto [x_pred, p_pred] = predict(belief, model);
    const Innovation innov = innovation(y, x_pred, p_pred, model, next);
    const Matrix c = model.c(next);
    const Matrix g = model.g(belief.step);
    const int n = static_cast<int>(x_pred.size());

    const SpdFactor s_factor(innov.cov, "innovation covariance");
    const Matrix k = s_factor.solve(c * p_pred).transpose();
    const Matrix i_kc = Matrix::Identity(n, n) - k * c;

    Vector compensation = Vector::Zero(model.m());
    for (int i = 0; i < w.weights.size(); ++i) {
        compensation += w.weights(i) * modes.modes[static_cast<std::size_t>(i)];
    }

    GaussianBelief out;
    out.step = next;
    out.mean = x_pred + k * innov.value + i_kc * g * compensation;
    out.cov = symmetrized(i_kc * p_pred * i_kc.transpose() +
                          k * model.r() * k.transpose());
    return out;
}

Matrix mixed_covariance(const std::vector<Matrix>& sub_covs,
                        const std::vector<Vector>& sub_means, const Vector& mixed_mean,
                        const ModeWeights& w) {
    if (sub_covs.size() != sub_means.size() ||
        static_cast<int>(sub_covs.size()) != w.weights.size()) {
        throw std::invalid_argument("mixture component count mismatch");
    }
    Matrix p = Matrix::Zero(mixed_mean.size(), mixed_mean.size());
    for (std::size_t i = 0; i < sub_covs.size(); ++i) {
        const Vector e = mixed_mean - sub_means[i];
        p += w.weights(static_cast<int>(i)) * (sub_covs[i] + e * e.transpose());
    }
    return symmetrized(p);
}

DetectionResult detection_probability(double mean_a, double mean_b, double sigma_a,
                                      double sigma_b) {
    if (sigma_a <= 0.0 || sigma_b <= 0.0) {
        throw std::invalid_argument("sigma must be positive");
    }
    if (mean_a == mean_b) return {0.5, true};

    double boundary = 0.0;
    const double rel_sigma_gap = std::abs(sigma_a - sigma_b) /
                                 std::max(sigma_a, sigma_b);
    if (rel_sigma_gap < 1e-12) {
        boundary = 0.5 * (mean_a + mean_b);
    } else {
        // Equal-density points solve a quadratic in x.
        const double va = sigma_a * sigma_a;
        const double vb = sigma_b * sigma_b;
        const double qa = 0.5 / vb - 0.5 / va;
        const double qb = mean_a / va - mean_b / vb;
        const double qc =
            mean_b * mean_b / (2.0 * vb) - mean_a * mean_a / (2.0 * va) +
            std::log(sigma_b / sigma_a);
        const double disc = qb * qb - 4.0 * qa * qc;
        const double sqrt_disc = std::sqrt(std::max(0.0, disc));
        const double r1 = (-qb + sqrt_disc) / (2.0 * qa);
        const double r2 = (-qb - sqrt_disc) / (2.0 * qa);
        const double lo = std::min(mean_a, mean_b);
        const double hi = std::max(mean_a, mean_b);
        auto segment_distance = [&](double x) {
            if (x < lo) return lo - x;
            if (x > hi) return x - hi;
            return 0.0;
        };
        boundary = (segment_distance(r1) <= segment_distance(r2)) ? r1 : r2;
    }

    // Mass of the true hypothesis on its side of the boundary (away from b).
    double z = (boundary - mean_a) / sigma_a;
    if (mean_a > mean_b) z = -z;
    return {normal_cdf(z), false};
}

DetectionResult detection_probability_projected(const Matrix& cg, const Matrix& s,
                                                const Vector& mode_a,
                                                const Vector& mode_b) {
    const Vector diff = cg * (mode_b - mode_a);
    const SpdFactor s_factor(s, "innovation covariance");
    const double maha = std::sqrt(std::max(0.0, diff.dot(s_factor.solve(diff))));
    if (maha == 0.0) return {0.5, true};
    return detection_probability(0.0, maha, 1.0, 1.0);
}

AmmStepResult amm_step(const GaussianBelief& belief, const Vector& y,
                       const SystemModel& model, const ModeSet& modes,
                       const ModeWeights& w, DecisionState dec) {
    const int next = belief.step + 1;
    auto [x_pred, p_pred] = predict(belief, model);
    const Innovation innov = innovation(y, x_pred, p_pred, model, next);

    Vector log_lik(modes.count());
    for (int i = 0; i < modes.count(); ++i) {
        log_lik(i) =
            mode_log_likelihood(innov, model, modes.modes[static_cast<std::size_t>(i)], next);
    }

    AmmStepResult result;
    result.weights = update_weights_log(w, log_lik);
    Decision decision = decide_input(result.weights, log_lik, std::move(dec), modes);
    result.decision_state = std::move(decision.state);
    result.input = std::move(decision.input);
    result.decided_mode = decision.mode_index;

    result.belief = amm_update_state(belief, y, model, modes, result.weights);

    // Mixture covariance over per-mode hypothetical updates; every hypothesis
    // shares the fixed-gain Joseph covariance, the spread term carries the
    // mode uncertainty.
    const Matrix c = model.c(next);
    const Matrix g = model.g(belief.step);
    const int n = static_cast<int>(x_pred.size());
    const SpdFactor s_factor(innov.cov, "innovation covariance");
    const Matrix k = s_factor.solve(c * p_pred).transpose();
    const Matrix i_kc = Matrix::Identity(n, n) - k * c;
    const Vector x_blind = x_pred + k * innov.value;
    const Matrix joseph = symmetrized(i_kc * p_pred * i_kc.transpose() +
                                      k * model.r() * k.transpose());

    std::vector<Matrix> sub_covs;
    std::vector<Vector> sub_means;
    sub_covs.reserve(static_cast<std::size_t>(modes.count()));
    sub_means.reserve(static_cast<std::size_t>(modes.count()));
    for (int i = 0; i < modes.count(); ++i) {
        sub_covs.push_back(joseph);
        sub_means.push_back(x_blind + i_kc * g * modes.modes[static_cast<std::size_t>(i)]);
    }
    result.belief.cov = mixed_covariance(sub_covs, sub_means, result.belief.mean,
                                         result.weights);
    return result;
}

} // namespace uikf
