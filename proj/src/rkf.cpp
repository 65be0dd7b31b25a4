#include "uikf/rkf.hpp"

#include "uikf/errors.hpp"

namespace uikf {

std::pair<Vector, Matrix> predict(const GaussianBelief& belief, const SystemModel& model) {
    const Matrix a = model.a(belief.step);
    const Vector x_pred = a * belief.mean;
    const Matrix p_pred = symmetrized(a * belief.cov * a.transpose() + model.q());
    return {x_pred, p_pred};
}

Innovation innovation(const Vector& y, const Vector& x_pred, const Matrix& p_pred,
                      const SystemModel& model, int step) {
    const Matrix c = model.c(step);
    Innovation innov;
    innov.value = y - c * x_pred;
    innov.cov = symmetrized(c * p_pred * c.transpose() + model.r());
    return innov;
}

Matrix input_gain(const SystemModel& model, const Matrix& s, int step) {
    return mvu_gain(model.c(step + 1) * model.g(step), s);
}

Matrix mvu_gain(const Matrix& cg, const Matrix& s) {
    const SpdFactor s_factor(s, "innovation covariance");
    const Matrix s_inv_cg = s_factor.solve(cg);           // S^-1 (CG), p x m
    const Matrix gram = symmetrized(cg.transpose() * s_inv_cg); // (CG)^T S^-1 (CG)
    try {
        const SpdFactor gram_factor(gram, "(CG)^T S^-1 (CG)");
        return gram_factor.solve(s_inv_cg.transpose());
    } catch (const SingularInnovationCovariance& e) {
        throw RankDeficient(std::string("input gain unavailable: ") + e.what());
    }
}

InputEstimate estimate_input(const Matrix& gain, const Innovation& innov) {
    InputEstimate est;
    est.gain = gain;
    est.mean = gain * innov.value;
    est.cov = symmetrized(gain * innov.cov * gain.transpose());
    return est;
}

GaussianBelief update_state(const Vector& x_pred, const Matrix& p_pred,
                            const InputEstimate& input, const Innovation& innov,
                            const SystemModel& model, int step) {
    const Matrix c = model.c(step);
    const Matrix g = model.g(step - 1);
    const int n = static_cast<int>(x_pred.size());

    const SpdFactor s_factor(innov.cov, "innovation covariance");
    const Matrix k = s_factor.solve(c * p_pred).transpose(); // P_pred C^T S^-1
    const Matrix l = k + (Matrix::Identity(n, n) - k * c) * g * input.gain;

    GaussianBelief out;
    out.step = step;
    out.mean = x_pred + l * innov.value;
    const Matrix i_lc = Matrix::Identity(n, n) - l * c;
    out.cov = symmetrized(i_lc * p_pred * i_lc.transpose() +
                          l * model.r() * l.transpose());
    return out;
}

std::pair<GaussianBelief, InputEstimate> rkf_step(const GaussianBelief& belief,
                                                  const Vector& y,
                                                  const SystemModel& model) {
    const int next = belief.step + 1;
    auto [x_pred, p_pred] = predict(belief, model);
    const Innovation innov = innovation(y, x_pred, p_pred, model, next);
    const Matrix gain = input_gain(model, innov.cov, belief.step);
    const InputEstimate input = estimate_input(gain, innov);
    GaussianBelief updated = update_state(x_pred, p_pred, input, innov, model, next);
    return {std::move(updated), input};
}

GaussianBelief kf_step_blind(const GaussianBelief& belief, const Vector& y,
                             const SystemModel& model) {
    const int next = belief.step + 1;
    auto [x_pred, p_pred] = predict(belief, model);
    const Innovation innov = innovation(y, x_pred, p_pred, model, next);
    const Matrix c = model.c(next);
    const int n = static_cast<int>(x_pred.size());

    const SpdFactor s_factor(innov.cov, "innovation covariance");
    const Matrix k = s_factor.solve(c * p_pred).transpose();

    GaussianBelief out;
    out.step = next;
    out.mean = x_pred + k * innov.value;
    const Matrix i_kc = Matrix::Identity(n, n) - k * c;
    out.cov = symmetrized(i_kc * p_pred * i_kc.transpose() +
                          k * model.r() * k.transpose());
    return out;
}

} // namespace uikf
