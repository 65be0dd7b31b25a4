#include "uikf/linalg.hpp"

#include <cmath>
#include <string>

#include "uikf/errors.hpp"

namespace uikf {

SpdFactor::SpdFactor(const Matrix& s, const char* context) {
    if (!is_symmetric(s)) {
        throw SingularInnovationCovariance(std::string(context) + " is not symmetric");
    }
    Eigen::SelfAdjointEigenSolver<Matrix> eig(s, Eigen::EigenvaluesOnly);
    const Vector& ev = eig.eigenvalues();
    const double ev_min = ev.minCoeff();
    const double ev_max = ev.maxCoeff();
    if (ev_min <= 0.0 || ev_max <= 0.0) {
        throw SingularInnovationCovariance(std::string(context) +
                                           " is not positive definite (min eigenvalue " +
                                           std::to_string(ev_min) + ")");
    }
    condition_ = ev_max / ev_min;
    if (condition_ > kConditionLimit) {
        throw SingularInnovationCovariance(std::string(context) + " condition number " +
                                           std::to_string(condition_) + " exceeds limit");
    }
    llt_.compute(s);
    if (llt_.info() != Eigen::Success) {
        throw SingularInnovationCovariance(std::string(context) +
                                           " Cholesky factorization failed");
    }
    log_det_ = 0.0;
    for (int i = 0; i < ev.size(); ++i) log_det_ += std::log(ev(i));
}

int numerical_rank(const Matrix& a) {
    if (a.size() == 0) return 0;
    Eigen::JacobiSVD<Matrix> svd(a);
    const Vector& sv = svd.singularValues();
    if (sv.size() == 0) return 0;
    const double cutoff = kRankTolerance * sv(0);
    int rank = 0;
    for (int i = 0; i < sv.size(); ++i) {
        if (sv(i) > cutoff) ++rank;
    }
    return rank;
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

double normal_pdf(double x) {
    static const double inv_sqrt_2pi = 0.3989422804014326779;
    return inv_sqrt_2pi * std::exp(-0.5 * x * x);
}

} // namespace uikf
