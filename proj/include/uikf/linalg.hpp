#pragma once

#include <Eigen/Dense>

namespace uikf {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Condition-number limit past which a symmetric matrix is treated as singular.
inline constexpr double kConditionLimit = 1e12;

/// Relative singular-value cutoff for numerical rank decisions.
inline constexpr double kRankTolerance = 1e-10;

/// Force exact symmetry: (A + A^T) / 2.
inline Matrix symmetrized(const Matrix& a) { return 0.5 * (a + a.transpose()); }

inline bool is_symmetric(const Matrix& a, double tol = 1e-9) {
    if (a.rows() != a.cols()) return false;
    const double scale = std::max(1.0, a.norm());
    return (a - a.transpose()).norm() <= tol * scale;
}

/// Cholesky factorization of a symmetric positive-definite matrix with an
/// explicit conditioning check. Throws SingularInnovationCovariance when the
/// matrix is not PD or its condition number exceeds kConditionLimit.
class SpdFactor {
public:
    explicit SpdFactor(const Matrix& s, const char* context = "matrix");

    template <typename Derived>
    auto solve(const Eigen::MatrixBase<Derived>& b) const {
        return llt_.solve(b.derived()).eval();
    }
    double log_det() const { return log_det_; }
    double condition() const { return condition_; }

private:
    Eigen::LLT<Matrix> llt_;
    double log_det_ = 0.0;
    double condition_ = 0.0;
};

/// Numerical rank via singular values: count of sv > kRankTolerance * sv_max.
int numerical_rank(const Matrix& a);

/// Standard normal CDF.
double normal_cdf(double x);

/// Standard normal density.
double normal_pdf(double x);

} // namespace uikf
