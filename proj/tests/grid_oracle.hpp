#pragma once

// Test-only oracle for the 1-D constrained gain: replicates the multiplier
// loop with the inner argmin replaced by exhaustive grid search over
// M in [-10, 10] at 1e-4 resolution. Every formula is written out here,
// independent of the library's gradient-descent path.

#include <algorithm>
#include <cmath>

namespace grid_oracle {

struct Instance {
    double s;   // innovation variance (scalar)
    double cg;  // scalar C*G
    double y;   // scalar innovation
    double n1;  // box lower
    double n2;  // box upper
};

// Augmented Lagrangian value of the gradient-normalized constrained problem.
inline double objective(double m, double mu, double l1, double l2, double sigma,
                        const Instance& inst) {
    const double h_scale = std::max(std::abs(inst.cg), 1e-12);
    const double g_scale = std::max(std::abs(inst.y), 1e-12);
    const double h = (m * inst.cg - 1.0) / h_scale;
    const double g1 = (m * inst.y - inst.n1) / g_scale;
    const double g2 = (inst.n2 - m * inst.y) / g_scale;
    double value = m * inst.s * m - mu * h + 0.5 * sigma * h * h;
    const double a1 = std::max(0.0, l1 - sigma * g1);
    const double a2 = std::max(0.0, l2 - sigma * g2);
    value += (a1 * a1 - l1 * l1) / (2.0 * sigma);
    value += (a2 * a2 - l2 * l2) / (2.0 * sigma);
    return value;
}

inline double grid_argmin(double mu, double l1, double l2, double sigma,
                          const Instance& inst) {
    double best_m = -10.0;
    double best_value = objective(-10.0, mu, l1, l2, sigma, inst);
    for (long i = 1; i <= 200000; ++i) {
        const double m = -10.0 + 1e-4 * static_cast<double>(i);
        const double value = objective(m, mu, l1, l2, sigma, inst);
        if (value < best_value) {
            best_value = value;
            best_m = m;
        }
    }
    return best_m;
}

struct Result {
    double gain = 0.0;
    bool skipped = false;
    int outer_iterations = 0;
};

inline Result solve(const Instance& inst, double sigma_base = 1e3,
                    double tol_step = 1e-6, int max_outer = 100,
                    double constraint_tol = 1e-6) {
    Result result;
    const double m0 = 1.0 / inst.cg; // closed-form minimum-variance gain, m=p=1
    const double d0 = m0 * inst.y;
    if (d0 >= inst.n1 && d0 <= inst.n2) {
        result.gain = m0;
        result.skipped = true;
        return result;
    }
    const double sigma = std::max(sigma_base, 40.0 * inst.s);
    const double h_scale = std::max(std::abs(inst.cg), 1e-12);
    const double g_scale = std::max(std::abs(inst.y), 1e-12);
    double m = m0, mu = 0.0, l1 = 0.0, l2 = 0.0;
    for (int outer = 0; outer < max_outer; ++outer) {
        const double m_prev = m;
        m = grid_argmin(mu, l1, l2, sigma, inst);
        const double g1 = (m * inst.y - inst.n1) / g_scale;
        const double g2 = (inst.n2 - m * inst.y) / g_scale;
        const double h = (m * inst.cg - 1.0) / h_scale;
        l1 = std::max(0.0, l1 - sigma * g1);
        l2 = std::max(0.0, l2 - sigma * g2);
        mu -= sigma * h;
        result.outer_iterations = outer + 1;
        const double viol =
            std::max(0.0, std::max(inst.n1 - m * inst.y, m * inst.y - inst.n2));
        if (std::abs(m - m_prev) < tol_step && outer > 0 &&
            std::abs(m * inst.cg - 1.0) < constraint_tol && viol < constraint_tol) {
            break;
        }
    }
    result.gain = m;
    return result;
}

} // namespace grid_oracle
