#include "uikf/scenarios.hpp"

#include <cmath>

#include "uikf/errors.hpp"

namespace uikf {

namespace {

void check(bool ok, const char* what) {
    if (!ok) throw ConfigError(what);
}

} // namespace

AirshipScenario build_airship(const AirshipConfig& config) {
    check(config.mass > 0.0, "airship mass must be positive");
    check(config.rho > 0.0, "air density must be positive");
    check(config.area > 0.0, "airship area must be positive");
    check(config.dt > 0.0, "dt must be positive");
    check(config.wind_speed >= 0.0, "wind speed must be non-negative");
    check(config.speed_bounds[0] >= 0.0 && config.speed_bounds[0] <= config.speed_bounds[1],
          "speed bounds must be ordered and non-negative");
    check(config.steps >= 1, "steps must be >= 1");
    check(config.onset_step >= 0, "onset step must be >= 0");
    check(config.q_diag[0] >= 0.0 && config.q_diag[1] >= 0.0, "Q diagonal must be >= 0");
    check(config.r_diag[0] > 0.0 && config.r_diag[1] > 0.0, "R diagonal must be > 0");
    check(config.initial_p > 0.0, "initial covariance must be positive");

    const double dt = config.dt;
    // State [x, y, vx, vy]; wind force feeds the y channel. The input column
    // is the zero-order-hold of a constant force over the step, so the
    // within-step position displacement dt^2/2m keeps the force observable
    // from position-only measurements (rank(CG) = rank(G) = 1).
    Matrix a = Matrix::Identity(4, 4);
    a(0, 2) = dt;
    a(1, 3) = dt;

    Matrix g = Matrix::Zero(4, 1);
    g(1, 0) = dt * dt / (2.0 * config.mass);
    g(3, 0) = dt / config.mass;

    Matrix c = Matrix::Zero(2, 4);
    c(0, 0) = 1.0;
    c(1, 1) = 1.0;

    Matrix q = Matrix::Zero(4, 4);
    q(0, 0) = config.q_diag[0];
    q(1, 1) = config.q_diag[1];

    Matrix r = Matrix::Zero(2, 2);
    r(0, 0) = config.r_diag[0];
    r(1, 1) = config.r_diag[1];

    const double force =
        wind_speed_to_force(config.wind_speed, config.rho, config.area);
    const int onset = config.onset_step;
    auto signal = [onset, force](int k) {
        Vector d(1);
        d(0) = (k >= onset) ? force : 0.0;
        return d;
    };

    Vector lower(1), upper(1);
    lower(0) = wind_speed_to_force(config.speed_bounds[0], config.rho, config.area);
    upper(0) = wind_speed_to_force(config.speed_bounds[1], config.rho, config.area);

    Vector x0 = Vector::Zero(4);
    x0(2) = 1.0; // cruising along x at 1 m/s; onset location is onset_step*dt meters out

    return AirshipScenario{SystemModel(a, g, c, q, r), signal,
                           BoxConstraint(lower, upper), x0,
                           config.initial_p * Matrix::Identity(4, 4), dt};
}

double wind_force_to_speed(double force, double rho, double area) {
    if (rho <= 0.0 || area <= 0.0) throw ConfigError("rho and area must be positive");
    return std::sqrt(std::max(force, 0.0) / (rho * area));
}

double wind_speed_to_force(double speed, double rho, double area) {
    if (rho <= 0.0 || area <= 0.0) throw ConfigError("rho and area must be positive");
    return rho * area * speed * speed;
}

DroneScenario build_drone(const DroneConfig& config) {
    check(config.failure_magnitude != 0.0, "failure magnitude must be nonzero");
    check(config.collision_step < config.steps, "collision step must precede T");
    check(config.collision_step >= 0, "collision step must be >= 0");
    check(config.steps >= 1, "steps must be >= 1");
    check(config.dt > 0.0, "dt must be positive");
    check(config.q_diag[0] >= 0.0 && config.q_diag[1] >= 0.0, "Q diagonal must be >= 0");
    check(config.r > 0.0, "R must be > 0");
    check(config.window_len >= 1, "window length must be >= 1");
    check(config.initial_p > 0.0, "initial covariance must be positive");

    const double dt = config.dt;
    // State [y, vy] hovering; the failure bias drifts position directly.
    Matrix a = Matrix::Identity(2, 2);
    a(0, 1) = dt;

    Matrix g = Matrix::Zero(2, 1);
    g(0, 0) = dt;

    Matrix c = Matrix::Zero(1, 2);
    c(0, 0) = 1.0;

    Matrix q = Matrix::Zero(2, 2);
    q(0, 0) = config.q_diag[0];
    q(1, 1) = config.q_diag[1];

    Matrix r(1, 1);
    r(0, 0) = config.r;

    const int collision = config.collision_step;
    const double magnitude = config.failure_magnitude;
    auto signal = [collision, magnitude](int k) {
        Vector d(1);
        d(0) = (k >= collision) ? magnitude : 0.0;
        return d;
    };

    Vector nominal = Vector::Zero(1);
    Vector failed(1);
    failed(0) = magnitude;

    return DroneScenario{SystemModel(a, g, c, q, r), signal,
                         ModeSet({nominal, failed}), Vector::Zero(2),
                         config.initial_p * Matrix::Identity(2, 2), dt};
}

double drone_steady_state_innovation_std(const DroneConfig& config) {
    const DroneScenario scenario = build_drone(config);
    const SystemModel& model = scenario.model;
    const Matrix a = model.a(0);
    const Matrix c = model.c(0);
    Matrix p = scenario.p0;
    double s = 0.0;
    for (int k = 0; k < 500; ++k) {
        const Matrix p_pred = a * p * a.transpose() + model.q();
        const Matrix s_mat = c * p_pred * c.transpose() + model.r();
        s = s_mat(0, 0);
        const Matrix k_gain = p_pred * c.transpose() * s_mat.inverse();
        const Matrix i_kc = Matrix::Identity(2, 2) - k_gain * c;
        p = symmetrized(i_kc * p_pred * i_kc.transpose() +
                        k_gain * model.r() * k_gain.transpose());
    }
    return std::sqrt(s);
}

double drone_steady_state_pd(const DroneConfig& config) {
    const DroneScenario scenario = build_drone(config);
    const double sigma = drone_steady_state_innovation_std(config);
    const Matrix cg = scenario.model.c(0) * scenario.model.g(0);
    const double separation =
        std::abs((cg * (scenario.modes.modes[1] - scenario.modes.modes[0]))(0));
    return detection_probability(0.0, separation, sigma, sigma).p_d;
}

} // namespace uikf
