#pragma once

#include <array>
#include <cstdint>

#include "uikf/al_rkf.hpp"
#include "uikf/amm_kf.hpp"
#include "uikf/lti_system.hpp"

namespace uikf {

/// Airship position + wind estimation. The wind enters as a force on the
/// y axis, bounded through the drag relation F = rho * area * v^2; satellite
/// measurements observe position only. Physical constants are declared
/// assumptions (overridable), not reference values.
struct AirshipConfig {
    double mass = 50.0;      // kg
    double rho = 1.225;      // kg/m^3
    double area = 10.0;      // m^2 acted on by the wind
    double dt = 2.5;         // s; onset_step * dt keeps the 30 s onset
    double wind_speed = 8.0; // m/s, truth after onset
    int onset_step = 12;
    std::array<double, 2> speed_bounds{0.0, 10.3}; // m/s prior
    int steps = 100;
    std::array<double, 2> q_diag{0.05, 0.05}; // process noise, position channels
    std::array<double, 2> r_diag{0.05, 0.05};
    double initial_p = 1.0; // P0 = initial_p * I
    std::uint64_t seed = 1;
};

struct AirshipScenario {
    SystemModel model;
    std::function<Vector(int)> input_signal; // wind force in N per step
    BoxConstraint force_bounds;              // speed bounds through F = rho S v^2
    Vector x0;
    Matrix p0;
    double dt = 1.0;
};

AirshipScenario build_airship(const AirshipConfig& config);

/// Inverse of the drag relation: v = sqrt(max(F, 0) / (rho * area)).
/// Negative force clamps to zero speed.
double wind_force_to_speed(double force, double rho, double area);
double wind_speed_to_force(double speed, double rho, double area);

/// Hovering drone whose actuator failure adds a constant horizontal
/// displacement-rate bias; the prior is the binary mode set {0, failure}.
struct DroneConfig {
    double failure_magnitude = 1.0; // displacement-rate bias after collision
    int collision_step = 30;
    int steps = 100;
    double dt = 1.0;
    std::array<double, 2> q_diag{1e-4, 1e-4}; // position, velocity channels
    double r = 0.2;                           // self-localization noise variance
    int window_len = 50;
    double initial_p = 0.5;
    std::uint64_t seed = 1;
};

struct DroneScenario {
    SystemModel model;
    std::function<Vector(int)> input_signal;
    ModeSet modes; // {0, failure_magnitude}
    Vector x0;
    Matrix p0;
    double dt = 1.0;
};

DroneScenario build_drone(const DroneConfig& config);

/// Steady-state innovation standard deviation of the blind filter on the
/// drone model (Riccati iteration), used to place the per-step detection
/// probability of the default configuration.
double drone_steady_state_innovation_std(const DroneConfig& config);

/// Per-step detection probability of the drone's binary test at steady state.
double drone_steady_state_pd(const DroneConfig& config);

} // namespace uikf
