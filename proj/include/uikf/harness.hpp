#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "uikf/scenarios.hpp"

namespace uikf {

enum class FilterKind { kKf = 0, kRkf = 1, kAlRkf = 2, kAmmKf = 3 };

std::string to_string(FilterKind kind);
FilterKind filter_from_string(const std::string& name);

enum class ScenarioKind { kAirship, kDrone };

/// One (Q-diagonal, R-diagonal) pair of the noise sweep.
struct QrCell {
    std::array<double, 2> q_diag;
    std::array<double, 2> r_diag;
};

struct ExperimentConfig {
    ScenarioKind scenario = ScenarioKind::kAirship;
    AirshipConfig airship;
    DroneConfig drone;
    std::vector<FilterKind> filters{FilterKind::kKf, FilterKind::kRkf,
                                    FilterKind::kAlRkf};
    int reps = 1;
    std::uint64_t base_seed = 1;
    int burn_in = 5;
    std::vector<QrCell> qr_grid; // empty -> the six printed pairs
    std::string out_dir = "out";
    std::string format = "csv";
    ALParams al;

    /// The six printed (Q, R) pairs of the noise sweep:
    /// Q=[.05,.05] x R in {[.05,.05],[.05,.5],[.5,.5]},
    /// Q=[.05,.5]  x R in {[.05,.5],[.5,.5]},
    /// Q=[.5,.5]   x R=[.5,.5].
    static std::vector<QrCell> default_grid();

    static ExperimentConfig from_json(const nlohmann::json& j);
    static ExperimentConfig from_file(const std::string& path);
    nlohmann::json to_json() const;
    void validate() const;
};

/// Per-rep, per-step record of truth, measurements and every filter's
/// estimates. Row k (1-based step) holds x_true at step k and the input
/// estimate for step k-1, which is what the recursion produces from y_k.
struct FilterTrace {
    int n = 0, m = 0, p = 0;
    double dt = 1.0;
    std::vector<FilterKind> filters;
    std::vector<int> position_indices;
    int n_modes = 0;
    std::vector<Vector> mode_values; // in-memory only, not serialized

    std::vector<double> t;
    std::vector<Vector> y;
    std::vector<Vector> x_true;
    std::map<FilterKind, std::vector<Vector>> x_est;
    std::map<FilterKind, std::vector<Vector>> p_diag;
    std::vector<Vector> d_true;
    std::map<FilterKind, std::vector<Vector>> d_est;
    std::map<FilterKind, std::vector<Vector>> d_cov_diag;
    std::vector<Vector> amm_weights;
    std::vector<int> amm_decision;
    std::vector<int> amm_locked; // -1 unlocked, else locked mode index
    std::vector<int> al_active;  // 1 when the box solve ran (skip branch off)
    std::vector<int> al_converged;

    std::size_t rows() const { return t.size(); }
};

struct FilterStats {
    double state_error_mean = 0.0;     // mean Euclidean position error
    double state_error_variance = 0.0; // population variance of that scalar
    Vector input_error_mean;           // component-wise mean of d_hat - d
    Vector input_error_variance;       // population variance per component
    std::optional<double> decision_accuracy;   // discrete scenarios
    std::optional<double> mean_steps_to_lock;  // over reps that locked
};

struct CellStats {
    std::array<double, 2> q_diag{0.0, 0.0};
    std::array<double, 2> r_diag{0.0, 0.0};
    std::map<FilterKind, FilterStats> by_filter;
    // Constrained-filter diagnostics aggregated over reps and steps.
    double al_worst_emitted_violation = 0.0;
    long al_clamped_steps = 0;
    long al_active_steps = 0;
};

struct StatsTable {
    ScenarioKind scenario = ScenarioKind::kAirship;
    int reps = 0;
    int burn_in = 0;
    std::uint64_t base_seed = 0;
    std::vector<FilterKind> filters;
    std::vector<CellStats> cells;
};

struct ExperimentResult {
    std::vector<FilterTrace> traces; // one per rep
    StatsTable stats;
};

/// Runs config.reps paired replications of the configured scenario; every
/// filter consumes the identical trajectory per rep (seed = base_seed + rep).
ExperimentResult run_experiment(const ExperimentConfig& config);

/// Runs the (Q, R) grid (config.qr_grid, or the six default pairs) on the
/// airship scenario and aggregates one StatsTable row per cell.
StatsTable qr_sweep(const ExperimentConfig& config);

/// Error statistics over traces after dropping the first burn_in rows.
/// Throws EmptyAfterBurnIn when nothing remains.
StatsTable summarize(const std::vector<FilterTrace>& traces, int burn_in);

/// Scalar detection-probability curve: for each sigma, the computed P_D and
/// the per-step decision accuracy measured over steps_per_point simulated
/// draws from the true hypothesis.
struct PdCurvePoint {
    double sigma = 0.0;
    double p_d = 0.0;
    double accuracy = 0.0;
};

std::vector<PdCurvePoint> pd_curve(double separation, const std::vector<double>& sigmas,
                                   int steps_per_point, std::uint64_t seed);

// ---- serialization ----

/// Decimal with 17 significant digits; round-trips doubles bit-exactly.
std::string format_double(double v);

void write_trace_csv(const FilterTrace& trace, const std::string& path);
FilterTrace read_trace_csv(const std::string& path);

void write_trajectory_csv(const Trajectory& traj, const std::string& path);

nlohmann::json stats_to_json(const StatsTable& stats);
void write_stats_json(const StatsTable& stats, const std::string& path);

/// Sweep table in the printed row layout: filter x {mean, variance} rows,
/// one column per cell.
void write_sweep_table_csv(const StatsTable& stats, const std::string& path);

void write_pd_csv(const std::vector<PdCurvePoint>& curve, const std::string& path);

/// Plot-data emitters for the standard runs (first rep's trace).
void emit_airship_figures(const FilterTrace& trace, const AirshipConfig& config,
                          const std::string& dir);
void emit_drone_figures(const FilterTrace& trace, const std::string& dir);

/// Atomic text-file write (temp file + rename). Throws IoError.
void write_file_atomic(const std::string& path, const std::string& content);

} // namespace uikf
