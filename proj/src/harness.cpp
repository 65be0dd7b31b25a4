#include "uikf/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

#include "uikf/errors.hpp"

namespace uikf {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// filter names
// ---------------------------------------------------------------------------

std::string to_string(FilterKind kind) {
    switch (kind) {
        case FilterKind::kKf: return "kf";
        case FilterKind::kRkf: return "rkf";
        case FilterKind::kAlRkf: return "al_rkf";
        case FilterKind::kAmmKf: return "amm_kf";
    }
    return "?";
}

FilterKind filter_from_string(const std::string& name) {
    if (name == "kf") return FilterKind::kKf;
    if (name == "rkf") return FilterKind::kRkf;
    if (name == "al_rkf") return FilterKind::kAlRkf;
    if (name == "amm_kf") return FilterKind::kAmmKf;
    throw ConfigError("unknown filter '" + name + "'");
}

// ---------------------------------------------------------------------------
// configuration
// ---------------------------------------------------------------------------

std::vector<QrCell> ExperimentConfig::default_grid() {
    return {
        {{0.05, 0.05}, {0.05, 0.05}},
        {{0.05, 0.05}, {0.05, 0.5}},
        {{0.05, 0.05}, {0.5, 0.5}},
        {{0.05, 0.5}, {0.05, 0.5}},
        {{0.05, 0.5}, {0.5, 0.5}},
        {{0.5, 0.5}, {0.5, 0.5}},
    };
}

namespace {

void reject_unknown_keys(const json& j, const std::vector<std::string>& allowed,
                         const std::string& context) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (std::find(allowed.begin(), allowed.end(), it.key()) == allowed.end()) {
            throw ConfigError("unknown key '" + it.key() + "' in " + context);
        }
    }
}

template <typename T>
void maybe_get(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

std::array<double, 2> get_pair(const json& j) {
    if (!j.is_array() || j.size() != 2) throw ConfigError("expected a 2-element array");
    return {j.at(0).get<double>(), j.at(1).get<double>()};
}

AirshipConfig airship_from_json(const json& j) {
    reject_unknown_keys(j,
                        {"mass", "rho", "area", "dt", "wind_speed", "onset_step",
                         "speed_bounds", "steps", "q_diag", "r_diag", "initial_p", "seed"},
                        "airship");
    AirshipConfig c;
    maybe_get(j, "mass", c.mass);
    maybe_get(j, "rho", c.rho);
    maybe_get(j, "area", c.area);
    maybe_get(j, "dt", c.dt);
    maybe_get(j, "wind_speed", c.wind_speed);
    maybe_get(j, "onset_step", c.onset_step);
    if (j.contains("speed_bounds")) c.speed_bounds = get_pair(j.at("speed_bounds"));
    maybe_get(j, "steps", c.steps);
    if (j.contains("q_diag")) c.q_diag = get_pair(j.at("q_diag"));
    if (j.contains("r_diag")) c.r_diag = get_pair(j.at("r_diag"));
    maybe_get(j, "initial_p", c.initial_p);
    maybe_get(j, "seed", c.seed);
    return c;
}

json airship_to_json(const AirshipConfig& c) {
    return json{{"mass", c.mass},
                {"rho", c.rho},
                {"area", c.area},
                {"dt", c.dt},
                {"wind_speed", c.wind_speed},
                {"onset_step", c.onset_step},
                {"speed_bounds", {c.speed_bounds[0], c.speed_bounds[1]}},
                {"steps", c.steps},
                {"q_diag", {c.q_diag[0], c.q_diag[1]}},
                {"r_diag", {c.r_diag[0], c.r_diag[1]}},
                {"initial_p", c.initial_p},
                {"seed", c.seed}};
}

DroneConfig drone_from_json(const json& j) {
    reject_unknown_keys(j,
                        {"failure_magnitude", "collision_step", "steps", "dt", "q_diag",
                         "r", "window_len", "initial_p", "seed"},
                        "drone");
    DroneConfig c;
    maybe_get(j, "failure_magnitude", c.failure_magnitude);
    maybe_get(j, "collision_step", c.collision_step);
    maybe_get(j, "steps", c.steps);
    maybe_get(j, "dt", c.dt);
    if (j.contains("q_diag")) c.q_diag = get_pair(j.at("q_diag"));
    maybe_get(j, "r", c.r);
    maybe_get(j, "window_len", c.window_len);
    maybe_get(j, "initial_p", c.initial_p);
    maybe_get(j, "seed", c.seed);
    return c;
}

json drone_to_json(const DroneConfig& c) {
    return json{{"failure_magnitude", c.failure_magnitude},
                {"collision_step", c.collision_step},
                {"steps", c.steps},
                {"dt", c.dt},
                {"q_diag", {c.q_diag[0], c.q_diag[1]}},
                {"r", c.r},
                {"window_len", c.window_len},
                {"initial_p", c.initial_p},
                {"seed", c.seed}};
}

ALParams al_from_json(const json& j) {
    reject_unknown_keys(j,
                        {"sigma", "tol_step", "tol_grad", "max_outer", "max_inner",
                         "constraint_tol", "sigma_growth"},
                        "al");
    ALParams p;
    maybe_get(j, "sigma", p.sigma);
    maybe_get(j, "tol_step", p.tol_step);
    maybe_get(j, "tol_grad", p.tol_grad);
    maybe_get(j, "max_outer", p.max_outer);
    maybe_get(j, "max_inner", p.max_inner);
    maybe_get(j, "constraint_tol", p.constraint_tol);
    maybe_get(j, "sigma_growth", p.sigma_growth);
    return p;
}

json al_to_json(const ALParams& p) {
    return json{{"sigma", p.sigma},
                {"tol_step", p.tol_step},
                {"tol_grad", p.tol_grad},
                {"max_outer", p.max_outer},
                {"max_inner", p.max_inner},
                {"constraint_tol", p.constraint_tol},
                {"sigma_growth", p.sigma_growth}};
}

} // namespace

ExperimentConfig ExperimentConfig::from_json(const json& j) {
    reject_unknown_keys(j,
                        {"scenario", "airship", "drone", "filters", "reps", "base_seed",
                         "burn_in", "qr_grid", "out_dir", "format", "al"},
                        "config");
    ExperimentConfig c;
    if (j.contains("scenario")) {
        const std::string s = j.at("scenario").get<std::string>();
        if (s == "airship") c.scenario = ScenarioKind::kAirship;
        else if (s == "drone") c.scenario = ScenarioKind::kDrone;
        else throw ConfigError("scenario must be 'airship' or 'drone'");
    }
    if (j.contains("airship")) c.airship = airship_from_json(j.at("airship"));
    if (j.contains("drone")) c.drone = drone_from_json(j.at("drone"));
    if (j.contains("filters")) {
        c.filters.clear();
        for (const auto& f : j.at("filters")) {
            c.filters.push_back(filter_from_string(f.get<std::string>()));
        }
    } else if (c.scenario == ScenarioKind::kDrone) {
        c.filters = {FilterKind::kKf, FilterKind::kAmmKf};
    }
    maybe_get(j, "reps", c.reps);
    maybe_get(j, "base_seed", c.base_seed);
    maybe_get(j, "burn_in", c.burn_in);
    if (j.contains("qr_grid")) {
        c.qr_grid.clear();
        for (const auto& cell : j.at("qr_grid")) {
            if (!cell.is_array() || cell.size() != 2) {
                throw ConfigError("qr_grid entries must be [[q0,q1],[r0,r1]] pairs");
            }
            c.qr_grid.push_back({get_pair(cell.at(0)), get_pair(cell.at(1))});
        }
    }
    maybe_get(j, "out_dir", c.out_dir);
    maybe_get(j, "format", c.format);
    if (j.contains("al")) c.al = al_from_json(j.at("al"));
    c.validate();
    return c;
}

ExperimentConfig ExperimentConfig::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError("config parse error: " + std::string(e.what()));
    }
    return from_json(j);
}

json ExperimentConfig::to_json() const {
    json j;
    j["scenario"] = scenario == ScenarioKind::kAirship ? "airship" : "drone";
    j["airship"] = airship_to_json(airship);
    j["drone"] = drone_to_json(drone);
    json filters_json = json::array();
    for (FilterKind f : filters) filters_json.push_back(to_string(f));
    j["filters"] = filters_json;
    j["reps"] = reps;
    j["base_seed"] = base_seed;
    j["burn_in"] = burn_in;
    json grid = json::array();
    for (const QrCell& cell : qr_grid) {
        grid.push_back({{cell.q_diag[0], cell.q_diag[1]}, {cell.r_diag[0], cell.r_diag[1]}});
    }
    j["qr_grid"] = grid;
    j["out_dir"] = out_dir;
    j["format"] = format;
    j["al"] = al_to_json(al);
    return j;
}

void ExperimentConfig::validate() const {
    if (reps < 1) throw ConfigError("reps must be >= 1");
    if (filters.empty()) throw ConfigError("at least one filter is required");
    if (burn_in < 0) throw ConfigError("burn_in must be >= 0");
    if (format != "csv" && format != "json") throw ConfigError("format must be csv or json");
    for (FilterKind f : filters) {
        if (f == FilterKind::kAlRkf && scenario != ScenarioKind::kAirship) {
            throw ConfigError("al_rkf needs the airship scenario's box prior");
        }
        if (f == FilterKind::kAmmKf && scenario != ScenarioKind::kDrone) {
            throw ConfigError("amm_kf needs the drone scenario's mode set");
        }
    }
    const auto uniq = std::set<FilterKind>(filters.begin(), filters.end());
    if (uniq.size() != filters.size()) throw ConfigError("duplicate filter requested");
}

// ---------------------------------------------------------------------------
// experiment runner
// ---------------------------------------------------------------------------

namespace {

struct RunSetup {
    SystemModel model;
    std::function<Vector(int)> input_signal;
    Vector x0;
    Matrix p0;
    double dt = 1.0;
    int steps = 0;
    std::optional<BoxConstraint> box;
    std::optional<ModeSet> modes;
    int window_len = 50;
    std::vector<int> position_indices;
};

RunSetup make_setup(const ExperimentConfig& config) {
    if (config.scenario == ScenarioKind::kAirship) {
        AirshipScenario s = build_airship(config.airship);
        return RunSetup{std::move(s.model), std::move(s.input_signal), std::move(s.x0),
                        std::move(s.p0),    s.dt,
                        config.airship.steps, std::move(s.force_bounds),
                        std::nullopt,       0,
                        {0, 1}};
    }
    DroneScenario s = build_drone(config.drone);
    return RunSetup{std::move(s.model), std::move(s.input_signal), std::move(s.x0),
                    std::move(s.p0),    s.dt,
                    config.drone.steps, std::nullopt,
                    std::move(s.modes), config.drone.window_len,
                    {0}};
}

bool has_filter(const std::vector<FilterKind>& filters, FilterKind f) {
    return std::find(filters.begin(), filters.end(), f) != filters.end();
}

FilterTrace run_single_rep(const RunSetup& setup, const ExperimentConfig& config,
                           std::uint64_t seed) {
    const SystemModel& model = setup.model;
    const Trajectory traj =
        simulate(model, setup.x0, setup.input_signal, setup.steps, seed, setup.dt);

    FilterTrace trace;
    trace.n = model.n();
    trace.m = model.m();
    trace.p = model.p();
    trace.dt = setup.dt;
    trace.filters = config.filters;
    trace.position_indices = setup.position_indices;
    if (setup.modes) {
        trace.n_modes = setup.modes->count();
        trace.mode_values = setup.modes->modes;
    }

    const bool want_kf = has_filter(config.filters, FilterKind::kKf);
    const bool want_rkf = has_filter(config.filters, FilterKind::kRkf);
    const bool want_al = has_filter(config.filters, FilterKind::kAlRkf);
    const bool want_amm = has_filter(config.filters, FilterKind::kAmmKf);

    GaussianBelief kf_belief{setup.x0, setup.p0, 0};
    GaussianBelief rkf_belief = kf_belief;
    GaussianBelief al_belief = kf_belief;
    GaussianBelief amm_belief = kf_belief;
    ModeWeights weights;
    DecisionState decision_state;
    if (want_amm) {
        weights = ModeWeights::uniform(setup.modes->count());
        decision_state.window_len = setup.window_len;
    }

    for (int k = 0; k < setup.steps; ++k) {
        const Vector& y = traj.measurements[static_cast<std::size_t>(k)];
        trace.t.push_back((k + 1) * setup.dt);
        trace.y.push_back(y);
        trace.x_true.push_back(traj.states[static_cast<std::size_t>(k) + 1]);
        trace.d_true.push_back(traj.inputs[static_cast<std::size_t>(k)]);

        if (want_kf) {
            // Implied input: the MVU gain applied to the blind filter's own
            // innovation; the blind filter itself never uses it.
            auto [x_pred, p_pred] = predict(kf_belief, model);
            const Innovation innov = innovation(y, x_pred, p_pred, model, k + 1);
            const Matrix gain = input_gain(model, innov.cov, k);
            trace.d_est[FilterKind::kKf].push_back(gain * innov.value);

            kf_belief = kf_step_blind(kf_belief, y, model);
            trace.x_est[FilterKind::kKf].push_back(kf_belief.mean);
            trace.p_diag[FilterKind::kKf].push_back(kf_belief.cov.diagonal());
        }
        if (want_rkf) {
            auto [belief, input] = rkf_step(rkf_belief, y, model);
            rkf_belief = std::move(belief);
            trace.x_est[FilterKind::kRkf].push_back(rkf_belief.mean);
            trace.p_diag[FilterKind::kRkf].push_back(rkf_belief.cov.diagonal());
            trace.d_est[FilterKind::kRkf].push_back(input.mean);
            trace.d_cov_diag[FilterKind::kRkf].push_back(input.cov.diagonal());
        }
        if (want_al) {
            AlRkfStepResult res = al_rkf_step(al_belief, y, model, *setup.box, config.al);
            al_belief = std::move(res.belief);
            Vector d_hat = res.input.mean;
            if (!res.solve.converged) {
                // The library never clamps; the harness does, and flags it.
                d_hat = setup.box->clamp(d_hat);
            }
            trace.x_est[FilterKind::kAlRkf].push_back(al_belief.mean);
            trace.p_diag[FilterKind::kAlRkf].push_back(al_belief.cov.diagonal());
            trace.d_est[FilterKind::kAlRkf].push_back(d_hat);
            trace.d_cov_diag[FilterKind::kAlRkf].push_back(res.input.cov.diagonal());
            trace.al_active.push_back(res.solve.skipped ? 0 : 1);
            trace.al_converged.push_back(res.solve.converged ? 1 : 0);
        }
        if (want_amm) {
            AmmStepResult res =
                amm_step(amm_belief, y, model, *setup.modes, weights, decision_state);
            amm_belief = res.belief;
            weights = res.weights;
            decision_state = res.decision_state;
            trace.x_est[FilterKind::kAmmKf].push_back(amm_belief.mean);
            trace.p_diag[FilterKind::kAmmKf].push_back(amm_belief.cov.diagonal());
            trace.d_est[FilterKind::kAmmKf].push_back(res.input);
            trace.amm_weights.push_back(weights.weights);
            trace.amm_decision.push_back(res.decided_mode);
            trace.amm_locked.push_back(decision_state.locked ? *decision_state.locked : -1);
        }
    }
    return trace;
}

void parallel_for(int count, const std::function<void(int)>& body) {
    const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
    const int workers = static_cast<int>(std::min<unsigned>(hw, 8));
    if (workers <= 1 || count <= 1) {
        for (int i = 0; i < count; ++i) body(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            for (int i = w; i < count; i += workers) body(i);
        });
    }
    for (auto& th : pool) th.join();
}

int true_mode_index(const FilterTrace& trace, std::size_t row) {
    for (int i = 0; i < trace.n_modes; ++i) {
        if (trace.mode_values[static_cast<std::size_t>(i)] == trace.d_true[row]) return i;
    }
    return -1;
}

/// Streaming mean/variance (population convention).
struct Welford {
    long count = 0;
    double mean = 0.0;
    double m2 = 0.0;

    void add(double v) {
        ++count;
        const double delta = v - mean;
        mean += delta / static_cast<double>(count);
        m2 += delta * (v - mean);
    }
    double variance() const { return count > 0 ? m2 / static_cast<double>(count) : 0.0; }
};

} // namespace

ExperimentResult run_experiment(const ExperimentConfig& config) {
    config.validate();
    const RunSetup setup = make_setup(config);

    const RankReport rank = validate_rank(setup.model);
    if (!rank.ok) throw RankDeficient(rank.message);

    ExperimentResult result;
    result.traces.resize(static_cast<std::size_t>(config.reps));
    parallel_for(config.reps, [&](int rep) {
        result.traces[static_cast<std::size_t>(rep)] =
            run_single_rep(setup, config, config.base_seed + static_cast<std::uint64_t>(rep));
    });

    result.stats = summarize(result.traces, config.burn_in);
    result.stats.scenario = config.scenario;
    result.stats.base_seed = config.base_seed;
    CellStats& cell = result.stats.cells.front();
    if (config.scenario == ScenarioKind::kAirship) {
        cell.q_diag = config.airship.q_diag;
        cell.r_diag = config.airship.r_diag;
        if (setup.box) {
            for (const FilterTrace& trace : result.traces) {
                auto it = trace.d_est.find(FilterKind::kAlRkf);
                if (it == trace.d_est.end()) continue;
                for (std::size_t row = 0; row < trace.rows(); ++row) {
                    cell.al_worst_emitted_violation =
                        std::max(cell.al_worst_emitted_violation,
                                 setup.box->violation(it->second[row]));
                }
                for (int flag : trace.al_converged) cell.al_clamped_steps += flag ? 0 : 1;
                for (int flag : trace.al_active) cell.al_active_steps += flag;
            }
        }
    } else {
        cell.q_diag = config.drone.q_diag;
        cell.r_diag = {config.drone.r, config.drone.r};
    }
    return result;
}

StatsTable summarize(const std::vector<FilterTrace>& traces, int burn_in) {
    if (traces.empty()) throw EmptyAfterBurnIn("no traces to summarize");
    const FilterTrace& first = traces.front();
    if (first.rows() <= static_cast<std::size_t>(burn_in)) {
        throw EmptyAfterBurnIn("burn-in exceeds trace length");
    }

    StatsTable table;
    table.reps = static_cast<int>(traces.size());
    table.burn_in = burn_in;
    table.filters = first.filters;
    CellStats cell;

    for (FilterKind f : first.filters) {
        FilterStats stats;
        Welford state_err;
        std::vector<Welford> input_err(static_cast<std::size_t>(first.m));
        Welford accuracy;
        Welford steps_to_lock;

        for (const FilterTrace& trace : traces) {
            const auto x_it = trace.x_est.find(f);
            const auto d_it = trace.d_est.find(f);
            std::size_t collision_row = trace.rows();
            if (f == FilterKind::kAmmKf && trace.n_modes > 0) {
                for (std::size_t row = 0; row < trace.rows(); ++row) {
                    if (true_mode_index(trace, row) != 0) {
                        collision_row = row;
                        break;
                    }
                }
            }

            for (std::size_t row = static_cast<std::size_t>(burn_in); row < trace.rows();
                 ++row) {
                if (x_it != trace.x_est.end()) {
                    double err2 = 0.0;
                    for (int idx : trace.position_indices) {
                        const double diff = x_it->second[row](idx) - trace.x_true[row](idx);
                        err2 += diff * diff;
                    }
                    state_err.add(std::sqrt(err2));
                }
                if (d_it != trace.d_est.end()) {
                    for (int c = 0; c < first.m; ++c) {
                        input_err[static_cast<std::size_t>(c)].add(
                            d_it->second[row](c) - trace.d_true[row](c));
                    }
                }
                if (f == FilterKind::kAmmKf && trace.n_modes > 0) {
                    const int truth = true_mode_index(trace, row);
                    accuracy.add(trace.amm_decision[row] == truth ? 1.0 : 0.0);
                }
            }

            if (f == FilterKind::kAmmKf && collision_row < trace.rows()) {
                const int failed_mode = true_mode_index(trace, collision_row);
                for (std::size_t row = collision_row; row < trace.rows(); ++row) {
                    if (trace.amm_locked[row] == failed_mode) {
                        steps_to_lock.add(static_cast<double>(row - collision_row + 1));
                        break;
                    }
                }
            }
        }

        stats.state_error_mean = state_err.mean;
        stats.state_error_variance = state_err.variance();
        stats.input_error_mean = Vector::Zero(first.m);
        stats.input_error_variance = Vector::Zero(first.m);
        for (int c = 0; c < first.m; ++c) {
            stats.input_error_mean(c) = input_err[static_cast<std::size_t>(c)].mean;
            stats.input_error_variance(c) = input_err[static_cast<std::size_t>(c)].variance();
        }
        if (f == FilterKind::kAmmKf && accuracy.count > 0) {
            stats.decision_accuracy = accuracy.mean;
            if (steps_to_lock.count > 0) stats.mean_steps_to_lock = steps_to_lock.mean;
        }
        cell.by_filter[f] = std::move(stats);
    }

    table.cells.push_back(std::move(cell));
    return table;
}

StatsTable qr_sweep(const ExperimentConfig& config) {
    if (config.scenario != ScenarioKind::kAirship) {
        throw ConfigError("the noise sweep runs on the airship scenario");
    }
    const std::vector<QrCell> grid =
        config.qr_grid.empty() ? ExperimentConfig::default_grid() : config.qr_grid;
    if (grid.empty()) throw ConfigError("qr_grid is empty");

    StatsTable table;
    table.scenario = config.scenario;
    table.reps = config.reps;
    table.burn_in = config.burn_in;
    table.base_seed = config.base_seed;
    table.filters = config.filters;

    for (const QrCell& cell : grid) {
        ExperimentConfig cfg = config;
        cfg.airship.q_diag = cell.q_diag;
        cfg.airship.r_diag = cell.r_diag;
        ExperimentResult res = run_experiment(cfg);
        table.cells.push_back(std::move(res.stats.cells.front()));
    }
    return table;
}

std::vector<PdCurvePoint> pd_curve(double separation, const std::vector<double>& sigmas,
                                   int steps_per_point, std::uint64_t seed) {
    if (separation <= 0.0) throw ConfigError("separation must be positive");
    if (steps_per_point < 1) throw ConfigError("steps_per_point must be >= 1");

    std::vector<PdCurvePoint> curve;
    curve.reserve(sigmas.size());
    std::mt19937_64 rng(seed);
    for (double sigma : sigmas) {
        if (sigma <= 0.0) throw ConfigError("sigma must be positive");
        PdCurvePoint point;
        point.sigma = sigma;
        point.p_d = detection_probability(0.0, separation, sigma, sigma).p_d;
        long correct = 0;
        for (int i = 0; i < steps_per_point; ++i) {
            // Draw from the true hypothesis (mean 0) and decide by the higher
            // density, i.e. the nearer mean for equal sigmas.
            const double u = sigma * GaussianSampler::standard_normal(rng);
            if (u < 0.5 * separation) ++correct;
        }
        point.accuracy = static_cast<double>(correct) / steps_per_point;
        curve.push_back(point);
    }
    return curve;
}

// ---------------------------------------------------------------------------
// serialization
// ---------------------------------------------------------------------------

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

namespace {

void append_vector_columns(std::string& header, const std::string& prefix, int count) {
    for (int i = 0; i < count; ++i) {
        header += ',';
        header += prefix;
        header += '_';
        header += std::to_string(i);
    }
}

} // namespace

void write_trace_csv(const FilterTrace& trace, const std::string& path) {
    std::string out = "t";
    append_vector_columns(out, "y", trace.p);
    append_vector_columns(out, "x_true", trace.n);
    for (FilterKind f : trace.filters) {
        append_vector_columns(out, to_string(f) + "_x", trace.n);
        append_vector_columns(out, to_string(f) + "_Pdiag", trace.n);
    }
    append_vector_columns(out, "d_true", trace.m);
    for (FilterKind f : trace.filters) {
        if (!trace.d_est.count(f)) continue;
        append_vector_columns(out, to_string(f) + "_d", trace.m);
        if (trace.d_cov_diag.count(f)) {
            append_vector_columns(out, to_string(f) + "_dcov", trace.m);
        }
    }
    if (trace.n_modes > 0) {
        append_vector_columns(out, "amm_w", trace.n_modes);
        out += ",amm_decision,amm_locked";
    }
    if (!trace.al_active.empty()) out += ",al_rkf_active,al_rkf_converged";
    out += '\n';

    auto put = [&out](double v) {
        out += ',';
        out += format_double(v);
    };
    for (std::size_t row = 0; row < trace.rows(); ++row) {
        out += format_double(trace.t[row]);
        for (int i = 0; i < trace.p; ++i) put(trace.y[row](i));
        for (int i = 0; i < trace.n; ++i) put(trace.x_true[row](i));
        for (FilterKind f : trace.filters) {
            const auto& x = trace.x_est.at(f)[row];
            const auto& pd = trace.p_diag.at(f)[row];
            for (int i = 0; i < trace.n; ++i) put(x(i));
            for (int i = 0; i < trace.n; ++i) put(pd(i));
        }
        for (int i = 0; i < trace.m; ++i) put(trace.d_true[row](i));
        for (FilterKind f : trace.filters) {
            auto it = trace.d_est.find(f);
            if (it == trace.d_est.end()) continue;
            for (int i = 0; i < trace.m; ++i) put(it->second[row](i));
            auto cov_it = trace.d_cov_diag.find(f);
            if (cov_it != trace.d_cov_diag.end()) {
                for (int i = 0; i < trace.m; ++i) put(cov_it->second[row](i));
            }
        }
        if (trace.n_modes > 0) {
            for (int i = 0; i < trace.n_modes; ++i) put(trace.amm_weights[row](i));
            out += ',';
            out += std::to_string(trace.amm_decision[row]);
            out += ',';
            out += std::to_string(trace.amm_locked[row]);
        }
        if (!trace.al_active.empty()) {
            out += ',';
            out += std::to_string(trace.al_active[row]);
            out += ',';
            out += std::to_string(trace.al_converged[row]);
        }
        out += '\n';
    }
    write_file_atomic(path, out);
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string field;
    std::istringstream in(line);
    while (std::getline(in, field, ',')) fields.push_back(field);
    return fields;
}

int count_prefixed(const std::vector<std::string>& header, const std::string& prefix) {
    int count = 0;
    for (const auto& h : header) {
        if (h.rfind(prefix + "_", 0) == 0 &&
            h.find_first_not_of("0123456789", prefix.size() + 1) == std::string::npos) {
            ++count;
        }
    }
    return count;
}

} // namespace

FilterTrace read_trace_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open trace file: " + path);
    std::string line;
    if (!std::getline(in, line)) throw IoError("empty trace file: " + path);
    const std::vector<std::string> header = split_csv_line(line);

    FilterTrace trace;
    trace.p = count_prefixed(header, "y");
    trace.n = count_prefixed(header, "x_true");
    trace.m = count_prefixed(header, "d_true");
    trace.n_modes = count_prefixed(header, "amm_w");
    for (FilterKind f :
         {FilterKind::kKf, FilterKind::kRkf, FilterKind::kAlRkf, FilterKind::kAmmKf}) {
        if (count_prefixed(header, to_string(f) + "_x") == trace.n && trace.n > 0) {
            trace.filters.push_back(f);
        }
    }

    std::size_t row_count = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const std::vector<std::string> fields = split_csv_line(line);
        if (fields.size() != header.size()) {
            throw IoError("trace row width mismatch in " + path);
        }
        std::size_t col = 0;
        auto take = [&]() { return std::stod(fields.at(col++)); };
        auto take_vec = [&](int count) {
            Vector v(count);
            for (int i = 0; i < count; ++i) v(i) = take();
            return v;
        };
        trace.t.push_back(take());
        trace.y.push_back(take_vec(trace.p));
        trace.x_true.push_back(take_vec(trace.n));
        for (FilterKind f : trace.filters) {
            trace.x_est[f].push_back(take_vec(trace.n));
            trace.p_diag[f].push_back(take_vec(trace.n));
        }
        trace.d_true.push_back(take_vec(trace.m));
        for (FilterKind f : trace.filters) {
            const std::string name = to_string(f);
            if (count_prefixed(header, name + "_d") == trace.m) {
                trace.d_est[f].push_back(take_vec(trace.m));
            }
            if (count_prefixed(header, name + "_dcov") == trace.m) {
                trace.d_cov_diag[f].push_back(take_vec(trace.m));
            }
        }
        if (trace.n_modes > 0) {
            trace.amm_weights.push_back(take_vec(trace.n_modes));
            trace.amm_decision.push_back(static_cast<int>(take()));
            trace.amm_locked.push_back(static_cast<int>(take()));
        }
        if (std::find(header.begin(), header.end(), "al_rkf_active") != header.end()) {
            trace.al_active.push_back(static_cast<int>(take()));
            trace.al_converged.push_back(static_cast<int>(take()));
        }
        ++row_count;
    }
    if (row_count >= 1) trace.dt = trace.t.front();
    return trace;
}

void write_trajectory_csv(const Trajectory& traj, const std::string& path) {
    const int n = traj.states.empty() ? 0 : static_cast<int>(traj.states.front().size());
    const int m = traj.inputs.empty() ? 0 : static_cast<int>(traj.inputs.front().size());
    const int p =
        traj.measurements.empty() ? 0 : static_cast<int>(traj.measurements.front().size());
    std::string out = "t";
    append_vector_columns(out, "x_true", n);
    append_vector_columns(out, "d_true", m);
    append_vector_columns(out, "y", p);
    out += '\n';
    for (std::size_t k = 0; k < traj.inputs.size(); ++k) {
        out += format_double(static_cast<double>(k + 1) * traj.dt);
        for (int i = 0; i < n; ++i) {
            out += ',';
            out += format_double(traj.states[k + 1](i));
        }
        for (int i = 0; i < m; ++i) {
            out += ',';
            out += format_double(traj.inputs[k](i));
        }
        for (int i = 0; i < p; ++i) {
            out += ',';
            out += format_double(traj.measurements[k](i));
        }
        out += '\n';
    }
    write_file_atomic(path, out);
}

nlohmann::json stats_to_json(const StatsTable& stats) {
    json j;
    j["scenario"] = stats.scenario == ScenarioKind::kAirship ? "airship" : "drone";
    j["reps"] = stats.reps;
    j["burn_in"] = stats.burn_in;
    j["base_seed"] = stats.base_seed;
    json filters_json = json::array();
    for (FilterKind f : stats.filters) filters_json.push_back(to_string(f));
    j["filters"] = filters_json;
    json cells = json::array();
    for (const CellStats& cell : stats.cells) {
        json c;
        c["q_diag"] = {cell.q_diag[0], cell.q_diag[1]};
        c["r_diag"] = {cell.r_diag[0], cell.r_diag[1]};
        json by_filter;
        for (const auto& [f, s] : cell.by_filter) {
            json fs;
            fs["state_error_mean"] = s.state_error_mean;
            fs["state_error_variance"] = s.state_error_variance;
            json mean = json::array();
            json var = json::array();
            for (int i = 0; i < s.input_error_mean.size(); ++i) {
                mean.push_back(s.input_error_mean(i));
                var.push_back(s.input_error_variance(i));
            }
            fs["input_error_mean"] = mean;
            fs["input_error_variance"] = var;
            if (s.decision_accuracy) fs["decision_accuracy"] = *s.decision_accuracy;
            if (s.mean_steps_to_lock) fs["mean_steps_to_lock"] = *s.mean_steps_to_lock;
            by_filter[to_string(f)] = fs;
        }
        c["filters"] = by_filter;
        c["al_worst_emitted_violation"] = cell.al_worst_emitted_violation;
        c["al_clamped_steps"] = cell.al_clamped_steps;
        c["al_active_steps"] = cell.al_active_steps;
        cells.push_back(c);
    }
    j["cells"] = cells;
    return j;
}

void write_stats_json(const StatsTable& stats, const std::string& path) {
    write_file_atomic(path, stats_to_json(stats).dump(2) + "\n");
}

void write_sweep_table_csv(const StatsTable& stats, const std::string& path) {
    std::string out = "metric,filter";
    for (const CellStats& cell : stats.cells) {
        out += ",Q=[" + format_double(cell.q_diag[0]) + ";" + format_double(cell.q_diag[1]) +
               "] R=[" + format_double(cell.r_diag[0]) + ";" + format_double(cell.r_diag[1]) +
               "]";
    }
    out += '\n';
    for (const char* metric : {"mean", "variance"}) {
        for (FilterKind f : stats.filters) {
            out += metric;
            out += ',';
            out += to_string(f);
            for (const CellStats& cell : stats.cells) {
                const FilterStats& s = cell.by_filter.at(f);
                const double v = std::string(metric) == "mean" ? s.state_error_mean
                                                               : s.state_error_variance;
                out += ',';
                out += format_double(v);
            }
            out += '\n';
        }
    }
    write_file_atomic(path, out);
}

void write_pd_csv(const std::vector<PdCurvePoint>& curve, const std::string& path) {
    std::string out = "sigma,p_d,accuracy\n";
    for (const PdCurvePoint& point : curve) {
        out += format_double(point.sigma) + "," + format_double(point.p_d) + "," +
               format_double(point.accuracy) + "\n";
    }
    write_file_atomic(path, out);
}

void emit_airship_figures(const FilterTrace& trace, const AirshipConfig& config,
                          const std::string& dir) {
    for (FilterKind f : {FilterKind::kKf, FilterKind::kRkf, FilterKind::kAlRkf}) {
        if (!trace.d_est.count(f)) {
            throw ConfigError("airship figures need kf, rkf and al_rkf traces");
        }
    }
    std::string fig3a = "t,d_true,d_kf_implied,d_rkf,d_alrkf,v_wind_est\n";
    for (std::size_t row = 0; row < trace.rows(); ++row) {
        const double d_al = trace.d_est.at(FilterKind::kAlRkf)[row](0);
        fig3a += format_double(trace.t[row]) + "," +
                 format_double(trace.d_true[row](0)) + "," +
                 format_double(trace.d_est.at(FilterKind::kKf)[row](0)) + "," +
                 format_double(trace.d_est.at(FilterKind::kRkf)[row](0)) + "," +
                 format_double(d_al) + "," +
                 format_double(wind_force_to_speed(d_al, config.rho, config.area)) + "\n";
    }
    write_file_atomic(dir + "/fig3a.csv", fig3a);

    std::string fig3b = "t,x_true,y_true";
    for (FilterKind f : trace.filters) {
        fig3b += "," + to_string(f) + "_x," + to_string(f) + "_y";
    }
    fig3b += '\n';
    for (std::size_t row = 0; row < trace.rows(); ++row) {
        fig3b += format_double(trace.t[row]) + "," +
                 format_double(trace.x_true[row](0)) + "," +
                 format_double(trace.x_true[row](1));
        for (FilterKind f : trace.filters) {
            fig3b += "," + format_double(trace.x_est.at(f)[row](0)) + "," +
                     format_double(trace.x_est.at(f)[row](1));
        }
        fig3b += '\n';
    }
    write_file_atomic(dir + "/fig3b.csv", fig3b);
}

void emit_drone_figures(const FilterTrace& trace, const std::string& dir) {
    if (trace.n_modes == 0) throw ConfigError("drone figures need an amm_kf trace");
    std::string fig4a = "t";
    for (int i = 0; i < trace.n_modes; ++i) fig4a += ",amm_w_" + std::to_string(i);
    fig4a += ",amm_decision,amm_locked\n";
    for (std::size_t row = 0; row < trace.rows(); ++row) {
        fig4a += format_double(trace.t[row]);
        for (int i = 0; i < trace.n_modes; ++i) {
            fig4a += "," + format_double(trace.amm_weights[row](i));
        }
        fig4a += "," + std::to_string(trace.amm_decision[row]) + "," +
                 std::to_string(trace.amm_locked[row]) + "\n";
    }
    write_file_atomic(dir + "/fig4a.csv", fig4a);
}

void write_file_atomic(const std::string& path, const std::string& content) {
    const fs::path target(path);
    std::error_code ec;
    if (target.has_parent_path()) {
        fs::create_directories(target.parent_path(), ec);
        if (ec) throw IoError("cannot create directory " + target.parent_path().string());
    }
    const fs::path tmp = target.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
        out << content;
        if (!out.good()) throw IoError("write failed for " + tmp.string());
    }
    fs::rename(tmp, target, ec);
    if (ec) throw IoError("cannot rename " + tmp.string() + " to " + target.string());
}

} // namespace uikf
