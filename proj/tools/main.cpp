#include <clocale>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "uikf/errors.hpp"
#include "uikf/harness.hpp"

namespace {

using namespace uikf;

struct CommonFlags {
    std::string config_path;
    std::string out_dir;
    std::string filters;
    std::string format;
    std::uint64_t seed = 0;
    bool seed_set = false;
    int reps = 0;
    bool reps_set = false;
};

void add_common_flags(CLI::App* cmd, CommonFlags& flags) {
    cmd->add_option("--config", flags.config_path, "JSON experiment config");
    cmd->add_option("--out", flags.out_dir, "output directory");
    cmd->add_option("--seed", flags.seed, "base seed")->each([&](const std::string&) {
        flags.seed_set = true;
    });
    cmd->add_option("--reps", flags.reps, "Monte-Carlo replications")
        ->each([&](const std::string&) { flags.reps_set = true; });
    cmd->add_option("--filters", flags.filters,
                    "comma list from kf,rkf,al_rkf,amm_kf");
    cmd->add_option("--format", flags.format, "csv|json");
}

ExperimentConfig load_config(const CommonFlags& flags) {
    ExperimentConfig config;
    if (!flags.config_path.empty()) {
        config = ExperimentConfig::from_file(flags.config_path);
    }
    if (!flags.out_dir.empty()) config.out_dir = flags.out_dir;
    if (flags.seed_set) config.base_seed = flags.seed;
    if (flags.reps_set) config.reps = flags.reps;
    if (!flags.format.empty()) config.format = flags.format;
    if (!flags.filters.empty()) {
        config.filters.clear();
        std::stringstream ss(flags.filters);
        std::string token;
        while (std::getline(ss, token, ',')) {
            if (!token.empty()) config.filters.push_back(filter_from_string(token));
        }
    }
    if (config.scenario == ScenarioKind::kDrone && flags.filters.empty() &&
        flags.config_path.empty()) {
        config.filters = {FilterKind::kKf, FilterKind::kAmmKf};
    }
    config.validate();
    return config;
}

void report_clamps(const StatsTable& stats) {
    long clamped = 0;
    for (const CellStats& cell : stats.cells) clamped += cell.al_clamped_steps;
    if (clamped > 0) {
        std::cerr << "note: " << clamped
                  << " constrained-gain steps did not converge; estimates clamped into "
                     "the box\n";
    }
}

int cmd_simulate(const CommonFlags& flags) {
    ExperimentConfig config = load_config(flags);
    if (config.scenario == ScenarioKind::kAirship) {
        const AirshipScenario s = build_airship(config.airship);
        const std::uint64_t seed = flags.seed_set ? flags.seed : config.airship.seed;
        const Trajectory traj = simulate(s.model, s.x0, s.input_signal,
                                         config.airship.steps, seed, s.dt);
        write_trajectory_csv(traj, config.out_dir + "/trajectory.csv");
    } else {
        const DroneScenario s = build_drone(config.drone);
        const std::uint64_t seed = flags.seed_set ? flags.seed : config.drone.seed;
        const Trajectory traj =
            simulate(s.model, s.x0, s.input_signal, config.drone.steps, seed, s.dt);
        write_trajectory_csv(traj, config.out_dir + "/trajectory.csv");
    }
    std::cout << "wrote " << config.out_dir << "/trajectory.csv\n";
    return 0;
}

int cmd_estimate(const CommonFlags& flags) {
    ExperimentConfig config = load_config(flags);
    config.reps = 1;
    const ExperimentResult result = run_experiment(config);
    write_trace_csv(result.traces.front(), config.out_dir + "/trace.csv");
    write_stats_json(result.stats, config.out_dir + "/stats.json");
    if (config.scenario == ScenarioKind::kAirship &&
        result.traces.front().d_est.count(FilterKind::kAlRkf) &&
        result.traces.front().d_est.count(FilterKind::kRkf) &&
        result.traces.front().d_est.count(FilterKind::kKf)) {
        emit_airship_figures(result.traces.front(), config.airship, config.out_dir);
    }
    if (config.scenario == ScenarioKind::kDrone &&
        result.traces.front().n_modes > 0) {
        emit_drone_figures(result.traces.front(), config.out_dir);
    }
    report_clamps(result.stats);
    std::cout << "wrote " << config.out_dir << "/trace.csv and stats.json\n";
    return 0;
}

int cmd_mc(const CommonFlags& flags) {
    ExperimentConfig config = load_config(flags);
    const ExperimentResult result = run_experiment(config);
    write_stats_json(result.stats, config.out_dir + "/stats.json");
    write_trace_csv(result.traces.front(), config.out_dir + "/trace_rep0.csv");
    report_clamps(result.stats);
    std::cout << "wrote " << config.out_dir << "/stats.json (" << config.reps
              << " reps)\n";
    return 0;
}

int cmd_sweep(const CommonFlags& flags) {
    ExperimentConfig config = load_config(flags);
    if (!flags.reps_set && config.reps == 1) config.reps = 200;
    const StatsTable stats = qr_sweep(config);
    write_stats_json(stats, config.out_dir + "/stats.json");
    write_sweep_table_csv(stats, config.out_dir + "/sweep_table.csv");
    report_clamps(stats);
    std::cout << "wrote " << config.out_dir << "/stats.json and sweep_table.csv\n";
    return 0;
}

int cmd_pd(const CommonFlags& flags, double separation, double sigma_min, double sigma_max,
           int points, int steps) {
    ExperimentConfig config = load_config(flags);
    if (points < 1 || sigma_min <= 0.0 || sigma_max < sigma_min) {
        throw ConfigError("pd needs 0 < sigma-min <= sigma-max and points >= 1");
    }
    std::vector<double> sigmas;
    for (int i = 0; i < points; ++i) {
        const double f = points == 1 ? 0.0 : static_cast<double>(i) / (points - 1);
        sigmas.push_back(sigma_min + f * (sigma_max - sigma_min));
    }
    const auto curve = pd_curve(separation, sigmas, steps, config.base_seed);
    write_pd_csv(curve, config.out_dir + "/fig6.csv");
    std::cout << "wrote " << config.out_dir << "/fig6.csv\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    std::setlocale(LC_ALL, "C");
    CLI::App app{"joint unknown-input and state estimation experiments"};
    app.require_subcommand(1);

    CommonFlags flags;
    double separation = 2.8;
    double sigma_min = 0.5;
    double sigma_max = 3.0;
    int pd_points = 26;
    int pd_steps = 10000;

    CLI::App* simulate_cmd = app.add_subcommand("simulate", "emit a truth trajectory");
    add_common_flags(simulate_cmd, flags);
    CLI::App* estimate_cmd =
        app.add_subcommand("estimate", "single run of the selected filters");
    add_common_flags(estimate_cmd, flags);
    CLI::App* sweep_cmd = app.add_subcommand("sweep", "noise-grid Monte-Carlo sweep");
    add_common_flags(sweep_cmd, flags);
    CLI::App* mc_cmd = app.add_subcommand("mc", "Monte-Carlo replications, one cell");
    add_common_flags(mc_cmd, flags);
    CLI::App* pd_cmd = app.add_subcommand("pd", "detection-probability curve");
    add_common_flags(pd_cmd, flags);
    pd_cmd->add_option("--separation", separation, "mode separation");
    pd_cmd->add_option("--sigma-min", sigma_min, "smallest sigma");
    pd_cmd->add_option("--sigma-max", sigma_max, "largest sigma");
    pd_cmd->add_option("--points", pd_points, "curve points");
    pd_cmd->add_option("--steps", pd_steps, "simulated steps per point");

    CLI11_PARSE(app, argc, argv);

    try {
        if (simulate_cmd->parsed()) return cmd_simulate(flags);
        if (estimate_cmd->parsed()) return cmd_estimate(flags);
        if (sweep_cmd->parsed()) return cmd_sweep(flags);
        if (mc_cmd->parsed()) return cmd_mc(flags);
        if (pd_cmd->parsed()) return cmd_pd(flags, separation, sigma_min, sigma_max,
                                            pd_points, pd_steps);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const RankDeficient& e) {
        std::cerr << "rank condition failure: " << e.what() << "\n";
        return 3;
    } catch (const IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
