#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "gpcbf/config.hpp"
#include "gpcbf/experiments.hpp"
#include "gpcbf/trace.hpp"

namespace {

gpcbf::ScenarioConfig resolve_config(const std::string& config_arg,
                                     std::optional<std::uint64_t> seed) {
    gpcbf::ScenarioConfig cfg;
    if (config_arg.empty() || config_arg == "cruise") cfg = gpcbf::cruise_default_config();
    else if (config_arg == "quadrotor") cfg = gpcbf::quadrotor_default_config();
    else cfg = gpcbf::load_config(config_arg);
    if (seed) cfg.seed = *seed;
    return cfg;
}

int run_verb(const std::string& config_arg, std::optional<std::uint64_t> seed,
             const std::string& out) {
    gpcbf::ScenarioConfig cfg = resolve_config(config_arg, seed);
    if (!out.empty()) cfg.trace_path = out;
    const gpcbf::SimTrace trace = gpcbf::run_scenario(cfg);
    std::printf("steps=%zu min_h=%.6g recovery_time=%.6g samples=%d failure=%d\n",
                trace.rows.size(), trace.summary.min_h, trace.summary.recovery_time,
                trace.summary.samples_collected, trace.summary.failure ? 1 : 0);
    if (!trace.summary.error.empty()) {
        std::printf("error: %s\n", trace.summary.error.c_str());
        return 2;
    }
    return trace.summary.failure ? 3 : 0;
}

int sweep_verb(const std::string& config_arg, std::optional<std::uint64_t> seed,
               const std::string& out, std::optional<int> trials, const std::string& method) {
    gpcbf::ScenarioConfig cfg = resolve_config(config_arg, seed);
    const int n_trials = trials.value_or(cfg.sweep_trials);
    bool both = method == "both";
    if (method == "ucb") cfg.method = gpcbf::ExploreMethod::Ucb;
    else if (method == "random") cfg.method = gpcbf::ExploreMethod::Random;
    else if (method != "both") {
        std::fprintf(stderr, "unknown method '%s'\n", method.c_str());
        return 1;
    }
    const auto table = gpcbf::run_failure_sweep(cfg, cfg.sweep_frequencies, n_trials, both);
    for (const auto& row : table)
        std::printf("freq=%.6g method=%s failure_rate=%.4f mean_samples=%.2f\n", row.frequency,
                    row.method == gpcbf::ExploreMethod::Ucb ? "ucb" : "random", row.failure_rate,
                    row.mean_samples);
    if (!out.empty()) gpcbf::emit_failure_rates(table, out);
    return 0;
}

int check_verb(const std::string& config_arg, std::optional<std::uint64_t> seed) {
    gpcbf::ScenarioConfig cfg = resolve_config(config_arg, seed);
    cfg.validate();
    int rc = 0;
    auto report_line = [&rc](const std::string& name, bool ok) {
        std::printf("%s %s\n", ok ? "PASS" : "FAIL", name.c_str());
        if (!ok) rc = 4;
    };

    const auto sys = gpcbf::build_system(cfg);
    const auto specs = gpcbf::build_cbfs(cfg);
    gpcbf::Rng rng(cfg.seed);
    auto states = gpcbf::battery_states(cfg, rng);
    for (const auto& spec : specs) {
        const auto rep = gpcbf::validate_cbf(spec, states);
        report_line("cbf[" + spec.name + "] gradient", rep.gradient_ok);
        report_line("cbf[" + spec.name + "] lipschitz", rep.lipschitz_ok);
        report_line("cbf[" + spec.name + "] alpha", rep.alpha_ok);
        report_line("cbf[" + spec.name + "] regular_value", rep.regular_value_ok);
    }

    // Kernel PSD spot check on random state-input points.
    {
        gpcbf::CompositeKernel ker;
        ker.drift = gpcbf::SeKernelParams{1.0, 10.0};
        ker.input.assign(sys.input_dim, gpcbf::SeKernelParams{1.0, 10.0});
        std::vector<gpcbf::StateInput> pts;
        for (int i = 0; i < 20; ++i)
            pts.push_back({states[i % states.size()],
                           rng.uniform_box(cfg.input_lo, cfg.input_hi)});
        const Eigen::MatrixXd gram = gpcbf::gram_matrix(ker, pts);
        const Eigen::VectorXd ev = gram.selfadjointView<Eigen::Lower>().eigenvalues();
        report_line("kernel gram psd", ev.minCoeff() >= -1e-8 * ev.maxCoeff());
    }

    // M_xdot soundness over the sampled operating region.
    {
        bool ok = true;
        for (const auto& x : states) {
            const Eigen::VectorXd u = rng.uniform_box(cfg.input_lo, cfg.input_hi);
            if (sys.xdot(x, u).norm() > sys.xdot_bound) ok = false;
        }
        report_line("m_xdot bound", ok);
    }
    return rc;
}

int export_verb(const std::string& trace_path, const std::string& sweep_path,
                const std::string& out_dir) {
    if (out_dir.empty()) {
        std::fprintf(stderr, "export requires --out DIR\n");
        return 1;
    }
    std::filesystem::create_directories(out_dir);
    if (!trace_path.empty()) {
        const gpcbf::SimTrace trace = gpcbf::read_trace_csv(trace_path);
        gpcbf::emit_plot_data(trace, out_dir);
        std::printf("wrote %s/h_vs_t.csv and %s/worst_case_hdot_vs_t.csv\n", out_dir.c_str(),
                    out_dir.c_str());
    }
    if (!sweep_path.empty()) {
        const auto table = gpcbf::read_failure_rates(sweep_path);
        gpcbf::emit_failure_rates(table, out_dir + "/failure_rates.csv");
        std::printf("wrote %s/failure_rates.csv\n", out_dir.c_str());
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Safe-learning barrier-filtered control toolkit"};
    app.require_subcommand(1);

    std::string config_arg, out, method = "both", trace_path, sweep_path;
    std::optional<std::uint64_t> seed;
    std::optional<int> trials;

    auto* run = app.add_subcommand("run", "Run a single scenario and write its trace");
    run->add_option("--config", config_arg, "Config file, or builtin 'cruise'/'quadrotor'");
    run->add_option("--seed", seed, "Override the configured seed");
    run->add_option("--out", out, "Trace CSV path");

    auto* sweep = app.add_subcommand("sweep", "Failure-rate comparison over sampling frequencies");
    sweep->add_option("--config", config_arg, "Config file, or builtin 'cruise'/'quadrotor'");
    sweep->add_option("--seed", seed, "Override the configured seed");
    sweep->add_option("--out", out, "Failure-rate CSV path");
    sweep->add_option("--trials", trials, "Trials per (frequency, method) cell");
    sweep->add_option("--method", method, "ucb, random, or both");

    auto* check = app.add_subcommand("check", "Run the invariant battery for a config");
    check->add_option("--config", config_arg, "Config file, or builtin 'cruise'/'quadrotor'");
    check->add_option("--seed", seed, "Override the configured seed");

    auto* exp = app.add_subcommand("export", "Emit plot-ready CSV files from saved outputs");
    exp->add_option("--trace", trace_path, "Trace CSV produced by 'run'");
    exp->add_option("--sweep", sweep_path, "Failure-rate CSV produced by 'sweep'");
    exp->add_option("--out", out, "Output directory");

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed()) return run_verb(config_arg, seed, out);
        if (sweep->parsed()) return sweep_verb(config_arg, seed, out, trials, method);
        if (check->parsed()) return check_verb(config_arg, seed);
        if (exp->parsed()) return export_verb(trace_path, sweep_path, out);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 0;
}
