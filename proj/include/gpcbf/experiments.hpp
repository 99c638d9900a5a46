#pragma once

#include <algorithm>
#include <cmath>
#include <future>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>

#include "gpcbf/cbf.hpp"
#include "gpcbf/config.hpp"
#include "gpcbf/controller.hpp"
#include "gpcbf/dynamics.hpp"
#include "gpcbf/errors.hpp"
#include "gpcbf/gp.hpp"
#include "gpcbf/rng.hpp"
#include "gpcbf/socp.hpp"
#include "gpcbf/trace.hpp"

namespace gpcbf {

inline SystemModel build_system(const ScenarioConfig& cfg) {
    if (cfg.kind == PlantKind::Cruise)
        return cruise_system(cfg.cruise, cfg.input_lo[0], cfg.input_hi[0], cfg.m_xdot);
    return quadrotor_system(cfg.quad, cfg.input_lo, cfg.input_hi, cfg.m_xdot);
}

inline std::vector<CbfSpec> build_cbfs(const ScenarioConfig& cfg) {
    std::vector<CbfSpec> specs;
    if (cfg.kind == PlantKind::Cruise) {
        specs.push_back(cruise_cbf(cfg.cruise.headway, cfg.alpha_slope, cfg.epsilon));
    } else {
        specs.push_back(quad_altitude_cbf(cfg.quad.altitude_gain, cfg.alpha_slope, cfg.epsilon));
        specs.push_back(quad_position_cbf(cfg.radius, cfg.he_alpha, cfg.lambda, cfg.alpha_slope,
                                          cfg.epsilon, cfg.grad_term, cfg.velocity_scale));
    }
    return specs;
}

/// Initial condition in full state coordinates (quadrotor rotation = I).
inline VectorXd full_initial_state(const ScenarioConfig& cfg, const VectorXd& reduced) {
    if (cfg.kind == PlantKind::Cruise) return reduced;
    return pack_quad_state(reduced.segment<3>(0), reduced.segment<3>(3), Matrix3d::Identity());
}

inline GpModel build_gp(const ScenarioConfig& cfg) {
    const int n = cfg.kind == PlantKind::Cruise ? 2 : 15;
    const int m = static_cast<int>(cfg.input_lo.size());
    CompositeKernel ker;
    ker.drift = SeKernelParams{1.0, 10.0};
    ker.input.assign(m, SeKernelParams{1.0, 10.0});
    std::vector<CompositeKernel> kernels(n, ker);

    GpModel::PriorDrift prior_drift = nullptr;
    GpModel::PriorInput prior_input = nullptr;
    if (cfg.kind == PlantKind::Quadrotor && cfg.kinematic_prior) {
        // The kinematic identities pdot = v and Rdot = R [omega]_x and the
        // gravity constant are known; the GP only has to learn the thrust
        // channel of the translational acceleration.
        const double gravity = cfg.quad.gravity;
        prior_drift = [gravity](const VectorXd& x) {
            VectorXd f = VectorXd::Zero(15);
            f.segment<3>(0) = x.segment<3>(3);
            f[5] = gravity;
            return f;
        };
        prior_input = [](const VectorXd& x) {
            MatrixXd g = MatrixXd::Zero(15, 4);
            const Matrix3d rot = rotation_part(x);
            for (int k = 0; k < 3; ++k) {
                const Matrix3d col = rot * skew(Vector3d::Unit(k));
                g.block<9, 1>(6, 1 + k) = Eigen::Map<const VectorXd>(col.data(), 9);
            }
            return g;
        };
    }
    return GpModel(std::move(kernels), VectorXd::Constant(n, cfg.noise_std),
                   VectorXd::Constant(n, cfg.rkhs_bound), cfg.delta, prior_drift, prior_input);
}

inline std::function<VectorXd(const VectorXd&)> build_nominal(const ScenarioConfig& cfg) {
    if (cfg.kind == PlantKind::Cruise) {
        const double kp = cfg.gain_p;
        const double vd = cfg.cruise.desired_speed;
        return [kp, vd](const VectorXd& x) {
            return VectorXd::Constant(1, -kp * (x[0] - vd)).eval();
        };
    }
    // PD on the flat outputs: track a hover target, steer the thrust axis
    // toward the desired acceleration direction. Stands in for the
    // differentially flat tracking controller.
    const double kp = cfg.gain_p, kd = cfg.gain_d, g_gr = cfg.quad.gravity;
    const Vector3d target = cfg.target;
    return [kp, kd, g_gr, target](const VectorXd& x) {
        const Vector3d p = x.segment<3>(0);
        const Vector3d v = x.segment<3>(3);
        const Matrix3d rot = rotation_part(x);
        const Vector3d b3 = rot * Vector3d::UnitZ();
        const Vector3d a_des = -kp * (p - target) - kd * v;
        const Vector3d force = a_des - g_gr * Vector3d::UnitZ();
        VectorXd u(4);
        u[0] = force.dot(b3);
        const double norm = force.norm();
        if (norm > 1e-9) {
            const Vector3d b3_des = -force / norm;
            const Vector3d steer = rot.transpose() * (4.0 * (b3_des - b3));
            u[1] = -steer[1];
            u[2] = steer[0];
            u[3] = 0.0;
        } else {
            u.segment<3>(1).setZero();
        }
        return u;
    };
}

/// Short randomized-input rollout from x0; the resulting measurements seed
/// hyperparameter fitting before the run proper.
inline Dataset bootstrap_dataset(const ScenarioConfig& cfg, const SystemModel& sys,
                                 const VectorXd& x0, Rng& rng) {
    Dataset boot;
    const VectorXd center = 0.5 * (cfg.input_lo + cfg.input_hi);
    const VectorXd noise = VectorXd::Constant(sys.state_dim, cfg.noise_std);
    VectorXd x = x0;
    for (int q = 0; q < cfg.n_init; ++q) {
        VectorXd u = rng.uniform_box(cfg.input_lo, cfg.input_hi);
        u = center + cfg.bootstrap_input_scale * (u - center);
        const Measurement meas = measure(sys, StateInput{x, u}, noise, rng);
        boot.add(meas.z, meas.y);
        x = integrate_step(sys, x, [&u](const VectorXd&) { return u; }, cfg.bootstrap_dt);
    }
    return boot;
}

/// States used by the pre-run CBF invariant battery.
inline std::vector<VectorXd> battery_states(const ScenarioConfig& cfg, Rng& rng) {
    std::vector<VectorXd> states;
    for (int i = 0; i < 60; ++i) {
        const VectorXd reduced = rng.uniform_box(cfg.ic_lo, cfg.ic_hi);
        VectorXd x = full_initial_state(cfg, reduced);
        if (cfg.kind == PlantKind::Quadrotor) {
            Vector3d axis = rng.normal_vector(3);
            axis /= std::max(axis.norm(), 1e-12);
            Eigen::Map<Matrix3d>(x.data() + 6) =
                Eigen::AngleAxisd(rng.uniform(0.0, 0.6), axis).toRotationMatrix();
            x.segment<3>(3) = rng.normal_vector(3);
        }
        states.push_back(x);
    }
    return states;
}

inline ControllerOptions controller_options(const ScenarioConfig& cfg) {
    ControllerOptions opts;
    opts.interval_mode = cfg.interval_mode;
    opts.fixed_sample_dt = cfg.sample_dt;
    opts.sample_budget = cfg.delta_n;
    opts.explore = cfg.method;
    opts.control_period = cfg.control_period;
    opts.solver.kkt_tol = cfg.kkt_tol;
    opts.solver.max_iterations = cfg.max_iterations;
    opts.explore_seed = splitmix64(cfg.seed ^ 0x5eedull);
    if (cfg.interval_mode == SampleIntervalMode::Theorem) {
        const int n = cfg.kind == PlantKind::Cruise ? 2 : 15;
        BudgetConstants k;
        k.state_dim = n;
        k.input_dim = static_cast<int>(cfg.input_lo.size());
        k.c_i = VectorXd::Constant(n, cfg.c_i);
        k.c_beta = cfg.c_beta;
        k.epsilon = cfg.epsilon;
        k.noise_std = VectorXd::Constant(n, cfg.noise_std);
        k.lipschitz = 1.0;  // refined below from the actual CBFs
        opts.constants = k;
    }
    return opts;
}

inline SimTrace run_scenario(const ScenarioConfig& cfg) {
    cfg.validate();
    const SystemModel sys = build_system(cfg);
    const std::vector<CbfSpec> specs = build_cbfs(cfg);
    const InputBox box{cfg.input_lo, cfg.input_hi};

    Rng root(cfg.seed);
    Rng battery_rng = root.stream(7);
    for (const auto& spec : specs) {
        const auto report = validate_cbf(spec, battery_states(cfg, battery_rng));
        if (!report.ok())
            throw ContractViolation("run_scenario: CBF '" + spec.name +
                                    "' failed its invariant battery");
    }

    GpModel gp = build_gp(cfg);
    Rng boot_rng = root.stream(1);
    const VectorXd x0 = full_initial_state(cfg, cfg.x0);
    Dataset boot = bootstrap_dataset(cfg, sys, x0, boot_rng);
    gp.set_dataset(std::move(boot));
    Rng fit_rng = root.stream(2);
    gp.fit_hyperparameters(cfg.hyper_bounds, cfg.hyper_starts, fit_rng);
    if (!cfg.retain_bootstrap) gp.set_dataset(Dataset{});

    ControllerOptions opts = controller_options(cfg);
    if (opts.constants) {
        double max_l = 0.0;
        for (const auto& spec : specs) max_l = std::max(max_l, spec.lipschitz);
        opts.constants->lipschitz = max_l;
    }
    const int initial_gp_size = gp.size();
    SafeLearningController controller(std::move(gp), specs, box, cfg.m_xdot, build_nominal(cfg),
                                      opts);

    Rng measure_rng = root.stream(3);
    const VectorXd noise = VectorXd::Constant(sys.state_dim, cfg.noise_std);
    auto measure_fn = [&](const StateInput& z) { return measure(sys, z, noise, measure_rng); };

    SimTrace trace;
    trace.state_dim = sys.state_dim;
    trace.input_dim = sys.input_dim;
    trace.cbf_count = static_cast<int>(specs.size());

    const double dt = cfg.integrator_dt;
    const long steps = std::lround(cfg.duration / dt);
    VectorXd x = x0;
    try {
        for (long s = 0; s < steps; ++s) {
            const double t = static_cast<double>(s) * dt;
            const auto res = controller.step(x, t, dt, measure_fn);
            TraceRow row;
            row.t = t;
            row.x = x;
            row.u = res.input;
            row.h.resize(trace.cbf_count);
            for (int k = 0; k < trace.cbf_count; ++k) row.h[k] = specs[k].h(x);
            row.mode = res.event.mode == ControlMode::Exploring ? 1 : 0;
            row.feasible = res.event.feasible;
            row.margin = res.event.margin;
            row.slack = res.event.slack_at_input;
            row.beta = res.event.beta;
            row.gp_size = res.event.gp_size;
            trace.rows.push_back(std::move(row));
            const VectorXd u = res.input;
            x = integrate_step(sys, x, [&u](const VectorXd&) { return u; }, dt);
        }
    } catch (const BudgetExhausted& e) {
        trace.summary.error = e.what();
    } catch (const IntegrationDiverged& e) {
        trace.summary.error = e.what();
    } catch (const SafetyViolated& e) {
        trace.summary.error = e.what();
    } catch (const SolverFailure& e) {
        trace.summary.error = e.what();
    }
    const std::string error = trace.summary.error;
    trace.recompute_summary(initial_gp_size);
    trace.summary.error = error;

    if (!cfg.trace_path.empty()) write_trace_csv(trace, cfg.trace_path);
    return trace;
}

// ---------------------------------------------------------------------------
// Persistence-of-excitation comparison sweep

namespace detail {

template <typename Fn>
inline void parallel_for(int count, Fn&& body) {
    const int workers =
        std::max(1, static_cast<int>(std::min<unsigned>(std::thread::hardware_concurrency(), 8)));
    if (workers == 1) {
        for (int i = 0; i < count; ++i) body(i);
        return;
    }
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w)
        pool.emplace_back([&] {
            for (int i = next.fetch_add(1); i < count; i = next.fetch_add(1)) body(i);
        });
    for (auto& th : pool) th.join();
}

}  // namespace detail

/// Runs trials x frequencies x {configured method(s)} and tabulates failure
/// rates and sample counts. Initial conditions are drawn uniformly from the
/// configured region; per-trial errors count as failures.
inline std::vector<SweepRow> run_failure_sweep(const ScenarioConfig& cfg,
                                               const std::vector<double>& frequencies, int trials,
                                               bool both_methods = true) {
    if (trials < 1) throw ContractViolation("run_failure_sweep: trials must be at least 1");
    cfg.validate();
    std::vector<ExploreMethod> methods;
    if (both_methods) methods = {ExploreMethod::Ucb, ExploreMethod::Random};
    else methods = {cfg.method};

    struct Cell {
        std::vector<bool> failed;
        std::vector<double> samples;
    };
    std::vector<SweepRow> table;
    for (std::size_t fi = 0; fi < frequencies.size(); ++fi) {
        for (std::size_t mi = 0; mi < methods.size(); ++mi) {
            Cell cell;
            cell.failed.assign(trials, false);
            cell.samples.assign(trials, 0.0);
            detail::parallel_for(trials, [&](int trial) {
                ScenarioConfig run = cfg;
                run.method = methods[mi];
                run.duration = cfg.sweep_duration;
                run.sample_dt = 1.0 / frequencies[fi];
                // Keep sampling instants on the integration grid.
                const int sub = std::max(1L, std::lround(run.sample_dt / cfg.integrator_dt));
                run.integrator_dt = std::min(cfg.integrator_dt, run.sample_dt);
                if (run.sample_dt > cfg.integrator_dt)
                    run.integrator_dt = run.sample_dt / static_cast<double>(sub);
                run.trace_path.clear();
                run.seed = splitmix64(cfg.seed ^ (0x51eeull + 1000003ull * fi + 10007ull * mi +
                                                  static_cast<std::uint64_t>(trial)));
                Rng ic_rng(splitmix64(run.seed ^ 0x1cull));
                run.x0 = ic_rng.uniform_box(cfg.ic_lo, cfg.ic_hi);
                SimTrace trace = run_scenario(run);
                cell.failed[trial] = trace.summary.failure || !trace.summary.error.empty();
                cell.samples[trial] = static_cast<double>(trace.summary.samples_collected);
            });
            SweepRow row;
            row.frequency = frequencies[fi];
            row.method = methods[mi];
            row.trials = trials;
            int failures = 0;
            double total_samples = 0.0;
            for (int t = 0; t < trials; ++t) {
                failures += cell.failed[t] ? 1 : 0;
                total_samples += cell.samples[t];
            }
            row.failure_rate = static_cast<double>(failures) / trials;
            row.mean_samples = total_samples / trials;
            table.push_back(row);
        }
    }
    return table;
}

}  // namespace gpcbf
