#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "gpcbf/cbf.hpp"
#include "gpcbf/dynamics.hpp"
#include "gpcbf/errors.hpp"
#include "gpcbf/gp.hpp"
#include "gpcbf/rng.hpp"
#include "gpcbf/socp.hpp"

namespace gpcbf {

enum class ControlMode { Filtering, Exploring };
enum class ExploreMethod { Ucb, Random };
enum class SampleIntervalMode { Theorem, Fixed };

/// Constants of the sample-budget arithmetic. C_i and C_beta bound the
/// information-gain and error-bound growth; they are configuration inputs.
struct BudgetConstants {
    VectorXd c_i;
    double c_beta{1.0};
    double epsilon{0.5};
    double lipschitz{1.0};
    int state_dim{1};
    int input_dim{1};
    VectorXd noise_std;

    void validate() const {
        if (c_i.size() != state_dim || noise_std.size() != state_dim)
            throw ContractViolation("BudgetConstants: c_i and noise_std must have state_dim entries");
        if ((c_i.array() <= 0).any() || (noise_std.array() <= 0).any() || c_beta <= 0 ||
            epsilon <= 0 || lipschitz <= 0 || state_dim < 1 || input_dim < 1)
            throw ContractViolation("BudgetConstants: all constants must be strictly positive");
    }
};

inline double compute_psi(const BudgetConstants& k) {
    k.validate();
    double sum = 0.0;
    for (int i = 0; i < k.state_dim; ++i) {
        const double sigma = k.noise_std[i];
        sum += 4.0 * k.lipschitz * k.c_beta * k.c_i[i] / std::log1p(1.0 / (sigma * sigma));
    }
    return sum;
}

inline double compute_eta(const BudgetConstants& k) {
    const double exponent_base = 3.0 * (k.state_dim + k.input_dim + 1);
    const double inner = compute_psi(k) / k.epsilon;
    return std::pow(inner, -2.0 / exponent_base) / exponent_base;
}

/// Smallest admissible sample budget, floored at one.
inline int compute_delta_n(double eta, int n_data) {
    if (n_data < 1) throw ContractViolation("compute_delta_n: N must be at least 1");
    const double raw = (std::log(static_cast<double>(n_data)) - std::log(eta)) / eta;
    return std::max(1, static_cast<int>(std::ceil(raw - 1e-12)));
}

/// Sampling interval sized so delta_n samples fit before h can decay to
/// zero: |dh/dt| <= M_grad * M_xdot.
inline double compute_delta_t(const CbfSpec& spec, const SystemModel& model, const VectorXd& x,
                              int delta_n) {
    if (delta_n < 1) throw ContractViolation("compute_delta_t: delta_n must be at least 1");
    const double h = spec.h(x);
    if (!(h > 0.0))
        throw SafetyViolated("compute_delta_t: episode started outside the interior of the safe set");
    return h / (spec.grad_bound * model.xdot_bound * static_cast<double>(delta_n));
}

/// exp(a*lambda) >= b(1+lambda) holds whenever lambda meets the threshold
/// (2/a)(log b - log(a/2)). Returns whether lambda meets it.
inline bool lemma7_check(double a, double b, double lambda) {
    if (!(a > 0.0) || !(b > 0.0)) throw ContractViolation("lemma7_check: a, b must be positive");
    return lambda >= (2.0 / a) * (std::log(b) - std::log(a / 2.0));
}

/// Uniform draw over the input box; the persistence-of-excitation baseline.
inline VectorXd random_explore_baseline(const InputBox& box, Rng& rng) {
    return rng.uniform_box(box.lo, box.hi);
}

// ---------------------------------------------------------------------------

struct ControllerState {
    ControlMode mode{ControlMode::Filtering};
    int samples_total{0};      // N
    int episode_samples{0};    // q
    int budget_remaining{0};   // Delta N
    double sample_interval{0.0};   // Delta t of the current episode
    double episode_start{0.0};     // t_infeasible
    VectorXd held_input;
    int cbf_rr_index{0};
    double next_update_time{0.0};
};

struct ControllerOptions {
    SampleIntervalMode interval_mode{SampleIntervalMode::Fixed};
    double fixed_sample_dt{1e-3};
    int sample_budget{400};
    std::optional<BudgetConstants> constants;  // required in Theorem mode
    ExploreMethod explore{ExploreMethod::Ucb};
    double control_period{0.0};  // 0: re-solve every step
    SolverOptions solver;
    std::optional<double> beta_override;
    std::uint64_t explore_seed{1};
};

/// Structured per-step record consumed by the trace writer.
struct StepEvent {
    double t{0.0};
    ControlMode mode{ControlMode::Filtering};
    bool feasible{true};
    double margin{0.0};
    double slack_at_input{0.0};
    double beta{0.0};
    int gp_size{0};
    int episode_samples{0};
    bool gp_updated{false};
    double kkt_residual{0.0};
};

/// Barrier-filtered control with feasibility-recovering exploration.
/// Filters through the SOC program while the robustified constraint set is
/// nonempty; otherwise samples optimistic inputs on a schedule that fits
/// the remaining budget inside the current barrier level.
class SafeLearningController {
public:
    using MeasureFn = std::function<Measurement(const StateInput&)>;

    struct StepResult {
        VectorXd input;
        StepEvent event;
    };

    SafeLearningController(GpModel model, std::vector<CbfSpec> specs, InputBox box, double m_xdot,
                           std::function<VectorXd(const VectorXd&)> nominal, ControllerOptions opts)
        : model_(std::move(model)),
          specs_(std::move(specs)),
          box_(std::move(box)),
          m_xdot_(m_xdot),
          nominal_(std::move(nominal)),
          opts_(std::move(opts)),
          explore_rng_(opts_.explore_seed) {
        if (specs_.empty()) throw ContractViolation("SafeLearningController: need at least one CBF");
        if (opts_.interval_mode == SampleIntervalMode::Theorem) {
            if (!opts_.constants)
                throw ContractViolation("SafeLearningController: theorem mode requires BudgetConstants");
            eta_ = compute_eta(*opts_.constants);
            state_.budget_remaining =
                compute_delta_n(eta_, std::max(1, model_.size()));
        } else {
            state_.budget_remaining = opts_.sample_budget;
        }
        state_.samples_total = model_.size();
        state_.held_input = box_.center();
    }

    const ControllerState& state() const { return state_; }
    const GpModel& model() const { return model_; }
    GpModel& model() { return model_; }
    double eta() const { return eta_; }

    StepResult step(const VectorXd& x, double t, double dt_grid, const MeasureFn& measure_fn) {
        StepEvent ev;
        ev.t = t;
        ev.gp_updated = false;

        if (state_.mode == ControlMode::Exploring) {
            if (t + 0.5 * dt_grid >= state_.next_update_time) {
                // Scheduled update: absorb the pending measurement, then
                // re-check feasibility at the current state.
                model_.add_measurement(pending_->z, pending_->y);
                pending_.reset();
                ev.gp_updated = true;
                const auto cds = assemble_all(x);
                last_margin_ = feasibility_margin(cds, box_, state_.held_input).first;
                if (last_margin_ >= opts_.solver.infeasibility_threshold) {
                    state_.samples_total += state_.episode_samples;
                    state_.budget_remaining -= state_.episode_samples;
                    state_.episode_samples = 0;
                    state_.mode = ControlMode::Filtering;
                    apply_filter(x, cds, ev);
                } else {
                    begin_sample(x, cds, measure_fn);
                }
            }
            fill_event(ev);
            return {state_.held_input, ev};
        }

        // Filtering: recompute on the control grid.
        if (control_due(t, dt_grid)) {
            const auto cds = assemble_all(x);
            last_margin_ = feasibility_margin(cds, box_, state_.held_input).first;
            if (last_margin_ >= opts_.solver.infeasibility_threshold) {
                apply_filter(x, cds, ev);
            } else {
                start_episode(x, t, cds, measure_fn);
            }
            last_control_time_ = t;
        }
        fill_event(ev);
        return {state_.held_input, ev};
    }

private:
    bool control_due(double t, double dt_grid) const {
        if (opts_.control_period <= dt_grid) return true;
        if (last_control_time_ < 0.0) return true;
        return t + 0.5 * dt_grid >= last_control_time_ + opts_.control_period;
    }

    std::vector<SocConstraintData> assemble_all(const VectorXd& x) {
        std::vector<SocConstraintData> cds;
        cds.reserve(specs_.size());
        for (const auto& spec : specs_)
            cds.push_back(assemble_constraint(model_, spec, x, opts_.beta_override));
        return cds;
    }

    void apply_filter(const VectorXd& x, const std::vector<SocConstraintData>& cds, StepEvent& ev) {
        const VectorXd u_nom = box_.clamp(nominal_(x));
        const FilterResult res = solve_safety_filter(cds, box_, u_nom, opts_.solver);
        state_.held_input = res.input;
        ev.kkt_residual = res.kkt_residual;
        last_slack_ = detail::min_slack(cds, res.input);
    }

    void start_episode(const VectorXd& x, double t, const std::vector<SocConstraintData>& cds,
                       const MeasureFn& measure_fn) {
        state_.mode = ControlMode::Exploring;
        state_.episode_samples = 0;
        state_.episode_start = t;
        if (state_.budget_remaining < 1)
            throw BudgetExhausted("exploration budget exhausted at episode start");
        if (opts_.interval_mode == SampleIntervalMode::Theorem) {
            double dt = std::numeric_limits<double>::infinity();
            for (const auto& spec : specs_) {
                SystemModel meta;
                meta.xdot_bound = m_xdot_;
                dt = std::min(dt, compute_delta_t(spec, meta, x, state_.budget_remaining));
            }
            state_.sample_interval = dt;
        } else {
            for (const auto& spec : specs_) {
                if (!(spec.h(x) > 0.0))
                    throw SafetyViolated("episode started outside the interior of the safe set");
            }
            state_.sample_interval = opts_.fixed_sample_dt;
        }
        begin_sample(x, cds, measure_fn);
    }

    void begin_sample(const VectorXd& x, const std::vector<SocConstraintData>& cds,
                      const MeasureFn& measure_fn) {
        if (state_.episode_samples + 1 > state_.budget_remaining)
            throw BudgetExhausted("exploration budget exhausted while still infeasible");
        state_.episode_samples += 1;
        VectorXd u;
        if (opts_.explore == ExploreMethod::Random) {
            u = random_explore_baseline(box_, explore_rng_);
        } else {
            const std::size_t pick = state_.cbf_rr_index % specs_.size();
            state_.cbf_rr_index = (state_.cbf_rr_index + 1) % static_cast<int>(specs_.size());
            u = ucb_explore(cds[pick], box_);
        }
        // The held input is constant until the next sampling instant, which
        // makes the applied policy trivially locally Lipschitz.
        state_.held_input = u;
        pending_ = measure_fn(StateInput{x, u});
        state_.next_update_time =
            state_.episode_start + state_.episode_samples * state_.sample_interval;
        last_slack_ = detail::min_slack(cds, u);
    }

    void fill_event(StepEvent& ev) {
        ev.mode = state_.mode;
        ev.feasible = state_.mode == ControlMode::Filtering;
        ev.margin = last_margin_;
        ev.slack_at_input = last_slack_;
        ev.beta = opts_.beta_override ? *opts_.beta_override : model_.beta_max();
        ev.gp_size = model_.size();
        ev.episode_samples = state_.episode_samples;
    }

    GpModel model_;
    std::vector<CbfSpec> specs_;
    InputBox box_;
    double m_xdot_;
    std::function<VectorXd(const VectorXd&)> nominal_;
    ControllerOptions opts_;
    Rng explore_rng_;
    ControllerState state_;
    std::optional<Measurement> pending_;
    double last_margin_{0.0};
    double last_slack_{0.0};
    double last_control_time_{-1.0};
    double eta_{0.0};
};

}  // namespace gpcbf
