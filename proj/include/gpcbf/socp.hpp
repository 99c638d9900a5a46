#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "gpcbf/cbf.hpp"
#include "gpcbf/errors.hpp"
#include "gpcbf/gp.hpp"

namespace gpcbf {

struct InputBox {
    VectorXd lo;
    VectorXd hi;

    int dim() const { return static_cast<int>(lo.size()); }

    VectorXd clamp(VectorXd u) const {
        for (int j = 0; j < dim(); ++j) u[j] = std::clamp(u[j], lo[j], hi[j]);
        return u;
    }

    VectorXd center() const { return 0.5 * (lo + hi); }

    bool contains(const VectorXd& u, double tol = 1e-9) const {
        return (u.array() >= lo.array() - tol).all() && (u.array() <= hi.array() + tol).all();
    }
};

/// One barrier constraint assembled at a fixed state:
///   slack(u) = c.u + d - rhs_offset - scale * sqrt(u'Qu + q.u + s) >= 0
/// with rhs_offset = -alpha(h(x)) and scale = L_h * beta_N. The quadratic
/// is the trace of the posterior variance, so it is nonnegative on U.
struct SocConstraintData {
    VectorXd affine_grad;   // c
    double affine_offset{0.0};   // d
    MatrixXd var_quad;      // Q (PSD)
    VectorXd var_lin;       // q
    double var_const{0.0};  // s
    double rhs_offset{0.0};
    double scale{0.0};

    double quad_form(const VectorXd& u) const {
        return std::max(u.dot(var_quad * u) + var_lin.dot(u) + var_const, 0.0);
    }

    double slack(const VectorXd& u) const {
        return affine_grad.dot(u) + affine_offset - rhs_offset - scale * std::sqrt(quad_form(u));
    }

    VectorXd slack_gradient(const VectorXd& u) const {
        if (scale == 0.0) return affine_grad;
        const double root = std::sqrt(std::max(quad_form(u), 1e-18));
        return affine_grad - (scale / (2.0 * root)) * (2.0 * var_quad * u + var_lin);
    }

    /// Hessian of the slack (negative semidefinite).
    MatrixXd slack_hessian(const VectorXd& u) const {
        const auto m = affine_grad.size();
        if (scale == 0.0) return MatrixXd::Zero(m, m);
        const double qf = std::max(quad_form(u), 1e-18);
        const double root = std::sqrt(qf);
        const VectorXd gq = 2.0 * var_quad * u + var_lin;
        return -scale * (var_quad / root - (gq * gq.transpose()) / (4.0 * qf * root));
    }

    /// Exploration objective c.u + d + scale * sqrt(quad_form), convex in u.
    double ucb_objective(const VectorXd& u) const {
        return affine_grad.dot(u) + affine_offset + scale * std::sqrt(quad_form(u));
    }
};

struct FilterResult {
    bool feasible{false};
    VectorXd input;        // minimizer when feasible
    double margin{0.0};    // max constraint slack over U
    double kkt_residual{0.0};
    int iterations{0};
};

struct SolverOptions {
    double kkt_tol{1e-6};
    int max_iterations{200};
    double infeasibility_threshold{-1e-9};
};

// ---------------------------------------------------------------------------
// Constraint assembly

/// Builds the SOC constraint for one barrier at state x from the posterior
/// coefficient forms. beta_override replaces L_h * beta_N's beta factor.
inline SocConstraintData assemble_constraint(const GpModel& model, const CbfSpec& spec,
                                             const VectorXd& x,
                                             std::optional<double> beta_override = std::nullopt) {
    const int n = model.state_dim();
    const int m = model.input_dim();
    const auto [grad, alpha_h] = hdot_terms(spec, x);

    SocConstraintData out;
    out.affine_grad = VectorXd::Zero(m);
    out.var_lin = VectorXd::Zero(m);
    out.var_quad = MatrixXd::Zero(m, m);
    for (int i = 0; i < n; ++i) {
        const PosteriorCoeffs c = model.posterior_coefficients(i, x);
        out.affine_offset += grad[i] * c.mean_offset;
        out.affine_grad += grad[i] * c.mean_lin;
        out.var_const += c.var_const;
        out.var_lin += c.var_lin;
        out.var_quad += c.var_quad;
    }
    out.rhs_offset = -alpha_h;
    const double beta = beta_override ? *beta_override : model.beta_max();
    out.scale = spec.lipschitz * beta;
    return out;
}

// ---------------------------------------------------------------------------
// Feasibility margin: maximize the (soft) minimum slack over the box.
// Each slack is concave, so the maximum found is global.

namespace detail {

inline double min_slack(const std::vector<SocConstraintData>& cds, const VectorXd& u) {
    double v = std::numeric_limits<double>::infinity();
    for (const auto& c : cds) v = std::min(v, c.slack(u));
    return v;
}


/// Affine change of coordinates u = mid + w .* v mapping the box onto
/// [-1, 1]^m; slack values are preserved exactly.
inline std::vector<SocConstraintData> scale_to_unit_box(const std::vector<SocConstraintData>& cds,
                                                        const InputBox& box) {
    const VectorXd mid = box.center();
    const VectorXd w = 0.5 * (box.hi - box.lo);
    std::vector<SocConstraintData> out;
    out.reserve(cds.size());
    for (const auto& c : cds) {
        SocConstraintData s;
        s.affine_grad = c.affine_grad.cwiseProduct(w);
        s.affine_offset = c.affine_offset + c.affine_grad.dot(mid);
        s.var_quad = w.asDiagonal() * c.var_quad * w.asDiagonal();
        s.var_lin = w.cwiseProduct(2.0 * c.var_quad * mid + c.var_lin);
        s.var_const = mid.dot(c.var_quad * mid) + c.var_lin.dot(mid) + c.var_const;
        s.rhs_offset = c.rhs_offset;
        s.scale = c.scale;
        out.push_back(std::move(s));
    }
    return out;
}

/// Projected gradient ascent with backtracking on a concave objective.
inline VectorXd projected_ascent(const std::function<double(const VectorXd&, VectorXd*)>& fn,
                                 const InputBox& box, VectorXd u, int max_iters) {
    VectorXd grad(box.dim());
    double value = fn(u, &grad);
    double step = 1.0;
    for (int it = 0; it < max_iters; ++it) {
        const VectorXd trial_dir = box.clamp(u + step * grad) - u;
        if (trial_dir.norm() < 1e-14) {
            step *= 4.0;
            const VectorXd retry = box.clamp(u + step * grad) - u;
            if (retry.norm() < 1e-14) break;
            continue;
        }
        bool improved = false;
        for (int bt = 0; bt < 40; ++bt) {
            const VectorXd cand = box.clamp(u + step * grad);
            const double cand_value = fn(cand, nullptr);
            if (cand_value > value + 1e-18) {
                u = cand;
                value = fn(u, &grad);
                step *= 1.6;
                improved = true;
                break;
            }
            step *= 0.5;
        }
        if (!improved) break;
    }
    return u;
}

}  // namespace detail

/// Largest constraint slack achievable over the box, with its maximizer.
/// Pi_N(x) is nonempty iff the margin is nonnegative. Solved as the
/// epigraph program max t s.t. slack_k(u) >= t with a log-barrier Newton
/// method after normalizing the box to [-1, 1]^m and the slacks to unit
/// scale; the program is concave, so one interior start reaches the
/// global maximum.
inline std::pair<double, VectorXd> feasibility_margin(const std::vector<SocConstraintData>& cds,
                                                      const InputBox& box,
                                                      std::optional<VectorXd> hint = std::nullopt) {
    if (cds.empty()) throw ContractViolation("feasibility_margin: no constraints");
    if (box.dim() == 0 || (box.lo.array() > box.hi.array()).any() ||
        !((box.hi - box.lo).array() > 0.0).all())
        throw ContractViolation("feasibility_margin: empty box");
    const int m = box.dim();
    const VectorXd mid = box.center();
    const VectorXd half = 0.5 * (box.hi - box.lo);

    std::vector<SocConstraintData> scaled = detail::scale_to_unit_box(cds, box);
    double slack_norm = 1.0;
    for (const auto& c : scaled)
        slack_norm = std::max(slack_norm,
                              std::abs(c.affine_offset - c.rhs_offset) + c.affine_grad.norm() +
                                  c.scale * std::sqrt(std::max(c.quad_form(VectorXd::Zero(m)), 0.0)));
    for (auto& c : scaled) {
        c.affine_grad /= slack_norm;
        c.affine_offset /= slack_norm;
        c.rhs_offset /= slack_norm;
        c.scale /= slack_norm;
    }

    VectorXd u = VectorXd::Zero(m);
    if (hint) {
        const VectorXd scaled_hint = (box.clamp(*hint) - mid).cwiseQuotient(half);
        u = scaled_hint.cwiseMax(-0.999).cwiseMin(0.999);
    }
    double t = detail::min_slack(scaled, u) - 1.0;

    auto value = [&](const VectorXd& v, double tt, double mu) {
        if (!((v.array() > -1.0).all() && (v.array() < 1.0).all()))
            return std::numeric_limits<double>::infinity();
        double val = -tt;
        for (const auto& c : scaled) {
            const double w = c.slack(v) - tt;
            if (w <= 0.0) return std::numeric_limits<double>::infinity();
            val -= mu * std::log(w);
        }
        for (int j = 0; j < m; ++j)
            val -= mu * (std::log(v[j] + 1.0) + std::log(1.0 - v[j]));
        return val;
    };

    for (double mu = std::max(1.0, std::abs(t));; mu *= 0.15) {
        for (int it = 0; it < 50; ++it) {
            VectorXd grad = VectorXd::Zero(m + 1);
            MatrixXd hess = MatrixXd::Zero(m + 1, m + 1);
            grad[m] = -1.0;
            for (const auto& c : scaled) {
                const double w = std::max(c.slack(u) - t, 1e-300);
                const VectorXd gs = c.slack_gradient(u);
                grad.head(m) -= (mu / w) * gs;
                grad[m] += mu / w;
                hess.topLeftCorner(m, m) +=
                    mu * (gs * gs.transpose()) / (w * w) - (mu / w) * c.slack_hessian(u);
                hess.block(0, m, m, 1) -= mu * gs / (w * w);
                hess.block(m, 0, 1, m) -= mu * gs.transpose() / (w * w);
                hess(m, m) += mu / (w * w);
            }
            for (int j = 0; j < m; ++j) {
                const double a = std::max(u[j] + 1.0, 1e-300);
                const double b = std::max(1.0 - u[j], 1e-300);
                grad[j] += mu * (1.0 / b - 1.0 / a);
                hess(j, j) += mu * (1.0 / (a * a) + 1.0 / (b * b));
            }
            if (grad.norm() <= std::max(1e-12, 1e-5 * mu)) break;
            VectorXd dir = hess.ldlt().solve(-grad);
            if (!dir.allFinite()) dir = -grad;
            const double base = value(u, t, mu);
            double step = 1.0;
            bool moved = false;
            for (int bt = 0; bt < 60; ++bt) {
                const VectorXd cand_u = u + step * dir.head(m);
                const double cand_t = t + step * dir[m];
                if (value(cand_u, cand_t, mu) < base - 1e-18) {
                    u = cand_u;
                    t = cand_t;
                    moved = true;
                    break;
                }
                step *= 0.5;
            }
            if (!moved) break;
        }
        if (mu <= 1e-10) break;
    }
    const VectorXd u_out = mid + half.cwiseProduct(u);
    return {detail::min_slack(cds, box.clamp(u_out)), box.clamp(u_out)};
}

inline std::pair<double, VectorXd> feasibility_margin(const SocConstraintData& cd, const InputBox& box,
                                                      std::optional<VectorXd> hint = std::nullopt) {
    return feasibility_margin(std::vector<SocConstraintData>{cd}, box, std::move(hint));
}

// ---------------------------------------------------------------------------
// Safety filter: minimize |u - u_nom| subject to all SOC constraints and the
// box, by a log-barrier interior method started at the max-margin point.

inline FilterResult solve_safety_filter(const std::vector<SocConstraintData>& cds, const InputBox& box,
                                        const VectorXd& u_nom, const SolverOptions& opts = {}) {
    const int m = box.dim();
    auto all_slack_ok = [&](const VectorXd& u, double tol) {
        for (const auto& c : cds)
            if (c.slack(u) < tol) return false;
        return true;
    };

    FilterResult res;
    const auto [margin, u_margin] = feasibility_margin(cds, box);
    res.margin = margin;
    if (margin < opts.infeasibility_threshold) {
        res.feasible = false;
        res.input = u_margin;
        return res;
    }
    res.feasible = true;

    // The nominal input projects to itself whenever it is already admissible.
    if (box.contains(u_nom) && all_slack_ok(u_nom, 0.0)) {
        res.input = u_nom;
        res.kkt_residual = 0.0;
        return res;
    }
    // Near-degenerate feasible set: the max-margin point is the answer.
    if (margin < 1e-10) {
        res.input = u_margin;
        res.kkt_residual = 0.0;
        return res;
    }

    // Normalize the box to [-1, 1]^m and the slacks to unit scale; the
    // distance objective keeps the original metric through per-coordinate
    // weights, globally rescaled to O(1).
    const VectorXd mid = box.center();
    const VectorXd half = 0.5 * (box.hi - box.lo);
    std::vector<SocConstraintData> scaled = detail::scale_to_unit_box(cds, box);
    double slack_norm = 1.0;
    for (const auto& c : scaled)
        slack_norm = std::max(slack_norm,
                              std::abs(c.affine_offset - c.rhs_offset) + c.affine_grad.norm() +
                                  c.scale * std::sqrt(std::max(c.quad_form(VectorXd::Zero(m)), 0.0)));
    for (auto& c : scaled) {
        c.affine_grad /= slack_norm;
        c.affine_offset /= slack_norm;
        c.rhs_offset /= slack_norm;
        c.scale /= slack_norm;
    }
    const double margin_scaled = detail::min_slack(scaled, (u_margin - mid).cwiseQuotient(half));
    const VectorXd weight = (half / half.maxCoeff()).array().square();
    const VectorXd v_nom = (u_nom - mid).cwiseQuotient(half);

    // Strictly feasible start: pull the max-margin point toward the box
    // center while keeping half the margin, so the barrier does not open
    // against a wall.
    VectorXd v = (u_margin - mid).cwiseQuotient(half);
    for (double pull = 0.25; pull >= 1e-12; pull *= 0.5) {
        const VectorXd cand = (1.0 - pull) * v;
        if ((cand.array().abs() < 1.0).all() &&
            detail::min_slack(scaled, cand) >= 0.5 * margin_scaled) {
            v = cand;
            break;
        }
    }

    auto barrier_value = [&](const VectorXd& p, double mu) {
        double val = 0.5 * (p - v_nom).dot(weight.cwiseProduct(p - v_nom));
        for (const auto& c : scaled) {
            const double sl = c.slack(p);
            if (sl <= 0.0) return std::numeric_limits<double>::infinity();
            val -= mu * std::log(sl);
        }
        for (int j = 0; j < m; ++j) {
            const double a = p[j] + 1.0, b = 1.0 - p[j];
            if (a <= 0.0 || b <= 0.0) return std::numeric_limits<double>::infinity();
            val -= mu * (std::log(a) + std::log(b));
        }
        return val;
    };
    auto barrier_gradient = [&](const VectorXd& p, double mu, MatrixXd* hess_out) {
        VectorXd grad = weight.cwiseProduct(p - v_nom);
        if (hess_out) *hess_out = weight.asDiagonal();
        for (const auto& c : scaled) {
            const double sl = std::max(c.slack(p), 1e-300);
            const VectorXd gs = c.slack_gradient(p);
            grad -= (mu / sl) * gs;
            if (hess_out)
                *hess_out += mu * (gs * gs.transpose()) / (sl * sl) - (mu / sl) * c.slack_hessian(p);
        }
        for (int j = 0; j < m; ++j) {
            const double a = std::max(p[j] + 1.0, 1e-300);
            const double b = std::max(1.0 - p[j], 1e-300);
            grad[j] += mu * (1.0 / b - 1.0 / a);
            if (hess_out) (*hess_out)(j, j) += mu * (1.0 / (a * a) + 1.0 / (b * b));
        }
        return grad;
    };

    // Each stage exits with an exact KKT certificate: stationarity is the
    // barrier gradient, complementarity is mu itself. Deep stages can stall
    // in floating-point noise at active constraints, so keep the iterate
    // with the best certificate across stages.
    int total_newton = 0;
    VectorXd best_v = v;
    double best_cert = std::numeric_limits<double>::infinity();
    for (double mu = std::max(1.0, 0.5 * (v - v_nom).squaredNorm()); mu > 1e-10; mu *= 0.15) {
        double grad_norm = std::numeric_limits<double>::infinity();
        for (int it = 0; it < 50; ++it) {
            if (total_newton > opts.max_iterations * 4) break;
            ++total_newton;
            MatrixXd hess(m, m);
            const VectorXd grad = barrier_gradient(v, mu, &hess);
            grad_norm = grad.norm();
            if (grad_norm <= std::max(1e-13, 1e-5 * mu)) break;
            VectorXd dir = hess.ldlt().solve(-grad);
            if (!dir.allFinite()) dir = -grad;
            double step = 1.0;
            const double base = barrier_value(v, mu);
            bool moved = false;
            for (int bt = 0; bt < 60; ++bt) {
                const VectorXd cand = v + step * dir;
                const double cand_value = barrier_value(cand, mu);
                // Near the floating-point floor of the value, fall back to
                // gradient-norm descent to keep Newton contracting.
                const bool value_ok = cand_value < base - 1e-18;
                const bool grad_ok = std::isfinite(cand_value) &&
                                     barrier_gradient(cand, mu, nullptr).norm() < 0.9 * grad_norm;
                if (value_ok || grad_ok) {
                    v = cand;
                    moved = true;
                    break;
                }
                step *= 0.5;
            }
            if (!moved) {
                grad_norm = barrier_gradient(v, mu, nullptr).norm();
                break;
            }
        }
        const double cert = std::max(grad_norm, mu);
        if (cert < best_cert) {
            best_cert = cert;
            best_v = v;
        }
    }
    res.kkt_residual = best_cert;
    res.iterations = total_newton;
    res.input = box.clamp(mid + half.cwiseProduct(best_v));
    if (res.kkt_residual > opts.kkt_tol)
        throw SolverFailure("solve_safety_filter: interior point did not reach KKT tolerance",
                            res.input, res.kkt_residual);
    return res;
}

inline FilterResult solve_safety_filter(const SocConstraintData& cd, const InputBox& box,
                                        const VectorXd& u_nom, const SolverOptions& opts = {}) {
    return solve_safety_filter(std::vector<SocConstraintData>{cd}, box, u_nom, opts);
}

// ---------------------------------------------------------------------------
// UCB exploration: maximize the convex optimistic objective. The maximum is
// attained at a box vertex; enumerate them exactly for moderate m.

inline VectorXd ucb_explore(const SocConstraintData& cd, const InputBox& box) {
    const int m = box.dim();
    if (m <= 12) {
        VectorXd best_u(m);
        double best = -std::numeric_limits<double>::infinity();
        for (long mask = 0; mask < (1L << m); ++mask) {
            VectorXd v(m);
            for (int j = 0; j < m; ++j) v[j] = (mask >> j) & 1 ? box.hi[j] : box.lo[j];
            const double val = cd.ucb_objective(v);
            if (val > best) {
                best = val;
                best_u = v;
            }
        }
        return best_u;
    }
    // Large m: multi-start projected ascent; convex objectives terminate at
    // vertices under ascent with projection.
    VectorXd best_u = box.center();
    double best = cd.ucb_objective(best_u);
    Rng rng(0xcb5ull);
    for (int s = 0; s < 32; ++s) {
        VectorXd u = rng.uniform_box(box.lo, box.hi);
        auto fn = [&](const VectorXd& v, VectorXd* g) {
            if (g) {
                const double root = std::sqrt(cd.quad_form(v) + 1e-300);
                *g = cd.affine_grad + (cd.scale / (2.0 * root)) * (2.0 * cd.var_quad * v + cd.var_lin);
            }
            return cd.ucb_objective(v);
        };
        u = detail::projected_ascent(fn, box, u, 300);
        for (int j = 0; j < m; ++j)
            u[j] = (u[j] - box.lo[j] < box.hi[j] - u[j]) ? box.lo[j] : box.hi[j];
        const double val = cd.ucb_objective(u);
        if (val > best) {
            best = val;
            best_u = u;
        }
    }
    return best_u;
}

inline VectorXd ucb_explore(const GpModel& model, const CbfSpec& spec, const VectorXd& x,
                            const InputBox& box, std::optional<double> beta_override = std::nullopt) {
    return ucb_explore(assemble_constraint(model, spec, x, beta_override), box);
}

}  // namespace gpcbf
