#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "gpcbf/errors.hpp"
#include "gpcbf/kernels.hpp"
#include "gpcbf/rng.hpp"

namespace gpcbf {

/// Growable set of (state-input, noisy xdot measurement) pairs.
struct Dataset {
    std::vector<StateInput> inputs;
    std::vector<VectorXd> targets;
    std::optional<std::size_t> capacity;

    int size() const { return static_cast<int>(inputs.size()); }

    void add(const StateInput& z, const VectorXd& y) {
        if (!inputs.empty()) {
            if (z.x.size() != inputs.front().x.size() || z.u.size() != inputs.front().u.size() ||
                y.size() != targets.front().size())
                throw ContractViolation("Dataset::add: dimension mismatch");
        }
        if (capacity && inputs.size() >= *capacity)
            throw BudgetExhausted("Dataset::add: capacity exhausted");
        inputs.push_back(z);
        targets.push_back(y);
    }

    /// Header line mandatory: x1..xn,u1..um,y1..yn.
    void write_csv(std::ostream& os) const;
    static Dataset read_csv(std::istream& is);
};

struct PosteriorSummary {
    VectorXd mean;
    VectorXd variance;  // diagonal of Sigma^2, clamped at zero
};

/// Per-dimension affine/quadratic structure of the posterior in u:
///   mean_i(x, u)     = mean_offset + mean_lin . u
///   variance_i(x, u) = u' var_quad u + var_lin . u + var_const
struct PosteriorCoeffs {
    double mean_offset{0.0};
    VectorXd mean_lin;
    MatrixXd var_quad;
    VectorXd var_lin;
    double var_const{0.0};

    double mean_at(const VectorXd& u) const { return mean_offset + mean_lin.dot(u); }
    double variance_at(const VectorXd& u) const {
        return u.dot(var_quad * u) + var_lin.dot(u) + var_const;
    }
};

struct GpHyperBounds {
    double sigma_lo{1e-3};
    double sigma_hi{30.0};
    double length_lo{0.5};
    double length_hi{200.0};
};

/// Multi-output GP over the residual dynamics with composite kernels,
/// one independent scalar GP per state dimension sharing the dataset.
/// Single writer; const queries may run concurrently between updates.
class GpModel {
public:
    using PriorDrift = std::function<VectorXd(const VectorXd&)>;  // x -> fhat(x)
    using PriorInput = std::function<MatrixXd(const VectorXd&)>;  // x -> ghat(x), n x m

    GpModel(std::vector<CompositeKernel> kernels,
            VectorXd noise_std,
            VectorXd rkhs_bound,
            double confidence_delta,
            PriorDrift prior_drift = nullptr,
            PriorInput prior_input = nullptr,
            std::optional<std::size_t> capacity = std::nullopt)
        : kernels_(std::move(kernels)),
          noise_std_(std::move(noise_std)),
          rkhs_bound_(std::move(rkhs_bound)),
          delta_(confidence_delta),
          prior_drift_(std::move(prior_drift)),
          prior_input_(std::move(prior_input)) {
        const int n = state_dim();
        if (noise_std_.size() != n || rkhs_bound_.size() != n)
            throw ContractViolation("GpModel: noise_std and rkhs_bound must have one entry per state dim");
        if ((noise_std_.array() <= 0).any() || (rkhs_bound_.array() <= 0).any())
            throw ContractViolation("GpModel: noise_std and rkhs_bound must be positive");
        if (!(delta_ > 0.0 && delta_ < 1.0))
            throw ContractViolation("GpModel: confidence delta must lie in (0, 1)");
        for (const auto& k : kernels_) k.validate();
        data_.capacity = capacity;
        factors_.resize(n);
        residuals_.assign(n, VectorXd());
        alphas_.assign(n, VectorXd());
    }

    int state_dim() const { return static_cast<int>(kernels_.size()); }
    int input_dim() const { return kernels_.front().input_dim(); }
    int size() const { return data_.size(); }

    const Dataset& data() const { return data_; }
    const std::vector<CompositeKernel>& kernels() const { return kernels_; }
    const VectorXd& noise_std() const { return noise_std_; }
    const VectorXd& rkhs_bound() const { return rkhs_bound_; }
    double confidence_delta() const { return delta_; }
    int numerical_warnings() const { return numerical_warnings_; }
    bool degenerate_fit_warning() const { return degenerate_fit_warning_; }

    VectorXd prior_mean(const StateInput& z) const {
        VectorXd mu = prior_drift_ ? prior_drift_(z.x) : VectorXd::Zero(state_dim());
        if (prior_input_) mu += prior_input_(z.x) * z.u;
        return mu;
    }

    void add_measurement(const StateInput& z, const VectorXd& y) {
        if (z.u.size() != input_dim() || y.size() != state_dim())
            throw ContractViolation("GpModel::add_measurement: dimension mismatch");
        const VectorXd resid = y - prior_mean(z);
        data_.add(z, y);
        const int n_pts = size();
        for (int i = 0; i < state_dim(); ++i) {
            VectorXd r(n_pts);
            if (n_pts > 1) r.head(n_pts - 1) = residuals_[i];
            r[n_pts - 1] = resid[i];
            residuals_[i] = std::move(r);
        }
        ++updates_since_refactor_;
        if (updates_since_refactor_ >= kRefactorPeriod) {
            refactor_all();
        } else {
            for (int i = 0; i < state_dim(); ++i) append_factor_row(i, z);
        }
        refresh_alphas();
    }

    /// Replace the dataset wholesale (batch fit); refactorizes.
    void set_dataset(Dataset d) {
        data_ = std::move(d);
        rebuild_residuals();
        refactor_all();
        refresh_alphas();
    }

    void set_kernels(std::vector<CompositeKernel> kernels) {
        if (static_cast<int>(kernels.size()) != state_dim())
            throw ContractViolation("GpModel::set_kernels: wrong number of kernels");
        for (const auto& k : kernels) k.validate();
        kernels_ = std::move(kernels);
        refactor_all();
        refresh_alphas();
    }

    PosteriorSummary posterior(const StateInput& z) const {
        const int n = state_dim();
        const int n_pts = size();
        PosteriorSummary out;
        out.mean = prior_mean(z);
        out.variance.resize(n);
        for (int i = 0; i < n; ++i) {
            const double kzz = composite_eval(kernels_[i], z, z);
            if (n_pts == 0) {
                out.variance[i] = kzz;
                continue;
            }
            VectorXd kstar(n_pts);
            for (int q = 0; q < n_pts; ++q) kstar[q] = composite_eval(kernels_[i], z, data_.inputs[q]);
            out.mean[i] += kstar.dot(alphas_[i]);
            const VectorXd v = factors_[i].triangularView<Eigen::Lower>().solve(kstar);
            out.variance[i] = clamp_variance(kzz - v.squaredNorm());
        }
        return out;
    }

    /// Coefficients of the posterior for one output dim as functions of u
    /// at fixed state x. Exact because the SE atoms see the state only.
    PosteriorCoeffs posterior_coefficients(int dim, const VectorXd& x) const {
        check_dim(dim);
        const int m = input_dim();
        const int n_pts = size();
        const CompositeKernel& ker = kernels_[dim];

        PosteriorCoeffs c;
        c.mean_lin = VectorXd::Zero(m);
        c.var_lin = VectorXd::Zero(m);
        c.var_quad = MatrixXd::Zero(m, m);
        if (prior_drift_) c.mean_offset = prior_drift_(x)[dim];
        if (prior_input_) c.mean_lin = prior_input_(x).row(dim).transpose();
        c.var_const = ker.drift.signal_variance;
        for (int j = 0; j < m; ++j) c.var_quad(j, j) = ker.input[j].signal_variance;
        if (n_pts == 0) return c;

        VectorXd a(n_pts);
        MatrixXd b(n_pts, m);
        for (int q = 0; q < n_pts; ++q) {
            const StateInput& zq = data_.inputs[q];
            a[q] = se_eval(ker.drift, x, zq.x);
            for (int j = 0; j < m; ++j) b(q, j) = se_eval(ker.input[j], x, zq.x) * zq.u[j];
        }
        c.mean_offset += a.dot(alphas_[dim]);
        c.mean_lin += b.transpose() * alphas_[dim];

        const auto lower = factors_[dim].triangularView<Eigen::Lower>();
        const VectorXd va = lower.solve(a);
        const MatrixXd vb = lower.solve(b);
        c.var_const -= va.squaredNorm();
        c.var_lin -= 2.0 * (vb.transpose() * va);
        c.var_quad -= vb.transpose() * vb;
        return c;
    }

    /// Realized information gain (1/2) log det(I + sigma^-2 K) on the
    /// current dataset; a lower bound on the maximal information gain.
    double info_gain(int dim) const {
        check_dim(dim);
        const int n_pts = size();
        if (n_pts == 0) return 0.0;
        double log_det = 0.0;  // of (K + sigma^2 I), via the cached factor
        for (int q = 0; q < n_pts; ++q) log_det += std::log(factors_[dim](q, q));
        return log_det - static_cast<double>(n_pts) * std::log(noise_std_[dim]);
    }

    /// Lemma-style error-bound coefficient for one output dimension.
    double beta(int dim, int n_data) const {
        check_dim(dim);
        if (n_data != size())
            throw ContractViolation("GpModel::beta: n_data must equal the current dataset size");
        const double gamma = info_gain(dim);
        const double n = static_cast<double>(state_dim());
        return rkhs_bound_[dim] +
               noise_std_[dim] * std::sqrt(2.0 * (gamma + 1.0 + std::log(n / delta_)));
    }

    double beta_max() const {
        double b = 0.0;
        for (int i = 0; i < state_dim(); ++i) b = std::max(b, beta(i, size()));
        return b;
    }

    double log_marginal_likelihood(int dim) const {
        check_dim(dim);
        const int n_pts = size();
        if (n_pts == 0) return 0.0;
        double log_det = 0.0;
        for (int q = 0; q < n_pts; ++q) log_det += std::log(factors_[dim](q, q));
        return -0.5 * residuals_[dim].dot(alphas_[dim]) - log_det -
               0.5 * n_pts * std::log(2.0 * M_PI);
    }

    /// Multi-start ascent of the log marginal likelihood per output dim in
    /// log-parameter space. Returns the summed best likelihood. Guaranteed
    /// not to decrease the likelihood relative to the current kernels.
    double fit_hyperparameters(const GpHyperBounds& bounds, int starts, Rng& rng);

private:
    static constexpr int kRefactorPeriod = 64;

    void check_dim(int dim) const {
        if (dim < 0 || dim >= state_dim()) throw ContractViolation("GpModel: output dim out of range");
    }

    double clamp_variance(double v) const {
        if (v < -1e-6) ++numerical_warnings_;
        return std::max(v, 0.0);
    }

    void rebuild_residuals() {
        const int n_pts = size();
        for (int i = 0; i < state_dim(); ++i) residuals_[i].resize(n_pts);
        for (int q = 0; q < n_pts; ++q) {
            const VectorXd r = data_.targets[q] - prior_mean(data_.inputs[q]);
            for (int i = 0; i < state_dim(); ++i) residuals_[i][q] = r[i];
        }
    }

    void refactor_all() {
        for (int i = 0; i < state_dim(); ++i) refactor_dim(i);
        updates_since_refactor_ = 0;
    }

    void refactor_dim(int dim) {
        const int n_pts = size();
        if (n_pts == 0) {
            factors_[dim].resize(0, 0);
            return;
        }
        MatrixXd k = gram_matrix(kernels_[dim], data_.inputs);
        k.diagonal().array() += noise_std_[dim] * noise_std_[dim];
        Eigen::LLT<MatrixXd> llt(k);
        if (llt.info() != Eigen::Success) {
            // Gram conditioning slipped below noise regularization; jitter once.
            k.diagonal().array() += 1e-10 * k.diagonal().maxCoeff();
            llt.compute(k);
            ++numerical_warnings_;
            if (llt.info() != Eigen::Success)
                throw ContractViolation("GpModel: covariance matrix is not positive definite");
        }
        factors_[dim] = llt.matrixL();
    }

    void append_factor_row(int dim, const StateInput& z) {
        const int n_prev = size() - 1;
        const CompositeKernel& ker = kernels_[dim];
        const double kzz = composite_eval(ker, z, z) + noise_std_[dim] * noise_std_[dim];
        if (n_prev == 0) {
            factors_[dim].resize(1, 1);
            factors_[dim](0, 0) = std::sqrt(kzz);
            return;
        }
        VectorXd kvec(n_prev);
        for (int q = 0; q < n_prev; ++q) kvec[q] = composite_eval(ker, z, data_.inputs[q]);
        const VectorXd w = factors_[dim].triangularView<Eigen::Lower>().solve(kvec);
        const double d2 = kzz - w.squaredNorm();
        if (d2 <= 1e-12 * kzz) {
            // Accumulated drift; fall back to the full factorization.
            refactor_dim(dim);
            return;
        }
        MatrixXd grown = MatrixXd::Zero(n_prev + 1, n_prev + 1);
        grown.topLeftCorner(n_prev, n_prev) = factors_[dim];
        grown.row(n_prev).head(n_prev) = w.transpose();
        grown(n_prev, n_prev) = std::sqrt(d2);
        factors_[dim] = std::move(grown);
    }

    void refresh_alphas() {
        const int n_pts = size();
        for (int i = 0; i < state_dim(); ++i) {
            if (n_pts == 0) {
                alphas_[i].resize(0);
                continue;
            }
            const MatrixXd& lower = factors_[i];
            const VectorXd half = lower.triangularView<Eigen::Lower>().solve(residuals_[i]);
            alphas_[i] = lower.triangularView<Eigen::Lower>().transpose().solve(half);
        }
    }

    double candidate_likelihood(int dim, const CompositeKernel& ker) const {
        const int n_pts = size();
        MatrixXd k = gram_matrix(ker, data_.inputs);
        k.diagonal().array() += noise_std_[dim] * noise_std_[dim];
        Eigen::LLT<MatrixXd> llt(k);
        if (llt.info() != Eigen::Success) return -std::numeric_limits<double>::infinity();
        const MatrixXd l = llt.matrixL();
        double log_det = 0.0;
        for (int q = 0; q < n_pts; ++q) log_det += std::log(l(q, q));
        const VectorXd alpha = llt.solve(residuals_[dim]);
        return -0.5 * residuals_[dim].dot(alpha) - log_det - 0.5 * n_pts * std::log(2.0 * M_PI);
    }

    std::vector<CompositeKernel> kernels_;
    VectorXd noise_std_;
    VectorXd rkhs_bound_;
    double delta_;
    PriorDrift prior_drift_;
    PriorInput prior_input_;
    Dataset data_;

    std::vector<MatrixXd> factors_;     // lower Cholesky of (K_i + sigma_i^2 I)
    std::vector<VectorXd> residuals_;   // targets minus prior, per dim
    std::vector<VectorXd> alphas_;      // (K_i + sigma_i^2 I)^-1 residual_i
    int updates_since_refactor_{0};
    mutable int numerical_warnings_{0};
    bool degenerate_fit_warning_{false};
};

// ---------------------------------------------------------------------------
// Hyperparameter fitting (Nelder-Mead in log-parameter space)

namespace detail {

inline VectorXd nelder_mead_maximize(const std::function<double(const VectorXd&)>& objective,
                                     const VectorXd& start, double spread, int max_iters) {
    const int n = static_cast<int>(start.size());
    std::vector<VectorXd> simplex(n + 1, start);
    std::vector<double> value(n + 1);
    for (int i = 0; i < n; ++i) simplex[i + 1][i] += spread;
    for (int i = 0; i <= n; ++i) value[i] = objective(simplex[i]);

    auto order = [&] {
        for (int i = 1; i <= n; ++i)
            for (int j = i; j > 0 && value[j] > value[j - 1]; --j) {
                std::swap(value[j], value[j - 1]);
                std::swap(simplex[j], simplex[j - 1]);
            }
    };
    order();
    for (int iter = 0; iter < max_iters; ++iter) {
        if (std::abs(value[0] - value[n]) < 1e-10) break;
        VectorXd centroid = VectorXd::Zero(n);
        for (int i = 0; i < n; ++i) centroid += simplex[i];
        centroid /= n;

        const VectorXd reflected = centroid + (centroid - simplex[n]);
        const double f_ref = objective(reflected);
        if (f_ref > value[0]) {
            const VectorXd expanded = centroid + 2.0 * (centroid - simplex[n]);
            const double f_exp = objective(expanded);
            if (f_exp > f_ref) {
                simplex[n] = expanded;
                value[n] = f_exp;
            } else {
                simplex[n] = reflected;
                value[n] = f_ref;
            }
        } else if (f_ref > value[n - 1]) {
            simplex[n] = reflected;
            value[n] = f_ref;
        } else {
            const VectorXd contracted = centroid + 0.5 * (simplex[n] - centroid);
            const double f_con = objective(contracted);
            if (f_con > value[n]) {
                simplex[n] = contracted;
                value[n] = f_con;
            } else {
                for (int i = 1; i <= n; ++i) {
                    simplex[i] = simplex[0] + 0.5 * (simplex[i] - simplex[0]);
                    value[i] = objective(simplex[i]);
                }
            }
        }
        order();
    }
    return simplex[0];
}

}  // namespace detail

inline double GpModel::fit_hyperparameters(const GpHyperBounds& bounds, int starts, Rng& rng) {
    const int n_pts = size();
    degenerate_fit_warning_ = false;
    if (n_pts < 2) {
        degenerate_fit_warning_ = true;
        double total = 0.0;
        for (int i = 0; i < state_dim(); ++i) total += log_marginal_likelihood(i);
        return total;
    }
    double max_dist = 0.0;
    for (int p = 0; p < n_pts; ++p)
        for (int q = p + 1; q < n_pts; ++q)
            max_dist = std::max(max_dist, (data_.inputs[p].x - data_.inputs[q].x).norm());
    if (max_dist < 1e-12) {
        degenerate_fit_warning_ = true;
        double total = 0.0;
        for (int i = 0; i < state_dim(); ++i) total += log_marginal_likelihood(i);
        return total;
    }

    const int m = input_dim();
    const int n_params = 2 * (1 + m);
    const double lo_s = std::log(bounds.sigma_lo), hi_s = std::log(bounds.sigma_hi);
    const double lo_l = std::log(bounds.length_lo), hi_l = std::log(bounds.length_hi);

    auto pack = [&](const CompositeKernel& ker) {
        VectorXd theta(n_params);
        theta[0] = std::log(ker.drift.signal_variance) * 0.5;
        theta[1] = std::log(ker.drift.lengthscale);
        for (int j = 0; j < m; ++j) {
            theta[2 + 2 * j] = std::log(ker.input[j].signal_variance) * 0.5;
            theta[3 + 2 * j] = std::log(ker.input[j].lengthscale);
        }
        return theta;
    };
    auto clamp_theta = [&](VectorXd theta) {
        for (int j = 0; j <= m; ++j) {
            theta[2 * j] = std::clamp(theta[2 * j], lo_s, hi_s);
            theta[2 * j + 1] = std::clamp(theta[2 * j + 1], lo_l, hi_l);
        }
        return theta;
    };
    auto unpack = [&](const VectorXd& theta_raw) {
        const VectorXd theta = clamp_theta(theta_raw);
        CompositeKernel ker;
        ker.drift.signal_variance = std::exp(2.0 * theta[0]);
        ker.drift.lengthscale = std::exp(theta[1]);
        ker.input.resize(m);
        for (int j = 0; j < m; ++j) {
            ker.input[j].signal_variance = std::exp(2.0 * theta[2 + 2 * j]);
            ker.input[j].lengthscale = std::exp(theta[3 + 2 * j]);
        }
        return ker;
    };

    std::vector<CompositeKernel> fitted = kernels_;
    double total_best = 0.0;
    for (int dim = 0; dim < state_dim(); ++dim) {
        auto objective = [&](const VectorXd& theta) {
            double penalty = (theta - clamp_theta(theta)).squaredNorm();
            return candidate_likelihood(dim, unpack(theta)) - 1e3 * penalty;
        };
        VectorXd best_theta = clamp_theta(pack(kernels_[dim]));
        double best_value = objective(best_theta);
        for (int s = 0; s < starts; ++s) {
            VectorXd theta0(n_params);
            if (s == 0) {
                theta0 = best_theta;
            } else {
                for (int j = 0; j <= m; ++j) {
                    theta0[2 * j] = rng.uniform(lo_s, hi_s);
                    theta0[2 * j + 1] = rng.uniform(lo_l, hi_l);
                }
            }
            const VectorXd theta = detail::nelder_mead_maximize(objective, theta0, 0.4, 200);
            const double v = objective(theta);
            if (v > best_value) {
                best_value = v;
                best_theta = clamp_theta(theta);
            }
        }
        fitted[dim] = unpack(best_theta);
        total_best += candidate_likelihood(dim, fitted[dim]);
    }
    set_kernels(std::move(fitted));
    return total_best;
}

// ---------------------------------------------------------------------------
// Dataset CSV

inline void Dataset::write_csv(std::ostream& os) const {
    const int n = inputs.empty() ? 0 : static_cast<int>(inputs.front().x.size());
    const int m = inputs.empty() ? 0 : static_cast<int>(inputs.front().u.size());
    for (int i = 0; i < n; ++i) os << "x" << (i + 1) << ",";
    for (int j = 0; j < m; ++j) os << "u" << (j + 1) << ",";
    for (int i = 0; i < n; ++i) os << "y" << (i + 1) << (i + 1 < n ? "," : "");
    os << "\n";
    char buf[32];
    auto put = [&](double v, bool last) {
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        os << buf << (last ? "\n" : ",");
    };
    for (int q = 0; q < size(); ++q) {
        for (int i = 0; i < n; ++i) put(inputs[q].x[i], false);
        for (int j = 0; j < m; ++j) put(inputs[q].u[j], false);
        for (int i = 0; i < n; ++i) put(targets[q][i], i + 1 == n);
    }
}

inline Dataset Dataset::read_csv(std::istream& is) {
    std::string line;
    if (!std::getline(is, line))
        throw ContractViolation("Dataset::read_csv: missing header line");
    int n = 0, m = 0;
    {
        std::stringstream header(line);
        std::string col;
        while (std::getline(header, col, ',')) {
            if (col.rfind('x', 0) == 0) ++n;
            else if (col.rfind('u', 0) == 0) ++m;
        }
        if (n == 0)
            throw ContractViolation("Dataset::read_csv: header does not name any state columns");
    }
    Dataset out;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::stringstream row(line);
        std::string cell;
        std::vector<double> values;
        while (std::getline(row, cell, ',')) values.push_back(std::stod(cell));
        if (static_cast<int>(values.size()) != 2 * n + m)
            throw ContractViolation("Dataset::read_csv: row width does not match header");
        StateInput z{VectorXd(n), VectorXd(m)};
        VectorXd y(n);
        for (int i = 0; i < n; ++i) z.x[i] = values[i];
        for (int j = 0; j < m; ++j) z.u[j] = values[n + j];
        for (int i = 0; i < n; ++i) y[i] = values[n + m + i];
        out.add(z, y);
    }
    return out;
}

}  // namespace gpcbf
