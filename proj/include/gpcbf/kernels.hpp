#pragma once

#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "gpcbf/errors.hpp"

namespace gpcbf {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Concatenated state-input point z = (x, u).
struct StateInput {
    VectorXd x;
    VectorXd u;
};

/// Squared-exponential kernel hyperparameters.
struct SeKernelParams {
    double signal_variance{1.0};
    double lengthscale{1.0};

    void validate() const {
        if (!(signal_variance > 0.0) || !(lengthscale > 0.0))
            throw ContractViolation("SeKernelParams: signal_variance and lengthscale must be positive");
    }
};

inline double se_eval(const SeKernelParams& p, const VectorXd& a, const VectorXd& b) {
    if (a.size() != b.size())
        throw ContractViolation("se_eval: dimension mismatch");
    const double d2 = (a - b).squaredNorm();
    return p.signal_variance * std::exp(-d2 / (2.0 * p.lengthscale * p.lengthscale));
}

/// Control-affine covariance: a drift kernel plus one kernel per input
/// channel, all evaluated on the state component only, so that GP means
/// are affine and variances quadratic in u.
struct CompositeKernel {
    SeKernelParams drift;
    std::vector<SeKernelParams> input;

    int input_dim() const { return static_cast<int>(input.size()); }

    void validate() const {
        drift.validate();
        for (const auto& p : input) p.validate();
    }

    /// Prior variance at z, k(z, z) = sigma_f^2 + sum_j u_j^2 sigma_gj^2.
    double self_variance(const VectorXd& u) const {
        if (u.size() != input_dim())
            throw ContractViolation("CompositeKernel: input dimension mismatch");
        double v = drift.signal_variance;
        for (int j = 0; j < input_dim(); ++j) v += u[j] * u[j] * input[j].signal_variance;
        return v;
    }
};

inline double composite_eval(const CompositeKernel& k, const StateInput& a, const StateInput& b) {
    if (a.x.size() != b.x.size() || a.u.size() != b.u.size())
        throw ContractViolation("composite_eval: dimension mismatch between points");
    if (a.u.size() != k.input_dim())
        throw ContractViolation("composite_eval: input dimension does not match kernel");
    double v = se_eval(k.drift, a.x, b.x);
    for (int j = 0; j < k.input_dim(); ++j)
        v += a.u[j] * se_eval(k.input[j], a.x, b.x) * b.u[j];
    return v;
}

inline MatrixXd gram_matrix(const CompositeKernel& k, const std::vector<StateInput>& points) {
    if (points.empty())
        throw ContractViolation("gram_matrix: empty point list");
    const int n = static_cast<int>(points.size());
    MatrixXd gram(n, n);
    for (int p = 0; p < n; ++p) {
        for (int q = p; q < n; ++q) {
            const double v = composite_eval(k, points[p], points[q]);
            gram(p, q) = v;
            gram(q, p) = v;
        }
    }
    return gram;
}

}  // namespace gpcbf
