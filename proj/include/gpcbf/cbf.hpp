#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Geometry>

#include "gpcbf/dynamics.hpp"
#include "gpcbf/errors.hpp"
#include "gpcbf/rng.hpp"

namespace gpcbf {

/// Extended class-K-infinity rate. Linear in all shipped scenarios; a
/// custom strictly increasing odd-extension function is also accepted.
struct ClassKappaE {
    double slope{1.0};
    bool linear{true};
    std::function<double(double)> custom;

    double operator()(double r) const { return linear ? slope * r : custom(r); }

    static ClassKappaE linear_rate(double a) {
        if (!(a > 0.0)) throw ContractViolation("ClassKappaE: slope must be positive");
        return ClassKappaE{a, true, nullptr};
    }

    static ClassKappaE custom_rate(std::function<double(double)> fn) {
        ClassKappaE k{0.0, false, std::move(fn)};
        if (std::abs(k.custom(0.0)) > 1e-12)
            throw ContractViolation("ClassKappaE: alpha(0) must be 0");
        double prev = k.custom(-10.0);
        for (double r = -9.5; r <= 10.0; r += 0.5) {
            const double cur = k.custom(r);
            if (cur <= prev) throw ContractViolation("ClassKappaE: alpha must be strictly increasing");
            prev = cur;
        }
        return k;
    }
};

/// Barrier function with the constants every downstream constraint needs.
struct CbfSpec {
    std::string name;
    std::function<double(const VectorXd&)> h;
    std::function<VectorXd(const VectorXd&)> grad_h;
    ClassKappaE alpha;
    double lipschitz{1.0};      // L_h
    double grad_bound{1.0};     // M_{||dh/dx||}, used by the sampling schedule
    double robust_margin{0.1};  // epsilon
};

/// The two state-dependent ingredients of the barrier constraint.
inline std::pair<VectorXd, double> hdot_terms(const CbfSpec& spec, const VectorXd& x) {
    return {spec.grad_h(x), spec.alpha(spec.h(x))};
}

// ---------------------------------------------------------------------------
// Shipped barrier families

/// Headway barrier h(v, z) = z - T_h v for the cruise plant.
inline CbfSpec cruise_cbf(double headway, double alpha_slope = 1.0, double robust_margin = 0.5) {
    if (!(headway > 0.0)) throw ContractViolation("cruise_cbf: headway must be positive");
    CbfSpec spec;
    spec.name = "headway";
    spec.h = [headway](const VectorXd& x) { return x[1] - headway * x[0]; };
    spec.grad_h = [headway](const VectorXd& x) {
        VectorXd g(x.size());
        g.setZero();
        g[0] = -headway;
        g[1] = 1.0;
        return g;
    };
    spec.alpha = ClassKappaE::linear_rate(alpha_slope);
    spec.lipschitz = std::sqrt(1.0 + headway * headway);
    spec.grad_bound = spec.lipschitz;
    spec.robust_margin = robust_margin;
    return spec;
}

/// Altitude barrier h = 10 (p_z - T_z v_z) on the 15-dim quadrotor state.
inline CbfSpec quad_altitude_cbf(double t_z, double alpha_slope = 1.0, double robust_margin = 0.5) {
    if (!(t_z > 0.0)) throw ContractViolation("quad_altitude_cbf: T_z must be positive");
    CbfSpec spec;
    spec.name = "altitude";
    spec.h = [t_z](const VectorXd& x) { return 10.0 * (x[2] - t_z * x[5]); };
    spec.grad_h = [t_z](const VectorXd& x) {
        VectorXd g = VectorXd::Zero(x.size());
        g[2] = 10.0;
        g[5] = -10.0 * t_z;
        return g;
    };
    spec.alpha = ClassKappaE::linear_rate(alpha_slope);
    spec.lipschitz = 10.0 * std::sqrt(1.0 + t_z * t_z);
    spec.grad_bound = spec.lipschitz;
    spec.robust_margin = robust_margin;
    return spec;
}

/// Which gradient the orientation term of the position barrier uses.
enum class PositionGradTerm { HpGradient, HeGradient };

/// Position-ball barrier for the quadrotor: extends h_p = r^2 - |p|^2 to a
/// relative-degree-1 function h_e = hdot_p + a h_p, then subtracts an
/// orientation term so the thrust axis points inward near the boundary.
inline CbfSpec quad_position_cbf(double radius, double he_alpha, double lambda,
                                 double alpha_slope = 1.0, double robust_margin = 0.5,
                                 PositionGradTerm grad_term = PositionGradTerm::HpGradient,
                                 double velocity_scale = 10.0) {
    if (!(radius > 0.0) || !(he_alpha > 0.0))
        throw ContractViolation("quad_position_cbf: radius and he_alpha must be positive");
    if (!(lambda > 0.0 && lambda < radius * radius / 2.0))
        throw ContractViolation("quad_position_cbf: lambda must lie in (0, r^2/2)");

    auto value = [radius, he_alpha, lambda, grad_term](const VectorXd& x) {
        const Vector3d p = x.segment<3>(0);
        const Vector3d v = x.segment<3>(3);
        const Vector3d bz = rotation_part(x) * Vector3d::UnitZ();
        const double h_p = radius * radius - p.squaredNorm();
        const double h_e = -2.0 * p.dot(v) + he_alpha * h_p;
        const Vector3d w = (grad_term == PositionGradTerm::HpGradient)
                               ? Vector3d(-2.0 * p)
                               : Vector3d(-2.0 * v - 2.0 * he_alpha * p);
        return h_e - lambda * (1.0 - w.dot(bz) / (2.0 * radius));
    };
    auto gradient = [radius, he_alpha, lambda, grad_term](const VectorXd& x) {
        const Vector3d p = x.segment<3>(0);
        const Vector3d v = x.segment<3>(3);
        const Matrix3d rot = rotation_part(x);
        const Vector3d bz = rot * Vector3d::UnitZ();
        VectorXd g = VectorXd::Zero(15);
        Vector3d gp = -2.0 * v - 2.0 * he_alpha * p;
        Vector3d gv = -2.0 * p;
        Vector3d w;
        if (grad_term == PositionGradTerm::HpGradient) {
            w = -2.0 * p;
            gp += lambda / (2.0 * radius) * (-2.0) * bz;
        } else {
            w = -2.0 * v - 2.0 * he_alpha * p;
            gp += lambda / (2.0 * radius) * (-2.0 * he_alpha) * bz;
            gv += lambda / (2.0 * radius) * (-2.0) * bz;
        }
        g.segment<3>(0) = gp;
        g.segment<3>(3) = gv;
        // d/dR of w . (R e_z) is w e_z^T; only the last column is nonzero.
        const Matrix3d dr = (lambda / (2.0 * radius)) * w * Vector3d::UnitZ().transpose();
        g.segment<9>(6) = Eigen::Map<const VectorXd>(dr.data(), 9);
        return g;
    };

    CbfSpec spec;
    spec.name = "position";
    spec.h = value;
    spec.grad_h = gradient;
    spec.alpha = ClassKappaE::linear_rate(alpha_slope);

    // No closed-form Lipschitz constant; sample the gradient norm over the
    // operating region and pad by 20 percent.
    Rng rng(0x9e37u);
    double sup_norm = 0.0;
    for (int i = 0; i < 400; ++i) {
        VectorXd x(15);
        Vector3d p = rng.normal_vector(3);
        p *= rng.uniform(0.0, 1.2 * radius) / std::max(p.norm(), 1e-12);
        x.segment<3>(0) = p;
        x.segment<3>(3) = rng.normal_vector(3) * (velocity_scale / std::sqrt(3.0));
        Vector3d axis = rng.normal_vector(3);
        axis /= std::max(axis.norm(), 1e-12);
        const double angle = rng.uniform(0.0, M_PI);
        const Matrix3d rot = Eigen::AngleAxisd(angle, axis).toRotationMatrix();
        Eigen::Map<Matrix3d>(x.data() + 6) = rot;
        sup_norm = std::max(sup_norm, gradient(x).norm());
    }
    spec.lipschitz = 1.2 * sup_norm;
    spec.grad_bound = spec.lipschitz;
    spec.robust_margin = robust_margin;
    return spec;
}

// ---------------------------------------------------------------------------
// Invariant battery

struct CbfCheckReport {
    bool gradient_ok{true};
    bool lipschitz_ok{true};
    bool alpha_ok{true};
    bool regular_value_ok{true};
    double max_gradient_error{0.0};

    bool ok() const { return gradient_ok && lipschitz_ok && alpha_ok && regular_value_ok; }
};

inline VectorXd finite_difference_gradient(const std::function<double(const VectorXd&)>& f,
                                           const VectorXd& x, double step = 1e-6) {
    VectorXd g(x.size());
    VectorXd xp = x, xm = x;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        xp[i] += step;
        xm[i] -= step;
        g[i] = (f(xp) - f(xm)) / (2.0 * step);
        xp[i] = x[i];
        xm[i] = x[i];
    }
    return g;
}

/// Sampling battery every constructed barrier must pass before use.
inline CbfCheckReport validate_cbf(const CbfSpec& spec, const std::vector<VectorXd>& states,
                                   double grad_tol = 1e-5) {
    CbfCheckReport report;
    for (const auto& x : states) {
        const VectorXd g = spec.grad_h(x);
        const VectorXd fd = finite_difference_gradient(spec.h, x);
        const double err = (g - fd).norm() / std::max(1.0, g.norm());
        report.max_gradient_error = std::max(report.max_gradient_error, err);
        if (err > grad_tol) report.gradient_ok = false;
        if (g.norm() > spec.grad_bound * (1.0 + 1e-9)) report.lipschitz_ok = false;
        if (std::abs(spec.h(x)) < 1e-3 && g.norm() <= 0.0) report.regular_value_ok = false;
    }
    for (std::size_t i = 0; i + 1 < states.size(); ++i) {
        const double dh = std::abs(spec.h(states[i]) - spec.h(states[i + 1]));
        const double dx = (states[i] - states[i + 1]).norm();
        if (dh > spec.lipschitz * dx * (1.0 + 1e-9) + 1e-12) report.lipschitz_ok = false;
    }
    if (std::abs(spec.alpha(0.0)) > 1e-12) report.alpha_ok = false;
    double prev = spec.alpha(-4.0);
    for (double r = -3.5; r <= 4.0; r += 0.5) {
        const double cur = spec.alpha(r);
        if (cur <= prev) report.alpha_ok = false;
        prev = cur;
    }
    if (!(spec.alpha(1.0) > 0.0 && spec.alpha(-1.0) < 0.0)) report.alpha_ok = false;
    return report;
}

}  // namespace gpcbf
