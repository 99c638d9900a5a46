#pragma once

#include <cmath>
#include <functional>
#include <utility>

#include <Eigen/Dense>
#include <Eigen/SVD>

#include "gpcbf/errors.hpp"
#include "gpcbf/kernels.hpp"
#include "gpcbf/rng.hpp"

namespace gpcbf {

using Eigen::Matrix3d;
using Eigen::Vector3d;

/// Ground-truth control-affine plant xdot = f(x) + g(x) u with a compact
/// box input set. Used by the simulator and oracle tests only; the
/// controller never touches f and g directly.
struct SystemModel {
    int state_dim{0};
    int input_dim{0};
    std::function<VectorXd(const VectorXd&)> drift;
    std::function<MatrixXd(const VectorXd&)> input_matrix;
    VectorXd input_lo;
    VectorXd input_hi;
    double xdot_bound{0.0};  // M_xdot
    std::function<VectorXd(const VectorXd&)> project;  // optional post-step manifold projection

    VectorXd xdot(const VectorXd& x, const VectorXd& u) const {
        return drift(x) + input_matrix(x) * u;
    }
};

struct CruiseParams {
    double mass{1650.0};
    double rolling0{0.2};
    double rolling1{10.0};
    double rolling2{0.5};
    double lead_speed{14.0};
    double headway{1.8};
    double desired_speed{24.0};
};

struct QuadrotorParams {
    double gravity{9.81};
    double ground_effect_strength{5.0};  // rho
    double rotor_radius{0.09};
    double thrust_bound{15000.0};
    double altitude_gain{0.1};  // T_z
};

struct Measurement {
    StateInput z;
    VectorXd y;  // xdot(z) + noise
};

// ---------------------------------------------------------------------------
// Cruise control plant, state x = [v z]: ego speed and gap to the lead car.
// The wheel force enters the speed equation, so g = (1/m, 0).

inline std::pair<VectorXd, MatrixXd> cruise_dynamics(const CruiseParams& p, const VectorXd& x) {
    const double v = x[0];
    VectorXd f(2);
    f[0] = -(p.rolling0 + p.rolling1 * v + p.rolling2 * v * v) / p.mass;
    f[1] = p.lead_speed - v;
    MatrixXd g(2, 1);
    g(0, 0) = 1.0 / p.mass;
    g(1, 0) = 0.0;
    return {f, g};
}

inline SystemModel cruise_system(const CruiseParams& p, double u_lo, double u_hi, double m_xdot) {
    SystemModel sys;
    sys.state_dim = 2;
    sys.input_dim = 1;
    sys.drift = [p](const VectorXd& x) { return cruise_dynamics(p, x).first; };
    sys.input_matrix = [p](const VectorXd& x) { return cruise_dynamics(p, x).second; };
    sys.input_lo = VectorXd::Constant(1, u_lo);
    sys.input_hi = VectorXd::Constant(1, u_hi);
    sys.xdot_bound = m_xdot;
    return sys;
}

// ---------------------------------------------------------------------------
// Quadrotor with ground effect. State (15): p (0..2), v (3..5), R column-major
// (6..14). Input (4): thrust acceleration T then body rates omega.

inline Matrix3d skew(const Vector3d& w) {
    Matrix3d s;
    s << 0, -w[2], w[1], w[2], 0, -w[0], -w[1], w[0], 0;
    return s;
}

inline Matrix3d rotation_part(const VectorXd& x) {
    return Eigen::Map<const Matrix3d>(x.data() + 6);
}

inline VectorXd pack_quad_state(const Vector3d& p, const Vector3d& v, const Matrix3d& rot) {
    VectorXd x(15);
    x.segment<3>(0) = p;
    x.segment<3>(3) = v;
    Eigen::Map<Matrix3d>(x.data() + 6) = rot;
    return x;
}

/// Ground-effect thrust factor zeta(p_z), clamped to [0, 1]; zeta <= 0 is
/// the ground-contact regime.
inline double ground_effect(const QuadrotorParams& p, double pz) {
    if (pz <= 1e-9) return 0.0;
    const double ratio = p.rotor_radius / (4.0 * pz);
    const double zeta = 1.0 - p.ground_effect_strength * ratio * ratio;
    return std::clamp(zeta, 0.0, 1.0);
}

inline bool in_ground_contact(const QuadrotorParams& p, double pz) {
    return pz <= p.rotor_radius * std::sqrt(p.ground_effect_strength) / 4.0;
}

inline VectorXd quadrotor_xdot(const QuadrotorParams& p, const VectorXd& x, const VectorXd& u) {
    const Vector3d v = x.segment<3>(3);
    const Matrix3d rot = rotation_part(x);
    const double thrust = u[0];
    const Vector3d omega = u.segment<3>(1);
    const double zeta = ground_effect(p, x[2]);

    VectorXd dx(15);
    dx.segment<3>(0) = v;
    dx.segment<3>(3) = p.gravity * Vector3d::UnitZ() + zeta * thrust * (rot * Vector3d::UnitZ());
    Eigen::Map<Matrix3d>(dx.data() + 6) = rot * skew(omega);
    return dx;
}

/// Nearest rotation matrix (polar projection via SVD).
inline Matrix3d orthonormalize(const Matrix3d& r) {
    Eigen::JacobiSVD<Matrix3d> svd(r, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Matrix3d out = svd.matrixU() * svd.matrixV().transpose();
    if (out.determinant() < 0) out = svd.matrixU() * Vector3d(1, 1, -1).asDiagonal() * svd.matrixV().transpose();
    return out;
}

inline SystemModel quadrotor_system(const QuadrotorParams& p, const VectorXd& u_lo,
                                    const VectorXd& u_hi, double m_xdot) {
    if (u_lo.size() != 4 || u_hi.size() != 4)
        throw ContractViolation("quadrotor_system: input box must be 4-dimensional");
    SystemModel sys;
    sys.state_dim = 15;
    sys.input_dim = 4;
    sys.drift = [p](const VectorXd& x) {
        VectorXd f = VectorXd::Zero(15);
        f.segment<3>(0) = x.segment<3>(3);
        f.segment<3>(3) = p.gravity * Vector3d::UnitZ();
        return f;
    };
    sys.input_matrix = [p](const VectorXd& x) {
        MatrixXd g = MatrixXd::Zero(15, 4);
        const Matrix3d rot = rotation_part(x);
        g.block<3, 1>(3, 0) = ground_effect(p, x[2]) * (rot * Vector3d::UnitZ());
        for (int k = 0; k < 3; ++k) {
            const Matrix3d col = rot * skew(Vector3d::Unit(k));
            g.block<9, 1>(6, 1 + k) = Eigen::Map<const VectorXd>(col.data(), 9);
        }
        return g;
    };
    sys.input_lo = u_lo;
    sys.input_hi = u_hi;
    sys.xdot_bound = m_xdot;
    sys.project = [](const VectorXd& x) {
        VectorXd out = x;
        Eigen::Map<Matrix3d>(out.data() + 6) = orthonormalize(rotation_part(x));
        return out;
    };
    return sys;
}

// ---------------------------------------------------------------------------
// Integration and measurement

/// One classical RK4 step of the closed loop xdot = f(x) + g(x) policy(x).
inline VectorXd integrate_step(const SystemModel& sys, const VectorXd& x,
                               const std::function<VectorXd(const VectorXd&)>& policy, double dt) {
    if (!(dt > 0.0)) throw ContractViolation("integrate_step: dt must be positive");
    auto rhs = [&](const VectorXd& s) { return sys.xdot(s, policy(s)); };
    const VectorXd k1 = rhs(x);
    const VectorXd k2 = rhs(x + 0.5 * dt * k1);
    const VectorXd k3 = rhs(x + 0.5 * dt * k2);
    const VectorXd k4 = rhs(x + dt * k3);
    VectorXd next = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    if (sys.project) next = sys.project(next);
    if (!next.allFinite()) throw IntegrationDiverged("integrate_step: non-finite state");
    return next;
}

/// Noisy instantaneous derivative measurement y = xdot(z) + xi,
/// xi_i ~ N(0, noise_std_i^2); deterministic given the rng state.
inline Measurement measure(const SystemModel& sys, const StateInput& z, const VectorXd& noise_std,
                           Rng& rng) {
    Measurement m;
    m.z = z;
    m.y = sys.xdot(z.x, z.u);
    for (Eigen::Index i = 0; i < m.y.size(); ++i) m.y[i] += noise_std[i] * rng.normal();
    return m;
}

}  // namespace gpcbf
