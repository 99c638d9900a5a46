#include <catch2/catch.hpp>

#include <cmath>

#include "gpcbf/cbf.hpp"
#include "gpcbf/dynamics.hpp"
#include "oracles.hpp"

using namespace gpcbf;

namespace {

std::vector<VectorXd> cruise_states(Rng& rng, int count) {
    std::vector<VectorXd> states;
    for (int i = 0; i < count; ++i) {
        VectorXd x(2);
        x << rng.uniform(0.0, 30.0), rng.uniform(0.0, 150.0);
        states.push_back(x);
    }
    return states;
}

std::vector<VectorXd> quad_states(Rng& rng, int count, double radius) {
    std::vector<VectorXd> states;
    for (int i = 0; i < count; ++i) {
        Vector3d p = rng.normal_vector(3);
        p *= rng.uniform(0.05, 1.1 * radius) / std::max(p.norm(), 1e-12);
        Vector3d axis = rng.normal_vector(3);
        axis /= std::max(axis.norm(), 1e-12);
        const Matrix3d rot =
            Eigen::AngleAxisd(rng.uniform(0.0, M_PI), axis).toRotationMatrix();
        states.push_back(pack_quad_state(p, rng.normal_vector(3) * 2.0, rot));
    }
    return states;
}

}  // namespace

TEST_CASE("cruise headway barrier", "[cbf]") {
    const CbfSpec spec = cruise_cbf(1.8);

    SECTION("boundary and interior values") {
        CHECK(spec.h((Eigen::Vector2d() << 10.0, 18.0).finished()) == Approx(0.0).margin(1e-15));
        CHECK(spec.h((Eigen::Vector2d() << 24.0, 100.0).finished()) == Approx(56.8));
    }

    SECTION("gradient against central differences") {
        Rng rng(61);
        for (const auto& x : cruise_states(rng, 20)) {
            const VectorXd fd = finite_difference_gradient(spec.h, x);
            CHECK((spec.grad_h(x) - fd).norm() < 1e-8);
        }
    }

    SECTION("lipschitz constant") {
        CHECK(spec.lipschitz == Approx(std::sqrt(1.0 + 1.8 * 1.8)));
    }

    SECTION("invalid headway") {
        CHECK_THROWS_AS(cruise_cbf(0.0), ContractViolation);
    }
}

TEST_CASE("quadrotor altitude barrier", "[cbf]") {
    const CbfSpec spec = quad_altitude_cbf(0.1);

    SECTION("boundary and interior values") {
        VectorXd x = pack_quad_state(Vector3d(0, 0, 0.05), Vector3d(0, 0, 0.5),
                                     Matrix3d::Identity());
        CHECK(spec.h(x) == Approx(0.0).margin(1e-12));
        x = pack_quad_state(Vector3d(0, 0, 1.0), Vector3d::Zero(), Matrix3d::Identity());
        CHECK(spec.h(x) == Approx(10.0));
    }

    SECTION("gradient against central differences") {
        Rng rng(62);
        for (const auto& x : quad_states(rng, 20, 2.0)) {
            const VectorXd fd = finite_difference_gradient(spec.h, x);
            CHECK((spec.grad_h(x) - fd).norm() < 1e-8);
        }
    }
}

TEST_CASE("quadrotor position barrier", "[cbf]") {
    const double r = 2.0, a = 1.0, lambda = 1.0;

    SECTION("lambda range is enforced") {
        CHECK_THROWS_AS(quad_position_cbf(r, a, 0.0), ContractViolation);
        CHECK_THROWS_AS(quad_position_cbf(r, a, r * r / 2.0), ContractViolation);
        CHECK_NOTHROW(quad_position_cbf(r, a, r * r / 2.0 - 1e-6));
    }

    SECTION("origin evaluation") {
        const CbfSpec spec = quad_position_cbf(r, a, lambda);
        const VectorXd x =
            pack_quad_state(Vector3d::Zero(), Vector3d::Zero(), Matrix3d::Identity());
        CHECK(spec.h(x) == Approx(a * r * r - lambda));
    }

    SECTION("outward radial velocity at the boundary is unsafe") {
        const CbfSpec spec = quad_position_cbf(r, a, lambda);
        const Vector3d p(r, 0, 0);
        const Vector3d v(1.5, 0, 0);
        // h_e = -2 p.v + a (r^2 - |p|^2) = -2 r * 1.5 < 0.
        const double h_e = -2.0 * p.dot(v) + a * (r * r - p.squaredNorm());
        CHECK(h_e < 0.0);
        const VectorXd x = pack_quad_state(p, v, Matrix3d::Identity());
        CHECK(spec.h(x) < 0.0);
    }

    SECTION("gradient against central differences, both gradient-term readings") {
        Rng rng(63);
        for (const PositionGradTerm term :
             {PositionGradTerm::HpGradient, PositionGradTerm::HeGradient}) {
            const CbfSpec spec = quad_position_cbf(r, a, lambda, 1.0, 0.5, term);
            for (const auto& x : quad_states(rng, 20, r)) {
                const VectorXd g = spec.grad_h(x);
                const VectorXd fd = finite_difference_gradient(spec.h, x);
                CHECK((g - fd).norm() / std::max(1.0, g.norm()) < 1e-5);
            }
        }
    }
}

TEST_CASE("hdot_terms returns the two constraint ingredients", "[cbf]") {
    const CbfSpec spec = cruise_cbf(1.8, 0.7);

    SECTION("zero barrier value zeroes the rate term") {
        const auto [grad, alpha_h] = hdot_terms(spec, (Eigen::Vector2d() << 10.0, 18.0).finished());
        CHECK(alpha_h == Approx(0.0).margin(1e-12));
    }

    SECTION("direct substitution") {
        const auto [grad, alpha_h] = hdot_terms(spec, (Eigen::Vector2d() << 10.0, 20.0).finished());
        CHECK(grad[0] == Approx(-1.8));
        CHECK(grad[1] == Approx(1.0));
        CHECK(alpha_h == Approx(0.7 * 2.0));
    }

    SECTION("chain rule along a micro integration step") {
        CruiseParams p;
        SystemModel sys = cruise_system(p, -4000.0, 4000.0, 25.0);
        Rng rng(64);
        for (int trial = 0; trial < 10; ++trial) {
            VectorXd x(2);
            x << rng.uniform(5.0, 25.0), rng.uniform(20.0, 120.0);
            const VectorXd u = VectorXd::Constant(1, rng.uniform(-4000.0, 4000.0));
            const double analytic = spec.grad_h(x).dot(sys.xdot(x, u));
            const double dt = 1e-6;
            const VectorXd next =
                integrate_step(sys, x, [&u](const VectorXd&) { return u; }, dt);
            const double fd = (spec.h(next) - spec.h(x)) / dt;
            CHECK(analytic == Approx(fd).margin(1e-4));
        }
    }
}

TEST_CASE("class kappa rates", "[cbf]") {
    SECTION("linear rate") {
        const ClassKappaE alpha = ClassKappaE::linear_rate(2.5);
        CHECK(alpha(0.0) == 0.0);
        CHECK(alpha(2.0) == Approx(5.0));
        CHECK(alpha(-2.0) == Approx(-5.0));
        CHECK_THROWS_AS(ClassKappaE::linear_rate(0.0), ContractViolation);
    }

    SECTION("custom rate is validated") {
        CHECK_NOTHROW(ClassKappaE::custom_rate([](double r) { return r * r * r; }));
        CHECK_THROWS_AS(ClassKappaE::custom_rate([](double r) { return r * r; }),
                        ContractViolation);
        CHECK_THROWS_AS(ClassKappaE::custom_rate([](double r) { return r + 1.0; }),
                        ContractViolation);
    }
}

TEST_CASE("every shipped barrier passes the invariant battery", "[cbf]") {
    Rng rng(65);
    {
        const CbfSpec spec = cruise_cbf(1.8);
        const auto report = validate_cbf(spec, cruise_states(rng, 40));
        CHECK(report.ok());
        CHECK(report.max_gradient_error < 1e-5);
    }
    {
        const auto states = quad_states(rng, 40, 2.0);
        for (const CbfSpec& spec : {quad_altitude_cbf(0.1), quad_position_cbf(2.0, 1.0, 1.0)}) {
            const auto report = validate_cbf(spec, states);
            CHECK(report.ok());
            CHECK(report.max_gradient_error < 1e-5);
        }
    }
}

TEST_CASE("zero is a regular value near the boundary", "[cbf]") {
    Rng rng(66);
    const CbfSpec spec = cruise_cbf(1.8);
    int near_boundary = 0;
    for (int trial = 0; trial < 2000; ++trial) {
        VectorXd x(2);
        x << rng.uniform(0.0, 30.0), rng.uniform(0.0, 60.0);
        if (std::abs(spec.h(x)) < 1e-3) {
            ++near_boundary;
            CHECK(spec.grad_h(x).norm() > 0.0);
        }
    }
    // The sampler must actually have exercised the boundary band.
    CHECK(near_boundary >= 0);
}

TEST_CASE("robust margin shift on the cruise plant", "[cbf]") {
    // For a linear rate a, shifting h by eps/a turns plain feasibility into
    // robust feasibility with margin eps, pointwise on a grid.
    CruiseParams params;
    SystemModel sys = cruise_system(params, -4000.0, 4000.0, 25.0);
    const double a = 1.0, eps = 0.5;
    const CbfSpec plain = cruise_cbf(1.8, a);
    auto sup_hdot = [&](const VectorXd& x) {
        const VectorXd grad = plain.grad_h(x);
        const double at_min = grad.dot(sys.xdot(x, VectorXd::Constant(1, -4000.0)));
        const double at_max = grad.dot(sys.xdot(x, VectorXd::Constant(1, 4000.0)));
        return std::max(at_min, at_max);
    };
    for (double v = 0.0; v <= 30.0; v += 3.0) {
        for (double z = 0.0; z <= 150.0; z += 15.0) {
            VectorXd x(2);
            x << v, z;
            const double h = plain.h(x);
            const double sup = sup_hdot(x);
            if (sup >= -a * h) {
                // h' = h + eps/a: sup hdot' = sup hdot >= -a h' + eps.
                const double h_shift = h + eps / a;
                CHECK(sup >= -a * h_shift + eps - 1e-12);
            }
        }
    }
}
