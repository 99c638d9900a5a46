#pragma once

#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace gpcbf {

/// A documented precondition was violated by the caller.
struct ContractViolation : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// The exploration sample budget (or dataset capacity) ran out.
struct BudgetExhausted : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// The integrator produced a non-finite state.
struct IntegrationDiverged : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// An episode started outside the interior of the safe set, or the
/// barrier value was consumed before feasibility was recovered.
struct SafetyViolated : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// The interior-point solve did not converge; carries the best iterate.
struct SolverFailure : std::runtime_error {
    SolverFailure(const std::string& what, Eigen::VectorXd iterate, double residual)
        : std::runtime_error(what), best_iterate(std::move(iterate)), kkt_residual(residual) {}

    Eigen::VectorXd best_iterate;
    double kkt_residual;
};

}  // namespace gpcbf
