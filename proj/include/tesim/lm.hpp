#pragma once

#include <functional>

#include <Eigen/Dense>

namespace tesim::numerics {

struct LmOptions {
    int max_iterations = 300;
    double gradient_tol = 1e-12; ///< stop when the scaled gradient inf-norm falls below this
    double step_tol = 1e-14;     ///< stop when the relative step or cost change falls below this
    double lambda0 = 1e-3;       ///< initial Marquardt damping
};

struct LmResult {
    Eigen::VectorXd x;
    double cost = 0.0; ///< sum of squared residuals at x
    int iterations = 0;
    bool converged = false;
};

using ResidualFn = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;
using JacobianFn = std::function<Eigen::MatrixXd(const Eigen::VectorXd&)>;

/// Dense Levenberg-Marquardt least squares. Pass an analytic Jacobian when
/// available; otherwise forward differences are used. Small problems only:
/// the normal equations are formed explicitly.
LmResult lm_fit(const ResidualFn& residuals, const JacobianFn& jacobian,
                const Eigen::VectorXd& x0, const LmOptions& opts = {});

/// Forward-difference Jacobian used when no analytic one is supplied.
Eigen::MatrixXd numeric_jacobian(const ResidualFn& residuals, const Eigen::VectorXd& x);

} // namespace tesim::numerics
