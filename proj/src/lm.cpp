#include "tesim/lm.hpp"

#include <cmath>

namespace tesim::numerics {

Eigen::MatrixXd numeric_jacobian(const ResidualFn& residuals, const Eigen::VectorXd& x) {
    Eigen::VectorXd r0 = residuals(x);
    Eigen::MatrixXd J(r0.size(), x.size());
    for (Eigen::Index j = 0; j < x.size(); ++j) {
        double h = 1e-7 * std::max(1.0, std::abs(x[j]));
        Eigen::VectorXd xp = x;
        xp[j] += h;
        J.col(j) = (residuals(xp) - r0) / h;
    }
    return J;
}

LmResult lm_fit(const ResidualFn& residuals, const JacobianFn& jacobian,
                const Eigen::VectorXd& x0, const LmOptions& opts) {
    LmResult res;
    res.x = x0;

    Eigen::VectorXd r = residuals(res.x);
    res.cost = r.squaredNorm();
    double lambda = opts.lambda0;

    for (res.iterations = 0; res.iterations < opts.max_iterations; ++res.iterations) {
        Eigen::MatrixXd J = jacobian ? jacobian(res.x) : numeric_jacobian(residuals, res.x);
        Eigen::VectorXd g = J.transpose() * r;
        if (g.lpNorm<Eigen::Infinity>() < opts.gradient_tol * (1.0 + res.cost)) {
            res.converged = true;
            break;
        }

        Eigen::MatrixXd jtj = J.transpose() * J;
        Eigen::VectorXd diag = jtj.diagonal().cwiseMax(1e-12);

        bool stepped = false;
        for (int tries = 0; tries < 40; ++tries) {
            Eigen::MatrixXd a = jtj;
            a.diagonal() += lambda * diag;
            Eigen::VectorXd dx = a.ldlt().solve(-g);
            if (!dx.allFinite()) {
                lambda *= 10.0;
                continue;
            }
            Eigen::VectorXd xt = res.x + dx;
            Eigen::VectorXd rt = residuals(xt);
            double ct = rt.squaredNorm();
            if (std::isfinite(ct) && ct <= res.cost) {
                double drop = res.cost - ct;
                double step = dx.norm();
                res.x = xt;
                r = rt;
                res.cost = ct;
                lambda = std::max(lambda * 0.3, 1e-14);
                stepped = true;
                if (drop < opts.step_tol * (1.0 + res.cost)
                    || step < opts.step_tol * (1.0 + res.x.norm()))
                    res.converged = true;
                break;
            }
            lambda *= 10.0;
        }
        if (res.converged)
            break;
        if (!stepped) {
            // damping exhausted without an acceptable step; treat the current
            // point as stationary
            res.converged = true;
            break;
        }
    }
    return res;
}

} // namespace tesim::numerics
