#include "tesim/calibration.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>

#include "tesim/lm.hpp"

namespace tesim::calibration {

namespace {

constexpr double kEtaClamp = 1e-12;

double sigmoid(double t) {
    double s = 1.0 / (1.0 + std::exp(-t));
    return std::clamp(s, kEtaClamp, 1.0 - kEtaClamp);
}

double logit(double p) {
    return std::log(p / (1.0 - p));
}

bool in_unit_interval(double v) {
    return v >= 0.0 && v <= 1.0;
}

// Measurements and their weights, flattened forward-then-reverse.
struct FlatData {
    std::vector<double> y;
    std::vector<double> sigma;
};

FlatData flatten(const CalibrationMeasurementSet& meas) {
    FlatData d;
    d.y = meas.forward;
    d.y.insert(d.y.end(), meas.reverse.begin(), meas.reverse.end());
    if (!meas.sigma_forward.empty()) {
        d.sigma = meas.sigma_forward;
        d.sigma.insert(d.sigma.end(), meas.sigma_reverse.begin(), meas.sigma_reverse.end());
    } else {
        // relative weighting with a floor so dark channels keep finite weight
        double top = *std::max_element(d.y.begin(), d.y.end());
        d.sigma.reserve(d.y.size());
        for (double v : d.y)
            d.sigma.push_back(std::max(v, 1e-9 * top));
    }
    return d;
}

// Jacobian of the stacked predictions with respect to (eta_1..N, eta_a, eta_b),
// weighted by 1/sigma. The model is a product of factors, so each partial is
// the prediction divided by the factor it differentiates.
Eigen::MatrixXd prediction_jacobian(const CalibrationModel& model, const std::vector<double>& eta,
                                    double eta_a, double eta_b, const CalibrationPrediction& p,
                                    const std::vector<double>& sigma) {
    const int n = model.n_detectors;
    Eigen::MatrixXd J = Eigen::MatrixXd::Zero(2 * n, n + 2);
    for (int k = 0; k < n; ++k) {
        const double fk = p.forward[k];
        J(k, k) = fk / eta[k];
        for (int j = 0; j < k; ++j)
            J(k, j) = -fk / (1.0 - eta[j]);
        J(k, n) = fk / eta_a;

        const double rk = p.reverse[k];
        J(n + k, k) = rk / eta[k];
        for (int j = k + 1; j < n; ++j)
            J(n + k, j) = -rk / (1.0 - eta[j]);
        J(n + k, n + 1) = rk / eta_b;
    }
    for (int r = 0; r < 2 * n; ++r)
        J.row(r) /= sigma[std::size_t(r)];
    return J;
}

} // namespace

void CalibrationModel::validate() const {
    if (n_detectors < 3)
        throw std::invalid_argument(
            "calibration needs at least three detectors for an overdetermined system");
    if (!(alpha >= 0.0))
        throw std::invalid_argument("attenuation coefficient must be non-negative");
    if (!(l1 >= 0.0) || !(l2 > 0.0))
        throw std::invalid_argument("section lengths must be positive");
    if (!(n_in > 0.0))
        throw std::invalid_argument("mean input photon number must be positive");
}

CalibrationPrediction forward_model(const CalibrationModel& model, const std::vector<double>& eta,
                                    double eta_a, double eta_b) {
    model.validate();
    const int n = model.n_detectors;
    if (int(eta.size()) != n)
        throw std::invalid_argument("efficiency vector length does not match detector count");
    for (double e : eta)
        if (!in_unit_interval(e))
            throw std::invalid_argument("detector efficiencies must lie in [0, 1]");
    if (!in_unit_interval(eta_a) || !in_unit_interval(eta_b))
        throw std::invalid_argument("facet couplings must lie in [0, 1]");

    CalibrationPrediction out;
    out.forward.resize(std::size_t(n));
    out.reverse.resize(std::size_t(n));
    double shadow = 1.0;
    for (int k = 0; k < n; ++k) {
        double att = std::exp(-model.alpha * (model.l1 + k * model.l2));
        out.forward[std::size_t(k)] = eta_a * att * shadow * eta[std::size_t(k)] * model.n_in;
        shadow *= 1.0 - eta[std::size_t(k)];
    }
    shadow = 1.0;
    for (int k = n - 1; k >= 0; --k) {
        double att = std::exp(-model.alpha * (model.l1 + (n - 1 - k) * model.l2));
        out.reverse[std::size_t(k)] = eta_b * att * shadow * eta[std::size_t(k)] * model.n_in;
        shadow *= 1.0 - eta[std::size_t(k)];
    }
    return out;
}

void CalibrationMeasurementSet::validate(int n_detectors) const {
    const std::size_t n = std::size_t(n_detectors);
    if (forward.size() != n || reverse.size() != n)
        throw DataError("measurement set does not cover every detector in both directions");
    double total = 0.0;
    for (double v : forward) {
        if (!(v >= 0.0))
            throw DataError("mean photon numbers must be non-negative");
        total += v;
    }
    for (double v : reverse) {
        if (!(v >= 0.0))
            throw DataError("mean photon numbers must be non-negative");
        total += v;
    }
    if (total <= 0.0)
        throw DataError("all measurements are zero; nothing to fit");
    const bool have_sigma = !sigma_forward.empty() || !sigma_reverse.empty();
    if (have_sigma) {
        if (sigma_forward.size() != n || sigma_reverse.size() != n)
            throw DataError("uncertainties must be given for every channel or none");
        for (double s : sigma_forward)
            if (!(s > 0.0))
                throw DataError("uncertainties must be positive");
        for (double s : sigma_reverse)
            if (!(s > 0.0))
                throw DataError("uncertainties must be positive");
    }
}

DofReport dof_check(int n_detectors) {
    if (n_detectors < 1)
        throw std::invalid_argument("detector count must be positive");
    DofReport r;
    r.n_measurements = 2 * n_detectors;
    r.n_unknowns = n_detectors + 2;
    r.overdetermined = r.n_measurements > r.n_unknowns;
    return r;
}

double weighted_ssr(const CalibrationModel& model, const CalibrationMeasurementSet& meas,
                    const std::vector<double>& eta, double eta_a, double eta_b) {
    meas.validate(model.n_detectors);
    FlatData d = flatten(meas);
    CalibrationPrediction p = forward_model(model, eta, eta_a, eta_b);
    double ssr = 0.0;
    const std::size_t n = std::size_t(model.n_detectors);
    for (std::size_t i = 0; i < n; ++i) {
        double r = (p.forward[i] - d.y[i]) / d.sigma[i];
        ssr += r * r;
    }
    for (std::size_t i = 0; i < n; ++i) {
        double r = (p.reverse[i] - d.y[n + i]) / d.sigma[n + i];
        ssr += r * r;
    }
    return ssr;
}

EfficiencySolution solve_efficiencies(const CalibrationModel& model,
                                      const CalibrationMeasurementSet& meas,
                                      const SolveOptions& opts) {
    model.validate();
    meas.validate(model.n_detectors);
    const int n = model.n_detectors;
    const int n_params = n + 2;
    FlatData d = flatten(meas);

    auto unpack = [n](const Eigen::VectorXd& theta, std::vector<double>& eta, double& ea,
                      double& eb) {
        eta.resize(std::size_t(n));
        for (int k = 0; k < n; ++k)
            eta[std::size_t(k)] = sigmoid(theta[k]);
        ea = sigmoid(theta[n]);
        eb = sigmoid(theta[n + 1]);
    };

    numerics::ResidualFn resid = [&](const Eigen::VectorXd& theta) {
        std::vector<double> eta;
        double ea, eb;
        unpack(theta, eta, ea, eb);
        CalibrationPrediction p = forward_model(model, eta, ea, eb);
        Eigen::VectorXd r(2 * n);
        for (int i = 0; i < n; ++i) {
            r[i] = (p.forward[std::size_t(i)] - d.y[std::size_t(i)]) / d.sigma[std::size_t(i)];
            r[n + i] = (p.reverse[std::size_t(i)] - d.y[std::size_t(n + i)])
                       / d.sigma[std::size_t(n + i)];
        }
        return r;
    };

    numerics::JacobianFn jac = [&](const Eigen::VectorXd& theta) {
        std::vector<double> eta;
        double ea, eb;
        unpack(theta, eta, ea, eb);
        CalibrationPrediction p = forward_model(model, eta, ea, eb);
        Eigen::MatrixXd J = prediction_jacobian(model, eta, ea, eb, p, d.sigma);
        for (int c = 0; c < n_params; ++c) {
            double v = c < n ? eta[std::size_t(c)] : (c == n ? ea : eb);
            J.col(c) *= v * (1.0 - v); // logistic chain rule
        }
        return J;
    };

    std::mt19937_64 rng(opts.seed);
    std::uniform_real_distribution<double> start_u(0.02, 0.98);
    numerics::LmOptions lm_opts;
    lm_opts.max_iterations = 400;

    numerics::LmResult best;
    best.cost = std::numeric_limits<double>::infinity();
    bool any_converged = false;
    const int starts = std::max(1, opts.starts);
    for (int s = 0; s < starts; ++s) {
        Eigen::VectorXd t0(n_params);
        if (s == 0)
            t0.setConstant(logit(0.3));
        else
            for (int j = 0; j < n_params; ++j)
                t0[j] = logit(start_u(rng));
        numerics::LmResult r = numerics::lm_fit(resid, jac, t0, lm_opts);
        if (r.converged && (!any_converged || r.cost < best.cost)) {
            best = r;
            any_converged = true;
        } else if (!any_converged && r.cost < best.cost) {
            best = r;
        }
        if (any_converged && best.cost < 1e-20)
            break;
    }

    EfficiencySolution sol;
    unpack(best.x, sol.eta, sol.eta_a, sol.eta_b);
    sol.chi2 = best.cost;
    sol.iterations = best.iterations;
    sol.converged = any_converged;

    if (!any_converged) {
        std::ostringstream msg;
        msg << "efficiency fit did not converge from any start; best iterate eta=(";
        for (int k = 0; k < n; ++k)
            msg << (k ? ", " : "") << sol.eta[std::size_t(k)];
        msg << ") eta_a=" << sol.eta_a << " eta_b=" << sol.eta_b << " ssr=" << sol.chi2;
        throw NumericalError(msg.str());
    }

    double top = *std::max_element(d.y.begin(), d.y.end());
    CalibrationPrediction p = forward_model(model, sol.eta, sol.eta_a, sol.eta_b);
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
        double rf = (p.forward[std::size_t(i)] - d.y[std::size_t(i)])
                    / std::max(d.y[std::size_t(i)], 1e-9 * top);
        double rr = (p.reverse[std::size_t(i)] - d.y[std::size_t(n + i)])
                    / std::max(d.y[std::size_t(n + i)], 1e-9 * top);
        acc += rf * rf + rr * rr;
    }
    sol.residual_rms_rel = std::sqrt(acc / (2.0 * n));

    // Covariance straight in efficiency space. With explicit uncertainties the
    // weights are absolute and (J^T J)^+ is already the covariance; with
    // relative weighting it is calibrated by the reduced chi-square.
    Eigen::MatrixXd Je = prediction_jacobian(model, sol.eta, sol.eta_a, sol.eta_b, p, d.sigma);
    Eigen::MatrixXd jtj = Je.transpose() * Je;
    double scale = 1.0;
    const int dof = 2 * n - n_params;
    if (meas.sigma_forward.empty() && dof > 0)
        scale = sol.chi2 / dof;
    Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(jtj);
    sol.covariance = scale * cod.pseudoInverse();
    return sol;
}

std::vector<double> single_direction_solve(const CalibrationModel& model,
                                           const std::vector<double>& forward, double eta_a) {
    model.validate();
    if (!(eta_a > 0.0) || eta_a > 1.0)
        throw std::invalid_argument("input coupling must lie in (0, 1]");
    const int n = model.n_detectors;
    if (int(forward.size()) != n)
        throw DataError("measurement count does not match detector count");
    for (double v : forward)
        if (!(v >= 0.0))
            throw DataError("mean photon numbers must be non-negative");

    std::vector<double> eta(std::size_t(n), 0.0);
    const double launched = eta_a * model.n_in;
    double shadow = 1.0;
    for (int k = 0; k < n; ++k) {
        double arriving = launched * std::exp(-model.alpha * (model.l1 + k * model.l2)) * shadow;
        if (arriving <= 1e-14 * launched) {
            if (forward[std::size_t(k)] > 0.0)
                throw DataError("light recorded beyond a fully absorbing detector");
            eta[std::size_t(k)] = 0.0;
        } else {
            double e = forward[std::size_t(k)] / arriving;
            if (e > 1.0 + 1e-9)
                throw DataError("channel brightness implies an efficiency above one");
            eta[std::size_t(k)] = std::min(e, 1.0);
        }
        shadow *= 1.0 - eta[std::size_t(k)];
    }
    return eta;
}

Eigen::MatrixXd monte_carlo_covariance(const CalibrationModel& model,
                                       const EfficiencySolution& ref,
                                       const CalibrationMeasurementSet& base, int repeats,
                                       std::uint64_t seed) {
    if (repeats < 2)
        throw std::invalid_argument("covariance needs at least two repeats");
    const int n = model.n_detectors;
    const int n_params = n + 2;
    CalibrationPrediction truth = forward_model(model, ref.eta, ref.eta_a, ref.eta_b);

    std::vector<double> sf = base.sigma_forward, sr = base.sigma_reverse;
    if (sf.empty()) {
        for (double v : truth.forward)
            sf.push_back(0.01 * v);
        for (double v : truth.reverse)
            sr.push_back(0.01 * v);
    }

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, 1.0);
    Eigen::MatrixXd samples(repeats, n_params);
    for (int r = 0; r < repeats; ++r) {
        CalibrationMeasurementSet s;
        s.sigma_forward = sf;
        s.sigma_reverse = sr;
        for (int i = 0; i < n; ++i)
            s.forward.push_back(
                std::max(0.0, truth.forward[std::size_t(i)] + sf[std::size_t(i)] * g(rng)));
        for (int i = 0; i < n; ++i)
            s.reverse.push_back(
                std::max(0.0, truth.reverse[std::size_t(i)] + sr[std::size_t(i)] * g(rng)));
        EfficiencySolution sol = solve_efficiencies(model, s);
        for (int k = 0; k < n; ++k)
            samples(r, k) = sol.eta[std::size_t(k)];
        samples(r, n) = sol.eta_a;
        samples(r, n + 1) = sol.eta_b;
    }
    Eigen::RowVectorXd mean = samples.colwise().mean();
    Eigen::MatrixXd centered = samples.rowwise() - mean;
    return centered.transpose() * centered / double(repeats - 1);
}

CalibrationMeasurementSet parse_measurements_csv(std::istream& in) {
    auto split = [](const std::string& line) {
        std::vector<std::string> cols;
        std::string cur;
        std::istringstream ss(line);
        while (std::getline(ss, cur, ',')) {
            auto b = cur.find_first_not_of(" \t");
            auto e = cur.find_last_not_of(" \t");
            cols.push_back(b == std::string::npos ? "" : cur.substr(b, e - b + 1));
        }
        return cols;
    };
    auto parse_num = [](const std::string& s) {
        std::size_t pos = 0;
        double v;
        try {
            v = std::stod(s, &pos);
        } catch (const std::exception&) {
            throw DataError("unparseable number in measurement CSV: '" + s + "'");
        }
        if (pos != s.size())
            throw DataError("unparseable number in measurement CSV: '" + s + "'");
        return v;
    };

    std::map<int, double> fw, rv, fs, rs;
    bool header_seen = false;
    bool has_sigma = false;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r')
            line.pop_back();
        auto first = line.find_first_not_of(" \t");
        if (first == std::string::npos || line[first] == '#')
            continue;
        auto cols = split(line);
        if (!header_seen) {
            std::vector<std::string> base = {"direction", "detector_index", "mean_photons"};
            std::vector<std::string> with_sigma = base;
            with_sigma.push_back("sigma");
            if (cols == base)
                has_sigma = false;
            else if (cols == with_sigma)
                has_sigma = true;
            else
                throw DataError("unrecognized measurement CSV header: " + line);
            header_seen = true;
            continue;
        }
        if (cols.size() != (has_sigma ? 4u : 3u))
            throw DataError("wrong column count in measurement CSV row: " + line);
        std::map<int, double>* means;
        std::map<int, double>* sigmas;
        if (cols[0] == "forward") {
            means = &fw;
            sigmas = &fs;
        } else if (cols[0] == "reverse") {
            means = &rv;
            sigmas = &rs;
        } else {
            throw DataError("direction must be forward or reverse, got '" + cols[0] + "'");
        }
        double idx_raw = parse_num(cols[1]);
        int idx = int(idx_raw);
        if (idx != idx_raw || idx < 1)
            throw DataError("detector_index must be a positive integer");
        double v = parse_num(cols[2]);
        if (v < 0.0)
            throw DataError("mean photon numbers must be non-negative");
        if (!means->emplace(idx, v).second)
            throw DataError("duplicate measurement for detector " + std::to_string(idx));
        if (has_sigma) {
            double s = parse_num(cols[3]);
            if (!(s > 0.0))
                throw DataError("uncertainties must be positive");
            sigmas->emplace(idx, s);
        }
    }
    if (!header_seen)
        throw DataError("measurement CSV is empty");
    const int n = int(fw.size());
    if (n == 0 || int(rv.size()) != n)
        throw DataError("both launch directions must cover the same detectors");
    CalibrationMeasurementSet out;
    for (int i = 1; i <= n; ++i) {
        auto f = fw.find(i);
        auto r = rv.find(i);
        if (f == fw.end() || r == rv.end())
            throw DataError("detector indices must be contiguous starting at 1");
        out.forward.push_back(f->second);
        out.reverse.push_back(r->second);
        if (has_sigma) {
            out.sigma_forward.push_back(fs.at(i));
            out.sigma_reverse.push_back(rs.at(i));
        }
    }
    return out;
}

nlohmann::json solution_to_json(const EfficiencySolution& sol) {
    nlohmann::json j;
    j["eta"] = sol.eta;
    j["eta_a"] = sol.eta_a;
    j["eta_b"] = sol.eta_b;
    j["chi2"] = sol.chi2;
    j["residual_rms_rel"] = sol.residual_rms_rel;
    j["iterations"] = sol.iterations;
    j["converged"] = sol.converged;
    std::vector<double> unc;
    std::vector<std::vector<double>> cov;
    for (Eigen::Index r = 0; r < sol.covariance.rows(); ++r) {
        unc.push_back(std::sqrt(std::max(sol.covariance(r, r), 0.0)));
        std::vector<double> row;
        for (Eigen::Index c = 0; c < sol.covariance.cols(); ++c)
            row.push_back(sol.covariance(r, c));
        cov.push_back(row);
    }
    j["uncertainty"] = unc;
    j["covariance"] = cov;
    return j;
}

} // namespace tesim::calibration
