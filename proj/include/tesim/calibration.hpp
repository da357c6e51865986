#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"
#include "tesim/errors.hpp"

namespace tesim::calibration {

// Geometry and source parameters for a chip with N detectors strung along one
// waveguide, probed from both facets. Lengths in meters, alpha is the natural
// (base-e) propagation attenuation coefficient in 1/m.
struct CalibrationModel {
    int n_detectors = 3;
    double alpha = 0.0;
    double l1 = 0.0;   // facet to nearest detector, same on both ends
    double l2 = 0.0;   // detector-to-detector pitch
    double n_in = 1.0; // mean photons per pulse launched into the fiber

    void validate() const;
};

// Mean detected photon numbers predicted for each detector, once per launch
// direction. forward = light entering at facet A, reverse = facet B.
struct CalibrationPrediction {
    std::vector<double> forward;
    std::vector<double> reverse;
};

// Detector k (0-based, counted from facet A) sees the light that survived the
// input coupling, the propagation to its position, and every detector before
// it along the launch direction:
//
//   fwd_k = eta_A exp(-alpha (l1 + k l2))       prod_{j<k} (1-eta_j) eta_k n_in
//   rev_k = eta_B exp(-alpha (l1 + (N-1-k) l2)) prod_{j>k} (1-eta_j) eta_k n_in
CalibrationPrediction forward_model(const CalibrationModel& model, const std::vector<double>& eta,
                                    double eta_a, double eta_b);

struct CalibrationMeasurementSet {
    std::vector<double> forward;
    std::vector<double> reverse;
    // Optional absolute uncertainties, same lengths as the means. When empty
    // the fit weights each channel by its own mean (relative errors).
    std::vector<double> sigma_forward;
    std::vector<double> sigma_reverse;

    void validate(int n_detectors) const;
};

struct DofReport {
    int n_measurements = 0;
    int n_unknowns = 0;
    bool overdetermined = false;
};

// 2N measurements against N+2 unknowns (per-detector efficiencies plus the
// two facet couplings). Overdetermined from N = 3 on.
DofReport dof_check(int n_detectors);

struct SolveOptions {
    int starts = 16;
    std::uint64_t seed = 20260817ull;
};

struct EfficiencySolution {
    std::vector<double> eta;
    double eta_a = 0.0;
    double eta_b = 0.0;
    // Parameter order eta_1..eta_N, eta_a, eta_b.
    Eigen::MatrixXd covariance;
    double chi2 = 0.0;
    double residual_rms_rel = 0.0;
    int iterations = 0;
    bool converged = false;
};

// Weighted sum of squared residuals for a candidate parameter set, using the
// same weighting rule as solve_efficiencies.
double weighted_ssr(const CalibrationModel& model, const CalibrationMeasurementSet& meas,
                    const std::vector<double>& eta, double eta_a, double eta_b);

// Least-squares inversion of the two-direction model. Efficiencies are kept in
// (0,1) through a logistic reparameterization and the optimizer is restarted
// from several seeds to avoid shallow local minima. Throws DataError on
// malformed measurements, NumericalError if no start converges.
EfficiencySolution solve_efficiencies(const CalibrationModel& model,
                                      const CalibrationMeasurementSet& meas,
                                      const SolveOptions& opts = {});

// Closed-form chain inversion when only one launch direction is available and
// the input coupling is already known. Returns eta_1..eta_N.
std::vector<double> single_direction_solve(const CalibrationModel& model,
                                           const std::vector<double>& forward, double eta_a);

// Empirical parameter covariance: regenerate predictions from ref, perturb
// with the measurement uncertainties (or 1% relative when none are given),
// re-solve, and accumulate scatter. Rows/cols ordered like ref.covariance.
Eigen::MatrixXd monte_carlo_covariance(const CalibrationModel& model,
                                       const EfficiencySolution& ref,
                                       const CalibrationMeasurementSet& base, int repeats,
                                       std::uint64_t seed);

// CSV with columns direction,detector_index,mean_photons[,sigma]; 1-based
// detector indices, '#' comment lines allowed. Both directions must cover the
// same contiguous index range.
CalibrationMeasurementSet parse_measurements_csv(std::istream& in);

nlohmann::json solution_to_json(const EfficiencySolution& sol);

} // namespace tesim::calibration
