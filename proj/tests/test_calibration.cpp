#include "doctest.h"

#include "tesim/calibration.hpp"

#include <cmath>
#include <random>
#include <sstream>

using namespace tesim;
using namespace tesim::calibration;

namespace {

CalibrationModel tm_model() {
    CalibrationModel m;
    m.n_detectors = 3;
    m.alpha = 21.8;  // 1/m, matches 0.947 dB/cm
    m.l1 = 5e-3;     // m
    m.l2 = 3.5e-3;   // m
    m.n_in = 1.0;
    return m;
}

const std::vector<double> kEtaTm = {0.437, 0.436, 0.432};
constexpr double kEtaATm = 0.221;
constexpr double kEtaBTm = 0.148;

const std::vector<double> kEtaTe = {0.065, 0.066, 0.064};
constexpr double kEtaATe = 0.081;
constexpr double kEtaBTe = 0.084;

CalibrationMeasurementSet noiseless_set(const CalibrationModel& m, const std::vector<double>& eta,
                                        double eta_a, double eta_b) {
    CalibrationPrediction p = forward_model(m, eta, eta_a, eta_b);
    CalibrationMeasurementSet s;
    s.forward = p.forward;
    s.reverse = p.reverse;
    return s;
}

} // namespace

TEST_CASE("forward model reproduces the six-equation attenuated-shadowing structure") {
    CalibrationModel m = tm_model();
    CalibrationPrediction p = forward_model(m, kEtaTm, kEtaATm, kEtaBTm);
    REQUIRE(p.forward.size() == 3);
    REQUIRE(p.reverse.size() == 3);

    // Oracle: the six products written out explicitly.
    const double a = m.alpha;
    auto att = [&](double len) { return std::exp(-a * len); };
    const double l1 = m.l1, l2 = m.l2;
    const double e1 = kEtaTm[0], e2 = kEtaTm[1], e3 = kEtaTm[2];

    CHECK(p.forward[0] == doctest::Approx(kEtaATm * att(l1) * e1).epsilon(1e-12));
    CHECK(p.forward[1]
          == doctest::Approx(kEtaATm * att(l1 + l2) * (1 - e1) * e2).epsilon(1e-12));
    CHECK(p.forward[2]
          == doctest::Approx(kEtaATm * att(l1 + 2 * l2) * (1 - e1) * (1 - e2) * e3).epsilon(1e-12));
    CHECK(p.reverse[0]
          == doctest::Approx(kEtaBTm * att(l1 + 2 * l2) * (1 - e3) * (1 - e2) * e1).epsilon(1e-12));
    CHECK(p.reverse[1]
          == doctest::Approx(kEtaBTm * att(l1 + l2) * (1 - e3) * e2).epsilon(1e-12));
    CHECK(p.reverse[2] == doctest::Approx(kEtaBTm * att(l1) * e3).epsilon(1e-12));
}

TEST_CASE("a perfectly absorbing first detector shadows everything downstream") {
    CalibrationModel m = tm_model();
    CalibrationPrediction p = forward_model(m, {1.0, 0.5, 0.5}, 0.3, 0.3);
    CHECK(p.forward[0] > 0.0);
    CHECK(p.forward[1] == 0.0);
    CHECK(p.forward[2] == 0.0);
    // arriving from the other side, detector 1 still sees light
    CHECK(p.reverse[0] > 0.0);
}

TEST_CASE("degrees-of-freedom bookkeeping") {
    DofReport d3 = dof_check(3);
    CHECK(d3.n_measurements == 6);
    CHECK(d3.n_unknowns == 5);
    CHECK(d3.overdetermined);

    DofReport d2 = dof_check(2);
    CHECK(d2.n_measurements == 4);
    CHECK(d2.n_unknowns == 4);
    CHECK_FALSE(d2.overdetermined);

    DofReport d1 = dof_check(1);
    CHECK_FALSE(d1.overdetermined);

    CHECK_THROWS_AS(dof_check(0), std::invalid_argument);
}

TEST_CASE("noiseless solve recovers the TM parameter set") {
    CalibrationModel m = tm_model();
    CalibrationMeasurementSet s = noiseless_set(m, kEtaTm, kEtaATm, kEtaBTm);
    EfficiencySolution sol = solve_efficiencies(m, s);
    CHECK(sol.converged);
    for (int k = 0; k < 3; ++k)
        CHECK(sol.eta[k] == doctest::Approx(kEtaTm[k]).epsilon(1e-8));
    CHECK(sol.eta_a == doctest::Approx(kEtaATm).epsilon(1e-8));
    CHECK(sol.eta_b == doctest::Approx(kEtaBTm).epsilon(1e-8));
    CHECK(sol.residual_rms_rel < 1e-8);
}

TEST_CASE("noiseless solve recovers the TE parameter set") {
    CalibrationModel m = tm_model();
    CalibrationMeasurementSet s = noiseless_set(m, kEtaTe, kEtaATe, kEtaBTe);
    EfficiencySolution sol = solve_efficiencies(m, s);
    CHECK(sol.converged);
    for (int k = 0; k < 3; ++k)
        CHECK(sol.eta[k] == doctest::Approx(kEtaTe[k]).epsilon(1e-8));
    CHECK(sol.eta_a == doctest::Approx(kEtaATe).epsilon(1e-8));
    CHECK(sol.eta_b == doctest::Approx(kEtaBTe).epsilon(1e-8));
}

TEST_CASE("random parameter sets round-trip through the solver") {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> eta_u(0.05, 0.95);
    std::uniform_int_distribution<int> n_u(3, 6);
    std::uniform_real_distribution<double> alpha_u(0.0, 60.0);
    for (int trial = 0; trial < 100; ++trial) {
        CalibrationModel m;
        m.n_detectors = n_u(rng);
        m.alpha = alpha_u(rng);
        m.l1 = 2e-3 + 6e-3 * eta_u(rng);
        m.l2 = 1e-3 + 3e-3 * eta_u(rng);
        m.n_in = 1.0;
        std::vector<double> eta(m.n_detectors);
        for (auto& e : eta)
            e = eta_u(rng);
        double ea = eta_u(rng), eb = eta_u(rng);
        CalibrationMeasurementSet s = noiseless_set(m, eta, ea, eb);
        EfficiencySolution sol = solve_efficiencies(m, s);
        REQUIRE(sol.converged);
        for (int k = 0; k < m.n_detectors; ++k)
            CHECK(sol.eta[k] == doctest::Approx(eta[k]).epsilon(1e-6));
        CHECK(sol.eta_a == doctest::Approx(ea).epsilon(1e-6));
        CHECK(sol.eta_b == doctest::Approx(eb).epsilon(1e-6));
    }
}

TEST_CASE("solver beats 1000 random parameter draws on weighted SSR") {
    CalibrationModel m = tm_model();
    CalibrationMeasurementSet s = noiseless_set(m, kEtaTm, kEtaATm, kEtaBTm);
    // pollute slightly so the optimum is not trivially zero cost
    std::mt19937_64 rng(3);
    std::normal_distribution<double> g(0.0, 0.02);
    for (auto& v : s.forward)
        v *= (1.0 + g(rng));
    for (auto& v : s.reverse)
        v *= (1.0 + g(rng));

    EfficiencySolution sol = solve_efficiencies(m, s);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 1000; ++i) {
        std::vector<double> eta(3);
        for (auto& e : eta)
            e = u(rng);
        double c = weighted_ssr(m, s, eta, u(rng), u(rng));
        CHECK(sol.chi2 <= c + 1e-12);
    }
}

TEST_CASE("scaling measurements and source intensity together changes nothing") {
    CalibrationModel m = tm_model();
    CalibrationMeasurementSet s = noiseless_set(m, kEtaTm, kEtaATm, kEtaBTm);
    // add mild noise so the fit is non-trivial
    std::mt19937_64 rng(11);
    std::normal_distribution<double> g(0.0, 0.01);
    for (auto& v : s.forward)
        v *= (1.0 + g(rng));
    for (auto& v : s.reverse)
        v *= (1.0 + g(rng));
    EfficiencySolution sol1 = solve_efficiencies(m, s);

    CalibrationModel m7 = m;
    m7.n_in *= 7.0;
    CalibrationMeasurementSet s7 = s;
    for (auto& v : s7.forward)
        v *= 7.0;
    for (auto& v : s7.reverse)
        v *= 7.0;
    EfficiencySolution sol7 = solve_efficiencies(m7, s7);

    for (int k = 0; k < 3; ++k)
        CHECK(sol7.eta[k] == doctest::Approx(sol1.eta[k]).epsilon(1e-7));
    CHECK(sol7.eta_a == doctest::Approx(sol1.eta_a).epsilon(1e-7));
    CHECK(sol7.eta_b == doctest::Approx(sol1.eta_b).epsilon(1e-7));
}

TEST_CASE("mirroring the chip mirrors the solution") {
    CalibrationModel m = tm_model();
    CalibrationMeasurementSet s = noiseless_set(m, kEtaTm, kEtaATm, kEtaBTm);

    CalibrationMeasurementSet mirrored;
    mirrored.forward = {s.reverse[2], s.reverse[1], s.reverse[0]};
    mirrored.reverse = {s.forward[2], s.forward[1], s.forward[0]};

    EfficiencySolution sol = solve_efficiencies(m, mirrored);
    CHECK(sol.eta[0] == doctest::Approx(kEtaTm[2]).epsilon(1e-7));
    CHECK(sol.eta[1] == doctest::Approx(kEtaTm[1]).epsilon(1e-7));
    CHECK(sol.eta[2] == doctest::Approx(kEtaTm[0]).epsilon(1e-7));
    CHECK(sol.eta_a == doctest::Approx(kEtaBTm).epsilon(1e-7));
    CHECK(sol.eta_b == doctest::Approx(kEtaATm).epsilon(1e-7));
}

TEST_CASE("Monte-Carlo repeats at one percent noise stay unbiased with sub-point scatter") {
    CalibrationModel m = tm_model();
    CalibrationPrediction truth = forward_model(m, kEtaTm, kEtaATm, kEtaBTm);

    const int repeats = 300;
    std::mt19937_64 rng(2026);
    std::normal_distribution<double> g(0.0, 0.01);
    std::vector<std::vector<double>> samples(5);
    for (int r = 0; r < repeats; ++r) {
        CalibrationMeasurementSet s;
        s.forward = truth.forward;
        s.reverse = truth.reverse;
        for (auto& v : s.forward)
            v *= (1.0 + g(rng));
        for (auto& v : s.reverse)
            v *= (1.0 + g(rng));
        EfficiencySolution sol = solve_efficiencies(m, s);
        REQUIRE(sol.converged);
        for (int k = 0; k < 3; ++k)
            samples[std::size_t(k)].push_back(sol.eta[k]);
        samples[3].push_back(sol.eta_a);
        samples[4].push_back(sol.eta_b);
    }

    std::vector<double> truth_params = {kEtaTm[0], kEtaTm[1], kEtaTm[2], kEtaATm, kEtaBTm};
    for (std::size_t p = 0; p < 5; ++p) {
        double mean = 0.0;
        for (double v : samples[p])
            mean += v;
        mean /= repeats;
        double var = 0.0;
        for (double v : samples[p])
            var += (v - mean) * (v - mean);
        double sd = std::sqrt(var / (repeats - 1));
        CHECK(std::abs(mean - truth_params[p]) < 3.0 * sd / std::sqrt(double(repeats)));
        if (p < 3) {
            // same order as the quoted half-point uncertainties
            CHECK(sd > 0.001);
            CHECK(sd < 0.02);
        }
    }
}

TEST_CASE("linearized covariance is symmetric positive semidefinite and tracks the MC scatter") {
    CalibrationModel m = tm_model();
    CalibrationPrediction truth = forward_model(m, kEtaTm, kEtaATm, kEtaBTm);
    CalibrationMeasurementSet s;
    s.forward = truth.forward;
    s.reverse = truth.reverse;
    for (double v : truth.forward)
        s.sigma_forward.push_back(0.01 * v);
    for (double v : truth.reverse)
        s.sigma_reverse.push_back(0.01 * v);
    std::mt19937_64 rng(5);
    std::normal_distribution<double> g(0.0, 0.01);
    for (auto& v : s.forward)
        v *= (1.0 + g(rng));
    for (auto& v : s.reverse)
        v *= (1.0 + g(rng));

    EfficiencySolution sol = solve_efficiencies(m, s);
    REQUIRE(sol.covariance.rows() == 5);
    REQUIRE(sol.covariance.cols() == 5);
    CHECK((sol.covariance - sol.covariance.transpose()).cwiseAbs().maxCoeff() < 1e-12);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sol.covariance);
    for (int i = 0; i < 5; ++i)
        CHECK(es.eigenvalues()[i] > -1e-12);

    Eigen::MatrixXd mc = monte_carlo_covariance(m, sol, s, 400, 99);
    // diagonal scales agree within a factor of three
    for (int i = 0; i < 5; ++i) {
        double lin = std::sqrt(std::max(sol.covariance(i, i), 0.0));
        double emp = std::sqrt(std::max(mc(i, i), 0.0));
        if (emp > 1e-6) {
            CHECK(lin / emp < 3.0);
            CHECK(lin / emp > 1.0 / 3.0);
        }
    }
}

TEST_CASE("degenerate measurement sets are rejected") {
    CalibrationModel m = tm_model();
    CalibrationMeasurementSet s;
    s.forward = {0.0, 0.0, 0.0};
    s.reverse = {0.0, 0.0, 0.0};
    CHECK_THROWS_AS(solve_efficiencies(m, s), DataError);

    CalibrationMeasurementSet wrong;
    wrong.forward = {0.1, 0.2};
    wrong.reverse = {0.1, 0.2, 0.3};
    CHECK_THROWS_AS(solve_efficiencies(m, wrong), DataError);

    CalibrationMeasurementSet neg;
    neg.forward = {0.1, -0.2, 0.1};
    neg.reverse = {0.1, 0.2, 0.3};
    CHECK_THROWS_AS(solve_efficiencies(m, neg), DataError);

    CalibrationModel two = m;
    two.n_detectors = 2;
    CHECK_THROWS_AS(two.validate(), std::invalid_argument);
}

TEST_CASE("single-direction solve inverts the chain sequentially") {
    CalibrationModel m = tm_model();
    const std::vector<double> eta = {0.432, 0.488, 0.482}; // remeasured values
    CalibrationPrediction p = forward_model(m, eta, kEtaATm, 0.5);

    std::vector<double> got = single_direction_solve(m, p.forward, kEtaATm);
    REQUIRE(got.size() == 3);
    for (int k = 0; k < 3; ++k)
        CHECK(got[k] == doctest::Approx(eta[k]).epsilon(1e-12));
}

TEST_CASE("single-direction solve handles dark and impossible channels") {
    CalibrationModel m = tm_model();
    CalibrationPrediction p = forward_model(m, {0.0, 0.4, 0.3}, 0.2, 0.5);
    std::vector<double> got = single_direction_solve(m, p.forward, 0.2);
    CHECK(got[0] == 0.0);
    CHECK(got[1] == doctest::Approx(0.4).epsilon(1e-12));
    CHECK(got[2] == doctest::Approx(0.3).epsilon(1e-12));

    // first channel brighter than the incoming beam allows
    std::vector<double> impossible = p.forward;
    impossible[0] = 0.5; // > eta_a * att(l1)
    CHECK_THROWS_AS(single_direction_solve(m, impossible, 0.2), DataError);

    // a perfectly absorbing upstream detector with light still arriving downstream
    CalibrationPrediction sat = forward_model(m, {1.0, 0.4, 0.3}, 0.2, 0.5);
    std::vector<double> inconsistent = sat.forward;
    inconsistent[1] = 0.01;
    CHECK_THROWS_AS(single_direction_solve(m, inconsistent, 0.2), DataError);
}

TEST_CASE("measurement CSV ingestion") {
    std::istringstream good(
        "# provenance comment\n"
        "direction,detector_index,mean_photons,sigma\n"
        "forward,1,0.0886,0.0009\n"
        "forward,2,0.0417,0.0004\n"
        "forward,3,0.0190,0.0002\n"
        "reverse,1,0.0200,0.0002\n"
        "reverse,2,0.0378,0.0004\n"
        "reverse,3,0.0599,0.0006\n");
    CalibrationMeasurementSet s = parse_measurements_csv(good);
    REQUIRE(s.forward.size() == 3);
    CHECK(s.forward[1] == doctest::Approx(0.0417));
    CHECK(s.reverse[2] == doctest::Approx(0.0599));
    REQUIRE(s.sigma_forward.size() == 3);
    CHECK(s.sigma_forward[0] == doctest::Approx(0.0009));

    std::istringstream bad_dir(
        "direction,detector_index,mean_photons\n"
        "sideways,1,0.1\n");
    CHECK_THROWS_AS(parse_measurements_csv(bad_dir), DataError);

    std::istringstream dup(
        "direction,detector_index,mean_photons\n"
        "forward,1,0.1\nforward,1,0.2\nforward,2,0.1\n"
        "reverse,1,0.1\nreverse,2,0.1\n");
    CHECK_THROWS_AS(parse_measurements_csv(dup), DataError);

    std::istringstream hole(
        "direction,detector_index,mean_photons\n"
        "forward,1,0.1\nforward,3,0.1\n"
        "reverse,1,0.1\nreverse,3,0.1\n");
    CHECK_THROWS_AS(parse_measurements_csv(hole), DataError);
}
