#include "doctest.h"

#include "tesim/constants.hpp"
#include "tesim/thermal.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

using namespace tesim;
using namespace tesim::thermal;

namespace {

DetectorDesign short_tail_design() {
    DetectorDesign d;
    d.tail_length = 50e-6;
    return d;
}

DetectorDesign no_phonon_design() {
    DetectorDesign d;
    d.tail_length = 50e-6;
    d.tungsten.sigma_ep = 0.0;
    d.gold.sigma_ep = 0.0;
    return d;
}

constexpr double kPhotonEnergy1550 = photon_energy(1550e-9);

} // namespace

TEST_CASE("conduction between cells follows the interface-mean temperature law") {
    CHECK(wf_heat_flow(1e9, 1e-13, 0.1, 0.1, 1e-6) == 0.0);

    double q = wf_heat_flow(1e9, 1e-13, 0.10, 0.11, 1e-6);
    // hand evaluation: sigma A L Tbar dT/dx
    double oracle = 1e9 * 1e-13 * lorenz_constant() * 0.105 * (0.01 / 1e-6);
    CHECK(q == doctest::Approx(oracle).epsilon(1e-12));
    CHECK(q == doctest::Approx(2.5652e-9).epsilon(1e-4));
    CHECK(wf_heat_flow(1e9, 1e-13, 0.11, 0.10, 1e-6) == doctest::Approx(-q).epsilon(1e-12));

    // the product Tbar * (T_r - T_l) makes the flux exactly linear in T^2
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> t(0.05, 0.3);
    for (int i = 0; i < 50; ++i) {
        double a = t(rng), b = t(rng);
        double via_u = 1e9 * 1e-13 * lorenz_constant() * (b * b - a * a) / (2.0 * 1e-6);
        CHECK(wf_heat_flow(1e9, 1e-13, a, b, 1e-6) == doctest::Approx(via_u).epsilon(1e-12));
    }
}

TEST_CASE("electron-phonon power follows the fifth-power law") {
    CHECK(ep_power(4e8, 1e-18, 0.1, 0.1) == 0.0);
    CHECK(ep_power(4e8, 1e-18, 0.1, 0.0) == doctest::Approx(4e-15).epsilon(1e-12));
    double p1 = ep_power(4e8, 1e-18, 0.1, 0.05);
    double oracle = 4e8 * 1e-18 * (std::pow(0.1, 5) - std::pow(0.05, 5));
    CHECK(p1 == doctest::Approx(oracle).epsilon(1e-12));
    CHECK(ep_power(4e8, 1e-18, 0.2, 0.05) / p1 > std::pow(2.0, 5) - 1.0);
}

TEST_CASE("uniform field at the phonon temperature is a fixed point of the heat step") {
    DetectorDesign d = short_tail_design();
    Simulator sim(d);
    ThermalState s = sim.state();
    for (auto& t : s.t_e)
        t = d.bath_temperature;
    ThermalState before = s;
    for (int i = 0; i < 10; ++i)
        step_heat_equation(s, d, 5e-9);
    for (std::size_t i = 0; i < s.t_e.size(); ++i)
        CHECK(s.t_e[i] == doctest::Approx(before.t_e[i]).epsilon(1e-13));
}

TEST_CASE("with phonon coupling removed the heat step conserves electron energy") {
    DetectorDesign d = no_phonon_design();
    Simulator sim(d);
    ThermalState s = sim.state();
    inject_photon(s, d, 20e-6, kPhotonEnergy1550);
    double e0 = stored_energy(s, d);
    for (int i = 0; i < 10000; ++i)
        step_heat_equation(s, d, 5e-9);
    double e1 = stored_energy(s, d);
    CHECK(std::abs(e1 - e0) / e0 < 1e-4);
    // and much tighter in practice: the conduction matrix moves energy
    // between cells without creating any
    CHECK(std::abs(e1 - e0) / e0 < 1e-9);
}

TEST_CASE("mirror-symmetric fields stay mirror-symmetric") {
    DetectorDesign d = short_tail_design();
    Simulator sim(d);
    ThermalState s = sim.state();
    const int n = int(s.t_e.size());
    inject_photon(s, d, 30e-6, kPhotonEnergy1550);
    inject_photon(s, d, -30e-6, kPhotonEnergy1550);
    for (int i = 0; i < 1000; ++i)
        step_heat_equation(s, d, 5e-9);
    for (int i = 0; i < n; ++i)
        CHECK(s.t_e[std::size_t(i)]
              == doctest::Approx(s.t_e[std::size_t(n - 1 - i)]).epsilon(1e-12));
}

TEST_CASE("without injection the hottest cell only cools") {
    DetectorDesign d = short_tail_design();
    Simulator sim(d);
    ThermalState s = sim.state();
    inject_photon(s, d, -10e-6, 5 * kPhotonEnergy1550);
    double prev = *std::max_element(s.t_e.begin(), s.t_e.end());
    for (int i = 0; i < 2000; ++i) {
        step_heat_equation(s, d, 5e-9);
        double now = *std::max_element(s.t_e.begin(), s.t_e.end());
        CHECK(now <= prev * (1.0 + 1e-14));
        prev = now;
    }
}

TEST_CASE("photon injection deposits exactly the requested energy in one cell") {
    DetectorDesign d = short_tail_design();
    Simulator sim(d);
    ThermalState s = sim.state();
    ThermalState before = s;

    inject_photon(s, d, 20e-6, 0.0);
    for (std::size_t i = 0; i < s.t_e.size(); ++i)
        CHECK(s.t_e[i] == before.t_e[i]);

    double e0 = stored_energy(s, d);
    inject_photon(s, d, 20e-6, kPhotonEnergy1550);
    CHECK(stored_energy(s, d) - e0 == doctest::Approx(kPhotonEnergy1550).epsilon(1e-12));
    int changed = 0;
    for (std::size_t i = 0; i < s.t_e.size(); ++i)
        changed += s.t_e[i] != before.t_e[i];
    CHECK(changed == 1);

    CHECK_THROWS_AS(inject_photon(s, d, 60e-6, kPhotonEnergy1550), std::invalid_argument);
    CHECK_THROWS_AS(inject_photon(s, d, 20e-6, -1e-21), std::invalid_argument);
}

TEST_CASE("the bias search lands on the requested point of the transition") {
    DetectorDesign d = short_tail_design();
    Simulator sim(d);
    const ThermalState& eq = sim.state();

    double r0 = d.resistance(eq.t_tes());
    CHECK(r0 / d.r_normal == doctest::Approx(d.bias.target_r_fraction).epsilon(1e-6));
    CHECK(eq.current
          == doctest::Approx(sim.bias_voltage() / (d.bias.load_resistance + r0)).epsilon(1e-9));
    for (double t : eq.t_e)
        CHECK(t >= d.bath_temperature - 1e-12);

    // equilibrium is stationary under the full coupled step
    double t_before = eq.t_tes(), i_before = eq.current;
    for (int i = 0; i < 2000; ++i)
        sim.advance();
    CHECK(std::abs(sim.state().t_tes() - t_before) / t_before < 1e-9);
    CHECK(std::abs(sim.state().current - i_before) / i_before < 1e-9);

    // and under the standalone lumped sensor update
    ThermalState lump = sim.equilibrium();
    tes_step(lump, d, sim.bias_voltage(), 5e-9);
    CHECK(lump.t_tes() == doctest::Approx(t_before).epsilon(1e-9));
    CHECK(lump.current == doctest::Approx(i_before).epsilon(1e-6));
}

TEST_CASE("heating the sensor reduces the current: negative electrothermal feedback") {
    DetectorDesign d = short_tail_design();
    Simulator sim(d);
    double i_eq = sim.state().current;
    sim.inject(0.0, kPhotonEnergy1550);
    double i_min = i_eq;
    for (int i = 0; i < 4000; ++i) {
        sim.advance();
        i_min = std::min(i_min, sim.state().current);
    }
    CHECK(i_min < i_eq * 0.999);
}

TEST_CASE("small pulses respond linearly in deposited energy") {
    DetectorDesign d = short_tail_design();
    Simulator sim(d);
    const double e0 = kPhotonEnergy1550 / 100.0;
    std::vector<double> per_energy;
    for (int k = 1; k <= 5; ++k) {
        PulseTrace tr = sim.run_pulse(20e-6, k * e0, 120e-6);
        per_energy.push_back(tr.area() / (k * e0));
    }
    for (int k = 1; k < 5; ++k)
        CHECK(per_energy[std::size_t(k)]
              == doctest::Approx(per_energy[0]).epsilon(0.02));
}

TEST_CASE("pulse shape versus impact position matches the heat-collection picture") {
    DetectorDesign d; // full 100 um tails
    Simulator sim(d);
    PulseTrace p0 = sim.run_pulse(0.0, kPhotonEnergy1550, 200e-6);
    PulseTrace p30 = sim.run_pulse(30e-6, kPhotonEnergy1550, 200e-6);
    PulseTrace p60 = sim.run_pulse(60e-6, kPhotonEnergy1550, 200e-6);
    PulseTrace p100 = sim.run_pulse(100e-6, kPhotonEnergy1550, 200e-6);

    CHECK(p0.peak() >= p30.peak() * (1.0 - 1e-12));
    CHECK(p30.peak() >= p60.peak() * (1.0 - 1e-12));
    CHECK(p60.peak() >= p100.peak() * (1.0 - 1e-12));
    CHECK(p100.area() <= p0.area());

    // far impacts lose more heat on the way in, so less charge is collected
    PulseTrace minus80 = sim.run_pulse(-80e-6, kPhotonEnergy1550, 200e-6);
    PulseTrace plus80 = sim.run_pulse(80e-6, kPhotonEnergy1550, 200e-6);
    REQUIRE(minus80.samples.size() == plus80.samples.size());
    double scale = plus80.peak();
    for (std::size_t i = 0; i < plus80.samples.size(); ++i)
        CHECK(std::abs(minus80.samples[i] - plus80.samples[i]) <= 1e-10 * scale);
}

TEST_CASE("energy bookkeeping closes over a full pulse") {
    DetectorDesign d = short_tail_design();
    Simulator sim(d);
    sim.run_pulse(20e-6, kPhotonEnergy1550, 120e-6);
    CHECK(sim.conservation_error() < 1e-3);
    CHECK(sim.conservation_error() < 1e-6);
}

TEST_CASE("halving the grid spacing moves the pulse peak by less than a percent") {
    DetectorDesign d = short_tail_design();
    Simulator coarse(d, 1e-6);
    Simulator fine(d, 0.5e-6);
    double pc = coarse.run_pulse(20e-6, kPhotonEnergy1550, 120e-6).peak();
    double pf = fine.run_pulse(20e-6, kPhotonEnergy1550, 120e-6).peak();
    CHECK(std::abs(pc - pf) / pf < 0.01);
}

TEST_CASE("matched filter resolution reproduces the closed form for an exponential pulse") {
    const double tau = 10e-6;
    const double dt = 5e-8;
    const double amp = 1.0; // A per J
    const int n = 8000;
    std::vector<double> tpl(n);
    for (int i = 0; i < n; ++i)
        tpl[std::size_t(i)] = amp * std::exp(-double(i) * dt / tau);

    const double s0 = 1e-22; // A^2/Hz
    double de = optimal_filter_resolution(tpl, dt, NoiseSpectrum::white(s0));
    double closed = 2.0 * std::sqrt(2.0 * std::log(2.0)) / amp * std::sqrt(s0 / tau);
    CHECK(de == doctest::Approx(closed).epsilon(0.01));

    // resolution scales as the square root of the noise power
    double de_quarter = optimal_filter_resolution(tpl, dt, NoiseSpectrum::white(s0 / 4.0));
    CHECK(de_quarter == doctest::Approx(0.5 * de).epsilon(1e-12));

    std::vector<double> zeros(n, 0.0);
    CHECK_THROWS_AS(optimal_filter_resolution(zeros, dt, NoiseSpectrum::white(s0)), DataError);
}

TEST_CASE("design-level resolution is finite and scales with the noise floor") {
    DetectorDesign d;
    d.tail_length = 25e-6;
    ResolutionOptions opts;
    opts.duration = 120e-6;
    NoiseSpectrum noise = NoiseSpectrum::white(1e-22);
    double de = energy_resolution(d, noise, opts);
    CHECK(de > 0.0);
    CHECK(std::isfinite(de));
    double de_quarter = energy_resolution(d, NoiseSpectrum::white(0.25e-22), opts);
    CHECK(de_quarter == doctest::Approx(0.5 * de).epsilon(1e-9));
}

TEST_CASE("noise spectra interpolate between tabulated points and reject junk") {
    NoiseSpectrum n;
    n.frequencies = {0.0, 1e4, 1e6};
    n.psd = {4e-22, 2e-22, 1e-22};
    n.validate();
    CHECK(n.at(0.0) == doctest::Approx(4e-22));
    CHECK(n.at(5e3) == doctest::Approx(3e-22));
    CHECK(n.at(1e6) == doctest::Approx(1e-22));
    CHECK(n.at(1e9) == doctest::Approx(1e-22)); // clamped past the table
    CHECK(n.at(0.5e6) == doctest::Approx(2e-22 - 1e-22 * (0.5e6 - 1e4) / 0.99e6).epsilon(1e-12));

    NoiseSpectrum bad;
    bad.frequencies = {0.0, 1.0};
    bad.psd = {1e-22, 0.0};
    CHECK_THROWS_AS(bad.validate(), DataError);
    bad.frequencies = {1.0, 1.0};
    bad.psd = {1e-22, 1e-22};
    CHECK_THROWS_AS(bad.validate(), DataError);
}

TEST_CASE("design JSON round trip, defaults, and rejection") {
    DetectorDesign d;
    d.tail_length = 75e-6;
    d.bias.target_r_fraction = 0.4;
    nlohmann::json j = d.to_json();
    DetectorDesign back = DetectorDesign::from_json(j);
    CHECK(back.tail_length == doctest::Approx(75e-6).epsilon(1e-12));
    CHECK(back.bias.target_r_fraction == doctest::Approx(0.4).epsilon(1e-12));
    CHECK(back.t_c == doctest::Approx(d.t_c).epsilon(1e-12));

    // omitted fields fall back to the stock device
    DetectorDesign partial = DetectorDesign::from_json(nlohmann::json{{"tail_length_um", 30.0}});
    CHECK(partial.tail_length == doctest::Approx(30e-6).epsilon(1e-12));
    CHECK(partial.r_normal == doctest::Approx(5.0));

    CHECK_THROWS_AS(DetectorDesign::from_json(nlohmann::json{{"tail_len_um", 30.0}}), DataError);

    DetectorDesign hot;
    hot.bath_temperature = 0.09; // above the transition
    CHECK_THROWS_AS(hot.validate(), std::invalid_argument);

    DetectorDesign nowidth;
    nowidth.transition_width = 0.0;
    CHECK_THROWS_AS(nowidth.validate(), std::invalid_argument);
}

TEST_CASE("pulse traces export as two-column CSV") {
    PulseTrace tr;
    tr.dt = 5e-9;
    tr.samples = {0.0, -1e-9, -0.5e-9, -1e-12};
    tr.x_impact = 2e-5;
    std::ostringstream out;
    write_pulse_csv(out, tr);
    std::istringstream in(out.str());
    std::string line;
    std::getline(in, line);
    CHECK(line == "time_s,delta_current_A");
    int rows = 0;
    while (std::getline(in, line))
        rows += !line.empty();
    CHECK(rows == 4);
}
