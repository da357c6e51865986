#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "json.hpp"
#include "tesim/constants.hpp"
#include "tesim/errors.hpp"
#include "tesim/materials.hpp"

namespace tesim::thermal {

struct BiasConfig {
    double load_resistance = 0.05;  // Ohm, in series with the TES
    double target_r_fraction = 0.3; // operating resistance as a fraction of r_normal
    double inductance = 0.0;        // H; 0 means the current follows R(T) instantly
};

// Geometry and transition parameters of one extended-absorber sensor: a bare
// tungsten square read out in the middle of two metal tails (tungsten strip
// with a gold spine on top) that collect heat from photons absorbed anywhere
// along the waveguide underneath. All lengths in meters, temperatures in K.
struct DetectorDesign {
    double tes_side = 10e-6;
    double tes_thickness = 40e-9;
    double tail_length = 100e-6; // per side, excluding the square itself
    double tungsten_tail_width = 3.5e-6;
    double tungsten_tail_thickness = 40e-9;
    double gold_spine_width = 2e-6;
    double gold_spine_thickness = 80e-9;
    double t_c = 0.084;
    double transition_width = 1e-3;
    double r_normal = 5.0;
    double bath_temperature = 0.050;
    BiasConfig bias;
    materials::MaterialParams tungsten = materials::tungsten();
    materials::MaterialParams gold = materials::gold();

    void validate() const;
    // sheet resistance curve through the superconducting transition
    double resistance(double t_tes) const;

    static DetectorDesign from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
};

// Electron-temperature field at one instant. The sensor square is the lumped
// cell at tes_index; tail cells extend symmetrically on both sides. grid_x
// holds cell-center coordinates in meters, 0 at the square's center.
struct ThermalState {
    std::vector<double> grid_x;
    std::vector<double> t_e;
    double current = 0.0; // A
    double time = 0.0;    // s
    int tes_index = 0;

    double t_tes() const { return t_e[std::size_t(tes_index)]; }
};

struct PulseTrace {
    double dt = 0.0;
    std::vector<double> samples; // change in bias current relative to equilibrium, A
    double x_impact = 0.0;       // m

    // largest magnitude sample
    double peak() const;
    // sum of |dI| dt, A s
    double area() const;
    void validate() const;
};

// One-sided current-noise power spectral density, A^2/Hz, interpolated
// linearly between tabulated points and clamped at the ends.
struct NoiseSpectrum {
    std::vector<double> frequencies;
    std::vector<double> psd;

    void validate() const;
    double at(double frequency) const;
    static NoiseSpectrum white(double level_a2_per_hz);
};

// Heat flow between two metal cells with electronic thermal conductance given
// by the Wiedemann-Franz law, evaluated at the interface mean temperature.
// Positive when the right side is hotter. Linear in T^2, which the stepper
// exploits.
double wf_heat_flow(double sigma_eff, double area, double t_left, double t_right, double dx);

// Power transferred from the electrons to the phonon bath of one cell.
double ep_power(double sigma_ep, double volume, double t_e, double t_p);

// Energy conservation ledger of a running simulation. All terms in joules,
// integrated with exactly the source values the stepper applied.
struct EnergyLedger {
    double injected = 0.0;
    double joule_in = 0.0;
    double ep_out = 0.0;
    double stored_initial = 0.0;
    // equilibrium rates, for referencing the integrals to the bias baseline
    double joule_rate_eq = 0.0;
    double ep_rate_eq = 0.0;
};

// Coupled electrothermal integrator. One backward-Euler solve per step treats
// the Wiedemann-Franz conduction implicitly in u = T^2 (the flux is exactly
// linear in u), while electron-phonon escape, Joule heating, and the bias
// circuit advance explicitly; the tridiagonal system is factored once.
// Unconditionally stable against the diffusion limit; the explicit sources
// only require dt well under the electrothermal feedback time (~0.2 us for
// the default design), which the constructor checks.
//
// Construction finds the bias operating point: the transition temperature
// matching bias.target_r_fraction, the tail field relaxed against it, and the
// Thevenin voltage that balances the square's power budget there.
class Simulator {
public:
    explicit Simulator(const DetectorDesign& design, double dx = 1e-6, double dt = 5e-9);

    const ThermalState& state() const { return state_; }
    const ThermalState& equilibrium() const { return equilibrium_; }
    const DetectorDesign& design() const { return design_; }
    double dt() const { return dt_; }
    double dx() const { return dx_; }
    double bias_voltage() const { return v_thevenin_; }

    // one full step: conduction + sources + circuit
    void advance();
    // deposit a photon into the cell containing x_impact (meters)
    void inject(double x_impact, double energy);
    // restore the equilibrium state and zero the ledger integrals
    void reset();

    const EnergyLedger& ledger() const { return ledger_; }
    double stored_energy() const;

    // equilibrium-referenced conservation residual of the current run,
    // |injected - (delta stored + excess ep - excess joule)| / injected
    double conservation_error() const;

    // pulse from equilibrium; the trace holds I(t) - I_eq every step
    PulseTrace run_pulse(double x_impact, double energy, double duration);

private:
    void relax_to_equilibrium();
    void source_terms(std::vector<double>& rhs, double& joule, double& ep) const;

    DetectorDesign design_;
    double dx_, dt_;
    double v_thevenin_ = 0.0;

    std::vector<double> mass_;    // J/K^2 per cell (gamma V / 2 summed over layers)
    std::vector<double> wiface_;  // W/K^2 between cell i and i+1
    std::vector<double> ep_coef_; // W/K^5 per cell
    double u_phonon_pow_ = 0.0;   // T_bath^5

    // tridiagonal factorization of (M + dt K)
    std::vector<double> thomas_c_, thomas_m_;

    ThermalState state_;
    ThermalState equilibrium_;
    std::vector<double> u_; // T^2 working vector, kept in sync with state_.t_e
    EnergyLedger ledger_;
};

// Single explicit-interface steps used by the tests and by callers that want
// the physics pieces separately; simulate_pulse composes the same math
// through Simulator. Both operate in place on the state.

// conduction + electron-phonon over the whole field, no Joule term, current
// frozen (pure heat equation)
void step_heat_equation(ThermalState& state, const DetectorDesign& design, double dt);

// lumped sensor-cell update: conduction to the frozen neighbor cells, its
// electron-phonon escape, Joule heating from the bias circuit, and the
// current response
void tes_step(ThermalState& state, const DetectorDesign& design, double bias_voltage, double dt);

void inject_photon(ThermalState& state, const DetectorDesign& design, double x_impact,
                   double energy);

// total electron heat content of the field relative to absolute zero,
// sum of (gamma V / 2) T^2 over cells
double stored_energy(const ThermalState& state, const DetectorDesign& design);

PulseTrace simulate_pulse(const DetectorDesign& design, double x_impact, double duration,
                          double dx = 1e-6, double dt = 5e-9);

// Full width at half maximum energy resolution of the optimal (matched)
// filter, from a unit-energy pulse template (A/J sampled at dt) against a
// one-sided noise PSD:
//
//   dE = 2 sqrt(2 ln 2) [ integral 4 |s(f)|^2 / S_N(f) df ]^(-1/2)
//
// The integral runs over the one-sided spectrum with trapezoid weights; the
// DC and Nyquist bins carry half weight. Scales as sqrt(S_N): halving the
// noise power improves dE by sqrt(2), not 2.
double optimal_filter_resolution(const std::vector<double>& template_per_joule, double dt,
                                 const NoiseSpectrum& noise);

struct ResolutionOptions {
    double dx = 1e-6;
    double dt = 5e-9;
    double duration = 200e-6;
    double photon_energy = tesim::photon_energy(1550e-9);
    // absorption coefficient of the guided mode under the absorber, used to
    // weight impact positions by where photons actually land
    double absorption_alpha = 3260.0; // 1/m
    int side_positions = 8;           // impact samples per tail side
};

// Resolution of a design: simulates pulses across the absorber, weights them
// by the absorption profile of light entering at one end, and applies the
// optimal filter to the averaged unit-energy template.
double energy_resolution(const DetectorDesign& design, const NoiseSpectrum& noise,
                         const ResolutionOptions& opts = {});

// two-column CSV (time_s,delta_current_A)
void write_pulse_csv(std::ostream& out, const PulseTrace& trace);

} // namespace tesim::thermal
