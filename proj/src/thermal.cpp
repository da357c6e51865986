#include "tesim/thermal.hpp"

#include "fft_lock.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <mutex>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "tesim/io.hpp"

namespace tesim::detail {

std::mutex& fftw_plan_mutex() {
    static std::mutex m;
    return m;
}

} // namespace tesim::detail

namespace tesim::thermal {

namespace {

// T^5 written so that a negative argument surfaces as NaN and trips the
// divergence guard instead of silently flipping sign
inline double pow_5_2(double u) { return u * u * std::sqrt(u); }

// Uniform 1d mesh over the absorber: n_tail cells per tail plus the lumped
// sensor square between them. mass converts u = T^2 to joules (gamma V / 2
// summed over the metal layers), ep scales u^(5/2) to watts, w couples
// neighboring cells in u (half-cell thermal resistances in series, so the
// junction onto the skinny sensor square is resolved correctly).
struct Mesh {
    int n_tail = 0;
    int n = 0;
    int tes = 0;
    std::vector<double> x;
    std::vector<double> mass; // J/K^2
    std::vector<double> ep;   // W/K^5
    std::vector<double> w;    // W/K^2, between i and i+1
};

Mesh build_mesh(const DetectorDesign& d, double dx) {
    d.validate();
    if (!(dx > 0.0) || !std::isfinite(dx))
        throw std::invalid_argument("grid spacing must be positive");
    const double cells = d.tail_length / dx;
    const int n_tail = int(std::lround(cells));
    if (n_tail < 2 || std::abs(n_tail - cells) > 1e-9 * cells)
        throw std::invalid_argument("tail length must be a whole number of cells, at least two");

    const double a_w = d.tungsten_tail_width * d.tungsten_tail_thickness;
    const double a_au = d.gold_spine_width * d.gold_spine_thickness;
    const double ka_tail =
        materials::effective_conductivity(d.tungsten, d.tungsten_tail_thickness) * a_w
        + materials::effective_conductivity(d.gold, d.gold_spine_thickness) * a_au;
    const double ca_tail = d.tungsten.gamma * a_w + d.gold.gamma * a_au;
    const double sa_tail = d.tungsten.sigma_ep * a_w + d.gold.sigma_ep * a_au;

    const double v_tes = d.tes_side * d.tes_side * d.tes_thickness;
    const double ka_tes =
        materials::effective_conductivity(d.tungsten, d.tes_thickness) * d.tes_side
        * d.tes_thickness;

    Mesh m;
    m.n_tail = n_tail;
    m.n = 2 * n_tail + 1;
    m.tes = n_tail;
    m.x.resize(std::size_t(m.n));
    m.mass.assign(std::size_t(m.n), ca_tail * dx / 2.0);
    m.ep.assign(std::size_t(m.n), sa_tail * dx);

    const double half = d.tes_side / 2.0;
    for (int i = 0; i < n_tail; ++i) {
        double off = half + (n_tail - i - 0.5) * dx;
        m.x[std::size_t(i)] = -off;
        m.x[std::size_t(m.n - 1 - i)] = off;
    }
    m.x[std::size_t(m.tes)] = 0.0;
    m.mass[std::size_t(m.tes)] = d.tungsten.gamma * v_tes / 2.0;
    m.ep[std::size_t(m.tes)] = d.tungsten.sigma_ep * v_tes;

    const double lz = lorenz_constant();
    m.w.assign(std::size_t(m.n - 1), lz * ka_tail / (2.0 * dx));
    const double w_edge = (lz / 2.0) / ((dx / 2.0) / ka_tail + half / ka_tes);
    m.w[std::size_t(m.tes - 1)] = w_edge;
    m.w[std::size_t(m.tes)] = w_edge;
    return m;
}

int cell_of(const Mesh& m, const DetectorDesign& d, double dx, double x) {
    const double half = d.tes_side / 2.0;
    const double edge = half + d.tail_length;
    if (!std::isfinite(x) || std::abs(x) > edge * (1.0 + 1e-12))
        throw std::invalid_argument("impact position lies outside the absorber");
    if (std::abs(x) <= half)
        return m.tes;
    int k = std::min(int((std::abs(x) - half) / dx), m.n_tail - 1);
    return x > 0.0 ? m.tes + 1 + k : m.tes - 1 - k;
}

// prefactored general tridiagonal solver
struct Tridiag {
    std::vector<double> a;  // sub-diagonal, row i couples to i-1 via a[i-1]
    std::vector<double> d;  // forward-elimination denominators
    std::vector<double> cp; // normalized super-diagonal

    void factor(const std::vector<double>& sub, const std::vector<double>& diag,
                const std::vector<double>& sup) {
        const std::size_t n = diag.size();
        a = sub;
        d.resize(n);
        cp.resize(n - 1);
        d[0] = diag[0];
        cp[0] = sup[0] / d[0];
        for (std::size_t i = 1; i < n; ++i) {
            d[i] = diag[i] - sub[i - 1] * cp[i - 1];
            if (i < n - 1)
                cp[i] = sup[i] / d[i];
        }
    }

    void solve(std::vector<double>& r) const {
        const std::size_t n = d.size();
        r[0] /= d[0];
        for (std::size_t i = 1; i < n; ++i)
            r[i] = (r[i] - a[i - 1] * r[i - 1]) / d[i];
        for (std::size_t i = n - 1; i-- > 0;)
            r[i] -= cp[i] * r[i + 1];
    }
};

Tridiag factor_conduction(const Mesh& m, double dt) {
    std::vector<double> sub(std::size_t(m.n - 1)), diag(std::size_t(m.n)),
        sup(std::size_t(m.n - 1));
    for (int i = 0; i + 1 < m.n; ++i) {
        sub[std::size_t(i)] = -dt * m.w[std::size_t(i)];
        sup[std::size_t(i)] = -dt * m.w[std::size_t(i)];
    }
    for (int i = 0; i < m.n; ++i) {
        double coupling = 0.0;
        if (i > 0)
            coupling += m.w[std::size_t(i - 1)];
        if (i + 1 < m.n)
            coupling += m.w[std::size_t(i)];
        diag[std::size_t(i)] = m.mass[std::size_t(i)] + dt * coupling;
    }
    Tridiag t;
    t.factor(sub, diag, sup);
    return t;
}

void require_matching_grid(const ThermalState& state, const Mesh& m) {
    if (int(state.t_e.size()) != m.n || int(state.grid_x.size()) != m.n
        || state.tes_index != m.tes)
        throw std::invalid_argument("thermal state does not match the design grid");
}

double infer_dx(const ThermalState& state) {
    if (state.grid_x.size() < 5)
        throw std::invalid_argument("thermal state grid is too small");
    return state.grid_x[1] - state.grid_x[0];
}

} // namespace

void DetectorDesign::validate() const {
    auto positive = [](double v, const char* what) {
        if (!(v > 0.0) || !std::isfinite(v))
            throw std::invalid_argument(std::string(what) + " must be positive");
    };
    positive(tes_side, "tes_side");
    positive(tes_thickness, "tes_thickness");
    positive(tail_length, "tail_length");
    positive(tungsten_tail_width, "tungsten_tail_width");
    positive(tungsten_tail_thickness, "tungsten_tail_thickness");
    positive(gold_spine_width, "gold_spine_width");
    positive(gold_spine_thickness, "gold_spine_thickness");
    positive(t_c, "t_c");
    positive(transition_width, "transition_width");
    positive(r_normal, "r_normal");
    positive(bath_temperature, "bath_temperature");
    if (!(bath_temperature < t_c))
        throw std::invalid_argument("bath temperature must sit below the transition");
    positive(bias.load_resistance, "load_resistance");
    if (!(bias.target_r_fraction > 0.0) || !(bias.target_r_fraction < 1.0))
        throw std::invalid_argument("target_r_fraction must lie strictly between 0 and 1");
    if (bias.inductance < 0.0 || !std::isfinite(bias.inductance))
        throw std::invalid_argument("inductance must be non-negative");
    auto metal = [](const materials::MaterialParams& m, const char* which) {
        // sigma_ep may be zero (phonons deliberately decoupled); the transport
        // fields must be usable
        if (!(m.gamma > 0.0) || !(m.sigma_bulk > 0.0) || !(m.mfp_bulk > 0.0)
            || m.sigma_ep < 0.0)
            throw std::invalid_argument(std::string(which)
                                        + " material parameters are incomplete");
    };
    metal(tungsten, "tungsten");
    metal(gold, "gold");
}

double DetectorDesign::resistance(double t_tes) const {
    return r_normal / (1.0 + std::exp(-(t_tes - t_c) / transition_width));
}

DetectorDesign DetectorDesign::from_json(const nlohmann::json& j) {
    if (!j.is_object())
        throw DataError("detector design must be a JSON object");
    DetectorDesign d;
    nlohmann::json rest = j;
    auto num = [&rest](const char* key, double fallback_si, double scale) {
        auto it = rest.find(key);
        if (it == rest.end())
            return fallback_si;
        if (!it->is_number())
            throw DataError(std::string("design key '") + key + "' must be a number");
        double v = it->get<double>() * scale;
        rest.erase(it);
        return v;
    };
    d.tes_side = num("tes_side_um", d.tes_side, 1e-6);
    d.tes_thickness = num("tes_thickness_nm", d.tes_thickness, 1e-9);
    d.tail_length = num("tail_length_um", d.tail_length, 1e-6);
    d.tungsten_tail_width = num("tungsten_tail_width_um", d.tungsten_tail_width, 1e-6);
    d.tungsten_tail_thickness =
        num("tungsten_tail_thickness_nm", d.tungsten_tail_thickness, 1e-9);
    d.gold_spine_width = num("gold_spine_width_um", d.gold_spine_width, 1e-6);
    d.gold_spine_thickness = num("gold_spine_thickness_nm", d.gold_spine_thickness, 1e-9);
    d.t_c = num("t_c_mk", d.t_c, 1e-3);
    d.transition_width = num("transition_width_mk", d.transition_width, 1e-3);
    d.r_normal = num("r_normal_ohm", d.r_normal, 1.0);
    d.bath_temperature = num("bath_temperature_mk", d.bath_temperature, 1e-3);
    if (auto it = rest.find("bias"); it != rest.end()) {
        if (!it->is_object())
            throw DataError("design key 'bias' must be an object");
        nlohmann::json b = *it;
        rest.erase(it);
        auto bnum = [&b](const char* key, double fallback) {
            auto bit = b.find(key);
            if (bit == b.end())
                return fallback;
            if (!bit->is_number())
                throw DataError(std::string("bias key '") + key + "' must be a number");
            double v = bit->get<double>();
            b.erase(bit);
            return v;
        };
        d.bias.load_resistance = bnum("load_resistance_ohm", d.bias.load_resistance);
        d.bias.target_r_fraction = bnum("target_r_fraction", d.bias.target_r_fraction);
        d.bias.inductance = bnum("inductance_h", d.bias.inductance);
        if (!b.empty())
            throw DataError("unknown bias key '" + b.begin().key() + "'");
    }
    if (auto it = rest.find("tungsten"); it != rest.end()) {
        d.tungsten = materials::material_from_json("tungsten", *it);
        rest.erase(it);
    }
    if (auto it = rest.find("gold"); it != rest.end()) {
        d.gold = materials::material_from_json("gold", *it);
        rest.erase(it);
    }
    if (!rest.empty())
        throw DataError("unknown design key '" + rest.begin().key() + "'");
    d.validate();
    return d;
}

nlohmann::json DetectorDesign::to_json() const {
    return nlohmann::json{
        {"tes_side_um", tes_side * 1e6},
        {"tes_thickness_nm", tes_thickness * 1e9},
        {"tail_length_um", tail_length * 1e6},
        {"tungsten_tail_width_um", tungsten_tail_width * 1e6},
        {"tungsten_tail_thickness_nm", tungsten_tail_thickness * 1e9},
        {"gold_spine_width_um", gold_spine_width * 1e6},
        {"gold_spine_thickness_nm", gold_spine_thickness * 1e9},
        {"t_c_mk", t_c * 1e3},
        {"transition_width_mk", transition_width * 1e3},
        {"r_normal_ohm", r_normal},
        {"bath_temperature_mk", bath_temperature * 1e3},
        {"bias",
         {{"load_resistance_ohm", bias.load_resistance},
          {"target_r_fraction", bias.target_r_fraction},
          {"inductance_h", bias.inductance}}},
        {"tungsten", materials::to_json(tungsten)},
        {"gold", materials::to_json(gold)},
    };
}

double PulseTrace::peak() const {
    double p = 0.0;
    for (double s : samples)
        p = std::max(p, std::abs(s));
    return p;
}

double PulseTrace::area() const {
    double a = 0.0;
    for (double s : samples)
        a += std::abs(s);
    return a * dt;
}

void PulseTrace::validate() const {
    if (!(dt > 0.0) || samples.empty())
        throw DataError("pulse trace needs a positive sample interval and samples");
    for (double s : samples)
        if (!std::isfinite(s))
            throw DataError("pulse trace contains non-finite samples");
    // the tolerance floor keeps zero-energy traces, which are pure rounding
    // noise, from tripping the recovery check
    if (std::abs(samples.back()) > 0.01 * peak() + 1e-18)
        throw NumericalError("pulse did not return to baseline; extend the duration");
}

void NoiseSpectrum::validate() const {
    if (frequencies.empty() || frequencies.size() != psd.size())
        throw DataError("noise spectrum needs matching frequency and PSD arrays");
    for (std::size_t i = 0; i < frequencies.size(); ++i) {
        if (!std::isfinite(frequencies[i]) || frequencies[i] < 0.0)
            throw DataError("noise spectrum frequencies must be finite and non-negative");
        if (i > 0 && !(frequencies[i] > frequencies[i - 1]))
            throw DataError("noise spectrum frequencies must increase strictly");
        if (!std::isfinite(psd[i]) || !(psd[i] > 0.0))
            throw DataError("noise spectrum PSD values must be positive");
    }
}

double NoiseSpectrum::at(double frequency) const {
    if (frequency <= frequencies.front())
        return psd.front();
    if (frequency >= frequencies.back())
        return psd.back();
    auto it = std::upper_bound(frequencies.begin(), frequencies.end(), frequency);
    std::size_t k = std::size_t(it - frequencies.begin());
    double t = (frequency - frequencies[k - 1]) / (frequencies[k] - frequencies[k - 1]);
    return psd[k - 1] + t * (psd[k] - psd[k - 1]);
}

NoiseSpectrum NoiseSpectrum::white(double level_a2_per_hz) {
    NoiseSpectrum n;
    n.frequencies = {0.0};
    n.psd = {level_a2_per_hz};
    return n;
}

double wf_heat_flow(double sigma_eff, double area, double t_left, double t_right, double dx) {
    if (!(sigma_eff >= 0.0) || !(area >= 0.0) || !(dx > 0.0))
        throw std::invalid_argument("conductivity and area must be non-negative, dx positive");
    return sigma_eff * area * lorenz_constant() * (t_right * t_right - t_left * t_left)
           / (2.0 * dx);
}

double ep_power(double sigma_ep, double volume, double t_e, double t_p) {
    if (!(sigma_ep >= 0.0) || !(volume >= 0.0) || t_e < 0.0 || t_p < 0.0)
        throw std::invalid_argument("electron-phonon arguments must be non-negative");
    return sigma_ep * volume * (std::pow(t_e, 5) - std::pow(t_p, 5));
}

Simulator::Simulator(const DetectorDesign& design, double dx, double dt)
    : design_(design), dx_(dx), dt_(dt) {
    if (!(dt > 0.0) || !std::isfinite(dt))
        throw std::invalid_argument("time step must be positive");
    Mesh m = build_mesh(design, dx);
    mass_ = m.mass;
    wiface_ = m.w;
    ep_coef_ = m.ep;
    u_phonon_pow_ = std::pow(design.bath_temperature, 5);

    state_.grid_x = m.x;
    state_.tes_index = m.tes;
    state_.t_e.assign(std::size_t(m.n), design.bath_temperature);
    u_.assign(std::size_t(m.n), design.bath_temperature * design.bath_temperature);

    thomas_m_.resize(std::size_t(m.n));
    thomas_c_.resize(std::size_t(m.n - 1));
    thomas_m_[0] = mass_[0] + dt_ * wiface_[0];
    thomas_c_[0] = dt_ * wiface_[0] / thomas_m_[0];
    for (int i = 1; i < m.n; ++i) {
        double coupling = wiface_[std::size_t(i - 1)];
        if (i + 1 < m.n)
            coupling += wiface_[std::size_t(i)];
        double diag = mass_[std::size_t(i)] + dt_ * coupling;
        thomas_m_[std::size_t(i)] =
            diag - dt_ * wiface_[std::size_t(i - 1)] * thomas_c_[std::size_t(i - 1)];
        if (i + 1 < m.n)
            thomas_c_[std::size_t(i)] = dt_ * wiface_[std::size_t(i)] / thomas_m_[std::size_t(i)];
    }

    relax_to_equilibrium();
}

void Simulator::source_terms(std::vector<double>& rhs, double& joule, double& ep) const {
    const std::size_t n = u_.size();
    const std::size_t tes = std::size_t(state_.tes_index);
    double r_now = design_.resistance(state_.t_e[tes]);
    joule = state_.current * state_.current * r_now;
    ep = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double pe = ep_coef_[i] * (pow_5_2(u_[i]) - u_phonon_pow_);
        ep += pe;
        rhs[i] = mass_[i] * u_[i] - dt_ * pe;
    }
    rhs[tes] += dt_ * joule;
}

void Simulator::advance() {
    const std::size_t n = u_.size();
    const std::size_t tes = std::size_t(state_.tes_index);

    double joule = 0.0, ep_total = 0.0;
    source_terms(u_, joule, ep_total); // overwrites u_ with the rhs in place

    // prefactored Thomas sweep of (M + dt K) u = rhs
    u_[0] /= thomas_m_[0];
    for (std::size_t i = 1; i < n; ++i)
        u_[i] = (u_[i] + dt_ * wiface_[i - 1] * u_[i - 1]) / thomas_m_[i];
    for (std::size_t i = n - 1; i-- > 0;)
        u_[i] += thomas_c_[i] * u_[i + 1];

    for (std::size_t i = 0; i < n; ++i) {
        if (!(u_[i] >= 0.0) || u_[i] > 25.0)
            throw NumericalError("thermal step diverged; reduce the time step");
        state_.t_e[i] = std::sqrt(u_[i]);
    }

    const double rl = design_.bias.load_resistance;
    const double r_new = design_.resistance(state_.t_e[tes]);
    if (design_.bias.inductance == 0.0) {
        state_.current = v_thevenin_ / (rl + r_new);
    } else {
        const double l = design_.bias.inductance;
        state_.current =
            (state_.current + dt_ * v_thevenin_ / l) / (1.0 + dt_ * (rl + r_new) / l);
    }

    ledger_.joule_in += dt_ * joule;
    ledger_.ep_out += dt_ * ep_total;
    state_.time += dt_;
}

void Simulator::relax_to_equilibrium() {
    const int n = int(u_.size());
    const std::size_t tes = std::size_t(state_.tes_index);

    const double f = design_.bias.target_r_fraction;
    const double t0 = design_.t_c + design_.transition_width * std::log(f / (1.0 - f));
    if (!(t0 > design_.bath_temperature))
        throw std::invalid_argument("bias target temperature must sit above the bath");
    const double u0 = t0 * t0;

    // stage 1: tail field against the sensor cell held at the target point.
    // Pinning the row makes the converged tails exactly stationary for
    // u_tes = u0, so the later full-map polish starts at its own fixed point.
    double ep_rate = 0.0;
    for (int i = 0; i < n; ++i)
        ep_rate = std::max(ep_rate,
                           2.5 * ep_coef_[std::size_t(i)] / mass_[std::size_t(i)] * u0
                               * std::sqrt(u0));
    double dt_r = ep_rate > 0.0 ? std::min(5e-6, 0.2 / ep_rate) : 5e-6;

    std::vector<double> sub(u_.size() - 1), diag(u_.size()), sup(u_.size() - 1);
    for (int i = 0; i + 1 < n; ++i) {
        sub[std::size_t(i)] = -dt_r * wiface_[std::size_t(i)];
        sup[std::size_t(i)] = -dt_r * wiface_[std::size_t(i)];
    }
    for (int i = 0; i < n; ++i) {
        double coupling = 0.0;
        if (i > 0)
            coupling += wiface_[std::size_t(i - 1)];
        if (i + 1 < n)
            coupling += wiface_[std::size_t(i)];
        diag[std::size_t(i)] = mass_[std::size_t(i)] + dt_r * coupling;
    }
    diag[tes] = 1.0;
    sub[tes - 1] = 0.0;
    sup[tes] = 0.0;
    Tridiag pinned;
    pinned.factor(sub, diag, sup);

    u_[tes] = u0;
    std::vector<double> rhs(u_.size());
    bool settled = false;
    for (int iter = 0; iter < 100000 && !settled; ++iter) {
        for (int i = 0; i < n; ++i) {
            std::size_t k = std::size_t(i);
            rhs[k] = mass_[k] * u_[k]
                     - dt_r * ep_coef_[k] * (pow_5_2(u_[k]) - u_phonon_pow_);
        }
        rhs[tes] = u0;
        pinned.solve(rhs);
        double delta = 0.0;
        for (int i = 0; i < n; ++i) {
            std::size_t k = std::size_t(i);
            delta = std::max(delta, std::abs(rhs[k] - u_[k]) / u0);
            u_[k] = rhs[k];
        }
        settled = delta < 1e-13;
    }
    if (!settled)
        throw NumericalError("tail relaxation toward the bias point did not settle");
    for (int i = 0; i < n; ++i)
        state_.t_e[std::size_t(i)] = std::sqrt(u_[std::size_t(i)]);

    // stage 2: Thevenin voltage that balances the sensor's power budget at
    // the target point
    const double p_cond = wiface_[tes - 1] * (u0 - u_[tes - 1])
                          + wiface_[tes] * (u0 - u_[tes + 1]);
    const double p_ep = ep_coef_[tes] * (pow_5_2(u0) - u_phonon_pow_);
    const double p_joule = p_cond + p_ep;
    if (p_joule < 0.0)
        throw NumericalError("bias point requires negative Joule power");
    const double r0 = design_.resistance(t0);
    const double i0 = std::sqrt(p_joule / r0);
    v_thevenin_ = i0 * (design_.bias.load_resistance + r0);
    state_.current = i0;

    // stage 3: the explicit sources must be slow on the chosen step
    const double rl = design_.bias.load_resistance;
    const double r_slope = design_.r_normal * f * (1.0 - f) / design_.transition_width;
    const double etf_rate = v_thevenin_ * v_thevenin_ * std::abs(rl - r0) * r_slope
                            / std::pow(rl + r0, 3) / (2.0 * t0) / mass_[tes];
    if (dt_ * (etf_rate + ep_rate) > 0.5)
        throw std::invalid_argument(
            "time step too large for the explicit feedback and cooling terms");

    // stage 4: verify the composed map holds still there
    std::vector<double> u_prev(u_.size());
    bool stationary = false;
    for (int iter = 0; iter < 500000 && !stationary; ++iter) {
        u_prev = u_;
        double i_prev = state_.current;
        advance();
        double delta = std::abs(state_.current - i_prev) / i_prev;
        for (int i = 0; i < n; ++i)
            delta = std::max(delta,
                             std::abs(u_[std::size_t(i)] - u_prev[std::size_t(i)]) / u0);
        stationary = delta < 1e-12;
    }
    if (!stationary)
        throw NumericalError("bias operating point did not settle");

    state_.time = 0.0;
    equilibrium_ = state_;
    ledger_ = EnergyLedger{};
    ledger_.joule_rate_eq =
        state_.current * state_.current * design_.resistance(state_.t_e[tes]);
    for (int i = 0; i < n; ++i)
        ledger_.ep_rate_eq +=
            ep_coef_[std::size_t(i)] * (pow_5_2(u_[std::size_t(i)]) - u_phonon_pow_);
    ledger_.stored_initial = stored_energy();
}

void Simulator::inject(double x_impact, double energy) {
    if (!std::isfinite(energy) || energy < 0.0)
        throw std::invalid_argument("deposited energy must be non-negative");
    const double half = design_.tes_side / 2.0;
    const double edge = half + design_.tail_length;
    if (!std::isfinite(x_impact) || std::abs(x_impact) > edge * (1.0 + 1e-12))
        throw std::invalid_argument("impact position lies outside the absorber");
    const int n_tail = state_.tes_index;
    std::size_t cell;
    if (std::abs(x_impact) <= half) {
        cell = std::size_t(state_.tes_index);
    } else {
        int k = std::min(int((std::abs(x_impact) - half) / dx_), n_tail - 1);
        cell = std::size_t(x_impact > 0.0 ? state_.tes_index + 1 + k
                                          : state_.tes_index - 1 - k);
    }
    u_[cell] += energy / mass_[cell];
    state_.t_e[cell] = std::sqrt(u_[cell]);
    ledger_.injected += energy;
}

void Simulator::reset() {
    state_ = equilibrium_;
    for (std::size_t i = 0; i < u_.size(); ++i)
        u_[i] = state_.t_e[i] * state_.t_e[i];
    const double jr = ledger_.joule_rate_eq;
    const double er = ledger_.ep_rate_eq;
    ledger_ = EnergyLedger{};
    ledger_.joule_rate_eq = jr;
    ledger_.ep_rate_eq = er;
    ledger_.stored_initial = stored_energy();
}

double Simulator::stored_energy() const {
    double e = 0.0;
    for (std::size_t i = 0; i < u_.size(); ++i)
        e += mass_[i] * u_[i];
    return e;
}

double Simulator::conservation_error() const {
    const double elapsed = state_.time;
    const double d_stored = stored_energy() - ledger_.stored_initial;
    const double ep_excess = ledger_.ep_out - elapsed * ledger_.ep_rate_eq;
    const double joule_excess = ledger_.joule_in - elapsed * ledger_.joule_rate_eq;
    const double residual = ledger_.injected - (d_stored + ep_excess - joule_excess);
    return ledger_.injected > 0.0 ? std::abs(residual) / ledger_.injected
                                  : std::abs(residual);
}

PulseTrace Simulator::run_pulse(double x_impact, double energy, double duration) {
    if (!(duration > 0.0) || !std::isfinite(duration))
        throw std::invalid_argument("pulse duration must be positive");
    reset();
    inject(x_impact, energy);
    const long steps = std::lround(std::ceil(duration / dt_ - 1e-9));
    PulseTrace trace;
    trace.dt = dt_;
    trace.x_impact = x_impact;
    trace.samples.reserve(std::size_t(steps));
    const double i_eq = equilibrium_.current;
    for (long k = 0; k < steps; ++k) {
        advance();
        trace.samples.push_back(state_.current - i_eq);
    }
    trace.validate();
    return trace;
}

void step_heat_equation(ThermalState& state, const DetectorDesign& design, double dt) {
    if (!(dt > 0.0) || !std::isfinite(dt))
        throw std::invalid_argument("time step must be positive");
    Mesh m = build_mesh(design, infer_dx(state));
    require_matching_grid(state, m);
    const double tb5 = std::pow(design.bath_temperature, 5);
    std::vector<double> rhs(std::size_t(m.n));
    for (int i = 0; i < m.n; ++i) {
        std::size_t k = std::size_t(i);
        double u = state.t_e[k] * state.t_e[k];
        rhs[k] = m.mass[k] * u - dt * m.ep[k] * (pow_5_2(u) - tb5);
    }
    factor_conduction(m, dt).solve(rhs);
    for (int i = 0; i < m.n; ++i) {
        std::size_t k = std::size_t(i);
        if (!(rhs[k] >= 0.0))
            throw NumericalError("heat step diverged; reduce the time step");
        state.t_e[k] = std::sqrt(rhs[k]);
    }
    state.time += dt;
}

void tes_step(ThermalState& state, const DetectorDesign& design, double bias_voltage,
              double dt) {
    if (!(dt > 0.0) || !std::isfinite(dt))
        throw std::invalid_argument("time step must be positive");
    Mesh m = build_mesh(design, infer_dx(state));
    require_matching_grid(state, m);
    const std::size_t tes = std::size_t(m.tes);
    const double tb5 = std::pow(design.bath_temperature, 5);
    const double rl = design.bias.load_resistance;

    const double u = state.t_e[tes] * state.t_e[tes];
    const double ul = state.t_e[tes - 1] * state.t_e[tes - 1];
    const double ur = state.t_e[tes + 1] * state.t_e[tes + 1];
    const double r_now = design.resistance(state.t_e[tes]);
    const double i_now =
        design.bias.inductance == 0.0 ? bias_voltage / (rl + r_now) : state.current;
    const double p_joule = i_now * i_now * r_now;
    const double p_ep = m.ep[tes] * (pow_5_2(u) - tb5);
    const double wl = m.w[tes - 1], wr = m.w[tes];

    const double u_new = (m.mass[tes] * u + dt * (wl * ul + wr * ur + p_joule - p_ep))
                         / (m.mass[tes] + dt * (wl + wr));
    if (!(u_new >= 0.0))
        throw NumericalError("sensor step diverged; reduce the time step");
    state.t_e[tes] = std::sqrt(u_new);

    const double r_new = design.resistance(state.t_e[tes]);
    if (design.bias.inductance == 0.0) {
        state.current = bias_voltage / (rl + r_new);
    } else {
        const double l = design.bias.inductance;
        state.current =
            (i_now + dt * bias_voltage / l) / (1.0 + dt * (rl + r_new) / l);
    }
    state.time += dt;
}

void inject_photon(ThermalState& state, const DetectorDesign& design, double x_impact,
                   double energy) {
    if (!std::isfinite(energy) || energy < 0.0)
        throw std::invalid_argument("deposited energy must be non-negative");
    const double dx = infer_dx(state);
    Mesh m = build_mesh(design, dx);
    require_matching_grid(state, m);
    std::size_t cell = std::size_t(cell_of(m, design, dx, x_impact));
    double u = state.t_e[cell] * state.t_e[cell] + energy / m.mass[cell];
    state.t_e[cell] = std::sqrt(u);
}

double stored_energy(const ThermalState& state, const DetectorDesign& design) {
    Mesh m = build_mesh(design, infer_dx(state));
    require_matching_grid(state, m);
    double e = 0.0;
    for (std::size_t i = 0; i < state.t_e.size(); ++i)
        e += m.mass[i] * state.t_e[i] * state.t_e[i];
    return e;
}

PulseTrace simulate_pulse(const DetectorDesign& design, double x_impact, double duration,
                          double dx, double dt) {
    Simulator sim(design, dx, dt);
    return sim.run_pulse(x_impact, photon_energy(1550e-9), duration);
}

double optimal_filter_resolution(const std::vector<double>& template_per_joule, double dt,
                                 const NoiseSpectrum& noise) {
    if (!(dt > 0.0) || !std::isfinite(dt))
        throw std::invalid_argument("sample interval must be positive");
    noise.validate();
    if (template_per_joule.size() < 2)
        throw DataError("pulse template needs at least two samples");
    bool any = false;
    for (double v : template_per_joule) {
        if (!std::isfinite(v))
            throw DataError("pulse template contains non-finite samples");
        any = any || v != 0.0;
    }
    if (!any)
        throw DataError("pulse template is identically zero");

    const int n = int(template_per_joule.size());
    const int n_bins = n / 2 + 1;
    std::vector<double> in(template_per_joule);
    std::vector<double> out(std::size_t(2 * n_bins));
    {
        fftw_plan plan;
        {
            std::lock_guard<std::mutex> lock(detail::fftw_plan_mutex());
            plan = fftw_plan_dft_r2c_1d(n, in.data(),
                                        reinterpret_cast<fftw_complex*>(out.data()),
                                        FFTW_ESTIMATE);
        }
        if (!plan)
            throw NumericalError("FFT planning failed");
        fftw_execute(plan);
        std::lock_guard<std::mutex> lock(detail::fftw_plan_mutex());
        fftw_destroy_plan(plan);
    }

    const double df = 1.0 / (n * dt);
    double integral = 0.0;
    for (int k = 0; k < n_bins; ++k) {
        const double re = out[std::size_t(2 * k)];
        const double im = out[std::size_t(2 * k + 1)];
        const double s2 = (re * re + im * im) * dt * dt;
        const bool nyquist = n % 2 == 0 && k == n_bins - 1;
        const double weight = (k == 0 || nyquist) ? 0.5 : 1.0;
        integral += weight * 4.0 * s2 / noise.at(k * df);
    }
    integral *= df;
    return 2.0 * std::sqrt(2.0 * std::log(2.0)) / std::sqrt(integral);
}

double energy_resolution(const DetectorDesign& design, const NoiseSpectrum& noise,
                         const ResolutionOptions& opts) {
    if (opts.side_positions < 1)
        throw std::invalid_argument("need at least one impact position per side");
    if (!(opts.photon_energy > 0.0) || !std::isfinite(opts.photon_energy))
        throw std::invalid_argument("photon energy must be positive");
    if (opts.absorption_alpha < 0.0 || !std::isfinite(opts.absorption_alpha))
        throw std::invalid_argument("absorption coefficient must be non-negative");
    noise.validate();

    Simulator sim(design, opts.dx, opts.dt);
    const double length = design.tail_length;
    const double edge = length + design.tes_side / 2.0;
    const int k_max = opts.side_positions;
    const double spacing = length / k_max;

    // pulses are mirror symmetric in the impact position, simulate one side
    std::vector<PulseTrace> traces(std::size_t(k_max) + 1);
    for (int k = 0; k <= k_max; ++k)
        traces[std::size_t(k)] = sim.run_pulse(k * spacing, opts.photon_energy, opts.duration);

    // weight each sample position by the photons a beam entering at -edge
    // deposits in the segment it represents
    auto mass_between = [&](double a, double b) {
        if (opts.absorption_alpha <= 0.0)
            return b - a;
        return std::exp(-opts.absorption_alpha * (a + edge))
               - std::exp(-opts.absorption_alpha * (b + edge));
    };

    const std::size_t n_samples = traces[0].samples.size();
    std::vector<double> tmpl(n_samples, 0.0);
    double weight_sum = 0.0;
    for (int k = -k_max; k <= k_max; ++k) {
        const double xk = k * spacing;
        const double a = k == -k_max ? -edge : xk - spacing / 2.0;
        const double b = k == k_max ? edge : xk + spacing / 2.0;
        const double wk = mass_between(a, b);
        weight_sum += wk;
        const auto& s = traces[std::size_t(std::abs(k))].samples;
        for (std::size_t i = 0; i < n_samples; ++i)
            tmpl[i] += wk * s[i];
    }
    for (std::size_t i = 0; i < n_samples; ++i)
        tmpl[i] /= weight_sum * opts.photon_energy;

    return optimal_filter_resolution(tmpl, opts.dt, noise);
}

void write_pulse_csv(std::ostream& out, const PulseTrace& trace) {
    out << "time_s,delta_current_A\n";
    for (std::size_t i = 0; i < trace.samples.size(); ++i)
        out << io::format_double(double(i + 1) * trace.dt) << ','
            << io::format_double(trace.samples[i]) << '\n';
}

} // namespace tesim::thermal
