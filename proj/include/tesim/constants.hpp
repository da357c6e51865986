#pragma once

#include <numbers>

namespace tesim {

/// CODATA 2018 values. The first four are exact by the 2019 SI definition.
struct PhysicalConstants {
    static constexpr double boltzmann       = 1.380649e-23;    // J/K
    static constexpr double electron_charge = 1.602176634e-19; // C
    static constexpr double planck          = 6.62607015e-34;  // J s
    static constexpr double light_speed     = 299792458.0;     // m/s
    static constexpr double electron_mass   = 9.1093837015e-31; // kg
};

/// Free-electron Lorenz number pi^2 kB^2 / (3 e^2), about 24.4 nW Ohm K^-2.
constexpr double lorenz_constant() {
    constexpr double kb = PhysicalConstants::boltzmann;
    constexpr double e  = PhysicalConstants::electron_charge;
    return std::numbers::pi * std::numbers::pi * kb * kb / (3.0 * e * e);
}

/// Energy of a single photon at vacuum wavelength lambda [m], in joules.
constexpr double photon_energy(double wavelength) {
    return PhysicalConstants::planck * PhysicalConstants::light_speed / wavelength;
}

} // namespace tesim
