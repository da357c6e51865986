#pragma once

#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "tesim/errors.hpp"

namespace tesim::materials {

/// Low-temperature transport parameters of a metal film, stored in SI.
///
/// gamma is numerically identical in J m^-3 K^-2 and aJ um^-3 K^-2, which is
/// why tabulated values can be copied straight in. sigma_ep carries a factor
/// 1e9 relative to the usual nW um^-3 K^-5 tabulation.
struct MaterialParams {
    std::string name;
    double gamma = 0.0;      ///< electron heat-capacity coefficient [J m^-3 K^-2]
    double sigma_ep = 0.0;   ///< electron-phonon coupling constant [W m^-3 K^-5]
    double sigma_bulk = 0.0; ///< bulk electrical conductivity [1/(Ohm m)]
    double mfp_bulk = 0.0;   ///< bulk electron mean free path [m]
    double n_free = 0.0;     ///< free-electron density [m^-3]
    double v_fermi = 0.0;    ///< Fermi velocity [m/s]

    /// Throws std::invalid_argument unless every field is positive and the name is set.
    void validate() const;
};

/// Built-in sputtered-tungsten parameters (40 nm TES / absorber films).
const MaterialParams& tungsten();
/// Built-in gold parameters (80 nm thermalization spine).
const MaterialParams& gold();

/// Name-keyed registry of materials. Starts from the built-ins and accepts
/// user definitions from JSON documents.
class MaterialLibrary {
public:
    static MaterialLibrary with_builtins();

    const MaterialParams& get(const std::string& name) const;
    bool contains(const std::string& name) const;
    void add(MaterialParams m);
    /// Merge a JSON document of {name: {field: value}} entries in tabulated units.
    void load_json(const nlohmann::json& doc);
    std::vector<std::string> names() const;

private:
    std::map<std::string, MaterialParams> by_name_;
};

/// Parse one material entry in tabulated units (see to_json for the keys).
MaterialParams material_from_json(const std::string& name, const nlohmann::json& fields);
nlohmann::json to_json(const MaterialParams& m);

/// Electron mean free path in a film: boundary scattering caps it at the thickness.
double effective_mfp(const MaterialParams& m, double thickness);

/// Film conductivity sigma_bulk * l_eff / l_bulk. Thickness must be positive.
double effective_conductivity(const MaterialParams& m, double thickness);

/// Electronic thermal conductivity via Wiedemann-Franz, kappa = sigma_eff * L * T.
double thermal_conductivity(const MaterialParams& m, double thickness, double temperature);

/// Electron heat capacity gamma * V * T [J/K] for a volume in m^3.
double heat_capacity(const MaterialParams& m, double volume, double temperature);

} // namespace tesim::materials
