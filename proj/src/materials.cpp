#include "tesim/materials.hpp"

#include "tesim/constants.hpp"
#include "tesim/errors.hpp"

#include <algorithm>
#include <set>
#include <stdexcept>

namespace tesim::materials {

void MaterialParams::validate() const {
    if (name.empty())
        throw std::invalid_argument("material needs a name");
    auto positive = [&](double v, const char* field) {
        if (!(v > 0.0))
            throw std::invalid_argument("material '" + name + "': " + field + " must be positive");
    };
    positive(gamma, "gamma");
    positive(sigma_ep, "sigma_ep");
    positive(sigma_bulk, "sigma_bulk");
    positive(mfp_bulk, "mfp_bulk");
    positive(n_free, "n_free");
    positive(v_fermi, "v_fermi");
}

// n_free and v_fermi are chosen Drude-consistent with the (sigma_bulk, mfp_bulk)
// pair: sigma = n e^2 l / (m v_F). For gold they are the textbook free-electron
// values; tungsten is not a free-electron metal, so v_fermi is the effective
// value implied by the measured film conductivity.
const MaterialParams& tungsten() {
    static const MaterialParams w{
        "tungsten",
        140.0,   // gamma [J m^-3 K^-2]
        0.4e9,   // sigma_ep [W m^-3 K^-5]
        5.0e6,   // sigma_bulk [S/m]
        2.8e-9,  // mfp_bulk [m]
        6.3e28,  // n_free [m^-3]
        9.94e5,  // v_fermi [m/s]
    };
    return w;
}

const MaterialParams& gold() {
    static const MaterialParams au{
        "gold",
        71.4,
        2.6e9,
        2.23e10,
        1.88e-5,
        5.90e28,
        1.40e6,
    };
    return au;
}

MaterialLibrary MaterialLibrary::with_builtins() {
    MaterialLibrary lib;
    lib.add(tungsten());
    lib.add(gold());
    return lib;
}

const MaterialParams& MaterialLibrary::get(const std::string& name) const {
    auto it = by_name_.find(name);
    if (it == by_name_.end())
        throw DataError("unknown material '" + name + "'");
    return it->second;
}

bool MaterialLibrary::contains(const std::string& name) const {
    return by_name_.count(name) != 0;
}

void MaterialLibrary::add(MaterialParams m) {
    m.validate();
    by_name_[m.name] = std::move(m);
}

std::vector<std::string> MaterialLibrary::names() const {
    std::vector<std::string> out;
    out.reserve(by_name_.size());
    for (const auto& [k, v] : by_name_)
        out.push_back(k);
    return out;
}

namespace {

double require_positive_number(const nlohmann::json& fields, const std::string& name,
                               const char* key) {
    if (!fields.contains(key))
        throw DataError("material '" + name + "': missing key '" + key + "'");
    const auto& v = fields.at(key);
    if (!v.is_number())
        throw DataError("material '" + name + "': key '" + key + "' must be a number");
    double x = v.get<double>();
    if (!(x > 0.0))
        throw DataError("material '" + name + "': key '" + key + "' must be positive");
    return x;
}

} // namespace

MaterialParams material_from_json(const std::string& name, const nlohmann::json& fields) {
    if (!fields.is_object())
        throw DataError("material '" + name + "': entry must be an object");
    static const std::set<std::string> known = {
        "gamma_aJ_um3_K2", "sigma_ep_nW_um3_K5", "sigma_bulk_S_m",
        "mfp_bulk_m",      "n_free_m3",          "v_fermi_m_s",
    };
    for (const auto& [key, value] : fields.items()) {
        if (!known.count(key))
            throw DataError("material '" + name + "': unknown key '" + key + "'");
    }
    MaterialParams m;
    m.name = name;
    m.gamma = require_positive_number(fields, name, "gamma_aJ_um3_K2"); // same number in SI
    m.sigma_ep = require_positive_number(fields, name, "sigma_ep_nW_um3_K5") * 1e9;
    m.sigma_bulk = require_positive_number(fields, name, "sigma_bulk_S_m");
    m.mfp_bulk = require_positive_number(fields, name, "mfp_bulk_m");
    m.n_free = require_positive_number(fields, name, "n_free_m3");
    m.v_fermi = require_positive_number(fields, name, "v_fermi_m_s");
    return m;
}

nlohmann::json to_json(const MaterialParams& m) {
    return {
        {"gamma_aJ_um3_K2", m.gamma},
        {"sigma_ep_nW_um3_K5", m.sigma_ep * 1e-9},
        {"sigma_bulk_S_m", m.sigma_bulk},
        {"mfp_bulk_m", m.mfp_bulk},
        {"n_free_m3", m.n_free},
        {"v_fermi_m_s", m.v_fermi},
    };
}

void MaterialLibrary::load_json(const nlohmann::json& doc) {
    if (!doc.is_object())
        throw DataError("material document must be a JSON object keyed by name");
    for (const auto& [name, fields] : doc.items()) {
        MaterialParams m = material_from_json(name, fields);
        try {
            m.validate();
        } catch (const std::invalid_argument& e) {
            throw DataError(e.what());
        }
        by_name_[m.name] = std::move(m);
    }
}

double effective_mfp(const MaterialParams& m, double thickness) {
    if (!(thickness > 0.0))
        throw std::invalid_argument("film thickness must be positive");
    return std::min(m.mfp_bulk, thickness);
}

double effective_conductivity(const MaterialParams& m, double thickness) {
    return m.sigma_bulk * effective_mfp(m, thickness) / m.mfp_bulk;
}

double thermal_conductivity(const MaterialParams& m, double thickness, double temperature) {
    if (temperature < 0.0)
        throw std::invalid_argument("temperature must be non-negative");
    return effective_conductivity(m, thickness) * lorenz_constant() * temperature;
}

double heat_capacity(const MaterialParams& m, double volume, double temperature) {
    if (volume < 0.0)
        throw std::invalid_argument("volume must be non-negative");
    if (temperature < 0.0)
        throw std::invalid_argument("temperature must be non-negative");
    return m.gamma * volume * temperature;
}

} // namespace tesim::materials
