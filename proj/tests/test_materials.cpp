#include "doctest.h"

#include "tesim/constants.hpp"
#include "tesim/materials.hpp"

#include "json.hpp"

#include <cmath>

using namespace tesim;
using namespace tesim::materials;

TEST_CASE("lorenz constant matches independent CODATA recompute") {
    // Oracle: evaluate pi^2 kB^2 / (3 e^2) from the raw CODATA literals.
    const double kb = 1.380649e-23;
    const double e = 1.602176634e-19;
    const double pi = 3.14159265358979323846;
    const double expected = pi * pi * kb * kb / (3.0 * e * e);
    CHECK(lorenz_constant() == doctest::Approx(expected).epsilon(1e-12));
    // About 24.4 nW Ohm K^-2.
    CHECK(lorenz_constant() * 1e9 == doctest::Approx(24.43).epsilon(1e-3));
}

TEST_CASE("photon energy at telecom wavelengths") {
    // h*c = 1.98644586e-25 J m, frozen by hand from the CODATA table.
    CHECK(photon_energy(1550e-9) == doctest::Approx(1.281578e-19).epsilon(1e-6));
    CHECK(photon_energy(1552e-9) == doctest::Approx(1.279927e-19).epsilon(1e-6));
    CHECK(photon_energy(775e-9) == doctest::Approx(2.0 * photon_energy(1550e-9)).epsilon(1e-12));
}

TEST_CASE("effective conductivity follows the thinner of film and bulk mean free path") {
    const MaterialParams& w = tungsten();
    const MaterialParams& au = gold();

    // Tungsten mean free path (2.8 nm) is below any film thickness of interest,
    // so the bulk value survives.
    CHECK(effective_conductivity(w, 40e-9) == doctest::Approx(5e6).epsilon(1e-12));
    CHECK(effective_conductivity(w, 80e-9) == doctest::Approx(5e6).epsilon(1e-12));

    // Gold at 80 nm is strongly boundary-limited: 2.23e10 * 80e-9 / 1.88e-5.
    CHECK(effective_conductivity(au, 80e-9) == doctest::Approx(9.4893617e7).epsilon(1e-6));

    // Exactly at the bulk mean free path the scaling factor is one.
    CHECK(effective_conductivity(au, au.mfp_bulk) == doctest::Approx(au.sigma_bulk).epsilon(1e-12));

    CHECK_THROWS_AS(effective_conductivity(w, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(effective_conductivity(w, -1e-9), std::invalid_argument);
}

TEST_CASE("effective conductivity is monotone non-decreasing in thickness") {
    const MaterialParams& au = gold();
    double prev = 0.0;
    for (double t = 1e-9; t < 4e-5; t *= 1.7) {
        double s = effective_conductivity(au, t);
        CHECK(s >= prev);
        prev = s;
    }
    // and saturates at the bulk value
    CHECK(prev == doctest::Approx(au.sigma_bulk).epsilon(1e-12));
}

TEST_CASE("thermal conductivity reproduces the reference film values") {
    // Reference: 80 nm films at 100 mK, kappa(W) ~ 0.0122 and kappa(Au) ~ 0.232 W/(m K).
    CHECK(thermal_conductivity(tungsten(), 80e-9, 0.1) == doctest::Approx(0.0122).epsilon(0.05));
    CHECK(thermal_conductivity(gold(), 80e-9, 0.1) == doctest::Approx(0.232).epsilon(0.05));
    // The 40 nm TES film is still bulk-limited for tungsten.
    CHECK(thermal_conductivity(tungsten(), 40e-9, 0.1) == doctest::Approx(0.0122).epsilon(0.05));
}

TEST_CASE("Wiedemann-Franz consistency holds exactly") {
    for (const MaterialParams* m : {&tungsten(), &gold()}) {
        for (double t : {20e-9, 80e-9, 1e-6}) {
            for (double T : {0.05, 0.1, 0.3}) {
                CHECK(thermal_conductivity(*m, t, T)
                      == effective_conductivity(*m, t) * lorenz_constant() * T);
            }
        }
    }
}

TEST_CASE("thermal conductivity is linear in temperature") {
    double k1 = thermal_conductivity(gold(), 80e-9, 0.05);
    double k2 = thermal_conductivity(gold(), 80e-9, 0.10);
    CHECK(k2 == doctest::Approx(2.0 * k1).epsilon(1e-12));
}

TEST_CASE("drude closure ties sigma_bulk to n, v_fermi and the bulk mean free path") {
    const double e = PhysicalConstants::electron_charge;
    const double me = PhysicalConstants::electron_mass;
    for (const MaterialParams* m : {&tungsten(), &gold()}) {
        double drude = m->n_free * e * e * m->mfp_bulk / (me * m->v_fermi);
        CHECK(drude == doctest::Approx(m->sigma_bulk).epsilon(0.01));
    }
}

TEST_CASE("electron heat capacity gamma*V*T") {
    // 1 um^3 of tungsten at 1 K: 140 aJ/K.
    CHECK(heat_capacity(tungsten(), 1e-18, 1.0) == doctest::Approx(1.4e-16).epsilon(1e-12));
    // 2 um^3 of gold at 0.5 K: 71.4 aJ/K.
    CHECK(heat_capacity(gold(), 2e-18, 0.5) == doctest::Approx(7.14e-17).epsilon(1e-12));
    CHECK(heat_capacity(tungsten(), 1e-18, 0.0) == 0.0);
}

TEST_CASE("material library lookup and registration") {
    MaterialLibrary lib = MaterialLibrary::with_builtins();
    CHECK(lib.contains("tungsten"));
    CHECK(lib.contains("gold"));
    CHECK_FALSE(lib.contains("unobtanium"));
    CHECK_THROWS_AS(lib.get("unobtanium"), DataError);

    MaterialParams hafnium = tungsten();
    hafnium.name = "hafnium";
    hafnium.gamma = 200.0;
    lib.add(hafnium);
    CHECK(lib.get("hafnium").gamma == 200.0);

    MaterialParams bad = tungsten();
    bad.gamma = -1.0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    CHECK_THROWS_AS(lib.add(bad), std::invalid_argument);
}

TEST_CASE("material JSON uses tabulated units and round-trips") {
    nlohmann::json doc = {
        {"titanium", {
            {"gamma_aJ_um3_K2", 97.0},
            {"sigma_ep_nW_um3_K5", 1.3},
            {"sigma_bulk_S_m", 7.8e6},
            {"mfp_bulk_m", 4.0e-9},
            {"n_free_m3", 5.0e28},
            {"v_fermi_m_s", 1.2e6},
        }},
    };
    MaterialLibrary lib = MaterialLibrary::with_builtins();
    lib.load_json(doc);
    const MaterialParams& ti = lib.get("titanium");
    // gamma in aJ um^-3 K^-2 is numerically equal to J m^-3 K^-2;
    // sigma_ep in nW um^-3 K^-5 is 1e9 W m^-3 K^-5.
    CHECK(ti.gamma == doctest::Approx(97.0).epsilon(1e-12));
    CHECK(ti.sigma_ep == doctest::Approx(1.3e9).epsilon(1e-12));
    CHECK(ti.sigma_bulk == doctest::Approx(7.8e6).epsilon(1e-12));

    nlohmann::json out = to_json(ti);
    CHECK(out["gamma_aJ_um3_K2"].get<double>() == doctest::Approx(97.0).epsilon(1e-12));
    CHECK(out["sigma_ep_nW_um3_K5"].get<double>() == doctest::Approx(1.3).epsilon(1e-12));

    // Unknown keys and non-positive values are rejected.
    nlohmann::json bad_key = doc;
    bad_key["titanium"]["unexpected"] = 1.0;
    MaterialLibrary lib2 = MaterialLibrary::with_builtins();
    CHECK_THROWS_AS(lib2.load_json(bad_key), DataError);

    nlohmann::json bad_val = doc;
    bad_val["titanium"]["mfp_bulk_m"] = 0.0;
    CHECK_THROWS_AS(lib2.load_json(bad_val), DataError);
}
