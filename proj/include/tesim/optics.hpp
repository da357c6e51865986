#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "tesim/errors.hpp"

namespace tesim::optics {

enum class Polarization { tm, te };
enum class Direction { a_to_b, b_to_a };

Polarization polarization_from_string(const std::string& s);
Direction direction_from_string(const std::string& s);

/// A quantity carried separately for the two quasi-polarized guided modes.
struct PolPair {
    double tm = 0.0;
    double te = 0.0;
    double get(Polarization p) const { return p == Polarization::tm ? tm : te; }
};

/// One element of the linear chip, in geometric order from facet A to facet B.
struct Segment {
    enum class Kind { waveguide, detector, grating };

    Kind kind = Kind::waveguide;
    double length = 0.0;           ///< m; waveguide and detector footprint
    PolPair alpha_abs;             ///< 1/m; detector absorption coefficient
    std::optional<PolPair> eta;    ///< measured efficiency, overrides alpha_abs
    double reflectivity = 0.0;     ///< grating power reflectivity at the operating wavelength

    static Segment waveguide(double length_m);
    static Segment detector_alpha(double length_m, PolPair alpha_abs_per_m);
    static Segment detector_eta(PolPair eta);
    static Segment grating(double reflectivity);
};

/// Serial chip description: propagation loss plus the ordered segment list.
struct ChipLayout {
    PolPair propagation_loss_db_per_cm;
    std::vector<Segment> segments;

    int detector_count() const;
    void validate() const;
    static ChipLayout from_json(const nlohmann::json& doc);
    nlohmann::json to_json() const;
};

/// Where every unit of launched probability ends up after one pass.
struct EfficiencyReport {
    std::vector<double> per_detector;        ///< layout order (A-side detector first)
    double combined_single_pass = 0.0;       ///< sum of per_detector
    double combined_lossless = 0.0;          ///< 1 - prod(1 - eta), propagation ignored
    double transmission_to_far_facet = 0.0;
    double propagation_loss_fraction = 0.0;
    double reflected_fraction = 0.0;         ///< sent back by gratings along the way
    std::optional<double> combined_double_pass;
};

/// Beer-Lambert absorption probability 1 - exp(-alpha * l).
double device_absorption(double alpha_abs_per_m, double length_m);

/// Power transmission 10^(-loss_db_per_cm * l_cm / 10) over a length in meters.
double propagation_transmission(double loss_db_per_cm, double length_m);

/// Efficiency of a detector segment for one polarization.
double detector_efficiency(const Segment& seg, Polarization pol);

/// Walk the chip once in the given direction, splitting probability between
/// detectors, propagation loss, grating reflection, and far-facet transmission.
EfficiencyReport array_efficiency(const ChipLayout& chip, Direction dir, Polarization pol);

/// Single pass plus one grating-reflected return pass. The chip must end with
/// a grating segment in the travel direction; its reflectivity is taken from
/// the explicit argument so off-resonance and on-resonance cases can share a
/// layout.
double double_pass_efficiency(const ChipLayout& chip, double grating_reflectivity,
                              Direction dir, Polarization pol);

/// Absorption-versus-length curve for a detector footprint sweep.
/// Lengths must be positive and strictly increasing.
std::vector<std::pair<double, double>> design_sweep(double alpha_abs_per_m,
                                                    const std::vector<double>& lengths_m);

} // namespace tesim::optics
