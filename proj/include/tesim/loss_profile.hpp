#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "tesim/errors.hpp"

namespace tesim::loss {

// Span along the waveguide covered by one detector, meters from facet A.
struct DetectorWindow {
    double begin = 0.0;
    double end = 0.0;
};

// Backscatter reflectance sampled along the chip, one scan per facet. Both
// scans share the position axis (meters from facet A); reflectances are
// linear power ratios.
struct ReflectometryTrace {
    std::vector<double> position;
    std::vector<double> forward;
    std::vector<double> reverse;

    void validate() const;
};

// Relative loss profile in dB, 2.5 log10(forward / reverse) per sample.
//
// The probe light passes the section between the facet and x twice, so the
// forward scan carries the one-way loss D_A(x) doubled and the reverse scan
// carries 2 D_B(x). The local backscatter strength is common to both and
// drops out of the ratio, leaving (up to a constant offset) exactly -D_A(x):
// the profile falls at the one-way dB attenuation rate and steps down by each
// detector's one-way absorption.
std::vector<double> relative_loss_profile(const ReflectometryTrace& trace);

struct WaveguideLossFit {
    double attenuation_db_per_m = 0.0; // one-way propagation loss
    // intercept of each clear segment between detector windows, facet A first
    std::vector<double> group_intercepts_db;
    double rms_residual_db = 0.0;
    int n_points_used = 0;
};

// Common-slope regression over the clear waveguide sections. Samples inside a
// detector window (plus guard margin on both sides) are excluded and each
// remaining segment gets its own intercept, so detector absorption steps
// cannot bias the slope.
WaveguideLossFit fit_waveguide_loss(const std::vector<double>& position,
                                    const std::vector<double>& profile_db,
                                    const std::vector<DetectorWindow>& detectors,
                                    double guard = 0.0);

struct DetectorAbsorption {
    double step_db = 0.0;          // one-way excess attenuation of the window
    double absorbed_fraction = 0.0; // 1 - 10^(-step/10)
};

// Profile drop across each window beyond what plain propagation explains,
// estimated from the nearest clear samples of the adjacent segments.
std::vector<DetectorAbsorption> detector_absorption(const std::vector<double>& position,
                                                    const std::vector<double>& profile_db,
                                                    const std::vector<DetectorWindow>& detectors,
                                                    double attenuation_db_per_m,
                                                    double guard = 0.0);

// Synthetic two-sided scan for end-to-end exercises: straight waveguide with
// absorbing windows, facet couplings, a rough backscatter floor shared by both
// directions, and independent multiplicative measurement noise per direction.
struct ReflectometryModel {
    double length = 0.0;               // m
    double attenuation_db_per_m = 0.0; // one-way
    double coupling_a_db = 0.0;        // extra fixed loss at facet A, dB
    double coupling_b_db = 0.0;
    double backscatter_db = -60.0; // mean backscatter reflectance level
    double roughness_db = 0.0;     // rms scatter of the backscatter level
    std::vector<DetectorWindow> detectors;
    std::vector<double> detector_step_db; // one-way dB per window

    void validate() const;
};

ReflectometryTrace simulate_reflectometry(const ReflectometryModel& model, int n_points,
                                          double noise_rel, std::uint64_t seed);

struct ReflectionSpectrum {
    std::vector<double> wavelength; // m, strictly increasing
    std::vector<double> reflectance;

    void validate() const;
};

struct GratingResonance {
    double center_wavelength = 0.0; // m
    double fwhm = 0.0;              // m, full width at half of the peak height
    double peak_reflectance = 0.0;  // linear, above background
    double background = 0.0;
    double rms_residual = 0.0;
};

// Gaussian-plus-constant fit of a grating reflection peak. Throws DataError
// when no peak stands clear of the background noise.
GratingResonance fit_grating_resonance(const ReflectionSpectrum& spectrum);

// CSV with header position_m,forward_reflectance,reverse_reflectance.
ReflectometryTrace parse_reflectometry_csv(std::istream& in);

// CSV with header wavelength_nm,reflectance; wavelengths converted to meters.
ReflectionSpectrum parse_spectrum_csv(std::istream& in);

} // namespace tesim::loss
