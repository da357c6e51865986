#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <vector>

#include "json.hpp"
#include "tesim/calibration.hpp"
#include "tesim/errors.hpp"
#include "tesim/thermal.hpp"

namespace tesim::photon {

// Pulsed coherent source: Poisson photon statistics per trigger.
struct SourceConfig {
    double mean_photons = 1.0;
    int pulses = 8192;
    double wavelength = 1550e-9; // m
    std::uint64_t seed = 1;

    void validate() const;
};

// Waveguide with detectors along it, as seen by a photon: input coupling,
// propagation segments between detector positions, one absorption chance per
// detector. Geometry and attenuation come from the calibration model; eta is
// indexed from the A facet regardless of launch direction.
struct ChipConfig {
    calibration::CalibrationModel model;
    std::vector<double> eta;
    double eta_a = 1.0;
    double eta_b = 1.0;

    void validate() const;
};

enum class Direction { forward, reverse };

// Fate of every photon of one laser pulse. entered counts photons that made
// it through the launch coupler; each of those is detected somewhere, lost
// to propagation, or transmitted past the last detector.
struct PulseCounts {
    std::vector<int> detected; // physical detector order, A side first
    int transmitted = 0;
    int lost = 0;
    int entered = 0;
};

// Per-pulse Monte Carlo of the source and the absorption chain. The routing
// probabilities are exactly the factors of the calibration forward model, so
// sample means converge on forward_model predictions. Pulse i draws from its
// own counter stream: results do not depend on evaluation order.
std::vector<PulseCounts> sample_detected_counts(const SourceConfig& source,
                                                const ChipConfig& chip, Direction direction);

// Synthetic readout of every detector for every pulse.
struct TraceEnsemble {
    double dt = 0.0;
    std::uint64_t seed = 0;
    std::uint64_t config_hash = 0;
    // [detector][pulse][sample], same shape everywhere
    std::vector<std::vector<std::vector<double>>> traces;

    void validate() const;
    // compact binary layout: "TESD", u32 version, u32 detectors, u32 traces,
    // f64 dt, u32 samples, u64 seed, u64 config hash, then a little-endian
    // float32 payload in detector-major order
    void write_binary(std::ostream& out) const;
    static TraceEnsemble read_binary(std::istream& in);
};

// Each trace is count x template plus a fresh colored-noise realization
// synthesized from the PSD (Hermitian spectrum, Gaussian quadratures; the DC
// and Nyquist bins carry no noise). noise_scale multiplies the noise
// amplitude; 0 gives clean traces.
TraceEnsemble synthesize_traces(const std::vector<PulseCounts>& counts,
                                const thermal::PulseTrace& pulse_template,
                                const thermal::NoiseSpectrum& noise, std::uint64_t seed,
                                double noise_scale = 1.0);

// Optional compression of many-photon pile-up, sample -> knee tanh(s/knee):
// linear well below the knee current, bounded by it above, the way a sensor
// driven out of its transition stops responding. Synthesis stays linear
// unless a caller applies this afterwards.
void apply_soft_saturation(TraceEnsemble& ensemble, double knee_current);

struct CountHistogram {
    std::vector<std::map<int, int>> counts;     // per detector: photon number -> pulses
    std::vector<std::vector<int>> assigned;     // per detector: per-pulse assignment
    std::vector<double> mean;                   // derived per-detector mean
    int pulses = 0;
};

// Optimal-filter amplitude estimate of every trace against the template,
// rounded to the nearest non-negative photon number.
CountHistogram discriminate_photon_number(const TraceEnsemble& ensemble,
                                          const thermal::PulseTrace& pulse_template,
                                          const thermal::NoiseSpectrum& noise);

// Histogram of the true sampled counts, same shape as the discriminator's.
CountHistogram histogram_from_counts(const std::vector<PulseCounts>& counts);

nlohmann::json histogram_to_json(const CountHistogram& hist);

// every factor-th sample; keeps the first sample, scales dt
thermal::PulseTrace decimate_trace(const thermal::PulseTrace& trace, int factor);

} // namespace tesim::photon
