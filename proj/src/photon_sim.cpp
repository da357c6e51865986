#include "tesim/photon_sim.hpp"

#include <fftw3.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <istream>
#include <mutex>
#include <ostream>
#include <stdexcept>

#include "fft_lock.hpp"
#include "tesim/rng.hpp"

static_assert(std::endian::native == std::endian::little,
              "binary trace layout assumes a little-endian host");

namespace tesim::photon {

namespace {

// stream-id layout: top byte picks the consumer, so routing and noise draws
// never collide for the same pulse
constexpr std::uint64_t kRoutingStream = 0;
constexpr std::uint64_t kNoiseStream = 1;

std::uint64_t stream_id(std::uint64_t kind, std::uint64_t detector, std::uint64_t pulse) {
    return (kind << 56) | (detector << 40) | pulse;
}

// inversion sampling; fine for the semiclassical means this model serves
int draw_poisson(rng::CounterRng& gen, double lambda) {
    if (lambda <= 0.0)
        return 0;
    double u = gen.uniform();
    double p = std::exp(-lambda);
    double cum = p;
    int k = 0;
    const int cap = int(lambda + 40.0 * std::sqrt(lambda) + 50.0);
    while (u >= cum && k < cap) {
        ++k;
        p *= lambda / k;
        cum += p;
    }
    return k;
}

void write_u32(std::ostream& out, std::uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

std::uint32_t read_u32(std::istream& in) {
    std::uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!in)
        throw DataError("trace file ended early");
    return v;
}

} // namespace

void SourceConfig::validate() const {
    if (!std::isfinite(mean_photons) || mean_photons < 0.0 || mean_photons > 100.0)
        throw std::invalid_argument("mean photon number must lie in [0, 100]");
    if (pulses < 1)
        throw std::invalid_argument("need at least one pulse");
    if (!(wavelength > 0.0) || !std::isfinite(wavelength))
        throw std::invalid_argument("wavelength must be positive");
}

void ChipConfig::validate() const {
    model.validate();
    if (int(eta.size()) != model.n_detectors)
        throw std::invalid_argument("efficiency vector length does not match detector count");
    for (double e : eta)
        if (!(e >= 0.0) || !(e <= 1.0))
            throw std::invalid_argument("detector efficiencies must lie in [0, 1]");
    if (!(eta_a > 0.0) || !(eta_a <= 1.0) || !(eta_b > 0.0) || !(eta_b <= 1.0))
        throw std::invalid_argument("facet couplings must lie in (0, 1]");
}

std::vector<PulseCounts> sample_detected_counts(const SourceConfig& source,
                                                const ChipConfig& chip, Direction direction) {
    source.validate();
    chip.validate();
    const int n = chip.model.n_detectors;
    const double coupling = direction == Direction::forward ? chip.eta_a : chip.eta_b;
    const double p_l1 = std::exp(-chip.model.alpha * chip.model.l1);
    const double p_l2 = std::exp(-chip.model.alpha * chip.model.l2);

    std::vector<PulseCounts> out(std::size_t(source.pulses));
    for (int pulse = 0; pulse < source.pulses; ++pulse) {
        rng::CounterRng gen(source.seed, stream_id(kRoutingStream, 0, std::uint64_t(pulse)));
        PulseCounts& pc = out[std::size_t(pulse)];
        pc.detected.assign(std::size_t(n), 0);

        const int launched = draw_poisson(gen, source.mean_photons);
        for (int ph = 0; ph < launched; ++ph) {
            if (gen.uniform() >= coupling)
                continue; // never entered the chip
            pc.entered += 1;
            if (gen.uniform() >= p_l1) {
                pc.lost += 1;
                continue;
            }
            bool alive = true;
            for (int step = 0; step < n && alive; ++step) {
                const int det = direction == Direction::forward ? step : n - 1 - step;
                if (gen.uniform() < chip.eta[std::size_t(det)]) {
                    pc.detected[std::size_t(det)] += 1;
                    alive = false;
                } else if (step + 1 < n && gen.uniform() >= p_l2) {
                    pc.lost += 1;
                    alive = false;
                }
            }
            if (alive)
                pc.transmitted += 1;
        }
    }
    return out;
}

void TraceEnsemble::validate() const {
    if (!(dt > 0.0) || !std::isfinite(dt))
        throw DataError("trace ensemble needs a positive sample interval");
    if (traces.empty())
        throw DataError("trace ensemble holds no detectors");
    const std::size_t pulses = traces.front().size();
    for (const auto& det : traces) {
        if (det.size() != pulses)
            throw DataError("detectors disagree on the trace count");
        for (const auto& tr : det)
            if (tr.size() != traces.front().front().size())
                throw DataError("traces disagree on the sample count");
    }
}

TraceEnsemble synthesize_traces(const std::vector<PulseCounts>& counts,
                                const thermal::PulseTrace& pulse_template,
                                const thermal::NoiseSpectrum& noise, std::uint64_t seed,
                                double noise_scale) {
    if (counts.empty())
        throw std::invalid_argument("no pulses to synthesize");
    if (!(pulse_template.dt > 0.0) || pulse_template.samples.size() < 4)
        throw std::invalid_argument("pulse template is unusable");
    if (!(noise_scale >= 0.0) || !std::isfinite(noise_scale))
        throw std::invalid_argument("noise scale must be non-negative");
    noise.validate();
    const std::size_t n_det = counts.front().detected.size();
    if (n_det == 0)
        throw std::invalid_argument("pulse counts carry no detectors");
    for (const auto& pc : counts)
        if (pc.detected.size() != n_det)
            throw std::invalid_argument("pulse counts disagree on the detector count");

    const int n = int(pulse_template.samples.size());
    const int n_bins = n / 2 + 1;
    // DC always carries no noise, and for even n neither does Nyquist
    const int k_top = n % 2 == 0 ? n_bins - 1 : n_bins;
    const double df = 1.0 / (n * pulse_template.dt);

    // per-bin noise amplitude for one Gaussian quadrature of the Hermitian
    // spectrum; the unnormalized inverse transform then reproduces the PSD
    std::vector<double> amp(std::size_t(n_bins), 0.0);
    for (int k = 1; k < k_top; ++k)
        amp[std::size_t(k)] = noise_scale * std::sqrt(noise.at(k * df) * df) / 2.0;

    TraceEnsemble ens;
    ens.dt = pulse_template.dt;
    ens.seed = seed;
    ens.traces.assign(n_det, {});

    std::vector<double> spec(std::size_t(2 * n_bins), 0.0);
    std::vector<double> wave(static_cast<std::size_t>(n));
    fftw_plan plan;
    {
        std::lock_guard<std::mutex> lock(detail::fftw_plan_mutex());
        plan = fftw_plan_dft_c2r_1d(n, reinterpret_cast<fftw_complex*>(spec.data()),
                                    wave.data(), FFTW_ESTIMATE);
    }
    if (!plan)
        throw NumericalError("FFT planning failed");

    for (std::size_t det = 0; det < n_det; ++det) {
        auto& per_det = ens.traces[det];
        per_det.reserve(counts.size());
        for (std::size_t pulse = 0; pulse < counts.size(); ++pulse) {
            const int n_photons = counts[pulse].detected[det];
            std::vector<double> trace(std::size_t(n), 0.0);
            if (n_photons != 0)
                for (int i = 0; i < n; ++i)
                    trace[std::size_t(i)] =
                        n_photons * pulse_template.samples[std::size_t(i)];
            if (noise_scale > 0.0) {
                rng::CounterRng gen(seed, stream_id(kNoiseStream, det, pulse));
                std::fill(spec.begin(), spec.end(), 0.0);
                for (int k = 1; k < k_top; ++k) {
                    spec[std::size_t(2 * k)] = amp[std::size_t(k)] * gen.gaussian();
                    spec[std::size_t(2 * k + 1)] = amp[std::size_t(k)] * gen.gaussian();
                }
                fftw_execute(plan);
                for (int i = 0; i < n; ++i)
                    trace[std::size_t(i)] += wave[std::size_t(i)];
            }
            per_det.push_back(std::move(trace));
        }
    }

    {
        std::lock_guard<std::mutex> lock(detail::fftw_plan_mutex());
        fftw_destroy_plan(plan);
    }
    return ens;
}

void apply_soft_saturation(TraceEnsemble& ensemble, double knee_current) {
    if (!std::isfinite(knee_current) || !(knee_current > 0.0))
        throw std::invalid_argument("saturation knee must be a positive current");
    ensemble.validate();
    for (auto& detector : ensemble.traces)
        for (auto& trace : detector)
            for (double& s : trace)
                s = knee_current * std::tanh(s / knee_current);
}

CountHistogram discriminate_photon_number(const TraceEnsemble& ensemble,
                                          const thermal::PulseTrace& pulse_template,
                                          const thermal::NoiseSpectrum& noise) {
    ensemble.validate();
    noise.validate();
    if (!(pulse_template.dt > 0.0) || pulse_template.samples.empty())
        throw std::invalid_argument("pulse template is unusable");
    if (std::abs(pulse_template.dt - ensemble.dt) > 1e-12 * ensemble.dt)
        throw DataError("template and ensemble sample intervals disagree");
    const int n = int(ensemble.traces.front().front().size());
    if (int(pulse_template.samples.size()) != n)
        throw DataError("template and ensemble sample counts disagree");

    const int n_bins = n / 2 + 1;
    const double df = 1.0 / (n * ensemble.dt);

    std::vector<double> in(static_cast<std::size_t>(n));
    std::vector<double> spec(std::size_t(2 * n_bins));
    fftw_plan plan;
    {
        std::lock_guard<std::mutex> lock(detail::fftw_plan_mutex());
        plan = fftw_plan_dft_r2c_1d(n, in.data(), reinterpret_cast<fftw_complex*>(spec.data()),
                                    FFTW_ESTIMATE);
    }
    if (!plan)
        throw NumericalError("FFT planning failed");

    std::copy(pulse_template.samples.begin(), pulse_template.samples.end(), in.begin());
    fftw_execute(plan);
    std::vector<double> t_re(static_cast<std::size_t>(n_bins)),
        t_im(static_cast<std::size_t>(n_bins)), inv_psd(static_cast<std::size_t>(n_bins));
    double denom = 0.0;
    for (int k = 0; k < n_bins; ++k) {
        t_re[std::size_t(k)] = spec[std::size_t(2 * k)];
        t_im[std::size_t(k)] = spec[std::size_t(2 * k + 1)];
        inv_psd[std::size_t(k)] = 1.0 / noise.at(k * df);
        denom += (t_re[std::size_t(k)] * t_re[std::size_t(k)]
                  + t_im[std::size_t(k)] * t_im[std::size_t(k)])
                 * inv_psd[std::size_t(k)];
    }
    if (!(denom > 0.0))
        throw DataError("pulse template is identically zero");

    CountHistogram hist;
    hist.pulses = int(ensemble.traces.front().size());
    hist.counts.resize(ensemble.traces.size());
    hist.assigned.resize(ensemble.traces.size());
    hist.mean.assign(ensemble.traces.size(), 0.0);

    for (std::size_t det = 0; det < ensemble.traces.size(); ++det) {
        hist.assigned[det].reserve(ensemble.traces[det].size());
        for (const auto& trace : ensemble.traces[det]) {
            std::copy(trace.begin(), trace.end(), in.begin());
            fftw_execute(plan);
            double score = 0.0;
            for (int k = 0; k < n_bins; ++k)
                score += (t_re[std::size_t(k)] * spec[std::size_t(2 * k)]
                          + t_im[std::size_t(k)] * spec[std::size_t(2 * k + 1)])
                         * inv_psd[std::size_t(k)];
            int assigned = std::max(0, int(std::lround(score / denom)));
            hist.assigned[det].push_back(assigned);
            hist.counts[det][assigned] += 1;
            hist.mean[det] += assigned;
        }
        hist.mean[det] /= double(hist.pulses);
    }

    {
        std::lock_guard<std::mutex> lock(detail::fftw_plan_mutex());
        fftw_destroy_plan(plan);
    }
    return hist;
}

CountHistogram histogram_from_counts(const std::vector<PulseCounts>& counts) {
    if (counts.empty())
        throw std::invalid_argument("no pulses to histogram");
    const std::size_t n_det = counts.front().detected.size();
    CountHistogram hist;
    hist.pulses = int(counts.size());
    hist.counts.resize(n_det);
    hist.assigned.resize(n_det);
    hist.mean.assign(n_det, 0.0);
    for (std::size_t det = 0; det < n_det; ++det) {
        for (const auto& pc : counts) {
            if (pc.detected.size() != n_det)
                throw std::invalid_argument("pulse counts disagree on the detector count");
            int c = pc.detected[det];
            hist.assigned[det].push_back(c);
            hist.counts[det][c] += 1;
            hist.mean[det] += c;
        }
        hist.mean[det] /= double(hist.pulses);
    }
    return hist;
}

nlohmann::json histogram_to_json(const CountHistogram& hist) {
    nlohmann::json detectors = nlohmann::json::array();
    for (std::size_t det = 0; det < hist.counts.size(); ++det) {
        nlohmann::json occurrences = nlohmann::json::object();
        for (const auto& [n, c] : hist.counts[det])
            occurrences[std::to_string(n)] = c;
        detectors.push_back({{"detector", det + 1},
                             {"mean_photons", hist.mean[det]},
                             {"occurrences", occurrences}});
    }
    return nlohmann::json{{"pulses", hist.pulses}, {"detectors", detectors}};
}

thermal::PulseTrace decimate_trace(const thermal::PulseTrace& trace, int factor) {
    if (factor < 1 || std::size_t(factor) > trace.samples.size())
        throw std::invalid_argument("decimation factor must lie within the trace length");
    thermal::PulseTrace out;
    out.dt = trace.dt * factor;
    out.x_impact = trace.x_impact;
    out.samples.reserve(trace.samples.size() / std::size_t(factor) + 1);
    for (std::size_t i = 0; i < trace.samples.size(); i += std::size_t(factor))
        out.samples.push_back(trace.samples[i]);
    return out;
}

void TraceEnsemble::write_binary(std::ostream& out) const {
    validate();
    out.write("TESD", 4);
    write_u32(out, 1);
    write_u32(out, std::uint32_t(traces.size()));
    write_u32(out, std::uint32_t(traces.front().size()));
    out.write(reinterpret_cast<const char*>(&dt), sizeof dt);
    write_u32(out, std::uint32_t(traces.front().front().size()));
    out.write(reinterpret_cast<const char*>(&seed), sizeof seed);
    out.write(reinterpret_cast<const char*>(&config_hash), sizeof config_hash);
    std::vector<float> row;
    for (const auto& det : traces)
        for (const auto& trace : det) {
            row.assign(trace.begin(), trace.end());
            out.write(reinterpret_cast<const char*>(row.data()),
                      std::streamsize(row.size() * sizeof(float)));
        }
    if (!out)
        throw DataError("trace file write failed");
}

TraceEnsemble TraceEnsemble::read_binary(std::istream& in) {
    char magic[4] = {};
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "TESD", 4) != 0)
        throw DataError("not a trace ensemble file");
    if (read_u32(in) != 1)
        throw DataError("unsupported trace file version");
    const std::uint32_t n_det = read_u32(in);
    const std::uint32_t n_traces = read_u32(in);
    TraceEnsemble ens;
    in.read(reinterpret_cast<char*>(&ens.dt), sizeof ens.dt);
    const std::uint32_t n_samples = read_u32(in);
    in.read(reinterpret_cast<char*>(&ens.seed), sizeof ens.seed);
    in.read(reinterpret_cast<char*>(&ens.config_hash), sizeof ens.config_hash);
    if (!in)
        throw DataError("trace file ended early");
    if (n_det == 0 || n_det > 1024 || n_traces == 0 || n_samples == 0
        || !(ens.dt > 0.0) || double(n_det) * n_traces * n_samples > 2e9)
        throw DataError("trace file header is implausible");

    ens.traces.assign(n_det, {});
    std::vector<float> row(n_samples);
    for (std::uint32_t det = 0; det < n_det; ++det) {
        ens.traces[det].reserve(n_traces);
        for (std::uint32_t t = 0; t < n_traces; ++t) {
            in.read(reinterpret_cast<char*>(row.data()),
                    std::streamsize(row.size() * sizeof(float)));
            if (!in)
                throw DataError("trace file ended early");
            ens.traces[det].emplace_back(row.begin(), row.end());
        }
    }
    return ens;
}

} // namespace tesim::photon
