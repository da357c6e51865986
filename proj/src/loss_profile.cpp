#include "tesim/loss_profile.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <sstream>
#include <stdexcept>

#include "tesim/io.hpp"
#include "tesim/lm.hpp"

namespace tesim::loss {

namespace {

void check_windows(const std::vector<DetectorWindow>& windows, double length = -1.0) {
    for (std::size_t i = 0; i < windows.size(); ++i) {
        if (!(windows[i].end > windows[i].begin))
            throw std::invalid_argument("detector window must have positive width");
        if (i > 0 && windows[i].begin < windows[i - 1].end)
            throw std::invalid_argument("detector windows must be sorted and disjoint");
        if (length >= 0.0 && (windows[i].begin < 0.0 || windows[i].end > length))
            throw std::invalid_argument("detector window lies outside the chip");
    }
}

bool in_any_window(double x, const std::vector<DetectorWindow>& windows, double guard) {
    for (const auto& w : windows)
        if (x >= w.begin - guard && x <= w.end + guard)
            return true;
    return false;
}

// clear segment index: how many windows lie fully before x
int group_of(double x, const std::vector<DetectorWindow>& windows) {
    int g = 0;
    for (const auto& w : windows)
        if (w.end <= x)
            ++g;
    return g;
}

} // namespace

void ReflectometryTrace::validate() const {
    if (position.size() < 2)
        throw DataError("reflectometry trace needs at least two samples");
    if (forward.size() != position.size() || reverse.size() != position.size())
        throw DataError("reflectometry trace columns differ in length");
    for (std::size_t i = 0; i < position.size(); ++i) {
        if (i > 0 && !(position[i] > position[i - 1]))
            throw DataError("scan positions must be strictly increasing");
        if (!(forward[i] > 0.0) || !(reverse[i] > 0.0) || !std::isfinite(forward[i])
            || !std::isfinite(reverse[i]))
            throw DataError("reflectances must be positive and finite");
    }
}

std::vector<double> relative_loss_profile(const ReflectometryTrace& trace) {
    trace.validate();
    std::vector<double> prof(trace.position.size());
    for (std::size_t i = 0; i < prof.size(); ++i)
        prof[i] = 2.5 * std::log10(trace.forward[i] / trace.reverse[i]);
    return prof;
}

WaveguideLossFit fit_waveguide_loss(const std::vector<double>& position,
                                    const std::vector<double>& profile_db,
                                    const std::vector<DetectorWindow>& detectors, double guard) {
    if (position.size() != profile_db.size())
        throw DataError("profile and position lengths differ");
    if (guard < 0.0)
        throw std::invalid_argument("guard margin must be non-negative");
    check_windows(detectors);

    struct Acc {
        double sx = 0.0, sy = 0.0;
        int n = 0;
        double mx = 0.0, my = 0.0;
        double cxx = 0.0, cxy = 0.0;
    };
    std::map<int, Acc> groups;
    for (std::size_t i = 0; i < position.size(); ++i) {
        if (in_any_window(position[i], detectors, guard))
            continue;
        Acc& a = groups[group_of(position[i], detectors)];
        a.sx += position[i];
        a.sy += profile_db[i];
        ++a.n;
    }
    double num = 0.0, den = 0.0;
    int used = 0;
    for (auto& [g, a] : groups) {
        a.mx = a.sx / a.n;
        a.my = a.sy / a.n;
        used += a.n;
    }
    for (std::size_t i = 0; i < position.size(); ++i) {
        if (in_any_window(position[i], detectors, guard))
            continue;
        Acc& a = groups[group_of(position[i], detectors)];
        a.cxx += (position[i] - a.mx) * (position[i] - a.mx);
        a.cxy += (position[i] - a.mx) * (profile_db[i] - a.my);
    }
    for (const auto& [g, a] : groups) {
        num += a.cxy;
        den += a.cxx;
    }
    if (used < 2 || !(den > 0.0))
        throw DataError("not enough clear waveguide samples to fit a loss slope");

    WaveguideLossFit fit;
    const double slope = num / den;
    fit.attenuation_db_per_m = -slope;
    fit.n_points_used = used;
    for (const auto& [g, a] : groups)
        fit.group_intercepts_db.push_back(a.my - slope * a.mx);

    double ss = 0.0;
    for (std::size_t i = 0; i < position.size(); ++i) {
        if (in_any_window(position[i], detectors, guard))
            continue;
        const Acc& a = groups.at(group_of(position[i], detectors));
        double r = profile_db[i] - (a.my + slope * (position[i] - a.mx));
        ss += r * r;
    }
    fit.rms_residual_db = std::sqrt(ss / used);
    return fit;
}

std::vector<DetectorAbsorption> detector_absorption(const std::vector<double>& position,
                                                    const std::vector<double>& profile_db,
                                                    const std::vector<DetectorWindow>& detectors,
                                                    double attenuation_db_per_m, double guard) {
    if (position.size() != profile_db.size())
        throw DataError("profile and position lengths differ");
    check_windows(detectors);

    // clear-sample indices per segment, in position order
    std::map<int, std::vector<std::size_t>> segments;
    for (std::size_t i = 0; i < position.size(); ++i)
        if (!in_any_window(position[i], detectors, guard))
            segments[group_of(position[i], detectors)].push_back(i);

    auto side_mean = [&](const std::vector<std::size_t>& idx, bool tail_end, double& mx,
                         double& my) {
        const std::size_t take = std::min<std::size_t>(3, idx.size());
        mx = my = 0.0;
        for (std::size_t k = 0; k < take; ++k) {
            std::size_t i = tail_end ? idx[idx.size() - 1 - k] : idx[k];
            mx += position[i];
            my += profile_db[i];
        }
        mx /= double(take);
        my /= double(take);
    };

    std::vector<DetectorAbsorption> out;
    for (std::size_t w = 0; w < detectors.size(); ++w) {
        auto left = segments.find(int(w));
        auto right = segments.find(int(w) + 1);
        if (left == segments.end() || left->second.empty() || right == segments.end()
            || right->second.empty())
            throw DataError("no clear samples adjacent to a detector window");
        double xl, yl, xr, yr;
        side_mean(left->second, true, xl, yl);
        side_mean(right->second, false, xr, yr);
        DetectorAbsorption d;
        d.step_db = (yl - yr) - attenuation_db_per_m * (xr - xl);
        d.absorbed_fraction = 1.0 - std::pow(10.0, -d.step_db / 10.0);
        out.push_back(d);
    }
    return out;
}

void ReflectometryModel::validate() const {
    if (!(length > 0.0))
        throw std::invalid_argument("chip length must be positive");
    if (!(attenuation_db_per_m >= 0.0))
        throw std::invalid_argument("attenuation must be non-negative");
    if (coupling_a_db < 0.0 || coupling_b_db < 0.0)
        throw std::invalid_argument("coupling losses must be non-negative");
    if (roughness_db < 0.0)
        throw std::invalid_argument("roughness must be non-negative");
    if (detector_step_db.size() != detectors.size())
        throw std::invalid_argument("one absorption step per detector window required");
    for (double s : detector_step_db)
        if (!(s >= 0.0))
            throw std::invalid_argument("absorption steps must be non-negative");
    check_windows(detectors, length);
}

ReflectometryTrace simulate_reflectometry(const ReflectometryModel& model, int n_points,
                                          double noise_rel, std::uint64_t seed) {
    model.validate();
    if (n_points < 2)
        throw std::invalid_argument("a scan needs at least two points");
    if (noise_rel < 0.0 || noise_rel >= 1.0)
        throw std::invalid_argument("relative noise must lie in [0, 1)");

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, 1.0);

    auto one_way_db = [&](double x, bool from_a) {
        double d = from_a ? model.coupling_a_db + model.attenuation_db_per_m * x
                          : model.coupling_b_db + model.attenuation_db_per_m * (model.length - x);
        for (std::size_t i = 0; i < model.detectors.size(); ++i) {
            const auto& w = model.detectors[i];
            double overlap = std::clamp((x - w.begin) / (w.end - w.begin), 0.0, 1.0);
            d += model.detector_step_db[i] * (from_a ? overlap : 1.0 - overlap);
        }
        return d;
    };

    ReflectometryTrace t;
    for (int i = 0; i < n_points; ++i) {
        double x = model.length * double(i) / double(n_points - 1);
        double rho = std::pow(10.0, (model.backscatter_db + model.roughness_db * g(rng)) / 10.0);
        double nf = std::max(0.01, 1.0 + noise_rel * g(rng));
        double nr = std::max(0.01, 1.0 + noise_rel * g(rng));
        t.position.push_back(x);
        t.forward.push_back(rho * std::pow(10.0, -2.0 * one_way_db(x, true) / 10.0) * nf);
        t.reverse.push_back(rho * std::pow(10.0, -2.0 * one_way_db(x, false) / 10.0) * nr);
    }
    return t;
}

void ReflectionSpectrum::validate() const {
    if (wavelength.size() != reflectance.size())
        throw DataError("spectrum columns differ in length");
    if (wavelength.size() < 2)
        throw DataError("spectrum needs at least two samples");
    for (std::size_t i = 0; i < wavelength.size(); ++i) {
        if (i > 0 && !(wavelength[i] > wavelength[i - 1]))
            throw DataError("wavelengths must be strictly increasing");
        if (!(reflectance[i] >= 0.0) || !std::isfinite(reflectance[i]))
            throw DataError("reflectances must be non-negative and finite");
    }
}

GratingResonance fit_grating_resonance(const ReflectionSpectrum& spectrum) {
    spectrum.validate();
    const std::size_t n = spectrum.wavelength.size();
    if (n < 8)
        throw DataError("spectrum has too few samples for a resonance fit");
    const double lo = spectrum.wavelength.front();
    const double span = spectrum.wavelength.back() - lo;
    const double ymax = *std::max_element(spectrum.reflectance.begin(), spectrum.reflectance.end());
    if (!(ymax > 0.0))
        throw DataError("spectrum is identically zero");

    // work in scan-normalized coordinates so all fit parameters are O(1)
    std::vector<double> xi(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
        xi[i] = (spectrum.wavelength[i] - lo) / span;
        y[i] = spectrum.reflectance[i] / ymax;
    }

    std::vector<double> sorted = y;
    std::sort(sorted.begin(), sorted.end());
    const double med = sorted[n / 2];
    std::vector<double> dev(n);
    for (std::size_t i = 0; i < n; ++i)
        dev[i] = std::abs(y[i] - med);
    std::sort(dev.begin(), dev.end());
    const double sigma = std::max(1.4826 * dev[n / 2], 1e-12);

    const std::size_t imax =
        std::size_t(std::max_element(y.begin(), y.end()) - y.begin());
    const double peak0 = y[imax] - med;
    if (peak0 < 5.0 * sigma)
        throw DataError("no reflection peak stands above the background noise");

    const double dx = 1.0 / double(n - 1);
    int above_half = 0;
    for (double v : y)
        if (v - med > 0.5 * peak0)
            ++above_half;
    const double s0 =
        std::clamp(std::max(above_half, 2) * dx / 2.3548, dx, 1.0);

    Eigen::VectorXd theta(4);
    theta << med, peak0, xi[imax], s0;

    numerics::ResidualFn resid = [&](const Eigen::VectorXd& t) {
        Eigen::VectorXd r(n);
        const double b = t[0], p = t[1], c = t[2], s = t[3];
        for (std::size_t i = 0; i < n; ++i) {
            double d = xi[i] - c;
            r[Eigen::Index(i)] = b + p * std::exp(-d * d / (2.0 * s * s)) - y[i];
        }
        return r;
    };
    numerics::JacobianFn jac = [&](const Eigen::VectorXd& t) {
        Eigen::MatrixXd J(n, 4);
        const double p = t[1], c = t[2], s = t[3];
        for (std::size_t i = 0; i < n; ++i) {
            double d = xi[i] - c;
            double e = std::exp(-d * d / (2.0 * s * s));
            J(Eigen::Index(i), 0) = 1.0;
            J(Eigen::Index(i), 1) = e;
            J(Eigen::Index(i), 2) = p * e * d / (s * s);
            J(Eigen::Index(i), 3) = p * e * d * d / (s * s * s);
        }
        return J;
    };

    numerics::LmOptions opts;
    opts.max_iterations = 500;
    numerics::LmResult res = numerics::lm_fit(resid, jac, theta, opts);
    if (!res.converged)
        throw NumericalError("grating resonance fit did not converge");
    const double s_fit = std::abs(res.x[3]);
    if (!(res.x[1] > 0.0) || s_fit > 2.0)
        throw NumericalError("grating resonance fit collapsed instead of finding a peak");

    GratingResonance g;
    g.center_wavelength = lo + res.x[2] * span;
    g.fwhm = 2.0 * std::sqrt(2.0 * std::log(2.0)) * s_fit * span;
    g.peak_reflectance = res.x[1] * ymax;
    g.background = res.x[0] * ymax;
    g.rms_residual = std::sqrt(res.cost / double(n)) * ymax;
    return g;
}

ReflectometryTrace parse_reflectometry_csv(std::istream& in) {
    std::string line;
    if (!io::next_data_line(in, line)
        || io::split_csv_line(line)
               != std::vector<std::string>{"position_m", "forward_reflectance",
                                           "reverse_reflectance"})
        throw DataError("expected header position_m,forward_reflectance,reverse_reflectance");
    ReflectometryTrace t;
    while (io::next_data_line(in, line)) {
        auto cols = io::split_csv_line(line);
        if (cols.size() != 3)
            throw DataError("wrong column count in scan row: " + line);
        t.position.push_back(io::parse_number(cols[0]));
        t.forward.push_back(io::parse_number(cols[1]));
        t.reverse.push_back(io::parse_number(cols[2]));
    }
    t.validate();
    return t;
}

ReflectionSpectrum parse_spectrum_csv(std::istream& in) {
    std::string line;
    if (!io::next_data_line(in, line)
        || io::split_csv_line(line) != std::vector<std::string>{"wavelength_nm", "reflectance"})
        throw DataError("expected header wavelength_nm,reflectance");
    ReflectionSpectrum sp;
    while (io::next_data_line(in, line)) {
        auto cols = io::split_csv_line(line);
        if (cols.size() != 2)
            throw DataError("wrong column count in spectrum row: " + line);
        sp.wavelength.push_back(io::parse_number(cols[0]) * 1e-9);
        sp.reflectance.push_back(io::parse_number(cols[1]));
    }
    sp.validate();
    return sp;
}

} // namespace tesim::loss
