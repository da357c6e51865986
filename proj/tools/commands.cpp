#include "commands.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <thread>
#include <vector>

#include "tesim/calibration.hpp"
#include "tesim/constants.hpp"
#include "tesim/errors.hpp"
#include "tesim/io.hpp"
#include "tesim/loss_profile.hpp"
#include "tesim/materials.hpp"
#include "tesim/optics.hpp"
#include "tesim/photon_sim.hpp"
#include "tesim/thermal.hpp"

namespace tesim::cli {

namespace {

using nlohmann::json;

// Anything wrong inside the config document is a configuration error, no
// matter which layer noticed it first.
template <class F>
auto parse_phase(F&& f) -> decltype(f()) {
    try {
        return f();
    } catch (const ConfigError&) {
        throw;
    } catch (const json::exception& e) {
        throw ConfigError(e.what());
    } catch (const DataError& e) {
        throw ConfigError(e.what());
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
}

double take_number(json& obj, const char* key, double fallback) {
    if (!obj.contains(key))
        return fallback;
    double v = obj.at(key).get<double>();
    obj.erase(key);
    return v;
}

int take_int(json& obj, const char* key, int fallback) {
    if (!obj.contains(key))
        return fallback;
    int v = obj.at(key).get<int>();
    obj.erase(key);
    return v;
}

std::string take_string(json& obj, const char* key, const std::string& fallback) {
    if (!obj.contains(key))
        return fallback;
    std::string v = obj.at(key).get<std::string>();
    obj.erase(key);
    return v;
}

json take_object(json& obj, const char* key) {
    if (!obj.contains(key))
        return json::object();
    json v = obj.at(key);
    if (!v.is_object())
        throw ConfigError(std::string(key) + " must be a JSON object");
    obj.erase(key);
    return v;
}

void finish(const json& obj, const char* what) {
    for (const auto& [key, value] : obj.items()) {
        (void)value;
        throw ConfigError(std::string(what) + ": unknown key '" + key + "'");
    }
}

std::uint64_t resolve_seed(json& cfg, const CommonOptions& opts) {
    std::uint64_t seed = 1;
    if (cfg.contains("seed")) {
        seed = cfg.at("seed").get<std::uint64_t>();
        cfg.erase("seed");
    }
    return opts.seed_given ? opts.seed : seed;
}

std::ofstream open_output(const std::filesystem::path& dir, const std::string& name) {
    std::filesystem::path path = dir / name;
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw DataError("cannot write " + path.string());
    return out;
}

std::filesystem::path ensure_out_dir(const CommonOptions& opts) {
    std::filesystem::path dir(opts.out_dir.empty() ? "." : opts.out_dir);
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec)
        throw ConfigError("cannot create output directory " + dir.string());
    return dir;
}

// Index-claiming worker pool. Results must be written into preallocated
// slots; the first exception wins after all workers drain.
void parallel_for(int n, int threads, const std::function<void(int)>& work) {
    threads = std::min(threads, n);
    if (threads <= 1) {
        for (int i = 0; i < n; ++i)
            work(i);
        return;
    }
    std::atomic<int> next{0};
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(threads));
    std::vector<std::thread> pool;
    pool.reserve(std::size_t(threads));
    for (int t = 0; t < threads; ++t)
        pool.emplace_back([&, t] {
            try {
                for (int i = next++; i < n; i = next++)
                    work(i);
            } catch (...) {
                errors[std::size_t(t)] = std::current_exception();
            }
        });
    for (auto& th : pool)
        th.join();
    for (auto& e : errors)
        if (e)
            std::rethrow_exception(e);
}

calibration::CalibrationModel model_from_config(json mj, double default_alpha) {
    calibration::CalibrationModel model;
    model.n_detectors = take_int(mj, "n_detectors", 3);
    model.alpha = take_number(mj, "alpha_per_m", default_alpha);
    model.l1 = take_number(mj, "l1_mm", 5.0) * 1e-3;
    model.l2 = take_number(mj, "l2_mm", 3.5) * 1e-3;
    model.n_in = take_number(mj, "n_in", 1.0);
    finish(mj, "model");
    model.validate();
    return model;
}

json model_to_json(const calibration::CalibrationModel& model) {
    return json{{"n_detectors", model.n_detectors},
                {"alpha_per_m", model.alpha},
                {"l1_mm", model.l1 * 1e3},
                {"l2_mm", model.l2 * 1e3},
                {"n_in", model.n_in}};
}

// natural attenuation of the measured 0.947 dB/cm TM propagation loss
constexpr double kDefaultAlphaPerM = 21.805;

} // namespace

void cmd_materials(const json& config, const CommonOptions& opts) {
    struct Row {
        materials::MaterialParams params;
        double thickness = 0.0;
    };
    std::vector<Row> rows;
    double temperature = 0.0;
    json effective;
    std::uint64_t seed = 0;

    parse_phase([&] {
        json cfg = config;
        seed = resolve_seed(cfg, opts);
        temperature = take_number(cfg, "temperature_mk", 100.0) * 1e-3;
        if (!(temperature > 0.0))
            throw ConfigError("temperature_mk must be positive");

        auto lib = materials::MaterialLibrary::with_builtins();
        json custom = take_object(cfg, "materials");
        lib.load_json(custom);

        json entries = json::array({{{"material", "tungsten"}, {"thickness_nm", 40.0}},
                                    {{"material", "gold"}, {"thickness_nm", 80.0}}});
        if (cfg.contains("entries")) {
            entries = cfg.at("entries");
            cfg.erase("entries");
            if (!entries.is_array() || entries.empty())
                throw ConfigError("entries must be a non-empty array");
        }
        for (json entry : entries) {
            Row row;
            row.params = lib.get(take_string(entry, "material", ""));
            row.thickness = take_number(entry, "thickness_nm", 0.0) * 1e-9;
            if (!(row.thickness > 0.0))
                throw ConfigError("each entry needs a positive thickness_nm");
            finish(entry, "entry");
            rows.push_back(row);
        }
        finish(cfg, "materials config");

        json canonical_entries = json::array();
        for (const Row& r : rows)
            canonical_entries.push_back(
                {{"material", r.params.name}, {"thickness_nm", r.thickness * 1e9}});
        effective = {{"temperature_mk", temperature * 1e3},
                     {"entries", canonical_entries},
                     {"materials", custom},
                     {"seed", seed}};
        return 0;
    });

    io::Provenance prov{"materials", io::config_hash(effective), seed};
    auto dir = ensure_out_dir(opts);
    auto out = open_output(dir, "materials.csv");
    io::write_provenance_comments(out, prov);
    out << "material,thickness_nm,temperature_mk,gamma_J_m3_K2,sigma_ep_W_m3_K5,"
           "sigma_bulk_S_m,mfp_bulk_nm,n_free_m3,v_fermi_m_s,sigma_eff_S_m,mfp_eff_nm,"
           "kappa_W_m_K\n";
    for (const Row& r : rows) {
        const auto& m = r.params;
        out << m.name << ',' << io::format_double(r.thickness * 1e9) << ','
            << io::format_double(temperature * 1e3) << ',' << io::format_double(m.gamma) << ','
            << io::format_double(m.sigma_ep) << ',' << io::format_double(m.sigma_bulk) << ','
            << io::format_double(m.mfp_bulk * 1e9) << ',' << io::format_double(m.n_free) << ','
            << io::format_double(m.v_fermi) << ','
            << io::format_double(materials::effective_conductivity(m, r.thickness)) << ','
            << io::format_double(materials::effective_mfp(m, r.thickness) * 1e9) << ','
            << io::format_double(materials::thermal_conductivity(m, r.thickness, temperature))
            << '\n';
    }
}

void cmd_pulse(const json& config, const CommonOptions& opts) {
    thermal::DetectorDesign design;
    std::vector<double> impacts;
    double duration = 0.0, dt = 0.0, dx = 0.0, energy = 0.0;
    json effective;
    std::uint64_t seed = 0;

    parse_phase([&] {
        json cfg = config;
        seed = resolve_seed(cfg, opts);
        if (cfg.contains("design")) {
            design = thermal::DetectorDesign::from_json(cfg.at("design"));
            cfg.erase("design");
        }
        if (cfg.contains("impact_points_um")) {
            impacts = cfg.at("impact_points_um").get<std::vector<double>>();
            cfg.erase("impact_points_um");
        } else {
            for (int i = 0; i <= 10; ++i)
                impacts.push_back(10.0 * i);
        }
        duration = take_number(cfg, "duration_us", 200.0) * 1e-6;
        dt = take_number(cfg, "dt_ns", 5.0) * 1e-9;
        dx = take_number(cfg, "dx_um", 1.0) * 1e-6;
        double wavelength = take_number(cfg, "wavelength_nm", 1550.0) * 1e-9;
        finish(cfg, "pulse config");

        if (impacts.empty())
            throw ConfigError("impact_points_um must not be empty");
        const double edge = (design.tes_side / 2.0 + design.tail_length) * 1e6;
        for (double x : impacts)
            if (!std::isfinite(x) || std::abs(x) > edge * (1.0 + 1e-12))
                throw ConfigError("impact point " + io::format_double(x)
                                  + " um lies outside the absorber (half extent "
                                  + io::format_double(edge) + " um)");
        if (!(duration > 0.0) || !(dt > 0.0) || !(dx > 0.0) || !(wavelength > 0.0))
            throw ConfigError("duration_us, dt_ns, dx_um, wavelength_nm must be positive");
        energy = photon_energy(wavelength);

        effective = {{"design", design.to_json()},   {"impact_points_um", impacts},
                     {"duration_us", duration * 1e6}, {"dt_ns", dt * 1e9},
                     {"dx_um", dx * 1e6},             {"wavelength_nm", wavelength * 1e9},
                     {"seed", seed}};
        return 0;
    });

    std::vector<thermal::PulseTrace> traces(impacts.size());
    parallel_for(int(impacts.size()), opts.threads, [&](int i) {
        thermal::Simulator sim(design, dx, dt);
        traces[std::size_t(i)] = sim.run_pulse(impacts[std::size_t(i)] * 1e-6, energy, duration);
    });

    io::Provenance prov{"pulse", io::config_hash(effective), seed};
    auto dir = ensure_out_dir(opts);
    auto summary = open_output(dir, "pulse_summary.csv");
    io::write_provenance_comments(summary, prov);
    summary << "index,x_impact_um,peak_A,area_A_s,samples,file\n";
    for (std::size_t i = 0; i < traces.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "pulse_%02zu.csv", i);
        summary << i << ',' << io::format_double(impacts[i]) << ','
                << io::format_double(traces[i].peak()) << ','
                << io::format_double(traces[i].area()) << ',' << traces[i].samples.size() << ','
                << name << '\n';
        auto out = open_output(dir, name);
        io::write_provenance_comments(out, prov);
        out << "# x_impact_um: " << io::format_double(impacts[i]) << '\n';
        thermal::write_pulse_csv(out, traces[i]);
    }
}

void cmd_sweep(const json& config, const CommonOptions& opts) {
    thermal::DetectorDesign base;
    std::vector<double> lengths;
    std::vector<thermal::DetectorDesign> designs;
    double alpha_tm = 0.0, alpha_te = 0.0, e_photon = 0.0;
    thermal::ResolutionOptions ropts;
    thermal::NoiseSpectrum noise;
    json effective;
    std::uint64_t seed = 0;

    parse_phase([&] {
        json cfg = config;
        seed = resolve_seed(cfg, opts);
        if (cfg.contains("design")) {
            base = thermal::DetectorDesign::from_json(cfg.at("design"));
            cfg.erase("design");
        }
        lengths = {60.0, 110.0, 210.0, 310.0};
        if (cfg.contains("lengths_um")) {
            lengths = cfg.at("lengths_um").get<std::vector<double>>();
            cfg.erase("lengths_um");
        }
        alpha_tm = take_number(cfg, "alpha_tm_per_cm", 32.6) * 1e2;
        alpha_te = take_number(cfg, "alpha_te_per_cm", 2.9) * 1e2;
        double level = take_number(cfg, "noise_white_a2_hz", 1e-22);
        double wavelength = take_number(cfg, "wavelength_nm", 1550.0) * 1e-9;
        ropts.duration = take_number(cfg, "duration_us", 200.0) * 1e-6;
        ropts.dt = take_number(cfg, "dt_ns", 5.0) * 1e-9;
        ropts.dx = take_number(cfg, "dx_um", 1.0) * 1e-6;
        ropts.side_positions = take_int(cfg, "side_positions", 8);
        finish(cfg, "sweep config");

        if (lengths.empty())
            throw ConfigError("lengths_um must not be empty");
        if (!(wavelength > 0.0))
            throw ConfigError("wavelength_nm must be positive");
        e_photon = photon_energy(wavelength);
        ropts.photon_energy = e_photon;
        ropts.absorption_alpha = alpha_tm;
        noise = thermal::NoiseSpectrum::white(level);
        for (double length_um : lengths) {
            double tail = (length_um * 1e-6 - base.tes_side) / 2.0;
            if (!(tail > 0.0))
                throw ConfigError("device length " + io::format_double(length_um)
                                  + " um leaves no room for absorbers beside the sensor");
            thermal::DetectorDesign d = base;
            d.tail_length = tail;
            d.validate();
            designs.push_back(d);
        }

        effective = {{"design", base.to_json()},
                     {"lengths_um", lengths},
                     {"alpha_tm_per_cm", alpha_tm * 1e-2},
                     {"alpha_te_per_cm", alpha_te * 1e-2},
                     {"noise_white_a2_hz", level},
                     {"wavelength_nm", wavelength * 1e9},
                     {"duration_us", ropts.duration * 1e6},
                     {"dt_ns", ropts.dt * 1e9},
                     {"dx_um", ropts.dx * 1e6},
                     {"side_positions", ropts.side_positions},
                     {"seed", seed}};
        return 0;
    });

    std::vector<double> de(lengths.size());
    parallel_for(int(lengths.size()), opts.threads, [&](int i) {
        de[std::size_t(i)] = thermal::energy_resolution(designs[std::size_t(i)], noise, ropts);
    });

    io::Provenance prov{"sweep", io::config_hash(effective), seed};
    auto dir = ensure_out_dir(opts);
    auto out = open_output(dir, "sweep.csv");
    io::write_provenance_comments(out, prov);
    out << "length_um,tail_length_um,absorption_tm,absorption_te,de_fwhm_J,de_fwhm_photons\n";
    for (std::size_t i = 0; i < lengths.size(); ++i) {
        double l = lengths[i] * 1e-6;
        out << io::format_double(lengths[i]) << ','
            << io::format_double(designs[i].tail_length * 1e6) << ','
            << io::format_double(optics::device_absorption(alpha_tm, l)) << ','
            << io::format_double(optics::device_absorption(alpha_te, l)) << ','
            << io::format_double(de[i]) << ',' << io::format_double(de[i] / e_photon) << '\n';
    }
}

void cmd_calibrate(const json& config, const std::string& measurements_path,
                   const CommonOptions& opts) {
    calibration::CalibrationModel model;
    calibration::SolveOptions sopts;
    int mc_repeats = 0;
    json effective;
    std::uint64_t seed = 0;

    parse_phase([&] {
        json cfg = config;
        seed = resolve_seed(cfg, opts);
        model = model_from_config(take_object(cfg, "model"), kDefaultAlphaPerM);
        sopts.starts = take_int(cfg, "starts", 16);
        sopts.seed = seed;
        mc_repeats = take_int(cfg, "mc_repeats", 0);
        finish(cfg, "calibrate config");
        if (sopts.starts < 1)
            throw ConfigError("starts must be at least 1");
        if (mc_repeats < 0 || mc_repeats == 1)
            throw ConfigError("mc_repeats must be 0 or at least 2");
        effective = {{"model", model_to_json(model)},
                     {"starts", sopts.starts},
                     {"mc_repeats", mc_repeats},
                     {"seed", seed}};
        return 0;
    });

    std::ifstream in(measurements_path);
    if (!in)
        throw DataError("cannot open measurement file " + measurements_path);
    auto meas = calibration::parse_measurements_csv(in);
    meas.validate(model.n_detectors);

    auto sol = calibration::solve_efficiencies(model, meas, sopts);

    io::Provenance prov{"calibrate", io::config_hash(effective), seed};
    json doc;
    doc["provenance"] = io::provenance_json(prov);
    doc["model"] = model_to_json(model);
    auto dof = calibration::dof_check(model.n_detectors);
    doc["dof"] = {{"n_measurements", dof.n_measurements},
                  {"n_unknowns", dof.n_unknowns},
                  {"overdetermined", dof.overdetermined}};
    doc["solution"] = calibration::solution_to_json(sol);
    if (mc_repeats >= 2) {
        Eigen::MatrixXd cov =
            calibration::monte_carlo_covariance(model, sol, meas, mc_repeats, seed);
        std::vector<double> sigma;
        std::vector<std::vector<double>> rows;
        for (Eigen::Index r = 0; r < cov.rows(); ++r) {
            sigma.push_back(std::sqrt(std::max(cov(r, r), 0.0)));
            std::vector<double> row;
            for (Eigen::Index c = 0; c < cov.cols(); ++c)
                row.push_back(cov(r, c));
            rows.push_back(row);
        }
        doc["monte_carlo"] = {{"repeats", mc_repeats}, {"sigma", sigma}, {"covariance", rows}};
    }

    auto dir = ensure_out_dir(opts);
    auto out = open_output(dir, "calibration.json");
    out << doc.dump(2) << '\n';
}

void cmd_loss(const json& config, const std::string& scan_path, const CommonOptions& opts) {
    std::vector<loss::DetectorWindow> windows;
    double guard = 0.0;
    json effective;
    std::uint64_t seed = 0;

    parse_phase([&] {
        json cfg = config;
        seed = resolve_seed(cfg, opts);
        json spans = json::array({{5.0, 5.21}, {8.5, 8.71}, {12.0, 12.21}});
        if (cfg.contains("detectors_mm")) {
            spans = cfg.at("detectors_mm");
            cfg.erase("detectors_mm");
        }
        if (!spans.is_array() || spans.empty())
            throw ConfigError("detectors_mm must be a non-empty array of [begin, end] pairs");
        for (const auto& span : spans) {
            if (!span.is_array() || span.size() != 2)
                throw ConfigError("each detectors_mm entry must be a [begin, end] pair");
            loss::DetectorWindow w;
            w.begin = span.at(0).get<double>() * 1e-3;
            w.end = span.at(1).get<double>() * 1e-3;
            if (!(w.end > w.begin))
                throw ConfigError("detector window must have end > begin");
            windows.push_back(w);
        }
        guard = take_number(cfg, "guard_mm", 0.1) * 1e-3;
        if (guard < 0.0)
            throw ConfigError("guard_mm must be non-negative");
        finish(cfg, "loss config");
        effective = {{"detectors_mm", spans}, {"guard_mm", guard * 1e3}, {"seed", seed}};
        return 0;
    });

    std::ifstream in(scan_path);
    if (!in)
        throw DataError("cannot open scan file " + scan_path);
    auto trace = loss::parse_reflectometry_csv(in);
    auto profile = loss::relative_loss_profile(trace);
    auto fit = loss::fit_waveguide_loss(trace.position, profile, windows, guard);
    auto absorptions =
        loss::detector_absorption(trace.position, profile, windows, fit.attenuation_db_per_m,
                                  guard);

    io::Provenance prov{"loss", io::config_hash(effective), seed};
    auto dir = ensure_out_dir(opts);

    auto pout = open_output(dir, "loss_profile.csv");
    io::write_provenance_comments(pout, prov);
    pout << "position_m,relative_loss_db\n";
    for (std::size_t i = 0; i < trace.position.size(); ++i)
        pout << io::format_double(trace.position[i]) << ',' << io::format_double(profile[i])
             << '\n';

    json doc;
    doc["provenance"] = io::provenance_json(prov);
    doc["attenuation_db_per_m"] = fit.attenuation_db_per_m;
    doc["attenuation_db_per_cm"] = fit.attenuation_db_per_m * 1e-2;
    doc["rms_residual_db"] = fit.rms_residual_db;
    doc["n_points_used"] = fit.n_points_used;
    json dets = json::array();
    for (std::size_t i = 0; i < windows.size(); ++i)
        dets.push_back({{"begin_mm", windows[i].begin * 1e3},
                        {"end_mm", windows[i].end * 1e3},
                        {"step_db", absorptions[i].step_db},
                        {"absorbed_fraction", absorptions[i].absorbed_fraction}});
    doc["detectors"] = dets;
    auto rout = open_output(dir, "loss_report.json");
    rout << doc.dump(2) << '\n';
}

void cmd_montecarlo(const json& config, const CommonOptions& opts) {
    photon::SourceConfig source;
    photon::ChipConfig chip;
    photon::Direction direction = photon::Direction::forward;
    thermal::DetectorDesign design;
    double impact = 0.0, duration = 0.0, dt = 0.0, dx = 0.0;
    int decimate = 0;
    double noise_level = 0.0, noise_scale = 0.0;
    json effective;
    std::uint64_t seed = 0;

    parse_phase([&] {
        json cfg = config;
        seed = resolve_seed(cfg, opts);

        json sj = take_object(cfg, "source");
        source.mean_photons = take_number(sj, "mean_photons", 1.0);
        source.pulses = take_int(sj, "pulses", 8192);
        source.wavelength = take_number(sj, "wavelength_nm", 1550.0) * 1e-9;
        source.seed = seed;
        finish(sj, "source");
        source.validate();

        json cj = take_object(cfg, "chip");
        chip.model = model_from_config(take_object(cj, "model"), kDefaultAlphaPerM);
        chip.model.n_in = 1.0; // launch statistics live in the source block
        chip.eta = {0.437, 0.436, 0.432};
        if (cj.contains("eta")) {
            chip.eta = cj.at("eta").get<std::vector<double>>();
            cj.erase("eta");
        }
        chip.eta_a = take_number(cj, "eta_a", 0.221);
        chip.eta_b = take_number(cj, "eta_b", 0.148);
        finish(cj, "chip");
        chip.validate();

        std::string dir_name = take_string(cfg, "direction", "forward");
        if (dir_name == "forward")
            direction = photon::Direction::forward;
        else if (dir_name == "reverse")
            direction = photon::Direction::reverse;
        else
            throw ConfigError("direction must be 'forward' or 'reverse'");

        json tj = take_object(cfg, "template");
        if (tj.contains("design")) {
            design = thermal::DetectorDesign::from_json(tj.at("design"));
            tj.erase("design");
        }
        impact = take_number(tj, "impact_um", 0.0) * 1e-6;
        duration = take_number(tj, "duration_us", 200.0) * 1e-6;
        dt = take_number(tj, "dt_ns", 5.0) * 1e-9;
        dx = take_number(tj, "dx_um", 1.0) * 1e-6;
        decimate = take_int(tj, "decimate", 64);
        finish(tj, "template");
        if (!(duration > 0.0) || !(dt > 0.0) || !(dx > 0.0) || decimate < 1)
            throw ConfigError("template duration_us, dt_ns, dx_um, decimate must be positive");

        json nj = take_object(cfg, "noise");
        noise_level = take_number(nj, "white_a2_hz", 1e-22);
        noise_scale = take_number(nj, "scale", 1.0);
        finish(nj, "noise");
        if (!(noise_level > 0.0) || noise_scale < 0.0)
            throw ConfigError("noise white_a2_hz must be positive and scale non-negative");

        finish(cfg, "montecarlo config");
        effective = {{"source",
                      {{"mean_photons", source.mean_photons},
                       {"pulses", source.pulses},
                       {"wavelength_nm", source.wavelength * 1e9}}},
                     {"chip",
                      {{"model", model_to_json(chip.model)},
                       {"eta", chip.eta},
                       {"eta_a", chip.eta_a},
                       {"eta_b", chip.eta_b}}},
                     {"direction", dir_name},
                     {"template",
                      {{"design", design.to_json()},
                       {"impact_um", impact * 1e6},
                       {"duration_us", duration * 1e6},
                       {"dt_ns", dt * 1e9},
                       {"dx_um", dx * 1e6},
                       {"decimate", decimate}}},
                     {"noise", {{"white_a2_hz", noise_level}, {"scale", noise_scale}}},
                     {"seed", seed}};
        return 0;
    });

    thermal::Simulator sim(design, dx, dt);
    auto full = sim.run_pulse(impact, photon_energy(source.wavelength), duration);
    auto tmpl = photon::decimate_trace(full, decimate);
    auto noise = thermal::NoiseSpectrum::white(noise_level);

    auto counts = photon::sample_detected_counts(source, chip, direction);
    auto ensemble = photon::synthesize_traces(counts, tmpl, noise, seed, noise_scale);
    const std::uint64_t hash = io::config_hash(effective);
    ensemble.config_hash = hash;
    auto hist = photon::discriminate_photon_number(ensemble, tmpl, noise);
    auto truth = photon::histogram_from_counts(counts);

    io::Provenance prov{"montecarlo", hash, seed};
    auto dir = ensure_out_dir(opts);

    auto tout = open_output(dir, "template.csv");
    io::write_provenance_comments(tout, prov);
    tout << "# x_impact_um: " << io::format_double(impact * 1e6) << '\n';
    thermal::write_pulse_csv(tout, tmpl);

    auto bout = open_output(dir, "traces.tesd");
    ensemble.write_binary(bout);

    json doc;
    doc["provenance"] = io::provenance_json(prov);
    doc["discriminated"] = photon::histogram_to_json(hist);
    doc["true_counts"] = photon::histogram_to_json(truth);
    auto hout = open_output(dir, "histogram.json");
    hout << doc.dump(2) << '\n';
}

} // namespace tesim::cli
