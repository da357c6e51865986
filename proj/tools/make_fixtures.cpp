// Regenerates the bundled reference data under data/. The calibration tables
// are noiseless model outputs for the reference chip; the reflectometry scan
// is a synthetic two-sided trace with realistic roughness and readout noise.
// Run from the repository root: build/tools/make_fixtures [out_dir]

#include <cmath>
#include <fstream>
#include <iostream>
#include <vector>

#include "tesim/calibration.hpp"
#include "tesim/io.hpp"
#include "tesim/loss_profile.hpp"

namespace {

void write_calibration(const std::string& path, double alpha,
                       const std::vector<double>& eta, double eta_a, double eta_b) {
    tesim::calibration::CalibrationModel model;
    model.n_detectors = int(eta.size());
    model.alpha = alpha;
    model.l1 = 5e-3;
    model.l2 = 3.5e-3;
    model.n_in = 1.0;
    auto pred = tesim::calibration::forward_model(model, eta, eta_a, eta_b);

    std::ofstream out(path, std::ios::binary);
    out << "# mean detected photon numbers for the reference three-detector chip\n";
    out << "direction,detector_index,mean_photons,sigma\n";
    for (std::size_t k = 0; k < pred.forward.size(); ++k)
        out << "forward," << k + 1 << ',' << tesim::io::format_double(pred.forward[k]) << ','
            << tesim::io::format_double(0.01 * pred.forward[k]) << '\n';
    for (std::size_t k = 0; k < pred.reverse.size(); ++k)
        out << "reverse," << k + 1 << ',' << tesim::io::format_double(pred.reverse[k]) << ','
            << tesim::io::format_double(0.01 * pred.reverse[k]) << '\n';
    std::cout << path << '\n';
}

void write_scan(const std::string& path) {
    tesim::loss::ReflectometryModel model;
    model.length = 18e-3;
    model.attenuation_db_per_m = 94.7;
    model.coupling_a_db = 6.557;  // -10 log10(0.221)
    model.coupling_b_db = 8.297;  // -10 log10(0.148)
    model.backscatter_db = -60.0;
    model.roughness_db = 1.0;
    model.detectors = {{5.0e-3, 5.21e-3}, {8.5e-3, 8.71e-3}, {12.0e-3, 12.21e-3}};
    for (double absorbed : {0.432, 0.488, 0.482})
        model.detector_step_db.push_back(-10.0 * std::log10(1.0 - absorbed));
    auto trace = tesim::loss::simulate_reflectometry(model, 2001, 0.01, 20260817ull);

    std::ofstream out(path, std::ios::binary);
    out << "# two-sided backscatter scan of the reference chip, linear reflectance\n";
    out << "position_m,forward_reflectance,reverse_reflectance\n";
    for (std::size_t i = 0; i < trace.position.size(); ++i)
        out << tesim::io::format_double(trace.position[i]) << ','
            << tesim::io::format_double(trace.forward[i]) << ','
            << tesim::io::format_double(trace.reverse[i]) << '\n';
    std::cout << path << '\n';
}

} // namespace

int main(int argc, char** argv) {
    std::string dir = argc > 1 ? argv[1] : "data";
    write_calibration(dir + "/calibration_tm.csv", 21.805, {0.437, 0.436, 0.432}, 0.221, 0.148);
    write_calibration(dir + "/calibration_te.csv", 21.184, {0.065, 0.066, 0.064}, 0.081, 0.084);
    write_scan(dir + "/loss_scan_tm.csv");
    return 0;
}
