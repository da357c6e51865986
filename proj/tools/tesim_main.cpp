#include <exception>
#include <fstream>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "commands.hpp"
#include "tesim/errors.hpp"

namespace {

nlohmann::json load_config(const std::string& path) {
    if (path.empty())
        return nlohmann::json::object();
    std::ifstream in(path);
    if (!in)
        throw tesim::ConfigError("cannot open config file " + path);
    try {
        return nlohmann::json::parse(in, nullptr, true, true);
    } catch (const nlohmann::json::exception& e) {
        throw tesim::ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
}

void add_common(CLI::App* cmd, std::string& config_path, tesim::cli::CommonOptions& opts) {
    cmd->add_option("--config", config_path, "JSON configuration file");
    cmd->add_option("--seed", opts.seed, "random seed (overrides the config)")
        ->check(CLI::NonNegativeNumber);
    cmd->add_option("--out-dir", opts.out_dir, "directory for output files");
    cmd->add_option("--threads", opts.threads, "worker threads for parallel sweeps")
        ->check(CLI::PositiveNumber);
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"simulation and metrology toolkit for waveguide TES photon counters"};
    app.require_subcommand(1);

    struct Sub {
        CLI::App* cmd = nullptr;
        std::string config_path;
        std::string input_path;
        tesim::cli::CommonOptions opts;
    };

    Sub materials, pulse, sweep, calibrate, loss, montecarlo;
    materials.cmd = app.add_subcommand("materials", "film transport properties table");
    pulse.cmd = app.add_subcommand("pulse", "current pulse traces for photon impacts");
    sweep.cmd = app.add_subcommand("sweep", "absorption and energy resolution vs device length");
    calibrate.cmd = app.add_subcommand("calibrate", "fit detector efficiencies to pulse means");
    loss.cmd = app.add_subcommand("loss", "waveguide loss from a two-sided reflectometry scan");
    montecarlo.cmd = app.add_subcommand("montecarlo", "synthetic pulse ensemble and histogram");

    for (Sub* s : {&materials, &pulse, &sweep, &calibrate, &loss, &montecarlo})
        add_common(s->cmd, s->config_path, s->opts);
    calibrate.cmd->add_option("measurements", calibrate.input_path, "measurement CSV")
        ->required();
    loss.cmd->add_option("scan", loss.input_path, "reflectometry scan CSV")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    for (Sub* s : {&materials, &pulse, &sweep, &calibrate, &loss, &montecarlo})
        s->opts.seed_given = s->cmd->count("--seed") > 0;

    try {
        if (materials.cmd->parsed())
            tesim::cli::cmd_materials(load_config(materials.config_path), materials.opts);
        else if (pulse.cmd->parsed())
            tesim::cli::cmd_pulse(load_config(pulse.config_path), pulse.opts);
        else if (sweep.cmd->parsed())
            tesim::cli::cmd_sweep(load_config(sweep.config_path), sweep.opts);
        else if (calibrate.cmd->parsed())
            tesim::cli::cmd_calibrate(load_config(calibrate.config_path), calibrate.input_path,
                                      calibrate.opts);
        else if (loss.cmd->parsed())
            tesim::cli::cmd_loss(load_config(loss.config_path), loss.input_path, loss.opts);
        else if (montecarlo.cmd->parsed())
            tesim::cli::cmd_montecarlo(load_config(montecarlo.config_path), montecarlo.opts);
    } catch (const tesim::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const tesim::DataError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return 3;
    } catch (const tesim::NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << '\n';
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 4;
    }
    return 0;
}
