#include <CLI11.hpp>

#include "fracbio/cli.hpp"

int main(int argc, char** argv) {
    using namespace fracbio::cli;

    CLI::App app{"Delayed fractional bioreactor model: fitting, stability, controller tuning, simulation"};
    app.set_version_flag("--version", std::string(fracbio::tool_version));
    app.require_subcommand(1);

    std::string config;
    Options opt;
    std::string out_dir = ".";
    std::string data;
    std::uint64_t seed = 0;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config, "JSON run config")->required()->check(CLI::ExistingFile);
        sub->add_option("--out", out_dir, "output directory");
        sub->add_option("--seed", seed, "reserved; accepted for reproducible batch scripts");
    };

    auto* fit = app.add_subcommand("fit", "fit model parameters to a time series");
    add_common(fit);
    fit->add_option("--data", data, "CSV time,biomass,biomass_err,substrate,substrate_err")->required();

    auto* stability = app.add_subcommand("stability", "equilibrium, crossings and delay window");
    add_common(stability);

    auto* regions = app.add_subcommand("regions", "sigma-stability regions of the delayed controller");
    add_common(regions);
    regions->add_flag("--max-decay", opt.max_decay, "also search the maximal decay rate");

    auto* simulate = app.add_subcommand("simulate", "integrate the nonlinear delayed model");
    add_common(simulate);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? ok : input_error;
    }

    opt.out_dir = out_dir;
    if (!data.empty())
        opt.data = data;
    if (seed != 0)
        opt.seed = seed;

    return run_guarded([&] {
        const auto cfg = read_json_file(config);
        if (fit->parsed())
            return cmd_fit(cfg, opt);
        if (stability->parsed())
            return cmd_stability(cfg, opt);
        if (regions->parsed())
            return cmd_regions(cfg, opt);
        return cmd_simulate(cfg, opt);
    });
}
