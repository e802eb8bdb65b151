#include "calival/errors.hpp"
#include "calival/pipeline.hpp"

#include "CLI11.hpp"

#include <spdlog/spdlog.h>

#include <iostream>

int main(int argc, char** argv) {
    CLI::App app{"Calibration, validation and prediction workflow with Bayes-factor model averaging"};
    app.require_subcommand(1, 1);

    std::string config_path;
    std::optional<std::string> out_dir;
    std::optional<std::uint64_t> seed_override;
    std::optional<std::string> bias_mode;
    std::string log_level = "info";

    app.add_option("--config", config_path, "Run configuration (JSON)")->required()->check(CLI::ExistingFile);
    app.add_option("--out", out_dir, "Output directory (overrides the config and " + std::string(calival::kOutputDirEnv) + ")");
    app.add_option("--seed-override", seed_override, "Replace every stage seed with N, N+1, ...");
    app.add_option("--bias-mode", bias_mode, "Bias modes to run")->check(CLI::IsMember({"on", "off", "both"}));
    app.add_option("--log-level", log_level, "trace, debug, info, warn, error or off")
        ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "off"}));
    app.fallthrough();

    const std::pair<const char*, const char*> commands[] = {
        {"generate", "Generate or ingest the IUQ, validation and prediction data"},
        {"surrogate", "Fit the GP surrogate and check holdout accuracy"},
        {"iuq", "Estimate bias and sample the parameter posterior"},
        {"validate", "Resample posteriors and compute Bayes factors"},
        {"predict", "Predict the held-out tests with models A to E"},
        {"report", "Write the summary tables"},
        {"all", "Run every enabled stage in order"},
    };
    for (const auto& [name, help] : commands) app.add_subcommand(name, help);

    CLI11_PARSE(app, argc, argv);
    spdlog::set_level(spdlog::level::from_str(log_level));
    const std::string command = app.get_subcommands().front()->get_name();

    try {
        calival::RunConfig::Overrides ov;
        ov.seed = seed_override;
        ov.bias_mode = bias_mode;
        const auto config = calival::RunConfig::load(config_path, ov);
        std::optional<std::filesystem::path> cli_out;
        if (out_dir) cli_out = *out_dir;
        calival::Pipeline pipeline(config, calival::resolve_output_dir(config, cli_out));
        pipeline.run(command);
        if (!pipeline.summary().empty()) std::cout << pipeline.summary();
    } catch (const calival::PipelineError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: [config] " << e.what() << '\n';
        return 1;
    }
    return 0;
}
