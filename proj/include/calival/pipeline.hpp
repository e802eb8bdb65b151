#pragma once

#include "calival/core_model.hpp"
#include "calival/inverse_uq.hpp"
#include "calival/prediction_bma.hpp"
#include "calival/validation_bf.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace calival {

inline constexpr const char* kToolVersion = "calival 1.0.0";
inline constexpr int kSchemaVersion = 1;
// The single environment override: the output directory.
inline constexpr const char* kOutputDirEnv = "CALIVAL_OUTPUT_DIR";

struct SeedConfig {
    std::uint64_t generate = 0;
    std::uint64_t split = 0;
    std::uint64_t surrogate = 0;
    std::uint64_t bias = 0;
    std::uint64_t mcmc = 0;
    std::uint64_t validate = 0;
    std::uint64_t predict = 0;
};

struct RunConfig {
    std::string dataset = "synthetic";
    std::filesystem::path output_dir;
    std::map<std::string, bool> stages;
    SeedConfig seeds;

    // data
    std::string data_source = "generate";  // generate | files
    std::filesystem::path iuq_file;
    std::filesystem::path validation_pool_file;

    // generator
    VectorXd theta_true;
    double noise_std = 1.5;
    bool inject_bias = true;
    std::size_t n_iuq = 40;
    std::size_t n_validation_pool = 86;
    std::vector<DesignRange> ranges;

    // correction
    bool correction_enabled = false;
    CorrectionFamily correction_family = CorrectionFamily::Standard;
    std::vector<std::string> correction_exempt{"VoidF4"};

    PriorSpec prior;

    // surrogate
    std::size_t n_train = 200;
    std::size_t n_holdout = 50;
    int gp_restarts = 8;
    int gp_max_iterations = 200;
    double gate_max_rmse = 1.0;
    double gate_min_coverage = 0.8;
    bool enforce_gate = true;
    std::vector<DesignRange> design_bounds;

    // inverse UQ
    std::string bias_modes = "both";  // on | off | both
    BiasTreatment bias_treatment = BiasTreatment::Marginal;
    std::optional<VectorXd> theta_ref;  // nominal when empty
    std::size_t n_samples = 100000;
    std::size_t burn_in = 20000;
    std::size_t thinning = 10;
    std::size_t chains = 2;

    // validation
    std::size_t n_posterior = 10000;
    std::size_t n_prior = 10000;
    BfAggregation aggregation = BfAggregation::Arithmetic;
    bool joint_qoi = false;
    bool include_bias_variance = false;

    // prediction
    std::size_t prediction_samples = 2000;
    MixtureStdMode std_mode = MixtureStdMode::Mixture;

    // Canonical JSON per section, used for stage hashing.
    std::map<std::string, std::string> canonical_sections;

    struct Overrides {
        std::optional<std::uint64_t> seed;
        std::optional<std::string> bias_mode;
    };

    /// Strict load: unknown keys, missing seeds, missing files and a wrong
    /// schema_version are all rejected. Relative file paths resolve against
    /// the config file's directory.
    static RunConfig load(const std::filesystem::path& path, const Overrides& overrides = {});
    static RunConfig parse(const std::string& text, const std::filesystem::path& base_dir,
                           const Overrides& overrides = {});

    std::vector<std::string> active_bias_modes() const;  // subset of {no_bias, with_bias}
    std::string hash() const;
    std::string stage_hash(const std::string& stage) const;
};

std::string sha256_hex(const std::string& bytes);
std::string sha256_file(const std::filesystem::path& path);

const std::vector<std::string>& stage_order();
/// --out wins, then the environment override, then the config value.
std::filesystem::path resolve_output_dir(const RunConfig& config, const std::optional<std::filesystem::path>& cli_out);
std::vector<std::string> stage_dependencies(const std::string& stage);

class Pipeline {
public:
    Pipeline(RunConfig config, std::filesystem::path output_dir);

    const std::filesystem::path& output_dir() const { return out_; }
    const RunConfig& config() const { return config_; }

    /// Runs one stage, or every enabled stage for "all". Throws
    /// PipelineError naming the stage on failure.
    void run(const std::string& stage);

    /// Text of the last report stage (also written to report/summary.txt).
    const std::string& summary() const { return summary_; }

private:
    std::vector<std::string> run_stage(const std::string& stage);
    std::vector<std::string> stage_generate();
    std::vector<std::string> stage_surrogate();
    std::vector<std::string> stage_iuq();
    std::vector<std::string> stage_validate();
    std::vector<std::string> stage_predict();
    std::vector<std::string> stage_report();

    RunConfig config_;
    std::filesystem::path out_;
    std::string summary_;
};

} // namespace calival
