#include "calival/pipeline.hpp"

#include "calival/copula_resampler.hpp"
#include "calival/dataset_io.hpp"
#include "calival/errors.hpp"
#include "calival/report.hpp"
#include "calival/surrogate_gp.hpp"

#include "json.hpp"

#include <fmt/format.h>
#include <openssl/evp.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

namespace calival {

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

// ---------------------------------------------------------------------------
// Strict JSON access

void only_keys(const json& j, const std::string& where, std::initializer_list<const char*> allowed) {
    if (!j.is_object()) throw InputError(where + " must be an object");
    for (const auto& [key, _] : j.items()) {
        if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; }))
            throw InputError(fmt::format("unknown key '{}' in {}", key, where));
    }
}

const json& need(const json& j, const char* key, const std::string& where) {
    const auto it = j.find(key);
    if (it == j.end()) throw InputError(fmt::format("missing key '{}' in {}", key, where));
    return *it;
}

template <class T>
T get(const json& j, const char* key, const std::string& where) {
    try {
        return need(j, key, where).get<T>();
    } catch (const json::exception& e) {
        throw InputError(fmt::format("{}.{} has the wrong type: {}", where, key, e.what()));
    }
}

template <class T>
T get_or(const json& j, const char* key, const std::string& where, T fallback) {
    return j.contains(key) ? get<T>(j, key, where) : fallback;
}

std::size_t get_count(const json& j, const char* key, const std::string& where, std::size_t fallback, std::size_t min) {
    if (!j.contains(key)) return fallback;
    const json& v = j.at(key);
    if (!v.is_number_unsigned()) throw InputError(fmt::format("{}.{} must be a non-negative integer", where, key));
    const auto n = v.get<std::size_t>();
    if (n < min) throw InputError(fmt::format("{}.{} must be >= {}", where, key, min));
    return n;
}

VectorXd get_vector(const json& v, const std::string& where) {
    if (!v.is_array()) throw InputError(where + " must be an array of numbers");
    VectorXd out(static_cast<Eigen::Index>(v.size()));
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (!v[i].is_number()) throw InputError(where + " must be an array of numbers");
        out[static_cast<Eigen::Index>(i)] = v[i].get<double>();
    }
    return out;
}

std::vector<DesignRange> get_ranges(const json& j, const std::string& where) {
    const auto names = BenchmarkModel().design_names();
    if (!j.is_object()) throw InputError(where + " must map design names to [lower, upper]");
    for (const auto& [key, _] : j.items())
        if (std::find(names.begin(), names.end(), key) == names.end())
            throw InputError(fmt::format("unknown design variable '{}' in {}", key, where));
    std::vector<DesignRange> out;
    for (const auto& n : names) {
        const json& r = need(j, n.c_str(), where);
        const VectorXd v = get_vector(r, where + "." + n);
        if (v.size() != 2 || !(v[0] <= v[1])) throw InputError(fmt::format("{}.{} must be [lower, upper]", where, n));
        out.push_back({n, v[0], v[1]});
    }
    return out;
}

fs::path resolve(const fs::path& base, const std::string& p) {
    const fs::path path(p);
    return path.is_absolute() ? path : base / path;
}

// ---------------------------------------------------------------------------

class DirLock {
public:
    explicit DirLock(fs::path path) : path_(std::move(path)) {
        std::FILE* f = std::fopen(path_.c_str(), "wx");
        if (!f)
            throw PipelineError("lock", fmt::format("output directory is locked by another run ('{}' exists); "
                                                    "remove it if no other run is active",
                                                    path_.string()));
        std::fputs(kToolVersion, f);
        std::fclose(f);
    }
    ~DirLock() {
        std::error_code ec;
        fs::remove(path_, ec);
    }
    DirLock(const DirLock&) = delete;
    DirLock& operator=(const DirLock&) = delete;

private:
    fs::path path_;
};

json load_manifest(const fs::path& out) {
    const fs::path p = out / "manifest.json";
    if (!fs::exists(p)) return json{{"tool_version", kToolVersion}, {"stages", json::object()}};
    std::ifstream in(p);
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw PipelineError("manifest", std::string("manifest.json is unreadable: ") + e.what());
    }
}

void save_manifest(const fs::path& out, const json& manifest) {
    std::ofstream o(out / "manifest.json", std::ios::binary | std::ios::trunc);
    o << manifest.dump(2) << '\n';
    if (!o) throw PipelineError("manifest", "cannot write manifest.json");
}

MatrixXd stack_chains(const fs::path& dir, std::vector<std::string>* names) {
    std::vector<MatrixXd> parts;
    for (std::size_t c = 0;; ++c) {
        const fs::path p = dir / fmt::format("chain_{}.csv", c);
        if (!fs::exists(p)) break;
        parts.push_back(read_samples_csv(p, names));
    }
    if (parts.empty()) throw InputError("no chain files in '" + dir.string() + "'");
    Eigen::Index rows = 0;
    for (const auto& m : parts) rows += m.rows();
    MatrixXd out(rows, parts.front().cols());
    Eigen::Index r = 0;
    for (const auto& m : parts) {
        out.middleRows(r, m.rows()) = m;
        r += m.rows();
    }
    return out;
}

void check_model_names(const Dataset& d, const std::string& what) {
    const BenchmarkModel m;
    if (d.design_names() != m.design_names() || d.qoi_names() != m.qoi_names())
        throw InputError(what + " does not match the benchmark design/QoI names");
}

} // namespace

// ---------------------------------------------------------------------------

std::string sha256_hex(const std::string& bytes) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1)
        throw NumericalError("SHA-256 failed");
    std::string out;
    for (unsigned int i = 0; i < len; ++i) out += fmt::format("{:02x}", digest[i]);
    return out;
}

std::string sha256_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot read '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return sha256_hex(ss.str());
}

const std::vector<std::string>& stage_order() {
    static const std::vector<std::string> order{"generate", "surrogate", "iuq", "validate", "predict", "report"};
    return order;
}

std::vector<std::string> stage_dependencies(const std::string& stage) {
    if (stage == "generate" || stage == "surrogate") return {};
    if (stage == "iuq") return {"generate", "surrogate"};
    if (stage == "validate") return {"generate", "surrogate", "iuq"};
    if (stage == "predict") return {"generate", "surrogate", "iuq", "validate"};
    if (stage == "report") return {"generate", "iuq", "validate", "predict"};
    throw InputError("unknown stage '" + stage + "'");
}

fs::path resolve_output_dir(const RunConfig& config, const std::optional<fs::path>& cli_out) {
    if (cli_out) return *cli_out;
    if (const char* env = std::getenv(kOutputDirEnv); env && *env) return fs::path(env);
    if (config.output_dir.empty()) throw InputError("no output directory: set output_dir, --out or " + std::string(kOutputDirEnv));
    return config.output_dir;
}

RunConfig RunConfig::load(const fs::path& path, const Overrides& overrides) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open config '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), path.parent_path().empty() ? fs::path(".") : path.parent_path(), overrides);
}

RunConfig RunConfig::parse(const std::string& text, const fs::path& base_dir, const Overrides& overrides) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw InputError(std::string("config is not valid JSON: ") + e.what());
    }
    only_keys(j, "config", {"schema_version", "dataset", "output_dir", "stages", "seeds", "data", "generator",
                            "correction", "prior", "surrogate", "iuq", "validation", "prediction"});
    const json& sv = need(j, "schema_version", "config");
    if (!sv.is_number_integer() || sv.get<int>() != kSchemaVersion)
        throw InputError(fmt::format("config schema_version must be {}", kSchemaVersion));

    // Overrides rewrite the document so that hashes see them.
    if (overrides.seed) {
        json& s = j["seeds"];
        const char* keys[] = {"generate", "split", "surrogate", "bias", "mcmc", "validate", "predict"};
        for (std::size_t i = 0; i < std::size(keys); ++i) s[keys[i]] = *overrides.seed + i;
    }
    if (overrides.bias_mode) {
        if (!j.contains("iuq")) j["iuq"] = json::object();
        j["iuq"]["bias_modes"] = *overrides.bias_mode;
    }

    RunConfig c;
    c.dataset = get_or<std::string>(j, "dataset", "config", "synthetic");
    if (c.dataset.empty() || c.dataset.find_first_of(", \t\n") != std::string::npos)
        throw InputError("dataset label must be non-empty without commas or whitespace");
    if (j.contains("output_dir")) c.output_dir = resolve(base_dir, get<std::string>(j, "output_dir", "config"));

    for (const auto& s : stage_order()) c.stages[s] = true;
    if (j.contains("stages")) {
        const json& st = j.at("stages");
        only_keys(st, "stages", {"generate", "surrogate", "iuq", "validate", "predict", "report"});
        for (const auto& [k, v] : st.items()) {
            if (!v.is_boolean()) throw InputError("stages." + k + " must be true or false");
            c.stages[k] = v.get<bool>();
        }
    }

    const json& seeds = need(j, "seeds", "config");
    only_keys(seeds, "seeds", {"generate", "split", "surrogate", "bias", "mcmc", "validate", "predict"});
    const auto seed = [&](const char* k) {
        const json& v = need(seeds, k, "seeds");
        if (!v.is_number_unsigned()) throw InputError(fmt::format("seeds.{} must be a non-negative integer", k));
        return v.get<std::uint64_t>();
    };
    c.seeds = {seed("generate"), seed("split"), seed("surrogate"), seed("bias"), seed("mcmc"), seed("validate"), seed("predict")};

    json data = j.value("data", json{{"source", "generate"}});
    only_keys(data, "data", {"source", "iuq", "validation_pool"});
    c.data_source = get_or<std::string>(data, "source", "data", "generate");
    if (c.data_source == "files") {
        c.iuq_file = resolve(base_dir, get<std::string>(data, "iuq", "data"));
        c.validation_pool_file = resolve(base_dir, get<std::string>(data, "validation_pool", "data"));
        for (const auto& p : {c.iuq_file, c.validation_pool_file})
            if (!fs::exists(p)) throw InputError("data file '" + p.string() + "' does not exist");
        data["iuq_sha256"] = sha256_file(c.iuq_file);
        data["validation_pool_sha256"] = sha256_file(c.validation_pool_file);
    } else if (c.data_source != "generate") {
        throw InputError("data.source must be 'generate' or 'files'");
    } else if (data.contains("iuq") || data.contains("validation_pool")) {
        throw InputError("data.iuq/validation_pool are only valid with source 'files'");
    }

    const json& gen = need(j, "generator", "config");
    only_keys(gen, "generator", {"theta_true", "noise_std", "inject_bias", "n_iuq", "n_validation_pool", "ranges"});
    c.theta_true = gen.contains("theta_true") ? get_vector(gen.at("theta_true"), "generator.theta_true")
                                              : BenchmarkModel::ground_truth_theta();
    c.noise_std = get_or<double>(gen, "noise_std", "generator", 1.5);
    c.inject_bias = get_or<bool>(gen, "inject_bias", "generator", true);
    c.n_iuq = get_count(gen, "n_iuq", "generator", 40, 5);
    c.n_validation_pool = get_count(gen, "n_validation_pool", "generator", 86, 2);
    c.ranges = get_ranges(need(gen, "ranges", "generator"), "generator.ranges");
    if (!(c.noise_std >= 0.0)) throw InputError("generator.noise_std must be >= 0");

    const json corr = j.value("correction", json::object());
    only_keys(corr, "correction", {"enabled", "family", "exempt"});
    c.correction_enabled = get_or<bool>(corr, "enabled", "correction", false);
    c.correction_family = correction_family_from_string(get_or<std::string>(corr, "family", "correction", "standard"));
    c.correction_exempt = get_or<std::vector<std::string>>(corr, "exempt", "correction", {"VoidF4"});

    const json& prior = need(j, "prior", "config");
    if (!prior.is_array() || prior.size() != BenchmarkModel::kParamDim)
        throw InputError(fmt::format("prior must list {} parameters", BenchmarkModel::kParamDim));
    std::vector<ParameterPrior> params;
    for (std::size_t i = 0; i < prior.size(); ++i) {
        const std::string where = fmt::format("prior[{}]", i);
        only_keys(prior[i], where, {"name", "lower", "upper", "nominal"});
        params.push_back({get<std::string>(prior[i], "name", where), get<double>(prior[i], "lower", where),
                          get<double>(prior[i], "upper", where), get<double>(prior[i], "nominal", where)});
        if (params.back().name.empty() || params.back().name.find_first_of(", \t\n") != std::string::npos)
            throw InputError(where + ".name must be non-empty without commas or whitespace");
    }
    c.prior = PriorSpec(params);

    const json sur = j.value("surrogate", json::object());
    only_keys(sur, "surrogate", {"n_train", "n_holdout", "restarts", "max_iterations", "max_rmse", "min_coverage",
                                 "enforce_gate", "design_bounds"});
    c.n_train = get_count(sur, "n_train", "surrogate", 200, 10);
    c.n_holdout = get_count(sur, "n_holdout", "surrogate", 50, 1);
    c.gp_restarts = static_cast<int>(get_count(sur, "restarts", "surrogate", 8, 1));
    c.gp_max_iterations = static_cast<int>(get_count(sur, "max_iterations", "surrogate", 200, 1));
    c.gate_max_rmse = get_or<double>(sur, "max_rmse", "surrogate", 1.0);
    c.gate_min_coverage = get_or<double>(sur, "min_coverage", "surrogate", 0.8);
    c.enforce_gate = get_or<bool>(sur, "enforce_gate", "surrogate", true);
    if (sur.contains("design_bounds"))
        c.design_bounds = get_ranges(sur.at("design_bounds"), "surrogate.design_bounds");
    else if (c.data_source == "files")
        throw InputError("surrogate.design_bounds is required when data.source is 'files'");
    else
        c.design_bounds = c.ranges;

    const json iuq = j.value("iuq", json::object());
    only_keys(iuq, "iuq", {"bias_modes", "bias_treatment", "theta_ref", "n_samples", "burn_in", "thinning", "chains"});
    c.bias_modes = get_or<std::string>(iuq, "bias_modes", "iuq", "both");
    if (c.bias_modes != "on" && c.bias_modes != "off" && c.bias_modes != "both")
        throw InputError("iuq.bias_modes must be on, off or both");
    c.bias_treatment = bias_treatment_from_string(get_or<std::string>(iuq, "bias_treatment", "iuq", "marginal"));
    if (c.bias_treatment == BiasTreatment::Disabled)
        throw InputError("iuq.bias_treatment must be conditional or marginal; use bias_modes to switch bias off");
    if (iuq.contains("theta_ref")) {
        const json& r = iuq.at("theta_ref");
        if (r.is_string()) {
            if (r.get<std::string>() != "nominal") throw InputError("iuq.theta_ref must be \"nominal\" or a vector");
        } else {
            c.theta_ref = get_vector(r, "iuq.theta_ref");
            if (static_cast<std::size_t>(c.theta_ref->size()) != c.prior.dim())
                throw InputError("iuq.theta_ref has the wrong length");
        }
    }
    c.n_samples = get_count(iuq, "n_samples", "iuq", 100000, 1);
    c.burn_in = get_count(iuq, "burn_in", "iuq", 20000, 0);
    c.thinning = get_count(iuq, "thinning", "iuq", 10, 1);
    c.chains = get_count(iuq, "chains", "iuq", 2, 1);
    if (c.n_samples / c.thinning < 100) throw InputError("iuq.n_samples / thinning must leave at least 100 draws");

    const json val = j.value("validation", json::object());
    only_keys(val, "validation", {"n_posterior", "n_prior", "aggregation", "joint_qoi", "include_bias_variance"});
    c.n_posterior = get_count(val, "n_posterior", "validation", 10000, 1);
    c.n_prior = get_count(val, "n_prior", "validation", 10000, 1);
    c.aggregation = bf_aggregation_from_string(get_or<std::string>(val, "aggregation", "validation", "arithmetic"));
    c.joint_qoi = get_or<bool>(val, "joint_qoi", "validation", false);
    c.include_bias_variance = get_or<bool>(val, "include_bias_variance", "validation", false);

    const json pred = j.value("prediction", json::object());
    only_keys(pred, "prediction", {"n_samples", "std_mode"});
    c.prediction_samples = get_count(pred, "n_samples", "prediction", 2000, 2);
    c.std_mode = mixture_std_mode_from_string(get_or<std::string>(pred, "std_mode", "prediction", "mixture"));

    const json empty = json::object();
    c.canonical_sections["generate"] =
        json{{"dataset", c.dataset}, {"data", data}, {"generator", gen}, {"correction", corr},
             {"seeds", {seeds.at("generate"), seeds.at("split")}}}.dump();
    c.canonical_sections["surrogate"] =
        json{{"surrogate", sur}, {"prior", prior}, {"ranges", gen.at("ranges")}, {"seed", seeds.at("surrogate")}}.dump();
    c.canonical_sections["iuq"] =
        json{{"iuq", iuq}, {"prior", prior}, {"seeds", {seeds.at("bias"), seeds.at("mcmc")}}}.dump();
    c.canonical_sections["validate"] = json{{"validation", val}, {"seed", seeds.at("validate")}}.dump();
    c.canonical_sections["predict"] = json{{"prediction", pred}, {"seed", seeds.at("predict")}}.dump();
    c.canonical_sections["report"] = json{{"dataset", c.dataset}}.dump();
    return c;
}

std::vector<std::string> RunConfig::active_bias_modes() const {
    if (bias_modes == "on") return {"with_bias"};
    if (bias_modes == "off") return {"no_bias"};
    return {"no_bias", "with_bias"};
}

std::string RunConfig::hash() const {
    std::string all;
    for (const auto& [k, v] : canonical_sections) all += k + "=" + v + "\n";
    return sha256_hex(all);
}

std::string RunConfig::stage_hash(const std::string& stage) const {
    return sha256_hex(canonical_sections.at(stage));
}

// ---------------------------------------------------------------------------

Pipeline::Pipeline(RunConfig config, fs::path output_dir) : config_(std::move(config)), out_(std::move(output_dir)) {}

void Pipeline::run(const std::string& stage) {
    if (stage == "all") {
        for (const auto& s : stage_order())
            if (config_.stages.at(s)) run(s);
        return;
    }
    const auto& order = stage_order();
    if (std::find(order.begin(), order.end(), stage) == order.end())
        throw PipelineError(stage, "unknown stage (expected generate, surrogate, iuq, validate, predict, report or all)");

    std::error_code ec;
    fs::create_directories(out_, ec);
    if (ec) throw PipelineError(stage, "cannot create output directory '" + out_.string() + "': " + ec.message());
    const DirLock lock(out_ / ".calival.lock");

    json manifest = load_manifest(out_);
    json& stages = manifest["stages"];

    std::vector<std::string> missing;
    for (const auto& dep : stage_dependencies(stage))
        if (!stages.contains(dep)) missing.push_back(dep);
    if (!missing.empty()) {
        std::string names;
        for (const auto& m : missing) names += (names.empty() ? "`" : ", `") + m + "`";
        throw PipelineError(stage, fmt::format("missing upstream artifacts; run {} first", names));
    }
    for (const auto& dep : stage_dependencies(stage)) {
        const json& rec = stages.at(dep);
        if (rec.at("config_hash").get<std::string>() != config_.stage_hash(dep))
            throw PipelineError(stage, fmt::format("configuration for `{}` changed since it ran; rerun `{}`", dep, dep));
        for (const auto& [rel, sum] : rec.at("artifacts").items()) {
            const fs::path p = out_ / rel;
            if (!fs::exists(p))
                throw PipelineError(stage, fmt::format("artifact '{}' from `{}` is missing; rerun `{}`", rel, dep, dep));
            if (sha256_file(p) != sum.get<std::string>())
                throw PipelineError(stage, fmt::format("artifact '{}' from `{}` was modified (checksum mismatch); rerun `{}`",
                                                       rel, dep, dep));
        }
    }

    spdlog::info("stage {} starting", stage);
    std::vector<std::string> artifacts;
    try {
        fs::remove_all(out_ / stage);
        fs::create_directories(out_ / stage);
        artifacts = run_stage(stage);
    } catch (const PipelineError&) {
        throw;
    } catch (const std::exception& e) {
        throw PipelineError(stage, e.what());
    }

    json rec{{"config_hash", config_.stage_hash(stage)}, {"artifacts", json::object()}};
    for (const auto& a : artifacts) rec["artifacts"][a] = sha256_file(out_ / a);
    stages[stage] = rec;
    // Downstream records are stale once an upstream stage reruns.
    for (const auto& s : stage_order()) {
        const auto deps = stage_dependencies(s);
        if (std::find(deps.begin(), deps.end(), stage) != deps.end()) stages.erase(s);
    }
    manifest["tool_version"] = kToolVersion;
    manifest["config_hash"] = config_.hash();
    save_manifest(out_, manifest);
    spdlog::info("stage {} done ({} artifacts)", stage, artifacts.size());
}

std::vector<std::string> Pipeline::run_stage(const std::string& stage) {
    if (stage == "generate") return stage_generate();
    if (stage == "surrogate") return stage_surrogate();
    if (stage == "iuq") return stage_iuq();
    if (stage == "validate") return stage_validate();
    if (stage == "predict") return stage_predict();
    return stage_report();
}

std::vector<std::string> Pipeline::stage_generate() {
    Dataset iuq, pool;
    if (config_.data_source == "generate") {
        GeneratorSettings g;
        g.theta_true = config_.theta_true;
        g.noise_std = config_.noise_std;
        g.inject_bias = config_.inject_bias;
        g.ranges = config_.ranges;
        g.n_tests = config_.n_iuq;
        g.id_prefix = "I";
        g.domain = Domain::IUQ;
        iuq = generate_benchmark_data(g, config_.seeds.generate);
        g.n_tests = config_.n_validation_pool;
        g.id_prefix = "V";
        g.domain = Domain::VAL;
        pool = generate_benchmark_data(g, config_.seeds.generate + 1);
    } else {
        iuq = read_dataset_csv(config_.iuq_file);
        pool = read_dataset_csv(config_.validation_pool_file);
        check_model_names(iuq, "IUQ file");
        check_model_names(pool, "validation pool file");
        iuq.validate();
        pool.validate();
        std::set<std::string> ids;
        for (const auto& o : iuq.observations()) ids.insert(o.test_id);
        for (const auto& o : pool.observations())
            if (ids.count(o.test_id)) throw InputError("test id " + o.test_id + " appears in both IUQ and validation files");
    }
    if (config_.correction_enabled) {
        iuq = correct_dataset(iuq, config_.correction_family, config_.correction_exempt);
        pool = correct_dataset(pool, config_.correction_family, config_.correction_exempt);
    }
    const auto [val, pred] = split_dataset(pool, config_.seeds.split);
    write_dataset_csv(out_ / "generate/iuq.csv", iuq);
    write_dataset_csv(out_ / "generate/validation.csv", val);
    write_dataset_csv(out_ / "generate/prediction.csv", pred);
    spdlog::info("generated {} IUQ, {} validation and {} prediction tests", iuq.size(), val.size(), pred.size());
    return {"generate/iuq.csv", "generate/validation.csv", "generate/prediction.csv"};
}

std::vector<std::string> Pipeline::stage_surrogate() {
    const BenchmarkModel model;
    const auto dn = model.design_names();
    const std::size_t dx = dn.size(), dt = config_.prior.dim();
    Bounds b{VectorXd(dx + dt), VectorXd(dx + dt)};
    for (std::size_t i = 0; i < dx; ++i) {
        b.lower[i] = config_.design_bounds[i].lower;
        b.upper[i] = config_.design_bounds[i].upper;
    }
    b.lower.tail(dt) = config_.prior.lower();
    b.upper.tail(dt) = config_.prior.upper();

    const auto run_model = [&](const MatrixXd& pts) {
        MatrixXd y(pts.rows(), 4);
        for (Eigen::Index i = 0; i < pts.rows(); ++i)
            y.row(i) = model.evaluate_values(pts.row(i).head(dx).transpose(), pts.row(i).tail(dt).transpose()).transpose();
        return y;
    };
    const TrainingDesign td = build_training_design(b, config_.n_train, config_.seeds.surrogate);
    const TrainingDesign ho = build_training_design(b, config_.n_holdout, config_.seeds.surrogate + 1);
    const MatrixXd y = run_model(td.samples);
    const MatrixXd yh = run_model(ho.samples);

    GpFitOptions o;
    o.restarts = config_.gp_restarts;
    o.max_iterations = config_.gp_max_iterations;
    o.seed = config_.seeds.surrogate + 2;
    const GpSurrogate sur = GpSurrogate::fit(td, y, dn, config_.prior.names(), model.qoi_names(), o);
    sur.save(out_ / "surrogate/surrogate.gp");

    CsvTable design;
    design.header = dn;
    for (const auto& n : config_.prior.names()) design.header.push_back(n);
    for (const auto& q : model.qoi_names()) design.header.push_back(q);
    for (Eigen::Index i = 0; i < td.samples.rows(); ++i) {
        std::vector<std::string> row;
        for (Eigen::Index c = 0; c < td.samples.cols(); ++c) row.push_back(format_double(td.samples(i, c)));
        for (Eigen::Index c = 0; c < y.cols(); ++c) row.push_back(format_double(y(i, c)));
        design.rows.push_back(std::move(row));
    }
    write_csv(out_ / "surrogate/training_design.csv", design);

    CsvTable quality;
    quality.header = {"qoi", "rmse", "coverage", "max_abs_error", "n_holdout", "nugget_escalations"};
    std::string failures;
    for (std::size_t k = 0; k < sur.qoi_dim(); ++k) {
        const GpQuality q = validate_gp(sur.models()[k], ho.samples, yh.col(static_cast<Eigen::Index>(k)));
        const auto& name = sur.qoi_names()[k];
        quality.rows.push_back({name, format_double(q.rmse), format_double(q.coverage_fraction),
                                format_double(q.max_abs_error), std::to_string(q.n),
                                std::to_string(sur.models()[k].nugget_escalations())});
        spdlog::info("surrogate {}: holdout RMSE {:.4f}, coverage {:.2f}", name, q.rmse, q.coverage_fraction);
        if (!(q.rmse < config_.gate_max_rmse) || q.coverage_fraction < config_.gate_min_coverage)
            failures += fmt::format(" {} (rmse {:.4f}, coverage {:.2f})", name, q.rmse, q.coverage_fraction);
    }
    write_csv(out_ / "surrogate/quality.csv", quality);
    if (!failures.empty()) {
        if (config_.enforce_gate) throw PipelineError("surrogate", "quality gate failed:" + failures);
        spdlog::warn("surrogate quality gate failed:{}", failures);
    }
    return {"surrogate/surrogate.gp", "surrogate/training_design.csv", "surrogate/quality.csv"};
}

std::vector<std::string> Pipeline::stage_iuq() {
    const GpSurrogate sur = GpSurrogate::load(out_ / "surrogate/surrogate.gp");
    const Dataset iuq = read_dataset_csv(out_ / "generate/iuq.csv");
    const PriorSpec& prior = config_.prior;
    const VectorXd theta_ref = config_.theta_ref ? *config_.theta_ref : prior.nominal();
    const auto names = prior.names();
    for (const auto& o : iuq.observations())
        for (std::size_t i = 0; i < config_.design_bounds.size(); ++i) {
            const double v = o.design.values[static_cast<Eigen::Index>(i)];
            if (v < config_.design_bounds[i].lower || v > config_.design_bounds[i].upper)
                spdlog::warn("test {} lies outside the surrogate design bounds in {}; predictions extrapolate", o.test_id,
                             config_.design_bounds[i].name);
        }

    std::vector<std::string> artifacts;
    const auto modes = config_.active_bias_modes();
    for (std::size_t mi = 0; mi < modes.size(); ++mi) {
        const std::string& mode = modes[mi];
        const bool with_bias = mode == "with_bias";
        const fs::path dir = out_ / "iuq" / mode;
        fs::create_directories(dir);
        BiasModel bias;
        if (with_bias) {
            BiasFitOptions bo;
            bo.treatment = config_.bias_treatment;
            bo.gp.restarts = config_.gp_restarts;
            bo.gp.max_iterations = config_.gp_max_iterations;
            bo.gp.seed = config_.seeds.bias;
            bias = estimate_bias(iuq, sur, theta_ref, bo);
            bias.save(dir / "bias.gp");
            artifacts.push_back("iuq/" + mode + "/bias.gp");
        }
        const IuqLikelihood like(iuq, sur, bias);
        const double log_prior = prior.log_density();
        const LogDensity log_post = [&](const VectorXd& t) { return like(t) + log_prior; };

        std::vector<McmcChain> chains;
        for (std::size_t c = 0; c < config_.chains; ++c) {
            McmcConfig mc;
            mc.n_samples = config_.n_samples;
            mc.burn_in = config_.burn_in;
            mc.thinning = config_.thinning;
            mc.seed = config_.seeds.mcmc + 1000 * mi + c;
            if (c > 0) {
                std::mt19937_64 rng(mc.seed);
                mc.initial = prior.sample(1, rng).row(0).transpose();
            }
            chains.push_back(run_mcmc(prior, log_post, mc));
            const std::string rel = fmt::format("iuq/{}/chain_{}.csv", mode, c);
            write_chain_csv(out_ / rel, names, chains.back());
            artifacts.push_back(rel);
            spdlog::info("iuq {} chain {}: acceptance {:.3f}", mode, c, chains.back().acceptance_rate);
        }
        McmcChain all = chains.front();
        for (std::size_t c = 1; c < chains.size(); ++c) {
            MatrixXd s(all.samples.rows() + chains[c].samples.rows(), all.samples.cols());
            s << all.samples, chains[c].samples;
            all.samples = s;
        }
        const PosteriorMoments mom = posterior_moments(all);
        const ChainDiagnostics diag = chain_diagnostics(chains);
        write_diagnostics_report(dir / "diagnostics.txt", names, diag, mom);
        CsvTable mt;
        mt.header = {"parameter", "mean", "std"};
        for (std::size_t j = 0; j < names.size(); ++j)
            mt.rows.push_back({names[j], format_double(mom.mean[static_cast<Eigen::Index>(j)]),
                               format_double(mom.std[static_cast<Eigen::Index>(j)])});
        write_csv(dir / "moments.csv", mt);
        artifacts.push_back("iuq/" + mode + "/diagnostics.txt");
        artifacts.push_back("iuq/" + mode + "/moments.csv");
    }
    return artifacts;
}

std::vector<std::string> Pipeline::stage_validate() {
    const GpSurrogate sur = GpSurrogate::load(out_ / "surrogate/surrogate.gp");
    const Dataset val = read_dataset_csv(out_ / "generate/validation.csv");
    const auto names = config_.prior.names();
    std::vector<std::string> artifacts;

    const HypothesisEnsemble h1 = prior_ensemble(config_.prior, config_.n_prior, config_.seeds.validate);
    write_copula_samples_csv(out_ / "validate/prior_samples.csv", names, h1.samples);
    artifacts.push_back("validate/prior_samples.csv");

    std::vector<BayesFactorReport> reports;
    std::vector<AggregatedBf> aggregated;
    const auto modes = config_.active_bias_modes();
    for (std::size_t mi = 0; mi < modes.size(); ++mi) {
        const std::string& mode = modes[mi];
        const MatrixXd chain = stack_chains(out_ / "iuq" / mode, nullptr);
        const CopulaModel cop = fit_copula(chain);
        const HypothesisEnsemble h0 = posterior_ensemble(cop, config_.n_posterior, config_.seeds.validate + 1 + mi);
        const std::string rel = "validate/" + mode + "_posterior_samples.csv";
        write_copula_samples_csv(out_ / rel, names, h0.samples);
        artifacts.push_back(rel);

        BfPolicy policy;
        policy.joint_qoi = config_.joint_qoi;
        BiasModel bias;
        if (config_.include_bias_variance && mode == "with_bias") {
            bias = BiasModel::load(out_ / "iuq" / mode / "bias.gp");
            policy.bias = &bias;
        }
        BayesFactorReport r = estimate_bayes_factor(val, h0, h1, sur, policy);
        r.dataset = config_.dataset;
        r.bias_mode = mode;
        for (const auto& a : aggregate_bf(r, config_.aggregation)) {
            aggregated.push_back(a);
            spdlog::info("validate {} {}: B = {:.4f}", mode, a.qoi, a.bf);
        }
        reports.push_back(std::move(r));
    }
    write_bf_report_csv(out_ / "validate/bf_tests.csv", reports);
    write_bf_aggregate_csv(out_ / "validate/bf_summary.csv", aggregated);
    artifacts.push_back("validate/bf_tests.csv");
    artifacts.push_back("validate/bf_summary.csv");
    return artifacts;
}

std::vector<std::string> Pipeline::stage_predict() {
    const GpSurrogate sur = GpSurrogate::load(out_ / "surrogate/surrogate.gp");
    const Dataset pred = read_dataset_csv(out_ / "generate/prediction.csv");
    if (pred.empty()) throw PipelineError("predict", "the prediction set is empty");
    const auto bfs = read_bf_aggregate_csv(out_ / "validate/bf_summary.csv");

    const MatrixXd prior_samples = prior_ensemble(config_.prior, config_.prediction_samples, config_.seeds.predict).samples;
    std::map<std::string, MatrixXd> posterior;
    std::map<std::string, std::map<std::string, double>> bf;
    const auto modes = config_.active_bias_modes();
    for (std::size_t mi = 0; mi < modes.size(); ++mi) {
        const std::string& mode = modes[mi];
        const CopulaModel cop = fit_copula(stack_chains(out_ / "iuq" / mode, nullptr));
        posterior[mode] = sample_copula(cop, config_.prediction_samples, config_.seeds.predict + 1 + mi);
        for (const auto& a : bfs)
            if (a.dataset == config_.dataset && a.bias_mode == mode) bf[mode][a.qoi] = a.bf;
    }
    const auto ptr = [&](const char* m) -> const MatrixXd* {
        const auto it = posterior.find(m);
        return it == posterior.end() ? nullptr : &it->second;
    };
    PredictionSummary summary = model_ensemble_predict(pred, prior_samples, ptr("with_bias"), ptr("no_bias"),
                                                       bf["no_bias"], bf["with_bias"], sur, config_.std_mode);
    summary.dataset = config_.dataset;
    write_prediction_csv(out_ / "predict/predictions.csv", summary);
    write_error_csv(out_ / "predict/errors.csv", config_.dataset, error_report(summary, pred));
    write_plot_data_csv(out_ / "predict/plot_data.csv", summary, pred);
    return {"predict/predictions.csv", "predict/errors.csv", "predict/plot_data.csv"};
}

std::vector<std::string> Pipeline::stage_report() {
    const Dataset pred = read_dataset_csv(out_ / "generate/prediction.csv");
    if (pred.empty()) throw PipelineError("report", "the prediction set is empty; there is nothing to report");
    const auto bfs = read_bf_aggregate_csv(out_ / "validate/bf_summary.csv");
    const PredictionSummary summary = read_prediction_csv(out_ / "predict/predictions.csv");
    if (summary.rows.empty()) throw PipelineError("report", "no predictions were recorded; rerun `predict`");
    const auto& qois = pred.qoi_names();

    const CsvTable t_bf = bf_table(bfs, qois);
    const CsvTable t_w = weight_table(bfs, qois);
    const CsvTable t_err = error_table(config_.dataset, error_report(summary, pred), qois);
    CsvTable t_post;
    for (const auto& mode : config_.active_bias_modes()) {
        const CsvTable m = read_csv(out_ / "iuq" / mode / "moments.csv");
        PosteriorMoments mom{VectorXd(static_cast<Eigen::Index>(m.rows.size())),
                             VectorXd(static_cast<Eigen::Index>(m.rows.size()))};
        std::vector<std::string> names;
        for (std::size_t i = 0; i < m.rows.size(); ++i) {
            names.push_back(m.rows[i][0]);
            mom.mean[static_cast<Eigen::Index>(i)] = parse_double(m.rows[i][1]);
            mom.std[static_cast<Eigen::Index>(i)] = parse_double(m.rows[i][2]);
        }
        const CsvTable part = posterior_table(config_.dataset, mode, names, mom);
        t_post.header = part.header;
        t_post.rows.insert(t_post.rows.end(), part.rows.begin(), part.rows.end());
    }
    write_csv(out_ / "report/table_posterior.csv", t_post);
    write_csv(out_ / "report/table_bf.csv", t_bf);
    write_csv(out_ / "report/table_weights.csv", t_w);
    write_csv(out_ / "report/table_errors.csv", t_err);

    std::string text;
    text += "Posterior moments\n" + render_table(t_post) + "\n";
    text += "Bayes factors (" + to_string(config_.aggregation) + " mean over validation tests)\n" + render_table(t_bf);
    const auto flags = prior_favored_flags(bfs);
    for (const auto& f : flags) text += "  " + f + "\n";
    if (flags.empty()) text += "  no prior-favored QoIs\n";
    text += "\nBMA weights\n" + render_table(t_w) + "\n";
    text += "Mean absolute prediction error (std mode: " + to_string(summary.mode) + ")\n" + render_table(t_err);
    {
        std::ofstream o(out_ / "report/summary.txt", std::ios::binary | std::ios::trunc);
        o << text;
    }
    summary_ = text;
    return {"report/table_posterior.csv", "report/table_bf.csv", "report/table_weights.csv",
            "report/table_errors.csv", "report/summary.txt"};
}

} // namespace calival
