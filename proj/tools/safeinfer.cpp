#include <CLI11.hpp>

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "safeinfer/errors.hpp"
#include "safeinfer/persistence.hpp"
#include "safeinfer/world_sim.hpp"

namespace fs = std::filesystem;
using namespace safeinfer;

namespace {

enum Exit { kOk = 0, kUsage = 2, kData = 3, kRuntime = 4 };

// Thrown for model/config dimension mismatches.
struct MismatchError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Thrown for bad arguments detected after parsing.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

constexpr const char* kDatasetFile = "dataset.csv";
constexpr const char* kTraceFile = "trace.csv";
constexpr const char* kSummaryFile = "summary.json";
constexpr const char* kConfigCopy = "config.json";

EpisodeConfig read_config(const fs::path& path) {
    if (!fs::exists(path)) {
        throw UsageError("config file not found: " + path.string());
    }
    return load_config(path);
}

void prepare_out(const fs::path& dir, bool force) {
    if (fs::exists(dir / kManifestName) && !force) {
        throw UsageError(dir.string() + " already holds a run (manifest.json); pass --force to overwrite");
    }
    fs::create_directories(dir);
}

std::string agent_model_name(std::size_t i) { return "agent_" + std::to_string(i + 1) + ".json"; }

std::vector<RbfNetwork> read_models(const fs::path& dir, const EpisodeConfig& cfg) {
    if (!fs::is_directory(dir)) {
        throw UsageError("model directory not found: " + dir.string());
    }
    if (fs::exists(dir / kManifestName)) {
        verify_manifest(dir);
    }
    const Eigen::Index state_dim = 3 + 2 * static_cast<Eigen::Index>(cfg.agents.size());
    std::vector<RbfNetwork> nets;
    for (std::size_t i = 0; i < cfg.agents.size(); ++i) {
        const fs::path p = dir / agent_model_name(i);
        if (!fs::exists(p)) {
            throw MismatchError("config has " + std::to_string(cfg.agents.size()) + " agents but " + p.string() +
                                " is missing");
        }
        RbfNetwork net;
        try {
            net = load_network(p);
        } catch (const SchemaError& e) {
            throw MismatchError(p.string() + ": " + e.what());
        } catch (const InputError& e) {
            throw MismatchError(p.string() + ": " + e.what());
        }
        if (net.input_dim() != state_dim || net.output_dim() != 2) {
            throw MismatchError(p.string() + " maps R^" + std::to_string(net.input_dim()) + " -> R^" +
                                std::to_string(net.output_dim()) + ", config needs R^" + std::to_string(state_dim) +
                                " -> R^2");
        }
        nets.push_back(std::move(net));
    }
    if (fs::exists(dir / agent_model_name(cfg.agents.size()))) {
        throw MismatchError("model directory holds more networks than the config has agents");
    }
    return nets;
}

// Writes trace, summary and manifest for one episode into dir.
void write_episode(const fs::path& dir, const EpisodeConfig& cfg, const EpisodeResult& result, const std::string& kind) {
    fs::create_directories(dir);
    save_trace(dir / kTraceFile, result.trace, cfg.agents.size());
    write_json_file(dir / kSummaryFile, to_json(result.summary));
    save_config(dir / kConfigCopy, cfg);
    RunManifest m;
    m.kind = kind;
    m.config_digest = config_digest(cfg);
    m.seeds = {cfg.seed};
    write_manifest(dir, m, {kTraceFile, kSummaryFile, kConfigCopy});
}

EpisodeConfig seeded(const EpisodeConfig& cfg, std::optional<std::uint64_t> seed) {
    return seed ? randomized_start(cfg, *seed) : cfg;
}

int cmd_collect(const fs::path& config, const fs::path& out, bool force) {
    const EpisodeConfig cfg = resolve(read_config(config));
    prepare_out(out, force);
    const auto rows = collect_offline(cfg);
    save_dataset(out / kDatasetFile, rows);
    save_config(out / kConfigCopy, cfg);
    RunManifest m;
    m.kind = "collect";
    m.config_digest = config_digest(cfg);
    m.seeds = {cfg.seed};
    write_manifest(out, m, {kDatasetFile, kConfigCopy});
    std::printf("collected %zu rows from %zu episodes into %s\n", rows.size(), cfg.collection.references.size(),
                (out / kDatasetFile).c_str());
    return kOk;
}

int cmd_train(const fs::path& data, const fs::path& out, const OfflineTrainingOptions& opts, bool force) {
    const fs::path file = fs::is_directory(data) ? data / kDatasetFile : data;
    if (!fs::exists(file)) {
        throw UsageError("dataset not found: " + file.string());
    }
    if (fs::is_directory(data) && fs::exists(data / kManifestName)) {
        verify_manifest(data);
    }
    std::vector<DatasetRow> rows;
    try {
        rows = load_dataset(file);
    } catch (const SchemaError& e) {
        throw MismatchError(file.string() + ": " + e.what());
    }
    const std::size_t agents = rows.empty() ? 0 : rows.front().derivatives.size();
    prepare_out(out, force);

    nlohmann::json summary = {{"format_version", kFormatVersion},
                              {"kind", "training_summary"},
                              {"samples", rows.size()},
                              {"neurons", opts.neurons},
                              {"width", opts.width},
                              {"ridge", opts.ridge},
                              {"seed", opts.seed},
                              {"agents", nlohmann::json::array()}};
    std::vector<std::string> files;
    for (std::size_t i = 0; i < agents; ++i) {
        const auto samples = agent_samples(rows, i);
        const RbfNetwork net = train_offline(samples, opts);
        const double rms = rms_residual(net, samples);
        save_network(out / agent_model_name(i), net);
        files.push_back(agent_model_name(i));
        summary["agents"].push_back({{"agent", i + 1}, {"rms_residual", rms}, {"model", agent_model_name(i)}});
        std::printf("agent %zu: %zu samples, rms residual %.6g\n", i + 1, samples.size(), rms);
    }
    if (agents == 0 && rows.size() < static_cast<std::size_t>(opts.neurons)) {
        throw InsufficientDataError("dataset has " + std::to_string(rows.size()) + " rows, fewer than " +
                                    std::to_string(opts.neurons) + " neurons");
    }
    write_json_file(out / "training_summary.json", summary);
    files.push_back("training_summary.json");
    RunManifest m;
    m.kind = "train";
    m.config_digest = sha256_file(file);
    m.seeds = {opts.seed};
    write_manifest(out, m, files);
    return kOk;
}

int cmd_simulate(const fs::path& config, const fs::path& models, const fs::path& out, const std::string& mode,
                 std::optional<std::uint64_t> seed, bool force) {
    EpisodeConfig cfg = read_config(config);
    if (!mode.empty()) {
        cfg.inference = inference_mode_from_string(mode);
    }
    cfg = resolve(seeded(cfg, seed));
    const auto nets = read_models(models, cfg);
    prepare_out(out, force);
    const EpisodeResult result = run_episode(cfg, nets);
    write_episode(out, cfg, result, "simulate");
    const auto& s = result.summary;
    std::printf("steps %zu, infeasible %zu, collision %s, min distance %.4f\n", s.steps, s.infeasible_steps,
                s.collision ? "yes" : "no", s.min_distance);
    for (std::size_t i = 0; i < s.agents.size(); ++i) {
        std::printf("agent %zu: coverage %.4f, mean estimation error %.4g\n", i + 1, s.agents[i].coverage,
                    s.agents[i].mean_est_err);
    }
    return kOk;
}

std::string trial_name(std::size_t t) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "trial_%03zu", t);
    return buf;
}

int cmd_batch(const fs::path& config, const fs::path& models, const fs::path& out, std::size_t trials,
              std::uint64_t seed, unsigned jobs, bool force) {
    if (trials == 0) {
        throw UsageError("--trials must be at least 1");
    }
    const EpisodeConfig base = resolve(read_config(config));
    const auto nets = read_models(models, base);
    prepare_out(out, force);

    std::atomic<std::size_t> next{0};
    std::mutex err_mutex;
    std::exception_ptr failure;
    auto worker = [&] {
        for (std::size_t t = next++; t < trials; t = next++) {
            try {
                const EpisodeConfig cfg = resolve(randomized_start(base, seed + t));
                write_episode(out / trial_name(t), cfg, run_episode(cfg, nets), "batch-trial");
            } catch (...) {
                std::lock_guard lock(err_mutex);
                if (!failure) {
                    failure = std::current_exception();
                }
            }
        }
    };
    const unsigned n = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(trials)));
    std::vector<std::thread> pool;
    for (unsigned i = 0; i < n; ++i) {
        pool.emplace_back(worker);
    }
    for (auto& th : pool) {
        th.join();
    }
    if (failure) {
        std::rethrow_exception(failure);
    }

    std::vector<std::string> files;
    RunManifest m;
    m.kind = "batch";
    m.config_digest = config_digest(base);
    for (std::size_t t = 0; t < trials; ++t) {
        files.push_back(trial_name(t) + "/" + kManifestName);
        m.seeds.push_back(seed + t);
    }
    write_manifest(out, m, files);
    std::printf("wrote %zu trials to %s\n", trials, out.c_str());
    return kOk;
}

double quantile(std::vector<double> v, double p) {
    if (v.empty()) {
        return 0.0;
    }
    std::sort(v.begin(), v.end());
    const double pos = p * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(pos);
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

int cmd_report(const fs::path& in, const std::optional<fs::path>& json_out) {
    if (!fs::is_directory(in)) {
        throw UsageError("input directory not found: " + in.string());
    }
    std::vector<fs::path> runs;
    if (fs::exists(in / kSummaryFile)) {
        runs.push_back(in);
    }
    for (const auto& entry : fs::directory_iterator(in)) {
        if (entry.is_directory() && fs::exists(entry.path() / kSummaryFile)) {
            runs.push_back(entry.path());
        }
    }
    if (runs.empty()) {
        throw UsageError("no run summaries under " + in.string());
    }
    std::sort(runs.begin(), runs.end());
    if (fs::exists(in / kManifestName)) {
        verify_manifest(in);
    }

    std::vector<EpisodeSummary> sums;
    for (const auto& r : runs) {
        verify_manifest(r);
        sums.push_back(summary_from_json(read_json_file(r / kSummaryFile)));
    }
    const std::size_t agents = sums.front().agents.size();
    std::size_t collisions = 0;
    std::size_t infeasible = 0;
    std::vector<double> min_d;
    std::vector<std::vector<double>> cov(agents);
    std::vector<std::vector<double>> err(agents);
    for (const auto& s : sums) {
        if (s.agents.size() != agents) {
            throw MismatchError("runs disagree on the number of agents");
        }
        collisions += s.collision ? 1 : 0;
        infeasible += s.infeasible_steps;
        min_d.push_back(s.min_distance);
        for (std::size_t i = 0; i < agents; ++i) {
            cov[i].push_back(s.agents[i].coverage);
            err[i].push_back(s.agents[i].mean_est_err);
        }
    }

    std::printf("runs                 %zu\n", sums.size());
    std::printf("collision episodes   %zu\n", collisions);
    std::printf("infeasible steps     %zu\n", infeasible);
    std::printf("min distance         %.4f\n", *std::min_element(min_d.begin(), min_d.end()));
    std::printf("%-6s %10s %10s %10s %12s %12s %12s\n", "agent", "cov_min", "cov_mean", "cov_max", "err_p50",
                "err_p90", "err_max");
    nlohmann::json report = {{"format_version", kFormatVersion},
                             {"kind", "report"},
                             {"runs", sums.size()},
                             {"collision_episodes", collisions},
                             {"infeasible_steps", infeasible},
                             {"min_distance", *std::min_element(min_d.begin(), min_d.end())},
                             {"agents", nlohmann::json::array()}};
    for (std::size_t i = 0; i < agents; ++i) {
        double mean = 0.0;
        for (double c : cov[i]) {
            mean += c;
        }
        mean /= static_cast<double>(cov[i].size());
        const double cmin = *std::min_element(cov[i].begin(), cov[i].end());
        const double cmax = *std::max_element(cov[i].begin(), cov[i].end());
        std::printf("%-6zu %10.4f %10.4f %10.4f %12.4g %12.4g %12.4g\n", i + 1, cmin, mean, cmax,
                    quantile(err[i], 0.5), quantile(err[i], 0.9), quantile(err[i], 1.0));
        report["agents"].push_back({{"coverage_min", cmin},
                                    {"coverage_mean", mean},
                                    {"coverage_max", cmax},
                                    {"est_err_p50", quantile(err[i], 0.5)},
                                    {"est_err_p90", quantile(err[i], 0.9)},
                                    {"est_err_max", quantile(err[i], 1.0)}});
    }
    if (json_out) {
        write_json_file(*json_out, report);
    }
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Safe control among agents with unknown dynamics: data collection, training, simulation"};
    app.require_subcommand(1, 1);

    fs::path config, out, data, models, in;
    bool force = false;

    auto* collect = app.add_subcommand("collect", "Collect an offline dataset with a conservative barrier filter");
    collect->add_option("--config", config, "Episode config (JSON)")->required();
    collect->add_option("--out", out, "Output directory")->required();
    collect->add_flag("--force", force, "Overwrite an existing run");

    OfflineTrainingOptions opts;
    opts.seed = 0;
    auto* train = app.add_subcommand("train", "Fit one network per agent from a collected dataset");
    train->add_option("--data", data, "Dataset directory or CSV file")->required();
    train->add_option("--neurons", opts.neurons, "Hidden neurons M")->default_val(8)->check(CLI::PositiveNumber);
    train->add_option("--width", opts.width, "Gaussian width")->default_val(0.85)->check(CLI::PositiveNumber);
    train->add_option("--ridge", opts.ridge, "Ridge regularization")->default_val(0.0)->check(CLI::NonNegativeNumber);
    train->add_option("--seed", opts.seed, "k-means seed")->default_val(0);
    train->add_option("--out", out, "Output directory for the networks")->required();
    train->add_flag("--force", force, "Overwrite an existing run");

    std::string mode;
    std::optional<std::uint64_t> sim_seed;
    auto* simulate = app.add_subcommand("simulate", "Run one closed-loop episode");
    simulate->add_option("--config", config, "Episode config (JSON)")->required();
    simulate->add_option("--models", models, "Directory holding agent_<i>.json networks")->required();
    simulate->add_option("--out", out, "Output directory")->required();
    simulate->add_option("--inference", mode, "Inference scheme")
        ->check(CLI::IsMember({"combined", "offline-only", "online-only"}));
    simulate->add_option("--seed", sim_seed, "Randomize starts from the configured boxes with this seed");
    simulate->add_flag("--force", force, "Overwrite an existing run");

    std::size_t trials = 20;
    std::uint64_t batch_seed = 0;
    unsigned jobs = std::max(1u, std::thread::hardware_concurrency());
    auto* batch = app.add_subcommand("batch", "Run seeded episodes with randomized starts");
    batch->add_option("--config", config, "Episode config (JSON)")->required();
    batch->add_option("--models", models, "Directory holding agent_<i>.json networks")->required();
    batch->add_option("--trials", trials, "Number of episodes")->default_val(20);
    batch->add_option("--seed", batch_seed, "Seed of the first trial; trial t uses seed + t")->default_val(0);
    batch->add_option("--jobs", jobs, "Episodes run in parallel");
    batch->add_option("--out", out, "Output directory")->required();
    batch->add_flag("--force", force, "Overwrite an existing run");

    std::optional<fs::path> report_json;
    auto* report = app.add_subcommand("report", "Verify and aggregate run summaries");
    report->add_option("--in", in, "Run or batch directory")->required();
    report->add_option("--json", report_json, "Also write the aggregate as JSON");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kUsage;
    }

    try {
        if (*collect) {
            return cmd_collect(config, out, force);
        }
        if (*train) {
            return cmd_train(data, out, opts, force);
        }
        if (*simulate) {
            return cmd_simulate(config, models, out, mode, sim_seed, force);
        }
        if (*batch) {
            return cmd_batch(config, models, out, trials, batch_seed, jobs, force);
        }
        return cmd_report(in, report_json);
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kUsage;
    } catch (const ParseError& e) {
        std::cerr << "parse error: " << e.what() << "\n";
        return kUsage;
    } catch (const SchemaError& e) {
        std::cerr << "schema error: " << e.what() << "\n";
        return kUsage;
    } catch (const InputError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kUsage;
    } catch (const MismatchError& e) {
        std::cerr << "model mismatch: " << e.what() << "\n";
        return kData;
    } catch (const InsufficientDataError& e) {
        std::cerr << "insufficient data: " << e.what() << "\n";
        return kData;
    } catch (const DegenerateDataError& e) {
        std::cerr << "degenerate data: " << e.what() << "\n";
        return kData;
    } catch (const IntegrityError& e) {
        std::cerr << "integrity error: " << e.what() << "\n";
        return kData;
    } catch (const std::exception& e) {
        std::cerr << "runtime fault: " << e.what() << "\n";
        return kRuntime;
    }
}
