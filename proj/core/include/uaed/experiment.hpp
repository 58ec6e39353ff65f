#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "uaed/config.hpp"
#include "uaed/trainer.hpp"

/// Benchmark construction and run bookkeeping shared by the command-line
/// tool and the acceptance suite.
namespace uaed::experiment {

/// Loads or generates the data for `config` and wires up the environment
/// family, the probe grid, validation and test sets. `seed` drives every
/// random choice made while building the data.
trainer::Problem build_problem(const config::RunConfig& config, std::uint64_t seed);

struct EnvResult {
    std::string label;
    double value = 0.0;
    double accuracy = 0.0;
};

struct RunSummary {
    std::string method;
    std::string dataset;
    std::uint64_t seed = 0;
    bool baseline = false; ///< fixed-environment method, used as a reference for gains
    std::string config_hash;
    std::vector<double> train_envs;
    double worst_test_acc = 0.0;
    double mean_test_acc = 0.0;
    std::vector<EnvResult> test_profile;
    trainer::PolicySummary policy;
    double policy_mc_mean = 0.0;
    double policy_mc_std = 0.0;
    double final_risk_variance = 0.0;
    double final_train_env_variance = 0.0;
    int epochs_run = 0;
    int best_epoch = -1;
    bool gradient_trend_violation = false;
    double runtime_seconds = 0.0;
};

std::filesystem::path run_directory(const config::RunConfig& config, std::uint64_t seed);

/// Trains one seed. Writes metrics.jsonl, checkpoint.json, summary.json,
/// config.ini and profile.tsv into run_directory(config, seed). With
/// `resume`, a finished run is read back instead of retrained and an
/// interrupted one continues from its checkpoint. `log` may be null.
RunSummary run_seed(const config::RunConfig& config, std::uint64_t seed, std::ostream* log, bool resume = true);

/// Summary of a finished run directory.
RunSummary read_summary(const std::filesystem::path& run_dir);
void write_summary(const RunSummary& summary, const std::filesystem::path& path);

struct Aggregate {
    std::string method;
    std::string dataset;
    bool baseline = false;
    std::size_t runs = 0;
    double worst_mean = 0.0;
    double worst_std = 0.0;
    double avg_mean = 0.0;
    double avg_std = 0.0;
    double policy_mean = 0.0;
    double policy_std = 0.0;
    std::vector<EnvResult> profile_mean;
};

/// Mean and sample standard deviation over seeds.
Aggregate aggregate(const std::vector<RunSummary>& runs);
void write_aggregate(const Aggregate& agg, const std::vector<RunSummary>& runs, const std::filesystem::path& path);

/// Sweep table: one row per method, plus the gain in worst-case accuracy
/// over the IRM row when there is one.
std::string sweep_table(const std::vector<Aggregate>& rows);

/// Re-evaluates a finished run from its checkpoint on freshly built test sets.
RunSummary evaluate_run(const std::filesystem::path& run_dir, const std::string& data_dir_override = {});

} // namespace uaed::experiment
