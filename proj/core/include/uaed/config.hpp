#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "uaed/trainer.hpp"

/// Run configuration: a sectioned key = value text format with strict keys.
///
///     [run]
///     dataset = colored_mnist
///     seeds = 0, 1, 2
///     [robust]
///     method = A_IRM
///
/// Lines starting with '#' or ';' are comments. Lists are comma separated.
namespace uaed::config {

enum class DatasetKind { colored_mnist, rotated_mnist, synthetic_groups };

DatasetKind parse_dataset(const std::string& name);
const char* to_string(DatasetKind kind);

struct RunConfig {
    trainer::TrainConfig train;
    DatasetKind dataset = DatasetKind::colored_mnist;
    std::string data_dir = "data/mnist";
    std::string out_dir = "runs";
    std::vector<std::uint64_t> seeds{0, 1, 2};

    // MNIST benchmarks
    std::size_t subsample = 20000;
    std::size_t probe_size = 2000;
    std::size_t val_size = 2000;
    std::size_t test_size = 10000;
    int downsample = 2;
    double label_noise = 0.25;
    /// Training environments of the fixed baselines; empty selects the
    /// benchmark default ({0.1, 0.2}, angle indices {0, 2}, or the
    /// unshifted data for synthetic groups).
    std::vector<double> train_envs;

    // Synthetic groups
    std::size_t group_n = 5000;
    std::size_t group_val_n = 2000;
    std::size_t group_test_n = 4000;
    double spurious_corr = 0.95;
    double test_corr = 0.5;

    void validate() const;
    /// train_envs with the benchmark default filled in.
    std::vector<double> resolved_train_envs() const;
};

/// Parses and validates a configuration. Unknown sections or keys, malformed
/// values and violated constraints throw ConfigError naming the offending
/// "section.key".
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);

/// Canonical text form listing every key; parse_config(serialize_config(c))
/// reproduces c exactly.
std::string serialize_config(const RunConfig& config);

/// Applies UAED_DATA_DIR and UAED_OUT_DIR when set.
void apply_env_overrides(RunConfig& config);

/// Short hex digest of the configuration, excluding seeds and directories.
std::string config_hash(const RunConfig& config);

/// Configs compare equal when their canonical forms match.
bool same_values(const RunConfig& a, const RunConfig& b);

} // namespace uaed::config
