#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "uaed/data.hpp"
#include "uaed/nn.hpp"
#include "uaed/objectives.hpp"
#include "uaed/policy.hpp"
#include "uaed/random.hpp"

/// Alternating optimisation of the predictor and the environment policy.
namespace uaed::trainer {

enum class PolicyChoice {
    automatic, ///< Beta policy for continuous families, categorical for discrete ones
    atoms,     ///< frozen point masses at the training environments
};

enum class Selection {
    final_epoch,    ///< keep the parameters after the last epoch
    best_val_worst, ///< keep the epoch with the best worst-environment validation accuracy
};

enum class LrDecay {
    none,
    inv_sqrt,     ///< lr / sqrt(1 + t)
    robbins_monro ///< lr / (1 + t)^power with power in (0.5, 1]
};

PolicyChoice parse_policy_choice(const std::string& name);
Selection parse_selection(const std::string& name);
LrDecay parse_lr_decay(const std::string& name);
const char* to_string(PolicyChoice v);
const char* to_string(Selection v);
const char* to_string(LrDecay v);

/// Multiplier applied to the base learning rate at optimizer step `t` (0-based).
double lr_scale(LrDecay decay, double power, long long t);

struct TrainConfig {
    objectives::RobustConfig robust;
    double lr_theta = 1e-4;
    /// Policy learning rate = lr_theta * multiplier. A value <= 0 selects 100
    /// for Beta policies and 10 for categorical ones.
    double policy_lr_multiplier = 0.0;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double weight_decay = 1e-5;
    int batch_size = 128;
    int epochs = 30;
    int warmup_epochs = 5;
    int temperature_epochs = 10;
    std::uint64_t seed = 0;

    bool resample_envs = false;
    bool pathwise_gradient = false;
    double baseline_decay = 0.9;
    LrDecay lr_decay = LrDecay::none;
    double lr_decay_power = 0.75;

    Selection selection = Selection::final_epoch;
    int patience = 10;

    std::vector<int> hidden{256, 256};
    nn::Activation activation = nn::Activation::relu;

    PolicyChoice policy = PolicyChoice::automatic;
    /// Initial Beta policy; a concentration <= 0 starts at the prior.
    double init_mean = 0.5;
    double init_concentration = 0.0;
    policy::PriorSpec prior = policy::PriorSpec::uniform_beta();

    void validate() const;
};

/// Everything the trainer needs to know about a benchmark.
struct Problem {
    std::shared_ptr<const data::EnvFamily> family;
    /// Environment parameters used by the fixed baselines and by atom policies.
    std::vector<double> train_envs;
    /// Descriptor value of each atom of a discrete family (e.g. degrees).
    std::vector<double> atom_values;
    /// Fixed environment grid drawn from training data; its risks form the
    /// per-environment risk trace.
    std::vector<data::EnvDataset> probe;
    std::vector<data::EnvDataset> val;
    std::vector<data::EnvDataset> test;

    bool discrete() const { return family && family->atom_count() > 0; }
};

struct PolicySummary {
    std::string kind; ///< "beta", "categorical" or "atoms"
    double alpha = 0.0;
    double beta = 0.0;
    std::vector<double> probabilities;
    std::vector<double> atoms;
    double mean = 0.0; ///< expected environment parameter
    double entropy_ratio = 0.0;
    double temperature = 0.0;
};

PolicySummary summarize_policy(const policy::Policy& pol, const std::vector<double>& atom_values);

struct EpochRecord {
    int epoch = 0;
    long long step = 0;
    double mean_risk = 0.0;
    double objective = 0.0;
    double penalty = 0.0;
    double eta = 0.0;
    std::vector<double> per_env_risk;
    std::vector<double> per_env_acc;
    double risk_variance = 0.0;
    double train_env_variance = 0.0;
    double kl = 0.0;
    PolicySummary policy;
    double grad_norm_theta = 0.0;
    double grad_norm_phi = 0.0;
    double val_worst_acc = 0.0;
    double val_mean_acc = 0.0;
    int aborted_steps = 0;
};

std::string to_jsonl(const EpochRecord& record);
EpochRecord parse_record(const std::string& line);
std::vector<EpochRecord> read_metrics(const std::filesystem::path& path);

struct TrainState {
    nn::Mlp<float> model;
    nn::Adam<float> opt_theta;
    policy::Policy policy = policy::AtomPolicy{};
    nn::Adam<double> opt_phi;
    double baseline = 0.0;
    bool baseline_ready = false;
    Rng rng;
    int epoch = 0;
    long long step = 0;
    std::vector<EpochRecord> trace;
    double best_worst_group_val = -1.0;
    int best_epoch = -1;
    int epochs_without_improvement = 0;
    int consecutive_aborts = 0;
    nn::Mlp<float>::Vector best_theta;
    Eigen::VectorXd best_phi;
};

/// Fresh state: seeds the generator, initialises the network and the policy.
TrainState init_state(const TrainConfig& config, const Problem& problem);

/// Quantities from one forward pass over the sampled environment views.
struct StepContext {
    std::vector<data::Batch> batches;
    std::vector<nn::Mlp<float>::Trace> traces;
    objectives::ViewInputs inputs;
    objectives::ObjectiveTerms terms;
    policy::PolicySample sample;
    double eta = 0.0;
    bool policy_active = false;
};

/// Samples environments and evaluates the objective; throws NumericalError
/// when a risk is not finite.
StepContext prepare_step(TrainState& state, std::span<const std::size_t> rows, const TrainConfig& config,
                         const Problem& problem);

/// One optimizer step on phi with theta held fixed. Returns the squared
/// gradient norm (0 when the policy is frozen or still warming up).
double policy_update(TrainState& state, const StepContext& ctx, const TrainConfig& config);

/// One optimizer step on theta with phi held fixed. Returns the squared
/// gradient norm.
double predictor_update(TrainState& state, const StepContext& ctx, const TrainConfig& config);

struct StepResult {
    bool aborted = false;
    std::string error;
    double objective = 0.0;
    double mean_risk = 0.0;
    double penalty = 0.0;
    double kl = 0.0;
    double sample_variance = 0.0;
    double grad_sq_theta = 0.0;
    double grad_sq_phi = 0.0;
};

/// Full alternating step. A NumericalError aborts the step without touching
/// the parameters; a third consecutive abort throws.
StepResult train_step(TrainState& state, std::span<const std::size_t> rows, const TrainConfig& config,
                      const Problem& problem);

struct TrainResult {
    TrainState state;
    std::vector<double> test_accuracy; ///< per test set, after restoring the selected parameters
    std::vector<std::string> test_labels;
    double worst_test_accuracy = 0.0;
    double mean_test_accuracy = 0.0;
};

using EpochCallback = std::function<void(const TrainState&, const EpochRecord&)>;

/// Runs the remaining epochs of `state` (use init_state for a fresh run).
TrainResult train(TrainState state, const TrainConfig& config, const Problem& problem,
                  const EpochCallback& on_epoch = {});
TrainResult train(const TrainConfig& config, const Problem& problem, const EpochCallback& on_epoch = {});

struct GradientTrend {
    std::vector<double> running_mean;
    double first_quartile_mean = 0.0;
    double last_quartile_mean = 0.0;
    bool violation = false;
};

/// Needs at least 10 entries after `start`.
GradientTrend gradient_norm_trend(const std::vector<double>& squared_norms, std::size_t start = 0);

std::uint64_t parameter_hash(const float* data, std::size_t n);
std::uint64_t parameter_hash(const double* data, std::size_t n);

void save_checkpoint(const TrainState& state, const std::filesystem::path& path);
/// Restores into a state created by init_state with the same configuration.
void load_checkpoint(TrainState& state, const std::filesystem::path& path);

} // namespace uaed::trainer
