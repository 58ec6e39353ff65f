#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "uaed/data.hpp"
#include "uaed/nn.hpp"
#include "uaed/policy.hpp"
#include "uaed/random.hpp"

/// Evaluation quantities: accuracy profiles over environments, loss-variance
/// traces and statistics of a learned policy.
namespace uaed::metrics {

struct EnvAccuracyProfile {
    std::vector<data::EnvDescriptor> descriptors;
    std::vector<double> accuracies;

    std::size_t size() const { return accuracies.size(); }
    void validate() const;
};

/// Minimum accuracy; ConfigError on an empty profile.
double worst_case_accuracy(const EnvAccuracyProfile& profile);
double mean_accuracy(const EnvAccuracyProfile& profile);

/// Fraction of samples whose logit sign matches the binary label (logit > 0 predicts 1).
double accuracy(const Eigen::VectorXf& logits, const std::vector<int>& labels);

/// Logits of `model` over a batch, evaluated in chunks.
Eigen::VectorXf predict(const nn::Mlp<float>& model, const data::Batch& batch, std::size_t chunk = 4096);

EnvAccuracyProfile env_accuracy_profile(const nn::Mlp<float>& model, const std::vector<data::EnvDataset>& test_sets);

struct PolicyStats {
    double mean = 0.0;
    double std = 0.0;
    /// Closed-form mean and standard deviation (Beta and categorical policies).
    double analytic_mean = 0.0;
    double analytic_std = 0.0;
    std::size_t samples = 0;
};

/// Monte Carlo statistics of the environment parameter under the policy.
/// For discrete and atom policies `atom_values` maps the atom index to its
/// parameter value (defaults to the index itself); discrete draws use the
/// hard argmax of each relaxed sample.
PolicyStats policy_stats(const policy::Policy& policy, std::size_t n_samples, Rng& rng,
                         const std::vector<double>& atom_values = {});

double entropy(const Eigen::VectorXd& p);
/// entropy(p) / log(k); 1 for a uniform distribution, 0 for k = 1.
double normalized_entropy(const Eigen::VectorXd& p);

/// Population variance of each epoch's per-environment risks.
std::vector<double> loss_variance_trace(const std::vector<std::vector<double>>& per_env_risks);

} // namespace uaed::metrics
