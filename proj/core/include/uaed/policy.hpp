#pragma once

#include <array>
#include <cstddef>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "uaed/random.hpp"

/// Environment policies: learnable distributions over the environment
/// parameter, their samplers, and their divergence to a fixed prior.
namespace uaed::policy {

struct BetaShape {
    double alpha = 1.0;
    double beta = 1.0;

    double mean() const { return alpha / (alpha + beta); }
    double variance() const {
        const double s = alpha + beta;
        return alpha * beta / (s * s * (s + 1.0));
    }
};

enum class PriorKind { beta, categorical };

struct PriorSpec {
    PriorKind kind = PriorKind::beta;
    BetaShape beta_params{};
    Eigen::VectorXd probabilities;

    static PriorSpec uniform_beta() { return {}; }
    static PriorSpec uniform_categorical(std::size_t k);

    /// Throws ConfigError unless the parameters describe a proper distribution.
    void validate() const;
};

/// K draws from a policy. Continuous policies and atom policies fill
/// `gammas`; discrete policies fill `relaxed` (one simplex vector per draw).
struct PolicySample {
    std::vector<double> gammas;
    std::vector<Eigen::VectorXd> relaxed;
    std::vector<double> log_probs;

    std::size_t size() const { return log_probs.size(); }
};

// ---------------------------------------------------------------------------
// Continuous policy: Beta(alpha, beta) with shapes produced by a small
// network applied to a learnable seed vector.

class ContinuousPolicy {
public:
    static constexpr int kSeedDim = 8;
    static constexpr int kHidden = 64;

    /// Draws network weights from `rng`, then sets the output bias so the
    /// initial distribution is exactly `initial`.
    explicit ContinuousPolicy(Rng& rng, BetaShape initial = {}, double epsilon = 1e-6);

    std::array<double, 2> raw_outputs() const;

    Eigen::VectorXd& parameters() { return params_; }
    const Eigen::VectorXd& parameters() const { return params_; }
    double epsilon() const { return epsilon_; }

    /// Maps (dL/dalpha, dL/dbeta) to dL/dparameters.
    Eigen::VectorXd backprop_shape(double d_alpha, double d_beta) const;

    static std::size_t parameter_count();

private:
    Eigen::VectorXd params_;
    double epsilon_;
};

BetaShape beta_params(const ContinuousPolicy& policy);

PolicySample sample_continuous(const ContinuousPolicy& policy, int count, Rng& rng);

/// Same as above for an explicit shape (no network involved).
PolicySample sample_beta(BetaShape shape, int count, Rng& rng);

double beta_log_density(double x, BetaShape shape);

/// d log p(x) / d(alpha, beta).
std::array<double, 2> beta_score(double x, BetaShape shape);

/// Implicit reparameterization: dx/d(alpha, beta) holding the underlying
/// uniform noise (the CDF value at x) fixed.
std::array<double, 2> beta_pathwise_gradient(double x, BetaShape shape);

double kl_beta(BetaShape p, BetaShape q);
std::array<double, 2> kl_beta_gradient(BetaShape p, BetaShape q);

double softplus(double x);
double softplus_inverse(double y);

// ---------------------------------------------------------------------------
// Discrete policy: Categorical(softmax(logits / tau)), sampled through the
// Gumbel-Softmax relaxation at the same temperature.

class DiscretePolicy {
public:
    DiscretePolicy() = default;
    DiscretePolicy(Eigen::VectorXd logits, double temperature);

    Eigen::VectorXd& logits() { return logits_; }
    const Eigen::VectorXd& logits() const { return logits_; }
    double temperature() const { return temperature_; }
    void set_temperature(double tau);

    Eigen::VectorXd probabilities() const;
    Eigen::VectorXd log_probabilities() const;
    std::size_t size() const { return static_cast<std::size_t>(logits_.size()); }

private:
    Eigen::VectorXd logits_;
    double temperature_ = 1.0;
};

PolicySample sample_discrete(const DiscretePolicy& policy, int count, Rng& rng);

/// Backpropagates dL/d(relaxed sample) to dL/dlogits. The Gumbel noise is
/// held fixed, so only the relaxed vector itself is needed.
Eigen::VectorXd relaxed_sample_backward(const DiscretePolicy& policy, const Eigen::VectorXd& relaxed,
                                        const Eigen::VectorXd& d_relaxed);

/// Linear schedule from 1.0 at epoch 0 to 0.3 at epoch `t0` and after.
double anneal_temperature(int epoch, int t0);

double kl_categorical(const Eigen::VectorXd& p, const Eigen::VectorXd& q);
Eigen::VectorXd kl_categorical_gradient(const DiscretePolicy& policy, const PriorSpec& prior);

// ---------------------------------------------------------------------------
// Frozen finite-support policy. Draw k returns atom (k mod n), so a policy
// with n atoms and K = n enumerates its support once per step.

struct AtomPolicy {
    std::vector<double> atoms;
};

PolicySample sample_atoms(const AtomPolicy& policy, int count);

// ---------------------------------------------------------------------------

using Policy = std::variant<ContinuousPolicy, DiscretePolicy, AtomPolicy>;

/// KL(policy || prior). Returns +infinity when the policy puts mass where
/// the prior has none. Throws ConfigError on a kind mismatch.
double kl_to_prior(const ContinuousPolicy& policy, const PriorSpec& prior);
double kl_to_prior(const DiscretePolicy& policy, const PriorSpec& prior);
double kl_to_prior(const Policy& policy, const PriorSpec& prior);

bool is_trainable(const Policy& policy);

/// Flat view of the trainable parameters (empty for atom policies).
Eigen::VectorXd policy_parameters(const Policy& policy);
void set_policy_parameters(Policy& policy, const Eigen::VectorXd& params);

PolicySample sample(const Policy& policy, int count, Rng& rng);

} // namespace uaed::policy
