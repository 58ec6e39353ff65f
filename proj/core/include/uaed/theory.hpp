#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "uaed/random.hpp"

/// Bound calculators for policy-averaged risk and their numerical checks on
/// finite environment sets.
namespace uaed::theory {

/// Finite set of environments with a policy `pi` over them.
struct FiniteEnvInstance {
    Eigen::VectorXd pi;
    Eigen::VectorXd risks;
    Eigen::VectorXd f_values; ///< optional, same length as pi

    std::size_t size() const { return static_cast<std::size_t>(pi.size()); }
    /// Throws ConfigError unless pi is a strictly positive probability vector
    /// and risks (and f_values, if set) lie in [0, 1].
    void validate() const;
};

struct BoundReport {
    std::string name;
    double lhs = 0.0;
    double rhs = 0.0;
    double slack = 0.0;
    bool satisfied = false;
    std::size_t instances = 1;

    static BoundReport make(std::string name, double lhs, double rhs, std::size_t instances = 1);
};

inline constexpr double kReportTolerance = 1e-9;

double pac_bayes_bound(double emp_risk, double kl_qm, std::size_t n, double delta);
double transport_bound(double mean_under_pi, double kl_g_pi);
double robust_generalization_bound(double emp_risk, double kl_qm, std::size_t n, double delta, double rho);

/// KL(g || pi) for probability vectors; +infinity if g has mass where pi has none.
double kl_divergence(const Eigen::VectorXd& g, const Eigen::VectorXd& pi);

/// sup { E_g[r] : KL(g || pi) <= rho } by direct search over the primal.
double worst_case_kl_ball(const FiniteEnvInstance& instance, double rho);

/// Search bracket for the dual temperature.
struct DualOptions {
    double lambda_min = 1e-3;
    double lambda_max = 1e3;
    int iterations = 200;
};

/// inf over lambda > 0 of (rho + log E_pi exp(lambda r)) / lambda.
double entropic_dual(const FiniteEnvInstance& instance, double rho, const DualOptions& options = {});

struct LoaLa {
    double loa = 0.0;
    double la = 0.0;
    double gap = 0.0;
};

LoaLa loa_la_gap(const FiniteEnvInstance& instance);

/// max r <= (1/lambda) log((1/k) sum exp(lambda r)) + log(k) / lambda.
BoundReport max_risk_lse_check(const FiniteEnvInstance& instance, double lambda);

// ---------------------------------------------------------------------------
// Probability-level check of the PAC-Bayes bound on a synthetic problem
// with known true risks: a grid of (hypothesis, environment) pairs with
// Bernoulli losses, a uniform prior M and a posterior Q.

enum class PosteriorKind {
    gibbs,   ///< data-dependent Q proportional to M exp(-temperature * n * empirical risk)
    fixed,   ///< a fixed non-uniform Q chosen before seeing data
    prior,   ///< Q = M (zero divergence)
};

struct PacBayesSetup {
    std::size_t n = 200;
    double delta = 0.05;
    int trials = 2000;
    int hypotheses = 4;
    int environments = 5;
    PosteriorKind posterior = PosteriorKind::gibbs;
    double gibbs_temperature = 0.5;
    std::uint64_t seed = 0;
};

struct PacBayesCheck {
    double violation_rate = 0.0;
    double allowed_rate = 0.0; ///< delta + 2 sqrt(delta (1 - delta) / trials)
    double mean_slack = 0.0;   ///< mean of (bound - true Q-risk)
    int trials = 0;
};

PacBayesCheck empirical_pac_bayes_check(const PacBayesSetup& setup);

// ---------------------------------------------------------------------------

struct SuiteOptions {
    std::uint64_t seed = 0;
    int dual_instances = 200;
    int random_trials = 10000;
    int pac_trials = 2000;
    double delta = 0.05;
    DualOptions dual;
};

/// Runs every check and returns one report per check.
std::vector<BoundReport> run_verification(const SuiteOptions& options = {});

/// Random instance with k atoms: Dirichlet(1) policy floored away from
/// zero, uniform risks and f values.
FiniteEnvInstance random_instance(std::size_t k, Rng& rng);

} // namespace uaed::theory
