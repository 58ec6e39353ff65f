#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

/// Per-environment risks, robust penalties and the assembled training
/// objectives. Everything here works on logits and features that the caller
/// has already computed, so the functions stay independent of the predictor.
namespace uaed::objectives {

enum class Method { ERM, IRM, REx, CORAL, GroupDRO, A_IRM, A_REx, A_CORAL, A_GroupDRO };

Method parse_method(const std::string& name);
const char* to_string(Method method);

bool is_adaptive(Method method);
/// Strips the adaptive prefix: A_IRM -> IRM, ERM -> ERM.
Method base_method(Method method);

enum class PenaltyKind { none, irm, rex, coral };
PenaltyKind penalty_kind(Method method);

struct RobustConfig {
    Method method = Method::ERM;
    double eta = 1e4;        ///< penalty weight after warm-up
    double eta_warmup = 1.0; ///< penalty weight during warm-up
    double beta_kl = 1.0;
    double lambda_ent = 10.0;
    double rho = 0.0;
    int K = 5;
    /// Product of two half-batch scale gradients instead of the squared
    /// full-batch one. The squared form is biased upward by minibatch noise,
    /// which a constant predictor removes.
    bool irm_two_split = true;

    void validate() const;
};

struct RiskVector {
    std::vector<double> risks;
    std::vector<double> gammas;

    std::size_t size() const { return risks.size(); }
    void validate() const;
};

// ---------------------------------------------------------------------------
// Losses on a single binary logit.

enum class LossKind { logistic, squared };

struct Loss {
    LossKind kind = LossKind::logistic;
    /// Values above `cap` are clipped (zero derivative there); 0 disables.
    double cap = 0.0;

    double value(double z, int y) const;
    double d1(double z, int y) const;
    double d2(double z, int y) const;
};

/// Mean loss over the batch. Throws NumericalError tagged with
/// `batch_index` when the result is not finite.
double env_risk(const Eigen::VectorXd& logits, const std::vector<int>& labels, const Loss& loss = {},
                std::size_t batch_index = 0);
Eigen::VectorXd env_risk_grad(const Eigen::VectorXd& logits, const std::vector<int>& labels, const Loss& loss = {});

/// d/dw of the batch risk of w * logits at w = 1.
double irm_scale_gradient(const Eigen::VectorXd& logits, const std::vector<int>& labels, const Loss& loss = {});

/// Squared scale gradient. With `two_split` the batch is halved and the
/// product of the two half-batch gradients is returned instead.
double irm_penalty(const Eigen::VectorXd& logits, const std::vector<int>& labels, const Loss& loss = {},
                   bool two_split = false);
Eigen::VectorXd irm_penalty_grad(const Eigen::VectorXd& logits, const std::vector<int>& labels, const Loss& loss = {},
                                 bool two_split = false);

/// Population variance of the risks (divides by K).
double rex_penalty(std::span<const double> risks);
std::vector<double> rex_penalty_grad(std::span<const double> risks);

/// Unbiased (n - 1) covariance of the rows of `features`.
Eigen::MatrixXd feature_covariance(const Eigen::MatrixXd& features);

/// Mean over unordered pairs of squared Frobenius distances between the
/// feature covariances.
double coral_penalty(const std::vector<Eigen::MatrixXd>& features);
std::vector<Eigen::MatrixXd> coral_penalty_grad(const std::vector<Eigen::MatrixXd>& features);

/// (1/lambda) log sum_k w_k exp(lambda r_k); uniform weights when empty.
double entropic_risk(std::span<const double> risks, double lambda, std::span<const double> weights = {});
/// d entropic_risk / d r_k: the tilted weights.
std::vector<double> entropic_risk_grad(std::span<const double> risks, double lambda,
                                       std::span<const double> weights = {});

double groupdro_surrogate(std::span<const double> risks, double lambda, double rho);

double uaed_objective(const RobustConfig& config, const RiskVector& risks, double penalty, double kl);
double fixed_env_objective(const RobustConfig& config, const RiskVector& per_env_risks, double penalty);

// ---------------------------------------------------------------------------
// Objective over environment views.
//
// The trainer materialises V environment views and evaluates, for each, its
// risk, IRM penalty and features. K policy draws are mapped onto the views by
// a K x V selector: row k is a one-hot for continuous or fixed environments
// and a relaxed Gumbel-Softmax sample for discrete policies, so the k-th
// sampled risk is r_k = sum_v S_kv R_v.

struct ViewInputs {
    Eigen::MatrixXd selector;                ///< K x V
    std::vector<double> risks;               ///< R_v
    std::vector<double> irm;                 ///< per-view IRM penalty (IRM methods only)
    std::vector<Eigen::MatrixXd> features;   ///< per-view features (CORAL methods only)
    std::vector<Eigen::MatrixXd> covariance; ///< filled by evaluate_views when CORAL is active
};

struct ObjectiveTerms {
    double objective = 0.0;
    double mean_risk = 0.0;
    double penalty = 0.0;
    double kl = 0.0;
    std::vector<double> sample_risks; ///< r_k

    std::vector<double> d_view_risk;          ///< dObjective/dR_v
    std::vector<double> d_view_irm;           ///< dObjective/dP_v
    std::vector<Eigen::MatrixXd> d_features;  ///< dObjective/dF_v
    Eigen::MatrixXd d_selector;               ///< dObjective/dS

    /// Score-function credits. When `separable` holds the objective is an
    /// average of per-draw terms and credits[k] is draw k's term; otherwise
    /// credits holds the single joint objective value (without the KL).
    std::vector<double> credits;
    bool separable = true;
};

/// `eta` is the penalty weight in force for this step. `kl` enters only for
/// adaptive methods.
ObjectiveTerms evaluate_views(const RobustConfig& config, double eta, ViewInputs& views, double kl);

} // namespace uaed::objectives
