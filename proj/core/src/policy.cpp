#include "uaed/policy.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include <boost/math/special_functions/beta.hpp>
#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/gamma.hpp>
#include <boost/math/special_functions/trigamma.hpp>
#include <boost/random/beta_distribution.hpp>
#include <boost/random/normal_distribution.hpp>
#include <boost/random/uniform_real_distribution.hpp>

#include "uaed/error.hpp"

namespace uaed::policy {

namespace {

constexpr int kSeed = ContinuousPolicy::kSeedDim;
constexpr int kHid = ContinuousPolicy::kHidden;

// Parameter layout: seed | W1 (hidden x seed, row-major) | b1 | W2 (2 x hidden) | b2
constexpr std::size_t kSeedOff = 0;
constexpr std::size_t kW1Off = kSeedOff + kSeed;
constexpr std::size_t kB1Off = kW1Off + kHid * kSeed;
constexpr std::size_t kW2Off = kB1Off + kHid;
constexpr std::size_t kB2Off = kW2Off + 2 * kHid;
constexpr std::size_t kParamCount = kB2Off + 2;

using RowMap = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

struct Hidden {
    Eigen::VectorXd h;
    std::array<double, 2> raw;
};

Hidden forward(const Eigen::VectorXd& p) {
    const RowMap w1(p.data() + kW1Off, kHid, kSeed);
    const RowMap w2(p.data() + kW2Off, 2, kHid);
    const Eigen::Map<const Eigen::VectorXd> seed(p.data() + kSeedOff, kSeed);
    const Eigen::Map<const Eigen::VectorXd> b1(p.data() + kB1Off, kHid);
    Hidden out;
    out.h = (w1 * seed + b1).array().tanh().matrix();
    const Eigen::Vector2d raw = w2 * out.h + Eigen::Vector2d(p[kB2Off], p[kB2Off + 1]);
    out.raw = {raw[0], raw[1]};
    return out;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double log_beta_fn(double a, double b) {
    return boost::math::lgamma(a) + boost::math::lgamma(b) - boost::math::lgamma(a + b);
}

Eigen::VectorXd log_softmax(const Eigen::VectorXd& s) {
    const double m = s.maxCoeff();
    const double lse = m + std::log((s.array() - m).exp().sum());
    return (s.array() - lse).matrix();
}

double clamp_open_unit(double x) {
    constexpr double lo = std::numeric_limits<double>::min();
    constexpr double hi = 1.0 - std::numeric_limits<double>::epsilon() / 2.0;
    return std::clamp(x, lo, hi);
}

} // namespace

double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }

double softplus_inverse(double y) {
    if (!(y > 0.0)) {
        throw ConfigError("softplus_inverse requires a positive argument");
    }
    return y > 30.0 ? y : std::log(std::expm1(y));
}

PriorSpec PriorSpec::uniform_categorical(std::size_t k) {
    PriorSpec p;
    p.kind = PriorKind::categorical;
    p.probabilities = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(k), 1.0 / static_cast<double>(k));
    return p;
}

void PriorSpec::validate() const {
    if (kind == PriorKind::beta) {
        if (!(beta_params.alpha > 0.0) || !(beta_params.beta > 0.0)) {
            throw ConfigError("beta prior shapes must be positive");
        }
        return;
    }
    if (probabilities.size() == 0) {
        throw ConfigError("categorical prior is empty");
    }
    if ((probabilities.array() <= 0.0).any()) {
        throw ConfigError("categorical prior probabilities must be strictly positive");
    }
    if (std::abs(probabilities.sum() - 1.0) > 1e-9) {
        throw ConfigError("categorical prior probabilities must sum to 1");
    }
}

// ---------------------------------------------------------------------------

ContinuousPolicy::ContinuousPolicy(Rng& rng, BetaShape initial, double epsilon)
    : params_(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(kParamCount))), epsilon_(epsilon) {
    if (!(epsilon > 0.0)) {
        throw PolicyConfigError("policy epsilon must be positive");
    }
    if (!(initial.alpha > epsilon) || !(initial.beta > epsilon)) {
        throw PolicyConfigError("initial Beta shapes must exceed epsilon");
    }
    boost::random::normal_distribution<double> normal(0.0, 1.0);
    for (std::size_t i = kSeedOff; i < kW1Off; ++i) {
        params_[static_cast<Eigen::Index>(i)] = normal(rng);
    }
    const double w1_scale = 1.0 / std::sqrt(static_cast<double>(kSeed));
    for (std::size_t i = kW1Off; i < kB1Off; ++i) {
        params_[static_cast<Eigen::Index>(i)] = w1_scale * normal(rng);
    }
    const double bound = 1.0 / std::sqrt(static_cast<double>(kHid));
    boost::random::uniform_real_distribution<double> uniform(-bound, bound);
    for (std::size_t i = kW2Off; i < kB2Off; ++i) {
        params_[static_cast<Eigen::Index>(i)] = uniform(rng);
    }
    const Hidden h = forward(params_);
    params_[kB2Off] = softplus_inverse(initial.alpha - epsilon_) - h.raw[0];
    params_[kB2Off + 1] = softplus_inverse(initial.beta - epsilon_) - h.raw[1];
}

std::size_t ContinuousPolicy::parameter_count() { return kParamCount; }

std::array<double, 2> ContinuousPolicy::raw_outputs() const { return forward(params_).raw; }

Eigen::VectorXd ContinuousPolicy::backprop_shape(double d_alpha, double d_beta) const {
    const Hidden h = forward(params_);
    const Eigen::Vector2d d_raw(d_alpha * sigmoid(h.raw[0]), d_beta * sigmoid(h.raw[1]));

    Eigen::VectorXd grad = Eigen::VectorXd::Zero(params_.size());
    const RowMap w1(params_.data() + kW1Off, kHid, kSeed);
    const RowMap w2(params_.data() + kW2Off, 2, kHid);
    const Eigen::Map<const Eigen::VectorXd> seed(params_.data() + kSeedOff, kSeed);

    grad[kB2Off] = d_raw[0];
    grad[kB2Off + 1] = d_raw[1];
    Eigen::Map<Eigen::Matrix<double, 2, kHid, Eigen::RowMajor>> g_w2(grad.data() + kW2Off);
    g_w2 = d_raw * h.h.transpose();

    const Eigen::VectorXd d_h = w2.transpose() * d_raw;
    const Eigen::VectorXd d_pre = d_h.array() * (1.0 - h.h.array().square());
    grad.segment(kB1Off, kHid) = d_pre;
    Eigen::Map<Eigen::Matrix<double, kHid, kSeed, Eigen::RowMajor>> g_w1(grad.data() + kW1Off);
    g_w1 = d_pre * seed.transpose();
    grad.segment(kSeedOff, kSeed) = w1.transpose() * d_pre;
    return grad;
}

BetaShape beta_params(const ContinuousPolicy& policy) {
    const auto raw = policy.raw_outputs();
    if (!std::isfinite(raw[0]) || !std::isfinite(raw[1])) {
        throw PolicyNumericalError("policy network produced a non-finite output");
    }
    return {softplus(raw[0]) + policy.epsilon(), softplus(raw[1]) + policy.epsilon()};
}

PolicySample sample_beta(BetaShape shape, int count, Rng& rng) {
    if (count < 1) {
        throw ConfigError("sample count must be at least 1");
    }
    PolicySample out;
    out.gammas.reserve(static_cast<std::size_t>(count));
    out.log_probs.reserve(static_cast<std::size_t>(count));
    for (int k = 0; k < count; ++k) {
        boost::random::beta_distribution<double> dist(shape.alpha, shape.beta);
        const double g = clamp_open_unit(dist(rng));
        out.gammas.push_back(g);
        out.log_probs.push_back(beta_log_density(g, shape));
    }
    return out;
}

PolicySample sample_continuous(const ContinuousPolicy& policy, int count, Rng& rng) {
    return sample_beta(beta_params(policy), count, rng);
}

double beta_log_density(double x, BetaShape s) {
    return (s.alpha - 1.0) * std::log(x) + (s.beta - 1.0) * std::log1p(-x) - log_beta_fn(s.alpha, s.beta);
}

std::array<double, 2> beta_score(double x, BetaShape s) {
    const double common = boost::math::digamma(s.alpha + s.beta);
    return {std::log(x) - boost::math::digamma(s.alpha) + common,
            std::log1p(-x) - boost::math::digamma(s.beta) + common};
}

std::array<double, 2> beta_pathwise_gradient(double x, BetaShape s) {
    const double density = std::exp(beta_log_density(x, s));
    const double ha = 1e-5 * std::max(1.0, s.alpha);
    const double hb = 1e-5 * std::max(1.0, s.beta);
    const double a_lo = std::max(s.alpha - ha, s.alpha * 0.5);
    const double b_lo = std::max(s.beta - hb, s.beta * 0.5);
    const double dF_da =
        (boost::math::ibeta(s.alpha + ha, s.beta, x) - boost::math::ibeta(a_lo, s.beta, x)) / (s.alpha + ha - a_lo);
    const double dF_db =
        (boost::math::ibeta(s.alpha, s.beta + hb, x) - boost::math::ibeta(s.alpha, b_lo, x)) / (s.beta + hb - b_lo);
    return {-dF_da / density, -dF_db / density};
}

double kl_beta(BetaShape p, BetaShape q) {
    const double a = p.alpha, b = p.beta, a0 = q.alpha, b0 = q.beta;
    const double kl = log_beta_fn(a0, b0) - log_beta_fn(a, b) + (a - a0) * boost::math::digamma(a) +
                      (b - b0) * boost::math::digamma(b) + (a0 - a + b0 - b) * boost::math::digamma(a + b);
    return std::max(kl, 0.0);
}

std::array<double, 2> kl_beta_gradient(BetaShape p, BetaShape q) {
    const double a = p.alpha, b = p.beta;
    const double t_ab = boost::math::trigamma(a + b);
    const double shared = (q.alpha - a + q.beta - b) * t_ab;
    return {(a - q.alpha) * boost::math::trigamma(a) + shared, (b - q.beta) * boost::math::trigamma(b) + shared};
}

// ---------------------------------------------------------------------------

DiscretePolicy::DiscretePolicy(Eigen::VectorXd logits, double temperature) : logits_(std::move(logits)) {
    if (logits_.size() == 0) {
        throw PolicyConfigError("discrete policy needs at least one environment");
    }
    set_temperature(temperature);
}

void DiscretePolicy::set_temperature(double tau) {
    if (!(tau > 0.0)) {
        throw PolicyConfigError("temperature must be positive, got " + std::to_string(tau));
    }
    temperature_ = tau;
}

Eigen::VectorXd DiscretePolicy::log_probabilities() const { return log_softmax(logits_ / temperature_); }

Eigen::VectorXd DiscretePolicy::probabilities() const { return log_probabilities().array().exp().matrix(); }

PolicySample sample_discrete(const DiscretePolicy& policy, int count, Rng& rng) {
    if (count < 1) {
        throw ConfigError("sample count must be at least 1");
    }
    const double tau = policy.temperature();
    if (!(tau > 0.0)) {
        throw PolicyConfigError("temperature must be positive");
    }
    const Eigen::VectorXd log_pi = policy.log_probabilities();
    const Eigen::Index k = log_pi.size();
    PolicySample out;
    for (int n = 0; n < count; ++n) {
        Eigen::VectorXd s(k);
        for (Eigen::Index i = 0; i < k; ++i) {
            s[i] = (log_pi[i] + standard_gumbel(rng)) / tau;
        }
        Eigen::VectorXd y = log_softmax(s).array().exp().matrix();
        Eigen::Index arg = 0;
        y.maxCoeff(&arg);
        out.log_probs.push_back(log_pi[arg]);
        out.relaxed.push_back(std::move(y));
    }
    return out;
}

Eigen::VectorXd relaxed_sample_backward(const DiscretePolicy& policy, const Eigen::VectorXd& relaxed,
                                        const Eigen::VectorXd& d_relaxed) {
    // y = softmax(s), s = (log pi + g) / tau, log pi = log_softmax(logits / tau).
    // The centring term of log_softmax vanishes because dL/ds sums to zero.
    const double tau = policy.temperature();
    const double inner = relaxed.dot(d_relaxed);
    const Eigen::VectorXd d_s = relaxed.array() * (d_relaxed.array() - inner);
    return d_s / (tau * tau);
}

double anneal_temperature(int epoch, int t0) {
    if (t0 < 1) {
        throw ConfigError("temperature schedule length T0 must be at least 1");
    }
    const int e = std::clamp(epoch, 0, t0);
    return 1.0 - 0.7 * static_cast<double>(e) / static_cast<double>(t0);
}

double kl_categorical(const Eigen::VectorXd& p, const Eigen::VectorXd& q) {
    if (p.size() != q.size()) {
        throw ConfigError("categorical KL needs equal-length probability vectors");
    }
    double kl = 0.0;
    for (Eigen::Index i = 0; i < p.size(); ++i) {
        if (p[i] <= 0.0) {
            continue;
        }
        if (q[i] <= 0.0) {
            return std::numeric_limits<double>::infinity();
        }
        kl += p[i] * (std::log(p[i]) - std::log(q[i]));
    }
    return std::max(kl, 0.0);
}

Eigen::VectorXd kl_categorical_gradient(const DiscretePolicy& policy, const PriorSpec& prior) {
    if (prior.kind != PriorKind::categorical || prior.probabilities.size() != policy.logits().size()) {
        throw ConfigError("categorical prior does not match the discrete policy");
    }
    const Eigen::VectorXd log_p = policy.log_probabilities();
    const Eigen::VectorXd p = log_p.array().exp().matrix();
    const Eigen::VectorXd c = log_p.array() - prior.probabilities.array().log();
    return (p.array() * (c.array() - p.dot(c))).matrix() / policy.temperature();
}

// ---------------------------------------------------------------------------

PolicySample sample_atoms(const AtomPolicy& policy, int count) {
    if (policy.atoms.empty()) {
        throw ConfigError("atom policy has no atoms");
    }
    if (count < 1) {
        throw ConfigError("sample count must be at least 1");
    }
    PolicySample out;
    const double log_mass = -std::log(static_cast<double>(policy.atoms.size()));
    for (int k = 0; k < count; ++k) {
        out.gammas.push_back(policy.atoms[static_cast<std::size_t>(k) % policy.atoms.size()]);
        out.log_probs.push_back(log_mass);
    }
    return out;
}

// ---------------------------------------------------------------------------

double kl_to_prior(const ContinuousPolicy& policy, const PriorSpec& prior) {
    if (prior.kind != PriorKind::beta) {
        throw ConfigError("continuous policy requires a Beta prior");
    }
    return kl_beta(beta_params(policy), prior.beta_params);
}

double kl_to_prior(const DiscretePolicy& policy, const PriorSpec& prior) {
    if (prior.kind != PriorKind::categorical || prior.probabilities.size() != policy.logits().size()) {
        throw ConfigError("discrete policy requires a categorical prior of matching size");
    }
    return kl_categorical(policy.probabilities(), prior.probabilities);
}

double kl_to_prior(const Policy& policy, const PriorSpec& prior) {
    return std::visit(
        [&](const auto& p) -> double {
            using T = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<T, AtomPolicy>) {
                // Point masses have no density against either prior kind.
                return std::numeric_limits<double>::infinity();
            } else {
                return kl_to_prior(p, prior);
            }
        },
        policy);
}

bool is_trainable(const Policy& policy) { return !std::holds_alternative<AtomPolicy>(policy); }

Eigen::VectorXd policy_parameters(const Policy& policy) {
    if (const auto* c = std::get_if<ContinuousPolicy>(&policy)) {
        return c->parameters();
    }
    if (const auto* d = std::get_if<DiscretePolicy>(&policy)) {
        return d->logits();
    }
    return {};
}

void set_policy_parameters(Policy& policy, const Eigen::VectorXd& params) {
    if (auto* c = std::get_if<ContinuousPolicy>(&policy)) {
        if (params.size() != c->parameters().size()) {
            throw FormatError("continuous policy parameter count mismatch");
        }
        c->parameters() = params;
    } else if (auto* d = std::get_if<DiscretePolicy>(&policy)) {
        if (params.size() != d->logits().size()) {
            throw FormatError("discrete policy parameter count mismatch");
        }
        d->logits() = params;
    } else if (params.size() != 0) {
        throw FormatError("atom policy has no parameters");
    }
}

PolicySample sample(const Policy& policy, int count, Rng& rng) {
    if (const auto* c = std::get_if<ContinuousPolicy>(&policy)) {
        return sample_continuous(*c, count, rng);
    }
    if (const auto* d = std::get_if<DiscretePolicy>(&policy)) {
        return sample_discrete(*d, count, rng);
    }
    return sample_atoms(std::get<AtomPolicy>(policy), count);
}

} // namespace uaed::policy
