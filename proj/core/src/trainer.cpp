#include "uaed/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "uaed/error.hpp"
#include "uaed/metrics.hpp"

namespace uaed::trainer {

namespace {

using objectives::PenaltyKind;
using FloatVector = nn::Mlp<float>::Vector;
using FloatMatrix = nn::Mlp<float>::Matrix;

const objectives::Loss kLoss{};

policy::PriorSpec effective_prior(const TrainConfig& config, const policy::Policy& pol) {
    if (const auto* d = std::get_if<policy::DiscretePolicy>(&pol)) {
        if (config.prior.kind != policy::PriorKind::categorical) {
            return policy::PriorSpec::uniform_categorical(d->size());
        }
    }
    return config.prior;
}

double policy_multiplier(const TrainConfig& config, const policy::Policy& pol) {
    if (config.policy_lr_multiplier > 0.0) {
        return config.policy_lr_multiplier;
    }
    return std::holds_alternative<policy::DiscretePolicy>(pol) ? 10.0 : 100.0;
}

bool all_finite(const Eigen::VectorXd& v) { return v.allFinite(); }

void shuffle(std::vector<std::size_t>& v, Rng& rng) {
    for (std::size_t i = v.size(); i > 1; --i) {
        std::swap(v[i - 1], v[uniform_index(rng, i)]);
    }
}

double vector_mean(const std::vector<double>& v) {
    return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

} // namespace

PolicyChoice parse_policy_choice(const std::string& name) {
    if (name == "auto") {
        return PolicyChoice::automatic;
    }
    if (name == "atoms") {
        return PolicyChoice::atoms;
    }
    throw ConfigError("unknown policy kind '" + name + "' (expected auto or atoms)");
}

Selection parse_selection(const std::string& name) {
    if (name == "final") {
        return Selection::final_epoch;
    }
    if (name == "best_val_worst") {
        return Selection::best_val_worst;
    }
    throw ConfigError("unknown selection '" + name + "' (expected final or best_val_worst)");
}

LrDecay parse_lr_decay(const std::string& name) {
    if (name == "none") {
        return LrDecay::none;
    }
    if (name == "inv_sqrt") {
        return LrDecay::inv_sqrt;
    }
    if (name == "robbins_monro") {
        return LrDecay::robbins_monro;
    }
    throw ConfigError("unknown lr decay '" + name + "' (expected none, inv_sqrt or robbins_monro)");
}

const char* to_string(PolicyChoice v) { return v == PolicyChoice::automatic ? "auto" : "atoms"; }
const char* to_string(Selection v) { return v == Selection::final_epoch ? "final" : "best_val_worst"; }
const char* to_string(LrDecay v) {
    switch (v) {
    case LrDecay::none: return "none";
    case LrDecay::inv_sqrt: return "inv_sqrt";
    case LrDecay::robbins_monro: return "robbins_monro";
    }
    return "?";
}

double lr_scale(LrDecay decay, double power, long long t) {
    const double step = static_cast<double>(t) + 1.0;
    switch (decay) {
    case LrDecay::none: return 1.0;
    case LrDecay::inv_sqrt: return 1.0 / std::sqrt(step);
    case LrDecay::robbins_monro: return std::pow(step, -power);
    }
    return 1.0;
}

void TrainConfig::validate() const {
    robust.validate();
    if (!(lr_theta > 0.0)) {
        throw ConfigError("train.lr_theta must be positive");
    }
    if (batch_size < 2) {
        throw ConfigError("train.batch_size must be at least 2");
    }
    if (epochs < 1) {
        throw ConfigError("train.epochs must be at least 1");
    }
    if (warmup_epochs < 0 || warmup_epochs > epochs) {
        throw ConfigError("train.warmup_epochs must lie in [0, epochs]");
    }
    if (temperature_epochs < 1) {
        throw ConfigError("policy.temperature_epochs must be at least 1");
    }
    if (!(weight_decay >= 0.0)) {
        throw ConfigError("train.weight_decay must be nonnegative");
    }
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
        throw ConfigError("Adam betas must lie in [0, 1)");
    }
    if (!(baseline_decay >= 0.0 && baseline_decay < 1.0)) {
        throw ConfigError("policy.baseline_decay must lie in [0, 1)");
    }
    if (lr_decay == LrDecay::robbins_monro && !(lr_decay_power > 0.5 && lr_decay_power <= 1.0)) {
        throw ConfigError("train.lr_decay_power must lie in (0.5, 1]");
    }
    if (patience < 1) {
        throw ConfigError("train.patience must be at least 1");
    }
    if (init_concentration > 0.0 && !(init_mean > 0.0 && init_mean < 1.0)) {
        throw ConfigError("policy.init_mean must lie in (0, 1)");
    }
    if (pathwise_gradient) {
        throw ConfigError("policy.pathwise requires a transformation that is differentiable in its parameter; "
                          "none of the built-in families is");
    }
    for (int h : hidden) {
        if (h < 1) {
            throw ConfigError("model.hidden widths must be positive");
        }
    }
    prior.validate();
}

PolicySummary summarize_policy(const policy::Policy& pol, const std::vector<double>& atom_values) {
    PolicySummary s;
    if (const auto* c = std::get_if<policy::ContinuousPolicy>(&pol)) {
        const auto shape = policy::beta_params(*c);
        s.kind = "beta";
        s.alpha = shape.alpha;
        s.beta = shape.beta;
        s.mean = shape.mean();
    } else if (const auto* d = std::get_if<policy::DiscretePolicy>(&pol)) {
        s.kind = "categorical";
        const Eigen::VectorXd p = d->probabilities();
        s.probabilities.assign(p.data(), p.data() + p.size());
        for (Eigen::Index i = 0; i < p.size(); ++i) {
            const auto idx = static_cast<std::size_t>(i);
            s.mean += p[i] * (idx < atom_values.size() ? atom_values[idx] : static_cast<double>(i));
        }
        s.entropy_ratio = metrics::normalized_entropy(p);
        s.temperature = d->temperature();
    } else {
        s.kind = "atoms";
        s.atoms = std::get<policy::AtomPolicy>(pol).atoms;
        s.mean = vector_mean(s.atoms);
    }
    return s;
}

TrainState init_state(const TrainConfig& config, const Problem& problem) {
    config.validate();
    if (!problem.family) {
        throw ConfigError("problem has no environment family");
    }
    if (problem.train_envs.empty()) {
        throw ConfigError("problem lists no training environments");
    }
    TrainState s;
    s.rng.seed(config.seed);
    std::vector<int> dims{problem.family->view_shape().size()};
    dims.insert(dims.end(), config.hidden.begin(), config.hidden.end());
    dims.push_back(1);
    s.model = nn::Mlp<float>(dims, config.activation, s.rng);
    s.opt_theta = nn::Adam<float>({config.lr_theta, config.adam_beta1, config.adam_beta2, 1e-8, config.weight_decay},
                                  s.model.parameter_count());

    const bool adaptive = objectives::is_adaptive(config.robust.method);
    if (adaptive && config.policy == PolicyChoice::automatic) {
        if (problem.discrete()) {
            s.policy = policy::DiscretePolicy(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(problem.family->atom_count())),
                                              policy::anneal_temperature(0, config.temperature_epochs));
        } else {
            policy::BetaShape init = config.prior.beta_params;
            if (config.init_concentration > 0.0) {
                init = {config.init_mean * config.init_concentration, (1.0 - config.init_mean) * config.init_concentration};
            }
            s.policy = policy::ContinuousPolicy(s.rng, init);
        }
    } else {
        s.policy = policy::AtomPolicy{problem.train_envs};
    }
    const Eigen::VectorXd phi = policy::policy_parameters(s.policy);
    s.opt_phi = nn::Adam<double>(
        {config.lr_theta * policy_multiplier(config, s.policy), config.adam_beta1, config.adam_beta2, 1e-8, 0.0},
        static_cast<std::size_t>(phi.size()));
    s.best_theta = s.model.parameters();
    s.best_phi = phi;
    return s;
}

StepContext prepare_step(TrainState& state, std::span<const std::size_t> rows, const TrainConfig& config,
                         const Problem& problem) {
    StepContext ctx;
    const auto& robust = config.robust;
    const bool adaptive = objectives::is_adaptive(robust.method);
    const bool trainable = policy::is_trainable(state.policy);
    ctx.eta = state.epoch < config.warmup_epochs ? robust.eta_warmup : robust.eta;
    ctx.policy_active = adaptive && trainable && state.epoch >= config.warmup_epochs;

    const int k = adaptive ? robust.K : static_cast<int>(problem.train_envs.size());
    ctx.sample = policy::sample(state.policy, k, state.rng);

    const bool relaxed = !ctx.sample.relaxed.empty();
    std::vector<double> params;
    if (relaxed) {
        const auto v = static_cast<Eigen::Index>(problem.family->atom_count());
        ctx.inputs.selector.resize(k, v);
        for (int i = 0; i < k; ++i) {
            ctx.inputs.selector.row(i) = ctx.sample.relaxed[static_cast<std::size_t>(i)].transpose();
        }
        for (Eigen::Index i = 0; i < v; ++i) {
            params.push_back(static_cast<double>(i));
        }
    } else {
        ctx.inputs.selector = Eigen::MatrixXd::Identity(k, k);
        params = ctx.sample.gammas;
    }

    const PenaltyKind kind = objectives::penalty_kind(robust.method);
    for (double p : params) {
        ctx.batches.push_back(problem.family->view(rows, p, state.rng));
    }
    for (std::size_t v = 0; v < ctx.batches.size(); ++v) {
        const auto& batch = ctx.batches[v];
        ctx.traces.push_back(state.model.forward(batch.x));
        const Eigen::VectorXd logits = ctx.traces.back().logits.cast<double>();
        ctx.inputs.risks.push_back(objectives::env_risk(logits, batch.labels, kLoss, static_cast<std::size_t>(state.step)));
        if (kind == PenaltyKind::irm) {
            ctx.inputs.irm.push_back(objectives::irm_penalty(logits, batch.labels, kLoss, robust.irm_two_split));
        } else if (kind == PenaltyKind::coral) {
            ctx.inputs.features.push_back(ctx.traces.back().features().cast<double>());
        }
    }

    double kl = 0.0;
    if (adaptive && trainable) {
        kl = policy::kl_to_prior(state.policy, effective_prior(config, state.policy));
        if (!std::isfinite(kl)) {
            throw NumericalError("non-finite policy divergence", static_cast<std::size_t>(state.step));
        }
    }
    ctx.terms = objectives::evaluate_views(robust, ctx.eta, ctx.inputs, kl);
    if (!std::isfinite(ctx.terms.objective)) {
        throw NumericalError("non-finite objective", static_cast<std::size_t>(state.step));
    }
    return ctx;
}

double policy_update(TrainState& state, const StepContext& ctx, const TrainConfig& config) {
    if (!ctx.policy_active) {
        return 0.0;
    }
    const double beta_kl = config.robust.beta_kl;
    const auto prior = effective_prior(config, state.policy);
    Eigen::VectorXd grad;
    const auto& terms = ctx.terms;

    if (auto* c = std::get_if<policy::ContinuousPolicy>(&state.policy)) {
        const auto shape = policy::beta_params(*c);
        const double signal = vector_mean(terms.credits);
        if (!state.baseline_ready) {
            state.baseline = signal;
            state.baseline_ready = true;
        }
        double ga = 0.0;
        double gb = 0.0;
        const std::size_t k = ctx.sample.gammas.size();
        for (std::size_t i = 0; i < k; ++i) {
            const auto score = policy::beta_score(ctx.sample.gammas[i], shape);
            const double credit = terms.separable ? (terms.credits[i] - state.baseline) / static_cast<double>(k)
                                                  : terms.credits.front() - state.baseline;
            ga += credit * score[0];
            gb += credit * score[1];
        }
        state.baseline = config.baseline_decay * state.baseline + (1.0 - config.baseline_decay) * signal;
        const auto kl_grad = policy::kl_beta_gradient(shape, prior.beta_params);
        grad = c->backprop_shape(ga + beta_kl * kl_grad[0], gb + beta_kl * kl_grad[1]);
    } else if (auto* d = std::get_if<policy::DiscretePolicy>(&state.policy)) {
        grad = beta_kl * policy::kl_categorical_gradient(*d, prior);
        for (std::size_t i = 0; i < ctx.sample.relaxed.size(); ++i) {
            grad += policy::relaxed_sample_backward(*d, ctx.sample.relaxed[i],
                                                    terms.d_selector.row(static_cast<Eigen::Index>(i)).transpose());
        }
    } else {
        return 0.0;
    }
    if (!all_finite(grad)) {
        throw NumericalError("non-finite policy gradient", static_cast<std::size_t>(state.step));
    }
    Eigen::VectorXd phi = policy::policy_parameters(state.policy);
    const double lr = state.opt_phi.config().lr * lr_scale(config.lr_decay, config.lr_decay_power, state.opt_phi.steps());
    state.opt_phi.step(phi, grad, lr);
    policy::set_policy_parameters(state.policy, phi);
    return grad.squaredNorm();
}

double predictor_update(TrainState& state, const StepContext& ctx, const TrainConfig& config) {
    const PenaltyKind kind = objectives::penalty_kind(config.robust.method);
    FloatVector grad = FloatVector::Zero(state.model.parameters().size());
    for (std::size_t v = 0; v < ctx.batches.size(); ++v) {
        const auto& labels = ctx.batches[v].labels;
        const Eigen::VectorXd logits = ctx.traces[v].logits.cast<double>();
        Eigen::VectorXd d_logits = ctx.terms.d_view_risk[v] * objectives::env_risk_grad(logits, labels, kLoss);
        if (kind == PenaltyKind::irm) {
            d_logits += ctx.terms.d_view_irm[v] *
                        objectives::irm_penalty_grad(logits, labels, kLoss, config.robust.irm_two_split);
        }
        FloatMatrix d_features;
        const FloatMatrix* df = nullptr;
        if (kind == PenaltyKind::coral) {
            d_features = ctx.terms.d_features[v].cast<float>();
            df = &d_features;
        }
        state.model.backward(ctx.traces[v], d_logits.cast<float>(), df, grad);
    }
    if (!grad.allFinite()) {
        throw NumericalError("non-finite predictor gradient", static_cast<std::size_t>(state.step));
    }
    const double lr =
        state.opt_theta.config().lr * lr_scale(config.lr_decay, config.lr_decay_power, state.opt_theta.steps());
    state.opt_theta.step(state.model.parameters(), grad, lr);
    return static_cast<double>(grad.template cast<double>().squaredNorm());
}

StepResult train_step(TrainState& state, std::span<const std::size_t> rows, const TrainConfig& config,
                      const Problem& problem) {
    StepResult out;
    try {
        StepContext ctx = prepare_step(state, rows, config, problem);
        out.objective = ctx.terms.objective;
        out.mean_risk = ctx.terms.mean_risk;
        out.penalty = ctx.terms.penalty;
        out.kl = ctx.terms.kl;
        out.sample_variance = ctx.terms.sample_risks.size() > 1 ? objectives::rex_penalty(ctx.terms.sample_risks) : 0.0;
        out.grad_sq_phi = policy_update(state, ctx, config);
        if (config.resample_envs && ctx.policy_active) {
            ctx = prepare_step(state, rows, config, problem);
        }
        out.grad_sq_theta = predictor_update(state, ctx, config);
        state.consecutive_aborts = 0;
    } catch (const NumericalError& e) {
        out = StepResult{};
        out.aborted = true;
        out.error = e.what();
        if (++state.consecutive_aborts >= 3) {
            ++state.step;
            throw Error("training failed after three consecutive aborted steps: " + out.error);
        }
    }
    ++state.step;
    return out;
}

// ---------------------------------------------------------------------------

namespace {

struct EvalSummary {
    std::vector<double> risks;
    std::vector<double> accuracies;
};

EvalSummary evaluate_sets(const nn::Mlp<float>& model, const std::vector<data::EnvDataset>& sets) {
    EvalSummary out;
    for (const auto& ds : sets) {
        const Eigen::VectorXf logits = metrics::predict(model, ds.data);
        out.risks.push_back(objectives::env_risk(logits.cast<double>(), ds.data.labels, kLoss));
        out.accuracies.push_back(metrics::accuracy(logits, ds.data.labels));
    }
    return out;
}

} // namespace

TrainResult train(TrainState state, const TrainConfig& config, const Problem& problem, const EpochCallback& on_epoch) {
    config.validate();
    if (!problem.family || problem.probe.empty()) {
        throw ConfigError("problem needs an environment family and probe environments");
    }
    const std::size_t n = problem.family->size();
    if (n < 2) {
        throw ConfigError("training set needs at least two samples");
    }
    std::vector<std::size_t> order(n);
    const auto bs = static_cast<std::size_t>(config.batch_size);

    while (state.epoch < config.epochs) {
        if (auto* d = std::get_if<policy::DiscretePolicy>(&state.policy)) {
            d->set_temperature(policy::anneal_temperature(state.epoch, config.temperature_epochs));
        }
        std::iota(order.begin(), order.end(), std::size_t{0});
        shuffle(order, state.rng);

        EpochRecord rec;
        rec.epoch = state.epoch;
        int steps = 0;
        for (std::size_t start = 0; start + 2 <= n; start += bs) {
            const std::size_t len = std::min(bs, n - start);
            const StepResult r =
                train_step(state, std::span<const std::size_t>(order.data() + start, len), config, problem);
            if (r.aborted) {
                ++rec.aborted_steps;
                continue;
            }
            ++steps;
            rec.mean_risk += r.mean_risk;
            rec.objective += r.objective;
            rec.penalty += r.penalty;
            rec.kl += r.kl;
            rec.train_env_variance += r.sample_variance;
            rec.grad_norm_theta += r.grad_sq_theta;
            rec.grad_norm_phi += r.grad_sq_phi;
        }
        if (steps > 0) {
            const double inv = 1.0 / steps;
            rec.mean_risk *= inv;
            rec.objective *= inv;
            rec.penalty *= inv;
            rec.kl *= inv;
            rec.train_env_variance *= inv;
            rec.grad_norm_theta *= inv;
            rec.grad_norm_phi *= inv;
        }
        rec.step = state.step;
        rec.eta = state.epoch < config.warmup_epochs ? config.robust.eta_warmup : config.robust.eta;

        const EvalSummary probe = evaluate_sets(state.model, problem.probe);
        rec.per_env_risk = probe.risks;
        rec.per_env_acc = probe.accuracies;
        rec.risk_variance = metrics::loss_variance_trace({probe.risks}).front();
        if (!problem.val.empty()) {
            const EvalSummary val = evaluate_sets(state.model, problem.val);
            rec.val_worst_acc = *std::min_element(val.accuracies.begin(), val.accuracies.end());
            rec.val_mean_acc = vector_mean(val.accuracies);
        }
        rec.policy = summarize_policy(state.policy, problem.atom_values);

        if (rec.val_worst_acc > state.best_worst_group_val) {
            state.best_worst_group_val = rec.val_worst_acc;
            state.best_epoch = state.epoch;
            state.best_theta = state.model.parameters();
            state.best_phi = policy::policy_parameters(state.policy);
            state.epochs_without_improvement = 0;
        } else {
            ++state.epochs_without_improvement;
        }
        state.trace.push_back(rec);
        ++state.epoch;
        if (on_epoch) {
            on_epoch(state, rec);
        }
        if (config.selection == Selection::best_val_worst && state.epochs_without_improvement >= config.patience) {
            break;
        }
    }

    if (config.selection == Selection::best_val_worst && state.best_epoch >= 0) {
        state.model.parameters() = state.best_theta;
        policy::set_policy_parameters(state.policy, state.best_phi);
    }

    TrainResult result;
    if (!problem.test.empty()) {
        const EvalSummary test = evaluate_sets(state.model, problem.test);
        result.test_accuracy = test.accuracies;
        for (const auto& ds : problem.test) {
            result.test_labels.push_back(ds.descriptor.label());
        }
        result.worst_test_accuracy = *std::min_element(test.accuracies.begin(), test.accuracies.end());
        result.mean_test_accuracy = vector_mean(test.accuracies);
    }
    result.state = std::move(state);
    return result;
}

TrainResult train(const TrainConfig& config, const Problem& problem, const EpochCallback& on_epoch) {
    return train(init_state(config, problem), config, problem, on_epoch);
}

GradientTrend gradient_norm_trend(const std::vector<double>& squared_norms, std::size_t start) {
    if (squared_norms.size() < start + 10) {
        throw ConfigError("gradient-norm trend needs at least 10 epochs");
    }
    GradientTrend t;
    const std::vector<double> v(squared_norms.begin() + static_cast<std::ptrdiff_t>(start), squared_norms.end());
    double sum = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        sum += v[i];
        t.running_mean.push_back(sum / static_cast<double>(i + 1));
    }
    const std::size_t q = std::max<std::size_t>(1, v.size() / 4);
    t.first_quartile_mean = std::accumulate(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(q), 0.0) / q;
    t.last_quartile_mean = std::accumulate(v.end() - static_cast<std::ptrdiff_t>(q), v.end(), 0.0) / q;
    t.violation = t.last_quartile_mean > t.first_quartile_mean;
    return t;
}

namespace {

std::uint64_t fnv1a(const unsigned char* bytes, std::size_t n) {
    std::uint64_t h = 1469598103934665603ULL;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= bytes[i];
        h *= 1099511628211ULL;
    }
    return h;
}

} // namespace

std::uint64_t parameter_hash(const float* data, std::size_t n) {
    return fnv1a(reinterpret_cast<const unsigned char*>(data), n * sizeof(float));
}

std::uint64_t parameter_hash(const double* data, std::size_t n) {
    return fnv1a(reinterpret_cast<const unsigned char*>(data), n * sizeof(double));
}

} // namespace uaed::trainer
