#include "uaed/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "uaed/error.hpp"

namespace uaed::objectives {

namespace {

struct MethodName {
    Method method;
    const char* name;
};

constexpr MethodName kMethodNames[] = {
    {Method::ERM, "ERM"},         {Method::IRM, "IRM"},     {Method::REx, "REx"},
    {Method::CORAL, "CORAL"},     {Method::GroupDRO, "GroupDRO"}, {Method::A_IRM, "A_IRM"},
    {Method::A_REx, "A_REx"},     {Method::A_CORAL, "A_CORAL"},   {Method::A_GroupDRO, "A_GroupDRO"},
};

double mean_of(std::span<const double> v) { return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()); }

double sigmoid(double z) {
    if (z >= 0.0) {
        return 1.0 / (1.0 + std::exp(-z));
    }
    const double e = std::exp(z);
    return e / (1.0 + e);
}

void check_batch(const Eigen::VectorXd& logits, const std::vector<int>& labels) {
    if (labels.empty()) {
        throw ConfigError("risk needs a nonempty batch");
    }
    if (static_cast<std::size_t>(logits.size()) != labels.size()) {
        throw ConfigError("logit and label counts differ");
    }
}

// Per-sample derivative of w -> loss(w z) at w = 1, and its derivative in z.
struct ScaleTerms {
    double g;    // loss'(z) z
    double d_g;  // d(loss'(z) z)/dz = loss''(z) z + loss'(z)
};

ScaleTerms scale_terms(const Loss& loss, double z, int y) {
    const double d1 = loss.d1(z, y);
    return {d1 * z, loss.d2(z, y) * z + d1};
}

std::vector<double> normalized_weights(std::span<const double> weights, std::size_t k) {
    if (weights.empty()) {
        return std::vector<double>(k, 1.0 / static_cast<double>(k));
    }
    if (weights.size() != k) {
        throw ConfigError("weights and risks differ in length");
    }
    double sum = 0.0;
    for (double w : weights) {
        if (!(w >= 0.0)) {
            throw ConfigError("weights must be nonnegative");
        }
        sum += w;
    }
    if (std::abs(sum - 1.0) > 1e-9) {
        throw ConfigError("weights must sum to 1");
    }
    return {weights.begin(), weights.end()};
}

} // namespace

Method parse_method(const std::string& name) {
    for (const auto& m : kMethodNames) {
        if (name == m.name) {
            return m.method;
        }
    }
    throw ConfigError("unknown method '" + name + "'");
}

const char* to_string(Method method) {
    for (const auto& m : kMethodNames) {
        if (m.method == method) {
            return m.name;
        }
    }
    return "?";
}

bool is_adaptive(Method method) {
    return method == Method::A_IRM || method == Method::A_REx || method == Method::A_CORAL ||
           method == Method::A_GroupDRO;
}

Method base_method(Method method) {
    switch (method) {
    case Method::A_IRM: return Method::IRM;
    case Method::A_REx: return Method::REx;
    case Method::A_CORAL: return Method::CORAL;
    case Method::A_GroupDRO: return Method::GroupDRO;
    default: return method;
    }
}

PenaltyKind penalty_kind(Method method) {
    switch (base_method(method)) {
    case Method::IRM: return PenaltyKind::irm;
    case Method::REx: return PenaltyKind::rex;
    case Method::CORAL: return PenaltyKind::coral;
    default: return PenaltyKind::none;
    }
}

void RobustConfig::validate() const {
    if (!(eta >= 0.0) || !(eta_warmup >= 0.0)) {
        throw ConfigError("robust.eta and robust.eta_warmup must be nonnegative");
    }
    if (!(beta_kl >= 0.0)) {
        throw ConfigError("robust.beta_kl must be nonnegative");
    }
    if (!(lambda_ent > 0.0)) {
        throw ConfigError("robust.lambda_ent must be positive");
    }
    if (!(rho >= 0.0)) {
        throw ConfigError("robust.rho must be nonnegative");
    }
    if (K < 1) {
        throw ConfigError("robust.K must be at least 1");
    }
    const PenaltyKind p = penalty_kind(method);
    if ((p == PenaltyKind::rex || p == PenaltyKind::coral) && K < 2) {
        throw ConfigError(std::string(to_string(method)) + " needs robust.K >= 2 environment samples");
    }
}

void RiskVector::validate() const {
    if (risks.empty()) {
        throw ConfigError("risk vector is empty");
    }
    if (!gammas.empty() && gammas.size() != risks.size()) {
        throw ConfigError("risk vector and environment parameters differ in length");
    }
    for (double r : risks) {
        if (!std::isfinite(r)) {
            throw NumericalError("non-finite environment risk", 0);
        }
    }
}

// ---------------------------------------------------------------------------

double Loss::value(double z, int y) const {
    double v = 0.0;
    if (kind == LossKind::logistic) {
        v = std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
    } else {
        v = (z - y) * (z - y);
    }
    return cap > 0.0 ? std::min(v, cap) : v;
}

double Loss::d1(double z, int y) const {
    if (cap > 0.0 && value(z, y) >= cap) {
        return 0.0;
    }
    return kind == LossKind::logistic ? sigmoid(z) - y : 2.0 * (z - y);
}

double Loss::d2(double z, int y) const {
    if (cap > 0.0 && value(z, y) >= cap) {
        return 0.0;
    }
    if (kind == LossKind::logistic) {
        const double s = sigmoid(z);
        return s * (1.0 - s);
    }
    return 2.0;
}

double env_risk(const Eigen::VectorXd& logits, const std::vector<int>& labels, const Loss& loss,
                std::size_t batch_index) {
    check_batch(logits, labels);
    double sum = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        sum += loss.value(logits[static_cast<Eigen::Index>(i)], labels[i]);
    }
    const double r = sum / static_cast<double>(labels.size());
    if (!std::isfinite(r)) {
        throw NumericalError("non-finite risk", batch_index);
    }
    return r;
}

Eigen::VectorXd env_risk_grad(const Eigen::VectorXd& logits, const std::vector<int>& labels, const Loss& loss) {
    check_batch(logits, labels);
    Eigen::VectorXd g(logits.size());
    const double inv_n = 1.0 / static_cast<double>(labels.size());
    for (Eigen::Index i = 0; i < logits.size(); ++i) {
        g[i] = loss.d1(logits[i], labels[static_cast<std::size_t>(i)]) * inv_n;
    }
    return g;
}

double irm_scale_gradient(const Eigen::VectorXd& logits, const std::vector<int>& labels, const Loss& loss) {
    check_batch(logits, labels);
    double sum = 0.0;
    for (Eigen::Index i = 0; i < logits.size(); ++i) {
        sum += scale_terms(loss, logits[i], labels[static_cast<std::size_t>(i)]).g;
    }
    return sum / static_cast<double>(labels.size());
}

double irm_penalty(const Eigen::VectorXd& logits, const std::vector<int>& labels, const Loss& loss, bool two_split) {
    check_batch(logits, labels);
    if (!two_split) {
        const double g = irm_scale_gradient(logits, labels, loss);
        return g * g;
    }
    if (labels.size() < 2) {
        throw ConfigError("two-split IRM penalty needs at least two samples");
    }
    const std::size_t half = labels.size() / 2;
    const std::size_t rest = labels.size() - half;
    const std::vector<int> y1(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(half));
    const std::vector<int> y2(labels.begin() + static_cast<std::ptrdiff_t>(half), labels.end());
    const double g1 = irm_scale_gradient(logits.head(static_cast<Eigen::Index>(half)), y1, loss);
    const double g2 = irm_scale_gradient(logits.tail(static_cast<Eigen::Index>(rest)), y2, loss);
    return g1 * g2;
}

Eigen::VectorXd irm_penalty_grad(const Eigen::VectorXd& logits, const std::vector<int>& labels, const Loss& loss,
                                 bool two_split) {
    check_batch(logits, labels);
    const auto n = logits.size();
    Eigen::VectorXd out(n);
    if (!two_split) {
        const double g = irm_scale_gradient(logits, labels, loss);
        const double c = 2.0 * g / static_cast<double>(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            out[i] = c * scale_terms(loss, logits[i], labels[static_cast<std::size_t>(i)]).d_g;
        }
        return out;
    }
    if (n < 2) {
        throw ConfigError("two-split IRM penalty needs at least two samples");
    }
    const Eigen::Index half = n / 2;
    const Eigen::Index rest = n - half;
    const std::vector<int> y1(labels.begin(), labels.begin() + half);
    const std::vector<int> y2(labels.begin() + half, labels.end());
    const double g1 = irm_scale_gradient(logits.head(half), y1, loss);
    const double g2 = irm_scale_gradient(logits.tail(rest), y2, loss);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double d = scale_terms(loss, logits[i], labels[static_cast<std::size_t>(i)]).d_g;
        out[i] = i < half ? g2 * d / static_cast<double>(half) : g1 * d / static_cast<double>(rest);
    }
    return out;
}

double rex_penalty(std::span<const double> risks) {
    if (risks.size() < 2) {
        throw ConfigError("risk variance needs at least two environments");
    }
    const double m = mean_of(risks);
    double s = 0.0;
    for (double r : risks) {
        s += (r - m) * (r - m);
    }
    return s / static_cast<double>(risks.size());
}

std::vector<double> rex_penalty_grad(std::span<const double> risks) {
    if (risks.size() < 2) {
        throw ConfigError("risk variance needs at least two environments");
    }
    const double m = mean_of(risks);
    std::vector<double> g(risks.size());
    for (std::size_t k = 0; k < risks.size(); ++k) {
        g[k] = 2.0 * (risks[k] - m) / static_cast<double>(risks.size());
    }
    return g;
}

Eigen::MatrixXd feature_covariance(const Eigen::MatrixXd& features) {
    if (features.rows() < 2) {
        throw ConfigError("covariance needs at least two rows");
    }
    const Eigen::MatrixXd centered = features.rowwise() - features.colwise().mean();
    return centered.transpose() * centered / static_cast<double>(features.rows() - 1);
}

double coral_penalty(const std::vector<Eigen::MatrixXd>& features) {
    if (features.size() < 2) {
        throw ConfigError("CORAL penalty needs at least two environments");
    }
    std::vector<Eigen::MatrixXd> cov;
    for (const auto& f : features) {
        cov.push_back(feature_covariance(f));
    }
    double sum = 0.0;
    std::size_t pairs = 0;
    for (std::size_t a = 0; a < cov.size(); ++a) {
        for (std::size_t b = a + 1; b < cov.size(); ++b) {
            sum += (cov[a] - cov[b]).squaredNorm();
            ++pairs;
        }
    }
    return sum / static_cast<double>(pairs);
}

std::vector<Eigen::MatrixXd> coral_penalty_grad(const std::vector<Eigen::MatrixXd>& features) {
    if (features.size() < 2) {
        throw ConfigError("CORAL penalty needs at least two environments");
    }
    const std::size_t k = features.size();
    std::vector<Eigen::MatrixXd> cov;
    for (const auto& f : features) {
        cov.push_back(feature_covariance(f));
    }
    const double pairs = static_cast<double>(k * (k - 1) / 2);
    std::vector<Eigen::MatrixXd> out;
    for (std::size_t a = 0; a < k; ++a) {
        Eigen::MatrixXd diff = Eigen::MatrixXd::Zero(cov[a].rows(), cov[a].cols());
        for (std::size_t b = 0; b < k; ++b) {
            if (b != a) {
                diff += cov[a] - cov[b];
            }
        }
        const Eigen::MatrixXd centered = features[a].rowwise() - features[a].colwise().mean();
        out.push_back(4.0 / static_cast<double>(features[a].rows() - 1) * centered * diff / pairs);
    }
    return out;
}

double entropic_risk(std::span<const double> risks, double lambda, std::span<const double> weights) {
    if (!(lambda > 0.0)) {
        throw ConfigError("entropic risk needs lambda > 0");
    }
    if (risks.empty()) {
        throw ConfigError("entropic risk needs at least one risk");
    }
    const auto w = normalized_weights(weights, risks.size());
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < risks.size(); ++k) {
        if (w[k] > 0.0) {
            m = std::max(m, lambda * risks[k]);
        }
    }
    double s = 0.0;
    for (std::size_t k = 0; k < risks.size(); ++k) {
        if (w[k] > 0.0) {
            s += w[k] * std::exp(lambda * risks[k] - m);
        }
    }
    return (m + std::log(s)) / lambda;
}

std::vector<double> entropic_risk_grad(std::span<const double> risks, double lambda, std::span<const double> weights) {
    if (!(lambda > 0.0)) {
        throw ConfigError("entropic risk needs lambda > 0");
    }
    const auto w = normalized_weights(weights, risks.size());
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < risks.size(); ++k) {
        if (w[k] > 0.0) {
            m = std::max(m, lambda * risks[k]);
        }
    }
    std::vector<double> g(risks.size(), 0.0);
    double s = 0.0;
    for (std::size_t k = 0; k < risks.size(); ++k) {
        if (w[k] > 0.0) {
            g[k] = w[k] * std::exp(lambda * risks[k] - m);
            s += g[k];
        }
    }
    for (double& v : g) {
        v /= s;
    }
    return g;
}

double groupdro_surrogate(std::span<const double> risks, double lambda, double rho) {
    if (!(rho >= 0.0)) {
        throw ConfigError("KL radius rho must be nonnegative");
    }
    return entropic_risk(risks, lambda) + rho / lambda;
}

double fixed_env_objective(const RobustConfig& config, const RiskVector& per_env_risks, double penalty) {
    per_env_risks.validate();
    const Method base = base_method(config.method);
    if (base == Method::GroupDRO) {
        return groupdro_surrogate(per_env_risks.risks, config.lambda_ent, config.rho);
    }
    const double mean = mean_of(per_env_risks.risks);
    if (base == Method::ERM) {
        return mean;
    }
    return mean + config.eta * penalty;
}

double uaed_objective(const RobustConfig& config, const RiskVector& risks, double penalty, double kl) {
    const double fixed = fixed_env_objective(config, risks, penalty);
    return is_adaptive(config.method) ? fixed + config.beta_kl * kl : fixed;
}

// ---------------------------------------------------------------------------

ObjectiveTerms evaluate_views(const RobustConfig& config, double eta, ViewInputs& views, double kl) {
    const Eigen::MatrixXd& s = views.selector;
    const auto K = s.rows();
    const auto V = s.cols();
    if (K < 1 || V < 1 || static_cast<std::size_t>(V) != views.risks.size()) {
        throw ConfigError("selector does not match the number of environment views");
    }
    const PenaltyKind kind = penalty_kind(config.method);
    const Method base = base_method(config.method);
    const double inv_k = 1.0 / static_cast<double>(K);

    ObjectiveTerms t;
    t.kl = kl;
    const Eigen::Map<const Eigen::VectorXd> view_risk(views.risks.data(), V);
    const Eigen::VectorXd r = s * view_risk;
    t.sample_risks.assign(r.data(), r.data() + K);
    t.mean_risk = r.mean();

    Eigen::VectorXd d_r = Eigen::VectorXd::Constant(K, inv_k);
    t.d_selector = Eigen::MatrixXd::Zero(K, V);
    std::vector<double> sample_pen(static_cast<std::size_t>(K), 0.0);

    switch (kind) {
    case PenaltyKind::none: break;
    case PenaltyKind::irm: {
        if (views.irm.size() != static_cast<std::size_t>(V)) {
            throw ConfigError("IRM penalties missing for some views");
        }
        const Eigen::Map<const Eigen::VectorXd> p(views.irm.data(), V);
        const Eigen::VectorXd pk = s * p;
        sample_pen.assign(pk.data(), pk.data() + K);
        t.penalty = pk.mean();
        const Eigen::VectorXd d_p = s.transpose() * Eigen::VectorXd::Constant(K, eta * inv_k);
        t.d_view_irm.assign(d_p.data(), d_p.data() + V);
        t.d_selector += Eigen::VectorXd::Constant(K, eta * inv_k) * p.transpose();
        break;
    }
    case PenaltyKind::rex: {
        t.penalty = rex_penalty(t.sample_risks);
        const auto g = rex_penalty_grad(t.sample_risks);
        for (Eigen::Index k = 0; k < K; ++k) {
            d_r[k] += eta * g[static_cast<std::size_t>(k)];
        }
        break;
    }
    case PenaltyKind::coral: {
        if (K < 2) {
            throw ConfigError("CORAL penalty needs at least two environment samples");
        }
        if (views.features.size() != static_cast<std::size_t>(V)) {
            throw ConfigError("features missing for some views");
        }
        views.covariance.clear();
        for (const auto& f : views.features) {
            views.covariance.push_back(feature_covariance(f));
        }
        Eigen::MatrixXd dist = Eigen::MatrixXd::Zero(V, V);
        for (Eigen::Index a = 0; a < V; ++a) {
            for (Eigen::Index b = a + 1; b < V; ++b) {
                dist(a, b) = dist(b, a) = (views.covariance[static_cast<std::size_t>(a)] -
                                           views.covariance[static_cast<std::size_t>(b)])
                                              .squaredNorm();
            }
        }
        const double pairs = static_cast<double>(K * (K - 1) / 2);
        // coef(v, w): total selector mass on the (v, w) view pair across draw pairs.
        Eigen::MatrixXd coef = Eigen::MatrixXd::Zero(V, V);
        double value = 0.0;
        for (Eigen::Index k = 0; k < K; ++k) {
            for (Eigen::Index l = k + 1; l < K; ++l) {
                value += s.row(k) * dist * s.row(l).transpose();
                coef += s.row(k).transpose() * s.row(l) + s.row(l).transpose() * s.row(k);
            }
        }
        t.penalty = value / pairs;
        coef /= pairs;
        const Eigen::MatrixXd sd = s * dist; // K x V
        const Eigen::RowVectorXd total = sd.colwise().sum();
        for (Eigen::Index k = 0; k < K; ++k) {
            t.d_selector.row(k) += eta * (total - sd.row(k)) / pairs;
        }
        for (Eigen::Index v = 0; v < V; ++v) {
            const auto& f = views.features[static_cast<std::size_t>(v)];
            const auto& cv = views.covariance[static_cast<std::size_t>(v)];
            Eigen::MatrixXd diff = Eigen::MatrixXd::Zero(cv.rows(), cv.cols());
            for (Eigen::Index w = 0; w < V; ++w) {
                if (w != v && coef(v, w) != 0.0) {
                    diff += coef(v, w) * (cv - views.covariance[static_cast<std::size_t>(w)]);
                }
            }
            const Eigen::MatrixXd centered = f.rowwise() - f.colwise().mean();
            t.d_features.push_back(eta * 4.0 / static_cast<double>(f.rows() - 1) * centered * diff);
        }
        break;
    }
    }

    RobustConfig weighted = config;
    weighted.eta = eta;
    const RiskVector rv{t.sample_risks, {}};
    t.objective = uaed_objective(weighted, rv, t.penalty, kl);

    if (base == Method::GroupDRO) {
        const auto g = entropic_risk_grad(t.sample_risks, config.lambda_ent);
        d_r = Eigen::Map<const Eigen::VectorXd>(g.data(), K);
    }
    const Eigen::VectorXd d_view = s.transpose() * d_r;
    t.d_view_risk.assign(d_view.data(), d_view.data() + V);
    t.d_selector += d_r * view_risk.transpose();

    t.separable = base == Method::ERM || base == Method::IRM;
    if (t.separable) {
        t.credits.resize(static_cast<std::size_t>(K));
        for (std::size_t k = 0; k < t.credits.size(); ++k) {
            t.credits[k] = t.sample_risks[k] + (kind == PenaltyKind::irm ? eta * sample_pen[k] : 0.0);
        }
    } else {
        t.credits = {fixed_env_objective(weighted, rv, t.penalty)};
    }
    return t;
}

} // namespace uaed::objectives
