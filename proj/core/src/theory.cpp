#include "uaed/theory.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <boost/multiprecision/cpp_bin_float.hpp>
#include <boost/random/gamma_distribution.hpp>

#include "uaed/error.hpp"
#include "uaed/objectives.hpp"

namespace uaed::theory {

namespace {

double log_mean_exp(const Eigen::VectorXd& pi, const Eigen::VectorXd& r, double lambda) {
    const double m = lambda * r.maxCoeff();
    double s = 0.0;
    for (Eigen::Index i = 0; i < r.size(); ++i) {
        s += pi[i] * std::exp(lambda * r[i] - m);
    }
    return m + std::log(s);
}

Eigen::VectorXd tilt(const Eigen::VectorXd& pi, const Eigen::VectorXd& r, double lambda) {
    const double m = lambda * r.maxCoeff();
    Eigen::VectorXd g(pi.size());
    for (Eigen::Index i = 0; i < pi.size(); ++i) {
        g[i] = pi[i] * std::exp(lambda * r[i] - m);
    }
    return g / g.sum();
}

double tilt_kl(const Eigen::VectorXd& pi, const Eigen::VectorXd& r, double lambda) {
    const Eigen::VectorXd g = tilt(pi, r, lambda);
    return std::max(0.0, lambda * g.dot(r) - log_mean_exp(pi, r, lambda));
}

Eigen::VectorXd dirichlet(std::size_t k, double concentration, Rng& rng) {
    boost::random::gamma_distribution<double> gamma(concentration, 1.0);
    Eigen::VectorXd v(static_cast<Eigen::Index>(k));
    for (auto& x : v) {
        x = gamma(rng);
    }
    return v / v.sum();
}

// Extended-precision evaluations of the closed-form bounds, used as an
// independent reference for the double-precision code paths.
using Hp = boost::multiprecision::cpp_bin_float_50;

Hp hp_pac_bayes(double emp, double kl, std::size_t n, double delta) {
    return Hp(emp) + sqrt((Hp(kl) + log(Hp(1) / Hp(delta))) / (Hp(2) * Hp(n)));
}

Hp hp_transport(double mean, double kl) { return Hp(mean) + sqrt(Hp(kl) / Hp(2)); }

Hp hp_lse_rhs(const Eigen::VectorXd& r, double lambda) {
    Hp s = 0;
    for (double v : r) {
        s += exp(Hp(lambda) * Hp(v));
    }
    const Hp k(static_cast<double>(r.size()));
    return log(s / k) / Hp(lambda) + log(k) / Hp(lambda);
}

LoaLa hp_loa_la(const Eigen::VectorXd& pi, const Eigen::VectorXd& l) {
    Hp loa = 0;
    Hp s = 0;
    for (Eigen::Index i = 0; i < pi.size(); ++i) {
        loa += Hp(pi[i]) * Hp(l[i]);
        s += Hp(pi[i]) * exp(-Hp(l[i]));
    }
    const Hp la = -log(s);
    return {static_cast<double>(loa), static_cast<double>(la), static_cast<double>(loa - la)};
}

} // namespace

void FiniteEnvInstance::validate() const {
    if (pi.size() == 0) {
        throw ConfigError("instance needs at least one environment");
    }
    if (risks.size() != pi.size()) {
        throw ConfigError("policy and risk vectors differ in length");
    }
    if ((pi.array() <= 0.0).any() || std::abs(pi.sum() - 1.0) > 1e-12) {
        throw ConfigError("policy must be strictly positive and sum to 1");
    }
    if ((risks.array() < 0.0).any() || (risks.array() > 1.0).any()) {
        throw ConfigError("risks must lie in [0, 1]");
    }
    if (f_values.size() != 0) {
        if (f_values.size() != pi.size()) {
            throw ConfigError("f values and policy differ in length");
        }
        if ((f_values.array() < 0.0).any() || (f_values.array() > 1.0).any()) {
            throw ConfigError("f values must lie in [0, 1]");
        }
    }
}

BoundReport BoundReport::make(std::string name, double lhs, double rhs, std::size_t instances) {
    BoundReport r;
    r.name = std::move(name);
    r.lhs = lhs;
    r.rhs = rhs;
    r.slack = rhs - lhs;
    r.satisfied = r.slack >= -kReportTolerance;
    r.instances = instances;
    return r;
}

double pac_bayes_bound(double emp_risk, double kl_qm, std::size_t n, double delta) {
    if (n == 0) {
        throw ConfigError("PAC-Bayes bound needs n >= 1");
    }
    if (!(delta > 0.0 && delta <= 1.0)) {
        throw ConfigError("delta must lie in (0, 1]");
    }
    if (!(kl_qm >= 0.0)) {
        throw ConfigError("KL term must be nonnegative");
    }
    return emp_risk + std::sqrt((kl_qm + std::log(1.0 / delta)) / (2.0 * static_cast<double>(n)));
}

double transport_bound(double mean_under_pi, double kl_g_pi) {
    if (!(kl_g_pi >= 0.0)) {
        throw ConfigError("KL term must be nonnegative");
    }
    return mean_under_pi + std::sqrt(kl_g_pi / 2.0);
}

double robust_generalization_bound(double emp_risk, double kl_qm, std::size_t n, double delta, double rho) {
    if (!(rho >= 0.0)) {
        throw ConfigError("rho must be nonnegative");
    }
    return pac_bayes_bound(emp_risk, kl_qm, n, delta) + std::sqrt(rho / 2.0);
}

double kl_divergence(const Eigen::VectorXd& g, const Eigen::VectorXd& pi) {
    if (g.size() != pi.size()) {
        throw ConfigError("KL needs equal-length vectors");
    }
    double kl = 0.0;
    for (Eigen::Index i = 0; i < g.size(); ++i) {
        if (g[i] <= 0.0) {
            continue;
        }
        if (pi[i] <= 0.0) {
            return std::numeric_limits<double>::infinity();
        }
        kl += g[i] * std::log(g[i] / pi[i]);
    }
    return std::max(kl, 0.0);
}

double worst_case_kl_ball(const FiniteEnvInstance& instance, double rho) {
    instance.validate();
    if (!(rho >= 0.0)) {
        throw ConfigError("rho must be nonnegative");
    }
    const Eigen::VectorXd& pi = instance.pi;
    const Eigen::VectorXd& r = instance.risks;
    const double r_max = r.maxCoeff();
    if (rho == 0.0) {
        return pi.dot(r);
    }
    double top_mass = 0.0;
    for (Eigen::Index i = 0; i < r.size(); ++i) {
        if (r[i] == r_max) {
            top_mass += pi[i];
        }
    }
    // Concentrating on the maximisers costs -log(top_mass); beyond that the
    // constraint is slack.
    if (rho >= -std::log(top_mass)) {
        return r_max;
    }

    // The KKT conditions put the maximiser in the tilt family g ∝ pi exp(lambda r),
    // whose divergence from pi increases with lambda. Bracket on a
    // log-spaced grid, then bisect for KL = rho.
    double lo = 0.0;
    double hi = 1e-3;
    while (tilt_kl(pi, r, hi) < rho) {
        lo = hi;
        hi *= 2.0;
        if (hi > 1e12) {
            return r_max;
        }
    }
    for (int it = 0; it < 200 && hi - lo > 1e-14 * hi; ++it) {
        const double mid = 0.5 * (lo + hi);
        (tilt_kl(pi, r, mid) < rho ? lo : hi) = mid;
    }
    double best = tilt(pi, r, lo).dot(r);

    // Safety net: feasible mixtures between pi and single vertices.
    for (Eigen::Index v = 0; v < pi.size(); ++v) {
        double a = 0.0;
        double b = 1.0;
        for (int it = 0; it < 100; ++it) {
            const double t = 0.5 * (a + b);
            Eigen::VectorXd g = (1.0 - t) * pi;
            g[v] += t;
            (kl_divergence(g, pi) <= rho ? a : b) = t;
        }
        Eigen::VectorXd g = (1.0 - a) * pi;
        g[v] += a;
        best = std::max(best, g.dot(r));
    }
    return best;
}

double entropic_dual(const FiniteEnvInstance& instance, double rho, const DualOptions& options) {
    instance.validate();
    if (!(rho >= 0.0)) {
        throw ConfigError("rho must be nonnegative");
    }
    if (!(options.lambda_min > 0.0) || options.lambda_max < options.lambda_min) {
        throw ConfigError("dual search bracket must satisfy 0 < lambda_min <= lambda_max");
    }
    const Eigen::VectorXd& pi = instance.pi;
    const Eigen::VectorXd& r = instance.risks;
    if (rho == 0.0) {
        return pi.dot(r);
    }
    const auto h = [&](double log_lambda) {
        const double lambda = std::exp(log_lambda);
        return (rho + log_mean_exp(pi, r, lambda)) / lambda;
    };
    double a = std::log(options.lambda_min);
    double b = std::log(options.lambda_max);
    const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
    double c = b - inv_phi * (b - a);
    double d = a + inv_phi * (b - a);
    double hc = h(c);
    double hd = h(d);
    for (int it = 0; it < options.iterations && b - a > 1e-12; ++it) {
        if (hc < hd) {
            b = d;
            d = c;
            hd = hc;
            c = b - inv_phi * (b - a);
            hc = h(c);
        } else {
            a = c;
            c = d;
            hc = hd;
            d = a + inv_phi * (b - a);
            hd = h(d);
        }
    }
    const double value = std::min({hc, hd, h(std::log(options.lambda_min)), h(std::log(options.lambda_max))});
    // The objective tends to max r as lambda grows without bound.
    return std::min(value, r.maxCoeff());
}

LoaLa loa_la_gap(const FiniteEnvInstance& instance) {
    instance.validate();
    LoaLa out;
    out.loa = instance.pi.dot(instance.risks);
    out.la = -log_mean_exp(instance.pi, -instance.risks, 1.0);
    out.gap = out.loa - out.la;
    return out;
}

BoundReport max_risk_lse_check(const FiniteEnvInstance& instance, double lambda) {
    instance.validate();
    if (!(lambda > 0.0)) {
        throw ConfigError("lambda must be positive");
    }
    const double k = static_cast<double>(instance.size());
    if ((instance.pi.array() - 1.0 / k).abs().maxCoeff() > 1e-12) {
        throw ConfigError("max-risk check expects a uniform policy");
    }
    const std::vector<double> risks(instance.risks.data(), instance.risks.data() + instance.risks.size());
    const double rhs = objectives::entropic_risk(risks, lambda) + std::log(k) / lambda;
    return BoundReport::make("max_risk_lse", instance.risks.maxCoeff(), rhs);
}

// ---------------------------------------------------------------------------

PacBayesCheck empirical_pac_bayes_check(const PacBayesSetup& setup) {
    if (setup.n == 0 || setup.trials < 1 || setup.hypotheses < 1 || setup.environments < 1) {
        throw ConfigError("PAC-Bayes check needs n, trials and grid sizes >= 1");
    }
    Rng rng(setup.seed);
    const auto pairs = static_cast<Eigen::Index>(setup.hypotheses * setup.environments);
    Eigen::VectorXd true_risk(pairs);
    for (auto& p : true_risk) {
        p = 0.1 + 0.8 * uniform_open(rng);
    }
    const Eigen::VectorXd prior = Eigen::VectorXd::Constant(pairs, 1.0 / static_cast<double>(pairs));
    Eigen::VectorXd fixed_q(pairs);
    for (Eigen::Index i = 0; i < pairs; ++i) {
        fixed_q[i] = static_cast<double>(i + 1);
    }
    fixed_q /= fixed_q.sum();

    const double n = static_cast<double>(setup.n);
    PacBayesCheck out;
    out.trials = setup.trials;
    int violations = 0;
    double slack_sum = 0.0;
    Eigen::VectorXd counts(pairs);
    for (int t = 0; t < setup.trials; ++t) {
        counts.setZero();
        for (std::size_t i = 0; i < setup.n; ++i) {
            // One draw of z couples the Bernoulli losses of every pair.
            const double u = uniform_open(rng);
            for (Eigen::Index j = 0; j < pairs; ++j) {
                counts[j] += u < true_risk[j] ? 1.0 : 0.0;
            }
        }
        const Eigen::VectorXd emp = counts / n;
        Eigen::VectorXd q;
        switch (setup.posterior) {
        case PosteriorKind::prior: q = prior; break;
        case PosteriorKind::fixed: q = fixed_q; break;
        case PosteriorKind::gibbs: {
            const Eigen::VectorXd logits = -setup.gibbs_temperature * n * emp;
            q = (logits.array() - logits.maxCoeff()).exp().matrix();
            q = q.cwiseProduct(prior);
            q /= q.sum();
            break;
        }
        }
        const double bound = pac_bayes_bound(q.dot(emp), kl_divergence(q, prior), setup.n, setup.delta);
        const double truth = q.dot(true_risk);
        violations += truth > bound ? 1 : 0;
        slack_sum += bound - truth;
    }
    out.violation_rate = static_cast<double>(violations) / setup.trials;
    out.allowed_rate = setup.delta + 2.0 * std::sqrt(setup.delta * (1.0 - setup.delta) / setup.trials);
    out.mean_slack = slack_sum / setup.trials;
    return out;
}

// ---------------------------------------------------------------------------

FiniteEnvInstance random_instance(std::size_t k, Rng& rng) {
    FiniteEnvInstance inst;
    Eigen::VectorXd pi = dirichlet(k, 1.0, rng).array().max(1e-6).matrix();
    inst.pi = pi / pi.sum();
    inst.risks.resize(static_cast<Eigen::Index>(k));
    inst.f_values.resize(static_cast<Eigen::Index>(k));
    for (std::size_t i = 0; i < k; ++i) {
        inst.risks[static_cast<Eigen::Index>(i)] = uniform_open(rng);
        inst.f_values[static_cast<Eigen::Index>(i)] = uniform_open(rng);
    }
    return inst;
}

std::vector<BoundReport> run_verification(const SuiteOptions& options) {
    std::vector<BoundReport> reports;
    Rng rng(options.seed);
    const auto trials = static_cast<std::size_t>(options.random_trials);

    {
        // Primal-dual agreement and the dual dominating the mean.
        double worst_gap = 0.0;
        double min_dual_slack = std::numeric_limits<double>::infinity();
        double worst_mean = 0.0;
        double worst_dual = 0.0;
        for (int i = 0; i < options.dual_instances; ++i) {
            const std::size_t k = 2 + uniform_index(rng, 7);
            const auto inst = random_instance(k, rng);
            const double rho = std::exp(std::log(0.01) + uniform_open(rng) * (std::log(2.0) - std::log(0.01)));
            const double primal = worst_case_kl_ball(inst, rho);
            const double dual = entropic_dual(inst, rho, options.dual);
            worst_gap = std::max(worst_gap, std::abs(primal - dual));
            const double mean = inst.pi.dot(inst.risks);
            if (dual - mean < min_dual_slack) {
                min_dual_slack = dual - mean;
                worst_mean = mean;
                worst_dual = dual;
            }
        }
        const auto n = static_cast<std::size_t>(options.dual_instances);
        reports.push_back(BoundReport::make("primal_dual_agreement", worst_gap, 1e-3, n));
        reports.push_back(BoundReport::make("dual_at_least_mean", worst_mean, worst_dual, n));
    }
    {
        // Degenerate radii of the KL ball.
        FiniteEnvInstance inst;
        inst.pi = Eigen::VectorXd::Constant(3, 1.0 / 3.0);
        inst.risks = Eigen::Vector3d(0.1, 0.5, 0.9);
        reports.push_back(BoundReport::make("kl_ball_zero_radius", std::abs(worst_case_kl_ball(inst, 0.0) - 0.5), 1e-12));
        reports.push_back(BoundReport::make("kl_ball_large_radius", std::abs(worst_case_kl_ball(inst, 1e3) - 0.9), 1e-3));
    }
    {
        double min_slack = std::numeric_limits<double>::infinity();
        BoundReport worst;
        for (std::size_t t = 0; t < trials; ++t) {
            const std::size_t k = 1 + uniform_index(rng, 6);
            const auto inst = random_instance(k, rng);
            const Eigen::VectorXd g = dirichlet(k, 0.5, rng);
            const double lhs = g.dot(inst.f_values);
            const double rhs = transport_bound(inst.pi.dot(inst.f_values), kl_divergence(g, inst.pi));
            if (rhs - lhs < min_slack) {
                min_slack = rhs - lhs;
                worst = BoundReport::make("transport_inequality", lhs, rhs, trials);
            }
        }
        reports.push_back(worst);
    }
    {
        double min_gap = std::numeric_limits<double>::infinity();
        double max_gap = 0.0;
        for (std::size_t t = 0; t < trials; ++t) {
            const auto inst = random_instance(1 + uniform_index(rng, 8), rng);
            const LoaLa v = loa_la_gap(inst);
            min_gap = std::min(min_gap, v.gap);
            max_gap = std::max(max_gap, v.gap);
        }
        reports.push_back(BoundReport::make("loa_la_gap_nonnegative", 0.0, min_gap, trials));
        reports.push_back(BoundReport::make("loa_la_gap_hoeffding", max_gap, 0.125, trials));
    }
    {
        double min_slack = std::numeric_limits<double>::infinity();
        BoundReport worst;
        for (std::size_t t = 0; t < trials; ++t) {
            const std::size_t k = 1 + uniform_index(rng, 8);
            auto inst = random_instance(k, rng);
            inst.pi = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(k), 1.0 / static_cast<double>(k));
            const double lambda = std::exp(std::log(0.1) + uniform_open(rng) * (std::log(100.0) - std::log(0.1)));
            BoundReport r = max_risk_lse_check(inst, lambda);
            if (r.slack < min_slack) {
                min_slack = r.slack;
                worst = r;
            }
        }
        worst.instances = trials;
        reports.push_back(worst);
    }
    {
        PacBayesSetup setup;
        setup.delta = options.delta;
        setup.trials = options.pac_trials;
        setup.seed = options.seed + 1;
        const PacBayesCheck gibbs = empirical_pac_bayes_check(setup);
        reports.push_back(BoundReport::make("pac_bayes_violation_rate", gibbs.violation_rate, gibbs.allowed_rate,
                                            static_cast<std::size_t>(setup.trials)));
        setup.posterior = PosteriorKind::prior;
        const PacBayesCheck degenerate = empirical_pac_bayes_check(setup);
        reports.push_back(BoundReport::make("pac_bayes_prior_posterior", degenerate.violation_rate, setup.delta,
                                            static_cast<std::size_t>(setup.trials)));
        setup.posterior = PosteriorKind::fixed;
        const PacBayesCheck small = empirical_pac_bayes_check(setup);
        setup.n *= 10;
        const PacBayesCheck large = empirical_pac_bayes_check(setup);
        const double ratio = small.mean_slack / large.mean_slack;
        reports.push_back(BoundReport::make("pac_bayes_rate_lower", 2.5, ratio, static_cast<std::size_t>(setup.trials)));
        reports.push_back(BoundReport::make("pac_bayes_rate_upper", ratio, 4.0, static_cast<std::size_t>(setup.trials)));
    }
    {
        double worst = 0.0;
        const std::size_t checks = 1000;
        for (std::size_t t = 0; t < checks; ++t) {
            const double emp = uniform_open(rng);
            const double kl = 5.0 * uniform_open(rng);
            const std::size_t n = 1 + uniform_index(rng, 100000);
            const double delta = uniform_open(rng);
            const double rho = 3.0 * uniform_open(rng);
            worst = std::max(worst, std::abs(pac_bayes_bound(emp, kl, n, delta) -
                                             static_cast<double>(hp_pac_bayes(emp, kl, n, delta))));
            worst = std::max(worst, std::abs(robust_generalization_bound(emp, kl, n, delta, rho) -
                                             static_cast<double>(hp_pac_bayes(emp, kl, n, delta) +
                                                                 sqrt(Hp(rho) / Hp(2)))));
            worst = std::max(worst, std::abs(transport_bound(emp, kl) - static_cast<double>(hp_transport(emp, kl))));

            const std::size_t k = 1 + uniform_index(rng, 8);
            const auto inst = random_instance(k, rng);
            const LoaLa a = loa_la_gap(inst);
            const LoaLa b = hp_loa_la(inst.pi, inst.risks);
            worst = std::max({worst, std::abs(a.loa - b.loa), std::abs(a.la - b.la), std::abs(a.gap - b.gap)});

            FiniteEnvInstance uniform = inst;
            uniform.pi = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(k), 1.0 / static_cast<double>(k));
            const double lambda = 0.1 + 99.9 * uniform_open(rng);
            worst = std::max(worst, std::abs(max_risk_lse_check(uniform, lambda).rhs -
                                             static_cast<double>(hp_lse_rhs(uniform.risks, lambda))));
        }
        reports.push_back(BoundReport::make("extended_precision_agreement", worst, 1e-12, checks));
    }
    return reports;
}

} // namespace uaed::theory
