#include "uaed/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "uaed/error.hpp"

namespace uaed::metrics {

void EnvAccuracyProfile::validate() const {
    if (descriptors.size() != accuracies.size()) {
        throw ConfigError("profile descriptors and accuracies differ in length");
    }
    for (double a : accuracies) {
        if (!(a >= 0.0 && a <= 1.0)) {
            throw ConfigError("accuracies must lie in [0, 1]");
        }
    }
}

double worst_case_accuracy(const EnvAccuracyProfile& profile) {
    if (profile.accuracies.empty()) {
        throw ConfigError("worst-case accuracy of an empty profile");
    }
    return *std::min_element(profile.accuracies.begin(), profile.accuracies.end());
}

double mean_accuracy(const EnvAccuracyProfile& profile) {
    if (profile.accuracies.empty()) {
        throw ConfigError("mean accuracy of an empty profile");
    }
    return std::accumulate(profile.accuracies.begin(), profile.accuracies.end(), 0.0) /
           static_cast<double>(profile.accuracies.size());
}

double accuracy(const Eigen::VectorXf& logits, const std::vector<int>& labels) {
    if (labels.empty() || static_cast<std::size_t>(logits.size()) != labels.size()) {
        throw ConfigError("accuracy needs matching, nonempty logits and labels");
    }
    std::size_t correct = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        correct += (logits[static_cast<Eigen::Index>(i)] > 0.0f ? 1 : 0) == labels[i] ? 1 : 0;
    }
    return static_cast<double>(correct) / static_cast<double>(labels.size());
}

Eigen::VectorXf predict(const nn::Mlp<float>& model, const data::Batch& batch, std::size_t chunk) {
    const auto n = batch.x.rows();
    Eigen::VectorXf out(n);
    const auto step = static_cast<Eigen::Index>(std::max<std::size_t>(chunk, 1));
    for (Eigen::Index start = 0; start < n; start += step) {
        const Eigen::Index len = std::min(step, n - start);
        const nn::Mlp<float>::Matrix x = batch.x.middleRows(start, len);
        out.segment(start, len) = model.logits(x);
    }
    return out;
}

EnvAccuracyProfile env_accuracy_profile(const nn::Mlp<float>& model, const std::vector<data::EnvDataset>& test_sets) {
    if (test_sets.empty()) {
        throw ConfigError("accuracy profile needs at least one test set");
    }
    EnvAccuracyProfile p;
    for (const auto& ds : test_sets) {
        p.descriptors.push_back(ds.descriptor);
        p.accuracies.push_back(accuracy(predict(model, ds.data), ds.data.labels));
    }
    return p;
}

PolicyStats policy_stats(const policy::Policy& pol, std::size_t n_samples, Rng& rng,
                         const std::vector<double>& atom_values) {
    if (n_samples < 100) {
        throw ConfigError("policy statistics need at least 100 samples");
    }
    const auto value_of = [&](std::size_t idx) {
        return atom_values.empty() ? static_cast<double>(idx) : atom_values.at(idx);
    };
    std::vector<double> draws;
    draws.reserve(n_samples);
    PolicyStats s;
    if (const auto* c = std::get_if<policy::ContinuousPolicy>(&pol)) {
        const auto shape = policy::beta_params(*c);
        draws = policy::sample_beta(shape, static_cast<int>(n_samples), rng).gammas;
        s.analytic_mean = shape.mean();
        s.analytic_std = std::sqrt(shape.variance());
    } else if (const auto* d = std::get_if<policy::DiscretePolicy>(&pol)) {
        const auto sample = policy::sample_discrete(*d, static_cast<int>(n_samples), rng);
        for (const auto& y : sample.relaxed) {
            Eigen::Index arg = 0;
            y.maxCoeff(&arg);
            draws.push_back(value_of(static_cast<std::size_t>(arg)));
        }
        const Eigen::VectorXd p = d->probabilities();
        double m = 0.0;
        double m2 = 0.0;
        for (Eigen::Index i = 0; i < p.size(); ++i) {
            const double v = value_of(static_cast<std::size_t>(i));
            m += p[i] * v;
            m2 += p[i] * v * v;
        }
        s.analytic_mean = m;
        s.analytic_std = std::sqrt(std::max(0.0, m2 - m * m));
    } else {
        const auto& atoms = std::get<policy::AtomPolicy>(pol).atoms;
        if (atoms.empty()) {
            throw ConfigError("atom policy has no atoms");
        }
        for (std::size_t i = 0; i < n_samples; ++i) {
            draws.push_back(atoms[uniform_index(rng, atoms.size())]);
        }
        double m = 0.0;
        double m2 = 0.0;
        for (double a : atoms) {
            m += a;
            m2 += a * a;
        }
        m /= static_cast<double>(atoms.size());
        m2 /= static_cast<double>(atoms.size());
        s.analytic_mean = m;
        s.analytic_std = std::sqrt(std::max(0.0, m2 - m * m));
    }
    const double n = static_cast<double>(draws.size());
    const double mean = std::accumulate(draws.begin(), draws.end(), 0.0) / n;
    double var = 0.0;
    for (double v : draws) {
        var += (v - mean) * (v - mean);
    }
    s.mean = mean;
    s.std = std::sqrt(var / (n - 1.0));
    s.samples = draws.size();
    return s;
}

double entropy(const Eigen::VectorXd& p) {
    double h = 0.0;
    for (double v : p) {
        if (v > 0.0) {
            h -= v * std::log(v);
        }
    }
    return h;
}

double normalized_entropy(const Eigen::VectorXd& p) {
    if (p.size() <= 1) {
        return 0.0;
    }
    return entropy(p) / std::log(static_cast<double>(p.size()));
}

std::vector<double> loss_variance_trace(const std::vector<std::vector<double>>& per_env_risks) {
    std::vector<double> out;
    out.reserve(per_env_risks.size());
    for (const auto& risks : per_env_risks) {
        if (risks.empty()) {
            throw ConfigError("epoch record carries no per-environment risks");
        }
        const double m = std::accumulate(risks.begin(), risks.end(), 0.0) / static_cast<double>(risks.size());
        double v = 0.0;
        for (double r : risks) {
            v += (r - m) * (r - m);
        }
        out.push_back(v / static_cast<double>(risks.size()));
    }
    return out;
}

} // namespace uaed::metrics
