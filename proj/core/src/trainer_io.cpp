#include <cmath>
#include <fstream>
#include <limits>

#include <json.hpp>

#include "uaed/error.hpp"
#include "uaed/trainer.hpp"

namespace uaed::trainer {

namespace {

using nlohmann::json;

json number(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

double read_number(const json& j, const char* key) {
    const auto it = j.find(key);
    if (it == j.end() || it->is_null()) {
        return std::numeric_limits<double>::quiet_NaN();
    }
    return it->get<double>();
}

template <class V>
json to_array(const V& v) {
    json a = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        a.push_back(v[i]);
    }
    return a;
}

template <class Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, 1> from_array(const json& a) {
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> v(static_cast<Eigen::Index>(a.size()));
    for (std::size_t i = 0; i < a.size(); ++i) {
        v[static_cast<Eigen::Index>(i)] = a[i].get<Scalar>();
    }
    return v;
}

json policy_json(const PolicySummary& p) {
    return {{"kind", p.kind},
            {"alpha", p.alpha},
            {"beta", p.beta},
            {"probabilities", p.probabilities},
            {"atoms", p.atoms},
            {"mean", p.mean},
            {"entropy_ratio", p.entropy_ratio},
            {"temperature", p.temperature}};
}

PolicySummary policy_from_json(const json& j) {
    PolicySummary p;
    p.kind = j.at("kind").get<std::string>();
    p.alpha = j.value("alpha", 0.0);
    p.beta = j.value("beta", 0.0);
    p.probabilities = j.value("probabilities", std::vector<double>{});
    p.atoms = j.value("atoms", std::vector<double>{});
    p.mean = j.value("mean", 0.0);
    p.entropy_ratio = j.value("entropy_ratio", 0.0);
    p.temperature = j.value("temperature", 0.0);
    return p;
}

json record_json(const EpochRecord& r) {
    return {{"epoch", r.epoch},
            {"step", r.step},
            {"mean_risk", number(r.mean_risk)},
            {"objective", number(r.objective)},
            {"penalty", number(r.penalty)},
            {"eta", r.eta},
            {"per_env_risk", r.per_env_risk},
            {"per_env_acc", r.per_env_acc},
            {"risk_variance", number(r.risk_variance)},
            {"train_env_variance", number(r.train_env_variance)},
            {"kl", number(r.kl)},
            {"policy_summary", policy_json(r.policy)},
            {"grad_norm_theta", number(r.grad_norm_theta)},
            {"grad_norm_phi", number(r.grad_norm_phi)},
            {"val_worst_acc", r.val_worst_acc},
            {"val_mean_acc", r.val_mean_acc},
            {"aborted_steps", r.aborted_steps}};
}

EpochRecord record_from_json(const json& j) {
    EpochRecord r;
    r.epoch = j.at("epoch").get<int>();
    r.step = j.value("step", 0LL);
    r.mean_risk = read_number(j, "mean_risk");
    r.objective = read_number(j, "objective");
    r.penalty = read_number(j, "penalty");
    r.eta = j.value("eta", 0.0);
    r.per_env_risk = j.at("per_env_risk").get<std::vector<double>>();
    r.per_env_acc = j.value("per_env_acc", std::vector<double>{});
    r.risk_variance = read_number(j, "risk_variance");
    r.train_env_variance = read_number(j, "train_env_variance");
    r.kl = read_number(j, "kl");
    r.policy = policy_from_json(j.at("policy_summary"));
    r.grad_norm_theta = read_number(j, "grad_norm_theta");
    r.grad_norm_phi = read_number(j, "grad_norm_phi");
    r.val_worst_acc = j.value("val_worst_acc", 0.0);
    r.val_mean_acc = j.value("val_mean_acc", 0.0);
    r.aborted_steps = j.value("aborted_steps", 0);
    return r;
}

} // namespace

std::string to_jsonl(const EpochRecord& record) { return record_json(record).dump(); }

EpochRecord parse_record(const std::string& line) {
    try {
        return record_from_json(json::parse(line));
    } catch (const json::exception& e) {
        throw FormatError(std::string("malformed metrics record: ") + e.what());
    }
}

std::vector<EpochRecord> read_metrics(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw FormatError("cannot open metrics file " + path.string());
    }
    std::vector<EpochRecord> out;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty()) {
            out.push_back(parse_record(line));
        }
    }
    return out;
}

void save_checkpoint(const TrainState& s, const std::filesystem::path& path) {
    json trace = json::array();
    for (const auto& r : s.trace) {
        trace.push_back(record_json(r));
    }
    const json j = {
        {"theta", to_array(s.model.parameters())},
        {"theta_adam", {{"m", to_array(s.opt_theta.first_moment())},
                        {"v", to_array(s.opt_theta.second_moment())},
                        {"t", s.opt_theta.steps()}}},
        {"phi", to_array(policy::policy_parameters(s.policy))},
        {"phi_adam", {{"m", to_array(s.opt_phi.first_moment())},
                      {"v", to_array(s.opt_phi.second_moment())},
                      {"t", s.opt_phi.steps()}}},
        {"baseline", s.baseline},
        {"baseline_ready", s.baseline_ready},
        {"rng", serialize_rng(s.rng)},
        {"epoch", s.epoch},
        {"step", s.step},
        {"best_worst_group_val", s.best_worst_group_val},
        {"best_epoch", s.best_epoch},
        {"epochs_without_improvement", s.epochs_without_improvement},
        {"consecutive_aborts", s.consecutive_aborts},
        {"best_theta", to_array(s.best_theta)},
        {"best_phi", to_array(s.best_phi)},
        {"trace", trace},
    };
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp);
        if (!out) {
            throw Error("cannot write checkpoint " + tmp);
        }
        out << j.dump();
    }
    std::filesystem::rename(tmp, path);
}

void load_checkpoint(TrainState& s, const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw FormatError("cannot open checkpoint " + path.string());
    }
    try {
        const json j = json::parse(in);
        auto theta = from_array<float>(j.at("theta"));
        if (theta.size() != s.model.parameters().size()) {
            throw FormatError("checkpoint network does not match the configuration");
        }
        s.model.parameters() = theta;
        s.opt_theta.restore(from_array<float>(j.at("theta_adam").at("m")), from_array<float>(j.at("theta_adam").at("v")),
                            j.at("theta_adam").at("t").get<long long>());
        policy::set_policy_parameters(s.policy, from_array<double>(j.at("phi")));
        s.opt_phi.restore(from_array<double>(j.at("phi_adam").at("m")), from_array<double>(j.at("phi_adam").at("v")),
                          j.at("phi_adam").at("t").get<long long>());
        s.baseline = j.at("baseline").get<double>();
        s.baseline_ready = j.at("baseline_ready").get<bool>();
        s.rng = deserialize_rng(j.at("rng").get<std::string>());
        s.epoch = j.at("epoch").get<int>();
        s.step = j.at("step").get<long long>();
        s.best_worst_group_val = j.at("best_worst_group_val").get<double>();
        s.best_epoch = j.at("best_epoch").get<int>();
        s.epochs_without_improvement = j.at("epochs_without_improvement").get<int>();
        s.consecutive_aborts = j.at("consecutive_aborts").get<int>();
        s.best_theta = from_array<float>(j.at("best_theta"));
        s.best_phi = from_array<double>(j.at("best_phi"));
        s.trace.clear();
        for (const auto& r : j.at("trace")) {
            s.trace.push_back(record_from_json(r));
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed checkpoint: ") + e.what());
    }
}

} // namespace uaed::trainer
