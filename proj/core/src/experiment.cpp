#include "uaed/experiment.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "uaed/data.hpp"
#include "uaed/error.hpp"
#include "uaed/metrics.hpp"

namespace uaed::experiment {

namespace {

using config::DatasetKind;
using config::RunConfig;
using nlohmann::json;

// Separate stream for data construction so the training generator is not
// shifted by dataset sizes.
constexpr std::uint64_t kDataStream = 0x5eed0da7a5eedULL;

std::vector<double> colored_grid() {
    std::vector<double> grid;
    for (int i = 0; i <= 10; ++i) {
        grid.push_back(i / 10.0);
    }
    return grid;
}

trainer::Problem colored_problem(const RunConfig& c, Rng& rng) {
    const data::MnistSplit train_raw = data::load_mnist(c.data_dir, true);
    const data::MnistSplit test_raw = data::load_mnist(c.data_dir, false);
    const data::MnistSplit train = train_raw.slice(0, c.subsample);
    const data::MnistSplit probe = train_raw.slice(c.subsample, c.probe_size);
    const data::MnistSplit val = train_raw.slice(c.subsample + c.probe_size, c.val_size);
    const data::MnistSplit test = test_raw.slice(0, std::min(c.test_size, test_raw.size()));

    trainer::Problem p;
    p.family = data::make_color_family(data::grayscale_batch(train, c.downsample), c.label_noise);
    p.train_envs = c.resolved_train_envs();
    data::ColoredMnistOptions opts{c.label_noise, c.downsample, data::Split::train};
    for (double e : colored_grid()) {
        p.probe.push_back(data::build_colored_mnist(probe, e, rng, opts));
    }
    opts.split = data::Split::val;
    for (double e : p.train_envs) {
        p.val.push_back(data::build_colored_mnist(val, e, rng, opts));
    }
    opts.split = data::Split::test;
    for (double e : colored_grid()) {
        p.test.push_back(data::build_colored_mnist(test, e, rng, opts));
    }
    return p;
}

trainer::Problem rotated_problem(const RunConfig& c) {
    const data::MnistSplit train_raw = data::load_mnist(c.data_dir, true);
    const data::MnistSplit test_raw = data::load_mnist(c.data_dir, false);
    const data::MnistSplit train = train_raw.slice(0, c.subsample);
    const data::MnistSplit probe = train_raw.slice(c.subsample, c.probe_size);
    const data::MnistSplit val = train_raw.slice(c.subsample + c.probe_size, c.val_size);
    const data::MnistSplit test = test_raw.slice(0, std::min(c.test_size, test_raw.size()));

    trainer::Problem p;
    p.family = data::make_rotation_family(train, c.downsample);
    p.train_envs = c.resolved_train_envs();
    p.atom_values.assign(data::kRotationDegrees.begin(), data::kRotationDegrees.end());
    const std::vector<int> all{0, 1, 2, 3, 4};
    std::vector<int> train_angles;
    for (double e : p.train_envs) {
        train_angles.push_back(static_cast<int>(e));
    }
    p.probe = data::build_rotated_mnist(probe, all, {c.downsample, data::Split::train});
    p.val = data::build_rotated_mnist(val, train_angles, {c.downsample, data::Split::val});
    p.test = data::build_rotated_mnist(test, all, {c.downsample, data::Split::test});
    return p;
}

trainer::Problem group_problem(const RunConfig& c, Rng& rng) {
    trainer::Problem p;
    const data::EnvDataset train = data::build_synthetic_groups(c.group_n, c.spurious_corr, rng, data::Split::train);
    const data::EnvDataset val = data::build_synthetic_groups(c.group_val_n, c.spurious_corr, rng, data::Split::val);
    const data::EnvDataset test = data::build_synthetic_groups(c.group_test_n, c.test_corr, rng, data::Split::test);
    p.family = data::make_group_shift_family(train.data);
    p.train_envs = c.resolved_train_envs();
    p.probe = data::split_by_group(val);
    p.val = p.probe;
    p.test = data::split_by_group(test);
    return p;
}

json policy_to_json(const trainer::PolicySummary& p) {
    return {{"kind", p.kind},          {"alpha", p.alpha}, {"beta", p.beta},
            {"probabilities", p.probabilities}, {"atoms", p.atoms}, {"mean", p.mean},
            {"entropy_ratio", p.entropy_ratio}, {"temperature", p.temperature}};
}

trainer::PolicySummary policy_from_json(const json& j) {
    trainer::PolicySummary p;
    p.kind = j.value("kind", "");
    p.alpha = j.value("alpha", 0.0);
    p.beta = j.value("beta", 0.0);
    p.probabilities = j.value("probabilities", std::vector<double>{});
    p.atoms = j.value("atoms", std::vector<double>{});
    p.mean = j.value("mean", 0.0);
    p.entropy_ratio = j.value("entropy_ratio", 0.0);
    p.temperature = j.value("temperature", 0.0);
    return p;
}

double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) {
        s += x;
    }
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

double std_of(const std::vector<double>& v) {
    if (v.size() < 2) {
        return 0.0;
    }
    const double m = mean_of(v);
    double s = 0.0;
    for (double x : v) {
        s += (x - m) * (x - m);
    }
    return std::sqrt(s / static_cast<double>(v.size() - 1));
}

RunSummary summarize(const RunConfig& c, std::uint64_t seed, const trainer::TrainResult& result,
                     const trainer::Problem& problem, double seconds) {
    RunSummary s;
    s.method = objectives::to_string(c.train.robust.method);
    s.dataset = config::to_string(c.dataset);
    s.seed = seed;
    s.baseline = !objectives::is_adaptive(c.train.robust.method);
    s.config_hash = config::config_hash(c);
    s.train_envs = problem.train_envs;
    s.worst_test_acc = result.worst_test_accuracy;
    s.mean_test_acc = result.mean_test_accuracy;
    for (std::size_t i = 0; i < problem.test.size(); ++i) {
        s.test_profile.push_back({problem.test[i].descriptor.label(), problem.test[i].descriptor.value,
                                  result.test_accuracy[i]});
    }
    const auto& st = result.state;
    s.policy = trainer::summarize_policy(st.policy, problem.atom_values);
    Rng rng(seed + 1);
    const auto stats = metrics::policy_stats(st.policy, 10000, rng, problem.atom_values);
    s.policy_mc_mean = stats.mean;
    s.policy_mc_std = stats.std;
    if (!st.trace.empty()) {
        s.final_risk_variance = st.trace.back().risk_variance;
        s.final_train_env_variance = st.trace.back().train_env_variance;
    }
    s.epochs_run = static_cast<int>(st.trace.size());
    s.best_epoch = st.best_epoch;
    std::vector<double> norms;
    for (const auto& r : st.trace) {
        norms.push_back(r.grad_norm_theta);
    }
    const auto start = static_cast<std::size_t>(std::max(0, c.train.warmup_epochs));
    if (norms.size() >= start + 10) {
        s.gradient_trend_violation = trainer::gradient_norm_trend(norms, start).violation;
    }
    s.runtime_seconds = seconds;
    return s;
}

void write_profile(const RunSummary& s, const std::filesystem::path& path) {
    std::ofstream out(path);
    out << "env\tvalue\taccuracy\n";
    for (const auto& e : s.test_profile) {
        out << e.label << '\t' << e.value << '\t' << std::setprecision(10) << e.accuracy << '\n';
    }
}

} // namespace

trainer::Problem build_problem(const RunConfig& config, std::uint64_t seed) {
    config.validate();
    Rng rng(seed ^ kDataStream);
    switch (config.dataset) {
    case DatasetKind::colored_mnist: return colored_problem(config, rng);
    case DatasetKind::rotated_mnist: return rotated_problem(config);
    case DatasetKind::synthetic_groups: return group_problem(config, rng);
    }
    throw ConfigError("unknown dataset");
}

std::filesystem::path run_directory(const RunConfig& config, std::uint64_t seed) {
    return std::filesystem::path(config.out_dir) / (config::config_hash(config) + "-seed" + std::to_string(seed));
}

RunSummary run_seed(const RunConfig& base, std::uint64_t seed, std::ostream* log, bool resume) {
    RunConfig c = base;
    c.seeds = {seed};
    c.train.seed = seed;
    c.validate();
    const auto dir = run_directory(c, seed);
    std::filesystem::create_directories(dir);
    const auto summary_path = dir / "summary.json";
    const auto checkpoint_path = dir / "checkpoint.json";
    const auto metrics_path = dir / "metrics.jsonl";
    if (resume && std::filesystem::exists(summary_path)) {
        if (log) {
            *log << "seed " << seed << ": reusing finished run " << dir.string() << '\n';
        }
        return read_summary(dir);
    }
    {
        std::ofstream cfg(dir / "config.ini");
        cfg << config::serialize_config(c);
    }

    const auto t0 = std::chrono::steady_clock::now();
    const trainer::Problem problem = build_problem(c, seed);
    trainer::TrainState state = trainer::init_state(c.train, problem);
    if (resume && std::filesystem::exists(checkpoint_path)) {
        trainer::load_checkpoint(state, checkpoint_path);
        if (log) {
            *log << "seed " << seed << ": resuming at epoch " << state.epoch << '\n';
        }
    }
    {
        // Rewrite the metrics file from the trace so it matches the checkpoint.
        std::ofstream out(metrics_path, std::ios::trunc);
        for (const auto& r : state.trace) {
            out << trainer::to_jsonl(r) << '\n';
        }
    }
    const auto on_epoch = [&](const trainer::TrainState& st, const trainer::EpochRecord& r) {
        std::ofstream out(metrics_path, std::ios::app);
        out << trainer::to_jsonl(r) << '\n';
        out.close();
        trainer::save_checkpoint(st, checkpoint_path);
        if (log) {
            *log << "seed " << seed << " epoch " << std::setw(2) << r.epoch << "  risk " << std::fixed
                 << std::setprecision(4) << r.mean_risk << "  pen " << std::scientific << std::setprecision(2)
                 << r.penalty << "  var " << r.risk_variance << std::fixed << std::setprecision(3) << "  val_worst "
                 << r.val_worst_acc << "  policy_mean " << r.policy.mean << std::defaultfloat << std::endl;
        }
    };
    const trainer::TrainResult result = trainer::train(std::move(state), c.train, problem, on_epoch);
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    RunSummary s = summarize(c, seed, result, problem, seconds);
    write_profile(s, dir / "profile.tsv");
    write_summary(s, summary_path);
    if (log) {
        *log << "seed " << seed << ": worst " << std::setprecision(4) << s.worst_test_acc << "  mean "
             << s.mean_test_acc << "  (" << std::setprecision(3) << seconds << " s) -> " << dir.string() << '\n';
    }
    return s;
}

void write_summary(const RunSummary& s, const std::filesystem::path& path) {
    json profile = json::array();
    for (const auto& e : s.test_profile) {
        profile.push_back({{"label", e.label}, {"value", e.value}, {"accuracy", e.accuracy}});
    }
    const json j = {{"method", s.method},
                    {"dataset", s.dataset},
                    {"seed", s.seed},
                    {"baseline", s.baseline},
                    {"config_hash", s.config_hash},
                    {"train_envs", s.train_envs},
                    {"worst_test_acc", s.worst_test_acc},
                    {"mean_test_acc", s.mean_test_acc},
                    {"test_profile", profile},
                    {"policy", policy_to_json(s.policy)},
                    {"policy_mc_mean", s.policy_mc_mean},
                    {"policy_mc_std", s.policy_mc_std},
                    {"final_risk_variance", s.final_risk_variance},
                    {"final_train_env_variance", s.final_train_env_variance},
                    {"epochs_run", s.epochs_run},
                    {"best_epoch", s.best_epoch},
                    {"gradient_trend_violation", s.gradient_trend_violation},
                    {"runtime_seconds", s.runtime_seconds}};
    std::ofstream out(path);
    if (!out) {
        throw Error("cannot write " + path.string());
    }
    out << j.dump(2) << '\n';
}

RunSummary read_summary(const std::filesystem::path& run_dir) {
    const auto path = run_dir / "summary.json";
    std::ifstream in(path);
    if (!in) {
        throw FormatError("missing " + path.string());
    }
    try {
        const json j = json::parse(in);
        RunSummary s;
        s.method = j.at("method").get<std::string>();
        s.dataset = j.at("dataset").get<std::string>();
        s.seed = j.at("seed").get<std::uint64_t>();
        s.baseline = j.at("baseline").get<bool>();
        s.config_hash = j.value("config_hash", "");
        s.train_envs = j.value("train_envs", std::vector<double>{});
        s.worst_test_acc = j.at("worst_test_acc").get<double>();
        s.mean_test_acc = j.at("mean_test_acc").get<double>();
        for (const auto& e : j.at("test_profile")) {
            s.test_profile.push_back({e.at("label").get<std::string>(), e.at("value").get<double>(),
                                      e.at("accuracy").get<double>()});
        }
        s.policy = policy_from_json(j.at("policy"));
        s.policy_mc_mean = j.value("policy_mc_mean", 0.0);
        s.policy_mc_std = j.value("policy_mc_std", 0.0);
        s.final_risk_variance = j.value("final_risk_variance", 0.0);
        s.final_train_env_variance = j.value("final_train_env_variance", 0.0);
        s.epochs_run = j.value("epochs_run", 0);
        s.best_epoch = j.value("best_epoch", -1);
        s.gradient_trend_violation = j.value("gradient_trend_violation", false);
        s.runtime_seconds = j.value("runtime_seconds", 0.0);
        return s;
    } catch (const json::exception& e) {
        throw FormatError("malformed " + path.string() + ": " + e.what());
    }
}

Aggregate aggregate(const std::vector<RunSummary>& runs) {
    if (runs.empty()) {
        throw ConfigError("nothing to aggregate");
    }
    Aggregate a;
    a.method = runs.front().method;
    a.dataset = runs.front().dataset;
    a.baseline = runs.front().baseline;
    a.runs = runs.size();
    std::vector<double> worst;
    std::vector<double> avg;
    std::vector<double> pol;
    for (const auto& r : runs) {
        worst.push_back(r.worst_test_acc);
        avg.push_back(r.mean_test_acc);
        pol.push_back(r.policy.mean);
    }
    a.worst_mean = mean_of(worst);
    a.worst_std = std_of(worst);
    a.avg_mean = mean_of(avg);
    a.avg_std = std_of(avg);
    a.policy_mean = mean_of(pol);
    a.policy_std = std_of(pol);
    a.profile_mean = runs.front().test_profile;
    for (std::size_t i = 0; i < a.profile_mean.size(); ++i) {
        std::vector<double> acc;
        for (const auto& r : runs) {
            if (i < r.test_profile.size()) {
                acc.push_back(r.test_profile[i].accuracy);
            }
        }
        a.profile_mean[i].accuracy = mean_of(acc);
    }
    return a;
}

void write_aggregate(const Aggregate& a, const std::vector<RunSummary>& runs, const std::filesystem::path& path) {
    json seeds = json::array();
    for (const auto& r : runs) {
        seeds.push_back({{"seed", r.seed}, {"worst_test_acc", r.worst_test_acc}, {"mean_test_acc", r.mean_test_acc}});
    }
    json profile = json::array();
    for (const auto& e : a.profile_mean) {
        profile.push_back({{"label", e.label}, {"value", e.value}, {"accuracy", e.accuracy}});
    }
    const json j = {{"method", a.method},         {"dataset", a.dataset},     {"baseline", a.baseline},
                    {"runs", a.runs},             {"worst_mean", a.worst_mean}, {"worst_std", a.worst_std},
                    {"avg_mean", a.avg_mean},     {"avg_std", a.avg_std},     {"policy_mean", a.policy_mean},
                    {"policy_std", a.policy_std}, {"profile_mean", profile}, {"seeds", seeds}};
    std::ofstream out(path);
    if (!out) {
        throw Error("cannot write " + path.string());
    }
    out << j.dump(2) << '\n';
}

std::string sweep_table(const std::vector<Aggregate>& rows) {
    const Aggregate* irm = nullptr;
    for (const auto& r : rows) {
        if (r.method == "IRM") {
            irm = &r;
        }
    }
    std::ostringstream out;
    out << "method\tworst_acc\tworst_std\tmean_acc\tmean_std\tgain_vs_IRM\n";
    out << std::fixed << std::setprecision(2);
    for (const auto& r : rows) {
        out << r.method << '\t' << 100.0 * r.worst_mean << '\t' << 100.0 * r.worst_std << '\t' << 100.0 * r.avg_mean
            << '\t' << 100.0 * r.avg_std << '\t';
        if (irm && &r != irm) {
            out << std::showpos << 100.0 * (r.worst_mean - irm->worst_mean) << std::noshowpos;
        } else {
            out << '-';
        }
        out << '\n';
    }
    return out.str();
}

RunSummary evaluate_run(const std::filesystem::path& run_dir, const std::string& data_dir_override) {
    RunConfig c = config::load_config(run_dir / "config.ini");
    if (!data_dir_override.empty()) {
        c.data_dir = data_dir_override;
    }
    if (c.seeds.size() != 1) {
        throw ConfigError("run directory config must name exactly one seed");
    }
    const std::uint64_t seed = c.seeds.front();
    c.train.seed = seed;
    const trainer::Problem problem = build_problem(c, seed);
    trainer::TrainState state = trainer::init_state(c.train, problem);
    trainer::load_checkpoint(state, run_dir / "checkpoint.json");
    if (c.train.selection == trainer::Selection::best_val_worst && state.best_epoch >= 0) {
        state.model.parameters() = state.best_theta;
        policy::set_policy_parameters(state.policy, state.best_phi);
    }
    trainer::TrainResult result;
    const auto profile = metrics::env_accuracy_profile(state.model, problem.test);
    result.test_accuracy = profile.accuracies;
    result.worst_test_accuracy = metrics::worst_case_accuracy(profile);
    result.mean_test_accuracy = metrics::mean_accuracy(profile);
    result.state = std::move(state);
    return summarize(c, seed, result, problem, 0.0);
}

} // namespace uaed::experiment
