#include "uaed/config.hpp"

#include <array>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "uaed/checksum.hpp"
#include "uaed/error.hpp"

namespace uaed::config {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) {
        return "";
    }
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    if (trim(s).empty()) {
        return out;
    }
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        out.push_back(trim(item));
    }
    return out;
}

std::string fmt(double v) {
    std::array<char, 64> buf{};
    const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    return {buf.data(), res.ptr};
}

double to_double(const std::string& s) {
    double v = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
        throw ConfigError("expected a number, got '" + s + "'");
    }
    return v;
}

long long to_int(const std::string& s) {
    long long v = 0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
        throw ConfigError("expected an integer, got '" + s + "'");
    }
    return v;
}

std::size_t to_size(const std::string& s) {
    const long long v = to_int(s);
    if (v < 0) {
        throw ConfigError("expected a nonnegative integer, got '" + s + "'");
    }
    return static_cast<std::size_t>(v);
}

bool to_bool(const std::string& s) {
    if (s == "true") {
        return true;
    }
    if (s == "false") {
        return false;
    }
    throw ConfigError("expected true or false, got '" + s + "'");
}

template <class T, class F>
std::string join(const std::vector<T>& v, F f) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        out += (i ? ", " : "") + f(v[i]);
    }
    return out;
}

struct Field {
    const char* section;
    const char* key;
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, const std::string&)> set;
};

#define UAED_NUM(sec, name, expr)                                                                                      \
    Field {                                                                                                           \
        sec, name, [](const RunConfig& c) { return fmt(c.expr); },                                                    \
            [](RunConfig& c, const std::string& v) { c.expr = to_double(v); }                                         \
    }
#define UAED_INT(sec, name, expr)                                                                                      \
    Field {                                                                                                           \
        sec, name, [](const RunConfig& c) { return std::to_string(c.expr); },                                         \
            [](RunConfig& c, const std::string& v) { c.expr = static_cast<decltype(c.expr)>(to_int(v)); }             \
    }
#define UAED_SIZE(sec, name, expr)                                                                                     \
    Field {                                                                                                           \
        sec, name, [](const RunConfig& c) { return std::to_string(c.expr); },                                         \
            [](RunConfig& c, const std::string& v) { c.expr = to_size(v); }                                           \
    }
#define UAED_BOOL(sec, name, expr)                                                                                     \
    Field {                                                                                                           \
        sec, name, [](const RunConfig& c) { return std::string(c.expr ? "true" : "false"); },                         \
            [](RunConfig& c, const std::string& v) { c.expr = to_bool(v); }                                           \
    }

const std::vector<Field>& fields() {
    static const std::vector<Field> table = {
        {"run", "dataset", [](const RunConfig& c) { return std::string(to_string(c.dataset)); },
         [](RunConfig& c, const std::string& v) { c.dataset = parse_dataset(v); }},
        {"run", "seeds", [](const RunConfig& c) { return join(c.seeds, [](std::uint64_t s) { return std::to_string(s); }); },
         [](RunConfig& c, const std::string& v) {
             c.seeds.clear();
             for (const auto& s : split_list(v)) {
                 c.seeds.push_back(static_cast<std::uint64_t>(to_size(s)));
             }
         }},
        {"run", "data_dir", [](const RunConfig& c) { return c.data_dir; },
         [](RunConfig& c, const std::string& v) { c.data_dir = v; }},
        {"run", "out_dir", [](const RunConfig& c) { return c.out_dir; },
         [](RunConfig& c, const std::string& v) { c.out_dir = v; }},
        UAED_SIZE("run", "subsample", subsample),
        UAED_SIZE("run", "probe_size", probe_size),
        UAED_SIZE("run", "val_size", val_size),
        UAED_SIZE("run", "test_size", test_size),
        UAED_INT("run", "downsample", downsample),
        UAED_NUM("run", "label_noise", label_noise),
        {"run", "train_envs", [](const RunConfig& c) { return join(c.train_envs, fmt); },
         [](RunConfig& c, const std::string& v) {
             c.train_envs.clear();
             for (const auto& s : split_list(v)) {
                 c.train_envs.push_back(to_double(s));
             }
         }},
        UAED_SIZE("run", "group_n", group_n),
        UAED_SIZE("run", "group_val_n", group_val_n),
        UAED_SIZE("run", "group_test_n", group_test_n),
        UAED_NUM("run", "spurious_corr", spurious_corr),
        UAED_NUM("run", "test_corr", test_corr),

        {"robust", "method", [](const RunConfig& c) { return std::string(objectives::to_string(c.train.robust.method)); },
         [](RunConfig& c, const std::string& v) { c.train.robust.method = objectives::parse_method(v); }},
        UAED_NUM("robust", "eta", train.robust.eta),
        UAED_NUM("robust", "eta_warmup", train.robust.eta_warmup),
        UAED_NUM("robust", "beta_kl", train.robust.beta_kl),
        UAED_NUM("robust", "lambda_ent", train.robust.lambda_ent),
        UAED_NUM("robust", "rho", train.robust.rho),
        UAED_INT("robust", "K", train.robust.K),
        UAED_BOOL("robust", "irm_two_split", train.robust.irm_two_split),

        UAED_NUM("train", "lr_theta", train.lr_theta),
        UAED_NUM("train", "adam_beta1", train.adam_beta1),
        UAED_NUM("train", "adam_beta2", train.adam_beta2),
        UAED_NUM("train", "weight_decay", train.weight_decay),
        UAED_INT("train", "batch_size", train.batch_size),
        UAED_INT("train", "epochs", train.epochs),
        UAED_INT("train", "warmup_epochs", train.warmup_epochs),
        UAED_BOOL("train", "resample_envs", train.resample_envs),
        {"train", "lr_decay", [](const RunConfig& c) { return std::string(trainer::to_string(c.train.lr_decay)); },
         [](RunConfig& c, const std::string& v) { c.train.lr_decay = trainer::parse_lr_decay(v); }},
        UAED_NUM("train", "lr_decay_power", train.lr_decay_power),
        {"train", "selection", [](const RunConfig& c) { return std::string(trainer::to_string(c.train.selection)); },
         [](RunConfig& c, const std::string& v) { c.train.selection = trainer::parse_selection(v); }},
        UAED_INT("train", "patience", train.patience),

        {"model", "hidden", [](const RunConfig& c) { return join(c.train.hidden, [](int h) { return std::to_string(h); }); },
         [](RunConfig& c, const std::string& v) {
             c.train.hidden.clear();
             for (const auto& s : split_list(v)) {
                 c.train.hidden.push_back(static_cast<int>(to_int(s)));
             }
         }},
        {"model", "activation", [](const RunConfig& c) { return std::string(nn::to_string(c.train.activation)); },
         [](RunConfig& c, const std::string& v) { c.train.activation = nn::parse_activation(v); }},

        {"policy", "kind", [](const RunConfig& c) { return std::string(trainer::to_string(c.train.policy)); },
         [](RunConfig& c, const std::string& v) { c.train.policy = trainer::parse_policy_choice(v); }},
        UAED_NUM("policy", "lr_multiplier", train.policy_lr_multiplier),
        UAED_NUM("policy", "init_mean", train.init_mean),
        UAED_NUM("policy", "init_concentration", train.init_concentration),
        UAED_INT("policy", "temperature_epochs", train.temperature_epochs),
        UAED_NUM("policy", "baseline_decay", train.baseline_decay),
        UAED_BOOL("policy", "pathwise", train.pathwise_gradient),
        UAED_NUM("policy", "prior_alpha", train.prior.beta_params.alpha),
        UAED_NUM("policy", "prior_beta", train.prior.beta_params.beta),
    };
    return table;
}

#undef UAED_NUM
#undef UAED_INT
#undef UAED_SIZE
#undef UAED_BOOL

} // namespace

DatasetKind parse_dataset(const std::string& name) {
    if (name == "colored_mnist") {
        return DatasetKind::colored_mnist;
    }
    if (name == "rotated_mnist") {
        return DatasetKind::rotated_mnist;
    }
    if (name == "synthetic_groups") {
        return DatasetKind::synthetic_groups;
    }
    throw ConfigError("unknown dataset '" + name + "'");
}

const char* to_string(DatasetKind kind) {
    switch (kind) {
    case DatasetKind::colored_mnist: return "colored_mnist";
    case DatasetKind::rotated_mnist: return "rotated_mnist";
    case DatasetKind::synthetic_groups: return "synthetic_groups";
    }
    return "?";
}

std::vector<double> RunConfig::resolved_train_envs() const {
    if (!train_envs.empty()) {
        return train_envs;
    }
    switch (dataset) {
    case DatasetKind::colored_mnist: return {0.1, 0.2};
    case DatasetKind::rotated_mnist: return {0.0, 2.0};
    case DatasetKind::synthetic_groups: return {data::kIdentityEnv};
    }
    return {};
}

void RunConfig::validate() const {
    train.validate();
    if (seeds.empty()) {
        throw ConfigError("run.seeds must list at least one seed");
    }
    if (dataset != DatasetKind::synthetic_groups) {
        if (subsample < 2) {
            throw ConfigError("run.subsample must be at least 2");
        }
        if (probe_size < 2 || val_size < 2 || test_size < 2) {
            throw ConfigError("run.probe_size, run.val_size and run.test_size must be at least 2");
        }
        if (downsample < 1 || 28 % downsample != 0) {
            throw ConfigError("run.downsample must divide 28");
        }
        if (!(label_noise >= 0.0 && label_noise <= 1.0)) {
            throw ConfigError("run.label_noise must lie in [0, 1]");
        }
    } else {
        if (group_n < 4 || group_val_n < 4 || group_test_n < 4) {
            throw ConfigError("run.group_n, run.group_val_n and run.group_test_n must be at least 4");
        }
        if (!(spurious_corr >= 0.0 && spurious_corr <= 1.0) || !(test_corr >= 0.0 && test_corr <= 1.0)) {
            throw ConfigError("run.spurious_corr and run.test_corr must lie in [0, 1]");
        }
    }
    const data::TransformFamily family = dataset == DatasetKind::colored_mnist   ? data::TransformFamily::color_correlation
                                         : dataset == DatasetKind::rotated_mnist ? data::TransformFamily::rotation
                                                                                 : data::TransformFamily::group_shift;
    for (double e : resolved_train_envs()) {
        try {
            data::EnvTransform{family, e}.validate();
        } catch (const ConfigError& err) {
            throw ConfigError(std::string("run.train_envs: ") + err.what());
        }
    }
}

RunConfig parse_config(const std::string& text) {
    RunConfig c;
    std::map<std::string, const Field*> index;
    std::set<std::string> sections;
    for (const auto& f : fields()) {
        index[std::string(f.section) + "." + f.key] = &f;
        sections.insert(f.section);
    }
    std::set<std::string> seen;
    std::stringstream in(text);
    std::string line;
    std::string section;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#' || t[0] == ';') {
            continue;
        }
        if (t.front() == '[') {
            if (t.back() != ']') {
                throw ConfigError("line " + std::to_string(line_no) + ": malformed section header");
            }
            section = trim(t.substr(1, t.size() - 2));
            if (!sections.count(section)) {
                throw ConfigError("line " + std::to_string(line_no) + ": unknown section '" + section + "'");
            }
            continue;
        }
        const auto eq = t.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
        }
        if (section.empty()) {
            throw ConfigError("line " + std::to_string(line_no) + ": key outside of a section");
        }
        const std::string path = section + "." + trim(t.substr(0, eq));
        const auto it = index.find(path);
        if (it == index.end()) {
            throw ConfigError(path + ": unknown key");
        }
        if (!seen.insert(path).second) {
            throw ConfigError(path + ": duplicate key");
        }
        try {
            it->second->set(c, trim(t.substr(eq + 1)));
        } catch (const ConfigError& e) {
            throw ConfigError(path + ": " + e.what());
        }
    }
    c.validate();
    return c;
}

RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open config " + path.string());
    }
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

std::string serialize_config(const RunConfig& config) {
    std::string out;
    std::string section;
    for (const auto& f : fields()) {
        if (section != f.section) {
            section = f.section;
            out += (out.empty() ? "[" : "\n[") + section + "]\n";
        }
        out += std::string(f.key) + " = " + f.get(config) + "\n";
    }
    return out;
}

void apply_env_overrides(RunConfig& config) {
    if (const char* d = std::getenv("UAED_DATA_DIR"); d && *d) {
        config.data_dir = d;
    }
    if (const char* o = std::getenv("UAED_OUT_DIR"); o && *o) {
        config.out_dir = o;
    }
}

std::string config_hash(const RunConfig& config) {
    RunConfig c = config;
    c.seeds.clear();
    c.data_dir.clear();
    c.out_dir.clear();
    return sha256_hex(serialize_config(c)).substr(0, 12);
}

bool same_values(const RunConfig& a, const RunConfig& b) { return serialize_config(a) == serialize_config(b); }

} // namespace uaed::config
