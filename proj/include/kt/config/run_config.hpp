#pragma once

#include <yaml-cpp/yaml.h>

#include <fstream>
#include <functional>
#include <json.hpp>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "kt/ensemble/ensemble.hpp"
#include "kt/ingest/synthetic.hpp"
#include "kt/models/model_spec.hpp"
#include "kt/pipeline/members.hpp"
#include "kt/parallel.hpp"

namespace kt {

/// Everything a run needs. Every field is reachable by a dotted key, in the
/// YAML file and as a --dotted.key flag.
struct RunConfig {
    std::uint64_t seed = 1;
    int workers = 0;  // 0 = logical cores
    std::string output_dir = "runs";
    std::string run_dir;   // empty = newest <timestamp>-seed<seed> under output_dir (new one for data stages)
    std::string data_dir;  // canonical CSV directory for `ingest`
    SynthConfig synth;
    SplitFractions split;
    WeightFitParams ensemble;
    std::map<std::string, Hyperparameters> overrides;  // model_id -> key -> value

    int resolved_workers() const { return workers > 0 ? workers : default_workers(); }

    SynthConfig synth_config() const {
        auto s = synth;
        s.seed = seed;
        return s;
    }

    std::vector<ModelSpec> registry() const {
        auto reg = default_registry(seed);
        for (const auto& [id, params] : overrides) {
            auto& spec = require_spec(reg, id);
            for (const auto& [k, v] : params) spec.set(k, v);
        }
        return reg;
    }
};

struct ConfigKey {
    std::string name;
    std::string help;
    std::function<void(RunConfig&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};

namespace config_detail {

template <typename T>
std::string show(const T& v) {
    if constexpr (std::is_same_v<T, std::string>) {
        return v;
    } else if constexpr (std::is_floating_point_v<T>) {
        return csv::format_double(v);
    } else {
        return std::to_string(v);
    }
}

template <typename T>
T parse_value(const std::string& key, const std::string& text) {
    if constexpr (std::is_same_v<T, std::string>) {
        return text;
    } else {
        auto v = csv::parse_number<T>(text);
        if (!v) throw ValidationError("config key '" + key + "': cannot parse '" + text + "'");
        return *v;
    }
}

template <typename Ref>
ConfigKey field(std::string name, std::string help, Ref ref) {
    using T = std::remove_reference_t<decltype(ref(std::declval<RunConfig&>()))>;
    return {name, std::move(help),
            [ref, name](RunConfig& c, const std::string& v) { ref(c) = parse_value<T>(name, v); },
            [ref](const RunConfig& c) { return show(ref(const_cast<RunConfig&>(c))); }};
}

}  // namespace config_detail

/// All keys, fixed order: run settings, synth, split, ensemble, then one key per
/// (model_id, hyperparameter) of the default registry.
inline const std::vector<ConfigKey>& config_keys() {
    static const std::vector<ConfigKey> keys = [] {
        using config_detail::field;
        std::vector<ConfigKey> k;
        k.push_back(field("seed", "run seed (data, split and per-model seeds)", [](RunConfig& c) -> auto& { return c.seed; }));
        k.push_back(field("workers", "worker threads, 0 = logical cores", [](RunConfig& c) -> auto& { return c.workers; }));
        k.push_back(field("output_dir", "parent of run directories", [](RunConfig& c) -> auto& { return c.output_dir; }));
        k.push_back(field("run_dir", "run directory to use (default: newest for this seed)",
                          [](RunConfig& c) -> auto& { return c.run_dir; }));
        k.push_back(field("data_dir", "directory with interactions.csv, questions.csv, students.csv",
                          [](RunConfig& c) -> auto& { return c.data_dir; }));
        k.push_back(field("synth.n_users", "synthetic users", [](RunConfig& c) -> auto& { return c.synth.n_users; }));
        k.push_back(field("synth.n_questions", "synthetic questions", [](RunConfig& c) -> auto& { return c.synth.n_questions; }));
        k.push_back(field("synth.n_skills", "synthetic leaf skills", [](RunConfig& c) -> auto& { return c.synth.n_skills; }));
        k.push_back(field("synth.n_quizzes", "synthetic quizzes", [](RunConfig& c) -> auto& { return c.synth.n_quizzes; }));
        k.push_back(field("synth.n_groups", "synthetic groups", [](RunConfig& c) -> auto& { return c.synth.n_groups; }));
        k.push_back(field("synth.responses_per_user", "answers drawn per user",
                          [](RunConfig& c) -> auto& { return c.synth.responses_per_user; }));
        k.push_back(field("synth.learning_rate_per_response", "ability drift per answer",
                          [](RunConfig& c) -> auto& { return c.synth.learning_rate_per_response; }));
        k.push_back(field("synth.ability_mean", "mean initial ability", [](RunConfig& c) -> auto& { return c.synth.ability_mean; }));
        k.push_back(field("synth.ability_sd", "sd of initial ability", [](RunConfig& c) -> auto& { return c.synth.ability_sd; }));
        k.push_back(field("synth.discrimination_mu", "mean of ln a",
                          [](RunConfig& c) -> auto& { return c.synth.discrimination_mu; }));
        k.push_back(field("synth.discrimination_sigma", "sd of ln a",
                          [](RunConfig& c) -> auto& { return c.synth.discrimination_sigma; }));
        k.push_back(field("synth.difficulty_mean", "mean difficulty", [](RunConfig& c) -> auto& { return c.synth.difficulty_mean; }));
        k.push_back(field("synth.difficulty_sd", "sd of difficulty", [](RunConfig& c) -> auto& { return c.synth.difficulty_sd; }));
        k.push_back(field("synth.n_blocks", "disjoint quiz/group blocks", [](RunConfig& c) -> auto& { return c.synth.n_blocks; }));
        k.push_back(field("split.train", "train fraction", [](RunConfig& c) -> auto& { return c.split.train; }));
        k.push_back(field("split.validation", "validation (weight fitting) fraction",
                          [](RunConfig& c) -> auto& { return c.split.validation; }));
        k.push_back(field("split.test", "test fraction", [](RunConfig& c) -> auto& { return c.split.test; }));
        k.push_back(field("ensemble.iters", "weight fitting iterations", [](RunConfig& c) -> auto& { return c.ensemble.iters; }));
        k.push_back(field("ensemble.lr", "weight fitting step size", [](RunConfig& c) -> auto& { return c.ensemble.lr; }));
        for (const auto& spec : default_registry()) {
            for (const auto& [param, def] : spec.hyperparameters) {
                const std::string id = spec.model_id, p = param;
                const double d = def;
                k.push_back({"models." + id + "." + p, id + " " + p,
                             [id, p](RunConfig& c, const std::string& v) {
                                 c.overrides[id][p] = config_detail::parse_value<double>("models." + id + "." + p, v);
                             },
                             [id, p, d](const RunConfig& c) {
                                 auto m = c.overrides.find(id);
                                 if (m != c.overrides.end()) {
                                     auto it = m->second.find(p);
                                     if (it != m->second.end()) return csv::format_double(it->second);
                                 }
                                 return csv::format_double(d);
                             }});
            }
        }
        return k;
    }();
    return keys;
}

inline const ConfigKey* find_config_key(const std::string& name) {
    for (const auto& k : config_keys()) {
        if (k.name == name) return &k;
    }
    return nullptr;
}

/// Sets one dotted key. Unknown keys and unknown model ids are rejected.
inline void apply_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
    if (const auto* k = find_config_key(key)) {
        k->set(cfg, value);
        return;
    }
    if (key.starts_with("models.")) {
        const auto rest = key.substr(7);
        const auto dot = rest.find('.');
        const auto id = rest.substr(0, dot);
        if (!find_spec(default_registry(), id)) throw ValidationError("config references unknown model_id '" + id + "'");
        ModelSpec probe = *find_spec(default_registry(), id);
        probe.set(dot == std::string::npos ? "" : rest.substr(dot + 1), 0.0);  // throws, naming the known keys
    }
    throw ValidationError("unknown config key '" + key + "'");
}

using FlatConfig = std::vector<std::pair<std::string, std::string>>;

namespace config_detail {
inline void flatten(const YAML::Node& node, const std::string& prefix, FlatConfig& out) {
    if (node.IsMap()) {
        for (const auto& kv : node) {
            const auto key = kv.first.as<std::string>();
            flatten(kv.second, prefix.empty() ? key : prefix + "." + key, out);
        }
    } else if (node.IsScalar()) {
        out.emplace_back(prefix, node.Scalar());
    } else {
        throw ValidationError("config key '" + prefix + "' must be a scalar or a table");
    }
}
}  // namespace config_detail

/// Nested tables become dotted keys: `synth: {n_users: 5}` -> synth.n_users=5.
inline FlatConfig flatten_yaml(const std::string& text) {
    FlatConfig out;
    try {
        const auto root = YAML::Load(text);
        if (root.IsNull()) return out;
        if (!root.IsMap()) throw ValidationError("config root must be a table");
        config_detail::flatten(root, "", out);
    } catch (const YAML::Exception& e) {
        throw ValidationError(std::string("config parse error: ") + e.what());
    }
    return out;
}

inline FlatConfig read_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot read config file " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return flatten_yaml(ss.str());
}

inline void apply_config(RunConfig& cfg, const FlatConfig& flat) {
    for (const auto& [k, v] : flat) apply_config_value(cfg, k, v);
}

/// Checks that hold across keys; single values are checked where they are used.
inline void validate_config(const RunConfig& cfg) {
    if (cfg.workers < 0) throw ValidationError("workers must be >= 0");
    const auto& s = cfg.split;
    if (s.train <= 0 || s.validation <= 0 || s.test <= 0 || std::abs(s.train + s.validation + s.test - 1.0) > 1e-9) {
        throw ValidationError("split fractions must be positive and sum to 1");
    }
    if (cfg.ensemble.iters < 0 || !(cfg.ensemble.lr > 0)) throw ValidationError("ensemble.iters >= 0 and ensemble.lr > 0");
    cfg.synth_config().validate();
    for (const auto& spec : cfg.registry()) {
        if (spec.algorithm == Algorithm::attention_kt) encoder_config(spec).validate();
    }
}

/// Resolved values of every key except run_dir, as written into a run directory.
inline nlohmann::ordered_json config_json(const RunConfig& cfg) {
    nlohmann::ordered_json j = nlohmann::ordered_json::object();
    for (const auto& k : config_keys()) {
        if (k.name != "run_dir") j[k.name] = k.get(cfg);
    }
    return j;
}

inline FlatConfig flat_from_json(const nlohmann::ordered_json& j) {
    FlatConfig out;
    for (const auto& [k, v] : j.items()) out.emplace_back(k, v.get<std::string>());
    return out;
}

}  // namespace kt
