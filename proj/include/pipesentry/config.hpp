// Experiment configuration: strict JSON schema with dotted-path error
// messages, top-level shorthands, environment overrides, and a canonical
// serialization whose parse -> serialize -> parse round-trip is the identity.
#pragma once

#include <cstdlib>
#include <fstream>
#include <initializer_list>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "pipesentry/adversary.hpp"
#include "pipesentry/dataset.hpp"
#include "pipesentry/pipeline.hpp"

namespace pipesentry {

struct ExperimentConfig {
    PipelineConfig pipeline;
    AttackConfig attack;
    std::string task = "gauss_classify";
    int samples = 4000;
    std::string corpus = "data/corpus.txt";
    std::string out_dir = "out";
    bool trace = false;
};

namespace cfgdetail {

inline ConfigError key_error(const std::string& path, const std::string& why) {
    return ConfigError("config key \"" + path + "\": " + why);
}

inline void check_keys(const nlohmann::json& obj, const std::string& prefix,
                       std::initializer_list<const char*> allowed) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        bool known = false;
        for (const char* k : allowed)
            if (it.key() == k) known = true;
        if (!known) throw ConfigError("unknown config key \"" + prefix + it.key() + "\"");
    }
}

inline int as_int(const nlohmann::json& v, const std::string& path) {
    if (!v.is_number_integer()) throw key_error(path, "expected an integer, got " + v.dump());
    return v.get<int>();
}

inline uint64_t as_u64(const nlohmann::json& v, const std::string& path) {
    if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() &&
                                   v.get<int64_t>() < 0)) {
        throw key_error(path, "expected a non-negative integer, got " + v.dump());
    }
    return v.get<uint64_t>();
}

inline double as_double(const nlohmann::json& v, const std::string& path) {
    if (!v.is_number()) throw key_error(path, "expected a number, got " + v.dump());
    return v.get<double>();
}

inline bool as_bool(const nlohmann::json& v, const std::string& path) {
    if (!v.is_boolean()) throw key_error(path, "expected true or false, got " + v.dump());
    return v.get<bool>();
}

inline std::string as_string(const nlohmann::json& v, const std::string& path) {
    if (!v.is_string()) throw key_error(path, "expected a string, got " + v.dump());
    return v.get<std::string>();
}

inline const nlohmann::json* find(const nlohmann::json& obj, const char* key) {
    auto it = obj.find(key);
    return it == obj.end() ? nullptr : &*it;
}

}  // namespace cfgdetail

// Sets a dotted-path key in a JSON document, creating intermediate objects.
// The value string is interpreted as a JSON scalar when it parses as one
// (numbers, booleans, null), otherwise as a plain string — so MODE=baseline
// and RATE=0.5 both do the expected thing.
inline void set_config_value(nlohmann::json& doc, const std::string& dotted_path,
                             const std::string& value) {
    nlohmann::json* node = &doc;
    std::string rest = dotted_path;
    for (size_t dot = rest.find('.'); dot != std::string::npos; dot = rest.find('.')) {
        const std::string head = rest.substr(0, dot);
        rest = rest.substr(dot + 1);
        if (!node->is_object()) *node = nlohmann::json::object();
        node = &(*node)[head];
    }
    if (!node->is_object()) *node = nlohmann::json::object();
    nlohmann::json parsed = nlohmann::json::parse(value, nullptr, /*allow_exceptions=*/false);
    if (parsed.is_discarded() || parsed.is_string() || parsed.is_object() || parsed.is_array())
        (*node)[rest] = value;
    else
        (*node)[rest] = parsed;
}

// Every config key has an environment override: PIPESENTRY_ plus the dotted
// path upper-cased with '.' -> '_'. Precedence: file < environment < CLI.
inline const std::vector<std::pair<const char*, const char*>>& env_override_table() {
    static const std::vector<std::pair<const char*, const char*>> table = {
        {"PIPESENTRY_SEED", "seed"},
        {"PIPESENTRY_PIPELINE_STAGES", "pipeline.stages"},
        {"PIPESENTRY_PIPELINE_WIDTH", "pipeline.width"},
        {"PIPESENTRY_PIPELINE_BATCH_SIZE", "pipeline.batch_size"},
        {"PIPESENTRY_PIPELINE_MICRO_BATCH", "pipeline.micro_batch"},
        {"PIPESENTRY_PIPELINE_LR", "pipeline.lr"},
        {"PIPESENTRY_PIPELINE_ITERATIONS", "pipeline.iterations"},
        {"PIPESENTRY_PIPELINE_MODE", "pipeline.mode"},
        {"PIPESENTRY_PIPELINE_TOLERANCE", "pipeline.tolerance"},
        {"PIPESENTRY_PIPELINE_RESTART_CAP", "pipeline.restart_cap"},
        {"PIPESENTRY_PIPELINE_ESCALATION", "pipeline.escalation"},
        {"PIPESENTRY_SEEDS_INIT", "seeds.init"},
        {"PIPESENTRY_SEEDS_DATA", "seeds.data"},
        {"PIPESENTRY_SEEDS_ADVERSARY", "seeds.adversary"},
        {"PIPESENTRY_SEEDS_SCHEDULE", "seeds.schedule"},
        {"PIPESENTRY_ATTACK_KIND", "attack.kind"},
        {"PIPESENTRY_ATTACK_RATE", "attack.rate"},
        {"PIPESENTRY_ATTACK_SCHEDULING", "attack.scheduling"},
        {"PIPESENTRY_ATTACK_TARGET", "attack.target"},
        {"PIPESENTRY_DATASET_TASK", "dataset.task"},
        {"PIPESENTRY_DATASET_INPUT_DIM", "dataset.input_dim"},
        {"PIPESENTRY_DATASET_CLASSES", "dataset.classes"},
        {"PIPESENTRY_DATASET_SAMPLES", "dataset.samples"},
        {"PIPESENTRY_DATASET_CORPUS", "dataset.corpus"},
        {"PIPESENTRY_OUTPUT_DIR", "output.dir"},
        {"PIPESENTRY_OUTPUT_TRACE", "output.trace"},
    };
    return table;
}

inline void apply_env_overrides(nlohmann::json& doc) {
    for (const auto& [env_name, path] : env_override_table()) {
        if (const char* v = std::getenv(env_name)) set_config_value(doc, path, v);
    }
}

// Interprets a JSON document as an ExperimentConfig. Unknown keys are errors
// naming the offending path. Top-level shorthands K / iterations / seed /
// mode expand first; explicit group values win over shorthands. Defaults
// depend on the task, so dataset.task is resolved before lr and widths.
inline ExperimentConfig config_from_json(const nlohmann::json& root) {
    using namespace cfgdetail;
    if (!root.is_object()) throw ConfigError("config root must be a JSON object");
    check_keys(root, "", {"K", "iterations", "seed", "mode", "pipeline", "seeds", "attack",
                          "dataset", "output"});

    ExperimentConfig cfg;
    uint64_t master_seed = 42;
    bool have_lr = false, have_width = false, have_input_dim = false, have_classes = false;

    // Shorthands.
    if (const auto* v = find(root, "K")) cfg.pipeline.stages = as_int(*v, "K");
    if (const auto* v = find(root, "iterations"))
        cfg.pipeline.iterations = as_int(*v, "iterations");
    if (const auto* v = find(root, "seed")) master_seed = as_u64(*v, "seed");
    if (const auto* v = find(root, "mode"))
        cfg.pipeline.mode = mode_from_string(as_string(*v, "mode"));

    if (const auto* p = find(root, "pipeline")) {
        if (!p->is_object()) throw key_error("pipeline", "expected an object");
        check_keys(*p, "pipeline.",
                   {"stages", "width", "batch_size", "micro_batch", "lr", "iterations", "mode",
                    "tolerance", "restart_cap", "escalation"});
        if (const auto* v = find(*p, "stages")) cfg.pipeline.stages = as_int(*v, "pipeline.stages");
        if (const auto* v = find(*p, "width")) {
            cfg.pipeline.width = as_int(*v, "pipeline.width");
            have_width = true;
        }
        if (const auto* v = find(*p, "batch_size"))
            cfg.pipeline.batch_size = as_int(*v, "pipeline.batch_size");
        if (const auto* v = find(*p, "micro_batch"))
            cfg.pipeline.micro_batch = as_int(*v, "pipeline.micro_batch");
        if (const auto* v = find(*p, "lr")) {
            cfg.pipeline.lr = as_double(*v, "pipeline.lr");
            have_lr = true;
        }
        if (const auto* v = find(*p, "iterations"))
            cfg.pipeline.iterations = as_int(*v, "pipeline.iterations");
        if (const auto* v = find(*p, "mode"))
            cfg.pipeline.mode = mode_from_string(as_string(*v, "pipeline.mode"));
        if (const auto* v = find(*p, "tolerance"))
            cfg.pipeline.tolerance = as_double(*v, "pipeline.tolerance");
        if (const auto* v = find(*p, "restart_cap"))
            cfg.pipeline.policy.restart_cap = as_int(*v, "pipeline.restart_cap");
        if (const auto* v = find(*p, "escalation"))
            cfg.pipeline.policy.escalation = as_bool(*v, "pipeline.escalation");
    }

    cfg.pipeline.init_seed = master_seed;
    cfg.pipeline.data_seed = master_seed;
    cfg.pipeline.adversary_seed = master_seed;
    cfg.pipeline.schedule_seed = master_seed;
    if (const auto* s = find(root, "seeds")) {
        if (!s->is_object()) throw key_error("seeds", "expected an object");
        check_keys(*s, "seeds.", {"init", "data", "adversary", "schedule"});
        if (const auto* v = find(*s, "init")) cfg.pipeline.init_seed = as_u64(*v, "seeds.init");
        if (const auto* v = find(*s, "data")) cfg.pipeline.data_seed = as_u64(*v, "seeds.data");
        if (const auto* v = find(*s, "adversary"))
            cfg.pipeline.adversary_seed = as_u64(*v, "seeds.adversary");
        if (const auto* v = find(*s, "schedule"))
            cfg.pipeline.schedule_seed = as_u64(*v, "seeds.schedule");
    }

    if (const auto* a = find(root, "attack")) {
        if (!a->is_object()) throw key_error("attack", "expected an object");
        check_keys(*a, "attack.", {"kind", "rate", "scheduling", "target"});
        if (const auto* v = find(*a, "kind"))
            cfg.attack.kind = attack_kind_from_string(as_string(*v, "attack.kind"));
        if (const auto* v = find(*a, "rate")) cfg.attack.rate = as_double(*v, "attack.rate");
        if (const auto* v = find(*a, "scheduling"))
            cfg.attack.scheduling =
                attack_scheduling_from_string(as_string(*v, "attack.scheduling"));
        if (const auto* v = find(*a, "target")) {
            if (v->is_null())
                cfg.attack.target.reset();
            else
                cfg.attack.target = as_int(*v, "attack.target");
        }
    }

    if (const auto* d = find(root, "dataset")) {
        if (!d->is_object()) throw key_error("dataset", "expected an object");
        check_keys(*d, "dataset.", {"task", "input_dim", "classes", "samples", "corpus"});
        if (const auto* v = find(*d, "task")) cfg.task = as_string(*v, "dataset.task");
        if (const auto* v = find(*d, "input_dim")) {
            cfg.pipeline.input_dim = as_int(*v, "dataset.input_dim");
            have_input_dim = true;
        }
        if (const auto* v = find(*d, "classes")) {
            cfg.pipeline.classes = as_int(*v, "dataset.classes");
            have_classes = true;
        }
        if (const auto* v = find(*d, "samples")) cfg.samples = as_int(*v, "dataset.samples");
        if (const auto* v = find(*d, "corpus")) cfg.corpus = as_string(*v, "dataset.corpus");
    }

    if (const auto* o = find(root, "output")) {
        if (!o->is_object()) throw key_error("output", "expected an object");
        check_keys(*o, "output.", {"dir", "trace"});
        if (const auto* v = find(*o, "dir")) cfg.out_dir = as_string(*v, "output.dir");
        if (const auto* v = find(*o, "trace")) cfg.trace = as_bool(*v, "output.trace");
    }

    // Task-dependent defaults and constraints.
    if (cfg.task == "gauss_classify") {
        if (!have_lr) cfg.pipeline.lr = 0.05;
        if (!have_width) cfg.pipeline.width = 32;
        if (!have_input_dim) cfg.pipeline.input_dim = 32;
        if (!have_classes) cfg.pipeline.classes = 4;
    } else if (cfg.task == "char_lm") {
        if (!have_lr) cfg.pipeline.lr = 0.1;  // 0.5 diverges on one-hot inputs at width 64
        if (!have_width) cfg.pipeline.width = 64;
        if (have_input_dim && cfg.pipeline.input_dim != kCharVocab)
            throw key_error("dataset.input_dim", "char_lm uses the fixed " +
                                                     std::to_string(kCharVocab) +
                                                     "-symbol vocabulary");
        if (have_classes && cfg.pipeline.classes != kCharVocab)
            throw key_error("dataset.classes", "char_lm uses the fixed " +
                                                   std::to_string(kCharVocab) +
                                                   "-symbol vocabulary");
        cfg.pipeline.input_dim = kCharVocab;
        cfg.pipeline.classes = kCharVocab;
    } else {
        throw key_error("dataset.task",
                        "expected \"gauss_classify\" or \"char_lm\", got \"" + cfg.task + "\"");
    }

    // Validation with dotted paths. PipelineConfig::validate covers the same
    // ground for library callers; these checks run first so config files get
    // errors phrased against the schema.
    if (cfg.pipeline.stages < 4)
        throw key_error("pipeline.stages", "need at least 4 stages (jump connections are "
                                           "undefined below K=4), got " +
                                               std::to_string(cfg.pipeline.stages));
    if (cfg.pipeline.batch_size < 1)
        throw key_error("pipeline.batch_size", "must be >= 1");
    if (cfg.pipeline.micro_batch < 1 || cfg.pipeline.batch_size % cfg.pipeline.micro_batch != 0)
        throw key_error("pipeline.micro_batch",
                        std::to_string(cfg.pipeline.micro_batch) + " does not divide batch_size " +
                            std::to_string(cfg.pipeline.batch_size));
    if (cfg.pipeline.iterations < 0) throw key_error("pipeline.iterations", "must be >= 0");
    if (!(cfg.pipeline.lr > 0.0)) throw key_error("pipeline.lr", "must be > 0");
    if (cfg.pipeline.tolerance < 0.0) throw key_error("pipeline.tolerance", "must be >= 0");
    if (cfg.pipeline.policy.restart_cap < 1) throw key_error("pipeline.restart_cap", "must be >= 1");
    if (cfg.pipeline.width < 1) throw key_error("pipeline.width", "must be >= 1");
    if (cfg.pipeline.input_dim < 1) throw key_error("dataset.input_dim", "must be >= 1");
    if (cfg.pipeline.classes < 2) throw key_error("dataset.classes", "must be >= 2");
    if (cfg.samples < cfg.pipeline.batch_size)
        throw key_error("dataset.samples", "need at least one full batch (batch_size " +
                                               std::to_string(cfg.pipeline.batch_size) + "), got " +
                                               std::to_string(cfg.samples));
    if (cfg.attack.rate < 0.0 || cfg.attack.rate > 1.0)
        throw key_error("attack.rate", "must be in [0, 1], got " + format_double(cfg.attack.rate));
    if (cfg.attack.target) {
        const int t = *cfg.attack.target;
        if (t < 2 || t > cfg.pipeline.stages - 1)
            throw key_error("attack.target", "stage " + std::to_string(t) +
                                                 " is not attackable; stages 1 and " +
                                                 std::to_string(cfg.pipeline.stages) +
                                                 " are trusted edges");
    }
    cfg.pipeline.validate();
    return cfg;
}

inline ExperimentConfig parse_config_text(const std::string& text) {
    nlohmann::json doc = nlohmann::json::parse(text, nullptr, /*allow_exceptions=*/false);
    if (doc.is_discarded()) throw ConfigError("config is not valid JSON");
    return config_from_json(doc);
}

inline nlohmann::json load_config_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot read config file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    nlohmann::json doc = nlohmann::json::parse(buf.str(), nullptr, /*allow_exceptions=*/false);
    if (doc.is_discarded()) throw ConfigError("config file " + path + " is not valid JSON");
    if (!doc.is_object()) throw ConfigError("config file " + path + " must hold a JSON object");
    return doc;
}

// Fully resolved, shorthand-free form. Parsing this document reproduces the
// config exactly; serializing the reparse reproduces these bytes.
inline nlohmann::ordered_json canonical_json(const ExperimentConfig& cfg) {
    nlohmann::ordered_json j;
    j["pipeline"] = {{"stages", cfg.pipeline.stages},
                     {"width", cfg.pipeline.width},
                     {"batch_size", cfg.pipeline.batch_size},
                     {"micro_batch", cfg.pipeline.micro_batch},
                     {"lr", cfg.pipeline.lr},
                     {"iterations", cfg.pipeline.iterations},
                     {"mode", to_string(cfg.pipeline.mode)},
                     {"tolerance", cfg.pipeline.tolerance},
                     {"restart_cap", cfg.pipeline.policy.restart_cap},
                     {"escalation", cfg.pipeline.policy.escalation}};
    j["seeds"] = {{"init", cfg.pipeline.init_seed},
                  {"data", cfg.pipeline.data_seed},
                  {"adversary", cfg.pipeline.adversary_seed},
                  {"schedule", cfg.pipeline.schedule_seed}};
    j["attack"] = {{"kind", to_string(cfg.attack.kind)},
                   {"rate", cfg.attack.rate},
                   {"scheduling", to_string(cfg.attack.scheduling)},
                   {"target", cfg.attack.target ? nlohmann::ordered_json(*cfg.attack.target)
                                                : nlohmann::ordered_json(nullptr)}};
    j["dataset"] = {{"task", cfg.task},
                    {"input_dim", cfg.pipeline.input_dim},
                    {"classes", cfg.pipeline.classes},
                    {"samples", cfg.samples},
                    {"corpus", cfg.corpus}};
    j["output"] = {{"dir", cfg.out_dir}, {"trace", cfg.trace}};
    return j;
}

inline std::string canonical_text(const ExperimentConfig& cfg) {
    return canonical_json(cfg).dump(2) + "\n";
}

}  // namespace pipesentry
