#include "emt/config.hpp"

#include <cstdlib>
#include <fstream>
#include <initializer_list>
#include <set>

#include "emt/common.hpp"

namespace emt {
namespace {

using nlohmann::json;

void check_keys(const json& j, const std::string& where,
                std::initializer_list<const char*> allowed) {
    if (!j.is_object()) throw ConfigError(where + " must be an object");
    const std::set<std::string> ok(allowed.begin(), allowed.end());
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (ok.count(it.key()) == 0) {
            throw ConfigError("unknown config key: " + where + "." + it.key());
        }
    }
}

double get_double(const json& j, const char* key, double def) {
    if (!j.contains(key)) return def;
    const json& v = j.at(key);
    if (!v.is_number()) throw ConfigError(std::string("config key ") + key + " must be a number");
    return v.get<double>();
}

int get_int(const json& j, const char* key, int def) {
    if (!j.contains(key)) return def;
    const json& v = j.at(key);
    if (!v.is_number_integer()) {
        throw ConfigError(std::string("config key ") + key + " must be an integer");
    }
    return v.get<int>();
}

std::uint64_t get_u64(const json& j, const char* key, std::uint64_t def) {
    if (!j.contains(key)) return def;
    const json& v = j.at(key);
    if (!v.is_number_integer() || (v.is_number_integer() && v.get<long long>() < 0)) {
        throw ConfigError(std::string("config key ") + key + " must be a non-negative integer");
    }
    return v.get<std::uint64_t>();
}

bool get_bool(const json& j, const char* key, bool def) {
    if (!j.contains(key)) return def;
    const json& v = j.at(key);
    if (!v.is_boolean()) throw ConfigError(std::string("config key ") + key + " must be a boolean");
    return v.get<bool>();
}

ModelConfig parse_model(const json& j, bool allow_seed) {
    std::initializer_list<const char*> keys = {
        "depth",       "dim",         "heads",          "patch",
        "mlp_ratio",   "template_size", "search_size",  "use_emoe",
        "experts",     "insert_interval", "hidden_ratio", "use_crm",
        "tau",         "crm_feeds_head", "header_unfrozen", "seed"};
    check_keys(j, "model", keys);
    if (!allow_seed && j.contains("seed")) {
        throw ConfigError("model.seed is derived from the top-level seed; set that instead");
    }
    ModelConfig m;
    m.depth = get_int(j, "depth", m.depth);
    m.dim = get_int(j, "dim", m.dim);
    m.heads = get_int(j, "heads", m.heads);
    m.patch = get_int(j, "patch", m.patch);
    m.mlp_ratio = get_int(j, "mlp_ratio", m.mlp_ratio);
    m.template_size = get_int(j, "template_size", m.template_size);
    m.search_size = get_int(j, "search_size", m.search_size);
    m.use_emoe = get_bool(j, "use_emoe", m.use_emoe);
    m.num_experts = get_int(j, "experts", m.num_experts);
    m.insert_interval = get_int(j, "insert_interval", m.insert_interval);
    m.hidden_ratio = get_int(j, "hidden_ratio", m.hidden_ratio);
    m.use_crm = get_bool(j, "use_crm", m.use_crm);
    m.tau = get_double(j, "tau", m.tau);
    m.crm_feeds_head = get_bool(j, "crm_feeds_head", m.crm_feeds_head);
    m.header_unfrozen = get_bool(j, "header_unfrozen", m.header_unfrozen);
    m.seed = get_u64(j, "seed", m.seed);
    return m;
}

}  // namespace

json model_config_to_json(const ModelConfig& m) {
    json j;
    j["depth"] = m.depth;
    j["dim"] = m.dim;
    j["heads"] = m.heads;
    j["patch"] = m.patch;
    j["mlp_ratio"] = m.mlp_ratio;
    j["template_size"] = m.template_size;
    j["search_size"] = m.search_size;
    j["use_emoe"] = m.use_emoe;
    j["experts"] = m.num_experts;
    j["insert_interval"] = m.insert_interval;
    j["hidden_ratio"] = m.hidden_ratio;
    j["use_crm"] = m.use_crm;
    j["tau"] = m.tau;
    j["crm_feeds_head"] = m.crm_feeds_head;
    j["header_unfrozen"] = m.header_unfrozen;
    j["seed"] = m.seed;
    return j;
}

ModelConfig model_config_from_json(const json& j) { return parse_model(j, /*allow_seed=*/true); }

json run_config_to_json(const RunConfig& c) {
    json j;
    j["seed"] = c.seed;
    json m = model_config_to_json(c.model);
    m.erase("seed");  // the top-level seed is the single source of truth
    j["model"] = m;
    j["loss"] = {{"lambda_iou", c.loss.lambda_iou},
                 {"lambda_l1", c.loss.lambda_l1},
                 {"alpha", c.loss.alpha},
                 {"beta", c.loss.beta}};
    j["optim"] = {{"lr", c.optim.lr},
                  {"weight_decay", c.optim.weight_decay},
                  {"decay_epoch_frac", c.optim.decay_epoch_frac}};
    j["train"] = {{"steps", c.train.steps},
                  {"batch", c.train.batch},
                  {"eval_interval", c.train.eval_interval}};
    return j;
}

RunConfig run_config_from_json(const json& j) {
    check_keys(j, "config", {"seed", "model", "loss", "optim", "train"});
    RunConfig c;
    c.seed = get_u64(j, "seed", c.seed);
    if (j.contains("model")) c.model = parse_model(j.at("model"), /*allow_seed=*/false);
    c.model.seed = c.seed;
    if (j.contains("loss")) {
        const json& l = j.at("loss");
        check_keys(l, "loss", {"lambda_iou", "lambda_l1", "alpha", "beta"});
        c.loss.lambda_iou = get_double(l, "lambda_iou", c.loss.lambda_iou);
        c.loss.lambda_l1 = get_double(l, "lambda_l1", c.loss.lambda_l1);
        c.loss.alpha = get_double(l, "alpha", c.loss.alpha);
        c.loss.beta = get_double(l, "beta", c.loss.beta);
    }
    if (j.contains("optim")) {
        const json& o = j.at("optim");
        check_keys(o, "optim", {"lr", "weight_decay", "decay_epoch_frac"});
        c.optim.lr = get_double(o, "lr", c.optim.lr);
        c.optim.weight_decay = get_double(o, "weight_decay", c.optim.weight_decay);
        c.optim.decay_epoch_frac = get_double(o, "decay_epoch_frac", c.optim.decay_epoch_frac);
    }
    if (j.contains("train")) {
        const json& t = j.at("train");
        check_keys(t, "train", {"steps", "batch", "eval_interval"});
        c.train.steps = get_int(t, "steps", c.train.steps);
        c.train.batch = get_int(t, "batch", c.train.batch);
        c.train.eval_interval = get_int(t, "eval_interval", c.train.eval_interval);
    }
    validate_run_config(c);
    return c;
}

void validate_run_config(const RunConfig& c) {
    c.model.validate();
    if (c.loss.lambda_iou < 0 || c.loss.lambda_l1 < 0 || c.loss.alpha < 0 || c.loss.beta < 0) {
        throw ConfigError("loss weights must be >= 0");
    }
    if (c.optim.lr <= 0) throw ConfigError("optim.lr must be positive");
    if (c.optim.weight_decay < 0) throw ConfigError("optim.weight_decay must be >= 0");
    if (c.optim.decay_epoch_frac < 0 || c.optim.decay_epoch_frac > 1) {
        throw ConfigError("optim.decay_epoch_frac must be in [0, 1]");
    }
    if (c.train.steps < 1) throw ConfigError("train.steps must be >= 1");
    if (c.train.batch < 1) throw ConfigError("train.batch must be >= 1");
    if (c.train.eval_interval < 0) throw ConfigError("train.eval_interval must be >= 0");
    if (c.model.seed != c.seed) {
        throw ConfigError("model.seed is derived from the top-level seed; set that instead");
    }
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open config file: " + path);
    json j;
    try {
        is >> j;
    } catch (const json::exception& e) {
        throw ConfigError("config parse error in " + path + ": " + e.what());
    }
    return run_config_from_json(j);
}

void save_run_config(const std::string& path, const RunConfig& c) {
    std::ofstream os(path);
    if (!os) throw DataError("cannot open config file for writing: " + path);
    os << run_config_to_json(c).dump(2) << "\n";
    if (!os) throw DataError("config write failed: " + path);
}

bool apply_seed_env(RunConfig& c) {
    const char* env = std::getenv("EMOE_SEED");
    if (env == nullptr || *env == '\0') return false;
    char* end = nullptr;
    const unsigned long long v = std::strtoull(env, &end, 10);
    if (end == env || *end != '\0') {
        throw ConfigError("EMOE_SEED must be an unsigned integer, got: " + std::string(env));
    }
    c.seed = static_cast<std::uint64_t>(v);
    c.model.seed = c.seed;
    return true;
}

}  // namespace emt
