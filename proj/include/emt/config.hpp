#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

#include "emt/backbone.hpp"

namespace emt {

// Loss-term weights for the composite training objective.
struct LossWeights {
    double lambda_iou = 2.0;  // overlap term
    double lambda_l1 = 5.0;   // box-coordinate term
    double alpha = 1.0;       // contrastive term
    double beta = 1.0;        // attribute-supervision term
};

struct OptimConfig {
    double lr = 2e-4;
    double weight_decay = 1e-4;
    // Fraction of total epochs after which the learning rate drops 10x.
    double decay_epoch_frac = 32.0 / 60.0;
};

struct TrainConfig {
    int steps = 300;
    int batch = 8;
    int eval_interval = 0;  // 0 disables mid-run evaluation
};

// Everything a run needs, assembled from defaults, an optional config file,
// and command-line overrides (in that precedence order).
struct RunConfig {
    std::uint64_t seed = 0;
    ModelConfig model;
    LossWeights loss;
    OptimConfig optim;
    TrainConfig train;
};

nlohmann::json model_config_to_json(const ModelConfig& m);
ModelConfig model_config_from_json(const nlohmann::json& j);

nlohmann::json run_config_to_json(const RunConfig& c);
// Rejects unknown keys at every level so typos fail loudly.
RunConfig run_config_from_json(const nlohmann::json& j);

// Full range/consistency check, also applied to flag-assembled configs.
void validate_run_config(const RunConfig& c);

RunConfig load_run_config(const std::string& path);
void save_run_config(const std::string& path, const RunConfig& c);

// Applies the EMOE_SEED environment override if set (must parse as an
// unsigned integer). Returns true when the seed was overridden.
bool apply_seed_env(RunConfig& c);

}  // namespace emt
