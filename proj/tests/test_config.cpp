#include <doctest.h>

#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "emt/config.hpp"

using namespace emt;
using nlohmann::json;

namespace {

struct TempDir {
    std::filesystem::path path;
    TempDir() {
        path = std::filesystem::temp_directory_path() /
               ("emt_config_test_" + std::to_string(::getpid()));
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

}  // namespace

TEST_CASE("run config round-trips losslessly through its document form") {
    RunConfig c;
    c.seed = 1234;
    c.model.seed = 1234;
    c.model.num_experts = 2;
    c.model.tau = 0.05;
    c.loss.alpha = 0.5;
    c.optim.lr = 1e-3;
    c.train.steps = 77;

    const json j = run_config_to_json(c);
    const RunConfig back = run_config_from_json(j);
    CHECK(run_config_to_json(back).dump() == j.dump());
    CHECK(back.seed == 1234);
    CHECK(back.model.seed == 1234);  // derived from the top-level seed
    CHECK(back.model.num_experts == 2);
    CHECK(back.model.tau == 0.05);
    CHECK(back.loss.alpha == 0.5);
    CHECK(back.optim.lr == 1e-3);
    CHECK(back.train.steps == 77);
}

TEST_CASE("model config keeps its own seed through checkpoint serialization") {
    ModelConfig m;
    m.seed = 99;
    m.depth = 2;
    m.num_experts = 3;
    m.crm_feeds_head = true;
    const ModelConfig back = model_config_from_json(model_config_to_json(m));
    CHECK(back.seed == 99);
    CHECK(back.depth == 2);
    CHECK(back.num_experts == 3);
    CHECK(back.crm_feeds_head);
    CHECK(back.tau == m.tau);
}

TEST_CASE("unknown keys are rejected at every nesting level") {
    CHECK_THROWS_AS(run_config_from_json(json{{"bogus", 1}}), ConfigError);
    CHECK_THROWS_AS(run_config_from_json(json{{"model", {{"bogus", 1}}}}), ConfigError);
    CHECK_THROWS_AS(run_config_from_json(json{{"loss", {{"lambda_typo", 1.0}}}}), ConfigError);
    CHECK_THROWS_AS(run_config_from_json(json{{"optim", {{"momentum", 0.9}}}}), ConfigError);
    CHECK_THROWS_AS(run_config_from_json(json{{"train", {{"iterations", 5}}}}), ConfigError);
    // The model block must not try to carry its own seed.
    CHECK_THROWS_AS(run_config_from_json(json{{"model", {{"seed", 7}}}}), ConfigError);
}

TEST_CASE("type and range errors are loud") {
    CHECK_THROWS_AS(run_config_from_json(json{{"train", {{"steps", "many"}}}}), ConfigError);
    CHECK_THROWS_AS(run_config_from_json(json{{"train", {{"steps", 2.5}}}}), ConfigError);
    CHECK_THROWS_AS(run_config_from_json(json{{"train", {{"steps", 0}}}}), ConfigError);
    CHECK_THROWS_AS(run_config_from_json(json{{"optim", {{"lr", 0.0}}}}), ConfigError);
    CHECK_THROWS_AS(run_config_from_json(json{{"optim", {{"decay_epoch_frac", 1.5}}}}),
                    ConfigError);
    CHECK_THROWS_AS(run_config_from_json(json{{"model", {{"use_emoe", 1}}}}), ConfigError);
    CHECK_THROWS_AS(run_config_from_json(json::array()), ConfigError);
}

TEST_CASE("the top-level seed flows into the model configuration") {
    const RunConfig c = run_config_from_json(json{{"seed", 9}});
    CHECK(c.seed == 9);
    CHECK(c.model.seed == 9);
}

TEST_CASE("config files load with defaults for absent sections") {
    TempDir tmp;
    const std::string path = tmp.file("run.json");
    {
        std::ofstream os(path);
        os << R"({"seed": 5, "optim": {"lr": 0.001}})";
    }
    const RunConfig c = load_run_config(path);
    CHECK(c.seed == 5);
    CHECK(c.optim.lr == 0.001);
    CHECK(c.optim.weight_decay == 1e-4);  // untouched default
    CHECK(c.model.depth == 4);

    const std::string bad = tmp.file("bad.json");
    {
        std::ofstream os(bad);
        os << "{ not json";
    }
    CHECK_THROWS_AS(load_run_config(bad), ConfigError);
    CHECK_THROWS_AS(load_run_config(tmp.file("missing.json")), DataError);

    // Save/load round trip.
    RunConfig c2;
    c2.seed = 11;
    c2.model.seed = 11;
    c2.train.batch = 4;
    const std::string saved = tmp.file("saved.json");
    save_run_config(saved, c2);
    const RunConfig back = load_run_config(saved);
    CHECK(run_config_to_json(back).dump() == run_config_to_json(c2).dump());
}

TEST_CASE("the seed environment variable overrides the configured seed") {
    RunConfig c;
    c.seed = 1;
    c.model.seed = 1;

    ::unsetenv("EMOE_SEED");
    CHECK(!apply_seed_env(c));
    CHECK(c.seed == 1);

    ::setenv("EMOE_SEED", "4242", 1);
    CHECK(apply_seed_env(c));
    CHECK(c.seed == 4242);
    CHECK(c.model.seed == 4242);

    ::setenv("EMOE_SEED", "not-a-number", 1);
    CHECK_THROWS_AS(apply_seed_env(c), ConfigError);
    ::unsetenv("EMOE_SEED");
}
