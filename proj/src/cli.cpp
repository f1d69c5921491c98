#include "emt/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "emt/common.hpp"
#include "emt/config.hpp"
#include "emt/eventrep.hpp"
#include "emt/model.hpp"
#include "emt/trackloop.hpp"
#include "emt/viz.hpp"

namespace emt {

namespace {

// Values the user passed on the command line; anything unset falls back to
// the config file, which falls back to built-in defaults. EMOE_SEED, when
// set, overrides every seed source.
struct Overrides {
    std::optional<std::uint64_t> seed;
    std::optional<int> steps, batch, eval_interval;
    std::optional<double> lr, weight_decay;
    std::optional<int> experts, insert_interval;
    std::optional<double> hidden_ratio, tau;
    std::optional<bool> crm_feeds_head, header_unfrozen, use_emoe, use_crm;
};

void add_model_flags(CLI::App* cmd, Overrides& ov) {
    cmd->add_option("--experts", ov.experts, "number of experts K");
    cmd->add_option("--insert-interval", ov.insert_interval, "layer spacing between injections");
    cmd->add_option("--hidden-ratio", ov.hidden_ratio, "expert hidden width ratio");
    cmd->add_option("--tau", ov.tau, "contrastive temperature");
    cmd->add_flag_callback("--crm-feeds-head", [&ov] { ov.crm_feeds_head = true; },
                           "route fused tokens into the box head");
    cmd->add_flag_callback("--header-unfrozen", [&ov] { ov.header_unfrozen = true; },
                           "make the box head trainable");
    cmd->add_flag_callback("--no-emoe", [&ov] { ov.use_emoe = false; },
                           "disable expert injections");
    cmd->add_flag_callback("--no-crm", [&ov] { ov.use_crm = false; },
                           "disable the contrastive relation module");
}

RunConfig assemble_config(const std::string& config_path, const Overrides& ov) {
    RunConfig cfg;
    if (!config_path.empty()) cfg = load_run_config(config_path);
    if (ov.seed) cfg.seed = *ov.seed;
    if (ov.steps) cfg.train.steps = *ov.steps;
    if (ov.batch) cfg.train.batch = *ov.batch;
    if (ov.eval_interval) cfg.train.eval_interval = *ov.eval_interval;
    if (ov.lr) cfg.optim.lr = *ov.lr;
    if (ov.weight_decay) cfg.optim.weight_decay = *ov.weight_decay;
    if (ov.experts) cfg.model.num_experts = *ov.experts;
    if (ov.insert_interval) cfg.model.insert_interval = *ov.insert_interval;
    if (ov.hidden_ratio) cfg.model.hidden_ratio = *ov.hidden_ratio;
    if (ov.tau) cfg.model.tau = *ov.tau;
    if (ov.crm_feeds_head) cfg.model.crm_feeds_head = *ov.crm_feeds_head;
    if (ov.header_unfrozen) cfg.model.header_unfrozen = *ov.header_unfrozen;
    if (ov.use_emoe) cfg.model.use_emoe = *ov.use_emoe;
    if (ov.use_crm) cfg.model.use_crm = *ov.use_crm;
    cfg.model.seed = cfg.seed;
    apply_seed_env(cfg);
    validate_run_config(cfg);
    return cfg;
}

FixtureLoader open_fixture(const std::string& data_dir, const ModelConfig& model) {
    return FixtureLoader(data_dir, model.num_experts, model.template_size, model.search_size);
}

// Rejects eval/track/viz flag values that contradict how the checkpoint was
// trained, naming both sides.
void check_checkpoint_matches(const ModelConfig& ckpt, const Overrides& ov) {
    auto mismatch = [](const std::string& what, const std::string& have,
                       const std::string& want) {
        throw ConfigError("checkpoint was trained with " + what + "=" + have +
                          " but the command line asks for " + want);
    };
    if (ov.experts && *ov.experts != ckpt.num_experts) {
        mismatch("experts", std::to_string(ckpt.num_experts), std::to_string(*ov.experts));
    }
    if (ov.insert_interval && *ov.insert_interval != ckpt.insert_interval) {
        mismatch("insert-interval", std::to_string(ckpt.insert_interval),
                 std::to_string(*ov.insert_interval));
    }
    if (ov.tau && *ov.tau != ckpt.tau) {
        mismatch("tau", std::to_string(ckpt.tau), std::to_string(*ov.tau));
    }
    if (ov.hidden_ratio && *ov.hidden_ratio != ckpt.hidden_ratio) {
        mismatch("hidden-ratio", std::to_string(ckpt.hidden_ratio),
                 std::to_string(*ov.hidden_ratio));
    }
    if (ov.crm_feeds_head && *ov.crm_feeds_head != ckpt.crm_feeds_head) {
        mismatch("crm-feeds-head", ckpt.crm_feeds_head ? "on" : "off", "on");
    }
    if (ov.header_unfrozen && *ov.header_unfrozen != ckpt.header_unfrozen) {
        mismatch("header-unfrozen", ckpt.header_unfrozen ? "on" : "off", "on");
    }
    if (ov.use_emoe && *ov.use_emoe != ckpt.use_emoe) {
        mismatch("emoe", ckpt.use_emoe ? "on" : "off", *ov.use_emoe ? "on" : "off");
    }
    if (ov.use_crm && *ov.use_crm != ckpt.use_crm) {
        mismatch("crm", ckpt.use_crm ? "on" : "off", *ov.use_crm ? "on" : "off");
    }
}

int cmd_fixture(std::uint64_t seed, int sequences, int frames, int image_size,
                const std::string& out, bool force) {
    RunConfig scratch;
    scratch.seed = seed;
    scratch.model.seed = seed;
    apply_seed_env(scratch);

    FixtureConfig fc;
    fc.seed = scratch.seed;
    fc.num_sequences = sequences;
    fc.frames_per_seq = frames;
    fc.image_size = image_size;
    fc.force = force;
    const std::string manifest = generate_fixture(fc, out);
    std::cout << manifest << "\n";
    return 0;
}

int cmd_train(const std::string& config_path, const Overrides& ov, const std::string& data,
              const std::string& out) {
    const RunConfig cfg = assemble_config(config_path, ov);
    FixtureLoader fx = open_fixture(data, cfg.model);

    std::filesystem::create_directories(out);
    save_run_config(out + "/config.json", cfg);
    TrackerModel model(cfg.model);
    const std::string ckpt = out + "/model.ckpt";
    const TrainResult result = train(model, fx, cfg, ckpt, &std::cout);
    std::cout << "checkpoint " << result.checkpoint_path << "\n";
    if (result.best_sr >= 0.0) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "best SR %.6f\n", result.best_sr);
        std::cout << buf;
    }
    return 0;
}

int cmd_eval(const std::string& checkpoint, const Overrides& ov, const std::string& data,
             bool per_attribute) {
    auto model = TrackerModel::load_checkpoint(checkpoint);
    check_checkpoint_matches(model->config(), ov);
    FixtureLoader fx = open_fixture(data, model->config());
    const MetricsReport report = evaluate_model(*model, fx, per_attribute);
    std::cout << report.to_text();
    return 0;
}

int cmd_track(const std::string& checkpoint, const Overrides& ov, const std::string& data,
              const std::string& out, const std::string& sequence) {
    auto model = TrackerModel::load_checkpoint(checkpoint);
    check_checkpoint_matches(model->config(), ov);
    FixtureLoader fx = open_fixture(data, model->config());

    std::vector<std::size_t> picks;
    for (std::size_t i = 0; i < fx.num_sequences(); ++i) {
        if (sequence.empty() || fx.sequence(i).name == sequence) picks.push_back(i);
    }
    if (picks.empty()) throw DataError("no sequence named '" + sequence + "' in " + data);

    std::filesystem::create_directories(out);
    for (std::size_t i : picks) {
        const TrackResult result = track_sequence(*model, fx, i);
        const std::string path = out + "/" + fx.sequence(i).name + ".txt";
        write_results_file(path, result);
        std::cout << path << "\n";
    }
    return 0;
}

int cmd_viz(const std::string& checkpoint, const Overrides& ov, const std::string& data,
            const std::string& out, int sequence, int frame) {
    auto model = TrackerModel::load_checkpoint(checkpoint);
    check_checkpoint_matches(model->config(), ov);
    FixtureLoader fx = open_fixture(data, model->config());
    if (sequence < 0 || static_cast<std::size_t>(sequence) >= fx.num_sequences()) {
        throw DataError("sequence index " + std::to_string(sequence) + " out of range");
    }
    const Sample sample = fx.load_sample(static_cast<std::size_t>(sequence), frame, 0, 0);
    const VizOutput viz = render_sample(*model, sample, out);
    for (const std::string& path : viz.images) std::cout << path << "\n";
    if (!viz.gating_path.empty()) std::cout << viz.gating_path << "\n";
    return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
    CLI::App app{"event-guided object tracker"};
    app.require_subcommand(1);

    Overrides ov;
    std::string config_path, data, out, checkpoint, sequence_name;
    std::uint64_t fixture_seed = 0;
    int sequences = 8, frames = 32, image_size = 192;
    bool force = false, per_attribute = false;
    int viz_sequence = 0, viz_frame = 0;
    int rc = 0;

    CLI::App* fixture = app.add_subcommand("fixture", "generate a synthetic dataset");
    fixture->add_option("--seed", fixture_seed, "generation seed (default 0)");
    fixture->add_option("--sequences", sequences, "number of sequences");
    fixture->add_option("--frames", frames, "frames per sequence");
    fixture->add_option("--image-size", image_size, "square frame size in pixels");
    fixture->add_option("--out", out, "output directory")->required();
    fixture->add_flag("--force", force, "overwrite an existing fixture");
    fixture->callback(
        [&] { rc = cmd_fixture(fixture_seed, sequences, frames, image_size, out, force); });

    CLI::App* train_cmd = app.add_subcommand("train", "train on a fixture");
    train_cmd->add_option("--config", config_path, "run config file (json)");
    train_cmd->add_option("--seed", ov.seed, "run seed");
    train_cmd->add_option("--steps", ov.steps, "optimizer steps");
    train_cmd->add_option("--batch", ov.batch, "samples per step");
    train_cmd->add_option("--eval-interval", ov.eval_interval,
                          "steps between validation passes (0 = final weights only)");
    train_cmd->add_option("--lr", ov.lr, "base learning rate");
    train_cmd->add_option("--weight-decay", ov.weight_decay, "decoupled weight decay");
    add_model_flags(train_cmd, ov);
    train_cmd->add_option("--data", data, "fixture directory")->required();
    train_cmd->add_option("--out", out, "output directory")->required();
    train_cmd->callback([&] { rc = cmd_train(config_path, ov, data, out); });

    CLI::App* eval_cmd = app.add_subcommand("eval", "score a checkpoint on a fixture");
    eval_cmd->add_option("--checkpoint", checkpoint, "trained model file")->required();
    eval_cmd->add_option("--data", data, "fixture directory")->required();
    eval_cmd->add_flag("--per-attribute", per_attribute, "add per-attribute precision");
    add_model_flags(eval_cmd, ov);
    eval_cmd->callback([&] { rc = cmd_eval(checkpoint, ov, data, per_attribute); });

    CLI::App* track_cmd = app.add_subcommand("track", "write per-sequence tracking results");
    track_cmd->add_option("--checkpoint", checkpoint, "trained model file")->required();
    track_cmd->add_option("--data", data, "fixture directory")->required();
    track_cmd->add_option("--out", out, "results directory")->required();
    track_cmd->add_option("--sequence", sequence_name, "restrict to one sequence by name");
    add_model_flags(track_cmd, ov);
    track_cmd->callback([&] { rc = cmd_track(checkpoint, ov, data, out, sequence_name); });

    CLI::App* viz_cmd = app.add_subcommand("viz", "render attention/score/expert maps");
    viz_cmd->add_option("--checkpoint", checkpoint, "trained model file")->required();
    viz_cmd->add_option("--data", data, "fixture directory")->required();
    viz_cmd->add_option("--out", out, "image directory")->required();
    viz_cmd->add_option("--sequence", viz_sequence, "sequence index");
    viz_cmd->add_option("--frame", viz_frame, "frame index");
    add_model_flags(viz_cmd, ov);
    viz_cmd->callback([&] { rc = cmd_viz(checkpoint, ov, data, out, viz_sequence, viz_frame); });

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 4;
    }
    return rc;
}

int run_cli(int argc, char** argv) {
    return run_cli(std::vector<std::string>(argv + 1, argv + argc));
}

}  // namespace emt
