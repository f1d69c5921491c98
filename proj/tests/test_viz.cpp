#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "emt/common.hpp"
#include "emt/eventrep.hpp"
#include "emt/model.hpp"
#include "emt/png_io.hpp"
#include "emt/viz.hpp"

using namespace emt;

namespace {

struct TempTree {
    std::string root;
    explicit TempTree(const std::string& tag) {
        root = "/tmp/emt_" + tag + "_" + std::to_string(::getpid());
        std::filesystem::remove_all(root);
        std::filesystem::create_directories(root);
    }
    ~TempTree() { std::filesystem::remove_all(root); }
};

ModelConfig viz_config(bool with_modules) {
    ModelConfig cfg;
    cfg.depth = 2;
    cfg.dim = 8;
    cfg.heads = 2;
    cfg.patch = 16;
    cfg.mlp_ratio = 2.0;
    cfg.template_size = 32;
    cfg.search_size = 64;
    cfg.use_emoe = with_modules;
    cfg.num_experts = 2;
    cfg.insert_interval = 1;
    cfg.use_crm = with_modules;
    cfg.seed = 17;
    return cfg;
}

const std::string& viz_fixture_root() {
    static std::string root = [] {
        std::string dir = "/tmp/emt_vizfix_" + std::to_string(::getpid());
        FixtureConfig fc;
        fc.seed = 21;
        fc.num_sequences = 1;
        fc.frames_per_seq = 3;
        fc.image_size = 64;
        fc.force = true;
        generate_fixture(fc, dir);
        return dir;
    }();
    return root;
}

Sample viz_sample() {
    FixtureLoader fx(viz_fixture_root(), 2, 32, 64);
    return fx.load_sample(0, 1, 0, 0);
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("rendering writes attention, score, and expert files with fixed names") {
    TempTree tmp("viz_files");
    TrackerModel model(viz_config(true));
    const Sample sample = viz_sample();

    const VizOutput out = render_sample(model, sample, tmp.root + "/viz");

    // Two injected layers + one score overlay + two expert maps.
    REQUIRE(out.images.size() == 5);
    CHECK(out.images[0] == tmp.root + "/viz/attention_layer01.png");
    CHECK(out.images[1] == tmp.root + "/viz/attention_layer02.png");
    CHECK(out.images[2] == tmp.root + "/viz/score_overlay.png");
    CHECK(out.images[3] == tmp.root + "/viz/expert00_magnitude.png");
    CHECK(out.images[4] == tmp.root + "/viz/expert01_magnitude.png");
    CHECK(out.gating_path == tmp.root + "/viz/gating.txt");

    for (const std::string& path : out.images) {
        REQUIRE(std::filesystem::exists(path));
        const Image img = read_png(path);
        CHECK(img.height == 64);
        CHECK(img.width == 64);
        CHECK(img.channels == 3);
    }
}

TEST_CASE("gating sidecar reproduces the collected scores exactly") {
    TempTree tmp("viz_gating");
    TrackerModel model(viz_config(true));
    const Sample sample = viz_sample();

    const VizOutput out = render_sample(model, sample, tmp.root);
    const auto scores = model.collect_scores();
    REQUIRE(scores.size() == 2);

    std::ifstream in(out.gating_path);
    REQUIRE(in.good());
    std::string line;
    std::size_t row = 0;
    while (std::getline(in, line)) {
        REQUIRE(row < scores.size());
        std::istringstream ss(line);
        std::string layer_tag;
        ss >> layer_tag;
        CHECK(layer_tag == "layer=" + std::to_string(scores[row].first));
        for (int k = 0; k < scores[row].second.cols(); ++k) {
            double v = -1.0;
            REQUIRE((ss >> v));
            CHECK(v == scores[row].second(0, k));  // %.17g round-trips doubles
        }
        ++row;
    }
    CHECK(row == scores.size());
}

TEST_CASE("a plain backbone renders only the score overlay") {
    TempTree tmp("viz_plain");
    TrackerModel model(viz_config(false));
    const Sample sample = viz_sample();

    const VizOutput out = render_sample(model, sample, tmp.root);
    REQUIRE(out.images.size() == 1);
    CHECK(out.images[0] == tmp.root + "/score_overlay.png");
    CHECK(out.gating_path.empty());
    CHECK_FALSE(std::filesystem::exists(tmp.root + "/gating.txt"));
}

TEST_CASE("rendering is deterministic for a fixed model and sample") {
    TempTree tmp("viz_det");
    TrackerModel model(viz_config(true));
    const Sample sample = viz_sample();

    const VizOutput a = render_sample(model, sample, tmp.root + "/a");
    const VizOutput b = render_sample(model, sample, tmp.root + "/b");
    REQUIRE(a.images.size() == b.images.size());
    for (std::size_t i = 0; i < a.images.size(); ++i) {
        CHECK(slurp(a.images[i]) == slurp(b.images[i]));
    }
    CHECK(slurp(a.gating_path) == slurp(b.gating_path));
}

TEST_CASE("score overlay highlights the head peak in red") {
    TempTree tmp("viz_peak");
    TrackerModel model(viz_config(true));
    const Sample sample = viz_sample();

    render_sample(model, sample, tmp.root);
    Tape tape;
    const ForwardResult res = model.forward(tape, sample, false);

    const Image overlay = read_png(tmp.root + "/score_overlay.png");
    // The heat map is peak-normalized, so inside the peak cell (grid 4, 16 px
    // per cell) red saturates and the other channels are suppressed.
    double peak_red = 0.0, peak_other = 0.0;
    for (int dy = 4; dy < 12; ++dy) {
        for (int dx = 4; dx < 12; ++dx) {
            const int y = res.head.peak_row * 16 + dy;
            const int x = res.head.peak_col * 16 + dx;
            peak_red = std::max(peak_red, overlay.at(y, x, 0));
            peak_other = std::max(peak_other, overlay.at(y, x, 1));
        }
    }
    CHECK(peak_red >= 0.9);
    CHECK(peak_red > peak_other);
}

