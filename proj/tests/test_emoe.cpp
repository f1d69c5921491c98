#include <doctest.h>

#include <cmath>
#include <string>
#include <vector>

#include "emt/emoe.hpp"

using namespace emt;

namespace {

ModelConfig emoe_config(int experts = 4, int dim = 8) {
    ModelConfig cfg;
    cfg.depth = 2;
    cfg.dim = dim;
    cfg.heads = 2;
    cfg.patch = 16;
    cfg.template_size = 32;
    cfg.search_size = 32;
    cfg.num_experts = experts;
    cfg.seed = 31;
    return cfg;
}

Mat random_mat(Rng& rng, int r, int c, double scale = 1.0) {
    Mat m(r, c);
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) m(i, j) = scale * rng.normal();
    return m;
}

bool same_mat(const Mat& a, const Mat& b) {
    return a.rows() == b.rows() && a.cols() == b.cols() && (a.array() == b.array()).all();
}

void zero_param(ParameterStore& store, const std::string& name) {
    const int idx = store.find(name);
    REQUIRE(idx >= 0);
    store.at(idx).value.setZero();
}

}  // namespace

TEST_CASE("expert branches preserve shape and reject bad indices") {
    ModelConfig cfg = emoe_config();
    ParameterStore store;
    EmoeBlock block(cfg, 1, store);
    Rng rng(1);
    Tape tape;
    Var x = tape.leaf(random_mat(rng, 10, cfg.dim), false);
    Var h = block.expert_forward(tape, x, 0);
    CHECK(h.rows() == 10);
    CHECK(h.cols() == cfg.dim);
    CHECK_THROWS_AS(block.expert_forward(tape, x, -1), ConfigError);
    CHECK_THROWS_AS(block.expert_forward(tape, x, cfg.num_experts), ConfigError);
}

TEST_CASE("different experts transform the same input differently") {
    ModelConfig cfg = emoe_config();
    ParameterStore store;
    EmoeBlock block(cfg, 1, store);
    Rng rng(2);
    Tape tape;
    Var x = tape.leaf(random_mat(rng, 6, cfg.dim), false);
    const Mat h0 = tape.value(block.expert_forward(tape, x, 0));
    const Mat h1 = tape.value(block.expert_forward(tape, x, 1));
    CHECK(!same_mat(h0, h1));
}

TEST_CASE("zeroed expert weights leave only the final bias pattern") {
    ModelConfig cfg = emoe_config();
    ParameterStore store;
    EmoeBlock block(cfg, 1, store);
    const std::string p = "emoe.layer1.expert0.";
    for (const char* s : {"conv1.w", "mlp.w1", "mlp.w2", "conv2.w"}) zero_param(store, p + s);
    const int bidx = store.find(p + "conv2.b");
    REQUIRE(bidx >= 0);
    store.at(bidx).value = Mat::Constant(1, cfg.dim, 0.7);

    Rng rng(3);
    Tape tape;
    Var x = tape.leaf(random_mat(rng, 5, cfg.dim), false);
    const Mat h = tape.value(block.expert_forward(tape, x, 0));
    for (int r = 0; r < h.rows(); ++r)
        for (int c = 0; c < h.cols(); ++c) CHECK(h(r, c) == 0.7);
}

TEST_CASE("assembly equals the independently computed weighted sum") {
    ModelConfig cfg = emoe_config();
    ParameterStore store;
    EmoeBlock block(cfg, 1, store);
    Rng rng(4);
    const int n = 7;

    for (int trial = 0; trial < 100; ++trial) {
        Tape tape;
        std::vector<Var> features;
        std::vector<Mat> raw;
        for (int i = 0; i < cfg.num_experts; ++i) {
            raw.push_back(random_mat(rng, n, cfg.dim));
            features.push_back(tape.leaf(raw.back(), false));
        }
        Mat w(1, cfg.num_experts);
        for (int i = 0; i < cfg.num_experts; ++i) w(0, i) = rng.uniform();
        const Mat got = tape.value(block.assemble(tape, features, tape.constant(w)));

        Mat expect = Mat::Zero(n, cfg.dim);
        for (int i = 0; i < cfg.num_experts; ++i) expect += w(0, i) * raw[i];
        CHECK((got - expect).cwiseAbs().maxCoeff() < 1e-6);
    }
}

TEST_CASE("one-hot and uniform-half gatings hit their closed forms") {
    ModelConfig cfg = emoe_config();
    ParameterStore store;
    EmoeBlock block(cfg, 1, store);
    Rng rng(5);
    const int n = 6;
    Tape tape;
    std::vector<Var> features;
    std::vector<Mat> raw;
    for (int i = 0; i < cfg.num_experts; ++i) {
        raw.push_back(random_mat(rng, n, cfg.dim));
        features.push_back(tape.leaf(raw.back(), false));
    }

    Mat onehot = Mat::Zero(1, cfg.num_experts);
    onehot(0, 0) = 1.0;
    CHECK(same_mat(tape.value(block.assemble(tape, features, tape.constant(onehot))), raw[0]));

    Mat half = Mat::Constant(1, cfg.num_experts, 0.5);
    Mat sum = Mat::Zero(n, cfg.dim);
    for (const Mat& h : raw) sum += h;
    const Mat got = tape.value(block.assemble(tape, features, tape.constant(half)));
    CHECK((got - 0.5 * sum).cwiseAbs().maxCoeff() < 1e-12);

    std::vector<Var> short_list(features.begin(), features.end() - 1);
    CHECK_THROWS_AS(block.assemble(tape, short_list, tape.constant(half)), ConfigError);
}

TEST_CASE("a single expert reduces to scalar-gated passthrough") {
    ModelConfig cfg = emoe_config(/*experts=*/1);
    ParameterStore store;
    EmoeBlock block(cfg, 1, store);
    Rng rng(6);
    Tape tape;
    Var x = tape.leaf(random_mat(rng, 8, cfg.dim), false);
    auto [p, scores] = block.forward(tape, x, /*training=*/true);
    REQUIRE(scores.rows() == 1);
    REQUIRE(scores.cols() == 1);
    const double w1 = tape.value(scores)(0, 0);
    CHECK(w1 > 0.0);
    CHECK(w1 < 1.0);
    const Mat h1 = tape.value(block.expert_forward(tape, x, 0));
    CHECK((tape.value(p) - w1 * h1).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("gating scores are K values strictly inside the unit interval") {
    ModelConfig cfg = emoe_config();
    ParameterStore store;
    EmoeBlock block(cfg, 1, store);
    Rng rng(7);
    for (int trial = 0; trial < 10; ++trial) {
        Tape tape;
        Var x = tape.leaf(random_mat(rng, 12, cfg.dim, 5.0), false);
        Var s = block.gating_scores(tape, x, trial % 2 == 0);
        REQUIRE(s.rows() == 1);
        REQUIRE(s.cols() == cfg.num_experts);
        const Mat v = tape.value(s);
        CHECK(v.minCoeff() > 0.0);
        CHECK(v.maxCoeff() < 1.0);
    }
}

TEST_CASE("training updates normalization buffers and eval freezes them") {
    ModelConfig cfg = emoe_config();
    ParameterStore store;
    EmoeBlock block(cfg, 1, store);
    const int rm = store.find("emoe.layer1.assemble.bn1.running_mean");
    REQUIRE(rm >= 0);
    CHECK(store.at(rm).buffer);
    const Mat before = store.at(rm).value;

    Rng rng(8);
    Tape tape;
    Var x = tape.leaf(random_mat(rng, 16, cfg.dim), false);
    block.gating_scores(tape, x, /*training=*/true);
    const Mat after_train = store.at(rm).value;
    CHECK(!same_mat(before, after_train));

    Tape tape2;
    Var x2 = tape2.leaf(random_mat(rng, 16, cfg.dim), false);
    block.gating_scores(tape2, x2, /*training=*/false);
    CHECK(same_mat(store.at(rm).value, after_train));
}

TEST_CASE("gradients of the mean injection match finite differences") {
    ModelConfig cfg = emoe_config(/*experts=*/2, /*dim=*/8);
    ParameterStore store;
    EmoeBlock block(cfg, 1, store);
    store.set_group_trainable("emoe", true);
    Rng rng(9);
    const Mat x0 = random_mat(rng, 8, cfg.dim);

    const auto eval = [&]() {
        Tape tape;
        Var x = tape.leaf(x0, false);
        auto [p, scores] = block.forward(tape, x, /*training=*/true);
        (void)scores;
        return tape.value(tape.mean_all(p))(0, 0);
    };

    // One analytic sweep.
    store.zero_grads();
    {
        Tape tape;
        Var x = tape.leaf(x0, false);
        auto [p, scores] = block.forward(tape, x, /*training=*/true);
        (void)scores;
        tape.backward(tape.mean_all(p));
    }

    const double h = 1e-5;
    int checked = 0;
    for (int pi = 0; pi < static_cast<int>(store.size()); ++pi) {
        Parameter& par = store.at(pi);
        if (par.buffer) continue;
        // Probe a few entries per parameter to keep the sweep fast.
        const int probes = std::min<int>(3, static_cast<int>(par.value.size()));
        for (int k = 0; k < probes; ++k) {
            const int r = k % static_cast<int>(par.value.rows());
            const int c = (k * 7 + 1) % static_cast<int>(par.value.cols());
            const double saved = par.value(r, c);
            par.value(r, c) = saved + h;
            const double fp = eval();
            par.value(r, c) = saved - h;
            const double fm = eval();
            par.value(r, c) = saved;
            const double numeric = (fp - fm) / (2 * h);
            const double analytic = par.grad(r, c);
            const double denom = std::max({std::abs(numeric), std::abs(analytic), 1e-6});
            CHECK(std::abs(numeric - analytic) / denom < 1e-4);
            ++checked;
        }
    }
    CHECK(checked > 20);
}
