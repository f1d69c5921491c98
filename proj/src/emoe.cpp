#include "emt/emoe.hpp"

namespace emt {

EmoeBlock::EmoeBlock(const ModelConfig& cfg, int layer, ParameterStore& store)
    : cfg_(cfg), layer_(layer), store_(&store) {
    const int D = cfg.dim;
    const int H = cfg.hidden_ratio * D;
    const std::string base = "emoe.layer" + std::to_string(layer) + ".";
    const auto w = [&](const std::string& name, Eigen::Index r, Eigen::Index c) {
        return store.add("emoe", name, init_weight(cfg.seed, name, r, c, 0.02));
    };
    const auto zeros = [&](const std::string& name, Eigen::Index r, Eigen::Index c) {
        return store.add("emoe", name, Mat::Zero(r, c));
    };

    for (int i = 0; i < cfg.num_experts; ++i) {
        const std::string p = base + "expert" + std::to_string(i) + ".";
        ExpertParams e;
        e.c1w = w(p + "conv1.w", D, D);
        e.c1b = zeros(p + "conv1.b", 1, D);
        e.m1w = w(p + "mlp.w1", D, H);
        e.m1b = zeros(p + "mlp.b1", 1, H);
        e.m2w = w(p + "mlp.w2", H, D);
        e.m2b = zeros(p + "mlp.b2", 1, D);
        e.c2w = w(p + "conv2.w", D, D);
        e.c2b = zeros(p + "conv2.b", 1, D);
        experts_.push_back(e);
    }

    const std::string a = base + "assemble.";
    a1w_ = w(a + "conv1.w", D, D);
    a1b_ = zeros(a + "conv1.b", 1, D);
    bn1_g_ = store.add("emoe", a + "bn1.gamma", Mat::Ones(1, D));
    bn1_b_ = zeros(a + "bn1.beta", 1, D);
    bn1_rm_ = store.add("emoe", a + "bn1.running_mean", Mat::Zero(1, D), /*buffer=*/true);
    bn1_rv_ = store.add("emoe", a + "bn1.running_var", Mat::Ones(1, D), /*buffer=*/true);
    a2w_ = w(a + "conv2.w", D, D);
    a2b_ = zeros(a + "conv2.b", 1, D);
    bn2_g_ = store.add("emoe", a + "bn2.gamma", Mat::Ones(1, D));
    bn2_b_ = zeros(a + "bn2.beta", 1, D);
    bn2_rm_ = store.add("emoe", a + "bn2.running_mean", Mat::Zero(1, D), /*buffer=*/true);
    bn2_rv_ = store.add("emoe", a + "bn2.running_var", Mat::Ones(1, D), /*buffer=*/true);
    out_w_ = w(a + "out.w", D, cfg.num_experts);
    out_b_ = zeros(a + "out.b", 1, cfg.num_experts);
}

Var EmoeBlock::expert_forward(Tape& tape, Var x, int i) const {
    if (i < 0 || i >= cfg_.num_experts) throw ConfigError("expert_forward: invalid expert index");
    const ExpertParams& e = experts_[static_cast<std::size_t>(i)];
    Var h = tape.linear(x, tape.param(*store_, e.c1w), tape.param(*store_, e.c1b));
    h = tape.gelu(tape.linear(h, tape.param(*store_, e.m1w), tape.param(*store_, e.m1b)));
    h = tape.linear(h, tape.param(*store_, e.m2w), tape.param(*store_, e.m2b));
    return tape.linear(h, tape.param(*store_, e.c2w), tape.param(*store_, e.c2b));
}

Var EmoeBlock::gating_scores(Tape& tape, Var x, bool training) const {
    Var h = tape.linear(x, tape.param(*store_, a1w_), tape.param(*store_, a1b_));
    h = tape.batch_norm_cols(h, tape.param(*store_, bn1_g_), tape.param(*store_, bn1_b_),
                             store_->at(bn1_rm_).value, store_->at(bn1_rv_).value, training);
    h = tape.relu(h);
    h = tape.linear(h, tape.param(*store_, a2w_), tape.param(*store_, a2b_));
    h = tape.batch_norm_cols(h, tape.param(*store_, bn2_g_), tape.param(*store_, bn2_b_),
                             store_->at(bn2_rm_).value, store_->at(bn2_rv_).value, training);
    h = tape.relu(h);
    h = tape.linear(h, tape.param(*store_, out_w_), tape.param(*store_, out_b_));
    // Keep scores strictly inside (0,1) even at saturated pre-activations.
    Var per_token = tape.clamp_interior(tape.sigmoid(h), 1e-9);
    return tape.mean_over_rows(per_token);
}

Var EmoeBlock::assemble(Tape& tape, const std::vector<Var>& features, Var scores) const {
    if (static_cast<int>(features.size()) != cfg_.num_experts)
        throw ConfigError("assemble: expected " + std::to_string(cfg_.num_experts) +
                          " expert features, got " + std::to_string(features.size()));
    return tape.weighted_sum(features, scores);
}

std::pair<Var, Var> EmoeBlock::forward(Tape& tape, Var x, bool training) const {
    std::vector<Var> features;
    features.reserve(static_cast<std::size_t>(cfg_.num_experts));
    for (int i = 0; i < cfg_.num_experts; ++i) features.push_back(expert_forward(tape, x, i));
    Var scores = gating_scores(tape, x, training);
    return {assemble(tape, features, scores), scores};
}

}  // namespace emt
