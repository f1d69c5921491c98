#include "emt/backbone.hpp"

#include <algorithm>
#include <cmath>

namespace emt {

std::vector<int> ModelConfig::injected_layers() const {
    std::vector<int> layers;
    if (insert_interval == depth) {
        layers.push_back(depth);
        return layers;
    }
    for (int l = 1; l <= depth; ++l)
        if (l % insert_interval == 0) layers.push_back(l);
    return layers;
}

void ModelConfig::validate() const {
    if (depth < 1) throw ConfigError("model: depth must be >= 1");
    if (dim < 1 || heads < 1 || dim % heads != 0)
        throw ConfigError("model: dim must be a positive multiple of heads");
    if (patch < 1 || template_size % patch != 0 || search_size % patch != 0)
        throw ConfigError("model: patch must divide template and search sizes");
    if (mlp_ratio < 1 || hidden_ratio < 1) throw ConfigError("model: expansion ratios must be >= 1");
    if (num_experts < 1) throw ConfigError("model: need at least one expert");
    const bool known_interval = insert_interval == 1 || insert_interval == 2 ||
                                insert_interval == 4 || insert_interval == 6 ||
                                insert_interval == 12;
    if (!known_interval) throw ConfigError("model: insert_interval must be one of 1,2,4,6,12");
    if (insert_interval > depth)
        throw ConfigError("model: insert_interval exceeds depth, no layer would be injected");
    if (tau <= 0.0) throw ConfigError("model: tau must be positive");
}

BoundingBox decode_box_at(const Mat& offsets, const Mat& sizes, int row, int col, int grid) {
    const Eigen::Index idx = static_cast<Eigen::Index>(row) * grid + col;
    BoundingBox b;
    b.cx = (col + 0.5 + offsets(idx, 0)) / grid;
    b.cy = (row + 0.5 + offsets(idx, 1)) / grid;
    b.w = sizes(idx, 0);
    b.h = sizes(idx, 1);
    return b;
}

Mat init_weight(std::uint64_t seed, const std::string& name, Eigen::Index rows,
                Eigen::Index cols, double stddev) {
    Rng rng(derive_seed(seed, name));
    Mat m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = rng.truncated_normal(stddev);
    return m;
}

// ---------------------------------------------------------------------------

Backbone::Backbone(const ModelConfig& cfg, ParameterStore& store) : cfg_(cfg), store_(&store) {
    cfg_.validate();
    layout_.n_z = cfg.n_z();
    layout_.n_x = cfg.n_x();
    const int D = cfg.dim;
    const auto w = [&](const std::string& name, Eigen::Index r, Eigen::Index c) {
        return store.add("patch_embed", name, init_weight(cfg.seed, name, r, c, 0.02));
    };
    rgb_w_ = w("patch_embed.rgb.w", cfg.patch * cfg.patch * 3, D);
    rgb_b_ = store.add("patch_embed", "patch_embed.rgb.b", Mat::Zero(1, D));
    ev_w_ = w("patch_embed.event.w", cfg.patch * cfg.patch * 2, D);
    ev_b_ = store.add("patch_embed", "patch_embed.event.b", Mat::Zero(1, D));
    pos_t_ = w("patch_embed.pos.template", layout_.n_z, D);
    pos_s_ = w("patch_embed.pos.search", layout_.n_x, D);
    mod_rgb_ = w("patch_embed.mod.rgb", 1, D);
    mod_ev_ = w("patch_embed.mod.event", 1, D);

    for (int l = 1; l <= cfg.depth; ++l) {
        const std::string p = "backbone.layer" + std::to_string(l) + ".";
        const auto bw = [&](const std::string& name, Eigen::Index r, Eigen::Index c) {
            return store.add("backbone", name, init_weight(cfg.seed, name, r, c, 0.02));
        };
        const auto zeros = [&](const std::string& name, Eigen::Index r, Eigen::Index c) {
            return store.add("backbone", name, Mat::Zero(r, c));
        };
        const auto ones = [&](const std::string& name, Eigen::Index c) {
            return store.add("backbone", name, Mat::Ones(1, c));
        };
        LayerParams lp;
        lp.ln1_g = ones(p + "ln1.gamma", D);
        lp.ln1_b = zeros(p + "ln1.beta", 1, D);
        lp.wq = bw(p + "attn.wq", D, D);
        lp.bq = zeros(p + "attn.bq", 1, D);
        lp.wk = bw(p + "attn.wk", D, D);
        lp.bk = zeros(p + "attn.bk", 1, D);
        lp.wv = bw(p + "attn.wv", D, D);
        lp.bv = zeros(p + "attn.bv", 1, D);
        lp.wo = bw(p + "attn.wo", D, D);
        lp.bo = zeros(p + "attn.bo", 1, D);
        lp.ln2_g = ones(p + "ln2.gamma", D);
        lp.ln2_b = zeros(p + "ln2.beta", 1, D);
        lp.w1 = bw(p + "ffn.w1", D, cfg.mlp_ratio * D);
        lp.b1 = zeros(p + "ffn.b1", 1, cfg.mlp_ratio * D);
        lp.w2 = bw(p + "ffn.w2", cfg.mlp_ratio * D, D);
        lp.b2 = zeros(p + "ffn.b2", 1, D);
        layers_.push_back(lp);
    }

    head_w_ = store.add("head", "head.conv.w",
                        init_weight(cfg.seed, "head.conv.w", 9 * D, 5, 0.02));
    head_b_ = store.add("head", "head.conv.b", Mat::Zero(1, 5));
}

Mat Backbone::patch_matrix(const Image& img, int patch) {
    if (img.height % patch != 0 || img.width % patch != 0)
        throw DataError("patch_matrix: image size not divisible by patch");
    const int gh = img.height / patch, gw = img.width / patch;
    Mat m(static_cast<Eigen::Index>(gh) * gw, static_cast<Eigen::Index>(patch) * patch * img.channels);
    for (int gy = 0; gy < gh; ++gy) {
        for (int gx = 0; gx < gw; ++gx) {
            Eigen::Index col = 0;
            for (int py = 0; py < patch; ++py)
                for (int px = 0; px < patch; ++px)
                    for (int c = 0; c < img.channels; ++c)
                        m(static_cast<Eigen::Index>(gy) * gw + gx, col++) =
                            img.at(gy * patch + py, gx * patch + px, c);
        }
    }
    return m;
}

std::pair<Var, Var> Backbone::patch_embed(Tape& tape, const Image& rgb, const EventFrame& ev,
                                          bool is_template) const {
    const int want = is_template ? cfg_.template_size : cfg_.search_size;
    if (rgb.height != want || rgb.width != want || rgb.channels != 3)
        throw DataError("patch_embed: rgb crop has the wrong shape");
    if (ev.height != want || ev.width != want || ev.channels != 2)
        throw DataError("patch_embed: event crop has the wrong shape");

    const int pos = is_template ? pos_t_ : pos_s_;
    Var rgb_tok = tape.linear(tape.constant(patch_matrix(rgb, cfg_.patch)),
                              tape.param(*store_, rgb_w_), tape.param(*store_, rgb_b_));
    rgb_tok = tape.add(rgb_tok, tape.param(*store_, pos));
    rgb_tok = tape.add_rowvec(rgb_tok, tape.param(*store_, mod_rgb_));
    Var ev_tok = tape.linear(tape.constant(patch_matrix(ev, cfg_.patch)),
                             tape.param(*store_, ev_w_), tape.param(*store_, ev_b_));
    ev_tok = tape.add(ev_tok, tape.param(*store_, pos));
    ev_tok = tape.add_rowvec(ev_tok, tape.param(*store_, mod_ev_));
    return {rgb_tok, ev_tok};
}

Var Backbone::embed_sample(Tape& tape, const Image& rgb_t, const EventFrame& ev_t,
                           const Image& rgb_s, const EventFrame& ev_s) const {
    const auto [rgb_z, ev_z] = patch_embed(tape, rgb_t, ev_t, true);
    const auto [rgb_x, ev_x] = patch_embed(tape, rgb_s, ev_s, false);
    return tape.concat_rows({rgb_z, rgb_x, ev_z, ev_x});
}

Var Backbone::encoder_layer(Tape& tape, Var x, int l) const {
    if (l < 1 || l > cfg_.depth) throw ConfigError("encoder_layer: layer index out of range");
    const LayerParams& lp = layers_[l - 1];
    const int D = cfg_.dim;
    const int dh = D / cfg_.heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

    Var y = tape.layer_norm(x, tape.param(*store_, lp.ln1_g), tape.param(*store_, lp.ln1_b));
    Var q = tape.linear(y, tape.param(*store_, lp.wq), tape.param(*store_, lp.bq));
    Var k = tape.linear(y, tape.param(*store_, lp.wk), tape.param(*store_, lp.bk));
    Var v = tape.linear(y, tape.param(*store_, lp.wv), tape.param(*store_, lp.bv));

    std::vector<Var> head_outs;
    Mat attn_avg;
    for (int h = 0; h < cfg_.heads; ++h) {
        Var qh = tape.slice_cols(q, static_cast<Eigen::Index>(h) * dh, dh);
        Var kh = tape.slice_cols(k, static_cast<Eigen::Index>(h) * dh, dh);
        Var vh = tape.slice_cols(v, static_cast<Eigen::Index>(h) * dh, dh);
        Var attn = tape.softmax_rows(tape.scale(tape.matmul_nt(qh, kh), inv_sqrt));
        if (record_attention_) {
            if (attn_avg.size() == 0) attn_avg = tape.value(attn);
            else attn_avg += tape.value(attn);
        }
        head_outs.push_back(tape.matmul(attn, vh));
    }
    if (record_attention_) {
        // Template rows (both modalities) attending onto the rgb-search and
        // event-search segments, folded into one (S,S) map.
        attn_avg /= cfg_.heads;
        const int S = cfg_.grid();
        Mat map = Mat::Zero(S, S);
        const int nz = layout_.n_z, nx = layout_.n_x;
        double rows_used = 0.0;
        for (int r = 0; r < layout_.total(); ++r) {
            const bool is_template_row =
                r < nz || (r >= layout_.event_template() && r < layout_.event_template() + nz);
            if (!is_template_row) continue;
            rows_used += 1.0;
            for (int i = 0; i < nx; ++i) {
                const double a = attn_avg(r, layout_.rgb_search() + i) +
                                 attn_avg(r, layout_.event_search() + i);
                map(i / S, i % S) += a;
            }
        }
        if (rows_used > 0.0) map /= rows_used;
        attention_maps_.push_back(std::move(map));
    }

    Var attn_out = tape.linear(tape.concat_cols(head_outs), tape.param(*store_, lp.wo),
                               tape.param(*store_, lp.bo));
    x = tape.add(x, attn_out);

    Var z = tape.layer_norm(x, tape.param(*store_, lp.ln2_g), tape.param(*store_, lp.ln2_b));
    Var hidden = tape.gelu(tape.linear(z, tape.param(*store_, lp.w1), tape.param(*store_, lp.b1)));
    Var ffn = tape.linear(hidden, tape.param(*store_, lp.w2), tape.param(*store_, lp.b2));
    return tape.add(x, ffn);
}

Var Backbone::forward_encoder(Tape& tape, Var x0,
                              const std::vector<std::pair<int, Var>>& injections) const {
    const auto allowed = cfg_.injected_layers();
    for (const auto& [l, delta] : injections) {
        if (std::find(allowed.begin(), allowed.end(), l) == allowed.end())
            throw ConfigError("forward_encoder: injection at non-configured layer " +
                              std::to_string(l));
        (void)delta;
    }
    if (record_attention_) attention_maps_.clear();
    Var x = x0;
    for (int l = 1; l <= cfg_.depth; ++l) {
        x = encoder_layer(tape, x, l);
        for (const auto& [il, delta] : injections)
            if (il == l) x = tape.add(x, delta);
    }
    return x;
}

Var Backbone::fused_search(Tape& tape, Var tokens) const {
    Var rgb = tape.slice_rows(tokens, layout_.rgb_search(), layout_.n_x);
    Var ev = tape.slice_rows(tokens, layout_.event_search(), layout_.n_x);
    return tape.scale(tape.add(rgb, ev), 0.5);
}

HeadOutput Backbone::decode_head(Tape& tape, Var search_tokens) const {
    const int S = cfg_.grid();
    if (search_tokens.rows() != static_cast<Eigen::Index>(S) * S ||
        search_tokens.cols() != cfg_.dim)
        throw DataError("decode_head: search tokens have the wrong shape");

    Var cols = tape.im2col3x3(search_tokens, S);
    Var maps = tape.linear(cols, tape.param(*store_, head_w_), tape.param(*store_, head_b_));

    HeadOutput out;
    out.grid = S;
    out.score_logits = tape.slice_cols(maps, 0, 1);
    out.offsets = tape.add_const(tape.sigmoid(tape.slice_cols(maps, 1, 2)), -0.5);
    out.sizes = tape.sigmoid(tape.slice_cols(maps, 3, 2));

    const Mat score = tape.value(out.score_logits)
                          .unaryExpr([](double t) { return 1.0 / (1.0 + std::exp(-t)); });
    out.score_map.resize(S, S);
    Eigen::Index best = 0;
    for (Eigen::Index i = 0; i < score.rows(); ++i) {
        out.score_map(i / S, i % S) = score(i, 0);
        if (score(i, 0) > score(best, 0)) best = i;  // ties keep the smaller index
    }
    out.peak_row = static_cast<int>(best) / S;
    out.peak_col = static_cast<int>(best) % S;
    out.peak_score = score(best, 0);
    out.box = decode_box_at(tape.value(out.offsets), tape.value(out.sizes), out.peak_row,
                            out.peak_col, S)
                  .clamped();
    return out;
}

}  // namespace emt
