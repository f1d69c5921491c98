#include "emt/crm.hpp"

namespace emt {

PairPartition partition_pairs(const BoundingBox& gt_box, int grid) {
    if (gt_box.w <= 0.0 || gt_box.h <= 0.0)
        throw DataError("partition_pairs: degenerate ground-truth box");
    PairPartition part;
    part.positive.resize(static_cast<std::size_t>(grid) * grid);
    for (int r = 0; r < grid; ++r) {
        for (int c = 0; c < grid; ++c) {
            const double px = (c + 0.5) / grid;
            const double py = (r + 0.5) / grid;
            const bool inside = px >= gt_box.x0() && px <= gt_box.x1() && py >= gt_box.y0() &&
                                py <= gt_box.y1();
            part.positive[static_cast<std::size_t>(r) * grid + c] = inside;
            (inside ? part.n_pos : part.n_neg) += 1;
        }
    }
    return part;
}

Crm::Crm(const ModelConfig& cfg, ParameterStore& store) : cfg_(cfg), store_(&store) {
    const int D = cfg.dim;
    // Averaging initialization: [I/2 ; I/2] maps (rgb, event) -> their mean.
    Mat w = Mat::Zero(2 * D, D);
    for (int i = 0; i < D; ++i) {
        w(i, i) = 0.5;
        w(D + i, i) = 0.5;
    }
    fuse_w_ = store.add("crm", "crm.fuse.w", std::move(w));
    fuse_b_ = store.add("crm", "crm.fuse.b", Mat::Zero(1, D));
}

Crm::Fused Crm::fuse(Tape& tape, Var tokens, const SegmentLayout& layout) const {
    if (tokens.rows() != layout.total())
        throw DataError("crm fuse: token count does not match segment layout");
    Var rgb_z = tape.slice_rows(tokens, layout.rgb_template(), layout.n_z);
    Var ev_z = tape.slice_rows(tokens, layout.event_template(), layout.n_z);
    Var rgb_x = tape.slice_rows(tokens, layout.rgb_search(), layout.n_x);
    Var ev_x = tape.slice_rows(tokens, layout.event_search(), layout.n_x);
    Var w = tape.param(*store_, fuse_w_);
    Var b = tape.param(*store_, fuse_b_);
    Fused f;
    f.z = tape.linear(tape.concat_cols({rgb_z, ev_z}), w, b);
    f.x = tape.linear(tape.concat_cols({rgb_x, ev_x}), w, b);
    return f;
}

Var Crm::similarity(Tape& tape, const Fused& fused) const {
    Var zbar = tape.mean_over_rows(fused.z);
    return tape.scale(tape.cosine_rows(fused.x, zbar, 1e-8), 1.0 / cfg_.tau);
}

Var Crm::loss(Tape& tape, Var sim, const PairPartition& part) const {
    if (part.n_pos < 1) throw DataError("crm loss: empty positive set");
    return tape.info_nce(sim, part.positive);
}

}  // namespace emt
