#pragma once

#include <vector>

#include "emt/backbone.hpp"

namespace emt {

// Positive/negative split of the search tokens by the ground-truth box.
struct PairPartition {
    std::vector<bool> positive;  // per search token, row-major grid order
    int n_pos = 0, n_neg = 0;
};

// A search token is positive iff its patch center lies inside the box
// (centers exactly on the boundary count as inside).
PairPartition partition_pairs(const BoundingBox& gt_box, int grid);

// Contrastive relation module: fuses the two modalities per token with a
// learned projection and scores fused search tokens against the pooled fused
// template by temperature-scaled cosine similarity.
class Crm {
public:
    Crm(const ModelConfig& cfg, ParameterStore& store);

    struct Fused {
        Var z;  // (N_z, D)
        Var x;  // (N_x, D)
    };

    // Concat + linear projection (2D -> D) of the rgb/event segment pair; the
    // projection initializes to averaging so an untrained module is benign.
    Fused fuse(Tape& tape, Var tokens, const SegmentLayout& layout) const;

    // s_i = cosine(mean of template rows, x_i) / tau, shape (N_x, 1).
    Var similarity(Tape& tape, const Fused& fused) const;

    // InfoNCE over the partition: -log(sum_pos e^s / sum_all e^s).
    Var loss(Tape& tape, Var sim, const PairPartition& part) const;

private:
    ModelConfig cfg_;
    ParameterStore* store_;
    int fuse_w_, fuse_b_;
};

}  // namespace emt
