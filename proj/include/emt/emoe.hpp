#pragma once

#include <utility>
#include <vector>

#include "emt/backbone.hpp"

namespace emt {

// One injection site: K expert branches (pointwise conv, MLP, pointwise conv
// applied per token) plus an assembling network that gates them with K
// sigmoid scores pooled over all tokens.
class EmoeBlock {
public:
    EmoeBlock(const ModelConfig& cfg, int layer, ParameterStore& store);

    int layer() const { return layer_; }

    // Attribute-specific features for expert i (0-based), shape-preserving.
    Var expert_forward(Tape& tape, Var x, int i) const;

    // Gating scores in (0,1), shape (1, K). Training mode updates the batch
    // norm running buffers; eval mode reads them.
    Var gating_scores(Tape& tape, Var x, bool training) const;

    // assembled = sum_i scores(0,i) * features[i]
    Var assemble(Tape& tape, const std::vector<Var>& features, Var scores) const;

    // Runs every expert plus the gating network: returns the injection delta
    // and the scores.
    std::pair<Var, Var> forward(Tape& tape, Var x, bool training) const;

private:
    struct ExpertParams {
        int c1w, c1b, m1w, m1b, m2w, m2b, c2w, c2b;
    };
    ModelConfig cfg_;
    int layer_;
    ParameterStore* store_;
    std::vector<ExpertParams> experts_;
    int a1w_, a1b_, bn1_g_, bn1_b_, bn1_rm_, bn1_rv_;
    int a2w_, a2b_, bn2_g_, bn2_b_, bn2_rm_, bn2_rv_;
    int out_w_, out_b_;
};

}  // namespace emt
