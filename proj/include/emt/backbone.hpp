#pragma once

#include <utility>
#include <vector>

#include "emt/autodiff.hpp"
#include "emt/eventrep.hpp"
#include "emt/geometry.hpp"

namespace emt {

// Architecture + module-toggle configuration shared by every component that
// builds or consumes the tracker.
struct ModelConfig {
    int depth = 4;        // encoder layers L
    int dim = 64;         // token width D
    int heads = 4;
    int patch = 16;
    int mlp_ratio = 2;    // encoder FFN expansion
    int template_size = 64;
    int search_size = 128;

    bool use_emoe = true;
    int num_experts = 4;      // K
    int insert_interval = 1;  // layers between injections
    int hidden_ratio = 2;     // expert MLP expansion

    bool use_crm = true;
    double tau = 0.07;
    bool crm_feeds_head = false;

    bool header_unfrozen = false;
    std::uint64_t seed = 0;

    int n_z() const { return (template_size / patch) * (template_size / patch); }
    int n_x() const { return (search_size / patch) * (search_size / patch); }
    int grid() const { return search_size / patch; }  // S, search tokens form SxS
    int num_tokens() const { return 2 * n_z() + 2 * n_x(); }

    // 1-based encoder layers that receive an injection: multiples of the
    // interval, or just the last layer when interval == depth.
    std::vector<int> injected_layers() const;

    void validate() const;  // throws ConfigError
};

// Offsets of the four contiguous token segments.
struct SegmentLayout {
    int n_z = 0, n_x = 0;
    int rgb_template() const { return 0; }
    int rgb_search() const { return n_z; }
    int event_template() const { return n_z + n_x; }
    int event_search() const { return 2 * n_z + n_x; }
    int total() const { return 2 * n_z + 2 * n_x; }
};

// Differentiable head outputs plus the decoded box. Score/offset/size rows
// are in search-grid row-major order.
struct HeadOutput {
    Var score_logits;  // (N_x, 1)
    Var offsets;       // (N_x, 2), entries in (-0.5, 0.5)
    Var sizes;         // (N_x, 2), entries in (0, 1)
    Mat score_map;     // (S, S) sigmoid values
    int peak_row = 0, peak_col = 0;
    double peak_score = 0.0;
    BoundingBox box;   // decoded at the argmax cell, search-crop coordinates
    int grid = 0;
};

// Decodes a box from map rows at a chosen cell (used both at the argmax for
// inference and at the ground-truth cell for training losses).
BoundingBox decode_box_at(const Mat& offsets, const Mat& sizes, int row, int col, int grid);

// The frozen trunk: patch/positional embeddings for both modalities, L
// pre-norm transformer layers over the concatenated token sequence, and the
// convolutional score/offset/size head.
class Backbone {
public:
    Backbone(const ModelConfig& cfg, ParameterStore& store);

    const SegmentLayout& layout() const { return layout_; }

    // Flattens image patches into a (num_patches, patch*patch*channels) matrix
    // in row-major grid order.
    static Mat patch_matrix(const Image& img, int patch);

    // Tokens for one (rgb, event) pair: projection + positional + modality
    // embeddings. Returns the rgb segment and event segment.
    std::pair<Var, Var> patch_embed(Tape& tape, const Image& rgb, const EventFrame& ev,
                                    bool is_template) const;

    // Full four-segment token sequence for a sample's crops.
    Var embed_sample(Tape& tape, const Image& rgb_t, const EventFrame& ev_t, const Image& rgb_s,
                     const EventFrame& ev_s) const;

    Var encoder_layer(Tape& tape, Var x, int l) const;  // l is 1-based

    // Runs all layers; each (layer, delta) pair is added to that layer's
    // output. Injection at a non-configured layer is a config error.
    Var forward_encoder(Tape& tape, Var x0,
                        const std::vector<std::pair<int, Var>>& injections) const;

    // Element-wise mean of the rgb-search and event-search segments.
    Var fused_search(Tape& tape, Var tokens) const;

    HeadOutput decode_head(Tape& tape, Var search_tokens) const;

    // When enabled, encoder layers record head-averaged attention from the
    // template tokens onto the search grid, one (S,S) map per layer.
    void set_record_attention(bool on) { record_attention_ = on; }
    const std::vector<Mat>& recorded_attention() const { return attention_maps_; }
    void clear_recorded_attention() { attention_maps_.clear(); }

private:
    struct LayerParams {
        int ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo;
        int ln2_g, ln2_b, w1, b1, w2, b2;
    };

    ModelConfig cfg_;
    ParameterStore* store_;
    SegmentLayout layout_;
    int rgb_w_, rgb_b_, ev_w_, ev_b_, pos_t_, pos_s_, mod_rgb_, mod_ev_;
    int head_w_, head_b_;
    std::vector<LayerParams> layers_;
    bool record_attention_ = false;
    mutable std::vector<Mat> attention_maps_;
};

// All parameters of `group` with per-name seeded initialization so values do
// not depend on which other groups exist.
Mat init_weight(std::uint64_t seed, const std::string& name, Eigen::Index rows,
                Eigen::Index cols, double stddev);

}  // namespace emt
