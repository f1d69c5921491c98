#pragma once

#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "emt/backbone.hpp"
#include "emt/crm.hpp"
#include "emt/emoe.hpp"

namespace emt {

// One forward pass's differentiable outputs.
struct ForwardResult {
    Var tokens;                                    // final token sequence (N, D)
    HeadOutput head;
    std::vector<std::pair<int, Var>> attr_scores;  // (layer, (1,K) gating scores)
    Var crm_sim;                                   // (N_x, 1); valid() only with the module on
};

// The full tracker: frozen backbone plus the trainable injection and
// contrastive modules, with one parameter store and group-level freeze flags.
class TrackerModel {
public:
    explicit TrackerModel(const ModelConfig& cfg);

    const ModelConfig& config() const { return cfg_; }
    ParameterStore& store() { return store_; }
    const ParameterStore& store() const { return store_; }
    Backbone& backbone() { return *backbone_; }
    const Backbone& backbone() const { return *backbone_; }
    const Crm* crm() const { return crm_.get(); }

    ForwardResult forward(Tape& tape, const Sample& sample, bool training);
    ForwardResult forward_raw(Tape& tape, const Image& rgb_t, const EventFrame& ev_t,
                              const Image& rgb_s, const EventFrame& ev_s, bool training);

    // Gates the additive injections without touching any parameters; with
    // injections off the computation is the backbone-only op sequence.
    void set_injections_enabled(bool on) { injections_enabled_ = on; }
    bool injections_enabled() const { return injections_enabled_; }

    // Gating scores of the most recent forward pass, one (1,K) row per
    // injected layer in layer order. Errors before any forward has run.
    std::vector<std::pair<int, Mat>> collect_scores() const;

    std::size_t num_emoe_blocks() const { return emoe_blocks_.size(); }
    const EmoeBlock& emoe_block(std::size_t i) const { return *emoe_blocks_.at(i); }

    std::vector<ParameterGroupReport> freeze_report() const;

    void save_checkpoint(const std::string& path) const;
    static std::unique_ptr<TrackerModel> load_checkpoint(const std::string& path);

private:
    ModelConfig cfg_;
    ParameterStore store_;
    std::unique_ptr<Backbone> backbone_;
    std::vector<std::unique_ptr<EmoeBlock>> emoe_blocks_;  // one per injected layer
    std::unique_ptr<Crm> crm_;
    bool injections_enabled_ = true;
    std::vector<std::pair<int, Mat>> last_scores_;
    bool has_forward_ = false;
};

}  // namespace emt
