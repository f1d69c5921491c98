#include "emt/model.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

#include "emt/config.hpp"

namespace emt {
namespace {

void write_u32(std::ostream& os, std::uint32_t v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

void write_u64(std::ostream& os, std::uint64_t v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

void write_string(std::ostream& os, const std::string& s) {
    write_u32(os, static_cast<std::uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::uint32_t read_u32(std::istream& is) {
    std::uint32_t v = 0;
    is.read(reinterpret_cast<char*>(&v), sizeof(v));
    if (!is) throw DataError("checkpoint truncated");
    return v;
}

std::uint64_t read_u64(std::istream& is) {
    std::uint64_t v = 0;
    is.read(reinterpret_cast<char*>(&v), sizeof(v));
    if (!is) throw DataError("checkpoint truncated");
    return v;
}

std::string read_string(std::istream& is, std::size_t max_len = 1 << 20) {
    const std::uint32_t n = read_u32(is);
    if (n > max_len) throw DataError("checkpoint string length out of range");
    std::string s(n, '\0');
    is.read(s.data(), static_cast<std::streamsize>(n));
    if (!is) throw DataError("checkpoint truncated");
    return s;
}

constexpr char kMagic[5] = {'E', 'M', 'O', 'E', '1'};
constexpr std::uint32_t kVersion = 1;

}  // namespace

TrackerModel::TrackerModel(const ModelConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    backbone_ = std::make_unique<Backbone>(cfg_, store_);
    if (cfg_.use_emoe) {
        for (int layer : cfg_.injected_layers()) {
            emoe_blocks_.push_back(std::make_unique<EmoeBlock>(cfg_, layer, store_));
        }
    }
    if (cfg_.use_crm) crm_ = std::make_unique<Crm>(cfg_, store_);

    store_.set_group_trainable("patch_embed", false);
    store_.set_group_trainable("backbone", false);
    store_.set_group_trainable("head", cfg_.header_unfrozen);
    if (cfg_.use_emoe) store_.set_group_trainable("emoe", true);
    if (cfg_.use_crm) store_.set_group_trainable("crm", true);
}

ForwardResult TrackerModel::forward(Tape& tape, const Sample& sample, bool training) {
    return forward_raw(tape, sample.rgb_template, sample.event_template, sample.rgb_search,
                       sample.event_search, training);
}

ForwardResult TrackerModel::forward_raw(Tape& tape, const Image& rgb_t, const EventFrame& ev_t,
                                        const Image& rgb_s, const EventFrame& ev_s,
                                        bool training) {
    ForwardResult out;
    last_scores_.clear();

    Var x = backbone_->embed_sample(tape, rgb_t, ev_t, rgb_s, ev_s);
    const bool inject = cfg_.use_emoe && injections_enabled_;
    std::size_t block_idx = 0;
    const std::vector<int> layers = cfg_.injected_layers();
    for (int layer = 1; layer <= cfg_.depth; ++layer) {
        Var delta;
        if (inject && block_idx < layers.size() && layers[block_idx] == layer) {
            auto [assembled, scores] = emoe_blocks_[block_idx]->forward(tape, x, training);
            delta = assembled;
            out.attr_scores.emplace_back(layer, scores);
            last_scores_.emplace_back(layer, tape.value(scores));
            ++block_idx;
        } else if (cfg_.use_emoe && block_idx < layers.size() && layers[block_idx] == layer) {
            ++block_idx;  // injections gated off: skip the block entirely
        }
        x = backbone_->encoder_layer(tape, x, layer);
        if (delta.valid()) x = tape.add(x, delta);
    }
    out.tokens = x;

    Var head_input;
    if (cfg_.use_crm) {
        Crm::Fused fused = crm_->fuse(tape, x, backbone_->layout());
        out.crm_sim = crm_->similarity(tape, fused);
        if (cfg_.crm_feeds_head) head_input = fused.x;
    }
    if (!head_input.valid()) head_input = backbone_->fused_search(tape, x);
    out.head = backbone_->decode_head(tape, head_input);

    has_forward_ = true;
    return out;
}

std::vector<std::pair<int, Mat>> TrackerModel::collect_scores() const {
    if (!has_forward_) throw ConfigError("collect_scores called before any forward pass");
    return last_scores_;
}

std::vector<ParameterGroupReport> TrackerModel::freeze_report() const {
    std::vector<ParameterGroupReport> out;
    for (const std::string& g : store_.groups()) {
        ParameterGroupReport r;
        r.name = g;
        r.trainable = store_.group_trainable(g);
        r.checksum = store_.group_checksum(g);
        r.parameter_count = store_.group_param_count(g);
        out.push_back(std::move(r));
    }
    return out;
}

void TrackerModel::save_checkpoint(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open checkpoint for writing: " + path);
    os.write(kMagic, sizeof(kMagic));
    write_u32(os, kVersion);
    write_string(os, model_config_to_json(cfg_).dump());
    write_u64(os, store_.size());
    for (int i = 0; i < static_cast<int>(store_.size()); ++i) {
        const Parameter& p = store_.at(i);
        write_string(os, p.name);
        write_string(os, p.group);
        const std::uint8_t buf = p.buffer ? 1 : 0;
        os.write(reinterpret_cast<const char*>(&buf), 1);
        write_u64(os, static_cast<std::uint64_t>(p.value.rows()));
        write_u64(os, static_cast<std::uint64_t>(p.value.cols()));
        os.write(reinterpret_cast<const char*>(p.value.data()),
                 static_cast<std::streamsize>(sizeof(double) * p.value.size()));
    }
    if (!os) throw DataError("checkpoint write failed: " + path);
}

std::unique_ptr<TrackerModel> TrackerModel::load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open checkpoint: " + path);
    char magic[5] = {};
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw DataError("not a tracker checkpoint: " + path);
    }
    const std::uint32_t version = read_u32(is);
    if (version != kVersion) {
        throw DataError("unsupported checkpoint version " + std::to_string(version));
    }
    ModelConfig cfg;
    try {
        cfg = model_config_from_json(nlohmann::json::parse(read_string(is)));
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("checkpoint config corrupt: ") + e.what());
    }
    auto model = std::make_unique<TrackerModel>(cfg);
    const std::uint64_t count = read_u64(is);
    if (count != model->store_.size()) {
        throw DataError("checkpoint parameter count mismatch: file has " + std::to_string(count) +
                        ", model expects " + std::to_string(model->store_.size()));
    }
    for (std::uint64_t i = 0; i < count; ++i) {
        const std::string name = read_string(is);
        const std::string group = read_string(is);
        std::uint8_t buf = 0;
        is.read(reinterpret_cast<char*>(&buf), 1);
        const std::uint64_t rows = read_u64(is);
        const std::uint64_t cols = read_u64(is);
        const int pi = model->store_.find(name);
        if (pi < 0) throw DataError("checkpoint has unknown parameter: " + name);
        Parameter& p = model->store_.at(pi);
        if (p.group != group) throw DataError("checkpoint group mismatch for " + name);
        if (p.buffer != (buf != 0)) throw DataError("checkpoint buffer flag mismatch for " + name);
        if (static_cast<std::uint64_t>(p.value.rows()) != rows ||
            static_cast<std::uint64_t>(p.value.cols()) != cols) {
            throw DataError("checkpoint shape mismatch for " + name);
        }
        is.read(reinterpret_cast<char*>(p.value.data()),
                static_cast<std::streamsize>(sizeof(double) * rows * cols));
        if (!is) throw DataError("checkpoint truncated");
    }
    return model;
}

}  // namespace emt
