#include "emt/viz.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "emt/common.hpp"
#include "emt/image.hpp"
#include "emt/png_io.hpp"

namespace emt {

namespace {

// Peak-normalized grayscale rendering of a square cell map, upscaled to the
// search resolution so the files are inspectable.
Image heat_image(const Mat& cells, int out_size) {
    const double peak = cells.maxCoeff();
    const int g = static_cast<int>(cells.rows());
    Image small(g, g, 3);
    for (int y = 0; y < g; ++y) {
        for (int x = 0; x < g; ++x) {
            const double v = peak > 0.0 ? std::clamp(cells(y, x) / peak, 0.0, 1.0) : 0.0;
            small.at(y, x, 0) = v;
            small.at(y, x, 1) = v;
            small.at(y, x, 2) = v;
        }
    }
    return crop_resize(small, g / 2.0, g / 2.0, static_cast<double>(g), out_size);
}

Mat rows_to_grid(const Mat& rows, int grid) {
    Mat cells(grid, grid);
    for (int y = 0; y < grid; ++y) {
        for (int x = 0; x < grid; ++x) cells(y, x) = rows(y * grid + x, 0);
    }
    return cells;
}

}  // namespace

VizOutput render_sample(TrackerModel& model, const Sample& sample, const std::string& out_dir) {
    std::filesystem::create_directories(out_dir);
    const ModelConfig& cfg = model.config();
    const SegmentLayout& layout = model.backbone().layout();
    const int grid = cfg.grid();
    const int out_size = sample.rgb_search.height;

    Tape tape;
    model.backbone().clear_recorded_attention();
    model.backbone().set_record_attention(true);
    const ForwardResult res = model.forward(tape, sample, false);
    model.backbone().set_record_attention(false);
    const std::vector<Mat> attention = model.backbone().recorded_attention();
    model.backbone().clear_recorded_attention();

    VizOutput out;
    char name[64];

    // Template-query attention onto the RGB search grid, one map per injected
    // layer (none for a plain backbone).
    const bool injected = model.num_emoe_blocks() > 0;
    const std::vector<int> layers = injected ? cfg.injected_layers() : std::vector<int>{};
    for (int l : layers) {
        const Mat& a = attention.at(static_cast<std::size_t>(l - 1));
        Mat cells = Mat::Zero(grid, grid);
        for (int j = 0; j < layout.n_x; ++j) {
            double mass = 0.0;
            for (int q = 0; q < layout.n_z; ++q) {
                mass += a(layout.rgb_template() + q, layout.rgb_search() + j);
            }
            cells(j / grid, j % grid) = mass / layout.n_z;
        }
        std::snprintf(name, sizeof(name), "attention_layer%02d.png", l);
        const std::string path = out_dir + "/" + name;
        write_png(path, heat_image(cells, out_size));
        out.images.push_back(path);
    }

    // Head score map blended over the RGB search crop (red where confident).
    {
        const Image heat = heat_image(res.head.score_map, out_size);
        Image overlay = sample.rgb_search;
        for (int y = 0; y < overlay.height; ++y) {
            for (int x = 0; x < overlay.width; ++x) {
                const double s = heat.at(y, x, 0);
                overlay.at(y, x, 0) = overlay.at(y, x, 0) * (1.0 - s) + s;
                overlay.at(y, x, 1) *= 1.0 - s;
                overlay.at(y, x, 2) *= 1.0 - s;
            }
        }
        const std::string path = out_dir + "/score_overlay.png";
        write_png(path, overlay);
        out.images.push_back(path);
    }

    // Per-expert feature magnitude at the first injection site: re-embed and
    // run the shared trunk up to the layer that block consumes.
    if (injected) {
        Tape probe;
        Var x = model.backbone().embed_sample(probe, sample.rgb_template, sample.event_template,
                                              sample.rgb_search, sample.event_search);
        const int first = layers.front();
        for (int l = 1; l < first; ++l) x = model.backbone().encoder_layer(probe, x, l);
        for (int k = 0; k < cfg.num_experts; ++k) {
            const Var feat = model.emoe_block(0).expert_forward(probe, x, k);
            const Mat& f = feat.value();
            Mat cells(grid, grid);
            for (int j = 0; j < layout.n_x; ++j) {
                cells(j / grid, j % grid) = f.row(layout.rgb_search() + j).norm();
            }
            std::snprintf(name, sizeof(name), "expert%02d_magnitude.png", k);
            const std::string path = out_dir + "/" + name;
            write_png(path, heat_image(cells, out_size));
            out.images.push_back(path);
        }
    }

    // Gating sidecar: the exact per-layer scores of this forward pass.
    if (injected) {
        out.gating_path = out_dir + "/gating.txt";
        std::ofstream gating(out.gating_path);
        if (!gating) throw DataError("cannot write " + out.gating_path);
        for (const auto& [layer, scores] : model.collect_scores()) {
            gating << "layer=" << layer;
            for (int k = 0; k < scores.cols(); ++k) {
                char buf[40];
                std::snprintf(buf, sizeof(buf), " %.17g", scores(0, k));
                gating << buf;
            }
            gating << "\n";
        }
    }
    return out;
}

}  // namespace emt
