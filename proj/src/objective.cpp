#include "emt/objective.hpp"

#include <algorithm>
#include <cmath>

namespace emt {
namespace {

// The grid cell containing the box center (clamped to the map).
std::pair<int, int> peak_cell(const BoundingBox& gt, int grid) {
    const int row = std::clamp(static_cast<int>(std::floor(gt.cy * grid)), 0, grid - 1);
    const int col = std::clamp(static_cast<int>(std::floor(gt.cx * grid)), 0, grid - 1);
    return {row, col};
}

Var const1(Tape& tape, double v) { return tape.constant(Mat::Constant(1, 1, v)); }

void check_finite(const char* name, double v) {
    if (!std::isfinite(v)) {
        throw NumericError(std::string("non-finite loss component: ") + name);
    }
}

}  // namespace

Mat make_score_target(const BoundingBox& gt, int grid) {
    if (!gt.valid()) throw DataError("degenerate ground-truth box for score target");
    if (grid < 1) throw ConfigError("score-target grid must be >= 1");
    const auto [row0, col0] = peak_cell(gt, grid);
    const double sigma = std::max(0.5, 0.3 * std::sqrt(gt.w * gt.h) * grid);
    Mat target(grid * grid, 1);
    for (int r = 0; r < grid; ++r) {
        for (int c = 0; c < grid; ++c) {
            const double d2 = double(r - row0) * (r - row0) + double(c - col0) * (c - col0);
            target(r * grid + c, 0) = std::exp(-d2 / (2.0 * sigma * sigma));
        }
    }
    target(row0 * grid + col0, 0) = 1.0;  // exact peak regardless of rounding
    return target;
}

TrackingLossVars tracking_loss(Tape& tape, const HeadOutput& pred, const BoundingBox& gt) {
    if (!gt.valid()) throw DataError("degenerate ground-truth box in tracking loss");
    const int grid = pred.grid;
    TrackingLossVars out;
    out.cls = tape.focal_loss_logits(pred.score_logits, make_score_target(gt, grid));

    // Regression terms are read at the ground-truth cell, not at the current
    // argmax, so they stay informative while the score map is still untrained.
    const auto [row0, col0] = peak_cell(gt, grid);
    const int idx = row0 * grid + col0;
    Var off = tape.slice_rows(pred.offsets, idx, 1);
    Var size = tape.slice_rows(pred.sizes, idx, 1);
    Var cx = tape.scale(tape.add_const(tape.slice_cols(off, 0, 1), col0 + 0.5), 1.0 / grid);
    Var cy = tape.scale(tape.add_const(tape.slice_cols(off, 1, 1), row0 + 0.5), 1.0 / grid);
    Var w = tape.slice_cols(size, 0, 1);
    Var h = tape.slice_cols(size, 1, 1);

    Var px0 = tape.sub(cx, tape.scale(w, 0.5));
    Var px1 = tape.add(cx, tape.scale(w, 0.5));
    Var py0 = tape.sub(cy, tape.scale(h, 0.5));
    Var py1 = tape.add(cy, tape.scale(h, 0.5));
    Var gx0 = const1(tape, gt.x0());
    Var gx1 = const1(tape, gt.x1());
    Var gy0 = const1(tape, gt.y0());
    Var gy1 = const1(tape, gt.y1());

    Var iw = tape.relu(tape.sub(tape.min_(px1, gx1), tape.max_(px0, gx0)));
    Var ih = tape.relu(tape.sub(tape.min_(py1, gy1), tape.max_(py0, gy0)));
    Var inter = tape.mul(iw, ih);
    Var area_p = tape.mul(w, h);
    Var uni = tape.sub(tape.add_const(area_p, gt.w * gt.h), inter);
    Var iou = tape.div(inter, uni);
    Var ew = tape.sub(tape.max_(px1, gx1), tape.min_(px0, gx0));
    Var eh = tape.sub(tape.max_(py1, gy1), tape.min_(py0, gy0));
    Var enclose = tape.mul(ew, eh);
    Var giou = tape.sub(iou, tape.div(tape.sub(enclose, uni), enclose));
    out.iou = tape.add_const(tape.scale(giou, -1.0), 1.0);

    Var diff = tape.add(tape.add(tape.abs_(tape.sub(cx, const1(tape, gt.cx))),
                                 tape.abs_(tape.sub(cy, const1(tape, gt.cy)))),
                        tape.add(tape.abs_(tape.sub(w, const1(tape, gt.w))),
                                 tape.abs_(tape.sub(h, const1(tape, gt.h)))));
    out.l1 = tape.scale(diff, 0.25);
    return out;
}

Var attribute_loss(Tape& tape, const std::vector<std::pair<int, Var>>& scores,
                   const AttributeLabel& label) {
    const int k = static_cast<int>(label.g.size());
    Mat g(1, k);
    for (int i = 0; i < k; ++i) g(0, i) = static_cast<double>(label.g[i]);
    Var total;
    for (const auto& [layer, w] : scores) {
        (void)layer;
        if (w.cols() != k) {
            throw ConfigError("attribute score length " + std::to_string(w.cols()) +
                              " does not match label length " + std::to_string(k));
        }
        Var term = tape.sum_all(tape.abs_(tape.sub(w, tape.constant(g))));
        total = total.valid() ? tape.add(total, term) : term;
    }
    if (!total.valid()) total = const1(tape, 0.0);
    return total;
}

TotalLoss total_loss(Tape& tape, const TrackingLossVars& tracking, Var nce, Var attr,
                     const LossWeights& w) {
    if (w.lambda_iou < 0 || w.lambda_l1 < 0 || w.alpha < 0 || w.beta < 0) {
        throw ConfigError("loss weights must be non-negative");
    }
    TotalLoss out;
    out.parts.cls = tape.value(tracking.cls)(0, 0);
    out.parts.iou = tape.value(tracking.iou)(0, 0);
    out.parts.l1 = tape.value(tracking.l1)(0, 0);
    check_finite("cls", out.parts.cls);
    check_finite("iou", out.parts.iou);
    check_finite("l1", out.parts.l1);
    Var total = tape.add(tracking.cls, tape.add(tape.scale(tracking.iou, w.lambda_iou),
                                                tape.scale(tracking.l1, w.lambda_l1)));
    if (nce.valid()) {
        out.parts.nce = tape.value(nce)(0, 0);
        check_finite("nce", out.parts.nce);
        if (w.alpha != 0.0) total = tape.add(total, tape.scale(nce, w.alpha));
    }
    if (attr.valid()) {
        out.parts.attr = tape.value(attr)(0, 0);
        check_finite("attr", out.parts.attr);
        if (w.beta != 0.0) total = tape.add(total, tape.scale(attr, w.beta));
    }
    out.parts.total = tape.value(total)(0, 0);
    check_finite("total", out.parts.total);
    out.total = total;
    return out;
}

AdamW::AdamW(ParameterStore& store, double lr, double weight_decay)
    : store_(&store), lr_(lr), weight_decay_(weight_decay) {
    if (lr <= 0) throw ConfigError("learning rate must be positive");
    if (weight_decay < 0) throw ConfigError("weight decay must be >= 0");
    for (int i = 0; i < static_cast<int>(store.size()); ++i) {
        const Parameter& p = store.at(i);
        if (p.buffer || !store.param_trainable(i)) continue;
        params_.push_back(static_cast<std::size_t>(i));
        m_.push_back(Mat::Zero(p.value.rows(), p.value.cols()));
        v_.push_back(Mat::Zero(p.value.rows(), p.value.cols()));
    }
    if (params_.empty()) throw ConfigError("optimizer has no trainable parameters");
}

std::size_t AdamW::scalar_count() const {
    std::size_t n = 0;
    for (std::size_t i : params_) n += static_cast<std::size_t>(store_->at(int(i)).value.size());
    return n;
}

void AdamW::step() {
    constexpr double kBeta1 = 0.9;
    constexpr double kBeta2 = 0.999;
    constexpr double kEps = 1e-8;
    ++t_;
    const double bc1 = 1.0 - std::pow(kBeta1, t_);
    const double bc2 = 1.0 - std::pow(kBeta2, t_);
    for (std::size_t s = 0; s < params_.size(); ++s) {
        Parameter& p = store_->at(static_cast<int>(params_[s]));
        const Mat& g = p.grad;
        m_[s] = kBeta1 * m_[s] + (1.0 - kBeta1) * g;
        v_[s] = kBeta2 * v_[s] + (1.0 - kBeta2) * g.cwiseProduct(g);
        const Mat update =
            ((m_[s] / bc1).array() / ((v_[s] / bc2).array().sqrt() + kEps)).matrix();
        p.value -= lr_ * (update + weight_decay_ * p.value);
    }
}

double lr_at_epoch(double base_lr, int epoch_1based, int total_epochs, double frac) {
    if (total_epochs < 1) throw ConfigError("total epochs must be >= 1");
    const long boundary = std::lround(frac * total_epochs);
    return epoch_1based > boundary ? 0.1 * base_lr : base_lr;
}

double lr_at_step(double base_lr, int step, int total_steps, double frac) {
    if (total_steps < 1) throw ConfigError("total steps must be >= 1");
    const long boundary = std::lround(frac * total_steps);
    return step >= boundary ? 0.1 * base_lr : base_lr;
}

}  // namespace emt
