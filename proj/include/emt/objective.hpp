#pragma once

#include <string>
#include <utility>
#include <vector>

#include "emt/config.hpp"
#include "emt/geometry.hpp"
#include "emt/model.hpp"

namespace emt {

// Scalar values of each term of the composite objective, plus the weighted
// total; total = cls + lambda_iou*iou + lambda_l1*l1 + alpha*nce + beta*attr.
struct LossBreakdown {
    double cls = 0.0;
    double iou = 0.0;
    double l1 = 0.0;
    double nce = 0.0;
    double attr = 0.0;
    double total = 0.0;
};

struct TrackingLossVars {
    Var cls;  // focal loss on the score map
    Var iou;  // 1 - generalized IoU of the decoded box at the target cell
    Var l1;   // mean absolute difference over the 4 box parameters
};

struct TotalLoss {
    Var total;
    LossBreakdown parts;
};

// Ground-truth score map (grid*grid, 1): a Gaussian bump centered on the
// target cell with exact 1.0 at the peak; sigma grows with the box footprint.
Mat make_score_target(const BoundingBox& gt, int grid);

// Classification + regression terms. Regression is evaluated at the
// ground-truth peak cell so the box branches receive meaningful gradients
// before the score map has converged.
TrackingLossVars tracking_loss(Tape& tape, const HeadOutput& pred, const BoundingBox& gt);

// Sum over injected layers and experts of |w - g|.
Var attribute_loss(Tape& tape, const std::vector<std::pair<int, Var>>& scores,
                   const AttributeLabel& label);

// Weighted combination. Invalid component Vars (module disabled) contribute
// nothing; any non-finite component raises NumericError naming the offender.
TotalLoss total_loss(Tape& tape, const TrackingLossVars& tracking, Var nce, Var attr,
                     const LossWeights& w);

// Decoupled-weight-decay Adam over the trainable, non-buffer parameters.
class AdamW {
public:
    AdamW(ParameterStore& store, double lr, double weight_decay);

    void set_lr(double lr) { lr_ = lr; }
    double lr() const { return lr_; }
    std::size_t parameter_count() const { return params_.size(); }
    std::size_t scalar_count() const;

    // Applies one update from the accumulated Parameter::grad values.
    void step();

private:
    ParameterStore* store_;
    double lr_;
    double weight_decay_;
    int t_ = 0;
    std::vector<std::size_t> params_;
    std::vector<Mat> m_;
    std::vector<Mat> v_;
};

// Step-decay schedule: the rate drops 10x once the 1-based epoch exceeds
// round(frac * total_epochs).
double lr_at_epoch(double base_lr, int epoch_1based, int total_epochs, double frac);
// Same schedule expressed over 0-based optimization steps.
double lr_at_step(double base_lr, int step, int total_steps, double frac);

}  // namespace emt
