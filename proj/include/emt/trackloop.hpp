#pragma once

#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "emt/config.hpp"
#include "emt/model.hpp"
#include "emt/objective.hpp"

namespace emt {

// Per-sequence tracking output: one box per frame in normalized image
// coordinates, plus the peak score of each frame's map (frame 0 carries the
// given ground truth with score 1).
struct TrackResult {
    std::vector<BoundingBox> boxes;
    std::vector<double> scores;
};

struct MetricsReport {
    double sr = 0.0;   // mean success-curve AUC over thresholds 0:0.05:1
    double pr = 0.0;   // center error <= 20 px
    double npr = 0.0;  // size-normalized center error <= 0.2
    std::vector<std::pair<std::string, double>> attr_pr;  // per-attribute PR

    std::string to_text() const;  // fixed keys: SR, PR, NPR, attr/<name>/PR
};

struct StepLog {
    int step = 0;
    LossBreakdown loss;
    double lr = 0.0;
};

struct TrainResult {
    std::vector<StepLog> logs;
    std::string checkpoint_path;
    double best_sr = -1.0;  // validation SR of the saved weights, -1 if never evaluated
};

// Success-curve AUC of one sequence: the fraction of frames whose IoU clears
// each threshold in {0, 0.05, ..., 1.0}, averaged. Zero-overlap frames never
// count as successes, so total failure scores exactly 0.
double sequence_success_auc(const std::vector<double>& ious);

// Aggregates per-sequence metrics (each sequence weighted equally). The
// attribute breakdown averages PR over the sequences carrying each label bit.
MetricsReport evaluate(const std::vector<TrackResult>& results,
                       const std::vector<FixtureSequence>& seqs, bool per_attribute);

// Template from frame 0 ground truth; each later frame is searched in a crop
// centered on the previous frame's prediction.
TrackResult track_sequence(TrackerModel& model, const FixtureLoader& fx, std::size_t seq);

// Tracks every sequence and scores against the fixture ground truth.
MetricsReport evaluate_model(TrackerModel& model, const FixtureLoader& fx, bool per_attribute);

// Seeded mini-batch training over fixture samples. Writes one log line per
// step to `log` (when given), saves the checkpoint (best-by-SR when
// train.eval_interval > 0, else the final weights), and aborts with
// NumericError on a non-finite loss.
TrainResult train(TrackerModel& model, const FixtureLoader& fx, const RunConfig& cfg,
                  const std::string& checkpoint_path, std::ostream* log);

// One line per frame: frame_idx,cx,cy,w,h,score
void write_results_file(const std::string& path, const TrackResult& result);

}  // namespace emt
