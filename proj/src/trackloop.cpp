#include "emt/trackloop.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>

#include "emt/common.hpp"
#include "emt/crm.hpp"
#include "emt/geometry.hpp"
#include "emt/image.hpp"

namespace emt {

double sequence_success_auc(const std::vector<double>& ious) {
    if (ious.empty()) throw DataError("success curve needs at least one frame");
    const int n_thresholds = 21;
    double auc = 0.0;
    for (int i = 0; i < n_thresholds; ++i) {
        // i/20 is correctly rounded, so e.g. an IoU written as 0.6 compares
        // equal to the 0.6 threshold instead of falling one ulp short.
        const double t = static_cast<double>(i) / 20.0;
        int hits = 0;
        for (double iou : ious) {
            if (iou > 0.0 && iou >= t) ++hits;
        }
        auc += static_cast<double>(hits) / static_cast<double>(ious.size());
    }
    return auc / n_thresholds;
}

namespace {

struct SequenceMetrics {
    double sr = 0.0, pr = 0.0, npr = 0.0;
};

SequenceMetrics score_sequence(const TrackResult& result, const FixtureSequence& seq) {
    const std::size_t n = seq.boxes.size();
    if (result.boxes.size() != n) {
        throw DataError("result for sequence '" + seq.name + "' has " +
                        std::to_string(result.boxes.size()) + " frames, ground truth has " +
                        std::to_string(n));
    }
    if (n == 0) throw DataError("sequence '" + seq.name + "' has no annotated frames");

    std::vector<double> ious(n);
    int pr_hits = 0;
    int npr_hits = 0;
    for (std::size_t f = 0; f < n; ++f) {
        const BoundingBox& pred = result.boxes[f];
        const BoundingBox& gt = seq.boxes[f];
        ious[f] = iou(pred, gt);
        if (center_error_px(pred, gt, seq.image_width, seq.image_height) <= 20.0) ++pr_hits;
        if (center_error_norm(pred, gt) <= 0.2) ++npr_hits;
    }
    SequenceMetrics m;
    m.sr = sequence_success_auc(ious);
    m.pr = static_cast<double>(pr_hits) / static_cast<double>(n);
    m.npr = static_cast<double>(npr_hits) / static_cast<double>(n);
    return m;
}

std::string format_metric(const std::string& key, double value) {
    char buf[128];
    std::snprintf(buf, sizeof(buf), "%s %.6f\n", key.c_str(), value);
    return buf;
}

}  // namespace

MetricsReport evaluate(const std::vector<TrackResult>& results,
                       const std::vector<FixtureSequence>& seqs, bool per_attribute) {
    if (results.size() != seqs.size()) {
        throw DataError("got " + std::to_string(results.size()) + " results for " +
                        std::to_string(seqs.size()) + " sequences");
    }
    if (seqs.empty()) throw DataError("no sequences to evaluate");

    std::vector<SequenceMetrics> per_seq(seqs.size());
    MetricsReport report;
    for (std::size_t i = 0; i < seqs.size(); ++i) {
        per_seq[i] = score_sequence(results[i], seqs[i]);
        report.sr += per_seq[i].sr;
        report.pr += per_seq[i].pr;
        report.npr += per_seq[i].npr;
    }
    report.sr /= static_cast<double>(seqs.size());
    report.pr /= static_cast<double>(seqs.size());
    report.npr /= static_cast<double>(seqs.size());

    if (per_attribute) {
        std::size_t n_bits = 0;
        for (const FixtureSequence& s : seqs) n_bits = std::max(n_bits, s.attr.g.size());
        n_bits = std::min(n_bits, kAttributeNames.size());
        for (std::size_t a = 0; a < n_bits; ++a) {
            double sum = 0.0;
            int count = 0;
            for (std::size_t i = 0; i < seqs.size(); ++i) {
                if (a < seqs[i].attr.g.size() && seqs[i].attr.g[a] != 0) {
                    sum += per_seq[i].pr;
                    ++count;
                }
            }
            report.attr_pr.emplace_back(kAttributeNames[a], count > 0 ? sum / count : 0.0);
        }
    }
    return report;
}

std::string MetricsReport::to_text() const {
    std::string out;
    out += format_metric("SR", sr);
    out += format_metric("PR", pr);
    out += format_metric("NPR", npr);
    for (const auto& [name, value] : attr_pr) out += format_metric("attr/" + name + "/PR", value);
    return out;
}

TrackResult track_sequence(TrackerModel& model, const FixtureLoader& fx, std::size_t seq) {
    const FixtureSequence& s = fx.sequence(seq);
    if (s.num_frames < 2) {
        throw DataError("sequence '" + s.name + "' has " + std::to_string(s.num_frames) +
                        " frames; tracking needs at least 2");
    }

    // The template crop comes from the annotated first frame and stays fixed.
    const Sample first = fx.load_sample(seq, 0, 0, 0);

    TrackResult out;
    out.boxes.reserve(static_cast<std::size_t>(s.num_frames));
    out.scores.reserve(static_cast<std::size_t>(s.num_frames));
    BoundingBox prev = s.boxes[0].clamped();
    out.boxes.push_back(prev);
    out.scores.push_back(1.0);

    const double W = static_cast<double>(s.image_width);
    const double H = static_cast<double>(s.image_height);
    const int grid = fx.search_size() / model.config().patch;
    for (int f = 1; f < s.num_frames; ++f) {
        const Image rgb = fx.load_rgb(seq, f);
        const EventFrame ev = fx.load_events(seq, f);
        CropGeometry g = fx.search_geometry(prev, s.image_height, s.image_width, 0);
        // A window centered exactly on the previous box parks the expected
        // target center on the corner where four score cells meet — the
        // decode lattice's worst point, reachable only with saturated cell
        // offsets. Shifting the window by half a cell aligns the expected
        // center with a cell center instead.
        g.cx += g.side / (2.0 * grid);
        g.cy += g.side / (2.0 * grid);
        const Image rgb_s = crop_resize(rgb, g.cx, g.cy, g.side, fx.search_size());
        const EventFrame ev_s = crop_resize(ev, g.cx, g.cy, g.side, fx.search_size());

        Tape tape;
        const ForwardResult res =
            model.forward_raw(tape, first.rgb_template, first.event_template, rgb_s, ev_s, false);

        // Map the crop-space box back to normalized image coordinates.
        const BoundingBox& b = res.head.box;
        BoundingBox mapped;
        mapped.cx = (g.cx - g.side / 2.0 + b.cx * g.side) / W;
        mapped.cy = (g.cy - g.side / 2.0 + b.cy * g.side) / H;
        mapped.w = b.w * g.side / W;
        mapped.h = b.h * g.side / H;
        prev = mapped.clamped();
        out.boxes.push_back(prev);
        out.scores.push_back(res.head.peak_score);
    }
    return out;
}

MetricsReport evaluate_model(TrackerModel& model, const FixtureLoader& fx, bool per_attribute) {
    if (fx.num_sequences() == 0) throw DataError("fixture has no sequences");
    std::vector<TrackResult> results;
    std::vector<FixtureSequence> seqs;
    results.reserve(fx.num_sequences());
    seqs.reserve(fx.num_sequences());
    for (std::size_t i = 0; i < fx.num_sequences(); ++i) {
        results.push_back(track_sequence(model, fx, i));
        seqs.push_back(fx.sequence(i));
    }
    return evaluate(results, seqs, per_attribute);
}

namespace {

std::string format_step_log(const StepLog& log) {
    char buf[256];
    std::snprintf(buf, sizeof(buf),
                  "step=%d loss/cls=%.6f loss/iou=%.6f loss/l1=%.6f loss/nce=%.6f "
                  "loss/attr=%.6f loss/total=%.6f lr=%.8f",
                  log.step, log.loss.cls, log.loss.iou, log.loss.l1, log.loss.nce, log.loss.attr,
                  log.loss.total, log.lr);
    return buf;
}

}  // namespace

TrainResult train(TrackerModel& model, const FixtureLoader& fx, const RunConfig& cfg,
                  const std::string& checkpoint_path, std::ostream* log) {
    if (fx.num_sequences() == 0) throw DataError("fixture has no sequences");
    const int steps = cfg.train.steps;
    const int batch = cfg.train.batch;
    AdamW opt(model.store(), cfg.optim.lr, cfg.optim.weight_decay);

    Rng sampler(derive_seed(cfg.seed, "train.sampling"));
    const int grid = model.config().grid();

    TrainResult result;
    result.checkpoint_path = checkpoint_path;
    result.logs.reserve(static_cast<std::size_t>(steps));

    for (int step = 0; step < steps; ++step) {
        model.store().zero_grads();
        LossBreakdown mean{};
        for (int b = 0; b < batch; ++b) {
            const auto seq =
                static_cast<std::size_t>(sampler.uniform_int(0, fx.num_sequences() - 1));
            const FixtureSequence& s = fx.sequence(seq);
            const int frame = static_cast<int>(sampler.uniform_int(0, s.num_frames - 1));
            // Nonzero seed turns crop jitter on; keep it distinct per draw.
            const std::uint64_t jitter =
                derive_seed(cfg.seed, static_cast<std::uint64_t>(step) * batch + b, 0x7ea1) | 1;
            const Sample sample = fx.load_sample(seq, frame, 0, jitter);

            Tape tape;
            const ForwardResult res = model.forward(tape, sample, true);
            const TrackingLossVars tl = tracking_loss(tape, res.head, sample.gt_box);
            Var nce;
            if (res.crm_sim.valid()) {
                const PairPartition part = partition_pairs(sample.gt_box, grid);
                nce = model.crm()->loss(tape, res.crm_sim, part);
            }
            Var attr;
            if (!res.attr_scores.empty()) attr = attribute_loss(tape, res.attr_scores, sample.attr);

            const TotalLoss loss = total_loss(tape, tl, nce, attr, cfg.loss);
            tape.backward(tape.scale(loss.total, 1.0 / batch));

            mean.cls += loss.parts.cls / batch;
            mean.iou += loss.parts.iou / batch;
            mean.l1 += loss.parts.l1 / batch;
            mean.nce += loss.parts.nce / batch;
            mean.attr += loss.parts.attr / batch;
            mean.total += loss.parts.total / batch;
        }

        const double lr = lr_at_step(cfg.optim.lr, step, steps, cfg.optim.decay_epoch_frac);
        opt.set_lr(lr);
        opt.step();

        StepLog entry;
        entry.step = step + 1;
        entry.loss = mean;
        entry.lr = lr;
        result.logs.push_back(entry);
        if (log) *log << format_step_log(entry) << "\n";

        if (cfg.train.eval_interval > 0 &&
            ((step + 1) % cfg.train.eval_interval == 0 || step + 1 == steps)) {
            const MetricsReport report = evaluate_model(model, fx, false);
            if (log) {
                char buf[128];
                std::snprintf(buf, sizeof(buf), "eval step=%d SR=%.6f PR=%.6f NPR=%.6f", step + 1,
                              report.sr, report.pr, report.npr);
                *log << buf << "\n";
            }
            if (report.sr > result.best_sr) {
                result.best_sr = report.sr;
                if (!checkpoint_path.empty()) model.save_checkpoint(checkpoint_path);
            }
        }
    }

    // Without periodic evaluation the final weights are the checkpoint.
    if (cfg.train.eval_interval <= 0 && !checkpoint_path.empty()) {
        model.save_checkpoint(checkpoint_path);
    }
    return result;
}

void write_results_file(const std::string& path, const TrackResult& result) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write results file: " + path);
    for (std::size_t f = 0; f < result.boxes.size(); ++f) {
        const BoundingBox& b = result.boxes[f];
        char buf[192];
        std::snprintf(buf, sizeof(buf), "%zu,%.9f,%.9f,%.9f,%.9f,%.9f\n", f, b.cx, b.cy, b.w, b.h,
                      result.scores[f]);
        out << buf;
    }
    if (!out.good()) throw DataError("failed writing results file: " + path);
}

}  // namespace emt
