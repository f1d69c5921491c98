#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "emt/geometry.hpp"
#include "emt/image.hpp"

namespace emt {

// One brightness-change event from the sensor: pixel, microsecond timestamp,
// polarity +1 (brighter) or -1 (darker).
struct RawEvent {
    int x = 0;
    int y = 0;
    std::int64_t t = 0;
    int p = 1;
};

// Stacked events as a 2-channel image: channel 0 counts positive events,
// channel 1 negative, both divided by the frame-wide max count.
using EventFrame = Image;

// Per-sequence environmental attribute bits, fixed order:
// [illumination variation, motion blur, scale variance, occlusion].
struct AttributeLabel {
    std::vector<int> g;
};

extern const std::vector<std::string> kAttributeNames;  // the 4 canonical names

// One training/eval item: aligned RGB + event crops for template and search,
// the ground-truth box in search-crop coordinates, and the sequence label.
struct Sample {
    Image rgb_template, rgb_search;
    EventFrame event_template, event_search;
    BoundingBox gt_box;  // in search-crop coordinates
    AttributeLabel attr;
};

// Counts events inside [t_begin, t_end) into a (height, width) 2-channel grid
// and normalizes by the max count; an empty window yields an all-zero frame.
EventFrame stack_events(const std::vector<RawEvent>& events, std::int64_t t_begin,
                        std::int64_t t_end, int height, int width);

std::vector<RawEvent> read_event_csv(const std::string& path);
void write_event_csv(const std::string& path, const std::vector<RawEvent>& events);

// ---------------------------------------------------------------------------
// Synthetic fixture

struct FixtureConfig {
    std::uint64_t seed = 0;
    int num_sequences = 8;
    int frames_per_seq = 32;
    int image_size = 192;
    bool force = false;  // overwrite an existing manifest
};

// Renders moving-disc sequences with per-attribute degradations, derives event
// streams from log-intensity differences between consecutive frames, and
// writes the on-disk layout:
//   <out>/<seq>/rgb/%06d.png
//   <out>/<seq>/events/%06d.csv     (x,y,t,p rows)
//   <out>/<seq>/groundtruth.txt     (cx,cy,w,h per frame, normalized)
//   <out>/<seq>/attributes.txt      (4 comma-separated 0/1 digits)
//   <out>/manifest.txt              (one sequence name per line)
// Returns the manifest path. Refuses to overwrite unless cfg.force.
std::string generate_fixture(const FixtureConfig& cfg, const std::string& out_dir);

struct FixtureSequence {
    std::string name;
    std::string dir;
    int num_frames = 0;
    std::vector<BoundingBox> boxes;  // normalized to the full image
    AttributeLabel attr;             // truncated to the loader's K
    int image_height = 0;
    int image_width = 0;
};

struct CropGeometry {
    double cx = 0.0, cy = 0.0, side = 0.0;  // source-pixel crop square
};

// Read-only access to a generated fixture. All state is loaded up front;
// sample loading touches only immutable members plus the filesystem, so
// concurrent reads are safe.
class FixtureLoader {
public:
    // num_attributes: how many leading label digits the model consumes (K).
    FixtureLoader(const std::string& root, int num_attributes, int template_size = 64,
                  int search_size = 128);

    std::size_t num_sequences() const { return seqs_.size(); }
    const FixtureSequence& sequence(std::size_t i) const { return seqs_.at(i); }
    int template_size() const { return template_size_; }
    int search_size() const { return search_size_; }

    Image load_rgb(std::size_t seq, int frame) const;
    EventFrame load_events(std::size_t seq, int frame) const;

    // Template crop centered on the template-frame box, search crop centered
    // on the current-frame box; jitter_seed shifts the search center
    // deterministically (0 disables jitter). gt_box comes back in search-crop
    // coordinates and always lies inside the unit square.
    Sample load_sample(std::size_t seq, int frame, int template_frame,
                       std::uint64_t jitter_seed = 0) const;

    // The search-crop geometry used by load_sample for given jitter, exposed
    // so sequence-level tracking can re-center crops on predictions.
    CropGeometry search_geometry(const BoundingBox& box_px_space, int image_h, int image_w,
                                 std::uint64_t jitter_seed) const;

private:
    std::vector<FixtureSequence> seqs_;
    int num_attributes_;
    int template_size_;
    int search_size_;
};

// Square crop side for a box given in source pixels: geometric-mean box side
// scaled by `factor` (2 for templates, 4 for search regions).
double crop_side(const BoundingBox& box, int image_h, int image_w, double factor);

}  // namespace emt
