#pragma once

#include <string>
#include <vector>

#include "emt/eventrep.hpp"
#include "emt/model.hpp"

namespace emt {

struct VizOutput {
    std::vector<std::string> images;  // attention maps, score overlay, expert maps
    std::string gating_path;          // text sidecar, empty when no blocks are injected
};

// Renders one sample through the model and writes, into out_dir:
//   attention_layer<l>.png   one per injected layer (search-grid attention)
//   score_overlay.png        head score map blended over the RGB search crop
//   expert<k>_magnitude.png  per-expert feature magnitude on the search grid
//   gating.txt               gating weights per injected layer
// Output is a pure function of the model weights and the sample.
VizOutput render_sample(TrackerModel& model, const Sample& sample, const std::string& out_dir);

}  // namespace emt
