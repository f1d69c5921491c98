#include "emt/eventrep.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "emt/png_io.hpp"

namespace fs = std::filesystem;

namespace emt {

const std::vector<std::string> kAttributeNames = {"illumination", "blur", "scale", "occlusion"};

namespace {

constexpr std::int64_t kFramePeriodUs = 33333;  // ~30 fps
constexpr double kEventThreshold = 0.1;         // log-intensity step per event
constexpr int kMaxEventsPerPixel = 8;

std::string frame_name(int idx, const char* ext) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%06d.%s", idx, ext);
    return buf;
}

}  // namespace

EventFrame stack_events(const std::vector<RawEvent>& events, std::int64_t t_begin,
                        std::int64_t t_end, int height, int width) {
    if (height <= 0 || width <= 0) throw DataError("stack_events: non-positive resolution");
    EventFrame frame(height, width, 2);
    std::int64_t prev_t = std::numeric_limits<std::int64_t>::min();
    double max_count = 0.0;
    for (const RawEvent& e : events) {
        if (e.t < prev_t) throw DataError("stack_events: event stream is not sorted by time");
        prev_t = e.t;
        if (e.x < 0 || e.x >= width || e.y < 0 || e.y >= height)
            throw DataError("stack_events: event coordinates outside resolution");
        if (e.p != 1 && e.p != -1) throw DataError("stack_events: polarity must be +1 or -1");
        if (e.t < t_begin || e.t >= t_end) continue;
        double& cell = frame.at(e.y, e.x, e.p == 1 ? 0 : 1);
        cell += 1.0;
        max_count = std::max(max_count, cell);
    }
    if (max_count > 0.0)
        for (double& v : frame.data) v /= max_count;
    return frame;
}

std::vector<RawEvent> read_event_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw DataError("read_event_csv: cannot open " + path);
    std::vector<RawEvent> events;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        RawEvent e;
        char comma;
        std::istringstream ss(line);
        if (!(ss >> e.x >> comma >> e.y >> comma >> e.t >> comma >> e.p))
            throw DataError("read_event_csv: malformed line in " + path + ": " + line);
        events.push_back(e);
    }
    return events;
}

void write_event_csv(const std::string& path, const std::vector<RawEvent>& events) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw DataError("write_event_csv: cannot open " + path);
    for (const RawEvent& e : events)
        f << e.x << ',' << e.y << ',' << e.t << ',' << e.p << '\n';
    if (!f) throw DataError("write_event_csv: short write to " + path);
}

// ---------------------------------------------------------------------------
// Fixture generation

namespace {

// Everything needed to render any frame index of one sequence, including the
// virtual frame -1 used to give frame 0 an event window.
struct SequenceScript {
    std::vector<int> attr;  // 4 bits
    std::array<double, 3> bg_top, bg_bottom, target_color, occluder_color;
    struct Distractor {
        int x0, y0, x1, y1;
        std::array<double, 3> color;
    };
    std::vector<Distractor> distractors;
    double cx0, cy0, ax, ay, fx, fy, px, py;  // sinusoidal trajectory
    double radius0;
    int frames;
    int size;

    double pos_x(int t) const {
        return cx0 + ax * std::sin(2.0 * M_PI * fx * t / frames + px);
    }
    double pos_y(int t) const {
        return cy0 + ay * std::sin(2.0 * M_PI * fy * t / frames + py);
    }
    double radius(int t) const {
        if (!attr[2]) return radius0;
        const double u = std::clamp(static_cast<double>(t) / (frames - 1), 0.0, 1.0);
        return radius0 * (1.0 + 0.6 * u);  // monotone ramp to 1.6x
    }
    bool occluded(int t) const {
        return attr[3] && t >= static_cast<int>(0.45 * frames) &&
               t < static_cast<int>(0.7 * frames);
    }
    double gain(int t) const {
        if (!attr[0]) return 1.0;
        const double u = std::clamp((t + 1.0) / frames, 0.0, 1.0);
        return 0.45 + 0.9 * u;  // monotone brightness ramp
    }
};

SequenceScript make_script(Rng& rng, int seq_index, int frames, int size) {
    SequenceScript s;
    s.frames = frames;
    s.size = size;
    s.attr.assign(4, 0);
    // Round-robin guarantees every attribute is exercised; a second random bit
    // mixes combinations.
    s.attr[seq_index % 4] = 1;
    if (rng.uniform() < 0.5) s.attr[static_cast<int>(rng.uniform_int(0, 3))] = 1;

    auto muted = [&rng] {
        return std::array<double, 3>{rng.uniform(0.15, 0.45), rng.uniform(0.15, 0.45),
                                     rng.uniform(0.15, 0.45)};
    };
    s.bg_top = muted();
    s.bg_bottom = muted();
    s.target_color = {rng.uniform(0.75, 1.0), rng.uniform(0.75, 1.0), rng.uniform(0.75, 1.0)};
    s.occluder_color = {0.1, 0.1, 0.12};
    const int n_distract = 3;
    for (int i = 0; i < n_distract; ++i) {
        const int w = static_cast<int>(rng.uniform_int(10, 28));
        const int h = static_cast<int>(rng.uniform_int(10, 28));
        const int x = static_cast<int>(rng.uniform_int(0, size - w - 1));
        const int y = static_cast<int>(rng.uniform_int(0, size - h - 1));
        s.distractors.push_back({x, y, x + w, y + h, muted()});
    }
    s.cx0 = rng.uniform(0.38, 0.62) * size;
    s.cy0 = rng.uniform(0.38, 0.62) * size;
    s.ax = rng.uniform(0.06, 0.11) * size;
    s.ay = rng.uniform(0.06, 0.11) * size;
    s.fx = rng.uniform(1.0, 2.0);
    s.fy = rng.uniform(1.0, 2.0);
    s.px = rng.uniform(0.0, 2.0 * M_PI);
    s.py = rng.uniform(0.0, 2.0 * M_PI);
    s.radius0 = rng.uniform(14.0, 20.0) * size / 192.0;
    return s;
}

Image render_frame(const SequenceScript& s, int t) {
    Image img(s.size, s.size, 3);
    for (int y = 0; y < s.size; ++y) {
        const double u = static_cast<double>(y) / (s.size - 1);
        for (int x = 0; x < s.size; ++x)
            for (int c = 0; c < 3; ++c)
                img.at(y, x, c) = s.bg_top[c] * (1.0 - u) + s.bg_bottom[c] * u;
    }
    for (const auto& d : s.distractors) draw_rect(img, d.x0, d.y0, d.x1, d.y1, d.color);

    const double cx = s.pos_x(t), cy = s.pos_y(t), r = s.radius(t);
    draw_disc(img, cx, cy, r, s.target_color);
    if (s.occluded(t)) {
        // Covers just over 40% of the target's bounding box (left portion).
        draw_rect(img, static_cast<int>(cx - r), static_cast<int>(cy - r),
                  static_cast<int>(cx - 0.15 * r), static_cast<int>(cy + r), s.occluder_color);
    }
    if (s.attr[1]) {
        // Blur along the instantaneous motion direction.
        const double vx = s.pos_x(t + 1) - s.pos_x(t > 0 ? t - 1 : t);
        const double vy = s.pos_y(t + 1) - s.pos_y(t > 0 ? t - 1 : t);
        const int dx = vx > 0.3 ? 1 : (vx < -0.3 ? -1 : 0);
        const int dy = vy > 0.3 ? 1 : (vy < -0.3 ? -1 : 0);
        img = directional_blur(img, 2, dx == 0 && dy == 0 ? 1 : dx, dy);
    }
    apply_gain(img, s.gain(t));
    return img;
}

std::vector<RawEvent> events_between(const Image& prev_rgb, const Image& cur_rgb,
                                     std::int64_t window_begin) {
    const Image prev = to_gray(prev_rgb);
    const Image cur = to_gray(cur_rgb);
    std::vector<RawEvent> events;
    for (int y = 0; y < cur.height; ++y) {
        for (int x = 0; x < cur.width; ++x) {
            const double dl = std::log(0.05 + 0.95 * cur.at(y, x, 0)) -
                              std::log(0.05 + 0.95 * prev.at(y, x, 0));
            const int n =
                std::min(kMaxEventsPerPixel, static_cast<int>(std::abs(dl) / kEventThreshold));
            const int p = dl > 0.0 ? 1 : -1;
            for (int j = 0; j < n; ++j) {
                RawEvent e;
                e.x = x;
                e.y = y;
                e.t = window_begin + (j + 1) * kFramePeriodUs / (n + 1);
                e.p = p;
                events.push_back(e);
            }
        }
    }
    std::stable_sort(events.begin(), events.end(),
                     [](const RawEvent& a, const RawEvent& b) { return a.t < b.t; });
    return events;
}

}  // namespace

std::string generate_fixture(const FixtureConfig& cfg, const std::string& out_dir) {
    if (cfg.num_sequences <= 0 || cfg.frames_per_seq < 2)
        throw ConfigError("generate_fixture: need at least 1 sequence and 2 frames");
    const fs::path root(out_dir);
    const fs::path manifest = root / "manifest.txt";
    if (fs::exists(manifest) && !cfg.force)
        throw DataError("generate_fixture: " + manifest.string() +
                        " already exists (use force to overwrite)");
    fs::create_directories(root);

    std::vector<std::string> names;
    for (int si = 0; si < cfg.num_sequences; ++si) {
        char nbuf[16];
        std::snprintf(nbuf, sizeof(nbuf), "seq%03d", si);
        const std::string name = nbuf;
        names.push_back(name);
        const fs::path dir = root / name;
        fs::create_directories(dir / "rgb");
        fs::create_directories(dir / "events");

        Rng rng(derive_seed(cfg.seed, "fixture/" + name));
        const SequenceScript script =
            make_script(rng, si, cfg.frames_per_seq, cfg.image_size);

        std::ofstream gt(dir / "groundtruth.txt", std::ios::trunc);
        Image prev = render_frame(script, -1);
        for (int t = 0; t < cfg.frames_per_seq; ++t) {
            Image cur = render_frame(script, t);
            write_png((dir / "rgb" / frame_name(t, "png")).string(), cur);
            write_event_csv((dir / "events" / frame_name(t, "csv")).string(),
                            events_between(prev, cur, static_cast<std::int64_t>(t) * kFramePeriodUs));
            const double r = script.radius(t);
            char line[128];
            std::snprintf(line, sizeof(line), "%.6f,%.6f,%.6f,%.6f\n",
                          script.pos_x(t) / cfg.image_size, script.pos_y(t) / cfg.image_size,
                          2.0 * r / cfg.image_size, 2.0 * r / cfg.image_size);
            gt << line;
            prev = std::move(cur);
        }
        gt.close();

        std::ofstream at(dir / "attributes.txt", std::ios::trunc);
        for (std::size_t i = 0; i < script.attr.size(); ++i)
            at << script.attr[i] << (i + 1 < script.attr.size() ? "," : "\n");
    }

    std::ofstream mf(manifest, std::ios::trunc);
    for (const std::string& n : names) mf << n << '\n';
    if (!mf) throw DataError("generate_fixture: cannot write " + manifest.string());
    return manifest.string();
}

// ---------------------------------------------------------------------------
// Loading

double crop_side(const BoundingBox& box, int image_h, int image_w, double factor) {
    const double w_px = box.w * image_w;
    const double h_px = box.h * image_h;
    const double side = factor * std::sqrt(std::max(w_px * h_px, 1.0));
    return side;
}

FixtureLoader::FixtureLoader(const std::string& root, int num_attributes, int template_size,
                             int search_size)
    : num_attributes_(num_attributes), template_size_(template_size), search_size_(search_size) {
    if (num_attributes < 1) throw ConfigError("FixtureLoader: need at least one attribute");
    const fs::path manifest = fs::path(root) / "manifest.txt";
    std::ifstream mf(manifest);
    if (!mf) throw DataError("FixtureLoader: cannot open " + manifest.string());
    std::string name;
    while (std::getline(mf, name)) {
        if (name.empty()) continue;
        FixtureSequence seq;
        seq.name = name;
        seq.dir = (fs::path(root) / name).string();

        std::ifstream gt(fs::path(seq.dir) / "groundtruth.txt");
        if (!gt) throw DataError("FixtureLoader: missing groundtruth.txt in " + seq.dir);
        std::string line;
        while (std::getline(gt, line)) {
            if (line.empty()) continue;
            BoundingBox b;
            char comma;
            std::istringstream ss(line);
            if (!(ss >> b.cx >> comma >> b.cy >> comma >> b.w >> comma >> b.h))
                throw DataError("FixtureLoader: malformed ground-truth line in " + seq.dir);
            seq.boxes.push_back(b.clamped());
        }
        seq.num_frames = static_cast<int>(seq.boxes.size());
        if (seq.num_frames < 2)
            throw DataError("FixtureLoader: sequence " + name + " has fewer than 2 frames");

        std::ifstream at(fs::path(seq.dir) / "attributes.txt");
        if (!at) throw DataError("FixtureLoader: missing attributes.txt in " + seq.dir);
        std::string attr_line;
        std::getline(at, attr_line);
        std::istringstream as(attr_line);
        std::string tok;
        std::vector<int> bits;
        while (std::getline(as, tok, ',')) {
            if (tok != "0" && tok != "1")
                throw DataError("FixtureLoader: attribute digits must be 0/1 in " + seq.dir);
            bits.push_back(tok == "1" ? 1 : 0);
        }
        if (static_cast<int>(bits.size()) < num_attributes)
            throw DataError("FixtureLoader: " + seq.dir + " has " + std::to_string(bits.size()) +
                            " attribute digits, need " + std::to_string(num_attributes));
        bits.resize(num_attributes);  // keep the first K attributes
        seq.attr.g = std::move(bits);

        const Image first = read_png((fs::path(seq.dir) / "rgb" / frame_name(0, "png")).string());
        seq.image_height = first.height;
        seq.image_width = first.width;
        seqs_.push_back(std::move(seq));
    }
    if (seqs_.empty()) throw DataError("FixtureLoader: manifest lists no sequences");
}

Image FixtureLoader::load_rgb(std::size_t seq, int frame) const {
    const FixtureSequence& s = seqs_.at(seq);
    if (frame < 0 || frame >= s.num_frames)
        throw DataError("load_rgb: frame index out of range");
    return read_png((fs::path(s.dir) / "rgb" / frame_name(frame, "png")).string());
}

EventFrame FixtureLoader::load_events(std::size_t seq, int frame) const {
    const FixtureSequence& s = seqs_.at(seq);
    if (frame < 0 || frame >= s.num_frames)
        throw DataError("load_events: frame index out of range");
    const auto events =
        read_event_csv((fs::path(s.dir) / "events" / frame_name(frame, "csv")).string());
    return stack_events(events, std::numeric_limits<std::int64_t>::min(),
                        std::numeric_limits<std::int64_t>::max(), s.image_height, s.image_width);
}

CropGeometry FixtureLoader::search_geometry(const BoundingBox& box_norm, int image_h, int image_w,
                                            std::uint64_t jitter_seed) const {
    CropGeometry g;
    g.side = crop_side(box_norm, image_h, image_w, 4.0);
    g.cx = box_norm.cx * image_w;
    g.cy = box_norm.cy * image_h;
    if (jitter_seed != 0) {
        Rng jr(jitter_seed);
        const double unit = g.side / 4.0;  // one box side
        g.cx += jr.uniform(-0.5, 0.5) * unit;
        g.cy += jr.uniform(-0.5, 0.5) * unit;
        g.side *= jr.uniform(0.85, 1.15);
    }
    return g;
}

Sample FixtureLoader::load_sample(std::size_t seq, int frame, int template_frame,
                                  std::uint64_t jitter_seed) const {
    const FixtureSequence& s = seqs_.at(seq);
    if (frame < 0 || frame >= s.num_frames || template_frame < 0 ||
        template_frame >= s.num_frames)
        throw DataError("load_sample: frame index out of range");

    const BoundingBox tb = s.boxes[template_frame];
    const BoundingBox sb = s.boxes[frame];

    Sample out;
    out.attr = s.attr;

    const double t_side = crop_side(tb, s.image_height, s.image_width, 2.0);
    const double t_cx = tb.cx * s.image_width;
    const double t_cy = tb.cy * s.image_height;
    const Image t_rgb = load_rgb(seq, template_frame);
    const EventFrame t_ev = load_events(seq, template_frame);
    out.rgb_template = crop_resize(t_rgb, t_cx, t_cy, t_side, template_size_);
    out.event_template = crop_resize(t_ev, t_cx, t_cy, t_side, template_size_);

    const CropGeometry g = search_geometry(sb, s.image_height, s.image_width, jitter_seed);
    const Image s_rgb = load_rgb(seq, frame);
    const EventFrame s_ev = load_events(seq, frame);
    out.rgb_search = crop_resize(s_rgb, g.cx, g.cy, g.side, search_size_);
    out.event_search = crop_resize(s_ev, g.cx, g.cy, g.side, search_size_);

    BoundingBox gt;
    gt.cx = (sb.cx * s.image_width - (g.cx - g.side / 2.0)) / g.side;
    gt.cy = (sb.cy * s.image_height - (g.cy - g.side / 2.0)) / g.side;
    gt.w = sb.w * s.image_width / g.side;
    gt.h = sb.h * s.image_height / g.side;
    out.gt_box = gt.clamped();
    return out;
}

}  // namespace emt
