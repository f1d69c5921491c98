#include "doctest.h"

#include <filesystem>
#include <fstream>

#include "emt/eventrep.hpp"
#include "emt/png_io.hpp"

namespace fs = std::filesystem;

using emt::BoundingBox;
using emt::EventFrame;
using emt::FixtureConfig;
using emt::FixtureLoader;
using emt::RawEvent;
using emt::Rng;
using emt::Sample;

namespace {

std::string fresh_dir(const std::string& name) {
    const auto dir = fs::temp_directory_path() / "emt_eventrep_tests" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir.string();
}

std::string read_bytes(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

FixtureConfig small_fixture(std::uint64_t seed) {
    FixtureConfig cfg;
    cfg.seed = seed;
    cfg.num_sequences = 4;
    cfg.frames_per_seq = 8;
    cfg.image_size = 96;
    return cfg;
}

}  // namespace

TEST_CASE("stacking no events yields an all-zero frame") {
    const EventFrame f = emt::stack_events({}, 0, 1000, 4, 6);
    REQUIRE(f.height == 4);
    REQUIRE(f.width == 6);
    REQUIRE(f.channels == 2);
    for (double v : f.data) REQUIRE(v == 0.0);
}

TEST_CASE("a single event normalizes to exactly one") {
    const EventFrame f = emt::stack_events({{3, 5, 10, 1}}, 0, 1000, 8, 8);
    REQUIRE(f.at(5, 3, 0) == 1.0);
    REQUIRE(f.at(5, 3, 1) == 0.0);
    double sum = 0.0;
    for (double v : f.data) sum += v;
    REQUIRE(sum == 1.0);
}

TEST_CASE("counts divide by the frame-wide max") {
    // Two positive events at one pixel, one at another: values 1.0 and 0.5.
    const EventFrame f =
        emt::stack_events({{1, 1, 5, 1}, {1, 1, 6, 1}, {2, 3, 7, 1}}, 0, 1000, 8, 8);
    REQUIRE(f.at(1, 1, 0) == 1.0);
    REQUIRE(f.at(3, 2, 0) == 0.5);
}

TEST_CASE("polarity routes to its own channel") {
    const EventFrame f = emt::stack_events({{0, 0, 1, 1}, {0, 0, 2, -1}}, 0, 1000, 2, 2);
    REQUIRE(f.at(0, 0, 0) == 1.0);
    REQUIRE(f.at(0, 0, 1) == 1.0);
}

TEST_CASE("events outside the window are excluded") {
    const EventFrame f = emt::stack_events({{0, 0, 5, 1}, {1, 1, 50, 1}}, 0, 10, 2, 2);
    REQUIRE(f.at(0, 0, 0) == 1.0);
    REQUIRE(f.at(1, 1, 0) == 0.0);
}

TEST_CASE("unsorted or out-of-range events are rejected") {
    REQUIRE_THROWS_AS(emt::stack_events({{0, 0, 10, 1}, {0, 0, 5, 1}}, 0, 100, 2, 2),
                      emt::DataError);
    REQUIRE_THROWS_AS(emt::stack_events({{7, 0, 1, 1}}, 0, 100, 2, 2), emt::DataError);
    REQUIRE_THROWS_AS(emt::stack_events({{0, 0, 1, 3}}, 0, 100, 2, 2), emt::DataError);
}

TEST_CASE("counting is additive over disjoint event sets") {
    Rng rng(41);
    std::vector<RawEvent> all;
    for (int i = 0; i < 200; ++i)
        all.push_back({static_cast<int>(rng.uniform_int(0, 7)),
                       static_cast<int>(rng.uniform_int(0, 7)), i,
                       rng.uniform() < 0.5 ? 1 : -1});
    // Split at t=100; raw counts (pre-normalization) must add up. Compare via
    // per-part maxima to undo each part's normalization.
    auto counts = [](const EventFrame& f, double scale) {
        std::vector<double> c;
        for (double v : f.data) c.push_back(v * scale);
        return c;
    };
    const EventFrame whole = emt::stack_events(all, 0, 200, 8, 8);
    const EventFrame first = emt::stack_events(all, 0, 100, 8, 8);
    const EventFrame second = emt::stack_events(all, 100, 200, 8, 8);

    // Recover raw counts by brute force: max count equals the largest
    // normalized value times the (unknown) max, so recount directly instead.
    auto raw = [&all](std::int64_t a, std::int64_t b) {
        std::vector<double> c(8 * 8 * 2, 0.0);
        for (const RawEvent& e : all)
            if (e.t >= a && e.t < b) c[(e.y * 8 + e.x) * 2 + (e.p == 1 ? 0 : 1)] += 1.0;
        return c;
    };
    const auto raw_whole = raw(0, 200), raw_first = raw(0, 100), raw_second = raw(100, 200);
    double max_whole = 0.0, max_first = 0.0, max_second = 0.0;
    for (double v : raw_whole) max_whole = std::max(max_whole, v);
    for (double v : raw_first) max_first = std::max(max_first, v);
    for (double v : raw_second) max_second = std::max(max_second, v);
    for (std::size_t i = 0; i < raw_whole.size(); ++i) {
        REQUIRE(whole.data[i] * max_whole ==
                doctest::Approx(first.data[i] * max_first + second.data[i] * max_second)
                    .epsilon(1e-9));
    }
}

TEST_CASE("event csv round-trips") {
    const std::string path = fresh_dir("csv") + "/events.csv";
    const std::vector<RawEvent> events = {{1, 2, 100, 1}, {3, 4, 200, -1}, {5, 6, 300, 1}};
    emt::write_event_csv(path, events);
    const auto back = emt::read_event_csv(path);
    REQUIRE(back.size() == events.size());
    for (std::size_t i = 0; i < events.size(); ++i) {
        REQUIRE(back[i].x == events[i].x);
        REQUIRE(back[i].y == events[i].y);
        REQUIRE(back[i].t == events[i].t);
        REQUIRE(back[i].p == events[i].p);
    }
}

TEST_CASE("fixture generation is deterministic") {
    const std::string d1 = fresh_dir("det1");
    const std::string d2 = fresh_dir("det2");
    FixtureConfig cfg = small_fixture(7);
    cfg.num_sequences = 2;
    cfg.frames_per_seq = 4;
    emt::generate_fixture(cfg, d1);
    emt::generate_fixture(cfg, d2);

    // Byte-compare the full trees.
    std::vector<fs::path> rel;
    for (const auto& e : fs::recursive_directory_iterator(d1))
        if (e.is_regular_file()) rel.push_back(fs::relative(e.path(), d1));
    REQUIRE_FALSE(rel.empty());
    for (const auto& r : rel) {
        INFO("file " << r.string());
        REQUIRE(read_bytes(fs::path(d1) / r) == read_bytes(fs::path(d2) / r));
    }
}

TEST_CASE("fixture refuses to overwrite unless forced") {
    const std::string dir = fresh_dir("force");
    FixtureConfig cfg = small_fixture(1);
    cfg.num_sequences = 1;
    cfg.frames_per_seq = 2;
    emt::generate_fixture(cfg, dir);
    REQUIRE_THROWS_AS(emt::generate_fixture(cfg, dir), emt::DataError);
    cfg.force = true;
    REQUIRE_NOTHROW(emt::generate_fixture(cfg, dir));
}

TEST_CASE("fixture writes the advertised layout and cardinalities") {
    const std::string dir = fresh_dir("layout");
    FixtureConfig cfg = small_fixture(7);
    cfg.num_sequences = 3;
    cfg.frames_per_seq = 5;
    const std::string manifest = emt::generate_fixture(cfg, dir);
    REQUIRE(fs::exists(manifest));

    int seq_count = 0;
    std::ifstream mf(manifest);
    std::string name;
    while (std::getline(mf, name)) {
        if (name.empty()) continue;
        ++seq_count;
        const fs::path sd = fs::path(dir) / name;
        int pngs = 0, csvs = 0;
        for (const auto& e : fs::directory_iterator(sd / "rgb")) (void)e, ++pngs;
        for (const auto& e : fs::directory_iterator(sd / "events")) (void)e, ++csvs;
        REQUIRE(pngs == 5);
        REQUIRE(csvs == 5);
        int gt_lines = 0;
        std::ifstream gt(sd / "groundtruth.txt");
        std::string line;
        while (std::getline(gt, line))
            if (!line.empty()) ++gt_lines;
        REQUIRE(gt_lines == 5);
        REQUIRE(fs::exists(sd / "attributes.txt"));
    }
    REQUIRE(seq_count == 3);
}

TEST_CASE("attribute labels match the rendered degradations") {
    const std::string dir = fresh_dir("labels");
    FixtureConfig cfg = small_fixture(11);
    cfg.num_sequences = 8;
    cfg.frames_per_seq = 12;
    emt::generate_fixture(cfg, dir);
    FixtureLoader loader(dir, 4);

    int checked_illum = 0, checked_scale = 0, checked_occl = 0;
    for (std::size_t si = 0; si < loader.num_sequences(); ++si) {
        const auto& seq = loader.sequence(si);
        const int last = seq.num_frames - 1;
        if (seq.attr.g[0] == 1) {
            // Brightness gain ramps up monotonically.
            const emt::Image first = loader.load_rgb(si, 0);
            const emt::Image final = loader.load_rgb(si, last);
            double m0 = 0.0, m1 = 0.0;
            for (double v : first.data) m0 += v;
            for (double v : final.data) m1 += v;
            REQUIRE(m1 > m0 * 1.5);
            ++checked_illum;
        }
        if (seq.attr.g[2] == 1) {
            REQUIRE(seq.boxes[last].w >= seq.boxes[0].w * 1.5);
            ++checked_scale;
        } else {
            REQUIRE(seq.boxes[last].w == doctest::Approx(seq.boxes[0].w).epsilon(1e-9));
        }
        if (seq.attr.g[3] == 1) {
            // During the occlusion window the target center pixel is darkened
            // to the occluder color instead of the bright target color.
            const int t = static_cast<int>(0.5 * seq.num_frames);
            const emt::Image img = loader.load_rgb(si, t);
            const BoundingBox b = seq.boxes[t];
            const int cx = static_cast<int>((b.cx - b.w * 0.2) * seq.image_width);
            const int cy = static_cast<int>(b.cy * seq.image_height);
            const double lum = 0.299 * img.at(cy, cx, 0) + 0.587 * img.at(cy, cx, 1) +
                               0.114 * img.at(cy, cx, 2);
            REQUIRE(lum < 0.45);
            ++checked_occl;
        }
    }
    // Round-robin assignment guarantees each attribute occurs.
    REQUIRE(checked_illum >= 2);
    REQUIRE(checked_scale >= 2);
    REQUIRE(checked_occl >= 2);
}

TEST_CASE("moving targets emit events around the target region") {
    const std::string dir = fresh_dir("events_exist");
    FixtureConfig cfg = small_fixture(13);
    cfg.num_sequences = 1;
    cfg.frames_per_seq = 6;
    emt::generate_fixture(cfg, dir);
    FixtureLoader loader(dir, 4);
    const EventFrame ev = loader.load_events(0, 3);
    double total = 0.0;
    for (double v : ev.data) total += v;
    REQUIRE(total > 0.0);
}

TEST_CASE("self-referencing sample centers the ground truth box") {
    const std::string dir = fresh_dir("center");
    emt::generate_fixture(small_fixture(17), dir);
    FixtureLoader loader(dir, 4);
    const Sample s = loader.load_sample(0, 2, 2, /*jitter_seed=*/0);
    REQUIRE(s.gt_box.cx == doctest::Approx(0.5).epsilon(1e-9));
    REQUIRE(s.gt_box.cy == doctest::Approx(0.5).epsilon(1e-9));
    REQUIRE(s.gt_box.w == doctest::Approx(0.25).epsilon(1e-9));
    REQUIRE(s.rgb_template.height == 64);
    REQUIRE(s.rgb_search.height == 128);
    REQUIRE(s.event_search.channels == 2);
}

TEST_CASE("jittered samples are reproducible and recomputable") {
    const std::string dir = fresh_dir("jitter");
    emt::generate_fixture(small_fixture(19), dir);
    FixtureLoader loader(dir, 4);

    const Sample a = loader.load_sample(1, 3, 0, 12345);
    const Sample b = loader.load_sample(1, 3, 0, 12345);
    REQUIRE(a.gt_box.cx == b.gt_box.cx);
    REQUIRE(a.gt_box.cy == b.gt_box.cy);
    REQUIRE(a.gt_box.w == b.gt_box.w);

    // Independent recomputation of the crop geometry from the same seed.
    const auto& seq = loader.sequence(1);
    const BoundingBox sb = seq.boxes[3];
    Rng jr(12345);
    double side = emt::crop_side(sb, seq.image_height, seq.image_width, 4.0);
    const double unit = side / 4.0;
    double gcx = sb.cx * seq.image_width + jr.uniform(-0.5, 0.5) * unit;
    double gcy = sb.cy * seq.image_height + jr.uniform(-0.5, 0.5) * unit;
    side *= jr.uniform(0.85, 1.15);
    const double want_cx = (sb.cx * seq.image_width - (gcx - side / 2.0)) / side;
    const double want_cy = (sb.cy * seq.image_height - (gcy - side / 2.0)) / side;
    REQUIRE(a.gt_box.cx == doctest::Approx(want_cx).epsilon(1e-12));
    REQUIRE(a.gt_box.cy == doctest::Approx(want_cy).epsilon(1e-12));

    const Sample c = loader.load_sample(1, 3, 0, 54321);
    REQUIRE(a.gt_box.cx != c.gt_box.cx);
}

TEST_CASE("every sampled ground truth stays inside the search crop") {
    const std::string dir = fresh_dir("inside");
    emt::generate_fixture(small_fixture(23), dir);
    FixtureLoader loader(dir, 4);
    Rng rng(99);
    for (int trial = 0; trial < 100; ++trial) {
        const auto si = static_cast<std::size_t>(rng.uniform_int(0, 3));
        const auto& seq = loader.sequence(si);
        const int f = static_cast<int>(rng.uniform_int(0, seq.num_frames - 1));
        const int tf = static_cast<int>(rng.uniform_int(0, seq.num_frames - 1));
        const Sample s = loader.load_sample(si, f, tf, rng.next_u64() | 1);
        REQUIRE(s.gt_box.x0() >= 0.0);
        REQUIRE(s.gt_box.y0() >= 0.0);
        REQUIRE(s.gt_box.x1() <= 1.0);
        REQUIRE(s.gt_box.y1() <= 1.0);
        REQUIRE(s.gt_box.w > 0.0);
    }
}

TEST_CASE("loader truncates attribute labels to the configured count") {
    const std::string dir = fresh_dir("truncate");
    emt::generate_fixture(small_fixture(29), dir);
    FixtureLoader two(dir, 2);
    REQUIRE(two.sequence(0).attr.g.size() == 2);
    FixtureLoader four(dir, 4);
    for (std::size_t i = 0; i < two.num_sequences(); ++i) {
        REQUIRE(two.sequence(i).attr.g[0] == four.sequence(i).attr.g[0]);
        REQUIRE(two.sequence(i).attr.g[1] == four.sequence(i).attr.g[1]);
    }
    REQUIRE_THROWS_AS(FixtureLoader(dir, 5), emt::DataError);
}

TEST_CASE("loader rejects bad indices and missing data") {
    const std::string dir = fresh_dir("badidx");
    FixtureConfig cfg = small_fixture(31);
    cfg.num_sequences = 1;
    cfg.frames_per_seq = 3;
    emt::generate_fixture(cfg, dir);
    FixtureLoader loader(dir, 4);
    REQUIRE_THROWS_AS(loader.load_rgb(0, 3), emt::DataError);
    REQUIRE_THROWS_AS(loader.load_sample(0, 0, 99), emt::DataError);
    REQUIRE_THROWS_AS(FixtureLoader(fresh_dir("nonexistent"), 4), emt::DataError);
}
