#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "emt/image.hpp"
#include "emt/png_io.hpp"

using emt::Image;
using emt::Rng;

namespace {

std::string tmp_dir() {
    const auto dir = std::filesystem::temp_directory_path() / "emt_image_tests";
    std::filesystem::create_directories(dir);
    return dir.string();
}

Image random_image(Rng& rng, int h, int w, int c) {
    Image img(h, w, c);
    for (double& v : img.data) v = rng.uniform();
    return img;
}

// Snaps values to the 8-bit lattice the codec stores.
Image quantized(const Image& img) {
    Image q = img;
    for (double& v : q.data) v = std::lround(v * 255.0) / 255.0;
    return q;
}

}  // namespace

TEST_CASE("png round-trips rgb and grayscale images exactly at 8-bit depth") {
    Rng rng(31);
    for (int channels : {3, 1}) {
        const Image img = random_image(rng, 21, 17, channels);
        const std::string path = tmp_dir() + "/roundtrip_" + std::to_string(channels) + ".png";
        emt::write_png(path, img);
        const Image back = emt::read_png(path);
        REQUIRE(back.height == img.height);
        REQUIRE(back.width == img.width);
        REQUIRE(back.channels == img.channels);
        const Image q = quantized(img);
        for (std::size_t i = 0; i < q.data.size(); ++i)
            REQUIRE(back.data[i] == doctest::Approx(q.data[i]).epsilon(1e-12));
    }
}

TEST_CASE("png writes are byte-stable for identical pixels") {
    Rng rng(32);
    const Image img = random_image(rng, 12, 12, 3);
    const std::string p1 = tmp_dir() + "/stable1.png";
    const std::string p2 = tmp_dir() + "/stable2.png";
    emt::write_png(p1, img);
    emt::write_png(p2, img);
    std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
    const std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    const std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    REQUIRE(b1 == b2);
    REQUIRE_FALSE(b1.empty());
}

TEST_CASE("png reader rejects garbage") {
    const std::string path = tmp_dir() + "/garbage.png";
    std::ofstream(path) << "definitely not a png";
    REQUIRE_THROWS_AS(emt::read_png(path), emt::DataError);
}

TEST_CASE("identity crop reproduces the image") {
    Rng rng(33);
    const Image img = random_image(rng, 16, 16, 3);
    const Image out = emt::crop_resize(img, 8.0, 8.0, 16.0, 16);
    for (std::size_t i = 0; i < img.data.size(); ++i)
        REQUIRE(out.data[i] == doctest::Approx(img.data[i]).epsilon(1e-12));
}

TEST_CASE("downscaling a 2x2 block to one pixel averages it") {
    Image img(2, 2, 1);
    img.at(0, 0, 0) = 0.1;
    img.at(0, 1, 0) = 0.3;
    img.at(1, 0, 0) = 0.5;
    img.at(1, 1, 0) = 0.9;
    const Image out = emt::crop_resize(img, 1.0, 1.0, 2.0, 1);
    REQUIRE(out.at(0, 0, 0) == doctest::Approx(0.45).epsilon(1e-12));
}

TEST_CASE("crops beyond the border come back zero padded") {
    Image img(8, 8, 1);
    for (double& v : img.data) v = 1.0;
    // Centered on the top-left corner: three quarters of the crop is outside.
    const Image out = emt::crop_resize(img, 0.0, 0.0, 8.0, 8);
    REQUIRE(out.at(0, 0, 0) == 0.0);
    REQUIRE(out.at(7, 7, 0) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("directional blur spreads an impulse along its axis only") {
    Image img(9, 9, 1);
    img.at(4, 4, 0) = 1.0;
    const Image out = emt::directional_blur(img, 1, 1, 0);  // horizontal, 3 taps
    REQUIRE(out.at(4, 3, 0) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
    REQUIRE(out.at(4, 4, 0) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
    REQUIRE(out.at(4, 5, 0) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
    REQUIRE(out.at(3, 4, 0) == 0.0);
    REQUIRE(out.at(5, 4, 0) == 0.0);
}

TEST_CASE("gain scales and clamps") {
    Image img(1, 2, 1);
    img.at(0, 0, 0) = 0.4;
    img.at(0, 1, 0) = 0.9;
    emt::apply_gain(img, 1.5);
    REQUIRE(img.at(0, 0, 0) == doctest::Approx(0.6).epsilon(1e-12));
    REQUIRE(img.at(0, 1, 0) == 1.0);
}

TEST_CASE("grayscale conversion uses luminance weights") {
    Image img(1, 1, 3);
    img.at(0, 0, 0) = 1.0;
    img.at(0, 0, 1) = 0.5;
    img.at(0, 0, 2) = 0.25;
    const Image g = emt::to_gray(img);
    REQUIRE(g.at(0, 0, 0) == doctest::Approx(0.299 + 0.587 * 0.5 + 0.114 * 0.25).epsilon(1e-12));
}
