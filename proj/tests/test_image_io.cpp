#include <doctest.h>

#include <array>
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include <jpeglib.h>
#include <png.h>

#include "biasaudit/errors.hpp"
#include "biasaudit/image_io.hpp"
#include "test_util.hpp"

using namespace biasaudit;

namespace {

// Writes a 16-bit grayscale PNG directly through libpng so the loader's
// bit-depth scaling can be checked against known sample values.
void write_png_gray16(const std::string& path, int w, int h,
                      const std::vector<std::uint16_t>& samples) {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    REQUIRE(f != nullptr);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    REQUIRE(setjmp(png_jmpbuf(png)) == 0);
    png_init_io(png, f);
    png_set_IHDR(png, info, w, h, 16, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<std::uint8_t> row(2 * static_cast<std::size_t>(w));
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const std::uint16_t v = samples[static_cast<std::size_t>(y) * w + x];
            row[2 * x] = static_cast<std::uint8_t>(v >> 8); // PNG streams are big-endian
            row[2 * x + 1] = static_cast<std::uint8_t>(v & 0xFF);
        }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(f);
}

void write_jpeg_gray8(const std::string& path, int w, int h,
                      const std::vector<std::uint8_t>& samples, int quality) {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    REQUIRE(f != nullptr);
    jpeg_compress_struct cinfo;
    jpeg_error_mgr err;
    cinfo.err = jpeg_std_error(&err);
    jpeg_create_compress(&cinfo);
    jpeg_stdio_dest(&cinfo, f);
    cinfo.image_width = static_cast<JDIMENSION>(w);
    cinfo.image_height = static_cast<JDIMENSION>(h);
    cinfo.input_components = 1;
    cinfo.in_color_space = JCS_GRAYSCALE;
    jpeg_set_defaults(&cinfo);
    jpeg_set_quality(&cinfo, quality, TRUE);
    jpeg_start_compress(&cinfo, TRUE);
    for (int y = 0; y < h; ++y) {
        const JSAMPLE* row = samples.data() + static_cast<std::size_t>(y) * w;
        JSAMPROW rows[1] = {const_cast<JSAMPROW>(row)};
        jpeg_write_scanlines(&cinfo, rows, 1);
    }
    jpeg_finish_compress(&cinfo);
    jpeg_destroy_compress(&cinfo);
    std::fclose(f);
}

} // namespace

TEST_CASE("8-bit PNG values scale by 255 and round-trip exactly") {
    const auto dir = testutil::scratch_dir("io_png8");
    GrayImage img(3, 1);
    img.at(0, 0) = 0.0;
    img.at(1, 0) = 128.0 / 255.0;
    img.at(2, 0) = 1.0;
    io::save_png_gray8(img, (dir / "g.png").string());
    const GrayImage back = io::load_image((dir / "g.png").string());
    REQUIRE(back.width == 3);
    REQUIRE(back.height == 1);
    CHECK(back.at(0, 0) == 0.0);
    CHECK(back.at(1, 0) == 128.0 / 255.0);
    CHECK(back.at(2, 0) == 1.0);
}

TEST_CASE("save_png_gray8 quantizes by round-nearest and clamps") {
    const auto dir = testutil::scratch_dir("io_quant");
    GrayImage img(4, 1);
    img.at(0, 0) = 0.5;          // 127.5 -> lround -> 128
    img.at(1, 0) = 100.4 / 255.0;
    img.at(2, 0) = 1.7;          // clamps to 255
    img.at(3, 0) = -0.3;         // clamps to 0
    io::save_png_gray8(img, (dir / "q.png").string());
    const GrayImage back = io::load_image((dir / "q.png").string());
    CHECK(back.at(0, 0) == 128.0 / 255.0);
    CHECK(back.at(1, 0) == 100.0 / 255.0);
    CHECK(back.at(2, 0) == 1.0);
    CHECK(back.at(3, 0) == 0.0);
}

TEST_CASE("16-bit PNG values scale by 65535") {
    const auto dir = testutil::scratch_dir("io_png16");
    write_png_gray16((dir / "g16.png").string(), 3, 1, {0, 32768, 65535});
    const GrayImage img = io::load_image((dir / "g16.png").string());
    REQUIRE(img.width == 3);
    CHECK(img.at(0, 0) == 0.0);
    CHECK(img.at(1, 0) == doctest::Approx(32768.0 / 65535.0).epsilon(1e-12));
    CHECK(img.at(2, 0) == 1.0);
}

TEST_CASE("color PNG collapses to the channel average") {
    const auto dir = testutil::scratch_dir("io_rgb");
    io::RgbImage rgb(2, 1);
    auto* p0 = rgb.px(0, 0);
    p0[0] = 30; p0[1] = 60; p0[2] = 90;
    auto* p1 = rgb.px(1, 0);
    p1[0] = 255; p1[1] = 0; p1[2] = 0;
    io::save_png_rgb8(rgb, (dir / "c.png").string());
    const GrayImage img = io::load_image((dir / "c.png").string());
    CHECK(img.at(0, 0) == doctest::Approx((30.0 + 60.0 + 90.0) / (3.0 * 255.0)).epsilon(1e-12));
    CHECK(img.at(1, 0) == doctest::Approx(255.0 / (3.0 * 255.0)).epsilon(1e-12));
}

TEST_CASE("8-bit grayscale JPEG decodes with lossy tolerance") {
    const auto dir = testutil::scratch_dir("io_jpeg");
    const int w = 16, h = 16;
    std::vector<std::uint8_t> samples(static_cast<std::size_t>(w) * h, 128);
    write_jpeg_gray8((dir / "g.jpg").string(), w, h, samples, 95);
    const GrayImage img = io::load_image((dir / "g.jpg").string());
    REQUIRE(img.width == w);
    REQUIRE(img.height == h);
    for (double v : img.pixels)
        CHECK(v == doctest::Approx(128.0 / 255.0).epsilon(0.02)); // DC-only block
}

TEST_CASE("decode errors") {
    const auto dir = testutil::scratch_dir("io_err");
    SUBCASE("unsupported format") {
        testutil::write_file(dir / "t.txt", "this is not an image");
        CHECK_THROWS_AS(io::load_image((dir / "t.txt").string()), DecodeError);
    }
    SUBCASE("truncated PNG") {
        GrayImage img(32, 32);
        io::save_png_gray8(img, (dir / "full.png").string());
        const std::string bytes = testutil::read_file(dir / "full.png");
        REQUIRE(bytes.size() > 40);
        testutil::write_file(dir / "trunc.png", bytes.substr(0, 40));
        CHECK_THROWS_AS(io::load_image((dir / "trunc.png").string()), DecodeError);
    }
    SUBCASE("truncated JPEG") {
        std::vector<std::uint8_t> samples(64 * 64, 200);
        write_jpeg_gray8((dir / "full.jpg").string(), 64, 64, samples, 90);
        const std::string bytes = testutil::read_file(dir / "full.jpg");
        REQUIRE(bytes.size() > 60);
        testutil::write_file(dir / "trunc.jpg", bytes.substr(0, bytes.size() / 2));
        CHECK_THROWS_AS(io::load_image((dir / "trunc.jpg").string()), DecodeError);
    }
    SUBCASE("missing file") {
        CHECK_THROWS_AS(io::load_image((dir / "nope.png").string()), DecodeError);
    }
}

TEST_CASE("load_mask treats any nonzero intensity as foreground") {
    const auto dir = testutil::scratch_dir("io_mask");
    GrayImage img(3, 1);
    img.at(0, 0) = 0.0;
    img.at(1, 0) = 1.0 / 255.0;
    img.at(2, 0) = 1.0;
    io::save_png_gray8(img, (dir / "m.png").string());
    const BinaryMask m = io::load_mask((dir / "m.png").string());
    CHECK(m.at(0, 0) == 0);
    CHECK(m.at(1, 0) == 1);
    CHECK(m.at(2, 0) == 1);
}
