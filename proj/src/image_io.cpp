#include "biasaudit/image_io.hpp"

#include <csetjmp>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <memory>

#include <jpeglib.h>
#include <png.h>

#include "biasaudit/errors.hpp"

namespace biasaudit::io {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::string& path, const char* mode) {
    FilePtr f(std::fopen(path.c_str(), mode));
    if (!f) {
        const bool writing = std::strchr(mode, 'w') != nullptr;
        if (writing) throw IoError("cannot open for writing: " + path);
        throw DecodeError("cannot open file: " + path);
    }
    return f;
}

// libpng reports errors through longjmp; wrap every call site.
struct PngReader {
    png_structp png = nullptr;
    png_infop info = nullptr;

    PngReader() {
        png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
        if (png) info = png_create_info_struct(png);
        if (!png || !info) {
            png_destroy_read_struct(&png, &info, nullptr);
            throw DecodeError("libpng allocation failed");
        }
    }
    ~PngReader() { png_destroy_read_struct(&png, &info, nullptr); }
};

struct PngWriter {
    png_structp png = nullptr;
    png_infop info = nullptr;

    PngWriter() {
        png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
        if (png) info = png_create_info_struct(png);
        if (!png || !info) {
            png_destroy_write_struct(&png, &info);
            throw IoError("libpng allocation failed");
        }
    }
    ~PngWriter() { png_destroy_write_struct(&png, &info); }
};

GrayImage decode_png(std::FILE* f, const std::string& path) {
    PngReader r;
    if (setjmp(png_jmpbuf(r.png))) throw DecodeError("corrupt PNG: " + path);

    png_init_io(r.png, f);
    png_read_info(r.png, r.info);

    const png_uint_32 w = png_get_image_width(r.png, r.info);
    const png_uint_32 h = png_get_image_height(r.png, r.info);
    int bit_depth = png_get_bit_depth(r.png, r.info);
    const int color = png_get_color_type(r.png, r.info);

    // Normalize every layout to 8- or 16-bit gray/RGB without alpha.
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(r.png);
    if (color == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(r.png);
    if (png_get_valid(r.png, r.info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(r.png);
    png_set_strip_alpha(r.png);
    if (bit_depth == 16) png_set_swap(r.png); // stream is big-endian
    png_read_update_info(r.png, r.info);

    bit_depth = png_get_bit_depth(r.png, r.info);
    const int channels = png_get_channels(r.png, r.info);
    const double maxval = bit_depth == 16 ? 65535.0 : 255.0;

    GrayImage img(static_cast<int>(w), static_cast<int>(h));
    const std::size_t row_bytes = png_get_rowbytes(r.png, r.info);
    std::vector<std::uint8_t> row(row_bytes);
    for (png_uint_32 y = 0; y < h; ++y) {
        png_read_row(r.png, row.data(), nullptr);
        for (png_uint_32 x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int c = 0; c < channels; ++c) {
                if (bit_depth == 16) {
                    std::uint16_t v;
                    std::memcpy(&v, &row[2 * (x * channels + c)], 2);
                    acc += v;
                } else {
                    acc += row[x * channels + c];
                }
            }
            img.at(static_cast<int>(x), static_cast<int>(y)) = acc / (channels * maxval);
        }
    }
    png_read_end(r.png, nullptr);
    return img;
}

struct JpegErrorMgr {
    jpeg_error_mgr pub;
    std::jmp_buf jump;
};

void jpeg_error_exit(j_common_ptr cinfo) {
    auto* mgr = reinterpret_cast<JpegErrorMgr*>(cinfo->err);
    longjmp(mgr->jump, 1);
}

GrayImage decode_jpeg(std::FILE* f, const std::string& path) {
    jpeg_decompress_struct cinfo;
    JpegErrorMgr err;
    cinfo.err = jpeg_std_error(&err.pub);
    err.pub.error_exit = jpeg_error_exit;
    if (setjmp(err.jump)) {
        jpeg_destroy_decompress(&cinfo);
        throw DecodeError("corrupt JPEG: " + path);
    }

    jpeg_create_decompress(&cinfo);
    jpeg_stdio_src(&cinfo, f);
    jpeg_read_header(&cinfo, TRUE);
    jpeg_start_decompress(&cinfo);

    const int w = static_cast<int>(cinfo.output_width);
    const int h = static_cast<int>(cinfo.output_height);
    const int channels = cinfo.output_components;

    GrayImage img(w, h);
    std::vector<std::uint8_t> row(static_cast<std::size_t>(w) * channels);
    std::uint8_t* rowp = row.data();
    for (int y = 0; y < h; ++y) {
        if (jpeg_read_scanlines(&cinfo, &rowp, 1) != 1) {
            jpeg_destroy_decompress(&cinfo);
            throw DecodeError("truncated JPEG: " + path);
        }
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int c = 0; c < channels; ++c) acc += row[x * channels + c];
            img.at(x, y) = acc / (channels * 255.0);
        }
    }
    jpeg_finish_decompress(&cinfo);
    jpeg_destroy_decompress(&cinfo);
    return img;
}

} // namespace

GrayImage load_image(const std::string& path) {
    FilePtr f = open_file(path, "rb");

    std::uint8_t magic[8] = {0};
    const std::size_t got = std::fread(magic, 1, sizeof magic, f.get());
    std::rewind(f.get());
    if (got >= 8 && png_sig_cmp(magic, 0, 8) == 0) return decode_png(f.get(), path);
    if (got >= 2 && magic[0] == 0xFF && magic[1] == 0xD8) return decode_jpeg(f.get(), path);
    throw DecodeError("unsupported image format: " + path);
}

void save_png_gray8(const GrayImage& img, const std::string& path) {
    FilePtr f = open_file(path, "wb");
    PngWriter w;
    if (setjmp(png_jmpbuf(w.png))) throw IoError("PNG write failed: " + path);

    png_init_io(w.png, f.get());
    png_set_IHDR(w.png, w.info, img.width, img.height, 8, PNG_COLOR_TYPE_GRAY,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(w.png, w.info);

    std::vector<std::uint8_t> row(static_cast<std::size_t>(img.width));
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            const double v = std::min(1.0, std::max(0.0, img.at(x, y)));
            row[static_cast<std::size_t>(x)] = static_cast<std::uint8_t>(std::lround(v * 255.0));
        }
        png_write_row(w.png, row.data());
    }
    png_write_end(w.png, nullptr);
}

RgbImage::RgbImage(int w, int h, std::array<std::uint8_t, 3> fill)
    : width(w), height(h), rgb(3 * static_cast<std::size_t>(w) * h) {
    if (w <= 0 || h <= 0) throw ShapeError("RgbImage dimensions must be positive");
    for (std::size_t i = 0; i < rgb.size(); i += 3) {
        rgb[i] = fill[0];
        rgb[i + 1] = fill[1];
        rgb[i + 2] = fill[2];
    }
}

void save_png_rgb8(const RgbImage& img, const std::string& path) {
    FilePtr f = open_file(path, "wb");
    PngWriter w;
    if (setjmp(png_jmpbuf(w.png))) throw IoError("PNG write failed: " + path);

    png_init_io(w.png, f.get());
    png_set_IHDR(w.png, w.info, img.width, img.height, 8, PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(w.png, w.info);
    for (int y = 0; y < img.height; ++y)
        png_write_row(w.png, const_cast<std::uint8_t*>(img.px(0, y)));
    png_write_end(w.png, nullptr);
}

BinaryMask load_mask(const std::string& path) {
    const GrayImage g = load_image(path);
    BinaryMask m(g.width, g.height);
    for (std::size_t i = 0; i < g.size(); ++i) m.bits[i] = g.pixels[i] > 0.0 ? 1 : 0;
    return m;
}

} // namespace biasaudit::io
