#include "layoutforge/image.hpp"

#include <cmath>
#include <cstdio>
#include <memory>
#include <stdexcept>
#include <vector>

#include <png.h>

namespace lf {

namespace {

struct FileCloser {
    void operator()(FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

void write_png(const std::filesystem::path& path, int w, int h, int color_type,
               const std::vector<const uint8_t*>& rows) {
    FilePtr fp(std::fopen(path.string().c_str(), "wb"));
    if (!fp) throw std::runtime_error("cannot open for writing: " + path.string());

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("libpng init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("png write failed: " + path.string());
    }
    png_init_io(png, fp.get());
    png_set_compression_level(png, 6);
    png_set_IHDR(png, info, w, h, 8, color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int r = 0; r < h; ++r) png_write_row(png, const_cast<png_bytep>(rows[r]));
    png_write_end(png, info);
    png_destroy_write_struct(&png, &info);
}

void read_png(const std::filesystem::path& path, int expect_color_type, int& w, int& h,
              std::vector<uint8_t>& data) {
    FilePtr fp(std::fopen(path.string().c_str(), "rb"));
    if (!fp) throw std::runtime_error("cannot open for reading: " + path.string());

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("libpng init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("png read failed: " + path.string());
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);
    w = static_cast<int>(png_get_image_width(png, info));
    h = static_cast<int>(png_get_image_height(png, info));
    if (png_get_bit_depth(png, info) != 8 || png_get_color_type(png, info) != expect_color_type) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("unexpected png format: " + path.string());
    }
    const int channels = expect_color_type == PNG_COLOR_TYPE_RGB ? 3 : 1;
    data.resize(static_cast<size_t>(w) * h * channels);
    std::vector<png_bytep> rows(h);
    for (int r = 0; r < h; ++r) rows[r] = data.data() + static_cast<size_t>(r) * w * channels;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
}

} // namespace

void write_mask_png(const std::filesystem::path& path, const LayoutMask& mask) {
    std::vector<const uint8_t*> rows(mask.h);
    for (int r = 0; r < mask.h; ++r) rows[r] = mask.labels.data() + static_cast<size_t>(r) * mask.w;
    write_png(path, mask.w, mask.h, PNG_COLOR_TYPE_GRAY, rows);
}

LayoutMask read_mask_png(const std::filesystem::path& path) {
    int w = 0, h = 0;
    std::vector<uint8_t> data;
    read_png(path, PNG_COLOR_TYPE_GRAY, w, h, data);
    LayoutMask mask(h, w);
    mask.labels = std::move(data);
    return mask;
}

void write_rgb_png(const std::filesystem::path& path, const RgbImage& image) {
    std::vector<uint8_t> interleaved(static_cast<size_t>(image.w) * image.h * 3);
    for (int r = 0; r < image.h; ++r)
        for (int c = 0; c < image.w; ++c)
            for (int ch = 0; ch < 3; ++ch) {
                const double v = std::clamp(image.at(ch, r, c), 0.0, 1.0);
                interleaved[(static_cast<size_t>(r) * image.w + c) * 3 + ch] =
                    static_cast<uint8_t>(std::lround(v * 255.0));
            }
    std::vector<const uint8_t*> rows(image.h);
    for (int r = 0; r < image.h; ++r) rows[r] = interleaved.data() + static_cast<size_t>(r) * image.w * 3;
    write_png(path, image.w, image.h, PNG_COLOR_TYPE_RGB, rows);
}

RgbImage read_rgb_png(const std::filesystem::path& path) {
    int w = 0, h = 0;
    std::vector<uint8_t> data;
    read_png(path, PNG_COLOR_TYPE_RGB, w, h, data);
    RgbImage img(h, w);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c)
            for (int ch = 0; ch < 3; ++ch)
                img.at(ch, r, c) = data[(static_cast<size_t>(r) * w + c) * 3 + ch] / 255.0;
    return img;
}

} // namespace lf
