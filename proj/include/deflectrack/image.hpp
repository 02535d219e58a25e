#pragma once

#include <png.h>

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace deflectrack {

/// Dense raster with 1 or 3 interleaved channels, intensities in [0,1] for
/// captured images (phase maps and other computational buffers may hold any
/// finite value).
struct Image {
    int width = 0, height = 0, channels = 1;
    std::vector<float> data;

    Image() = default;
    Image(int w, int h, int c, float fill = 0.f)
        : width(w), height(h), channels(c), data(static_cast<size_t>(w) * h * c, fill) {}

    float& at(int x, int y, int c = 0) {
        return data[(static_cast<size_t>(y) * width + x) * channels + c];
    }
    float at(int x, int y, int c = 0) const {
        return data[(static_cast<size_t>(y) * width + x) * channels + c];
    }
    size_t pixel_count() const { return static_cast<size_t>(width) * height; }

    /// Channel mean at a pixel; used wherever a scalar intensity is needed.
    double intensity(int x, int y) const {
        double s = 0;
        for (int c = 0; c < channels; ++c) s += at(x, y, c);
        return s / channels;
    }
};

// ---------------------------------------------------------------------------
// 32-bit float raster with a one-line text header:
//   f32raster <width> <height> <channels> <min> <max>\n
// followed by little-endian float32 data, row major, channels interleaved.
// ---------------------------------------------------------------------------

inline void save_f32_raster(const std::string& path, const Image& img) {
    float lo = std::numeric_limits<float>::infinity(), hi = -lo;
    for (float v : img.data) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    if (img.data.empty()) lo = hi = 0.f;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << "f32raster " << img.width << " " << img.height << " " << img.channels << " " << lo
        << " " << hi << "\n";
    out.write(reinterpret_cast<const char*>(img.data.data()),
              static_cast<std::streamsize>(img.data.size() * sizeof(float)));
}

inline Image load_f32_raster(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open: " + path);
    std::string line;
    std::getline(in, line);
    std::istringstream hdr(line);
    std::string magic;
    Image img;
    double lo, hi;
    hdr >> magic >> img.width >> img.height >> img.channels >> lo >> hi;
    if (magic != "f32raster" || img.width <= 0 || img.height <= 0 ||
        (img.channels != 1 && img.channels != 3))
        throw std::runtime_error("bad f32raster header in " + path);
    img.data.resize(static_cast<size_t>(img.width) * img.height * img.channels);
    in.read(reinterpret_cast<char*>(img.data.data()),
            static_cast<std::streamsize>(img.data.size() * sizeof(float)));
    if (!in) throw std::runtime_error("truncated f32raster: " + path);
    return img;
}

// ---------------------------------------------------------------------------
// PNG (8-bit) export/import for inspection images.
// ---------------------------------------------------------------------------

inline void save_png(const std::string& path, const Image& img) {
    FILE* fp = std::fopen(path.c_str(), "wb");
    if (!fp) throw std::runtime_error("cannot open for writing: " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (!png || !info || setjmp(png_jmpbuf(png))) {
        std::fclose(fp);
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("libpng failure writing " + path);
    }
    png_init_io(png, fp);
    const int color = img.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY;
    png_set_IHDR(png, info, img.width, img.height, 8, color, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<png_byte> row(static_cast<size_t>(img.width) * img.channels);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < img.channels; ++c) {
                const float v = std::clamp(img.at(x, y, c), 0.f, 1.f);
                row[static_cast<size_t>(x) * img.channels + c] =
                    static_cast<png_byte>(v * 255.f + 0.5f);
            }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
}

inline Image load_png(const std::string& path) {
    FILE* fp = std::fopen(path.c_str(), "rb");
    if (!fp) throw std::runtime_error("cannot open: " + path);
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (!png || !info || setjmp(png_jmpbuf(png))) {
        std::fclose(fp);
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("libpng failure reading " + path);
    }
    png_init_io(png, fp);
    png_read_info(png, info);
    png_set_expand(png);
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    png_read_update_info(png, info);
    const int w = static_cast<int>(png_get_image_width(png, info));
    const int h = static_cast<int>(png_get_image_height(png, info));
    const int ch = static_cast<int>(png_get_channels(png, info));
    if (ch != 1 && ch != 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw std::runtime_error("unsupported channel count in " + path);
    }
    Image img(w, h, ch);
    std::vector<png_byte> row(static_cast<size_t>(w) * ch);
    for (int y = 0; y < h; ++y) {
        png_read_row(png, row.data(), nullptr);
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < ch; ++c)
                img.at(x, y, c) = row[static_cast<size_t>(x) * ch + c] / 255.f;
    }
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    return img;
}

inline Image load_image_any(const std::string& path) {
    if (path.size() >= 4 && path.substr(path.size() - 4) == ".png") return load_png(path);
    return load_f32_raster(path);
}

}  // namespace deflectrack
