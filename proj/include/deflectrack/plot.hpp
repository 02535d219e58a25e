#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "deflectrack/image.hpp"

namespace deflectrack {
namespace plot {

/// Classic 5x7 column-encoded bitmap font (digits, uppercase, a little
/// punctuation); enough for axis labels on the emitted charts.
inline const std::uint8_t* glyph5x7(char c) {
    static const std::uint8_t digits[10][5] = {
        {0x3E, 0x51, 0x49, 0x45, 0x3E}, {0x00, 0x42, 0x7F, 0x40, 0x00},
        {0x42, 0x61, 0x51, 0x49, 0x46}, {0x21, 0x41, 0x45, 0x4B, 0x31},
        {0x18, 0x14, 0x12, 0x7F, 0x10}, {0x27, 0x45, 0x45, 0x45, 0x39},
        {0x3C, 0x4A, 0x49, 0x49, 0x30}, {0x01, 0x71, 0x09, 0x05, 0x03},
        {0x36, 0x49, 0x49, 0x49, 0x36}, {0x06, 0x49, 0x49, 0x29, 0x1E}};
    static const std::uint8_t upper[26][5] = {
        {0x7E, 0x11, 0x11, 0x11, 0x7E}, {0x7F, 0x49, 0x49, 0x49, 0x36},
        {0x3E, 0x41, 0x41, 0x41, 0x22}, {0x7F, 0x41, 0x41, 0x22, 0x1C},
        {0x7F, 0x49, 0x49, 0x49, 0x41}, {0x7F, 0x09, 0x09, 0x09, 0x01},
        {0x3E, 0x41, 0x49, 0x49, 0x7A}, {0x7F, 0x08, 0x08, 0x08, 0x7F},
        {0x00, 0x41, 0x7F, 0x41, 0x00}, {0x20, 0x40, 0x41, 0x3F, 0x01},
        {0x7F, 0x08, 0x14, 0x22, 0x41}, {0x7F, 0x40, 0x40, 0x40, 0x40},
        {0x7F, 0x02, 0x0C, 0x02, 0x7F}, {0x7F, 0x04, 0x08, 0x10, 0x7F},
        {0x3E, 0x41, 0x41, 0x41, 0x3E}, {0x7F, 0x09, 0x09, 0x09, 0x06},
        {0x3E, 0x41, 0x51, 0x21, 0x5E}, {0x7F, 0x09, 0x19, 0x29, 0x46},
        {0x46, 0x49, 0x49, 0x49, 0x31}, {0x01, 0x01, 0x7F, 0x01, 0x01},
        {0x3F, 0x40, 0x40, 0x40, 0x3F}, {0x1F, 0x20, 0x40, 0x20, 0x1F},
        {0x3F, 0x40, 0x38, 0x40, 0x3F}, {0x63, 0x14, 0x08, 0x14, 0x63},
        {0x07, 0x08, 0x70, 0x08, 0x07}, {0x61, 0x51, 0x49, 0x45, 0x43}};
    static const std::uint8_t dot[5] = {0x00, 0x60, 0x60, 0x00, 0x00};
    static const std::uint8_t minus[5] = {0x08, 0x08, 0x08, 0x08, 0x08};
    static const std::uint8_t slash[5] = {0x20, 0x10, 0x08, 0x04, 0x02};
    static const std::uint8_t colon[5] = {0x00, 0x36, 0x36, 0x00, 0x00};
    static const std::uint8_t uscore[5] = {0x40, 0x40, 0x40, 0x40, 0x40};
    static const std::uint8_t blank[5] = {0, 0, 0, 0, 0};
    if (c >= '0' && c <= '9') return digits[c - '0'];
    if (c >= 'A' && c <= 'Z') return upper[c - 'A'];
    if (c >= 'a' && c <= 'z') return upper[c - 'a'];
    switch (c) {
        case '.': return dot;
        case '-': return minus;
        case '/': return slash;
        case ':': return colon;
        case '_': return uscore;
        default: return blank;
    }
}

inline void draw_text(Image& img, int x, int y, const std::string& text, float shade = 0.f,
                      int scale = 1) {
    for (char c : text) {
        const std::uint8_t* g = glyph5x7(c);
        for (int col = 0; col < 5; ++col)
            for (int row = 0; row < 7; ++row)
                if (g[col] & (1 << row))
                    for (int sy = 0; sy < scale; ++sy)
                        for (int sx = 0; sx < scale; ++sx) {
                            const int px = x + col * scale + sx, py = y + row * scale + sy;
                            if (px >= 0 && px < img.width && py >= 0 && py < img.height)
                                for (int ch = 0; ch < img.channels; ++ch)
                                    img.at(px, py, ch) = shade;
                        }
        x += 6 * scale;
    }
}

inline void fill_rect(Image& img, int x0, int y0, int x1, int y1, float shade) {
    x0 = std::max(0, x0);
    y0 = std::max(0, y0);
    x1 = std::min(img.width - 1, x1);
    y1 = std::min(img.height - 1, y1);
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x)
            for (int c = 0; c < img.channels; ++c) img.at(x, y, c) = shade;
}

struct Series {
    std::string label;
    double value = 0;
    double error = 0;  // whisker half-length
};

/// Bar chart with error whiskers; mirrors the paper-style method summaries.
inline void save_bar_chart(const std::string& path, const std::string& title,
                           const std::vector<Series>& series, const std::string& y_label) {
    const int W = 860, H = 560;
    Image img(W, H, 3, 1.f);
    const int left = 90, right = 30, top = 60, bottom = 80;
    const int plot_w = W - left - right, plot_h = H - top - bottom;
    double vmax = 1e-9;
    for (const auto& s : series) vmax = std::max(vmax, s.value + s.error);
    vmax *= 1.15;
    // axes
    fill_rect(img, left, top, left + 1, top + plot_h, 0.f);
    fill_rect(img, left, top + plot_h, left + plot_w, top + plot_h + 1, 0.f);
    draw_text(img, left, 20, title, 0.f, 2);
    draw_text(img, 8, top - 20, y_label, 0.f, 1);
    // y ticks
    for (int t = 0; t <= 4; ++t) {
        const double val = vmax * t / 4;
        const int y = top + plot_h - static_cast<int>(plot_h * t / 4.0);
        fill_rect(img, left - 4, y, left, y, 0.f);
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.3g", val);
        draw_text(img, 10, y - 3, buf, 0.f, 1);
    }
    const int n = static_cast<int>(series.size());
    if (n == 0) {
        save_png(path, img);
        return;
    }
    const int slot = plot_w / n;
    const int bar_w = std::max(8, slot * 3 / 5);
    for (int i = 0; i < n; ++i) {
        const auto& s = series[i];
        const int cx = left + slot * i + slot / 2;
        const int h = static_cast<int>(plot_h * (s.value / vmax));
        const int y0 = top + plot_h - h;
        fill_rect(img, cx - bar_w / 2, y0, cx + bar_w / 2, top + plot_h - 1, 0.55f);
        if (s.error > 0) {
            const int e = static_cast<int>(plot_h * (s.error / vmax));
            fill_rect(img, cx, std::max(top, y0 - e), cx, std::min(top + plot_h, y0 + e), 0.f);
            fill_rect(img, cx - 5, std::max(top, y0 - e), cx + 5, std::max(top, y0 - e), 0.f);
            fill_rect(img, cx - 5, std::min(top + plot_h, y0 + e), cx + 5,
                      std::min(top + plot_h, y0 + e), 0.f);
        }
        // value dot marker
        fill_rect(img, cx - 2, y0 - 2, cx + 2, y0 + 2, 0.f);
        char buf[48];
        std::snprintf(buf, sizeof(buf), "%.3g", s.value);
        draw_text(img, cx - 3 * static_cast<int>(std::string(buf).size()), y0 - 14, buf, 0.f, 1);
        draw_text(img, cx - 3 * static_cast<int>(s.label.size()), top + plot_h + 12, s.label,
                  0.f, 1);
    }
    save_png(path, img);
}

}  // namespace plot
}  // namespace deflectrack
