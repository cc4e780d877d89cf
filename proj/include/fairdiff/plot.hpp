#pragma once

#include <algorithm>
#include <cctype>
#include <string>
#include <vector>

#include "fairdiff/png_io.hpp"

namespace fairdiff {

namespace plot_detail {

// 5x7 glyphs for the characters bar charts need; one row per byte, low 5 bits.
inline const uint8_t* glyph(char c) {
    static const uint8_t digits[10][7] = {
        {0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E}, {0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E},
        {0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F}, {0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E},
        {0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02}, {0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E},
        {0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E}, {0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08},
        {0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E}, {0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C}};
    static const uint8_t letters[26][7] = {
        {0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11}, {0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E},
        {0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E}, {0x1C, 0x12, 0x11, 0x11, 0x11, 0x12, 0x1C},
        {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F}, {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10},
        {0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F}, {0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11},
        {0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E}, {0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C},
        {0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11}, {0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F},
        {0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11}, {0x11, 0x19, 0x15, 0x13, 0x11, 0x11, 0x11},
        {0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}, {0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10},
        {0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D}, {0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11},
        {0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E}, {0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04},
        {0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}, {0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04},
        {0x11, 0x11, 0x11, 0x15, 0x15, 0x1B, 0x11}, {0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11},
        {0x11, 0x11, 0x11, 0x0A, 0x04, 0x04, 0x04}, {0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F}};
    static const uint8_t dot[7] = {0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C};
    static const uint8_t dash[7] = {0x00, 0x00, 0x00, 0x1F, 0x00, 0x00, 0x00};
    static const uint8_t uscore[7] = {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x1F};
    static const uint8_t blank[7] = {0, 0, 0, 0, 0, 0, 0};
    if (c >= '0' && c <= '9') return digits[c - '0'];
    const char up = char(std::toupper(static_cast<unsigned char>(c)));
    if (up >= 'A' && up <= 'Z') return letters[up - 'A'];
    if (c == '.') return dot;
    if (c == '-') return dash;
    if (c == '_') return uscore;
    return blank;
}

inline void draw_text(GrayImage8& img, int x, int y, const std::string& text, uint8_t color) {
    for (size_t i = 0; i < text.size(); ++i) {
        const uint8_t* g = glyph(text[i]);
        for (int gy = 0; gy < 7; ++gy)
            for (int gx = 0; gx < 5; ++gx)
                if (g[gy] & (1 << (4 - gx))) {
                    const int px = x + int(i) * 6 + gx, py = y + gy;
                    if (px >= 0 && px < img.width && py >= 0 && py < img.height)
                        img.pixels[size_t(py) * img.width + px] = color;
                }
    }
}

inline void fill_rect(GrayImage8& img, int x0, int y0, int x1, int y1, uint8_t color) {
    x0 = std::max(0, x0);
    y0 = std::max(0, y0);
    x1 = std::min(img.width - 1, x1);
    y1 = std::min(img.height - 1, y1);
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) img.pixels[size_t(y) * img.width + x] = color;
}

}  // namespace plot_detail

/// Grayscale bar chart over [0,1] values with per-bar labels and printed
/// values; written as an 8-bit PNG.
inline void write_bar_chart(const std::string& path, const std::string& title,
                            const std::vector<std::pair<std::string, double>>& bars) {
    using namespace plot_detail;
    const int bar_w = 46, gap = 18, margin = 34, plot_h = 150;
    const int width = std::max(220, margin * 2 + int(bars.size()) * (bar_w + gap));
    const int height = plot_h + 70;
    GrayImage8 img;
    img.width = width;
    img.height = height;
    img.pixels.assign(size_t(width) * height, 255);

    draw_text(img, margin, 6, title, 0);
    const int base_y = plot_h + 24;
    fill_rect(img, margin - 4, base_y, width - margin + 4, base_y, 0);          // x axis
    fill_rect(img, margin - 4, base_y - plot_h, margin - 4, base_y, 0);        // y axis
    for (int tick = 0; tick <= 4; ++tick) {
        const int ty = base_y - tick * plot_h / 4;
        fill_rect(img, margin - 7, ty, margin - 4, ty, 0);
        char label[8];
        std::snprintf(label, sizeof label, "%.2f", tick * 0.25);
        draw_text(img, 2, ty - 3, label, 0);
    }
    for (size_t i = 0; i < bars.size(); ++i) {
        const double v = std::clamp(bars[i].second, 0.0, 1.0);
        const int x0 = margin + int(i) * (bar_w + gap);
        const int h = int(v * plot_h + 0.5);
        fill_rect(img, x0, base_y - h, x0 + bar_w, base_y - 1, uint8_t(120 + 40 * (i % 2)));
        char value[16];
        std::snprintf(value, sizeof value, "%.3f", bars[i].second);
        draw_text(img, x0, base_y - h - 12, value, 0);
        draw_text(img, x0, base_y + 6, bars[i].first.substr(0, 8), 0);
    }
    write_gray_png(path, img);
}

}  // namespace fairdiff
