#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "fairdiff/png_io.hpp"
#include "fairdiff/tensor.hpp"

namespace fairdiff {

enum Label : uint8_t { BACKGROUND = 0, DISC = 1, CUP = 2 };

/// 2-D label map over {background, disc, cup}. Disc pixels are the rim
/// (disc region excluding the cup); the anatomical disc region is DISC|CUP.
struct MaskImage {
    int width = 0, height = 0;
    std::vector<uint8_t> labels;

    MaskImage() = default;
    MaskImage(int w, int h) : width(w), height(h), labels(size_t(w) * h, BACKGROUND) {}

    uint8_t& at(int x, int y) { return labels[size_t(y) * width + x]; }
    uint8_t at(int x, int y) const { return labels[size_t(y) * width + x]; }

    size_t count(uint8_t label) const {
        size_t n = 0;
        for (uint8_t l : labels) n += (l == label);
        return n;
    }

    bool same_size(const MaskImage& o) const { return width == o.width && height == o.height; }
};

// Mask PNG convention: 0 background, 128 disc, 255 cup; exact values enforced.
inline MaskImage load_mask_png(const std::string& path) {
    const GrayImage8 img = read_gray_png(path);
    MaskImage m(img.width, img.height);
    for (size_t i = 0; i < img.pixels.size(); ++i) {
        switch (img.pixels[i]) {
            case 0: m.labels[i] = BACKGROUND; break;
            case 128: m.labels[i] = DISC; break;
            case 255: m.labels[i] = CUP; break;
            default:
                throw std::runtime_error("mask png: " + path + " has pixel value " + std::to_string(int(img.pixels[i])) +
                                         "; only 0/128/255 are valid");
        }
    }
    return m;
}

inline void save_mask_png(const std::string& path, const MaskImage& m) {
    GrayImage8 img;
    img.width = m.width;
    img.height = m.height;
    img.pixels.resize(m.labels.size());
    for (size_t i = 0; i < m.labels.size(); ++i)
        img.pixels[i] = m.labels[i] == CUP ? 255 : (m.labels[i] == DISC ? 128 : 0);
    write_gray_png(path, img);
}

/// Grayscale raster with values in [0,1].
struct ToyImage {
    int width = 0, height = 0;
    std::vector<double> pixels;

    ToyImage() = default;
    ToyImage(int w, int h) : width(w), height(h), pixels(size_t(w) * h, 0.0) {}

    double& at(int x, int y) { return pixels[size_t(y) * width + x]; }
    double at(int x, int y) const { return pixels[size_t(y) * width + x]; }

    Tensor to_tensor() const { return Tensor({1, size_t(height), size_t(width)}, pixels); }

    static ToyImage from_tensor(const Tensor& t) {
        if (t.rank() != 3 || t.shape[0] != 1) throw std::invalid_argument("toy image: tensor must be (1,H,W)");
        ToyImage img(int(t.shape[2]), int(t.shape[1]));
        img.pixels = t.v;
        return img;
    }

    void clamp01() {
        for (double& p : pixels) p = p < 0.0 ? 0.0 : (p > 1.0 ? 1.0 : p);
    }
};

inline ToyImage load_toy_png(const std::string& path) {
    const GrayImage8 img = read_gray_png(path);
    ToyImage t(img.width, img.height);
    for (size_t i = 0; i < img.pixels.size(); ++i) t.pixels[i] = img.pixels[i] / 255.0;
    return t;
}

inline void save_toy_png(const std::string& path, const ToyImage& t) {
    GrayImage8 img;
    img.width = t.width;
    img.height = t.height;
    img.pixels.resize(t.pixels.size());
    for (size_t i = 0; i < t.pixels.size(); ++i) {
        const double p = t.pixels[i] < 0.0 ? 0.0 : (t.pixels[i] > 1.0 ? 1.0 : t.pixels[i]);
        img.pixels[i] = uint8_t(std::lround(p * 255.0));
    }
    write_gray_png(path, img);
}

/// One-hot (3,H,W) encoding of a mask for network conditioning.
inline Tensor mask_onehot(const MaskImage& m) {
    Tensor t({3, size_t(m.height), size_t(m.width)});
    const size_t P = size_t(m.height) * m.width;
    for (size_t i = 0; i < P; ++i) t.v[size_t(m.labels[i]) * P + i] = 1.0;
    return t;
}

}  // namespace fairdiff
