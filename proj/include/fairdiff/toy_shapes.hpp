#pragma once

#include <cmath>
#include <stdexcept>

#include "fairdiff/image.hpp"
#include "fairdiff/rng.hpp"

namespace fairdiff {

/// One cup-inside-disc ellipse pair in relative units of min(W,H).
struct EllipsePair {
    double cx, cy;          // disc center, relative
    double ra, rb;          // disc semi-axes, relative
    double theta;           // disc rotation
    double area_ratio;      // cup area / disc area
    double cup_dx, cup_dy;  // cup center offset, relative
    double cup_theta;
};

/// Distribution over ellipse pairs for one group's shape family.
struct ShapeFamily {
    double ratio_mean = 0.45;   // cup/disc area ratio
    double ratio_sd = 0.05;
    double disc_r_mean = 0.27;  // disc mean semi-axis, relative to min(W,H)
    double disc_r_sd = 0.02;
    double ecc_sd = 0.08;       // axis asymmetry
    double center_jitter = 0.04;
};

inline EllipsePair draw_ellipse_pair(const ShapeFamily& fam, Rng& rng) {
    if (fam.ratio_mean >= 1.0 || fam.ratio_mean <= 0.0)
        throw std::invalid_argument("shape family: cup/disc area ratio must lie in (0,1)");
    EllipsePair e;
    e.cx = 0.5 + rng.normal(0.0, fam.center_jitter);
    e.cy = 0.5 + rng.normal(0.0, fam.center_jitter);
    const double r = std::max(0.08, rng.normal(fam.disc_r_mean, fam.disc_r_sd));
    const double ecc = std::exp(rng.normal(0.0, fam.ecc_sd));
    e.ra = r * ecc;
    e.rb = r / ecc;
    e.theta = rng.uniform(0.0, 3.14159265358979323846);
    e.area_ratio = std::min(0.92, std::max(0.05, rng.normal(fam.ratio_mean, fam.ratio_sd)));
    // keep the cup strictly inside the disc
    const double slack = (1.0 - std::sqrt(e.area_ratio)) * std::min(e.ra, e.rb);
    e.cup_dx = rng.normal(0.0, slack * 0.2);
    e.cup_dy = rng.normal(0.0, slack * 0.2);
    e.cup_theta = e.theta;
    return e;
}

inline MaskImage render_ellipse_pair(const EllipsePair& e, int width, int height) {
    MaskImage m(width, height);
    const double s = double(std::min(width, height));
    const double k = std::sqrt(e.area_ratio);
    auto inside = [](double px, double py, double cx, double cy, double ra, double rb, double th) {
        const double dx = px - cx, dy = py - cy;
        const double u = dx * std::cos(th) + dy * std::sin(th);
        const double v = -dx * std::sin(th) + dy * std::cos(th);
        return (u * u) / (ra * ra) + (v * v) / (rb * rb) <= 1.0;
    };
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
            const double px = (x + 0.5) / s, py = (y + 0.5) / s;
            const bool in_disc = inside(px, py, e.cx, e.cy, e.ra, e.rb, e.theta);
            if (!in_disc) continue;
            const bool in_cup = inside(px, py, e.cx + e.cup_dx, e.cy + e.cup_dy, e.ra * k, e.rb * k, e.cup_theta);
            m.at(x, y) = in_cup ? CUP : DISC;
        }
    return m;
}

inline MaskImage random_ellipse_pair_mask(const ShapeFamily& fam, int width, int height, Rng& rng) {
    return render_ellipse_pair(draw_ellipse_pair(fam, rng), width, height);
}

}  // namespace fairdiff
