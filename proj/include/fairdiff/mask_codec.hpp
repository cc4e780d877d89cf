#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <deque>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "fairdiff/image.hpp"

namespace fairdiff {

struct DegenerateMask : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DecodeFailure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Ordered closed pixel boundary of one region.
struct Contour {
    std::vector<std::array<int, 2>> pixels;  // (x, y)
    uint8_t label = CUP;
    double perimeter = 0.0;  // closed polyline length in pixels
};

struct NormRecord {
    double cx = 0.0, cy = 0.0, scale = 1.0;
};

/// N x 3 point set; |z| = z0 with the sign marking the class (+cup, -disc).
struct BoundaryPointCloud {
    std::vector<std::array<double, 3>> pts;
    double z0 = 0.3;
    NormRecord norm;
    std::string group;  // optional provenance tag for sampled clouds

    size_t size() const { return pts.size(); }
};

struct CodecConfig {
    int n_points = 512;
    double z0 = 0.3;
};

namespace codec_detail {

// Moore neighborhood in clockwise screen order starting at West.
inline constexpr int kNbr[8][2] = {{-1, 0}, {-1, -1}, {0, -1}, {1, -1}, {1, 0}, {1, 1}, {0, 1}, {-1, 1}};

struct Grid {
    int w, h;
    std::vector<uint8_t> on;
    bool get(int x, int y) const { return x >= 0 && x < w && y >= 0 && y < h && on[size_t(y) * w + x]; }
};

/// Keep only the largest 8-connected component (ties: first in scan order).
inline void keep_largest_component(Grid& g) {
    std::vector<int> comp(size_t(g.w) * g.h, -1);
    int best = -1;
    size_t best_size = 0;
    int next = 0;
    std::deque<std::pair<int, int>> queue;
    for (int y = 0; y < g.h; ++y)
        for (int x = 0; x < g.w; ++x) {
            if (!g.get(x, y) || comp[size_t(y) * g.w + x] >= 0) continue;
            const int id = next++;
            size_t size = 0;
            queue.push_back({x, y});
            comp[size_t(y) * g.w + x] = id;
            while (!queue.empty()) {
                auto [cx, cy] = queue.front();
                queue.pop_front();
                ++size;
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        const int nx = cx + dx, ny = cy + dy;
                        if (g.get(nx, ny) && comp[size_t(ny) * g.w + nx] < 0) {
                            comp[size_t(ny) * g.w + nx] = id;
                            queue.push_back({nx, ny});
                        }
                    }
            }
            if (size > best_size) {
                best_size = size;
                best = id;
            }
        }
    for (size_t i = 0; i < g.on.size(); ++i)
        if (g.on[i] && comp[i] != best) g.on[i] = 0;
}

/// Moore-neighbor boundary trace with Jacob's stopping criterion.
inline std::vector<std::array<int, 2>> moore_trace(const Grid& g) {
    int sx = -1, sy = -1;
    for (int y = 0; y < g.h && sx < 0; ++y)
        for (int x = 0; x < g.w; ++x)
            if (g.on[size_t(y) * g.w + x]) {
                sx = x;
                sy = y;
                break;
            }
    if (sx < 0) return {};
    std::vector<std::array<int, 2>> out{{sx, sy}};
    // backtrack starts at the West neighbor (background by scan order)
    int bdir0 = 0;
    int cx = sx, cy = sy, bdir = bdir0;
    const size_t guard = 4 * g.on.size() + 16;
    for (size_t iter = 0; iter < guard; ++iter) {
        int found = -1;
        for (int k = 1; k <= 8; ++k) {
            const int d = (bdir + k) % 8;
            if (g.get(cx + kNbr[d][0], cy + kNbr[d][1])) {
                found = d;
                break;
            }
        }
        if (found < 0) return out;  // isolated pixel
        // new backtrack: position we examined just before the hit, as seen
        // from the pixel we are moving to
        const int px = cx + kNbr[(found + 7) % 8][0];
        const int py = cy + kNbr[(found + 7) % 8][1];
        cx += kNbr[found][0];
        cy += kNbr[found][1];
        int nb = 0;
        for (int d = 0; d < 8; ++d)
            if (cx + kNbr[d][0] == px && cy + kNbr[d][1] == py) {
                nb = d;
                break;
            }
        bdir = nb;
        if (cx == sx && cy == sy && bdir == bdir0) break;
        out.push_back({cx, cy});
    }
    return out;
}

inline double closed_perimeter(const std::vector<std::array<int, 2>>& px) {
    if (px.size() < 2) return 0.0;
    double len = 0.0;
    for (size_t i = 0; i < px.size(); ++i) {
        const auto& a = px[i];
        const auto& b = px[(i + 1) % px.size()];
        len += std::hypot(double(b[0] - a[0]), double(b[1] - a[1]));
    }
    return len;
}

/// Enforce counterclockwise order (positive shoelace area with y up).
inline void orient_ccw(std::vector<std::array<int, 2>>& px) {
    if (px.size() < 3) return;
    double area2 = 0.0;
    for (size_t i = 0; i < px.size(); ++i) {
        const auto& a = px[i];
        const auto& b = px[(i + 1) % px.size()];
        area2 += double(a[0]) * double(-b[1]) - double(b[0]) * double(-a[1]);
    }
    if (area2 < 0.0) std::reverse(px.begin() + 1, px.end());
}

}  // namespace codec_detail

/// Boundaries of the cup region and of the whole disc region (disc|cup).
/// The largest connected component per class is traced; smaller islands are
/// dropped. Out-of-bounds counts as background, so a region touching the
/// image border is traced along it.
inline std::pair<Contour, Contour> extract_boundaries(const MaskImage& mask) {
    using namespace codec_detail;
    Grid cup{mask.width, mask.height, {}};
    Grid disc{mask.width, mask.height, {}};
    cup.on.resize(mask.labels.size());
    disc.on.resize(mask.labels.size());
    size_t n_cup = 0, n_disc = 0;
    for (size_t i = 0; i < mask.labels.size(); ++i) {
        cup.on[i] = mask.labels[i] == CUP;
        disc.on[i] = mask.labels[i] == CUP || mask.labels[i] == DISC;
        n_cup += cup.on[i];
        n_disc += disc.on[i];
    }
    if (n_cup == 0) throw DegenerateMask("degenerate mask: no cup pixels");
    if (n_disc == 0) throw DegenerateMask("degenerate mask: no disc or cup pixels");
    keep_largest_component(cup);
    keep_largest_component(disc);

    auto make = [](const Grid& g, uint8_t label) {
        Contour c;
        c.pixels = moore_trace(g);
        c.label = label;
        orient_ccw(c.pixels);
        c.perimeter = closed_perimeter(c.pixels);
        return c;
    };
    return {make(cup, CUP), make(disc, DISC)};
}

/// Place n_points/2 points at arc-length-uniform positions along each
/// contour; cup points get z=+z0, disc points z=-z0. Coordinates are pixel
/// centers (x+0.5, y+0.5) in raw pixel units; call normalize_cloud next.
/// Returns true in .second when a contour was shorter than its sample count
/// (positions may repeat).
inline std::pair<BoundaryPointCloud, bool> sample_point_cloud_raw(const Contour& cup, const Contour& disc, int n_points,
                                                                  double z0) {
    if (n_points < 6 || n_points % 2 != 0)
        throw std::invalid_argument("sample_point_cloud: n_points must be even and >= 6");
    if (cup.pixels.empty() || disc.pixels.empty())
        throw std::invalid_argument("sample_point_cloud: both classes must be present");
    const int per_class = n_points / 2;
    bool warned = false;

    BoundaryPointCloud cloud;
    cloud.z0 = z0;
    cloud.pts.reserve(size_t(n_points));
    for (const Contour* c : {&cup, &disc}) {
        const double z = c->label == CUP ? z0 : -z0;
        const auto& px = c->pixels;
        if (int(px.size()) < per_class) warned = true;
        std::vector<double> seg(px.size());
        double total = 0.0;
        for (size_t i = 0; i < px.size(); ++i) {
            const auto& a = px[i];
            const auto& b = px[(i + 1) % px.size()];
            seg[i] = std::hypot(double(b[0] - a[0]), double(b[1] - a[1]));
            total += seg[i];
        }
        size_t si = 0;
        double consumed = 0.0;
        for (int j = 0; j < per_class; ++j) {
            if (total <= 0.0) {
                cloud.pts.push_back({px[0][0] + 0.5, px[0][1] + 0.5, z});
                continue;
            }
            const double target = total * double(j) / double(per_class);
            while (si < px.size() && consumed + seg[si] < target) consumed += seg[si++];
            const size_t i0 = std::min(si, px.size() - 1);
            const auto& a = px[i0];
            const auto& b = px[(i0 + 1) % px.size()];
            const double t = seg[i0] > 0.0 ? (target - consumed) / seg[i0] : 0.0;
            cloud.pts.push_back({a[0] + t * (b[0] - a[0]) + 0.5, a[1] + t * (b[1] - a[1]) + 0.5, z});
        }
    }
    return {cloud, warned};
}

/// Center xy on the joint centroid and scale isotropically so that
/// max |coordinate| becomes exactly 1; z is untouched.
inline BoundaryPointCloud normalize_cloud(const BoundaryPointCloud& raw) {
    if (raw.pts.empty()) throw std::invalid_argument("normalize_cloud: empty cloud");
    BoundaryPointCloud out = raw;
    double cx = 0.0, cy = 0.0;
    for (const auto& p : raw.pts) {
        cx += p[0];
        cy += p[1];
    }
    cx /= double(raw.pts.size());
    cy /= double(raw.pts.size());
    double scale = 0.0;
    for (const auto& p : raw.pts) scale = std::max({scale, std::fabs(p[0] - cx), std::fabs(p[1] - cy)});
    if (scale <= 0.0) throw std::invalid_argument("normalize_cloud: zero spatial extent");
    for (auto& p : out.pts) {
        p[0] = (p[0] - cx) / scale;
        p[1] = (p[1] - cy) / scale;
    }
    out.norm = {cx, cy, scale};
    return out;
}

inline BoundaryPointCloud denormalize_cloud(const BoundaryPointCloud& cloud) {
    BoundaryPointCloud out = cloud;
    for (auto& p : out.pts) {
        p[0] = p[0] * cloud.norm.scale + cloud.norm.cx;
        p[1] = p[1] * cloud.norm.scale + cloud.norm.cy;
    }
    out.norm = {0.0, 0.0, 1.0};
    return out;
}

/// Mask -> normalized boundary point cloud (the full encoding path).
inline BoundaryPointCloud encode_mask(const MaskImage& mask, const CodecConfig& cfg = {}) {
    const auto [cup, disc] = extract_boundaries(mask);
    return normalize_cloud(sample_point_cloud_raw(cup, disc, cfg.n_points, cfg.z0).first);
}

namespace codec_detail {

/// Even-odd scanline fill of a polygon over pixel centers (x+0.5, y+0.5).
inline std::vector<uint8_t> fill_polygon(const std::vector<std::array<double, 2>>& poly, int w, int h) {
    std::vector<uint8_t> out(size_t(w) * h, 0);
    if (poly.size() < 3) return out;
    std::vector<double> xs;
    for (int y = 0; y < h; ++y) {
        const double yc = y + 0.5;
        xs.clear();
        for (size_t i = 0; i < poly.size(); ++i) {
            const auto& a = poly[i];
            const auto& b = poly[(i + 1) % poly.size()];
            if ((a[1] <= yc && yc < b[1]) || (b[1] <= yc && yc < a[1]))
                xs.push_back(a[0] + (yc - a[1]) * (b[0] - a[0]) / (b[1] - a[1]));
        }
        std::sort(xs.begin(), xs.end());
        for (size_t k = 0; k + 1 < xs.size(); k += 2) {
            int x0 = int(std::ceil(xs[k] - 0.5));
            int x1 = int(std::ceil(xs[k + 1] - 0.5)) - 1;
            x0 = std::max(x0, 0);
            x1 = std::min(x1, w - 1);
            for (int x = x0; x <= x1; ++x) out[size_t(y) * w + x] = 1;
        }
    }
    return out;
}

/// Points ordered by angle about their centroid and pushed half a pixel
/// outward (boundary samples sit at pixel centers; the region edge lies half
/// a pixel further out).
inline std::vector<std::array<double, 2>> angular_polygon(const std::vector<std::array<double, 2>>& pts,
                                                          double outward = 0.5) {
    double cx = 0.0, cy = 0.0;
    for (const auto& p : pts) {
        cx += p[0];
        cy += p[1];
    }
    cx /= double(pts.size());
    cy /= double(pts.size());
    struct Entry {
        double angle, radius;
        size_t idx;
    };
    std::vector<Entry> order(pts.size());
    for (size_t i = 0; i < pts.size(); ++i) {
        const double dx = pts[i][0] - cx, dy = pts[i][1] - cy;
        order[i] = {std::atan2(dy, dx), std::hypot(dx, dy), i};
    }
    std::sort(order.begin(), order.end(), [](const Entry& a, const Entry& b) {
        if (a.angle != b.angle) return a.angle < b.angle;
        if (a.radius != b.radius) return a.radius < b.radius;
        return a.idx < b.idx;
    });
    std::vector<std::array<double, 2>> poly(pts.size());
    for (size_t i = 0; i < pts.size(); ++i) {
        const auto& p = pts[order[i].idx];
        const double r = order[i].radius;
        const double push = r > 1e-9 ? (r + outward) / r : 1.0;
        poly[i] = {cx + (p[0] - cx) * push, cy + (p[1] - cy) * push};
    }
    return poly;
}

}  // namespace codec_detail

/// Point cloud -> label map. Points are split by sign(z), ordered by angle
/// about their class centroid (cup/disc contours are near star-shaped),
/// rasterized by even-odd scanline fill, and the cup is clipped to the disc.
inline MaskImage decode_point_cloud(const BoundaryPointCloud& cloud, int width, int height) {
    std::vector<std::array<double, 2>> cup_pts, disc_pts;
    for (const auto& p : cloud.pts) {
        const double x = p[0] * cloud.norm.scale + cloud.norm.cx;
        const double y = p[1] * cloud.norm.scale + cloud.norm.cy;
        if (p[2] >= 0.0)
            cup_pts.push_back({x, y});
        else
            disc_pts.push_back({x, y});
    }
    if (cup_pts.size() < 3 || disc_pts.size() < 3)
        throw DecodeFailure("decode: need at least 3 points per class, got cup=" + std::to_string(cup_pts.size()) +
                            " disc=" + std::to_string(disc_pts.size()));
    const auto cup_fill = codec_detail::fill_polygon(codec_detail::angular_polygon(cup_pts), width, height);
    const auto disc_fill = codec_detail::fill_polygon(codec_detail::angular_polygon(disc_pts), width, height);
    MaskImage out(width, height);
    for (size_t i = 0; i < out.labels.size(); ++i) {
        if (disc_fill[i] && cup_fill[i])
            out.labels[i] = CUP;
        else if (disc_fill[i])
            out.labels[i] = DISC;
    }
    return out;
}

// ---- point-cloud file format ----
// line 1: "FPC1 <N> <z0> <cx> <cy> <scale>", then N lines "x y z".

inline void save_fpc(const std::string& path, const BoundaryPointCloud& cloud) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("fpc: cannot open for writing: " + path);
    char buf[256];
    std::snprintf(buf, sizeof buf, "FPC1 %zu %.17g %.17g %.17g %.17g\n", cloud.pts.size(), cloud.z0, cloud.norm.cx,
                  cloud.norm.cy, cloud.norm.scale);
    os << buf;
    for (const auto& p : cloud.pts) {
        std::snprintf(buf, sizeof buf, "%.17g %.17g %.17g\n", p[0], p[1], p[2]);
        os << buf;
    }
    if (!os) throw std::runtime_error("fpc: write failed: " + path);
}

inline BoundaryPointCloud load_fpc(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("fpc: cannot open: " + path);
    std::string magic;
    size_t n = 0;
    BoundaryPointCloud cloud;
    if (!(is >> magic >> n >> cloud.z0 >> cloud.norm.cx >> cloud.norm.cy >> cloud.norm.scale) || magic != "FPC1")
        throw std::runtime_error("fpc: bad header in " + path);
    cloud.pts.resize(n);
    for (size_t i = 0; i < n; ++i)
        if (!(is >> cloud.pts[i][0] >> cloud.pts[i][1] >> cloud.pts[i][2]))
            throw std::runtime_error("fpc: truncated point list in " + path);
    for (const auto& p : cloud.pts)
        for (double c : p)
            if (!std::isfinite(c)) throw std::runtime_error("fpc: non-finite coordinate in " + path);
    return cloud;
}

}  // namespace fairdiff
