#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <limits>

#include "fairdiff/image.hpp"
#include "fairdiff/rng.hpp"

namespace fairdiff {

// ---- segmentation metrics ----

/// Dice = 2|A∩B| / (|A|+|B|); both-empty convention 1.0.
inline double dice(const MaskImage& pred, const MaskImage& gt, uint8_t cls) {
    if (!pred.same_size(gt)) throw std::invalid_argument("dice: mask dimensions differ");
    size_t inter = 0, a = 0, b = 0;
    for (size_t i = 0; i < pred.labels.size(); ++i) {
        const bool pa = pred.labels[i] == cls, pb = gt.labels[i] == cls;
        inter += pa && pb;
        a += pa;
        b += pb;
    }
    if (a + b == 0) return 1.0;
    return 2.0 * double(inter) / double(a + b);
}

/// IoU = |A∩B| / |A∪B|; both-empty convention 1.0.
inline double iou(const MaskImage& pred, const MaskImage& gt, uint8_t cls) {
    if (!pred.same_size(gt)) throw std::invalid_argument("iou: mask dimensions differ");
    size_t inter = 0, uni = 0;
    for (size_t i = 0; i < pred.labels.size(); ++i) {
        const bool pa = pred.labels[i] == cls, pb = gt.labels[i] == cls;
        inter += pa && pb;
        uni += pa || pb;
    }
    if (uni == 0) return 1.0;
    return double(inter) / double(uni);
}

// ---- group statistics, ESSP (equity-scaled performance), fairness ----

struct GroupStats {
    std::map<std::string, double> group_mean;  // per-group unweighted mean
    std::map<std::string, size_t> group_n;
    double overall = 0.0;   // mean over all samples
    double stdev = 0.0;     // population stdev over the group means
    double variance = 0.0;  // population variance over the group means
};

/// Group means are unweighted means over each group's samples; the spread is
/// the population statistic over the vector of group means.
inline GroupStats group_stats(const std::vector<std::pair<double, std::string>>& scored) {
    if (scored.empty()) throw std::invalid_argument("group_stats: no samples");
    GroupStats out;
    std::map<std::string, double> sums;
    for (const auto& [score, group] : scored) {
        sums[group] += score;
        out.group_n[group] += 1;
        out.overall += score;
    }
    out.overall /= double(scored.size());
    for (const auto& [g, s] : sums) out.group_mean[g] = s / double(out.group_n[g]);
    double mean_of_means = 0.0;
    for (const auto& [g, m] : out.group_mean) mean_of_means += m;
    mean_of_means /= double(out.group_mean.size());
    for (const auto& [g, m] : out.group_mean) out.variance += (m - mean_of_means) * (m - mean_of_means);
    out.variance /= double(out.group_mean.size());
    out.stdev = std::sqrt(out.variance);
    return out;
}

/// Equity-scaled performance: L / (1 + stdev).
inline double essp(double overall, double stdev) {
    if (stdev < 0.0) throw std::invalid_argument("essp: stdev must be >= 0");
    return overall / (1.0 + stdev);
}

/// Negated sum over attributes of the group-mean variance; 0 is perfectly fair.
inline double fairness(const std::vector<double>& attribute_variances) {
    if (attribute_variances.empty()) throw std::invalid_argument("fairness: need at least one attribute");
    double s = 0.0;
    for (double v : attribute_variances) s += v;
    return -s;
}

// ---- synthesis-quality metrics ----

/// Fixed-width feature vectors with provenance.
struct FeatureSet {
    size_t dim = 0;
    std::vector<std::vector<double>> rows;
    std::string provenance;    // "real" | "synthetic"
    std::string extractor_id;

    void add(std::vector<double> row) {
        if (dim == 0) dim = row.size();
        if (row.size() != dim) throw std::invalid_argument("feature set: inconsistent vector width");
        rows.push_back(std::move(row));
    }
    size_t size() const { return rows.size(); }
};

/// Cosine dissimilarity scaled to [0,1]: D = (1 - cos) / 2.
inline double cosine_distance(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw std::invalid_argument("cosine_distance: width mismatch");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na <= 0.0 || nb <= 0.0) throw std::invalid_argument("cosine_distance: zero-norm vector");
    return (1.0 - dot / std::sqrt(na * nb)) / 2.0;
}

/// Mean over generated samples of the distance to the nearest real sample.
inline double mmd(const FeatureSet& generated, const FeatureSet& real) {
    if (generated.rows.empty() || real.rows.empty()) throw std::invalid_argument("mmd: empty feature set");
    double total = 0.0;
    for (const auto& g : generated.rows) {
        double best = std::numeric_limits<double>::infinity();
        for (const auto& r : real.rows) best = std::min(best, cosine_distance(g, r));
        total += best;
    }
    return total / double(generated.rows.size());
}

/// Fraction of real samples that are some generated sample's nearest
/// neighbour; argmin ties break to the lowest index.
inline double cov(const FeatureSet& generated, const FeatureSet& real) {
    if (generated.rows.empty() || real.rows.empty()) throw std::invalid_argument("cov: empty feature set");
    std::set<size_t> matched;
    for (const auto& g : generated.rows) {
        size_t arg = 0;
        double best = std::numeric_limits<double>::infinity();
        for (size_t i = 0; i < real.rows.size(); ++i) {
            const double d = cosine_distance(g, real.rows[i]);
            if (d < best) {
                best = d;
                arg = i;
            }
        }
        matched.insert(arg);
    }
    return double(matched.size()) / double(real.rows.size());
}

// ---- symmetric eigendecomposition (cyclic Jacobi) and FID ----

/// Eigen-decompose a symmetric d x d matrix (row-major). Returns eigenvalues
/// ascending; V's columns are the matching eigenvectors.
inline void symmetric_eigen(std::vector<double> a, size_t d, std::vector<double>& eigvals, std::vector<double>& V) {
    V.assign(d * d, 0.0);
    for (size_t i = 0; i < d; ++i) V[i * d + i] = 1.0;
    for (int sweep = 0; sweep < 200; ++sweep) {
        double off = 0.0;
        for (size_t p = 0; p < d; ++p)
            for (size_t q = p + 1; q < d; ++q) off += a[p * d + q] * a[p * d + q];
        if (off < 1e-24) break;
        for (size_t p = 0; p < d; ++p)
            for (size_t q = p + 1; q < d; ++q) {
                const double apq = a[p * d + q];
                if (std::fabs(apq) < 1e-300) continue;
                const double theta = (a[q * d + q] - a[p * d + p]) / (2.0 * apq);
                const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (size_t k = 0; k < d; ++k) {
                    const double akp = a[k * d + p], akq = a[k * d + q];
                    a[k * d + p] = c * akp - s * akq;
                    a[k * d + q] = s * akp + c * akq;
                }
                for (size_t k = 0; k < d; ++k) {
                    const double apk = a[p * d + k], aqk = a[q * d + k];
                    a[p * d + k] = c * apk - s * aqk;
                    a[q * d + k] = s * apk + c * aqk;
                }
                for (size_t k = 0; k < d; ++k) {
                    const double vkp = V[k * d + p], vkq = V[k * d + q];
                    V[k * d + p] = c * vkp - s * vkq;
                    V[k * d + q] = s * vkp + c * vkq;
                }
            }
    }
    eigvals.resize(d);
    for (size_t i = 0; i < d; ++i) eigvals[i] = a[i * d + i];
    // sort ascending with matching eigenvector columns
    std::vector<size_t> order(d);
    for (size_t i = 0; i < d; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](size_t x, size_t y) { return eigvals[x] < eigvals[y]; });
    std::vector<double> ev(d), Vn(d * d);
    for (size_t j = 0; j < d; ++j) {
        ev[j] = eigvals[order[j]];
        for (size_t i = 0; i < d; ++i) Vn[i * d + j] = V[i * d + order[j]];
    }
    eigvals = std::move(ev);
    V = std::move(Vn);
}

namespace metric_detail {

struct Gaussian {
    std::vector<double> mean;
    std::vector<double> cov;  // d x d, population (divide by n)
};

inline Gaussian fit_gaussian(const FeatureSet& fs) {
    const size_t n = fs.rows.size(), d = fs.dim;
    Gaussian g;
    g.mean.assign(d, 0.0);
    g.cov.assign(d * d, 0.0);
    for (const auto& r : fs.rows)
        for (size_t i = 0; i < d; ++i) g.mean[i] += r[i];
    for (size_t i = 0; i < d; ++i) g.mean[i] /= double(n);
    for (const auto& r : fs.rows)
        for (size_t i = 0; i < d; ++i)
            for (size_t j = 0; j < d; ++j) g.cov[i * d + j] += (r[i] - g.mean[i]) * (r[j] - g.mean[j]);
    for (double& c : g.cov) c /= double(n);
    return g;
}

/// B = sqrt(A) for symmetric positive semidefinite A; tiny negative
/// eigenvalues are clamped to zero.
inline std::vector<double> sym_sqrt(const std::vector<double>& a, size_t d) {
    std::vector<double> ev, V;
    symmetric_eigen(a, d, ev, V);
    std::vector<double> out(d * d, 0.0);
    for (size_t k = 0; k < d; ++k) {
        const double lam = ev[k] > 0.0 ? std::sqrt(ev[k]) : 0.0;
        for (size_t i = 0; i < d; ++i)
            for (size_t j = 0; j < d; ++j) out[i * d + j] += lam * V[i * d + k] * V[j * d + k];
    }
    return out;
}

inline std::vector<double> matmul_sq(const std::vector<double>& a, const std::vector<double>& b, size_t d) {
    std::vector<double> c(d * d, 0.0);
    for (size_t i = 0; i < d; ++i)
        for (size_t k = 0; k < d; ++k) {
            const double av = a[i * d + k];
            for (size_t j = 0; j < d; ++j) c[i * d + j] += av * b[k * d + j];
        }
    return c;
}

}  // namespace metric_detail

/// Fréchet distance between Gaussian fits of the two feature sets:
/// ||mu_r - mu_s||^2 + Tr(S_r + S_s - 2 (S_r S_s)^{1/2}), with the matrix
/// square root evaluated through sqrt(S_r)^T S_s sqrt(S_r). Ill-conditioned
/// covariances are regularized with 1e-6 I (reported through `warned`).
inline double fid(const FeatureSet& real, const FeatureSet& synthetic, bool* warned = nullptr) {
    if (real.rows.empty() || synthetic.rows.empty()) throw std::invalid_argument("fid: empty feature set");
    if (real.dim != synthetic.dim) throw std::invalid_argument("fid: feature width mismatch");
    const size_t d = real.dim;
    auto gr = metric_detail::fit_gaussian(real);
    auto gs = metric_detail::fit_gaussian(synthetic);

    auto ill_conditioned = [&](const std::vector<double>& covm) {
        std::vector<double> ev, V;
        symmetric_eigen(covm, d, ev, V);
        return ev.front() < 1e-10 * std::max(1.0, ev.back());
    };
    bool warn = false;
    if (ill_conditioned(gr.cov) || ill_conditioned(gs.cov)) {
        warn = true;
        for (size_t i = 0; i < d; ++i) {
            gr.cov[i * d + i] += 1e-6;
            gs.cov[i * d + i] += 1e-6;
        }
    }
    if (warned) *warned = warn;

    double mean_term = 0.0;
    for (size_t i = 0; i < d; ++i) {
        const double dm = gr.mean[i] - gs.mean[i];
        mean_term += dm * dm;
    }
    const auto r_half = metric_detail::sym_sqrt(gr.cov, d);
    const auto inner = metric_detail::matmul_sq(metric_detail::matmul_sq(r_half, gs.cov, d), r_half, d);
    std::vector<double> ev, V;
    symmetric_eigen(inner, d, ev, V);
    double tr_sqrt = 0.0;
    for (double lam : ev) tr_sqrt += lam > 0.0 ? std::sqrt(lam) : 0.0;
    double tr_r = 0.0, tr_s = 0.0;
    for (size_t i = 0; i < d; ++i) {
        tr_r += gr.cov[i * d + i];
        tr_s += gs.cov[i * d + i];
    }
    return mean_term + tr_r + tr_s - 2.0 * tr_sqrt;
}

// ---- feature extractors ----

using FeatureExtractor = std::function<std::vector<double>(const ToyImage&)>;

/// Raw flattened pixels.
inline FeatureExtractor pixel_extractor() {
    return [](const ToyImage& img) { return img.pixels; };
}

/// Average-pool to 16x16 then apply a fixed seeded Gaussian random projection
/// to `dim` features. Values are only comparable within one extractor id.
inline FeatureExtractor projected_extractor(size_t dim = 32, uint64_t seed = 0x51f05eedULL) {
    return [dim, seed](const ToyImage& img) {
        constexpr int G = 16;
        std::vector<double> pooled(G * G, 0.0);
        std::vector<int> counts(G * G, 0);
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x) {
                const int gy = std::min(G - 1, y * G / img.height);
                const int gx = std::min(G - 1, x * G / img.width);
                pooled[gy * G + gx] += img.at(x, y);
                counts[gy * G + gx] += 1;
            }
        for (int i = 0; i < G * G; ++i)
            if (counts[i]) pooled[i] /= counts[i];
        Rng rng(seed);
        std::vector<double> out(dim, 0.0);
        for (size_t j = 0; j < dim; ++j)
            for (int i = 0; i < G * G; ++i) out[j] += rng.normal() * pooled[i];
        return out;
    };
}

inline FeatureSet extract_features(const std::vector<ToyImage>& images, const FeatureExtractor& extractor,
                                   const std::string& provenance, const std::string& extractor_id) {
    FeatureSet fs;
    fs.provenance = provenance;
    fs.extractor_id = extractor_id;
    for (const auto& img : images) {
        auto row = extractor(img);
        for (double x : row)
            if (!std::isfinite(x)) throw std::runtime_error("feature extraction produced non-finite values");
        fs.add(std::move(row));
    }
    return fs;
}

}  // namespace fairdiff
