#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fairdiff/checkpoint.hpp"
#include "fairdiff/mask_codec.hpp"
#include "fairdiff/nn.hpp"
#include "fairdiff/optim.hpp"
#include "fairdiff/parallel.hpp"
#include "fairdiff/rng.hpp"

namespace fairdiff {

/// Linear variance schedule; alpha_bar is the running product of (1-beta).
struct NoiseSchedule {
    int T = 0;
    std::vector<double> beta;       // beta[t-1] for t in 1..T
    std::vector<double> alpha;      // 1 - beta
    std::vector<double> alpha_bar;  // prod_{s<=t} alpha_s

    double beta_at(int t) const { return beta[size_t(t - 1)]; }
    double alpha_at(int t) const { return alpha[size_t(t - 1)]; }
    double alpha_bar_at(int t) const { return alpha_bar[size_t(t - 1)]; }
};

inline NoiseSchedule make_schedule(int T, double beta_start, double beta_end) {
    if (T < 1) throw std::invalid_argument("make_schedule: T must be >= 1");
    if (!(0.0 < beta_start && beta_start <= beta_end && beta_end < 1.0))
        throw std::invalid_argument("make_schedule: need 0 < beta_start <= beta_end < 1");
    NoiseSchedule s;
    s.T = T;
    s.beta.resize(size_t(T));
    s.alpha.resize(size_t(T));
    s.alpha_bar.resize(size_t(T));
    double prod = 1.0;
    for (int t = 1; t <= T; ++t) {
        const double b = T == 1 ? beta_start : beta_start + (beta_end - beta_start) * double(t - 1) / double(T - 1);
        s.beta[size_t(t - 1)] = b;
        s.alpha[size_t(t - 1)] = 1.0 - b;
        prod *= 1.0 - b;
        s.alpha_bar[size_t(t - 1)] = prod;
    }
    return s;
}

/// Closed-form forward marginal x_t = sqrt(abar_t) x0 + sqrt(1-abar_t) eps.
inline Tensor q_sample(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& sched) {
    if (t < 1 || t > sched.T) throw std::invalid_argument("q_sample: t must lie in [1, T]");
    if (!x0.same_shape(eps)) throw std::invalid_argument("q_sample: noise shape mismatch");
    const double ab = sched.alpha_bar_at(t);
    const double c0 = std::sqrt(ab), c1 = std::sqrt(1.0 - ab);
    Tensor out = x0;
    for (size_t i = 0; i < out.numel(); ++i) out.v[i] = c0 * x0.v[i] + c1 * eps.v[i];
    return out;
}

/// Latent conditioning vector for the denoiser.
struct ShapeLatent {
    enum class Source { ZeroVector, EncoderOutput };
    Tensor z;
    Source source = Source::ZeroVector;
};

inline ShapeLatent zero_latent(int latent_dim) {
    return {Tensor({size_t(latent_dim)}), ShapeLatent::Source::ZeroVector};
}

/// Permutation-invariant per-point encoder: 3 -> hidden -> hidden -> latent,
/// mean-pooled over points.
struct ShapeEncoder {
    DenseLayer l1, l2, l3;
    int latent_dim = 8;

    ShapeEncoder() = default;
    ShapeEncoder(int latent, int hidden, Rng& rng)
        : l1("enc/l1", 3, size_t(hidden), rng),
          l2("enc/l2", size_t(hidden), size_t(hidden), rng),
          l3("enc/l3", size_t(hidden), size_t(latent), rng),
          latent_dim(latent) {}

    int forward(Tape& t, int points) {
        const int h1 = t.relu(l1.apply(t, points));
        const int h2 = t.relu(l2.apply(t, h1));
        return t.mean_rows(l3.apply(t, h2));
    }

    std::vector<Parameter*> params() {
        std::vector<Parameter*> out;
        l1.collect(out);
        l2.collect(out);
        l3.collect(out);
        return out;
    }
};

inline ShapeLatent encode_shape(const BoundaryPointCloud& cloud, ShapeEncoder& encoder) {
    Tape t;
    Tensor pts({cloud.pts.size(), 3});
    for (size_t i = 0; i < cloud.pts.size(); ++i)
        for (int c = 0; c < 3; ++c) pts.v[i * 3 + size_t(c)] = cloud.pts[i][size_t(c)];
    const int z = encoder.forward(t, t.input(std::move(pts)));
    return {t.val(z), ShapeLatent::Source::EncoderOutput};
}

/// Noise-prediction network shared across points: each point sees its own
/// coordinates, the timestep embedding, the shape latent, and a mean-pooled
/// global feature, and predicts the per-point noise.
struct Denoiser {
    DenseLayer l1, l2, l3, l4;
    int hidden = 128;
    int time_dim = 32;
    int latent_dim = 8;

    Denoiser() = default;
    Denoiser(int hidden_, int time_dim_, int latent_dim_, Rng& rng)
        : l1("den/l1", size_t(3 + time_dim_ + latent_dim_), size_t(hidden_), rng),
          l2("den/l2", size_t(2 * hidden_), size_t(hidden_), rng),
          l3("den/l3", size_t(hidden_), size_t(hidden_), rng),
          l4("den/l4", size_t(hidden_), 3, rng),
          hidden(hidden_),
          time_dim(time_dim_),
          latent_dim(latent_dim_) {}

    std::vector<Parameter*> params() {
        std::vector<Parameter*> out;
        l1.collect(out);
        l2.collect(out);
        l3.collect(out);
        l4.collect(out);
        return out;
    }

    /// Tape forward; `z_node` must be a rank-1 node of width latent_dim.
    int forward(Tape& t, int x_node, int step, int z_node) {
        const int n = int(t.val(x_node).shape[0]);
        const int temb = t.input(sinusoidal_embed(step, time_dim));
        const int cond = t.concat_cols(t.broadcast_rows(temb, n), t.broadcast_rows(z_node, n));
        const int in0 = t.concat_cols(x_node, cond);
        const int h1 = t.relu(l1.apply(t, in0));
        const int g = t.mean_rows(h1);
        const int h2 = t.relu(l2.apply(t, t.concat_cols(h1, t.broadcast_rows(g, n))));
        const int h3 = t.relu(l3.apply(t, h2));
        return l4.apply(t, h3);
    }

    struct Scratch {
        std::vector<double> in0, h1, g, in2, h2, h3;
    };

    /// Allocation-light forward used by the sampling loop; matches the tape
    /// path bit for bit (verified in tests).
    Tensor eval(const Tensor& x, int step, const Tensor& z, Scratch& s) const {
        const size_t N = x.shape[0];
        const size_t H = size_t(hidden), Din = size_t(3 + time_dim + latent_dim);
        const Tensor temb = sinusoidal_embed(step, time_dim);
        s.in0.assign(N * Din, 0.0);
        for (size_t i = 0; i < N; ++i) {
            double* row = &s.in0[i * Din];
            row[0] = x.v[i * 3];
            row[1] = x.v[i * 3 + 1];
            row[2] = x.v[i * 3 + 2];
            for (int k = 0; k < time_dim; ++k) row[3 + k] = temb.v[size_t(k)];
            for (int k = 0; k < latent_dim; ++k) row[3 + time_dim + k] = z.v[size_t(k)];
        }
        auto dense_relu = [](const std::vector<double>& in, const Parameter& w, const Parameter& b,
                             std::vector<double>& out, size_t M, bool relu_after) {
            const size_t K = w.value.shape[0], Nc = w.value.shape[1];
            out.assign(M * Nc, 0.0);
            for (size_t m = 0; m < M; ++m)
                for (size_t j = 0; j < Nc; ++j) out[m * Nc + j] = b.value.v[j];
            matmul_acc(in.data(), w.value.v.data(), out.data(), M, K, Nc);
            if (relu_after)
                for (double& v : out) v = v > 0.0 ? v : 0.0;
        };
        dense_relu(s.in0, l1.w, l1.b, s.h1, N, true);
        s.g.assign(H, 0.0);
        for (size_t i = 0; i < N; ++i)
            for (size_t k = 0; k < H; ++k) s.g[k] += s.h1[i * H + k];
        for (size_t k = 0; k < H; ++k) s.g[k] /= double(N);
        s.in2.assign(N * 2 * H, 0.0);
        for (size_t i = 0; i < N; ++i) {
            std::copy_n(&s.h1[i * H], H, &s.in2[i * 2 * H]);
            std::copy_n(s.g.data(), H, &s.in2[i * 2 * H + H]);
        }
        dense_relu(s.in2, l2.w, l2.b, s.h2, N, true);
        dense_relu(s.h2, l3.w, l3.b, s.h3, N, true);
        std::vector<double> out;
        dense_relu(s.h3, l4.w, l4.b, out, N, false);
        return Tensor({N, 3}, std::move(out));
    }
};

inline Tensor cloud_to_tensor(const BoundaryPointCloud& c) {
    Tensor t({c.pts.size(), 3});
    for (size_t i = 0; i < c.pts.size(); ++i)
        for (size_t k = 0; k < 3; ++k) t.v[i * 3 + k] = c.pts[i][k];
    return t;
}

struct DiffusionConfig {
    int T = 100;
    double beta_start = 1e-4;
    double beta_end = 0.02;
    int hidden = 128;
    int time_dim = 32;
    int latent_dim = 8;
    int train_steps = 2000;
    int batch = 4;
    double lr = 1e-3;
    bool use_encoder = false;
    int min_group_size = 5;
    int sample_retry_cap = 8;
    int threads = 1;
};

/// Noise-prediction training objective: sample t uniformly, noise x0 with the
/// closed-form marginal, return mean squared error over all 3N coordinates.
inline double training_loss(const BoundaryPointCloud& x0, Denoiser& den, const NoiseSchedule& sched,
                            const ShapeLatent& z, Rng& rng) {
    const int t_step = 1 + int(rng.below(uint64_t(sched.T)));
    const Tensor x0t = cloud_to_tensor(x0);
    Tensor eps(x0t.shape);
    for (double& e : eps.v) e = rng.normal();
    const Tensor xt = q_sample(x0t, t_step, eps, sched);
    Tape tape;
    const int pred = den.forward(tape, tape.input(xt), t_step, tape.input(z.z));
    return tape.val(tape.mse(pred, eps)).v[0];
}

/// One reverse step: epsilon-parameterized posterior mean plus beta_t noise
/// for t > 1; the t = 1 step is deterministic.
inline Tensor p_sample_step(const Tensor& x_t, int t, const Denoiser& den, const NoiseSchedule& sched, const Tensor& z,
                            Rng& rng, Denoiser::Scratch& scratch) {
    if (t < 1 || t > sched.T) throw std::invalid_argument("p_sample_step: t must lie in [1, T]");
    const Tensor eps_hat = den.eval(x_t, t, z, scratch);
    if (!eps_hat.is_finite())
        throw std::runtime_error("p_sample_step: non-finite denoiser output at t=" + std::to_string(t));
    const double b = sched.beta_at(t);
    const double a = sched.alpha_at(t);
    const double ab = sched.alpha_bar_at(t);
    const double k = b / std::sqrt(1.0 - ab);
    const double inv_sqrt_a = 1.0 / std::sqrt(a);
    Tensor out = x_t;
    for (size_t i = 0; i < out.numel(); ++i) out.v[i] = inv_sqrt_a * (x_t.v[i] - k * eps_hat.v[i]);
    if (t > 1) {
        const double sd = std::sqrt(b);
        for (double& v : out.v) v += sd * rng.normal();
    }
    if (!out.is_finite()) throw std::runtime_error("p_sample_step: non-finite state at t=" + std::to_string(t));
    return out;
}

/// Ancestral sampling from N(0,I) through the full reverse chain. Final z
/// coordinates snap to +-z0 by sign; clouds missing a class are resampled up
/// to `retry_cap` times.
inline BoundaryPointCloud sample(const Denoiser& den, const NoiseSchedule& sched, const ShapeLatent& z, int n_points,
                                 Rng& rng, double z0, int retry_cap = 8) {
    Denoiser::Scratch scratch;
    for (int attempt = 0; attempt <= retry_cap; ++attempt) {
        Tensor x({size_t(n_points), 3});
        for (double& v : x.v) v = rng.normal();
        for (int t = sched.T; t >= 1; --t) x = p_sample_step(x, t, den, sched, z.z, rng, scratch);
        size_t n_cup = 0, n_disc = 0;
        BoundaryPointCloud cloud;
        cloud.z0 = z0;
        cloud.pts.resize(size_t(n_points));
        for (int i = 0; i < n_points; ++i) {
            const double zi = x.v[size_t(i) * 3 + 2];
            cloud.pts[size_t(i)] = {x.v[size_t(i) * 3], x.v[size_t(i) * 3 + 1], zi >= 0.0 ? z0 : -z0};
            (zi >= 0.0 ? n_cup : n_disc) += 1;
        }
        if (n_cup >= 3 && n_disc >= 3) return cloud;
    }
    throw std::runtime_error("sample: no decodable cloud within retry cap (a class kept fewer than 3 points)");
}

struct TrainedGroupModel {
    Denoiser denoiser;
    std::optional<ShapeEncoder> encoder;
    NoiseSchedule sched;
    DiffusionConfig cfg;
};

/// One trained diffusion model per sensitive group.
class GroupModelRegistry {
public:
    std::string attribute;
    std::map<std::string, TrainedGroupModel> models;

    const TrainedGroupModel& get(const std::string& group) const {
        auto it = models.find(group);
        if (it == models.end())
            throw std::runtime_error("no trained diffusion model for group '" + group + "' of attribute '" + attribute + "'");
        return it->second;
    }

    BoundaryPointCloud sample_for_group(const std::string& group, Rng& rng, int n_points, double z0) const {
        const TrainedGroupModel& m = get(group);
        auto cloud = fairdiff::sample(m.denoiser, m.sched, zero_latent(m.denoiser.latent_dim), n_points, rng, z0,
                                      m.cfg.sample_retry_cap);
        cloud.group = group;
        return cloud;
    }

    /// Directory layout: <attribute>__<group>.fdnn plus <attribute>__<group>.sched.
    void save(const std::string& dir) const {
        namespace fs = std::filesystem;
        fs::create_directories(dir);
        for (const auto& [group, model] : models) {
            const std::string base = (fs::path(dir) / (attribute + "__" + group)).string();
            std::vector<Parameter*> ps = const_cast<TrainedGroupModel&>(model).denoiser.params();
            Parameter arch("meta/arch", Tensor({4}, {double(model.denoiser.hidden), double(model.denoiser.time_dim),
                                                     double(model.denoiser.latent_dim),
                                                     model.encoder ? 1.0 : 0.0}));
            ps.push_back(&arch);
            std::vector<Parameter*> enc_ps;
            if (model.encoder) {
                enc_ps = const_cast<ShapeEncoder&>(*model.encoder).params();
                for (Parameter* p : enc_ps) ps.push_back(p);
            }
            save_checkpoint(base + ".fdnn", ps);
            std::ofstream os(base + ".sched", std::ios::trunc);
            char buf[128];
            std::snprintf(buf, sizeof buf, "%d %.17g %.17g\n", model.sched.T, model.sched.beta[0],
                          model.sched.beta.back());
            os << buf;
        }
    }

    static GroupModelRegistry load(const std::string& dir, const std::string& attribute) {
        namespace fs = std::filesystem;
        GroupModelRegistry reg;
        reg.attribute = attribute;
        const std::string prefix = attribute + "__";
        if (!fs::is_directory(dir)) throw std::runtime_error("model registry: no such directory: " + dir);
        std::vector<std::string> groups;
        for (const auto& e : fs::directory_iterator(dir)) {
            const std::string name = e.path().filename().string();
            if (name.rfind(prefix, 0) == 0 && e.path().extension() == ".fdnn")
                groups.push_back(name.substr(prefix.size(), name.size() - prefix.size() - 5));
        }
        std::sort(groups.begin(), groups.end());
        if (groups.empty()) throw std::runtime_error("model registry: no checkpoints for attribute '" + attribute + "' in " + dir);
        for (const std::string& group : groups) {
            const std::string base = (fs::path(dir) / (prefix + group)).string();
            auto tensors = load_checkpoint(base + ".fdnn");
            auto arch_it = tensors.find("meta/arch");
            if (arch_it == tensors.end()) throw std::runtime_error("model registry: missing meta/arch in " + base + ".fdnn");
            const Tensor& arch = arch_it->second;
            TrainedGroupModel m;
            Rng dummy(0);
            m.denoiser = Denoiser(int(arch.v[0]), int(arch.v[1]), int(arch.v[2]), dummy);
            if (arch.v[3] > 0.5) m.encoder = ShapeEncoder(int(arch.v[2]), 64, dummy);
            std::ifstream is(base + ".sched");
            int T = 0;
            double bs = 0.0, be = 0.0;
            if (!(is >> T >> bs >> be)) throw std::runtime_error("model registry: bad schedule sidecar " + base + ".sched");
            m.sched = make_schedule(T, bs, be);
            m.cfg.T = T;
            m.cfg.beta_start = bs;
            m.cfg.beta_end = be;
            std::vector<Parameter*> ps = m.denoiser.params();
            if (m.encoder)
                for (Parameter* p : m.encoder->params()) ps.push_back(p);
            restore_checkpoint(base + ".fdnn", ps);
            reg.models.emplace(group, std::move(m));
        }
        return reg;
    }
};

/// Train one denoiser on a set of normalized clouds. Per-step batch items are
/// drawn and assigned their randomness on the main stream, gradients are
/// computed in parallel and reduced in item order, so results do not depend
/// on the thread count.
inline TrainedGroupModel train_diffusion_model(const std::vector<BoundaryPointCloud>& clouds,
                                               const DiffusionConfig& cfg, Rng rng, LossCurve* curve = nullptr) {
    if (clouds.empty()) throw std::invalid_argument("train_diffusion_model: no training clouds");
    TrainedGroupModel model;
    Rng init_rng = rng.derive("init");
    model.denoiser = Denoiser(cfg.hidden, cfg.time_dim, cfg.latent_dim, init_rng);
    if (cfg.use_encoder) model.encoder = ShapeEncoder(cfg.latent_dim, 64, init_rng);
    model.sched = make_schedule(cfg.T, cfg.beta_start, cfg.beta_end);
    model.cfg = cfg;

    std::vector<Parameter*> params = model.denoiser.params();
    if (model.encoder)
        for (Parameter* p : model.encoder->params()) params.push_back(p);
    Adam opt(params, {.lr = cfg.lr});

    std::vector<Tensor> x0s;
    x0s.reserve(clouds.size());
    for (const auto& c : clouds) x0s.push_back(cloud_to_tensor(c));

    struct Item {
        int cloud_idx;
        int t_step;
        Tensor eps;
    };
    const int B = std::max(1, cfg.batch);
    const size_t bsz = size_t(B);
    std::vector<Item> items(bsz);
    std::vector<std::vector<Tensor>> grads(bsz);
    std::vector<double> losses(bsz);

    for (int step = 0; step < cfg.train_steps; ++step) {
        for (int b = 0; b < B; ++b) {
            Item& it = items[size_t(b)];
            it.cloud_idx = int(rng.below(clouds.size()));
            it.t_step = 1 + int(rng.below(uint64_t(cfg.T)));
            it.eps = Tensor(x0s[size_t(it.cloud_idx)].shape);
            for (double& e : it.eps.v) e = rng.normal();
        }
        parallel_for(size_t(B), cfg.threads, [&](size_t b) {
            const Item& it = items[b];
            const Tensor& x0 = x0s[size_t(it.cloud_idx)];
            const Tensor xt = q_sample(x0, it.t_step, it.eps, model.sched);
            Tape tape;
            int z_node;
            if (model.encoder)
                z_node = model.encoder->forward(tape, tape.input(x0));
            else
                z_node = tape.input(Tensor({size_t(cfg.latent_dim)}));
            const int pred = model.denoiser.forward(tape, tape.input(xt), it.t_step, z_node);
            const int loss = tape.mse(pred, it.eps);
            losses[b] = tape.val(loss).v[0];
            tape.backward(loss);
            grads[b] = tape.param_grads(params);
        });
        double batch_loss = 0.0;
        for (int b = 0; b < B; ++b) {
            batch_loss += losses[size_t(b)];
            for (size_t p = 0; p < params.size(); ++p)
                for (size_t j = 0; j < grads[size_t(b)][p].numel(); ++j)
                    params[p]->grad.v[j] += grads[size_t(b)][p].v[j] / double(B);
        }
        batch_loss /= double(B);
        if (!std::isfinite(batch_loss)) throw std::runtime_error("diffusion training: non-finite loss at step " + std::to_string(step));
        if (curve) curve->points.push_back({step, batch_loss});
        opt.step();
    }
    return model;
}

struct ManifestRowView {
    std::string mask_path;
    std::string group;
};

/// Train one model per group of `attribute`. Groups below the configured
/// minimum are skipped with a warning.
inline GroupModelRegistry train_group_models(const std::vector<ManifestRowView>& rows, const std::string& attribute,
                                             const CodecConfig& codec_cfg, const DiffusionConfig& cfg, uint64_t seed,
                                             std::map<std::string, LossCurve>* curves = nullptr,
                                             std::vector<std::string>* warnings = nullptr) {
    GroupModelRegistry reg;
    reg.attribute = attribute;
    std::map<std::string, std::vector<const ManifestRowView*>> by_group;
    for (const auto& r : rows) by_group[r.group].push_back(&r);
    for (const auto& [group, group_rows] : by_group) {
        if (int(group_rows.size()) < cfg.min_group_size) {
            if (warnings)
                warnings->push_back("group '" + group + "' has " + std::to_string(group_rows.size()) +
                                    " rows, below the minimum " + std::to_string(cfg.min_group_size) + "; skipped");
            continue;
        }
        std::vector<BoundaryPointCloud> clouds;
        clouds.reserve(group_rows.size());
        for (const auto* r : group_rows) clouds.push_back(encode_mask(load_mask_png(r->mask_path), codec_cfg));
        LossCurve curve;
        Rng rng(splitmix64(seed ^ hash_str(attribute + "/" + group)));
        reg.models.emplace(group, train_diffusion_model(clouds, cfg, rng, &curve));
        if (curves) (*curves)[group] = std::move(curve);
    }
    return reg;
}

}  // namespace fairdiff
