#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fairdiff/checkpoint.hpp"
#include "fairdiff/image.hpp"
#include "fairdiff/nn.hpp"
#include "fairdiff/optim.hpp"
#include "fairdiff/parallel.hpp"
#include "fairdiff/rng.hpp"

namespace fairdiff {

/// 3-block convolutional encoder-decoder (encode, bottleneck, decode); the
/// frozen stand-in for the pretrained backbone block.
struct BaseNet {
    ConvLayer enc1, enc2, mid, dec1, out;
    int channels = 8;

    BaseNet() = default;
    BaseNet(const std::string& prefix, int c, Rng& rng)
        : enc1(prefix + "/enc1", size_t(c), 1, 3, 3, 1, 1, rng),
          enc2(prefix + "/enc2", size_t(2 * c), size_t(c), 3, 3, 2, 1, rng),
          mid(prefix + "/mid", size_t(2 * c), size_t(2 * c), 3, 3, 1, 1, rng),
          dec1(prefix + "/dec1", size_t(c), size_t(2 * c), 3, 3, 1, 1, rng),
          out(prefix + "/out", 1, size_t(c), 3, 3, 1, 1, rng),
          channels(c) {}

    int forward(Tape& t, int x) {
        const int e1 = t.relu(enc1.apply(t, x));
        const int e2 = t.relu(enc2.apply(t, e1));
        const int m = t.relu(mid.apply(t, e2));
        const int up = t.upsample2x(m);
        const int d1 = t.relu(dec1.apply(t, up));
        return out.apply(t, d1);
    }

    std::vector<Parameter*> params() {
        std::vector<Parameter*> ps;
        enc1.collect(ps);
        enc2.collect(ps);
        mid.collect(ps);
        dec1.collect(ps);
        out.collect(ps);
        return ps;
    }

    /// Same weights under a different parameter-name prefix.
    BaseNet renamed_copy(const std::string& prefix) const {
        BaseNet c = *this;
        auto fix = [&](ConvLayer& l, const std::string& name) {
            l.k.name = prefix + "/" + name + ".k";
            l.b.name = prefix + "/" + name + ".b";
            l.k.frozen = l.b.frozen = false;
            l.k.trainable = l.b.trainable = true;
        };
        fix(c.enc1, "enc1");
        fix(c.enc2, "enc2");
        fix(c.mid, "mid");
        fix(c.dec1, "dec1");
        fix(c.out, "out");
        return c;
    }
};

/// Condition encoder E: two convolutions taking the one-hot mask to the
/// base resolution feature width.
struct CondEncoder {
    ConvLayer c1, c2;

    CondEncoder() = default;
    CondEncoder(int channels, Rng& rng)
        : c1("enc/c1", size_t(channels), 3, 3, 3, 1, 1, rng),
          c2("enc/c2", size_t(channels), size_t(channels), 3, 3, 1, 1, rng) {}

    int forward(Tape& t, int onehot) { return t.relu(c2.apply(t, t.relu(c1.apply(t, onehot)))); }

    std::vector<Parameter*> params() {
        std::vector<Parameter*> ps;
        c1.collect(ps);
        c2.collect(ps);
        return ps;
    }
};

/// Frozen base, trainable copy, and the two zero-initialized 1x1 gates:
/// y_c = F(x; base) + Z(F(x + Z(E(c); z1); copy); z2).
struct ControlBlock {
    BaseNet base;   // frozen
    BaseNet copy;   // trainable, initialized as an exact copy of base
    CondEncoder cond;
    ConvLayer z1;   // 1x1, encoder channels -> image channels, zero init
    ConvLayer z2;   // 1x1, image channels -> image channels, zero init
    int width = 64, height = 64;
    bool trained = false;

    ControlBlock() = default;

    /// `pretrained_base` is frozen as-is; everything else is fresh.
    ControlBlock(const BaseNet& pretrained_base, int w, int h, Rng& rng)
        : base(pretrained_base.renamed_copy("base")),
          copy(pretrained_base.renamed_copy("copy")),
          cond(pretrained_base.channels, rng),
          z1(ConvLayer::zeros("z1", 1, size_t(pretrained_base.channels), 1, 1, 1, 0)),
          z2(ConvLayer::zeros("z2", 1, 1, 1, 1, 1, 0)),
          width(w),
          height(h) {
        set_frozen(base.params(), true);
    }

    std::vector<Parameter*> trainable_params() {
        std::vector<Parameter*> ps = copy.params();
        for (Parameter* p : cond.params()) ps.push_back(p);
        z1.collect(ps);
        z2.collect(ps);
        return ps;
    }

    std::vector<Parameter*> all_params() {
        std::vector<Parameter*> ps = base.params();
        for (Parameter* p : trainable_params()) ps.push_back(p);
        return ps;
    }
};

/// Exact composition of the control equation. Rejects dimension mismatches
/// between x and the encoded condition.
inline int control_forward(Tape& t, int x, const MaskImage& c, ControlBlock& block) {
    const Tensor& xv = t.val(x);
    if (xv.rank() != 3 || int(xv.shape[1]) != c.height || int(xv.shape[2]) != c.width)
        throw std::invalid_argument("control_forward: condition " + std::to_string(c.width) + "x" +
                                    std::to_string(c.height) + " does not match input " + xv.shape_str());
    const int cf = block.cond.forward(t, t.input(mask_onehot(c)));
    const int gated_cond = block.z1.apply(t, cf);
    const int a = t.add(x, gated_cond);
    const int h = block.copy.forward(t, a);
    const int y_base = block.base.forward(t, x);
    return t.add(y_base, block.z2.apply(t, h));
}

/// Canonical synthesis input: the conditioning branch carries all content.
inline Tensor canonical_input(int width, int height) { return Tensor::full({1, size_t(height), size_t(width)}, 0.5); }

struct ControlTrainConfig {
    int steps = 600;
    int batch = 4;
    double lr = 1e-3;
    int min_pairs = 1;
    int threads = 1;
    int base_channels = 8;
    int base_steps = 200;   // autoencoder pretraining of the frozen base
    double base_lr = 2e-3;
};

inline uint64_t params_checksum(const std::vector<Parameter*>& params) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (const Parameter* p : params)
        for (double x : p->value.v) {
            uint64_t u;
            std::memcpy(&u, &x, 8);
            h ^= u;
            h *= 0x100000001b3ULL;
        }
    return h;
}

/// Brief autoencoder pretraining for the base network on toy images.
inline BaseNet train_base_autoencoder(const std::vector<ToyImage>& images, const ControlTrainConfig& cfg, Rng rng) {
    if (images.empty()) throw std::invalid_argument("train_base_autoencoder: no images");
    Rng init = rng.derive("base-init");
    BaseNet net("base", cfg.base_channels, init);
    std::vector<Parameter*> params = net.params();
    Adam opt(params, {.lr = cfg.base_lr});
    std::vector<Tensor> tensors;
    tensors.reserve(images.size());
    for (const auto& img : images) tensors.push_back(img.to_tensor());
    for (int step = 0; step < cfg.base_steps; ++step) {
        const Tensor& x = tensors[rng.below(tensors.size())];
        Tape t;
        const int y = net.forward(t, t.input(x));
        const int loss = t.mse(y, x);
        t.backward(loss);
        t.accumulate_param_grads();
        opt.step();
    }
    return net;
}

struct ControlPair {
    MaskImage mask;
    ToyImage image;
};

/// Minimize pixel reconstruction error of the controlled output against the
/// paired targets. The frozen base is checksummed before and after; drift is
/// a hard failure.
inline LossCurve train_control(const std::vector<ControlPair>& pairs, ControlBlock& block,
                                const ControlTrainConfig& cfg, Rng rng) {
    if (int(pairs.size()) < cfg.min_pairs)
        throw std::invalid_argument("train_control: need at least " + std::to_string(cfg.min_pairs) + " pairs");
    for (const auto& p : pairs)
        if (p.mask.width != block.width || p.mask.height != block.height || p.image.width != block.width ||
            p.image.height != block.height)
            throw std::invalid_argument("train_control: pair dimensions do not match the block resolution");

    const uint64_t base_sum_before = params_checksum(block.base.params());
    std::vector<Parameter*> params = block.trainable_params();
    Adam opt(params, {.lr = cfg.lr});
    const Tensor x_ref = canonical_input(block.width, block.height);

    const size_t B = size_t(std::max(1, cfg.batch));
    std::vector<size_t> picks(B);
    std::vector<std::vector<Tensor>> grads(B);
    std::vector<double> losses(B);
    LossCurve curve;
    for (int step = 0; step < cfg.steps; ++step) {
        for (size_t b = 0; b < B; ++b) picks[b] = size_t(rng.below(pairs.size()));
        parallel_for(B, cfg.threads, [&](size_t b) {
            const ControlPair& pair = pairs[picks[b]];
            Tape t;
            const int y = control_forward(t, t.input(x_ref), pair.mask, block);
            const int loss = t.mse(y, pair.image.to_tensor());
            losses[b] = t.val(loss).v[0];
            t.backward(loss);
            grads[b] = t.param_grads(params);
        });
        double batch_loss = 0.0;
        for (size_t b = 0; b < B; ++b) {
            batch_loss += losses[b] / double(B);
            for (size_t p = 0; p < params.size(); ++p)
                for (size_t j = 0; j < grads[b][p].numel(); ++j) params[p]->grad.v[j] += grads[b][p].v[j] / double(B);
        }
        if (!std::isfinite(batch_loss))
            throw std::runtime_error("train_control: non-finite loss at step " + std::to_string(step));
        curve.points.push_back({step, batch_loss});
        opt.step();
    }
    if (params_checksum(block.base.params()) != base_sum_before)
        throw std::runtime_error("train_control: frozen base parameters drifted (invariant breach)");
    block.trained = true;
    return curve;
}

/// Deterministic render of a mask condition into a toy image. An untrained
/// block renders the base network's unconditioned output (and warns).
inline ToyImage synth_image(const MaskImage& mask, ControlBlock& block, std::vector<std::string>* warnings = nullptr) {
    if (!block.trained && warnings)
        warnings->push_back("synth_image: control block is untrained; output is the base render");
    Tape t;
    const int y = control_forward(t, t.input(canonical_input(block.width, block.height)), mask, block);
    ToyImage img = ToyImage::from_tensor(t.val(y));
    img.clamp01();
    return img;
}

// ---- toy renderer: supervised targets standing in for real appearance ----

struct ToyRenderConfig {
    double cup_level = 0.9;
    double disc_level = 0.55;
    double bg_level = 0.15;
    double gradient_max = 0.1;  // per-axis illumination slope bound
    double noise_sd = 0.05;
};

/// Class-banded grayscale render with a smooth illumination gradient and
/// optional Gaussian pixel noise. With noise_sd = 0 cup pixels stay inside
/// [cup_level - gradient_max, cup_level + gradient_max].
inline ToyImage render_toy_image(const MaskImage& mask, const ToyRenderConfig& cfg, double gx, double gy,
                                 double noise_sd, Rng& rng) {
    ToyImage img(mask.width, mask.height);
    for (int y = 0; y < mask.height; ++y)
        for (int x = 0; x < mask.width; ++x) {
            double v = cfg.bg_level;
            if (mask.at(x, y) == CUP)
                v = cfg.cup_level;
            else if (mask.at(x, y) == DISC)
                v = cfg.disc_level;
            v += gx * (double(x) / mask.width - 0.5) + gy * (double(y) / mask.height - 0.5);
            if (noise_sd > 0.0) v += rng.normal(0.0, noise_sd);
            img.at(x, y) = v;
        }
    img.clamp01();
    return img;
}

/// Paired (mask, image) supervision for the control branch.
inline std::vector<ControlPair> make_toy_pairs(const std::vector<MaskImage>& masks, const ToyRenderConfig& cfg,
                                               Rng& rng) {
    std::vector<ControlPair> out;
    out.reserve(masks.size());
    for (const auto& m : masks) {
        const double gx = rng.uniform(-cfg.gradient_max, cfg.gradient_max);
        const double gy = rng.uniform(-cfg.gradient_max, cfg.gradient_max);
        out.push_back({m, render_toy_image(m, cfg, gx, gy, cfg.noise_sd, rng)});
    }
    return out;
}

// ---- control block checkpointing (FDNN1 with base/copy/z1/z2/enc sections) ----

inline void save_control_block(const std::string& path, ControlBlock& block) {
    std::vector<Parameter*> ps = block.all_params();
    Parameter meta("meta/control",
                   Tensor({4}, {double(block.width), double(block.height), double(block.base.channels),
                                block.trained ? 1.0 : 0.0}));
    ps.push_back(&meta);
    save_checkpoint(path, ps);
}

inline ControlBlock load_control_block(const std::string& path) {
    auto tensors = load_checkpoint(path);
    auto it = tensors.find("meta/control");
    if (it == tensors.end()) throw std::runtime_error("control checkpoint missing meta/control: " + path);
    const Tensor& meta = it->second;
    Rng dummy(0);
    BaseNet proto("base", int(meta.v[2]), dummy);
    ControlBlock block(proto, int(meta.v[0]), int(meta.v[1]), dummy);
    restore_checkpoint(path, block.all_params());
    set_frozen(block.base.params(), true);
    block.trained = meta.v[3] > 0.5;
    return block;
}

}  // namespace fairdiff
