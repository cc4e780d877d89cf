#pragma once

#include <string>
#include <vector>

#include "fairdiff/checkpoint.hpp"
#include "fairdiff/data.hpp"
#include "fairdiff/image.hpp"
#include "fairdiff/nn.hpp"
#include "fairdiff/optim.hpp"
#include "fairdiff/parallel.hpp"

namespace fairdiff {

struct SegmenterConfig {
    int channels = 12;
    int epochs = 8;
    int batch = 8;
    double lr = 1e-3;
    int threads = 1;
};

/// Four-layer convolutional per-pixel classifier (background/disc/cup) that
/// preserves the input resolution.
struct ToySegmenter {
    ConvLayer c1, c2, c3, c4;
    int channels = 12;

    ToySegmenter() = default;
    ToySegmenter(int c, Rng& rng)
        : c1("seg/c1", size_t(c), 1, 3, 3, 1, 1, rng),
          c2("seg/c2", size_t(c), size_t(c), 3, 3, 1, 1, rng),
          c3("seg/c3", size_t(c), size_t(c), 3, 3, 1, 1, rng),
          c4("seg/c4", 3, size_t(c), 1, 1, 1, 0, rng),
          channels(c) {}

    int forward(Tape& t, int img) {
        const int h1 = t.relu(c1.apply(t, img));
        const int h2 = t.relu(c2.apply(t, h1));
        const int h3 = t.relu(c3.apply(t, h2));
        return c4.apply(t, h3);
    }

    std::vector<Parameter*> params() {
        std::vector<Parameter*> ps;
        c1.collect(ps);
        c2.collect(ps);
        c3.collect(ps);
        c4.collect(ps);
        return ps;
    }

    MaskImage predict(const ToyImage& img) {
        Tape t;
        const int logits = forward(t, t.input(img.to_tensor()));
        const Tensor& lv = t.val(logits);
        MaskImage out(img.width, img.height);
        const size_t P = size_t(img.width) * size_t(img.height);
        for (size_t p = 0; p < P; ++p) {
            int best = 0;
            for (int c = 1; c < 3; ++c)
                if (lv.v[size_t(c) * P + p] > lv.v[size_t(best) * P + p]) best = c;
            out.labels[p] = uint8_t(best);
        }
        return out;
    }
};

inline void save_segmenter(const std::string& path, ToySegmenter& seg) {
    std::vector<Parameter*> ps = seg.params();
    Parameter meta("meta/segmenter", Tensor({1}, {double(seg.channels)}));
    ps.push_back(&meta);
    save_checkpoint(path, ps);
}

inline ToySegmenter load_segmenter(const std::string& path) {
    auto tensors = load_checkpoint(path);
    auto it = tensors.find("meta/segmenter");
    if (it == tensors.end()) throw std::runtime_error("segmenter checkpoint missing meta/segmenter: " + path);
    Rng dummy(0);
    ToySegmenter seg(int(it->second.v[0]), dummy);
    restore_checkpoint(path, seg.params());
    return seg;
}

/// Summed cross-entropy and soft-Dice objective over per-pixel class scores.
/// Epoch order, batching, and gradient reduction are all seed-deterministic
/// and independent of the thread count.
inline ToySegmenter train_segmenter(const std::vector<ManifestRow>& train_rows, const SegmenterConfig& cfg,
                                    uint64_t seed, LossCurve* curve = nullptr) {
    if (train_rows.empty()) throw std::invalid_argument("train_segmenter: empty train split");
    std::vector<Tensor> images;
    std::vector<std::vector<uint8_t>> labels;
    images.reserve(train_rows.size());
    for (const auto& r : train_rows) {
        images.push_back(load_toy_png(r.image_abs.string()).to_tensor());
        labels.push_back(load_mask_png(r.mask_abs.string()).labels);
    }
    Rng rng(splitmix64(seed ^ hash_str("segmenter")));
    ToySegmenter seg(cfg.channels, rng);
    std::vector<Parameter*> params = seg.params();
    Adam opt(params, {.lr = cfg.lr});

    std::vector<size_t> order(images.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    const size_t B = size_t(std::max(1, cfg.batch));
    std::vector<std::vector<Tensor>> grads(B);
    std::vector<double> losses(B);
    int step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order);
        for (size_t start = 0; start < order.size(); start += B) {
            const size_t bn = std::min(B, order.size() - start);
            parallel_for(bn, cfg.threads, [&](size_t b) {
                const size_t idx = order[start + b];
                Tape t;
                const int logits = seg.forward(t, t.input(images[idx]));
                const int loss = t.add(t.softmax_ce(logits, labels[idx]), t.soft_dice(logits, labels[idx]));
                losses[b] = t.val(loss).v[0];
                t.backward(loss);
                grads[b] = t.param_grads(params);
            });
            double batch_loss = 0.0;
            for (size_t b = 0; b < bn; ++b) {
                batch_loss += losses[b] / double(bn);
                for (size_t p = 0; p < params.size(); ++p)
                    for (size_t j = 0; j < grads[b][p].numel(); ++j)
                        params[p]->grad.v[j] += grads[b][p].v[j] / double(bn);
            }
            if (!std::isfinite(batch_loss))
                throw std::runtime_error("train_segmenter: non-finite loss at step " + std::to_string(step) +
                                         " (epoch " + std::to_string(epoch) + ")");
            if (curve) curve->points.push_back({step, batch_loss});
            opt.step();
            ++step;
        }
    }
    return seg;
}

}  // namespace fairdiff
