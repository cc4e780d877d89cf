#pragma once

#include <algorithm>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "fairdiff/tensor.hpp"

namespace fairdiff {

/// A learnable (or frozen) tensor with a persistent gradient accumulator.
struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;
    bool trainable = true;
    bool frozen = false;

    Parameter() = default;
    Parameter(std::string n, Tensor t) : name(std::move(n)), value(std::move(t)), grad(Tensor::zeros(value.shape)) {}

    void zero_grad() { std::fill(grad.v.begin(), grad.v.end(), 0.0); }
};

enum class Op : uint8_t {
    Input,
    Param,
    Dense,
    Conv2d,
    Relu,
    Add,
    Scale,
    ConcatCols,
    MeanRows,
    BroadcastRows,
    Sum,
    SqNormHalf,
    Mse,
    SoftmaxCe,
    SoftDice,
    Upsample2x,
};

/// Reverse-mode tape. Each forward call appends a node; backward() walks the
/// node list in reverse. Gradients for a node are allocated lazily; a node
/// that never receives one contributes exact zeros downstream.
class Tape {
public:
    struct Node {
        Op op = Op::Input;
        int in0 = -1, in1 = -1, in2 = -1;
        Tensor val;
        Tensor grad;            // same shape as val once touched
        Tensor aux;             // op-specific constant payload (targets, caches)
        Tensor cache;           // op-specific forward cache (e.g. softmax probs)
        Parameter* param = nullptr;
        int i0 = 0, i1 = 0;     // op-specific ints (stride, padding, rows)
        double x0 = 0.0;        // op-specific scalar
        bool needs_grad = false;  // does anything trainable depend on this node?
    };

    int input(Tensor t) {
        Node n;
        n.op = Op::Input;
        n.val = std::move(t);
        return push(std::move(n));
    }

    int param(Parameter& p) {
        Node n;
        n.op = Op::Param;
        n.val = p.value;  // snapshot; parameters are stable during one pass
        n.param = &p;
        n.needs_grad = p.trainable && !p.frozen;
        return push(std::move(n));
    }

    const Tensor& val(int id) const { return nodes_[id].val; }
    const Tensor& grad(int id) const { return nodes_[id].grad; }
    size_t size() const { return nodes_.size(); }

    // ---- operations ----

    /// Affine map y = x W + b with x (M,K) or (K,), W (K,N), b (N).
    int dense(int x, int w, int b) {
        const Tensor& xv = nodes_[x].val;
        const Tensor& wv = nodes_[w].val;
        const Tensor& bv = nodes_[b].val;
        if (wv.rank() != 2 || (xv.rank() != 1 && xv.rank() != 2))
            throw std::invalid_argument("dense: input rank must be 1 or 2, weights rank 2");
        const size_t K = xv.rank() == 2 ? xv.shape[1] : xv.shape[0];
        const size_t M = xv.rank() == 2 ? xv.shape[0] : 1;
        if (K != wv.shape[0] || bv.numel() != wv.shape[1])
            throw std::invalid_argument("dense: shape mismatch, input " + xv.shape_str() + " vs weights " + wv.shape_str());
        const size_t N = wv.shape[1];
        Node n;
        n.op = Op::Dense;
        n.in0 = x; n.in1 = w; n.in2 = b;
        n.val = xv.rank() == 2 ? Tensor({M, N}) : Tensor({N});
        for (size_t m = 0; m < M; ++m)
            for (size_t j = 0; j < N; ++j) n.val.v[m * N + j] = bv.v[j];
        matmul_acc(xv.v.data(), wv.v.data(), n.val.v.data(), M, K, N);
        return push_after(std::move(n), {x, w, b});
    }

    /// Cross-correlation of input (C,H,W) with kernel (OC,C,KH,KW), bias (OC).
    int conv2d(int x, int k, int b, int stride, int pad) {
        const Tensor& xv = nodes_[x].val;
        const Tensor& kv = nodes_[k].val;
        const Tensor& bv = nodes_[b].val;
        if (xv.rank() != 3 || kv.rank() != 4)
            throw std::invalid_argument("conv2d: input must be (C,H,W), kernel (OC,IC,KH,KW)");
        if (xv.shape[0] != kv.shape[1])
            throw std::invalid_argument("conv2d: channel mismatch, input " + xv.shape_str() + " vs kernel " + kv.shape_str());
        if (stride < 1 || pad < 0) throw std::invalid_argument("conv2d: stride must be >=1, padding >=0");
        const long H = long(xv.shape[1]), W = long(xv.shape[2]);
        const long KH = long(kv.shape[2]), KW = long(kv.shape[3]);
        if (KH > H + 2 * pad || KW > W + 2 * pad)
            throw std::invalid_argument("conv2d: kernel " + kv.shape_str() + " larger than padded input " + xv.shape_str());
        const size_t OC = kv.shape[0];
        if (bv.numel() != OC) throw std::invalid_argument("conv2d: bias size mismatch");
        const long OH = (H + 2 * pad - KH) / stride + 1;
        const long OW = (W + 2 * pad - KW) / stride + 1;
        Node n;
        n.op = Op::Conv2d;
        n.in0 = x; n.in1 = k; n.in2 = b;
        n.i0 = stride; n.i1 = pad;
        n.val = Tensor({OC, size_t(OH), size_t(OW)});
        conv2d_forward(xv, kv, bv, n.val, stride, pad);
        return push_after(std::move(n), {x, k, b});
    }

    int relu(int x) {
        Node n;
        n.op = Op::Relu;
        n.in0 = x;
        n.val = nodes_[x].val;
        for (double& d : n.val.v) d = d > 0.0 ? d : 0.0;
        return push_after(std::move(n), {x});
    }

    int add(int a, int b) {
        const Tensor& av = nodes_[a].val;
        const Tensor& bv = nodes_[b].val;
        if (!av.same_shape(bv))
            throw std::invalid_argument("add: shape mismatch " + av.shape_str() + " vs " + bv.shape_str());
        Node n;
        n.op = Op::Add;
        n.in0 = a; n.in1 = b;
        n.val = av;
        for (size_t i = 0; i < n.val.numel(); ++i) n.val.v[i] += bv.v[i];
        return push_after(std::move(n), {a, b});
    }

    int scale(int x, double c) {
        Node n;
        n.op = Op::Scale;
        n.in0 = x;
        n.x0 = c;
        n.val = nodes_[x].val;
        for (double& d : n.val.v) d *= c;
        return push_after(std::move(n), {x});
    }

    /// [A | B] column-wise; A (M,Ka), B (M,Kb) -> (M,Ka+Kb).
    int concat_cols(int a, int b) {
        const Tensor& av = nodes_[a].val;
        const Tensor& bv = nodes_[b].val;
        if (av.rank() != 2 || bv.rank() != 2 || av.shape[0] != bv.shape[0])
            throw std::invalid_argument("concat_cols: need matching row counts, got " + av.shape_str() + " and " + bv.shape_str());
        const size_t M = av.shape[0], Ka = av.shape[1], Kb = bv.shape[1];
        Node n;
        n.op = Op::ConcatCols;
        n.in0 = a; n.in1 = b;
        n.i0 = int(Ka);
        n.val = Tensor({M, Ka + Kb});
        for (size_t m = 0; m < M; ++m) {
            std::copy_n(&av.v[m * Ka], Ka, &n.val.v[m * (Ka + Kb)]);
            std::copy_n(&bv.v[m * Kb], Kb, &n.val.v[m * (Ka + Kb) + Ka]);
        }
        return push_after(std::move(n), {a, b});
    }

    /// Column means of (M,K) -> (K).
    int mean_rows(int x) {
        const Tensor& xv = nodes_[x].val;
        if (xv.rank() != 2) throw std::invalid_argument("mean_rows: need rank-2 input");
        const size_t M = xv.shape[0], K = xv.shape[1];
        Node n;
        n.op = Op::MeanRows;
        n.in0 = x;
        n.val = Tensor({K});
        for (size_t m = 0; m < M; ++m)
            for (size_t k = 0; k < K; ++k) n.val.v[k] += xv.v[m * K + k];
        for (size_t k = 0; k < K; ++k) n.val.v[k] /= double(M);
        return push_after(std::move(n), {x});
    }

    /// Tile vector (K) into (rows,K).
    int broadcast_rows(int x, int rows) {
        const Tensor& xv = nodes_[x].val;
        if (xv.rank() != 1) throw std::invalid_argument("broadcast_rows: need rank-1 input");
        const size_t K = xv.shape[0];
        Node n;
        n.op = Op::BroadcastRows;
        n.in0 = x;
        n.i0 = rows;
        n.val = Tensor({size_t(rows), K});
        for (int m = 0; m < rows; ++m) std::copy_n(xv.v.data(), K, &n.val.v[size_t(m) * K]);
        return push_after(std::move(n), {x});
    }

    int sum(int x) {
        Node n;
        n.op = Op::Sum;
        n.in0 = x;
        double s = 0.0;
        for (double d : nodes_[x].val.v) s += d;
        n.val = Tensor::scalar(s);
        return push_after(std::move(n), {x});
    }

    /// 0.5 * ||x||^2
    int sq_norm_half(int x) {
        Node n;
        n.op = Op::SqNormHalf;
        n.in0 = x;
        double s = 0.0;
        for (double d : nodes_[x].val.v) s += d * d;
        n.val = Tensor::scalar(0.5 * s);
        return push_after(std::move(n), {x});
    }

    /// Mean squared error against a constant target.
    int mse(int x, Tensor target) {
        const Tensor& xv = nodes_[x].val;
        if (!xv.same_shape(target))
            throw std::invalid_argument("mse: shape mismatch " + xv.shape_str() + " vs " + target.shape_str());
        Node n;
        n.op = Op::Mse;
        n.in0 = x;
        double s = 0.0;
        for (size_t i = 0; i < xv.numel(); ++i) {
            const double d = xv.v[i] - target.v[i];
            s += d * d;
        }
        n.val = Tensor::scalar(s / double(xv.numel()));
        n.aux = std::move(target);
        return push_after(std::move(n), {x});
    }

    /// Mean per-pixel softmax cross-entropy; logits (C,H,W), labels flat H*W in [0,C).
    int softmax_ce(int logits, const std::vector<uint8_t>& labels) {
        const Tensor& lv = nodes_[logits].val;
        if (lv.rank() != 3) throw std::invalid_argument("softmax_ce: logits must be (C,H,W)");
        const size_t C = lv.shape[0], P = lv.shape[1] * lv.shape[2];
        if (labels.size() != P) throw std::invalid_argument("softmax_ce: label count mismatch");
        Node n;
        n.op = Op::SoftmaxCe;
        n.in0 = logits;
        n.cache = Tensor({C, lv.shape[1], lv.shape[2]});  // probabilities
        n.aux = Tensor({P});
        double loss = 0.0;
        for (size_t p = 0; p < P; ++p) {
            double mx = lv.v[p];
            for (size_t c = 1; c < C; ++c) mx = std::max(mx, lv.v[c * P + p]);
            double z = 0.0;
            for (size_t c = 0; c < C; ++c) z += std::exp(lv.v[c * P + p] - mx);
            for (size_t c = 0; c < C; ++c) n.cache.v[c * P + p] = std::exp(lv.v[c * P + p] - mx) / z;
            const uint8_t t = labels[p];
            if (t >= C) throw std::invalid_argument("softmax_ce: label out of range");
            n.aux.v[p] = double(t);
            loss -= std::log(std::max(n.cache.v[size_t(t) * P + p], 1e-300));
        }
        n.val = Tensor::scalar(loss / double(P));
        return push_after(std::move(n), {logits});
    }

    /// 1 - mean over classes of the soft Dice of softmax(logits) vs labels.
    int soft_dice(int logits, const std::vector<uint8_t>& labels, double smooth = 1.0) {
        const Tensor& lv = nodes_[logits].val;
        if (lv.rank() != 3) throw std::invalid_argument("soft_dice: logits must be (C,H,W)");
        const size_t C = lv.shape[0], P = lv.shape[1] * lv.shape[2];
        if (labels.size() != P) throw std::invalid_argument("soft_dice: label count mismatch");
        Node n;
        n.op = Op::SoftDice;
        n.in0 = logits;
        n.x0 = smooth;
        n.cache = Tensor({C, lv.shape[1], lv.shape[2]});
        n.aux = Tensor({P});
        for (size_t p = 0; p < P; ++p) n.aux.v[p] = double(labels[p]);
        std::vector<double> inter(C, 0.0), psum(C, 0.0), tsum(C, 0.0);
        for (size_t p = 0; p < P; ++p) {
            double mx = lv.v[p];
            for (size_t c = 1; c < C; ++c) mx = std::max(mx, lv.v[c * P + p]);
            double z = 0.0;
            for (size_t c = 0; c < C; ++c) z += std::exp(lv.v[c * P + p] - mx);
            for (size_t c = 0; c < C; ++c) {
                const double prob = std::exp(lv.v[c * P + p] - mx) / z;
                n.cache.v[c * P + p] = prob;
                psum[c] += prob;
                if (size_t(labels[p]) == c) {
                    inter[c] += prob;
                    tsum[c] += 1.0;
                }
            }
        }
        double dice = 0.0;
        for (size_t c = 0; c < C; ++c) dice += (2.0 * inter[c] + smooth) / (psum[c] + tsum[c] + smooth);
        n.val = Tensor::scalar(1.0 - dice / double(C));
        return push_after(std::move(n), {logits});
    }

    /// Nearest-neighbour 2x upsample of (C,H,W).
    int upsample2x(int x) {
        const Tensor& xv = nodes_[x].val;
        if (xv.rank() != 3) throw std::invalid_argument("upsample2x: input must be (C,H,W)");
        const size_t C = xv.shape[0], H = xv.shape[1], W = xv.shape[2];
        Node n;
        n.op = Op::Upsample2x;
        n.in0 = x;
        n.val = Tensor({C, 2 * H, 2 * W});
        for (size_t c = 0; c < C; ++c)
            for (size_t y = 0; y < 2 * H; ++y)
                for (size_t xx = 0; xx < 2 * W; ++xx)
                    n.val.at(c, y, xx) = xv.at(c, y / 2, xx / 2);
        return push_after(std::move(n), {x});
    }

    // ---- reverse pass ----

    /// Propagate d(loss)/d(node) for every node reachable from a scalar loss.
    /// Gradients of trainable parameters are pulled with param_grads() or
    /// accumulated into Parameter::grad via accumulate_param_grads().
    void backward(int loss) {
        Node& ln = nodes_[loss];
        if (ln.val.numel() != 1) throw std::invalid_argument("backward: loss must be a scalar, got shape " + ln.val.shape_str());
        ensure_grad(loss);
        ln.grad.v[0] = 1.0;
        for (int id = loss; id >= 0; --id) {
            Node& n = nodes_[id];
            if (n.grad.numel() == 0) continue;  // nothing flowed here
            backward_node(n);
        }
    }

    /// Gradients for each listed parameter summed over this tape's uses.
    /// Parameters that never touched the tape (or are disconnected from the
    /// loss) get exact zeros.
    std::vector<Tensor> param_grads(const std::vector<Parameter*>& params) const {
        std::vector<Tensor> out;
        out.reserve(params.size());
        for (Parameter* p : params) out.push_back(Tensor::zeros(p->value.shape));
        for (const Node& n : nodes_) {
            if (n.op != Op::Param || n.grad.numel() == 0) continue;
            for (size_t i = 0; i < params.size(); ++i)
                if (params[i] == n.param)
                    for (size_t j = 0; j < n.grad.numel(); ++j) out[i].v[j] += n.grad.v[j];
        }
        return out;
    }

    /// Add this tape's parameter gradients into Parameter::grad (single-owner use).
    void accumulate_param_grads(double scale = 1.0) {
        for (Node& n : nodes_) {
            if (n.op != Op::Param || n.grad.numel() == 0) continue;
            for (size_t j = 0; j < n.grad.numel(); ++j) n.param->grad.v[j] += scale * n.grad.v[j];
        }
    }

private:
    std::vector<Node> nodes_;

    int push(Node n) {
        nodes_.push_back(std::move(n));
        return int(nodes_.size()) - 1;
    }

    int push_after(Node n, std::initializer_list<int> ins) {
        for (int i : ins) n.needs_grad = n.needs_grad || nodes_[i].needs_grad;
        return push(std::move(n));
    }

    void ensure_grad(int id) {
        Node& n = nodes_[id];
        if (n.grad.numel() == 0) n.grad = Tensor::zeros(n.val.shape);
    }

    // A frozen parameter still collects a gradient when the op consuming it
    // sits on a path that feeds trainable parameters; a pure frozen branch
    // over constant inputs is skipped for speed.
    bool wants_grad(int id, bool consumer_active) const {
        const Node& n = nodes_[id];
        if (n.op == Op::Param) return (n.param->trainable && !n.param->frozen) || consumer_active;
        return n.needs_grad;
    }

    double* grad_into(int id, bool consumer_active) {
        if (!wants_grad(id, consumer_active)) return nullptr;
        ensure_grad(id);
        return nodes_[id].grad.v.data();
    }

    static void conv2d_forward(const Tensor& x, const Tensor& k, const Tensor& b, Tensor& out, int stride, int pad) {
        const long C = long(x.shape[0]), H = long(x.shape[1]), W = long(x.shape[2]);
        const long OC = long(k.shape[0]), KH = long(k.shape[2]), KW = long(k.shape[3]);
        const long OH = long(out.shape[1]), OW = long(out.shape[2]);
        for (long oc = 0; oc < OC; ++oc) {
            double* oplane = &out.v[size_t(oc) * OH * OW];
            const double bias = b.v[size_t(oc)];
            for (long i = 0; i < OH * OW; ++i) oplane[i] = bias;
            for (long ic = 0; ic < C; ++ic) {
                const double* iplane = &x.v[size_t(ic) * H * W];
                for (long ky = 0; ky < KH; ++ky)
                    for (long kx = 0; kx < KW; ++kx) {
                        const double kv = k.at(size_t(oc), size_t(ic), size_t(ky), size_t(kx));
                        if (kv == 0.0) continue;
                        for (long oy = 0; oy < OH; ++oy) {
                            const long iy = oy * stride - pad + ky;
                            if (iy < 0 || iy >= H) continue;
                            const double* irow = iplane + iy * W;
                            double* orow = oplane + oy * OW;
                            for (long ox = 0; ox < OW; ++ox) {
                                const long ix = ox * stride - pad + kx;
                                if (ix < 0 || ix >= W) continue;
                                orow[ox] += kv * irow[ix];
                            }
                        }
                    }
            }
        }
    }

    void backward_node(Node& n) {
        switch (n.op) {
            case Op::Input:
            case Op::Param:
                break;
            case Op::Dense: {
                const Tensor& xv = nodes_[n.in0].val;
                const Tensor& wv = nodes_[n.in1].val;
                const size_t K = xv.rank() == 2 ? xv.shape[1] : xv.shape[0];
                const size_t M = xv.rank() == 2 ? xv.shape[0] : 1;
                const size_t N = wv.shape[1];
                if (double* gx = grad_into(n.in0, n.needs_grad)) matmul_bt_acc(n.grad.v.data(), wv.v.data(), gx, M, N, K);
                if (double* gw = grad_into(n.in1, n.needs_grad)) matmul_at_acc(xv.v.data(), n.grad.v.data(), gw, M, K, N);
                if (double* gb = grad_into(n.in2, n.needs_grad))
                    for (size_t m = 0; m < M; ++m)
                        for (size_t j = 0; j < N; ++j) gb[j] += n.grad.v[m * N + j];
                break;
            }
            case Op::Conv2d:
                conv2d_backward(n);
                break;
            case Op::Relu:
                if (double* gx = grad_into(n.in0, n.needs_grad)) {
                    const Tensor& xv = nodes_[n.in0].val;
                    for (size_t i = 0; i < xv.numel(); ++i)
                        if (xv.v[i] > 0.0) gx[i] += n.grad.v[i];
                }
                break;
            case Op::Add:
                for (int in : {n.in0, n.in1})
                    if (double* g = grad_into(in, n.needs_grad))
                        for (size_t i = 0; i < n.grad.numel(); ++i) g[i] += n.grad.v[i];
                break;
            case Op::Scale:
                if (double* gx = grad_into(n.in0, n.needs_grad))
                    for (size_t i = 0; i < n.grad.numel(); ++i) gx[i] += n.x0 * n.grad.v[i];
                break;
            case Op::ConcatCols: {
                const size_t M = n.val.shape[0], Kt = n.val.shape[1], Ka = size_t(n.i0), Kb = Kt - Ka;
                if (double* ga = grad_into(n.in0, n.needs_grad))
                    for (size_t m = 0; m < M; ++m)
                        for (size_t k = 0; k < Ka; ++k) ga[m * Ka + k] += n.grad.v[m * Kt + k];
                if (double* gb = grad_into(n.in1, n.needs_grad))
                    for (size_t m = 0; m < M; ++m)
                        for (size_t k = 0; k < Kb; ++k) gb[m * Kb + k] += n.grad.v[m * Kt + Ka + k];
                break;
            }
            case Op::MeanRows: {
                if (double* gx = grad_into(n.in0, n.needs_grad)) {
                    const size_t M = nodes_[n.in0].val.shape[0], K = n.val.shape[0];
                    const double inv = 1.0 / double(M);
                    for (size_t m = 0; m < M; ++m)
                        for (size_t k = 0; k < K; ++k) gx[m * K + k] += inv * n.grad.v[k];
                }
                break;
            }
            case Op::BroadcastRows: {
                if (double* gx = grad_into(n.in0, n.needs_grad)) {
                    const size_t M = size_t(n.i0), K = nodes_[n.in0].val.shape[0];
                    for (size_t m = 0; m < M; ++m)
                        for (size_t k = 0; k < K; ++k) gx[k] += n.grad.v[m * K + k];
                }
                break;
            }
            case Op::Sum:
                if (double* gx = grad_into(n.in0, n.needs_grad)) {
                    const double g = n.grad.v[0];
                    for (size_t i = 0; i < nodes_[n.in0].val.numel(); ++i) gx[i] += g;
                }
                break;
            case Op::SqNormHalf:
                if (double* gx = grad_into(n.in0, n.needs_grad)) {
                    const double g = n.grad.v[0];
                    const Tensor& xv = nodes_[n.in0].val;
                    for (size_t i = 0; i < xv.numel(); ++i) gx[i] += g * xv.v[i];
                }
                break;
            case Op::Mse:
                if (double* gx = grad_into(n.in0, n.needs_grad)) {
                    const Tensor& xv = nodes_[n.in0].val;
                    const double g = n.grad.v[0] * 2.0 / double(xv.numel());
                    for (size_t i = 0; i < xv.numel(); ++i) gx[i] += g * (xv.v[i] - n.aux.v[i]);
                }
                break;
            case Op::SoftmaxCe:
                if (double* gx = grad_into(n.in0, n.needs_grad)) {
                    const size_t C = n.cache.shape[0], P = n.cache.shape[1] * n.cache.shape[2];
                    const double g = n.grad.v[0] / double(P);
                    for (size_t p = 0; p < P; ++p) {
                        const size_t t = size_t(n.aux.v[p]);
                        for (size_t c = 0; c < C; ++c)
                            gx[c * P + p] += g * (n.cache.v[c * P + p] - (c == t ? 1.0 : 0.0));
                    }
                }
                break;
            case Op::SoftDice:
                soft_dice_backward(n);
                break;
            case Op::Upsample2x:
                if (double* gx = grad_into(n.in0, n.needs_grad)) {
                    const size_t C = n.val.shape[0], OH = n.val.shape[1], OW = n.val.shape[2];
                    const size_t H = OH / 2, W = OW / 2;
                    for (size_t c = 0; c < C; ++c)
                        for (size_t y = 0; y < OH; ++y)
                            for (size_t x = 0; x < OW; ++x)
                                gx[(c * H + y / 2) * W + x / 2] += n.grad.at(c, y, x);
                }
                break;
        }
    }

    void conv2d_backward(Node& n) {
        const Tensor& x = nodes_[n.in0].val;
        const Tensor& k = nodes_[n.in1].val;
        const int stride = n.i0, pad = n.i1;
        const long C = long(x.shape[0]), H = long(x.shape[1]), W = long(x.shape[2]);
        const long OC = long(k.shape[0]), KH = long(k.shape[2]), KW = long(k.shape[3]);
        const long OH = long(n.val.shape[1]), OW = long(n.val.shape[2]);
        double* gx = grad_into(n.in0, n.needs_grad);
        double* gk = grad_into(n.in1, n.needs_grad);
        double* gb = grad_into(n.in2, n.needs_grad);
        for (long oc = 0; oc < OC; ++oc) {
            const double* gplane = &n.grad.v[size_t(oc) * OH * OW];
            if (gb) {
                double acc = 0.0;
                for (long i = 0; i < OH * OW; ++i) acc += gplane[i];
                gb[oc] += acc;
            }
            if (!gx && !gk) continue;
            for (long ic = 0; ic < C; ++ic) {
                const double* iplane = &x.v[size_t(ic) * H * W];
                double* gxplane = gx ? gx + size_t(ic) * H * W : nullptr;
                for (long ky = 0; ky < KH; ++ky)
                    for (long kx = 0; kx < KW; ++kx) {
                        const size_t kidx = ((size_t(oc) * size_t(C) + size_t(ic)) * size_t(KH) + size_t(ky)) * size_t(KW) + size_t(kx);
                        const double kv = k.v[kidx];
                        double kacc = 0.0;
                        for (long oy = 0; oy < OH; ++oy) {
                            const long iy = oy * stride - pad + ky;
                            if (iy < 0 || iy >= H) continue;
                            const double* grow = gplane + oy * OW;
                            const double* irow = iplane + iy * W;
                            double* gxrow = gxplane ? gxplane + iy * W : nullptr;
                            for (long ox = 0; ox < OW; ++ox) {
                                const long ix = ox * stride - pad + kx;
                                if (ix < 0 || ix >= W) continue;
                                if (gk) kacc += grow[ox] * irow[ix];
                                if (gxrow) gxrow[ix] += grow[ox] * kv;
                            }
                        }
                        if (gk) gk[kidx] += kacc;
                    }
            }
        }
    }

    void soft_dice_backward(Node& n) {
        double* gx = grad_into(n.in0, n.needs_grad);
        if (!gx) return;
        const size_t C = n.cache.shape[0], P = n.cache.shape[1] * n.cache.shape[2];
        const double smooth = n.x0;
        std::vector<double> inter(C, 0.0), psum(C, 0.0), tsum(C, 0.0);
        for (size_t p = 0; p < P; ++p) {
            const size_t t = size_t(n.aux.v[p]);
            tsum[t] += 1.0;
            for (size_t c = 0; c < C; ++c) {
                psum[c] += n.cache.v[c * P + p];
                if (c == t) inter[c] += n.cache.v[c * P + p];
            }
        }
        // d(loss)/d(prob_c(p)) then softmax jacobian per pixel.
        const double gl = n.grad.v[0];
        std::vector<double> dnum(C), dden(C);
        for (size_t c = 0; c < C; ++c) {
            const double den = psum[c] + tsum[c] + smooth;
            dnum[c] = 2.0 / den;
            dden[c] = (2.0 * inter[c] + smooth) / (den * den);
        }
        std::vector<double> dprob(C);
        for (size_t p = 0; p < P; ++p) {
            const size_t t = size_t(n.aux.v[p]);
            double dot = 0.0;
            for (size_t c = 0; c < C; ++c) {
                // dice_c = (2*inter_c + s)/(psum_c + tsum_c + s); loss = 1 - mean_c dice_c
                const double ddice_dp = (c == t ? dnum[c] : 0.0) - dden[c];
                dprob[c] = -gl * ddice_dp / double(C);
                dot += dprob[c] * n.cache.v[c * P + p];
            }
            for (size_t c = 0; c < C; ++c) {
                const double prob = n.cache.v[c * P + p];
                gx[c * P + p] += prob * (dprob[c] - dot);
            }
        }
    }
};

}  // namespace fairdiff
