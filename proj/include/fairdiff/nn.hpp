#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "fairdiff/autodiff.hpp"
#include "fairdiff/rng.hpp"
#include "fairdiff/tensor.hpp"

namespace fairdiff {

/// Kaiming fan-in normal initialization.
inline Tensor kaiming_init(std::vector<size_t> shape, size_t fan_in, Rng& rng) {
    Tensor t(std::move(shape));
    const double sd = std::sqrt(2.0 / double(fan_in));
    for (double& x : t.v) x = rng.normal() * sd;
    return t;
}

/// Interleaved sin/cos embedding of a timestep over geometrically spaced
/// frequencies. t=0 gives [0,1,0,1,...].
inline Tensor sinusoidal_embed(int t, int dim) {
    if (dim <= 0 || dim % 2 != 0) throw std::invalid_argument("sinusoidal_embed: dim must be positive and even");
    if (t < 0) throw std::invalid_argument("sinusoidal_embed: t must be >= 0");
    Tensor out({size_t(dim)});
    const int half = dim / 2;
    for (int k = 0; k < half; ++k) {
        const double freq = std::pow(10000.0, -double(k) / double(half));
        out.v[2 * k] = std::sin(double(t) * freq);
        out.v[2 * k + 1] = std::cos(double(t) * freq);
    }
    return out;
}

/// Dense layer parameters: y = x W + b.
struct DenseLayer {
    Parameter w, b;

    DenseLayer() = default;
    DenseLayer(const std::string& name, size_t in, size_t out, Rng& rng)
        : w(name + ".w", kaiming_init({in, out}, in, rng)), b(name + ".b", Tensor({out})) {}

    int apply(Tape& t, int x) {
        const int wi = t.param(w);
        const int bi = t.param(b);
        return t.dense(x, wi, bi);
    }

    void collect(std::vector<Parameter*>& out) {
        out.push_back(&w);
        out.push_back(&b);
    }
};

/// 2-D convolution parameters.
struct ConvLayer {
    Parameter k, b;
    int stride = 1, pad = 0;

    ConvLayer() = default;
    ConvLayer(const std::string& name, size_t oc, size_t ic, size_t kh, size_t kw, int stride_, int pad_, Rng& rng)
        : k(name + ".k", kaiming_init({oc, ic, kh, kw}, ic * kh * kw, rng)),
          b(name + ".b", Tensor({oc})),
          stride(stride_),
          pad(pad_) {}

    /// Zero-initialized variant (weights and biases exactly zero).
    static ConvLayer zeros(const std::string& name, size_t oc, size_t ic, size_t kh, size_t kw, int stride_, int pad_) {
        ConvLayer l;
        l.k = Parameter(name + ".k", Tensor({oc, ic, kh, kw}));
        l.b = Parameter(name + ".b", Tensor({oc}));
        l.stride = stride_;
        l.pad = pad_;
        return l;
    }

    int apply(Tape& t, int x) {
        const int ki = t.param(k);
        const int bi = t.param(b);
        return t.conv2d(x, ki, bi, stride, pad);
    }

    void collect(std::vector<Parameter*>& out) {
        out.push_back(&k);
        out.push_back(&b);
    }
};

inline void set_frozen(std::vector<Parameter*> params, bool frozen) {
    for (Parameter* p : params) {
        p->frozen = frozen;
        p->trainable = !frozen;
    }
}

}  // namespace fairdiff
