#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace fairdiff {

/// Dense row-major tensor of 64-bit floats.
struct Tensor {
    std::vector<size_t> shape;
    std::vector<double> v;

    Tensor() = default;
    explicit Tensor(std::vector<size_t> s) : shape(std::move(s)), v(count(shape), 0.0) {}
    Tensor(std::vector<size_t> s, std::vector<double> data) : shape(std::move(s)), v(std::move(data)) {
        if (v.size() != count(shape)) throw std::invalid_argument("tensor: data size does not match shape " + shape_str());
    }

    static size_t count(const std::vector<size_t>& s) {
        size_t n = 1;
        for (size_t e : s) n *= e;
        return n;
    }

    static Tensor zeros(std::vector<size_t> s) { return Tensor(std::move(s)); }
    static Tensor full(std::vector<size_t> s, double x) {
        Tensor t(std::move(s));
        std::fill(t.v.begin(), t.v.end(), x);
        return t;
    }
    static Tensor scalar(double x) { return Tensor({1}, {x}); }

    size_t numel() const { return v.size(); }
    size_t rank() const { return shape.size(); }
    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    double& operator[](size_t i) { return v[i]; }
    double operator[](size_t i) const { return v[i]; }

    double& at(size_t i, size_t j) { return v[i * shape[1] + j]; }
    double at(size_t i, size_t j) const { return v[i * shape[1] + j]; }
    double& at(size_t i, size_t j, size_t k) { return v[(i * shape[1] + j) * shape[2] + k]; }
    double at(size_t i, size_t j, size_t k) const { return v[(i * shape[1] + j) * shape[2] + k]; }
    double& at(size_t i, size_t j, size_t k, size_t l) { return v[((i * shape[1] + j) * shape[2] + k) * shape[3] + l]; }
    double at(size_t i, size_t j, size_t k, size_t l) const { return v[((i * shape[1] + j) * shape[2] + k) * shape[3] + l]; }

    bool is_finite() const {
        for (double x : v)
            if (!std::isfinite(x)) return false;
        return true;
    }

    std::string shape_str() const {
        std::ostringstream os;
        os << "(";
        for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
        os << ")";
        return os.str();
    }
};

inline void require_finite(const Tensor& t, const std::string& what) {
    if (!t.is_finite()) throw std::runtime_error("non-finite values in " + what);
}

// ---- flat BLAS-less kernels used by both the tape and eval-only paths ----

/// C(M,N) += A(M,K) * B(K,N)
inline void matmul_acc(const double* a, const double* b, double* c, size_t M, size_t K, size_t N) {
    for (size_t m = 0; m < M; ++m) {
        const double* arow = a + m * K;
        double* crow = c + m * N;
        for (size_t k = 0; k < K; ++k) {
            const double av = arow[k];
            const double* brow = b + k * N;
            for (size_t n = 0; n < N; ++n) crow[n] += av * brow[n];
        }
    }
}

/// C(M,K) += A(M,N) * B(K,N)^T  (i.e. A times B-transposed)
inline void matmul_bt_acc(const double* a, const double* b, double* c, size_t M, size_t N, size_t K) {
    for (size_t m = 0; m < M; ++m) {
        const double* arow = a + m * N;
        double* crow = c + m * K;
        for (size_t k = 0; k < K; ++k) {
            const double* brow = b + k * N;
            double acc = 0.0;
            for (size_t n = 0; n < N; ++n) acc += arow[n] * brow[n];
            crow[k] += acc;
        }
    }
}

/// C(K,N) += A(M,K)^T * B(M,N)
inline void matmul_at_acc(const double* a, const double* b, double* c, size_t M, size_t K, size_t N) {
    for (size_t m = 0; m < M; ++m) {
        const double* arow = a + m * K;
        const double* brow = b + m * N;
        for (size_t k = 0; k < K; ++k) {
            const double av = arow[k];
            double* crow = c + k * N;
            for (size_t n = 0; n < N; ++n) crow[n] += av * brow[n];
        }
    }
}

}  // namespace fairdiff
