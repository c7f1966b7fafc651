#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <vector>

#include "hsnn/common.hpp"

namespace hsnn {

// Dense n-dimensional array, row-major, flat storage.
template <class T>
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> shape)
        : shape_(std::move(shape)), data_(count(shape_), T(0)) {}

    Tensor(std::vector<std::size_t> shape, std::vector<T> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (count(shape_) != data_.size())
            throw DimensionError("tensor: shape/data size mismatch");
    }

    static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_); }

    static std::size_t count(const std::vector<std::size_t>& shape) {
        std::size_t n = 1;
        for (std::size_t d : shape) n *= d;
        return shape.empty() ? 0 : n;
    }

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t ndim() const { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    std::vector<T>& vec() { return data_; }
    const std::vector<T>& vec() const { return data_; }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    Tensor reshaped(std::vector<std::size_t> shape) const {
        if (count(shape) != data_.size())
            throw DimensionError("reshape: element count mismatch");
        Tensor out;
        out.shape_ = std::move(shape);
        out.data_ = data_;
        return out;
    }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    Tensor& operator+=(const Tensor& o) {
        require_same_shape(o, "+=");
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
        return *this;
    }
    Tensor& operator-=(const Tensor& o) {
        require_same_shape(o, "-=");
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
        return *this;
    }
    Tensor& operator*=(T s) {
        for (auto& v : data_) v *= s;
        return *this;
    }

    std::string shape_str() const {
        std::ostringstream ss;
        ss << '[';
        for (std::size_t i = 0; i < shape_.size(); ++i)
            ss << (i ? "x" : "") << shape_[i];
        ss << ']';
        return ss.str();
    }

private:
    void require_same_shape(const Tensor& o, const char* op) const {
        if (!same_shape(o))
            throw DimensionError(std::string("tensor ") + op + ": shape mismatch " +
                                 shape_str() + " vs " + o.shape_str());
    }

    std::vector<std::size_t> shape_;
    std::vector<T> data_;
};

// Counter-based deterministic generator (splitmix64 core). The sample
// stream depends on the seed alone, not on platform or library version.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    // uniform in [0, 1)
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // uniform in [lo, hi)
    double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

    // uniform integer in [0, n); n >= 1
    std::uint64_t next_below(std::uint64_t n) {
        // multiply-shift; bias is negligible for the ranges used here and
        // the mapping is fixed, which is what determinism needs
        return static_cast<std::uint64_t>((static_cast<unsigned __int128>(next_u64()) * n) >> 64);
    }

    // standard normal via Box-Muller (fixed algorithm, two draws per pair)
    double next_normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = next_double(), u2 = next_double();
        if (u1 < 1e-300) u1 = 1e-300;
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    template <class It>
    void shuffle(It first, It last) {
        auto n = static_cast<std::uint64_t>(std::distance(first, last));
        for (std::uint64_t i = n; i > 1; --i)
            std::swap(first[i - 1], first[next_below(i)]);
    }

private:
    std::uint64_t state_;
    double spare_ = 0;
    bool have_spare_ = false;
};

// out[M x N] = a[M x K] * b[K x N]; fixed k-ascending summation per element.
template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.ndim() != 2 || b.ndim() != 2)
        throw DimensionError("matmul: operands must be 2-D");
    if (a.dim(1) != b.dim(0))
        throw DimensionError("matmul: inner dimensions disagree " + a.shape_str() +
                             " vs " + b.shape_str());
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor<T> out({m, n});
    const T* pa = a.data();
    const T* pb = b.data();
    T* po = out.data();
    parallel_for(m, [&](std::size_t i) {
        T* row = po + i * n;
        const T* arow = pa + i * k;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const T av = arow[kk];
            if (av == T(0)) continue;
            const T* brow = pb + kk * n;
            for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
        }
    }, 8);
    return out;
}

// out[M x N] = a[M x K] * b[N x K]^T
template <class T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(1))
        throw DimensionError("matmul_nt: shape mismatch");
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
    Tensor<T> out({m, n});
    const T* pa = a.data();
    const T* pb = b.data();
    T* po = out.data();
    parallel_for(m, [&](std::size_t i) {
        const T* arow = pa + i * k;
        T* row = po + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            const T* brow = pb + j * k;
            T acc = 0;
            for (std::size_t kk = 0; kk < k; ++kk) acc += arow[kk] * brow[kk];
            row[j] = acc;
        }
    }, 8);
    return out;
}

// out[K x N] = a[M x K]^T * b[M x N]
template <class T>
Tensor<T> matmul_tn(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.dim(0) != b.dim(0))
        throw DimensionError("matmul_tn: shape mismatch");
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor<T> out({k, n});
    const T* pa = a.data();
    const T* pb = b.data();
    T* po = out.data();
    parallel_for(k, [&](std::size_t i) {
        T* row = po + i * n;
        for (std::size_t mm = 0; mm < m; ++mm) {
            const T av = pa[mm * k + i];
            if (av == T(0)) continue;
            const T* brow = pb + mm * n;
            for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
        }
    }, 8);
    return out;
}

template <class T>
Tensor<T> identity_matrix(std::size_t n) {
    Tensor<T> eye({n, n});
    for (std::size_t i = 0; i < n; ++i) eye[i * n + i] = T(1);
    return eye;
}

}  // namespace hsnn
