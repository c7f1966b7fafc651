#pragma once

#include <cstdio>
#include <fstream>
#include <string>

#include "hsnn/tensor.hpp"

namespace hsnn {

template <class T>
struct Dataset {
    Tensor<T> images;  // N x C x H x W
    std::vector<int> labels;
    std::vector<T> norm_mean, norm_std;  // constants applied by normalize()

    std::size_t size() const { return labels.size(); }
    std::size_t classes() const {
        int mx = -1;
        for (int l : labels) mx = std::max(mx, l);
        return static_cast<std::size_t>(mx + 1);
    }
};

namespace detail {

inline std::vector<unsigned char> read_file_bytes(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("cannot open file: " + path);
    return std::vector<unsigned char>(std::istreambuf_iterator<char>(f), {});
}

inline std::uint32_t read_be32(const std::vector<unsigned char>& b, std::size_t off,
                               const std::string& path) {
    if (off + 4 > b.size())
        throw TruncationError("truncated file (need 4 bytes at offset " + std::to_string(off) +
                              "): " + path);
    return (std::uint32_t(b[off]) << 24) | (std::uint32_t(b[off + 1]) << 16) |
           (std::uint32_t(b[off + 2]) << 8) | std::uint32_t(b[off + 3]);
}

}  // namespace detail

// IDX image/label pair: big-endian magic 0x00000803 / 0x00000801,
// big-endian dims, unsigned-byte payload. Pixels are scaled to [0, 1].
template <class T>
Dataset<T> load_mnist_idx(const std::string& image_path, const std::string& label_path) {
    auto img = detail::read_file_bytes(image_path);
    auto lab = detail::read_file_bytes(label_path);

    const std::uint32_t img_magic = detail::read_be32(img, 0, image_path);
    if (img_magic != 0x00000803u)
        throw FormatError("bad IDX image magic at offset 0 (got 0x" +
                          [&] { char s[16]; std::snprintf(s, sizeof s, "%08x", img_magic); return std::string(s); }() +
                          ", want 0x00000803): " + image_path);
    const std::uint32_t lab_magic = detail::read_be32(lab, 0, label_path);
    if (lab_magic != 0x00000801u)
        throw FormatError("bad IDX label magic at offset 0: " + label_path);

    const std::size_t n = detail::read_be32(img, 4, image_path);
    const std::size_t h = detail::read_be32(img, 8, image_path);
    const std::size_t w = detail::read_be32(img, 12, image_path);
    const std::size_t n_lab = detail::read_be32(lab, 4, label_path);
    if (n != n_lab)
        throw FormatError("image/label count mismatch: " + std::to_string(n) + " vs " +
                          std::to_string(n_lab));
    if (img.size() != 16 + n * h * w)
        throw TruncationError("IDX image payload size mismatch: " + image_path);
    if (lab.size() != 8 + n)
        throw TruncationError("IDX label payload size mismatch: " + label_path);
    if (n == 0) throw FormatError("IDX file holds no samples: " + image_path);

    Dataset<T> ds;
    ds.images = Tensor<T>({n, 1, h, w});
    for (std::size_t i = 0; i < n * h * w; ++i)
        ds.images[i] = static_cast<T>(img[16 + i]) / T(255);
    ds.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) ds.labels[i] = static_cast<int>(lab[8 + i]);
    return ds;
}

// CIFAR-10 binary batches: 3073-byte records, 1 label byte then 3072
// pixel bytes in channel-major R/G/B 32x32 planes.
template <class T>
Dataset<T> load_cifar10_bin(const std::vector<std::string>& batch_paths) {
    constexpr std::size_t kRecord = 3073;
    constexpr std::size_t kPixels = 3072;
    std::vector<unsigned char> all;
    for (const auto& path : batch_paths) {
        auto bytes = detail::read_file_bytes(path);
        if (bytes.empty() || bytes.size() % kRecord != 0)
            throw FormatError("CIFAR-10 batch length " + std::to_string(bytes.size()) +
                              " is not a multiple of 3073: " + path);
        all.insert(all.end(), bytes.begin(), bytes.end());
    }
    if (all.empty()) throw FormatError("no CIFAR-10 batches given");
    const std::size_t n = all.size() / kRecord;
    Dataset<T> ds;
    ds.images = Tensor<T>({n, 3, 32, 32});
    ds.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const unsigned char* rec = all.data() + i * kRecord;
        ds.labels[i] = static_cast<int>(rec[0]);
        T* dst = ds.images.data() + i * kPixels;
        for (std::size_t p = 0; p < kPixels; ++p) dst[p] = static_cast<T>(rec[1 + p]) / T(255);
    }
    return ds;
}

// x <- (x - mean) / std per channel; records the constants on the dataset.
template <class T>
void normalize(Dataset<T>& ds, const std::vector<T>& mean, const std::vector<T>& std_dev) {
    const std::size_t C = ds.images.dim(1);
    if (mean.size() != C || std_dev.size() != C)
        throw DimensionError("normalize: need one mean/std per channel");
    for (T s : std_dev)
        if (s <= T(0)) throw DimensionError("normalize: std must be positive");
    const std::size_t N = ds.images.dim(0);
    const std::size_t inner = ds.images.dim(2) * ds.images.dim(3);
    for (std::size_t i = 0; i < N; ++i)
        for (std::size_t c = 0; c < C; ++c) {
            T* p = ds.images.data() + (i * C + c) * inner;
            for (std::size_t j = 0; j < inner; ++j) p[j] = (p[j] - mean[c]) / std_dev[c];
        }
    ds.norm_mean = mean;
    ds.norm_std = std_dev;
}

template <class T>
std::vector<T> mnist_default_mean() { return {static_cast<T>(0.1307)}; }
template <class T>
std::vector<T> mnist_default_std() { return {static_cast<T>(0.3081)}; }
template <class T>
std::vector<T> cifar10_default_mean() {
    return {static_cast<T>(0.4914), static_cast<T>(0.4822), static_cast<T>(0.4465)};
}
template <class T>
std::vector<T> cifar10_default_std() {
    return {static_cast<T>(0.2470), static_cast<T>(0.2435), static_cast<T>(0.2616)};
}

// Full-epoch batch iterator; the final partial batch is retained. With
// shuffle the order is a seeded permutation, identical for equal seeds.
template <class T>
class BatchIterator {
public:
    BatchIterator(const Dataset<T>& ds, std::size_t batch_size, bool shuffle, std::uint64_t seed)
        : ds_(ds), batch_size_(batch_size) {
        if (batch_size < 1) throw DimensionError("batches: batch_size must be >= 1");
        order_.resize(ds.size());
        for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
        if (shuffle) {
            Rng rng(seed);
            rng.shuffle(order_.begin(), order_.end());
        }
    }

    bool next(Tensor<T>& images, std::vector<int>& labels) {
        if (cursor_ >= order_.size()) return false;
        const std::size_t bs = std::min(batch_size_, order_.size() - cursor_);
        const std::size_t sample = ds_.images.size() / ds_.images.dim(0);
        images = Tensor<T>({bs, ds_.images.dim(1), ds_.images.dim(2), ds_.images.dim(3)});
        labels.resize(bs);
        for (std::size_t i = 0; i < bs; ++i) {
            const std::size_t idx = order_[cursor_ + i];
            std::copy_n(ds_.images.data() + idx * sample, sample, images.data() + i * sample);
            labels[i] = ds_.labels[idx];
        }
        cursor_ += bs;
        return true;
    }

private:
    const Dataset<T>& ds_;
    std::size_t batch_size_;
    std::vector<std::size_t> order_;
    std::size_t cursor_ = 0;
};

}  // namespace hsnn
