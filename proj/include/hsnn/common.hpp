#pragma once

#include <cstdint>
#include <cstdlib>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace hsnn {

// Shape/geometry violations (mismatched dims, bad pool windows, ...).
struct DimensionError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Malformed on-disk payloads (dataset files, checkpoints).
struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Checkpoint written by an incompatible format version.
struct VersionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// File ends before the declared payload does.
struct TruncationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Worker count for the kernels: hardware_concurrency by default, or the
// value of HSNN_THREADS when set (results are bit-identical either way,
// so the variable only trades throughput). Resolved once per process.
inline unsigned max_threads() {
    static const unsigned cached = [] {
        unsigned hw = std::thread::hardware_concurrency();
        if (hw == 0) hw = 1;
        if (const char* env = std::getenv("HSNN_THREADS")) {
            long v = std::strtol(env, nullptr, 10);
            if (v >= 1) return static_cast<unsigned>(std::min<long>(v, 512));
        }
        return hw;
    }();
    return cached;
}

// Runs fn(i) for i in [0, n). Work is partitioned into contiguous chunks,
// one chunk per thread, so any single index is processed by exactly one
// thread and per-index results are bit-identical to the serial run.
template <class Fn>
void parallel_for(std::size_t n, Fn&& fn, std::size_t grain = 1) {
    unsigned nt = max_threads();
    if (nt <= 1 || n <= grain) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::size_t chunks = std::min<std::size_t>(nt, (n + grain - 1) / grain);
    std::size_t per = (n + chunks - 1) / chunks;
    std::vector<std::thread> workers;
    workers.reserve(chunks);
    for (std::size_t c = 0; c < chunks; ++c) {
        std::size_t lo = c * per;
        std::size_t hi = std::min(n, lo + per);
        if (lo >= hi) break;
        workers.emplace_back([lo, hi, &fn] {
            for (std::size_t i = lo; i < hi; ++i) fn(i);
        });
    }
    for (auto& w : workers) w.join();
}

}  // namespace hsnn
