#pragma once

#include <string>

#include "hsnn/network.hpp"

namespace hsnn {

struct TrainConfig {
    int epochs = 10;
    int batch_size = 64;
    double base_lr = 1e-4;
    double lambda_h = 1e-8;
    double surrogate_scale = 1.0;
    double ema_momentum = 0.9;
    std::string extremum_mode = "tensor";  // tensor | channel
    double dropout = 0.1;
    double weight_decay = 5e-6;
    std::uint64_t seed = 1;
    int quant_bits = 0;  // 0 = full precision
    std::string optimizer = "adam";
    bool deterministic = false;
    bool augment = false;

    void validate() const {
        if (epochs < 1) throw DimensionError("config: epochs must be >= 1");
        if (batch_size < 1) throw DimensionError("config: batch_size must be >= 1");
        if (dropout < 0 || dropout >= 1) throw DimensionError("config: dropout must be in [0,1)");
        if (quant_bits != 0) validate_quant_bits(quant_bits);
        if (optimizer != "adam" && optimizer != "sgd")
            throw DimensionError("config: optimizer must be adam or sgd");
        if (extremum_mode != "tensor" && extremum_mode != "channel")
            throw DimensionError("config: extremum-mode must be tensor or channel");
    }

    ExtremumMode mode() const {
        return extremum_mode == "channel" ? ExtremumMode::channel_wise
                                          : ExtremumMode::tensor_wise;
    }
};

// Step schedule: divide by 5 once 60%, 80% and 90% of the run is reached
// (boundaries floor(f*T), applied from the boundary epoch on; a boundary
// of 0 would redefine the initial rate and is ignored).
inline double lr_at_epoch(double base_lr, int epoch, int total_epochs) {
    if (epoch < 0 || epoch >= total_epochs)
        throw DimensionError("lr_at_epoch: epoch out of range");
    double lr = base_lr;
    for (int pct : {6, 8, 9}) {
        const int boundary = total_epochs * pct / 10;
        if (boundary >= 1 && epoch >= boundary) lr /= 5.0;
    }
    return lr;
}

enum class OptKind { sgd, adam };

// SGD with classic momentum or bias-corrected Adam over the model's flat
// parameter view. Thresholds are updated like any parameter but take no
// weight decay and are clamped to the threshold floor after every step.
template <class T>
struct Optimizer {
    OptKind kind = OptKind::adam;
    T lr = T(1e-4);
    T momentum = T(0.9);
    T beta1 = T(0.9), beta2 = T(0.999), eps = T(1e-8);
    T weight_decay = T(0);
    std::uint64_t step_count = 0;

    std::vector<std::vector<T>> buf_m, buf_v;

    static Optimizer from_config(const TrainConfig& cfg) {
        Optimizer o;
        o.kind = (cfg.optimizer == "sgd") ? OptKind::sgd : OptKind::adam;
        o.lr = static_cast<T>(cfg.base_lr);
        o.weight_decay = static_cast<T>(cfg.weight_decay);
        return o;
    }

    void step(Model<T>& model, const Gradients<T>& grads) {
        auto refs = param_refs(model, &grads);
        if (buf_m.size() != refs.size()) {
            buf_m.assign(refs.size(), {});
            buf_v.assign(refs.size(), {});
            for (std::size_t r = 0; r < refs.size(); ++r) {
                buf_m[r].assign(refs[r].n, T(0));
                if (kind == OptKind::adam) buf_v[r].assign(refs[r].n, T(0));
            }
        }
        ++step_count;
        const T bc1 = T(1) - std::pow(beta1, static_cast<T>(step_count));
        const T bc2 = T(1) - std::pow(beta2, static_cast<T>(step_count));
        for (std::size_t r = 0; r < refs.size(); ++r) {
            auto& ref = refs[r];
            if (buf_m[r].size() != ref.n)
                throw DimensionError("optimizer: parameter shape changed under state");
            const T wd = ref.is_threshold ? T(0) : weight_decay;
            for (std::size_t i = 0; i < ref.n; ++i) {
                const T g = ref.grad[i] + wd * ref.value[i];
                if (kind == OptKind::sgd) {
                    buf_m[r][i] = momentum * buf_m[r][i] + g;
                    ref.value[i] -= lr * buf_m[r][i];
                } else {
                    buf_m[r][i] = beta1 * buf_m[r][i] + (T(1) - beta1) * g;
                    buf_v[r][i] = beta2 * buf_v[r][i] + (T(1) - beta2) * g * g;
                    const T mhat = buf_m[r][i] / bc1;
                    const T vhat = buf_v[r][i] / bc2;
                    ref.value[i] -= lr * mhat / (std::sqrt(vhat) + eps);
                }
            }
        }
        for (auto& l : model.layers)
            if (l.kind == LayerKind::hoyer_spike) l.spike.clamp_threshold();
        ++model.param_version;
    }
};

template <class T>
struct EpochMetrics {
    double loss = 0, ce = 0, hoyer = 0, accuracy = 0;
    std::vector<double> spike_activity;  // firing fraction per spike layer
    std::vector<double> extremums;       // mean EMA extremum per spike layer

    double mean_activity() const {
        if (spike_activity.empty()) return 0;
        double s = 0;
        for (double a : spike_activity) s += a;
        return s / static_cast<double>(spike_activity.size());
    }
};

namespace detail {

// horizontal flip + 4-pixel zero pad, random crop
template <class T>
void augment_batch(Tensor<T>& batch, Rng& rng, int pad = 4) {
    const std::size_t B = batch.dim(0), C = batch.dim(1), H = batch.dim(2), W = batch.dim(3);
    const std::size_t P = static_cast<std::size_t>(pad);
    std::vector<T> padded((H + 2 * P) * (W + 2 * P));
    for (std::size_t b = 0; b < B; ++b) {
        const bool flip = rng.next_double() < 0.5;
        const std::size_t dy = rng.next_below(2 * P + 1);
        const std::size_t dx = rng.next_below(2 * P + 1);
        for (std::size_t c = 0; c < C; ++c) {
            T* plane = batch.data() + (b * C + c) * H * W;
            std::fill(padded.begin(), padded.end(), T(0));
            for (std::size_t y = 0; y < H; ++y)
                for (std::size_t x = 0; x < W; ++x) {
                    const std::size_t sx = flip ? (W - 1 - x) : x;
                    padded[(y + P) * (W + 2 * P) + (x + P)] = plane[y * W + sx];
                }
            for (std::size_t y = 0; y < H; ++y)
                for (std::size_t x = 0; x < W; ++x)
                    plane[y * W + x] = padded[(y + dy) * (W + 2 * P) + (x + dx)];
        }
    }
}

}  // namespace detail

// One full pass: seeded shuffle, forward(train) -> loss -> backward ->
// optimizer step per batch. Deterministic given the seed and thread-safe
// summation order of the kernels.
template <class T>
EpochMetrics<T> train_epoch(Model<T>& model, const Tensor<T>& images,
                            const std::vector<int>& labels, const TrainConfig& cfg,
                            Optimizer<T>& opt, Rng& rng) {
    cfg.validate();
    if (images.ndim() != 4 || images.dim(0) == 0)
        throw DimensionError("train_epoch: dataset is empty");
    const std::size_t n = images.dim(0);
    if (labels.size() != n) throw DimensionError("train_epoch: image/label count mismatch");
    const std::size_t sample = images.size() / n;

    std::vector<std::size_t> perm(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = i;
    rng.shuffle(perm.begin(), perm.end());

    EpochMetrics<T> metrics;
    double correct = 0;
    std::vector<double> spikes, neurons;

    for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(cfg.batch_size)) {
        const std::size_t bs = std::min<std::size_t>(cfg.batch_size, n - start);
        Tensor<T> batch({bs, images.dim(1), images.dim(2), images.dim(3)});
        std::vector<int> batch_labels(bs);
        for (std::size_t i = 0; i < bs; ++i) {
            std::copy_n(images.data() + perm[start + i] * sample, sample,
                        batch.data() + i * sample);
            batch_labels[i] = labels[perm[start + i]];
        }
        if (cfg.augment) detail::augment_batch(batch, rng);

        ForwardTrace<T> trace = forward(model, batch, Phase::train, &rng);
        LossBreakdown<T> lb =
            total_loss(trace.logits(), batch_labels, trace, static_cast<T>(cfg.lambda_h));
        Gradients<T> grads = backward(model, trace, batch_labels, static_cast<T>(cfg.lambda_h));
        opt.step(model, grads);

        metrics.loss += static_cast<double>(lb.total) * bs;
        metrics.ce += static_cast<double>(lb.ce) * bs;
        metrics.hoyer += static_cast<double>(lb.hoyer) * bs;
        const Tensor<T>& logits = trace.logits();
        const std::size_t classes = logits.dim(1);
        for (std::size_t b = 0; b < bs; ++b) {
            std::size_t best = 0;
            for (std::size_t j = 1; j < classes; ++j)
                if (logits[b * classes + j] > logits[b * classes + best]) best = j;
            if (static_cast<int>(best) == batch_labels[b]) correct += 1;
        }
        if (spikes.empty()) {
            spikes.assign(trace.spike_sites.size(), 0.0);
            neurons.assign(trace.spike_sites.size(), 0.0);
        }
        for (std::size_t s = 0; s < trace.spike_sites.size(); ++s) {
            const Tensor<T>& o = trace.acts[trace.spike_sites[s] + 1];
            double cnt = 0;
            for (std::size_t j = 0; j < o.size(); ++j) cnt += static_cast<double>(o[j]);
            spikes[s] += cnt;
            neurons[s] += static_cast<double>(o.size());
        }
    }
    metrics.loss /= static_cast<double>(n);
    metrics.ce /= static_cast<double>(n);
    metrics.hoyer /= static_cast<double>(n);
    metrics.accuracy = correct / static_cast<double>(n);
    metrics.spike_activity.resize(spikes.size());
    for (std::size_t s = 0; s < spikes.size(); ++s)
        metrics.spike_activity[s] = neurons[s] > 0 ? spikes[s] / neurons[s] : 0.0;
    for (const auto& l : model.layers)
        if (l.kind == LayerKind::hoyer_spike) {
            double ext = 1.0;
            if (l.spike.ema_initialized()) {
                double s = 0;
                for (T v : l.spike.ema_ext) s += static_cast<double>(v);
                ext = s / static_cast<double>(l.spike.ema_ext.size());
            }
            metrics.extremums.push_back(ext);
        }
    return metrics;
}

}  // namespace hsnn
