#pragma once

#include <cmath>

#include "hsnn/hoyer.hpp"
#include "hsnn/ops.hpp"

namespace hsnn {

// Lower clamp for the trainable clipping threshold.
inline constexpr double kVthFloor = 1e-3;

// How a spike site transforms its normalized potential. `binary` is the
// real model; `ramp` substitutes the integral of the surrogate window so
// numeric gradient checks differentiate the same function the analytic
// backward pass assumes; `identity` bypasses the site entirely, reducing
// the network to a plain CNN.
enum class SpikeMode { binary, ramp, identity };

template <class T>
struct HoyerSpikeState {
    T v_th = T(1);                     // trainable clipping threshold
    std::vector<T> ema_ext;            // EMA of batch extremums; empty until first update
    T ema_momentum = T(0.9);
    ExtremumMode mode = ExtremumMode::tensor_wise;
    T surrogate_scale = T(1);
    bool use_extremum = true;          // false: fire at z >= 1 (plain threshold ablation)

    bool ema_initialized() const { return !ema_ext.empty(); }

    void clamp_threshold() {
        if (v_th < static_cast<T>(kVthFloor)) v_th = static_cast<T>(kVthFloor);
    }
};

template <class T>
struct SpikeCache {
    Tensor<T> u;                 // membrane potential
    Tensor<T> z;                 // u / v_th
    std::vector<T> threshold_used;
    T v_th_snapshot = T(1);
};

// ema <- m*ema + (1-m)*batch; the first update adopts batch_ext outright.
template <class T>
void ema_update(HoyerSpikeState<T>& state, const std::vector<T>& batch_ext) {
    if (!state.ema_initialized()) {
        state.ema_ext = batch_ext;
        return;
    }
    if (state.ema_ext.size() != batch_ext.size())
        throw DimensionError("ema_update: extremum group count changed");
    const T m = state.ema_momentum;
    for (std::size_t i = 0; i < batch_ext.size(); ++i)
        state.ema_ext[i] = m * state.ema_ext[i] + (T(1) - m) * batch_ext[i];
}

namespace detail {

// channel index of flat element i for a [B, C, ...] tensor; 0 when the
// threshold is a single scalar
template <class T>
std::size_t group_of(const Tensor<T>& z, std::size_t i, std::size_t groups) {
    if (groups == 1) return 0;
    std::size_t inner = 1;
    for (std::size_t d = 2; d < z.ndim(); ++d) inner *= z.dim(d);
    return (i / inner) % groups;
}

}  // namespace detail

// z = u / v_th. Training fires against the current batch's clipped Hoyer
// extremum (all-zero groups fall back to 1) and folds that extremum into
// the EMA; inference fires against the stored EMA and mutates nothing.
template <class T>
std::pair<Tensor<T>, SpikeCache<T>> spike_forward(const Tensor<T>& u, HoyerSpikeState<T>& state,
                                                  Phase phase) {
    if (state.v_th < static_cast<T>(kVthFloor))
        throw DimensionError("spike_forward: threshold below floor");

    SpikeCache<T> cache;
    cache.u = u;
    cache.v_th_snapshot = state.v_th;
    Tensor<T> z(u.shape());
    const T inv_vth = T(1) / state.v_th;
    for (std::size_t i = 0; i < u.size(); ++i) z[i] = u[i] * inv_vth;

    std::vector<T> thr;
    if (!state.use_extremum) {
        thr.assign(1, T(1));
    } else if (phase == Phase::train) {
        thr = hoyer_extremum(clip_unit(z), state.mode);
        for (auto& t : thr)
            if (!extremum_defined(t)) t = T(1);
        ema_update(state, thr);
    } else {
        thr = state.ema_initialized() ? state.ema_ext : std::vector<T>{T(1)};
    }

    Tensor<T> o(u.shape());
    const std::size_t groups = thr.size();
    for (std::size_t i = 0; i < z.size(); ++i)
        o[i] = (z[i] >= thr[detail::group_of(z, i, groups)]) ? T(1) : T(0);

    cache.z = std::move(z);
    cache.threshold_used = std::move(thr);
    return {std::move(o), std::move(cache)};
}

// Constant-window surrogate for the spike derivative:
// scale on 0 < z < 2 (strict), 0 elsewhere.
template <class T>
Tensor<T> surrogate_grad(const Tensor<T>& z, T scale) {
    if (scale <= T(0)) throw DimensionError("surrogate_grad: scale must be positive");
    Tensor<T> g(z.shape());
    for (std::size_t i = 0; i < z.size(); ++i)
        g[i] = (z[i] > T(0) && z[i] < T(2)) ? scale : T(0);
    return g;
}

// grad_z = grad_o * surrogate(z); grad_u = grad_z / v_th;
// grad_vth = sum_i grad_z_i * (-u_i / v_th^2). The firing extremum is a
// detached constant and contributes no term.
template <class T>
std::pair<Tensor<T>, T> spike_backward(const Tensor<T>& grad_o, const SpikeCache<T>& cache,
                                       const HoyerSpikeState<T>& state) {
    if (!grad_o.same_shape(cache.z))
        throw DimensionError("spike_backward: grad shape mismatch");
    const T vth = cache.v_th_snapshot;
    const T inv_vth = T(1) / vth;
    const T inv_vth2 = inv_vth * inv_vth;
    Tensor<T> grad_u(grad_o.shape());
    T grad_vth = 0;
    for (std::size_t i = 0; i < grad_o.size(); ++i) {
        const T zi = cache.z[i];
        if (zi > T(0) && zi < T(2)) {
            const T gz = grad_o[i] * state.surrogate_scale;
            grad_u[i] = gz * inv_vth;
            grad_vth += gz * (-cache.u[i] * inv_vth2);
        }
    }
    return {std::move(grad_u), grad_vth};
}

// Surrogate-consistent stand-ins used by ramp/identity debug modes.
template <class T>
Tensor<T> spike_ramp(const Tensor<T>& z, T scale) {
    Tensor<T> o(z.shape());
    for (std::size_t i = 0; i < z.size(); ++i) {
        const T c = z[i] < T(0) ? T(0) : (z[i] > T(2) ? T(2) : z[i]);
        o[i] = scale * c;
    }
    return o;
}

}  // namespace hsnn
