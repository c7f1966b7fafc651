#pragma once

#include <cctype>
#include <optional>
#include <string>
#include <utility>

#include "hsnn/quantize.hpp"
#include "hsnn/spike.hpp"

namespace hsnn {

enum class LayerKind { conv, linear, batchnorm, maxpool, hoyer_spike, flatten, dropout };

inline const char* layer_kind_name(LayerKind k) {
    switch (k) {
        case LayerKind::conv: return "conv";
        case LayerKind::linear: return "linear";
        case LayerKind::batchnorm: return "batchnorm";
        case LayerKind::maxpool: return "maxpool";
        case LayerKind::hoyer_spike: return "hoyer_spike";
        case LayerKind::flatten: return "flatten";
        case LayerKind::dropout: return "dropout";
    }
    return "?";
}

template <class T>
struct Layer {
    LayerKind kind;
    // conv / linear
    Tensor<T> w, b;
    int stride = 1, pad = 0;
    // batchnorm
    Tensor<T> gamma, beta, running_mean, running_var;
    T bn_momentum = T(0.1), bn_eps = T(1e-5);
    // maxpool
    int pool_k = 2, pool_s = 2;
    // hoyer_spike
    HoyerSpikeState<T> spike;
    // dropout
    T drop_rate = T(0);
};

// Additive skip edge: the activation produced at acts[src] is added onto
// acts[dst] (dst > src). A non-empty proj_w is a bias-free 1x1 conv that
// reconciles channel count / spatial stride.
template <class T>
struct ShortcutEdge {
    std::size_t src = 0, dst = 0;  // indices into the trace's activation list
    Tensor<T> proj_w;
    int proj_stride = 1;
    bool has_projection() const { return !proj_w.empty(); }
};

template <class T>
struct Model {
    std::vector<Layer<T>> layers;
    std::vector<ShortcutEdge<T>> shortcuts;
    std::string descriptor;
    std::size_t in_ch = 1, in_h = 28, in_w = 28;
    std::size_t class_count = 10;
    SpikeMode spike_mode = SpikeMode::binary;
    int quant_bits = 0;  // 0 = full precision; 2..6 = conv weight QAT
    std::uint64_t param_version = 0;

    std::vector<std::size_t> input_shape(std::size_t batch) const {
        return {batch, in_ch, in_h, in_w};
    }
};

template <class T>
struct LayerCache {
    BatchNormCache<T> bn;
    std::vector<std::size_t> pool_argmax;
    std::vector<std::size_t> pool_in_shape;
    SpikeCache<T> spike;
    Tensor<T> dropout_mask;  // holds 0 or 1/(1-rate)
    Tensor<T> w_used;        // quantized conv weights actually applied
};

template <class T>
struct ForwardTrace {
    // acts[i] = input to layer i after any shortcut additions; acts[L] = logits
    std::vector<Tensor<T>> acts;
    std::vector<LayerCache<T>> caches;
    std::vector<std::size_t> spike_sites;  // layer indices carrying a Hoyer term
    Phase phase = Phase::infer;
    std::uint64_t param_version = 0;

    const Tensor<T>& logits() const { return acts.back(); }
    // membrane potential entering spike layer `site`
    const Tensor<T>& potential(std::size_t site) const { return acts[site]; }
};

template <class T>
struct LayerGrads {
    Tensor<T> w, b, gamma, beta;
    T v_th = T(0);
};

template <class T>
struct Gradients {
    std::vector<LayerGrads<T>> layers;
    std::vector<Tensor<T>> shortcut_w;
};

template <class T>
Gradients<T> zero_gradients(const Model<T>& model) {
    Gradients<T> g;
    g.layers.resize(model.layers.size());
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        const auto& l = model.layers[i];
        auto& gl = g.layers[i];
        if (l.kind == LayerKind::conv || l.kind == LayerKind::linear) {
            gl.w = Tensor<T>::zeros_like(l.w);
            gl.b = Tensor<T>::zeros_like(l.b);
        } else if (l.kind == LayerKind::batchnorm) {
            gl.gamma = Tensor<T>::zeros_like(l.gamma);
            gl.beta = Tensor<T>::zeros_like(l.beta);
        }
    }
    for (const auto& sc : model.shortcuts)
        g.shortcut_w.push_back(sc.has_projection() ? Tensor<T>::zeros_like(sc.proj_w) : Tensor<T>());
    return g;
}

// Flat view over every trainable scalar, in a fixed enumeration order
// shared by the optimizer, the checkpoint writer and gradcheck.
template <class T>
struct ParamRef {
    T* value = nullptr;
    const T* grad = nullptr;
    std::size_t n = 0;
    bool is_threshold = false;
    std::string group;
};

template <class T>
std::vector<ParamRef<T>> param_refs(Model<T>& model, const Gradients<T>* grads = nullptr) {
    std::vector<ParamRef<T>> refs;
    auto add = [&](Tensor<T>& t, const Tensor<T>* g, bool thr, std::string group) {
        if (t.empty()) return;
        refs.push_back({t.data(), g ? g->data() : nullptr, t.size(), thr, std::move(group)});
    };
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        auto& l = model.layers[i];
        const LayerGrads<T>* gl = grads ? &grads->layers[i] : nullptr;
        const std::string tag = std::to_string(i) + ":" + layer_kind_name(l.kind);
        switch (l.kind) {
            case LayerKind::conv:
            case LayerKind::linear:
                add(l.w, gl ? &gl->w : nullptr, false, tag + ":w");
                add(l.b, gl ? &gl->b : nullptr, false, tag + ":b");
                break;
            case LayerKind::batchnorm:
                add(l.gamma, gl ? &gl->gamma : nullptr, false, tag + ":gamma");
                add(l.beta, gl ? &gl->beta : nullptr, false, tag + ":beta");
                break;
            case LayerKind::hoyer_spike:
                refs.push_back({&l.spike.v_th, gl ? &gl->v_th : nullptr, 1, true, tag + ":v_th"});
                break;
            default:
                break;
        }
    }
    for (std::size_t s = 0; s < model.shortcuts.size(); ++s)
        if (model.shortcuts[s].has_projection())
            add(model.shortcuts[s].proj_w, grads ? &grads->shortcut_w[s] : nullptr, false,
                "shortcut" + std::to_string(s) + ":w");
    return refs;
}

// Quantization-aware forward weights for a conv layer: the master tensor
// stays full precision and the returned grid is what the layer computes
// with. Only convolutions are quantized; anything else is an error.
template <class T>
Tensor<T> qat_forward_weights(const Layer<T>& l, int bits) {
    if (l.kind != LayerKind::conv)
        throw DimensionError(std::string("qat: only conv layers are quantized, got ") +
                             layer_kind_name(l.kind));
    return quantize_weights(l.w, bits).first;
}

namespace detail {

template <class T>
Tensor<T> conv_weights_for_forward(const Layer<T>& l, int quant_bits, LayerCache<T>* cache) {
    if (quant_bits > 0) {
        Tensor<T> wq = qat_forward_weights(l, quant_bits);
        if (cache) cache->w_used = wq;
        return wq;
    }
    return l.w;
}

}  // namespace detail

// Single pass through the layer list. Analog input feeds the first layer
// directly; spike layers record their membrane potentials for the Hoyer
// term; shortcut edges add their (possibly projected) source activation
// onto the destination. Dropout needs `rng` in the train phase.
template <class T>
ForwardTrace<T> forward(Model<T>& model, const Tensor<T>& x, Phase phase, Rng* rng = nullptr) {
    if (x.ndim() != 4 || x.dim(1) != model.in_ch || x.dim(2) != model.in_h || x.dim(3) != model.in_w)
        throw DimensionError("forward: input " + x.shape_str() + " does not match model input " +
                             Tensor<T>({1, model.in_ch, model.in_h, model.in_w}).shape_str());
    const std::size_t L = model.layers.size();
    ForwardTrace<T> trace;
    trace.phase = phase;
    trace.param_version = model.param_version;
    trace.acts.resize(L + 1);
    trace.caches.resize(L);
    trace.acts[0] = x;

    for (std::size_t i = 0; i < L; ++i) {
        auto& l = model.layers[i];
        auto& cache = trace.caches[i];
        const Tensor<T>& in = trace.acts[i];
        Tensor<T> out;
        switch (l.kind) {
            case LayerKind::conv: {
                Tensor<T> w_used = detail::conv_weights_for_forward(l, model.quant_bits, &cache);
                out = conv2d_forward(in, w_used, l.b, l.stride, l.pad);
                break;
            }
            case LayerKind::linear: {
                if (in.ndim() != 2) throw DimensionError("linear: expected flattened input");
                out = matmul_nt(in, l.w);
                const std::size_t B = out.dim(0), O = out.dim(1);
                for (std::size_t bi = 0; bi < B; ++bi)
                    for (std::size_t o = 0; o < O; ++o) out[bi * O + o] += l.b[o];
                break;
            }
            case LayerKind::batchnorm:
                out = batchnorm_forward(in, l.gamma, l.beta, l.running_mean, l.running_var, phase,
                                        l.bn_momentum, l.bn_eps, &cache.bn);
                break;
            case LayerKind::maxpool: {
                auto [y, am] = maxpool2d(in, l.pool_k, l.pool_s);
                cache.pool_argmax = std::move(am);
                cache.pool_in_shape = in.shape();
                out = std::move(y);
                break;
            }
            case LayerKind::hoyer_spike: {
                trace.spike_sites.push_back(i);
                if (model.spike_mode == SpikeMode::binary) {
                    auto [o, sc] = spike_forward(in, l.spike, phase);
                    cache.spike = std::move(sc);
                    out = std::move(o);
                } else if (model.spike_mode == SpikeMode::ramp) {
                    SpikeCache<T> sc;
                    sc.u = in;
                    sc.v_th_snapshot = l.spike.v_th;
                    Tensor<T> z(in.shape());
                    const T inv = T(1) / l.spike.v_th;
                    for (std::size_t j = 0; j < in.size(); ++j) z[j] = in[j] * inv;
                    out = spike_ramp(z, l.spike.surrogate_scale);
                    sc.z = std::move(z);
                    cache.spike = std::move(sc);
                } else {  // identity: plain CNN reduction
                    out = in;
                }
                break;
            }
            case LayerKind::flatten: {
                std::size_t rest = 1;
                for (std::size_t d = 1; d < in.ndim(); ++d) rest *= in.dim(d);
                out = in.reshaped({in.dim(0), rest});
                break;
            }
            case LayerKind::dropout: {
                if (phase == Phase::train && l.drop_rate > T(0)) {
                    if (!rng) throw DimensionError("forward: dropout in train phase needs an rng");
                    const T keep_scale = T(1) / (T(1) - l.drop_rate);
                    Tensor<T> mask(in.shape());
                    for (std::size_t j = 0; j < in.size(); ++j)
                        mask[j] = (rng->next_double() >= static_cast<double>(l.drop_rate))
                                      ? keep_scale
                                      : T(0);
                    out = Tensor<T>(in.shape());
                    for (std::size_t j = 0; j < in.size(); ++j) out[j] = in[j] * mask[j];
                    cache.dropout_mask = std::move(mask);
                } else {
                    out = in;
                }
                break;
            }
        }
        trace.acts[i + 1] = std::move(out);
        for (auto& sc : model.shortcuts) {
            if (sc.dst != i + 1) continue;
            const Tensor<T>& src = trace.acts[sc.src];
            Tensor<T> add = sc.has_projection()
                                ? conv2d_forward(src, sc.proj_w,
                                                 Tensor<T>({sc.proj_w.dim(0)}), sc.proj_stride, 0)
                                : src;
            trace.acts[i + 1] += add;
        }
    }
    return trace;
}

template <class T>
struct LossBreakdown {
    T total = 0, ce = 0, hoyer = 0, lambda_h = 0;
};

// Numerically stabilized softmax cross-entropy, averaged over the batch.
// Returns the loss and d(ce)/d(logits) = (softmax - onehot)/batch.
template <class T>
std::pair<T, Tensor<T>> softmax_ce(const Tensor<T>& logits, const std::vector<int>& labels) {
    if (logits.ndim() != 2) throw DimensionError("softmax_ce: logits must be B x classes");
    const std::size_t B = logits.dim(0), N = logits.dim(1);
    if (labels.size() != B) throw DimensionError("softmax_ce: label count != batch");
    Tensor<T> grad(logits.shape());
    T loss = 0;
    for (std::size_t b = 0; b < B; ++b) {
        const int y = labels[b];
        if (y < 0 || static_cast<std::size_t>(y) >= N)
            throw DimensionError("softmax_ce: label out of range");
        const T* row = logits.data() + b * N;
        T mx = row[0];
        for (std::size_t j = 1; j < N; ++j) mx = std::max(mx, row[j]);
        T denom = 0;
        for (std::size_t j = 0; j < N; ++j) denom += std::exp(row[j] - mx);
        const T log_denom = std::log(denom);
        loss += -(row[y] - mx - log_denom);
        T* g = grad.data() + b * N;
        for (std::size_t j = 0; j < N; ++j) {
            const T s = std::exp(row[j] - mx) / denom;
            g[j] = (s - (static_cast<std::size_t>(y) == j ? T(1) : T(0))) / static_cast<T>(B);
        }
    }
    return {loss / static_cast<T>(B), std::move(grad)};
}

// total = ce + lambda_h * sum over spike sites of H(u_l); the classifier
// head carries no Hoyer term.
template <class T>
LossBreakdown<T> total_loss(const Tensor<T>& logits, const std::vector<int>& labels,
                            const ForwardTrace<T>& trace, T lambda_h) {
    LossBreakdown<T> out;
    out.lambda_h = lambda_h;
    out.ce = softmax_ce(logits, labels).first;
    for (std::size_t site : trace.spike_sites) out.hoyer += hoyer_square(trace.potential(site));
    out.total = out.ce + lambda_h * out.hoyer;
    return out;
}

enum class LossTerms { both, ce_only, hoyer_only };

// Reverse sweep propagating the combined gradient of CE + lambda_h * L_H.
// At each spike site the direct Hoyer term lambda_h * dH(u_l)/du_l joins
// the incoming gradient; shortcut edges fan their gradient back to the
// source activation. One combined sweep equals the separate CE and Hoyer
// chains by linearity.
template <class T>
Gradients<T> backward(const Model<T>& model, const ForwardTrace<T>& trace,
                      const std::vector<int>& labels, T lambda_h,
                      LossTerms terms = LossTerms::both, Tensor<T>* grad_input = nullptr) {
    if (trace.phase != Phase::train)
        throw DimensionError("backward: trace must come from a train-phase forward");
    if (trace.param_version != model.param_version)
        throw DimensionError("backward: stale trace (parameters changed since forward)");
    const std::size_t L = model.layers.size();
    Gradients<T> grads = zero_gradients(model);

    std::vector<Tensor<T>> grad_acts(L + 1);
    if (terms == LossTerms::hoyer_only) {
        grad_acts[L] = Tensor<T>(trace.logits().shape());
    } else {
        grad_acts[L] = softmax_ce(trace.logits(), labels).second;
    }
    const bool with_hoyer = (terms != LossTerms::ce_only) && lambda_h != T(0);

    for (std::size_t ii = L; ii-- > 0;) {
        // shortcut edges landing on this layer's output
        for (std::size_t s = 0; s < model.shortcuts.size(); ++s) {
            const auto& sc = model.shortcuts[s];
            if (sc.dst != ii + 1) continue;
            const Tensor<T>& gy = grad_acts[ii + 1];
            if (sc.has_projection()) {
                auto [gx, gw, gb] =
                    conv2d_backward(gy, trace.acts[sc.src], sc.proj_w, sc.proj_stride, 0);
                (void)gb;  // projection is bias-free
                grads.shortcut_w[s] += gw;
                if (grad_acts[sc.src].empty()) grad_acts[sc.src] = Tensor<T>(trace.acts[sc.src].shape());
                grad_acts[sc.src] += gx;
            } else {
                if (grad_acts[sc.src].empty()) grad_acts[sc.src] = Tensor<T>(trace.acts[sc.src].shape());
                grad_acts[sc.src] += gy;
            }
        }

        const auto& l = model.layers[ii];
        const auto& cache = trace.caches[ii];
        auto& gl = grads.layers[ii];
        const Tensor<T>& gy = grad_acts[ii + 1];
        const Tensor<T>& in = trace.acts[ii];
        Tensor<T> gx;
        switch (l.kind) {
            case LayerKind::conv: {
                const Tensor<T>& w_used =
                    (model.quant_bits > 0) ? cache.w_used : l.w;  // straight-through to master
                auto [gxx, gw, gb] = conv2d_backward(gy, in, w_used, l.stride, l.pad);
                gx = std::move(gxx);
                gl.w += gw;
                gl.b += gb;
                break;
            }
            case LayerKind::linear: {
                gx = matmul(gy, l.w);
                gl.w += matmul_tn(gy, in);
                const std::size_t B = gy.dim(0), O = gy.dim(1);
                for (std::size_t bi = 0; bi < B; ++bi)
                    for (std::size_t o = 0; o < O; ++o) gl.b[o] += gy[bi * O + o];
                break;
            }
            case LayerKind::batchnorm: {
                auto [gxx, gg, gb] = batchnorm_backward(gy, l.gamma, cache.bn);
                gx = std::move(gxx);
                gl.gamma += gg;
                gl.beta += gb;
                break;
            }
            case LayerKind::maxpool:
                gx = maxpool2d_backward(gy, cache.pool_argmax, cache.pool_in_shape);
                break;
            case LayerKind::hoyer_spike: {
                if (model.spike_mode == SpikeMode::identity) {
                    gx = gy;
                } else {
                    auto [gu, gvth] = spike_backward(gy, cache.spike, l.spike);
                    gx = std::move(gu);
                    gl.v_th += gvth;
                }
                if (with_hoyer) {
                    Tensor<T> hg = hoyer_grad(in);
                    for (std::size_t j = 0; j < gx.size(); ++j) gx[j] += lambda_h * hg[j];
                }
                break;
            }
            case LayerKind::flatten:
                gx = gy.reshaped(in.shape());
                break;
            case LayerKind::dropout:
                if (!cache.dropout_mask.empty()) {
                    gx = Tensor<T>(gy.shape());
                    for (std::size_t j = 0; j < gy.size(); ++j)
                        gx[j] = gy[j] * cache.dropout_mask[j];
                } else {
                    gx = gy;
                }
                break;
        }
        if (grad_acts[ii].empty())
            grad_acts[ii] = std::move(gx);
        else
            grad_acts[ii] += gx;
    }
    if (grad_input) *grad_input = std::move(grad_acts[0]);
    return grads;
}

// ---- architecture descriptors & builders ----------------------------------

struct ModelOptions {
    double dropout_rate = 0.1;
    double ema_momentum = 0.9;
    double surrogate_scale = 1.0;
    ExtremumMode extremum_mode = ExtremumMode::tensor_wise;
    bool use_extremum = true;  // false: plain v_th threshold ablation
    std::uint64_t seed = 1;
    int quant_bits = 0;
};

struct ArchToken {
    char kind;  // 'c' conv, 'p' pool, 'b' residual block
    int width = 0;
    int stride = 1;
};

struct ArchDesc {
    std::string name;
    std::vector<ArchToken> conv_tokens;
    std::vector<int> fc_widths;
    int classes = 0;
};

// Grammar: name ":" conv "|" fc "|" classes, where conv is '-'-separated
// tokens cN / p / bN[sS] and fc is '-'-separated fcN tokens. See README.
inline ArchDesc parse_descriptor(const std::string& desc) {
    auto fail = [&](const std::string& why) {
        throw FormatError("bad architecture descriptor '" + desc + "': " + why);
    };
    ArchDesc a;
    const auto colon = desc.find(':');
    if (colon == std::string::npos) fail("missing ':'");
    a.name = desc.substr(0, colon);
    std::string rest = desc.substr(colon + 1);
    const auto bar1 = rest.find('|');
    if (bar1 == std::string::npos) fail("missing conv|fc separator");
    const auto bar2 = rest.find('|', bar1 + 1);
    if (bar2 == std::string::npos) fail("missing fc|classes separator");
    const std::string conv_part = rest.substr(0, bar1);
    const std::string fc_part = rest.substr(bar1 + 1, bar2 - bar1 - 1);
    const std::string cls_part = rest.substr(bar2 + 1);

    auto split = [](const std::string& s) {
        std::vector<std::string> out;
        std::size_t start = 0;
        while (start <= s.size()) {
            auto p = s.find('-', start);
            if (p == std::string::npos) p = s.size();
            if (p > start) out.push_back(s.substr(start, p - start));
            start = p + 1;
        }
        return out;
    };
    auto to_int = [&](const std::string& s) {
        if (s.empty()) fail("empty integer");
        for (char c : s)
            if (!std::isdigit(static_cast<unsigned char>(c))) fail("not a number: " + s);
        return std::stoi(s);
    };

    for (const auto& tok : split(conv_part)) {
        ArchToken t{};
        if (tok == "p") {
            t.kind = 'p';
        } else if (tok[0] == 'c') {
            t.kind = 'c';
            t.width = to_int(tok.substr(1));
        } else if (tok[0] == 'b') {
            t.kind = 'b';
            auto s = tok.substr(1);
            auto sp = s.find('s');
            if (sp == std::string::npos) {
                t.width = to_int(s);
            } else {
                t.width = to_int(s.substr(0, sp));
                t.stride = to_int(s.substr(sp + 1));
            }
        } else {
            fail("unknown conv token: " + tok);
        }
        if ((t.kind == 'c' || t.kind == 'b') && t.width < 1) fail("width must be >= 1");
        a.conv_tokens.push_back(t);
    }
    for (const auto& tok : split(fc_part)) {
        if (tok.rfind("fc", 0) != 0) fail("unknown fc token: " + tok);
        a.fc_widths.push_back(to_int(tok.substr(2)));
    }
    a.classes = to_int(cls_part);
    if (a.classes < 1) fail("class count must be >= 1");
    for (std::size_t i = 0; i < a.conv_tokens.size(); ++i)
        if (a.conv_tokens[i].kind == 'p' && (i == 0 || a.conv_tokens[i - 1].kind != 'c'))
            fail("'p' must directly follow a conv token");
    return a;
}

inline std::string render_descriptor(const ArchDesc& a) {
    std::string s = a.name + ":";
    for (std::size_t i = 0; i < a.conv_tokens.size(); ++i) {
        const auto& t = a.conv_tokens[i];
        if (i) s += "-";
        if (t.kind == 'p')
            s += "p";
        else if (t.kind == 'c')
            s += "c" + std::to_string(t.width);
        else {
            s += "b" + std::to_string(t.width);
            if (t.stride != 1) s += "s" + std::to_string(t.stride);
        }
    }
    s += "|";
    for (std::size_t i = 0; i < a.fc_widths.size(); ++i)
        s += (i ? "-" : "") + std::string("fc") + std::to_string(a.fc_widths[i]);
    s += "|" + std::to_string(a.classes);
    return s;
}

namespace detail {

template <class T>
Layer<T> make_conv(std::size_t in_ch, std::size_t out_ch, int k, int stride, int pad, Rng& rng) {
    Layer<T> l;
    l.kind = LayerKind::conv;
    const std::size_t ku = static_cast<std::size_t>(k);
    l.w = kaiming_uniform_init<T>({out_ch, in_ch, ku, ku}, in_ch * ku * ku, rng);
    l.b = Tensor<T>({out_ch});
    l.stride = stride;
    l.pad = pad;
    return l;
}

template <class T>
Layer<T> make_linear(std::size_t in, std::size_t out, Rng& rng) {
    Layer<T> l;
    l.kind = LayerKind::linear;
    l.w = kaiming_uniform_init<T>({out, in}, in, rng);
    l.b = Tensor<T>({out});
    return l;
}

template <class T>
Layer<T> make_batchnorm(std::size_t ch) {
    Layer<T> l;
    l.kind = LayerKind::batchnorm;
    l.gamma = Tensor<T>({ch});
    l.gamma.fill(T(1));
    l.beta = Tensor<T>({ch});
    l.running_mean = Tensor<T>({ch});
    l.running_var = Tensor<T>({ch});
    l.running_var.fill(T(1));
    return l;
}

template <class T>
Layer<T> make_spike(const ModelOptions& opt) {
    Layer<T> l;
    l.kind = LayerKind::hoyer_spike;
    l.spike.v_th = T(1);
    l.spike.ema_momentum = static_cast<T>(opt.ema_momentum);
    l.spike.surrogate_scale = static_cast<T>(opt.surrogate_scale);
    l.spike.mode = opt.extremum_mode;
    l.spike.use_extremum = opt.use_extremum;
    return l;
}

}  // namespace detail

// Materializes a descriptor for the given input geometry. VGG-style conv
// tokens expand to conv - [pool] - BN - spike; residual tokens expand to
// a pre-activation block (BN - spike - conv, twice) with an additive
// shortcut bypassing the block; fc tokens to linear - spike - [dropout].
// The final linear head has no spike layer after it.
template <class T>
Model<T> build_model(const ArchDesc& arch, std::size_t in_ch, std::size_t in_h, std::size_t in_w,
                     const ModelOptions& opt = {}) {
    Model<T> m;
    m.descriptor = render_descriptor(arch);
    m.in_ch = in_ch;
    m.in_h = in_h;
    m.in_w = in_w;
    m.class_count = static_cast<std::size_t>(arch.classes);
    m.quant_bits = opt.quant_bits;
    Rng rng(opt.seed);

    const bool residual_style =
        std::any_of(arch.conv_tokens.begin(), arch.conv_tokens.end(),
                    [](const ArchToken& t) { return t.kind == 'b'; });

    std::size_t ch = in_ch, h = in_h, w = in_w;
    auto conv_out = [&](std::size_t dim, int k, int s, int p) {
        if (dim + 2 * static_cast<std::size_t>(p) < static_cast<std::size_t>(k))
            throw DimensionError("build_model: spatial dimension collapsed below kernel");
        return (dim + 2 * p - k) / s + 1;
    };

    for (std::size_t i = 0; i < arch.conv_tokens.size(); ++i) {
        const auto& t = arch.conv_tokens[i];
        if (t.kind == 'c') {
            m.layers.push_back(detail::make_conv<T>(ch, t.width, 3, 1, 1, rng));
            ch = t.width;
            h = conv_out(h, 3, 1, 1);
            w = conv_out(w, 3, 1, 1);
            if (i + 1 < arch.conv_tokens.size() && arch.conv_tokens[i + 1].kind == 'p') {
                Layer<T> pool;
                pool.kind = LayerKind::maxpool;
                m.layers.push_back(pool);
                if (h < 2 || w < 2) throw DimensionError("build_model: pool window exceeds input");
                h = (h - 2) / 2 + 1;
                w = (w - 2) / 2 + 1;
                ++i;
            }
            if (!residual_style) {
                m.layers.push_back(detail::make_batchnorm<T>(ch));
                m.layers.push_back(detail::make_spike<T>(opt));
            }
        } else if (t.kind == 'b') {
            const std::size_t block_in_act = m.layers.size();  // acts index of block input
            const std::size_t in_c = ch;
            m.layers.push_back(detail::make_batchnorm<T>(in_c));
            m.layers.push_back(detail::make_spike<T>(opt));
            m.layers.push_back(detail::make_conv<T>(in_c, t.width, 3, t.stride, 1, rng));
            h = conv_out(h, 3, t.stride, 1);
            w = conv_out(w, 3, t.stride, 1);
            ch = t.width;
            m.layers.push_back(detail::make_batchnorm<T>(ch));
            m.layers.push_back(detail::make_spike<T>(opt));
            m.layers.push_back(detail::make_conv<T>(ch, t.width, 3, 1, 1, rng));
            h = conv_out(h, 3, 1, 1);
            w = conv_out(w, 3, 1, 1);
            ShortcutEdge<T> sc;
            sc.src = block_in_act;
            sc.dst = m.layers.size();
            if (in_c != static_cast<std::size_t>(t.width) || t.stride != 1) {
                sc.proj_w = kaiming_uniform_init<T>(
                    {static_cast<std::size_t>(t.width), in_c, 1, 1}, in_c, rng);
                sc.proj_stride = t.stride;
            }
            m.shortcuts.push_back(std::move(sc));
        }
    }
    if (residual_style && !arch.conv_tokens.empty()) {
        m.layers.push_back(detail::make_batchnorm<T>(ch));
        m.layers.push_back(detail::make_spike<T>(opt));
    }

    std::size_t feat = ch * h * w;
    Layer<T> fl;
    fl.kind = LayerKind::flatten;
    m.layers.push_back(fl);
    for (int width : arch.fc_widths) {
        m.layers.push_back(detail::make_linear<T>(feat, static_cast<std::size_t>(width), rng));
        m.layers.push_back(detail::make_spike<T>(opt));
        if (opt.dropout_rate > 0) {
            Layer<T> d;
            d.kind = LayerKind::dropout;
            d.drop_rate = static_cast<T>(opt.dropout_rate);
            m.layers.push_back(d);
        }
        feat = static_cast<std::size_t>(width);
    }
    m.layers.push_back(detail::make_linear<T>(feat, m.class_count, rng));
    return m;
}

template <class T>
Model<T> build_from_descriptor(const std::string& desc, std::size_t in_ch, std::size_t in_h,
                               std::size_t in_w, const ModelOptions& opt = {}) {
    return build_model<T>(parse_descriptor(desc), in_ch, in_h, in_w, opt);
}

// 4 conv + 2 linear VGG-style stack: conv - pool - BN - spike blocks.
template <class T>
Model<T> build_vgg_s(std::size_t in_ch, std::size_t in_h, std::size_t in_w, int classes,
                     int width_multiplier = 1, const ModelOptions& opt = {}) {
    if (width_multiplier < 1) throw DimensionError("build_vgg_s: width multiplier must be >= 1");
    const int mul = width_multiplier;
    std::string desc = "vgg-s:c" + std::to_string(16 * mul) + "-p-c" + std::to_string(32 * mul) +
                       "-p-c" + std::to_string(64 * mul) + "-c" + std::to_string(64 * mul) +
                       "|fc" + std::to_string(256 * mul) + "-fc" + std::to_string(128 * mul) +
                       "|" + std::to_string(classes);
    return build_from_descriptor<T>(desc, in_ch, in_h, in_w, opt);
}

// Stem conv + pre-activation residual blocks (BN - spike - conv ordering)
// with a shortcut bypassing every block.
template <class T>
Model<T> build_resnet_s(std::size_t in_ch, std::size_t in_h, std::size_t in_w, int classes,
                        int blocks = 3, const ModelOptions& opt = {}) {
    if (blocks < 1) throw DimensionError("build_resnet_s: need at least one block");
    std::string desc = "resnet-s:c16";
    int width = 16;
    for (int b = 0; b < blocks; ++b) {
        if (b > 0 && width < 64) {
            width *= 2;
            desc += "-b" + std::to_string(width) + "s2";
        } else {
            desc += "-b" + std::to_string(width);
        }
    }
    desc += "|fc128|" + std::to_string(classes);
    return build_from_descriptor<T>(desc, in_ch, in_h, in_w, opt);
}

template <class T>
Model<T> build_mlp(std::size_t in_ch, std::size_t in_h, std::size_t in_w, int classes,
                   const ModelOptions& opt = {}) {
    return build_from_descriptor<T>("mlp:|fc128-fc64|" + std::to_string(classes), in_ch, in_h,
                                    in_w, opt);
}

// Firing fraction per spike layer over a set of samples, inference phase:
// S_l = spikes emitted / (neurons x samples).
template <class T>
std::vector<double> measure_spiking_activity(Model<T>& model, const Tensor<T>& images,
                                             std::size_t batch_size = 256) {
    if (images.ndim() != 4 || images.dim(0) == 0)
        throw DimensionError("measure_spiking_activity: empty dataset");
    const std::size_t n = images.dim(0);
    const std::size_t sample = images.size() / n;
    std::vector<double> spikes, neurons;
    for (std::size_t start = 0; start < n; start += batch_size) {
        const std::size_t bs = std::min(batch_size, n - start);
        Tensor<T> batch({bs, images.dim(1), images.dim(2), images.dim(3)});
        std::copy_n(images.data() + start * sample, bs * sample, batch.data());
        ForwardTrace<T> trace = forward(model, batch, Phase::infer);
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
    std::vector<double> act(spikes.size());
    for (std::size_t s = 0; s < spikes.size(); ++s)
        act[s] = neurons[s] > 0 ? spikes[s] / neurons[s] : 0.0;
    return act;
}

}  // namespace hsnn
