#pragma once

#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "hsnn/network.hpp"
#include "hsnn/optimizer.hpp"

namespace hsnn {

inline constexpr char kCheckpointMagic[4] = {'H', 'S', 'N', 'N'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <class T>
constexpr std::uint8_t dtype_tag();
template <>
constexpr std::uint8_t dtype_tag<float>() { return 0; }
template <>
constexpr std::uint8_t dtype_tag<double>() { return 1; }

// ---- flat key = value config records ---------------------------------------

inline std::string render_kv(const std::vector<std::pair<std::string, std::string>>& kv) {
    std::string out;
    for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
    return out;
}

inline std::map<std::string, std::string> parse_kv(const std::string& text) {
    std::map<std::string, std::string> out;
    std::istringstream ss(text);
    std::string line;
    auto trim = [](std::string s) {
        const char* ws = " \t\r";
        const auto a = s.find_first_not_of(ws);
        if (a == std::string::npos) return std::string();
        const auto b = s.find_last_not_of(ws);
        return s.substr(a, b - a + 1);
    };
    while (std::getline(ss, line)) {
        line = trim(line);
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw FormatError("config line missing '=': " + line);
        out[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    return out;
}

inline std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::vector<std::pair<std::string, std::string>> config_to_kv(const TrainConfig& cfg) {
    return {
        {"epochs", std::to_string(cfg.epochs)},
        {"batch_size", std::to_string(cfg.batch_size)},
        {"base_lr", fmt_double(cfg.base_lr)},
        {"lambda_h", fmt_double(cfg.lambda_h)},
        {"surrogate_scale", fmt_double(cfg.surrogate_scale)},
        {"ema_momentum", fmt_double(cfg.ema_momentum)},
        {"extremum_mode", cfg.extremum_mode},
        {"dropout", fmt_double(cfg.dropout)},
        {"weight_decay", fmt_double(cfg.weight_decay)},
        {"seed", std::to_string(cfg.seed)},
        {"quant_bits", std::to_string(cfg.quant_bits)},
        {"optimizer", cfg.optimizer},
        {"deterministic", cfg.deterministic ? "1" : "0"},
        {"augment", cfg.augment ? "1" : "0"},
    };
}

inline void config_apply_kv(TrainConfig& cfg, const std::map<std::string, std::string>& kv) {
    auto geti = [&](const char* k, int& dst) {
        if (auto it = kv.find(k); it != kv.end()) dst = std::stoi(it->second);
    };
    auto getd = [&](const char* k, double& dst) {
        if (auto it = kv.find(k); it != kv.end()) dst = std::strtod(it->second.c_str(), nullptr);
    };
    auto gets = [&](const char* k, std::string& dst) {
        if (auto it = kv.find(k); it != kv.end()) dst = it->second;
    };
    auto getb = [&](const char* k, bool& dst) {
        if (auto it = kv.find(k); it != kv.end()) dst = (it->second == "1" || it->second == "true");
    };
    geti("epochs", cfg.epochs);
    geti("batch_size", cfg.batch_size);
    getd("base_lr", cfg.base_lr);
    getd("lambda_h", cfg.lambda_h);
    getd("surrogate_scale", cfg.surrogate_scale);
    getd("ema_momentum", cfg.ema_momentum);
    gets("extremum_mode", cfg.extremum_mode);
    getd("dropout", cfg.dropout);
    getd("weight_decay", cfg.weight_decay);
    if (auto it = kv.find("seed"); it != kv.end()) cfg.seed = std::stoull(it->second);
    geti("quant_bits", cfg.quant_bits);
    gets("optimizer", cfg.optimizer);
    getb("deterministic", cfg.deterministic);
    getb("augment", cfg.augment);
}

// ---- binary checkpoint ------------------------------------------------------

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
    char b[4];
    b[0] = static_cast<char>(v & 0xff);
    b[1] = static_cast<char>((v >> 8) & 0xff);
    b[2] = static_cast<char>((v >> 16) & 0xff);
    b[3] = static_cast<char>((v >> 24) & 0xff);
    out.append(b, 4);
}

struct ByteReader {
    const std::string& buf;
    std::size_t pos = 0;

    void need(std::size_t n) const {
        if (pos + n > buf.size()) throw TruncationError("checkpoint truncated");
    }
    std::uint8_t u8() {
        need(1);
        return static_cast<std::uint8_t>(buf[pos++]);
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<std::uint8_t>(buf[pos + i]);
        pos += 4;
        return v;
    }
    std::string bytes(std::size_t n) {
        need(n);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

template <class T>
void put_tensor(std::string& out, const Tensor<T>& t) {
    out.push_back(static_cast<char>(dtype_tag<T>()));
    out.push_back(static_cast<char>(t.ndim()));
    for (std::size_t d = 0; d < t.ndim(); ++d) put_u32(out, static_cast<std::uint32_t>(t.dim(d)));
    const std::size_t bytes = t.size() * sizeof(T);
    const std::size_t at = out.size();
    out.resize(at + bytes);
    std::memcpy(out.data() + at, t.data(), bytes);
}

template <class T>
Tensor<T> get_tensor(ByteReader& r) {
    const std::uint8_t tag = r.u8();
    if (tag != dtype_tag<T>())
        throw FormatError("checkpoint tensor dtype tag " + std::to_string(tag) +
                          " does not match requested precision");
    const std::uint8_t ndim = r.u8();
    std::vector<std::size_t> shape(ndim);
    for (auto& d : shape) d = r.u32();
    Tensor<T> t(shape);
    const std::size_t bytes = t.size() * sizeof(T);
    r.need(bytes);
    std::memcpy(t.data(), r.buf.data() + r.pos, bytes);
    r.pos += bytes;
    return t;
}

template <class T>
struct ParamUnitEntry {
    Tensor<T>* tensor;
    bool exact_shape;  // false only for the EMA extremum, whose length may grow
};

template <class T>
std::vector<std::vector<ParamUnitEntry<T>>> parameter_units(Model<T>& model,
                                                            std::vector<Tensor<T>>& vth_scratch,
                                                            std::vector<Tensor<T>>& ema_scratch) {
    // spike layers expose v_th / ema_ext through scratch tensors so every
    // unit is a plain tensor list
    std::vector<std::vector<ParamUnitEntry<T>>> units;
    std::size_t spikes = 0;
    for (const auto& l : model.layers)
        if (l.kind == LayerKind::hoyer_spike) ++spikes;
    vth_scratch.resize(spikes);
    ema_scratch.resize(spikes);
    std::size_t si = 0;
    for (auto& l : model.layers) {
        switch (l.kind) {
            case LayerKind::conv:
            case LayerKind::linear:
                units.push_back({{&l.w, true}, {&l.b, true}});
                break;
            case LayerKind::batchnorm:
                units.push_back({{&l.gamma, true},
                                 {&l.beta, true},
                                 {&l.running_mean, true},
                                 {&l.running_var, true}});
                break;
            case LayerKind::hoyer_spike: {
                vth_scratch[si] = Tensor<T>({1}, {l.spike.v_th});
                ema_scratch[si] = l.spike.ema_initialized()
                                      ? Tensor<T>({l.spike.ema_ext.size()}, l.spike.ema_ext)
                                      : Tensor<T>({0});
                units.push_back({{&vth_scratch[si], true}, {&ema_scratch[si], false}});
                ++si;
                break;
            }
            default:
                break;
        }
    }
    for (auto& sc : model.shortcuts)
        if (sc.has_projection()) units.push_back({{&sc.proj_w, true}});
    return units;
}

}  // namespace detail

template <class T>
void checkpoint_save(Model<T>& model, const std::string& config_record, const std::string& path) {
    std::string out(kCheckpointMagic, 4);
    detail::put_u32(out, kCheckpointVersion);
    detail::put_u32(out, static_cast<std::uint32_t>(model.descriptor.size()));
    out += model.descriptor;
    detail::put_u32(out, static_cast<std::uint32_t>(config_record.size()));
    out += config_record;

    std::vector<Tensor<T>> vth_scratch, ema_scratch;
    auto units = detail::parameter_units(model, vth_scratch, ema_scratch);
    for (auto& unit : units) {
        detail::put_u32(out, static_cast<std::uint32_t>(unit.size()));
        for (auto& entry : unit) detail::put_tensor(out, *entry.tensor);
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw FormatError("cannot write checkpoint: " + path);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw FormatError("checkpoint write failed: " + path);
}

template <class T>
struct LoadedCheckpoint {
    Model<T> model;
    TrainConfig config;
    std::string config_record;  // verbatim; re-saving reproduces it byte for byte
    std::map<std::string, std::string> extra;
};

// Rebuilds the architecture from the stored descriptor + config record,
// then fills every parameter tensor. Nothing is returned on any error.
template <class T>
LoadedCheckpoint<T> checkpoint_load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("cannot open checkpoint: " + path);
    std::string buf((std::istreambuf_iterator<char>(f)), {});
    detail::ByteReader r{buf};

    const std::string magic = r.bytes(4);
    if (std::memcmp(magic.data(), kCheckpointMagic, 4) != 0)
        throw FormatError("bad checkpoint magic at offset 0: " + path);
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion)
        throw VersionError("unsupported checkpoint version " + std::to_string(version) +
                           " (expected " + std::to_string(kCheckpointVersion) + ")");
    const std::string descriptor = r.bytes(r.u32());
    const std::string config_record = r.bytes(r.u32());

    LoadedCheckpoint<T> out;
    out.config_record = config_record;
    out.extra = parse_kv(config_record);
    config_apply_kv(out.config, out.extra);

    std::size_t in_c = 1, in_h = 28, in_w = 28;
    if (auto it = out.extra.find("input_shape"); it != out.extra.end()) {
        if (std::sscanf(it->second.c_str(), "%zux%zux%zu", &in_c, &in_h, &in_w) != 3)
            throw FormatError("bad input_shape in checkpoint config: " + it->second);
    }
    ModelOptions opt;
    opt.dropout_rate = out.config.dropout;
    opt.ema_momentum = out.config.ema_momentum;
    opt.surrogate_scale = out.config.surrogate_scale;
    opt.extremum_mode = out.config.mode();
    opt.seed = out.config.seed;
    opt.quant_bits = out.config.quant_bits;
    if (auto it = out.extra.find("hoyer_spike"); it != out.extra.end())
        opt.use_extremum = (it->second == "1" || it->second == "true");
    out.model = build_from_descriptor<T>(descriptor, in_c, in_h, in_w, opt);

    std::vector<Tensor<T>> vth_scratch, ema_scratch;
    auto units = detail::parameter_units(out.model, vth_scratch, ema_scratch);
    for (auto& unit : units) {
        const std::uint32_t count = r.u32();
        if (count != unit.size())
            throw FormatError("checkpoint layer tensor count mismatch (" +
                              std::to_string(count) + " vs " + std::to_string(unit.size()) + ")");
        for (auto& entry : unit) {
            Tensor<T> loaded = detail::get_tensor<T>(r);
            if (entry.exact_shape && loaded.shape() != entry.tensor->shape())
                throw FormatError("checkpoint tensor shape " + loaded.shape_str() +
                                  " does not match architecture " + entry.tensor->shape_str());
            *entry.tensor = std::move(loaded);
        }
    }
    if (r.pos != buf.size()) throw FormatError("trailing bytes after checkpoint payload");

    // copy spike scratch tensors back into the states
    std::size_t si = 0;
    for (auto& l : out.model.layers)
        if (l.kind == LayerKind::hoyer_spike) {
            if (vth_scratch[si].size() != 1)
                throw FormatError("checkpoint v_th tensor must hold one value");
            l.spike.v_th = vth_scratch[si][0];
            l.spike.ema_ext.assign(ema_scratch[si].vec().begin(), ema_scratch[si].vec().end());
            ++si;
        }
    return out;
}

}  // namespace hsnn
