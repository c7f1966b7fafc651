#pragma once

#include <cstdio>
#include <ostream>
#include <string>

#include "hsnn/network.hpp"

namespace hsnn {

// 45nm energy constants, picojoules per operation.
inline constexpr double kEnergyMacPj = 4.6;
inline constexpr double kEnergyAcPj = 0.9;
inline constexpr double kEnergyCompareFirstPj = 0.4;
inline constexpr double kEnergyComparePj = 0.7;

// Per MAC layer (conv or linear): its multiply-accumulate count for one
// inference and the threshold-comparison count of the spike layer fed by
// it (0 for the classifier head).
struct LayerCostProfile {
    std::size_t layer_index = 0;
    std::string kind;
    long long flops = 0;        // MACs per sample
    long long comparisons = 0;  // spike threshold tests per sample
    bool is_first_layer = false;
};

// Walks the layer list with the model's input geometry:
//   conv MACs = H'*W'*O*(k*k*C), linear MACs = in*out,
//   comparisons = neuron count of the following spike layer.
// BN, pooling, flatten and dropout count as zero.
template <class T>
std::vector<LayerCostProfile> count_flops(const Model<T>& model) {
    std::vector<LayerCostProfile> profiles;
    std::size_t ch = model.in_ch, h = model.in_h, w = model.in_w;
    std::size_t flat = 0;
    bool flattened = false;
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        const auto& l = model.layers[i];
        switch (l.kind) {
            case LayerKind::conv: {
                ConvGeometry g;
                g.in_ch = ch;
                g.in_h = h;
                g.in_w = w;
                g.out_ch = l.w.dim(0);
                g.kernel = l.w.dim(2);
                g.stride = static_cast<std::size_t>(l.stride);
                g.pad = static_cast<std::size_t>(l.pad);
                if (g.kernel > g.in_h + 2 * g.pad || g.kernel > g.in_w + 2 * g.pad)
                    throw DimensionError("count_flops: invalid conv geometry");
                g.out_h = (g.in_h + 2 * g.pad - g.kernel) / g.stride + 1;
                g.out_w = (g.in_w + 2 * g.pad - g.kernel) / g.stride + 1;
                LayerCostProfile p;
                p.layer_index = i;
                p.kind = "conv";
                p.flops = static_cast<long long>(g.out_h * g.out_w * g.out_ch * g.kernel *
                                                 g.kernel * g.in_ch);
                p.is_first_layer = profiles.empty();
                profiles.push_back(p);
                ch = g.out_ch;
                h = g.out_h;
                w = g.out_w;
                break;
            }
            case LayerKind::linear: {
                LayerCostProfile p;
                p.layer_index = i;
                p.kind = "linear";
                p.flops = static_cast<long long>(l.w.dim(0) * l.w.dim(1));
                p.is_first_layer = profiles.empty();
                profiles.push_back(p);
                flat = l.w.dim(0);
                flattened = true;
                break;
            }
            case LayerKind::maxpool: {
                const std::size_t k = static_cast<std::size_t>(l.pool_k);
                const std::size_t s = static_cast<std::size_t>(l.pool_s);
                if (k > h || k > w) throw DimensionError("count_flops: invalid pool geometry");
                h = (h - k) / s + 1;
                w = (w - k) / s + 1;
                break;
            }
            case LayerKind::hoyer_spike: {
                if (profiles.empty())
                    throw DimensionError("count_flops: spike layer before any MAC layer");
                profiles.back().comparisons =
                    static_cast<long long>(flattened ? flat : ch * h * w);
                break;
            }
            case LayerKind::flatten:
                flat = ch * h * w;
                flattened = true;
                break;
            default:
                break;
        }
    }
    return profiles;
}

// SNN_CE = F1*4.6 + C1*0.4 + sum_{l>=2} (S_l*F_l*0.9 + C_l*0.7).
// The first layer sees dense analog input; every later layer's MACs are
// gated by the spiking activity S_l of its input.
inline double snn_energy(const std::vector<LayerCostProfile>& profiles,
                         const std::vector<double>& activities) {
    if (profiles.empty()) return 0.0;
    if (activities.size() + 1 != profiles.size())
        throw DimensionError("snn_energy: need one input activity per layer beyond the first");
    for (double a : activities)
        if (a < 0.0 || a > 1.0) throw DimensionError("snn_energy: activity outside [0,1]");
    double e = static_cast<double>(profiles[0].flops) * kEnergyMacPj +
               static_cast<double>(profiles[0].comparisons) * kEnergyCompareFirstPj;
    for (std::size_t l = 1; l < profiles.size(); ++l)
        e += activities[l - 1] * static_cast<double>(profiles[l].flops) * kEnergyAcPj +
             static_cast<double>(profiles[l].comparisons) * kEnergyComparePj;
    return e;
}

// DNN_CE = sum_l F_l * 4.6; activation costs are ignored.
inline double dnn_energy(const std::vector<LayerCostProfile>& profiles) {
    double e = 0.0;
    for (const auto& p : profiles) e += static_cast<double>(p.flops) * kEnergyMacPj;
    return e;
}

struct EnergyReportRow {
    LayerCostProfile profile;
    double activity = 1.0;  // input-side spiking activity applied to this layer's MACs
    double snn_pj = 0.0;
    double dnn_pj = 0.0;
};

struct EnergyReport {
    std::vector<EnergyReportRow> rows;
    std::vector<double> spike_activities;  // measured S per spike layer
    double snn_energy_pj = 0.0;
    double dnn_energy_pj = 0.0;
};

// Joins the static cost profiles with measured spiking activities.
// `activities` holds one entry per spike layer in network order; MAC
// layer l >= 2 is scaled by the activity of the spike layer before it.
template <class T>
EnergyReport build_energy_report(const Model<T>& model, const std::vector<double>& activities) {
    std::vector<LayerCostProfile> profiles = count_flops(model);
    std::vector<double> input_act;
    std::size_t spike_seen = 0;
    for (const auto& l : model.layers) {
        if (l.kind == LayerKind::hoyer_spike) {
            ++spike_seen;
        } else if (l.kind == LayerKind::conv || l.kind == LayerKind::linear) {
            if (input_act.empty()) {
                input_act.push_back(1.0);  // dense analog input into the first layer
            } else {
                // the most recent spike layer gates this layer's MACs
                if (spike_seen == 0 || spike_seen > activities.size())
                    throw DimensionError("energy report: layer beyond the first lacks a spiking input");
                input_act.push_back(activities[spike_seen - 1]);
            }
        }
    }
    if (input_act.size() != profiles.size())
        throw DimensionError("energy report: profile/activity count mismatch");

    EnergyReport report;
    report.spike_activities = activities;
    for (std::size_t l = 0; l < profiles.size(); ++l) {
        EnergyReportRow row;
        row.profile = profiles[l];
        row.activity = input_act[l];
        row.dnn_pj = static_cast<double>(profiles[l].flops) * kEnergyMacPj;
        if (l == 0)
            row.snn_pj = static_cast<double>(profiles[l].flops) * kEnergyMacPj +
                         static_cast<double>(profiles[l].comparisons) * kEnergyCompareFirstPj;
        else
            row.snn_pj = row.activity * static_cast<double>(profiles[l].flops) * kEnergyAcPj +
                         static_cast<double>(profiles[l].comparisons) * kEnergyComparePj;
        report.rows.push_back(row);
        report.snn_energy_pj += row.snn_pj;
        report.dnn_energy_pj += row.dnn_pj;
    }
    return report;
}

// Measures activities over `images` and assembles the full report.
template <class T>
EnergyReport emit_report(Model<T>& model, const Tensor<T>& images, std::size_t batch_size = 256) {
    return build_energy_report(model, measure_spiking_activity(model, images, batch_size));
}

inline std::string format_sig6(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

// CSV: header, one row per MAC layer, final TOTAL row; 6 significant digits.
inline void write_energy_csv(const EnergyReport& report, std::ostream& os) {
    os << "layer,kind,flops,comparisons,activity,snn_pj,dnn_pj\n";
    for (const auto& row : report.rows) {
        os << row.profile.layer_index << ',' << row.profile.kind << ',' << row.profile.flops
           << ',' << row.profile.comparisons << ',' << format_sig6(row.activity) << ','
           << format_sig6(row.snn_pj) << ',' << format_sig6(row.dnn_pj) << '\n';
    }
    long long tf = 0, tc = 0;
    for (const auto& row : report.rows) {
        tf += row.profile.flops;
        tc += row.profile.comparisons;
    }
    os << "TOTAL,," << tf << ',' << tc << ",," << format_sig6(report.snn_energy_pj) << ','
       << format_sig6(report.dnn_energy_pj) << '\n';
}

}  // namespace hsnn
