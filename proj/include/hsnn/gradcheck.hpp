#pragma once

#include <functional>

#include "hsnn/network.hpp"

namespace hsnn {

struct GradCheckGroup {
    std::string name;
    double max_rel_err = 0.0;
    std::size_t params = 0;
};

struct GradCheckReport {
    std::vector<GradCheckGroup> groups;
    double worst = 0.0;
    bool passed(double tol) const { return worst <= tol; }
};

// Numeric check of the full backward pass. The model is put in ramp mode,
// where each spike site computes the integral of its surrogate window, so
// central differences of the loss differentiate exactly the function the
// analytic backward pass assumes (the firing extremum is detached either
// way). Per-coordinate comparison is
//   |analytic - fd| / max(|analytic|, |fd|, floor)
// with floor = rounding noise of central differences (eps*|loss|/h)
// divided by the tolerance, so coordinates whose true gradient sits below
// the oracle's resolution cannot dominate the report.
template <class T>
GradCheckReport gradcheck_model(Model<T>& model, const Tensor<T>& x,
                                const std::vector<int>& labels, T lambda_h, double tol = 1e-4) {
    static_assert(std::is_same_v<T, double>, "gradient checks run in double precision");
    const SpikeMode saved_mode = model.spike_mode;
    model.spike_mode = SpikeMode::ramp;

    ForwardTrace<T> trace = forward(model, x, Phase::train);
    const T base_loss =
        total_loss(trace.logits(), labels, trace, lambda_h).total;
    Gradients<T> grads = backward(model, trace, labels, lambda_h);

    auto loss_with = [&](Model<T>& m) {
        ForwardTrace<T> tr = forward(m, x, Phase::train);
        return total_loss(tr.logits(), labels, tr, lambda_h).total;
    };

    GradCheckReport report;
    auto refs = param_refs(model, &grads);
    for (auto& ref : refs) {
        GradCheckGroup group;
        group.name = ref.group;
        group.params = ref.n;
        for (std::size_t i = 0; i < ref.n; ++i) {
            const T orig = ref.value[i];
            const T h = static_cast<T>(1e-5) * std::max(T(1), std::abs(orig));
            Model<T> scratch = model;
            auto scratch_refs = param_refs(scratch);
            T* slot = nullptr;
            for (std::size_t r = 0; r < scratch_refs.size(); ++r)
                if (scratch_refs[r].group == ref.group) slot = scratch_refs[r].value;
            slot[i] = orig + h;
            const T fp = loss_with(scratch);
            slot[i] = orig - h;
            const T fm = loss_with(scratch);
            const T fd = (fp - fm) / (2 * h);
            const T a = ref.grad[i];
            const double noise =
                100.0 * 2.220446049250313e-16 * std::max<double>(1.0, std::abs(base_loss)) / h;
            const double denom = std::max({std::abs(a), std::abs(fd), noise / tol});
            const double rel = std::abs(a - fd) / denom;
            group.max_rel_err = std::max(group.max_rel_err, rel);
        }
        report.worst = std::max(report.worst, group.max_rel_err);
        report.groups.push_back(std::move(group));
    }
    model.spike_mode = saved_mode;
    return report;
}

}  // namespace hsnn
