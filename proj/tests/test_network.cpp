#include "doctest.h"

#include <cmath>

#include "hsnn/gradcheck.hpp"
#include "hsnn/network.hpp"
#include "oracle.hpp"

using hsnn::ArchDesc;
using hsnn::LayerKind;
using hsnn::Model;
using hsnn::ModelOptions;
using hsnn::Phase;
using hsnn::Rng;
using hsnn::SpikeMode;
using hsnn::Tensor;

namespace {

ModelOptions no_dropout(std::uint64_t seed = 1) {
    ModelOptions opt;
    opt.dropout_rate = 0.0;
    opt.seed = seed;
    return opt;
}

// small trainable stack used by most gradient tests:
// conv(2ch 3x3) -> BN -> spike -> flatten -> linear(classes)
Model<double> tiny_net(std::uint64_t seed = 3, int classes = 10) {
    return hsnn::build_from_descriptor<double>("tiny:c2||" + std::to_string(classes), 1, 6, 6,
                                               no_dropout(seed));
}

}  // namespace

TEST_CASE("descriptor grammar round-trips") {
    for (const char* d : {"vgg-s:c16-p-c32-p-c64-c64|fc256-fc128|10",
                          "resnet-s:c16-b16-b32s2-b64s2|fc128|10", "mlp:|fc128-fc64|10",
                          "tiny:c2|fc8|4"}) {
        ArchDesc a = hsnn::parse_descriptor(d);
        CHECK(hsnn::render_descriptor(a) == d);
    }
    CHECK_THROWS_AS((void)hsnn::parse_descriptor("novgg"), hsnn::FormatError);
    CHECK_THROWS_AS((void)hsnn::parse_descriptor("x:p-c4|fc8|2"), hsnn::FormatError);
    CHECK_THROWS_AS((void)hsnn::parse_descriptor("x:c4|fc8|0"), hsnn::FormatError);
    CHECK_THROWS_AS((void)hsnn::parse_descriptor("x:q4|fc8|2"), hsnn::FormatError);
}

TEST_CASE("vgg-s builder") {
    auto m = hsnn::build_vgg_s<float>(1, 28, 28, 10, 1, no_dropout());
    Rng rng(2);
    auto x = oracle::random_tensor<float>({3, 1, 28, 28}, rng, 0, 1);
    auto trace = hsnn::forward(m, x, Phase::infer);

    SUBCASE("logit shape contract") {
        CHECK(trace.logits().shape() == std::vector<std::size_t>{3, 10});
    }
    SUBCASE("every hidden spike activation is binary") {
        for (std::size_t site : trace.spike_sites) {
            const auto& o = trace.acts[site + 1];
            for (std::size_t i = 0; i < o.size(); ++i) CHECK((o[i] == 0.0f || o[i] == 1.0f));
        }
        CHECK(trace.spike_sites.size() == 6);  // 4 conv + 2 fc sites
    }
    SUBCASE("block ordering is conv, pool, BN, spike") {
        std::vector<LayerKind> kinds;
        for (const auto& l : m.layers) kinds.push_back(l.kind);
        const std::vector<LayerKind> expect = {
            LayerKind::conv,   LayerKind::maxpool,   LayerKind::batchnorm, LayerKind::hoyer_spike,
            LayerKind::conv,   LayerKind::maxpool,   LayerKind::batchnorm, LayerKind::hoyer_spike,
            LayerKind::conv,   LayerKind::batchnorm, LayerKind::hoyer_spike,
            LayerKind::conv,   LayerKind::batchnorm, LayerKind::hoyer_spike,
            LayerKind::flatten,
            LayerKind::linear, LayerKind::hoyer_spike,
            LayerKind::linear, LayerKind::hoyer_spike,
            LayerKind::linear};
        CHECK(kinds == expect);
    }
    SUBCASE("the classifier head is the single unspiked linear layer") {
        CHECK(m.layers.back().kind == LayerKind::linear);
        CHECK(m.layers.back().w.dim(0) == 10);
    }
    SUBCASE("geometry collapse is rejected") {
        CHECK_THROWS_AS((void)hsnn::build_vgg_s<float>(1, 2, 2, 10, 1, no_dropout()),
                        hsnn::DimensionError);
    }
}

TEST_CASE("resnet-s builder") {
    auto m = hsnn::build_resnet_s<float>(3, 32, 32, 10, 3, no_dropout());
    Rng rng(4);
    auto x = oracle::random_tensor<float>({2, 3, 32, 32}, rng, 0, 1);
    auto trace = hsnn::forward(m, x, Phase::infer);

    SUBCASE("logit shape contract") {
        CHECK(trace.logits().shape() == std::vector<std::size_t>{2, 10});
        CHECK(m.shortcuts.size() == 3);
    }
    SUBCASE("block-internal ordering is BN, spike, conv") {
        // after the stem conv, each block contributes BN,spike,conv,BN,spike,conv
        REQUIRE(m.layers[0].kind == LayerKind::conv);
        for (int b = 0; b < 3; ++b) {
            const std::size_t at = 1 + static_cast<std::size_t>(b) * 6;
            CHECK(m.layers[at].kind == LayerKind::batchnorm);
            CHECK(m.layers[at + 1].kind == LayerKind::hoyer_spike);
            CHECK(m.layers[at + 2].kind == LayerKind::conv);
            CHECK(m.layers[at + 3].kind == LayerKind::batchnorm);
            CHECK(m.layers[at + 4].kind == LayerKind::hoyer_spike);
            CHECK(m.layers[at + 5].kind == LayerKind::conv);
        }
    }
    SUBCASE("removing a shortcut edge changes the outputs") {
        auto pruned = m;
        pruned.shortcuts.erase(pruned.shortcuts.begin());
        auto t2 = hsnn::forward(pruned, x, Phase::infer);
        double diff = 0;
        for (std::size_t i = 0; i < t2.logits().size(); ++i)
            diff += std::abs(t2.logits()[i] - trace.logits()[i]);
        CHECK(diff > 0);
    }
    SUBCASE("widening blocks carry a projection, the first does not") {
        CHECK_FALSE(m.shortcuts[0].has_projection());
        CHECK(m.shortcuts[1].has_projection());
        CHECK(m.shortcuts[2].has_projection());
    }
}

TEST_CASE("forward degenerate and determinism cases") {
    SUBCASE("zero input, zero biases: no spikes anywhere, logits from BN shifts only") {
        auto m = hsnn::build_vgg_s<float>(1, 28, 28, 10, 1, no_dropout());
        Tensor<float> x({2, 1, 28, 28});
        auto trace = hsnn::forward(m, x, Phase::train);
        for (std::size_t site : trace.spike_sites) {
            const auto& o = trace.acts[site + 1];
            for (std::size_t i = 0; i < o.size(); ++i) CHECK(o[i] == 0.0f);
            // degenerate batch used the fallback threshold
            const auto& cache = trace.caches[site];
            for (float thr : cache.spike.threshold_used) CHECK(thr == 1.0f);
        }
        for (std::size_t i = 0; i < trace.logits().size(); ++i) CHECK(trace.logits()[i] == 0.0f);
    }
    SUBCASE("identical rows produce identical logits") {
        auto m = hsnn::build_mlp<float>(1, 8, 8, 4, no_dropout(9));
        Rng rng(5);
        auto one = oracle::random_tensor<float>({1, 1, 8, 8}, rng, 0, 1);
        Tensor<float> two({2, 1, 8, 8});
        std::copy_n(one.data(), one.size(), two.data());
        std::copy_n(one.data(), one.size(), two.data() + one.size());
        auto trace = hsnn::forward(m, two, Phase::infer);
        for (std::size_t j = 0; j < 4; ++j) CHECK(trace.logits()[j] == trace.logits()[4 + j]);
    }
    SUBCASE("inference twice gives an identical trace") {
        auto m = hsnn::build_mlp<float>(1, 8, 8, 4, no_dropout(9));
        Rng rng(6);
        auto x = oracle::random_tensor<float>({3, 1, 8, 8}, rng, 0, 1);
        auto t1 = hsnn::forward(m, x, Phase::infer);
        auto t2 = hsnn::forward(m, x, Phase::infer);
        for (std::size_t i = 0; i <= m.layers.size(); ++i)
            for (std::size_t j = 0; j < t1.acts[i].size(); ++j)
                CHECK(t1.acts[i][j] == t2.acts[i][j]);
    }
    SUBCASE("shape mismatch is rejected") {
        auto m = hsnn::build_mlp<float>(1, 8, 8, 4, no_dropout());
        Tensor<float> bad({1, 1, 7, 7});
        CHECK_THROWS_AS((void)hsnn::forward(m, bad, Phase::infer), hsnn::DimensionError);
    }
}

TEST_CASE("total_loss") {
    SUBCASE("uniform logits over N classes cost ln N") {
        Tensor<double> logits({2, 5});
        logits.fill(0.7);
        hsnn::ForwardTrace<double> trace;
        trace.acts.push_back(logits);
        auto lb = hsnn::total_loss(logits, {0, 3}, trace, 0.0);
        CHECK(lb.ce == doctest::Approx(std::log(5.0)).epsilon(1e-12));
        CHECK(lb.total == lb.ce);
    }
    SUBCASE("logits [2,0] with label 0 cost ln(1+e^-2)") {
        Tensor<double> logits({1, 2}, {2, 0});
        hsnn::ForwardTrace<double> trace;
        trace.acts.push_back(logits);
        auto lb = hsnn::total_loss(logits, {0}, trace, 0.0);
        CHECK(lb.ce == doctest::Approx(std::log(1 + std::exp(-2.0))).epsilon(1e-12));
    }
    SUBCASE("breakdown identity total = ce + lambda * hoyer") {
        auto m = tiny_net(8);
        Rng rng(8);
        auto x = oracle::random_tensor<double>({4, 1, 6, 6}, rng, 0, 1);
        auto trace = hsnn::forward(m, x, Phase::train);
        auto lb = hsnn::total_loss(trace.logits(), {0, 1, 2, 3}, trace, 1e-2);
        CHECK(lb.hoyer > 0);
        CHECK(oracle::rel_err(lb.total, lb.ce + lb.lambda_h * lb.hoyer) < 1e-9);
        // lambda 0 keeps the hoyer sum measured but unweighted
        auto lb0 = hsnn::total_loss(trace.logits(), {0, 1, 2, 3}, trace, 0.0);
        CHECK(lb0.total == lb0.ce);
        CHECK(lb0.hoyer == lb.hoyer);
    }
    SUBCASE("label out of range throws") {
        Tensor<double> logits({1, 3});
        hsnn::ForwardTrace<double> trace;
        trace.acts.push_back(logits);
        CHECK_THROWS_AS((void)hsnn::total_loss(logits, {3}, trace, 0.0), hsnn::DimensionError);
    }
    SUBCASE("hoyer term on the trace is invariant to potential scaling") {
        auto m = tiny_net(12);
        Rng rng(12);
        auto x = oracle::random_tensor<double>({2, 1, 6, 6}, rng, 0, 1);
        auto trace = hsnn::forward(m, x, Phase::train);
        for (std::size_t site : trace.spike_sites) {
            const double h0 = hsnn::hoyer_square(trace.potential(site));
            Tensor<double> scaled = trace.potential(site);
            scaled *= 37.5;
            CHECK(oracle::rel_err(hsnn::hoyer_square(scaled), h0) < 1e-9);
        }
    }
}

TEST_CASE("end-to-end gradients match the surrogate-consistent FD oracle") {
    // conv -> BN -> spike -> flatten -> linear, under 1e3 parameters
    auto m = tiny_net(3);
    std::size_t nparams = 0;
    for (auto& ref : hsnn::param_refs(m)) nparams += ref.n;
    CHECK(nparams <= 1000);

    Rng rng(33);
    auto x = oracle::random_tensor<double>({4, 1, 6, 6}, rng, 0, 1);
    const std::vector<int> labels{1, 4, 0, 7};
    auto report = hsnn::gradcheck_model(m, x, labels, 1e-2);
    for (const auto& g : report.groups) {
        INFO(g.name, " rel err ", g.max_rel_err);
        CHECK(g.max_rel_err < 1e-4);
    }
    // groups must cover conv w/b, BN gamma/beta, the threshold, head w/b
    CHECK(report.groups.size() == 7);
}

TEST_CASE("gradcheck on a pooled, deeper, channel-wise model") {
    ModelOptions opt = no_dropout(19);
    opt.extremum_mode = hsnn::ExtremumMode::channel_wise;
    auto m = hsnn::build_from_descriptor<double>("t:c2-p-c3|fc6|3", 1, 8, 8, opt);
    Rng rng(19);
    auto x = oracle::random_tensor<double>({3, 1, 8, 8}, rng, 0, 1);
    auto report = hsnn::gradcheck_model(m, x, {2, 0, 1}, 1e-2);
    for (const auto& g : report.groups) {
        INFO(g.name, " rel err ", g.max_rel_err);
        CHECK(g.max_rel_err < 1e-4);
    }
}

TEST_CASE("gradcheck through shortcut edges (gradient fan-in conservation)") {
    ModelOptions opt = no_dropout(23);
    auto m = hsnn::build_from_descriptor<double>("t:c2-b2-b4s2|fc6|3", 1, 8, 8, opt);
    REQUIRE(m.shortcuts.size() == 2);
    REQUIRE(m.shortcuts[1].has_projection());
    Rng rng(23);
    auto x = oracle::random_tensor<double>({2, 1, 8, 8}, rng, 0, 1);
    auto report = hsnn::gradcheck_model(m, x, {1, 2}, 1e-2);
    for (const auto& g : report.groups) {
        INFO(g.name, " rel err ", g.max_rel_err);
        CHECK(g.max_rel_err < 1e-4);
    }
}

TEST_CASE("input gradient splits across a two-path graph") {
    // identity spike mode makes the network linear, so the analytic input
    // gradient through both paths must match plain finite differences
    ModelOptions opt = no_dropout(29);
    auto m = hsnn::build_from_descriptor<double>("t:c1-b1|fc4|2", 1, 5, 5, opt);
    m.spike_mode = SpikeMode::identity;
    REQUIRE(m.shortcuts.size() == 1);
    Rng rng(29);
    auto x = oracle::random_tensor<double>({1, 1, 5, 5}, rng, 0, 1);
    const std::vector<int> labels{1};

    auto trace = hsnn::forward(m, x, Phase::train);
    Tensor<double> grad_full;
    (void)hsnn::backward(m, trace, labels, 0.0, hsnn::LossTerms::both, &grad_full);

    auto fd = oracle::fd_gradient(x, [&](const Tensor<double>& t) {
        Model<double> scratch = m;
        auto tr = hsnn::forward(scratch, t, Phase::train);
        return hsnn::total_loss(tr.logits(), labels, tr, 0.0).total;
    });
    CHECK(oracle::max_rel_err(grad_full, fd, 1e-9) < 1e-5);
}

TEST_CASE("identity debug switch reduces to plain CNN backprop") {
    auto m = tiny_net(31);
    m.spike_mode = SpikeMode::identity;
    Rng rng(31);
    auto x = oracle::random_tensor<double>({3, 1, 6, 6}, rng, 0, 1);
    const std::vector<int> labels{0, 5, 9};
    auto trace = hsnn::forward(m, x, Phase::train);
    auto grads = hsnn::backward(m, trace, labels, 0.0);
    // with identity activations the model is an ordinary CNN; its exact
    // gradient must match plain finite differences
    auto refs = hsnn::param_refs(m, &grads);
    for (auto& ref : refs) {
        if (ref.is_threshold) {
            CHECK(*ref.grad == 0.0);  // identity bypass detaches the threshold
            continue;
        }
        for (std::size_t i = 0; i < ref.n; i += std::max<std::size_t>(1, ref.n / 7)) {
            const double orig = ref.value[i];
            const double h = 1e-5 * std::max(1.0, std::abs(orig));
            Model<double> scratch = m;
            auto srefs = hsnn::param_refs(scratch);
            double* slot = nullptr;
            for (std::size_t r = 0; r < srefs.size(); ++r)
                if (srefs[r].group == ref.group) slot = srefs[r].value;
            auto eval = [&](double v) {
                slot[i] = v;
                auto tr = hsnn::forward(scratch, x, Phase::train);
                return hsnn::total_loss(tr.logits(), labels, tr, 0.0).total;
            };
            const double fd = (eval(orig + h) - eval(orig - h)) / (2 * h);
            // mixed tolerance: conv biases feeding BN have exactly zero
            // gradient, where FD returns only roundoff noise
            const double err = std::abs(ref.grad[i] - fd);
            CHECK(err <= 1e-5 * std::max(std::abs(ref.grad[i]), std::abs(fd)) + 1e-8);
        }
    }
}

TEST_CASE("hoyer gradient term isolated by an inactive surrogate window") {
    // push every normalized potential far above the window: the CE chain
    // stops at the spike layer and only the direct Hoyer term survives
    auto m = tiny_net(37);
    for (auto& l : m.layers)
        if (l.kind == LayerKind::batchnorm) l.beta.fill(20.0);  // z = u >> 2
    Rng rng(37);
    auto x = oracle::random_tensor<double>({2, 1, 6, 6}, rng, 0, 1);
    const std::vector<int> labels{3, 6};
    auto trace = hsnn::forward(m, x, Phase::train);
    for (std::size_t site : trace.spike_sites) {
        const auto& z = trace.caches[site].spike.z;
        for (std::size_t i = 0; i < z.size(); ++i) REQUIRE(z[i] >= 2.0);
    }
    const double lambda = 1e-2;
    auto both = hsnn::backward(m, trace, labels, lambda, hsnn::LossTerms::both);
    auto hoyer_only = hsnn::backward(m, trace, labels, lambda, hsnn::LossTerms::hoyer_only);
    // upstream of the dead window, the combined sweep equals the pure
    // Hoyer chain: lambda * dH(u)/du propagated through BN and conv
    for (std::size_t i = 0; i < m.layers.size(); ++i) {
        const auto& l = m.layers[i];
        if (l.kind == LayerKind::conv) {
            CHECK(oracle::max_rel_err(both.layers[i].w, hoyer_only.layers[i].w, 1e-12) < 1e-12);
            CHECK(oracle::max_rel_err(both.layers[i].b, hoyer_only.layers[i].b, 1e-12) < 1e-12);
        }
        if (l.kind == LayerKind::batchnorm)
            CHECK(oracle::max_rel_err(both.layers[i].gamma, hoyer_only.layers[i].gamma, 1e-12) <
                  1e-12);
    }
}

TEST_CASE("stale trace is rejected") {
    auto m = tiny_net(41);
    Rng rng(41);
    auto x = oracle::random_tensor<double>({2, 1, 6, 6}, rng, 0, 1);
    auto trace = hsnn::forward(m, x, Phase::train);
    m.param_version++;  // simulate an optimizer step between forward and backward
    CHECK_THROWS_AS((void)hsnn::backward(m, trace, {0, 1}, 0.0), hsnn::DimensionError);
    // infer-phase traces cannot back-propagate either
    m.param_version--;
    auto itrace = hsnn::forward(m, x, Phase::infer);
    CHECK_THROWS_AS((void)hsnn::backward(m, itrace, {0, 1}, 0.0), hsnn::DimensionError);
}

TEST_CASE("measure_spiking_activity") {
    auto m = hsnn::build_mlp<float>(1, 6, 6, 3, no_dropout(43));
    Rng rng(43);
    auto imgs = oracle::random_tensor<float>({10, 1, 6, 6}, rng, 0, 1);
    auto act = hsnn::measure_spiking_activity(m, imgs, 4);
    REQUIRE(act.size() == 2);
    for (double a : act) {
        CHECK(a >= 0.0);
        CHECK(a <= 1.0);
    }
    Tensor<float> empty({0, 1, 6, 6});
    CHECK_THROWS_AS((void)hsnn::measure_spiking_activity(m, empty), hsnn::DimensionError);
}

TEST_CASE("a dead layer measures zero activity") {
    auto m = hsnn::build_mlp<float>(1, 4, 4, 3, no_dropout(47));
    // zero weights and biases starve every spike site
    for (auto& l : m.layers)
        if (l.kind == LayerKind::linear) {
            l.w.fill(0.0f);
            l.b.fill(0.0f);
        }
    Tensor<float> imgs({5, 1, 4, 4});
    imgs.fill(0.3f);
    auto act = hsnn::measure_spiking_activity(m, imgs, 5);
    for (double a : act) CHECK(a == 0.0);
}
