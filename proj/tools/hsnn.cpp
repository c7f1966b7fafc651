// hsnn: train / eval / analyze / gradcheck for one-time-step spiking
// networks with Hoyer-regularized thresholds.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"

#include "hsnn/checkpoint.hpp"
#include "hsnn/data.hpp"
#include "hsnn/energy.hpp"
#include "hsnn/gradcheck.hpp"
#include "hsnn/hsnn.hpp"

namespace {

using hsnn::Dataset;
using hsnn::Model;
using hsnn::ModelOptions;
using hsnn::Phase;
using hsnn::Rng;
using hsnn::Tensor;
using hsnn::TrainConfig;

struct CommonFlags {
    std::string dataset = "mnist";
    std::string data_dir = "data";
    std::string arch = "vgg-s";
    std::string config_file;
    std::string out;
    std::string checkpoint;
    TrainConfig cfg;
    bool lr_explicit = false;  // --lr flag or base_lr config key present
};

void add_config_flag(CLI::App* cmd, CommonFlags& f) {
    cmd->add_option("--config", f.config_file, "flat key = value config file");
}

// config file values fill any field the command line left untouched;
// returns true when the file supplied a dataset choice
bool apply_config_file(CLI::App* cmd, CommonFlags& f) {
    if (f.config_file.empty()) return false;
    std::ifstream in(f.config_file);
    if (!in) throw hsnn::FormatError("cannot open config file: " + f.config_file);
    std::string text((std::istreambuf_iterator<char>(in)), {});
    auto kv = hsnn::parse_kv(text);
    TrainConfig file_cfg = f.cfg;
    hsnn::config_apply_kv(file_cfg, kv);
    auto keep_cli = [&](const char* flag) {
        const CLI::Option* o = cmd->get_option_no_throw(flag);
        return o != nullptr && o->count() > 0;
    };
    if (!keep_cli("--epochs")) f.cfg.epochs = file_cfg.epochs;
    if (!keep_cli("--batch-size")) f.cfg.batch_size = file_cfg.batch_size;
    if (!keep_cli("--lr")) f.cfg.base_lr = file_cfg.base_lr;
    if (!keep_cli("--lambda-h")) f.cfg.lambda_h = file_cfg.lambda_h;
    if (!keep_cli("--surrogate-scale")) f.cfg.surrogate_scale = file_cfg.surrogate_scale;
    if (!keep_cli("--ema-momentum")) f.cfg.ema_momentum = file_cfg.ema_momentum;
    if (!keep_cli("--extremum-mode")) f.cfg.extremum_mode = file_cfg.extremum_mode;
    if (!keep_cli("--dropout")) f.cfg.dropout = file_cfg.dropout;
    if (!keep_cli("--weight-decay")) f.cfg.weight_decay = file_cfg.weight_decay;
    if (!keep_cli("--seed")) f.cfg.seed = file_cfg.seed;
    if (!keep_cli("--quant-bits")) f.cfg.quant_bits = file_cfg.quant_bits;
    if (!keep_cli("--optimizer")) f.cfg.optimizer = file_cfg.optimizer;
    if (!keep_cli("--deterministic")) f.cfg.deterministic = file_cfg.deterministic;
    if (!keep_cli("--augment")) f.cfg.augment = file_cfg.augment;
    if (kv.count("base_lr")) f.lr_explicit = true;
    bool dataset_from_file = false;
    if (auto it = kv.find("dataset"); it != kv.end() && !keep_cli("--dataset")) {
        f.dataset = it->second;
        dataset_from_file = true;
    }
    if (auto it = kv.find("arch"); it != kv.end() && !keep_cli("--arch")) f.arch = it->second;
    if (auto it = kv.find("data_dir"); it != kv.end() && !keep_cli("--data-dir"))
        f.data_dir = it->second;
    if (auto it = kv.find("checkpoint"); it != kv.end() && !keep_cli("--checkpoint"))
        f.checkpoint = it->second;
    return dataset_from_file;
}

void add_train_flags(CLI::App* cmd, CommonFlags& f) {
    cmd->add_option("--dataset", f.dataset, "mnist | cifar10")
        ->check(CLI::IsMember({"mnist", "cifar10"}));
    cmd->add_option("--data-dir", f.data_dir, "directory holding the dataset files");
    cmd->add_option("--arch", f.arch, "vgg-s | resnet-s | mlp | <descriptor>");
    cmd->add_option("--epochs", f.cfg.epochs);
    cmd->add_option("--batch-size", f.cfg.batch_size);
    cmd->add_option("--lr", f.cfg.base_lr, "initial learning rate");
    cmd->add_option("--optimizer", f.cfg.optimizer)->check(CLI::IsMember({"adam", "sgd"}));
    cmd->add_option("--lambda-h", f.cfg.lambda_h, "weight of the sparsity term");
    cmd->add_option("--surrogate-scale", f.cfg.surrogate_scale);
    cmd->add_option("--ema-momentum", f.cfg.ema_momentum);
    cmd->add_option("--extremum-mode", f.cfg.extremum_mode)
        ->check(CLI::IsMember({"tensor", "channel"}));
    cmd->add_option("--dropout", f.cfg.dropout);
    cmd->add_option("--weight-decay", f.cfg.weight_decay);
    cmd->add_option("--quant-bits", f.cfg.quant_bits, "0 = full precision, 2..6 = conv QAT")
        ->check(CLI::IsMember({0, 2, 3, 4, 5, 6}));
    cmd->add_option("--seed", f.cfg.seed);
    cmd->add_flag("--deterministic", f.cfg.deterministic, "serial kernels, fixed reductions");
    cmd->add_flag("--augment", f.cfg.augment, "horizontal flip + pad-crop augmentation");
    cmd->add_option("--out", f.out, "checkpoint output path");
    add_config_flag(cmd, f);
}

std::vector<std::string> cifar_train_files(const std::string& dir) {
    std::vector<std::string> out;
    for (int i = 1; i <= 5; ++i)
        out.push_back(dir + "/data_batch_" + std::to_string(i) + ".bin");
    return out;
}

Dataset<float> load_split(const CommonFlags& f, bool train_split) {
    Dataset<float> ds;
    if (f.dataset == "mnist") {
        const std::string img =
            f.data_dir + (train_split ? "/train-images-idx3-ubyte" : "/t10k-images-idx3-ubyte");
        const std::string lab =
            f.data_dir + (train_split ? "/train-labels-idx1-ubyte" : "/t10k-labels-idx1-ubyte");
        ds = hsnn::load_mnist_idx<float>(img, lab);
        hsnn::normalize(ds, hsnn::mnist_default_mean<float>(), hsnn::mnist_default_std<float>());
    } else {
        ds = train_split ? hsnn::load_cifar10_bin<float>(cifar_train_files(f.data_dir))
                         : hsnn::load_cifar10_bin<float>({f.data_dir + "/test_batch.bin"});
        hsnn::normalize(ds, hsnn::cifar10_default_mean<float>(),
                        hsnn::cifar10_default_std<float>());
    }
    return ds;
}

ModelOptions options_from(const TrainConfig& cfg) {
    ModelOptions opt;
    opt.dropout_rate = cfg.dropout;
    opt.ema_momentum = cfg.ema_momentum;
    opt.surrogate_scale = cfg.surrogate_scale;
    opt.extremum_mode = cfg.mode();
    opt.seed = cfg.seed;
    opt.quant_bits = cfg.quant_bits;
    return opt;
}

template <class T>
Model<T> build_arch(const std::string& arch, std::size_t c, std::size_t h, std::size_t w,
                    int classes, const ModelOptions& opt) {
    if (arch == "vgg-s") return hsnn::build_vgg_s<T>(c, h, w, classes, 1, opt);
    if (arch == "resnet-s") return hsnn::build_resnet_s<T>(c, h, w, classes, 3, opt);
    if (arch == "mlp") return hsnn::build_mlp<T>(c, h, w, classes, opt);
    return hsnn::build_from_descriptor<T>(arch, c, h, w, opt);
}

std::string checkpoint_record(const CommonFlags& f, const Model<float>& m) {
    auto kv = hsnn::config_to_kv(f.cfg);
    kv.emplace_back("input_shape", std::to_string(m.in_ch) + "x" + std::to_string(m.in_h) + "x" +
                                       std::to_string(m.in_w));
    kv.emplace_back("dataset", f.dataset);
    return hsnn::render_kv(kv);
}

double dataset_accuracy(Model<float>& model, const Dataset<float>& ds, int batch_size) {
    hsnn::BatchIterator<float> it(ds, static_cast<std::size_t>(batch_size), false, 0);
    Tensor<float> imgs;
    std::vector<int> labels;
    double correct = 0;
    while (it.next(imgs, labels)) {
        auto trace = hsnn::forward(model, imgs, Phase::infer);
        const auto& logits = trace.logits();
        const std::size_t classes = logits.dim(1);
        for (std::size_t b = 0; b < labels.size(); ++b) {
            std::size_t best = 0;
            for (std::size_t j = 1; j < classes; ++j)
                if (logits[b * classes + j] > logits[b * classes + best]) best = j;
            if (static_cast<int>(best) == labels[b]) correct += 1;
        }
    }
    return correct / static_cast<double>(ds.size());
}

int cmd_train(CommonFlags& f) {
    f.cfg.validate();
    Dataset<float> ds = load_split(f, true);
    const int classes = static_cast<int>(ds.classes());
    Model<float> model = build_arch<float>(f.arch, ds.images.dim(1), ds.images.dim(2),
                                           ds.images.dim(3), classes, options_from(f.cfg));
    auto opt = hsnn::Optimizer<float>::from_config(f.cfg);
    Rng rng(f.cfg.seed);
    std::printf("epoch,loss,ce,hoyer,acc,mean_activity\n");
    for (int e = 0; e < f.cfg.epochs; ++e) {
        opt.lr = static_cast<float>(hsnn::lr_at_epoch(f.cfg.base_lr, e, f.cfg.epochs));
        auto metrics = hsnn::train_epoch(model, ds.images, ds.labels, f.cfg, opt, rng);
        std::printf("%d,%.6f,%.6f,%.6f,%.6f,%.6f\n", e, metrics.loss, metrics.ce, metrics.hoyer,
                    metrics.accuracy, metrics.mean_activity());
        std::fflush(stdout);
    }
    const std::string out = f.out.empty() ? "model.ckpt" : f.out;
    hsnn::checkpoint_save(model, checkpoint_record(f, model), out);
    std::fprintf(stderr, "checkpoint written: %s\n", out.c_str());
    return 0;
}

int cmd_eval(CommonFlags& f, int batch_size, bool dataset_given) {
    auto loaded = hsnn::checkpoint_load<float>(f.checkpoint);
    if (auto it = loaded.extra.find("dataset"); it != loaded.extra.end() && !dataset_given)
        f.dataset = it->second;
    Dataset<float> ds = load_split(f, false);
    const double acc = dataset_accuracy(loaded.model, ds, batch_size);
    auto activities = hsnn::measure_spiking_activity(loaded.model, ds.images,
                                                     static_cast<std::size_t>(batch_size));
    std::printf("accuracy,%.6f\n", acc);
    double mean = 0;
    for (std::size_t s = 0; s < activities.size(); ++s) {
        std::printf("activity,%zu,%.6f\n", s, activities[s]);
        mean += activities[s];
    }
    if (!activities.empty()) mean /= static_cast<double>(activities.size());
    std::printf("mean_activity,%.6f\n", mean);
    // published full-scale baseline, for context only
    std::printf("# baseline vgg16/cifar10 (full scale): accuracy 93.44%%, activity 21.87%%\n");
    return 0;
}

int cmd_analyze(CommonFlags& f, int batch_size, bool dataset_given) {
    auto loaded = hsnn::checkpoint_load<float>(f.checkpoint);
    if (auto it = loaded.extra.find("dataset"); it != loaded.extra.end() && !dataset_given)
        f.dataset = it->second;
    Dataset<float> ds = load_split(f, false);
    auto report =
        hsnn::emit_report(loaded.model, ds.images, static_cast<std::size_t>(batch_size));
    if (f.out.empty()) {
        hsnn::write_energy_csv(report, std::cout);
    } else {
        std::ofstream os(f.out, std::ios::trunc);
        if (!os) {
            std::fprintf(stderr, "error: cannot write %s\n", f.out.c_str());
            return 1;
        }
        hsnn::write_energy_csv(report, os);
        if (!os.flush()) {
            std::fprintf(stderr, "error: write failed for %s\n", f.out.c_str());
            return 1;
        }
    }
    return 0;
}

int cmd_gradcheck(const std::string& arch, std::uint64_t seed, double lambda_h, double tol) {
    ModelOptions opt;
    opt.dropout_rate = 0.0;  // FD needs a deterministic forward
    opt.seed = seed;
    auto model = build_arch<double>(arch, 1, 6, 6, 10, opt);
    Rng rng(seed + 1);
    Tensor<double> x({4, 1, 6, 6});
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = rng.uniform(0, 1);
    std::vector<int> labels(4);
    for (auto& l : labels) l = static_cast<int>(rng.next_below(10));

    auto report = hsnn::gradcheck_model(model, x, labels, lambda_h, tol);
    std::printf("group,params,max_rel_err\n");
    for (const auto& g : report.groups)
        std::printf("%s,%zu,%.3e\n", g.name.c_str(), g.params, g.max_rel_err);
    std::printf("worst,%.3e,tolerance,%.1e\n", report.worst, tol);
    if (!report.passed(tol)) {
        for (const auto& g : report.groups)
            if (g.max_rel_err > tol)
                std::fprintf(stderr, "FAIL %s rel err %.3e > %.1e\n", g.name.c_str(),
                             g.max_rel_err, tol);
        return 1;
    }
    std::printf("PASS\n");
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"one-time-step spiking network trainer and analyzer"};
    app.require_subcommand(1);
    CommonFlags f;
    int batch_size_eval = 256;
    std::string gc_arch = "gradcheck:c2||10";
    std::uint64_t gc_seed = 1;
    double gc_lambda = 1e-2;
    double gc_tol = 1e-4;

    auto* train = app.add_subcommand("train", "train a model and write a checkpoint");
    add_train_flags(train, f);

    auto* eval = app.add_subcommand("eval", "accuracy and per-layer spiking activity");
    eval->add_option("--checkpoint", f.checkpoint)->required();
    eval->add_option("--dataset", f.dataset)->check(CLI::IsMember({"mnist", "cifar10"}));
    eval->add_option("--data-dir", f.data_dir);
    eval->add_option("--batch-size", batch_size_eval);
    add_config_flag(eval, f);

    auto* analyze = app.add_subcommand("analyze", "emit the energy/FLOPs report CSV");
    analyze->add_option("--checkpoint", f.checkpoint)->required();
    analyze->add_option("--dataset", f.dataset)->check(CLI::IsMember({"mnist", "cifar10"}));
    analyze->add_option("--data-dir", f.data_dir);
    analyze->add_option("--batch-size", batch_size_eval);
    analyze->add_option("--out", f.out, "write the CSV here instead of stdout");
    add_config_flag(analyze, f);

    auto* gradcheck = app.add_subcommand("gradcheck", "verify analytic gradients against FD");
    gradcheck->add_option("--arch", gc_arch);
    gradcheck->add_option("--seed", gc_seed);
    gradcheck->add_option("--lambda-h", gc_lambda);
    gradcheck->add_option("--tolerance", gc_tol);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (train->parsed()) {
            apply_config_file(train, f);
            if (train->count("--lr") > 0) f.lr_explicit = true;
            // recipe default: Adam starts at 1e-4, SGD at 0.1
            if (!f.lr_explicit && f.cfg.optimizer == "sgd") f.cfg.base_lr = 0.1;
            if (f.cfg.deterministic) setenv("HSNN_THREADS", "1", 1);
            return cmd_train(f);
        }
        if (eval->parsed()) {
            const bool from_file = apply_config_file(eval, f);
            return cmd_eval(f, batch_size_eval, from_file || eval->count("--dataset") > 0);
        }
        if (analyze->parsed()) {
            const bool from_file = apply_config_file(analyze, f);
            return cmd_analyze(f, batch_size_eval, from_file || analyze->count("--dataset") > 0);
        }
        if (gradcheck->parsed()) return cmd_gradcheck(gc_arch, gc_seed, gc_lambda, gc_tol);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
