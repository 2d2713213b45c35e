#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "capsforge/affine.hpp"
#include "capsforge/analysis.hpp"
#include "capsforge/checkpoint.hpp"
#include "capsforge/config_io.hpp"
#include "capsforge/image_io.hpp"
#include "capsforge/synth.hpp"
#include "capsforge/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace capsforge;

namespace {

struct UsageError : Error {
    using Error::Error;
};

double wall_seconds(const std::chrono::steady_clock::time_point& t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string resolve_data_dir(const std::string& flag) {
    if (!flag.empty()) return flag;
    if (const char* env = std::getenv("CAPSFORGE_DATA_DIR")) return env;
    return "data";
}

void dataset_dims(const std::string& dataset, CapsNetConfig& cfg) {
    if (dataset == "cifar10") {
        cfg.in_channels = 3;
        cfg.in_h = cfg.in_w = 32;
    } else {
        cfg.in_channels = 1;
        cfg.in_h = cfg.in_w = 28;
    }
}

CapsNetConfig make_capsnet_config(const std::string& dataset, const std::string& scale,
                                  std::size_t routing_iters) {
    CapsNetConfig cfg;
    dataset_dims(dataset, cfg);
    if (scale == "desk") {
        cfg.conv1_maps = 64;
        cfg.primary_types = 8;
    }
    cfg.routing_iters = routing_iters;
    cfg.validate();
    return cfg;
}

CnnConfig make_cnn_config(const std::string& dataset) {
    CnnConfig cfg;
    if (dataset == "cifar10") {
        cfg.in_channels = 3;
        cfg.in_h = cfg.in_w = 32;
    } else {
        cfg.in_channels = 1;
        cfg.in_h = cfg.in_w = 28;
    }
    cfg.validate();
    return cfg;
}

// scale presets: desk trains/evaluates on fixed subsets, full uses everything
std::pair<std::size_t, std::size_t> scale_subsets(const std::string& scale) {
    if (scale == "desk") return {2000, 500};
    return {0, 0};
}

LabeledDataset limited(const LabeledDataset& ds, std::size_t limit) {
    if (limit == 0 || limit >= ds.size()) return ds;
    return ds.subset(0, limit);
}

void write_manifest(const std::string& out_dir, const std::string& command, const json& config,
                    std::uint64_t seed, const std::vector<std::string>& input_files) {
    fs::create_directories(out_dir);
    json inputs = json::object();
    for (const auto& path : input_files) inputs[path] = sha256_file(path);
    const json manifest = {{"command", command},
                          {"config", config},
                          {"seed", seed},
                          {"inputs", inputs},
                          {"out_dir", out_dir}};
    const std::string path = out_dir + "/manifest.json";
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path);
    out << manifest.dump(2) << "\n";
    if (!out) throw IoError("short write to " + path);
}

void print_epoch(const EpochMetrics& m, double wall) {
    std::printf("epoch %zu: train_loss=%.4f train_acc=%.4f test_loss=%.4f test_acc=%.4f "
                "model_seconds=%.3f wall=%.1fs\n",
                m.epoch, m.train_loss, m.train_acc, m.test_loss, m.test_acc, m.seconds, wall);
    std::fflush(stdout);
}

// ---- train -----------------------------------------------------------------

struct TrainOpts {
    std::string dataset = "mnist";
    std::string arch = "capsnet";
    std::string scale = "desk";
    std::string data_dir;
    std::string out = "out";
    std::string optimizer = "adam";
    std::size_t routing_iters = 3;
    std::size_t epochs = 10;
    std::size_t batch_size = 16;
    double lr = 1e-3;
    std::uint64_t seed = 42;
    std::size_t train_limit = 0;  // 0 = scale preset
    std::size_t test_limit = 0;
    bool check_routing = false;
};

json train_run_config(const TrainOpts& o, const json& model, const TrainConfig& tc, std::size_t train_subset,
                      std::size_t test_subset) {
    return {{"arch", o.arch},       {"dataset", o.dataset},
            {"scale", o.scale},     {"model", model},
            {"train", tc},          {"train_subset", train_subset},
            {"test_subset", test_subset}};
}

void cmd_train(const TrainOpts& o) {
    const auto t0 = std::chrono::steady_clock::now();
    const std::string data_dir = resolve_data_dir(o.data_dir);
    const std::vector<std::string> files = named_dataset_files(o.dataset, data_dir);

    auto [train_subset, test_subset] = scale_subsets(o.scale);
    if (o.train_limit > 0) train_subset = o.train_limit;
    if (o.test_limit > 0) test_subset = o.test_limit;

    TrainConfig tc;
    tc.epochs = o.epochs;
    tc.batch_size = o.batch_size;
    tc.seed = o.seed;
    tc.optimizer = o.optimizer;
    tc.lr = o.lr;
    tc.check_routing = o.check_routing;

    json model_json;
    CapsNetConfig caps_cfg;
    CnnConfig cnn_cfg;
    if (o.arch == "capsnet") {
        caps_cfg = make_capsnet_config(o.dataset, o.scale, o.routing_iters);
        model_json = caps_cfg;
    } else {
        cnn_cfg = make_cnn_config(o.dataset);
        model_json = cnn_cfg;
    }
    const json run_cfg = train_run_config(o, model_json, tc, train_subset, test_subset);
    write_manifest(o.out, "train", run_cfg, o.seed, files);
    fs::create_directories(o.out + "/checkpoints");

    DatasetPair data = load_named_dataset(o.dataset, data_dir);
    const LabeledDataset train = limited(data.train, train_subset);
    const LabeledDataset test = limited(data.test, test_subset);
    std::printf("training %s on %s (%zu train / %zu test), seed %llu\n", o.arch.c_str(), o.dataset.c_str(),
                train.size(), test.size(), static_cast<unsigned long long>(o.seed));

    std::vector<EpochMetrics> metrics;
    Rng shuffle_rng(o.seed, Stream::shuffle);
    RoutingStats stats;

    if (o.arch == "capsnet") {
        Rng init_rng(o.seed, Stream::init);
        CapsNetParams<float> params = CapsNetParams<float>::init(caps_cfg, init_rng);
        TrainHooks hooks;
        hooks.on_epoch = [&](const EpochMetrics& m) {
            print_epoch(m, wall_seconds(t0));
            json snap = run_cfg;
            snap["epoch"] = m.epoch + 1;
            snap["shuffle_rng"] = shuffle_rng.state_string();
            char name[64];
            std::snprintf(name, sizeof(name), "/checkpoints/epoch_%03zu.ckpt", m.epoch + 1);
            save_checkpoint(o.out + name, snap.dump(), params.named());
        };
        metrics = train_capsnet(caps_cfg, params, train, test, tc, o.check_routing ? &stats : nullptr, hooks,
                                0, &shuffle_rng);
        json snap = run_cfg;
        snap["epoch"] = tc.epochs;
        snap["shuffle_rng"] = shuffle_rng.state_string();
        save_checkpoint(o.out + "/checkpoints/final.ckpt", snap.dump(), params.named());
        if (o.check_routing)
            std::printf("routing checks: max |sum(c)-1| = %.3e, max ||v|| = %.9f over %llu observations\n",
                        stats.max_coupling_sum_err, stats.max_output_norm,
                        static_cast<unsigned long long>(stats.observed));
    } else {
        Rng init_rng(o.seed, Stream::init);
        CnnParams<float> params = CnnParams<float>::init(cnn_cfg, init_rng);
        TrainHooks hooks;
        hooks.on_epoch = [&](const EpochMetrics& m) {
            print_epoch(m, wall_seconds(t0));
            json snap = run_cfg;
            snap["epoch"] = m.epoch + 1;
            snap["shuffle_rng"] = shuffle_rng.state_string();
            char name[64];
            std::snprintf(name, sizeof(name), "/checkpoints/epoch_%03zu.ckpt", m.epoch + 1);
            save_checkpoint(o.out + name, snap.dump(), params.named());
        };
        metrics = train_cnn(cnn_cfg, params, train, test, tc, hooks, 0, &shuffle_rng);
        json snap = run_cfg;
        snap["epoch"] = tc.epochs;
        snap["shuffle_rng"] = shuffle_rng.state_string();
        save_checkpoint(o.out + "/checkpoints/final.ckpt", snap.dump(), params.named());
    }

    write_metrics_csv(o.out + "/metrics.csv", metrics);
    if (!metrics.empty())
        std::printf("done: final test accuracy %.4f (wall %.1fs)\n", metrics.back().test_acc,
                    wall_seconds(t0));
}

// ---- eval ------------------------------------------------------------------

struct EvalOpts {
    std::string checkpoint;
    std::string dataset;  // empty = from checkpoint
    std::string arch;     // empty = from checkpoint
    std::string data_dir;
    std::string out = "out";
    std::uint64_t seed = 42;
    std::size_t batch_size = 16;
    bool deform = false;
};

LabeledDataset deformed_test_cached(const std::string& dataset_dir, const LabeledDataset& full_test,
                                    std::uint64_t seed) {
    char stem[64];
    std::snprintf(stem, sizeof(stem), "/deformed_test_seed%llu", static_cast<unsigned long long>(seed));
    const std::string img_path = dataset_dir + stem + "-images.idx";
    const std::string lab_path = dataset_dir + stem + "-labels.idx";
    if (!fs::exists(img_path) || !fs::exists(lab_path)) {
        AffineRanges ranges;
        LabeledDataset deformed = deform_dataset(full_test, seed, ranges);
        save_idx_images(img_path, deformed.images, deformed.size(), deformed.channels, deformed.height,
                        deformed.width);
        save_idx_labels(lab_path, deformed.labels);
        std::ofstream meta(dataset_dir + stem + ".meta", std::ios::trunc);
        meta << "seed=" << seed << "\nangle_deg=+-" << ranges.max_angle_deg << "\nshear=+-"
             << ranges.max_shear << "\ntranslate_px=+-" << ranges.max_translate
             << "\nscale=" << ranges.scale << "\ncount=" << deformed.size() << "\n";
    }
    // always evaluate the quantized cache so repeat runs are byte-stable
    return load_idx(img_path, lab_path);
}

void cmd_eval(const EvalOpts& o) {
    if (!fs::exists(o.checkpoint)) throw IoError("checkpoint not found: " + o.checkpoint);
    LoadedCheckpoint ck = load_checkpoint(o.checkpoint);
    const json snap = parse_config_json(ck.config_json);
    const std::string arch = snap.value("arch", "capsnet");
    const std::string dataset = snap.value("dataset", "mnist");
    if (!o.arch.empty() && o.arch != arch)
        throw IncompatibilityError("checkpoint arch is " + arch + ", requested " + o.arch);
    if (!o.dataset.empty() && o.dataset != dataset)
        throw IncompatibilityError("checkpoint dataset is " + dataset + ", requested " + o.dataset);

    const std::string data_dir = resolve_data_dir(o.data_dir);
    std::vector<std::string> files = named_dataset_files(dataset, data_dir);
    std::vector<std::string> inputs = files;
    inputs.push_back(o.checkpoint);
    json cfg_json = snap;
    cfg_json["deform"] = o.deform;
    cfg_json["deform_seed"] = o.seed;
    write_manifest(o.out, "eval", cfg_json, o.seed, inputs);

    DatasetPair data = load_named_dataset(dataset, data_dir);
    const std::size_t test_subset = snap.value("test_subset", std::size_t{0});
    const LabeledDataset test = limited(data.test, test_subset);

    EvalResult clean;
    CapsNetConfig caps_cfg;
    CapsNetParams<float> caps_params;
    CnnConfig cnn_cfg;
    CnnParams<float> cnn_params;
    if (arch == "capsnet") {
        caps_cfg = snap.at("model").get<CapsNetConfig>();
        caps_cfg.validate();
        caps_params = CapsNetParams<float>::zeros_like(caps_cfg);
        fill_named(ck, caps_params.named());
        clean = evaluate(caps_cfg, caps_params, test, o.batch_size);
    } else {
        cnn_cfg = snap.at("model").get<CnnConfig>();
        cnn_cfg.validate();
        Rng dummy(0, Stream::init);
        cnn_params = CnnParams<float>::init(cnn_cfg, dummy);
        fill_named(ck, cnn_params.named());
        clean = evaluate_cnn(cnn_cfg, cnn_params, test, o.batch_size);
    }
    write_confusion_csv(o.out + "/confusion.csv", clean.confusion);
    std::printf("clean_accuracy=%.4f clean_loss=%.6f (%zu samples)\n", clean.accuracy, clean.loss,
                test.size());

    if (o.deform) {
        const std::string dataset_dir = fs::path(files.front()).parent_path().string();
        const LabeledDataset deformed_full = deformed_test_cached(dataset_dir, data.test, o.seed);
        const LabeledDataset deformed = limited(deformed_full, test_subset);
        EvalResult def = arch == "capsnet" ? evaluate(caps_cfg, caps_params, deformed, o.batch_size)
                                           : evaluate_cnn(cnn_cfg, cnn_params, deformed, o.batch_size);
        write_confusion_csv(o.out + "/confusion_deformed.csv", def.confusion);
        std::printf("deformed_accuracy=%.4f deformed_loss=%.6f drop=%.4f\n", def.accuracy, def.loss,
                    clean.accuracy - def.accuracy);
    }
}

// ---- sweep-routing ---------------------------------------------------------

struct SweepOpts {
    std::string dataset = "mnist";
    std::string scale = "desk";
    std::string data_dir;
    std::string out = "out";
    std::string optimizer = "adam";
    std::vector<std::size_t> iters = {1, 2, 3, 4, 5};
    std::size_t epochs = 10;
    std::size_t batch_size = 16;
    double lr = 1e-3;
    std::uint64_t seed = 42;
    std::size_t train_limit = 0;
    std::size_t test_limit = 0;
};

void cmd_sweep(const SweepOpts& o) {
    const auto t0 = std::chrono::steady_clock::now();
    const std::string data_dir = resolve_data_dir(o.data_dir);
    const std::vector<std::string> files = named_dataset_files(o.dataset, data_dir);

    auto [train_subset, test_subset] = scale_subsets(o.scale);
    if (o.train_limit > 0) train_subset = o.train_limit;
    if (o.test_limit > 0) test_subset = o.test_limit;

    TrainConfig tc;
    tc.epochs = o.epochs;
    tc.batch_size = o.batch_size;
    tc.seed = o.seed;
    tc.optimizer = o.optimizer;
    tc.lr = o.lr;

    CapsNetConfig base_cfg = make_capsnet_config(o.dataset, o.scale, 3);
    json cfg_json = {{"arch", "capsnet"},    {"dataset", o.dataset},       {"scale", o.scale},
                     {"model", base_cfg},    {"train", tc},                {"iters", o.iters},
                     {"train_subset", train_subset}, {"test_subset", test_subset}};
    write_manifest(o.out, "sweep-routing", cfg_json, o.seed, files);
    fs::create_directories(o.out + "/checkpoints");

    DatasetPair data = load_named_dataset(o.dataset, data_dir);
    const LabeledDataset train = limited(data.train, train_subset);
    const LabeledDataset test = limited(data.test, test_subset);

    TrainHooks hooks;
    hooks.on_epoch = [&](const EpochMetrics& m) { print_epoch(m, wall_seconds(t0)); };
    std::vector<SweepEntry> entries = routing_sweep(base_cfg, train, test, tc, o.iters, hooks);

    std::ofstream table(o.out + "/sweep.csv", std::ios::trunc);
    if (!table) throw IoError("cannot write " + o.out + "/sweep.csv");
    table << "routing_iters,final_test_acc,total_seconds,seconds_per_epoch\n";
    char buf[160];
    for (const auto& e : entries) {
        CapsNetConfig cfg = base_cfg;
        cfg.routing_iters = e.iters;
        json snap = cfg_json;
        snap["model"] = cfg;
        snap["epoch"] = tc.epochs;
        save_checkpoint(o.out + "/checkpoints/sweep_r" + std::to_string(e.iters) + ".ckpt", snap.dump(),
                        e.params.named());
        write_metrics_csv(o.out + "/metrics_r" + std::to_string(e.iters) + ".csv", e.metrics);
        const double per_epoch = e.metrics.empty() ? 0.0 : e.total_seconds / e.metrics.size();
        std::snprintf(buf, sizeof(buf), "%zu,%.6f,%.9f,%.9f\n", e.iters, e.final_test_acc, e.total_seconds,
                      per_epoch);
        table << buf;
        std::printf("r=%zu: final_test_acc=%.4f seconds_per_epoch=%.3f\n", e.iters, e.final_test_acc,
                    per_epoch);
    }
    if (!table) throw IoError("short write to " + o.out + "/sweep.csv");
}

// ---- export ----------------------------------------------------------------

struct ExportOpts {
    std::string checkpoint;
    std::string early_checkpoint;
    std::string dataset;
    std::string data_dir;
    std::string out = "out";
    std::size_t reconstructions = 0;
    long long perturb = -1;
    std::size_t errors = 0;
    std::size_t embeddings = 0;
    bool per_iteration = false;
    bool pca = false;
    std::size_t batch_size = 16;
};

void cmd_export(const ExportOpts& o) {
    if (o.pca && o.embeddings == 0) throw UsageError("--pca requires --embeddings N");
    if (!fs::exists(o.checkpoint)) throw IoError("checkpoint not found: " + o.checkpoint);
    LoadedCheckpoint ck = load_checkpoint(o.checkpoint);
    const json snap = parse_config_json(ck.config_json);
    const std::string arch = snap.value("arch", "capsnet");
    if (arch != "capsnet") throw IncompatibilityError("export needs a capsnet checkpoint, got " + arch);
    const std::string dataset = snap.value("dataset", "mnist");
    if (!o.dataset.empty() && o.dataset != dataset)
        throw IncompatibilityError("checkpoint dataset is " + dataset + ", requested " + o.dataset);

    const std::string data_dir = resolve_data_dir(o.data_dir);
    std::vector<std::string> inputs = named_dataset_files(dataset, data_dir);
    inputs.push_back(o.checkpoint);

    std::string early_path = o.early_checkpoint;
    if (o.reconstructions > 0) {
        if (early_path.empty())
            early_path = (fs::path(o.checkpoint).parent_path() / "epoch_002.ckpt").string();
        if (!fs::exists(early_path)) throw IoError("early checkpoint not found: " + early_path);
        inputs.push_back(early_path);
    }

    json cfg_json = snap;
    cfg_json["exports"] = {{"reconstructions", o.reconstructions},
                          {"perturb", o.perturb},
                          {"errors", o.errors},
                          {"embeddings", o.embeddings},
                          {"per_iteration", o.per_iteration},
                          {"pca", o.pca}};
    write_manifest(o.out, "export", cfg_json, snap.value("train", json::object()).value("seed", 42ull),
                   inputs);

    CapsNetConfig cfg = snap.at("model").get<CapsNetConfig>();
    cfg.validate();
    CapsNetParams<float> params = CapsNetParams<float>::zeros_like(cfg);
    fill_named(ck, params.named());

    DatasetPair data = load_named_dataset(dataset, data_dir);
    const LabeledDataset test = limited(data.test, snap.value("test_subset", std::size_t{0}));

    const std::string figures = o.out + "/figures";
    const std::string embeddings_dir = o.out + "/embeddings";

    if (o.reconstructions > 0) {
        LoadedCheckpoint early_ck = load_checkpoint(early_path);
        CapsNetParams<float> early_params = CapsNetParams<float>::zeros_like(cfg);
        fill_named(early_ck, early_params.named());
        ReconGridPaths paths = export_reconstructions(figures, cfg, early_params, params, test,
                                                      o.reconstructions, o.batch_size);
        std::printf("wrote %s, %s, %s\n", paths.early.c_str(), paths.final_epoch.c_str(),
                    paths.truth.c_str());
    }
    if (o.perturb >= 0) {
        const std::string path =
            export_perturbations(figures, cfg, params, test, static_cast<std::size_t>(o.perturb));
        std::printf("wrote %s\n", path.c_str());
    }
    if (o.errors > 0) {
        const std::size_t n = export_error_cases(figures, cfg, params, test, o.errors, o.batch_size);
        std::printf("wrote %zu error case grids under %s\n", n, figures.c_str());
    }
    if (o.embeddings > 0) {
        EmbeddingDump dump =
            export_embeddings(embeddings_dir, cfg, params, test, o.embeddings, o.per_iteration, o.batch_size);
        std::printf("wrote %s (%zu rows)\n", dump.path.c_str(), dump.iters.size());
        if (o.pca) {
            PcaResult pca = export_pca(embeddings_dir, dump);
            std::printf("pca explained fractions: %.6f %.6f %.6f\n", pca.explained[0], pca.explained[1],
                        pca.explained[2]);
        }
    }
}

// ---- deform-preview --------------------------------------------------------

struct PreviewOpts {
    std::string dataset = "mnist";
    std::string data_dir;
    std::string out = "out";
    std::uint64_t seed = 42;
};

void cmd_preview(const PreviewOpts& o) {
    const std::string data_dir = resolve_data_dir(o.data_dir);
    const std::vector<std::string> files = named_dataset_files(o.dataset, data_dir);
    write_manifest(o.out, "deform-preview", {{"dataset", o.dataset}}, o.seed, files);

    DatasetPair data = load_named_dataset(o.dataset, data_dir);
    const std::size_t n = std::min<std::size_t>(100, data.test.size());
    if (n == 0) throw ContractError("deform-preview: test split is empty");
    AffineRanges ranges;
    const LabeledDataset deformed = deform_dataset(data.test.subset(0, n), o.seed, ranges);

    const auto [rows, cols] = grid_layout(n);
    ImageGrid grid(rows, cols, deformed.channels, deformed.height, deformed.width);
    for (std::size_t i = 0; i < n; ++i) grid.set(i / cols, i % cols, deformed.image(i));
    fs::create_directories(o.out + "/figures");
    const std::string path =
        grid.save(o.out + "/figures/deform_preview_seed" + std::to_string(o.seed));
    std::printf("wrote %s (%zux%zu cells)\n", path.c_str(), rows, cols);
}

// ---- synth-data ------------------------------------------------------------

struct SynthOpts {
    std::string dataset = "mnist";
    std::string data_dir;
    std::size_t train = 60000;
    std::size_t test = 10000;
    std::uint64_t seed = 42;
};

void cmd_synth(const SynthOpts& o) {
    const std::string data_dir = resolve_data_dir(o.data_dir);
    const std::string target = data_dir + "/" + o.dataset;
    SynthConfig cfg;
    cfg.train = o.train;
    cfg.test = o.test;
    cfg.seed = o.seed;
    if (o.dataset == "cifar10")
        write_synth_cifar10(target, cfg);
    else
        write_synth_mnist(target, cfg);
    const json meta = {{"dataset", o.dataset}, {"train", o.train}, {"test", o.test}, {"seed", o.seed}};
    std::ofstream out(target + "/synth_manifest.json", std::ios::trunc);
    out << meta.dump(2) << "\n";
    std::printf("wrote synthetic %s corpus under %s (%zu train / %zu test)\n", o.dataset.c_str(),
                target.c_str(), o.train, o.test);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"capsule network training, evaluation, and analysis"};
    app.require_subcommand(1);

    TrainOpts train_opts;
    auto* train_cmd = app.add_subcommand("train", "train a model and write checkpoints + metrics");
    train_cmd->add_option("--dataset", train_opts.dataset)
        ->check(CLI::IsMember({"mnist", "fashion", "cifar10"}));
    train_cmd->add_option("--arch", train_opts.arch)->check(CLI::IsMember({"capsnet", "cnn"}));
    train_cmd->add_option("--scale", train_opts.scale)->check(CLI::IsMember({"full", "desk"}));
    train_cmd->add_option("--routing-iters", train_opts.routing_iters)->check(CLI::Range(std::size_t{1}, std::size_t{64}));
    train_cmd->add_option("--epochs", train_opts.epochs)->check(CLI::Range(std::size_t{1}, std::size_t{100000}));
    train_cmd->add_option("--batch-size", train_opts.batch_size)->check(CLI::Range(std::size_t{1}, std::size_t{100000}));
    train_cmd->add_option("--lr", train_opts.lr)->check(CLI::PositiveNumber);
    train_cmd->add_option("--seed", train_opts.seed);
    train_cmd->add_option("--out", train_opts.out);
    train_cmd->add_option("--data-dir", train_opts.data_dir);
    train_cmd->add_option("--optimizer", train_opts.optimizer)->check(CLI::IsMember({"adam", "sgd"}));
    train_cmd->add_option("--train-limit", train_opts.train_limit);
    train_cmd->add_option("--test-limit", train_opts.test_limit);
    train_cmd->add_flag("--check-routing", train_opts.check_routing);

    EvalOpts eval_opts;
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint (optionally on deformed data)");
    eval_cmd->add_option("--checkpoint", eval_opts.checkpoint)->required();
    eval_cmd->add_option("--dataset", eval_opts.dataset)
        ->check(CLI::IsMember({"mnist", "fashion", "cifar10"}));
    eval_cmd->add_option("--arch", eval_opts.arch)->check(CLI::IsMember({"capsnet", "cnn"}));
    eval_cmd->add_option("--data-dir", eval_opts.data_dir);
    eval_cmd->add_option("--out", eval_opts.out);
    eval_cmd->add_option("--seed", eval_opts.seed);
    eval_cmd->add_option("--batch-size", eval_opts.batch_size);
    eval_cmd->add_flag("--deform", eval_opts.deform);

    SweepOpts sweep_opts;
    auto* sweep_cmd = app.add_subcommand("sweep-routing", "train one model per routing iteration count");
    sweep_cmd->add_option("--iters", sweep_opts.iters)->delimiter(',');
    sweep_cmd->add_option("--dataset", sweep_opts.dataset)
        ->check(CLI::IsMember({"mnist", "fashion", "cifar10"}));
    sweep_cmd->add_option("--scale", sweep_opts.scale)->check(CLI::IsMember({"full", "desk"}));
    sweep_cmd->add_option("--epochs", sweep_opts.epochs)->check(CLI::Range(std::size_t{1}, std::size_t{100000}));
    sweep_cmd->add_option("--batch-size", sweep_opts.batch_size)->check(CLI::Range(std::size_t{1}, std::size_t{100000}));
    sweep_cmd->add_option("--lr", sweep_opts.lr)->check(CLI::PositiveNumber);
    sweep_cmd->add_option("--seed", sweep_opts.seed);
    sweep_cmd->add_option("--out", sweep_opts.out);
    sweep_cmd->add_option("--data-dir", sweep_opts.data_dir);
    sweep_cmd->add_option("--optimizer", sweep_opts.optimizer)->check(CLI::IsMember({"adam", "sgd"}));
    sweep_cmd->add_option("--train-limit", sweep_opts.train_limit);
    sweep_cmd->add_option("--test-limit", sweep_opts.test_limit);

    ExportOpts export_opts;
    auto* export_cmd = app.add_subcommand("export", "write reconstruction/perturbation/embedding artifacts");
    export_cmd->add_option("--checkpoint", export_opts.checkpoint)->required();
    export_cmd->add_option("--early-checkpoint", export_opts.early_checkpoint);
    export_cmd->add_option("--dataset", export_opts.dataset)
        ->check(CLI::IsMember({"mnist", "fashion", "cifar10"}));
    export_cmd->add_option("--data-dir", export_opts.data_dir);
    export_cmd->add_option("--out", export_opts.out);
    export_cmd->add_option("--reconstructions", export_opts.reconstructions);
    export_cmd->add_option("--perturb", export_opts.perturb);
    export_cmd->add_option("--errors", export_opts.errors);
    export_cmd->add_option("--embeddings", export_opts.embeddings);
    export_cmd->add_flag("--per-iteration", export_opts.per_iteration);
    export_cmd->add_flag("--pca", export_opts.pca);
    export_cmd->add_option("--batch-size", export_opts.batch_size);

    PreviewOpts preview_opts;
    auto* preview_cmd = app.add_subcommand("deform-preview", "write a grid of deformed test samples");
    preview_cmd->add_option("--dataset", preview_opts.dataset)
        ->check(CLI::IsMember({"mnist", "fashion", "cifar10"}));
    preview_cmd->add_option("--data-dir", preview_opts.data_dir);
    preview_cmd->add_option("--out", preview_opts.out);
    preview_cmd->add_option("--seed", preview_opts.seed);

    SynthOpts synth_opts;
    auto* synth_cmd = app.add_subcommand("synth-data", "generate a procedural stand-in corpus");
    synth_cmd->add_option("--dataset", synth_opts.dataset)
        ->check(CLI::IsMember({"mnist", "fashion", "cifar10"}));
    synth_cmd->add_option("--data-dir", synth_opts.data_dir);
    synth_cmd->add_option("--train", synth_opts.train);
    synth_cmd->add_option("--test", synth_opts.test);
    synth_cmd->add_option("--seed", synth_opts.seed);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (app.got_subcommand(train_cmd)) cmd_train(train_opts);
        else if (app.got_subcommand(eval_cmd)) cmd_eval(eval_opts);
        else if (app.got_subcommand(sweep_cmd)) cmd_sweep(sweep_opts);
        else if (app.got_subcommand(export_cmd)) cmd_export(export_opts);
        else if (app.got_subcommand(preview_cmd)) cmd_preview(preview_opts);
        else if (app.got_subcommand(synth_cmd)) cmd_synth(synth_opts);
        return 0;
    } catch (const UsageError& e) {
        std::fprintf(stderr, "usage error: %s\n", e.what());
        return 2;
    } catch (const IoError& e) {
        std::fprintf(stderr, "missing input: %s\n", e.what());
        return 3;
    } catch (const FormatError& e) {
        std::fprintf(stderr, "bad input: %s\n", e.what());
        return 3;
    } catch (const IncompatibilityError& e) {
        std::fprintf(stderr, "incompatible: %s\n", e.what());
        return 4;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
