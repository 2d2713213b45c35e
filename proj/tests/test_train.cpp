#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"

#include "capsforge/checkpoint.hpp"
#include "capsforge/optimizer.hpp"
#include "capsforge/synth.hpp"
#include "capsforge/trainer.hpp"

using namespace capsforge;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir() {
    const fs::path dir = fs::temp_directory_path() / "capsforge_test_train";
    fs::create_directories(dir);
    return dir;
}

CapsNetConfig tiny_config() {
    CapsNetConfig cfg;
    cfg.in_h = cfg.in_w = 12;
    cfg.conv1_maps = 4;
    cfg.conv1_kernel = 5;
    cfg.primary_types = 2;
    cfg.primary_dim = 8;
    cfg.primary_kernel = 5;
    cfg.num_classes = 2;
    cfg.digit_dim = 8;
    cfg.decoder_hidden = {16, 16};
    cfg.validate();
    return cfg;
}

LabeledDataset tiny_dataset(std::size_t n, std::uint64_t seed) {
    LabeledDataset ds;
    ds.name = "tiny";
    ds.channels = 1;
    ds.height = ds.width = 12;
    Rng rng(seed, Stream::synth);
    for (std::size_t i = 0; i < n; ++i) {
        const int digit = static_cast<int>(i % 2);
        Rng sub = rng.substream(i);
        const auto img = render_digit(digit, 12, 12, sub);
        ds.images.insert(ds.images.end(), img.begin(), img.end());
        ds.labels.push_back(digit);
    }
    return ds;
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path);
    REQUIRE(in.good());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("checkpoints restore parameters bit-exactly") {
    const CapsNetConfig cfg = tiny_config();
    Rng rng(70, Stream::init);
    auto params = CapsNetParams<float>::init(cfg, rng);
    const fs::path path = scratch_dir() / "roundtrip.ckpt";
    save_checkpoint(path.string(), "{\"note\":\"roundtrip\"}", params.named());

    const LoadedCheckpoint ck = load_checkpoint(path.string());
    CHECK(ck.config_json == "{\"note\":\"roundtrip\"}");
    auto restored = CapsNetParams<float>::zeros_like(cfg);
    fill_named(ck, restored.named());
    const auto a = params.named();
    const auto b = restored.named();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        REQUIRE(a[i].second.values().size() == b[i].second.values().size());
        for (std::size_t j = 0; j < a[i].second.values().size(); ++j)
            CHECK(a[i].second.values()[j] == b[i].second.values()[j]);
    }
}

TEST_CASE("checkpoint loader rejects corrupted containers") {
    const CapsNetConfig cfg = tiny_config();
    Rng rng(71, Stream::init);
    auto params = CapsNetParams<float>::init(cfg, rng);
    const fs::path path = scratch_dir() / "corrupt.ckpt";
    save_checkpoint(path.string(), "{}", params.named());

    // flip the magic
    {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(0);
        f.put('X');
    }
    CHECK_THROWS_AS(load_checkpoint(path.string()), FormatError);

    save_checkpoint(path.string(), "{}", params.named());
    {
        std::ofstream f(path, std::ios::app | std::ios::binary);
        f.put('\0');  // trailing garbage
    }
    CHECK_THROWS_AS(load_checkpoint(path.string()), FormatError);
}

TEST_CASE("fill_named flags missing tensors and shape drift") {
    const CapsNetConfig cfg = tiny_config();
    Rng rng(72, Stream::init);
    auto params = CapsNetParams<float>::init(cfg, rng);
    const fs::path path = scratch_dir() / "mismatch.ckpt";
    save_checkpoint(path.string(), "{}", params.named());
    const LoadedCheckpoint ck = load_checkpoint(path.string());

    CapsNetConfig wider = cfg;
    wider.conv1_maps = 8;
    auto wrong = CapsNetParams<float>::zeros_like(wider);
    CHECK_THROWS_AS(fill_named(ck, wrong.named()), IncompatibilityError);

    auto extra = params.named();
    extra.emplace_back("missing_tensor", TensorF::zeros({2}));
    CHECK_THROWS_AS(fill_named(ck, extra), IncompatibilityError);
}

TEST_CASE("adam drives a quadratic to its minimum deterministically") {
    auto run = [] {
        auto x = TensorF::from_data({2}, {5.0f, -3.0f}, true);
        Adam::Config cfg;
        cfg.lr = 0.05f;
        Adam opt({x}, cfg);
        for (int i = 0; i < 1000; ++i) {
            opt.zero_grad();
            auto loss = sum_all(mul(x, x));
            backward(loss);
            opt.step();
        }
        return std::pair<float, float>{x.values()[0], x.values()[1]};
    };
    const auto a = run();
    const auto b = run();
    CHECK(std::abs(a.first) < 0.05f);
    CHECK(std::abs(a.second) < 0.05f);
    CHECK(a.first == b.first);  // bitwise repeatable
    CHECK(a.second == b.second);
}

TEST_CASE("sgd follows the gradient") {
    auto x = TensorF::from_data({1}, {4.0f}, true);
    Sgd opt({x}, 0.5f);
    opt.zero_grad();
    backward(sum_all(mul(x, x)));  // d/dx = 2x = 8
    opt.step();
    CHECK(x.values()[0] == doctest::Approx(0.0f));
}

TEST_CASE("make_optimizer rejects unknown names") {
    auto x = TensorF::zeros({1}, true);
    CHECK_THROWS_AS(make_optimizer("adagrad", {x}, 0.1f), ContractError);
    CHECK(make_optimizer("adam", {x}, 0.1f) != nullptr);
    CHECK(make_optimizer("sgd", {x}, 0.1f) != nullptr);
}

TEST_CASE("optimizers require gradient-enabled leaves") {
    auto frozen = TensorF::zeros({1});
    CHECK_THROWS_AS(Sgd({frozen}, 0.1f), ContractError);
}

TEST_CASE("a short training run fills metrics and improves the loss") {
    const CapsNetConfig cfg = tiny_config();
    const LabeledDataset train = tiny_dataset(16, 80);
    const LabeledDataset test = tiny_dataset(8, 81);
    Rng rng(82, Stream::init);
    auto params = CapsNetParams<float>::init(cfg, rng);
    TrainConfig tc;
    tc.epochs = 2;
    tc.batch_size = 4;
    tc.seed = 82;
    const auto metrics = train_capsnet(cfg, params, train, test, tc);
    REQUIRE(metrics.size() == 2);
    CHECK(metrics[0].epoch == 0);
    CHECK(metrics[1].epoch == 1);
    CHECK(metrics[1].train_loss < metrics[0].train_loss);
    CHECK(metrics[0].seconds > 0.0);
    for (const auto& m : metrics) {
        CHECK(m.train_acc >= 0.0);
        CHECK(m.train_acc <= 1.0);
        CHECK(m.test_acc >= 0.0);
        CHECK(m.test_acc <= 1.0);
    }
}

TEST_CASE("identical seeds reproduce a training run exactly") {
    const CapsNetConfig cfg = tiny_config();
    const LabeledDataset train = tiny_dataset(12, 83);
    const LabeledDataset test = tiny_dataset(6, 84);
    TrainConfig tc;
    tc.epochs = 2;
    tc.batch_size = 4;
    tc.seed = 99;

    auto run = [&] {
        Rng rng(tc.seed, Stream::init);
        auto params = CapsNetParams<float>::init(cfg, rng);
        auto metrics = train_capsnet(cfg, params, train, test, tc);
        return std::pair<std::vector<EpochMetrics>, std::vector<float>>{
            metrics, std::vector<float>(params.conv1_w.values().begin(), params.conv1_w.values().end())};
    };
    const auto a = run();
    const auto b = run();
    CHECK(a.second == b.second);
    for (std::size_t i = 0; i < a.first.size(); ++i) {
        CHECK(a.first[i].train_loss == b.first[i].train_loss);
        CHECK(a.first[i].test_acc == b.first[i].test_acc);
        CHECK(a.first[i].seconds == b.first[i].seconds);
    }
}

TEST_CASE("metrics csv uses the fixed column layout") {
    std::vector<EpochMetrics> rows(2);
    rows[0] = {0, 1.25, 0.5, 1.5, 0.25, 0.125};
    rows[1] = {1, 0.5, 0.875, 0.75, 0.625, 0.25};
    const fs::path path = scratch_dir() / "metrics.csv";
    write_metrics_csv(path.string(), rows);
    const std::string text = read_text(path);
    CHECK(text == "epoch,train_loss,train_acc,test_loss,test_acc,seconds\n"
                  "0,1.250000,0.500000,1.500000,0.250000,0.125000000\n"
                  "1,0.500000,0.875000,0.750000,0.625000,0.250000000\n");
}

TEST_CASE("evaluation counts into a square confusion matrix") {
    const CapsNetConfig cfg = tiny_config();
    const LabeledDataset test = tiny_dataset(10, 85);
    Rng rng(86, Stream::init);
    auto params = CapsNetParams<float>::init(cfg, rng);
    const EvalResult r = evaluate(cfg, params, test, 4);
    REQUIRE(r.confusion.size() == cfg.num_classes);
    std::size_t total = 0;
    for (const auto& row : r.confusion) {
        REQUIRE(row.size() == cfg.num_classes);
        for (std::size_t v : row) total += v;
    }
    CHECK(total == test.size());
    CHECK(r.predictions.size() == test.size());
    std::size_t hits = 0;
    for (std::size_t i = 0; i < test.size(); ++i)
        if (r.predictions[i] == test.labels[i]) ++hits;
    CHECK(r.accuracy == doctest::Approx(static_cast<double>(hits) / test.size()));
}

TEST_CASE("cnn baseline trains end to end on the tiny corpus") {
    CnnConfig cfg;
    cfg.in_channels = 1;
    cfg.in_h = cfg.in_w = 12;
    cfg.conv_maps = {4, 8};
    cfg.conv_kernel = 3;
    cfg.dense_hidden = 16;
    cfg.num_classes = 2;
    cfg.validate();
    const LabeledDataset train = tiny_dataset(16, 87);
    const LabeledDataset test = tiny_dataset(8, 88);
    Rng rng(89, Stream::init);
    auto params = CnnParams<float>::init(cfg, rng);
    TrainConfig tc;
    tc.epochs = 2;
    tc.batch_size = 4;
    const auto metrics = train_cnn(cfg, params, train, test, tc);
    REQUIRE(metrics.size() == 2);
    CHECK(metrics[1].train_loss < metrics[0].train_loss);
    const EvalResult r = evaluate_cnn(cfg, params, test, 4);
    CHECK(r.predictions.size() == test.size());
}
