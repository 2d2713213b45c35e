#pragma once

#include <functional>
#include <string>
#include <vector>

#include "capsforge/baseline.hpp"
#include "capsforge/capsnet.hpp"
#include "capsforge/dataset.hpp"
#include "capsforge/optimizer.hpp"

namespace capsforge {

struct TrainConfig {
    std::size_t epochs = 10;
    std::size_t batch_size = 16;
    std::uint64_t seed = 42;
    std::string optimizer = "adam";
    double lr = 1e-3;
    bool check_routing = false;  // accumulate RoutingStats over every train batch
};

// "seconds" is modelled compute (multiply-accumulate count * 1e-9), not wall
// time, so metrics are a pure function of seed and config.
struct EpochMetrics {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double train_acc = 0.0;
    double test_loss = 0.0;
    double test_acc = 0.0;
    double seconds = 0.0;
};

struct EvalResult {
    double loss = 0.0;
    double accuracy = 0.0;
    std::vector<std::vector<std::size_t>> confusion;  // [true][pred]
    std::vector<int> predictions;
};

EvalResult evaluate(const CapsNetConfig& cfg, const CapsNetParams<float>& params, const LabeledDataset& data,
                    std::size_t batch_size, std::size_t routing_iters = 0);

struct TrainHooks {
    std::function<void(const EpochMetrics&)> on_epoch;
    std::function<void(std::size_t step, double loss)> on_step;
};

// Runs epochs [start_epoch, cfg.epochs).  The caller owns the shuffle
// generator so a resumed run continues the exact stream; pass nullptr to use
// a fresh one derived from cfg.seed.  Optimizer state is rebuilt on resume.
std::vector<EpochMetrics> train_capsnet(const CapsNetConfig& model_cfg, CapsNetParams<float>& params,
                                        const LabeledDataset& train, const LabeledDataset& test,
                                        const TrainConfig& cfg, RoutingStats* stats = nullptr,
                                        const TrainHooks& hooks = {}, std::size_t start_epoch = 0,
                                        Rng* shuffle_rng = nullptr);

struct SweepEntry {
    std::size_t iters = 0;
    std::vector<EpochMetrics> metrics;
    double final_test_acc = 0.0;
    double total_seconds = 0.0;
    CapsNetParams<float> params;
};

// Trains one model per iteration count from identical initial weights.
std::vector<SweepEntry> routing_sweep(CapsNetConfig model_cfg, const LabeledDataset& train,
                                      const LabeledDataset& test, const TrainConfig& cfg,
                                      const std::vector<std::size_t>& iter_counts,
                                      const TrainHooks& hooks = {});

void write_metrics_csv(const std::string& path, const std::vector<EpochMetrics>& rows);

// Softmax cross-entropy counterparts for the plain convolutional baseline.
EvalResult evaluate_cnn(const CnnConfig& cfg, const CnnParams<float>& params, const LabeledDataset& data,
                        std::size_t batch_size);

std::vector<EpochMetrics> train_cnn(const CnnConfig& model_cfg, CnnParams<float>& params,
                                    const LabeledDataset& train, const LabeledDataset& test,
                                    const TrainConfig& cfg, const TrainHooks& hooks = {},
                                    std::size_t start_epoch = 0, Rng* shuffle_rng = nullptr);

void write_confusion_csv(const std::string& path, const std::vector<std::vector<std::size_t>>& confusion);

}  // namespace capsforge
