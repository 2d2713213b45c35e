#include "capsforge/trainer.hpp"

#include <cstdio>
#include <fstream>

namespace capsforge {

EvalResult evaluate(const CapsNetConfig& cfg, const CapsNetParams<float>& params, const LabeledDataset& data,
                    std::size_t batch_size, std::size_t routing_iters) {
    if (data.size() == 0) throw ContractError("evaluate: empty dataset");
    NoGradGuard guard;
    EvalResult res;
    res.confusion.assign(cfg.num_classes, std::vector<std::size_t>(cfg.num_classes, 0));
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (const auto& batch : make_batches(data.size(), batch_size, nullptr)) {
        TensorF images = batch_images(data, batch);
        const std::vector<int> labels = batch_labels(data, batch);
        CapsNetOutput<float> out = capsnet_forward(cfg, params, images, routing_iters);
        CapsNetLoss<float> loss = capsnet_loss(cfg, params, out, images, labels);
        loss_sum += static_cast<double>(loss.total.item()) * static_cast<double>(batch.size());
        for (std::size_t i = 0; i < batch.size(); ++i) {
            res.confusion[static_cast<std::size_t>(labels[i])][static_cast<std::size_t>(out.predicted[i])]++;
            if (out.predicted[i] == labels[i]) ++correct;
            res.predictions.push_back(out.predicted[i]);
        }
    }
    res.loss = loss_sum / static_cast<double>(data.size());
    res.accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
    return res;
}

std::vector<EpochMetrics> train_capsnet(const CapsNetConfig& model_cfg, CapsNetParams<float>& params,
                                        const LabeledDataset& train, const LabeledDataset& test,
                                        const TrainConfig& cfg, RoutingStats* stats, const TrainHooks& hooks,
                                        std::size_t start_epoch, Rng* shuffle_rng) {
    if (train.size() == 0) throw ContractError("train_capsnet: empty training set");
    if (start_epoch > cfg.epochs)
        throw ContractError("train_capsnet: start epoch " + std::to_string(start_epoch) + " beyond " +
                            std::to_string(cfg.epochs));
    Rng local(cfg.seed, Stream::shuffle);
    Rng* rng = shuffle_rng ? shuffle_rng : &local;
    auto opt = make_optimizer(cfg.optimizer, params.all(), static_cast<float>(cfg.lr));

    std::vector<EpochMetrics> out;
    std::size_t step = 0;
    for (std::size_t epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
        const std::uint64_t macs0 = work::macs();
        double loss_sum = 0.0;
        std::size_t correct = 0;
        for (const auto& batch : make_batches(train.size(), cfg.batch_size, rng)) {
            TensorF images = batch_images(train, batch);
            const std::vector<int> labels = batch_labels(train, batch);
            opt->zero_grad();
            RoutingTrace<float> trace;
            CapsNetOutput<float> fwd =
                capsnet_forward(model_cfg, params, images, 0, cfg.check_routing ? &trace : nullptr);
            if (cfg.check_routing && stats) stats->observe(trace);
            CapsNetLoss<float> loss = capsnet_loss(model_cfg, params, fwd, images, labels);
            backward(loss.total);
            opt->step();
            loss_sum += static_cast<double>(loss.total.item()) * static_cast<double>(batch.size());
            for (std::size_t i = 0; i < batch.size(); ++i)
                if (fwd.predicted[i] == labels[i]) ++correct;
            if (hooks.on_step) hooks.on_step(step, static_cast<double>(loss.total.item()));
            ++step;
        }
        EpochMetrics m;
        m.epoch = epoch;
        m.train_loss = loss_sum / static_cast<double>(train.size());
        m.train_acc = static_cast<double>(correct) / static_cast<double>(train.size());
        if (test.size() > 0) {
            EvalResult ev = evaluate(model_cfg, params, test, cfg.batch_size);
            m.test_loss = ev.loss;
            m.test_acc = ev.accuracy;
        }
        m.seconds = static_cast<double>(work::macs() - macs0) * 1e-9;
        if (hooks.on_epoch) hooks.on_epoch(m);
        out.push_back(m);
    }
    return out;
}

std::vector<SweepEntry> routing_sweep(CapsNetConfig model_cfg, const LabeledDataset& train,
                                      const LabeledDataset& test, const TrainConfig& cfg,
                                      const std::vector<std::size_t>& iter_counts, const TrainHooks& hooks) {
    if (iter_counts.empty()) throw ContractError("routing_sweep: no iteration counts");
    std::vector<SweepEntry> out;
    for (std::size_t iters : iter_counts) {
        SweepEntry entry;
        entry.iters = iters;
        model_cfg.routing_iters = iters;
        Rng init_rng(cfg.seed, Stream::init);
        entry.params = CapsNetParams<float>::init(model_cfg, init_rng);
        entry.metrics = train_capsnet(model_cfg, entry.params, train, test, cfg, nullptr, hooks);
        entry.final_test_acc = entry.metrics.empty() ? 0.0 : entry.metrics.back().test_acc;
        for (const auto& m : entry.metrics) entry.total_seconds += m.seconds;
        out.push_back(std::move(entry));
    }
    return out;
}

EvalResult evaluate_cnn(const CnnConfig& cfg, const CnnParams<float>& params, const LabeledDataset& data,
                        std::size_t batch_size) {
    if (data.size() == 0) throw ContractError("evaluate_cnn: empty dataset");
    NoGradGuard guard;
    EvalResult res;
    res.confusion.assign(cfg.num_classes, std::vector<std::size_t>(cfg.num_classes, 0));
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (const auto& batch : make_batches(data.size(), batch_size, nullptr)) {
        TensorF images = batch_images(data, batch);
        const std::vector<int> labels = batch_labels(data, batch);
        TensorF logits = cnn_forward(cfg, params, images);
        TensorF loss = cross_entropy(logits, labels);
        loss_sum += static_cast<double>(loss.item()) * static_cast<double>(batch.size());
        const std::vector<int> pred = argmax_rows(logits);
        for (std::size_t i = 0; i < batch.size(); ++i) {
            res.confusion[static_cast<std::size_t>(labels[i])][static_cast<std::size_t>(pred[i])]++;
            if (pred[i] == labels[i]) ++correct;
            res.predictions.push_back(pred[i]);
        }
    }
    res.loss = loss_sum / static_cast<double>(data.size());
    res.accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
    return res;
}

std::vector<EpochMetrics> train_cnn(const CnnConfig& model_cfg, CnnParams<float>& params,
                                    const LabeledDataset& train, const LabeledDataset& test,
                                    const TrainConfig& cfg, const TrainHooks& hooks, std::size_t start_epoch,
                                    Rng* shuffle_rng) {
    if (train.size() == 0) throw ContractError("train_cnn: empty training set");
    Rng local(cfg.seed, Stream::shuffle);
    Rng* rng = shuffle_rng ? shuffle_rng : &local;
    auto opt = make_optimizer(cfg.optimizer, params.all(), static_cast<float>(cfg.lr));

    std::vector<EpochMetrics> out;
    std::size_t step = 0;
    for (std::size_t epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
        const std::uint64_t macs0 = work::macs();
        double loss_sum = 0.0;
        std::size_t correct = 0;
        for (const auto& batch : make_batches(train.size(), cfg.batch_size, rng)) {
            TensorF images = batch_images(train, batch);
            const std::vector<int> labels = batch_labels(train, batch);
            opt->zero_grad();
            TensorF logits = cnn_forward(model_cfg, params, images);
            TensorF loss = cross_entropy(logits, labels);
            backward(loss);
            opt->step();
            loss_sum += static_cast<double>(loss.item()) * static_cast<double>(batch.size());
            const std::vector<int> pred = argmax_rows(logits);
            for (std::size_t i = 0; i < batch.size(); ++i)
                if (pred[i] == labels[i]) ++correct;
            if (hooks.on_step) hooks.on_step(step, static_cast<double>(loss.item()));
            ++step;
        }
        EpochMetrics m;
        m.epoch = epoch;
        m.train_loss = loss_sum / static_cast<double>(train.size());
        m.train_acc = static_cast<double>(correct) / static_cast<double>(train.size());
        if (test.size() > 0) {
            EvalResult ev = evaluate_cnn(model_cfg, params, test, cfg.batch_size);
            m.test_loss = ev.loss;
            m.test_acc = ev.accuracy;
        }
        m.seconds = static_cast<double>(work::macs() - macs0) * 1e-9;
        if (hooks.on_epoch) hooks.on_epoch(m);
        out.push_back(m);
    }
    return out;
}

void write_confusion_csv(const std::string& path, const std::vector<std::vector<std::size_t>>& confusion) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path);
    for (const auto& row : confusion) {
        for (std::size_t j = 0; j < row.size(); ++j) out << (j ? "," : "") << row[j];
        out << "\n";
    }
    if (!out) throw IoError("short write to " + path);
}

void write_metrics_csv(const std::string& path, const std::vector<EpochMetrics>& rows) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path);
    out << "epoch,train_loss,train_acc,test_loss,test_acc,seconds\n";
    char buf[256];
    for (const auto& m : rows) {
        std::snprintf(buf, sizeof(buf), "%zu,%.6f,%.6f,%.6f,%.6f,%.9f\n", m.epoch, m.train_loss, m.train_acc,
                      m.test_loss, m.test_acc, m.seconds);
        out << buf;
    }
    if (!out) throw IoError("short write to " + path);
}

}  // namespace capsforge
