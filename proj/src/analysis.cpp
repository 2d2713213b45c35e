#include "capsforge/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "capsforge/image_io.hpp"

namespace capsforge {

namespace {

namespace fs = std::filesystem;

// Predicted-class reconstructions for samples [0, n) of data.
std::vector<float> reconstruct_predicted(const CapsNetConfig& cfg, const CapsNetParams<float>& params,
                                         const LabeledDataset& data, std::size_t n, std::size_t batch_size) {
    NoGradGuard guard;
    std::vector<float> out(n * cfg.decoder_out());
    std::size_t done = 0;
    while (done < n) {
        const std::size_t take = std::min(batch_size, n - done);
        std::vector<std::size_t> idx(take);
        std::iota(idx.begin(), idx.end(), done);
        TensorF images = batch_images(data, idx);
        CapsNetOutput<float> fwd = capsnet_forward(cfg, params, images);
        TensorF recon = capsnet_decode(cfg, params, fwd.digit_caps, fwd.predicted);
        std::copy(recon.values().begin(), recon.values().end(), out.begin() + done * cfg.decoder_out());
        done += take;
    }
    return out;
}

std::string grid_from_rows(const std::string& path_base, const std::vector<float>& cells, std::size_t n,
                           std::size_t c, std::size_t h, std::size_t w) {
    const auto [rows, cols] = grid_layout(n);
    ImageGrid grid(rows, cols, c, h, w);
    for (std::size_t i = 0; i < n; ++i) grid.set(i / cols, i % cols, cells.data() + i * c * h * w);
    return grid.save(path_base);
}

}  // namespace

ReconGridPaths export_reconstructions(const std::string& figures_dir, const CapsNetConfig& cfg,
                                      const CapsNetParams<float>& early_params,
                                      const CapsNetParams<float>& final_params, const LabeledDataset& data,
                                      std::size_t n, std::size_t batch_size) {
    if (n == 0 || n > data.size())
        throw ContractError("export_reconstructions: n=" + std::to_string(n) + " outside dataset of " +
                            std::to_string(data.size()));
    fs::create_directories(figures_dir);
    ReconGridPaths paths;
    const auto early = reconstruct_predicted(cfg, early_params, data, n, batch_size);
    paths.early = grid_from_rows(figures_dir + "/recon_early", early, n, cfg.in_channels, cfg.in_h, cfg.in_w);
    const auto final_px = reconstruct_predicted(cfg, final_params, data, n, batch_size);
    paths.final_epoch =
        grid_from_rows(figures_dir + "/recon_final", final_px, n, cfg.in_channels, cfg.in_h, cfg.in_w);
    std::vector<float> truth(data.images.begin(), data.images.begin() + n * data.pixels());
    paths.truth = grid_from_rows(figures_dir + "/recon_truth", truth, n, cfg.in_channels, cfg.in_h, cfg.in_w);
    return paths;
}

std::string export_perturbations(const std::string& figures_dir, const CapsNetConfig& cfg,
                                 const CapsNetParams<float>& params, const LabeledDataset& data,
                                 std::size_t sample_idx) {
    if (sample_idx >= data.size())
        throw ContractError("export_perturbations: sample " + std::to_string(sample_idx) +
                            " outside dataset of " + std::to_string(data.size()));
    NoGradGuard guard;
    fs::create_directories(figures_dir);
    TensorF image = batch_images(data, {sample_idx});
    CapsNetOutput<float> fwd = capsnet_forward(cfg, params, image);
    const int winner = fwd.predicted[0];
    TensorF base = mask_rows(fwd.digit_caps, {winner});  // [1, classes*digit_dim]

    const std::size_t dim = cfg.digit_dim;
    constexpr std::size_t kCols = 11;
    ImageGrid grid(dim, kCols, cfg.in_channels, cfg.in_h, cfg.in_w);
    const std::size_t offset = static_cast<std::size_t>(winner) * dim;
    for (std::size_t comp = 0; comp < dim; ++comp)
        for (std::size_t col = 0; col < kCols; ++col) {
            const float value = -0.25f + 0.05f * static_cast<float>(col);
            std::vector<float> tweaked(base.values().begin(), base.values().end());
            tweaked[offset + comp] = value;
            TensorF embedding = TensorF::from_data(base.shape(), std::move(tweaked), false);
            TensorF recon = decode_embedding(cfg, params, embedding);
            grid.set(comp, col, recon.data());
        }
    return grid.save(figures_dir + "/perturb_sample" + std::to_string(sample_idx));
}

std::size_t export_error_cases(const std::string& figures_dir, const CapsNetConfig& cfg,
                               const CapsNetParams<float>& params, const LabeledDataset& data, std::size_t k,
                               std::size_t batch_size) {
    if (k == 0) throw ContractError("export_error_cases: k must be >= 1");
    NoGradGuard guard;
    fs::create_directories(figures_dir);

    struct ErrorCase {
        std::size_t index;
        int true_label, predicted;
        float winning_norm;
    };
    std::vector<ErrorCase> errors;
    for (const auto& batch : make_batches(data.size(), batch_size, nullptr)) {
        TensorF images = batch_images(data, batch);
        CapsNetOutput<float> fwd = capsnet_forward(cfg, params, images);
        for (std::size_t i = 0; i < batch.size(); ++i) {
            const int truth = data.labels[batch[i]];
            if (fwd.predicted[i] != truth)
                errors.push_back({batch[i], truth, fwd.predicted[i],
                                  fwd.norms.at({i, static_cast<std::size_t>(fwd.predicted[i])})});
        }
    }
    std::stable_sort(errors.begin(), errors.end(),
                     [](const ErrorCase& a, const ErrorCase& b) { return a.winning_norm > b.winning_norm; });
    if (errors.size() < k)
        std::fprintf(stderr, "export_error_cases: only %zu misclassifications available (asked for %zu)\n",
                     errors.size(), k);
    const std::size_t take = std::min(k, errors.size());

    for (std::size_t e = 0; e < take; ++e) {
        const ErrorCase& ec = errors[e];
        TensorF image = batch_images(data, {ec.index});
        CapsNetOutput<float> fwd = capsnet_forward(cfg, params, image);
        ImageGrid grid(1, cfg.num_classes + 1, cfg.in_channels, cfg.in_h, cfg.in_w);
        grid.set(0, 0, image.data());
        for (std::size_t cls = 0; cls < cfg.num_classes; ++cls) {
            TensorF embedding = mask_rows(fwd.digit_caps, {static_cast<int>(cls)});
            TensorF recon = decode_embedding(cfg, params, embedding);
            grid.set(0, cls + 1, recon.data());
        }
        char name[128];
        std::snprintf(name, sizeof(name), "/error_case_%02zu_true%d_pred%d", e, ec.true_label, ec.predicted);
        grid.save(figures_dir + name);
    }
    return take;
}

EmbeddingDump export_embeddings(const std::string& embeddings_dir, const CapsNetConfig& cfg,
                                const CapsNetParams<float>& params, const LabeledDataset& data, std::size_t n,
                                bool per_iteration, std::size_t batch_size) {
    if (n == 0 || n > data.size())
        throw ContractError("export_embeddings: n=" + std::to_string(n) + " outside dataset of " +
                            std::to_string(data.size()));
    NoGradGuard guard;
    fs::create_directories(embeddings_dir);
    EmbeddingDump dump;
    dump.dim = cfg.digit_dim;
    dump.path = embeddings_dir + "/embeddings.tsv";
    std::ofstream out(dump.path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + dump.path);
    out << "iter\ttrue\tpred";
    for (std::size_t d = 0; d < cfg.digit_dim; ++d) out << "\tv" << d;
    out << "\n";

    char buf[64];
    std::size_t done = 0;
    while (done < n) {
        const std::size_t take = std::min(batch_size, n - done);
        std::vector<std::size_t> idx(take);
        std::iota(idx.begin(), idx.end(), done);
        TensorF images = batch_images(data, idx);
        RoutingTrace<float> trace;
        CapsNetOutput<float> fwd = capsnet_forward(cfg, params, images, 0, &trace);
        const std::size_t iters = trace.v.size();
        for (std::size_t i = 0; i < take; ++i) {
            const int winner = fwd.predicted[i];
            const int truth = data.labels[idx[i]];
            const std::size_t first_iter = per_iteration ? 0 : iters - 1;
            for (std::size_t t = first_iter; t < iters; ++t) {
                out << (t + 1) << "\t" << truth << "\t" << winner;
                const float* v = trace.v[t].data() +
                                 (i * cfg.num_classes + static_cast<std::size_t>(winner)) * cfg.digit_dim;
                for (std::size_t d = 0; d < cfg.digit_dim; ++d) {
                    std::snprintf(buf, sizeof(buf), "%.6f", static_cast<double>(v[d]));
                    out << "\t" << buf;
                    dump.vectors.push_back(static_cast<double>(v[d]));
                }
                dump.iters.push_back(t + 1);
                dump.true_labels.push_back(truth);
                dump.predicted.push_back(winner);
                out << "\n";
            }
        }
        done += take;
    }
    if (!out) throw IoError("short write to " + dump.path);
    return dump;
}

PcaResult export_pca(const std::string& embeddings_dir, const EmbeddingDump& dump) {
    const std::size_t rows = dump.iters.size();
    PcaResult pca = pca_project(dump.vectors, rows, dump.dim, 3);
    char buf[64];

    const std::string path = embeddings_dir + "/pca.tsv";
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path);
    out << "iter\ttrue\tpred\tp0\tp1\tp2\ts0\ts1\ts2\n";
    for (std::size_t i = 0; i < rows; ++i) {
        out << dump.iters[i] << "\t" << dump.true_labels[i] << "\t" << dump.predicted[i];
        for (std::size_t r = 0; r < 3; ++r) {
            std::snprintf(buf, sizeof(buf), "%.6f", pca.projected[i * 3 + r]);
            out << "\t" << buf;
        }
        for (std::size_t r = 0; r < 3; ++r) {
            std::snprintf(buf, sizeof(buf), "%.6f", pca.sphereized[i * 3 + r]);
            out << "\t" << buf;
        }
        out << "\n";
    }
    if (!out) throw IoError("short write to " + path);

    const std::string expl_path = embeddings_dir + "/pca_explained.tsv";
    std::ofstream expl(expl_path, std::ios::trunc);
    if (!expl) throw IoError("cannot write " + expl_path);
    expl << "component\teigenvalue\texplained_fraction\n";
    for (std::size_t r = 0; r < 3; ++r) {
        std::snprintf(buf, sizeof(buf), "%zu\t%.9f\t%.9f\n", r, pca.eigenvalues[r], pca.explained[r]);
        expl << buf;
    }
    if (!expl) throw IoError("short write to " + expl_path);
    return pca;
}

}  // namespace capsforge
