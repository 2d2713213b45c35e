#pragma once

#include <string>
#include <vector>

#include "capsforge/capsnet.hpp"
#include "capsforge/dataset.hpp"
#include "capsforge/pca.hpp"

namespace capsforge {

struct ReconGridPaths {
    std::string early, final_epoch, truth;
};

// Decodes the first n samples through predicted-class masking for both
// parameter sets and writes three grids (early model, final model, ground
// truth) under figures_dir.
ReconGridPaths export_reconstructions(const std::string& figures_dir, const CapsNetConfig& cfg,
                                      const CapsNetParams<float>& early_params,
                                      const CapsNetParams<float>& final_params, const LabeledDataset& data,
                                      std::size_t n, std::size_t batch_size);

// Row i, column k: the winning-class embedding with component i replaced by
// -0.25 + 0.05*k, decoded.  Grid is digit_dim rows by 11 columns.
std::string export_perturbations(const std::string& figures_dir, const CapsNetConfig& cfg,
                                 const CapsNetParams<float>& params, const LabeledDataset& data,
                                 std::size_t sample_idx);

// The k most confident misclassifications (largest winning norm); each case
// becomes one grid: the input followed by one reconstruction per class with
// only that class's section unmasked.  Returns the number exported (fewer
// than k if the model makes fewer errors, with a warning).
std::size_t export_error_cases(const std::string& figures_dir, const CapsNetConfig& cfg,
                               const CapsNetParams<float>& params, const LabeledDataset& data, std::size_t k,
                               std::size_t batch_size);

struct EmbeddingDump {
    std::string path;                 // written TSV
    std::vector<double> vectors;      // row-major, one row per TSV data row
    std::vector<std::size_t> iters;   // 1-based iteration tag per row
    std::vector<int> true_labels, predicted;
    std::size_t dim = 0;
};

// TSV with header iter\ttrue\tpred\tv0..v{dim-1}; one row per (sample,
// iteration) when per_iteration, else one final-iteration row per sample.
// Vectors are the winning (finally predicted) capsule at each iteration.
EmbeddingDump export_embeddings(const std::string& embeddings_dir, const CapsNetConfig& cfg,
                                const CapsNetParams<float>& params, const LabeledDataset& data, std::size_t n,
                                bool per_iteration, std::size_t batch_size);

// Projects dump vectors to 3-d, writing pca.tsv (raw and sphereized columns)
// and pca_explained.tsv next to the dump.
PcaResult export_pca(const std::string& embeddings_dir, const EmbeddingDump& dump);

}  // namespace capsforge
