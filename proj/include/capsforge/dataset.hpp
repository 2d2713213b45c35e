#pragma once

#include <string>
#include <vector>

#include "capsforge/rng.hpp"
#include "capsforge/tensor.hpp"

namespace capsforge {

// Images are stored channel-major ([N,C,H,W] flattened) as floats in [0,1].
struct LabeledDataset {
    std::string name;
    std::size_t channels = 0, height = 0, width = 0;
    std::vector<float> images;
    std::vector<int> labels;

    std::size_t size() const { return labels.size(); }
    std::size_t pixels() const { return channels * height * width; }
    const float* image(std::size_t i) const { return images.data() + i * pixels(); }
    LabeledDataset subset(std::size_t offset, std::size_t count) const;
};

// IDX files: big-endian magic 0x0000
// 08<ndim>, then ndim big-endian u32 dims,
// then raw u8 payload.  Images accept 3 axes [N,H,W] or 4 axes [N,C,H,W];
// labels require 1 axis.
LabeledDataset load_idx(const std::string& images_path, const std::string& labels_path);
void save_idx_images(const std::string& path, const std::vector<float>& images, std::size_t n, std::size_t c,
                     std::size_t h, std::size_t w);
void save_idx_labels(const std::string& path, const std::vector<int>& labels);

// Binary batches of 3073-byte records: label byte then 32x32x3 pixels,
// channel-major.  An empty file list yields an empty dataset.
LabeledDataset load_cifar10(const std::vector<std::string>& batch_files);

struct DatasetPair {
    LabeledDataset train, test;
};

// Resolved on-disk paths for a named dataset ("mnist", "fashion",
// "cifar10"), looking in dir/<name>/ first and then dir/ itself; throws
// IoError when the probe file is missing from both.
std::vector<std::string> named_dataset_files(const std::string& name, const std::string& dir);

DatasetPair load_named_dataset(const std::string& name, const std::string& dir);

TensorF batch_images(const LabeledDataset& ds, const std::vector<std::size_t>& idx);
std::vector<int> batch_labels(const LabeledDataset& ds, const std::vector<std::size_t>& idx);

// Splits [0,n) into ceil(n/batch_size) batches, shuffling first when a
// generator is given.  A short final batch is kept.
std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch_size, Rng* shuffle_rng);

}  // namespace capsforge
