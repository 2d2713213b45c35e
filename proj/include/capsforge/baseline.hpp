#pragma once

#include <string>
#include <utility>
#include <vector>

#include "capsforge/ops.hpp"
#include "capsforge/rng.hpp"
#include "capsforge/tensor.hpp"

namespace capsforge {

// Plain convolutional classifier used as a comparison point: repeated
// conv/relu/maxpool blocks, one hidden dense layer, softmax cross-entropy.
struct CnnConfig {
    std::size_t in_channels = 3;
    std::size_t in_h = 32;
    std::size_t in_w = 32;
    std::vector<std::size_t> conv_maps = {32, 64, 128};
    std::size_t conv_kernel = 3;
    std::size_t pool_window = 2;
    std::size_t pool_stride = 2;
    std::size_t dense_hidden = 256;
    std::size_t num_classes = 10;

    void validate() const;
    // Spatial size after each block; index 0 is the input.
    std::vector<std::pair<std::size_t, std::size_t>> block_sizes() const;
    std::size_t flattened() const;
};

template <class T>
struct CnnParams {
    std::vector<Tensor<T>> conv_w, conv_b;
    Tensor<T> fc1_w, fc1_b, fc2_w, fc2_b;

    static CnnParams init(const CnnConfig& cfg, Rng& rng);
    std::vector<std::pair<std::string, Tensor<T>>> named() const;
    std::vector<Tensor<T>> all() const;
    std::size_t count() const;
};

template <class T>
Tensor<T> cnn_forward(const CnnConfig& cfg, const CnnParams<T>& params, const Tensor<T>& images);

}  // namespace capsforge
