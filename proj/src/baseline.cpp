#include "capsforge/baseline.hpp"

#include <cmath>

namespace capsforge {

void CnnConfig::validate() const {
    if (conv_maps.empty()) throw ContractError("cnn config: need at least one conv block");
    if (in_channels == 0 || in_h == 0 || in_w == 0 || conv_kernel == 0 || pool_window == 0 ||
        pool_stride == 0 || dense_hidden == 0 || num_classes == 0)
        throw ContractError("cnn config: all sizes must be >= 1");
    block_sizes();  // throws if any block underflows
}

std::vector<std::pair<std::size_t, std::size_t>> CnnConfig::block_sizes() const {
    std::vector<std::pair<std::size_t, std::size_t>> sizes{{in_h, in_w}};
    std::size_t h = in_h, w = in_w;
    for (std::size_t b = 0; b < conv_maps.size(); ++b) {
        if (conv_kernel > h || conv_kernel > w)
            throw DimensionError("cnn config: block " + std::to_string(b) + " kernel exceeds " +
                                 std::to_string(h) + "x" + std::to_string(w));
        h -= conv_kernel - 1;
        w -= conv_kernel - 1;
        if (pool_window > h || pool_window > w)
            throw DimensionError("cnn config: block " + std::to_string(b) + " pool exceeds " +
                                 std::to_string(h) + "x" + std::to_string(w));
        h = (h - pool_window) / pool_stride + 1;
        w = (w - pool_window) / pool_stride + 1;
        sizes.emplace_back(h, w);
    }
    return sizes;
}

std::size_t CnnConfig::flattened() const {
    auto sizes = block_sizes();
    return conv_maps.back() * sizes.back().first * sizes.back().second;
}

namespace {

template <class T>
Tensor<T> glorot(Rng& rng, Shape shape, std::size_t fan_in, std::size_t fan_out, const std::string& name) {
    const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::vector<T> data(shape_size(shape));
    for (auto& v : data) v = static_cast<T>(rng.uniform(-a, a));
    auto t = Tensor<T>::from_data(std::move(shape), std::move(data), true);
    t.set_name(name);
    return t;
}

template <class T>
Tensor<T> zero_param(Shape shape, const std::string& name) {
    auto t = Tensor<T>::zeros(std::move(shape), true);
    t.set_name(name);
    return t;
}

}  // namespace

template <class T>
CnnParams<T> CnnParams<T>::init(const CnnConfig& cfg, Rng& rng) {
    cfg.validate();
    CnnParams<T> p;
    std::size_t in_c = cfg.in_channels;
    const std::size_t k = cfg.conv_kernel;
    for (std::size_t b = 0; b < cfg.conv_maps.size(); ++b) {
        const std::size_t maps = cfg.conv_maps[b];
        const std::string tag = "block" + std::to_string(b);
        p.conv_w.push_back(glorot<T>(rng, {maps, in_c, k, k}, in_c * k * k, maps * k * k, tag + "_w"));
        p.conv_b.push_back(zero_param<T>({maps}, tag + "_b"));
        in_c = maps;
    }
    const std::size_t flat = cfg.flattened();
    p.fc1_w = glorot<T>(rng, {flat, cfg.dense_hidden}, flat, cfg.dense_hidden, "fc1_w");
    p.fc1_b = zero_param<T>({cfg.dense_hidden}, "fc1_b");
    p.fc2_w = glorot<T>(rng, {cfg.dense_hidden, cfg.num_classes}, cfg.dense_hidden, cfg.num_classes, "fc2_w");
    p.fc2_b = zero_param<T>({cfg.num_classes}, "fc2_b");
    return p;
}

template <class T>
std::vector<std::pair<std::string, Tensor<T>>> CnnParams<T>::named() const {
    std::vector<std::pair<std::string, Tensor<T>>> out;
    for (std::size_t b = 0; b < conv_w.size(); ++b) {
        out.emplace_back("block" + std::to_string(b) + "_w", conv_w[b]);
        out.emplace_back("block" + std::to_string(b) + "_b", conv_b[b]);
    }
    out.emplace_back("fc1_w", fc1_w);
    out.emplace_back("fc1_b", fc1_b);
    out.emplace_back("fc2_w", fc2_w);
    out.emplace_back("fc2_b", fc2_b);
    return out;
}

template <class T>
std::vector<Tensor<T>> CnnParams<T>::all() const {
    std::vector<Tensor<T>> out;
    for (auto& [name, t] : named()) {
        (void)name;
        out.push_back(t);
    }
    return out;
}

template <class T>
std::size_t CnnParams<T>::count() const {
    std::size_t total = 0;
    for (const auto& t : all()) total += t.size();
    return total;
}

template <class T>
Tensor<T> cnn_forward(const CnnConfig& cfg, const CnnParams<T>& params, const Tensor<T>& images) {
    if (images.ndim() != 4 || images.dim(1) != cfg.in_channels || images.dim(2) != cfg.in_h ||
        images.dim(3) != cfg.in_w)
        throw DimensionError("cnn_forward: images " + shape_str(images.shape()) +
                             " do not match configured input");
    Tensor<T> x = images;
    for (std::size_t b = 0; b < params.conv_w.size(); ++b) {
        x = relu(conv2d(x, params.conv_w[b], params.conv_b[b], 1));
        x = maxpool2d(x, cfg.pool_window, cfg.pool_stride);
    }
    x = reshape(x, {images.dim(0), cfg.flattened()});
    x = relu(dense(x, params.fc1_w, params.fc1_b));
    return dense(x, params.fc2_w, params.fc2_b);
}

#define CAPSFORGE_INSTANTIATE_CNN(T)     \
    template struct CnnParams<T>;        \
    template Tensor<T> cnn_forward<T>(const CnnConfig&, const CnnParams<T>&, const Tensor<T>&);

CAPSFORGE_INSTANTIATE_CNN(float)
CAPSFORGE_INSTANTIATE_CNN(double)
#undef CAPSFORGE_INSTANTIATE_CNN

}  // namespace capsforge
