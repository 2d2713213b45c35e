#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "capsforge/ops.hpp"
#include "capsforge/rng.hpp"
#include "capsforge/tensor.hpp"

namespace capsforge {

struct CapsNetConfig {
    std::size_t in_channels = 1;
    std::size_t in_h = 28;
    std::size_t in_w = 28;
    std::size_t conv1_maps = 256;
    std::size_t conv1_kernel = 9;
    std::size_t primary_types = 32;
    std::size_t primary_dim = 8;
    std::size_t primary_kernel = 9;
    std::size_t primary_stride = 2;
    std::size_t num_classes = 10;
    std::size_t digit_dim = 16;
    std::size_t routing_iters = 3;
    std::vector<std::size_t> decoder_hidden = {512, 1024};
    double margin_m_plus = 0.9;
    double margin_m_minus = 0.1;
    double margin_lambda = 0.5;
    double recon_weight = 0.0005;

    std::size_t conv1_h() const { return in_h - conv1_kernel + 1; }
    std::size_t conv1_w() const { return in_w - conv1_kernel + 1; }
    std::size_t primary_grid_h() const { return (conv1_h() - primary_kernel) / primary_stride + 1; }
    std::size_t primary_grid_w() const { return (conv1_w() - primary_kernel) / primary_stride + 1; }
    std::size_t num_primary() const { return primary_types * primary_grid_h() * primary_grid_w(); }
    std::size_t decoder_out() const { return in_channels * in_h * in_w; }

    void validate() const;
};

template <class T>
struct CapsNetParams {
    Tensor<T> conv1_w, conv1_b;
    Tensor<T> primary_w, primary_b;
    Tensor<T> route_w;
    std::vector<Tensor<T>> dec_w, dec_b;

    static CapsNetParams init(const CapsNetConfig& cfg, Rng& rng);
    static CapsNetParams zeros_like(const CapsNetConfig& cfg);

    std::vector<std::pair<std::string, Tensor<T>>> named() const;
    std::vector<Tensor<T>> all() const;
    std::size_t count() const;
};

// Per-iteration snapshots copied out of the graph.  logits are the raw b
// values at the start of the iteration (all zero on the first).
template <class T>
struct RoutingTrace {
    std::size_t batch = 0, num_in = 0, num_out = 0, dim = 0;
    std::vector<std::vector<T>> logits;     // [N,I,J] per iter
    std::vector<std::vector<T>> couplings;  // [N,I,J] per iter
    std::vector<std::vector<T>> s;          // [N,J,D] per iter
    std::vector<std::vector<T>> v;          // [N,J,D] per iter
};

template <class T>
struct RoutingResult {
    Tensor<T> v;          // [N, num_out, dim]
    Tensor<T> couplings;  // [N, num_in, num_out], from the final iteration
};

// Dynamic routing by agreement over prediction vectors uhat
// ([N,num_in,num_out,dim] or unbatched [num_in,num_out,dim]).  The loop is
// unrolled into the graph, so gradients flow through every iteration.
template <class T>
RoutingResult<T> route(const Tensor<T>& uhat, std::size_t iters, RoutingTrace<T>* trace = nullptr);

template <class T>
struct CapsNetOutput {
    Tensor<T> primary;     // squashed primary capsules [N, num_primary, primary_dim]
    Tensor<T> uhat;        // predictions [N, num_primary, classes, digit_dim]
    Tensor<T> digit_caps;  // [N, classes, digit_dim]
    Tensor<T> couplings;   // final couplings [N, num_primary, classes]
    Tensor<T> norms;       // capsule lengths [N, classes]
    std::vector<int> predicted;
};

// routing_iters = 0 uses cfg.routing_iters.
template <class T>
CapsNetOutput<T> capsnet_forward(const CapsNetConfig& cfg, const CapsNetParams<T>& params,
                                 const Tensor<T>& images, std::size_t routing_iters = 0,
                                 RoutingTrace<T>* trace = nullptr);

// Runs the decoder stack on an already-masked [N, classes*digit_dim]
// embedding.  Output is [N, C*H*W] in [0,1].
template <class T>
Tensor<T> decode_embedding(const CapsNetConfig& cfg, const CapsNetParams<T>& params,
                           const Tensor<T>& embedding);

// Masks digit capsules to the selected class per sample and reconstructs the
// input through the decoder stack.
template <class T>
Tensor<T> capsnet_decode(const CapsNetConfig& cfg, const CapsNetParams<T>& params, const Tensor<T>& digit_caps,
                         const std::vector<int>& selected);

template <class T>
Tensor<T> margin_loss(const Tensor<T>& norms, const std::vector<int>& labels, const CapsNetConfig& cfg);

// Mean per-sample sum of squared pixel errors, unweighted.
template <class T>
Tensor<T> reconstruction_loss(const Tensor<T>& recon, const Tensor<T>& images);

template <class T>
struct CapsNetLoss {
    Tensor<T> total;   // margin + recon_weight * reconstruction
    Tensor<T> margin;  // scalar
    Tensor<T> recon;   // scalar, unweighted
};

template <class T>
CapsNetLoss<T> capsnet_loss(const CapsNetConfig& cfg, const CapsNetParams<T>& params,
                            const CapsNetOutput<T>& out, const Tensor<T>& images,
                            const std::vector<int>& labels);

// Running invariants over observed routing traces: couplings must sum to one
// over the output axis and squashed outputs must stay inside the unit ball.
struct RoutingStats {
    double max_coupling_sum_err = 0.0;
    double max_output_norm = 0.0;
    std::uint64_t observed = 0;  // (sample, iteration) pairs seen

    template <class T>
    void observe(const RoutingTrace<T>& trace) {
        const std::size_t n = trace.batch, num_in = trace.num_in, num_out = trace.num_out, d = trace.dim;
        for (std::size_t it = 0; it < trace.couplings.size(); ++it) {
            const auto& c = trace.couplings[it];
            for (std::size_t b = 0; b < n; ++b)
                for (std::size_t i = 0; i < num_in; ++i) {
                    double sum = 0.0;
                    for (std::size_t j = 0; j < num_out; ++j) sum += c[(b * num_in + i) * num_out + j];
                    max_coupling_sum_err = std::max(max_coupling_sum_err, std::abs(sum - 1.0));
                }
            const auto& v = trace.v[it];
            for (std::size_t b = 0; b < n; ++b)
                for (std::size_t j = 0; j < num_out; ++j) {
                    double sq = 0.0;
                    for (std::size_t dd = 0; dd < d; ++dd) {
                        const double x = v[(b * num_out + j) * d + dd];
                        sq += x * x;
                    }
                    max_output_norm = std::max(max_output_norm, std::sqrt(sq));
                }
            observed += n;
        }
    }
};

}  // namespace capsforge
