#include <cmath>
#include <vector>

#include "doctest.h"

#include "capsforge/capsnet.hpp"
#include "capsforge/grad_check.hpp"
#include "capsforge/ops.hpp"
#include "capsforge/rng.hpp"

using namespace capsforge;

namespace {

TensorD random_leaf(Shape shape, Rng& rng, bool requires_grad = false) {
    std::vector<double> data(shape_size(shape));
    for (auto& x : data) x = rng.normal();
    return TensorD::from_data(std::move(shape), std::move(data), requires_grad);
}

CapsNetConfig tiny_config() {
    CapsNetConfig cfg;
    cfg.in_channels = 1;
    cfg.in_h = cfg.in_w = 12;
    cfg.conv1_maps = 4;
    cfg.conv1_kernel = 5;
    cfg.primary_types = 2;
    cfg.primary_dim = 8;
    cfg.primary_kernel = 5;
    cfg.primary_stride = 2;
    cfg.num_classes = 2;
    cfg.digit_dim = 8;
    cfg.routing_iters = 3;
    cfg.decoder_hidden = {16, 16};
    cfg.validate();
    return cfg;
}

}  // namespace

TEST_CASE("squash maps norms 0, 1, 3 to 0, 0.5, 0.9 and keeps direction") {
    const double norms[] = {0.0, 1.0, 3.0};
    const double expect[] = {0.0, 0.5, 0.9};
    for (int case_i = 0; case_i < 3; ++case_i) {
        // direction (2,1,2)/3 scaled to the target norm
        const double scale = norms[case_i] / 3.0;
        auto s = TensorD::from_data({1, 3}, {2.0 * scale, 1.0 * scale, 2.0 * scale}, false);
        auto v = squash(s);
        double out_norm = 0.0;
        for (std::size_t i = 0; i < 3; ++i) out_norm += v.at({0, i}) * v.at({0, i});
        out_norm = std::sqrt(out_norm);
        CHECK(std::abs(out_norm - expect[case_i]) < 1e-7);
        if (case_i > 0)
            for (std::size_t i = 0; i < 3; ++i) {
                const double dir_in = s.at({0, i}) / norms[case_i];
                const double dir_out = v.at({0, i}) / out_norm;
                CHECK(std::abs(dir_out - dir_in) < 1e-7);
            }
    }
}

TEST_CASE("squash output norm never reaches one") {
    Rng rng(21, Stream::init);
    for (int trial = 0; trial < 20; ++trial) {
        auto s = random_leaf({4, 6}, rng);
        auto n = norm_last_axis(squash(s));
        for (std::size_t i = 0; i < 4; ++i) CHECK(n.at({i}) < 1.0);
    }
}

TEST_CASE("squash gradients agree with finite differences") {
    Rng rng(22, Stream::init);
    auto s = random_leaf({2, 3, 4}, rng, true);
    auto loss_fn = [&] { return sum_all(mul(squash(s), squash(s))); };
    auto r = grad_check_params(loss_fn, {s}, 1e-6);
    CHECK(r.max_rel_err < 1e-7);
}

TEST_CASE("norm_last_axis gradients agree with finite differences") {
    Rng rng(23, Stream::init);
    auto x = random_leaf({3, 4}, rng, true);
    auto loss_fn = [&] { return sum_all(mul(norm_last_axis(x), norm_last_axis(x))); };
    auto r = grad_check_params(loss_fn, {x}, 1e-6);
    CHECK(r.max_rel_err < 1e-7);
}

TEST_CASE("predict_vectors matches naive per-pair matrix products") {
    Rng rng(24, Stream::init);
    const std::size_t n = 2, I = 3, J = 2, din = 4, dout = 3;
    auto u = random_leaf({n, I, din}, rng);
    auto w = random_leaf({I, J, din, dout}, rng);
    auto uhat = predict_vectors(u, w);
    REQUIRE(uhat.shape() == Shape{n, I, J, dout});
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t i = 0; i < I; ++i)
            for (std::size_t j = 0; j < J; ++j)
                for (std::size_t o = 0; o < dout; ++o) {
                    double acc = 0.0;
                    for (std::size_t k = 0; k < din; ++k) acc += u.at({b, i, k}) * w.at({i, j, k, o});
                    CHECK(uhat.at({b, i, j, o}) == doctest::Approx(acc).epsilon(1e-12));
                }
}

TEST_CASE("routing with one iteration is the uniform-coupling closed form") {
    Rng rng(25, Stream::init);
    const std::size_t n = 1, I = 4, J = 3, d = 2;
    auto uhat = random_leaf({n, I, J, d}, rng);
    auto r = route(uhat, 1);
    for (std::size_t i = 0; i < I; ++i)
        for (std::size_t j = 0; j < J; ++j) CHECK(r.couplings.at({0, i, j}) == doctest::Approx(1.0 / J));
    // s_j = sum_i uhat_ij / J, then squash
    std::vector<double> s(J * d, 0.0);
    for (std::size_t j = 0; j < J; ++j)
        for (std::size_t o = 0; o < d; ++o) {
            for (std::size_t i = 0; i < I; ++i) s[j * d + o] += uhat.at({0, i, j, o}) / J;
        }
    auto v = squash(TensorD::from_data({1, J, d}, std::move(s)));
    for (std::size_t j = 0; j < J; ++j)
        for (std::size_t o = 0; o < d; ++o)
            CHECK(r.v.at({0, j, o}) == doctest::Approx(v.at({0, j, o})).epsilon(1e-10));
}

TEST_CASE("routing couplings stay normalized over the output axis") {
    Rng rng(26, Stream::init);
    auto uhat = random_leaf({2, 5, 4, 3}, rng);
    RoutingTrace<double> trace;
    (void)route(uhat, 4, &trace);
    REQUIRE(trace.couplings.size() == 4);
    for (const auto& c : trace.couplings)
        for (std::size_t b = 0; b < 2; ++b)
            for (std::size_t i = 0; i < 5; ++i) {
                double sum = 0.0;
                for (std::size_t j = 0; j < 4; ++j) sum += c[(b * 5 + i) * 4 + j];
                CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
            }
}

TEST_CASE("permuting input capsules permutes couplings and preserves outputs") {
    Rng rng(27, Stream::init);
    const std::size_t I = 5, J = 3, d = 2;
    auto uhat = random_leaf({1, I, J, d}, rng);
    const std::vector<std::size_t> perm = {3, 0, 4, 1, 2};
    std::vector<double> permuted(I * J * d);
    for (std::size_t i = 0; i < I; ++i)
        for (std::size_t j = 0; j < J; ++j)
            for (std::size_t o = 0; o < d; ++o)
                permuted[(i * J + j) * d + o] = uhat.at({0, perm[i], j, o});
    auto uhat_p = TensorD::from_data({1, I, J, d}, std::move(permuted));
    auto a = route(uhat, 3);
    auto b = route(uhat_p, 3);
    for (std::size_t i = 0; i < I; ++i)
        for (std::size_t j = 0; j < J; ++j)
            CHECK(b.couplings.at({0, i, j}) == doctest::Approx(a.couplings.at({0, perm[i], j})).epsilon(1e-9));
    for (std::size_t j = 0; j < J; ++j)
        for (std::size_t o = 0; o < d; ++o)
            CHECK(b.v.at({0, j, o}) == doctest::Approx(a.v.at({0, j, o})).epsilon(1e-9));
}

TEST_CASE("routing rejects zero iterations") {
    auto uhat = TensorD::zeros({1, 2, 2, 2});
    CHECK_THROWS_AS(route(uhat, 0), ContractError);
}

TEST_CASE("gradients flow through unrolled routing") {
    Rng rng(28, Stream::init);
    auto uhat = random_leaf({1, 3, 2, 2}, rng, true);
    auto loss_fn = [&] {
        auto r = route(uhat, 3);
        return sum_all(mul(r.v, r.v));
    };
    auto res = grad_check_params(loss_fn, {uhat}, 1e-6);
    CHECK(res.max_rel_err < 1e-6);
}

TEST_CASE("group_capsules orders by type, then row, then column") {
    // 2 types x dim 2 over a 2x2 grid; channel t*dim+d holds value t*1000 + d*100 + r*10 + c
    const std::size_t types = 2, dim = 2, gh = 2, gw = 2;
    std::vector<double> data(types * dim * gh * gw);
    for (std::size_t t = 0; t < types; ++t)
        for (std::size_t d = 0; d < dim; ++d)
            for (std::size_t r = 0; r < gh; ++r)
                for (std::size_t c = 0; c < gw; ++c)
                    data[((t * dim + d) * gh + r) * gw + c] =
                        static_cast<double>(t * 1000 + d * 100 + r * 10 + c);
    auto x = TensorD::from_data({1, types * dim, gh, gw}, std::move(data));
    auto caps = group_capsules(x, types, dim);
    REQUIRE(caps.shape() == Shape{1, types * gh * gw, dim});
    for (std::size_t t = 0; t < types; ++t)
        for (std::size_t r = 0; r < gh; ++r)
            for (std::size_t c = 0; c < gw; ++c)
                for (std::size_t d = 0; d < dim; ++d) {
                    const std::size_t cap = (t * gh + r) * gw + c;
                    CHECK(caps.at({0, cap, d}) == static_cast<double>(t * 1000 + d * 100 + r * 10 + c));
                }
}

TEST_CASE("mask_rows keeps one class section and zeroes the rest") {
    auto caps = TensorD::from_data({2, 3, 2}, {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12});
    auto masked = mask_rows(caps, {1, 2});
    REQUIRE(masked.shape() == Shape{2, 6});
    CHECK(masked.at({0, 0}) == 0.0);
    CHECK(masked.at({0, 2}) == 3.0);
    CHECK(masked.at({0, 3}) == 4.0);
    CHECK(masked.at({0, 4}) == 0.0);
    CHECK(masked.at({1, 4}) == 11.0);
    CHECK(masked.at({1, 5}) == 12.0);
    CHECK(masked.at({1, 0}) == 0.0);
    CHECK_THROWS_AS(mask_rows(caps, {3, 0}), ContractError);
}

TEST_CASE("margin loss matches a hand computation") {
    // two samples, two classes
    auto norms = TensorD::from_data({2, 2}, {0.95, 0.2, 0.3, 0.05});
    CapsNetConfig cfg;
    cfg.num_classes = 2;
    const std::vector<int> labels = {0, 0};
    // sample 0: present 0.95 -> relu(0.9-0.95)^2 = 0; absent 0.2 -> 0.5*relu(0.2-0.1)^2 = 0.005
    // sample 1: present 0.3 -> relu(0.9-0.3)^2 = 0.36; absent 0.05 -> relu(0.05-0.1) = 0
    const double expect = (0.005 + 0.36) / 2.0;
    auto loss = margin_loss(norms, labels, cfg);
    CHECK(loss.item() == doctest::Approx(expect).epsilon(1e-6));
}

TEST_CASE("margin loss gradients agree with finite differences") {
    Rng rng(29, Stream::init);
    std::vector<double> data(3 * 4);
    for (auto& x : data) x = 0.1 + 0.8 * rng.uniform();
    auto norms = TensorD::from_data({3, 4}, std::move(data), true);
    CapsNetConfig cfg;
    cfg.num_classes = 4;
    const std::vector<int> labels = {0, 2, 3};
    auto loss_fn = [&] { return margin_loss(norms, labels, cfg); };
    auto r = grad_check_params(loss_fn, {norms}, 1e-6);
    CHECK(r.max_rel_err < 1e-6);
}

TEST_CASE("tiny capsnet forward produces coherent shapes and simplex couplings") {
    const CapsNetConfig cfg = tiny_config();
    Rng rng(30, Stream::init);
    auto params = CapsNetParams<double>::init(cfg, rng);
    Rng data_rng(31, Stream::init);
    auto images = random_leaf({2, 1, cfg.in_h, cfg.in_w}, data_rng);
    RoutingTrace<double> trace;
    auto out = capsnet_forward(cfg, params, images, 0, &trace);
    CHECK(out.primary.shape() == Shape{2, cfg.num_primary(), cfg.primary_dim});
    CHECK(out.digit_caps.shape() == Shape{2, cfg.num_classes, cfg.digit_dim});
    CHECK(out.norms.shape() == Shape{2, cfg.num_classes});
    CHECK(out.predicted.size() == 2);
    RoutingStats stats;
    stats.observe(trace);
    CHECK(stats.max_coupling_sum_err < 1e-6);
    CHECK(stats.max_output_norm < 1.0);
    CHECK(stats.observed == 2 * cfg.routing_iters);
}

TEST_CASE("decoder reconstruction matches input pixel count and range") {
    const CapsNetConfig cfg = tiny_config();
    Rng rng(32, Stream::init);
    auto params = CapsNetParams<double>::init(cfg, rng);
    Rng data_rng(33, Stream::init);
    auto images = random_leaf({2, 1, cfg.in_h, cfg.in_w}, data_rng);
    auto out = capsnet_forward(cfg, params, images);
    auto recon = capsnet_decode(cfg, params, out.digit_caps, out.predicted);
    REQUIRE(recon.shape() == Shape{2, cfg.decoder_out()});
    for (double p : recon.values()) {
        CHECK(p > 0.0);
        CHECK(p < 1.0);  // sigmoid output
    }
}

TEST_CASE("config validation rejects kernels larger than the input") {
    CapsNetConfig cfg = tiny_config();
    cfg.conv1_kernel = 13;
    CHECK_THROWS_AS(cfg.validate(), ContractError);
    cfg = tiny_config();
    cfg.routing_iters = 0;
    CHECK_THROWS_AS(cfg.validate(), ContractError);
}
