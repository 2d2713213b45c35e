#include "capsforge/capsnet.hpp"

#include <cmath>

namespace capsforge {

void CapsNetConfig::validate() const {
    auto positive = [](std::size_t v, const char* what) {
        if (v == 0) throw ContractError(std::string("config: ") + what + " must be >= 1");
    };
    positive(in_channels, "in_channels");
    positive(in_h, "in_h");
    positive(in_w, "in_w");
    positive(conv1_maps, "conv1_maps");
    positive(conv1_kernel, "conv1_kernel");
    positive(primary_types, "primary_types");
    positive(primary_dim, "primary_dim");
    positive(primary_kernel, "primary_kernel");
    positive(primary_stride, "primary_stride");
    positive(num_classes, "num_classes");
    positive(digit_dim, "digit_dim");
    positive(routing_iters, "routing_iters");
    for (std::size_t h : decoder_hidden) positive(h, "decoder_hidden entry");
    if (conv1_kernel > in_h || conv1_kernel > in_w)
        throw ContractError("config: conv1 kernel " + std::to_string(conv1_kernel) + " exceeds input " +
                            std::to_string(in_h) + "x" + std::to_string(in_w));
    if (primary_kernel > conv1_h() || primary_kernel > conv1_w())
        throw ContractError("config: primary kernel " + std::to_string(primary_kernel) +
                            " exceeds conv1 output " + std::to_string(conv1_h()) + "x" +
                            std::to_string(conv1_w()));
    if (!(margin_m_plus > margin_m_minus))
        throw ContractError("config: margin_m_plus must exceed margin_m_minus");
    if (margin_m_plus <= 0.0 || margin_m_plus >= 1.0 || margin_m_minus <= 0.0 || margin_m_minus >= 1.0)
        throw ContractError("config: margin thresholds must lie in (0,1)");
    if (margin_lambda < 0.0) throw ContractError("config: margin_lambda must be >= 0");
    if (recon_weight < 0.0) throw ContractError("config: recon_weight must be >= 0");
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
Tensor<T> small_normal(Rng& rng, Shape shape, double sigma, const std::string& name) {
    std::vector<T> data(shape_size(shape));
    for (auto& v : data) v = static_cast<T>(rng.normal() * sigma);
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

std::vector<std::size_t> decoder_widths(const CapsNetConfig& cfg) {
    std::vector<std::size_t> w = cfg.decoder_hidden;
    w.push_back(cfg.decoder_out());
    return w;
}

}  // namespace

template <class T>
CapsNetParams<T> CapsNetParams<T>::init(const CapsNetConfig& cfg, Rng& rng) {
    cfg.validate();
    CapsNetParams<T> p;
    const std::size_t k1 = cfg.conv1_kernel, k2 = cfg.primary_kernel;
    const std::size_t pc_maps = cfg.primary_types * cfg.primary_dim;
    p.conv1_w = glorot<T>(rng, {cfg.conv1_maps, cfg.in_channels, k1, k1}, cfg.in_channels * k1 * k1,
                          cfg.conv1_maps * k1 * k1, "conv1_w");
    p.conv1_b = zero_param<T>({cfg.conv1_maps}, "conv1_b");
    p.primary_w = glorot<T>(rng, {pc_maps, cfg.conv1_maps, k2, k2}, cfg.conv1_maps * k2 * k2,
                            pc_maps * k2 * k2, "primary_w");
    p.primary_b = zero_param<T>({pc_maps}, "primary_b");
    p.route_w = small_normal<T>(rng, {cfg.num_primary(), cfg.num_classes, cfg.primary_dim, cfg.digit_dim},
                                0.01, "route_w");
    std::size_t in = cfg.num_classes * cfg.digit_dim;
    std::size_t li = 0;
    for (std::size_t width : decoder_widths(cfg)) {
        const std::string tag = "dec" + std::to_string(li++);
        p.dec_w.push_back(glorot<T>(rng, {in, width}, in, width, tag + "_w"));
        p.dec_b.push_back(zero_param<T>({width}, tag + "_b"));
        in = width;
    }
    return p;
}

template <class T>
CapsNetParams<T> CapsNetParams<T>::zeros_like(const CapsNetConfig& cfg) {
    cfg.validate();
    CapsNetParams<T> p;
    const std::size_t k1 = cfg.conv1_kernel, k2 = cfg.primary_kernel;
    const std::size_t pc_maps = cfg.primary_types * cfg.primary_dim;
    p.conv1_w = zero_param<T>({cfg.conv1_maps, cfg.in_channels, k1, k1}, "conv1_w");
    p.conv1_b = zero_param<T>({cfg.conv1_maps}, "conv1_b");
    p.primary_w = zero_param<T>({pc_maps, cfg.conv1_maps, k2, k2}, "primary_w");
    p.primary_b = zero_param<T>({pc_maps}, "primary_b");
    p.route_w =
        zero_param<T>({cfg.num_primary(), cfg.num_classes, cfg.primary_dim, cfg.digit_dim}, "route_w");
    std::size_t in = cfg.num_classes * cfg.digit_dim;
    std::size_t li = 0;
    for (std::size_t width : decoder_widths(cfg)) {
        const std::string tag = "dec" + std::to_string(li++);
        p.dec_w.push_back(zero_param<T>({in, width}, tag + "_w"));
        p.dec_b.push_back(zero_param<T>({width}, tag + "_b"));
        in = width;
    }
    return p;
}

template <class T>
std::vector<std::pair<std::string, Tensor<T>>> CapsNetParams<T>::named() const {
    std::vector<std::pair<std::string, Tensor<T>>> out = {{"conv1_w", conv1_w},
                                                          {"conv1_b", conv1_b},
                                                          {"primary_w", primary_w},
                                                          {"primary_b", primary_b},
                                                          {"route_w", route_w}};
    for (std::size_t i = 0; i < dec_w.size(); ++i) {
        out.emplace_back("dec" + std::to_string(i) + "_w", dec_w[i]);
        out.emplace_back("dec" + std::to_string(i) + "_b", dec_b[i]);
    }
    return out;
}

template <class T>
std::vector<Tensor<T>> CapsNetParams<T>::all() const {
    std::vector<Tensor<T>> out;
    for (auto& [name, t] : named()) {
        (void)name;
        out.push_back(t);
    }
    return out;
}

template <class T>
std::size_t CapsNetParams<T>::count() const {
    std::size_t total = 0;
    for (const auto& t : all()) total += t.size();
    return total;
}

template <class T>
RoutingResult<T> route(const Tensor<T>& uhat, std::size_t iters, RoutingTrace<T>* trace) {
    if (iters < 1) throw ContractError("route: need at least one iteration");
    if (uhat.ndim() != 3 && uhat.ndim() != 4)
        throw DimensionError("route: predictions must be [num_in,num_out,dim] or batched, got " +
                             shape_str(uhat.shape()));
    Shape bshape(uhat.shape().begin(), uhat.shape().end() - 1);
    const std::size_t jaxis = bshape.size() - 1;
    if (trace) {
        const bool batched = uhat.ndim() == 4;
        trace->batch = batched ? uhat.dim(0) : 1;
        trace->num_in = batched ? uhat.dim(1) : uhat.dim(0);
        trace->num_out = batched ? uhat.dim(2) : uhat.dim(1);
        trace->dim = uhat.shape().back();
        trace->logits.clear();
        trace->couplings.clear();
        trace->s.clear();
        trace->v.clear();
    }
    Tensor<T> b = Tensor<T>::zeros(bshape);
    Tensor<T> c, v;
    for (std::size_t t = 0; t < iters; ++t) {
        c = softmax_axis(b, jaxis);
        Tensor<T> s = coupling_mix(c, uhat);
        v = squash(s);
        if (trace) {
            auto copy = [](std::span<const T> xs) { return std::vector<T>(xs.begin(), xs.end()); };
            trace->logits.push_back(copy(b.values()));
            trace->couplings.push_back(copy(c.values()));
            trace->s.push_back(copy(s.values()));
            trace->v.push_back(copy(v.values()));
        }
        b = add(b, agreement(uhat, v));
    }
    return {v, c};
}

template <class T>
CapsNetOutput<T> capsnet_forward(const CapsNetConfig& cfg, const CapsNetParams<T>& params,
                                 const Tensor<T>& images, std::size_t routing_iters,
                                 RoutingTrace<T>* trace) {
    if (images.ndim() != 4 || images.dim(1) != cfg.in_channels || images.dim(2) != cfg.in_h ||
        images.dim(3) != cfg.in_w)
        throw DimensionError("capsnet_forward: images " + shape_str(images.shape()) +
                             " do not match configured input [N," + std::to_string(cfg.in_channels) + "," +
                             std::to_string(cfg.in_h) + "," + std::to_string(cfg.in_w) + "]");
    CapsNetOutput<T> out;
    Tensor<T> c1 = relu(conv2d(images, params.conv1_w, params.conv1_b, 1));
    Tensor<T> pc = conv2d(c1, params.primary_w, params.primary_b, cfg.primary_stride);
    Tensor<T> grouped = group_capsules(pc, cfg.primary_types, cfg.primary_dim);
    out.primary = squash(grouped);
    out.uhat = predict_vectors(out.primary, params.route_w);
    const std::size_t iters = routing_iters == 0 ? cfg.routing_iters : routing_iters;
    RoutingResult<T> routed = route(out.uhat, iters, trace);
    out.digit_caps = routed.v;
    out.couplings = routed.couplings;
    out.norms = norm_last_axis(out.digit_caps);
    out.predicted = argmax_rows(out.norms);
    return out;
}

template <class T>
Tensor<T> decode_embedding(const CapsNetConfig& cfg, const CapsNetParams<T>& params,
                           const Tensor<T>& embedding) {
    if (params.dec_w.empty()) throw ContractError("decode_embedding: decoder has no layers");
    if (embedding.ndim() != 2 || embedding.dim(1) != cfg.num_classes * cfg.digit_dim)
        throw DimensionError("decode_embedding: embedding " + shape_str(embedding.shape()) + " must be [N," +
                             std::to_string(cfg.num_classes * cfg.digit_dim) + "]");
    Tensor<T> x = embedding;
    for (std::size_t i = 0; i + 1 < params.dec_w.size(); ++i)
        x = relu(dense(x, params.dec_w[i], params.dec_b[i]));
    return sigmoid(dense(x, params.dec_w.back(), params.dec_b.back()));
}

template <class T>
Tensor<T> capsnet_decode(const CapsNetConfig& cfg, const CapsNetParams<T>& params, const Tensor<T>& digit_caps,
                         const std::vector<int>& selected) {
    return decode_embedding(cfg, params, mask_rows(digit_caps, selected));
}

template <class T>
Tensor<T> margin_loss(const Tensor<T>& norms, const std::vector<int>& labels, const CapsNetConfig& cfg) {
    if (norms.ndim() != 2 || norms.dim(1) != cfg.num_classes)
        throw DimensionError("margin_loss: norms " + shape_str(norms.shape()) + " must be [N," +
                             std::to_string(cfg.num_classes) + "]");
    const std::size_t n = norms.dim(0);
    const T m_plus = static_cast<T>(cfg.margin_m_plus);
    const T m_minus = static_cast<T>(cfg.margin_m_minus);
    const T lambda = static_cast<T>(cfg.margin_lambda);
    Tensor<T> present = relu(add_scalar(mul_scalar(norms, T(-1)), m_plus));
    Tensor<T> absent = relu(add_scalar(norms, -m_minus));
    Tensor<T> target = one_hot<T>(labels, cfg.num_classes, T(1), T(0));
    Tensor<T> off_weight = one_hot<T>(labels, cfg.num_classes, T(0), lambda);
    Tensor<T> per_class = add(mul(target, mul(present, present)), mul(off_weight, mul(absent, absent)));
    return mul_scalar(sum_all(per_class), T(1) / static_cast<T>(n));
}

template <class T>
Tensor<T> reconstruction_loss(const Tensor<T>& recon, const Tensor<T>& images) {
    if (recon.ndim() != 2)
        throw DimensionError("reconstruction_loss: reconstruction must be [N,pixels], got " +
                             shape_str(recon.shape()));
    const std::size_t n = recon.dim(0);
    if (images.size() != recon.size() || images.dim(0) != n)
        throw DimensionError("reconstruction_loss: images " + shape_str(images.shape()) +
                             " do not match reconstruction " + shape_str(recon.shape()));
    Tensor<T> flat = reshape(images, recon.shape());
    Tensor<T> diff = sub(recon, flat);
    return mul_scalar(sum_all(mul(diff, diff)), T(1) / static_cast<T>(n));
}

template <class T>
CapsNetLoss<T> capsnet_loss(const CapsNetConfig& cfg, const CapsNetParams<T>& params,
                            const CapsNetOutput<T>& out, const Tensor<T>& images,
                            const std::vector<int>& labels) {
    CapsNetLoss<T> loss;
    loss.margin = margin_loss(out.norms, labels, cfg);
    Tensor<T> recon = capsnet_decode(cfg, params, out.digit_caps, labels);
    loss.recon = reconstruction_loss(recon, images);
    loss.total = add(loss.margin, mul_scalar(loss.recon, static_cast<T>(cfg.recon_weight)));
    return loss;
}

#define CAPSFORGE_INSTANTIATE_MODEL(T)                                                                  \
    template struct CapsNetParams<T>;                                                                   \
    template RoutingResult<T> route<T>(const Tensor<T>&, std::size_t, RoutingTrace<T>*);                \
    template CapsNetOutput<T> capsnet_forward<T>(const CapsNetConfig&, const CapsNetParams<T>&,         \
                                                 const Tensor<T>&, std::size_t, RoutingTrace<T>*);      \
    template Tensor<T> decode_embedding<T>(const CapsNetConfig&, const CapsNetParams<T>&,               \
                                           const Tensor<T>&);                                           \
    template Tensor<T> capsnet_decode<T>(const CapsNetConfig&, const CapsNetParams<T>&,                 \
                                         const Tensor<T>&, const std::vector<int>&);                    \
    template Tensor<T> margin_loss<T>(const Tensor<T>&, const std::vector<int>&, const CapsNetConfig&); \
    template Tensor<T> reconstruction_loss<T>(const Tensor<T>&, const Tensor<T>&);                      \
    template CapsNetLoss<T> capsnet_loss<T>(const CapsNetConfig&, const CapsNetParams<T>&,              \
                                            const CapsNetOutput<T>&, const Tensor<T>&,                  \
                                            const std::vector<int>&);

CAPSFORGE_INSTANTIATE_MODEL(float)
CAPSFORGE_INSTANTIATE_MODEL(double)
#undef CAPSFORGE_INSTANTIATE_MODEL

}  // namespace capsforge
