#include "capsforge/affine.hpp"

#include <cmath>
#include <numbers>

namespace capsforge {

AffineSpec sample_affine(Rng& rng, const AffineRanges& ranges) {
    AffineSpec s;
    s.angle_deg = rng.uniform(-ranges.max_angle_deg, ranges.max_angle_deg);
    s.shear_x = rng.uniform(-ranges.max_shear, ranges.max_shear);
    s.shear_y = rng.uniform(-ranges.max_shear, ranges.max_shear);
    s.tx = rng.uniform(-ranges.max_translate, ranges.max_translate);
    s.ty = rng.uniform(-ranges.max_translate, ranges.max_translate);
    s.scale = ranges.scale;
    return s;
}

std::array<double, 6> affine_matrix(const AffineSpec& spec, std::size_t h, std::size_t w) {
    const double cx = (static_cast<double>(w) - 1.0) / 2.0;
    const double cy = (static_cast<double>(h) - 1.0) / 2.0;
    const double th = spec.angle_deg * std::numbers::pi / 180.0;
    const double ct = std::cos(th), st = std::sin(th);
    // rotation * shear * scale
    const double a = spec.scale * (ct + (-st) * spec.shear_y);
    const double b = spec.scale * (ct * spec.shear_x - st);
    const double d = spec.scale * (st + ct * spec.shear_y);
    const double e = spec.scale * (st * spec.shear_x + ct);
    // recentre, then translate
    const double c = cx - (a * cx + b * cy) + spec.tx;
    const double f = cy - (d * cx + e * cy) + spec.ty;
    return {a, b, c, d, e, f};
}

void apply_affine(const float* src, float* dst, std::size_t ch, std::size_t h, std::size_t w,
                  const AffineSpec& spec) {
    const auto m = affine_matrix(spec, h, w);
    const double det = m[0] * m[4] - m[1] * m[3];
    if (std::abs(det) < 1e-12) throw ContractError("apply_affine: singular transform");
    const double ia = m[4] / det, ib = -m[1] / det;
    const double id = -m[3] / det, ie = m[0] / det;
    const double ic = -(ia * m[2] + ib * m[5]);
    const double iff = -(id * m[2] + ie * m[5]);
    const std::size_t plane = h * w;
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            const double sx = ia * static_cast<double>(x) + ib * static_cast<double>(y) + ic;
            const double sy = id * static_cast<double>(x) + ie * static_cast<double>(y) + iff;
            const double fx = std::floor(sx), fy = std::floor(sy);
            const long x0 = static_cast<long>(fx), y0 = static_cast<long>(fy);
            const double wx = sx - fx, wy = sy - fy;
            for (std::size_t cc = 0; cc < ch; ++cc) {
                const float* p = src + cc * plane;
                auto at = [&](long xx, long yy) -> double {
                    if (xx < 0 || yy < 0 || xx >= static_cast<long>(w) || yy >= static_cast<long>(h))
                        return 0.0;
                    return p[static_cast<std::size_t>(yy) * w + static_cast<std::size_t>(xx)];
                };
                const double top = at(x0, y0) * (1.0 - wx) + at(x0 + 1, y0) * wx;
                const double bot = at(x0, y0 + 1) * (1.0 - wx) + at(x0 + 1, y0 + 1) * wx;
                dst[cc * plane + y * w + x] = static_cast<float>(top * (1.0 - wy) + bot * wy);
            }
        }
}

LabeledDataset deform_dataset(const LabeledDataset& ds, std::uint64_t seed, const AffineRanges& ranges) {
    LabeledDataset out;
    out.name = ds.name.empty() ? "deformed" : ds.name + "-deformed";
    out.channels = ds.channels;
    out.height = ds.height;
    out.width = ds.width;
    out.labels = ds.labels;
    out.images.resize(ds.images.size());
    Rng base(seed, Stream::deform);
    const std::size_t p = ds.pixels();
    for (std::size_t i = 0; i < ds.size(); ++i) {
        Rng sub = base.substream(i);
        const AffineSpec spec = sample_affine(sub, ranges);
        apply_affine(ds.image(i), out.images.data() + i * p, ds.channels, ds.height, ds.width, spec);
    }
    return out;
}

}  // namespace capsforge
