#pragma once

#include <array>
#include <cstdint>

#include "capsforge/dataset.hpp"
#include "capsforge/rng.hpp"

namespace capsforge {

struct AffineSpec {
    double angle_deg = 0.0;
    double shear_x = 0.0;
    double shear_y = 0.0;
    double tx = 0.0;
    double ty = 0.0;
    double scale = 1.0;
};

struct AffineRanges {
    double max_angle_deg = 20.0;
    double max_shear = 0.2;
    double max_translate = 1.0;
    double scale = 1.5;
};

// One spec per call; draw order is angle, shear_x, shear_y, tx, ty.
AffineSpec sample_affine(Rng& rng, const AffineRanges& ranges);

// Forward map about the image centre ((w-1)/2,(h-1)/2): translate composed
// with centred rotation * shear * uniform scale.  Returns {a,b,c,d,e,f}
// meaning x' = a*x + b*y + c and y' = d*x + e*y + f.
std::array<double, 6> affine_matrix(const AffineSpec& spec, std::size_t h, std::size_t w);

// Inverse-maps each destination pixel and samples bilinearly; out-of-bounds
// reads as zero.
void apply_affine(const float* src, float* dst, std::size_t c, std::size_t h, std::size_t w,
                  const AffineSpec& spec);

// Deterministic per-image deformation: image i uses substream i of the given
// seed under the deform stream.  Labels are unchanged.
LabeledDataset deform_dataset(const LabeledDataset& ds, std::uint64_t seed, const AffineRanges& ranges);

}  // namespace capsforge
