#pragma once

#include <string>
#include <utility>
#include <vector>

#include "capsforge/common.hpp"

namespace capsforge {

// Binary netpbm output, maxval 255, byte = round(pixel*255).  Out-of-range
// pixels are clamped with a warning on stderr.  Input is channel-major
// ([C,H,W]); PPM interleaves on write.
void write_pgm(const std::string& path, const float* pixels, std::size_t h, std::size_t w);
void write_ppm(const std::string& path, const float* pixels, std::size_t h, std::size_t w);

// Dispatches on channel count (1 -> .pgm, 3 -> .ppm); returns the path
// actually written (base + extension).
std::string write_image(const std::string& path_base, const float* pixels, std::size_t c, std::size_t h,
                        std::size_t w);

// Reads P5/P6 maxval-255 files back as floats in [0,1]; used by round-trip
// tests and good enough for ad-hoc inspection.
std::vector<float> read_netpbm(const std::string& path, std::size_t& c, std::size_t& h, std::size_t& w);

// Fixed-size cells on a flat canvas with a 1-pixel separator.
class ImageGrid {
public:
    ImageGrid(std::size_t rows, std::size_t cols, std::size_t c, std::size_t h, std::size_t w,
              float separator = 0.5f);
    void set(std::size_t row, std::size_t col, const float* cell);
    std::string save(const std::string& path_base) const;
    std::size_t canvas_h() const { return rows_ * (h_ + 1) - 1; }
    std::size_t canvas_w() const { return cols_ * (w_ + 1) - 1; }
    const std::vector<float>& pixels() const { return canvas_; }

private:
    std::size_t rows_, cols_, c_, h_, w_;
    std::vector<float> canvas_;  // [C, canvas_h, canvas_w]
};

// Square-ish row-major layout: columns = ceil(sqrt(n)).
std::pair<std::size_t, std::size_t> grid_layout(std::size_t n);

}  // namespace capsforge
