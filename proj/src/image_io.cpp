#include "capsforge/image_io.hpp"

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>

namespace capsforge {

namespace {

std::vector<std::uint8_t> quantize(const std::string& path, const float* pixels, std::size_t n) {
    std::vector<std::uint8_t> bytes(n);
    std::size_t clamped = 0;
    for (std::size_t i = 0; i < n; ++i) {
        float v = pixels[i];
        if (v < 0.0f || v > 1.0f) {
            v = v < 0.0f ? 0.0f : 1.0f;
            ++clamped;
        }
        bytes[i] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
    }
    if (clamped > 0)
        std::fprintf(stderr, "image_io: clamped %zu out-of-range pixels writing %s\n", clamped, path.c_str());
    return bytes;
}

}  // namespace

void write_pgm(const std::string& path, const float* pixels, std::size_t h, std::size_t w) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path);
    out << "P5\n" << w << " " << h << "\n255\n";
    const auto bytes = quantize(path, pixels, h * w);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to " + path);
}

void write_ppm(const std::string& path, const float* pixels, std::size_t h, std::size_t w) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path);
    out << "P6\n" << w << " " << h << "\n255\n";
    const auto bytes = quantize(path, pixels, 3 * h * w);
    std::vector<std::uint8_t> interleaved(3 * h * w);
    for (std::size_t p = 0; p < h * w; ++p)
        for (std::size_t c = 0; c < 3; ++c) interleaved[p * 3 + c] = bytes[c * h * w + p];
    out.write(reinterpret_cast<const char*>(interleaved.data()),
              static_cast<std::streamsize>(interleaved.size()));
    if (!out) throw IoError("short write to " + path);
}

std::string write_image(const std::string& path_base, const float* pixels, std::size_t c, std::size_t h,
                        std::size_t w) {
    if (c == 1) {
        const std::string path = path_base + ".pgm";
        write_pgm(path, pixels, h, w);
        return path;
    }
    if (c == 3) {
        const std::string path = path_base + ".ppm";
        write_ppm(path, pixels, h, w);
        return path;
    }
    throw ContractError("write_image: " + std::to_string(c) + " channels (expected 1 or 3)");
}

std::vector<float> read_netpbm(const std::string& path, std::size_t& c, std::size_t& h, std::size_t& w) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::string magic;
    in >> magic;
    if (magic == "P5")
        c = 1;
    else if (magic == "P6")
        c = 3;
    else
        throw FormatError(path + ": magic '" + magic + "' is not P5/P6");
    std::size_t maxval = 0;
    in >> w >> h >> maxval;
    if (!in || maxval != 255) throw FormatError(path + ": bad header (maxval must be 255)");
    in.get();  // single whitespace byte after maxval
    std::vector<std::uint8_t> bytes(c * h * w);
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!in) throw FormatError(path + ": truncated pixel data");
    std::vector<float> out(c * h * w);
    if (c == 1) {
        for (std::size_t i = 0; i < bytes.size(); ++i) out[i] = static_cast<float>(bytes[i]) / 255.0f;
    } else {
        for (std::size_t p = 0; p < h * w; ++p)
            for (std::size_t ch = 0; ch < 3; ++ch)
                out[ch * h * w + p] = static_cast<float>(bytes[p * 3 + ch]) / 255.0f;
    }
    return out;
}

ImageGrid::ImageGrid(std::size_t rows, std::size_t cols, std::size_t c, std::size_t h, std::size_t w,
                     float separator)
    : rows_(rows), cols_(cols), c_(c), h_(h), w_(w) {
    if (rows == 0 || cols == 0 || c == 0 || h == 0 || w == 0)
        throw ContractError("ImageGrid: all dimensions must be >= 1");
    canvas_.assign(c_ * canvas_h() * canvas_w(), separator);
}

void ImageGrid::set(std::size_t row, std::size_t col, const float* cell) {
    if (row >= rows_ || col >= cols_)
        throw ContractError("ImageGrid: cell (" + std::to_string(row) + "," + std::to_string(col) +
                            ") outside " + std::to_string(rows_) + "x" + std::to_string(cols_));
    const std::size_t ch = canvas_h(), cw = canvas_w();
    const std::size_t y0 = row * (h_ + 1), x0 = col * (w_ + 1);
    for (std::size_t cc = 0; cc < c_; ++cc)
        for (std::size_t y = 0; y < h_; ++y)
            for (std::size_t x = 0; x < w_; ++x)
                canvas_[cc * ch * cw + (y0 + y) * cw + (x0 + x)] = cell[cc * h_ * w_ + y * w_ + x];
}

std::string ImageGrid::save(const std::string& path_base) const {
    return write_image(path_base, canvas_.data(), c_, canvas_h(), canvas_w());
}

std::pair<std::size_t, std::size_t> grid_layout(std::size_t n) {
    if (n == 0) throw ContractError("grid_layout: need at least one cell");
    std::size_t cols = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(n))));
    std::size_t rows = (n + cols - 1) / cols;
    return {rows, cols};
}

}  // namespace capsforge
