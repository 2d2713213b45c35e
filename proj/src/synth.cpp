#include "capsforge/synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "capsforge/affine.hpp"
#include "capsforge/dataset.hpp"

namespace capsforge {

namespace {

// 5x7 seed glyphs, row-major top to bottom.
constexpr const char* kGlyphs[10][7] = {
    {" ### ", "#   #", "#  ##", "# # #", "##  #", "#   #", " ### "},
    {"  #  ", " ##  ", "  #  ", "  #  ", "  #  ", "  #  ", " ### "},
    {" ### ", "#   #", "    #", "   # ", "  #  ", " #   ", "#####"},
    {" ### ", "#   #", "    #", "  ## ", "    #", "#   #", " ### "},
    {"   # ", "  ## ", " # # ", "#  # ", "#####", "   # ", "   # "},
    {"#####", "#    ", "#### ", "    #", "    #", "#   #", " ### "},
    {"  ## ", " #   ", "#    ", "#### ", "#   #", "#   #", " ### "},
    {"#####", "    #", "   # ", "  #  ", " #   ", " #   ", " #   "},
    {" ### ", "#   #", "#   #", " ### ", "#   #", "#   #", " ### "},
    {" ### ", "#   #", "#   #", " ####", "    #", "   # ", " ##  "},
};
constexpr std::size_t kGlyphW = 5, kGlyphH = 7;

double glyph_at(int digit, long gx, long gy) {
    if (gx < 0 || gy < 0 || gx >= static_cast<long>(kGlyphW) || gy >= static_cast<long>(kGlyphH)) return 0.0;
    return kGlyphs[digit][gy][gx] == '#' ? 1.0 : 0.0;
}

// Upsamples the glyph bilinearly into a centred box covering most of the
// canvas; anti-aliased edges come from the interpolation.
std::vector<float> canonical_digit(int digit, std::size_t h, std::size_t w) {
    std::vector<float> img(h * w, 0.0f);
    const double box_w = 0.62 * static_cast<double>(w);
    const double box_h = 0.78 * static_cast<double>(h);
    const double ox = (static_cast<double>(w) - box_w) / 2.0;
    const double oy = (static_cast<double>(h) - box_h) / 2.0;
    const double sx = box_w / kGlyphW;
    const double sy = box_h / kGlyphH;
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            const double u = (static_cast<double>(x) - ox) / sx - 0.5;
            const double v = (static_cast<double>(y) - oy) / sy - 0.5;
            const double fu = std::floor(u), fv = std::floor(v);
            const double wu = u - fu, wv = v - fv;
            const long x0 = static_cast<long>(fu), y0 = static_cast<long>(fv);
            const double top = glyph_at(digit, x0, y0) * (1.0 - wu) + glyph_at(digit, x0 + 1, y0) * wu;
            const double bot =
                glyph_at(digit, x0, y0 + 1) * (1.0 - wu) + glyph_at(digit, x0 + 1, y0 + 1) * wu;
            img[y * w + x] = static_cast<float>(top * (1.0 - wv) + bot * wv);
        }
    return img;
}

}  // namespace

std::vector<float> render_digit(int digit, std::size_t h, std::size_t w, Rng& rng) {
    if (digit < 0 || digit > 9) throw ContractError("render_digit: digit " + std::to_string(digit));
    AffineRanges jitter;
    jitter.max_angle_deg = 12.0;
    jitter.max_shear = 0.1;
    jitter.max_translate = 2.5 * static_cast<double>(w) / 28.0;
    jitter.scale = 1.0;
    AffineSpec spec = sample_affine(rng, jitter);
    spec.scale = rng.uniform(0.8, 1.15);
    const double intensity = rng.uniform(0.7, 1.0);

    const std::vector<float> base = canonical_digit(digit, h, w);
    std::vector<float> out(h * w);
    apply_affine(base.data(), out.data(), 1, h, w, spec);
    for (auto& v : out) {
        const double noisy = v * intensity + rng.uniform(0.0, 0.03);
        v = static_cast<float>(std::clamp(noisy, 0.0, 1.0));
    }
    return out;
}

void write_synth_mnist(const std::string& dir, const SynthConfig& cfg) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    Rng base(cfg.seed, Stream::synth);
    auto make_split = [&](std::size_t n, std::uint64_t substream_base, std::vector<float>& images,
                          std::vector<int>& labels) {
        images.resize(n * 28 * 28);
        labels.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            Rng sub = base.substream(substream_base + i);
            const int digit = static_cast<int>(sub.uniform_index(10));
            labels[i] = digit;
            const auto img = render_digit(digit, 28, 28, sub);
            std::copy(img.begin(), img.end(), images.begin() + i * 28 * 28);
        }
    };
    std::vector<float> images;
    std::vector<int> labels;
    make_split(cfg.train, 0, images, labels);
    save_idx_images(dir + "/train-images-idx3-ubyte", images, cfg.train, 1, 28, 28);
    save_idx_labels(dir + "/train-labels-idx1-ubyte", labels);
    // test substreams start far above any plausible train size
    make_split(cfg.test, 1ull << 32, images, labels);
    save_idx_images(dir + "/t10k-images-idx3-ubyte", images, cfg.test, 1, 28, 28);
    save_idx_labels(dir + "/t10k-labels-idx1-ubyte", labels);
}

void write_synth_cifar10(const std::string& dir, const SynthConfig& cfg) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    Rng base(cfg.seed ^ 0x63696661u, Stream::synth);
    auto write_batch = [&](const std::string& path, std::size_t n, std::uint64_t substream_base) {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write " + path);
        for (std::size_t i = 0; i < n; ++i) {
            Rng sub = base.substream(substream_base + i);
            const int digit = static_cast<int>(sub.uniform_index(10));
            // foreground hue, then background tint, then the shared glyph draws
            double fg[3], bg[3];
            for (double& v : fg) v = sub.uniform(0.55, 1.0);
            for (double& v : bg) v = sub.uniform(0.0, 0.25);
            const auto alpha = render_digit(digit, 32, 32, sub);
            std::uint8_t rec[3073];
            rec[0] = static_cast<std::uint8_t>(digit);
            for (std::size_t c = 0; c < 3; ++c)
                for (std::size_t p = 0; p < 32 * 32; ++p) {
                    const double v = bg[c] * (1.0 - alpha[p]) + fg[c] * alpha[p];
                    rec[1 + c * 32 * 32 + p] = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
                }
            out.write(reinterpret_cast<const char*>(rec), sizeof(rec));
        }
        if (!out) throw IoError("short write to " + path);
    };
    const std::size_t per = (cfg.train + 4) / 5;
    std::size_t written = 0;
    for (int b = 1; b <= 5; ++b) {
        const std::size_t n = std::min(per, cfg.train - written);
        write_batch(dir + "/data_batch_" + std::to_string(b) + ".bin", n, written);
        written += n;
    }
    write_batch(dir + "/test_batch.bin", cfg.test, 1ull << 32);
}

}  // namespace capsforge
