#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "capsforge/rng.hpp"

namespace capsforge {

// Procedurally rendered digit images for machines without the real corpora.
// Files are written in the exact on-disk layouts (idx / 3073-byte batches)
// under the exact file names, so the regular loaders parse them unchanged.
struct SynthConfig {
    std::size_t train = 60000;
    std::size_t test = 10000;
    std::uint64_t seed = 42;
};

// One grayscale digit with per-sample pose jitter; h*w floats in [0,1].
// Consumes a fixed number of draws from rng per call.
std::vector<float> render_digit(int digit, std::size_t h, std::size_t w, Rng& rng);

void write_synth_mnist(const std::string& dir, const SynthConfig& cfg);
void write_synth_cifar10(const std::string& dir, const SynthConfig& cfg);

}  // namespace capsforge
