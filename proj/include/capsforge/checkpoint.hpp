#pragma once

#include <string>
#include <utility>
#include <vector>

#include "capsforge/tensor.hpp"

namespace capsforge {

// Checkpoint container: "CPSN" magic, u32 format version, a length-prefixed
// UTF-8 JSON snapshot (model config plus whatever train state the writer
// chooses), then named float32 tensors.  All integers little-endian.
void save_checkpoint(const std::string& path, const std::string& config_json,
                     const std::vector<std::pair<std::string, TensorF>>& tensors);

struct LoadedCheckpoint {
    std::string config_json;
    std::vector<std::pair<std::string, TensorF>> tensors;

    const TensorF* find(const std::string& name) const;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

// Copies checkpoint tensors into already-shaped destination leaves; throws
// IncompatibilityError on missing names or shape mismatches.
void fill_named(const LoadedCheckpoint& ck, const std::vector<std::pair<std::string, TensorF>>& dst);

}  // namespace capsforge
