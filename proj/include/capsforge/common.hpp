#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace capsforge {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Shape mismatch between tensors (names the offending axes).
struct DimensionError : Error {
    using Error::Error;
};

/// An operation was called outside its stated contract (non-scalar backward
/// root, routing with r < 1, class index out of range, ...).
struct ContractError : Error {
    using Error::Error;
};

/// A NaN or Inf was produced; never propagated silently.
struct NumericError : Error {
    using Error::Error;
};

/// Malformed on-disk data (bad IDX magic, truncated CIFAR batch, ...).
struct FormatError : Error {
    using Error::Error;
};

/// Missing input files.
struct IoError : Error {
    using Error::Error;
};

/// Checkpoint and dataset/architecture disagree.
struct IncompatibilityError : Error {
    using Error::Error;
};

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

// Deterministic work accounting. Every compute op adds its multiply-accumulate
// count; the trainer converts the delta into the "seconds" column of the
// metrics CSV (a machine-independent cost model, so logged artifacts are
// byte-reproducible from the seed alone).
namespace work {
void add_macs(std::uint64_t n);
std::uint64_t macs();
void reset();
}  // namespace work

}  // namespace capsforge
