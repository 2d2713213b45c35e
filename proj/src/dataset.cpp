#include "capsforge/dataset.hpp"

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>

namespace capsforge {

namespace fs = std::filesystem;

namespace {

std::vector<std::uint8_t> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    in.seekg(0, std::ios::end);
    const std::streamoff len = in.tellg();
    in.seekg(0, std::ios::beg);
    std::vector<std::uint8_t> data(static_cast<std::size_t>(len));
    if (len > 0) in.read(reinterpret_cast<char*>(data.data()), len);
    if (!in) throw IoError("short read from " + path);
    return data;
}

std::uint32_t be32(const std::uint8_t* p) {
    return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) | (std::uint32_t(p[2]) << 8) |
           std::uint32_t(p[3]);
}

void put_be32(std::ofstream& out, std::uint32_t v) {
    const char b[4] = {char(v >> 24), char(v >> 16), char(v >> 8), char(v)};
    out.write(b, 4);
}

std::string hex32(std::uint32_t v) {
    static const char* digits = "0123456789abcdef";
    std::string s = "0x";
    for (int shift = 28; shift >= 0; shift -= 4) s += digits[(v >> shift) & 0xf];
    return s;
}

struct IdxHeader {
    std::uint32_t magic;
    std::vector<std::size_t> dims;
    std::size_t payload_offset;
};

IdxHeader parse_idx_header(const std::vector<std::uint8_t>& raw, const std::string& path,
                           std::size_t expect_min_ndim, std::size_t expect_max_ndim) {
    if (raw.size() < 4) throw FormatError(path + ": truncated before magic (" + std::to_string(raw.size()) + " bytes)");
    const std::uint32_t magic = be32(raw.data());
    if ((magic >> 8) != 0x000008)
        throw FormatError(path + ": bad magic " + hex32(magic) + ", expected unsigned-byte idx");
    const std::size_t ndim = magic & 0xff;
    if (ndim < expect_min_ndim || ndim > expect_max_ndim)
        throw FormatError(path + ": magic " + hex32(magic) + " declares " + std::to_string(ndim) +
                          " axes, expected " + std::to_string(expect_min_ndim) +
                          (expect_min_ndim == expect_max_ndim ? "" : ".." + std::to_string(expect_max_ndim)));
    if (raw.size() < 4 + 4 * ndim) throw FormatError(path + ": truncated dimension list");
    IdxHeader h;
    h.magic = magic;
    for (std::size_t i = 0; i < ndim; ++i) h.dims.push_back(be32(raw.data() + 4 + 4 * i));
    h.payload_offset = 4 + 4 * ndim;
    std::size_t total = 1;
    for (std::size_t d : h.dims) total *= d;
    if (raw.size() != h.payload_offset + total)
        throw FormatError(path + ": payload is " + std::to_string(raw.size() - h.payload_offset) +
                          " bytes, dims " + hex32(magic) + " require " + std::to_string(total));
    return h;
}

}  // namespace

LabeledDataset LabeledDataset::subset(std::size_t offset, std::size_t count) const {
    if (offset + count > size())
        throw ContractError("subset [" + std::to_string(offset) + "," + std::to_string(offset + count) +
                            ") exceeds dataset of " + std::to_string(size()));
    LabeledDataset out;
    out.name = name;
    out.channels = channels;
    out.height = height;
    out.width = width;
    const std::size_t p = pixels();
    out.images.assign(images.begin() + offset * p, images.begin() + (offset + count) * p);
    out.labels.assign(labels.begin() + offset, labels.begin() + offset + count);
    return out;
}

LabeledDataset load_idx(const std::string& images_path, const std::string& labels_path) {
    const auto img_raw = read_file(images_path);
    const auto lab_raw = read_file(labels_path);
    const IdxHeader ih = parse_idx_header(img_raw, images_path, 3, 4);
    const IdxHeader lh = parse_idx_header(lab_raw, labels_path, 1, 1);

    LabeledDataset ds;
    const std::size_t n = ih.dims[0];
    if (ih.dims.size() == 3) {
        ds.channels = 1;
        ds.height = ih.dims[1];
        ds.width = ih.dims[2];
    } else {
        ds.channels = ih.dims[1];
        ds.height = ih.dims[2];
        ds.width = ih.dims[3];
    }
    if (lh.dims[0] != n)
        throw FormatError(labels_path + ": " + std::to_string(lh.dims[0]) + " labels for " + std::to_string(n) +
                          " images in " + images_path);
    const std::size_t p = ds.pixels();
    ds.images.resize(n * p);
    for (std::size_t i = 0; i < n * p; ++i)
        ds.images[i] = static_cast<float>(img_raw[ih.payload_offset + i]) / 255.0f;
    ds.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) ds.labels[i] = static_cast<int>(lab_raw[lh.payload_offset + i]);
    return ds;
}

void save_idx_images(const std::string& path, const std::vector<float>& images, std::size_t n, std::size_t c,
                     std::size_t h, std::size_t w) {
    if (images.size() != n * c * h * w)
        throw DimensionError("save_idx_images: " + std::to_string(images.size()) + " floats do not fill " +
                             std::to_string(n) + "x" + std::to_string(c) + "x" + std::to_string(h) + "x" +
                             std::to_string(w));
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path);
    if (c == 1) {
        put_be32(out, 0x00000803);
        put_be32(out, static_cast<std::uint32_t>(n));
        put_be32(out, static_cast<std::uint32_t>(h));
        put_be32(out, static_cast<std::uint32_t>(w));
    } else {
        put_be32(out, 0x00000804);
        put_be32(out, static_cast<std::uint32_t>(n));
        put_be32(out, static_cast<std::uint32_t>(c));
        put_be32(out, static_cast<std::uint32_t>(h));
        put_be32(out, static_cast<std::uint32_t>(w));
    }
    std::vector<std::uint8_t> bytes(images.size());
    for (std::size_t i = 0; i < images.size(); ++i) {
        const float v = std::min(1.0f, std::max(0.0f, images[i]));
        bytes[i] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
    }
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to " + path);
}

void save_idx_labels(const std::string& path, const std::vector<int>& labels) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path);
    put_be32(out, 0x00000801);
    put_be32(out, static_cast<std::uint32_t>(labels.size()));
    for (int v : labels) {
        if (v < 0 || v > 255) throw ContractError("save_idx_labels: label " + std::to_string(v) + " not a byte");
        const char b = static_cast<char>(v);
        out.write(&b, 1);
    }
    if (!out) throw IoError("short write to " + path);
}

LabeledDataset load_cifar10(const std::vector<std::string>& batch_files) {
    constexpr std::size_t kRecord = 3073;
    constexpr std::size_t kPixels = 3 * 32 * 32;
    LabeledDataset ds;
    ds.name = "cifar10";
    ds.channels = 3;
    ds.height = 32;
    ds.width = 32;
    for (const auto& path : batch_files) {
        const auto raw = read_file(path);
        if (raw.size() % kRecord != 0)
            throw FormatError(path + ": " + std::to_string(raw.size()) + " bytes is not a multiple of " +
                              std::to_string(kRecord) + "-byte records");
        const std::size_t n = raw.size() / kRecord;
        for (std::size_t i = 0; i < n; ++i) {
            const std::uint8_t* rec = raw.data() + i * kRecord;
            const int label = rec[0];
            if (label > 9) throw FormatError(path + ": label " + std::to_string(label) + " in record " +
                                             std::to_string(i) + " exceeds 9");
            ds.labels.push_back(label);
            const std::size_t base = ds.images.size();
            ds.images.resize(base + kPixels);
            for (std::size_t j = 0; j < kPixels; ++j)
                ds.images[base + j] = static_cast<float>(rec[1 + j]) / 255.0f;
        }
    }
    return ds;
}

namespace {

std::string resolve_dir(const std::string& name, const std::string& dir, const std::string& probe) {
    const fs::path sub = fs::path(dir) / name;
    if (fs::exists(sub / probe)) return sub.string();
    if (fs::exists(fs::path(dir) / probe)) return dir;
    throw IoError("dataset '" + name + "': " + probe + " not found under " + sub.string() + " or " + dir);
}

}  // namespace

std::vector<std::string> named_dataset_files(const std::string& name, const std::string& dir) {
    if (name == "mnist" || name == "fashion") {
        const std::string base = resolve_dir(name, dir, "train-images-idx3-ubyte");
        return {base + "/train-images-idx3-ubyte", base + "/train-labels-idx1-ubyte",
                base + "/t10k-images-idx3-ubyte", base + "/t10k-labels-idx1-ubyte"};
    }
    if (name == "cifar10") {
        const std::string base = resolve_dir(name, dir, "data_batch_1.bin");
        std::vector<std::string> files;
        for (int i = 1; i <= 5; ++i) files.push_back(base + "/data_batch_" + std::to_string(i) + ".bin");
        files.push_back(base + "/test_batch.bin");
        return files;
    }
    throw ContractError("unknown dataset '" + name + "' (expected mnist, fashion, or cifar10)");
}

DatasetPair load_named_dataset(const std::string& name, const std::string& dir) {
    const std::vector<std::string> files = named_dataset_files(name, dir);
    DatasetPair pair;
    if (name == "mnist" || name == "fashion") {
        pair.train = load_idx(files[0], files[1]);
        pair.test = load_idx(files[2], files[3]);
        pair.train.name = pair.test.name = name;
    } else {
        pair.train = load_cifar10({files.begin(), files.end() - 1});
        pair.test = load_cifar10({files.back()});
    }
    return pair;
}

TensorF batch_images(const LabeledDataset& ds, const std::vector<std::size_t>& idx) {
    const std::size_t p = ds.pixels();
    std::vector<float> data(idx.size() * p);
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] >= ds.size())
            throw ContractError("batch_images: index " + std::to_string(idx[i]) + " out of range");
        std::copy(ds.image(idx[i]), ds.image(idx[i]) + p, data.begin() + i * p);
    }
    auto t = TensorF::from_data({idx.size(), ds.channels, ds.height, ds.width}, std::move(data), false);
    t.set_name("images");
    return t;
}

std::vector<int> batch_labels(const LabeledDataset& ds, const std::vector<std::size_t>& idx) {
    std::vector<int> out(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] >= ds.size())
            throw ContractError("batch_labels: index " + std::to_string(idx[i]) + " out of range");
        out[i] = ds.labels[idx[i]];
    }
    return out;
}

std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch_size, Rng* shuffle_rng) {
    if (batch_size == 0) throw ContractError("make_batches: batch_size must be >= 1");
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    if (shuffle_rng) shuffle_indices(order, *shuffle_rng);
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t start = 0; start < n; start += batch_size) {
        const std::size_t end = std::min(n, start + batch_size);
        batches.emplace_back(order.begin() + start, order.begin() + end);
    }
    return batches;
}

}  // namespace capsforge
