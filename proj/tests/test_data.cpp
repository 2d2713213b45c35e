#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"

#include "capsforge/affine.hpp"
#include "capsforge/dataset.hpp"
#include "capsforge/rng.hpp"
#include "capsforge/synth.hpp"

using namespace capsforge;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir() {
    const fs::path dir = fs::temp_directory_path() / "capsforge_test_data";
    fs::create_directories(dir);
    return dir;
}

void write_bytes(const fs::path& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    REQUIRE(out.good());
}

std::vector<std::uint8_t> read_bytes(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void push_u32_be(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v >> 24));
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v));
}

// Hand-built idx pair: n grayscale h x w images with pixel (i + r + c) % 256.
struct IdxFixture {
    fs::path images, labels;
    std::vector<std::uint8_t> image_bytes, label_bytes;
};

IdxFixture make_idx_fixture(std::size_t n, std::size_t h, std::size_t w) {
    IdxFixture fx;
    fx.images = scratch_dir() / "fixture-images.idx";
    fx.labels = scratch_dir() / "fixture-labels.idx";
    push_u32_be(fx.image_bytes, 0x00000803);
    push_u32_be(fx.image_bytes, static_cast<std::uint32_t>(n));
    push_u32_be(fx.image_bytes, static_cast<std::uint32_t>(h));
    push_u32_be(fx.image_bytes, static_cast<std::uint32_t>(w));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t r = 0; r < h; ++r)
            for (std::size_t c = 0; c < w; ++c)
                fx.image_bytes.push_back(static_cast<std::uint8_t>((i + r + c) % 256));
    push_u32_be(fx.label_bytes, 0x00000801);
    push_u32_be(fx.label_bytes, static_cast<std::uint32_t>(n));
    for (std::size_t i = 0; i < n; ++i) fx.label_bytes.push_back(static_cast<std::uint8_t>(i % 10));
    write_bytes(fx.images, fx.image_bytes);
    write_bytes(fx.labels, fx.label_bytes);
    return fx;
}

}  // namespace

TEST_CASE("idx images round-trip bit-exactly") {
    const auto fx = make_idx_fixture(3, 4, 5);
    const LabeledDataset ds = load_idx(fx.images.string(), fx.labels.string());
    CHECK(ds.size() == 3);
    CHECK(ds.channels == 1);
    CHECK(ds.height == 4);
    CHECK(ds.width == 5);
    CHECK(ds.images[0] == doctest::Approx(0.0));
    CHECK(ds.image(1)[0] == doctest::Approx(1.0f / 255.0f));
    CHECK(ds.labels[2] == 2);

    const fs::path out_images = scratch_dir() / "roundtrip-images.idx";
    const fs::path out_labels = scratch_dir() / "roundtrip-labels.idx";
    save_idx_images(out_images.string(), ds.images, ds.size(), ds.channels, ds.height, ds.width);
    save_idx_labels(out_labels.string(), ds.labels);
    CHECK(read_bytes(out_images) == fx.image_bytes);
    CHECK(read_bytes(out_labels) == fx.label_bytes);
}

TEST_CASE("idx four-axis files carry channels") {
    std::vector<std::uint8_t> bytes;
    push_u32_be(bytes, 0x00000804);
    push_u32_be(bytes, 2);  // n
    push_u32_be(bytes, 3);  // c
    push_u32_be(bytes, 2);  // h
    push_u32_be(bytes, 2);  // w
    for (int i = 0; i < 2 * 3 * 2 * 2; ++i) bytes.push_back(static_cast<std::uint8_t>(i));
    const fs::path images = scratch_dir() / "rgb-images.idx";
    write_bytes(images, bytes);
    std::vector<std::uint8_t> lab;
    push_u32_be(lab, 0x00000801);
    push_u32_be(lab, 2);
    lab.push_back(0);
    lab.push_back(1);
    const fs::path labels = scratch_dir() / "rgb-labels.idx";
    write_bytes(labels, lab);

    const LabeledDataset ds = load_idx(images.string(), labels.string());
    CHECK(ds.channels == 3);
    CHECK(ds.image(1)[0] == doctest::Approx(12.0f / 255.0f));

    const fs::path out = scratch_dir() / "rgb-roundtrip.idx";
    save_idx_images(out.string(), ds.images, ds.size(), ds.channels, ds.height, ds.width);
    CHECK(read_bytes(out) == bytes);
}

TEST_CASE("idx loader names malformed inputs") {
    const auto fx = make_idx_fixture(2, 3, 3);

    std::vector<std::uint8_t> bad_magic = fx.image_bytes;
    bad_magic[2] = 0x09;  // dtype byte
    const fs::path bad_path = scratch_dir() / "bad-magic.idx";
    write_bytes(bad_path, bad_magic);
    CHECK_THROWS_AS(load_idx(bad_path.string(), fx.labels.string()), FormatError);

    std::vector<std::uint8_t> truncated = fx.image_bytes;
    truncated.resize(truncated.size() - 1);
    const fs::path trunc_path = scratch_dir() / "truncated.idx";
    write_bytes(trunc_path, truncated);
    CHECK_THROWS_AS(load_idx(trunc_path.string(), fx.labels.string()), FormatError);

    std::vector<std::uint8_t> short_labels;
    push_u32_be(short_labels, 0x00000801);
    push_u32_be(short_labels, 1);
    short_labels.push_back(0);
    const fs::path short_path = scratch_dir() / "short-labels.idx";
    write_bytes(short_path, short_labels);
    CHECK_THROWS_AS(load_idx(fx.images.string(), short_path.string()), FormatError);

    CHECK_THROWS_AS(load_idx((scratch_dir() / "absent.idx").string(), fx.labels.string()), IoError);
}

TEST_CASE("cifar batches load and re-encode bit-exactly") {
    std::vector<std::uint8_t> bytes;
    for (int rec = 0; rec < 2; ++rec) {
        bytes.push_back(static_cast<std::uint8_t>(rec + 3));  // label
        for (int i = 0; i < 3072; ++i) bytes.push_back(static_cast<std::uint8_t>((rec * 7 + i) % 256));
    }
    const fs::path batch = scratch_dir() / "cifar_batch.bin";
    write_bytes(batch, bytes);

    const LabeledDataset ds = load_cifar10({batch.string()});
    CHECK(ds.size() == 2);
    CHECK(ds.channels == 3);
    CHECK(ds.height == 32);
    CHECK(ds.width == 32);
    CHECK(ds.labels[0] == 3);
    CHECK(ds.labels[1] == 4);
    CHECK(ds.image(0)[0] == doctest::Approx(0.0f));
    CHECK(ds.image(1)[0] == doctest::Approx(7.0f / 255.0f));

    std::vector<std::uint8_t> reencoded;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        reencoded.push_back(static_cast<std::uint8_t>(ds.labels[i]));
        const float* px = ds.image(i);
        for (std::size_t p = 0; p < ds.pixels(); ++p)
            reencoded.push_back(static_cast<std::uint8_t>(std::lround(px[p] * 255.0f)));
    }
    CHECK(reencoded == bytes);
}

TEST_CASE("cifar loader rejects ragged files and bad labels") {
    std::vector<std::uint8_t> ragged(3072, 0);  // one byte short of a record
    const fs::path ragged_path = scratch_dir() / "ragged.bin";
    write_bytes(ragged_path, ragged);
    CHECK_THROWS_AS(load_cifar10({ragged_path.string()}), FormatError);

    std::vector<std::uint8_t> bad(3073, 0);
    bad[0] = 10;
    const fs::path bad_path = scratch_dir() / "badlabel.bin";
    write_bytes(bad_path, bad);
    CHECK_THROWS_AS(load_cifar10({bad_path.string()}), FormatError);
}

TEST_CASE("identity affine is a no-op on pixel centers") {
    std::vector<float> src(7 * 7);
    Rng rng(40, Stream::init);
    for (auto& p : src) p = static_cast<float>(rng.uniform());
    std::vector<float> dst(src.size());
    apply_affine(src.data(), dst.data(), 1, 7, 7, AffineSpec{});
    for (std::size_t i = 0; i < src.size(); ++i) CHECK(dst[i] == doctest::Approx(src[i]));
}

TEST_CASE("unit x-translation shifts content right with zero fill") {
    std::vector<float> src(5 * 5, 0.0f);
    src[2 * 5 + 1] = 1.0f;  // (row 2, col 1)
    std::vector<float> dst(src.size());
    AffineSpec spec;
    spec.tx = 1.0;
    apply_affine(src.data(), dst.data(), 1, 5, 5, spec);
    CHECK(dst[2 * 5 + 2] == doctest::Approx(1.0f));
    CHECK(dst[2 * 5 + 1] == doctest::Approx(0.0f));
    // content shifted off the left edge reads back as zero
    for (std::size_t r = 0; r < 5; ++r) CHECK(dst[r * 5 + 0] == doctest::Approx(0.0f));
}

TEST_CASE("rotation by 90 degrees about the center permutes a cross pattern") {
    std::vector<float> src(5 * 5, 0.0f);
    src[2 * 5 + 4] = 1.0f;  // east of center
    std::vector<float> dst(src.size());
    AffineSpec spec;
    spec.angle_deg = 90.0;
    apply_affine(src.data(), dst.data(), 1, 5, 5, spec);
    // (x-cx, y-cy) = (2, 0) maps to (0, 2): south of center (y grows downward)
    CHECK(dst[4 * 5 + 2] == doctest::Approx(1.0f));
    CHECK(dst[2 * 5 + 4] == doctest::Approx(0.0f));
}

TEST_CASE("sampled affine specs respect the configured ranges") {
    Rng rng(41, Stream::deform);
    AffineRanges ranges;
    for (int i = 0; i < 200; ++i) {
        const AffineSpec spec = sample_affine(rng, ranges);
        CHECK(std::abs(spec.angle_deg) <= ranges.max_angle_deg);
        CHECK(std::abs(spec.shear_x) <= ranges.max_shear);
        CHECK(std::abs(spec.shear_y) <= ranges.max_shear);
        CHECK(std::abs(spec.tx) <= ranges.max_translate);
        CHECK(std::abs(spec.ty) <= ranges.max_translate);
        CHECK(spec.scale == ranges.scale);
    }
}

TEST_CASE("deform_dataset is a pure function of the seed") {
    const auto fx = make_idx_fixture(6, 9, 9);
    LabeledDataset ds = load_idx(fx.images.string(), fx.labels.string());
    CHECK(deform_dataset(ds, 7, AffineRanges{}).name == "deformed");
    ds.name = "fixture";
    AffineRanges ranges;
    const LabeledDataset a = deform_dataset(ds, 7, ranges);
    const LabeledDataset b = deform_dataset(ds, 7, ranges);
    const LabeledDataset c = deform_dataset(ds, 8, ranges);
    CHECK(a.images == b.images);
    CHECK(a.labels == ds.labels);
    CHECK(a.images != c.images);
    CHECK(a.name == "fixture-deformed");
}

TEST_CASE("rendered digits are deterministic and within range") {
    Rng a(50, Stream::synth), b(50, Stream::synth);
    const auto x = render_digit(3, 28, 28, a);
    const auto y = render_digit(3, 28, 28, b);
    CHECK(x == y);
    CHECK(x.size() == 28 * 28);
    float peak = 0.0f;
    for (float p : x) {
        CHECK(p >= 0.0f);
        CHECK(p <= 1.0f);
        peak = std::max(peak, p);
    }
    CHECK(peak > 0.3f);  // the stroke is actually drawn
    CHECK_THROWS_AS(render_digit(10, 28, 28, a), ContractError);
}

TEST_CASE("synthetic corpora are loadable through the standard loaders") {
    const fs::path dir = scratch_dir() / "synth";
    fs::remove_all(dir);
    SynthConfig cfg;
    cfg.train = 10;
    cfg.test = 5;
    cfg.seed = 9;
    write_synth_mnist((dir / "mnist").string(), cfg);
    const DatasetPair mnist = load_named_dataset("mnist", dir.string());
    CHECK(mnist.train.size() == 10);
    CHECK(mnist.test.size() == 5);
    CHECK(mnist.train.height == 28);

    write_synth_cifar10((dir / "cifar10").string(), cfg);
    const DatasetPair cifar = load_named_dataset("cifar10", dir.string());
    CHECK(cifar.train.size() == 10);
    CHECK(cifar.test.size() == 5);
    CHECK(cifar.train.channels == 3);

    // same seed, same bytes
    const fs::path dir2 = scratch_dir() / "synth2";
    fs::remove_all(dir2);
    write_synth_mnist((dir2 / "mnist").string(), cfg);
    CHECK(read_bytes(dir / "mnist" / "train-images-idx3-ubyte") ==
          read_bytes(dir2 / "mnist" / "train-images-idx3-ubyte"));
}

TEST_CASE("named_dataset_files reports both probed locations") {
    const fs::path dir = scratch_dir() / "empty";
    fs::create_directories(dir);
    CHECK_THROWS_AS(named_dataset_files("mnist", dir.string()), IoError);
    CHECK_THROWS_AS(named_dataset_files("nonesuch", dir.string()), ContractError);
}

TEST_CASE("make_batches shuffles into a permutation and keeps the tail") {
    Rng rng(60, Stream::shuffle);
    const auto batches = make_batches(10, 4, &rng);
    REQUIRE(batches.size() == 3);
    CHECK(batches[0].size() == 4);
    CHECK(batches[2].size() == 2);
    std::vector<bool> seen(10, false);
    for (const auto& b : batches)
        for (std::size_t i : b) {
            REQUIRE(i < 10);
            CHECK(!seen[i]);
            seen[i] = true;
        }
    // unshuffled batches are in index order
    const auto plain = make_batches(5, 2, nullptr);
    CHECK(plain[0] == std::vector<std::size_t>{0, 1});
    CHECK(plain[2] == std::vector<std::size_t>{4});
}

TEST_CASE("rng streams are reproducible and distinct") {
    Rng a(123, Stream::init), b(123, Stream::init), c(123, Stream::shuffle);
    CHECK(a.uniform() == b.uniform());
    CHECK(a.uniform() != c.uniform());
    for (int i = 0; i < 1000; ++i) {
        const double u = a.uniform();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
        const std::size_t k = b.uniform_index(7);
        CHECK(k < 7);
    }
    Rng d(123, Stream::init);
    Rng s0 = d.substream(0), s1 = d.substream(1);
    CHECK(s0.uniform() != s1.uniform());
    CHECK(Rng(123, Stream::init).substream(0).uniform() == Rng(123, Stream::init).substream(0).uniform());
}
