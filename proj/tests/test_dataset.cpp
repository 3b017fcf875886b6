#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "acq/dataset.hpp"
#include "acq/errors.hpp"
#include "test_support.hpp"

using namespace acq;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;

    TempDir() {
        path = fs::temp_directory_path() / ("acq_test_" + std::to_string(std::random_device{}()));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

void put_be32(std::vector<unsigned char>& out, std::uint32_t v) {
    for (int shift = 24; shift >= 0; shift -= 8) out.push_back(static_cast<unsigned char>(v >> shift));
}

void write_bytes(const fs::path& p, const std::vector<unsigned char>& bytes) {
    std::ofstream out(p, std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

// Two 28x28 images: the first counts 0,1,2,... mod 256, the second is 255 - that.
struct Fixture {
    std::vector<unsigned char> images, labels;

    Fixture(std::uint32_t image_magic = 2051, std::uint32_t label_magic = 2049, std::uint32_t label_count = 2) {
        put_be32(images, image_magic);
        put_be32(images, 2);
        put_be32(images, 28);
        put_be32(images, 28);
        for (int n = 0; n < 2; ++n)
            for (int p = 0; p < 784; ++p) images.push_back(static_cast<unsigned char>(n == 0 ? p % 256 : 255 - p % 256));
        put_be32(labels, label_magic);
        put_be32(labels, label_count);
        labels.push_back(7);
        labels.push_back(3);
    }

    void write(const fs::path& dir) const {
        write_bytes(dir / "img", images);
        write_bytes(dir / "lbl", labels);
    }
};

Dataset small_dataset(std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(0.0, 1.0);
    Dataset d;
    d.name = "small";
    d.provenance = Provenance::MnistTrain;
    d.scale = PixelScale::Unit;
    for (std::size_t i = 0; i < n; ++i) {
        Image image;
        for (double& v : image.pixels) v = dist(rng);
        image.label = static_cast<int>(i % 10);
        d.images.push_back(std::move(image));
    }
    return d;
}

}  // namespace

TEST_CASE("IDX fixture loads byte for byte") {
    TempDir dir;
    Fixture().write(dir.path);
    const Dataset d = load_idx(dir.path / "img", dir.path / "lbl");
    REQUIRE(d.size() == 2);
    CHECK(d.scale == PixelScale::Byte);
    CHECK(d.images[0].label == 7);
    CHECK(d.images[1].label == 3);
    for (int p = 0; p < 784; ++p) {
        CHECK(d.images[0].pixels[p] == p % 256);
        CHECK(d.images[1].pixels[p] == 255 - p % 256);
    }
    // Row-major: pixel (1, 0) is byte 28.
    CHECK(d.images[0].at(1, 0) == 28.0);
    CHECK_NOTHROW(d.validate());
}

TEST_CASE("IDX errors") {
    TempDir dir;
    SUBCASE("swapped magic") {
        Fixture(2049, 2049).write(dir.path);
        try {
            load_idx(dir.path / "img", dir.path / "lbl");
            FAIL("expected a format error");
        } catch (const FormatError& e) {
            const std::string msg = e.what();
            CHECK(msg.find("2051") != std::string::npos);
            CHECK(msg.find("2049") != std::string::npos);
        }
    }
    SUBCASE("count mismatch") {
        Fixture(2051, 2049, 3).write(dir.path);
        CHECK_THROWS_AS(load_idx(dir.path / "img", dir.path / "lbl"), ConsistencyError);
    }
    SUBCASE("truncated images") {
        Fixture f;
        f.images.resize(f.images.size() - 10);
        f.write(dir.path);
        CHECK_THROWS_AS(load_idx(dir.path / "img", dir.path / "lbl"), IoError);
    }
    SUBCASE("truncated header") {
        Fixture f;
        f.labels.resize(5);
        f.write(dir.path);
        CHECK_THROWS_AS(load_idx(dir.path / "img", dir.path / "lbl"), IoError);
    }
    SUBCASE("missing file") {
        CHECK_THROWS_AS(load_idx(dir.path / "none", dir.path / "none2"), IoError);
    }
}

TEST_CASE("native dataset round trip") {
    TempDir dir;
    Dataset d = small_dataset(25, 1);
    d.provenance = Provenance::FgvAdv;
    d.name = "set";
    save_dataset(d, dir.path / "set.aqds");
    const Dataset back = load_dataset(dir.path / "set.aqds");
    CHECK(back == d);

    const Dataset bytes = d.converted(PixelScale::Byte);
    save_dataset(bytes, dir.path / "bytes.aqds");
    const Dataset bytes_back = load_dataset(dir.path / "bytes.aqds");
    CHECK(bytes_back.scale == PixelScale::Byte);
    CHECK(bytes_back.images == bytes.images);

    CHECK_THROWS_AS(save_dataset(d, ""), IoError);
}

TEST_CASE("native dataset header corruption") {
    TempDir dir;
    save_dataset(small_dataset(3, 2), dir.path / "a.aqds");
    std::vector<unsigned char> bytes;
    {
        std::ifstream in(dir.path / "a.aqds", std::ios::binary);
        bytes.assign(std::istreambuf_iterator<char>(in), {});
    }
    SUBCASE("magic") {
        bytes[3] = 'X';
        write_bytes(dir.path / "b.aqds", bytes);
        CHECK_THROWS_AS(load_dataset(dir.path / "b.aqds"), FormatError);
    }
    SUBCASE("count") {
        bytes[8] = 9;
        write_bytes(dir.path / "b.aqds", bytes);
        CHECK_THROWS_AS(load_dataset(dir.path / "b.aqds"), FormatError);
    }
    SUBCASE("scale tag") {
        bytes[12] = 7;
        write_bytes(dir.path / "b.aqds", bytes);
        CHECK_THROWS_AS(load_dataset(dir.path / "b.aqds"), FormatError);
    }
    SUBCASE("short header") {
        bytes.resize(10);
        write_bytes(dir.path / "b.aqds", bytes);
        CHECK_THROWS_AS(load_dataset(dir.path / "b.aqds"), FormatError);
    }
}

TEST_CASE("fine-tune corpus pools, shuffles and splits") {
    const Dataset source = small_dataset(60, 3);
    const FinetuneSizes sizes{60, 100, 20};
    const TransformSpec spec = TransformSpec::of(TransformKind::Combination, 5);
    const FinetuneSplit a = build_finetune_corpus(source, spec, 9, sizes);
    const FinetuneSplit b = build_finetune_corpus(source, spec, 9, sizes);
    const FinetuneSplit c = build_finetune_corpus(source, spec, 10, sizes);
    CHECK(a.train.size() == 100);
    CHECK(a.validation.size() == 20);
    CHECK(a.train == b.train);
    CHECK(a.validation == b.validation);
    CHECK(a.train.images != c.train.images);
    CHECK(a.train.provenance == Provenance::Mixed);
    CHECK(a.train.scale == PixelScale::Unit);

    auto hist = a.train.label_histogram();
    const auto val_hist = a.validation.label_histogram();
    const auto clean_hist = source.label_histogram();
    for (std::size_t k = 0; k < hist.size(); ++k) CHECK(hist[k] + val_hist[k] == 2 * clean_hist[k]);

    std::size_t clean = 0, transformed = 0;
    for (const Dataset* d : {&a.train, &a.validation})
        for (const Image& image : d->images) {
            bool is_clean = false;
            for (const Image& s : source.images) is_clean |= s == image;
            clean += is_clean;
            transformed += !is_clean;
        }
    CHECK(clean == 60);
    CHECK(transformed == 60);

    CHECK_THROWS_AS(build_finetune_corpus(small_dataset(59, 3), spec, 9, sizes), ContractError);
}

TEST_CASE("official MNIST test files") {
    if (!testing::mnist_available()) {
        MESSAGE("MNIST files not found; skipping");
        return;
    }
    const auto dir = testing::mnist_dir();
    const Dataset test = load_idx(dir / "t10k-images-idx3-ubyte", dir / "t10k-labels-idx1-ubyte");
    CHECK(test.size() == 10000);
    const std::array<std::size_t, 10> expected = {980, 1135, 1032, 1010, 982, 892, 958, 1028, 974, 1009};
    CHECK(test.label_histogram() == expected);
    CHECK_NOTHROW(test.validate());
}
