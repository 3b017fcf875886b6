#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "acq/image.hpp"
#include "acq/transforms.hpp"

namespace acq {

enum class Provenance : std::uint8_t { MnistTrain = 0, MnistTest = 1, FgsAdv = 2, FgvAdv = 3, Transformed = 4, Mixed = 5 };

std::string_view to_string(Provenance provenance);

struct Dataset {
    std::string name;
    Provenance provenance = Provenance::MnistTest;
    PixelScale scale = PixelScale::Byte;
    std::vector<Image> images;

    std::size_t size() const noexcept { return images.size(); }
    bool empty() const noexcept { return images.empty(); }
    std::array<std::size_t, kClassCount> label_histogram() const;
    /// Every image is 28x28, labelled, in range and in the dataset's scale.
    void validate() const;
    Dataset converted(PixelScale target) const;

    friend bool operator==(const Dataset&, const Dataset&) = default;
};

/// Reads an MNIST IDX image/label pair (big-endian headers, unsigned bytes). Byte scale.
Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                 Provenance provenance = Provenance::MnistTest);

/// Native container: "AQDS0001", u32 count, scale byte, provenance byte, then
/// per image a label byte and 784 little-endian doubles.
void save_dataset(const Dataset& dataset, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

struct FinetuneSplit {
    Dataset train;
    Dataset validation;
};

struct FinetuneSizes {
    std::size_t source = 60000;
    std::size_t train = 100000;
    std::size_t validation = 20000;
};

/// Pools every clean source image with one transformed copy, shuffles the pool
/// with `seed` and splits it into train and validation. Output is Unit scale.
FinetuneSplit build_finetune_corpus(const Dataset& source, const TransformSpec& transform, std::uint64_t seed,
                                    FinetuneSizes sizes = {});

}  // namespace acq
