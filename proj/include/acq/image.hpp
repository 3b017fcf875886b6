#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace acq {

inline constexpr std::size_t kImageSide = 28;
inline constexpr std::size_t kImagePixels = kImageSide * kImageSide;
inline constexpr int kClassCount = 10;

enum class PixelScale : std::uint8_t { Byte = 0, Unit = 1 };

constexpr double scale_max(PixelScale scale) { return scale == PixelScale::Byte ? 255.0 : 1.0; }
std::string_view to_string(PixelScale scale);

/// Single-channel raster, row-major. MNIST digits are 28x28; the transforms
/// accept any size.
struct Image {
    std::size_t rows = kImageSide;
    std::size_t cols = kImageSide;
    std::vector<double> pixels = std::vector<double>(kImagePixels, 0.0);
    PixelScale scale = PixelScale::Unit;
    std::optional<int> label;

    static Image filled(std::size_t rows, std::size_t cols, double value, PixelScale scale = PixelScale::Unit);

    double& at(std::size_t r, std::size_t c) { return pixels[r * cols + c]; }
    double at(std::size_t r, std::size_t c) const { return pixels[r * cols + c]; }
    std::size_t size() const noexcept { return pixels.size(); }

    /// Exact x/255 or x*255 conversion; no-op when already in `target`.
    Image converted(PixelScale target) const;
    Image to_unit() const { return converted(PixelScale::Unit); }
    Image to_byte() const { return converted(PixelScale::Byte); }

    bool in_range() const;
    /// Throws ContractError unless the raster is consistent and within scale bounds.
    void validate() const;

    friend bool operator==(const Image&, const Image&) = default;
};

/// Content hash of pixel bits, dimensions and scale (not the label).
std::uint64_t content_hash(const Image& image);

void require_mnist_size(const Image& image);

/// Plain (P2) graymap with maxval 255; pixels are rounded to gray levels.
std::string to_pgm(const Image& image);

}  // namespace acq
