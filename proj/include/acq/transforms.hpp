#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>

#include "acq/image.hpp"

namespace acq {

enum class TransformKind { Identity, Translate, Noise, Blur, CropResize, Combination, Binarize };

enum class CropRegion { Center, TopLeft, TopRight, BottomLeft, BottomRight };

/// How the noise standard deviation is read: as a fraction of full range
/// (Unit) or in gray levels (Byte, i.e. divided by 255 before use).
enum class NoiseScale { Unit, Byte };

std::string_view to_string(TransformKind kind);
std::string_view to_string(CropRegion region);
std::string_view to_string(NoiseScale scale);
CropRegion parse_crop_region(std::string_view text);

struct TransformSpec {
    TransformKind kind = TransformKind::Identity;
    std::size_t shift = 1;
    double noise_mean = 0.0;
    double noise_stddev = 0.25;
    NoiseScale noise_scale = NoiseScale::Unit;
    std::size_t blur_width = 2;
    std::size_t blur_height = 1;
    std::size_t crop = 27;
    CropRegion region = CropRegion::Center;
    /// Master seed for the stochastic kinds; each image draws from
    /// mix_seed(seed, content_hash(image)).
    std::uint64_t seed = 0;

    static TransformSpec of(TransformKind kind, std::uint64_t seed = 0);

    void validate() const;
    /// One line: kind followed by its named parameters, e.g. `noise mean=0 stddev=0.25 scale=unit seed=7`.
    std::string to_text() const;
    static TransformSpec parse(std::string_view line);

    friend bool operator==(const TransformSpec&, const TransformSpec&) = default;
};

/// Column j of the output is column j-shift of the input; the first `shift` columns are black.
Image translate_right(const Image& image, std::size_t shift = 1);

/// clip(image + N(mean, stddev)) per pixel in Unit scale; output is Unit scale.
Image add_noise(const Image& image, double mean, double stddev, std::uint64_t seed,
                NoiseScale noise_scale = NoiseScale::Unit);

/// Normalized box filter, window `width` x `height` anchored at its top-left
/// cell, replicated edges.
Image blur(const Image& image, std::size_t width = 2, std::size_t height = 1);

/// Keys cubic convolution kernel with a = -0.5.
double cubic_weight(double t);

/// Bicubic sample at fractional (y, x), replicated borders.
double sample_bicubic(const Image& image, double y, double x);

/// Bicubic resample to rows x cols using pixel-center alignment.
Image resize_bicubic(const Image& image, std::size_t rows, std::size_t cols);

/// Top-left offset of a `crop`-sized region. The center of an odd margin is
/// fractional (0.5 for 27 in 28) and is sampled bicubically.
struct CropOffset {
    double row = 0.0;
    double col = 0.0;
};
CropOffset crop_offset(const Image& image, std::size_t crop, CropRegion region);

/// Extract the crop x crop region and resize it back to the input size, clipped to range.
Image crop_resize(const Image& image, std::size_t crop = 27, CropRegion region = CropRegion::Center);

/// translate_right(1) -> add_noise(0, 0.25, seed) -> blur(2,1) -> crop_resize(27, center).
Image combination(const Image& image, std::uint64_t seed, double noise_stddev = 0.25,
                  NoiseScale noise_scale = NoiseScale::Unit);

/// Otsu threshold over the 256-bin byte histogram; smallest maximizer wins.
int otsu_threshold(const Image& image);

/// Pixels whose rounded byte value exceeds the Otsu threshold become 255, the rest 0. Byte scale.
Image binarize(const Image& image);

std::uint64_t image_seed(const TransformSpec& spec, const Image& image);

/// Applies `spec`; stochastic kinds seed from image_seed(spec, image). Labels are preserved.
Image apply_transform(const TransformSpec& spec, const Image& image);

}  // namespace acq
