#include "acq/image.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <string>

#include "acq/errors.hpp"
#include "acq/rng.hpp"

namespace acq {

std::string_view to_string(PixelScale scale) { return scale == PixelScale::Byte ? "byte" : "unit"; }

Image Image::filled(std::size_t rows, std::size_t cols, double value, PixelScale scale) {
    Image image;
    image.rows = rows;
    image.cols = cols;
    image.pixels.assign(rows * cols, value);
    image.scale = scale;
    return image;
}

Image Image::converted(PixelScale target) const {
    if (target == scale) return *this;
    Image out = *this;
    out.scale = target;
    if (target == PixelScale::Unit)
        for (double& v : out.pixels) v /= 255.0;
    else
        for (double& v : out.pixels) v *= 255.0;
    return out;
}

bool Image::in_range() const {
    const double hi = scale_max(scale);
    return std::all_of(pixels.begin(), pixels.end(), [hi](double v) { return v >= 0.0 && v <= hi; });
}

void Image::validate() const {
    if (rows == 0 || cols == 0 || pixels.size() != rows * cols)
        throw ContractError("image raster " + std::to_string(rows) + "x" + std::to_string(cols) + " holds " +
                            std::to_string(pixels.size()) + " pixels");
    if (!in_range()) throw ContractError("image pixels outside " + std::string(to_string(scale)) + " scale bounds");
    if (label && (*label < 0 || *label >= kClassCount))
        throw ContractError("image label " + std::to_string(*label) + " outside 0..9");
}

std::uint64_t content_hash(const Image& image) {
    std::uint64_t hash = 0xcbf29ce484222325ULL;
    auto feed = [&hash](std::uint64_t word) {
        std::array<unsigned char, 8> bytes{};
        for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>(word >> (8 * i));
        hash = fnv1a(bytes, hash);
    };
    feed(image.rows);
    feed(image.cols);
    feed(static_cast<std::uint64_t>(image.scale));
    for (double v : image.pixels) feed(std::bit_cast<std::uint64_t>(v));
    return hash;
}

void require_mnist_size(const Image& image) {
    if (image.rows != kImageSide || image.cols != kImageSide || image.pixels.size() != kImagePixels)
        throw ContractError("expected a 28x28 image, got " + std::to_string(image.rows) + "x" +
                            std::to_string(image.cols));
}

std::string to_pgm(const Image& image) {
    const Image bytes = image.to_byte();
    std::string out = "P2\n" + std::to_string(image.cols) + " " + std::to_string(image.rows) + "\n255\n";
    for (std::size_t r = 0; r < image.rows; ++r) {
        for (std::size_t c = 0; c < image.cols; ++c) {
            if (c) out += ' ';
            out += std::to_string(static_cast<int>(std::lround(std::clamp(bytes.at(r, c), 0.0, 255.0))));
        }
        out += '\n';
    }
    return out;
}

}  // namespace acq
