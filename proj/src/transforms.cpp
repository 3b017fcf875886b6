#include "acq/transforms.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "acq/errors.hpp"
#include "acq/rng.hpp"

namespace acq {

namespace {

constexpr double kCubicA = -0.5;

Image clipped(Image image) {
    const double hi = scale_max(image.scale);
    for (double& v : image.pixels) v = std::clamp(v, 0.0, hi);
    return image;
}

std::size_t clamp_index(long i, std::size_t n) {
    if (i < 0) return 0;
    if (static_cast<std::size_t>(i) >= n) return n - 1;
    return static_cast<std::size_t>(i);
}

std::array<int, 256> byte_histogram(const Image& image) {
    const double factor = image.scale == PixelScale::Byte ? 1.0 : 255.0;
    std::array<int, 256> hist{};
    for (double v : image.pixels) {
        const long bin = std::lround(std::clamp(v * factor, 0.0, 255.0));
        ++hist[static_cast<std::size_t>(bin)];
    }
    return hist;
}

std::string format_double(double v) {
    std::ostringstream out;
    out.precision(17);
    out << v;
    return out.str();
}

}  // namespace

std::string_view to_string(TransformKind kind) {
    switch (kind) {
        case TransformKind::Identity: return "none";
        case TransformKind::Translate: return "translation";
        case TransformKind::Noise: return "noise";
        case TransformKind::Blur: return "blur";
        case TransformKind::CropResize: return "crop-resize";
        case TransformKind::Combination: return "combination";
        case TransformKind::Binarize: return "binarize";
    }
    return "none";
}

std::string_view to_string(CropRegion region) {
    switch (region) {
        case CropRegion::Center: return "center";
        case CropRegion::TopLeft: return "top-left";
        case CropRegion::TopRight: return "top-right";
        case CropRegion::BottomLeft: return "bottom-left";
        case CropRegion::BottomRight: return "bottom-right";
    }
    return "center";
}

std::string_view to_string(NoiseScale scale) { return scale == NoiseScale::Unit ? "unit" : "byte"; }

CropRegion parse_crop_region(std::string_view text) {
    for (CropRegion r : {CropRegion::Center, CropRegion::TopLeft, CropRegion::TopRight, CropRegion::BottomLeft,
                         CropRegion::BottomRight})
        if (to_string(r) == text) return r;
    throw ContractError("unknown crop region '" + std::string(text) + "'");
}

TransformSpec TransformSpec::of(TransformKind kind, std::uint64_t seed) {
    TransformSpec spec;
    spec.kind = kind;
    spec.seed = seed;
    return spec;
}

void TransformSpec::validate() const {
    if (!(noise_stddev >= 0.0)) throw ContractError("noise stddev must be >= 0");
    if (!std::isfinite(noise_mean)) throw ContractError("noise mean must be finite");
    if (blur_width < 1 || blur_height < 1) throw ContractError("blur kernel dimensions must be >= 1");
    if (crop < 1 || crop > kImageSide) throw ContractError("crop size must be in 1..28");
}

std::string TransformSpec::to_text() const {
    std::string text(to_string(kind));
    switch (kind) {
        case TransformKind::Translate: text += " shift=" + std::to_string(shift); break;
        case TransformKind::Noise:
            text += " mean=" + format_double(noise_mean) + " stddev=" + format_double(noise_stddev) +
                    " scale=" + std::string(to_string(noise_scale)) + " seed=" + std::to_string(seed);
            break;
        case TransformKind::Blur:
            text += " width=" + std::to_string(blur_width) + " height=" + std::to_string(blur_height);
            break;
        case TransformKind::CropResize:
            text += " crop=" + std::to_string(crop) + " region=" + std::string(to_string(region));
            break;
        case TransformKind::Combination:
            text += " stddev=" + format_double(noise_stddev) + " scale=" + std::string(to_string(noise_scale)) +
                    " seed=" + std::to_string(seed);
            break;
        case TransformKind::Binarize: text += " threshold=otsu"; break;
        case TransformKind::Identity: break;
    }
    return text;
}

TransformSpec TransformSpec::parse(std::string_view line) {
    std::istringstream in{std::string(line)};
    std::string kind_name;
    in >> kind_name;
    TransformSpec spec;
    bool found = false;
    for (TransformKind k : {TransformKind::Identity, TransformKind::Translate, TransformKind::Noise,
                            TransformKind::Blur, TransformKind::CropResize, TransformKind::Combination,
                            TransformKind::Binarize}) {
        if (to_string(k) == kind_name) {
            spec.kind = k;
            found = true;
        }
    }
    if (!found) throw ContractError("unknown transform '" + kind_name + "'");

    auto to_size = [](const std::string& v) {
        std::size_t out = 0;
        auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
        if (ec != std::errc{} || p != v.data() + v.size()) throw ContractError("bad integer '" + v + "'");
        return out;
    };
    std::string token;
    while (in >> token) {
        const auto eq = token.find('=');
        if (eq == std::string::npos) throw ContractError("expected key=value, got '" + token + "'");
        const std::string key = token.substr(0, eq);
        const std::string value = token.substr(eq + 1);
        if (key == "shift") spec.shift = to_size(value);
        else if (key == "mean") spec.noise_mean = std::stod(value);
        else if (key == "stddev") spec.noise_stddev = std::stod(value);
        else if (key == "scale") {
            if (value == "unit") spec.noise_scale = NoiseScale::Unit;
            else if (value == "byte") spec.noise_scale = NoiseScale::Byte;
            else throw ContractError("noise scale must be unit or byte");
        } else if (key == "seed") spec.seed = std::stoull(value);
        else if (key == "width") spec.blur_width = to_size(value);
        else if (key == "height") spec.blur_height = to_size(value);
        else if (key == "crop") spec.crop = to_size(value);
        else if (key == "region") spec.region = parse_crop_region(value);
        else if (key == "threshold") {
            if (value != "otsu") throw ContractError("only otsu thresholding is supported");
        } else throw ContractError("unknown transform parameter '" + key + "'");
    }
    spec.validate();
    return spec;
}

Image translate_right(const Image& image, std::size_t shift) {
    if (shift >= image.cols)
        throw ContractError("shift " + std::to_string(shift) + " must be smaller than width " +
                            std::to_string(image.cols));
    Image out = image;
    for (std::size_t r = 0; r < image.rows; ++r)
        for (std::size_t c = 0; c < image.cols; ++c) out.at(r, c) = c < shift ? 0.0 : image.at(r, c - shift);
    return out;
}

Image add_noise(const Image& image, double mean, double stddev, std::uint64_t seed, NoiseScale noise_scale) {
    if (!(stddev >= 0.0)) throw ContractError("noise stddev must be >= 0");
    Image out = image.to_unit();
    if (stddev == 0.0 && mean == 0.0) return out;
    const double sigma = noise_scale == NoiseScale::Unit ? stddev : stddev / 255.0;
    const double mu = noise_scale == NoiseScale::Unit ? mean : mean / 255.0;
    Rng rng(seed);
    for (double& v : out.pixels) v += mu + sigma * rng.normal();
    return clipped(std::move(out));
}

Image blur(const Image& image, std::size_t width, std::size_t height) {
    if (width < 1 || height < 1) throw ContractError("blur kernel dimensions must be >= 1");
    if (width > image.cols || height > image.rows)
        throw ContractError("blur kernel " + std::to_string(width) + "x" + std::to_string(height) +
                            " larger than image " + std::to_string(image.cols) + "x" + std::to_string(image.rows));
    const Image src = image.to_unit();
    Image out = src;
    const double norm = 1.0 / static_cast<double>(width * height);
    for (std::size_t r = 0; r < src.rows; ++r)
        for (std::size_t c = 0; c < src.cols; ++c) {
            double acc = 0.0;
            for (std::size_t i = 0; i < height; ++i)
                for (std::size_t j = 0; j < width; ++j)
                    acc += src.at(std::min(r + i, src.rows - 1), std::min(c + j, src.cols - 1));
            out.at(r, c) = acc * norm;
        }
    return clipped(std::move(out));
}

double cubic_weight(double t) {
    t = std::abs(t);
    if (t <= 1.0) return ((kCubicA + 2.0) * t - (kCubicA + 3.0)) * t * t + 1.0;
    if (t < 2.0) return ((kCubicA * t - 5.0 * kCubicA) * t + 8.0 * kCubicA) * t - 4.0 * kCubicA;
    return 0.0;
}

double sample_bicubic(const Image& image, double y, double x) {
    const double fy = std::floor(y), fx = std::floor(x);
    const double dy = y - fy, dx = x - fx;
    const long iy = static_cast<long>(fy), ix = static_cast<long>(fx);
    const std::array<double, 4> wy = {cubic_weight(dy + 1.0), cubic_weight(dy), cubic_weight(1.0 - dy),
                                      cubic_weight(2.0 - dy)};
    const std::array<double, 4> wx = {cubic_weight(dx + 1.0), cubic_weight(dx), cubic_weight(1.0 - dx),
                                      cubic_weight(2.0 - dx)};
    double acc = 0.0;
    for (long i = 0; i < 4; ++i) {
        const std::size_t row = clamp_index(iy - 1 + i, image.rows);
        double row_acc = 0.0;
        for (long j = 0; j < 4; ++j) row_acc += wx[j] * image.at(row, clamp_index(ix - 1 + j, image.cols));
        acc += wy[i] * row_acc;
    }
    return acc;
}

Image resize_bicubic(const Image& image, std::size_t rows, std::size_t cols) {
    if (rows == 0 || cols == 0) throw ContractError("resize target must be non-empty");
    Image out = Image::filled(rows, cols, 0.0, image.scale);
    out.label = image.label;
    const double sy = static_cast<double>(image.rows) / static_cast<double>(rows);
    const double sx = static_cast<double>(image.cols) / static_cast<double>(cols);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c)
            out.at(r, c) = sample_bicubic(image, (static_cast<double>(r) + 0.5) * sy - 0.5,
                                          (static_cast<double>(c) + 0.5) * sx - 0.5);
    return out;
}

CropOffset crop_offset(const Image& image, std::size_t crop, CropRegion region) {
    if (crop < 1 || crop > image.rows || crop > image.cols)
        throw ContractError("crop " + std::to_string(crop) + " does not fit a " + std::to_string(image.rows) + "x" +
                            std::to_string(image.cols) + " image");
    const double last_row = static_cast<double>(image.rows - crop);
    const double last_col = static_cast<double>(image.cols - crop);
    switch (region) {
        case CropRegion::Center: return {last_row / 2.0, last_col / 2.0};
        case CropRegion::TopLeft: return {0.0, 0.0};
        case CropRegion::TopRight: return {0.0, last_col};
        case CropRegion::BottomLeft: return {last_row, 0.0};
        case CropRegion::BottomRight: return {last_row, last_col};
    }
    throw ContractError("invalid crop region");
}

Image crop_resize(const Image& image, std::size_t crop, CropRegion region) {
    const CropOffset offset = crop_offset(image, crop, region);
    const Image src = image.to_unit();
    Image patch = Image::filled(crop, crop, 0.0, PixelScale::Unit);
    for (std::size_t r = 0; r < crop; ++r)
        for (std::size_t c = 0; c < crop; ++c)
            patch.at(r, c) = sample_bicubic(src, offset.row + static_cast<double>(r), offset.col + static_cast<double>(c));
    Image out = resize_bicubic(patch, image.rows, image.cols);
    out.label = image.label;
    return clipped(std::move(out));
}

Image combination(const Image& image, std::uint64_t seed, double noise_stddev, NoiseScale noise_scale) {
    Image out = translate_right(image.to_unit(), 1);
    out = add_noise(out, 0.0, noise_stddev, seed, noise_scale);
    out = blur(out, 2, 1);
    return crop_resize(out, 27, CropRegion::Center);
}

int otsu_threshold(const Image& image) {
    const auto hist = byte_histogram(image);
    if (std::count_if(hist.begin(), hist.end(), [](int n) { return n > 0; }) < 2)
        throw DegenerateInputError("otsu threshold needs at least two distinct gray levels");
    // w0 w1 (mu0 - mu1)^2 = (s0 n1 - s1 n0)^2 / (N^2 n0 n1); compared exactly as fractions.
    using Wide = __int128;
    std::int64_t total = 0, total_sum = 0;
    for (std::size_t b = 0; b < hist.size(); ++b) {
        total += hist[b];
        total_sum += static_cast<std::int64_t>(b) * hist[b];
    }
    std::int64_t n0 = 0, s0 = 0;
    Wide best_num = -1, best_den = 1;
    int best_t = 0;
    for (int t = 0; t < 256; ++t) {
        n0 += hist[static_cast<std::size_t>(t)];
        s0 += static_cast<std::int64_t>(t) * hist[static_cast<std::size_t>(t)];
        const std::int64_t n1 = total - n0, s1 = total_sum - s0;
        if (n0 == 0 || n1 == 0) continue;
        const Wide diff = static_cast<Wide>(s0) * n1 - static_cast<Wide>(s1) * n0;
        const Wide num = diff * diff;
        const Wide den = static_cast<Wide>(n0) * n1;
        if (best_num < 0 || num * best_den > best_num * den) {
            best_num = num;
            best_den = den;
            best_t = t;
        }
    }
    return best_t;
}

Image binarize(const Image& image) {
    const int t = otsu_threshold(image);
    const double factor = image.scale == PixelScale::Byte ? 1.0 : 255.0;
    Image out = image;
    out.scale = PixelScale::Byte;
    for (double& v : out.pixels) v = std::lround(std::clamp(v * factor, 0.0, 255.0)) > t ? 255.0 : 0.0;
    return out;
}

std::uint64_t image_seed(const TransformSpec& spec, const Image& image) {
    return mix_seed(spec.seed, content_hash(image));
}

Image apply_transform(const TransformSpec& spec, const Image& image) {
    switch (spec.kind) {
        case TransformKind::Identity: return image;
        case TransformKind::Translate: return translate_right(image.to_unit(), spec.shift);
        case TransformKind::Noise:
            return add_noise(image, spec.noise_mean, spec.noise_stddev, image_seed(spec, image), spec.noise_scale);
        case TransformKind::Blur: return blur(image, spec.blur_width, spec.blur_height);
        case TransformKind::CropResize: return crop_resize(image, spec.crop, spec.region);
        case TransformKind::Combination: return combination(image, image_seed(spec, image), spec.noise_stddev, spec.noise_scale);
        case TransformKind::Binarize: return binarize(image);
    }
    return image;
}

}  // namespace acq
