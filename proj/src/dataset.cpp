#include "acq/dataset.hpp"

#include <bit>
#include <fstream>
#include <iterator>
#include <numeric>

#include "acq/errors.hpp"
#include "acq/rng.hpp"

namespace acq {

namespace {

constexpr std::uint32_t kIdxImagesMagic = 2051;
constexpr std::uint32_t kIdxLabelsMagic = 2049;
constexpr char kNativeMagic[8] = {'A', 'Q', 'D', 'S', '0', '0', '0', '1'};

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

class ByteReader {
public:
    ByteReader(const std::vector<unsigned char>& bytes, std::string source) : bytes_(bytes), source_(std::move(source)) {}

    void need(std::size_t n) const {
        if (pos_ + n > bytes_.size())
            throw IoError(source_ + " is truncated at byte " + std::to_string(bytes_.size()));
    }
    std::uint32_t be32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v = (v << 8) | bytes_[pos_++];
        return v;
    }
    std::uint32_t le32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_++]) << (8 * i);
        return v;
    }
    double le_double() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_++]) << (8 * i);
        return std::bit_cast<double>(v);
    }
    unsigned char byte() {
        need(1);
        return bytes_[pos_++];
    }
    std::size_t remaining() const { return bytes_.size() - pos_; }
    const unsigned char* cursor() const { return bytes_.data() + pos_; }
    void skip(std::size_t n) {
        need(n);
        pos_ += n;
    }

private:
    const std::vector<unsigned char>& bytes_;
    std::string source_;
    std::size_t pos_ = 0;
};

void put_le32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_le_double(std::string& out, double d) {
    const auto v = std::bit_cast<std::uint64_t>(d);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

}  // namespace

std::string_view to_string(Provenance provenance) {
    switch (provenance) {
        case Provenance::MnistTrain: return "mnist_train";
        case Provenance::MnistTest: return "mnist_test";
        case Provenance::FgsAdv: return "fgs_adv";
        case Provenance::FgvAdv: return "fgv_adv";
        case Provenance::Transformed: return "transformed";
        case Provenance::Mixed: return "mixed";
    }
    return "mixed";
}

std::array<std::size_t, kClassCount> Dataset::label_histogram() const {
    std::array<std::size_t, kClassCount> hist{};
    for (const Image& image : images)
        if (image.label) ++hist[static_cast<std::size_t>(*image.label)];
    return hist;
}

void Dataset::validate() const {
    for (std::size_t i = 0; i < images.size(); ++i) {
        const Image& image = images[i];
        require_mnist_size(image);
        image.validate();
        if (image.scale != scale) throw ContractError("image " + std::to_string(i) + " scale differs from dataset");
        if (!image.label) throw ContractError("image " + std::to_string(i) + " has no label");
    }
}

Dataset Dataset::converted(PixelScale target) const {
    Dataset out = *this;
    out.scale = target;
    for (Image& image : out.images) image = image.converted(target);
    return out;
}

Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                 Provenance provenance) {
    const auto image_bytes = read_file(images_path);
    const auto label_bytes = read_file(labels_path);
    ByteReader images(image_bytes, images_path.string());
    ByteReader labels(label_bytes, labels_path.string());

    const std::uint32_t image_magic = images.be32();
    if (image_magic != kIdxImagesMagic)
        throw FormatError(images_path.string() + ": expected IDX magic " + std::to_string(kIdxImagesMagic) + ", got " +
                          std::to_string(image_magic));
    const std::uint32_t label_magic = labels.be32();
    if (label_magic != kIdxLabelsMagic)
        throw FormatError(labels_path.string() + ": expected IDX magic " + std::to_string(kIdxLabelsMagic) + ", got " +
                          std::to_string(label_magic));

    const std::uint32_t count = images.be32();
    const std::uint32_t rows = images.be32();
    const std::uint32_t cols = images.be32();
    const std::uint32_t label_count = labels.be32();
    if (count != label_count)
        throw ConsistencyError("image file holds " + std::to_string(count) + " images but label file holds " +
                               std::to_string(label_count) + " labels");
    if (rows != kImageSide || cols != kImageSide)
        throw FormatError("expected 28x28 images, got " + std::to_string(rows) + "x" + std::to_string(cols));

    images.need(static_cast<std::size_t>(count) * kImagePixels);
    labels.need(count);

    Dataset dataset;
    dataset.name = images_path.filename().string();
    dataset.provenance = provenance;
    dataset.scale = PixelScale::Byte;
    dataset.images.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        Image image;
        image.scale = PixelScale::Byte;
        const unsigned char* src = images.cursor();
        for (std::size_t p = 0; p < kImagePixels; ++p) image.pixels[p] = src[p];
        images.skip(kImagePixels);
        const unsigned char label = labels.byte();
        if (label >= kClassCount)
            throw FormatError(labels_path.string() + ": label " + std::to_string(label) + " at index " +
                              std::to_string(i) + " outside 0..9");
        image.label = label;
        dataset.images.push_back(std::move(image));
    }
    return dataset;
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& path) {
    if (path.empty()) throw IoError("cannot write dataset to an empty path");
    dataset.validate();
    std::string out(kNativeMagic, sizeof kNativeMagic);
    out.reserve(out.size() + 6 + dataset.size() * (1 + 8 * kImagePixels));
    put_le32(out, static_cast<std::uint32_t>(dataset.size()));
    out.push_back(static_cast<char>(dataset.scale));
    out.push_back(static_cast<char>(dataset.provenance));
    for (const Image& image : dataset.images) {
        out.push_back(static_cast<char>(*image.label));
        for (double v : image.pixels) put_le_double(out, v);
    }
    std::ofstream file(path, std::ios::binary | std::ios::trunc);
    if (!file) throw IoError("cannot open " + path.string() + " for writing");
    file.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!file) throw IoError("failed writing " + path.string());
}

Dataset load_dataset(const std::filesystem::path& path) {
    const auto bytes = read_file(path);
    if (bytes.size() < sizeof kNativeMagic || !std::equal(std::begin(kNativeMagic), std::end(kNativeMagic), bytes.begin()))
        throw FormatError(path.string() + ": not an AQDS0001 dataset file");
    ByteReader in(bytes, path.string());
    in.skip(sizeof kNativeMagic);
    std::uint32_t count = 0;
    unsigned char scale_tag = 0, provenance_tag = 0;
    try {
        count = in.le32();
        scale_tag = in.byte();
        provenance_tag = in.byte();
    } catch (const IoError&) {
        throw FormatError(path.string() + ": header is truncated");
    }
    if (scale_tag > 1) throw FormatError(path.string() + ": unknown scale tag " + std::to_string(scale_tag));
    if (provenance_tag > 5) throw FormatError(path.string() + ": unknown provenance tag " + std::to_string(provenance_tag));
    const std::size_t record = 1 + 8 * kImagePixels;
    if (in.remaining() != static_cast<std::size_t>(count) * record)
        throw FormatError(path.string() + ": header declares " + std::to_string(count) + " images but payload holds " +
                          std::to_string(in.remaining()) + " bytes");

    Dataset dataset;
    dataset.name = path.stem().string();
    dataset.scale = static_cast<PixelScale>(scale_tag);
    dataset.provenance = static_cast<Provenance>(provenance_tag);
    dataset.images.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        Image image;
        image.scale = dataset.scale;
        const unsigned char label = in.byte();
        if (label >= kClassCount) throw FormatError(path.string() + ": label out of range at " + std::to_string(i));
        image.label = label;
        for (double& v : image.pixels) v = in.le_double();
        dataset.images.push_back(std::move(image));
    }
    return dataset;
}

FinetuneSplit build_finetune_corpus(const Dataset& source, const TransformSpec& transform, std::uint64_t seed,
                                    FinetuneSizes sizes) {
    if (source.size() != sizes.source)
        throw ContractError("fine-tune corpus expects " + std::to_string(sizes.source) + " source images, got " +
                            std::to_string(source.size()));
    if (sizes.train + sizes.validation != 2 * sizes.source)
        throw ContractError("train + validation sizes must equal twice the source size");
    transform.validate();

    std::vector<Image> pool;
    pool.reserve(2 * source.size());
    for (const Image& image : source.images) pool.push_back(image.to_unit());
    for (const Image& image : source.images) {
        Image transformed = apply_transform(transform, image).to_unit();
        transformed.label = image.label;
        pool.push_back(std::move(transformed));
    }
    Rng rng(seed);
    rng.shuffle(std::span<Image>(pool));

    FinetuneSplit split;
    split.train.name = "finetune_train";
    split.validation.name = "finetune_validation";
    for (Dataset* d : {&split.train, &split.validation}) {
        d->provenance = Provenance::Mixed;
        d->scale = PixelScale::Unit;
    }
    split.train.images.assign(std::make_move_iterator(pool.begin()),
                              std::make_move_iterator(pool.begin() + static_cast<std::ptrdiff_t>(sizes.train)));
    split.validation.images.assign(std::make_move_iterator(pool.begin() + static_cast<std::ptrdiff_t>(sizes.train)),
                                   std::make_move_iterator(pool.end()));
    return split;
}

}  // namespace acq
