#include "acq/lenet.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <numeric>
#include <optional>
#include <sstream>

#include "acq/errors.hpp"
#include "acq/graph.hpp"
#include "acq/rng.hpp"

namespace acq {

namespace {

constexpr char kCheckpointMagic[8] = {'A', 'Q', 'N', 'N', '0', '0', '0', '1'};
constexpr std::size_t kInferenceBatch = 64;

// LeNet graph over borrowed model parameters.
struct NetGraph {
    Graph graph;
    NodeId input;
    std::vector<NodeId> params;
    NodeId logits;
    NodeId loss;
    std::size_t batch;

    NetGraph(const LeNet& model, std::size_t batch_size, bool param_grads, bool input_grad) : batch(batch_size) {
        input = graph.input(Tensor({batch, 1, kImageSide, kImageSide}), input_grad);
        for (const auto& p : model.parameters()) params.push_back(graph.parameter(p.value, param_grads));
        auto conv1 = graph.conv2d(input, params[0], params[1]);
        auto pool1 = graph.maxpool2x2(conv1);
        auto conv2 = graph.conv2d(pool1, params[2], params[3]);
        auto pool2 = graph.maxpool2x2(conv2);
        auto hidden = graph.relu(graph.dense(graph.flatten(pool2), params[4], params[5]));
        logits = graph.dense(hidden, params[6], params[7]);
        loss = graph.softmax_cross_entropy(logits, std::vector<int>(batch, 0));
    }

    // Copies images (as Unit scale) into the input tensor, in order.
    template <typename ImageAt>
    void load(std::size_t count, ImageAt image_at) {
        Tensor& x = graph.mutable_input(input);
        for (std::size_t n = 0; n < count; ++n) {
            const Image& image = image_at(n);
            require_mnist_size(image);
            const double factor = image.scale == PixelScale::Byte ? 255.0 : 1.0;
            double* dst = x.raw() + n * kImagePixels;
            if (factor == 1.0)
                std::copy(image.pixels.begin(), image.pixels.end(), dst);
            else
                for (std::size_t p = 0; p < kImagePixels; ++p) dst[p] = image.pixels[p] / factor;
        }
    }
};

Prediction prediction_from(const NetGraph& net, std::size_t row) {
    const Tensor& logits = net.graph.value(net.logits);
    const std::size_t classes = logits.dim(1);
    Prediction out;
    out.logits = Tensor({classes}, std::vector<double>(logits.data().begin() + row * classes,
                                                        logits.data().begin() + (row + 1) * classes));
    const Tensor probs = net.graph.probabilities(net.loss);
    out.probabilities = Tensor({classes}, std::vector<double>(probs.data().begin() + row * classes,
                                                               probs.data().begin() + (row + 1) * classes));
    out.label = static_cast<int>(std::max_element(out.logits.data().begin(), out.logits.data().end()) -
                                 out.logits.data().begin());
    return out;
}

double accuracy_of(const LeNet& model, const Dataset& data) {
    if (data.empty()) return 0.0;
    const auto predictions = predict_batch(model, data.images);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < predictions.size(); ++i)
        if (predictions[i].label == data.images[i].label.value_or(-1)) ++correct;
    return static_cast<double>(correct) / static_cast<double>(data.size());
}

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

const std::vector<std::pair<std::string, Shape>>& LeNet::architecture() {
    static const std::vector<std::pair<std::string, Shape>> layers = {
        {"conv1.weight", {20, 1, 5, 5}}, {"conv1.bias", {20}},      {"conv2.weight", {50, 20, 5, 5}},
        {"conv2.bias", {50}},            {"fc1.weight", {800, 500}}, {"fc1.bias", {500}},
        {"fc2.weight", {500, 10}},       {"fc2.bias", {10}},
    };
    return layers;
}

LeNet LeNet::build(std::uint64_t seed) {
    LeNet model;
    Rng rng(seed);
    for (const auto& [name, shape] : architecture()) {
        Tensor value(shape);
        if (shape.size() > 1) {
            // Fan-in: everything but the output dimension.
            const std::size_t fan_in = shape.size() == 4 ? shape[1] * shape[2] * shape[3] : shape[0];
            const double bound = std::sqrt(3.0 / static_cast<double>(fan_in));
            for (double& v : value.data()) v = (2.0 * rng.uniform() - 1.0) * bound;
        }
        model.parameters_.push_back({name, std::move(value)});
    }
    model.metadata_["init_seed"] = std::to_string(seed);
    return model;
}

std::size_t LeNet::parameter_count() const {
    std::size_t total = 0;
    for (const auto& p : parameters_) total += p.value.size();
    return total;
}

void LeNet::validate() const {
    const auto& arch = architecture();
    if (parameters_.size() != arch.size())
        throw ContractError("LeNet expects " + std::to_string(arch.size()) + " parameter tensors, got " +
                            std::to_string(parameters_.size()));
    for (std::size_t i = 0; i < arch.size(); ++i) {
        if (parameters_[i].name != arch[i].first || parameters_[i].value.shape() != arch[i].second)
            throw ContractError("parameter " + std::to_string(i) + " is " + parameters_[i].name + " " +
                                to_string(parameters_[i].value.shape()) + ", expected " + arch[i].first + " " +
                                to_string(arch[i].second));
    }
}

TrainConfig TrainConfig::finetune_defaults() {
    TrainConfig config;
    config.epochs = 3;
    config.learning_rate = 0.001;
    return config;
}

void TrainConfig::validate() const {
    if (epochs < 0) throw ContractError("epochs must be >= 0");
    if (batch_size == 0) throw ContractError("batch size must be positive");
    if (!(learning_rate > 0.0)) throw ContractError("learning rate must be positive");
    if (!(lr_gamma > 0.0) || !(lr_power > 0.0)) throw ContractError("learning-rate schedule parameters must be positive");
    if (!(momentum > 0.0)) throw ContractError("momentum must be positive");
    if (!(weight_decay >= 0.0)) throw ContractError("weight decay must be >= 0");
}

TrainResult train(LeNet model, const Dataset& data, const TrainConfig& config, const Dataset* validation,
                  const EpochCallback& on_epoch) {
    config.validate();
    model.validate();
    if (data.empty()) throw ContractError("cannot train on an empty dataset");

    TrainResult result;
    const std::size_t n = data.size();
    const std::size_t full_batches = n / config.batch_size;
    const std::size_t tail = n % config.batch_size;
    NetGraph net(model, config.batch_size, true, false);
    std::optional<NetGraph> tail_net;
    if (tail) tail_net.emplace(model, tail, true, false);

    std::vector<Tensor> velocity;
    for (const auto& p : model.parameters()) velocity.emplace_back(p.value.shape());

    std::vector<std::size_t> order(n);
    std::size_t iteration = 0;
    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        const auto started = std::chrono::steady_clock::now();
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng rng(mix_seed(config.seed, static_cast<std::uint64_t>(epoch)));
        rng.shuffle(std::span<std::size_t>(order));

        double loss_sum = 0.0;
        std::size_t steps = 0;
        for (std::size_t b = 0; b < full_batches + (tail ? 1 : 0); ++b) {
            NetGraph& g = b < full_batches ? net : *tail_net;
            const std::size_t begin = b * config.batch_size;
            g.load(g.batch, [&](std::size_t i) -> const Image& { return data.images[order[begin + i]]; });
            std::vector<int> labels(g.batch);
            for (std::size_t i = 0; i < g.batch; ++i) labels[i] = data.images[order[begin + i]].label.value();
            g.graph.set_labels(g.loss, std::move(labels));
            g.graph.forward();
            const double loss = g.graph.value(g.loss)[0];
            if (!std::isfinite(loss)) throw TrainingError("training loss diverged", epoch);
            g.graph.backward(g.loss);

            const double lr =
                config.learning_rate * std::pow(1.0 + config.lr_gamma * static_cast<double>(iteration), -config.lr_power);
            for (std::size_t p = 0; p < model.parameters().size(); ++p) {
                Tensor& w = model.parameters()[p].value;
                const Tensor& grad = g.graph.grad(g.params[p]);
                Tensor& v = velocity[p];
                for (std::size_t i = 0; i < w.size(); ++i) {
                    v[i] = config.momentum * v[i] + lr * (grad[i] + config.weight_decay * w[i]);
                    w[i] -= v[i];
                }
            }
            loss_sum += loss;
            ++steps;
            ++iteration;
        }

        EpochReport report;
        report.epoch = epoch;
        report.train_loss = loss_sum / static_cast<double>(steps);
        if (!std::isfinite(report.train_loss) || !std::all_of(model.parameters().begin(), model.parameters().end(),
                                                               [](const auto& p) { return p.value.all_finite(); }))
            throw TrainingError("parameters diverged", epoch);
        if (validation) report.validation_accuracy = accuracy_of(model, *validation);
        report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
        result.epochs.push_back(report);
        if (on_epoch) on_epoch(report);
    }

    model.metadata()["seed"] = std::to_string(config.seed);
    const auto prior = model.metadata().find("epochs");
    const int prior_epochs = prior == model.metadata().end() ? 0 : std::stoi(prior->second);
    model.metadata()["epochs"] = std::to_string(prior_epochs + config.epochs);
    result.model = std::move(model);
    return result;
}

TrainResult finetune(LeNet model, const FinetuneSplit& corpus, const TrainConfig& config, const EpochCallback& on_epoch) {
    config.validate();
    if (config.epochs == 0) return {std::move(model), {}};
    TrainResult result = train(std::move(model), corpus.train, config, &corpus.validation, on_epoch);
    result.model.metadata()["finetune_seed"] = std::to_string(config.seed);
    if (!result.epochs.empty())
        result.model.metadata()["validation_accuracy"] = format_double(result.epochs.back().validation_accuracy);
    return result;
}

Prediction predict(const LeNet& model, const Image& image) {
    require_mnist_size(image);
    NetGraph net(model, 1, false, false);
    net.load(1, [&](std::size_t) -> const Image& { return image; });
    net.graph.forward();
    return prediction_from(net, 0);
}

std::vector<Prediction> predict_batch(const LeNet& model, std::span<const Image> images) {
    std::vector<Prediction> out;
    out.reserve(images.size());
    std::optional<NetGraph> full;
    for (std::size_t begin = 0; begin < images.size(); begin += kInferenceBatch) {
        const std::size_t count = std::min(kInferenceBatch, images.size() - begin);
        std::optional<NetGraph> partial;
        NetGraph* net = nullptr;
        if (count == kInferenceBatch) {
            if (!full) full.emplace(model, kInferenceBatch, false, false);
            net = &*full;
        } else {
            partial.emplace(model, count, false, false);
            net = &*partial;
        }
        net->load(count, [&](std::size_t i) -> const Image& { return images[begin + i]; });
        net->graph.forward();
        for (std::size_t i = 0; i < count; ++i) out.push_back(prediction_from(*net, i));
    }
    return out;
}

Tensor input_gradient(const LeNet& model, const Image& image, int label) {
    require_mnist_size(image);
    NetGraph net(model, 1, false, true);
    net.load(1, [&](std::size_t) -> const Image& { return image; });
    net.graph.set_labels(net.loss, {label});
    net.graph.forward();
    net.graph.backward(net.loss);
    return net.graph.grad(net.input).reshaped({kImageSide, kImageSide});
}

std::string serialize_checkpoint(const LeNet& model) {
    model.validate();
    std::string out(kCheckpointMagic, sizeof kCheckpointMagic);
    auto put32 = [&out](std::uint32_t v) {
        for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    };
    put32(static_cast<std::uint32_t>(model.parameters().size()));
    for (const auto& p : model.parameters()) {
        put32(static_cast<std::uint32_t>(p.name.size()));
        out += p.name;
        put32(static_cast<std::uint32_t>(p.value.rank()));
        for (std::size_t d : p.value.shape()) put32(static_cast<std::uint32_t>(d));
        for (double v : p.value.data()) {
            const auto bits = std::bit_cast<std::uint64_t>(v);
            for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
        }
    }
    std::string text;
    for (const auto& [key, value] : model.metadata()) text += key + "=" + value + "\n";
    put32(static_cast<std::uint32_t>(text.size()));
    out += text;
    return out;
}

LeNet deserialize_checkpoint(const std::string& bytes, const std::string& source) {
    if (bytes.size() < sizeof kCheckpointMagic || bytes.compare(0, 4, "AQNN") != 0)
        throw FormatError(source + ": not an AQNN checkpoint");
    if (bytes.compare(0, 8, std::string(kCheckpointMagic, 8)) != 0)
        throw FormatError(source + ": unsupported checkpoint version '" + bytes.substr(4, 4) + "', expected 0001");
    std::size_t pos = sizeof kCheckpointMagic;
    auto need = [&](std::size_t n) {
        if (pos + n > bytes.size()) throw FormatError(source + ": checkpoint is truncated");
    };
    auto get32 = [&]() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[pos++])) << (8 * i);
        return v;
    };

    LeNet model;
    const std::uint32_t layers = get32();
    if (layers > 64) throw FormatError(source + ": implausible layer count " + std::to_string(layers));
    for (std::uint32_t l = 0; l < layers; ++l) {
        const std::uint32_t name_len = get32();
        need(name_len);
        std::string name = bytes.substr(pos, name_len);
        pos += name_len;
        const std::uint32_t rank = get32();
        if (rank == 0 || rank > 8) throw FormatError(source + ": bad rank for " + name);
        Shape shape;
        for (std::uint32_t r = 0; r < rank; ++r) shape.push_back(get32());
        if (std::find(shape.begin(), shape.end(), 0) != shape.end()) throw FormatError(source + ": zero dimension in " + name);
        const std::size_t count = element_count(shape);
        need(count * 8);
        std::vector<double> values(count);
        for (double& v : values) {
            std::uint64_t bits = 0;
            for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[pos++])) << (8 * i);
            v = std::bit_cast<double>(bits);
        }
        model.parameters().push_back({std::move(name), Tensor(std::move(shape), std::move(values))});
    }
    const std::uint32_t text_len = get32();
    need(text_len);
    std::istringstream text(bytes.substr(pos, text_len));
    pos += text_len;
    if (pos != bytes.size()) throw FormatError(source + ": trailing bytes after metadata");
    std::string line;
    while (std::getline(text, line)) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw FormatError(source + ": malformed metadata line '" + line + "'");
        model.metadata()[line.substr(0, eq)] = line.substr(eq + 1);
    }
    try {
        model.validate();
    } catch (const ContractError& e) {
        throw FormatError(source + ": " + e.what());
    }
    return model;
}

void save_checkpoint(const LeNet& model, const std::filesystem::path& path) {
    if (path.empty()) throw IoError("cannot write checkpoint to an empty path");
    const std::string bytes = serialize_checkpoint(model);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing " + path.string());
}

LeNet load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::string bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    return deserialize_checkpoint(bytes, path.string());
}

std::string checkpoint_hash(const LeNet& model) {
    const std::string bytes = serialize_checkpoint(model);
    const auto hash = fnv1a({reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size()});
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash));
    return buf;
}

}  // namespace acq
