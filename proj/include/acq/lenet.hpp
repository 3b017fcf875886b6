#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "acq/dataset.hpp"
#include "acq/image.hpp"
#include "acq/tensor.hpp"

namespace acq {

struct LayerParameter {
    std::string name;
    Tensor value;

    friend bool operator==(const LayerParameter&, const LayerParameter&) = default;
};

/// LeNet for 28x28 digits:
/// conv(20, 5x5) -> pool -> conv(50, 5x5) -> pool -> dense(500) -> relu -> dense(10).
/// Parameters are stored in that order as weight/bias pairs.
class LeNet {
public:
    /// Uniform init in +-sqrt(3 / fan_in) for weights, zero biases.
    static LeNet build(std::uint64_t seed);

    /// Names and shapes every LeNet checkpoint must carry, in order.
    static const std::vector<std::pair<std::string, Shape>>& architecture();

    std::vector<LayerParameter>& parameters() noexcept { return parameters_; }
    const std::vector<LayerParameter>& parameters() const noexcept { return parameters_; }
    const Tensor& parameter(std::size_t i) const { return parameters_.at(i).value; }
    std::size_t parameter_count() const;

    /// Free-form provenance stored with the checkpoint (seed, epochs, accuracy...).
    std::map<std::string, std::string>& metadata() noexcept { return metadata_; }
    const std::map<std::string, std::string>& metadata() const noexcept { return metadata_; }

    /// Throws ContractError unless parameter names and shapes match architecture().
    void validate() const;

    friend bool operator==(const LeNet&, const LeNet&) = default;

private:
    std::vector<LayerParameter> parameters_;
    std::map<std::string, std::string> metadata_;
};

struct TrainConfig {
    int epochs = 10;
    std::size_t batch_size = 64;
    double learning_rate = 0.01;
    /// Inverse decay: lr(it) = learning_rate * (1 + lr_gamma * it)^(-lr_power).
    double lr_gamma = 1e-4;
    double lr_power = 0.75;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    std::uint64_t seed = 1;

    /// Clean-data recipe.
    static TrainConfig defaults() { return {}; }
    /// Continuation recipe: 0.1x the base learning rate.
    static TrainConfig finetune_defaults();

    void validate() const;
};

struct EpochReport {
    int epoch = 0;
    double train_loss = 0.0;
    /// Negative when no validation set was supplied.
    double validation_accuracy = -1.0;
    double seconds = 0.0;
};

using EpochCallback = std::function<void(const EpochReport&)>;

struct TrainResult {
    LeNet model;
    std::vector<EpochReport> epochs;
};

/// Minibatch SGD with momentum on mean softmax cross-entropy. Deterministic for a given config.
TrainResult train(LeNet model, const Dataset& data, const TrainConfig& config, const Dataset* validation = nullptr,
                  const EpochCallback& on_epoch = {});

/// Continues training an already-trained model on a fine-tune corpus.
/// With zero epochs the input model is returned unchanged.
TrainResult finetune(LeNet model, const FinetuneSplit& corpus, const TrainConfig& config,
                     const EpochCallback& on_epoch = {});

struct Prediction {
    Tensor logits;
    Tensor probabilities;
    int label = -1;
};

/// Single-image inference; images of either scale are read as Unit.
Prediction predict(const LeNet& model, const Image& image);

/// Batched inference. Results are bitwise identical to predict() per image.
std::vector<Prediction> predict_batch(const LeNet& model, std::span<const Image> images);

/// d loss(model(x), label) / dx in Unit scale, shape [28, 28].
Tensor input_gradient(const LeNet& model, const Image& image, int label);

/// Serialized checkpoint bytes ("AQNN0001" layout).
std::string serialize_checkpoint(const LeNet& model);
LeNet deserialize_checkpoint(const std::string& bytes, const std::string& source = "checkpoint");
void save_checkpoint(const LeNet& model, const std::filesystem::path& path);
LeNet load_checkpoint(const std::filesystem::path& path);
/// 16 hex digits of FNV-1a over serialize_checkpoint().
std::string checkpoint_hash(const LeNet& model);

}  // namespace acq
