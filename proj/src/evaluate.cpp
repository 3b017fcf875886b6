#include "acq/evaluate.hpp"

#include <vector>

#include "acq/errors.hpp"
#include "acq/fusion.hpp"
#include "acq/parallel.hpp"

namespace acq {

namespace {

constexpr std::size_t kEvalChunk = 256;

}  // namespace

EvalCount evaluate_count(const LeNet& model, const Dataset& data, const EvalOptions& options) {
    if (data.empty()) throw ContractError("cannot evaluate on an empty dataset");
    if (options.transform) options.transform->validate();

    const std::size_t chunks = (data.size() + kEvalChunk - 1) / kEvalChunk;
    std::vector<std::size_t> correct(chunks, 0);
    parallel_for(chunks, options.threads, [&](std::size_t first, std::size_t last) {
        std::vector<Image> batch;
        for (std::size_t chunk = first; chunk < last; ++chunk) {
            const std::size_t begin = chunk * kEvalChunk;
            const std::size_t end = std::min(data.size(), begin + kEvalChunk);
            batch.clear();
            for (std::size_t i = begin; i < end; ++i) {
                const Image& image = data.images[i];
                if (!image.label) throw ContractError("evaluate needs labelled images (index " + std::to_string(i) + ")");
                batch.push_back(options.transform ? apply_transform(*options.transform, image) : image);
            }
            std::size_t hits = 0;
            if (options.fusion) {
                const auto fused = fused_predict_batch(model, batch);
                for (std::size_t i = 0; i < fused.size(); ++i) hits += fused[i].label == *data.images[begin + i].label;
            } else {
                const auto predictions = predict_batch(model, batch);
                for (std::size_t i = 0; i < predictions.size(); ++i)
                    hits += predictions[i].label == *data.images[begin + i].label;
            }
            correct[chunk] = hits;
        }
    });
    EvalCount count;
    count.total = data.size();
    for (std::size_t c : correct) count.correct += c;
    return count;
}

double evaluate(const LeNet& model, const Dataset& data, const EvalOptions& options) {
    return evaluate_count(model, data, options).accuracy();
}

}  // namespace acq
