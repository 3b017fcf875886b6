#include "acq/fusion.hpp"

#include <algorithm>

#include "acq/errors.hpp"

namespace acq {

CropSet five_crops(const Image& image) {
    require_mnist_size(image);
    CropSet set;
    for (std::size_t i = 0; i < kFusionRegions.size(); ++i) set.crops[i] = crop_resize(image, kFusionCrop, kFusionRegions[i]);
    return set;
}

FusedPrediction fuse(std::span<const Tensor> probabilities) {
    if (probabilities.empty()) throw ContractError("nothing to fuse");
    FusedPrediction out;
    out.summed = Tensor(probabilities.front().shape());
    for (const Tensor& p : probabilities) {
        if (p.shape() != out.summed.shape())
            throw ContractError("fused vectors disagree in shape: " + to_string(p.shape()) + " vs " +
                                to_string(out.summed.shape()));
        for (std::size_t c = 0; c < p.size(); ++c) out.summed[c] += p[c];
    }
    out.label = static_cast<int>(std::max_element(out.summed.data().begin(), out.summed.data().end()) -
                                 out.summed.data().begin());
    return out;
}

FusedPrediction fused_predict(const LeNet& model, const Image& image) {
    const CropSet set = five_crops(image);
    const auto predictions = predict_batch(model, set.crops);
    std::vector<Tensor> probabilities;
    for (const auto& p : predictions) probabilities.push_back(p.probabilities);
    return fuse(probabilities);
}

std::vector<FusedPrediction> fused_predict_batch(const LeNet& model, std::span<const Image> images) {
    std::vector<Image> crops;
    crops.reserve(images.size() * kFusionRegions.size());
    for (const Image& image : images) {
        CropSet set = five_crops(image);
        for (Image& crop : set.crops) crops.push_back(std::move(crop));
    }
    const auto predictions = predict_batch(model, crops);
    std::vector<FusedPrediction> out;
    out.reserve(images.size());
    std::vector<Tensor> group(kFusionRegions.size());
    for (std::size_t i = 0; i < images.size(); ++i) {
        for (std::size_t k = 0; k < group.size(); ++k) group[k] = predictions[i * group.size() + k].probabilities;
        out.push_back(fuse(group));
    }
    return out;
}

}  // namespace acq
