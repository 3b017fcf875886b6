#pragma once

#include <array>
#include <span>
#include <vector>

#include "acq/image.hpp"
#include "acq/lenet.hpp"
#include "acq/transforms.hpp"

namespace acq {

inline constexpr std::size_t kFusionCrop = 27;
inline constexpr std::array<CropRegion, 5> kFusionRegions = {CropRegion::Center, CropRegion::TopLeft, CropRegion::TopRight,
                                                             CropRegion::BottomLeft, CropRegion::BottomRight};

/// The five 27x27 views (center first, then the corners in kFusionRegions
/// order), each resized back to 28x28.
struct CropSet {
    std::array<Image, 5> crops;
};

CropSet five_crops(const Image& image);

struct FusedPrediction {
    Tensor summed;
    int label = -1;
};

/// Sums the probability vectors in order and takes the argmax (first on ties).
FusedPrediction fuse(std::span<const Tensor> probabilities);

/// Classifies each of the five crops and fuses their probability vectors.
FusedPrediction fused_predict(const LeNet& model, const Image& image);
std::vector<FusedPrediction> fused_predict_batch(const LeNet& model, std::span<const Image> images);

}  // namespace acq
