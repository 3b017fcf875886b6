#pragma once

#include <cstddef>
#include <optional>

#include "acq/dataset.hpp"
#include "acq/lenet.hpp"
#include "acq/transforms.hpp"

namespace acq {

struct EvalOptions {
    /// Applied to every image before classification.
    std::optional<TransformSpec> transform;
    /// Classify with five-crop fusion instead of a single pass.
    bool fusion = false;
    unsigned threads = 1;
};

struct EvalCount {
    std::size_t correct = 0;
    std::size_t total = 0;

    double accuracy() const { return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0; }
};

/// Correct / total over a labelled dataset. Independent of thread count and of
/// the order of the images.
EvalCount evaluate_count(const LeNet& model, const Dataset& data, const EvalOptions& options = {});
double evaluate(const LeNet& model, const Dataset& data, const EvalOptions& options = {});

}  // namespace acq
