#include "acq/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "acq/errors.hpp"

namespace acq {

std::string to_string(const Shape& shape) {
    std::string out = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(shape[i]);
    }
    return out + "]";
}

std::size_t element_count(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

namespace {

void check_dims(const Shape& shape) {
    if (std::any_of(shape.begin(), shape.end(), [](std::size_t d) { return d == 0; }))
        throw ContractError("tensor shape " + to_string(shape) + " has a zero dimension");
}

}  // namespace

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
    check_dims(shape_);
    data_.assign(element_count(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)), data_(std::move(values)) {
    check_dims(shape_);
    if (element_count(shape_) != data_.size())
        throw ContractError("tensor shape " + to_string(shape_) + " needs " +
                            std::to_string(element_count(shape_)) + " values, got " +
                            std::to_string(data_.size()));
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

Tensor Tensor::reshaped(Shape shape) const {
    if (element_count(shape) != data_.size())
        throw ContractError("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
    return Tensor(std::move(shape), data_);
}

bool Tensor::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

}  // namespace acq
