#include "cfm/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>

#include "cfm/errors.hpp"

namespace cfm {

std::size_t shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

std::string shape_string(const Shape& shape) {
    std::string out = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i > 0) {
            out += ",";
        }
        out += std::to_string(shape[i]);
    }
    return out + "]";
}

namespace {

void check_shape(const Shape& shape) {
    require(!shape.empty(), ErrorKind::dimension, "tensor shape must have at least one dimension");
    for (std::size_t d : shape) {
        require(d > 0, ErrorKind::dimension, "tensor dimensions must be positive, got " + shape_string(shape));
    }
}

}  // namespace

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
    check_shape(shape_);
    values_.assign(shape_size(shape_), 0.0);
}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)), values_(std::move(values)) {
    check_shape(shape_);
    require(values_.size() == shape_size(shape_), ErrorKind::dimension,
            "payload length " + std::to_string(values_.size()) + " does not match shape " + shape_string(shape_));
}

Tensor Tensor::full(Shape shape, double value) {
    Tensor t(std::move(shape));
    std::fill(t.values_.begin(), t.values_.end(), value);
    return t;
}

Tensor Tensor::row(std::initializer_list<double> values) {
    return Tensor({1, values.size()}, std::vector<double>(values));
}

std::size_t Tensor::dim(std::size_t axis) const {
    require(axis < shape_.size(), ErrorKind::index, "axis out of range");
    return shape_[axis];
}

std::size_t Tensor::rows() const {
    require(rank() == 1 || rank() == 2, ErrorKind::dimension, "expected rank-1 or rank-2 tensor");
    return rank() == 1 ? 1 : shape_[0];
}

std::size_t Tensor::cols() const {
    require(rank() == 1 || rank() == 2, ErrorKind::dimension, "expected rank-1 or rank-2 tensor");
    return rank() == 1 ? shape_[0] : shape_[1];
}

double Tensor::item() const {
    require(values_.size() == 1, ErrorKind::contract, "item() requires a single-element tensor");
    return values_[0];
}

bool Tensor::all_finite() const noexcept {
    return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

Tensor Tensor::reshaped(Shape shape) const {
    return Tensor(std::move(shape), values_);
}

bool operator==(const Tensor& a, const Tensor& b) {
    if (a.shape_ != b.shape_ || a.values_.size() != b.values_.size()) {
        return false;
    }
    for (std::size_t i = 0; i < a.values_.size(); ++i) {
        if (std::bit_cast<std::uint64_t>(a.values_[i]) != std::bit_cast<std::uint64_t>(b.values_[i])) {
            return false;
        }
    }
    return true;
}

}  // namespace cfm
