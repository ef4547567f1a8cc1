#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace afn {

struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

using Shape = std::vector<int>;

std::string shape_str(const Shape& s);
std::int64_t shape_numel(const Shape& s);

// Dense row-major double-precision tensor. Activations are ordered
// (channels, depth, height, width) with an optional leading batch extent;
// convolution kernels are (out_channels, in_channels, kd, kh, kw).
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape);
    static Tensor full(Shape shape, double value);
    static Tensor from_values(Shape shape, std::vector<double> values);

    int rank() const { return static_cast<int>(shape_.size()); }
    const Shape& shape() const { return shape_; }
    int extent(int axis) const { return shape_[static_cast<size_t>(axis)]; }
    std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    double& operator[](std::int64_t i) { return data_[static_cast<size_t>(i)]; }
    double operator[](std::int64_t i) const { return data_[static_cast<size_t>(i)]; }

    // Strides in elements; stride of the last axis is 1.
    std::vector<std::int64_t> strides() const;

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

private:
    Tensor(Shape shape, std::vector<double> data)
        : shape_(std::move(shape)), data_(std::move(data)) {}

    Shape shape_;
    std::vector<double> data_;
};

// Elementwise ops. b may equal a's shape, be a scalar, or broadcast with
// extent 1 on any axis (same rank required); the result takes a's shape.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, double b);
Tensor mul(const Tensor& a, double b);
Tensor relu(const Tensor& a);

enum class Reduce { Sum, Mean, Argmax };

// Reduces one axis; keepdim retains it with extent 1.
Tensor reduce(Reduce op, const Tensor& a, int axis, bool keepdim = false);
double sum_all(const Tensor& a);
double mean_all(const Tensor& a);

// Zero-pad (amounts >= 0) or center-crop (amounts <= extent) per axis.
Tensor pad(const Tensor& a, const std::vector<int>& lo, const std::vector<int>& hi);
Tensor crop(const Tensor& a, const std::vector<int>& lo, const std::vector<int>& hi);

} // namespace afn
