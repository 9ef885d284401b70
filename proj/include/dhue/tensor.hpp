#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace dhue {

// NCHW extent. Vectors are stored as {n, d, 1, 1}, scalars as {1, 1, 1, 1}.
struct Shape {
    int n = 1;
    int c = 1;
    int h = 1;
    int w = 1;

    std::size_t size() const {
        return static_cast<std::size_t>(n) * c * h * w;
    }
    std::size_t sample_size() const { return static_cast<std::size_t>(c) * h * w; }
    std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
    bool operator==(const Shape&) const = default;
    std::string str() const;
};

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0) : shape_(shape), data_(shape.size(), fill) {}
    Tensor(Shape shape, std::vector<double> data);

    static Tensor scalar(double v) { return Tensor(Shape{}, v); }

    const Shape& shape() const { return shape_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::span<double> span() { return data_; }
    std::span<const double> span() const { return data_; }
    std::vector<double>& vec() & { return data_; }
    const std::vector<double>& vec() const& { return data_; }
    // Rvalues hand over their storage so range-for over a temporary stays valid.
    std::vector<double> vec() && { return std::move(data_); }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double& at(int n, int c, int h, int w) {
        return data_[((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + h) * shape_.w + w];
    }
    double at(int n, int c, int h, int w) const {
        return data_[((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + h) * shape_.w + w];
    }

    // Copy of sample `i` as a {1,c,h,w} tensor.
    Tensor sample(int i) const;
    void set_sample(int i, const Tensor& src);

    void fill(double v);
    bool all_finite() const;

private:
    Shape shape_;
    std::vector<double> data_;
};

// Stacks {1,c,h,w} (or any equal-shaped) tensors along n.
Tensor stack(std::span<const Tensor> parts);

double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace dhue
