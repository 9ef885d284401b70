#include "dhue/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>

#include "dhue/error.hpp"

namespace dhue {

std::string Shape::str() const { return fmt::format("[{}, {}, {}, {}]", n, c, h, w); }

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(shape), data_(std::move(data)) {
    if (data_.size() != shape_.size()) {
        throw ShapeError(fmt::format("tensor data has {} values, shape {} needs {}", data_.size(),
                                     shape_.str(), shape_.size()));
    }
}

Tensor Tensor::sample(int i) const {
    const std::size_t len = shape_.sample_size();
    Tensor out(Shape{1, shape_.c, shape_.h, shape_.w});
    std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>(i * len), len, out.data_.begin());
    return out;
}

void Tensor::set_sample(int i, const Tensor& src) {
    const std::size_t len = shape_.sample_size();
    if (src.size() != len) throw ShapeError("set_sample: size mismatch");
    std::copy_n(src.data_.begin(), len, data_.begin() + static_cast<std::ptrdiff_t>(i * len));
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Tensor stack(std::span<const Tensor> parts) {
    if (parts.empty()) throw ShapeError("stack: no tensors");
    const Shape s = parts.front().shape();
    Tensor out(Shape{static_cast<int>(parts.size()) * s.n, s.c, s.h, s.w});
    std::size_t off = 0;
    for (const auto& p : parts) {
        if (!(p.shape() == s)) throw ShapeError("stack: shape mismatch " + p.shape().str() + " vs " + s.str());
        std::copy(p.vec().begin(), p.vec().end(), out.vec().begin() + static_cast<std::ptrdiff_t>(off));
        off += p.size();
    }
    return out;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    if (a.size() != b.size()) throw ShapeError("max_abs_diff: size mismatch");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace dhue
