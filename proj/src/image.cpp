#include "dhue/image.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <unordered_set>

#include "dhue/error.hpp"

namespace dhue {

const char* to_string(RangeTag tag) {
    switch (tag) {
        case RangeTag::unit: return "unit";
        case RangeTag::centered: return "centered";
        case RangeTag::signed_diff: return "signed_diff";
    }
    return "?";
}

ImageTensor::ImageTensor(int channels, int height, int width, RangeTag range, double fill)
    : channels_(channels), height_(height), width_(width), range_(range),
      data_(static_cast<std::size_t>(channels) * height * width, fill) {}

ImageTensor::ImageTensor(int channels, int height, int width, std::vector<double> data, RangeTag range)
    : channels_(channels), height_(height), width_(width), range_(range), data_(std::move(data)) {
    if (data_.size() != static_cast<std::size_t>(channels) * height * width) {
        throw ShapeError(fmt::format("image data has {} values, {}x{}x{} needs {}", data_.size(), channels, height,
                                     width, static_cast<std::size_t>(channels) * height * width));
    }
}

std::string ImageTensor::shape_str() const { return fmt::format("{}x{}x{}", channels_, height_, width_); }

Tensor ImageTensor::to_tensor() const { return Tensor(Shape{1, channels_, height_, width_}, data_); }

ImageTensor ImageTensor::from_tensor(const Tensor& t, int sample, RangeTag range) {
    const Shape s = t.shape();
    const std::size_t len = s.sample_size();
    std::vector<double> d(t.vec().begin() + static_cast<std::ptrdiff_t>(sample * len),
                          t.vec().begin() + static_cast<std::ptrdiff_t>((sample + 1) * len));
    return ImageTensor(s.c, s.h, s.w, std::move(d), range);
}

void validate(const ImageTensor& img) {
    if (img.channels() != 1 && img.channels() != 3) {
        throw ShapeError(fmt::format("image must have 1 or 3 channels, got {}", img.channels()));
    }
    if (img.height() < 2 || img.width() < 2) throw ShapeError("image must be at least 2x2, got " + img.shape_str());
    double lo = 0.0, hi = 1.0;
    if (img.range() == RangeTag::centered) lo = -0.5, hi = 0.5;
    if (img.range() == RangeTag::signed_diff) lo = -1.0, hi = 1.0;
    for (double v : img.data()) {
        if (!(v >= lo - 1e-6 && v <= hi + 1e-6)) {
            throw ShapeError(fmt::format("pixel value {} outside {} range", v, to_string(img.range())));
        }
    }
}

void require_even(const ImageTensor& img) {
    if (img.height() % 2 || img.width() % 2) throw ShapeError("DWT needs even dimensions, got " + img.shape_str());
}

void require_same_shape(const ImageTensor& a, const ImageTensor& b, const char* what) {
    if (!a.same_shape(b)) throw ShapeError(fmt::format("{}: shape {} vs {}", what, a.shape_str(), b.shape_str()));
}

ImageTensor rescale(const ImageTensor& img, RangeTag target) {
    if (target == RangeTag::signed_diff || img.range() == RangeTag::signed_diff) {
        throw ShapeError("rescale: signed difference maps have no rescaled form");
    }
    ImageTensor out = img;
    out.set_range(target);
    if (img.range() == target) return out;
    const double shift = target == RangeTag::centered ? -0.5 : 0.5;
    for (auto& v : out.data()) v += shift;
    return out;
}

ImageTensor clamp_unit(const ImageTensor& img) {
    ImageTensor out = img;
    for (auto& v : out.data()) v = std::clamp(v, 0.0, 1.0);
    out.set_range(RangeTag::unit);
    return out;
}

double max_abs_diff(const ImageTensor& a, const ImageTensor& b) {
    require_same_shape(a, b, "max_abs_diff");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

double mse(const ImageTensor& a, const ImageTensor& b) {
    require_same_shape(a, b, "mse");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        acc += d * d;
    }
    return acc / static_cast<double>(a.size());
}

void LabeledDataset::validate() const {
    std::unordered_set<std::string> ids;
    for (const auto& r : records) {
        if (!ids.insert(r.image_id).second) throw FormatError("duplicate image_id '" + r.image_id + "'");
        if (r.label < 0 || r.label >= class_count) {
            throw FormatError(fmt::format("label {} of '{}' outside [0,{})", r.label, r.image_id, class_count));
        }
        if (!r.image.same_shape(records.front().image)) {
            throw ShapeError("dataset images differ in shape: '" + r.image_id + "'");
        }
    }
}

Tensor LabeledDataset::batch(std::span<const std::size_t> indices) const {
    std::vector<Tensor> parts;
    parts.reserve(indices.size());
    for (auto i : indices) parts.push_back(records.at(i).image.to_tensor());
    return stack(parts);
}

}  // namespace dhue
