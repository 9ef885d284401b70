#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dhue/tensor.hpp"

namespace dhue {

// Value-range convention of an image. All internal computation happens in
// `unit`; `centered` exists only at the classifier input boundary. `signed_diff`
// tags perturbation maps (differences of two unit images).
enum class RangeTag { unit, centered, signed_diff };

const char* to_string(RangeTag tag);

class ImageTensor {
public:
    ImageTensor() = default;
    ImageTensor(int channels, int height, int width, RangeTag range = RangeTag::unit, double fill = 0.0);
    ImageTensor(int channels, int height, int width, std::vector<double> data, RangeTag range = RangeTag::unit);

    int channels() const { return channels_; }
    int height() const { return height_; }
    int width() const { return width_; }
    std::size_t size() const { return data_.size(); }
    RangeTag range() const { return range_; }
    void set_range(RangeTag r) { range_ = r; }

    double& at(int c, int y, int x) { return data_[(static_cast<std::size_t>(c) * height_ + y) * width_ + x]; }
    double at(int c, int y, int x) const { return data_[(static_cast<std::size_t>(c) * height_ + y) * width_ + x]; }
    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    std::vector<double>& data() & { return data_; }
    const std::vector<double>& data() const& { return data_; }
    std::vector<double> data() && { return std::move(data_); }

    bool same_shape(const ImageTensor& o) const {
        return channels_ == o.channels_ && height_ == o.height_ && width_ == o.width_;
    }
    std::string shape_str() const;

    // {1, c, h, w} tensor view copy, and back.
    Tensor to_tensor() const;
    static ImageTensor from_tensor(const Tensor& t, int sample = 0, RangeTag range = RangeTag::unit);

    bool operator==(const ImageTensor&) const = default;

private:
    int channels_ = 0;
    int height_ = 0;
    int width_ = 0;
    RangeTag range_ = RangeTag::unit;
    std::vector<double> data_;
};

// Throws ShapeError unless C in {1,3} and H,W >= 2, and values lie in the
// declared range (+-1e-6; signed_diff allows [-1,1]).
void validate(const ImageTensor& img);
// ShapeError unless H and W are even.
void require_even(const ImageTensor& img);
void require_same_shape(const ImageTensor& a, const ImageTensor& b, const char* what);

// Affine map between unit [0,1] and centered [-0.5,0.5].
ImageTensor rescale(const ImageTensor& img, RangeTag target);

ImageTensor clamp_unit(const ImageTensor& img);
double max_abs_diff(const ImageTensor& a, const ImageTensor& b);
double mse(const ImageTensor& a, const ImageTensor& b);

struct LabeledRecord {
    std::string image_id;
    ImageTensor image;
    int label = 0;
};

struct LabeledDataset {
    std::vector<LabeledRecord> records;
    int class_count = 0;

    std::size_t size() const { return records.size(); }
    // Unique ids, labels in [0, K), equal shapes.
    void validate() const;
    Tensor batch(std::span<const std::size_t> indices) const;
};

}  // namespace dhue
