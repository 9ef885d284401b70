#pragma once

#include "dhue/autodiff.hpp"
#include "dhue/image.hpp"

namespace dhue {

enum class Band { ll = 0, lh = 1, hl = 2, hh = 3 };

// Single-level orthonormal 2-D Haar coefficients of a C x H x W image.
//
// Stored packed as a {1, 4C, H/2, W/2} tensor with channel index 4*c + band
// (LL, LH, HL, HH per colour channel). This packed layout is exactly what the
// coupling sub-networks consume.
class SubbandStack {
public:
    SubbandStack() = default;
    SubbandStack(int channels, int height, int width);  // zero coefficients for a CxHxW source
    explicit SubbandStack(Tensor packed);

    int source_channels() const { return packed_.shape().c / 4; }
    int source_height() const { return packed_.shape().h * 2; }
    int source_width() const { return packed_.shape().w * 2; }

    // {C, H/2, W/2} copy of one band.
    ImageTensor band(Band b) const;
    void set_band(Band b, const ImageTensor& values);
    ImageTensor ll() const { return band(Band::ll); }

    const Tensor& packed() const { return packed_; }
    Tensor& packed() { return packed_; }

    bool same_layout(const SubbandStack& o) const { return packed_.shape() == o.packed_.shape(); }

private:
    Tensor packed_;
};

SubbandStack dwt(const ImageTensor& img);
// Exact inverse of dwt; the result is tagged unit range but never clamped.
ImageTensor idwt(const SubbandStack& s);
// dwt(img).ll() without computing the detail bands.
ImageTensor extract_ll(const ImageTensor& img);

// Batched forms on NCHW tensors: {n,c,h,w} <-> {n,4c,h/2,w/2}.
Tensor dwt(const Tensor& x);
Tensor idwt(const Tensor& z);

namespace ad {
Var dwt(const Var& x);
Var idwt(const Var& z);
// LL channels only: {n,c,h,w} -> {n,c,h/2,w/2}.
Var extract_ll(const Var& x);
}  // namespace ad

}  // namespace dhue
