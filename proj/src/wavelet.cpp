#include "dhue/wavelet.hpp"

#include <fmt/format.h>

#include "dhue/error.hpp"

namespace dhue {

namespace {

void check_even(const Shape& s) {
    if (s.h % 2 || s.w % 2 || s.h < 2 || s.w < 2) {
        throw ShapeError("DWT needs even spatial dimensions, got " + s.str());
    }
}

}  // namespace

Tensor dwt(const Tensor& x) {
    const Shape s = x.shape();
    check_even(s);
    const int h2 = s.h / 2, w2 = s.w / 2;
    Tensor z(Shape{s.n, 4 * s.c, h2, w2});
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c)
            for (int y = 0; y < h2; ++y)
                for (int xx = 0; xx < w2; ++xx) {
                    const double a = x.at(n, c, 2 * y, 2 * xx);
                    const double b = x.at(n, c, 2 * y, 2 * xx + 1);
                    const double cc = x.at(n, c, 2 * y + 1, 2 * xx);
                    const double d = x.at(n, c, 2 * y + 1, 2 * xx + 1);
                    z.at(n, 4 * c + 0, y, xx) = 0.5 * (a + b + cc + d);
                    z.at(n, 4 * c + 1, y, xx) = 0.5 * (a + b - cc - d);
                    z.at(n, 4 * c + 2, y, xx) = 0.5 * (a - b + cc - d);
                    z.at(n, 4 * c + 3, y, xx) = 0.5 * (a - b - cc + d);
                }
    return z;
}

Tensor idwt(const Tensor& z) {
    const Shape s = z.shape();
    if (s.c % 4) throw ShapeError("IDWT input needs 4 bands per channel, got " + s.str());
    const int c_out = s.c / 4;
    Tensor x(Shape{s.n, c_out, 2 * s.h, 2 * s.w});
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < c_out; ++c)
            for (int y = 0; y < s.h; ++y)
                for (int xx = 0; xx < s.w; ++xx) {
                    const double ll = z.at(n, 4 * c + 0, y, xx);
                    const double lh = z.at(n, 4 * c + 1, y, xx);
                    const double hl = z.at(n, 4 * c + 2, y, xx);
                    const double hh = z.at(n, 4 * c + 3, y, xx);
                    x.at(n, c, 2 * y, 2 * xx) = 0.5 * (ll + lh + hl + hh);
                    x.at(n, c, 2 * y, 2 * xx + 1) = 0.5 * (ll + lh - hl - hh);
                    x.at(n, c, 2 * y + 1, 2 * xx) = 0.5 * (ll - lh + hl - hh);
                    x.at(n, c, 2 * y + 1, 2 * xx + 1) = 0.5 * (ll - lh - hl + hh);
                }
    return x;
}

SubbandStack::SubbandStack(int channels, int height, int width)
    : packed_(Shape{1, 4 * channels, height / 2, width / 2}) {
    check_even(Shape{1, channels, height, width});
}

SubbandStack::SubbandStack(Tensor packed) : packed_(std::move(packed)) {
    const Shape s = packed_.shape();
    if (s.n != 1 || s.c % 4 || s.c == 0) throw ShapeError("sub-band stack needs shape {1, 4C, h, w}, got " + s.str());
}

ImageTensor SubbandStack::band(Band b) const {
    const Shape s = packed_.shape();
    const int c_src = s.c / 4;
    ImageTensor out(c_src, s.h, s.w, RangeTag::signed_diff);
    for (int c = 0; c < c_src; ++c)
        for (int y = 0; y < s.h; ++y)
            for (int x = 0; x < s.w; ++x) out.at(c, y, x) = packed_.at(0, 4 * c + static_cast<int>(b), y, x);
    return out;
}

void SubbandStack::set_band(Band b, const ImageTensor& values) {
    const Shape s = packed_.shape();
    if (values.channels() != s.c / 4 || values.height() != s.h || values.width() != s.w) {
        throw ShapeError("set_band: band shape " + values.shape_str() + " does not match stack " + s.str());
    }
    for (int c = 0; c < s.c / 4; ++c)
        for (int y = 0; y < s.h; ++y)
            for (int x = 0; x < s.w; ++x) packed_.at(0, 4 * c + static_cast<int>(b), y, x) = values.at(c, y, x);
}

SubbandStack dwt(const ImageTensor& img) {
    require_even(img);
    return SubbandStack(dwt(img.to_tensor()));
}

ImageTensor idwt(const SubbandStack& s) { return ImageTensor::from_tensor(idwt(s.packed()), 0, RangeTag::unit); }

ImageTensor extract_ll(const ImageTensor& img) {
    require_even(img);
    ImageTensor out(img.channels(), img.height() / 2, img.width() / 2, RangeTag::signed_diff);
    for (int c = 0; c < img.channels(); ++c)
        for (int y = 0; y < out.height(); ++y)
            for (int x = 0; x < out.width(); ++x) {
                out.at(c, y, x) = 0.5 * (img.at(c, 2 * y, 2 * x) + img.at(c, 2 * y, 2 * x + 1) +
                                         img.at(c, 2 * y + 1, 2 * x) + img.at(c, 2 * y + 1, 2 * x + 1));
            }
    return out;
}

namespace ad {

// The transform is orthonormal, so each direction's adjoint is the other direction.
Var dwt(const Var& x) {
    return make_op(dhue::dwt(x.value()), {x}, [](Node& self) {
        Tensor g = dhue::idwt(self.grad);
        auto& p = self.parents[0];
        for (std::size_t i = 0; i < g.size(); ++i) p->grad[i] += g[i];
    });
}

Var idwt(const Var& z) {
    return make_op(dhue::idwt(z.value()), {z}, [](Node& self) {
        Tensor g = dhue::dwt(self.grad);
        auto& p = self.parents[0];
        for (std::size_t i = 0; i < g.size(); ++i) p->grad[i] += g[i];
    });
}

Var extract_ll(const Var& x) {
    const Shape s = x.shape();
    check_even(s);
    Tensor out(Shape{s.n, s.c, s.h / 2, s.w / 2});
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c)
            for (int y = 0; y < s.h / 2; ++y)
                for (int xx = 0; xx < s.w / 2; ++xx) {
                    const auto& v = x.value();
                    out.at(n, c, y, xx) = 0.5 * (v.at(n, c, 2 * y, 2 * xx) + v.at(n, c, 2 * y, 2 * xx + 1) +
                                                 v.at(n, c, 2 * y + 1, 2 * xx) + v.at(n, c, 2 * y + 1, 2 * xx + 1));
                }
    return make_op(std::move(out), {x}, [](Node& self) {
        auto& p = self.parents[0];
        const Shape os = self.value.shape();
        for (int n = 0; n < os.n; ++n)
            for (int c = 0; c < os.c; ++c)
                for (int y = 0; y < os.h; ++y)
                    for (int xx = 0; xx < os.w; ++xx) {
                        const double g = 0.5 * self.grad.at(n, c, y, xx);
                        p->grad.at(n, c, 2 * y, 2 * xx) += g;
                        p->grad.at(n, c, 2 * y, 2 * xx + 1) += g;
                        p->grad.at(n, c, 2 * y + 1, 2 * xx) += g;
                        p->grad.at(n, c, 2 * y + 1, 2 * xx + 1) += g;
                    }
    });
}

}  // namespace ad

}  // namespace dhue
