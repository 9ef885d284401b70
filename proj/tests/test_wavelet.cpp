#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <random>

#include "dhue/error.hpp"
#include "dhue/wavelet.hpp"
#include "test_support.hpp"

using namespace dhue;

namespace {

double energy(const std::vector<double>& v) {
    double e = 0.0;
    for (double x : v) e += x * x;
    return e;
}

}  // namespace

TEST_CASE("constant image has only an LL component equal to 2v") {
    ImageTensor img(3, 6, 4, RangeTag::unit, 0.3);
    SubbandStack s = dwt(img);
    const ImageTensor ll = s.ll();
    for (double v : ll.data()) CHECK(v == doctest::Approx(0.6).epsilon(1e-15));
    for (Band b : {Band::lh, Band::hl, Band::hh}) {
        const ImageTensor band = s.band(b);
        for (double v : band.data()) CHECK(v == 0.0);
    }
}

TEST_CASE("single 2x2 block") {
    ImageTensor img(1, 2, 2, std::vector<double>{0.1, 0.2, 0.3, 0.4});
    SubbandStack s = dwt(img);
    CHECK(s.ll()[0] == doctest::Approx((0.1 + 0.2 + 0.3 + 0.4) / 2));
    CHECK(s.band(Band::lh)[0] == doctest::Approx((0.1 + 0.2 - 0.3 - 0.4) / 2));
    CHECK(s.band(Band::hl)[0] == doctest::Approx((0.1 - 0.2 + 0.3 - 0.4) / 2));
    CHECK(s.band(Band::hh)[0] == doctest::Approx((0.1 - 0.2 - 0.3 + 0.4) / 2));
}

TEST_CASE("round trips in both directions") {
    std::mt19937_64 rng(21);
    for (int i = 0; i < 20; ++i) {
        auto img = testing::random_image(rng, 3, 8, 8);
        CHECK(max_abs_diff(idwt(dwt(img)), img) <= 1e-12);

        SubbandStack s(testing::random_tensor(rng, Shape{1, 12, 4, 4}));
        CHECK(max_abs_diff(dwt(idwt(s)).packed(), s.packed()) <= 1e-12);
    }
}

TEST_CASE("inverse of zero and constant stacks") {
    SubbandStack zero(1, 4, 6);
    const ImageTensor z = idwt(zero);
    for (double v : z.data()) CHECK(v == 0.0);

    SubbandStack s(3, 4, 4);
    s.set_band(Band::ll, ImageTensor(3, 2, 2, RangeTag::signed_diff, 2 * 0.35));
    const ImageTensor flat = idwt(s);
    for (double v : flat.data()) CHECK(v == doctest::Approx(0.35).epsilon(1e-15));
}

TEST_CASE("extract_ll equals dwt().ll") {
    std::mt19937_64 rng(22);
    auto img = testing::random_image(rng, 3, 10, 6);
    CHECK(max_abs_diff(extract_ll(img), dwt(img).ll()) <= 1e-15);
    const ImageTensor ll0 = extract_ll(ImageTensor(1, 4, 4));
    for (double v : ll0.data()) CHECK(v == 0.0);
    const ImageTensor ll2 = extract_ll(ImageTensor(1, 4, 4, RangeTag::unit, 0.2));
    for (double v : ll2.data()) CHECK(v == doctest::Approx(0.4));

    SubbandStack s(testing::random_tensor(rng, Shape{1, 4, 3, 3}));
    ImageTensor known_ll = s.ll();
    CHECK(max_abs_diff(extract_ll(idwt(s)), known_ll) <= 1e-12);
}

TEST_CASE("linearity and energy preservation") {
    std::mt19937_64 rng(23);
    for (int i = 0; i < 20; ++i) {
        auto x = testing::random_image(rng, 3, 8, 12);
        auto y = testing::random_image(rng, 3, 8, 12);
        const double a = 0.7, b = -1.3;
        ImageTensor combo = x;
        for (std::size_t k = 0; k < combo.size(); ++k) combo[k] = a * x[k] + b * y[k];
        Tensor lhs = dwt(combo).packed();
        Tensor dx = dwt(x).packed(), dy = dwt(y).packed();
        for (std::size_t k = 0; k < lhs.size(); ++k) CHECK(lhs[k] == doctest::Approx(a * dx[k] + b * dy[k]).epsilon(1e-12));

        const double e_img = energy(x.data());
        const double e_sub = energy(dx.vec());
        CHECK(std::abs(e_img - e_sub) / e_img <= 1e-12);
    }
}

TEST_CASE("shape errors") {
    CHECK_THROWS_AS(dwt(ImageTensor(1, 3, 4)), ShapeError);
    CHECK_THROWS_AS(dwt(ImageTensor(1, 4, 5)), ShapeError);
    CHECK_THROWS_AS(SubbandStack(Tensor(Shape{1, 6, 2, 2})), ShapeError);
    SubbandStack s(3, 4, 4);
    CHECK_THROWS_AS(s.set_band(Band::hh, ImageTensor(3, 3, 2)), ShapeError);
}
