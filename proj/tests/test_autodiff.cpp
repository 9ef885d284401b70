#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <random>

#include "dhue/autodiff.hpp"
#include "dhue/error.hpp"
#include "dhue/wavelet.hpp"
#include "test_support.hpp"

using namespace dhue;
using dhue::ad::Var;
using dhue::testing::central_difference;
using dhue::testing::random_tensor;
using dhue::testing::relative_error;

namespace {

// Checks d/dinput of sum(probe * f(inputs)) against central differences for every input coordinate.
void check_gradients(std::vector<Tensor> inputs, const std::function<Var(const std::vector<Var>&)>& f,
                     std::uint64_t seed = 1, double tol = 1e-6) {
    std::mt19937_64 rng(seed);
    std::vector<Var> params;
    for (const auto& t : inputs) params.push_back(ad::parameter(t));
    Var out = f(params);
    Tensor probe = random_tensor(rng, out.shape());
    auto objective = [&](const std::vector<Var>& ps) { return ad::sum(ad::mul(f(ps), ad::constant(probe))); };
    objective(params).backward();

    for (std::size_t k = 0; k < inputs.size(); ++k) {
        REQUIRE(!params[k].grad().empty());
        for (std::size_t i = 0; i < inputs[k].size(); ++i) {
            auto eval = [&] {
                std::vector<Var> cs;
                for (const auto& t : inputs) cs.push_back(ad::constant(t));
                return objective(cs).item();
            };
            const double fd = central_difference(eval, inputs[k][i], 1e-6);
            const double an = params[k].grad()[i];
            INFO("input " << k << " coord " << i << " analytic " << an << " fd " << fd);
            CHECK((std::abs(an - fd) < 1e-8 || relative_error(an, fd) < tol));
        }
    }
}

}  // namespace

TEST_CASE("elementwise ops match finite differences") {
    std::mt19937_64 rng(3);
    Shape s{2, 3, 2, 2};
    auto a = random_tensor(rng, s), b = random_tensor(rng, s);
    check_gradients({a, b}, [](const auto& v) { return ad::add(v[0], v[1]); });
    check_gradients({a, b}, [](const auto& v) { return ad::sub(v[0], v[1]); });
    check_gradients({a, b}, [](const auto& v) { return ad::mul(v[0], v[1]); });
    check_gradients({a}, [](const auto& v) { return ad::exp(ad::scale(v[0], 0.5)); });
    check_gradients({a}, [](const auto& v) { return ad::tanh(v[0]); });
    check_gradients({a}, [](const auto& v) { return ad::leaky_relu(v[0], 0.2); });
    check_gradients({a}, [](const auto& v) { return ad::add_scalar(v[0], 3.0); });
}

TEST_CASE("structural ops match finite differences") {
    std::mt19937_64 rng(4);
    auto a = random_tensor(rng, Shape{2, 2, 4, 4});
    auto b = random_tensor(rng, Shape{2, 3, 4, 4});
    check_gradients({a, b}, [](const auto& v) {
        std::vector<Var> parts{v[0], v[1]};
        return ad::concat_channels(parts);
    });
    check_gradients({b}, [](const auto& v) { return ad::slice_channels(v[0], 1, 2); });
    check_gradients({a}, [](const auto& v) { return ad::avg_pool2(v[0]); });
    check_gradients({a}, [](const auto& v) { return ad::global_avg_pool(v[0]); });
    check_gradients({a}, [](const auto& v) { return ad::dwt(v[0]); });
    check_gradients({random_tensor(rng, Shape{1, 8, 2, 3})}, [](const auto& v) { return ad::idwt(v[0]); });
    check_gradients({a}, [](const auto& v) { return ad::extract_ll(v[0]); });
}

TEST_CASE("conv2d and linear match finite differences") {
    std::mt19937_64 rng(5);
    auto x = random_tensor(rng, Shape{2, 3, 5, 4});
    auto w = random_tensor(rng, Shape{4, 3, 3, 3}, 0.3);
    auto b = random_tensor(rng, Shape{1, 4, 1, 1});
    check_gradients({x, w, b}, [](const auto& v) { return ad::conv2d(v[0], v[1], v[2]); });

    auto xl = random_tensor(rng, Shape{3, 5, 1, 1});
    auto wl = random_tensor(rng, Shape{2, 5, 1, 1});
    auto bl = random_tensor(rng, Shape{1, 2, 1, 1});
    check_gradients({xl, wl, bl}, [](const auto& v) { return ad::linear(v[0], v[1], v[2]); });
}

TEST_CASE("reductions and losses match finite differences") {
    std::mt19937_64 rng(6);
    auto a = random_tensor(rng, Shape{3, 2, 2, 2}), b = random_tensor(rng, Shape{3, 2, 2, 2});
    check_gradients({a, b}, [](const auto& v) { return ad::sample_mse(v[0], v[1]); });
    check_gradients({a}, [](const auto& v) { return ad::mean(v[0]); });
    std::vector<int> labels{0, 2, 1};
    auto logits = random_tensor(rng, Shape{3, 4, 1, 1});
    check_gradients({logits}, [&](const auto& v) { return ad::cross_entropy(v[0], labels); });
}

TEST_CASE("max_floor passes gradient only above the floor") {
    Var x = ad::parameter(Tensor(Shape{1, 3, 1, 1}, std::vector<double>{0.5, 2.0, 1.0}));
    Var y = ad::sum(ad::max_floor(x, 1.0));
    CHECK(y.item() == doctest::Approx(4.0));
    y.backward();
    CHECK(x.grad()[0] == 0.0);
    CHECK(x.grad()[1] == 1.0);
    CHECK(x.grad()[2] == 0.0);
}

TEST_CASE("constants carry no graph") {
    Var a = ad::constant(Tensor(Shape{1, 1, 2, 2}, 1.0));
    Var b = ad::exp(a);
    CHECK_FALSE(b.requires_grad());
    CHECK(b.node()->parents.empty());
}

TEST_CASE("shape errors are reported") {
    Var a = ad::constant(Tensor(Shape{1, 1, 2, 2}));
    Var b = ad::constant(Tensor(Shape{1, 2, 2, 2}));
    CHECK_THROWS_AS(ad::add(a, b), ShapeError);
    CHECK_THROWS_AS(ad::avg_pool2(ad::constant(Tensor(Shape{1, 1, 3, 2}))), ShapeError);
}
