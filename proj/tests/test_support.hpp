#pragma once

// Shared helpers for the test binaries: random images and a central
// finite-difference gradient oracle that is independent of the autodiff path.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

#include "dhue/autodiff.hpp"
#include "dhue/image.hpp"

namespace dhue::testing {

inline ImageTensor random_image(std::mt19937_64& rng, int c, int h, int w, double lo = 0.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    ImageTensor img(c, h, w);
    for (auto& v : img.data()) v = u(rng);
    return img;
}

inline Tensor random_tensor(std::mt19937_64& rng, Shape s, double sd = 1.0) {
    std::normal_distribution<double> n(0.0, sd);
    Tensor t(s);
    for (auto& v : t.vec()) v = n(rng);
    return t;
}

inline double central_difference(const std::function<double()>& f, double& x, double h) {
    const double saved = x;
    x = saved + h;
    const double up = f();
    x = saved - h;
    const double down = f();
    x = saved;
    return (up - down) / (2.0 * h);
}

inline double relative_error(double a, double b) {
    const double denom = std::max({std::abs(a), std::abs(b), 1e-12});
    return std::abs(a - b) / denom;
}

}  // namespace dhue::testing
