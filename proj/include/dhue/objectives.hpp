#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "dhue/autodiff.hpp"
#include "dhue/feature_extractor.hpp"
#include "dhue/image.hpp"

namespace dhue {

inline constexpr double kDefaultEpsilon = 8.0 / 255.0;

struct LossWeights {
    double omega1 = 1.0;     // low-frequency term
    double omega2 = 1.0;     // reveal term
    double omega3 = 1e-4;    // concentration term
    double epsilon = kDefaultEpsilon;  // perturbation radius, unit pixel scale

    void validate() const;
};

struct LossBreakdown {
    double hide = 0.0;
    double freq = 0.0;
    double reveal = 0.0;
    double conc = 0.0;
    double total = 0.0;

    static LossBreakdown combine(double hide, double freq, double reveal, double conc, const LossWeights& w);
};

// Counts pairs whose cosine distance fell back to 1 because a feature vector was zero.
struct ConcDiagnostics {
    std::size_t pairs = 0;
    std::size_t zero_feature_pairs = 0;
};

// max(MSE(x_ue, x_c), eps^2)
double hide_loss(const ImageTensor& x_ue, const ImageTensor& x_c, double eps);
// MSE between the LL sub-bands.
double freq_loss(const ImageTensor& x_ue, const ImageTensor& x_c);
double reveal_loss(const ImageTensor& x_h_rev, const ImageTensor& x_h);
ImageTensor perturbation_map(const ImageTensor& x_ue, const ImageTensor& x_c);
// Mean cosine distance of G(map + 0.5) over unordered same-class pairs; 0 without pairs.
double conc_loss(std::span<const ImageTensor> maps, std::span<const int> labels, const FeatureExtractor& extractor,
                 ConcDiagnostics* diag = nullptr);

namespace ad {

// Batch mean of the per-sample hinge max(MSE_i, eps^2).
Var hide_loss(const Var& x_ue, const Var& x_c, double eps);
Var freq_loss(const Var& x_ue, const Var& x_c);
Var reveal_loss(const Var& x_h_rev, const Var& x_h);
// features {n,d,1,1}: mean over same-label pairs of 1 - cos(f_i, f_j).
Var mean_pair_cosine_distance(const Var& features, std::span<const int> labels, ConcDiagnostics* diag = nullptr);
// Perturbation maps x_ue - x_c, shifted by +0.5 into image range, through the frozen extractor.
Var conc_loss(const Var& x_ue, const Var& x_c, std::span<const int> labels, const FeatureExtractor& extractor,
              ConcDiagnostics* diag = nullptr);

struct LossTerms {
    Var hide, freq, reveal, conc, total;
    LossBreakdown values() const;
};

LossTerms total_loss(const Var& x_ue, const Var& x_c, const Var& x_h_rev, const Var& x_h, std::span<const int> labels,
                     const LossWeights& weights, const FeatureExtractor& extractor, ConcDiagnostics* diag = nullptr);

}  // namespace ad

}  // namespace dhue
