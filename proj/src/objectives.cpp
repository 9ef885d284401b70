#include "dhue/objectives.hpp"

#include <cmath>
#include <fmt/format.h>

#include "dhue/error.hpp"
#include "dhue/wavelet.hpp"

namespace dhue {

void LossWeights::validate() const {
    if (omega1 < 0 || omega2 < 0 || omega3 < 0) throw ConfigError("loss weights must be nonnegative");
    if (!(epsilon > 0.0 && epsilon < 1.0)) throw ConfigError("epsilon must lie in (0, 1)");
}

LossBreakdown LossBreakdown::combine(double hide, double freq, double reveal, double conc, const LossWeights& w) {
    return {hide, freq, reveal, conc, hide + w.omega1 * freq + w.omega2 * reveal + w.omega3 * conc};
}

namespace ad {

Var hide_loss(const Var& x_ue, const Var& x_c, double eps) {
    return mean(max_floor(sample_mse(x_ue, x_c), eps * eps));
}

Var freq_loss(const Var& x_ue, const Var& x_c) {
    return mean(sample_mse(extract_ll(x_ue), extract_ll(x_c)));
}

Var reveal_loss(const Var& x_h_rev, const Var& x_h) { return mean(sample_mse(x_h_rev, x_h)); }

Var mean_pair_cosine_distance(const Var& features, std::span<const int> labels, ConcDiagnostics* diag) {
    const Shape s = features.shape();
    const int n = s.n;
    const int d = static_cast<int>(s.sample_size());
    if (static_cast<int>(labels.size()) != n) throw ShapeError("concentration loss: labels do not match batch");
    const Tensor& f = features.value();

    std::vector<double> norms(n);
    for (int i = 0; i < n; ++i) {
        double acc = 0.0;
        for (int k = 0; k < d; ++k) acc += f[i * d + k] * f[i * d + k];
        norms[i] = std::sqrt(acc);
    }
    constexpr double kZero = 1e-12;

    struct Pair {
        int i, j;
        double cos;
        bool degenerate;
    };
    std::vector<Pair> pairs;
    double total = 0.0;
    std::size_t zero_pairs = 0;
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            if (labels[i] != labels[j]) continue;
            if (norms[i] < kZero || norms[j] < kZero) {
                pairs.push_back({i, j, 0.0, true});
                total += 1.0;
                ++zero_pairs;
                continue;
            }
            double dot = 0.0;
            for (int k = 0; k < d; ++k) dot += f[i * d + k] * f[j * d + k];
            const double c = dot / (norms[i] * norms[j]);
            pairs.push_back({i, j, c, false});
            total += 1.0 - c;
        }
    if (diag) {
        diag->pairs += pairs.size();
        diag->zero_feature_pairs += zero_pairs;
    }
    if (pairs.empty()) return constant(Tensor::scalar(0.0));
    const double count = static_cast<double>(pairs.size());
    return make_op(Tensor::scalar(total / count), {features}, [pairs, norms, d, count](Node& self) {
        auto& p = self.parents[0];
        const Tensor& fv = p->value;
        const double g = self.grad[0] / count;
        // d(1 - cos)/d f_i = -(f_j / (|f_i||f_j|) - cos f_i / |f_i|^2)
        for (const auto& pr : pairs) {
            if (pr.degenerate) continue;
            const double ni = norms[pr.i], nj = norms[pr.j];
            for (int k = 0; k < d; ++k) {
                const double fi = fv[pr.i * d + k], fj = fv[pr.j * d + k];
                p->grad[pr.i * d + k] -= g * (fj / (ni * nj) - pr.cos * fi / (ni * ni));
                p->grad[pr.j * d + k] -= g * (fi / (ni * nj) - pr.cos * fj / (nj * nj));
            }
        }
    });
}

Var conc_loss(const Var& x_ue, const Var& x_c, std::span<const int> labels, const FeatureExtractor& extractor,
              ConcDiagnostics* diag) {
    Var maps = add_scalar(sub(x_ue, x_c), 0.5);
    return mean_pair_cosine_distance(extractor.extract(maps), labels, diag);
}

LossBreakdown LossTerms::values() const {
    return {hide.item(), freq.item(), reveal.item(), conc.item(), total.item()};
}

LossTerms total_loss(const Var& x_ue, const Var& x_c, const Var& x_h_rev, const Var& x_h, std::span<const int> labels,
                     const LossWeights& w, const FeatureExtractor& extractor, ConcDiagnostics* diag) {
    LossTerms t;
    t.hide = hide_loss(x_ue, x_c, w.epsilon);
    t.freq = freq_loss(x_ue, x_c);
    t.reveal = reveal_loss(x_h_rev, x_h);
    t.conc = conc_loss(x_ue, x_c, labels, extractor, diag);
    t.total = add(add(add(t.hide, scale(t.freq, w.omega1)), scale(t.reveal, w.omega2)), scale(t.conc, w.omega3));
    return t;
}

}  // namespace ad

double hide_loss(const ImageTensor& x_ue, const ImageTensor& x_c, double eps) {
    require_same_shape(x_ue, x_c, "hide_loss");
    return std::max(mse(x_ue, x_c), eps * eps);
}

double freq_loss(const ImageTensor& x_ue, const ImageTensor& x_c) {
    require_same_shape(x_ue, x_c, "freq_loss");
    return mse(extract_ll(x_ue), extract_ll(x_c));
}

double reveal_loss(const ImageTensor& x_h_rev, const ImageTensor& x_h) {
    require_same_shape(x_h_rev, x_h, "reveal_loss");
    return mse(x_h_rev, x_h);
}

ImageTensor perturbation_map(const ImageTensor& x_ue, const ImageTensor& x_c) {
    require_same_shape(x_ue, x_c, "perturbation_map");
    ImageTensor out = x_ue;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= x_c[i];
    out.set_range(RangeTag::signed_diff);
    return out;
}

double conc_loss(std::span<const ImageTensor> maps, std::span<const int> labels, const FeatureExtractor& extractor,
                 ConcDiagnostics* diag) {
    if (maps.empty()) throw ShapeError("conc_loss needs at least one perturbation map");
    if (maps.size() != labels.size()) throw ShapeError("conc_loss: maps and labels differ in length");
    std::vector<Tensor> parts;
    for (const auto& m : maps) {
        require_same_shape(m, maps.front(), "conc_loss");
        Tensor t = m.to_tensor();
        for (auto& v : t.vec()) v += 0.5;
        parts.push_back(std::move(t));
    }
    ad::Var feats = extractor.extract(ad::constant(stack(parts)));
    return ad::mean_pair_cosine_distance(feats, labels, diag).item();
}

}  // namespace dhue
