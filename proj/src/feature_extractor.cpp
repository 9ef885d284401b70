#include "dhue/feature_extractor.hpp"

#include <cmath>
#include <fmt/format.h>

#include "dhue/classifier.hpp"
#include "dhue/error.hpp"
#include "dhue/random.hpp"

namespace dhue {

using ad::Var;

FeatureExtractor::FeatureExtractor(std::string backbone_id, std::vector<Stage> stages, Activation act,
                                   std::vector<double> norm_mean, std::vector<double> norm_std)
    : id_(std::move(backbone_id)), stages_(std::move(stages)), act_(act), mean_(std::move(norm_mean)),
      std_(std::move(norm_std)) {
    if (stages_.empty()) throw FormatError("backbone has no conv stages");
    input_channels_ = stages_.front().weight.shape().c;
    int in = input_channels_;
    for (const auto& s : stages_) {
        if (s.weight.shape().c != in) throw FormatError("backbone stage channel mismatch");
        if (s.bias.size() != static_cast<std::size_t>(s.weight.shape().n)) throw FormatError("backbone bias mismatch");
        in = s.weight.shape().n;
    }
    output_dim_ = in;
    if (mean_.empty()) mean_.assign(input_channels_, 0.0);
    if (std_.empty()) std_.assign(input_channels_, 1.0);
    if (static_cast<int>(mean_.size()) != input_channels_ || static_cast<int>(std_.size()) != input_channels_) {
        throw ConfigError("normalisation constants must have one value per input channel");
    }
    for (double s : std_)
        if (!(s > 0.0)) throw ConfigError("normalisation std must be positive");
}

Var FeatureExtractor::extract(const Var& x) const {
    const Shape s = x.shape();
    if (s.c != input_channels_) {
        throw ShapeError(fmt::format("backbone '{}' expects {} channels, got {}", id_, input_channels_, s.c));
    }
    // (x - mean) / std as a per-channel affine map; constants, so only x carries gradient.
    Tensor scale_t(s), shift_t(s);
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c)
            for (int y = 0; y < s.h; ++y)
                for (int xx = 0; xx < s.w; ++xx) {
                    scale_t.at(n, c, y, xx) = 1.0 / std_[c];
                    shift_t.at(n, c, y, xx) = -mean_[c] / std_[c];
                }
    Var h = ad::add(ad::mul(x, ad::constant(std::move(scale_t))), ad::constant(std::move(shift_t)));
    for (std::size_t i = 0; i < stages_.size(); ++i) {
        if (i > 0) {
            if (h.shape().h % 2 || h.shape().w % 2) throw ShapeError("backbone input too small for its pooling stages");
            h = ad::avg_pool2(h);
        }
        h = ad::conv2d(h, ad::constant(stages_[i].weight), ad::constant(stages_[i].bias));
        if (act_ == Activation::leaky_relu) h = ad::leaky_relu(h, 0.1);
        if (act_ == Activation::relu) h = ad::relu(h);
    }
    return ad::global_avg_pool(h);
}

std::vector<double> FeatureExtractor::extract(const ImageTensor& x) const {
    Var f = extract(ad::constant(x.to_tensor()));
    return f.value().vec();
}

namespace {

FeatureExtractor toy_backbone(const BackboneSpec& spec, bool linear) {
    Rng rng(spec.seed);
    std::vector<FeatureExtractor::Stage> stages;
    int in = spec.channels;
    for (int out : {8, 16}) {
        FeatureExtractor::Stage s{Tensor(Shape{out, in, 3, 3}), Tensor(Shape{1, out, 1, 1})};
        std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / (in * 9.0)));
        for (auto& v : s.weight.vec()) v = dist(rng);
        stages.push_back(std::move(s));
        in = out;
    }
    return FeatureExtractor(spec.backbone_id, std::move(stages),
                            linear ? FeatureExtractor::Activation::identity : FeatureExtractor::Activation::leaky_relu,
                            spec.norm_mean, spec.norm_std);
}

FeatureExtractor classifier_backbone(const BackboneSpec& spec) {
    if (spec.checkpoint.empty()) throw ConfigError("backbone 'classifier' needs a checkpoint path");
    ClassifierState cls = load_classifier(spec.checkpoint);
    std::vector<FeatureExtractor::Stage> stages;
    for (std::size_t i = 0; i < cls.config().widths.size(); ++i) {
        stages.push_back({cls.params()[2 * i], cls.params()[2 * i + 1]});
    }
    auto mean = spec.norm_mean.empty() ? std::vector<double>(cls.config().channels, 0.5) : spec.norm_mean;
    auto sd = spec.norm_std.empty() ? std::vector<double>(cls.config().channels, 1.0) : spec.norm_std;
    return FeatureExtractor("classifier", std::move(stages), FeatureExtractor::Activation::relu, std::move(mean),
                            std::move(sd));
}

}  // namespace

FeatureExtractor load_backbone(const BackboneSpec& spec) {
    FeatureExtractor fx = [&] {
        if (spec.backbone_id == "toy-linear") return toy_backbone(spec, true);
        if (spec.backbone_id == "toy-conv") return toy_backbone(spec, false);
        if (spec.backbone_id == "classifier") return classifier_backbone(spec);
        throw ConfigError("unknown backbone '" + spec.backbone_id + "'");
    }();
    if (spec.declared_dim > 0 && spec.declared_dim != fx.output_dim()) {
        throw FormatError(fmt::format("backbone output_dim {} does not match declared {}", fx.output_dim(),
                                      spec.declared_dim));
    }
    return fx;
}

}  // namespace dhue
