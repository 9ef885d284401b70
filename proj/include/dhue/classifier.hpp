#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dhue/autodiff.hpp"

namespace dhue {

// Anything that maps a batch of centred-range images to logits and can be
// differentiated with respect to its input (PGD needs this).
class DifferentiableClassifier {
public:
    virtual ~DifferentiableClassifier() = default;
    virtual ad::Var logits(const ad::Var& centered_batch) const = 0;
    virtual int num_classes() const = 0;
};

// small-cnn: per entry of `widths`, a 3x3 conv + ReLU, with 2x2 average
// pooling between stages; then global average pooling and a linear head.
struct ClassifierConfig {
    std::string architecture = "small-cnn";
    int channels = 3;
    int classes = 10;
    std::vector<int> widths{16, 32};

    void validate() const;
};

struct ClassifierTrainConfig {
    int iterations = 2000;
    int batch_size = 32;
    double learning_rate = 0.1;  // cosine-decayed to zero
    double momentum = 0.9;
    double weight_decay = 5e-4;
    std::uint64_t seed = 0;
};

class ClassifierState : public DifferentiableClassifier {
public:
    ClassifierState() = default;
    ClassifierState(ClassifierConfig config, std::vector<Tensor> params);

    const ClassifierConfig& config() const { return config_; }
    std::vector<Tensor>& params() { return params_; }
    const std::vector<Tensor>& params() const { return params_; }

    ClassifierTrainConfig train_config;

    ad::Var logits(const ad::Var& centered_batch) const override;
    int num_classes() const override { return config_.classes; }

    // Forward pass against caller-bound parameters (same order as params()).
    ad::Var logits_with(const ad::Var& centered_batch, const std::vector<ad::Var>& bound) const;
    // Output of the last conv stage after its activation, before pooling.
    ad::Var trunk_with(const ad::Var& centered_batch, const std::vector<ad::Var>& bound) const;

private:
    ClassifierConfig config_;
    std::vector<Tensor> params_;  // conv w,b per stage, then head w,b
};

ClassifierState init_classifier(const ClassifierConfig& config, std::uint64_t seed);

// Argmax predictions for a unit-range batch {n,c,h,w}.
std::vector<int> predict(const DifferentiableClassifier& model, const Tensor& unit_batch);

inline constexpr std::uint32_t kClassifierCheckpointVersion = 1;
void save_classifier(const std::filesystem::path& path, const ClassifierState& state);
ClassifierState load_classifier(const std::filesystem::path& path);

// Linear softmax model over flattened pixels; handy as an analytically
// tractable target for attacks.
class LinearClassifier : public DifferentiableClassifier {
public:
    LinearClassifier(Tensor weight, Tensor bias);  // {k, c, h, w}, {1, k, 1, 1}
    ad::Var logits(const ad::Var& centered_batch) const override;
    int num_classes() const override { return weight_.shape().n; }

private:
    Tensor weight_;
    Tensor bias_;
};

}  // namespace dhue
