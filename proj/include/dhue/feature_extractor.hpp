#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dhue/autodiff.hpp"
#include "dhue/image.hpp"

namespace dhue {

// Which backbone to load.
//   "toy-linear"  fixed-seed conv stack without nonlinearities, zero biases
//   "toy-conv"    same topology with leaky-ReLU activations
//   "classifier"  the convolutional trunk of a small-cnn classifier checkpoint
struct BackboneSpec {
    std::string backbone_id = "toy-conv";
    std::uint64_t seed = 7;
    int channels = 3;
    std::filesystem::path checkpoint;  // "classifier" only
    int declared_dim = 0;              // when > 0, must equal the loaded output_dim
    // Per-channel input normalisation (x - mean) / std; empty means identity.
    // "classifier" defaults to mean 0.5, std 1 (its centred input range).
    std::vector<double> norm_mean;
    std::vector<double> norm_std;
};

// Frozen feature provider: flattened, spatially averaged activations of the
// backbone's final convolutional stage. Read-only after construction.
class FeatureExtractor {
public:
    enum class Activation { identity, leaky_relu, relu };

    struct Stage {
        Tensor weight;  // {out, in, k, k}
        Tensor bias;    // {1, out, 1, 1}
    };

    FeatureExtractor(std::string backbone_id, std::vector<Stage> stages, Activation act, std::vector<double> norm_mean,
                     std::vector<double> norm_std);

    const std::string& backbone_id() const { return id_; }
    int output_dim() const { return output_dim_; }
    int input_channels() const { return input_channels_; }

    std::vector<double> extract(const ImageTensor& x) const;
    // {n,c,h,w} -> {n,output_dim,1,1}; differentiable w.r.t. the input only.
    ad::Var extract(const ad::Var& x) const;

private:
    std::string id_;
    std::vector<Stage> stages_;
    Activation act_;
    std::vector<double> mean_;
    std::vector<double> std_;
    int output_dim_ = 0;
    int input_channels_ = 0;
};

FeatureExtractor load_backbone(const BackboneSpec& spec);

}  // namespace dhue
