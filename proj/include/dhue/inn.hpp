#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "dhue/autodiff.hpp"
#include "dhue/image.hpp"
#include "dhue/wavelet.hpp"

namespace dhue {

enum class Nonlinearity { leaky_relu, tanh };

Nonlinearity parse_nonlinearity(const std::string& id);
const char* to_string(Nonlinearity n);

// Dense (concatenative) conv stack: `depth` 3x3 convs, each fed the
// concatenation of the input and every earlier output. The first depth-1
// layers emit `width` channels followed by the nonlinearity; the last maps
// back to the input channel count with no activation.
struct SubnetConfig {
    int width = 32;
    int depth = 5;
    Nonlinearity nonlinearity = Nonlinearity::leaky_relu;

    bool operator==(const SubnetConfig&) const = default;
};

struct HidingConfig {
    int channels = 3;  // image channels; sub-band stacks carry 4x this
    int blocks = 8;
    double alpha = 1.0;
    SubnetConfig subnet;

    void validate() const;
    bool operator==(const HidingConfig&) const = default;
};

struct ConvParams {
    Tensor weight;  // {out, in, 3, 3}
    Tensor bias;    // {1, out, 1, 1}
};

struct SubnetParams {
    std::vector<ConvParams> layers;
};

struct CouplingBlockParams {
    SubnetParams phi;
    SubnetParams rho;
    SubnetParams eta;
    double alpha = 1.0;
};

struct HidingModelParams {
    HidingConfig config;
    std::vector<CouplingBlockParams> blocks;
    std::uint64_t seed = 0;

    // Every weight/bias tensor in a fixed order (block, phi/rho/eta, layer, w/b).
    std::vector<Tensor*> tensors();
    std::vector<const Tensor*> tensors() const;
    std::size_t parameter_count() const;
};

// Bound on the log-scale: s = kLogScaleBound * tanh(alpha * rho / kLogScaleBound).
inline constexpr double kLogScaleBound = 5.0;

struct InitOptions {
    bool zero_final_layer = true;  // untrained network is the identity map
    double weight_scale = 1.0;     // multiplies the He-normal standard deviation
};

HidingModelParams init_params(const HidingConfig& config, std::uint64_t seed, InitOptions opts = {});

// Standard normal coefficients shaped like dwt() of a CxHxW image.
SubbandStack sample_latent(int channels, int height, int width, std::uint64_t seed);
Tensor sample_latent(const Shape& packed_shape, std::uint64_t seed);

std::pair<SubbandStack, SubbandStack> block_forward(const SubbandStack& zc_prev, const SubbandStack& zh_prev,
                                                    const CouplingBlockParams& block, const HidingConfig& config);
std::pair<SubbandStack, SubbandStack> block_inverse(const SubbandStack& zc, const SubbandStack& zh,
                                                    const CouplingBlockParams& block, const HidingConfig& config);

struct HideResult {
    ImageTensor x_ue_raw;  // unclamped
    SubbandStack z_h_final;
};

struct RevealResult {
    ImageTensor x_c_rev;
    ImageTensor x_h_rev;
};

HideResult forward_hide(const ImageTensor& x_c, const ImageTensor& x_h, const HidingModelParams& model);
RevealResult reveal(const ImageTensor& x_ue, const SubbandStack& r, const HidingModelParams& model);

// Differentiable, batched form of the network. Parameters are bound as autodiff
// leaves (trainable) or constants.
class BoundHidingModel {
public:
    BoundHidingModel(const HidingModelParams& params, bool trainable);

    const HidingConfig& config() const { return config_; }
    // Same order as HidingModelParams::tensors().
    const std::vector<ad::Var>& parameters() const { return flat_; }

    std::pair<ad::Var, ad::Var> block_forward(std::size_t block, const ad::Var& zc, const ad::Var& zh) const;
    std::pair<ad::Var, ad::Var> block_inverse(std::size_t block, const ad::Var& zc, const ad::Var& zh) const;

    struct Hidden {
        ad::Var x_ue_raw;
        ad::Var z_h_final;
    };
    struct Revealed {
        ad::Var x_c_rev;
        ad::Var x_h_rev;
    };
    // x_ue_raw = x_c + IDWT(z_c^N - z_c^0), which equals IDWT(z_c^N) by linearity
    // and is bit-exact x_c when every block is the identity.
    Hidden forward_hide(const ad::Var& x_c, const ad::Var& x_h) const;
    Revealed reveal(const ad::Var& x_ue, const ad::Var& r) const;

private:
    struct Subnet {
        std::vector<ad::Var> weights;
        std::vector<ad::Var> biases;
    };
    struct Block {
        Subnet phi, rho, eta;
        double alpha;
    };

    ad::Var run_subnet(const Subnet& net, const ad::Var& x) const;
    ad::Var log_scale(const Block& b, const ad::Var& zc) const;

    HidingConfig config_;
    std::vector<Block> blocks_;
    std::vector<ad::Var> flat_;
};

inline constexpr std::uint32_t kInnCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const HidingModelParams& model);
HidingModelParams load_checkpoint(const std::filesystem::path& path);

}  // namespace dhue
