#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dhue/autodiff.hpp"
#include "dhue/feature_extractor.hpp"
#include "dhue/inn.hpp"
#include "dhue/manifest.hpp"
#include "dhue/objectives.hpp"
#include "dhue/semantic_bank.hpp"

namespace dhue {

struct AdamConfig {
    double beta1 = 0.5;
    double beta2 = 0.999;
    double eps = 1e-6;
};

// Bias-corrected Adam over a fixed list of tensors.
class Adam {
public:
    Adam(AdamConfig cfg, double learning_rate) : cfg_(cfg), lr_(learning_rate) {}
    void step(const std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads);
    long steps() const { return t_; }

private:
    AdamConfig cfg_;
    double lr_;
    long t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

struct DHTrainConfig {
    int iterations = 5000;
    int batch_size = 24;
    AdamConfig adam;
    double learning_rate = std::pow(10.0, -4.5);
    LossWeights weights;
    std::uint64_t seed = 0;

    void validate() const;
};

struct TrainLogRecord {
    int iteration = 0;
    LossBreakdown loss;
};

struct DHTrainOptions {
    std::function<void(const TrainLogRecord&)> on_iteration;
    // Where to write the last finite parameters if the loss diverges.
    std::optional<std::filesystem::path> divergence_checkpoint;
    // Start from these parameters instead of a fresh init.
    std::optional<HidingModelParams> initial;
};

struct DHTrainResult {
    HidingModelParams model;
    std::vector<TrainLogRecord> log;  // one record per iteration, loss before the update
};

// Minimises the total objective with Adam. Each step draws batch_size
// records uniformly, pairs every record with a hidden image of its class and
// reveals with a fresh standard-normal latent. Throws NumericError on a
// non-finite loss or gradient.
DHTrainResult train_dh(const LabeledDataset& train, const HiddenBank& bank, const HidingConfig& architecture,
                       const DHTrainConfig& cfg, const FeatureExtractor& extractor, const DHTrainOptions& opts = {});

// JSON lines: {"iteration","hide","freq","reveal","conc","total"}
void write_train_log(const std::filesystem::path& path, const std::vector<TrainLogRecord>& log);

enum class ClipMode { strict, soft };
const char* to_string(ClipMode m);
ClipMode parse_clip_mode(const std::string& s);

// strict: x_c + clamp(raw - x_c, -eps, eps), then [0,1]; soft: [0,1] only.
ImageTensor clip_perturbation(const ImageTensor& x_ue_raw, const ImageTensor& x_c, double eps, ClipMode mode);

// 10 log10(1 / MSE) for unit-range images; +infinity when identical.
double psnr(const ImageTensor& a, const ImageTensor& b);

// Hidden image for a record: the class image, or in sample-wise mode the
// entry at hash(image_id, seed) mod the class collection size.
const BankImage& pick_hidden(const HiddenBank& bank, const LabeledRecord& record, std::uint64_t seed);

struct GeneratedDataset {
    LabeledDataset dataset;  // 8-bit quantised, as stored
    std::vector<ManifestEntry> entries;
};

GeneratedDataset generate_ue(const LabeledDataset& clean, const HiddenBank& bank, const HidingModelParams& model,
                             ClipMode mode, std::uint64_t seed, double eps = kDefaultEpsilon);

}  // namespace dhue
