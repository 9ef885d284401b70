#pragma once

#include <cstdint>
#include <vector>

#include "dhue/image.hpp"
#include "dhue/semantic_bank.hpp"

namespace dhue {

// Toy shapes dataset used by the desk-scale runs: one shape class per label
// (square, disk, triangle, cross, ring, bar), drawn at a random position,
// size and colour pair over a noisy background.
struct SynthConfig {
    int classes = 4;  // up to 6
    int train_per_class = 200;
    int test_per_class = 50;
    int channels = 3;
    int side = 16;
    double noise_std = 0.04;
    bool random_polarity = true;  // when false the shape is always the lighter region
    std::uint64_t seed = 0;
};

struct SynthData {
    LabeledDataset train;
    LabeledDataset test;
    // One caption per training image; source_image_id points into `train`.
    std::vector<PromptRecord> prompts;
};

SynthData make_shapes(const SynthConfig& cfg);

// Training records as bank source images.
std::vector<SourceImage> as_sources(const LabeledDataset& ds);

}  // namespace dhue
