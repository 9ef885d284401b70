#include "dhue/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <random>

#include <fmt/format.h>

#include "dhue/error.hpp"
#include "dhue/image_io.hpp"
#include "dhue/random.hpp"

namespace dhue {

namespace {

constexpr std::array<const char*, 6> kShapes{"square", "disk", "triangle", "cross", "ring", "bar"};

struct Colour {
    const char* name;
    double r, g, b;
};

constexpr std::array<Colour, 8> kColours{{{"red", 0.85, 0.15, 0.15},
                                          {"green", 0.2, 0.75, 0.25},
                                          {"blue", 0.15, 0.25, 0.85},
                                          {"yellow", 0.9, 0.85, 0.2},
                                          {"purple", 0.6, 0.2, 0.7},
                                          {"white", 0.95, 0.95, 0.95},
                                          {"black", 0.05, 0.05, 0.05},
                                          {"orange", 0.95, 0.55, 0.1}}};

double luma(const Colour& c) { return 0.299 * c.r + 0.587 * c.g + 0.114 * c.b; }

bool contrast_ok(const Colour& fg, const Colour& bg, bool either_way) {
    const double d = luma(fg) - luma(bg);
    return (either_way ? std::abs(d) : d) >= 0.25;
}

// Shape membership in coordinates relative to the centre, scaled by radius.
bool inside(int shape, double u, double v) {
    switch (shape) {
        case 0: return std::abs(u) <= 1.0 && std::abs(v) <= 1.0;
        case 1: return u * u + v * v <= 1.0;
        case 2: return v >= -1.0 && v <= 1.0 && std::abs(u) <= (v + 1.0) / 2.0;
        case 3: return (std::abs(u) <= 0.35 && std::abs(v) <= 1.0) || (std::abs(v) <= 0.35 && std::abs(u) <= 1.0);
        case 4: {
            const double r2 = u * u + v * v;
            return r2 <= 1.0 && r2 >= 0.3;
        }
        default: return std::abs(u) <= 1.0 && std::abs(v) <= 0.3;
    }
}

struct Drawn {
    ImageTensor image;
    std::string caption;
};

Drawn draw(int shape, const SynthConfig& cfg, Rng& rng) {
    std::uniform_int_distribution<int> pick(0, static_cast<int>(kColours.size()) - 1);
    const Colour* fg = &kColours[pick(rng)];
    const Colour* bg = &kColours[pick(rng)];
    while (!contrast_ok(*fg, *bg, cfg.random_polarity)) {
        fg = &kColours[pick(rng)];
        bg = &kColours[pick(rng)];
    }
    const double side = cfg.side;
    std::uniform_real_distribution<double> radius(0.22 * side, 0.38 * side);
    const double rad = radius(rng);
    std::uniform_real_distribution<double> centre(rad, side - rad);
    const double cy = centre(rng), cx = centre(rng);
    std::normal_distribution<double> noise(0.0, cfg.noise_std);

    ImageTensor img(cfg.channels, cfg.side, cfg.side);
    for (int y = 0; y < cfg.side; ++y)
        for (int x = 0; x < cfg.side; ++x) {
            const bool in = inside(shape, (x + 0.5 - cx) / rad, (y + 0.5 - cy) / rad);
            const Colour& c = in ? *fg : *bg;
            const std::array<double, 3> rgb{c.r, c.g, c.b};
            for (int ch = 0; ch < cfg.channels; ++ch) {
                const double base = cfg.channels == 3 ? rgb[ch] : luma(c);
                img.at(ch, y, x) = std::clamp(base + noise(rng), 0.0, 1.0);
            }
        }
    return {quantize_8bit(img), fmt::format("a {} {} on a {} background", fg->name, kShapes[shape], bg->name)};
}

LabeledDataset make_split(const SynthConfig& cfg, const char* split, int per_class, std::vector<std::string>* captions) {
    LabeledDataset ds;
    ds.class_count = cfg.classes;
    Rng rng(derive_seed(cfg.seed, split));
    for (int i = 0; i < per_class; ++i)
        for (int c = 0; c < cfg.classes; ++c) {
            auto d = draw(c, cfg, rng);
            ds.records.push_back(
                {fmt::format("{}_{:05d}", split, static_cast<int>(ds.records.size())), std::move(d.image), c});
            if (captions) captions->push_back(std::move(d.caption));
        }
    return ds;
}

}  // namespace

SynthData make_shapes(const SynthConfig& cfg) {
    if (cfg.classes < 2 || cfg.classes > static_cast<int>(kShapes.size()))
        throw ConfigError(fmt::format("synthetic classes must lie in [2, {}]", kShapes.size()));
    if (cfg.train_per_class < 1 || cfg.test_per_class < 1) throw ConfigError("synthetic split sizes must be positive");
    if (cfg.side < 8 || (cfg.channels != 1 && cfg.channels != 3)) throw ConfigError("invalid synthetic image shape");
    if (cfg.noise_std < 0.0) throw ConfigError("noise_std must be nonnegative");
    SynthData out;
    std::vector<std::string> captions;
    out.train = make_split(cfg, "train", cfg.train_per_class, &captions);
    out.test = make_split(cfg, "test", cfg.test_per_class, nullptr);
    for (std::size_t i = 0; i < captions.size(); ++i)
        out.prompts.push_back({fmt::format("p{:05d}", i), captions[i], {}, out.train.records[i].image_id});
    return out;
}

std::vector<SourceImage> as_sources(const LabeledDataset& ds) {
    std::vector<SourceImage> out;
    out.reserve(ds.size());
    for (const auto& r : ds.records) out.push_back({r.image_id, r.image});
    return out;
}

}  // namespace dhue
