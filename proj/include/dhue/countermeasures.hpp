#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dhue/classifier.hpp"
#include "dhue/image.hpp"

namespace dhue {

enum class Countermeasure {
    vanilla,
    cutout,
    cutmix,
    mixup,
    meanf,
    medianf,
    bdr,
    gray,
    gaussn,
    gaussf,
    jpeg10,
    jpeg50,
    at_linf,
    at_l2,
};

// Report column order.
inline constexpr std::array<Countermeasure, 14> kAllCountermeasures{
    Countermeasure::vanilla, Countermeasure::cutout, Countermeasure::cutmix,  Countermeasure::mixup,
    Countermeasure::meanf,   Countermeasure::medianf, Countermeasure::bdr,    Countermeasure::gray,
    Countermeasure::gaussn,  Countermeasure::gaussf,  Countermeasure::jpeg10, Countermeasure::jpeg50,
    Countermeasure::at_linf, Countermeasure::at_l2};

const char* to_string(Countermeasure c);
Countermeasure parse_countermeasure(const std::string& name);

enum class PgdNorm { linf, l2 };

struct CountermeasureParams {
    int pad = 4;               // vanilla pad-crop margin
    int cutout_size = -1;      // -1: half the image side
    double noise_std = 0.1;    // gaussn
    double gauss_sigma = 0.1;  // gaussf, 3x3 kernel
    int bdr_bits = 2;
    int jpeg_quality = 0;      // 0: taken from the name
    double at_eps = -1.0;      // -1: 8/255 (linf) or 1 (l2)
    double at_step = -1.0;     // -1: 2/255 (linf) or eps/4 (l2)
    int at_iters = 10;
};

struct CountermeasureSpec {
    Countermeasure name = Countermeasure::vanilla;
    CountermeasureParams params;
    std::uint64_t rng_seed = 0;

    // Resolves the -1/0 placeholders and checks ranges; throws ConfigError.
    CountermeasureSpec resolved(int image_side) const;
    bool is_preprocessing() const;
    bool is_adversarial() const;
};

// ---- augmentations (unit-range in, unit-range out unless noted) -----------

// Explicit-parameter forms, used by the seeded wrappers and by tests.
ImageTensor pad_crop_flip_at(const ImageTensor& img, int pad, int dy, int dx, bool flip);
ImageTensor random_resized_crop_at(const ImageTensor& img, int top, int left, int crop_h, int crop_w, int out_side,
                                   bool flip);
ImageTensor cutout_at(const ImageTensor& img, int cy, int cx, int size);
ImageTensor cutmix_at(const ImageTensor& a, const ImageTensor& b, int cy, int cx, int side);
ImageTensor mixup_at(const ImageTensor& a, const ImageTensor& b, double lambda);

// Sides <= 64: zero-pad by `pad`, random crop back to size, flip p=0.5.
// Sides >= 224: random-resized crop to 224, flip p=0.5. Output is centred.
ImageTensor vanilla_augment(const ImageTensor& img, std::uint64_t seed, int pad = 4);
// Same geometry, left in unit range.
ImageTensor vanilla_geometry(const ImageTensor& img, std::uint64_t seed, int pad = 4);
ImageTensor cutout(const ImageTensor& img, std::uint64_t seed, int size = -1);
ImageTensor cutmix(const ImageTensor& a, const ImageTensor& b, std::uint64_t seed);
ImageTensor mixup(const ImageTensor& a, const ImageTensor& b, std::uint64_t seed);

// ---- preprocessing -------------------------------------------------------

// 3x3 windows with reflect-101 borders.
ImageTensor mean_filter(const ImageTensor& img);
ImageTensor median_filter(const ImageTensor& img);
ImageTensor gaussian_filter(const ImageTensor& img, double sigma = 0.1);
// Row-major normalised 3x3 Gaussian weights.
std::array<double, 9> gaussian_kernel3(double sigma);

ImageTensor bdr(const ImageTensor& img, int bits = 2);
ImageTensor grayscale(const ImageTensor& img);
// The raw N(0, std^2) field added by gaussian_noise, before clamping.
std::vector<double> gaussian_noise_field(std::size_t count, std::uint64_t seed, double std = 0.1);
ImageTensor gaussian_noise(const ImageTensor& img, std::uint64_t seed, double std = 0.1);
ImageTensor jpeg(const ImageTensor& img, int quality);
std::vector<unsigned char> jpeg_encode(const ImageTensor& img, int quality);

// ---- adversary -----------------------------------------------------------

struct PgdConfig {
    PgdNorm norm = PgdNorm::linf;
    double eps = 8.0 / 255.0;
    double step = 2.0 / 255.0;
    int iters = 10;
    bool random_start = true;
    std::uint64_t seed = 0;
};

// Ascends cross-entropy on a unit-range batch {n,c,h,w}; the model sees the
// centred batch. Every sample stays inside its eps-ball and [0,1].
Tensor pgd_attack(const DifferentiableClassifier& model, const Tensor& unit_batch, std::span<const int> labels,
                  const PgdConfig& cfg);

// Applies a preprocessing countermeasure to one image (identity for the others).
ImageTensor apply_preprocessing(const CountermeasureSpec& spec, const ImageTensor& img, std::uint64_t seed);

}  // namespace dhue
