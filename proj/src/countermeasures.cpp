#include "dhue/countermeasures.hpp"

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>

#include <fmt/format.h>
#include <jpeglib.h>

#include "dhue/error.hpp"
#include "dhue/image_io.hpp"
#include "dhue/random.hpp"

namespace dhue {

namespace {

constexpr const char* kNames[] = {"vanilla", "cutout", "cutmix", "mixup",  "meanf",  "medianf", "bdr",
                                  "gray",    "gaussn", "gaussf", "jpeg10", "jpeg50", "at_linf", "at_l2"};

int reflect101(int i, int n) {
    if (n == 1) return 0;
    while (i < 0 || i >= n) i = i < 0 ? -i : 2 * (n - 1) - i;
    return i;
}

ImageTensor unit_like(const ImageTensor& img) { return ImageTensor(img.channels(), img.height(), img.width()); }

}  // namespace

const char* to_string(Countermeasure c) { return kNames[static_cast<int>(c)]; }

Countermeasure parse_countermeasure(const std::string& name) {
    for (std::size_t i = 0; i < std::size(kNames); ++i)
        if (name == kNames[i]) return static_cast<Countermeasure>(i);
    throw ConfigError("unknown countermeasure '" + name + "'");
}

CountermeasureSpec CountermeasureSpec::resolved(int side) const {
    CountermeasureSpec s = *this;
    auto& p = s.params;
    if (p.pad < 0) throw ConfigError("vanilla pad must be nonnegative");
    if (p.cutout_size < 0) p.cutout_size = side / 2;
    if (p.cutout_size > side) throw ConfigError(fmt::format("cutout box {} exceeds image side {}", p.cutout_size, side));
    if (!(p.noise_std > 0.0)) throw ConfigError("gaussn std must be positive");
    if (!(p.gauss_sigma > 0.0)) throw ConfigError("gaussf sigma must be positive");
    if (p.bdr_bits < 1 || p.bdr_bits > 8) throw ConfigError("bdr bits must lie in [1, 8]");
    if (p.jpeg_quality == 0) p.jpeg_quality = name == Countermeasure::jpeg10 ? 10 : 50;
    if (p.jpeg_quality < 1 || p.jpeg_quality > 100) throw ConfigError("jpeg quality must lie in [1, 100]");
    const bool l2 = name == Countermeasure::at_l2;
    if (p.at_eps < 0.0) p.at_eps = l2 ? 1.0 : 8.0 / 255.0;
    if (p.at_step < 0.0) p.at_step = l2 ? p.at_eps / 4.0 : 2.0 / 255.0;
    if (p.at_iters < 1) throw ConfigError("adversarial iterations must be positive");
    return s;
}

bool CountermeasureSpec::is_preprocessing() const {
    switch (name) {
        case Countermeasure::meanf:
        case Countermeasure::medianf:
        case Countermeasure::bdr:
        case Countermeasure::gray:
        case Countermeasure::gaussn:
        case Countermeasure::gaussf:
        case Countermeasure::jpeg10:
        case Countermeasure::jpeg50:
            return true;
        default:
            return false;
    }
}

bool CountermeasureSpec::is_adversarial() const {
    return name == Countermeasure::at_linf || name == Countermeasure::at_l2;
}

// ---- augmentations -------------------------------------------------------

ImageTensor pad_crop_flip_at(const ImageTensor& img, int pad, int dy, int dx, bool flip) {
    if (std::abs(dy) > pad || std::abs(dx) > pad) throw ShapeError("crop offset exceeds the padding");
    const int h = img.height(), w = img.width();
    ImageTensor out = unit_like(img);
    for (int c = 0; c < img.channels(); ++c)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const int sy = y + dy, sx = x + dx;
                const double v = (sy < 0 || sy >= h || sx < 0 || sx >= w) ? 0.0 : img.at(c, sy, sx);
                out.at(c, y, flip ? w - 1 - x : x) = v;
            }
    return out;
}

ImageTensor random_resized_crop_at(const ImageTensor& img, int top, int left, int crop_h, int crop_w, int out_side,
                                   bool flip) {
    if (top < 0 || left < 0 || crop_h < 1 || crop_w < 1 || top + crop_h > img.height() || left + crop_w > img.width())
        throw ShapeError("crop window outside the image");
    ImageTensor out(img.channels(), out_side, out_side);
    for (int c = 0; c < img.channels(); ++c)
        for (int y = 0; y < out_side; ++y)
            for (int x = 0; x < out_side; ++x) {
                // Pixel-centre aligned bilinear sampling.
                const double sy = std::clamp((y + 0.5) * crop_h / out_side - 0.5, 0.0, crop_h - 1.0);
                const double sx = std::clamp((x + 0.5) * crop_w / out_side - 0.5, 0.0, crop_w - 1.0);
                const int y0 = static_cast<int>(sy), x0 = static_cast<int>(sx);
                const int y1 = std::min(y0 + 1, crop_h - 1), x1 = std::min(x0 + 1, crop_w - 1);
                const double fy = sy - y0, fx = sx - x0;
                const double v = (1 - fy) * ((1 - fx) * img.at(c, top + y0, left + x0) + fx * img.at(c, top + y0, left + x1)) +
                                 fy * ((1 - fx) * img.at(c, top + y1, left + x0) + fx * img.at(c, top + y1, left + x1));
                out.at(c, y, flip ? out_side - 1 - x : x) = v;
            }
    return out;
}

ImageTensor cutout_at(const ImageTensor& img, int cy, int cx, int size) {
    ImageTensor out = img;
    const int y0 = std::max(0, cy - size / 2), y1 = std::min(img.height(), cy - size / 2 + size);
    const int x0 = std::max(0, cx - size / 2), x1 = std::min(img.width(), cx - size / 2 + size);
    for (int c = 0; c < img.channels(); ++c)
        for (int y = y0; y < y1; ++y)
            for (int x = x0; x < x1; ++x) out.at(c, y, x) = 0.0;
    return out;
}

ImageTensor cutmix_at(const ImageTensor& a, const ImageTensor& b, int cy, int cx, int side) {
    require_same_shape(a, b, "cutmix");
    ImageTensor out = a;
    const int y0 = std::max(0, cy - side / 2), y1 = std::min(a.height(), cy - side / 2 + side);
    const int x0 = std::max(0, cx - side / 2), x1 = std::min(a.width(), cx - side / 2 + side);
    for (int c = 0; c < a.channels(); ++c)
        for (int y = y0; y < y1; ++y)
            for (int x = x0; x < x1; ++x) out.at(c, y, x) = b.at(c, y, x);
    return out;
}

ImageTensor mixup_at(const ImageTensor& a, const ImageTensor& b, double lambda) {
    require_same_shape(a, b, "mixup");
    ImageTensor out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = lambda * a[i] + (1.0 - lambda) * b[i];
    return out;
}

ImageTensor vanilla_geometry(const ImageTensor& img, std::uint64_t seed, int pad) {
    Rng rng(seed);
    const int h = img.height(), w = img.width();
    if (h <= 64 && w <= 64) {
        std::uniform_int_distribution<int> off(-pad, pad);
        const int dy = off(rng), dx = off(rng);
        const bool flip = std::bernoulli_distribution(0.5)(rng);
        return pad_crop_flip_at(img, pad, dy, dx, flip);
    }
    if (h >= 224 && w >= 224) {
        std::uniform_real_distribution<double> area(0.08, 1.0), logr(std::log(3.0 / 4.0), std::log(4.0 / 3.0));
        int ch = h, cw = w, top = 0, left = 0;
        for (int attempt = 0; attempt < 10; ++attempt) {
            const double a = area(rng) * h * w, r = std::exp(logr(rng));
            const int tw = static_cast<int>(std::lround(std::sqrt(a * r)));
            const int th = static_cast<int>(std::lround(std::sqrt(a / r)));
            if (tw >= 1 && th >= 1 && tw <= w && th <= h) {
                ch = th;
                cw = tw;
                top = std::uniform_int_distribution<int>(0, h - th)(rng);
                left = std::uniform_int_distribution<int>(0, w - tw)(rng);
                break;
            }
        }
        const bool flip = std::bernoulli_distribution(0.5)(rng);
        return random_resized_crop_at(img, top, left, ch, cw, 224, flip);
    }
    throw ShapeError(fmt::format("vanilla augmentation supports sides <= 64 or >= 224, got {}", img.shape_str()));
}

ImageTensor vanilla_augment(const ImageTensor& img, std::uint64_t seed, int pad) {
    return rescale(vanilla_geometry(img, seed, pad), RangeTag::centered);
}

ImageTensor cutout(const ImageTensor& img, std::uint64_t seed, int size) {
    if (size < 0) size = std::min(img.height(), img.width()) / 2;
    Rng rng(seed);
    const int cy = std::uniform_int_distribution<int>(0, img.height() - 1)(rng);
    const int cx = std::uniform_int_distribution<int>(0, img.width() - 1)(rng);
    return cutout_at(img, cy, cx, size);
}

ImageTensor cutmix(const ImageTensor& a, const ImageTensor& b, std::uint64_t seed) {
    Rng rng(seed);
    const double ratio = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    const int side = static_cast<int>(ratio * std::min(a.height(), a.width()));
    const int cy = std::uniform_int_distribution<int>(0, a.height() - 1)(rng);
    const int cx = std::uniform_int_distribution<int>(0, a.width() - 1)(rng);
    return cutmix_at(a, b, cy, cx, side);
}

ImageTensor mixup(const ImageTensor& a, const ImageTensor& b, std::uint64_t seed) {
    Rng rng(seed);
    return mixup_at(a, b, std::uniform_real_distribution<double>(0.0, 1.0)(rng));
}

// ---- preprocessing -------------------------------------------------------

ImageTensor mean_filter(const ImageTensor& img) {
    ImageTensor out = img;
    const int h = img.height(), w = img.width();
    for (int c = 0; c < img.channels(); ++c)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double acc = 0.0;
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) acc += img.at(c, reflect101(y + dy, h), reflect101(x + dx, w));
                out.at(c, y, x) = acc / 9.0;
            }
    return out;
}

ImageTensor median_filter(const ImageTensor& img) {
    ImageTensor out = img;
    const int h = img.height(), w = img.width();
    std::array<double, 9> win{};
    for (int c = 0; c < img.channels(); ++c)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                int k = 0;
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) win[k++] = img.at(c, reflect101(y + dy, h), reflect101(x + dx, w));
                std::nth_element(win.begin(), win.begin() + 4, win.end());
                out.at(c, y, x) = win[4];
            }
    return out;
}

std::array<double, 9> gaussian_kernel3(double sigma) {
    std::array<double, 9> k{};
    double total = 0.0;
    for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
            k[(dy + 1) * 3 + dx + 1] = std::exp(-(dy * dy + dx * dx) / (2.0 * sigma * sigma));
            total += k[(dy + 1) * 3 + dx + 1];
        }
    for (auto& v : k) v /= total;
    return k;
}

ImageTensor gaussian_filter(const ImageTensor& img, double sigma) {
    const auto k = gaussian_kernel3(sigma);
    ImageTensor out = img;
    const int h = img.height(), w = img.width();
    for (int c = 0; c < img.channels(); ++c)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double acc = 0.0;
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx)
                        acc += k[(dy + 1) * 3 + dx + 1] * img.at(c, reflect101(y + dy, h), reflect101(x + dx, w));
                out.at(c, y, x) = acc;
            }
    return out;
}

ImageTensor bdr(const ImageTensor& img, int bits) {
    const double levels = std::ldexp(1.0, bits) - 1.0;
    ImageTensor out = img;
    for (auto& v : out.data()) v = std::round(v * levels) / levels;
    return out;
}

ImageTensor grayscale(const ImageTensor& img) {
    if (img.channels() != 3) throw ShapeError(fmt::format("grayscale needs 3 channels, got {}", img.channels()));
    ImageTensor out = img;
    const std::size_t plane = static_cast<std::size_t>(img.height()) * img.width();
    for (std::size_t i = 0; i < plane; ++i) {
        const double r = img[i], g = img[plane + i], b = img[2 * plane + i];
        // Already-gray pixels map to themselves exactly.
        const double y = (r == g && g == b) ? r : 0.299 * r + 0.587 * g + 0.114 * b;
        out[i] = out[plane + i] = out[2 * plane + i] = y;
    }
    return out;
}

std::vector<double> gaussian_noise_field(std::size_t count, std::uint64_t seed, double std) {
    Rng rng(seed);
    std::normal_distribution<double> nd(0.0, std);
    std::vector<double> out(count);
    for (auto& v : out) v = nd(rng);
    return out;
}

ImageTensor gaussian_noise(const ImageTensor& img, std::uint64_t seed, double std) {
    const auto field = gaussian_noise_field(img.size(), seed, std);
    ImageTensor out = img;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::clamp(img[i] + field[i], 0.0, 1.0);
    return out;
}

namespace {

struct JpegError {
    jpeg_error_mgr mgr;
    std::jmp_buf jump;
    char message[JMSG_LENGTH_MAX];
};

void jpeg_fail(j_common_ptr cinfo) {
    auto* err = reinterpret_cast<JpegError*>(cinfo->err);
    (*cinfo->err->format_message)(cinfo, err->message);
    std::longjmp(err->jump, 1);
}

std::vector<unsigned char> interleave(const ImageTensor& img) {
    const int c = img.channels();
    const std::size_t plane = static_cast<std::size_t>(img.height()) * img.width();
    std::vector<unsigned char> px(plane * c);
    for (std::size_t i = 0; i < plane; ++i)
        for (int k = 0; k < c; ++k) px[i * c + k] = quantize_level(img[k * plane + i]);
    return px;
}

}  // namespace

std::vector<unsigned char> jpeg_encode(const ImageTensor& img, int quality) {
    if (img.channels() != 1 && img.channels() != 3) throw ShapeError("jpeg: need 1 or 3 channels");
    if (quality < 1 || quality > 100) throw ConfigError("jpeg quality must lie in [1, 100]");
    const auto px = interleave(img);
    jpeg_compress_struct cinfo{};
    JpegError err{};
    cinfo.err = jpeg_std_error(&err.mgr);
    err.mgr.error_exit = jpeg_fail;
    unsigned char* buf = nullptr;
    unsigned long len = 0;
    if (setjmp(err.jump)) {
        jpeg_destroy_compress(&cinfo);
        std::free(buf);
        throw FormatError(std::string("jpeg encode failed: ") + err.message);
    }
    jpeg_create_compress(&cinfo);
    jpeg_mem_dest(&cinfo, &buf, &len);
    cinfo.image_width = static_cast<JDIMENSION>(img.width());
    cinfo.image_height = static_cast<JDIMENSION>(img.height());
    cinfo.input_components = img.channels();
    cinfo.in_color_space = img.channels() == 3 ? JCS_RGB : JCS_GRAYSCALE;
    jpeg_set_defaults(&cinfo);  // YCbCr with 2x2 luma sampling, i.e. 4:2:0
    jpeg_set_quality(&cinfo, quality, TRUE);
    jpeg_start_compress(&cinfo, TRUE);
    const std::size_t stride = static_cast<std::size_t>(img.width()) * img.channels();
    while (cinfo.next_scanline < cinfo.image_height) {
        JSAMPROW row = const_cast<JSAMPROW>(px.data() + cinfo.next_scanline * stride);
        jpeg_write_scanlines(&cinfo, &row, 1);
    }
    jpeg_finish_compress(&cinfo);
    jpeg_destroy_compress(&cinfo);
    std::vector<unsigned char> out(buf, buf + len);
    std::free(buf);
    return out;
}

ImageTensor jpeg(const ImageTensor& img, int quality) {
    const auto bytes = jpeg_encode(img, quality);
    jpeg_decompress_struct dinfo{};
    JpegError err{};
    dinfo.err = jpeg_std_error(&err.mgr);
    err.mgr.error_exit = jpeg_fail;
    if (setjmp(err.jump)) {
        jpeg_destroy_decompress(&dinfo);
        throw FormatError(std::string("jpeg decode failed: ") + err.message);
    }
    jpeg_create_decompress(&dinfo);
    jpeg_mem_src(&dinfo, bytes.data(), static_cast<unsigned long>(bytes.size()));
    jpeg_read_header(&dinfo, TRUE);
    dinfo.out_color_space = img.channels() == 3 ? JCS_RGB : JCS_GRAYSCALE;
    jpeg_start_decompress(&dinfo);
    const int c = img.channels();
    const std::size_t stride = static_cast<std::size_t>(dinfo.output_width) * c;
    std::vector<unsigned char> px(stride * dinfo.output_height);
    while (dinfo.output_scanline < dinfo.output_height) {
        JSAMPROW row = px.data() + dinfo.output_scanline * stride;
        jpeg_read_scanlines(&dinfo, &row, 1);
    }
    jpeg_finish_decompress(&dinfo);
    jpeg_destroy_decompress(&dinfo);
    ImageTensor out = unit_like(img);
    const std::size_t plane = static_cast<std::size_t>(img.height()) * img.width();
    for (std::size_t i = 0; i < plane; ++i)
        for (int k = 0; k < c; ++k) out[k * plane + i] = px[i * c + k] / 255.0;
    return out;
}

// ---- adversary -----------------------------------------------------------

Tensor pgd_attack(const DifferentiableClassifier& model, const Tensor& x, std::span<const int> labels,
                  const PgdConfig& cfg) {
    const Shape s = x.shape();
    if (static_cast<int>(labels.size()) != s.n) throw ShapeError("pgd_attack: labels do not match the batch");
    if (!(cfg.eps >= 0.0) || !(cfg.step >= 0.0) || cfg.iters < 0) throw ConfigError("pgd_attack: invalid budget");
    if (cfg.eps == 0.0) return x;
    const std::size_t d = s.sample_size();

    auto project = [&](Tensor& adv) {
        for (int i = 0; i < s.n; ++i) {
            double* a = adv.vec().data() + i * d;
            const double* o = x.vec().data() + i * d;
            if (cfg.norm == PgdNorm::linf) {
                for (std::size_t k = 0; k < d; ++k) a[k] = o[k] + std::clamp(a[k] - o[k], -cfg.eps, cfg.eps);
            } else {
                double n2 = 0.0;
                for (std::size_t k = 0; k < d; ++k) n2 += (a[k] - o[k]) * (a[k] - o[k]);
                const double n = std::sqrt(n2);
                if (n > cfg.eps) {
                    const double f = cfg.eps / n;
                    for (std::size_t k = 0; k < d; ++k) a[k] = o[k] + (a[k] - o[k]) * f;
                }
            }
            for (std::size_t k = 0; k < d; ++k) a[k] = std::clamp(a[k], 0.0, 1.0);
        }
    };

    Tensor adv = x;
    if (cfg.random_start) {
        Rng rng(cfg.seed);
        if (cfg.norm == PgdNorm::linf) {
            std::uniform_real_distribution<double> u(-cfg.eps, cfg.eps);
            for (auto& v : adv.vec()) v += u(rng);
        } else {
            std::normal_distribution<double> nd;
            std::uniform_real_distribution<double> u(0.0, 1.0);
            for (int i = 0; i < s.n; ++i) {
                std::vector<double> dir(d);
                double n2 = 0.0;
                for (auto& v : dir) {
                    v = nd(rng);
                    n2 += v * v;
                }
                const double r = cfg.eps * u(rng) / std::sqrt(n2);
                for (std::size_t k = 0; k < d; ++k) adv[i * d + k] += r * dir[k];
            }
        }
        project(adv);
    }

    for (int it = 0; it < cfg.iters; ++it) {
        Tensor centred = adv;
        for (auto& v : centred.vec()) v -= 0.5;
        ad::Var in = ad::parameter(std::move(centred));
        ad::cross_entropy(model.logits(in), labels).backward();
        const Tensor& g = in.grad();
        if (!g.all_finite()) throw NumericError("pgd_attack: non-finite input gradient");
        for (int i = 0; i < s.n; ++i) {
            double* a = adv.vec().data() + i * d;
            const double* gi = g.vec().data() + i * d;
            if (cfg.norm == PgdNorm::linf) {
                for (std::size_t k = 0; k < d; ++k) a[k] += cfg.step * ((gi[k] > 0) - (gi[k] < 0));
            } else {
                double n2 = 0.0;
                for (std::size_t k = 0; k < d; ++k) n2 += gi[k] * gi[k];
                if (n2 <= 0.0) continue;
                const double f = cfg.step / std::sqrt(n2);
                for (std::size_t k = 0; k < d; ++k) a[k] += f * gi[k];
            }
        }
        project(adv);
    }
    return adv;
}

ImageTensor apply_preprocessing(const CountermeasureSpec& spec, const ImageTensor& img, std::uint64_t seed) {
    const auto& p = spec.params;
    switch (spec.name) {
        case Countermeasure::meanf: return mean_filter(img);
        case Countermeasure::medianf: return median_filter(img);
        case Countermeasure::bdr: return bdr(img, p.bdr_bits);
        case Countermeasure::gray: return grayscale(img);
        case Countermeasure::gaussn: return gaussian_noise(img, seed, p.noise_std);
        case Countermeasure::gaussf: return gaussian_filter(img, p.gauss_sigma);
        case Countermeasure::jpeg10:
        case Countermeasure::jpeg50: return jpeg(img, p.jpeg_quality ? p.jpeg_quality : (spec.name == Countermeasure::jpeg10 ? 10 : 50));
        default: return img;
    }
}

}  // namespace dhue
