#include "dhue/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <fmt/format.h>

#include "dhue/error.hpp"

namespace dhue {

namespace {

std::vector<std::uint8_t> to_interleaved(const ImageTensor& img) {
    if (img.range() != RangeTag::unit) throw ShapeError("only unit-range images can be stored");
    if (img.channels() != 1 && img.channels() != 3) throw ShapeError("stored images need 1 or 3 channels");
    const int c = img.channels();
    std::vector<std::uint8_t> px(img.size());
    for (int y = 0; y < img.height(); ++y)
        for (int x = 0; x < img.width(); ++x)
            for (int ch = 0; ch < c; ++ch)
                px[(static_cast<std::size_t>(y) * img.width() + x) * c + ch] = quantize_level(img.at(ch, y, x));
    return px;
}

ImageTensor from_interleaved(const std::vector<std::uint8_t>& px, int c, int h, int w) {
    ImageTensor img(c, h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int ch = 0; ch < c; ++ch)
                img.at(ch, y, x) = px[(static_cast<std::size_t>(y) * w + x) * c + ch] / 255.0;
    return img;
}

png_image make_header(const ImageTensor& img) {
    png_image pi{};
    pi.version = PNG_IMAGE_VERSION;
    pi.width = static_cast<png_uint_32>(img.width());
    pi.height = static_cast<png_uint_32>(img.height());
    pi.format = img.channels() == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
    return pi;
}

// Finishes a read started with one of the png_image_begin_read_* calls.
ImageTensor finish_read(png_image& pi, const std::string& what) {
    const bool gray = (pi.format & PNG_FORMAT_FLAG_COLOR) == 0;
    pi.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
    const int c = gray ? 1 : 3;
    std::vector<std::uint8_t> px(PNG_IMAGE_SIZE(pi));
    if (!png_image_finish_read(&pi, nullptr, px.data(), 0, nullptr)) {
        std::string msg = pi.message;
        png_image_free(&pi);
        throw FormatError(fmt::format("{}: {}", what, msg));
    }
    return from_interleaved(px, c, static_cast<int>(pi.height), static_cast<int>(pi.width));
}

}  // namespace

std::uint8_t quantize_level(double v) {
    return static_cast<std::uint8_t>(std::clamp(std::lround(v * 255.0), 0L, 255L));
}

ImageTensor quantize_8bit(const ImageTensor& img) {
    ImageTensor out = img;
    for (auto& v : out.data()) v = quantize_level(v) / 255.0;
    return out;
}

void save_image(const std::filesystem::path& path, const ImageTensor& img) {
    auto px = to_interleaved(img);
    png_image pi = make_header(img);
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    if (!png_image_write_to_file(&pi, path.c_str(), 0, px.data(), 0, nullptr)) {
        throw IoError(fmt::format("cannot write '{}': {}", path.string(), pi.message));
    }
}

ImageTensor load_image(const std::filesystem::path& path, std::optional<ExpectedShape> expect) {
    if (!std::filesystem::exists(path)) throw IoError("image file not found: " + path.string());
    png_image pi{};
    pi.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&pi, path.c_str())) {
        throw FormatError(fmt::format("'{}' is not a readable PNG: {}", path.string(), pi.message));
    }
    ImageTensor img = finish_read(pi, path.string());
    if (expect && (img.channels() != expect->channels || img.height() != expect->height ||
                   img.width() != expect->width)) {
        throw ShapeError(fmt::format("'{}' has shape {}, expected {}x{}x{}", path.string(), img.shape_str(),
                                     expect->channels, expect->height, expect->width));
    }
    return img;
}

std::vector<std::uint8_t> encode_png(const ImageTensor& img) {
    auto px = to_interleaved(img);
    png_image pi = make_header(img);
    png_alloc_size_t len = 0;
    if (!png_image_write_to_memory(&pi, nullptr, &len, 0, px.data(), 0, nullptr)) {
        throw IoError(std::string("png encode failed: ") + pi.message);
    }
    std::vector<std::uint8_t> out(len);
    if (!png_image_write_to_memory(&pi, out.data(), &len, 0, px.data(), 0, nullptr)) {
        throw IoError(std::string("png encode failed: ") + pi.message);
    }
    out.resize(len);
    return out;
}

ImageTensor decode_png(const std::vector<std::uint8_t>& bytes) {
    png_image pi{};
    pi.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_memory(&pi, bytes.data(), bytes.size())) {
        throw FormatError(std::string("not a PNG: ") + pi.message);
    }
    return finish_read(pi, "png buffer");
}

}  // namespace dhue
