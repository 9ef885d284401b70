#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "dhue/image.hpp"

namespace dhue {

// Nearest 8-bit level: round(v * 255), clamped to [0,255].
std::uint8_t quantize_level(double v);
// Snaps every value to the 8-bit grid, i.e. what save/load would produce.
ImageTensor quantize_8bit(const ImageTensor& img);

struct ExpectedShape {
    int channels;
    int height;
    int width;
};

// Lossless 8-bit PNG (gray for C=1, RGB for C=3). Input must be unit range.
void save_image(const std::filesystem::path& path, const ImageTensor& img);
ImageTensor load_image(const std::filesystem::path& path, std::optional<ExpectedShape> expect = std::nullopt);

std::vector<std::uint8_t> encode_png(const ImageTensor& img);
ImageTensor decode_png(const std::vector<std::uint8_t>& bytes);

}  // namespace dhue
