#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dhue/tensor.hpp"

namespace dhue {

// Binary container for model weights:
//   "DHUE" | kind[4] | u32 version | u64 header_len | header (JSON text)
//   | u32 tensor_count | per tensor: i32 n,c,h,w then n*c*h*w little-endian f64.
struct TensorArchive {
    std::string kind;  // four characters
    std::uint32_t version = 0;
    std::string header;
    std::vector<Tensor> tensors;
};

void write_archive(const std::filesystem::path& path, const TensorArchive& archive);
// Throws FormatError on wrong magic, kind or version.
TensorArchive read_archive(const std::filesystem::path& path, const std::string& kind, std::uint32_t version);

}  // namespace dhue
