#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dhue/image.hpp"

namespace dhue {

inline constexpr const char* kManifestVersion = "1";
inline constexpr const char* kManifestFile = "manifest.jsonl";

struct ManifestEntry {
    std::string image_id;
    std::string path;  // relative to the manifest's directory
    int label = 0;
    std::optional<std::string> hidden_image_id;
    std::optional<std::string> clip_mode;
    std::optional<double> psnr;  // +inf when the images are identical

    bool operator==(const ManifestEntry&) const = default;
};

// JSON-lines file: a header record {"format","version","class_count","count"}
// followed by one record per entry with keys image_id, path, label and the
// optional hidden_image_id, clip_mode, psnr ("inf" for the infinite sentinel).
struct DatasetManifest {
    std::string version = kManifestVersion;
    int class_count = 0;
    std::vector<ManifestEntry> entries;

    bool operator==(const DatasetManifest&) const = default;
};

std::string serialize_manifest(const DatasetManifest& m);
void write_manifest(const std::filesystem::path& path, const DatasetManifest& m);
// Rejects unknown versions and entries whose file does not exist next to the manifest.
DatasetManifest read_manifest(const std::filesystem::path& path);

// Dataset directory = manifest.jsonl + images/<image_id>.png.
// `meta`, when given, must align with dataset.records and supplies the optional fields.
DatasetManifest save_dataset(const std::filesystem::path& dir, const LabeledDataset& dataset,
                             const std::vector<ManifestEntry>* meta = nullptr);
LabeledDataset load_dataset(const std::filesystem::path& dir, DatasetManifest* manifest_out = nullptr);

}  // namespace dhue
