#include "dhue/manifest.hpp"

#include <cmath>
#include <fmt/format.h>
#include <fstream>
#include "json.hpp"
#include <sstream>

#include "dhue/error.hpp"
#include "dhue/image_io.hpp"

namespace dhue {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json entry_to_json(const ManifestEntry& e) {
    json j{{"image_id", e.image_id}, {"path", e.path}, {"label", e.label}};
    if (e.hidden_image_id) j["hidden_image_id"] = *e.hidden_image_id;
    if (e.clip_mode) j["clip_mode"] = *e.clip_mode;
    if (e.psnr) {
        if (std::isinf(*e.psnr)) {
            j["psnr"] = "inf";
        } else {
            j["psnr"] = *e.psnr;
        }
    }
    return j;
}

ManifestEntry entry_from_json(const json& j) {
    ManifestEntry e;
    e.image_id = j.at("image_id").get<std::string>();
    e.path = j.at("path").get<std::string>();
    e.label = j.at("label").get<int>();
    if (j.contains("hidden_image_id")) e.hidden_image_id = j["hidden_image_id"].get<std::string>();
    if (j.contains("clip_mode")) e.clip_mode = j["clip_mode"].get<std::string>();
    if (j.contains("psnr")) {
        const auto& p = j["psnr"];
        if (p.is_string()) {
            if (p.get<std::string>() != "inf") throw FormatError("bad psnr value " + p.dump());
            e.psnr = std::numeric_limits<double>::infinity();
        } else {
            e.psnr = p.get<double>();
        }
    }
    return e;
}

}  // namespace

std::string serialize_manifest(const DatasetManifest& m) {
    std::ostringstream out;
    json header{{"format", "dhue-manifest"},
                {"version", m.version},
                {"class_count", m.class_count},
                {"count", m.entries.size()}};
    out << header.dump() << '\n';
    for (const auto& e : m.entries) out << entry_to_json(e).dump() << '\n';
    return out.str();
}

void write_manifest(const fs::path& path, const DatasetManifest& m) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write manifest " + path.string());
    f << serialize_manifest(m);
    if (!f) throw IoError("error writing manifest " + path.string());
}

DatasetManifest read_manifest(const fs::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("manifest not found: " + path.string());
    DatasetManifest m;
    std::string line;
    std::size_t declared = 0;
    bool have_header = false;
    try {
        while (std::getline(f, line)) {
            if (line.empty()) continue;
            json j = json::parse(line);
            if (!have_header) {
                if (j.value("format", "") != "dhue-manifest") throw FormatError("missing manifest header");
                m.version = j.at("version").get<std::string>();
                if (m.version != kManifestVersion) {
                    throw FormatError(fmt::format("manifest version '{}' unsupported (expected '{}')", m.version,
                                                  kManifestVersion));
                }
                m.class_count = j.at("class_count").get<int>();
                declared = j.at("count").get<std::size_t>();
                have_header = true;
                continue;
            }
            m.entries.push_back(entry_from_json(j));
        }
    } catch (const json::exception& e) {
        throw FormatError(fmt::format("malformed manifest {}: {}", path.string(), e.what()));
    }
    if (!have_header) throw FormatError("empty manifest " + path.string());
    if (declared != m.entries.size()) {
        throw FormatError(fmt::format("manifest declares {} entries but holds {}", declared, m.entries.size()));
    }
    const fs::path base = path.parent_path();
    for (const auto& e : m.entries) {
        if (!fs::exists(base / e.path)) {
            throw IoError(fmt::format("manifest entry '{}' references missing file '{}'", e.image_id, e.path));
        }
    }
    return m;
}

DatasetManifest save_dataset(const fs::path& dir, const LabeledDataset& dataset,
                             const std::vector<ManifestEntry>* meta) {
    dataset.validate();
    if (meta && meta->size() != dataset.size()) throw ShapeError("save_dataset: metadata/record count mismatch");
    fs::create_directories(dir / "images");
    DatasetManifest m;
    m.class_count = dataset.class_count;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        const auto& r = dataset.records[i];
        ManifestEntry e = meta ? (*meta)[i] : ManifestEntry{};
        e.image_id = r.image_id;
        e.label = r.label;
        e.path = "images/" + r.image_id + ".png";
        save_image(dir / e.path, r.image);
        m.entries.push_back(std::move(e));
    }
    write_manifest(dir / kManifestFile, m);
    return m;
}

LabeledDataset load_dataset(const fs::path& dir, DatasetManifest* manifest_out) {
    DatasetManifest m = read_manifest(dir / kManifestFile);
    LabeledDataset ds;
    ds.class_count = m.class_count;
    std::optional<ExpectedShape> shape;
    for (const auto& e : m.entries) {
        ImageTensor img = load_image(dir / e.path, shape);
        if (!shape) shape = ExpectedShape{img.channels(), img.height(), img.width()};
        ds.records.push_back({e.image_id, std::move(img), e.label});
    }
    ds.validate();
    if (manifest_out) *manifest_out = std::move(m);
    return ds;
}

}  // namespace dhue
