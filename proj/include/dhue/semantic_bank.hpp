#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "dhue/image.hpp"

namespace dhue {

struct PromptRecord {
    std::string prompt_id;
    std::string text;
    std::vector<double> embedding;  // unit norm
    std::string source_image_id;
};

// Binary edge mask. `low`/`high` are the hysteresis thresholds as fractions
// of the maximum smoothed gradient magnitude.
struct EdgeMap {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> values;
    double low = 0.0;
    double high = 0.0;

    std::uint8_t at(int y, int x) const { return values[static_cast<std::size_t>(y) * width + x]; }
    ImageTensor to_image() const;
    static EdgeMap from_image(const ImageTensor& img, double low, double high);
    bool operator==(const EdgeMap&) const = default;
};

inline constexpr double kCannyLow = 0.1;
inline constexpr double kCannyHigh = 0.2;

EdgeMap canny(const ImageTensor& img, double low = kCannyLow, double high = kCannyHigh);

struct KMeansResult {
    std::vector<int> assignments;
    std::vector<std::vector<double>> centroids;
    std::vector<double> inertia_history;  // after each assignment step
    int iterations = 0;
};

inline constexpr int kKMeansMaxIterations = 300;

// k-means++ seeding followed by Lloyd iterations.
KMeansResult kmeans(const std::vector<std::vector<double>>& points, int k, std::uint64_t seed);

// One record per cluster: the one with the smallest cosine distance to the
// centroid, ties to the smallest prompt_id. Input order does not matter.
std::vector<PromptRecord> select_representatives(std::vector<PromptRecord> records, int k, std::uint64_t seed);

// ---- embedding providers -------------------------------------------------

class EmbeddingProvider {
public:
    virtual ~EmbeddingProvider() = default;
    virtual std::vector<double> embed(const std::string& text) = 0;
};

// Bag-of-words random projection keyed on word hashes; texts sharing words get
// correlated embeddings.
class HashEmbeddingProvider : public EmbeddingProvider {
public:
    explicit HashEmbeddingProvider(int dim = 64, std::uint64_t seed = 0) : dim_(dim), seed_(seed) {}
    std::vector<double> embed(const std::string& text) override;

private:
    int dim_;
    std::uint64_t seed_;
};

struct HttpEndpoint {
    std::string url;  // http://host:port/path
    double timeout_s = 30.0;
};

// POST {"text": ...} -> {"embedding": [...]}
class HttpEmbeddingProvider : public EmbeddingProvider {
public:
    explicit HttpEmbeddingProvider(HttpEndpoint endpoint) : endpoint_(std::move(endpoint)) {}
    std::vector<double> embed(const std::string& text) override;

private:
    HttpEndpoint endpoint_;
};

void embed_prompts(std::vector<PromptRecord>& records, EmbeddingProvider& provider);

// ---- generation backends -------------------------------------------------

struct GenerationRequest {
    std::string prompt;
    EdgeMap edge_map;
    std::uint64_t seed = 0;
    int channels = 3;
    int height = 0;
    int width = 0;
};

class GenerationBackend {
public:
    virtual ~GenerationBackend() = default;
    // Throws BackendError on failure.
    virtual ImageTensor generate(const GenerationRequest& request) = 0;
};

// Draws the edge map over a smooth texture whose palette follows the prompt
// and whose fine detail follows the seed.
class ProceduralBackend : public GenerationBackend {
public:
    ImageTensor generate(const GenerationRequest& request) override;
};

// POST {"prompt", "edge_map": base64 PNG, "seed", "size": [h, w], "channels"}
//   -> {"image": base64 PNG}
class HttpGenerationBackend : public GenerationBackend {
public:
    explicit HttpGenerationBackend(HttpEndpoint endpoint) : endpoint_(std::move(endpoint)) {}
    ImageTensor generate(const GenerationRequest& request) override;

private:
    HttpEndpoint endpoint_;
};

// ---- bank ----------------------------------------------------------------

enum class BankMode { class_wise, sample_wise };
const char* to_string(BankMode m);
BankMode parse_bank_mode(const std::string& s);

struct BankImage {
    std::string image_id;  // "class_<c>/<index>"
    std::uint64_t generation_seed = 0;
    ImageTensor image;
};

struct BankClass {
    int label = 0;
    std::string prompt_id;
    std::string prompt_text;
    std::string edge_map_id;
    EdgeMap edge_map;
    std::vector<BankImage> images;
};

struct HiddenBank {
    BankMode mode = BankMode::class_wise;
    std::uint64_t build_seed = 0;
    std::vector<BankClass> classes;  // indexed by label

    int class_count() const { return static_cast<int>(classes.size()); }
    // Throws FormatError when the class is absent.
    const BankClass& for_class(int label) const;
    void validate() const;
};

struct BankBuildConfig {
    BankMode mode = BankMode::class_wise;
    int images_per_class = 100;  // sample_wise only
    int channels = 3;
    int height = 32;
    int width = 32;
    double canny_low = kCannyLow;
    double canny_high = kCannyHigh;
    int retries = 2;  // extra attempts per request
    std::uint64_t seed = 0;
};

struct SourceImage {
    std::string image_id;
    ImageTensor image;
};

// Selects class_count representatives, derives their edge maps from the
// captioned source images and requests the hidden images. When `out_dir` is
// given, the bank is written there; on failure the directory is removed.
HiddenBank build_bank(int class_count, const BankBuildConfig& cfg, GenerationBackend& backend,
                      const std::vector<PromptRecord>& prompts, const std::vector<SourceImage>& sources,
                      const std::optional<std::filesystem::path>& out_dir = std::nullopt);

inline constexpr const char* kBankManifestFile = "bank.jsonl";
inline constexpr const char* kBankVersion = "1";

void save_bank(const std::filesystem::path& dir, const HiddenBank& bank);
HiddenBank load_bank(const std::filesystem::path& dir);

// Prompt files: JSON lines {"prompt_id", "text", "source_image_id"[, "embedding"]}.
std::vector<PromptRecord> read_prompts(const std::filesystem::path& path);
void write_prompts(const std::filesystem::path& path, const std::vector<PromptRecord>& prompts);

// base64 helpers shared by the HTTP adapters.
std::string base64_encode(const std::vector<unsigned char>& bytes);
std::vector<unsigned char> base64_decode(const std::string& text);

}  // namespace dhue
