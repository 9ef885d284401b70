#include "dhue/semantic_bank.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <deque>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>

#include <fmt/format.h>
#include <openssl/evp.h>

#include "dhue/error.hpp"
#include "dhue/image_io.hpp"
#include "dhue/random.hpp"
#include "httplib.h"
#include "json.hpp"

namespace dhue {

namespace fs = std::filesystem;
using json = nlohmann::json;

// ---- edge maps -----------------------------------------------------------

ImageTensor EdgeMap::to_image() const {
    ImageTensor img(1, height, width);
    for (std::size_t i = 0; i < values.size(); ++i) img[i] = values[i] ? 1.0 : 0.0;
    return img;
}

EdgeMap EdgeMap::from_image(const ImageTensor& img, double low, double high) {
    if (img.channels() != 1) throw ShapeError("edge map image must have one channel");
    EdgeMap e{img.height(), img.width(), std::vector<std::uint8_t>(img.size()), low, high};
    for (std::size_t i = 0; i < img.size(); ++i) e.values[i] = img[i] > 0.5 ? 1 : 0;
    return e;
}

namespace {

int reflect101(int i, int n) {
    if (n == 1) return 0;
    while (i < 0 || i >= n) i = i < 0 ? -i : 2 * (n - 1) - i;
    return i;
}

std::vector<double> to_gray(const ImageTensor& img) {
    const std::size_t plane = static_cast<std::size_t>(img.height()) * img.width();
    std::vector<double> g(plane);
    if (img.channels() == 1) {
        std::copy(img.data().begin(), img.data().end(), g.begin());
    } else if (img.channels() == 3) {
        for (std::size_t i = 0; i < plane; ++i)
            g[i] = 0.299 * img[i] + 0.587 * img[plane + i] + 0.114 * img[2 * plane + i];
    } else {
        throw ShapeError(fmt::format("canny: expected 1 or 3 channels, got {}", img.channels()));
    }
    return g;
}

std::vector<double> convolve(const std::vector<double>& src, int h, int w, const std::vector<double>& k, int ksize) {
    const int r = ksize / 2;
    std::vector<double> out(src.size());
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int dy = -r; dy <= r; ++dy)
                for (int dx = -r; dx <= r; ++dx)
                    acc += k[(dy + r) * ksize + dx + r] * src[reflect101(y + dy, h) * w + reflect101(x + dx, w)];
            out[y * w + x] = acc;
        }
    return out;
}

// Snap to a fixed grid so symmetric configurations compare equal despite
// different summation orders.
double snap(double v) { return std::round(v * 1e9) / 1e9; }

}  // namespace

EdgeMap canny(const ImageTensor& img, double low, double high) {
    if (!(low >= 0.0 && low < high)) throw ConfigError(fmt::format("canny: need 0 <= low < high, got {} {}", low, high));
    const int h = img.height(), w = img.width();
    EdgeMap out{h, w, std::vector<std::uint8_t>(static_cast<std::size_t>(h) * w, 0), low, high};

    std::vector<double> gk(25);
    double total = 0.0;
    for (int y = -2; y <= 2; ++y)
        for (int x = -2; x <= 2; ++x) total += gk[(y + 2) * 5 + x + 2] = std::exp(-(x * x + y * y) / (2 * 1.4 * 1.4));
    for (auto& v : gk) v /= total;
    const auto smooth = convolve(to_gray(img), h, w, gk, 5);
    const auto gx = convolve(smooth, h, w, {-1, 0, 1, -2, 0, 2, -1, 0, 1}, 3);
    const auto gy = convolve(smooth, h, w, {-1, -2, -1, 0, 0, 0, 1, 2, 1}, 3);

    std::vector<double> mag(gx.size());
    double max_mag = 0.0;
    for (std::size_t i = 0; i < mag.size(); ++i) {
        mag[i] = snap(std::hypot(snap(gx[i]), snap(gy[i])));
        max_mag = std::max(max_mag, mag[i]);
    }
    if (max_mag <= 0.0) return out;

    auto m_at = [&](int y, int x) { return (y < 0 || y >= h || x < 0 || x >= w) ? 0.0 : mag[y * w + x]; };
    std::vector<double> thin(mag.size(), 0.0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const std::size_t i = static_cast<std::size_t>(y) * w + x;
            if (mag[i] <= 0.0) continue;
            double angle = std::atan2(snap(gy[i]), snap(gx[i])) * 180.0 / M_PI;
            if (angle < 0) angle += 180.0;
            int dy = 0, dx = 0;
            if (angle < 22.5 || angle >= 157.5) dx = 1;
            else if (angle < 67.5) dy = dx = 1;
            else if (angle < 112.5) dy = 1;
            else { dy = 1; dx = -1; }
            const double before = m_at(y - dy, x - dx), after = m_at(y + dy, x + dx);
            if (mag[i] >= before && mag[i] > after) thin[i] = mag[i];
        }

    const double hi = high * max_mag, lo = low * max_mag;
    std::deque<std::pair<int, int>> queue;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            if (thin[y * w + x] >= hi && thin[y * w + x] > 0.0) {
                out.values[y * w + x] = 1;
                queue.emplace_back(y, x);
            }
    while (!queue.empty()) {
        auto [y, x] = queue.front();
        queue.pop_front();
        for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
                const int ny = y + dy, nx = x + dx;
                if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
                const std::size_t j = static_cast<std::size_t>(ny) * w + nx;
                if (out.values[j] || thin[j] < lo || thin[j] <= 0.0) continue;
                out.values[j] = 1;
                queue.emplace_back(ny, nx);
            }
    }
    return out;
}

// ---- clustering ----------------------------------------------------------

namespace {

double sq_dist(const std::vector<double>& a, const std::vector<double>& b) {
    double d = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) d += (a[i] - b[i]) * (a[i] - b[i]);
    return d;
}

}  // namespace

KMeansResult kmeans(const std::vector<std::vector<double>>& points, int k, std::uint64_t seed) {
    if (points.empty()) throw ConfigError("kmeans: empty input");
    if (k < 1 || k > static_cast<int>(points.size()))
        throw ConfigError(fmt::format("kmeans: k = {} but only {} points", k, points.size()));
    const std::size_t n = points.size(), dim = points[0].size();
    for (const auto& p : points)
        if (p.size() != dim) throw ShapeError("kmeans: embeddings differ in dimension");

    Rng rng(seed);
    KMeansResult r;
    std::vector<bool> chosen(n, false);
    std::size_t first = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
    r.centroids.push_back(points[first]);
    chosen[first] = true;
    std::vector<double> d2(n);
    for (std::size_t i = 0; i < n; ++i) d2[i] = sq_dist(points[i], r.centroids[0]);
    while (static_cast<int>(r.centroids.size()) < k) {
        const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
        std::size_t pick = n;
        if (total > 0.0) {
            double u = std::uniform_real_distribution<double>(0.0, total)(rng);
            for (std::size_t i = 0; i < n; ++i) {
                if (d2[i] <= 0.0) continue;
                pick = i;
                if ((u -= d2[i]) < 0.0) break;
            }
        } else {
            for (std::size_t i = 0; i < n && pick == n; ++i)
                if (!chosen[i]) pick = i;
        }
        chosen[pick] = true;
        r.centroids.push_back(points[pick]);
        for (std::size_t i = 0; i < n; ++i) d2[i] = std::min(d2[i], sq_dist(points[i], r.centroids.back()));
    }

    r.assignments.assign(n, -1);
    for (int it = 0; it < kKMeansMaxIterations; ++it) {
        bool changed = false;
        double inertia = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            int best = 0;
            double bd = std::numeric_limits<double>::infinity();
            for (int c = 0; c < k; ++c) {
                const double d = sq_dist(points[i], r.centroids[c]);
                if (d < bd) {
                    bd = d;
                    best = c;
                }
            }
            inertia += bd;
            if (r.assignments[i] != best) changed = true;
            r.assignments[i] = best;
        }
        r.inertia_history.push_back(inertia);
        r.iterations = it + 1;
        if (!changed) break;
        std::vector<std::vector<double>> sums(k, std::vector<double>(dim, 0.0));
        std::vector<int> counts(k, 0);
        for (std::size_t i = 0; i < n; ++i) {
            ++counts[r.assignments[i]];
            for (std::size_t d = 0; d < dim; ++d) sums[r.assignments[i]][d] += points[i][d];
        }
        for (int c = 0; c < k; ++c) {
            if (counts[c] == 0) continue;  // empty cluster keeps its centroid
            for (std::size_t d = 0; d < dim; ++d) r.centroids[c][d] = sums[c][d] / counts[c];
        }
    }
    return r;
}

std::vector<PromptRecord> select_representatives(std::vector<PromptRecord> records, int k, std::uint64_t seed) {
    std::sort(records.begin(), records.end(),
              [](const PromptRecord& a, const PromptRecord& b) { return a.prompt_id < b.prompt_id; });
    for (std::size_t i = 1; i < records.size(); ++i)
        if (records[i].prompt_id == records[i - 1].prompt_id)
            throw FormatError("duplicate prompt_id '" + records[i].prompt_id + "'");
    std::vector<std::vector<double>> pts;
    for (const auto& r : records) {
        double norm = 0.0;
        for (double v : r.embedding) norm += v * v;
        if (std::abs(std::sqrt(norm) - 1.0) > 1e-6)
            throw FormatError("prompt '" + r.prompt_id + "' has a non-unit embedding");
        pts.push_back(r.embedding);
    }
    auto km = kmeans(pts, k, seed);

    std::vector<PromptRecord> out;
    std::set<std::size_t> used;
    for (int c = 0; c < k; ++c) {
        const auto& cen = km.centroids[c];
        const double cn = std::sqrt(std::inner_product(cen.begin(), cen.end(), cen.begin(), 0.0));
        auto cosdist = [&](std::size_t i) {
            if (cn <= 0.0) return 1.0;
            return 1.0 - std::inner_product(pts[i].begin(), pts[i].end(), cen.begin(), 0.0) / cn;
        };
        std::size_t best = records.size();
        double bd = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < records.size(); ++i) {
            if (km.assignments[i] != c) continue;
            const double d = cosdist(i);
            if (d < bd - 1e-12) {
                bd = d;
                best = i;
            }
        }
        if (best == records.size()) {
            // Empty cluster (duplicate embeddings): nearest record not yet taken.
            for (std::size_t i = 0; i < records.size(); ++i) {
                if (used.count(i)) continue;
                const double d = cosdist(i);
                if (d < bd - 1e-12) {
                    bd = d;
                    best = i;
                }
            }
        }
        used.insert(best);
        out.push_back(records[best]);
    }
    return out;
}

// ---- embeddings ----------------------------------------------------------

std::vector<double> HashEmbeddingProvider::embed(const std::string& text) {
    std::vector<std::string> words;
    std::string cur;
    for (char ch : text) {
        if (std::isalnum(static_cast<unsigned char>(ch))) {
            cur += static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
        } else if (!cur.empty()) {
            words.push_back(cur);
            cur.clear();
        }
    }
    if (!cur.empty()) words.push_back(cur);
    if (words.empty()) words.push_back(text);

    std::vector<double> e(dim_, 0.0);
    std::normal_distribution<double> nd;
    for (const auto& wd : words) {
        Rng rng(derive_seed(seed_, wd));
        for (auto& v : e) v += nd(rng);
    }
    double norm = 0.0;
    for (double v : e) norm += v * v;
    norm = std::sqrt(norm);
    for (auto& v : e) v /= norm;
    return e;
}

namespace {

struct ParsedUrl {
    std::string origin;  // scheme://host:port
    std::string path;
};

ParsedUrl parse_url(const std::string& url) {
    const auto scheme = url.find("://");
    if (scheme == std::string::npos) throw ConfigError("endpoint URL lacks a scheme: '" + url + "'");
    const auto slash = url.find('/', scheme + 3);
    if (slash == std::string::npos) return {url, "/"};
    return {url.substr(0, slash), url.substr(slash)};
}

json post_json(const HttpEndpoint& ep, const json& body) {
    if (ep.url.empty()) throw BackendError("no backend endpoint configured");
    auto url = parse_url(ep.url);
    httplib::Client cli(url.origin);
    const auto sec = static_cast<time_t>(ep.timeout_s);
    const auto usec = static_cast<time_t>((ep.timeout_s - static_cast<double>(sec)) * 1e6);
    cli.set_connection_timeout(sec, usec);
    cli.set_read_timeout(sec, usec);
    cli.set_write_timeout(sec, usec);
    auto res = cli.Post(url.path, body.dump(), "application/json");
    if (!res) throw BackendError(fmt::format("request to {} failed: {}", ep.url, httplib::to_string(res.error())));
    if (res->status != 200) throw BackendError(fmt::format("{} returned HTTP {}", ep.url, res->status));
    try {
        return json::parse(res->body);
    } catch (const json::exception& e) {
        throw BackendError(fmt::format("{} returned malformed JSON: {}", ep.url, e.what()));
    }
}

}  // namespace

std::vector<double> HttpEmbeddingProvider::embed(const std::string& text) {
    json reply = post_json(endpoint_, {{"text", text}});
    if (!reply.contains("embedding") || !reply["embedding"].is_array())
        throw BackendError("embedding reply lacks an 'embedding' array");
    auto e = reply["embedding"].get<std::vector<double>>();
    double norm = 0.0;
    for (double v : e) norm += v * v;
    if (e.empty() || norm <= 0.0) throw BackendError("embedding service returned a zero vector");
    norm = std::sqrt(norm);
    for (auto& v : e) v /= norm;
    return e;
}

void embed_prompts(std::vector<PromptRecord>& records, EmbeddingProvider& provider) {
    for (auto& r : records) r.embedding = provider.embed(r.text);
}

// ---- generation ----------------------------------------------------------

ImageTensor ProceduralBackend::generate(const GenerationRequest& req) {
    if (req.height != req.edge_map.height || req.width != req.edge_map.width)
        throw BackendError("procedural backend: edge map does not match the requested size");
    if (req.channels != 1 && req.channels != 3) throw BackendError("procedural backend: channels must be 1 or 3");
    Rng style(fnv1a(req.prompt));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double base[3], accent[3];
    for (int c = 0; c < 3; ++c) base[c] = 0.2 + 0.6 * u(style);
    for (int c = 0; c < 3; ++c) accent[c] = 0.2 + 0.6 * u(style);
    const double fx = 0.2 + 0.8 * u(style), fy = 0.2 + 0.8 * u(style), phase = 6.283 * u(style);

    Rng detail(req.seed);
    std::normal_distribution<double> noise(0.0, 0.04);
    ImageTensor rgb(3, req.height, req.width);
    for (int y = 0; y < req.height; ++y)
        for (int x = 0; x < req.width; ++x) {
            const double t = 0.5 + 0.5 * std::sin(fx * x + fy * y + phase);
            const double n = noise(detail);
            for (int c = 0; c < 3; ++c) {
                double v = req.edge_map.at(y, x) ? 1.0 - base[c] : base[c] * (1 - t) + accent[c] * t + n;
                rgb.at(c, y, x) = std::clamp(v, 0.0, 1.0);
            }
        }
    if (req.channels == 3) return rgb;
    ImageTensor gray(1, req.height, req.width);
    const std::size_t plane = gray.size();
    for (std::size_t i = 0; i < plane; ++i)
        gray[i] = 0.299 * rgb[i] + 0.587 * rgb[plane + i] + 0.114 * rgb[2 * plane + i];
    return gray;
}

std::string base64_encode(const std::vector<unsigned char>& bytes) {
    std::string out(4 * ((bytes.size() + 2) / 3), '\0');
    const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(),
                                  static_cast<int>(bytes.size()));
    out.resize(static_cast<std::size_t>(n));
    return out;
}

std::vector<unsigned char> base64_decode(const std::string& text) {
    std::string clean;
    for (char c : text)
        if (!std::isspace(static_cast<unsigned char>(c))) clean += c;
    if (clean.size() % 4 != 0) throw FormatError("base64 input length is not a multiple of 4");
    std::vector<unsigned char> out(clean.size() / 4 * 3);
    const int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(clean.data()),
                                  static_cast<int>(clean.size()));
    if (n < 0) throw FormatError("invalid base64 input");
    std::size_t pad = 0;
    if (!clean.empty() && clean.back() == '=') ++pad;
    if (clean.size() > 1 && clean[clean.size() - 2] == '=') ++pad;
    out.resize(static_cast<std::size_t>(n) - pad);
    return out;
}

ImageTensor HttpGenerationBackend::generate(const GenerationRequest& req) {
    json body = {{"prompt", req.prompt},
                 {"edge_map", base64_encode(encode_png(req.edge_map.to_image()))},
                 {"seed", req.seed},
                 {"size", {req.height, req.width}},
                 {"channels", req.channels}};
    json reply = post_json(endpoint_, body);
    if (!reply.contains("image") || !reply["image"].is_string()) throw BackendError("generation reply lacks 'image'");
    try {
        return decode_png(base64_decode(reply["image"].get<std::string>()));
    } catch (const FormatError& e) {
        throw BackendError(std::string("generation backend returned an unreadable image: ") + e.what());
    }
}

// ---- bank ----------------------------------------------------------------

const char* to_string(BankMode m) { return m == BankMode::class_wise ? "class_wise" : "sample_wise"; }

BankMode parse_bank_mode(const std::string& s) {
    if (s == "class_wise") return BankMode::class_wise;
    if (s == "sample_wise") return BankMode::sample_wise;
    throw ConfigError("unknown bank mode '" + s + "' (expected class_wise or sample_wise)");
}

const BankClass& HiddenBank::for_class(int label) const {
    if (label < 0 || label >= class_count()) throw FormatError(fmt::format("hidden bank has no class {}", label));
    return classes[label];
}

void HiddenBank::validate() const {
    if (classes.empty()) throw FormatError("hidden bank is empty");
    const ImageTensor* first = nullptr;
    for (int c = 0; c < class_count(); ++c) {
        const auto& bc = classes[c];
        if (bc.label != c) throw FormatError(fmt::format("bank class {} carries label {}", c, bc.label));
        if (bc.images.empty()) throw FormatError(fmt::format("bank class {} has no images", c));
        if (mode == BankMode::class_wise && bc.images.size() != 1)
            throw FormatError(fmt::format("class-wise bank class {} has {} images", c, bc.images.size()));
        for (const auto& im : bc.images) {
            if (!first) first = &im.image;
            require_same_shape(im.image, *first, "hidden bank");
        }
    }
}

namespace {

ImageTensor resize_nearest(const ImageTensor& img, int h, int w) {
    if (img.height() == h && img.width() == w) return img;
    ImageTensor out(img.channels(), h, w, img.range());
    for (int c = 0; c < img.channels(); ++c)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                out.at(c, y, x) = img.at(c, y * img.height() / h, x * img.width() / w);
    return out;
}

std::string image_id_for(int label, int index) { return fmt::format("class_{}/{:03d}", label, index); }

}  // namespace

HiddenBank build_bank(int class_count, const BankBuildConfig& cfg, GenerationBackend& backend,
                      const std::vector<PromptRecord>& prompts, const std::vector<SourceImage>& sources,
                      const std::optional<fs::path>& out_dir) {
    if (class_count < 1) throw ConfigError("class_count must be positive");
    if (cfg.mode == BankMode::sample_wise && cfg.images_per_class < 1)
        throw ConfigError("images_per_class must be positive");
    if (cfg.retries < 0) throw ConfigError("retries must be nonnegative");
    if (cfg.height < 2 || cfg.width < 2 || (cfg.channels != 1 && cfg.channels != 3))
        throw ConfigError("invalid bank image shape");

    const bool created = out_dir && !fs::exists(*out_dir);
    try {
        auto reps = select_representatives(prompts, class_count, cfg.seed);
        HiddenBank bank;
        bank.mode = cfg.mode;
        bank.build_seed = cfg.seed;
        for (int c = 0; c < class_count; ++c) {
            const auto& rep = reps[c];
            auto src = std::find_if(sources.begin(), sources.end(),
                                    [&](const SourceImage& s) { return s.image_id == rep.source_image_id; });
            if (src == sources.end())
                throw FormatError(fmt::format("source image '{}' for prompt '{}' not found", rep.source_image_id,
                                              rep.prompt_id));
            BankClass bc;
            bc.label = c;
            bc.prompt_id = rep.prompt_id;
            bc.prompt_text = rep.text;
            bc.edge_map_id = fmt::format("edges/class_{}.png", c);
            bc.edge_map = canny(resize_nearest(src->image, cfg.height, cfg.width), cfg.canny_low, cfg.canny_high);
            const int count = cfg.mode == BankMode::class_wise ? 1 : cfg.images_per_class;
            for (int i = 0; i < count; ++i) {
                GenerationRequest req{rep.text, bc.edge_map, derive_seed(cfg.seed, image_id_for(c, i)), cfg.channels,
                                      cfg.height, cfg.width};
                ImageTensor img;
                for (int attempt = 0;; ++attempt) {
                    try {
                        img = backend.generate(req);
                        break;
                    } catch (const BackendError&) {
                        if (attempt >= cfg.retries) throw;
                    }
                }
                if (img.channels() != cfg.channels || img.height() != cfg.height || img.width() != cfg.width)
                    throw BackendError(fmt::format("backend returned {} for a {}x{}x{} request", img.shape_str(),
                                                   cfg.channels, cfg.height, cfg.width));
                try {
                    validate(img);
                } catch (const ShapeError& e) {
                    throw BackendError(std::string("backend returned an invalid image: ") + e.what());
                }
                bc.images.push_back({image_id_for(c, i), req.seed, quantize_8bit(img)});
            }
            bank.classes.push_back(std::move(bc));
        }
        bank.validate();
        if (out_dir) save_bank(*out_dir, bank);
        return bank;
    } catch (...) {
        if (created) {
            std::error_code ec;
            fs::remove_all(*out_dir, ec);
        }
        throw;
    }
}

void save_bank(const fs::path& dir, const HiddenBank& bank) {
    bank.validate();
    fs::create_directories(dir / "edges");
    std::string text = json{{"format", "dhue-bank"},
                            {"version", kBankVersion},
                            {"mode", to_string(bank.mode)},
                            {"build_seed", bank.build_seed},
                            {"class_count", bank.class_count()}}
                           .dump() +
                       "\n";
    for (const auto& bc : bank.classes) {
        save_image(dir / bc.edge_map_id, bc.edge_map.to_image());
        json images = json::array();
        for (const auto& im : bc.images) {
            const std::string path = "images/" + im.image_id + ".png";
            save_image(dir / path, im.image);
            images.push_back({{"image_id", im.image_id}, {"path", path}, {"seed", im.generation_seed}});
        }
        text += json{{"label", bc.label},
                     {"prompt_id", bc.prompt_id},
                     {"prompt_text", bc.prompt_text},
                     {"edge_map", bc.edge_map_id},
                     {"canny_low", bc.edge_map.low},
                     {"canny_high", bc.edge_map.high},
                     {"images", images}}
                    .dump() +
                "\n";
    }
    std::ofstream f(dir / kBankManifestFile, std::ios::binary);
    if (!(f << text)) throw IoError("cannot write bank manifest in " + dir.string());
}

HiddenBank load_bank(const fs::path& dir) {
    const fs::path mpath = dir / kBankManifestFile;
    std::ifstream f(mpath);
    if (!f) throw IoError("bank manifest not found: " + mpath.string());
    HiddenBank bank;
    try {
        std::string line;
        if (!std::getline(f, line)) throw FormatError("empty bank manifest");
        json head = json::parse(line);
        if (head.value("format", "") != "dhue-bank") throw FormatError("not a bank manifest: " + mpath.string());
        if (head.value("version", "") != kBankVersion)
            throw FormatError("unsupported bank version '" + head.value("version", "") + "'");
        bank.mode = parse_bank_mode(head.at("mode").get<std::string>());
        bank.build_seed = head.at("build_seed").get<std::uint64_t>();
        const int count = head.at("class_count").get<int>();
        while (std::getline(f, line)) {
            if (line.empty()) continue;
            json rec = json::parse(line);
            BankClass bc;
            bc.label = rec.at("label").get<int>();
            bc.prompt_id = rec.at("prompt_id").get<std::string>();
            bc.prompt_text = rec.at("prompt_text").get<std::string>();
            bc.edge_map_id = rec.at("edge_map").get<std::string>();
            bc.edge_map = EdgeMap::from_image(load_image(dir / bc.edge_map_id), rec.at("canny_low").get<double>(),
                                              rec.at("canny_high").get<double>());
            for (const auto& im : rec.at("images"))
                bc.images.push_back({im.at("image_id").get<std::string>(), im.at("seed").get<std::uint64_t>(),
                                     load_image(dir / im.at("path").get<std::string>())});
            bank.classes.push_back(std::move(bc));
        }
        if (bank.class_count() != count)
            throw FormatError(fmt::format("bank manifest declares {} classes, found {}", count, bank.class_count()));
    } catch (const json::exception& e) {
        throw FormatError(std::string("malformed bank manifest: ") + e.what());
    } catch (const ConfigError& e) {
        throw FormatError(e.what());
    }
    bank.validate();
    return bank;
}

std::vector<PromptRecord> read_prompts(const fs::path& path) {
    std::ifstream f(path);
    if (!f) throw IoError("prompt file not found: " + path.string());
    std::vector<PromptRecord> out;
    std::string line;
    try {
        while (std::getline(f, line)) {
            if (line.empty()) continue;
            json rec = json::parse(line);
            PromptRecord p;
            p.prompt_id = rec.at("prompt_id").get<std::string>();
            p.text = rec.at("text").get<std::string>();
            p.source_image_id = rec.at("source_image_id").get<std::string>();
            if (rec.contains("embedding")) p.embedding = rec["embedding"].get<std::vector<double>>();
            out.push_back(std::move(p));
        }
    } catch (const json::exception& e) {
        throw FormatError(std::string("malformed prompt file: ") + e.what());
    }
    return out;
}

void write_prompts(const fs::path& path, const std::vector<PromptRecord>& prompts) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary);
    for (const auto& p : prompts) {
        json rec = {{"prompt_id", p.prompt_id}, {"text", p.text}, {"source_image_id", p.source_image_id}};
        if (!p.embedding.empty()) rec["embedding"] = p.embedding;
        f << rec.dump() << "\n";
    }
    if (!f) throw IoError("cannot write prompt file " + path.string());
}

}  // namespace dhue
