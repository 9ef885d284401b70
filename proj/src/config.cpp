#include "dhue/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fmt/format.h>
#include <openssl/evp.h>

#include "dhue/error.hpp"

namespace dhue {

namespace fs = std::filesystem;
namespace pt = boost::property_tree;

const std::vector<KeySpec>& config_schema() {
    using T = KeyType;
    static const std::vector<KeySpec> schema{
        {"run.seed", T::integer, "0", "global seed; stage seeds derive from it"},

        {"synth.out", T::path, "", "output directory (train/, test/, prompts.jsonl)"},
        {"synth.classes", T::integer, "4", ""},
        {"synth.train_per_class", T::integer, "200", ""},
        {"synth.test_per_class", T::integer, "50", ""},
        {"synth.side", T::integer, "16", ""},
        {"synth.channels", T::integer, "3", ""},
        {"synth.noise_std", T::real, "0.04", ""},
        {"synth.random_polarity", T::boolean, "true", ""},

        {"bank.prompts", T::path, "", "prompt file (JSON lines)"},
        {"bank.sources", T::path, "", "dataset directory holding the captioned source images"},
        {"bank.out", T::path, "", "bank directory to create"},
        {"bank.mode", T::string, "class_wise", "class_wise or sample_wise"},
        {"bank.images_per_class", T::integer, "100", "sample_wise only"},
        {"bank.channels", T::integer, "3", ""},
        {"bank.height", T::integer, "32", ""},
        {"bank.width", T::integer, "32", ""},
        {"bank.canny_low", T::real, "0.1", ""},
        {"bank.canny_high", T::real, "0.2", ""},
        {"bank.backend", T::string, "procedural", "procedural or http"},
        {"bank.endpoint", T::string, "", "generation service URL (http backend)"},
        {"bank.embedding", T::string, "hash", "hash or http"},
        {"bank.embedding_endpoint", T::string, "", "embedding service URL (http embedding)"},
        {"bank.embedding_dim", T::integer, "64", "hash embedding only"},
        {"bank.timeout_s", T::real, "60", ""},
        {"bank.retries", T::integer, "2", ""},

        {"dh_train.train", T::path, "", "clean training dataset directory"},
        {"dh_train.bank", T::path, "", "bank directory"},
        {"dh_train.out", T::path, "", "checkpoint to write"},
        {"dh_train.log", T::path, "", "training log (JSON lines); optional"},
        {"dh_train.iterations", T::integer, "5000", ""},
        {"dh_train.batch_size", T::integer, "24", ""},
        {"dh_train.learning_rate", T::real, "3.1622776601683795e-05", ""},
        {"dh_train.beta1", T::real, "0.5", ""},
        {"dh_train.beta2", T::real, "0.999", ""},
        {"dh_train.adam_eps", T::real, "1e-06", ""},
        {"dh_train.omega1", T::real, "1", ""},
        {"dh_train.omega2", T::real, "1", ""},
        {"dh_train.omega3", T::real, "0.0001", ""},
        {"dh_train.epsilon", T::real, "0.031372549019607843", ""},
        {"dh_train.blocks", T::integer, "8", ""},
        {"dh_train.width", T::integer, "32", ""},
        {"dh_train.depth", T::integer, "5", ""},
        {"dh_train.alpha", T::real, "1", ""},
        {"dh_train.nonlinearity", T::string, "leaky_relu", ""},
        {"dh_train.backbone", T::string, "toy-conv", "toy-linear, toy-conv or classifier"},
        {"dh_train.backbone_checkpoint", T::path, "", "classifier backbone only"},
        {"dh_train.backbone_seed", T::integer, "7", ""},

        {"generate.input", T::path, "", "clean dataset directory"},
        {"generate.bank", T::path, "", ""},
        {"generate.checkpoint", T::path, "", ""},
        {"generate.out", T::path, "", "output dataset directory"},
        {"generate.clip_mode", T::string, "strict", "strict or soft"},
        {"generate.epsilon", T::real, "0.031372549019607843", ""},

        {"evaluate.train", T::path, "", "training dataset directory (unlearnable or clean)"},
        {"evaluate.clean_train", T::path, "", "clean counterpart, needed when mix_fraction < 1"},
        {"evaluate.mix_fraction", T::real, "1", "share of records taken from evaluate.train"},
        {"evaluate.test", T::path, "", "clean test dataset directory"},
        {"evaluate.countermeasures", T::string,
         "vanilla,cutout,cutmix,mixup,meanf,medianf,bdr,gray,gaussn,gaussf,jpeg10,jpeg50,at_linf,at_l2", ""},
        {"evaluate.out", T::path, "", "report to write (JSON)"},
        {"evaluate.models", T::path, "", "directory for the trained classifiers; optional"},
        {"evaluate.iterations", T::integer, "2000", ""},
        {"evaluate.batch_size", T::integer, "32", ""},
        {"evaluate.learning_rate", T::real, "0.1", ""},
        {"evaluate.momentum", T::real, "0.9", ""},
        {"evaluate.weight_decay", T::real, "0.0005", ""},
        {"evaluate.widths", T::string, "16,32", "small-cnn stage widths"},
        {"evaluate.pad", T::integer, "4", ""},
        {"evaluate.at_iters", T::integer, "10", ""},

        {"report.input", T::path, "", "report JSON"},
        {"report.out", T::path, "", "CSV destination; standard output when empty"},
    };
    return schema;
}

namespace {

std::string trim(std::string s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

void check_type(const KeySpec& ks, const std::string& v) {
    if (v.empty()) return;
    const char* first = v.data();
    const char* last = v.data() + v.size();
    switch (ks.type) {
        case KeyType::integer: {
            long long x = 0;
            auto r = std::from_chars(first, last, x);
            if (r.ec != std::errc() || r.ptr != last) throw ConfigError(fmt::format("{}: '{}' is not an integer", ks.key, v));
            break;
        }
        case KeyType::real: {
            std::size_t used = 0;
            try {
                std::stod(v, &used);
            } catch (const std::exception&) {
                used = 0;
            }
            if (used != v.size()) throw ConfigError(fmt::format("{}: '{}' is not a number", ks.key, v));
            break;
        }
        case KeyType::boolean:
            if (v != "true" && v != "false") throw ConfigError(fmt::format("{}: expected true or false, got '{}'", ks.key, v));
            break;
        default: break;
    }
}

}  // namespace

const KeySpec& RunConfig::spec(const std::string& key) const {
    const auto& s = config_schema();
    auto it = std::find_if(s.begin(), s.end(), [&](const KeySpec& k) { return k.key == key; });
    if (it == s.end()) throw ConfigError("unknown config key '" + key + "'");
    return *it;
}

const std::string& RunConfig::raw(const std::string& key) const {
    const auto& ks = spec(key);
    auto it = values_.find(key);
    return it == values_.end() ? ks.default_value : it->second;
}

RunConfig RunConfig::from_string(const std::string& text, const fs::path& base_dir,
                                 const std::vector<std::string>& overrides) {
    RunConfig cfg;
    cfg.base_dir_ = base_dir;
    pt::ptree tree;
    try {
        std::istringstream in(text);
        pt::read_ini(in, tree);
    } catch (const pt::ini_parser_error& e) {
        throw ConfigError(std::string("config syntax: ") + e.what());
    }
    for (const auto& [section, body] : tree) {
        if (body.empty()) {
            if (!body.data().empty()) throw ConfigError("config key '" + section + "' must live in a section");
            continue;
        }
        for (const auto& [name, value] : body) cfg.set(section + "." + name, value.get_value<std::string>());
    }
    for (const auto& o : overrides) cfg.set(o);
    return cfg;
}

RunConfig RunConfig::from_file(const fs::path& path, const std::vector<std::string>& overrides) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot read config " + path.string());
    std::stringstream ss;
    ss << f.rdbuf();
    return from_string(ss.str(), fs::absolute(path).parent_path(), overrides);
}

void RunConfig::set(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not KEY=VALUE");
    set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

void RunConfig::set(const std::string& key, const std::string& value) {
    const auto& ks = spec(key);
    const std::string v = trim(value);
    check_type(ks, v);
    values_[key] = v;
}

std::string RunConfig::str(const std::string& key) const { return raw(key); }

fs::path RunConfig::path(const std::string& key) const {
    const auto& v = raw(key);
    if (v.empty()) return {};
    fs::path p(v);
    return (p.is_absolute() || base_dir_.empty() ? p : base_dir_ / p).lexically_normal();
}

std::int64_t RunConfig::integer(const std::string& key) const {
    const auto& v = raw(key);
    if (v.empty()) throw ConfigError(key + " has no value");
    return std::stoll(v);
}

std::uint64_t RunConfig::seed(const std::string& key) const {
    const auto v = integer(key);
    if (v < 0) throw ConfigError(key + " must be nonnegative");
    return static_cast<std::uint64_t>(v);
}

double RunConfig::real(const std::string& key) const {
    const auto& v = raw(key);
    if (v.empty()) throw ConfigError(key + " has no value");
    return std::stod(v);
}

bool RunConfig::boolean(const std::string& key) const { return raw(key) == "true"; }

std::vector<std::string> RunConfig::list(const std::string& key) const {
    std::vector<std::string> out;
    std::stringstream ss(raw(key));
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

std::string RunConfig::canonical() const {
    std::vector<std::string> lines;
    for (const auto& ks : config_schema()) {
        lines.push_back(ks.key + " = " + raw(ks.key));
    }
    std::sort(lines.begin(), lines.end());
    std::string out;
    for (const auto& l : lines) out += l + "\n";
    return out;
}

std::string RunConfig::hash() const { return sha256_hex(canonical()); }

void RunConfig::require_set(const std::vector<std::string>& keys) const {
    for (const auto& k : keys)
        if (raw(k).empty()) throw ConfigError(k + " must be set");
}

void RunConfig::require_existing(const std::vector<std::string>& keys) const {
    require_set(keys);
    for (const auto& k : keys)
        if (!fs::exists(path(k))) throw ConfigError(fmt::format("{}: '{}' does not exist", k, path(k).string()));
}

std::string sha256_hex(const std::string& data) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1)
        throw Error("sha256 computation failed");
    std::string hex;
    for (unsigned int i = 0; i < len; ++i) hex += fmt::format("{:02x}", md[i]);
    return hex;
}

}  // namespace dhue
