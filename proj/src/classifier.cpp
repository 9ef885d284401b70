#include "dhue/classifier.hpp"

#include <cmath>
#include <fmt/format.h>

#include "dhue/archive.hpp"
#include "dhue/error.hpp"
#include "dhue/random.hpp"
#include "json.hpp"

namespace dhue {

using ad::Var;

void ClassifierConfig::validate() const {
    if (architecture != "small-cnn") throw ConfigError("unknown classifier architecture '" + architecture + "'");
    if (channels != 1 && channels != 3) throw ConfigError("classifier channels must be 1 or 3");
    if (classes < 2) throw ConfigError("classifier needs at least two classes");
    if (widths.empty()) throw ConfigError("classifier needs at least one conv stage");
    for (int w : widths)
        if (w < 1) throw ConfigError("classifier stage widths must be positive");
}

ClassifierState::ClassifierState(ClassifierConfig config, std::vector<Tensor> params)
    : config_(std::move(config)), params_(std::move(params)) {
    config_.validate();
    if (params_.size() != 2 * config_.widths.size() + 2) throw FormatError("classifier parameter count mismatch");
}

Var ClassifierState::trunk_with(const Var& x, const std::vector<Var>& bound) const {
    Var h = x;
    const std::size_t stages = config_.widths.size();
    for (std::size_t i = 0; i < stages; ++i) {
        if (i > 0) h = ad::avg_pool2(h);
        h = ad::relu(ad::conv2d(h, bound[2 * i], bound[2 * i + 1]));
    }
    return h;
}

Var ClassifierState::logits_with(const Var& x, const std::vector<Var>& bound) const {
    const std::size_t head = 2 * config_.widths.size();
    return ad::linear(ad::global_avg_pool(trunk_with(x, bound)), bound[head], bound[head + 1]);
}

Var ClassifierState::logits(const Var& x) const {
    std::vector<Var> bound;
    bound.reserve(params_.size());
    for (const auto& p : params_) bound.push_back(ad::constant(p));
    return logits_with(x, bound);
}

ClassifierState init_classifier(const ClassifierConfig& config, std::uint64_t seed) {
    config.validate();
    Rng rng(seed);
    std::vector<Tensor> params;
    int in = config.channels;
    for (int w : config.widths) {
        Tensor weight(Shape{w, in, 3, 3});
        std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / (in * 9.0)));
        for (auto& v : weight.vec()) v = dist(rng);
        params.push_back(std::move(weight));
        params.emplace_back(Shape{1, w, 1, 1});
        in = w;
    }
    Tensor head(Shape{config.classes, in, 1, 1});
    std::normal_distribution<double> dist(0.0, std::sqrt(1.0 / in));
    for (auto& v : head.vec()) v = dist(rng);
    params.push_back(std::move(head));
    params.emplace_back(Shape{1, config.classes, 1, 1});
    return ClassifierState(config, std::move(params));
}

std::vector<int> predict(const DifferentiableClassifier& model, const Tensor& unit_batch) {
    Tensor centered = unit_batch;
    for (auto& v : centered.vec()) v -= 0.5;
    Var z = model.logits(ad::constant(std::move(centered)));
    const int k = model.num_classes();
    std::vector<int> out(static_cast<std::size_t>(z.shape().n));
    for (int n = 0; n < z.shape().n; ++n) {
        const double* row = z.value().data() + static_cast<std::size_t>(n) * k;
        int best = 0;
        for (int j = 1; j < k; ++j)
            if (row[j] > row[best]) best = j;
        out[n] = best;
    }
    return out;
}

void save_classifier(const std::filesystem::path& path, const ClassifierState& state) {
    const auto& c = state.config();
    const auto& t = state.train_config;
    nlohmann::json header{
        {"architecture", c.architecture},
        {"channels", c.channels},
        {"classes", c.classes},
        {"widths", c.widths},
        {"train", {{"iterations", t.iterations},
                   {"batch_size", t.batch_size},
                   {"learning_rate", t.learning_rate},
                   {"momentum", t.momentum},
                   {"weight_decay", t.weight_decay},
                   {"seed", t.seed}}},
    };
    write_archive(path, TensorArchive{"CLS1", kClassifierCheckpointVersion, header.dump(), state.params()});
}

ClassifierState load_classifier(const std::filesystem::path& path) {
    TensorArchive a = read_archive(path, "CLS1", kClassifierCheckpointVersion);
    ClassifierConfig cfg;
    ClassifierTrainConfig tc;
    try {
        auto h = nlohmann::json::parse(a.header);
        cfg.architecture = h.at("architecture").get<std::string>();
        cfg.channels = h.at("channels").get<int>();
        cfg.classes = h.at("classes").get<int>();
        cfg.widths = h.at("widths").get<std::vector<int>>();
        const auto& tr = h.at("train");
        tc.iterations = tr.at("iterations").get<int>();
        tc.batch_size = tr.at("batch_size").get<int>();
        tc.learning_rate = tr.at("learning_rate").get<double>();
        tc.momentum = tr.at("momentum").get<double>();
        tc.weight_decay = tr.at("weight_decay").get<double>();
        tc.seed = tr.at("seed").get<std::uint64_t>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(fmt::format("bad classifier header in {}: {}", path.string(), e.what()));
    }
    ClassifierState reference = init_classifier(cfg, 0);
    if (reference.params().size() != a.tensors.size()) throw FormatError("classifier checkpoint tensor count mismatch");
    for (std::size_t i = 0; i < a.tensors.size(); ++i) {
        if (!(reference.params()[i].shape() == a.tensors[i].shape())) {
            throw FormatError("classifier checkpoint tensor shape mismatch");
        }
    }
    ClassifierState s(cfg, std::move(a.tensors));
    s.train_config = tc;
    return s;
}

LinearClassifier::LinearClassifier(Tensor weight, Tensor bias) : weight_(std::move(weight)), bias_(std::move(bias)) {
    if (bias_.size() != static_cast<std::size_t>(weight_.shape().n)) throw ShapeError("linear classifier bias size");
}

Var LinearClassifier::logits(const Var& x) const {
    return ad::linear(x, ad::constant(weight_), ad::constant(bias_));
}

}  // namespace dhue
