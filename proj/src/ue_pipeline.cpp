#include "dhue/ue_pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include <fmt/format.h>

#include "dhue/error.hpp"
#include "dhue/image_io.hpp"
#include "dhue/random.hpp"
#include "json.hpp"

namespace dhue {

namespace fs = std::filesystem;

void Adam::step(const std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads) {
    if (params.size() != grads.size()) throw ShapeError("adam: parameter/gradient count mismatch");
    if (m_.empty()) {
        for (auto* p : params) {
            m_.emplace_back(p->size(), 0.0);
            v_.emplace_back(p->size(), 0.0);
        }
    }
    if (m_.size() != params.size()) throw ShapeError("adam: parameter list changed between steps");
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params.size(); ++k) {
        Tensor& p = *params[k];
        const Tensor& g = *grads[k];
        if (g.size() != p.size()) throw ShapeError("adam: gradient shape mismatch");
        auto& m = m_[k];
        auto& v = v_[k];
        for (std::size_t i = 0; i < p.size(); ++i) {
            m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
            v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
            p[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg_.eps);
        }
    }
}

void DHTrainConfig::validate() const {
    if (iterations < 0) throw ConfigError("dh_train.iterations must be nonnegative");
    if (batch_size < 1) throw ConfigError("dh_train.batch_size must be positive");
    if (!(learning_rate > 0.0)) throw ConfigError("dh_train.learning_rate must be positive");
    if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 && adam.beta2 < 1.0))
        throw ConfigError("adam betas must lie in [0, 1)");
    if (!(adam.eps > 0.0)) throw ConfigError("adam eps must be positive");
    weights.validate();
}

namespace {

const BankImage& draw_hidden(const BankClass& bc, Rng& rng) {
    if (bc.images.size() == 1) return bc.images[0];
    return bc.images[std::uniform_int_distribution<std::size_t>(0, bc.images.size() - 1)(rng)];
}

bool all_finite(const std::vector<ad::Var>& params) {
    for (const auto& p : params)
        if (!p.grad().all_finite()) return false;
    return true;
}

}  // namespace

DHTrainResult train_dh(const LabeledDataset& train, const HiddenBank& bank, const HidingConfig& architecture,
                       const DHTrainConfig& cfg, const FeatureExtractor& extractor, const DHTrainOptions& opts) {
    cfg.validate();
    architecture.validate();
    train.validate();
    bank.validate();
    if (train.records.empty()) throw ShapeError("train_dh: empty training set");
    for (const auto& r : train.records) bank.for_class(r.label);
    const auto& probe = bank.classes[0].images[0].image;
    require_same_shape(probe, train.records[0].image, "train_dh (bank vs training images)");
    if (probe.channels() != architecture.channels)
        throw ShapeError(fmt::format("train_dh: model expects {} channels, data has {}", architecture.channels,
                                     probe.channels()));

    DHTrainResult result;
    result.model = opts.initial ? *opts.initial : init_params(architecture, cfg.seed);
    if (!(result.model.config == architecture)) throw ConfigError("train_dh: initial parameters use another architecture");
    Adam adam(cfg.adam, cfg.learning_rate);
    Rng rng(derive_seed(cfg.seed, "dh-batches"));
    std::uniform_int_distribution<std::size_t> pick(0, train.size() - 1);

    const int n = cfg.batch_size;
    const Shape latent_shape{n, 4 * probe.channels(), probe.height() / 2, probe.width() / 2};

    for (int it = 0; it < cfg.iterations; ++it) {
        std::vector<std::size_t> idx(n);
        std::vector<int> labels(n);
        std::vector<Tensor> hidden;
        for (int b = 0; b < n; ++b) {
            idx[b] = pick(rng);
            labels[b] = train.records[idx[b]].label;
            hidden.push_back(draw_hidden(bank.for_class(labels[b]), rng).image.to_tensor());
        }
        ad::Var xc = ad::constant(train.batch(idx));
        ad::Var xh = ad::constant(stack(hidden));
        ad::Var r = ad::constant(sample_latent(latent_shape, derive_seed(cfg.seed, static_cast<std::uint64_t>(it))));

        BoundHidingModel net(result.model, true);
        LossBreakdown values;
        bool finite = true;
        try {
            auto hid = net.forward_hide(xc, xh);
            auto rev = net.reveal(hid.x_ue_raw, r);
            auto terms = ad::total_loss(hid.x_ue_raw, xc, rev.x_h_rev, xh, labels, cfg.weights, extractor);
            values = terms.values();
            finite = std::isfinite(values.total);
            if (finite) {
                terms.total.backward();
                finite = all_finite(net.parameters());
            }
        } catch (const NumericError&) {
            finite = false;
        }
        if (!finite) {
            if (opts.divergence_checkpoint) save_checkpoint(*opts.divergence_checkpoint, result.model);
            throw NumericError(fmt::format("dh training diverged at iteration {}", it));
        }

        TrainLogRecord rec{it, values};
        result.log.push_back(rec);
        if (opts.on_iteration) opts.on_iteration(rec);

        std::vector<const Tensor*> grads;
        for (const auto& p : net.parameters()) grads.push_back(&p.grad());
        adam.step(result.model.tensors(), grads);
    }
    return result;
}

void write_train_log(const fs::path& path, const std::vector<TrainLogRecord>& log) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary);
    for (const auto& r : log) {
        nlohmann::json j = {{"iteration", r.iteration}, {"hide", r.loss.hide},     {"freq", r.loss.freq},
                            {"reveal", r.loss.reveal},  {"conc", r.loss.conc},     {"total", r.loss.total}};
        f << j.dump() << "\n";
    }
    if (!f) throw IoError("cannot write training log " + path.string());
}

const char* to_string(ClipMode m) { return m == ClipMode::strict ? "strict" : "soft"; }

ClipMode parse_clip_mode(const std::string& s) {
    if (s == "strict") return ClipMode::strict;
    if (s == "soft") return ClipMode::soft;
    throw ConfigError("unknown clip mode '" + s + "' (expected strict or soft)");
}

ImageTensor clip_perturbation(const ImageTensor& x_ue_raw, const ImageTensor& x_c, double eps, ClipMode mode) {
    require_same_shape(x_ue_raw, x_c, "clip_perturbation");
    if (!(eps >= 0.0)) throw ConfigError("clip_perturbation: eps must be nonnegative");
    ImageTensor out(x_c.channels(), x_c.height(), x_c.width());
    for (std::size_t i = 0; i < out.size(); ++i) {
        double v = x_ue_raw[i];
        if (mode == ClipMode::strict) v = x_c[i] + std::clamp(v - x_c[i], -eps, eps);
        out[i] = std::clamp(v, 0.0, 1.0);
    }
    return out;
}

double psnr(const ImageTensor& a, const ImageTensor& b) {
    require_same_shape(a, b, "psnr");
    const double m = mse(a, b);
    if (m == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(1.0 / m);
}

const BankImage& pick_hidden(const HiddenBank& bank, const LabeledRecord& record, std::uint64_t seed) {
    const auto& bc = bank.for_class(record.label);
    if (bank.mode == BankMode::class_wise) return bc.images.at(0);
    return bc.images[derive_seed(seed, record.image_id) % bc.images.size()];
}

GeneratedDataset generate_ue(const LabeledDataset& clean, const HiddenBank& bank, const HidingModelParams& model,
                             ClipMode mode, std::uint64_t seed, double eps) {
    clean.validate();
    bank.validate();
    GeneratedDataset out;
    out.dataset.class_count = clean.class_count;
    for (const auto& rec : clean.records) {
        const BankImage& h = pick_hidden(bank, rec, seed);
        auto hidden = forward_hide(rec.image, h.image, model);
        ImageTensor x = quantize_8bit(clip_perturbation(hidden.x_ue_raw, rec.image, eps, mode));
        ManifestEntry e;
        e.image_id = rec.image_id;
        e.path = "images/" + rec.image_id + ".png";
        e.label = rec.label;
        e.hidden_image_id = h.image_id;
        e.clip_mode = to_string(mode);
        e.psnr = psnr(x, rec.image);
        out.entries.push_back(std::move(e));
        out.dataset.records.push_back({rec.image_id, std::move(x), rec.label});
    }
    return out;
}

}  // namespace dhue
