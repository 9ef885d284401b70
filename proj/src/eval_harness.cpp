#include "dhue/eval_harness.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <fmt/format.h>

#include "dhue/error.hpp"
#include "dhue/random.hpp"
#include "json.hpp"

namespace dhue {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

LabeledDataset preprocess(const LabeledDataset& ds, const CountermeasureSpec& spec) {
    LabeledDataset out = ds;
    for (auto& r : out.records) r.image = apply_preprocessing(spec, r.image, derive_seed(spec.rng_seed, r.image_id));
    return out;
}

}  // namespace

ClassifierState train_classifier(const LabeledDataset& train, const CountermeasureSpec& raw_spec,
                                 const ClassifierConfig& arch_in, const ClassifierTrainConfig& cfg,
                                 const ClassifierTrainOptions& opts) {
    train.validate();
    if (train.records.empty()) throw ShapeError("train_classifier: empty dataset");
    if (cfg.iterations < 0 || cfg.batch_size < 1) throw ConfigError("classifier iterations/batch size out of range");
    if (!(cfg.learning_rate > 0.0) || cfg.momentum < 0.0 || cfg.momentum >= 1.0 || cfg.weight_decay < 0.0)
        throw ConfigError("classifier optimiser settings out of range");
    const auto& probe = train.records[0].image;
    const CountermeasureSpec spec = raw_spec.resolved(std::min(probe.height(), probe.width()));

    ClassifierConfig arch = arch_in;
    arch.channels = probe.channels();
    arch.classes = train.class_count;
    ClassifierState state = init_classifier(arch, derive_seed(cfg.seed, "classifier-init"));
    state.train_config = cfg;

    const LabeledDataset data = spec.is_preprocessing() ? preprocess(train, spec) : train;
    const std::size_t n = data.size();
    Rng order_rng(derive_seed(cfg.seed, "classifier-order"));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::size_t cursor = n;
    const std::uint64_t aug_base = derive_seed(cfg.seed, spec.rng_seed);
    std::vector<std::vector<double>> velocity(state.params().size());
    for (std::size_t k = 0; k < velocity.size(); ++k) velocity[k].assign(state.params()[k].size(), 0.0);

    for (int it = 0; it < cfg.iterations; ++it) {
        std::vector<Tensor> images;
        std::vector<int> labels;
        for (int b = 0; b < cfg.batch_size; ++b) {
            if (cursor == n) {
                std::shuffle(order.begin(), order.end(), order_rng);
                cursor = 0;
            }
            const std::size_t idx = order[cursor++];
            const std::uint64_t s = derive_seed(aug_base, static_cast<std::uint64_t>(it) * cfg.batch_size + b);
            ImageTensor img = data.records[idx].image;
            if (spec.name == Countermeasure::cutout) {
                img = cutout(img, s, spec.params.cutout_size);
            } else if (spec.name == Countermeasure::cutmix || spec.name == Countermeasure::mixup) {
                const auto& other = data.records[derive_seed(s, "partner") % n].image;
                img = spec.name == Countermeasure::cutmix ? cutmix(img, other, s) : mixup(img, other, s);
            }
            images.push_back(vanilla_geometry(img, derive_seed(s, "vanilla"), spec.params.pad).to_tensor());
            labels.push_back(data.records[idx].label);
        }
        Tensor batch = stack(images);
        if (spec.is_adversarial()) {
            PgdConfig pgd;
            pgd.norm = spec.name == Countermeasure::at_l2 ? PgdNorm::l2 : PgdNorm::linf;
            pgd.eps = spec.params.at_eps;
            pgd.step = spec.params.at_step;
            pgd.iters = spec.params.at_iters;
            pgd.seed = derive_seed(aug_base, fmt::format("pgd/{}", it));
            batch = pgd_attack(state, batch, labels, pgd);
        }
        for (auto& v : batch.vec()) v -= 0.5;

        std::vector<ad::Var> bound;
        for (const auto& p : state.params()) bound.push_back(ad::parameter(p));
        ad::Var loss = ad::cross_entropy(state.logits_with(ad::constant(std::move(batch)), bound), labels);
        const double lv = loss.item();
        if (!std::isfinite(lv)) throw NumericError(fmt::format("classifier training diverged at iteration {}", it));
        loss.backward();

        const double lr = 0.5 * cfg.learning_rate * (1.0 + std::cos(M_PI * it / std::max(1, cfg.iterations)));
        for (std::size_t k = 0; k < bound.size(); ++k) {
            Tensor& p = state.params()[k];
            const Tensor& g = bound[k].grad();
            auto& vel = velocity[k];
            for (std::size_t i = 0; i < p.size(); ++i) {
                vel[i] = cfg.momentum * vel[i] + g[i] + cfg.weight_decay * p[i];
                p[i] -= lr * vel[i];
            }
        }
        if (opts.on_iteration) opts.on_iteration(it, lv);
    }
    return state;
}

double test_accuracy(const DifferentiableClassifier& model, const LabeledDataset& test) {
    if (test.records.empty()) throw ShapeError("test_accuracy: empty test set");
    std::size_t correct = 0;
    constexpr std::size_t kChunk = 256;
    for (std::size_t start = 0; start < test.size(); start += kChunk) {
        std::vector<std::size_t> idx;
        for (std::size_t i = start; i < std::min(test.size(), start + kChunk); ++i) idx.push_back(i);
        auto pred = predict(model, test.batch(idx));
        for (std::size_t j = 0; j < idx.size(); ++j) correct += pred[j] == test.records[idx[j]].label;
    }
    return 100.0 * static_cast<double>(correct) / static_cast<double>(test.size());
}

// ---- reports -------------------------------------------------------------

void EvalReport::aggregate() {
    double sum = 0.0;
    int done = 0;
    max = 0.0;
    incomplete = false;
    for (const auto& r : rows) {
        if (!r.accuracy) {
            incomplete = true;
            continue;
        }
        sum += *r.accuracy;
        max = done == 0 ? *r.accuracy : std::max(max, *r.accuracy);
        ++done;
    }
    mean = done ? sum / done : 0.0;
    if (rows.empty()) incomplete = true;
}

std::string EvalReport::to_json() const {
    json j;
    j["format"] = "dhue-report";
    j["version"] = "1";
    json rs = json::array();
    for (const auto& r : rows) {
        json row = {{"countermeasure", r.countermeasure}};
        row["accuracy"] = r.accuracy ? json(*r.accuracy) : json(nullptr);
        if (!r.error.empty()) row["error"] = r.error;
        rs.push_back(row);
    }
    j["rows"] = rs;
    j["mean"] = mean;
    j["max"] = max;
    j["incomplete"] = incomplete;
    j["metadata"] = metadata;
    return j.dump(2) + "\n";
}

EvalReport EvalReport::from_json(const std::string& text) {
    EvalReport r;
    try {
        json j = json::parse(text);
        if (j.value("format", "") != "dhue-report") throw FormatError("not an evaluation report");
        if (j.value("version", "") != "1") throw FormatError("unsupported report version");
        for (const auto& row : j.at("rows")) {
            EvalRow er;
            er.countermeasure = row.at("countermeasure").get<std::string>();
            if (!row.at("accuracy").is_null()) er.accuracy = row.at("accuracy").get<double>();
            er.error = row.value("error", "");
            r.rows.push_back(er);
        }
        r.mean = j.at("mean").get<double>();
        r.max = j.at("max").get<double>();
        r.incomplete = j.at("incomplete").get<bool>();
        r.metadata = j.at("metadata").get<std::map<std::string, std::string>>();
    } catch (const json::exception& e) {
        throw FormatError(std::string("malformed report: ") + e.what());
    }
    return r;
}

std::string EvalReport::to_csv() const {
    std::string out = "countermeasure,accuracy\n";
    for (const auto& r : rows) out += fmt::format("{},{}\n", r.countermeasure, r.accuracy ? fmt::format("{}", *r.accuracy) : "");
    out += fmt::format("mean,{}\nmax,{}\n", mean, max);
    return out;
}

EvalReport report_from_values(const std::vector<std::pair<std::string, double>>& rows) {
    EvalReport r;
    for (const auto& [name, acc] : rows) r.rows.push_back({name, acc, ""});
    r.aggregate();
    return r;
}

void write_report(const fs::path& path, const EvalReport& report) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary);
    if (!(f << report.to_json())) throw IoError("cannot write report " + path.string());
}

EvalReport read_report(const fs::path& path) {
    std::ifstream f(path);
    if (!f) throw IoError("report not found: " + path.string());
    std::stringstream ss;
    ss << f.rdbuf();
    return EvalReport::from_json(ss.str());
}

EvalReport run_suite(const LabeledDataset& train, const LabeledDataset& clean_test,
                     const std::vector<CountermeasureSpec>& specs, const ClassifierConfig& arch,
                     const ClassifierTrainConfig& cfg, std::map<std::string, std::string> metadata,
                     const SuiteOptions& opts) {
    if (specs.empty()) throw ConfigError("evaluation needs at least one countermeasure");
    EvalReport report;
    report.metadata = std::move(metadata);
    report.metadata["classifier_seed"] = std::to_string(cfg.seed);
    report.metadata["classifier_iterations"] = std::to_string(cfg.iterations);
    for (const auto& spec : specs) {
        EvalRow row{to_string(spec.name), std::nullopt, ""};
        try {
            auto model = train_classifier(train, spec, arch, cfg, opts.train);
            if (opts.on_model) opts.on_model(spec, model);
            row.accuracy = test_accuracy(model, clean_test);
        } catch (const ConfigError&) {
            throw;
        } catch (const Error& e) {
            row.error = e.what();
        }
        if (opts.on_row) opts.on_row(row);
        report.rows.push_back(row);
    }
    report.aggregate();
    return report;
}

LabeledDataset mix_datasets(const LabeledDataset& ue, const LabeledDataset& clean, double fraction,
                            std::uint64_t seed) {
    if (!(fraction >= 0.0 && fraction <= 1.0)) throw ConfigError("mix fraction must lie in [0, 1]");
    if (ue.size() != clean.size()) throw FormatError("mix_datasets: datasets differ in size");
    for (std::size_t i = 0; i < ue.size(); ++i)
        if (ue.records[i].image_id != clean.records[i].image_id || ue.records[i].label != clean.records[i].label)
            throw FormatError("mix_datasets: record " + std::to_string(i) + " differs between datasets");
    const std::size_t n = ue.size();
    const auto take = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
    std::vector<std::size_t> rank(n);
    std::iota(rank.begin(), rank.end(), 0);
    std::vector<std::uint64_t> key(n);
    for (std::size_t i = 0; i < n; ++i) key[i] = derive_seed(seed, ue.records[i].image_id);
    std::stable_sort(rank.begin(), rank.end(), [&](std::size_t a, std::size_t b) { return key[a] < key[b]; });
    std::vector<bool> use_ue(n, false);
    for (std::size_t i = 0; i < take; ++i) use_ue[rank[i]] = true;
    LabeledDataset out = clean;
    for (std::size_t i = 0; i < n; ++i)
        if (use_ue[i]) out.records[i] = ue.records[i];
    return out;
}

}  // namespace dhue
