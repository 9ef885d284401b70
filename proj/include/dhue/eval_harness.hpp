#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dhue/classifier.hpp"
#include "dhue/countermeasures.hpp"
#include "dhue/image.hpp"

namespace dhue {

struct ClassifierTrainOptions {
    // Called after every iteration with (iteration, loss).
    std::function<void(int, double)> on_iteration;
};

// Mini-batch SGD (momentum, weight decay, cosine-decayed rate). Each batch
// gets the countermeasure, then the vanilla pad/crop/flip, then centring.
// Preprocessing countermeasures transform the dataset once up front; the
// adversarial ones replace each batch by PGD outputs against the current model.
ClassifierState train_classifier(const LabeledDataset& train, const CountermeasureSpec& spec,
                                 const ClassifierConfig& arch, const ClassifierTrainConfig& cfg,
                                 const ClassifierTrainOptions& opts = {});

// Percentage of clean, untransformed test images classified correctly.
double test_accuracy(const DifferentiableClassifier& model, const LabeledDataset& test);

struct EvalRow {
    std::string countermeasure;
    std::optional<double> accuracy;  // percent; empty when the row failed
    std::string error;
};

struct EvalReport {
    std::vector<EvalRow> rows;
    double mean = 0.0;
    double max = 0.0;
    bool incomplete = false;
    std::map<std::string, std::string> metadata;  // dataset ids, seeds, config hash

    // Recomputes mean/max over the completed rows and the incomplete flag.
    void aggregate();
    std::string to_json() const;
    static EvalReport from_json(const std::string& text);
    // One line per row, then "mean" and "max" footer lines.
    std::string to_csv() const;
};

EvalReport report_from_values(const std::vector<std::pair<std::string, double>>& rows);

void write_report(const std::filesystem::path& path, const EvalReport& report);
EvalReport read_report(const std::filesystem::path& path);

struct SuiteOptions {
    ClassifierTrainOptions train;
    std::function<void(const EvalRow&)> on_row;
    // Receives each trained model before it is scored.
    std::function<void(const CountermeasureSpec&, const ClassifierState&)> on_model;
};

// One classifier per spec, trained on `train`, scored on `clean_test`.
// Row failures are recorded and leave the report marked incomplete.
EvalReport run_suite(const LabeledDataset& train, const LabeledDataset& clean_test,
                     const std::vector<CountermeasureSpec>& specs, const ClassifierConfig& arch,
                     const ClassifierTrainConfig& cfg, std::map<std::string, std::string> metadata = {},
                     const SuiteOptions& opts = {});

// Exactly round(fraction * n) records come from `ue`, picked by a
// record-keyed hash; the rest from `clean`. Both must list the same records.
LabeledDataset mix_datasets(const LabeledDataset& ue, const LabeledDataset& clean, double fraction,
                            std::uint64_t seed);

}  // namespace dhue
