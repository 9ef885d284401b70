#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "dhue/error.hpp"
#include "dhue/eval_harness.hpp"
#include "dhue/synth.hpp"
#include "test_support.hpp"

using namespace dhue;
namespace fs = std::filesystem;

namespace {

// Balanced K-class set of c x h x w images whose label is the brightest channel block.
LabeledDataset block_dataset(int k, int per_class, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    LabeledDataset ds;
    ds.class_count = k;
    for (int i = 0; i < per_class; ++i)
        for (int c = 0; c < k; ++c) {
            auto img = testing::random_image(rng, 1, k, 2, 0.0, 0.4);
            for (int x = 0; x < 2; ++x) img.at(0, c, x) = 0.9;
            ds.records.push_back({"b" + std::to_string(ds.records.size()), img, c});
        }
    return ds;
}

// Reads pixel rows directly: logit c is the sum of row c.
LinearClassifier row_oracle(int k) {
    Tensor w({k, 1, k, 2});
    for (int c = 0; c < k; ++c)
        for (int x = 0; x < 2; ++x) w.at(c, 0, c, x) = 1.0;
    return LinearClassifier(w, Tensor({1, k, 1, 1}));
}

const std::vector<std::pair<std::string, double>> kPublishedRow{
    {"vanilla", 10.08}, {"cutout", 10.00}, {"cutmix", 10.81}, {"mixup", 10.05}, {"meanf", 10.20},
    {"medianf", 15.58}, {"bdr", 17.31},    {"gray", 10.32},   {"gaussn", 30.23}, {"gaussf", 10.01},
    {"jpeg10", 83.98},  {"jpeg50", 78.96}, {"at_linf", 82.21}, {"at_l2", 82.34}};

SynthData desk_data() {
    SynthConfig sc;
    sc.seed = 1;
    return make_shapes(sc);
}

ClassifierTrainConfig quick_cfg(int iterations) {
    ClassifierTrainConfig cfg;
    cfg.iterations = iterations;
    cfg.batch_size = 16;
    cfg.seed = 3;
    return cfg;
}

ClassifierConfig small_arch() {
    ClassifierConfig a;
    a.widths = {4, 8};
    return a;
}

}  // namespace

TEST_CASE("accuracy of fixed models") {
    SUBCASE("constant logits on a balanced 10-class set") {
        auto ds = block_dataset(10, 5, 1);
        LinearClassifier constant(Tensor({10, 1, 10, 2}), Tensor({1, 10, 1, 1}));
        CHECK(test_accuracy(constant, ds) == 10.0);
    }
    SUBCASE("oracle") {
        auto ds = block_dataset(4, 25, 2);
        CHECK(test_accuracy(row_oracle(4), ds) == 100.0);
    }
    SUBCASE("single sample is all or nothing") {
        auto ds = block_dataset(3, 1, 3);
        ds.records.resize(1);
        CHECK(test_accuracy(row_oracle(3), ds) == 100.0);
        ds.records[0].label = 2;
        CHECK(test_accuracy(row_oracle(3), ds) == 0.0);
    }
    SUBCASE("record order does not matter") {
        auto ds = block_dataset(4, 10, 4);
        // wrong answers for a third of the records
        for (std::size_t i = 0; i < ds.size(); i += 3) ds.records[i].label = (ds.records[i].label + 1) % 4;
        const double before = test_accuracy(row_oracle(4), ds);
        std::mt19937_64 rng(9);
        std::shuffle(ds.records.begin(), ds.records.end(), rng);
        CHECK(test_accuracy(row_oracle(4), ds) == before);
    }
    SUBCASE("empty test set") {
        LabeledDataset empty;
        empty.class_count = 4;
        CHECK_THROWS_AS(test_accuracy(row_oracle(4), empty), ShapeError);
    }
}

TEST_CASE("zero iterations leave the model at chance") {
    auto data = desk_data();
    auto model = train_classifier(data.train, CountermeasureSpec{}, ClassifierConfig{}, quick_cfg(0));
    const double acc = test_accuracy(model, data.test);
    MESSAGE("random-init accuracy " << acc);
    CHECK(acc >= 10.0);
    CHECK(acc <= 40.0);
    CHECK(model.num_classes() == 4);
}

TEST_CASE("classifier training is deterministic and rejects bad settings") {
    auto data = desk_data();
    for (auto name : {Countermeasure::vanilla, Countermeasure::cutmix, Countermeasure::gaussn, Countermeasure::at_l2}) {
        CountermeasureSpec spec;
        spec.name = name;
        spec.params.at_iters = 2;
        auto a = train_classifier(data.train, spec, small_arch(), quick_cfg(6));
        auto b = train_classifier(data.train, spec, small_arch(), quick_cfg(6));
        REQUIRE(a.params().size() == b.params().size());
        for (std::size_t k = 0; k < a.params().size(); ++k) CHECK(max_abs_diff(a.params()[k], b.params()[k]) == 0.0);
    }
    auto cfg = quick_cfg(5);
    cfg.learning_rate = 0.0;
    CHECK_THROWS_AS(train_classifier(data.train, CountermeasureSpec{}, small_arch(), cfg), ConfigError);
    CountermeasureSpec bad;
    bad.name = Countermeasure::bdr;
    bad.params.bdr_bits = 0;
    CHECK_THROWS_AS(train_classifier(data.train, bad, small_arch(), quick_cfg(1)), ConfigError);
    LabeledDataset empty;
    empty.class_count = 4;
    CHECK_THROWS(train_classifier(empty, CountermeasureSpec{}, small_arch(), quick_cfg(1)));
}

TEST_CASE("every countermeasure trains for a few steps") {
    auto data = desk_data();
    for (auto name : kAllCountermeasures) {
        CountermeasureSpec spec;
        spec.name = name;
        spec.params.at_iters = 2;
        CAPTURE(to_string(name));
        auto model = train_classifier(data.train, spec, small_arch(), quick_cfg(3));
        const double acc = test_accuracy(model, data.test);
        CHECK(acc >= 0.0);
        CHECK(acc <= 100.0);
    }
}

TEST_CASE("aggregating the published row") {
    auto r = report_from_values(kPublishedRow);
    MESSAGE("mean " << r.mean);
    CHECK(std::abs(r.mean - 33.01) <= 0.005);
    CHECK(r.max == 83.98);
    CHECK_FALSE(r.incomplete);
    REQUIRE(r.rows.size() == kAllCountermeasures.size());
    for (std::size_t i = 0; i < r.rows.size(); ++i) CHECK(r.rows[i].countermeasure == to_string(kAllCountermeasures[i]));

    // independent recomputation
    double sum = 0.0;
    for (const auto& [_, v] : kPublishedRow) sum += v;
    CHECK(r.mean == doctest::Approx(sum / 14.0).epsilon(1e-15));
}

TEST_CASE("report serialisation") {
    auto r = report_from_values(kPublishedRow);
    r.metadata["dataset"] = "toy";
    auto back = EvalReport::from_json(r.to_json());
    CHECK(back.to_json() == r.to_json());
    CHECK(back.mean == r.mean);
    CHECK(back.metadata.at("dataset") == "toy");

    std::istringstream csv(r.to_csv());
    std::string line;
    std::getline(csv, line);
    CHECK(line == "countermeasure,accuracy");
    double sum = 0.0;
    int rows = 0;
    double mean = -1, max = -1;
    while (std::getline(csv, line)) {
        auto comma = line.find(',');
        const auto name = line.substr(0, comma);
        const double v = std::stod(line.substr(comma + 1));
        if (name == "mean") {
            mean = v;
        } else if (name == "max") {
            max = v;
        } else {
            sum += v;
            ++rows;
        }
    }
    CHECK(rows == 14);
    CHECK(mean == doctest::Approx(sum / rows).epsilon(1e-12));
    CHECK(max == 83.98);

    CHECK_THROWS_AS(EvalReport::from_json("{\"format\":\"other\"}"), FormatError);
    CHECK_THROWS_AS(EvalReport::from_json("not json"), FormatError);
}

TEST_CASE("failed rows mark the report incomplete") {
    EvalReport r;
    r.rows.push_back({"vanilla", 40.0, ""});
    r.rows.push_back({"jpeg10", std::nullopt, "boom"});
    r.rows.push_back({"gray", 20.0, ""});
    r.aggregate();
    CHECK(r.incomplete);
    CHECK(r.mean == 30.0);
    CHECK(r.max == 40.0);
    auto back = EvalReport::from_json(r.to_json());
    CHECK_FALSE(back.rows[1].accuracy.has_value());
    CHECK(back.rows[1].error == "boom");
}

TEST_CASE("suite runs") {
    auto data = desk_data();
    SUBCASE("single spec: mean equals max equals the row") {
        auto r = run_suite(data.train, data.test, {CountermeasureSpec{}}, small_arch(), quick_cfg(20));
        REQUIRE(r.rows.size() == 1);
        REQUIRE(r.rows[0].accuracy.has_value());
        CHECK(r.mean == *r.rows[0].accuracy);
        CHECK(r.max == *r.rows[0].accuracy);
    }
    SUBCASE("byte-identical reports for a fixed config") {
        std::vector<CountermeasureSpec> specs(2);
        specs[1].name = Countermeasure::gray;
        auto a = run_suite(data.train, data.test, specs, small_arch(), quick_cfg(10), {{"dataset", "toy"}});
        auto b = run_suite(data.train, data.test, specs, small_arch(), quick_cfg(10), {{"dataset", "toy"}});
        CHECK(a.to_json() == b.to_json());
        const fs::path p = fs::temp_directory_path() / "dhue_eval_report.json";
        write_report(p, a);
        CHECK(read_report(p).to_json() == a.to_json());
        fs::remove(p);
    }
    SUBCASE("empty spec list") {
        CHECK_THROWS_AS(run_suite(data.train, data.test, {}, small_arch(), quick_cfg(1)), ConfigError);
    }
}

TEST_CASE("mixing unlearnable and clean records") {
    auto clean = block_dataset(4, 25, 5);
    auto ue = clean;
    for (auto& r : ue.records)
        for (auto& v : r.image.data()) v = 1.0 - v;
    auto count_ue = [&](const LabeledDataset& m) {
        int n = 0;
        for (std::size_t i = 0; i < m.size(); ++i) n += m.records[i].image == ue.records[i].image;
        return n;
    };
    CHECK(count_ue(mix_datasets(ue, clean, 0.0, 1)) == 0);
    CHECK(count_ue(mix_datasets(ue, clean, 1.0, 1)) == 100);
    auto half = mix_datasets(ue, clean, 0.5, 1);
    CHECK(count_ue(half) == 50);
    CHECK(count_ue(mix_datasets(ue, clean, 0.2, 1)) == 20);
    CHECK(count_ue(mix_datasets(ue, clean, 0.125, 1)) == 13);
    for (std::size_t i = 0; i < half.size(); ++i) {
        CHECK(half.records[i].image_id == clean.records[i].image_id);
        CHECK(half.records[i].label == clean.records[i].label);
    }
    // nested: a smaller fraction picks a subset of the larger one
    auto small = mix_datasets(ue, clean, 0.3, 1);
    for (std::size_t i = 0; i < small.size(); ++i)
        if (small.records[i].image == ue.records[i].image) CHECK(half.records[i].image == ue.records[i].image);
    auto again = mix_datasets(ue, clean, 0.5, 1);
    for (std::size_t i = 0; i < half.size(); ++i) CHECK(again.records[i].image == half.records[i].image);

    CHECK_THROWS_AS(mix_datasets(ue, clean, 1.5, 1), ConfigError);
    auto other = ue;
    other.records[3].image_id = "elsewhere";
    CHECK_THROWS_AS(mix_datasets(other, clean, 0.5, 1), FormatError);
    other.records.pop_back();
    CHECK_THROWS_AS(mix_datasets(other, clean, 0.5, 1), FormatError);
}

TEST_CASE("clean shapes are learnable with the vanilla recipe") {
    auto data = desk_data();
    ClassifierTrainConfig cfg;
    cfg.iterations = 6000;
    cfg.learning_rate = 0.2;
    cfg.seed = 3;
    auto model = train_classifier(data.train, CountermeasureSpec{}, ClassifierConfig{}, cfg);
    const double acc = test_accuracy(model, data.test);
    MESSAGE("clean test accuracy " << acc);
    CHECK(acc >= 90.0);
}
