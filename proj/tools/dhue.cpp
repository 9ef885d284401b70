// dhue command-line entry point. Logs go to stderr; machine-readable output
// (summaries, CSV) goes to stdout or to the configured files.

#include <cmath>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "dhue/config.hpp"
#include "dhue/error.hpp"
#include "dhue/eval_harness.hpp"
#include "dhue/manifest.hpp"
#include "dhue/random.hpp"
#include "dhue/semantic_bank.hpp"
#include "dhue/synth.hpp"
#include "dhue/ue_pipeline.hpp"

using namespace dhue;
namespace fs = std::filesystem;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitBackend = 3;
constexpr int kExitIo = 4;
constexpr int kExitOther = 1;

std::uint64_t stage_seed(const RunConfig& cfg, const char* stage) { return derive_seed(cfg.seed("run.seed"), stage); }

void require_parent(const RunConfig& cfg, const std::string& key) {
    cfg.require_set({key});
    const auto parent = fs::absolute(cfg.path(key)).parent_path();
    if (!fs::exists(parent)) fs::create_directories(parent);
}

int cmd_synth(const RunConfig& cfg) {
    require_parent(cfg, "synth.out");
    SynthConfig sc;
    sc.classes = static_cast<int>(cfg.integer("synth.classes"));
    sc.train_per_class = static_cast<int>(cfg.integer("synth.train_per_class"));
    sc.test_per_class = static_cast<int>(cfg.integer("synth.test_per_class"));
    sc.side = static_cast<int>(cfg.integer("synth.side"));
    sc.channels = static_cast<int>(cfg.integer("synth.channels"));
    sc.noise_std = cfg.real("synth.noise_std");
    sc.random_polarity = cfg.boolean("synth.random_polarity");
    sc.seed = stage_seed(cfg, "synth");
    auto data = make_shapes(sc);
    const auto out = cfg.path("synth.out");
    save_dataset(out / "train", data.train);
    save_dataset(out / "test", data.test);
    write_prompts(out / "prompts.jsonl", data.prompts);
    std::cout << fmt::format("synth: {} train / {} test images, {} prompts -> {}\n", data.train.size(),
                             data.test.size(), data.prompts.size(), out.string());
    return 0;
}

int cmd_bank(const RunConfig& cfg) {
    cfg.require_existing({"bank.prompts", "bank.sources"});
    require_parent(cfg, "bank.out");
    if (fs::exists(cfg.path("bank.out")) && !fs::is_empty(cfg.path("bank.out")))
        throw ConfigError("bank.out '" + cfg.path("bank.out").string() + "' already exists and is not empty");

    auto prompts = read_prompts(cfg.path("bank.prompts"));
    const auto embedding = cfg.str("bank.embedding");
    const double timeout = cfg.real("bank.timeout_s");
    if (embedding == "hash") {
        HashEmbeddingProvider p(static_cast<int>(cfg.integer("bank.embedding_dim")), stage_seed(cfg, "embedding"));
        embed_prompts(prompts, p);
    } else if (embedding == "http") {
        if (cfg.str("bank.embedding_endpoint").empty()) throw BackendError("bank.embedding_endpoint is not set");
        HttpEmbeddingProvider p({cfg.str("bank.embedding_endpoint"), timeout});
        embed_prompts(prompts, p);
    } else if (embedding != "file") {
        throw ConfigError("bank.embedding must be hash, http or file");
    }

    std::unique_ptr<GenerationBackend> backend;
    const auto kind = cfg.str("bank.backend");
    if (kind == "procedural") {
        backend = std::make_unique<ProceduralBackend>();
    } else if (kind == "http") {
        if (cfg.str("bank.endpoint").empty()) throw BackendError("bank.endpoint is not set");
        backend = std::make_unique<HttpGenerationBackend>(HttpEndpoint{cfg.str("bank.endpoint"), timeout});
    } else {
        throw ConfigError("bank.backend must be procedural or http");
    }

    auto sources_ds = load_dataset(cfg.path("bank.sources"));
    BankBuildConfig bc;
    bc.mode = parse_bank_mode(cfg.str("bank.mode"));
    bc.images_per_class = static_cast<int>(cfg.integer("bank.images_per_class"));
    bc.channels = static_cast<int>(cfg.integer("bank.channels"));
    bc.height = static_cast<int>(cfg.integer("bank.height"));
    bc.width = static_cast<int>(cfg.integer("bank.width"));
    bc.canny_low = cfg.real("bank.canny_low");
    bc.canny_high = cfg.real("bank.canny_high");
    bc.retries = static_cast<int>(cfg.integer("bank.retries"));
    bc.seed = stage_seed(cfg, "bank");
    auto bank = build_bank(sources_ds.class_count, bc, *backend, prompts, as_sources(sources_ds), cfg.path("bank.out"));

    std::size_t images = 0;
    for (const auto& c : bank.classes) images += c.images.size();
    std::cout << fmt::format("bank: {} classes, {} images, mode {} -> {}\n", bank.class_count(), images,
                             to_string(bank.mode), cfg.path("bank.out").string());
    for (const auto& c : bank.classes)
        std::cout << fmt::format("  class {}: {} \"{}\"\n", c.label, c.prompt_id, c.prompt_text);
    return 0;
}

HidingConfig hiding_config(const RunConfig& cfg, int channels) {
    HidingConfig hc;
    hc.channels = channels;
    hc.blocks = static_cast<int>(cfg.integer("dh_train.blocks"));
    hc.alpha = cfg.real("dh_train.alpha");
    hc.subnet.width = static_cast<int>(cfg.integer("dh_train.width"));
    hc.subnet.depth = static_cast<int>(cfg.integer("dh_train.depth"));
    hc.subnet.nonlinearity = parse_nonlinearity(cfg.str("dh_train.nonlinearity"));
    hc.validate();
    return hc;
}

int cmd_train_dh(const RunConfig& cfg) {
    cfg.require_existing({"dh_train.train", "dh_train.bank"});
    if (cfg.str("dh_train.backbone") == "classifier") cfg.require_existing({"dh_train.backbone_checkpoint"});
    require_parent(cfg, "dh_train.out");

    DHTrainConfig tc;
    tc.iterations = static_cast<int>(cfg.integer("dh_train.iterations"));
    tc.batch_size = static_cast<int>(cfg.integer("dh_train.batch_size"));
    tc.learning_rate = cfg.real("dh_train.learning_rate");
    tc.adam.beta1 = cfg.real("dh_train.beta1");
    tc.adam.beta2 = cfg.real("dh_train.beta2");
    tc.adam.eps = cfg.real("dh_train.adam_eps");
    tc.weights.omega1 = cfg.real("dh_train.omega1");
    tc.weights.omega2 = cfg.real("dh_train.omega2");
    tc.weights.omega3 = cfg.real("dh_train.omega3");
    tc.weights.epsilon = cfg.real("dh_train.epsilon");
    tc.seed = stage_seed(cfg, "dh_train");
    tc.validate();

    auto train = load_dataset(cfg.path("dh_train.train"));
    auto bank = load_bank(cfg.path("dh_train.bank"));
    if (train.records.empty()) throw ShapeError("dh_train.train is empty");
    const int channels = train.records[0].image.channels();
    const auto arch = hiding_config(cfg, channels);

    BackboneSpec bs;
    bs.backbone_id = cfg.str("dh_train.backbone");
    bs.seed = cfg.seed("dh_train.backbone_seed");
    bs.channels = channels;
    bs.checkpoint = cfg.path("dh_train.backbone_checkpoint");
    auto extractor = load_backbone(bs);

    DHTrainOptions opts;
    opts.divergence_checkpoint = fs::path(cfg.path("dh_train.out").string() + ".diverged");
    const int every = std::max(1, tc.iterations / 20);
    opts.on_iteration = [&](const TrainLogRecord& r) {
        if (r.iteration % every == 0 || r.iteration + 1 == tc.iterations)
            spdlog::info("iter {:>6}  total {:.6g}  hide {:.4g}  freq {:.4g}  reveal {:.4g}  conc {:.4g}", r.iteration,
                         r.loss.total, r.loss.hide, r.loss.freq, r.loss.reveal, r.loss.conc);
    };
    auto result = train_dh(train, bank, arch, tc, extractor, opts);
    save_checkpoint(cfg.path("dh_train.out"), result.model);
    if (!cfg.str("dh_train.log").empty()) write_train_log(cfg.path("dh_train.log"), result.log);
    const auto& last = result.log.empty() ? TrainLogRecord{} : result.log.back();
    std::cout << fmt::format("train-dh: {} iterations, final total {:.6g} -> {}\n", tc.iterations, last.loss.total,
                             cfg.path("dh_train.out").string());
    return 0;
}

int cmd_generate(const RunConfig& cfg) {
    cfg.require_existing({"generate.input", "generate.bank", "generate.checkpoint"});
    require_parent(cfg, "generate.out");
    const auto mode = parse_clip_mode(cfg.str("generate.clip_mode"));
    auto clean = load_dataset(cfg.path("generate.input"));
    auto bank = load_bank(cfg.path("generate.bank"));
    auto model = load_checkpoint(cfg.path("generate.checkpoint"));
    auto gen = generate_ue(clean, bank, model, mode, stage_seed(cfg, "generate"), cfg.real("generate.epsilon"));
    save_dataset(cfg.path("generate.out"), gen.dataset, &gen.entries);
    double worst = 0.0, psnr_sum = 0.0;
    int finite = 0;
    for (std::size_t i = 0; i < clean.size(); ++i) {
        worst = std::max(worst, max_abs_diff(gen.dataset.records[i].image, clean.records[i].image));
        if (gen.entries[i].psnr && std::isfinite(*gen.entries[i].psnr)) {
            psnr_sum += *gen.entries[i].psnr;
            ++finite;
        }
    }
    std::cout << fmt::format("generate: {} images, mode {}, max deviation {}/255, mean PSNR {} -> {}\n", clean.size(),
                             to_string(mode), std::lround(worst * 255.0),
                             finite ? fmt::format("{:.2f} dB", psnr_sum / finite) : std::string("inf"),
                             cfg.path("generate.out").string());
    return 0;
}

std::vector<int> parse_widths(const RunConfig& cfg) {
    std::vector<int> out;
    for (const auto& w : cfg.list("evaluate.widths")) {
        try {
            out.push_back(std::stoi(w));
        } catch (const std::exception&) {
            throw ConfigError("evaluate.widths: '" + w + "' is not an integer");
        }
    }
    return out;
}

int cmd_evaluate(const RunConfig& cfg) {
    cfg.require_existing({"evaluate.train", "evaluate.test"});
    const double fraction = cfg.real("evaluate.mix_fraction");
    if (fraction < 1.0) cfg.require_existing({"evaluate.clean_train"});
    require_parent(cfg, "evaluate.out");

    std::vector<CountermeasureSpec> specs;
    for (const auto& name : cfg.list("evaluate.countermeasures")) {
        CountermeasureSpec s;
        s.name = parse_countermeasure(name);
        s.params.pad = static_cast<int>(cfg.integer("evaluate.pad"));
        s.params.at_iters = static_cast<int>(cfg.integer("evaluate.at_iters"));
        s.rng_seed = derive_seed(stage_seed(cfg, "evaluate"), name);
        specs.push_back(s);
    }
    if (specs.empty()) throw ConfigError("evaluate.countermeasures is empty");

    ClassifierConfig arch;
    arch.widths = parse_widths(cfg);
    ClassifierTrainConfig tc;
    tc.iterations = static_cast<int>(cfg.integer("evaluate.iterations"));
    tc.batch_size = static_cast<int>(cfg.integer("evaluate.batch_size"));
    tc.learning_rate = cfg.real("evaluate.learning_rate");
    tc.momentum = cfg.real("evaluate.momentum");
    tc.weight_decay = cfg.real("evaluate.weight_decay");
    tc.seed = stage_seed(cfg, "classifier");

    auto train = load_dataset(cfg.path("evaluate.train"));
    if (fraction < 1.0)
        train = mix_datasets(train, load_dataset(cfg.path("evaluate.clean_train")), fraction, stage_seed(cfg, "mix"));
    auto test = load_dataset(cfg.path("evaluate.test"));

    std::map<std::string, std::string> meta{{"train", cfg.str("evaluate.train")},
                                            {"test", cfg.str("evaluate.test")},
                                            {"mix_fraction", cfg.str("evaluate.mix_fraction")},
                                            {"config_hash", cfg.hash()}};
    SuiteOptions opts;
    opts.on_row = [](const EvalRow& r) {
        if (r.accuracy)
            spdlog::info("{:<8} {:6.2f}%", r.countermeasure, *r.accuracy);
        else
            spdlog::error("{:<8} failed: {}", r.countermeasure, r.error);
    };
    if (!cfg.str("evaluate.models").empty()) {
        const auto dir = cfg.path("evaluate.models");
        opts.on_model = [dir](const CountermeasureSpec& s, const ClassifierState& m) {
            save_classifier(dir / (std::string(to_string(s.name)) + ".cls"), m);
        };
    }
    auto report = run_suite(train, test, specs, arch, tc, meta, opts);
    write_report(cfg.path("evaluate.out"), report);
    std::cout << report.to_csv();
    return report.incomplete ? kExitOther : 0;
}

int cmd_report(const RunConfig& cfg) {
    cfg.require_existing({"report.input"});
    auto report = read_report(cfg.path("report.input"));
    auto stored_mean = report.mean, stored_max = report.max;
    report.aggregate();
    if (std::abs(stored_mean - report.mean) > 1e-9 || std::abs(stored_max - report.max) > 1e-9)
        spdlog::warn("stored aggregates disagree with the rows; writing recomputed values");
    const auto csv = report.to_csv();
    if (cfg.str("report.out").empty()) {
        std::cout << csv;
    } else {
        require_parent(cfg, "report.out");
        std::ofstream f(cfg.path("report.out"), std::ios::binary);
        if (!(f << csv)) throw IoError("cannot write " + cfg.path("report.out").string());
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    spdlog::set_default_logger(spdlog::stderr_color_st("dhue"));
    spdlog::set_pattern("[%H:%M:%S] %^%l%$ %v");

    CLI::App app{"Semantic hiding unlearnable-example toolkit"};
    app.require_subcommand(1);
    app.fallthrough();
    std::string config_path;
    std::optional<std::int64_t> seed;
    std::vector<std::string> overrides;
    bool quiet = false;
    app.add_option("--config", config_path, "INI config file");
    app.add_option("--seed", seed, "overrides run.seed");
    app.add_option("--set", overrides, "override one key, e.g. --set dh_train.iterations=100");
    app.add_flag("-q,--quiet", quiet, "warnings and errors only");

    struct Command {
        const char* name;
        const char* help;
        int (*fn)(const RunConfig&);
    };
    const Command commands[] = {
        {"synth", "write the synthetic shapes dataset and its captions", cmd_synth},
        {"bank", "cluster prompts and build the hidden semantic bank", cmd_bank},
        {"train-dh", "train the hiding model", cmd_train_dh},
        {"generate", "generate the unlearnable dataset", cmd_generate},
        {"evaluate", "train and test classifiers under countermeasures", cmd_evaluate},
        {"report", "render a stored report as CSV", cmd_report},
    };
    for (const auto& c : commands) app.add_subcommand(c.name, c.help);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitConfig;
    }
    if (quiet) spdlog::set_level(spdlog::level::warn);

    try {
        RunConfig cfg = config_path.empty() ? RunConfig::from_string("", fs::current_path(), overrides)
                                            : RunConfig::from_file(config_path, overrides);
        if (seed) cfg.set("run.seed", std::to_string(*seed));
        for (const auto& c : commands) {
            if (!app.got_subcommand(c.name)) continue;
            spdlog::info("{}: config hash {}", c.name, cfg.hash());
            return c.fn(cfg);
        }
    } catch (const ConfigError& e) {
        spdlog::error("config: {}", e.what());
        return kExitConfig;
    } catch (const BackendError& e) {
        spdlog::error("backend: {}", e.what());
        return kExitBackend;
    } catch (const IoError& e) {
        spdlog::error("io: {}", e.what());
        return kExitIo;
    } catch (const FormatError& e) {
        spdlog::error("io: {}", e.what());
        return kExitIo;
    } catch (const fs::filesystem_error& e) {
        spdlog::error("io: {}", e.what());
        return kExitIo;
    } catch (const std::exception& e) {
        spdlog::error("{}", e.what());
        return kExitOther;
    }
    return kExitOther;
}
