#pragma once

// Command-line front end. Every subcommand reads an optional --config file,
// then applies flag overrides in the order given.

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "switchprompt/checkpoint.hpp"
#include "switchprompt/config.hpp"
#include "switchprompt/data.hpp"
#include "switchprompt/experiment.hpp"
#include "switchprompt/gradcheck.hpp"
#include "switchprompt/keywords.hpp"
#include "switchprompt/trainer.hpp"

namespace switchprompt {

namespace detail {

struct Overrides {
    std::string config_path;
    std::vector<std::pair<std::string, std::string>> settings;

    RunConfig resolve() const {
        RunConfig c = config_path.empty() ? RunConfig{} : load_config(config_path);
        for (const auto& [k, v] : settings) apply_setting(c, k, v);
        return c;
    }
};

inline void add_setting(CLI::App* app, Overrides& ov, const std::string& flag, const std::string& key,
                        const std::string& help) {
    app->add_option_function<std::string>(
        flag, [&ov, key](const std::string& v) { ov.settings.emplace_back(key, v); }, help);
}

inline void add_common(CLI::App* app, Overrides& ov) {
    app->add_option("--config", ov.config_path, "key = value config file")->check(CLI::ExistingFile);
    app->add_option_function<std::vector<std::string>>(
           "--set",
           [&ov](const std::vector<std::string>& items) {
               for (const auto& item : items) {
                   const auto eq = item.find('=');
                   if (eq == std::string::npos) throw CLI::ValidationError("--set", "expected key=value");
                   ov.settings.emplace_back(item.substr(0, eq), item.substr(eq + 1));
               }
           },
           "override any config key (key=value)")
        ->take_all();
}

inline void add_run_options(CLI::App* app, Overrides& ov) {
    add_common(app, ov);
    add_setting(app, ov, "--variant", "variant", "prompt variant");
    add_setting(app, ov, "--shots", "shots", "examples per class in train and dev (0 = full data)");
    add_setting(app, ov, "--seeds,--seed", "seeds", "comma-separated training seeds");
    add_setting(app, ov, "--alpha", "alpha", "general-corpus weight in the keyword score (< 0)");
    add_setting(app, ov, "--m", "m", "soft prompt length per layer");
    add_setting(app, ov, "--n", "n", "number of keywords");
    add_setting(app, ov, "--epochs", "epochs", "training epochs");
    add_setting(app, ov, "--lr", "lr", "initial learning rate");
    add_setting(app, ov, "--out", "out_dir", "output directory");
    add_setting(app, ov, "--dataset", "dataset", "label<TAB>text dataset file");
    add_setting(app, ov, "--general", "general_corpus", "general-domain corpus, one document per line");
    add_setting(app, ov, "--domain", "domain_corpus", "domain corpus, one document per line");
    add_setting(app, ov, "--keywords", "keywords_file", "precomputed keyword file");
    add_setting(app, ov, "--backbone", "backbone", "backbone checkpoint");
    app->add_flag_function("--freeze", [&ov](std::int64_t) { ov.settings.emplace_back("freeze", "true"); },
                           "keep the backbone frozen (default)");
    app->add_flag_function("--no-freeze", [&ov](std::int64_t) { ov.settings.emplace_back("freeze", "false"); },
                           "train the backbone as well");
}

inline void write_run_directory(const RunConfig& cfg, const Experiment& ex, const std::vector<RunResult>& results) {
    const std::filesystem::path dir(cfg.out_dir);
    write_run_outputs(dir, results);
    write_keywords((dir / "keywords.tsv").string(), ex.keywords);
    save_backbone((dir / "backbone.ckpt").string(), *ex.backbone.weights, ex.backbone.vocab);
    for (const auto& r : results) {
        for (std::size_t i = 0; i < r.best_models.size(); ++i) {
            const std::string name = results.size() == 1
                                         ? "model_seed" + std::to_string(r.per_seed[i].seed) + ".ckpt"
                                         : "model_" + to_string(r.variant) + "_seed" +
                                               std::to_string(r.per_seed[i].seed) + ".ckpt";
            save_model((dir / name).string(), r.best_models[i], ex.dataset.labels);
        }
    }
}

}  // namespace detail

inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"Gated keyword/soft-prompt tuning of a frozen transformer encoder"};
    app.require_subcommand(1);
    detail::Overrides ov;

    // extract-keywords
    auto* kw = app.add_subcommand("extract-keywords", "rank domain keywords by alpha*tf_general + tf_domain");
    detail::add_common(kw, ov);
    detail::add_setting(kw, ov, "--general", "general_corpus", "general-domain corpus");
    detail::add_setting(kw, ov, "--domain", "domain_corpus", "domain corpus");
    detail::add_setting(kw, ov, "--alpha", "alpha", "general-corpus weight (< 0)");
    detail::add_setting(kw, ov, "--n", "n", "number of keywords");
    std::string kw_out = "keywords.tsv";
    kw->add_option("--out", kw_out, "keyword file to write");

    // sample-fewshot
    auto* fs = app.add_subcommand("sample-fewshot", "draw an N-shot train/dev split, rest is test");
    detail::add_common(fs, ov);
    detail::add_setting(fs, ov, "--dataset", "dataset", "label<TAB>text dataset file");
    detail::add_setting(fs, ov, "--shots", "shots", "examples per class in train and in dev");
    detail::add_setting(fs, ov, "--seed", "split_seed", "sampling seed");
    std::string fs_out = "split";
    fs->add_option("--out", fs_out, "output directory");

    // gen-synthetic
    auto* gs = app.add_subcommand("gen-synthetic", "write a synthetic general corpus, domain corpus and dataset");
    detail::add_common(gs, ov);
    detail::add_setting(gs, ov, "--seed", "synthetic_seed", "generator seed");
    detail::add_setting(gs, ov, "--classes", "synthetic_classes", "number of classes");
    detail::add_setting(gs, ov, "--examples-per-class", "synthetic_examples_per_class", "examples per class");
    detail::add_setting(gs, ov, "--filler-prob", "synthetic_filler_prob", "probability a token is filler");
    std::string gs_out = "synthetic";
    gs->add_option("--out", gs_out, "output directory");

    // train / ablate
    auto* tr = app.add_subcommand("train", "train prompts and head over all seeds of one variant");
    detail::add_run_options(tr, ov);
    auto* ab = app.add_subcommand("ablate", "train all six prompt variants with shared seeds and data");
    detail::add_run_options(ab, ov);

    // evaluate
    auto* ev = app.add_subcommand("evaluate", "accuracy of a trained model on a dataset");
    detail::add_common(ev, ov);
    std::string ev_run, ev_data, ev_out;
    std::uint64_t ev_seed = 0;
    ev->add_option("--run-dir", ev_run, "directory written by train")->required();
    ev->add_option("--seed", ev_seed, "which seed's model to load")->required();
    ev->add_option("--dataset", ev_data, "label<TAB>text file")->required();
    ev->add_option("--out", ev_out, "optional JSON result file");

    // gradcheck
    auto* gc = app.add_subcommand("gradcheck", "finite-difference check of every differentiable op");
    std::size_t gc_trials = 100;
    std::uint64_t gc_seed = 7;
    gc->add_option("--trials", gc_trials, "random shapes per op");
    gc->add_option("--seed", gc_seed, "shape/value seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e, out, err);
    }

    try {
        if (kw->parsed()) {
            const RunConfig cfg = ov.resolve();
            if (cfg.general_corpus.empty() || cfg.domain_corpus.empty()) {
                throw std::invalid_argument("extract-keywords needs --general and --domain");
            }
            const auto set = select_keywords(compute_stats(read_documents(cfg.general_corpus), CorpusSource::General),
                                             compute_stats(read_documents(cfg.domain_corpus), CorpusSource::Domain),
                                             cfg.alpha, cfg.n);
            write_keywords(kw_out, set);
            for (const auto& k : set.keywords) out << k.rank << '\t' << k.word << '\t' << k.score << '\n';
            return 0;
        }
        if (fs->parsed()) {
            const RunConfig cfg = ov.resolve();
            if (cfg.dataset.empty()) throw std::invalid_argument("sample-fewshot needs --dataset");
            if (cfg.shots == 0) throw std::invalid_argument("sample-fewshot needs --shots > 0");
            const auto split = sample_fewshot(load_dataset(cfg.dataset), cfg.shots, cfg.split_seed);
            for (const auto& w : split.warnings) err << "warning: " << w << '\n';
            write_split(fs_out, split);
            out << "train " << split.train.size() << ", dev " << split.dev.size() << ", test " << split.test.size()
                << " -> " << fs_out << '\n';
            return 0;
        }
        if (gs->parsed()) {
            const RunConfig cfg = ov.resolve();
            const auto synth = generate_synthetic_domains(cfg.synthetic);
            std::filesystem::create_directories(gs_out);
            const std::filesystem::path dir(gs_out);
            write_documents((dir / "general.txt").string(), synth.general_corpus);
            write_documents((dir / "domain.txt").string(), synth.domain_corpus);
            write_dataset((dir / "dataset.tsv").string(), synth.dataset);
            out << "wrote general.txt, domain.txt, dataset.tsv to " << gs_out << '\n';
            return 0;
        }
        if (tr->parsed() || ab->parsed()) {
            const RunConfig cfg = ov.resolve();
            if (ab->parsed()) check_variant_shapes(Variant::MixNoConcat, cfg.m, cfg.n);
            const Experiment ex = prepare_experiment(cfg);
            for (const auto& w : ex.split.warnings) err << "warning: " << w << '\n';
            const auto results = tr->parsed() ? std::vector<RunResult>{train(cfg, ex.split, ex.keywords, ex.backbone)}
                                              : ablate(cfg, ex.split, ex.keywords, ex.backbone);
            detail::write_run_directory(cfg, ex, results);
            out << summary_table(results);
            return 0;
        }
        if (ev->parsed()) {
            const std::filesystem::path dir(ev_run);
            auto [weights, vocab] = load_backbone((dir / "backbone.ckpt").string());
            auto backbone = std::make_shared<const EncoderWeights>(std::move(weights));
            std::vector<std::string> labels;
            const Model model =
                load_model((dir / ("model_seed" + std::to_string(ev_seed) + ".ckpt")).string(), backbone, &labels);
            const LabeledDataset ds = load_dataset(ev_data);
            LabeledDataset remapped;
            remapped.labels = labels;
            for (const auto& e : ds.examples) {
                const auto& name = ds.label_name(e);
                if (std::find(labels.begin(), labels.end(), name) == labels.end()) {
                    throw std::invalid_argument("label-space mismatch: '" + name + "' is not a class of the model");
                }
                remapped.examples.push_back({e.text, remapped.class_index(name), e.id});
            }
            const std::size_t prompt_len = model.prompts.num_layers() == 0
                                               ? 0
                                               : prompt_length(model.variant, model.prompts.m(), model.prompts.n());
            const auto encoded = encode_dataset(remapped, {std::const_pointer_cast<EncoderWeights>(backbone), vocab},
                                                prompt_len, false);
            const auto result = evaluate(model, encoded);
            out << "accuracy " << format_percent(result.accuracy) << "% (" << encoded.size() << " examples)\n";
            if (!ev_out.empty()) {
                std::ofstream f(ev_out);
                f << nlohmann::ordered_json{{"accuracy", result.accuracy}, {"loss", result.loss},
                                            {"examples", encoded.size()}}
                         .dump(2)
                  << '\n';
            }
            return 0;
        }
        if (gc->parsed()) {
            const auto results = gradcheck::run_suite(gc_trials, gc_seed);
            bool ok = true;
            out << std::left << std::setw(24) << "op" << std::right << std::setw(8) << "trials" << std::setw(10)
                << "failures" << std::setw(14) << "worst rel" << '\n';
            for (const auto& r : results) {
                ok = ok && r.passed();
                out << std::left << std::setw(24) << r.op << std::right << std::setw(8) << r.trials << std::setw(10)
                    << r.failures << std::setw(14) << std::scientific << std::setprecision(2) << r.worst_error
                    << std::defaultfloat << '\n';
            }
            out << (ok ? "gradcheck passed" : "gradcheck FAILED") << '\n';
            return ok ? 0 : 1;
        }
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 2;
    }
    return 1;
}

}  // namespace switchprompt
