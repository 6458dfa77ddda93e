#pragma once

// Assembles everything a run needs from a RunConfig: corpora, dataset,
// vocabulary, backbone, keywords and the train/dev/test split. Also writes
// the run artifacts.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "switchprompt/checkpoint.hpp"
#include "switchprompt/config.hpp"
#include "switchprompt/data.hpp"
#include "switchprompt/keywords.hpp"
#include "switchprompt/pretrain.hpp"
#include "switchprompt/trainer.hpp"

namespace switchprompt {

struct Experiment {
    std::vector<std::string> general_corpus;
    std::vector<std::string> domain_corpus;
    LabeledDataset dataset;
    Backbone backbone;
    KeywordSet keywords;
    FewShotSplit split;
};

/// Builds the backbone for `config`: loaded from a checkpoint when one is
/// named, otherwise randomly initialized over a vocabulary built from `texts`
/// and optionally pretrained on the unlabeled `corpus`.
inline Backbone build_backbone(const RunConfig& config, const std::vector<std::string>& texts,
                               const std::vector<std::string>& corpus) {
    if (!config.backbone.empty()) {
        auto [weights, vocab] = load_backbone(config.backbone);
        return {std::make_shared<EncoderWeights>(std::move(weights)), std::move(vocab)};
    }
    Vocabulary vocab = Vocabulary::build(texts, config.encoder.vocab_size);
    EncoderConfig ec = config.encoder;
    ec.vocab_size = vocab.size();
    auto weights = std::make_shared<EncoderWeights>(EncoderWeights::random(ec, config.backbone_seed, config.backbone_init_std));
    if (config.pretrain_steps > 0) {
        PretrainOptions opt;
        opt.steps = config.pretrain_steps;
        opt.lr = config.pretrain_lr;
        opt.seed = config.backbone_seed;
        pretrain_masked_tokens(*weights, vocab, corpus.empty() ? texts : corpus, opt);
    }
    return {std::move(weights), std::move(vocab)};
}

inline Experiment prepare_experiment(const RunConfig& config) {
    config.validate();
    Experiment ex;
    if (config.dataset.empty()) {
        auto synth = generate_synthetic_domains(config.synthetic);
        ex.general_corpus = std::move(synth.general_corpus);
        ex.domain_corpus = std::move(synth.domain_corpus);
        ex.dataset = std::move(synth.dataset);
    } else {
        ex.dataset = load_dataset(config.dataset);
        if (!config.general_corpus.empty()) ex.general_corpus = read_documents(config.general_corpus);
        if (!config.domain_corpus.empty()) ex.domain_corpus = read_documents(config.domain_corpus);
    }

    std::vector<std::string> texts = ex.general_corpus;
    texts.insert(texts.end(), ex.domain_corpus.begin(), ex.domain_corpus.end());
    std::vector<std::string> corpus = config.pretrain_general ? texts : ex.domain_corpus;
    for (const auto& e : ex.dataset.examples) texts.push_back(e.text);
    ex.backbone = build_backbone(config, texts, corpus);

    if (!config.keywords_file.empty()) {
        ex.keywords = read_keywords(config.keywords_file);
    } else {
        ex.keywords = select_keywords(compute_stats(ex.general_corpus, CorpusSource::General),
                                      compute_stats(ex.domain_corpus, CorpusSource::Domain), config.alpha, config.n);
    }
    ex.split = config.shots > 0 ? sample_fewshot(ex.dataset, config.shots, config.split_seed)
                                : split_full(ex.dataset, config.split_seed);
    return ex;
}

inline std::string format_percent(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", 100.0 * x);
    return buf;
}

/// Aligned plain-text summary, one row per result.
inline std::string summary_table(const std::vector<RunResult>& results) {
    std::ostringstream os;
    os << std::left << std::setw(5) << "row" << std::setw(16) << "variant" << std::right << std::setw(10) << "dev%"
       << std::setw(10) << "test%" << std::setw(10) << "std" << std::setw(12) << "trainable" << '\n';
    for (const auto& r : results) {
        os << std::left << std::setw(5) << ("(" + std::to_string(table_row(r.variant)) + ")") << std::setw(16)
           << to_string(r.variant) << std::right << std::setw(10) << format_percent(r.mean_dev) << std::setw(10)
           << format_percent(r.mean_test) << std::setw(10) << format_percent(r.std_test) << std::setw(12)
           << r.trainable_parameters << '\n';
    }
    return os.str();
}

inline nlohmann::ordered_json result_json(const RunResult& r) {
    nlohmann::ordered_json j;
    j["variant"] = to_string(r.variant);
    j["mean_dev_accuracy"] = r.mean_dev;
    j["std_dev_accuracy"] = r.std_dev;
    j["mean_test_accuracy"] = r.mean_test;
    j["std_test_accuracy"] = r.std_test;
    j["trainable_parameters"] = r.trainable_parameters;
    j["backbone_parameters"] = r.backbone_parameters;
    j["per_seed"] = nlohmann::ordered_json::array();
    for (const auto& s : r.per_seed) {
        j["per_seed"].push_back({{"seed", s.seed},
                                 {"best_epoch", s.best_epoch},
                                 {"dev_accuracy", s.dev_accuracy},
                                 {"test_accuracy", s.test_accuracy}});
    }
    j["config"] = r.config;
    return j;
}

/// metrics.jsonl (one record per line), result.json and summary.txt hold no
/// timing and are byte-identical across reruns; wall-clock goes to timing.json.
inline void write_run_outputs(const std::filesystem::path& dir, const std::vector<RunResult>& results) {
    std::filesystem::create_directories(dir);
    {
        std::ofstream out(dir / "metrics.jsonl");
        for (const auto& r : results)
            for (const auto& rec : r.records) out << to_json(rec).dump() << '\n';
    }
    {
        std::ofstream out(dir / "result.json");
        if (results.size() == 1) {
            out << result_json(results.front()).dump(2) << '\n';
        } else {
            nlohmann::ordered_json all = nlohmann::ordered_json::array();
            for (const auto& r : results) all.push_back(result_json(r));
            out << all.dump(2) << '\n';
        }
    }
    {
        std::ofstream out(dir / "summary.txt");
        out << summary_table(results);
    }
    {
        nlohmann::ordered_json timing = nlohmann::ordered_json::object();
        for (const auto& r : results) timing[to_string(r.variant)] = {{"seconds_per_epoch", r.seconds_per_epoch}};
        std::ofstream out(dir / "timing.json");
        out << timing.dump(2) << '\n';
    }
}

/// Prompt state and head of a trained model, with what evaluation needs to
/// rebuild it.
inline void save_model(const std::string& path, const Model& model, const std::vector<std::string>& labels) {
    NamedTensors tensors = model.prompts.named_tensors();
    for (auto& nt : model.head.named_tensors()) tensors.push_back(nt);
    save_checkpoint(path, tensors,
                    {{"kind", "prompt-model"},
                     {"variant", to_string(model.variant)},
                     {"gate_source", to_string(model.gate_source)},
                     {"dropout_rate", model.head.dropout_rate},
                     {"labels", labels}});
}

inline Model load_model(const std::string& path, std::shared_ptr<const EncoderWeights> backbone,
                        std::vector<std::string>* labels = nullptr) {
    const auto ck = load_checkpoint(path);
    if (ck.meta.value("kind", "") != "prompt-model") throw std::runtime_error(path + " is not a prompt-model checkpoint");
    Model model;
    model.variant = parse_variant(ck.meta.at("variant"));
    model.gate_source = parse_gate_source(ck.meta.at("gate_source"));
    for (std::size_t i = 0; i < backbone->config.num_layers; ++i) {
        model.prompts.general.push_back(ck.at("prompt.general" + std::to_string(i)));
    }
    model.prompts.keywords = ck.at("prompt.keywords");
    model.prompts.gate_general = ck.at("prompt.gate_general");
    model.prompts.gate_order = ck.at("prompt.gate_order");
    model.head = {ck.at("head.projection"), ck.at("head.bias"), ck.meta.at("dropout_rate").get<double>()};
    model.backbone = std::move(backbone);
    if (labels) *labels = ck.meta.at("labels").get<std::vector<std::string>>();
    return model;
}

}  // namespace switchprompt
