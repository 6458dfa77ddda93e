#pragma once

// RunConfig and its key=value text format.
//
//   # comment
//   variant = switchprompt
//   seeds = 1,2,3,4,5
//
// Keys are the field names below; unknown keys are rejected.

#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "switchprompt/checkpoint.hpp"
#include "switchprompt/data.hpp"
#include "switchprompt/encoder.hpp"
#include "switchprompt/keywords.hpp"
#include "switchprompt/prompt.hpp"

namespace switchprompt {

enum class GateSource {
    Plain,         // CLS of an unprompted pass
    SoftPrompted,  // CLS of a pass prompted with the soft prompts V alone
};

inline std::string to_string(GateSource g) { return g == GateSource::Plain ? "plain" : "soft-prompted"; }

inline GateSource parse_gate_source(const std::string& s) {
    if (s == "plain") return GateSource::Plain;
    if (s == "soft-prompted") return GateSource::SoftPrompted;
    throw std::invalid_argument("unknown gate source '" + s + "' (expected plain or soft-prompted)");
}

struct RunConfig {
    Variant variant = Variant::SwitchPrompt;

    // Backbone
    EncoderConfig encoder{};
    std::uint64_t backbone_seed = 1234;
    double backbone_init_std = 0.02;
    std::size_t pretrain_steps = 0;  // masked-token steps before freezing
    double pretrain_lr = 1e-3;
    bool pretrain_general = false;   // also pretrain on the general corpus, not just the domain one
    bool freeze = true;

    // Prompts and keywords
    std::size_t m = 8;
    std::size_t n = 10;
    double alpha = -1.0;
    bool train_keywords = false;
    KeywordVectors keyword_vectors = KeywordVectors::Embedding;
    GateSource gate_source = GateSource::Plain;
    double prompt_init_std = 0.02;

    // Optimization
    std::size_t batch_size = 32;
    double lr = 5e-3;
    double gamma = 0.95;
    std::size_t epochs = 50;
    double clip_norm = 1.0;
    std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};

    // Data
    std::size_t shots = 0;  // 0 = proportional full-data split
    std::uint64_t split_seed = 13;
    std::string general_corpus;
    std::string domain_corpus;
    std::string dataset;
    std::string keywords_file;  // optional: use this keyword list instead of mining one
    std::string backbone;       // optional: load backbone checkpoint
    std::string out_dir = "runs/out";

    // In-memory synthetic task, used when `dataset` is empty
    SyntheticOptions synthetic{};

    void validate() const {
        encoder.validate();
        if (seeds.empty()) throw std::invalid_argument("seeds must not be empty");
        if (batch_size == 0) throw std::invalid_argument("batch_size must be positive");
        require_negative_alpha(alpha);
        check_variant_shapes(variant, m, n);
        if (!(gamma > 0.0)) throw std::invalid_argument("gamma must be positive");
        if (!(lr > 0.0)) throw std::invalid_argument("lr must be positive");
        if (!dataset.empty() && (general_corpus.empty() || domain_corpus.empty()) && keywords_file.empty()) {
            throw std::invalid_argument("a dataset run needs general_corpus and domain_corpus (or keywords_file)");
        }
    }
};

namespace detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

inline std::size_t to_size(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        if (!v.empty() && v[0] == '-') throw std::invalid_argument("negative");
        const auto r = std::stoull(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("trailing");
        return static_cast<std::size_t>(r);
    } catch (const std::exception&) {
        throw std::invalid_argument("config key '" + key + "': expected a non-negative integer, got '" + v + "'");
    }
}

inline double to_double(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const double r = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("trailing");
        return r;
    } catch (const std::exception&) {
        throw std::invalid_argument("config key '" + key + "': expected a number, got '" + v + "'");
    }
}

inline bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw std::invalid_argument("config key '" + key + "': expected true or false, got '" + v + "'");
}

}  // namespace detail

/// Sets one field from its textual value.
inline void apply_setting(RunConfig& c, const std::string& key, const std::string& raw) {
    using namespace detail;
    const std::string v = trim(raw);
    auto sz = [&] { return to_size(key, v); };
    auto dbl = [&] { return to_double(key, v); };
    if (key == "variant") c.variant = parse_variant(v);
    else if (key == "vocab_size") c.encoder.vocab_size = sz();
    else if (key == "embed_dim") c.encoder.embed_dim = sz();
    else if (key == "num_layers") c.encoder.num_layers = sz();
    else if (key == "num_heads") c.encoder.num_heads = sz();
    else if (key == "ffn_dim") c.encoder.ffn_dim = sz();
    else if (key == "max_seq_len") c.encoder.max_seq_len = sz();
    else if (key == "dropout") c.encoder.dropout_rate = dbl();
    else if (key == "activation") c.encoder.activation = parse_activation(v);
    else if (key == "backbone_seed") c.backbone_seed = sz();
    else if (key == "backbone_init_std") c.backbone_init_std = dbl();
    else if (key == "pretrain_steps") c.pretrain_steps = sz();
    else if (key == "pretrain_lr") c.pretrain_lr = dbl();
    else if (key == "pretrain_general") c.pretrain_general = to_bool(key, v);
    else if (key == "freeze") c.freeze = to_bool(key, v);
    else if (key == "m") c.m = sz();
    else if (key == "n") c.n = sz();
    else if (key == "alpha") c.alpha = dbl();
    else if (key == "train_keywords") c.train_keywords = to_bool(key, v);
    else if (key == "keyword_vectors") c.keyword_vectors = parse_keyword_vectors(v);
    else if (key == "gate_source") c.gate_source = parse_gate_source(v);
    else if (key == "prompt_init_std") c.prompt_init_std = dbl();
    else if (key == "batch_size") c.batch_size = sz();
    else if (key == "lr") c.lr = dbl();
    else if (key == "gamma") c.gamma = dbl();
    else if (key == "epochs") c.epochs = sz();
    else if (key == "clip_norm") c.clip_norm = dbl();
    else if (key == "seeds" || key == "seed") {
        c.seeds.clear();
        std::stringstream ss(v);
        std::string item;
        while (std::getline(ss, item, ',')) {
            item = trim(item);
            if (!item.empty()) c.seeds.push_back(to_size(key, item));
        }
        if (c.seeds.empty()) throw std::invalid_argument("config key '" + key + "': empty seed list");
    } else if (key == "shots") c.shots = sz();
    else if (key == "split_seed") c.split_seed = sz();
    else if (key == "general_corpus") c.general_corpus = v;
    else if (key == "domain_corpus") c.domain_corpus = v;
    else if (key == "dataset") c.dataset = v;
    else if (key == "keywords_file") c.keywords_file = v;
    else if (key == "backbone") c.backbone = v;
    else if (key == "out_dir" || key == "out") c.out_dir = v;
    else if (key == "synthetic_seed") c.synthetic.seed = sz();
    else if (key == "synthetic_general_vocab") c.synthetic.general_vocab = sz();
    else if (key == "synthetic_tokens_per_class") c.synthetic.tokens_per_class = sz();
    else if (key == "synthetic_classes") c.synthetic.num_classes = sz();
    else if (key == "synthetic_examples_per_class") c.synthetic.examples_per_class = sz();
    else if (key == "synthetic_filler_prob") c.synthetic.filler_prob = dbl();
    else if (key == "synthetic_min_length") c.synthetic.min_length = sz();
    else if (key == "synthetic_max_length") c.synthetic.max_length = sz();
    else if (key == "synthetic_general_documents") c.synthetic.general_documents = sz();
    else if (key == "synthetic_domain_documents") c.synthetic.domain_documents = sz();
    else throw std::invalid_argument("unknown config key '" + key + "'");
}

inline void apply_config_text(RunConfig& c, const std::string& text, const std::string& origin = "config") {
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw std::invalid_argument(origin + ":" + std::to_string(lineno) + ": expected key = value");
        }
        try {
            apply_setting(c, detail::trim(line.substr(0, eq)), line.substr(eq + 1));
        } catch (const std::invalid_argument& e) {
            throw std::invalid_argument(origin + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    RunConfig c;
    apply_config_text(c, ss.str(), path);
    return c;
}

inline nlohmann::json to_json(const RunConfig& c) {
    return {{"variant", to_string(c.variant)},
            {"encoder", to_json(c.encoder)},
            {"backbone_seed", c.backbone_seed},
            {"backbone_init_std", c.backbone_init_std},
            {"pretrain_steps", c.pretrain_steps},
            {"pretrain_lr", c.pretrain_lr},
            {"pretrain_general", c.pretrain_general},
            {"freeze", c.freeze},
            {"m", c.m},
            {"n", c.n},
            {"alpha", c.alpha},
            {"train_keywords", c.train_keywords},
            {"keyword_vectors", to_string(c.keyword_vectors)},
            {"gate_source", to_string(c.gate_source)},
            {"prompt_init_std", c.prompt_init_std},
            {"batch_size", c.batch_size},
            {"lr", c.lr},
            {"gamma", c.gamma},
            {"epochs", c.epochs},
            {"clip_norm", c.clip_norm},
            {"seeds", c.seeds},
            {"shots", c.shots},
            {"split_seed", c.split_seed},
            {"general_corpus", c.general_corpus},
            {"domain_corpus", c.domain_corpus},
            {"dataset", c.dataset},
            {"keywords_file", c.keywords_file},
            {"backbone", c.backbone},
            {"synthetic",
             {{"seed", c.synthetic.seed},
              {"general_vocab", c.synthetic.general_vocab},
              {"tokens_per_class", c.synthetic.tokens_per_class},
              {"classes", c.synthetic.num_classes},
              {"examples_per_class", c.synthetic.examples_per_class},
              {"filler_prob", c.synthetic.filler_prob},
              {"min_length", c.synthetic.min_length},
              {"max_length", c.synthetic.max_length},
              {"general_documents", c.synthetic.general_documents},
              {"domain_documents", c.synthetic.domain_documents}}}};
}

}  // namespace switchprompt
