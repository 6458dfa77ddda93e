#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <tuple>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "switchprompt/random.hpp"

namespace switchprompt {

struct Example {
    std::string text;
    std::size_t label = 0;  // index into LabeledDataset::labels
    std::size_t id = 0;     // position in the source file
};

struct LabeledDataset {
    std::vector<Example> examples;
    std::vector<std::string> labels;  // class index -> name, first-appearance order
    std::string domain;

    std::size_t num_classes() const { return labels.size(); }
    std::size_t size() const { return examples.size(); }
    const std::string& label_name(const Example& ex) const { return labels.at(ex.label); }

    std::size_t class_index(const std::string& label) const {
        auto it = std::find(labels.begin(), labels.end(), label);
        if (it == labels.end()) throw std::out_of_range("unknown label '" + label + "'");
        return static_cast<std::size_t>(it - labels.begin());
    }

    /// Appends an example, registering its label if new.
    void add(std::string text, const std::string& label) {
        auto it = std::find(labels.begin(), labels.end(), label);
        std::size_t idx = static_cast<std::size_t>(it - labels.begin());
        if (it == labels.end()) labels.push_back(label);
        examples.push_back({std::move(text), idx, examples.size()});
    }

    std::vector<std::size_t> class_counts() const {
        std::vector<std::size_t> counts(labels.size(), 0);
        for (const auto& ex : examples) ++counts[ex.label];
        return counts;
    }

    /// Same label space, no examples.
    LabeledDataset empty_like() const { return {{}, labels, domain}; }
};

/// Reads `label<TAB>text` records, one per line. Only the "tsv" format exists.
inline LabeledDataset load_dataset(const std::string& path, const std::string& format = "tsv") {
    if (format != "tsv") throw std::invalid_argument("unknown dataset format '" + format + "' (expected tsv)");
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open dataset " + path);
    LabeledDataset ds;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos || tab == 0) {
            throw std::runtime_error(path + ":" + std::to_string(lineno) + ": expected label<TAB>text");
        }
        ds.add(line.substr(tab + 1), line.substr(0, tab));
    }
    if (ds.examples.empty()) throw std::runtime_error("dataset " + path + " is empty");
    return ds;
}

inline void write_dataset(const std::string& path, const LabeledDataset& ds) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write dataset " + path);
    for (const auto& ex : ds.examples) out << ds.labels.at(ex.label) << '\t' << ex.text << '\n';
}

struct FewShotSplit {
    LabeledDataset train, dev, test;
    std::size_t shots = 0;  // 0 for a proportional (full-data) split
    std::uint64_t seed = 0;
    std::vector<std::string> warnings;
};

namespace detail {

/// Per-class example lists in canonical (label, text, id) order, each
/// shuffled with a class-specific stream of the seed.
inline std::vector<std::vector<Example>> shuffled_by_class(const LabeledDataset& ds, std::uint64_t seed) {
    std::vector<Example> sorted = ds.examples;
    std::sort(sorted.begin(), sorted.end(), [](const Example& a, const Example& b) {
        return std::tie(a.label, a.text, a.id) < std::tie(b.label, b.text, b.id);
    });
    std::vector<std::vector<Example>> by_class(ds.num_classes());
    for (auto& ex : sorted) by_class[ex.label].push_back(std::move(ex));
    for (std::size_t c = 0; c < by_class.size(); ++c) {
        Rng rng(seed, 0x5a3b1e00 + c);
        rng.shuffle(by_class[c]);
    }
    return by_class;
}

}  // namespace detail

/// Draws `shots` training and `shots` development examples per class without
/// replacement; everything else becomes the test set.
inline FewShotSplit sample_fewshot(const LabeledDataset& ds, std::size_t shots, std::uint64_t seed) {
    if (shots == 0) throw std::invalid_argument("shots must be positive");
    FewShotSplit split{ds.empty_like(), ds.empty_like(), ds.empty_like(), shots, seed, {}};
    const auto by_class = detail::shuffled_by_class(ds, seed);
    for (std::size_t c = 0; c < by_class.size(); ++c) {
        const auto& items = by_class[c];
        if (items.size() < 2 * shots) {
            throw std::invalid_argument("class '" + ds.labels[c] + "' has " + std::to_string(items.size()) +
                                        " examples, needs at least " + std::to_string(2 * shots) +
                                        " for a " + std::to_string(shots) + "-shot split");
        }
        if (items.size() == 2 * shots) {
            split.warnings.push_back("class '" + ds.labels[c] + "' has no test examples");
        }
        for (std::size_t i = 0; i < items.size(); ++i) {
            auto& target = i < shots ? split.train : i < 2 * shots ? split.dev : split.test;
            target.examples.push_back(items[i]);
        }
    }
    return split;
}

/// Proportional stratified split for full-data runs: per class, round(dev_fraction * size)
/// dev and round(test_fraction * size) test examples (at least one each), rest train.
inline FewShotSplit split_full(const LabeledDataset& ds, std::uint64_t seed, double dev_fraction = 0.1,
                               double test_fraction = 0.1) {
    FewShotSplit split{ds.empty_like(), ds.empty_like(), ds.empty_like(), 0, seed, {}};
    const auto by_class = detail::shuffled_by_class(ds, seed);
    for (std::size_t c = 0; c < by_class.size(); ++c) {
        const auto& items = by_class[c];
        const auto frac = [&](double f) {
            return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(f * static_cast<double>(items.size()))));
        };
        const std::size_t n_dev = frac(dev_fraction), n_test = frac(test_fraction);
        if (items.size() < n_dev + n_test + 1) {
            throw std::invalid_argument("class '" + ds.labels[c] + "' is too small for a train/dev/test split");
        }
        for (std::size_t i = 0; i < items.size(); ++i) {
            auto& target = i < n_dev ? split.dev : i < n_dev + n_test ? split.test : split.train;
            target.examples.push_back(items[i]);
        }
    }
    return split;
}

inline nlohmann::json split_metadata(const FewShotSplit& split) {
    nlohmann::json meta;
    meta["seed"] = split.seed;
    meta["shots"] = split.shots;
    meta["labels"] = split.train.labels;
    auto counts = [](const LabeledDataset& d) {
        nlohmann::json j = nlohmann::json::object();
        const auto c = d.class_counts();
        for (std::size_t i = 0; i < c.size(); ++i) j[d.labels[i]] = c[i];
        return j;
    };
    meta["counts"] = {{"train", counts(split.train)}, {"dev", counts(split.dev)}, {"test", counts(split.test)}};
    meta["warnings"] = split.warnings;
    return meta;
}

/// Writes train.tsv, dev.tsv, test.tsv and split.json into `dir`.
inline void write_split(const std::filesystem::path& dir, const FewShotSplit& split) {
    std::filesystem::create_directories(dir);
    write_dataset((dir / "train.tsv").string(), split.train);
    write_dataset((dir / "dev.tsv").string(), split.dev);
    write_dataset((dir / "test.tsv").string(), split.test);
    std::ofstream meta(dir / "split.json");
    meta << split_metadata(split).dump(2) << '\n';
}

struct SyntheticOptions {
    std::uint64_t seed = 1;
    std::size_t general_vocab = 300;      // filler words shared by both domains
    std::size_t tokens_per_class = 4;     // domain-exclusive words per class
    std::size_t num_classes = 4;
    std::size_t examples_per_class = 200;
    double filler_prob = 0.8;             // chance that a token is filler instead of a class word
    std::size_t min_length = 8;
    std::size_t max_length = 16;
    std::size_t general_documents = 2000;
    std::size_t domain_documents = 400;
};

struct SyntheticDomains {
    std::vector<std::string> general_corpus;
    std::vector<std::string> domain_corpus;
    LabeledDataset dataset;
    std::vector<std::vector<std::string>> planted;  // class words, per class
};

/// Builds a general corpus of Zipf-distributed filler words and a labeled
/// domain dataset whose class is carried by class-specific words that never
/// occur in the general corpus. Filler words appear in domain text only with
/// probability filler_prob per token, at their general-domain relative
/// frequency, so their domain frequency stays below their general frequency.
inline SyntheticDomains generate_synthetic_domains(const SyntheticOptions& opt) {
    if (opt.num_classes == 0 || opt.tokens_per_class == 0 || opt.general_vocab == 0) {
        throw std::invalid_argument("synthetic generator needs classes, class words and filler words");
    }
    if (opt.min_length == 0 || opt.max_length < opt.min_length) throw std::invalid_argument("invalid length range");
    if (opt.filler_prob < 0.0 || opt.filler_prob >= 1.0) throw std::invalid_argument("filler_prob must lie in [0, 1)");

    Rng rng(opt.seed, 0x5e7d);
    std::vector<std::string> filler(opt.general_vocab);
    for (std::size_t i = 0; i < filler.size(); ++i) filler[i] = "w" + std::to_string(i);
    std::vector<double> cdf(filler.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < filler.size(); ++i) cdf[i] = (acc += 1.0 / std::pow(static_cast<double>(i + 1), 0.8));
    for (auto& c : cdf) c /= acc;
    auto draw_filler = [&]() -> const std::string& {
        const auto it = std::lower_bound(cdf.begin(), cdf.end(), rng.uniform());
        return filler[std::min<std::size_t>(static_cast<std::size_t>(it - cdf.begin()), filler.size() - 1)];
    };

    SyntheticDomains out;
    out.planted.resize(opt.num_classes);
    for (std::size_t c = 0; c < opt.num_classes; ++c)
        for (std::size_t j = 0; j < opt.tokens_per_class; ++j)
            out.planted[c].push_back("d" + std::to_string(c) + "x" + std::to_string(j));

    auto length = [&] { return opt.min_length + rng.below(opt.max_length - opt.min_length + 1); };
    auto domain_text = [&](std::size_t cls) {
        std::string text;
        const std::size_t len = length();
        for (std::size_t i = 0; i < len; ++i) {
            if (i) text += ' ';
            if (rng.uniform() < opt.filler_prob) {
                text += draw_filler();
            } else {
                text += out.planted[cls][rng.below(opt.tokens_per_class)];
            }
        }
        return text;
    };

    for (std::size_t d = 0; d < opt.general_documents; ++d) {
        std::string text;
        const std::size_t len = length();
        for (std::size_t i = 0; i < len; ++i) {
            if (i) text += ' ';
            text += draw_filler();
        }
        out.general_corpus.push_back(std::move(text));
    }
    for (std::size_t d = 0; d < opt.domain_documents; ++d) {
        out.domain_corpus.push_back(domain_text(d % opt.num_classes));
    }
    out.dataset.domain = "synthetic";
    for (std::size_t c = 0; c < opt.num_classes; ++c) out.dataset.labels.push_back("class" + std::to_string(c));
    // Interleave classes so the file order is not sorted by label.
    for (std::size_t i = 0; i < opt.examples_per_class; ++i) {
        for (std::size_t c = 0; c < opt.num_classes; ++c) {
            out.dataset.examples.push_back({domain_text(c), c, out.dataset.examples.size()});
        }
    }
    return out;
}

inline void write_documents(const std::string& path, const std::vector<std::string>& docs) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    for (const auto& d : docs) out << d << '\n';
}

}  // namespace switchprompt
