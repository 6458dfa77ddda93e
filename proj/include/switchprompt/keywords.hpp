#pragma once

// Contrastive term-frequency keyword mining.
//
//   score(w) = alpha * tf_general(w) + tf_domain(w),   alpha < 0
//
// Candidates are the words of the domain corpus; the n highest scores are the
// keywords, ties broken by lexicographic word order.

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "switchprompt/encoder.hpp"
#include "switchprompt/tensor.hpp"
#include "switchprompt/tokenizer.hpp"

namespace switchprompt {

enum class CorpusSource { General, Domain };

struct CorpusStats {
    std::map<std::string, std::uint64_t> counts;
    std::uint64_t total_tokens = 0;
    CorpusSource source = CorpusSource::General;

    double tf(const std::string& word) const {
        if (total_tokens == 0) return 0.0;
        auto it = counts.find(word);
        return it == counts.end() ? 0.0 : static_cast<double>(it->second) / static_cast<double>(total_tokens);
    }

    /// Summation merge; commutative and associative.
    CorpusStats& merge(const CorpusStats& other) {
        for (const auto& [w, c] : other.counts) counts[w] += c;
        total_tokens += other.total_tokens;
        return *this;
    }
};

inline CorpusStats compute_stats(const std::vector<std::string>& documents,
                                 CorpusSource source = CorpusSource::General) {
    CorpusStats stats;
    stats.source = source;
    for (const auto& doc : documents) {
        for (auto& w : split_words(doc)) {
            ++stats.counts[w];
            ++stats.total_tokens;
        }
    }
    if (stats.total_tokens == 0) throw std::invalid_argument("corpus contains no tokens");
    return stats;
}

/// One document per line, UTF-8.
inline std::vector<std::string> read_documents(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open corpus file " + path);
    std::vector<std::string> docs;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        docs.push_back(std::move(line));
    }
    return docs;
}

inline void require_negative_alpha(double alpha) {
    if (!(alpha < 0.0)) throw std::invalid_argument("alpha must be negative, got " + std::to_string(alpha));
}

inline double score_word(const std::string& word, const CorpusStats& general, const CorpusStats& domain,
                         double alpha) {
    require_negative_alpha(alpha);
    return alpha * general.tf(word) + domain.tf(word);
}

struct Keyword {
    std::string word;
    double score = 0.0;
    std::size_t rank = 0;  // 1-based
};

struct KeywordSet {
    std::vector<Keyword> keywords;
    double alpha = -1.0;

    std::size_t size() const { return keywords.size(); }
};

inline KeywordSet select_keywords(const CorpusStats& general, const CorpusStats& domain, double alpha,
                                  std::size_t n) {
    require_negative_alpha(alpha);
    if (n > domain.counts.size()) {
        throw std::invalid_argument("requested " + std::to_string(n) + " keywords but the domain corpus has only " +
                                    std::to_string(domain.counts.size()) + " distinct words");
    }
    std::vector<Keyword> scored;
    scored.reserve(domain.counts.size());
    for (const auto& [word, count] : domain.counts) scored.push_back({word, score_word(word, general, domain, alpha), 0});
    // counts is a std::map, so candidates arrive in lexicographic order and
    // a stable sort by score implements the tie-break.
    std::stable_sort(scored.begin(), scored.end(), [](const Keyword& a, const Keyword& b) { return a.score > b.score; });
    scored.resize(n);
    for (std::size_t i = 0; i < n; ++i) scored[i].rank = i + 1;
    return {std::move(scored), alpha};
}

/// `word<TAB>score<TAB>rank` per line, sorted by rank. Scores use 17
/// significant digits so they survive a round trip.
inline void write_keywords(const std::string& path, const KeywordSet& set) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write keyword file " + path);
    char buf[64];
    for (const auto& k : set.keywords) {
        std::snprintf(buf, sizeof buf, "%.17g", k.score);
        out << k.word << '\t' << buf << '\t' << k.rank << '\n';
    }
}

inline KeywordSet read_keywords(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open keyword file " + path);
    KeywordSet set;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto t1 = line.find('\t');
        const auto t2 = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
        if (t2 == std::string::npos) {
            throw std::runtime_error(path + ":" + std::to_string(lineno) + ": expected word<TAB>score<TAB>rank");
        }
        Keyword k;
        k.word = line.substr(0, t1);
        try {
            k.score = std::stod(line.substr(t1 + 1, t2 - t1 - 1));
            k.rank = std::stoul(line.substr(t2 + 1));
        } catch (const std::exception&) {
            throw std::runtime_error(path + ":" + std::to_string(lineno) + ": malformed score or rank");
        }
        if (k.rank != set.keywords.size() + 1) {
            throw std::runtime_error(path + ":" + std::to_string(lineno) + ": ranks must be 1..n in order");
        }
        set.keywords.push_back(std::move(k));
    }
    return set;
}

enum class KeywordVectors {
    Embedding,  // mean input embedding of the keyword's tokens
    Cls,        // final CLS state of an unprompted pass over "[CLS] keyword"
};

inline std::string to_string(KeywordVectors k) { return k == KeywordVectors::Embedding ? "embedding" : "cls"; }

inline KeywordVectors parse_keyword_vectors(const std::string& name) {
    if (name == "embedding") return KeywordVectors::Embedding;
    if (name == "cls") return KeywordVectors::Cls;
    throw std::invalid_argument("unknown keyword vector mode '" + name + "' (expected embedding or cls)");
}

/// Rows of the result are the keyword vectors in rank order.
inline Tensor vectorize_keywords(const KeywordSet& set, const EncoderWeights& weights, const Vocabulary& vocab,
                                 KeywordVectors mode = KeywordVectors::Embedding) {
    const std::size_t e = weights.config.embed_dim;
    std::vector<double> rows(set.size() * e, 0.0);
    for (std::size_t i = 0; i < set.size(); ++i) {
        auto ids = vocab.word_ids(set.keywords[i].word);
        if (ids.empty()) ids.push_back(Vocabulary::kUnk);
        double* row = rows.data() + i * e;
        if (mode == KeywordVectors::Embedding) {
            const auto table = weights.token_embeddings.values();
            for (auto id : ids)
                for (std::size_t j = 0; j < e; ++j) row[j] += table[id * e + j];
            for (std::size_t j = 0; j < e; ++j) row[j] /= static_cast<double>(ids.size());
        } else {
            ids.insert(ids.begin(), Vocabulary::kCls);
            if (ids.size() > weights.config.max_seq_len) ids.resize(weights.config.max_seq_len);
            const Tensor cls = encode_plain(ids, weights).cls;
            std::copy(cls.values().begin(), cls.values().end(), row);
        }
    }
    return Tensor::from_values({set.size(), e}, std::move(rows));
}

}  // namespace switchprompt
