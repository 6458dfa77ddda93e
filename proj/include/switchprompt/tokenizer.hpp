#pragma once

#include <algorithm>
#include <cctype>
#include <cstddef>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace switchprompt {

/// Whitespace tokenization with ASCII lowercasing. Non-ASCII bytes pass through
/// unchanged, so UTF-8 words stay intact.
inline std::vector<std::string> split_words(std::string_view text) {
    std::vector<std::string> words;
    std::string current;
    for (char ch : text) {
        const auto c = static_cast<unsigned char>(ch);
        if (c < 0x80 && std::isspace(c)) {
            if (!current.empty()) words.push_back(std::move(current));
            current.clear();
        } else {
            current.push_back(c < 0x80 ? static_cast<char>(std::tolower(c)) : ch);
        }
    }
    if (!current.empty()) words.push_back(std::move(current));
    return words;
}

/// Word-level vocabulary. Ids 0..2 are reserved for [CLS], [UNK] and [MASK].
class Vocabulary {
   public:
    static constexpr std::size_t kCls = 0;
    static constexpr std::size_t kUnk = 1;
    static constexpr std::size_t kMask = 2;
    static constexpr std::size_t kReserved = 3;

    Vocabulary() : Vocabulary(std::vector<std::string>{}) {}

    /// Keeps the `max_size - kReserved` most frequent words; ties broken
    /// lexicographically.
    static Vocabulary build(const std::vector<std::string>& documents, std::size_t max_size) {
        if (max_size < kReserved) throw std::invalid_argument("vocabulary size must cover the reserved tokens");
        std::map<std::string, std::size_t> counts;
        for (const auto& doc : documents)
            for (auto& w : split_words(doc)) ++counts[w];
        std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
        std::stable_sort(ranked.begin(), ranked.end(),
                         [](const auto& a, const auto& b) { return a.second > b.second; });
        if (ranked.size() > max_size - kReserved) ranked.resize(max_size - kReserved);
        std::vector<std::string> words;
        words.reserve(ranked.size());
        for (auto& [w, c] : ranked) words.push_back(w);
        return Vocabulary(std::move(words));
    }

    /// From a full id-ordered word list (including the reserved entries).
    static Vocabulary from_id_order(const std::vector<std::string>& id_to_word) {
        if (id_to_word.size() < kReserved || id_to_word[kCls] != "[CLS]" || id_to_word[kUnk] != "[UNK]" ||
            id_to_word[kMask] != "[MASK]") {
            throw std::invalid_argument("vocabulary list does not start with the reserved tokens");
        }
        return Vocabulary(std::vector<std::string>(id_to_word.begin() + kReserved, id_to_word.end()));
    }

    std::size_t size() const { return id_to_word_.size(); }
    const std::vector<std::string>& id_to_word() const { return id_to_word_; }
    const std::string& word(std::size_t id) const { return id_to_word_.at(id); }
    bool contains(const std::string& word) const { return word_to_id_.count(word) != 0; }

    std::size_t id(const std::string& word) const {
        auto it = word_to_id_.find(word);
        return it == word_to_id_.end() ? kUnk : it->second;
    }

    /// Word ids without the leading [CLS].
    std::vector<std::size_t> word_ids(std::string_view text) const {
        std::vector<std::size_t> ids;
        for (const auto& w : split_words(text)) ids.push_back(id(w));
        return ids;
    }

    /// [CLS] followed by word ids, truncated to at most `max_tokens` ids.
    std::vector<std::size_t> encode(std::string_view text, std::size_t max_tokens) const {
        std::vector<std::size_t> ids{kCls};
        for (const auto& w : split_words(text)) {
            if (ids.size() >= max_tokens) break;
            ids.push_back(id(w));
        }
        return ids;
    }

   private:
    explicit Vocabulary(std::vector<std::string> words) {
        id_to_word_ = {"[CLS]", "[UNK]", "[MASK]"};
        for (auto& w : words) id_to_word_.push_back(std::move(w));
        for (std::size_t i = 0; i < id_to_word_.size(); ++i) word_to_id_.emplace(id_to_word_[i], i);
    }

    std::vector<std::string> id_to_word_;
    std::unordered_map<std::string, std::size_t> word_to_id_;
};

}  // namespace switchprompt
