#pragma once

// Brief masked-token training of a freshly initialized backbone, so that its
// CLS state carries input-dependent structure before it is frozen.

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "switchprompt/encoder.hpp"
#include "switchprompt/optim.hpp"
#include "switchprompt/random.hpp"
#include "switchprompt/tokenizer.hpp"

namespace switchprompt {

struct PretrainOptions {
    std::size_t steps = 200;
    std::size_t batch_size = 16;
    double lr = 1e-3;
    double mask_prob = 0.15;
    std::uint64_t seed = 1;
};

/// Trains all backbone weights to recover masked tokens through the
/// transposed token-embedding table, both from the masked position and from
/// the CLS state. The backbone is frozen on return. Returns the loss of the
/// last step.
inline double pretrain_masked_tokens(EncoderWeights& weights, const Vocabulary& vocab,
                                     const std::vector<std::string>& documents, const PretrainOptions& opt) {
    std::vector<std::vector<std::size_t>> docs;
    for (const auto& d : documents) {
        auto ids = vocab.encode(d, weights.config.max_seq_len);
        if (ids.size() >= 2) docs.push_back(std::move(ids));
    }
    if (docs.empty()) throw std::invalid_argument("pretraining needs at least one non-empty document");

    weights.set_frozen(false);
    std::vector<Tensor> params;
    for (auto& [name, t] : weights.named_tensors()) params.push_back(t);
    Adam adam(params, {opt.lr});
    Rng rng(opt.seed, 0x9e7a);
    double last_loss = 0.0;
    for (std::size_t step = 0; step < opt.steps; ++step) {
        std::vector<Tensor> picked;
        std::vector<std::size_t> targets;
        for (std::size_t b = 0; b < opt.batch_size; ++b) {
            auto ids = docs[rng.below(docs.size())];
            std::vector<std::size_t> positions;
            for (std::size_t i = 1; i < ids.size(); ++i)
                if (rng.uniform() < opt.mask_prob) positions.push_back(i);
            if (positions.empty()) positions.push_back(1 + rng.below(ids.size() - 1));
            for (auto p : positions) {
                targets.push_back(ids[p]);
                ids[p] = Vocabulary::kMask;
            }
            const Tensor states = encode_plain(ids, weights).states;
            const std::size_t masked = positions.size();
            positions.resize(2 * masked, 0);  // CLS row once per masked token
            for (std::size_t i = 0; i < masked; ++i) targets.push_back(targets[targets.size() - masked]);
            picked.push_back(embedding(states, positions));  // row gather
        }
        const Tensor rows = picked.size() == 1 ? picked.front() : concat_rows(picked);
        const Tensor logits = matmul(rows, transpose(weights.token_embeddings));
        const Tensor loss = softmax_cross_entropy(logits, targets);
        last_loss = loss.item();
        if (!std::isfinite(last_loss)) {
            weights.set_frozen(true);
            throw std::runtime_error("pretraining diverged at step " + std::to_string(step));
        }
        backward(loss);
        clip_grad_norm(params, 1.0);
        adam.step();
        adam.zero_grad();
    }
    weights.set_frozen(true);
    return last_loss;
}

}  // namespace switchprompt
