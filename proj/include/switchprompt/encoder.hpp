#pragma once

// Small pre-LayerNorm transformer encoder standing in for a pretrained LM.
//
// Deep prompts are injected prefix-style: at layer i the rows of
// layer_prompts[i] are prepended to that layer's key and value sequences, so
// every token attends over l prompt slots followed by the T tokens. Prompt rows
// bypass the key/value projections and receive no position embedding.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "switchprompt/random.hpp"
#include "switchprompt/tensor.hpp"
#include "switchprompt/tokenizer.hpp"

namespace switchprompt {

enum class Activation { Gelu, Relu };

inline std::string to_string(Activation a) { return a == Activation::Gelu ? "gelu" : "relu"; }

inline Activation parse_activation(const std::string& name) {
    if (name == "gelu") return Activation::Gelu;
    if (name == "relu") return Activation::Relu;
    throw std::invalid_argument("unknown activation '" + name + "' (expected gelu or relu)");
}

struct EncoderConfig {
    std::size_t vocab_size = 512;
    std::size_t embed_dim = 32;
    std::size_t num_layers = 2;
    std::size_t num_heads = 4;
    std::size_t ffn_dim = 128;
    std::size_t max_seq_len = 128;
    double dropout_rate = 0.1;  // applied by the classification head
    Activation activation = Activation::Gelu;

    void validate() const {
        if (embed_dim == 0 || num_heads == 0 || embed_dim % num_heads != 0) {
            throw std::invalid_argument("embed_dim (" + std::to_string(embed_dim) +
                                        ") must be a positive multiple of num_heads (" +
                                        std::to_string(num_heads) + ")");
        }
        if (vocab_size <= Vocabulary::kReserved) throw std::invalid_argument("vocab_size too small");
        if (max_seq_len == 0) throw std::invalid_argument("max_seq_len must be positive");
        if (dropout_rate < 0.0 || dropout_rate >= 1.0) throw std::invalid_argument("dropout_rate must lie in [0, 1)");
    }

    std::size_t head_dim() const { return embed_dim / num_heads; }
};

struct LayerWeights {
    Tensor ln1_gamma, ln1_beta;
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
    Tensor ln2_gamma, ln2_beta;
    Tensor ffn_in, ffn_in_bias, ffn_out, ffn_out_bias;
};

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

inline std::size_t count_parameters(const NamedTensors& tensors, bool trainable_only) {
    std::size_t n = 0;
    for (const auto& [name, t] : tensors) {
        if (!trainable_only || t.requires_grad()) n += t.size();
    }
    return n;
}

/// 64-bit FNV-1a over the raw bytes of every buffer, in name order.
inline std::uint64_t checksum(const NamedTensors& tensors) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& [name, t] : tensors) {
        h = fnv1a(name, h);
        const auto v = t.values();
        h = fnv1a(std::string_view(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(double)), h);
    }
    return h;
}

class EncoderWeights {
   public:
    EncoderConfig config;
    Tensor token_embeddings;     // vocab_size x e
    Tensor position_embeddings;  // max_seq_len x e
    std::vector<LayerWeights> layers;
    Tensor final_gamma, final_beta;

    /// Matrices ~ N(0, init_std^2), biases zero, LayerNorm gains one.
    static EncoderWeights random(const EncoderConfig& config, std::uint64_t seed, double init_std = 0.02) {
        config.validate();
        Rng rng(seed, 0xe7c0de);
        const std::size_t e = config.embed_dim, f = config.ffn_dim;
        EncoderWeights w;
        w.config = config;
        w.token_embeddings = Tensor::randn({config.vocab_size, e}, rng, init_std);
        w.position_embeddings = Tensor::randn({config.max_seq_len, e}, rng, init_std);
        for (std::size_t i = 0; i < config.num_layers; ++i) {
            LayerWeights l;
            l.ln1_gamma = Tensor::full({e}, 1.0);
            l.ln1_beta = Tensor::zeros({e});
            l.wq = Tensor::randn({e, e}, rng, init_std);
            l.bq = Tensor::zeros({e});
            l.wk = Tensor::randn({e, e}, rng, init_std);
            l.bk = Tensor::zeros({e});
            l.wv = Tensor::randn({e, e}, rng, init_std);
            l.bv = Tensor::zeros({e});
            l.wo = Tensor::randn({e, e}, rng, init_std);
            l.bo = Tensor::zeros({e});
            l.ln2_gamma = Tensor::full({e}, 1.0);
            l.ln2_beta = Tensor::zeros({e});
            l.ffn_in = Tensor::randn({e, f}, rng, init_std);
            l.ffn_in_bias = Tensor::zeros({f});
            l.ffn_out = Tensor::randn({f, e}, rng, init_std);
            l.ffn_out_bias = Tensor::zeros({e});
            w.layers.push_back(std::move(l));
        }
        w.final_gamma = Tensor::full({e}, 1.0);
        w.final_beta = Tensor::zeros({e});
        w.frozen_ = false;
        w.set_frozen(true);
        return w;
    }

    NamedTensors named_tensors() const {
        NamedTensors out{{"token_embeddings", token_embeddings}, {"position_embeddings", position_embeddings}};
        for (std::size_t i = 0; i < layers.size(); ++i) {
            const auto& l = layers[i];
            const std::string p = "layer" + std::to_string(i) + ".";
            out.insert(out.end(), {{p + "ln1_gamma", l.ln1_gamma},
                                   {p + "ln1_beta", l.ln1_beta},
                                   {p + "wq", l.wq},
                                   {p + "bq", l.bq},
                                   {p + "wk", l.wk},
                                   {p + "bk", l.bk},
                                   {p + "wv", l.wv},
                                   {p + "bv", l.bv},
                                   {p + "wo", l.wo},
                                   {p + "bo", l.bo},
                                   {p + "ln2_gamma", l.ln2_gamma},
                                   {p + "ln2_beta", l.ln2_beta},
                                   {p + "ffn_in", l.ffn_in},
                                   {p + "ffn_in_bias", l.ffn_in_bias},
                                   {p + "ffn_out", l.ffn_out},
                                   {p + "ffn_out_bias", l.ffn_out_bias}});
        }
        out.emplace_back("final_gamma", final_gamma);
        out.emplace_back("final_beta", final_beta);
        return out;
    }

    bool frozen() const { return frozen_; }

    /// Frozen weights never require gradient, so forward passes over them
    /// record no graph and optimizers cannot reach them.
    void set_frozen(bool frozen) {
        frozen_ = frozen;
        for (auto& [name, t] : named_tensors()) {
            Tensor handle = t;
            handle.set_requires_grad(!frozen);
        }
    }

    std::size_t parameter_count() const { return count_parameters(named_tensors(), false); }
    std::uint64_t checksum() const { return switchprompt::checksum(named_tensors()); }

    /// Independent copy of every buffer, keeping the frozen flag.
    EncoderWeights clone() const {
        EncoderWeights w = *this;
        auto copy = [](Tensor& t) { t = t.detach(t.requires_grad()); };
        copy(w.token_embeddings);
        copy(w.position_embeddings);
        for (auto& l : w.layers) {
            for (Tensor* t : {&l.ln1_gamma, &l.ln1_beta, &l.wq, &l.bq, &l.wk, &l.bk, &l.wv, &l.bv, &l.wo, &l.bo,
                              &l.ln2_gamma, &l.ln2_beta, &l.ffn_in, &l.ffn_in_bias, &l.ffn_out, &l.ffn_out_bias})
                copy(*t);
        }
        copy(w.final_gamma);
        copy(w.final_beta);
        return w;
    }

   private:
    bool frozen_ = true;
};

struct ClassificationHead {
    Tensor projection;  // e x C
    Tensor bias;        // C
    double dropout_rate = 0.1;

    static ClassificationHead random(std::size_t embed_dim, std::size_t num_classes, double dropout_rate,
                                     std::uint64_t seed, double init_std = 0.02) {
        Rng rng(seed, 0x4ead);
        return {Tensor::randn({embed_dim, num_classes}, rng, init_std, true), Tensor::zeros({num_classes}, true),
                dropout_rate};
    }

    std::size_t num_classes() const { return bias.size(); }

    NamedTensors named_tensors() const { return {{"head.projection", projection}, {"head.bias", bias}}; }
};

/// Attention probabilities per layer, per head: (T x (l + T)) each.
struct AttentionTrace {
    std::vector<std::vector<Tensor>> layers;
};

struct EncodeResult {
    Tensor cls;     // e
    Tensor states;  // T x e
};

namespace detail {

inline void check_tokens(std::span<const std::size_t> tokens, const EncoderConfig& cfg, std::size_t prompt_len) {
    if (tokens.empty() || tokens.front() != Vocabulary::kCls) {
        throw std::invalid_argument("token sequence must begin with the [CLS] id");
    }
    if (tokens.size() + prompt_len > cfg.max_seq_len) {
        throw std::length_error("sequence of " + std::to_string(tokens.size()) + " tokens plus " +
                                std::to_string(prompt_len) + " prompt slots exceeds max_seq_len " +
                                std::to_string(cfg.max_seq_len));
    }
    for (auto id : tokens) {
        if (id >= cfg.vocab_size) {
            throw std::out_of_range("unknown token id " + std::to_string(id) + " (vocabulary size " +
                                    std::to_string(cfg.vocab_size) + ")");
        }
    }
}

inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) { return add(matmul(x, w), b); }

inline Tensor encode_layer(const Tensor& x, const LayerWeights& lw, const EncoderConfig& cfg, const Tensor* prompt,
                           AttentionTrace* trace) {
    const std::size_t d = cfg.head_dim();
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));

    const Tensor h = layer_norm(x, lw.ln1_gamma, lw.ln1_beta);
    const Tensor q = linear(h, lw.wq, lw.bq);
    Tensor k = linear(h, lw.wk, lw.bk);
    Tensor v = linear(h, lw.wv, lw.bv);
    if (prompt != nullptr) {
        k = concat_rows({*prompt, k});
        v = concat_rows({*prompt, v});
    }
    std::vector<Tensor> heads;
    heads.reserve(cfg.num_heads);
    if (trace) trace->layers.emplace_back();
    for (std::size_t hd = 0; hd < cfg.num_heads; ++hd) {
        const Tensor qh = slice_cols(q, hd * d, d);
        const Tensor kh = slice_cols(k, hd * d, d);
        const Tensor vh = slice_cols(v, hd * d, d);
        const Tensor probs = softmax_rows(scale(matmul(qh, transpose(kh)), inv_sqrt_d));
        if (trace) trace->layers.back().push_back(probs);
        heads.push_back(matmul(probs, vh));
    }
    const Tensor attended = cfg.num_heads == 1 ? heads.front() : concat_cols(heads);
    const Tensor x1 = add(x, linear(attended, lw.wo, lw.bo));

    const Tensor h2 = layer_norm(x1, lw.ln2_gamma, lw.ln2_beta);
    const Tensor pre = linear(h2, lw.ffn_in, lw.ffn_in_bias);
    const Tensor act = cfg.activation == Activation::Gelu ? gelu(pre) : relu(pre);
    return add(x1, linear(act, lw.ffn_out, lw.ffn_out_bias));
}

inline EncodeResult encode(std::span<const std::size_t> tokens, const EncoderWeights& w,
                           std::span<const Tensor> layer_prompts, AttentionTrace* trace) {
    const auto& cfg = w.config;
    std::size_t prompt_len = 0;
    if (!layer_prompts.empty()) {
        if (layer_prompts.size() != cfg.num_layers) {
            throw std::invalid_argument("expected " + std::to_string(cfg.num_layers) + " layer prompts, got " +
                                        std::to_string(layer_prompts.size()));
        }
        prompt_len = layer_prompts.front().dim() == 2 ? layer_prompts.front().shape()[0] : 0;
        for (const auto& p : layer_prompts) {
            if (p.dim() != 2 || p.shape()[0] != prompt_len || p.shape()[1] != cfg.embed_dim) {
                throw ShapeError("layer prompt has shape " + shape_str(p.shape()) + ", expected [" +
                                 std::to_string(prompt_len) + "x" + std::to_string(cfg.embed_dim) + "]");
            }
        }
    }
    check_tokens(tokens, cfg, prompt_len);

    std::vector<std::size_t> positions(tokens.size());
    for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = i;
    Tensor x = add(embedding(w.token_embeddings, tokens), embedding(w.position_embeddings, positions));
    for (std::size_t i = 0; i < cfg.num_layers; ++i) {
        const Tensor* prompt = prompt_len > 0 ? &layer_prompts[i] : nullptr;
        x = encode_layer(x, w.layers[i], cfg, prompt, trace);
    }
    Tensor states = layer_norm(x, w.final_gamma, w.final_beta);
    Tensor cls = reshape(slice_rows(states, 0, 1), {cfg.embed_dim});
    return {std::move(cls), std::move(states)};
}

}  // namespace detail

/// Unprompted forward pass. cls is the final-layer state at position 0.
inline EncodeResult encode_plain(std::span<const std::size_t> tokens, const EncoderWeights& weights,
                                 AttentionTrace* trace = nullptr) {
    return detail::encode(tokens, weights, {}, trace);
}

/// Forward pass with one l x e prompt per layer; returns the final CLS state.
/// Zero-length prompts reduce exactly to encode_plain.
inline Tensor encode_prompted(std::span<const std::size_t> tokens, const EncoderWeights& weights,
                              std::span<const Tensor> layer_prompts, AttentionTrace* trace = nullptr) {
    if (layer_prompts.size() != weights.config.num_layers) {
        throw std::invalid_argument("expected " + std::to_string(weights.config.num_layers) +
                                    " layer prompts, got " + std::to_string(layer_prompts.size()));
    }
    return detail::encode(tokens, weights, layer_prompts, trace).cls;
}

/// logits = dropout(cls) * projection + bias. Accepts a single [e] vector or
/// a [B x e] batch; returns [C] or [B x C] respectively.
inline Tensor classify(const Tensor& cls, const ClassificationHead& head, bool training = false,
                       const DropoutStream& stream = {}) {
    const bool single = cls.dim() == 1;
    const Tensor batch = single ? reshape(cls, {1, cls.size()}) : cls;
    if (batch.dim() != 2 || batch.shape()[1] != head.projection.shape()[0]) {
        throw ShapeError("classify: cls " + shape_str(cls.shape()) + " does not match projection " +
                         shape_str(head.projection.shape()));
    }
    const Tensor dropped = dropout(batch, head.dropout_rate, training, stream);
    const Tensor logits = add(matmul(dropped, head.projection), head.bias);
    return single ? reshape(logits, {head.num_classes()}) : logits;
}

}  // namespace switchprompt
