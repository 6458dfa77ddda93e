#pragma once

// Input-conditioned gated prompts.
//
//   P   = g1 * pad(V) + (1 - g1) * P_d          g1 = sigmoid(w1 . s)
//   P_d = g2 * [V; K] + (1 - g2) * [K; V]       g2 = sigmoid(w2 . s)
//
// V (m x e) are the free soft-prompt vectors of one layer, K (n x e) the
// keyword vectors shared by all layers, s the CLS state of the input and
// pad() appends zero rows up to l = m + n. The ablation variants are
// restrictions of this formula:
//
//   switchprompt   the full formula
//   mix-no-concat  g1 * V + (1 - g1) * (g2 * V + (1 - g2) * K), needs m == n
//   concat-vk      g1 * pad(V) + (1 - g1) * [V; K]   (g2 fixed at 1)
//   concat-kv      g1 * pad(V) + (1 - g1) * [K; V]   (g2 fixed at 0)
//   keywords-only  K                                  (g1 = 0, m = 0)
//   soft-only      V                                  (g1 = 1, pad rows dropped)

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "switchprompt/encoder.hpp"
#include "switchprompt/random.hpp"
#include "switchprompt/tensor.hpp"

namespace switchprompt {

enum class Variant { SwitchPrompt, MixNoConcat, ConcatVK, ConcatKV, KeywordsOnly, SoftOnly };

/// In ablation-table row order.
inline constexpr std::array<Variant, 6> kAllVariants = {Variant::SwitchPrompt, Variant::MixNoConcat,
                                                        Variant::ConcatVK,     Variant::ConcatKV,
                                                        Variant::KeywordsOnly, Variant::SoftOnly};

inline std::string to_string(Variant v) {
    switch (v) {
        case Variant::SwitchPrompt: return "switchprompt";
        case Variant::MixNoConcat: return "mix-no-concat";
        case Variant::ConcatVK: return "concat-vk";
        case Variant::ConcatKV: return "concat-kv";
        case Variant::KeywordsOnly: return "keywords-only";
        case Variant::SoftOnly: return "soft-only";
    }
    throw std::logic_error("invalid variant");
}

inline Variant parse_variant(const std::string& name) {
    for (auto v : kAllVariants)
        if (to_string(v) == name) return v;
    throw std::invalid_argument("unknown variant '" + name +
                                "' (expected switchprompt, mix-no-concat, concat-vk, concat-kv, keywords-only or "
                                "soft-only)");
}

/// 1-based row in the ablation table.
inline std::size_t table_row(Variant v) {
    for (std::size_t i = 0; i < kAllVariants.size(); ++i)
        if (kAllVariants[i] == v) return i + 1;
    throw std::logic_error("invalid variant");
}

inline bool uses_general_gate(Variant v) {
    return v == Variant::SwitchPrompt || v == Variant::MixNoConcat || v == Variant::ConcatVK ||
           v == Variant::ConcatKV;
}
inline bool uses_order_gate(Variant v) { return v == Variant::SwitchPrompt || v == Variant::MixNoConcat; }
inline bool uses_soft_prompt(Variant v) { return v != Variant::KeywordsOnly; }
inline bool uses_keywords(Variant v) { return v != Variant::SoftOnly; }

/// Number of prompt rows a variant injects per layer.
inline std::size_t prompt_length(Variant v, std::size_t m, std::size_t n) {
    switch (v) {
        case Variant::MixNoConcat: return m;
        case Variant::KeywordsOnly: return n;
        case Variant::SoftOnly: return m;
        default: return m + n;
    }
}

inline void check_variant_shapes(Variant v, std::size_t m, std::size_t n) {
    if (v == Variant::MixNoConcat && m != n) {
        throw std::invalid_argument("variant mix-no-concat mixes V and K row by row and needs m == n (got m=" +
                                    std::to_string(m) + ", n=" + std::to_string(n) + ")");
    }
}

struct PromptState {
    std::vector<Tensor> general;  // one m x e soft prompt per layer
    Tensor keywords;              // n x e, shared by all layers
    Tensor gate_general;          // w1, e
    Tensor gate_order;            // w2, e

    std::size_t m() const { return general.empty() ? 0 : general.front().shape()[0]; }
    std::size_t n() const { return keywords.shape()[0]; }
    std::size_t length() const { return m() + n(); }
    std::size_t embed_dim() const { return keywords.shape()[1]; }
    std::size_t num_layers() const { return general.size(); }

    /// V and w ~ N(0, init_std^2). Draw order does not depend on the variant,
    /// so every variant starts from the same V at a given seed. Tensors a
    /// variant does not use are kept but never require gradient.
    static PromptState init(std::size_t num_layers, std::size_t m, const Tensor& keyword_vectors, Variant variant,
                            std::uint64_t seed, bool train_keywords = false, double init_std = 0.02) {
        if (keyword_vectors.dim() != 2) throw ShapeError("keyword vectors must be n x e");
        const std::size_t e = keyword_vectors.shape()[1];
        check_variant_shapes(variant, m, keyword_vectors.shape()[0]);
        Rng rng(seed, 0x9a7e);
        PromptState s;
        for (std::size_t i = 0; i < num_layers; ++i) {
            s.general.push_back(Tensor::randn({m, e}, rng, init_std, uses_soft_prompt(variant)));
        }
        s.gate_general = Tensor::randn({e}, rng, init_std, uses_general_gate(variant));
        s.gate_order = Tensor::randn({e}, rng, init_std, uses_order_gate(variant));
        s.keywords = keyword_vectors.detach(train_keywords && uses_keywords(variant));
        return s;
    }

    NamedTensors named_tensors() const {
        NamedTensors out;
        for (std::size_t i = 0; i < general.size(); ++i) out.emplace_back("prompt.general" + std::to_string(i), general[i]);
        out.emplace_back("prompt.keywords", keywords);
        out.emplace_back("prompt.gate_general", gate_general);
        out.emplace_back("prompt.gate_order", gate_order);
        return out;
    }

    PromptState clone() const {
        PromptState s;
        for (const auto& g : general) s.general.push_back(g.detach(g.requires_grad()));
        s.keywords = keywords.detach(keywords.requires_grad());
        s.gate_general = gate_general.detach(gate_general.requires_grad());
        s.gate_order = gate_order.detach(gate_order.requires_grad());
        return s;
    }
};

/// Appends zero rows to reach `length` rows.
inline Tensor pad_general(const Tensor& general, std::size_t length) {
    if (general.dim() != 2) throw ShapeError("pad_general expects an m x e tensor");
    const std::size_t m = general.shape()[0];
    if (length < m) {
        throw std::invalid_argument("pad target " + std::to_string(length) + " is shorter than the prompt (" +
                                    std::to_string(m) + " rows)");
    }
    if (length == m) return general;
    return concat_rows({general, Tensor::zeros({length - m, general.shape()[1]})});
}

/// sigmoid(w . s), as a single-element tensor.
inline Tensor gate(const Tensor& w, const Tensor& s_input) {
    if (w.size() != s_input.size()) {
        throw ShapeError("gate: weight " + shape_str(w.shape()) + " vs input " + shape_str(s_input.shape()));
    }
    const Tensor logit = matmul(reshape(w, {1, w.size()}), reshape(s_input, {s_input.size(), 1}));
    return sigmoid(reshape(logit, {1}));
}

/// Convex mix of the two concatenation orders: g * [V; K] + (1 - g) * [K; V].
inline Tensor compose_domain_prompt(const Tensor& general, const Tensor& keywords, const Tensor& order_gate) {
    if (general.dim() != 2 || keywords.dim() != 2 || general.shape()[1] != keywords.shape()[1]) {
        throw ShapeError("compose_domain_prompt: " + shape_str(general.shape()) + " and " +
                         shape_str(keywords.shape()));
    }
    const Tensor vk = concat_rows({general, keywords});
    const Tensor kv = concat_rows({keywords, general});
    return add(mul(vk, order_gate), mul(kv, one_minus(order_gate)));
}

/// g * a + (1 - g) * b.
inline Tensor gated_mix(const Tensor& a, const Tensor& b, const Tensor& g) {
    if (a.shape() != b.shape()) throw ShapeError("gated_mix: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    return add(mul(a, g), mul(b, one_minus(g)));
}

/// Gate values for one input; undefined when the variant has no such gate.
struct Gates {
    Tensor general;
    Tensor order;
};

inline Gates compute_gates(const PromptState& state, const Tensor& s_input, Variant variant) {
    Gates g;
    if (uses_general_gate(variant)) g.general = gate(state.gate_general, s_input);
    if (uses_order_gate(variant)) g.order = gate(state.gate_order, s_input);
    return g;
}

/// Composes one layer's prompt from explicit gate values.
inline Tensor compose_with_gates(const Tensor& general, const Tensor& keywords, const Gates& gates, Variant variant) {
    const std::size_t m = general.shape()[0], n = keywords.shape()[0];
    check_variant_shapes(variant, m, n);
    switch (variant) {
        case Variant::SwitchPrompt:
            return gated_mix(pad_general(general, m + n), compose_domain_prompt(general, keywords, gates.order),
                             gates.general);
        case Variant::MixNoConcat:
            return gated_mix(general, gated_mix(general, keywords, gates.order), gates.general);
        case Variant::ConcatVK:
            return gated_mix(pad_general(general, m + n), concat_rows({general, keywords}), gates.general);
        case Variant::ConcatKV:
            return gated_mix(pad_general(general, m + n), concat_rows({keywords, general}), gates.general);
        case Variant::KeywordsOnly: return keywords;
        case Variant::SoftOnly: return general;
    }
    throw std::logic_error("invalid variant");
}

inline Tensor compose_prompt(const PromptState& state, std::size_t layer, const Tensor& s_input, Variant variant) {
    return compose_with_gates(state.general.at(layer), state.keywords, compute_gates(state, s_input, variant),
                              variant);
}

struct LayerPrompts {
    std::vector<Tensor> prompts;
    Gates gates;  // computed once and shared by every layer
};

inline LayerPrompts per_layer_prompts(const PromptState& state, const Tensor& s_input, Variant variant,
                                      std::size_t num_layers) {
    if (state.num_layers() != num_layers) {
        throw std::invalid_argument("prompt state has " + std::to_string(state.num_layers()) +
                                    " layers, encoder has " + std::to_string(num_layers));
    }
    LayerPrompts out;
    out.gates = compute_gates(state, s_input, variant);
    out.prompts.reserve(num_layers);
    for (std::size_t i = 0; i < num_layers; ++i) {
        out.prompts.push_back(compose_with_gates(state.general[i], state.keywords, out.gates, variant));
    }
    return out;
}

}  // namespace switchprompt
