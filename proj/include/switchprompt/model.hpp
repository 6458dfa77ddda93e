#pragma once

#include <memory>
#include <span>
#include <stdexcept>
#include <vector>

#include "switchprompt/config.hpp"
#include "switchprompt/encoder.hpp"
#include "switchprompt/prompt.hpp"
#include "switchprompt/tensor.hpp"

namespace switchprompt {

/// Scalars with requires_grad=true across backbone, head and prompt state.
inline std::size_t trainable_parameter_count(const EncoderWeights& weights, const ClassificationHead& head,
                                             const PromptState& prompts) {
    return count_parameters(weights.named_tensors(), true) + count_parameters(head.named_tensors(), true) +
           count_parameters(prompts.named_tensors(), true);
}

/// A tokenized example. `gate_input` optionally caches the unprompted CLS
/// state, valid only while the backbone is frozen.
struct EncodedExample {
    std::vector<std::size_t> tokens;
    std::size_t label = 0;
    Tensor gate_input;
};

struct Model {
    std::shared_ptr<const EncoderWeights> backbone;
    PromptState prompts;
    ClassificationHead head;
    Variant variant = Variant::SwitchPrompt;
    GateSource gate_source = GateSource::Plain;

    std::vector<Tensor> trainable_parameters() const {
        std::vector<Tensor> out;
        auto collect = [&](const NamedTensors& named) {
            for (const auto& [name, t] : named)
                if (t.requires_grad()) out.push_back(t);
        };
        collect(prompts.named_tensors());
        collect(head.named_tensors());
        collect(backbone->named_tensors());
        return out;
    }

    std::size_t trainable_parameter_count() const {
        return switchprompt::trainable_parameter_count(*backbone, head, prompts);
    }

    /// Gate input s for one example.
    Tensor gate_input(const EncodedExample& ex) const {
        if (gate_source == GateSource::SoftPrompted) {
            return encode_prompted(ex.tokens, *backbone, prompts.general);
        }
        if (ex.gate_input.defined() && backbone->frozen()) return ex.gate_input;
        return encode_plain(ex.tokens, *backbone).cls;
    }

    /// Final CLS state of the prompted pass for one example. The gate input
    /// is only computed for variants that have gates.
    Tensor cls(const EncodedExample& ex) const {
        const bool gated = uses_general_gate(variant) || uses_order_gate(variant);
        const Tensor s = gated ? gate_input(ex) : Tensor{};
        return encode_prompted(ex.tokens, *backbone,
                               per_layer_prompts(prompts, s, variant, backbone->config.num_layers).prompts);
    }

    /// Logits [B x C] for a batch.
    Tensor logits(std::span<const EncodedExample* const> batch, bool training, const DropoutStream& stream) const {
        if (batch.empty()) throw std::invalid_argument("empty batch");
        std::vector<Tensor> rows;
        rows.reserve(batch.size());
        const std::size_t e = backbone->config.embed_dim;
        for (const auto* ex : batch) rows.push_back(reshape(cls(*ex), {1, e}));
        return classify(rows.size() == 1 ? rows.front() : concat_rows(rows), head, training, stream);
    }

    Model snapshot() const {
        Model m = *this;
        m.prompts = prompts.clone();
        m.head = {head.projection.detach(head.projection.requires_grad()), head.bias.detach(head.bias.requires_grad()),
                  head.dropout_rate};
        if (!backbone->frozen()) m.backbone = std::make_shared<const EncoderWeights>(backbone->clone());
        return m;
    }
};

}  // namespace switchprompt
