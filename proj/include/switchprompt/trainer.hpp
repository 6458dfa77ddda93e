#pragma once

// Prompt training loop, evaluation and ablation sweep.
//
// Per seed: fresh prompt state and head, mini-batch Adam on cross-entropy with
// global-norm gradient clipping, learning rate multiplied by gamma after each
// epoch, model selection on development accuracy (epoch 0 = initialization;
// ties keep the earlier epoch), test accuracy of the selected epoch reported.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "switchprompt/config.hpp"
#include "switchprompt/data.hpp"
#include "switchprompt/encoder.hpp"
#include "switchprompt/keywords.hpp"
#include "switchprompt/model.hpp"
#include "switchprompt/optim.hpp"
#include "switchprompt/prompt.hpp"
#include "switchprompt/tokenizer.hpp"

namespace switchprompt {

struct Backbone {
    std::shared_ptr<EncoderWeights> weights;
    Vocabulary vocab;
};

/// One line of the metrics file.
struct MetricRecord {
    std::string variant;
    std::uint64_t seed = 0;
    std::size_t epoch = 0;
    std::string split;
    double accuracy = 0.0;
    double loss = 0.0;
};

inline nlohmann::ordered_json to_json(const MetricRecord& r) {
    return {{"variant", r.variant}, {"seed", r.seed},         {"epoch", r.epoch},
            {"split", r.split},     {"accuracy", r.accuracy}, {"loss", r.loss}};
}

struct SeedResult {
    std::uint64_t seed = 0;
    std::size_t best_epoch = 0;
    double dev_accuracy = 0.0;
    double test_accuracy = 0.0;
};

struct RunResult {
    Variant variant = Variant::SwitchPrompt;
    std::vector<SeedResult> per_seed;
    double mean_dev = 0.0, std_dev = 0.0;
    double mean_test = 0.0, std_test = 0.0;
    std::size_t trainable_parameters = 0;
    std::size_t backbone_parameters = 0;
    double seconds_per_epoch = 0.0;
    nlohmann::json config;
    std::vector<MetricRecord> records;
    std::vector<Model> best_models;  // selected state per seed
};

/// Arithmetic mean and sample standard deviation (0 for a single value).
inline std::pair<double, double> mean_and_stddev(const std::vector<double>& xs) {
    if (xs.empty()) return {0.0, 0.0};
    const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
    if (xs.size() < 2) return {mean, 0.0};
    double sq = 0.0;
    for (double x : xs) sq += (x - mean) * (x - mean);
    return {mean, std::sqrt(sq / static_cast<double>(xs.size() - 1))};
}

/// Tokenizes a dataset, leaving room for `prompt_len` prompt slots. With
/// `cache_gate_inputs` the unprompted CLS state of every example is stored.
inline std::vector<EncodedExample> encode_dataset(const LabeledDataset& ds, const Backbone& backbone,
                                                  std::size_t prompt_len, bool cache_gate_inputs) {
    const auto& cfg = backbone.weights->config;
    if (prompt_len >= cfg.max_seq_len) {
        throw std::invalid_argument("prompt length " + std::to_string(prompt_len) + " leaves no room in max_seq_len " +
                                    std::to_string(cfg.max_seq_len));
    }
    std::vector<EncodedExample> out;
    out.reserve(ds.size());
    NoGradGuard no_grad;
    for (const auto& ex : ds.examples) {
        EncodedExample e{backbone.vocab.encode(ex.text, cfg.max_seq_len - prompt_len), ex.label, {}};
        if (cache_gate_inputs) e.gate_input = encode_plain(e.tokens, *backbone.weights).cls;
        out.push_back(std::move(e));
    }
    return out;
}

struct Evaluation {
    double accuracy = 0.0;
    double loss = 0.0;
};

/// Accuracy under argmax of eval-mode logits (first maximum wins), and mean
/// cross-entropy.
inline Evaluation evaluate(const Model& model, const std::vector<EncodedExample>& data, std::size_t batch_size = 32) {
    if (data.empty()) return {};
    NoGradGuard no_grad;
    std::size_t correct = 0;
    double loss_sum = 0.0;
    const std::size_t classes = model.head.num_classes();
    for (std::size_t start = 0; start < data.size(); start += batch_size) {
        const std::size_t end = std::min(data.size(), start + batch_size);
        std::vector<const EncodedExample*> batch;
        std::vector<std::size_t> labels;
        for (std::size_t i = start; i < end; ++i) {
            if (data[i].label >= classes) {
                throw std::invalid_argument("label " + std::to_string(data[i].label) + " outside the model's " +
                                            std::to_string(classes) + " classes");
            }
            batch.push_back(&data[i]);
            labels.push_back(data[i].label);
        }
        const Tensor logits = model.logits(batch, false, {});
        loss_sum += softmax_cross_entropy(logits, labels).item() * static_cast<double>(batch.size());
        for (std::size_t b = 0; b < batch.size(); ++b) {
            std::size_t arg = 0;
            for (std::size_t c = 1; c < classes; ++c)
                if (logits.at(b, c) > logits.at(b, arg)) arg = c;
            if (arg == labels[b]) ++correct;
        }
    }
    return {static_cast<double>(correct) / static_cast<double>(data.size()),
            loss_sum / static_cast<double>(data.size())};
}

/// Learning rate in effect during epoch `epoch` (1-based): lr * gamma^(epoch-1),
/// i.e. lr * gamma^k after k completed epochs.
inline double scheduled_lr(double lr, double gamma, std::size_t completed_epochs) {
    for (std::size_t k = 0; k < completed_epochs; ++k) lr *= gamma;
    return lr;
}

class Trainer {
   public:
    Trainer(RunConfig config, const Backbone& backbone, const KeywordSet& keywords)
        : config_(std::move(config)), backbone_(backbone) {
        config_.validate();
        if (keywords.size() != config_.n) {
            throw std::invalid_argument("keyword list has " + std::to_string(keywords.size()) +
                                        " entries but the config asks for n=" + std::to_string(config_.n));
        }
        if (config_.encoder.embed_dim != backbone.weights->config.embed_dim ||
            config_.encoder.num_layers != backbone.weights->config.num_layers) {
            throw std::invalid_argument("config encoder shape does not match the backbone");
        }
        keyword_vectors_ = vectorize_keywords(keywords, *backbone.weights, backbone.vocab, config_.keyword_vectors);
    }

    const RunConfig& config() const { return config_; }

    /// Model for `seed` before any training step.
    Model initial_model(std::uint64_t seed, std::shared_ptr<const EncoderWeights> weights, std::size_t classes) const {
        const auto& ec = weights->config;
        Model model;
        model.backbone = std::move(weights);
        model.prompts = PromptState::init(ec.num_layers, config_.m, keyword_vectors_, config_.variant, seed,
                                          config_.train_keywords, config_.prompt_init_std);
        model.head = ClassificationHead::random(ec.embed_dim, classes, ec.dropout_rate, hash_combine(seed, 0x4ead),
                                                config_.prompt_init_std);
        model.variant = config_.variant;
        model.gate_source = config_.gate_source;
        return model;
    }

    RunResult run(const FewShotSplit& split) const {
        const std::size_t prompt_len = prompt_length(config_.variant, config_.m, config_.n);
        const bool cache = config_.freeze && config_.gate_source == GateSource::Plain &&
                           (uses_general_gate(config_.variant) || uses_order_gate(config_.variant));
        const auto train = encode_dataset(split.train, backbone_, prompt_len, cache);
        const auto dev = encode_dataset(split.dev, backbone_, prompt_len, cache);
        const auto test = encode_dataset(split.test, backbone_, prompt_len, cache);
        if (train.empty()) throw std::invalid_argument("empty training set");

        RunResult result;
        result.variant = config_.variant;
        result.config = to_json(config_);
        result.backbone_parameters = backbone_.weights->parameter_count();
        double seconds = 0.0;
        std::vector<double> devs, tests;
        for (auto seed : config_.seeds) {
            const auto t0 = std::chrono::steady_clock::now();
            auto [seed_result, best] = run_seed(seed, train, dev, test, split.train.num_classes(), result);
            seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            if (result.trainable_parameters == 0) result.trainable_parameters = best.trainable_parameter_count();
            devs.push_back(seed_result.dev_accuracy);
            tests.push_back(seed_result.test_accuracy);
            result.per_seed.push_back(seed_result);
            result.best_models.push_back(std::move(best));
        }
        std::tie(result.mean_dev, result.std_dev) = mean_and_stddev(devs);
        std::tie(result.mean_test, result.std_test) = mean_and_stddev(tests);
        const std::size_t epochs = std::max<std::size_t>(config_.epochs, 1);
        result.seconds_per_epoch = seconds / static_cast<double>(epochs * config_.seeds.size());
        return result;
    }

   private:
    std::pair<SeedResult, Model> run_seed(std::uint64_t seed, const std::vector<EncodedExample>& train,
                                          const std::vector<EncodedExample>& dev,
                                          const std::vector<EncodedExample>& test, std::size_t classes,
                                          RunResult& result) const {
        std::shared_ptr<const EncoderWeights> weights = backbone_.weights;
        if (!config_.freeze) {
            auto copy = std::make_shared<EncoderWeights>(backbone_.weights->clone());
            copy->set_frozen(false);
            weights = std::move(copy);
        }
        Model model = initial_model(seed, weights, classes);
        auto params = model.trainable_parameters();
        Adam adam(params, {config_.lr});
        ExponentialLR schedule(adam, config_.gamma);
        const std::string variant = to_string(config_.variant);

        auto dev_eval = evaluate(model, dev, config_.batch_size);
        result.records.push_back({variant, seed, 0, "dev", dev_eval.accuracy, dev_eval.loss});
        SeedResult best{seed, 0, dev_eval.accuracy, 0.0};
        Model best_model = model.snapshot();

        std::vector<std::size_t> order(train.size());
        std::iota(order.begin(), order.end(), 0);
        std::uint64_t step = 0;
        for (std::size_t epoch = 1; epoch <= config_.epochs; ++epoch) {
            Rng shuffle_rng(seed, hash_combine(0x5bff1e, epoch));
            shuffle_rng.shuffle(order);
            double loss_sum = 0.0;
            std::size_t correct = 0;
            for (std::size_t start = 0; start < order.size(); start += config_.batch_size) {
                const std::size_t end = std::min(order.size(), start + config_.batch_size);
                std::vector<const EncodedExample*> batch;
                std::vector<std::size_t> labels;
                for (std::size_t i = start; i < end; ++i) {
                    batch.push_back(&train[order[i]]);
                    labels.push_back(train[order[i]].label);
                }
                const Tensor logits = model.logits(batch, true, DropoutStream{seed, step, 0});
                const Tensor loss = softmax_cross_entropy(logits, labels);
                if (!std::isfinite(loss.item())) {
                    throw std::runtime_error("training diverged: non-finite loss at seed " + std::to_string(seed) +
                                             ", step " + std::to_string(step));
                }
                loss_sum += loss.item() * static_cast<double>(batch.size());
                for (std::size_t b = 0; b < batch.size(); ++b) {
                    std::size_t arg = 0;
                    for (std::size_t c = 1; c < classes; ++c)
                        if (logits.at(b, c) > logits.at(b, arg)) arg = c;
                    if (arg == labels[b]) ++correct;
                }
                backward(loss);
                clip_grad_norm(params, config_.clip_norm);
                adam.step();
                adam.zero_grad();
                ++step;
            }
            schedule.step();
            const double n = static_cast<double>(train.size());
            result.records.push_back({variant, seed, epoch, "train", static_cast<double>(correct) / n, loss_sum / n});
            dev_eval = evaluate(model, dev, config_.batch_size);
            result.records.push_back({variant, seed, epoch, "dev", dev_eval.accuracy, dev_eval.loss});
            if (dev_eval.accuracy > best.dev_accuracy) {
                best.best_epoch = epoch;
                best.dev_accuracy = dev_eval.accuracy;
                best_model = model.snapshot();
            }
        }
        const auto test_eval = evaluate(best_model, test, config_.batch_size);
        best.test_accuracy = test_eval.accuracy;
        result.records.push_back({variant, seed, best.best_epoch, "test", test_eval.accuracy, test_eval.loss});
        return {best, std::move(best_model)};
    }

    RunConfig config_;
    Backbone backbone_;
    Tensor keyword_vectors_;
};

inline RunResult train(const RunConfig& config, const FewShotSplit& split, const KeywordSet& keywords,
                       const Backbone& backbone) {
    return Trainer(config, backbone, keywords).run(split);
}

/// All six variants with shared seeds, data and keywords, in table order.
inline std::vector<RunResult> ablate(const RunConfig& config, const FewShotSplit& split, const KeywordSet& keywords,
                                     const Backbone& backbone) {
    check_variant_shapes(Variant::MixNoConcat, config.m, config.n);
    std::vector<RunResult> results;
    for (auto v : kAllVariants) {
        RunConfig c = config;
        c.variant = v;
        results.push_back(train(c, split, keywords, backbone));
    }
    return results;
}

}  // namespace switchprompt
