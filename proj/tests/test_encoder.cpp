#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <vector>

#include "switchprompt/checkpoint.hpp"
#include "switchprompt/encoder.hpp"
#include "switchprompt/model.hpp"
#include "switchprompt/optim.hpp"
#include "switchprompt/tokenizer.hpp"

using namespace switchprompt;

namespace {

using Mat = std::vector<std::vector<double>>;

Mat to_mat(const Tensor& t) {
    Mat m(t.rows(), std::vector<double>(t.cols()));
    for (std::size_t r = 0; r < t.rows(); ++r)
        for (std::size_t c = 0; c < t.cols(); ++c) m[r][c] = t.at(r, c);
    return m;
}

std::vector<double> to_vec(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

Mat mm(const Mat& a, const Mat& b) {
    Mat out(a.size(), std::vector<double>(b[0].size(), 0.0));
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t k = 0; k < b.size(); ++k)
            for (std::size_t j = 0; j < b[0].size(); ++j) out[i][j] += a[i][k] * b[k][j];
    return out;
}

Mat affine_rows(const Mat& x, const Tensor& w, const Tensor& b) {
    Mat out = mm(x, to_mat(w));
    for (auto& row : out)
        for (std::size_t j = 0; j < row.size(); ++j) row[j] += b[j];
    return out;
}

Mat ln(const Mat& x, const Tensor& g, const Tensor& b) {
    Mat out = x;
    for (auto& row : out) {
        double mean = 0.0, var = 0.0;
        for (double v : row) mean += v;
        mean /= row.size();
        for (double v : row) var += (v - mean) * (v - mean);
        var /= row.size();
        for (std::size_t j = 0; j < row.size(); ++j) row[j] = (row[j] - mean) / std::sqrt(var + 1e-5) * g[j] + b[j];
    }
    return out;
}

double gelu_ref(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

/// Straight-line loops over the same weights, written independently of the
/// tensor ops.
std::vector<double> reference_cls(const std::vector<std::size_t>& tokens, const EncoderWeights& w,
                                  const std::vector<Mat>& prompts) {
    const auto& cfg = w.config;
    const std::size_t e = cfg.embed_dim, d = cfg.head_dim(), T = tokens.size();
    Mat x(T, std::vector<double>(e));
    for (std::size_t t = 0; t < T; ++t)
        for (std::size_t j = 0; j < e; ++j)
            x[t][j] = w.token_embeddings.at(tokens[t], j) + w.position_embeddings.at(t, j);
    for (std::size_t layer = 0; layer < cfg.num_layers; ++layer) {
        const auto& lw = w.layers[layer];
        const Mat h = ln(x, lw.ln1_gamma, lw.ln1_beta);
        const Mat q = affine_rows(h, lw.wq, lw.bq);
        Mat k = affine_rows(h, lw.wk, lw.bk);
        Mat v = affine_rows(h, lw.wv, lw.bv);
        if (!prompts.empty()) {
            k.insert(k.begin(), prompts[layer].begin(), prompts[layer].end());
            v.insert(v.begin(), prompts[layer].begin(), prompts[layer].end());
        }
        Mat att(T, std::vector<double>(e, 0.0));
        for (std::size_t hd = 0; hd < cfg.num_heads; ++hd) {
            for (std::size_t t = 0; t < T; ++t) {
                std::vector<double> s(k.size());
                double mx = -1e300;
                for (std::size_t u = 0; u < k.size(); ++u) {
                    double dot = 0.0;
                    for (std::size_t j = 0; j < d; ++j) dot += q[t][hd * d + j] * k[u][hd * d + j];
                    s[u] = dot / std::sqrt(static_cast<double>(d));
                    mx = std::max(mx, s[u]);
                }
                double z = 0.0;
                for (auto& sv : s) z += (sv = std::exp(sv - mx));
                for (std::size_t u = 0; u < k.size(); ++u)
                    for (std::size_t j = 0; j < d; ++j) att[t][hd * d + j] += s[u] / z * v[u][hd * d + j];
            }
        }
        const Mat o = affine_rows(att, lw.wo, lw.bo);
        for (std::size_t t = 0; t < T; ++t)
            for (std::size_t j = 0; j < e; ++j) x[t][j] += o[t][j];
        const Mat h2 = ln(x, lw.ln2_gamma, lw.ln2_beta);
        Mat f = affine_rows(h2, lw.ffn_in, lw.ffn_in_bias);
        for (auto& row : f)
            for (auto& val : row) val = gelu_ref(val);
        const Mat f2 = affine_rows(f, lw.ffn_out, lw.ffn_out_bias);
        for (std::size_t t = 0; t < T; ++t)
            for (std::size_t j = 0; j < e; ++j) x[t][j] += f2[t][j];
    }
    return ln(x, w.final_gamma, w.final_beta)[0];
}

EncoderConfig small_config() {
    EncoderConfig c;
    c.vocab_size = 20;
    c.embed_dim = 8;
    c.num_layers = 2;
    c.num_heads = 2;
    c.ffn_dim = 16;
    c.max_seq_len = 24;
    return c;
}

void overwrite(Tensor t, const std::vector<double>& values) {
    auto v = t.mutable_values();
    ASSERT_EQ(v.size(), values.size());
    std::copy(values.begin(), values.end(), v.begin());
}

}  // namespace

TEST(Encoder, ConfigValidation) {
    EncoderConfig c = small_config();
    c.num_heads = 3;
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c = small_config();
    c.dropout_rate = 1.0;
    EXPECT_THROW(c.validate(), std::invalid_argument);
    EXPECT_EQ(parse_activation("relu"), Activation::Relu);
    EXPECT_THROW(parse_activation("tanh"), std::invalid_argument);
}

TEST(Encoder, SingleHeadHandSetWeightsMatchStraightLineOracle) {
    EncoderConfig c = small_config();
    c.embed_dim = 4;
    c.num_layers = 1;
    c.num_heads = 1;
    c.ffn_dim = 4;
    EncoderWeights w = EncoderWeights::random(c, 3, 0.5);
    overwrite(w.layers[0].wq, {1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1});
    overwrite(w.layers[0].wk, {0.5, 0, 0, 0, 0, -0.5, 0, 0, 0, 0, 2, 0, 0, 0, 0, 1});
    overwrite(w.layers[0].bv, {0.1, -0.2, 0.3, 0.0});
    const std::vector<std::size_t> tokens{Vocabulary::kCls, 5, 9, 7};
    const auto got = to_vec(encode_plain(tokens, w).cls);
    const auto want = reference_cls(tokens, w, {});
    for (std::size_t j = 0; j < want.size(); ++j) EXPECT_NEAR(got[j], want[j], 1e-9);
}

TEST(Encoder, RandomWeightsMatchOracleWithAndWithoutPrompts) {
    const EncoderWeights w = EncoderWeights::random(small_config(), 17, 0.3);
    Rng rng(23);
    std::vector<Tensor> prompts;
    std::vector<Mat> prompt_mats;
    for (int l = 0; l < 2; ++l) {
        prompts.push_back(Tensor::randn({3, 8}, rng, 0.5));
        prompt_mats.push_back(to_mat(prompts.back()));
    }
    for (int trial = 0; trial < 5; ++trial) {
        std::vector<std::size_t> tokens{Vocabulary::kCls};
        const std::size_t len = 2 + rng.below(8);
        for (std::size_t i = 0; i < len; ++i) tokens.push_back(rng.below(20));
        const auto plain = to_vec(encode_plain(tokens, w).cls);
        const auto plain_ref = reference_cls(tokens, w, {});
        const auto prompted = to_vec(encode_prompted(tokens, w, prompts));
        const auto prompted_ref = reference_cls(tokens, w, prompt_mats);
        for (std::size_t j = 0; j < 8; ++j) {
            EXPECT_NEAR(plain[j], plain_ref[j], 1e-9);
            EXPECT_NEAR(prompted[j], prompted_ref[j], 1e-9);
        }
    }
}

TEST(Encoder, ZeroLengthPromptsAreBitExactPlain) {
    const EncoderWeights w = EncoderWeights::random(small_config(), 5, 0.2);
    const std::vector<std::size_t> tokens{0, 4, 8, 15, 3};
    const std::vector<Tensor> empty{Tensor::zeros({0, 8}), Tensor::zeros({0, 8})};
    EXPECT_EQ(to_vec(encode_prompted(tokens, w, empty)), to_vec(encode_plain(tokens, w).cls));
}

TEST(Encoder, PromptsWithZeroAttentionAreIgnored) {
    // Wq = Wk = 0 and bq = bk = c*u make every token score c^2|u|^2/sqrt(d)
    // against every token and 0 against an all-zero prompt row, so for large c
    // the prompts receive vanishing attention.
    EncoderWeights w = EncoderWeights::random(small_config(), 8, 0.2);
    const double c = 12.0;
    for (auto& lw : w.layers) {
        std::fill(lw.wq.mutable_values().begin(), lw.wq.mutable_values().end(), 0.0);
        std::fill(lw.wk.mutable_values().begin(), lw.wk.mutable_values().end(), 0.0);
        std::fill(lw.bq.mutable_values().begin(), lw.bq.mutable_values().end(), c);
        std::fill(lw.bk.mutable_values().begin(), lw.bk.mutable_values().end(), c);
    }
    const std::vector<std::size_t> tokens{0, 6, 2, 11};
    const std::vector<Tensor> zero_prompts{Tensor::zeros({4, 8}), Tensor::zeros({4, 8})};
    const auto plain = to_vec(encode_plain(tokens, w).cls);
    const auto prompted = to_vec(encode_prompted(tokens, w, zero_prompts));
    for (std::size_t j = 0; j < 8; ++j) EXPECT_NEAR(prompted[j], plain[j], 1e-12);
}

TEST(Encoder, AttentionRowsSumToOneOverPromptsAndTokens) {
    const EncoderWeights w = EncoderWeights::random(small_config(), 4, 1.0);
    Rng rng(2);
    const std::vector<Tensor> prompts{Tensor::randn({5, 8}, rng, 2.0), Tensor::randn({5, 8}, rng, 2.0)};
    const std::vector<std::size_t> tokens{0, 3, 19, 7, 7, 12};
    AttentionTrace trace;
    encode_prompted(tokens, w, prompts, &trace);
    ASSERT_EQ(trace.layers.size(), 2u);
    for (const auto& layer : trace.layers) {
        ASSERT_EQ(layer.size(), 2u);
        for (const auto& probs : layer) {
            EXPECT_EQ(probs.shape(), (Shape{6, 11}));
            for (std::size_t r = 0; r < 6; ++r) {
                double s = 0.0;
                for (std::size_t col = 0; col < 11; ++col) s += probs.at(r, col);
                EXPECT_NEAR(s, 1.0, 1e-9);
            }
        }
    }
}

TEST(Encoder, InputErrors) {
    const EncoderWeights w = EncoderWeights::random(small_config(), 4);
    const std::vector<std::size_t> no_cls{4, 5};
    EXPECT_THROW(encode_plain(no_cls, w), std::invalid_argument);
    const std::vector<std::size_t> unknown{0, 20};
    EXPECT_THROW(encode_plain(unknown, w), std::out_of_range);
    std::vector<std::size_t> long_seq(20, 4);
    long_seq[0] = 0;
    const std::vector<Tensor> five{Tensor::zeros({5, 8}), Tensor::zeros({5, 8})};
    EXPECT_NO_THROW(encode_plain(long_seq, w));
    EXPECT_THROW(encode_prompted(long_seq, w, five), std::length_error);
    const std::vector<std::size_t> ok{0, 1, 2};
    const std::vector<Tensor> one{Tensor::zeros({2, 8})};
    EXPECT_THROW(encode_prompted(ok, w, one), std::invalid_argument);
    const std::vector<Tensor> wrong_width{Tensor::zeros({2, 7}), Tensor::zeros({2, 7})};
    EXPECT_THROW(encode_prompted(ok, w, wrong_width), ShapeError);
}

TEST(Encoder, FrozenWeightsRecordNoGraph) {
    const EncoderWeights w = EncoderWeights::random(small_config(), 4);
    EXPECT_TRUE(w.frozen());
    const std::vector<std::size_t> tokens{0, 1, 2};
    EXPECT_FALSE(encode_plain(tokens, w).cls.requires_grad());
    for (const auto& [name, t] : w.named_tensors()) EXPECT_FALSE(t.requires_grad()) << name;
}

TEST(Encoder, FrozenBackboneChecksumSurvivesTraining) {
    auto w = std::make_shared<EncoderWeights>(EncoderWeights::random(small_config(), 4, 0.2));
    const auto before = w->checksum();
    Rng rng(1);
    const Tensor keywords = Tensor::randn({2, 8}, rng, 0.1);
    Model model;
    model.backbone = w;
    model.prompts = PromptState::init(2, 3, keywords, Variant::SwitchPrompt, 1);
    model.head = ClassificationHead::random(8, 3, 0.1, 1);
    const auto params = model.trainable_parameters();
    Adam adam(params, Adam::Options{});
    std::vector<EncodedExample> data{{{0, 5, 6, 7}, 0, {}}, {{0, 8, 9}, 1, {}}, {{0, 10, 11, 12, 13}, 2, {}}};
    std::vector<const EncodedExample*> batch;
    for (const auto& ex : data) batch.push_back(&ex);
    std::vector<std::size_t> labels{0, 1, 2};
    for (std::size_t step = 0; step < 12; ++step) {
        backward(softmax_cross_entropy(model.logits(batch, true, {1, step, 0}), labels));
        adam.step();
        adam.zero_grad();
    }
    EXPECT_EQ(w->checksum(), before);
}

TEST(Encoder, UnfreezingExposesBackboneParameters) {
    EncoderWeights w = EncoderWeights::random(small_config(), 4);
    const std::size_t total = w.parameter_count();
    EXPECT_EQ(count_parameters(w.named_tensors(), true), 0u);
    w.set_frozen(false);
    EXPECT_EQ(count_parameters(w.named_tensors(), true), total);
    const std::vector<std::size_t> tokens{0, 1, 2};
    EXPECT_TRUE(encode_plain(tokens, w).cls.requires_grad());
}

TEST(Encoder, CloneIsIndependent) {
    const EncoderWeights w = EncoderWeights::random(small_config(), 4);
    EncoderWeights c = w.clone();
    EXPECT_EQ(c.checksum(), w.checksum());
    c.token_embeddings.mutable_values()[0] += 1.0;
    EXPECT_NE(c.checksum(), w.checksum());
}

TEST(Classify, ZeroInputGivesBias) {
    ClassificationHead head = ClassificationHead::random(8, 3, 0.1, 2);
    overwrite(head.bias, {0.5, -1.0, 2.0});
    const Tensor logits = classify(Tensor::zeros({8}), head);
    EXPECT_EQ(to_vec(logits), (std::vector<double>{0.5, -1.0, 2.0}));
    EXPECT_THROW(classify(Tensor::zeros({7}), head), ShapeError);
}

TEST(Classify, EvalModeIsAffine) {
    const ClassificationHead head = ClassificationHead::random(4, 2, 0.5, 3, 1.0);
    Rng rng(4);
    const Tensor a = Tensor::randn({4}, rng, 1.0);
    const Tensor b = Tensor::randn({4}, rng, 1.0);
    const auto fa = to_vec(classify(a, head));
    const auto fb = to_vec(classify(b, head));
    const auto fmix = to_vec(classify(add(scale(a, 0.3), scale(b, 0.7)), head));
    for (std::size_t i = 0; i < 2; ++i) EXPECT_NEAR(fmix[i], 0.3 * fa[i] + 0.7 * fb[i], 1e-12);
}

TEST(ParameterCount, FrozenBackboneCountMatchesEnumeration) {
    EncoderConfig c;
    c.embed_dim = 32;
    c.num_layers = 2;
    const EncoderWeights w = EncoderWeights::random(c, 1);
    Rng rng(3);
    const ClassificationHead head = ClassificationHead::random(32, 3, 0.1, 1);

    // l = 8 prompt rows per layer, all of them trainable.
    const PromptState soft_only = PromptState::init(2, 8, Tensor::zeros({0, 32}), Variant::SwitchPrompt, 1);
    EXPECT_EQ(trainable_parameter_count(w, head, soft_only), 2u * 8 * 32 + 64 + 96 + 3);
    EXPECT_EQ(trainable_parameter_count(w, head, soft_only), 675u);

    // Fixed keywords add rows to every layer's prompt but no parameters.
    const PromptState with_keywords =
        PromptState::init(2, 8, Tensor::randn({10, 32}, rng, 0.02), Variant::SwitchPrompt, 1);
    EXPECT_EQ(trainable_parameter_count(w, head, with_keywords), 675u);

    const PromptState keywords_only =
        PromptState::init(2, 8, Tensor::randn({10, 32}, rng, 0.02), Variant::KeywordsOnly, 1);
    EXPECT_EQ(trainable_parameter_count(w, head, keywords_only), 96u + 3);

    EncoderWeights open = w.clone();
    open.set_frozen(false);
    EXPECT_GT(trainable_parameter_count(open, head, with_keywords), 675u);
}

TEST(Tokenizer, SplitsLowercases) {
    EXPECT_EQ(split_words("  Hello\tWORLD \n x "), (std::vector<std::string>{"hello", "world", "x"}));
    EXPECT_TRUE(split_words("   ").empty());
}

TEST(Tokenizer, VocabularyOrdersByFrequencyThenWord) {
    const Vocabulary v = Vocabulary::build({"b a c", "a b", "a z"}, 6);
    EXPECT_EQ(v.size(), 6u);
    EXPECT_EQ(v.word(Vocabulary::kCls), "[CLS]");
    EXPECT_EQ(v.word(Vocabulary::kReserved), "a");
    EXPECT_EQ(v.word(Vocabulary::kReserved + 1), "b");
    EXPECT_EQ(v.word(Vocabulary::kReserved + 2), "c");
    EXPECT_FALSE(v.contains("z"));
    EXPECT_EQ(v.id("z"), Vocabulary::kUnk);
    EXPECT_EQ(v.encode("A b Q", 10), (std::vector<std::size_t>{0, 3, 4, Vocabulary::kUnk}));
    EXPECT_EQ(v.encode("a b c a b", 3).size(), 3u);
}

TEST(Tokenizer, IdOrderRoundTrip) {
    const Vocabulary v = Vocabulary::build({"x y y z"}, 100);
    const Vocabulary back = Vocabulary::from_id_order(v.id_to_word());
    EXPECT_EQ(back.id_to_word(), v.id_to_word());
    EXPECT_THROW(Vocabulary::from_id_order({"x", "y"}), std::invalid_argument);
}

TEST(Checkpoint, BackboneRoundTrip) {
    const auto dir = std::filesystem::temp_directory_path() / "switchprompt_encoder_test";
    std::filesystem::create_directories(dir);
    const auto path = (dir / "backbone.ckpt").string();
    const Vocabulary vocab = Vocabulary::build({"alpha beta gamma", "beta"}, 20);
    EncoderConfig c = small_config();
    c.vocab_size = vocab.size();
    c.activation = Activation::Relu;
    const EncoderWeights w = EncoderWeights::random(c, 9, 0.1);
    save_backbone(path, w, vocab);
    const auto [loaded, loaded_vocab] = load_backbone(path);
    EXPECT_EQ(loaded.checksum(), w.checksum());
    EXPECT_TRUE(loaded.frozen());
    EXPECT_EQ(loaded.config.activation, Activation::Relu);
    EXPECT_EQ(loaded.config.num_heads, c.num_heads);
    EXPECT_EQ(loaded_vocab.id_to_word(), vocab.id_to_word());

    std::ofstream(dir / "garbage.ckpt") << "not a checkpoint";
    EXPECT_THROW(load_checkpoint((dir / "garbage.ckpt").string()), std::runtime_error);
    std::filesystem::remove_all(dir);
}
