#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>

#include <nlohmann/json.hpp>

#include "switchprompt/data.hpp"
#include "switchprompt/keywords.hpp"

using namespace switchprompt;

namespace {

LabeledDataset make_dataset(std::size_t classes, std::size_t per_class) {
    LabeledDataset ds;
    for (std::size_t i = 0; i < per_class; ++i)
        for (std::size_t c = 0; c < classes; ++c)
            ds.add("text " + std::to_string(c) + " " + std::to_string(i % 7), "label" + std::to_string(c));
    return ds;
}

std::set<std::size_t> ids(const LabeledDataset& ds) {
    std::set<std::size_t> out;
    for (const auto& e : ds.examples) out.insert(e.id);
    return out;
}

std::vector<std::size_t> id_list(const LabeledDataset& ds) {
    std::vector<std::size_t> out;
    for (const auto& e : ds.examples) out.push_back(e.id);
    return out;
}

class TempDir : public ::testing::Test {
   protected:
    void SetUp() override {
        dir = std::filesystem::temp_directory_path() /
              ("switchprompt_data_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
        std::filesystem::create_directories(dir);
    }
    void TearDown() override { std::filesystem::remove_all(dir); }

    std::filesystem::path dir;
};

}  // namespace

using DatasetFile = TempDir;

TEST_F(DatasetFile, TwoRecordsTwoLabels) {
    std::ofstream(dir / "d.tsv") << "pos\tgreat movie\nneg\tbad plot\n";
    const auto ds = load_dataset((dir / "d.tsv").string());
    EXPECT_EQ(ds.num_classes(), 2u);
    EXPECT_EQ(ds.class_index("pos"), 0u);
    EXPECT_EQ(ds.class_index("neg"), 1u);
    EXPECT_EQ(ds.examples[1].text, "bad plot");
}

TEST_F(DatasetFile, DuplicatesArePreserved) {
    std::ofstream(dir / "d.tsv") << "a\tsame text\na\tsame text\n";
    const auto ds = load_dataset((dir / "d.tsv").string());
    EXPECT_EQ(ds.size(), 2u);
    EXPECT_NE(ds.examples[0].id, ds.examples[1].id);
}

TEST_F(DatasetFile, RoundTripKeepsExamplesAndLabelOrder) {
    const auto ds = make_dataset(3, 5);
    write_dataset((dir / "d.tsv").string(), ds);
    const auto back = load_dataset((dir / "d.tsv").string());
    EXPECT_EQ(back.labels, ds.labels);
    ASSERT_EQ(back.size(), ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i) {
        EXPECT_EQ(back.examples[i].text, ds.examples[i].text);
        EXPECT_EQ(back.examples[i].label, ds.examples[i].label);
    }
}

TEST_F(DatasetFile, Errors) {
    std::ofstream(dir / "bad.tsv") << "a\tok\nno tab here\n";
    try {
        load_dataset((dir / "bad.tsv").string());
        FAIL() << "expected a parse error";
    } catch (const std::runtime_error& e) {
        EXPECT_NE(std::string(e.what()).find(":2:"), std::string::npos) << e.what();
    }
    std::ofstream(dir / "empty.tsv") << "\n";
    EXPECT_THROW(load_dataset((dir / "empty.tsv").string()), std::runtime_error);
    EXPECT_THROW(load_dataset((dir / "bad.tsv").string(), "csv"), std::invalid_argument);
    EXPECT_THROW(load_dataset((dir / "missing.tsv").string()), std::runtime_error);
}

TEST(FewShot, ThreeClassesFourShots) {
    const auto split = sample_fewshot(make_dataset(3, 20), 4, 1);
    EXPECT_EQ(split.train.size(), 12u);
    EXPECT_EQ(split.dev.size(), 12u);
    EXPECT_EQ(split.test.size(), 36u);
}

TEST(FewShot, ExactCountsAndDisjointForAllShotSizes) {
    const auto ds = make_dataset(5, 140);
    for (std::size_t n : {2, 4, 16, 64}) {
        for (std::uint64_t seed = 0; seed < 3; ++seed) {
            const auto split = sample_fewshot(ds, n, seed);
            for (auto c : split.train.class_counts()) EXPECT_EQ(c, n);
            for (auto c : split.dev.class_counts()) EXPECT_EQ(c, n);
            for (auto c : split.test.class_counts()) EXPECT_EQ(c, 140 - 2 * n);
            const auto a = ids(split.train), b = ids(split.dev), t = ids(split.test);
            EXPECT_EQ(a.size() + b.size() + t.size(), ds.size());
            std::set<std::size_t> all = a;
            all.insert(b.begin(), b.end());
            all.insert(t.begin(), t.end());
            EXPECT_EQ(all.size(), ds.size());
        }
    }
}

TEST(FewShot, DeterministicPerSeed) {
    const auto ds = make_dataset(4, 30);
    std::set<std::vector<std::size_t>> distinct;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto a = sample_fewshot(ds, 4, seed), b = sample_fewshot(ds, 4, seed);
        EXPECT_EQ(id_list(a.train), id_list(b.train));
        EXPECT_EQ(id_list(a.dev), id_list(b.dev));
        EXPECT_EQ(id_list(a.test), id_list(b.test));
        distinct.insert(id_list(a.train));
    }
    EXPECT_EQ(distinct.size(), 5u);
}

TEST(FewShot, StableUnderRecordPermutation) {
    const auto ds = make_dataset(3, 25);
    LabeledDataset permuted = ds;
    Rng rng(77);
    rng.shuffle(permuted.examples);
    const auto a = sample_fewshot(ds, 4, 9), b = sample_fewshot(permuted, 4, 9);
    EXPECT_EQ(id_list(a.train), id_list(b.train));
    EXPECT_EQ(id_list(a.dev), id_list(b.dev));
    EXPECT_EQ(ids(a.test), ids(b.test));
}

TEST(FewShot, InsufficientClassNamed) {
    LabeledDataset ds = make_dataset(2, 10);
    for (int i = 0; i < 3; ++i) ds.add("tiny " + std::to_string(i), "rare");
    try {
        sample_fewshot(ds, 2, 0);
        FAIL() << "expected an error";
    } catch (const std::invalid_argument& e) {
        EXPECT_NE(std::string(e.what()).find("'rare'"), std::string::npos) << e.what();
    }
    EXPECT_THROW(sample_fewshot(ds, 0, 0), std::invalid_argument);
}

TEST(FewShot, BoundaryLeavesEmptyTestWithWarning) {
    LabeledDataset ds = make_dataset(2, 10);
    for (int i = 0; i < 4; ++i) ds.add("small " + std::to_string(i), "small");
    const auto split = sample_fewshot(ds, 2, 0);
    EXPECT_EQ(split.test.class_counts()[2], 0u);
    ASSERT_EQ(split.warnings.size(), 1u);
    EXPECT_NE(split.warnings[0].find("small"), std::string::npos);
}

TEST(FullSplit, ProportionalAndDisjoint) {
    const auto split = split_full(make_dataset(2, 50), 3);
    EXPECT_EQ(split.shots, 0u);
    EXPECT_EQ(split.dev.class_counts(), (std::vector<std::size_t>{5, 5}));
    EXPECT_EQ(split.test.class_counts(), (std::vector<std::size_t>{5, 5}));
    EXPECT_EQ(split.train.class_counts(), (std::vector<std::size_t>{40, 40}));
    EXPECT_THROW(split_full(make_dataset(2, 2), 3), std::invalid_argument);
}

using SplitFiles = TempDir;

TEST_F(SplitFiles, WritesThreeFilesAndMetadata) {
    const auto split = sample_fewshot(make_dataset(3, 10), 2, 5);
    write_split(dir, split);
    EXPECT_EQ(load_dataset((dir / "train.tsv").string()).size(), 6u);
    EXPECT_EQ(load_dataset((dir / "dev.tsv").string()).size(), 6u);
    EXPECT_EQ(load_dataset((dir / "test.tsv").string()).size(), 18u);
    std::ifstream in(dir / "split.json");
    const auto meta = nlohmann::json::parse(in);
    EXPECT_EQ(meta.at("seed"), 5);
    EXPECT_EQ(meta.at("shots"), 2);
    EXPECT_EQ(meta.at("counts").at("train").at("label1"), 2);
    EXPECT_EQ(meta.at("counts").at("test").at("label2"), 6);
}

TEST(Synthetic, UniformLabelsAndDeterminism) {
    SyntheticOptions opt;
    opt.num_classes = 5;
    opt.examples_per_class = 30;
    const auto a = generate_synthetic_domains(opt), b = generate_synthetic_domains(opt);
    EXPECT_EQ(a.dataset.class_counts(), std::vector<std::size_t>(5, 30));
    EXPECT_EQ(a.general_corpus, b.general_corpus);
    ASSERT_EQ(a.dataset.size(), b.dataset.size());
    for (std::size_t i = 0; i < a.dataset.size(); ++i) EXPECT_EQ(a.dataset.examples[i].text, b.dataset.examples[i].text);
    opt.seed = 2;
    EXPECT_NE(generate_synthetic_domains(opt).general_corpus, a.general_corpus);
}

TEST(Synthetic, ZeroFillerGivesOnlyClassTokens) {
    SyntheticOptions opt;
    opt.filler_prob = 0.0;
    const auto s = generate_synthetic_domains(opt);
    for (const auto& ex : s.dataset.examples) {
        const auto& planted = s.planted[ex.label];
        for (const auto& w : split_words(ex.text))
            EXPECT_NE(std::find(planted.begin(), planted.end(), w), planted.end()) << w;
    }
}

TEST(Synthetic, PlantedTokensAreTheTopKeywords) {
    SyntheticOptions opt;
    const auto s = generate_synthetic_domains(opt);
    const auto general = compute_stats(s.general_corpus), domain = compute_stats(s.domain_corpus);
    std::set<std::string> planted;
    for (const auto& words : s.planted) planted.insert(words.begin(), words.end());

    double min_planted = 1e300, max_filler = -1e300;
    for (const auto& [w, c] : domain.counts) {
        const double score = score_word(w, general, domain, -1.0);
        if (planted.count(w)) min_planted = std::min(min_planted, score);
        else max_filler = std::max(max_filler, score);
    }
    EXPECT_GT(min_planted, max_filler);

    const auto top = select_keywords(general, domain, -1.0, planted.size());
    for (const auto& k : top.keywords) EXPECT_TRUE(planted.count(k.word)) << k.word;
}

TEST(Synthetic, RejectsInvalidOptions) {
    SyntheticOptions opt;
    opt.filler_prob = 1.0;
    EXPECT_THROW(generate_synthetic_domains(opt), std::invalid_argument);
    opt = {};
    opt.min_length = 10;
    opt.max_length = 5;
    EXPECT_THROW(generate_synthetic_domains(opt), std::invalid_argument);
}
