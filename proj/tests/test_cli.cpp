#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "switchprompt/cli.hpp"

namespace fs = std::filesystem;

namespace {

struct CliRun {
    int code = 0;
    std::string out, err;
};

CliRun cli(std::vector<std::string> args) {
    args.insert(args.begin(), "switchprompt");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    CliRun r;
    r.code = switchprompt::run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
    r.out = out.str();
    r.err = err.str();
    return r;
}

int binary_exit_code(const std::string& args) {
    const std::string cmd = std::string(SWITCHPROMPT_CLI_PATH) + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

const std::vector<std::string> kTiny = {"--set", "embed_dim=16",  "num_heads=2", "ffn_dim=32",
                                        "m=4",   "n=4",           "synthetic_examples_per_class=12",
                                        "synthetic_general_documents=100"};

class Cli : public ::testing::Test {
   protected:
    void SetUp() override {
        dir = fs::temp_directory_path() /
              ("switchprompt_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
        fs::remove_all(dir);
        fs::create_directories(dir);
    }
    void TearDown() override { fs::remove_all(dir); }

    std::vector<std::string> tiny(std::vector<std::string> args) const {
        args.insert(args.end(), kTiny.begin(), kTiny.end());
        return args;
    }

    fs::path dir;
};

}  // namespace

TEST_F(Cli, GenSyntheticThenKeywordsAndSplit) {
    const auto gen = cli({"gen-synthetic", "--out", dir.string(), "--classes", "3", "--examples-per-class", "10"});
    ASSERT_EQ(gen.code, 0) << gen.err;
    EXPECT_EQ(switchprompt::load_dataset((dir / "dataset.tsv").string()).size(), 30u);

    const auto kw = cli({"extract-keywords", "--general", (dir / "general.txt").string(), "--domain",
                         (dir / "domain.txt").string(), "--n", "5", "--out", (dir / "kw.tsv").string()});
    ASSERT_EQ(kw.code, 0) << kw.err;
    EXPECT_EQ(switchprompt::read_keywords((dir / "kw.tsv").string()).size(), 5u);
    EXPECT_EQ(std::count(kw.out.begin(), kw.out.end(), '\n'), 5);

    const auto split = cli({"sample-fewshot", "--dataset", (dir / "dataset.tsv").string(), "--shots", "2", "--seed",
                            "4", "--out", (dir / "split").string()});
    ASSERT_EQ(split.code, 0) << split.err;
    EXPECT_NE(split.out.find("train 6, dev 6, test 18"), std::string::npos) << split.out;
    EXPECT_TRUE(fs::exists(dir / "split" / "split.json"));
}

TEST_F(Cli, TrainWithZeroEpochsWritesRunDirectory) {
    const auto r = cli(tiny({"train", "--epochs", "0", "--seeds", "1,2", "--shots", "4", "--out", dir.string()}));
    ASSERT_EQ(r.code, 0) << r.err;
    for (const char* f : {"metrics.jsonl", "result.json", "summary.txt", "timing.json", "keywords.tsv",
                          "backbone.ckpt", "model_seed1.ckpt", "model_seed2.ckpt"})
        EXPECT_TRUE(fs::exists(dir / f)) << f;
    const auto result = nlohmann::json::parse(slurp(dir / "result.json"));
    EXPECT_EQ(result.at("per_seed").size(), 2u);
    EXPECT_NE(r.out.find("(1)"), std::string::npos);
}

TEST_F(Cli, EvaluateReproducesTrainedAccuracyAndRejectsUnknownLabels) {
    ASSERT_EQ(cli({"gen-synthetic", "--out", dir.string(), "--examples-per-class", "12"}).code, 0);
    const auto run = dir / "run";
    const auto t = cli(tiny({"train", "--epochs", "1", "--seed", "3", "--shots", "0", "--dataset",
                             (dir / "dataset.tsv").string(), "--general", (dir / "general.txt").string(), "--domain",
                             (dir / "domain.txt").string(), "--out", run.string()}));
    ASSERT_EQ(t.code, 0) << t.err;

    const auto e = cli({"evaluate", "--run-dir", run.string(), "--seed", "3", "--dataset",
                        (dir / "dataset.tsv").string(), "--out", (dir / "eval.json").string()});
    ASSERT_EQ(e.code, 0) << e.err;
    const auto eval = nlohmann::json::parse(slurp(dir / "eval.json"));
    EXPECT_EQ(eval.at("examples"), 48);

    std::ofstream(dir / "other.tsv") << "nonexistent_label\tsome text\n";
    const auto bad = cli({"evaluate", "--run-dir", run.string(), "--seed", "3", "--dataset",
                          (dir / "other.tsv").string()});
    EXPECT_EQ(bad.code, 2);
    EXPECT_NE(bad.err.find("label-space mismatch"), std::string::npos) << bad.err;
}

TEST_F(Cli, AblatePrintsSixRows) {
    const auto r = cli(tiny({"ablate", "--epochs", "1", "--seed", "1", "--shots", "4", "--out", dir.string()}));
    ASSERT_EQ(r.code, 0) << r.err;
    for (int row = 1; row <= 6; ++row) EXPECT_NE(r.out.find("(" + std::to_string(row) + ")"), std::string::npos);
    EXPECT_TRUE(fs::exists(dir / "model_soft-only_seed1.ckpt"));
}

TEST_F(Cli, ConfigFileThenFlagOverrides) {
    std::ofstream(dir / "run.cfg") << "epochs = 0\nseeds = 5\nlr = 0.02\n";
    const auto r = cli(tiny({"train", "--config", (dir / "run.cfg").string(), "--lr", "0.03", "--out", dir.string()}));
    ASSERT_EQ(r.code, 0) << r.err;
    const auto result = nlohmann::json::parse(slurp(dir / "result.json"));
    EXPECT_DOUBLE_EQ(result.at("config").at("lr").get<double>(), 0.03);
    EXPECT_EQ(result.at("per_seed").at(0).at("seed"), 5);
}

TEST_F(Cli, BadInputsFail) {
    EXPECT_NE(cli({}).code, 0);
    EXPECT_NE(cli({"train", "--no-such-flag"}).code, 0);
    const auto alpha = cli({"train", "--alpha", "0.5"});
    EXPECT_EQ(alpha.code, 2);
    EXPECT_NE(alpha.err.find("alpha"), std::string::npos) << alpha.err;
    EXPECT_EQ(cli({"train", "--set", "bogus=1"}).code, 2);
    EXPECT_EQ(cli({"ablate", "--m", "3", "--n", "4"}).code, 2);
}

TEST(CliBinary, ExitCodes) {
    EXPECT_EQ(binary_exit_code("--help"), 0);
    EXPECT_EQ(binary_exit_code("gradcheck --trials 3"), 0);
    EXPECT_NE(binary_exit_code("no-such-command"), 0);
    EXPECT_EQ(binary_exit_code("train --variant nonsense"), 2);
}
