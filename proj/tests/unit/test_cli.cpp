#include "cli.hpp"

#include "jscc/eval.hpp"
#include "jscc/trainer.hpp"

#include "test_support.hpp"

#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

namespace {

using namespace jscc;
namespace jt = jscc::testing;
namespace fs = std::filesystem;

struct Outcome {
    int code;
    std::string out, err;
};

Outcome run(std::vector<std::string> args) {
    args.insert(args.begin(), "jscc");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

void write_cifar(const fs::path& file, const ImageDataset& d) {
    std::ofstream f(file, std::ios::binary);
    for (int i = 0; i < d.size(); ++i) {
        f.put(0);
        f.write(reinterpret_cast<const char*>(d.pixels().data()) + static_cast<std::ptrdiff_t>(i) * 3072, 3072);
    }
}

TEST(Cli, UsageErrorsExitWithTwo) {
    EXPECT_EQ(run({}).code, 2);
    EXPECT_EQ(run({"frobnicate"}).code, 2);
    const auto r = run({"plot-policy", "--no-such-flag"});
    EXPECT_EQ(r.code, 2);
    EXPECT_FALSE(r.err.empty());
    EXPECT_EQ(run({"eval-sweep"}).code, 2);  // --checkpoint is required
    EXPECT_EQ(run({"--help"}).code, 0);
}

TEST(Cli, PlotPolicyWritesFiles) {
    const auto dir = jt::temp_dir("cli-policy");
    const auto r = run({"plot-policy", "--config", "toy", "--out", dir.string()});
    EXPECT_EQ(r.code, 0) << r.err;
    EXPECT_TRUE(fs::exists(dir / "weight_policy.svg"));
    EXPECT_TRUE(fs::exists(dir / "weight_policy.csv"));
}

TEST(Cli, UnknownConfigFails) {
    EXPECT_EQ(run({"plot-policy", "--config", "/nonexistent.json"}).code, 1);
}

TEST(Cli, TrainSweepAndReport) {
    const auto dir = jt::temp_dir("cli-train");
    const auto data = dir / "data";
    fs::create_directories(data);
    write_cifar(data / "data_batch_1.bin", jt::synthetic_dataset(24, 1));
    write_cifar(data / "test_batch.bin", jt::synthetic_dataset(4, 2));
    save_config(jt::tiny_config(), dir / "tiny.json");
    const std::vector<std::string> common{"--config", (dir / "tiny.json").string(), "--out", (dir / "runs").string(),
                                          "--data", data.string(), "--n-train", "16", "--n-val", "8", "--n-test", "4"};
    auto with = [&](std::vector<std::string> a) {
        a.insert(a.end(), common.begin(), common.end());
        return run(a);
    };

    const auto t = with({"train", "--no-dwa", "--epochs", "1", "--run-name", "r"});
    ASSERT_EQ(t.code, 0) << t.err;
    EXPECT_NE(t.out.find("epoch 1"), std::string::npos);
    const auto run_dir = run_directory(dir / "runs", jt::tiny_config(), "r");
    ASSERT_TRUE(fs::exists(run_dir / "best.ckpt"));
    EXPECT_TRUE(fs::exists(run_dir / "weights.svg"));

    // DWA without a registry is refused.
    EXPECT_EQ(with({"train", "--epochs", "1"}).code, 1);

    const auto off = with({"eval-sweep", "--checkpoint", (run_dir / "best.ckpt").string(), "--rho", "5/16"});
    EXPECT_EQ(off.code, 1);
    EXPECT_NE(off.err.find("{1/16, 1/8, 3/16, 1/4}"), std::string::npos);

    const auto s = with({"eval-sweep", "--checkpoint", (run_dir / "best.ckpt").string(), "--table",
                         (dir / "sweep.csv").string()});
    ASSERT_EQ(s.code, 0) << s.err;
    const auto table = ResultTable::load(dir / "sweep.csv");
    EXPECT_EQ(table.rows.size(), 4u);

    const auto b = with({"baseline", "--codec", "quantize", "--rho", "1/4", "--table", (dir / "base.csv").string()});
    ASSERT_EQ(b.code, 0) << b.err;

    const auto rep = run({"report", "--tables", (dir / "sweep.csv").string(), (dir / "base.csv").string(), "--log",
                          (run_dir / "train_log.jsonl").string(), "--out", (dir / "report").string()});
    ASSERT_EQ(rep.code, 0) << rep.err;
    EXPECT_TRUE(fs::exists(dir / "report" / "report.txt"));
    EXPECT_TRUE(fs::exists(dir / "report" / "report.csv"));
}

}  // namespace
