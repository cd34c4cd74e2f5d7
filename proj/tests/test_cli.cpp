#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "mmnet/evalkit.hpp"
#include "mmnet/tracker.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;

namespace {

struct Result {
    int code = -1;
    std::string out;
    std::string err;
};

std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Shared scratch space: one synthetic sequence and one tiny model.
struct Workspace {
    testutil::TempDir dir{"cli"};
    fs::path seq = dir.path / "seq";
    fs::path model = dir.path / "m.ckpt";
};

Workspace& ws()
{
    static Workspace w;
    return w;
}

Result run(const std::string& args)
{
    const auto out = ws().dir.path / "stdout.txt";
    const auto err = ws().dir.path / "stderr.txt";
    const std::string cmd = std::string(MMNET_CLI_PATH) + " " + args + " >" + out.string() + " 2>" + err.string();
    const int status = std::system(cmd.c_str());
    Result r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(out);
    r.err = slurp(err);
    return r;
}

std::size_t count_lines(const std::string& s)
{
    std::size_t n = 0;
    std::istringstream in(s);
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) ++n;
    return n;
}

class Cli : public ::testing::Test {
protected:
    static void SetUpTestSuite()
    {
        auto& w = ws();
        if (fs::exists(w.model)) return;
        const auto s = run("synth --out " + w.seq.string() + " --frames 8 --seed 5 --noise 3");
        ASSERT_EQ(s.code, 0) << s.err;
        const auto t = run("train --strategy vid-only --data-gray " + w.seq.string() + " --out " + w.model.string() +
                           " --epochs 2 --pairs-per-epoch 8 --quiet");
        ASSERT_EQ(t.code, 0) << t.err;
    }
};

} // namespace

TEST_F(Cli, HelpAndVersion)
{
    EXPECT_EQ(run("--help").code, 0);
    const auto v = run("--version");
    EXPECT_EQ(v.code, 0);
    EXPECT_NE(v.out.find("0.1.0"), std::string::npos);
    EXPECT_EQ(run("frobnicate").code, 2);
}

TEST_F(Cli, SynthIsReproducible)
{
    const auto a = ws().dir.path / "a", b = ws().dir.path / "b";
    ASSERT_EQ(run("synth --out " + a.string() + " --frames 3 --seed 2").code, 0);
    ASSERT_EQ(run("synth --out " + b.string() + " --frames 3 --seed 2").code, 0);
    EXPECT_EQ(slurp(a / "groundtruth.txt"), slurp(b / "groundtruth.txt"));
    std::size_t files = 0;
    for (const auto& e : fs::recursive_directory_iterator(a)) {
        if (!e.is_regular_file() || e.path().filename() == "manifest.txt") continue;
        EXPECT_EQ(slurp(e.path()), slurp(b / fs::relative(e.path(), a))) << e.path();
        ++files;
    }
    EXPECT_EQ(files, 5u);  // three frames, groundtruth.txt, meta.txt
    EXPECT_TRUE(fs::exists(a / "manifest.txt"));
    EXPECT_EQ(count_lines(slurp(a / "groundtruth.txt")), 3u);
}

TEST_F(Cli, SynthRejectsASingleFrame)
{
    EXPECT_EQ(run("synth --out " + (ws().dir.path / "one").string() + " --frames 1").code, 2);
}

TEST_F(Cli, TrainWritesLossLogAndManifest)
{
    const auto log = slurp(ws().dir.path / "m.ckpt.loss.csv");
    EXPECT_EQ(log.rfind("epoch,batch,l_dis,l_cls,l_fin,total,lr\n", 0), 0u);
    EXPECT_EQ(count_lines(log), 1u + 2u);  // header + 2 epochs x 1 batch
    const auto manifest = slurp(ws().dir.path / "m.ckpt.manifest.txt");
    EXPECT_NE(manifest.find("[train]"), std::string::npos);
    EXPECT_NE(manifest.find("seed"), std::string::npos);
}

TEST_F(Cli, TrainChecksDatasetsAgainstTheStrategy)
{
    const auto out = (ws().dir.path / "x.ckpt").string();
    const auto missing = run("train --strategy mix --data-gray " + ws().seq.string() + " --out " + out +
                             " --epochs 1 --pairs-per-epoch 8 --quiet");
    EXPECT_EQ(missing.code, 2);
    EXPECT_NE(missing.err.find("--data-tir"), std::string::npos);
    const auto extra = run("train --strategy vid-only --data-gray " + ws().seq.string() + " --data-tir " +
                           ws().seq.string() + " --out " + out + " --epochs 1 --pairs-per-epoch 8 --quiet");
    EXPECT_EQ(extra.code, 0) << extra.err;
    EXPECT_NE(extra.err.find("warning"), std::string::npos);
    EXPECT_EQ(run("train --strategy sideways --data-gray " + ws().seq.string() + " --out " + out).code, 2);
}

TEST_F(Cli, TrackWritesOneRowPerFrame)
{
    const auto a = ws().dir.path / "a.csv", b = ws().dir.path / "b.csv";
    const auto r = run("track --model " + ws().model.string() + " --sequence " + ws().seq.string() + " --out " + a.string());
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("FPS"), std::string::npos);
    const auto rows = mmnet::read_trajectory(a);
    EXPECT_EQ(rows.size(), 8u);
    ASSERT_EQ(run("track --model " + ws().model.string() + " --sequence " + ws().seq.string() + " --out " + b.string() +
                  " --beta 0.5")
                  .code,
              0);
    EXPECT_EQ(slurp(a), slurp(b));
    EXPECT_TRUE(fs::exists(ws().dir.path / "a.csv.manifest.txt"));
    EXPECT_EQ(run("track --model " + ws().model.string() + " --sequence " + ws().seq.string() + " --out " + b.string() +
                  " --beta 1.5")
                  .code,
              2);
}

TEST_F(Cli, BrokenCheckpointExitsWithItsOwnCode)
{
    const auto bad = ws().dir.path / "bad.ckpt";
    std::ofstream(bad) << "not a checkpoint";
    const auto r = run("track --model " + bad.string() + " --sequence " + ws().seq.string() + " --out " +
                       (ws().dir.path / "c.csv").string());
    EXPECT_EQ(r.code, 5);
    EXPECT_FALSE(r.err.empty());
    EXPECT_EQ(run("track --model " + (ws().dir.path / "nope.ckpt").string() + " --sequence " + ws().seq.string() +
                  " --out " + (ws().dir.path / "c.csv").string())
                  .code,
              3);
}

TEST_F(Cli, EvalPtbOnGroundTruthIsPerfect)
{
    // Echo the ground truth as a trajectory.
    const auto pred = ws().dir.path / "echo.csv";
    {
        std::ofstream out(pred);
        out << mmnet::kTrajectoryHeader << "\n";
        std::istringstream gt(slurp(ws().seq / "groundtruth.txt"));
        std::string line;
        int f = 0;
        while (std::getline(gt, line))
            if (!line.empty()) out << f++ << "," << line << ",1\n";
    }
    const auto rep = ws().dir.path / "rep";
    const auto r = run("eval --pred " + pred.string() + " --gt " + ws().seq.string() + " --out " + rep.string() +
                       " --no-plots");
    ASSERT_EQ(r.code, 0) << r.err;
    const auto rows = mmnet::read_report_csv(rep / "sequences.csv");
    ASSERT_EQ(rows.size(), 1u);
    EXPECT_EQ(rows[0].pre20, 1.0);
    EXPECT_DOUBLE_EQ(rows[0].auc, 20.0 / 21.0);
    EXPECT_NE(slurp(rep / "sequences.csv").find("# protocol=ptb"), std::string::npos);
    EXPECT_TRUE(fs::exists(rep / "manifest.txt"));

    EXPECT_EQ(run("eval --pred " + pred.string() + " " + pred.string() + " --gt " + ws().seq.string() + " --out " +
                  rep.string())
                  .code,
              2);
}

TEST_F(Cli, EvalVotLiteRunsTheTracker)
{
    const auto rep = ws().dir.path / "vot";
    EXPECT_EQ(run("eval --protocol vot-lite --pred x.csv --model " + ws().model.string() + " --gt " +
                  ws().seq.string() + " --out " + rep.string())
                  .code,
              2);
    EXPECT_EQ(run("eval --protocol vot-lite --gt " + ws().seq.string() + " --out " + rep.string()).code, 2);
    const auto r = run("eval --protocol vot-lite --model " + ws().model.string() + " --gt " + ws().seq.string() +
                       " --out " + rep.string() + " --workers 1");
    ASSERT_EQ(r.code, 0) << r.err;
    const auto text = slurp(rep / "sequences.csv");
    EXPECT_NE(text.find("# protocol=vot-lite"), std::string::npos);
    const auto rows = mmnet::read_report_csv(rep / "sequences.csv");
    ASSERT_EQ(rows.size(), 1u);
    EXPECT_FALSE(std::isnan(rows[0].eao_lite));
    EXPECT_TRUE(fs::exists(rep / "curves" / "mean_success.svg"));
}

TEST_F(Cli, VerifySelectsSuites)
{
    const auto r = run("verify --suite metrics");
    EXPECT_EQ(r.code, 0) << r.err << r.out;
    EXPECT_NE(r.out.find("vot-lite planted-failure fixture"), std::string::npos);
    EXPECT_EQ(r.out.find("[PASS] 3"), std::string::npos);
    EXPECT_EQ(run("verify --suite nonsense").code, 2);
}
