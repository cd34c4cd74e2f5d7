#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "mmnet/error.hpp"
#include "mmnet/evalkit.hpp"
#include "test_util.hpp"

using namespace mmnet;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p)
{
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

struct Scripted {
    std::vector<std::size_t> inits;
    std::function<Box(std::size_t)> boxes;
    TrackerRunner runner()
    {
        return {[this](std::size_t f, const Box&) { inits.push_back(f); }, [this](std::size_t f) { return boxes(f); }};
    }
};

} // namespace

TEST(Overlap, IouAndCenterError)
{
    EXPECT_DOUBLE_EQ(iou({0, 0, 10, 10}, {0, 0, 10, 10}), 1.0);
    EXPECT_DOUBLE_EQ(iou({0, 0, 10, 10}, {5, 0, 10, 10}), 50.0 / 150.0);
    EXPECT_EQ(iou({0, 0, 10, 10}, {10, 0, 10, 10}), 0.0);
    EXPECT_EQ(iou({0, 0, 0, 0}, {0, 0, 0, 0}), 0.0);
    EXPECT_DOUBLE_EQ(cle({0, 0, 10, 10}, {3, 4, 10, 10}), 5.0);
    EXPECT_DOUBLE_EQ(cle({0, 0, 10, 10}, {-1, -1, 12, 12}), 0.0);
}

TEST(Curves, PrecisionSteps)
{
    const std::vector<Box> gt(4, Box{0, 0, 10, 10});
    const std::vector<Box> pred{{0, 0, 10, 10}, {3, 4, 10, 10}, {6, 8, 10, 10}, {30, 40, 10, 10}};  // 0, 5, 10, 50
    const auto c = precision_curve(pred, gt);
    ASSERT_EQ(c.values.size(), 51u);
    EXPECT_EQ(c.thresholds.front(), 0.0);
    EXPECT_EQ(c.thresholds.back(), 50.0);
    EXPECT_DOUBLE_EQ(c.values[0], 0.25);
    EXPECT_DOUBLE_EQ(c.values[4], 0.25);
    EXPECT_DOUBLE_EQ(c.values[5], 0.5);   // inclusive threshold
    EXPECT_DOUBLE_EQ(c.values[20], 0.75);
    EXPECT_DOUBLE_EQ(c.values[50], 1.0);
    EXPECT_DOUBLE_EQ(precision_at_20(c), 0.75);
    for (std::size_t i = 1; i < c.values.size(); ++i) EXPECT_GE(c.values[i], c.values[i - 1]);
}

TEST(Curves, SuccessUsesStrictThreshold)
{
    const std::vector<Box> gt(2, Box{0, 0, 10, 10});
    const std::vector<Box> pred{{0, 0, 10, 10}, {5, 0, 10, 10}};  // IoU 1 and 1/3
    const auto c = success_curve(pred, gt);
    ASSERT_EQ(c.values.size(), 21u);
    EXPECT_DOUBLE_EQ(c.thresholds[20], 1.0);
    EXPECT_DOUBLE_EQ(c.values[0], 1.0);
    EXPECT_DOUBLE_EQ(c.values[6], 1.0);   // 0.30 < 1/3
    EXPECT_DOUBLE_EQ(c.values[7], 0.5);   // 0.35
    EXPECT_DOUBLE_EQ(c.values[20], 0.0);  // IoU 1 is not > 1
    // 7 samples at 1, 13 at 0.5, one at 0.
    EXPECT_DOUBLE_EQ(success_auc(c), (7 + 13 * 0.5) / 21.0);
}

TEST(Curves, LengthMismatchIsAnInputError)
{
    const std::vector<Box> a(3), b(2);
    EXPECT_THROW(precision_curve(a, b), InputError);
    EXPECT_THROW(success_curve(b, a), InputError);
    EXPECT_THROW(precision_curve({}, {}), InputError);
}

TEST(VotLite, HandCountedResets)
{
    const std::vector<Box> gt(20, Box{0, 0, 20, 20});
    Scripted s;
    s.boxes = [](std::size_t f) -> Box {
        if (f == 4) return {10, 0, 20, 20};  // IoU 1/3
        if (f == 8) return {50, 50, 20, 20};
        return {0, 0, 20, 20};
    };
    const auto r = vot_lite(s.runner(), gt, 3, 2);
    EXPECT_EQ(s.inits, (std::vector<std::size_t>{0, 11}));
    EXPECT_EQ(r.robustness, 1);
    // Accuracy frames 2..7 and 13..19.
    EXPECT_DOUBLE_EQ(r.accuracy, (12.0 + 1.0 / 3.0) / 13.0);
    EXPECT_DOUBLE_EQ(r.eao_lite, (16.0 + 1.0 / 3.0) / 20.0);
    ASSERT_EQ(r.overlaps.size(), 20u);
    EXPECT_EQ(r.overlaps[9], 0.0);
    EXPECT_EQ(r.overlaps[11], 1.0);
}

TEST(VotLite, FailureNearTheEndStopsTheRun)
{
    const std::vector<Box> gt(12, Box{0, 0, 20, 20});
    Scripted s;
    s.boxes = [](std::size_t f) -> Box { return f == 10 ? Box{90, 90, 5, 5} : Box{0, 0, 20, 20}; };
    const auto r = vot_lite(s.runner(), gt, 5, 0);
    EXPECT_EQ(s.inits, std::vector<std::size_t>{0});
    EXPECT_EQ(r.robustness, 1);
    EXPECT_DOUBLE_EQ(r.accuracy, 1.0);
    EXPECT_DOUBLE_EQ(r.eao_lite, 10.0 / 12.0);
}

TEST(VotLite, RejectsBadArguments)
{
    Scripted s;
    s.boxes = [](std::size_t) { return Box{0, 0, 1, 1}; };
    EXPECT_THROW(vot_lite(s.runner(), std::vector<Box>(6, Box{0, 0, 1, 1}), 5, 0), InputError);
    EXPECT_THROW(vot_lite(s.runner(), std::vector<Box>(20, Box{0, 0, 1, 1}), 0, 0), ConfigError);
}

TEST(Report, PtbLeavesResetFieldsUndefined)
{
    const std::vector<Box> gt(5, Box{0, 0, 10, 10});
    const auto m = evaluate_trajectory("a", gt, gt);
    EXPECT_EQ(m.pre20, 1.0);
    EXPECT_DOUBLE_EQ(m.auc, 20.0 / 21.0);
    EXPECT_TRUE(std::isnan(m.accuracy));
    EXPECT_TRUE(std::isnan(m.robustness));
    EXPECT_TRUE(std::isnan(m.eao_lite));
}

TEST(Report, AggregateIsTheUnweightedMean)
{
    MetricReport rep;
    rep.protocol = "ptb";
    const std::vector<Box> gt(4, Box{0, 0, 10, 10});
    std::vector<Box> off(gt);
    for (auto& b : off) b.x += 30;
    rep.sequences.push_back(evaluate_trajectory("hit", gt, gt));
    rep.sequences.push_back(evaluate_trajectory("miss", std::vector<Box>(off.begin(), off.begin() + 2),
                                                std::vector<Box>(gt.begin(), gt.begin() + 2)));
    const auto agg = rep.aggregate();
    EXPECT_DOUBLE_EQ(agg.pre20, 0.5);
    EXPECT_DOUBLE_EQ(agg.precision.values[30], 1.0);
    EXPECT_DOUBLE_EQ(agg.precision.values[29], 0.5);
    EXPECT_TRUE(std::isnan(agg.accuracy));
}

TEST(Report, FilesRoundTripAndNameTheProtocol)
{
    testutil::TempDir dir("report");
    MetricReport rep;
    rep.protocol = "vot-lite";
    const std::vector<Box> gt(3, Box{0, 0, 10, 10});
    auto m = evaluate_trajectory("seq/one", gt, gt);
    m.accuracy = 0.75;
    m.robustness = 2;
    m.eao_lite = 0.1;
    rep.sequences.push_back(m);
    write_report(rep, dir.path, true);

    const auto text = slurp(dir.path / "sequences.csv");
    EXPECT_EQ(text.rfind("# protocol=vot-lite\n", 0), 0u);
    const auto rows = read_report_csv(dir.path / "sequences.csv");
    ASSERT_EQ(rows.size(), 1u);
    EXPECT_EQ(rows[0].pre20, 1.0);
    EXPECT_EQ(rows[0].auc, 20.0 / 21.0);
    EXPECT_EQ(rows[0].accuracy, 0.75);
    EXPECT_EQ(rows[0].robustness, 2.0);
    EXPECT_EQ(read_report_csv(dir.path / "aggregate.csv").at(0).sequence, "mean");
    EXPECT_TRUE(fs::exists(dir.path / "curves" / "mean_success.svg"));
    std::size_t svgs = 0;
    for (const auto& e : fs::directory_iterator(dir.path / "curves")) svgs += e.path().extension() == ".svg";
    EXPECT_EQ(svgs, 4u);

    testutil::TempDir plain("report-noplot");
    rep.protocol = "ptb";
    rep.sequences[0] = evaluate_trajectory("x", gt, gt);
    write_report(rep, plain.path, false);
    for (const auto& e : fs::directory_iterator(plain.path / "curves")) EXPECT_NE(e.path().extension(), ".svg");
    EXPECT_NE(slurp(plain.path / "sequences.csv").find("not defined"), std::string::npos);
    EXPECT_TRUE(std::isnan(read_report_csv(plain.path / "sequences.csv").at(0).eao_lite));
}

TEST(Report, SvgIsStandalone)
{
    Curve c{{0, 1}, {0.2, 0.8}};
    const auto svg = curve_svg(c, "a <b>", "x");
    EXPECT_EQ(svg.rfind("<?xml", 0), 0u);
    EXPECT_NE(svg.find("<svg xmlns"), std::string::npos);
    EXPECT_NE(svg.find("a &lt;b&gt;"), std::string::npos);
    EXPECT_NE(svg.find("</svg>"), std::string::npos);
}

TEST(EvalConfig, Validation)
{
    EvalConfig c;
    EXPECT_NO_THROW(c.validate());
    c.protocol = "otb";
    EXPECT_THROW(c.validate(), ConfigError);
}
