#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "mmnet/dataio.hpp"

namespace mmnet {

struct EvalConfig {
    std::string protocol = "ptb";  ///< "ptb" (precomputed trajectories) or "vot-lite" (live resets)
    int reinit_skip = 5;
    int burnin = 10;
    int workers = 0;               ///< 0: one per logical core
    bool plots = true;

    void validate() const;
};

/// Intersection over union; 0 when the union is empty.
double iou(const Box& a, const Box& b);

/// Distance between box centers in pixels.
double cle(const Box& a, const Box& b);

struct Curve {
    std::vector<double> thresholds;
    std::vector<double> values;
};

/// Fraction of frames with CLE <= tau, tau = 0..50 px.
Curve precision_curve(const std::vector<Box>& pred, const std::vector<Box>& gt);
/// Value of the precision curve at 20 px.
double precision_at_20(const Curve& precision);

/// Fraction of frames with IoU > tau, tau = 0, 0.05, ..., 1.
Curve success_curve(const std::vector<Box>& pred, const std::vector<Box>& gt);
/// Mean of the 21 success samples.
double success_auc(const Curve& success);

/// Callbacks a tracker exposes to the reset protocol.
struct TrackerRunner {
    std::function<void(std::size_t frame, const Box& box)> init;
    std::function<Box(std::size_t frame)> update;
};

struct VotLiteResult {
    double accuracy = 0;
    int robustness = 0;
    double eao_lite = 0;
    std::vector<double> overlaps;  ///< per frame: 1 at inits, 0 from failure until re-init
};

/// Reset protocol: failure when IoU reaches 0, re-init `reinit_skip` frames
/// later. Accuracy averages the tracked frames except the first `burnin`
/// frames after each init (init frame included) and failure frames.
VotLiteResult vot_lite(const TrackerRunner& runner, const std::vector<Box>& gt, int reinit_skip = 5, int burnin = 10);

struct SequenceMetrics {
    std::string name;
    Curve precision;
    Curve success;
    double pre20 = 0;
    double auc = 0;
    double accuracy;    ///< nan under the ptb protocol
    double robustness;  ///< nan under the ptb protocol
    double eao_lite;    ///< nan under the ptb protocol

    SequenceMetrics();
};

struct MetricReport {
    std::string protocol;  ///< "ptb" or "vot-lite"
    std::vector<SequenceMetrics> sequences;

    /// Unweighted mean over sequences (curves averaged pointwise).
    SequenceMetrics aggregate() const;
};

SequenceMetrics evaluate_trajectory(const std::string& name, const std::vector<Box>& pred, const std::vector<Box>& gt);

inline constexpr const char* kReportColumns = "sequence,pre20,auc,accuracy,robustness,eao_lite";

/// Writes sequences.csv, aggregate.csv, curves/<name>_{precision,success}.csv
/// and, when `plots` is set, matching SVG line plots.
void write_report(const MetricReport& report, const std::filesystem::path& out_dir, bool plots = true);

struct ReportRow {
    std::string sequence;
    double pre20, auc, accuracy, robustness, eao_lite;
};
std::vector<ReportRow> read_report_csv(const std::filesystem::path& file);

/// Standalone SVG line plot of one curve.
std::string curve_svg(const Curve& curve, const std::string& title, const std::string& x_label);

} // namespace mmnet
