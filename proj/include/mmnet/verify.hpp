#pragma once

#include <functional>
#include <string>
#include <vector>

#include "mmnet/dataio.hpp"
#include "mmnet/model.hpp"
#include "mmnet/trainer.hpp"

namespace mmnet {

/// One pass/fail line of the verification harness.
struct Check {
    int criterion = 0;
    std::string name;
    bool passed = false;
    bool informational = false;  ///< printed but never fails the run
    std::string detail;
    double seconds = 0;
};

class Verifier {
public:
    std::function<void(const Check&)> on_check;

    void record(Check c);
    const std::vector<Check>& checks() const { return checks_; }
    bool all_passed() const;
    /// Overall verdict per criterion number (informational entries ignored).
    bool criterion_passed(int criterion) const;

private:
    std::vector<Check> checks_;
};

/// Formats "PASS"/"FAIL"/"INFO" lines.
std::string format_check(const Check& c);

/// The fixed eight training pairs of the overfit suite and their source.
struct OverfitSet {
    SequenceRecord sequence;
    std::vector<SamplePair> pairs;
};
OverfitSet overfit_set();

struct OverfitOptions {
    int batches = 500;
    int batches_per_epoch = 10;
    double lr_hi = 3e-2;
    double lr_lo = 1e-3;
    /// Single positive cell, so the loss targets the exact peak the suite checks.
    double label_radius = 0;
    std::uint64_t seed = 1;
};

struct OverfitOutcome {
    ModelConfig model;
    Params params;
    double initial_loss = 0;  ///< mean total loss over the eight pairs, before training
    double final_loss = 0;    ///< same, after training
    int argmax_hits = 0;      ///< pairs whose fused argmax is the ground-truth cell
    double seconds = 0;
    std::vector<BatchRecord> log;
};

/// Trains a fresh desk model on the overfit set (vid-only plan, batch 8).
OverfitOutcome train_overfit(const OverfitOptions& opt = {});

/// Mean total loss and argmax hits of `params` on the overfit set.
std::pair<double, int> evaluate_overfit(const Params& params, const ModelConfig& model, const OverfitSet& set);

void verify_scale_note(Verifier& v);                       // 1 (informational)
void verify_gradients(Verifier& v);                        // 2
void verify_oracles(Verifier& v);                          // 3
void verify_shapes(Verifier& v);                           // 4
OverfitOutcome verify_overfit(Verifier& v);                // 5
void verify_tracking(Verifier& v, const OverfitOutcome&);  // 6
void verify_strategies(Verifier& v);                       // 7
void verify_metrics(Verifier& v);                          // 8
void verify_persistence(Verifier& v);                      // 9

/// grad, oracle, shape, overfit, track-synth, strategy, metrics, persistence, all.
std::vector<std::string> suite_names();

/// Runs the named suites in criterion order (track-synth trains the overfit
/// model first when overfit is not also selected). Unknown names are a
/// ConfigError.
void run_suites(const std::vector<std::string>& names, Verifier& v);

} // namespace mmnet
