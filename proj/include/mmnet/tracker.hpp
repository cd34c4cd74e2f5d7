#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "mmnet/dataio.hpp"
#include "mmnet/model.hpp"
#include "mmnet/trainer.hpp"

namespace mmnet {

enum class TemplateMode { first, previous, ema };
TemplateMode parse_template_mode(const std::string& s);
std::string to_string(TemplateMode m);

struct TrackerConfig {
    int scales = 3;
    double scale_step = 1.0375;
    double scale_penalty = 0.9745;
    double scale_damping = 0.59;
    double window_weight = 0.176;
    int response_upsample = 16;
    TemplateMode template_mode = TemplateMode::first;
    double ema_rate = 0.01;
    double branch_mix = 0.5;  ///< weight of the discriminative branch
    double context_amount = 0.5;

    void validate() const;
};

/// Bicubic (Keys, a = -0.5) resize of a single plane with replicated borders
/// and half-pixel alignment.
std::vector<double> bicubic_upsample(const std::vector<double>& in, int h, int w, int factor);

struct TrackStep {
    Box box;
    double score = 0;  ///< max of the fused response at the chosen scale
    int scale_index = 0;
};

/// Stateful single-sequence tracker. Weights are held read-only; the
/// classifier parameters are dropped on construction.
class TrackerSession {
public:
    TrackerSession(const Params& params, const ModelConfig& model, const TrackerConfig& cfg, const GrayImage& frame0,
                   const Box& box0);

    TrackStep track(const GrayImage& frame);

    /// Replaces (previous) or blends (ema) the pre-CF template features, then
    /// recomputes the filters. Returns false and does nothing in first mode.
    bool update_template(const TemplateFeatures<float>& fresh);

    const Box& box() const { return box_; }
    const Params& params() const { return params_; }
    const TemplateFeatures<float>& features() const { return features_; }
    const TemplateFeatures<float>& filters() const { return filters_; }
    const TrackerConfig& config() const { return cfg_; }

private:
    Params params_;
    ModelConfig model_;
    TrackerConfig cfg_;
    Box box_;
    double base_w_ = 0, base_h_ = 0;
    TemplateFeatures<float> features_;
    TemplateFeatures<float> filters_;
    std::vector<double> window_;
    bool warned_ = false;
};

/// Parameters without the classification head.
Params prune_classifier(const Params& params);

/// Model configuration recorded in a checkpoint.
ModelConfig checkpoint_model_config(const Checkpoint& ckpt);

struct TrackedFrame {
    int frame_index = 0;
    Box box;
    double score = 0;
};

struct TrackRun {
    std::vector<TrackedFrame> frames;
    double seconds = 0;  ///< wall time of the tracked frames (excludes init)
    double fps() const;
};

/// Initializes on frame 0 with the ground-truth box and tracks the rest.
/// Frame 0 is reported with the initial box and a score of 1.
TrackRun track_sequence(const Params& params, const ModelConfig& model, const TrackerConfig& cfg,
                        const SequenceRecord& seq);

inline constexpr const char* kTrajectoryHeader = "frame_index,x,y,w,h,score";
void write_trajectory(std::ostream& out, const std::vector<TrackedFrame>& frames);
std::vector<TrackedFrame> read_trajectory(const std::filesystem::path& file);

} // namespace mmnet
