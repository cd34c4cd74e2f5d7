#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "mmnet/backbone.hpp"
#include "mmnet/dataio.hpp"
#include "mmnet/model.hpp"
#include "mmnet/rng.hpp"

namespace mmnet {

enum class Strategy { vid_only, tir_only, retrain, finetune, mix };
Strategy parse_strategy(const std::string& name);
std::string to_string(Strategy s);

struct TrainConfig {
    Strategy strategy = Strategy::vid_only;
    int epochs = 0;              ///< 0: per-stage plan; otherwise overrides every stage
    int pairs_per_epoch = 2000;
    int batch = 8;
    double momentum = 0.9;
    double lr_hi = 0;            ///< 0: per-stage plan
    double lr_lo = 0;
    double lambda1 = 1.0;        ///< discriminative matching
    double lambda2 = 1.0;        ///< classification
    double lambda3 = 1.0;        ///< fine-grained matching
    std::uint64_t seed = 1;
    double weight_decay = 0.0;
    double clip_norm = 10.0;     ///< global gradient norm cap; <= 0 disables
    bool prefetch = true;        ///< crop pairs on a producer thread

    LossWeights loss_weights() const { return {lambda1, lambda2, lambda3}; }
    void validate() const;
};

enum class DataSource { grayscale, tir, mixed };

struct StagePlan {
    std::string name;
    DataSource data = DataSource::grayscale;
    std::vector<FreezePolicy> freeze;
    int epochs = 0;
    double lr_hi = 0;
    double lr_lo = 0;
};

/// Stage list of a strategy with the plan defaults (no overrides applied).
std::vector<StagePlan> apply_strategy(Strategy s);

/// apply_strategy with the epochs / lr overrides of `cfg` applied.
std::vector<StagePlan> plan_stages(const TrainConfig& cfg);

/// lr_hi * (lr_lo / lr_hi)^(epoch / (total - 1)); lr_hi when total == 1.
double lr_schedule(double epoch, int total, double lr_hi, double lr_lo);

/// v <- mu*v + g; theta <- theta - lr*v. Frozen entries keep theta and get v = 0.
void sgd_momentum_step(Params& params, const Params& grads, Params& velocity, double lr, double momentum,
                       const std::vector<bool>& frozen = {});

/// Which branch backward passes run under a freeze set.
BranchMask branch_mask(const std::vector<FreezePolicy>& freeze);

/// Converts a sampled pair into a training example with its label map.
PairSample<float> to_training_sample(const SamplePair& pair, const ModelConfig& cfg);

struct Checkpoint {
    Params params;
    Params velocity;
    Rng::State rng{};
    int epoch = 0;              ///< completed epochs
    std::string config;         ///< configuration text the run used
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);
std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);

struct BatchRecord {
    int epoch = 0;
    int batch = 0;
    double l_dis = 0, l_cls = 0, l_fin = 0, total = 0;
    double lr = 0;
};

inline constexpr const char* kLossLogHeader = "epoch,batch,l_dis,l_cls,l_fin,total,lr";
void write_loss_row(std::ostream& out, const BatchRecord& r);

struct TrainState {
    Params params;
    Params velocity;
    Rng rng;
    int epoch = 0;  ///< completed epochs over all stages
};

using PairSource = std::function<SamplePair(Rng&)>;

struct TrainHooks {
    std::ostream* loss_log = nullptr;             ///< rows only; write the header yourself
    std::filesystem::path checkpoint_path;        ///< written atomically after every epoch when set
    std::string config_echo;                      ///< stored in checkpoints
    std::function<void(const BatchRecord&)> on_batch;
};

/// Mean losses of one batch after one masked SGD step.
BatchRecord train_batch(TrainState& state, const ModelConfig& model, const TrainConfig& cfg,
                        const std::vector<SamplePair>& batch, double lr, const std::vector<bool>& frozen,
                        BranchMask mask);

/// Runs one stage: epochs x (pairs_per_epoch / batch) batches drawn from `source`.
std::vector<BatchRecord> run_stage(TrainState& state, const ModelConfig& model, const TrainConfig& cfg,
                                   const StagePlan& stage, const PairSource& source, const TrainHooks& hooks = {});

struct TrainData {
    std::vector<SequenceRecord> grayscale;
    std::vector<SequenceRecord> tir;
};

struct TrainResult {
    Checkpoint checkpoint;
    std::vector<BatchRecord> log;
};

/// Whole strategy: fresh model from cfg.seed, stages in order, momentum reset
/// between stages.
TrainResult train(const TrainConfig& cfg, const ModelConfig& model, const SamplerConfig& sampler,
                  const TrainData& data, const TrainHooks& hooks = {});

Checkpoint make_checkpoint(const TrainState& state, const std::string& config_echo);

} // namespace mmnet
