#include "mmnet/trainer.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <exception>
#include <fstream>
#include <ostream>
#include <thread>

#include "mmnet/config_file.hpp"
#include "mmnet/error.hpp"

namespace fs = std::filesystem;

namespace mmnet {

Strategy parse_strategy(const std::string& name)
{
    if (name == "vid-only") return Strategy::vid_only;
    if (name == "tir-only") return Strategy::tir_only;
    if (name == "retrain") return Strategy::retrain;
    if (name == "finetune") return Strategy::finetune;
    if (name == "mix") return Strategy::mix;
    throw ConfigError("unknown strategy '" + name + "' (expected vid-only, tir-only, retrain, finetune or mix)");
}

std::string to_string(Strategy s)
{
    switch (s) {
    case Strategy::vid_only: return "vid-only";
    case Strategy::tir_only: return "tir-only";
    case Strategy::retrain: return "retrain";
    case Strategy::finetune: return "finetune";
    case Strategy::mix: return "mix";
    }
    return "?";
}

void TrainConfig::validate() const
{
    if (epochs < 0) throw ConfigError("epochs must be >= 0");
    if (batch < 1) throw ConfigError("batch must be >= 1");
    if (pairs_per_epoch < batch) throw ConfigError("pairs_per_epoch must be >= batch");
    if (!(momentum >= 0 && momentum < 1)) throw ConfigError("momentum must lie in [0, 1)");
    if (lr_hi < 0 || lr_lo < 0) throw ConfigError("learning rates must be positive");
    if ((lr_hi > 0) != (lr_lo > 0)) throw ConfigError("lr_hi and lr_lo must be set together");
    if (lr_hi > 0 && lr_hi < lr_lo) throw ConfigError("lr_hi must be >= lr_lo");
    if (lambda1 < 0 || lambda2 < 0 || lambda3 < 0) throw ConfigError("loss weights must be >= 0");
    if (weight_decay < 0) throw ConfigError("weight_decay must be >= 0");
}

std::vector<StagePlan> apply_strategy(Strategy s)
{
    const StagePlan vid{"vid", DataSource::grayscale, {}, 60, 1e-2, 1e-5};
    switch (s) {
    case Strategy::vid_only: return {vid};
    case Strategy::tir_only: return {{"tir", DataSource::tir, {}, 60, 1e-2, 1e-5}};
    case Strategy::retrain: return {vid, {"retrain", DataSource::tir, {}, 30, 1e-3, 1e-5}};
    case Strategy::finetune:
        return {vid,
                {"finetune", DataSource::tir, {FreezePolicy::first3, FreezePolicy::fine_grained_branch}, 30, 1e-3, 1e-5}};
    case Strategy::mix: return {{"mix", DataSource::mixed, {FreezePolicy::classifier_only}, 70, 1e-2, 1e-5}};
    }
    throw ConfigError("unknown strategy");
}

std::vector<StagePlan> plan_stages(const TrainConfig& cfg)
{
    auto stages = apply_strategy(cfg.strategy);
    for (auto& s : stages) {
        if (cfg.epochs > 0) s.epochs = cfg.epochs;
        if (cfg.lr_hi > 0) {
            s.lr_hi = cfg.lr_hi;
            s.lr_lo = cfg.lr_lo;
        }
    }
    return stages;
}

double lr_schedule(double epoch, int total, double lr_hi, double lr_lo)
{
    if (total < 1) throw ConfigError("schedule needs at least one epoch");
    if (total == 1 || epoch <= 0) return lr_hi;
    // Exact at the last epoch; pow would leave an ulp of drift.
    if (epoch >= total - 1) return lr_lo;
    return lr_hi * std::pow(lr_lo / lr_hi, epoch / (total - 1));
}

void sgd_momentum_step(Params& params, const Params& grads, Params& velocity, double lr, double momentum,
                       const std::vector<bool>& frozen)
{
    params.require_congruent(grads);
    params.require_congruent(velocity);
    if (!frozen.empty() && frozen.size() != params.size())
        throw ShapeError("freeze mask has " + std::to_string(frozen.size()) + " entries for " +
                         std::to_string(params.size()) + " parameters");
    const float mu = static_cast<float>(momentum);
    const float step = static_cast<float>(lr);
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto& theta = params[k].value;
        auto& v = velocity[k].value;
        if (!frozen.empty() && frozen[k]) {
            v.fill(0.0f);
            continue;
        }
        const auto& g = grads[k].value;
        for (std::size_t i = 0; i < theta.size(); ++i) {
            v[i] = mu * v[i] + g[i];
            theta[i] -= step * v[i];
        }
    }
}

BranchMask branch_mask(const std::vector<FreezePolicy>& freeze)
{
    BranchMask m;
    for (auto p : freeze) {
        if (p == FreezePolicy::classifier_only) m.cls = false;
        if (p == FreezePolicy::fine_grained_branch) m.fin = false;
    }
    return m;
}

PairSample<float> to_training_sample(const SamplePair& pair, const ModelConfig& cfg)
{
    PairSample<float> s;
    s.exemplar = pair.exemplar;
    s.search = pair.search;
    s.class_id = pair.class_id;
    s.labels = make_label_map(cfg.response_size(), cfg.label_radius, cfg.pos_weight_share, pair.disp_y, pair.disp_x);
    return s;
}

// ---------------------------------------------------------------- checkpoint encoding

namespace {

constexpr char kMagic[4] = {'M', 'M', 'N', '1'};
constexpr const char* kEpochPrefix = "[checkpoint]\nepoch=";

class Writer {
public:
    std::vector<std::uint8_t> bytes;

    template <typename U>
    void put(U v)
    {
        for (std::size_t i = 0; i < sizeof(U); ++i) bytes.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void put_f32(float f) { put(std::bit_cast<std::uint32_t>(f)); }
    void put_raw(const void* p, std::size_t n)
    {
        const auto* b = static_cast<const std::uint8_t*>(p);
        bytes.insert(bytes.end(), b, b + n);
    }
};

class Reader {
public:
    explicit Reader(const std::vector<std::uint8_t>& b) : bytes_(b) {}

    template <typename U>
    U get(const char* what)
    {
        need(sizeof(U), what);
        U v = 0;
        for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<U>(bytes_[pos_ + i]) << (8 * i));
        pos_ += sizeof(U);
        return v;
    }
    std::string get_string(std::size_t n, const char* what)
    {
        need(n, what);
        std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
        pos_ += n;
        return s;
    }
    void need(std::size_t n, const char* what) const
    {
        if (bytes_.size() - pos_ < n)
            throw CheckpointError("truncated checkpoint at byte " + std::to_string(pos_) + " while reading " + what);
    }
    std::size_t pos() const { return pos_; }
    bool done() const { return pos_ == bytes_.size(); }

private:
    const std::vector<std::uint8_t>& bytes_;
    std::size_t pos_ = 0;
};

void put_params(Writer& w, const Params& p)
{
    w.put(static_cast<std::uint32_t>(p.size()));
    for (const auto& e : p) {
        if (e.name.size() > 0xFFFF) throw CheckpointError("parameter name too long: " + e.name);
        w.put(static_cast<std::uint16_t>(e.name.size()));
        w.put_raw(e.name.data(), e.name.size());
        w.put(static_cast<std::uint8_t>(4));
        const Shape s = e.value.shape();
        for (int d : {s.n, s.c, s.h, s.w}) w.put(static_cast<std::uint32_t>(d));
        for (float f : e.value.values()) w.put_f32(f);
    }
}

Params get_params(Reader& r, const char* section)
{
    Params p;
    const auto count = r.get<std::uint32_t>(section);
    for (std::uint32_t k = 0; k < count; ++k) {
        const auto len = r.get<std::uint16_t>("tensor name length");
        std::string name = r.get_string(len, "tensor name");
        const std::size_t rank_at = r.pos();
        const auto rank = r.get<std::uint8_t>("tensor rank");
        if (rank != 4)
            throw CheckpointError("tensor '" + name + "' has rank " + std::to_string(rank) + " at byte " +
                                  std::to_string(rank_at) + " (expected 4)");
        std::uint32_t dims[4];
        for (auto& d : dims) d = r.get<std::uint32_t>("tensor dims");
        const std::uint64_t numel = std::uint64_t{dims[0]} * dims[1] * dims[2] * dims[3];
        if (numel > (std::uint64_t{1} << 31))
            throw CheckpointError("tensor '" + name + "' is implausibly large at byte " + std::to_string(rank_at));
        r.need(numel * 4, "tensor data");
        BasicTensor<float> t(Shape{static_cast<int>(dims[0]), static_cast<int>(dims[1]), static_cast<int>(dims[2]),
                                   static_cast<int>(dims[3])});
        for (std::size_t i = 0; i < numel; ++i) t[i] = std::bit_cast<float>(r.get<std::uint32_t>("tensor data"));
        try {
            p.add(std::move(name), std::move(t));
        } catch (const ConfigError& e) {
            throw CheckpointError(std::string("bad checkpoint: ") + e.what());
        }
    }
    return p;
}

} // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt)
{
    ckpt.params.require_congruent(ckpt.velocity);
    Writer w;
    w.put_raw(kMagic, 4);
    w.put(kCheckpointVersion);
    put_params(w, ckpt.params);
    put_params(w, ckpt.velocity);
    for (auto word : ckpt.rng) w.put(word);
    const std::string echo = kEpochPrefix + std::to_string(ckpt.epoch) + "\n" + ckpt.config;
    w.put(static_cast<std::uint32_t>(echo.size()));
    w.put_raw(echo.data(), echo.size());
    return std::move(w.bytes);
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes)
{
    Reader r(bytes);
    const std::string magic = r.get_string(4, "magic");
    if (std::memcmp(magic.data(), kMagic, 4) != 0) throw CheckpointError("bad checkpoint magic at byte 0");
    const auto version = r.get<std::uint32_t>("version");
    if (version != kCheckpointVersion)
        throw CheckpointError("unsupported checkpoint version " + std::to_string(version) + " at byte 4");
    Checkpoint ck;
    ck.params = get_params(r, "tensor count");
    const std::size_t opt_at = r.pos();
    ck.velocity = get_params(r, "optimizer tensor count");
    try {
        ck.params.require_congruent(ck.velocity);
    } catch (const ShapeError& e) {
        throw CheckpointError("optimizer section at byte " + std::to_string(opt_at) + " does not match parameters: " +
                              e.what());
    }
    for (auto& word : ck.rng) word = r.get<std::uint64_t>("rng state");
    const auto len = r.get<std::uint32_t>("config length");
    const std::size_t echo_at = r.pos();
    std::string echo = r.get_string(len, "config text");
    if (!r.done()) throw CheckpointError("trailing bytes after config at byte " + std::to_string(r.pos()));
    const std::string prefix = kEpochPrefix;
    const auto nl = echo.find('\n', prefix.size());
    if (echo.compare(0, prefix.size(), prefix) != 0 || nl == std::string::npos)
        throw CheckpointError("config text at byte " + std::to_string(echo_at) + " lacks the epoch record");
    try {
        ck.epoch = std::stoi(echo.substr(prefix.size(), nl - prefix.size()));
    } catch (const std::exception&) {
        throw CheckpointError("bad epoch record at byte " + std::to_string(echo_at));
    }
    ck.config = echo.substr(nl + 1);
    return ck;
}

void save_checkpoint(const Checkpoint& ckpt, const fs::path& path)
{
    const auto bytes = encode_checkpoint(ckpt);
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write " + tmp.string());
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw IoError("write failed: " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) throw IoError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

Checkpoint load_checkpoint(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_checkpoint(bytes);
}

Checkpoint make_checkpoint(const TrainState& state, const std::string& config_echo)
{
    return {state.params, state.velocity, state.rng.state(), state.epoch, config_echo};
}

// ---------------------------------------------------------------- training loop

void write_loss_row(std::ostream& out, const BatchRecord& r)
{
    out << r.epoch << ',' << r.batch << ',' << format_double(r.l_dis) << ',' << format_double(r.l_cls) << ','
        << format_double(r.l_fin) << ',' << format_double(r.total) << ',' << format_double(r.lr) << '\n';
}

BatchRecord train_batch(TrainState& state, const ModelConfig& model, const TrainConfig& cfg,
                        const std::vector<SamplePair>& batch, double lr, const std::vector<bool>& frozen, BranchMask mask)
{
    if (batch.empty()) throw InputError("empty batch");
    Params grads = state.params.zeros_like();
    BatchRecord rec;
    const auto weights = cfg.loss_weights();
    for (const auto& pair : batch) {
        const auto sample = to_training_sample(pair, model);
        const auto out = pair_forward_backward(state.params, model, sample, weights, &grads, mask);
        rec.l_dis += out.l_dis;
        rec.l_cls += out.l_cls;
        rec.l_fin += out.l_fin;
        rec.total += out.total;
    }
    const double inv = 1.0 / static_cast<double>(batch.size());
    rec.l_dis *= inv;
    rec.l_cls *= inv;
    rec.l_fin *= inv;
    rec.total *= inv;
    rec.lr = lr;

    double sq = 0;
    for (std::size_t k = 0; k < grads.size(); ++k) {
        auto& g = grads[k].value;
        const bool fixed = !frozen.empty() && frozen[k];
        for (std::size_t i = 0; i < g.size(); ++i) {
            g[i] = static_cast<float>(g[i] * inv);
            if (cfg.weight_decay > 0) g[i] += static_cast<float>(cfg.weight_decay) * state.params[k].value[i];
            if (!std::isfinite(g[i])) throw NumericError("non-finite gradient in " + grads[k].name);
            if (!fixed) sq += static_cast<double>(g[i]) * g[i];
        }
    }
    if (cfg.clip_norm > 0) {
        const double norm = std::sqrt(sq);
        if (norm > cfg.clip_norm) {
            const float s = static_cast<float>(cfg.clip_norm / norm);
            for (auto& e : grads)
                for (auto& v : e.value.values()) v *= s;
        }
    }
    sgd_momentum_step(state.params, grads, state.velocity, lr, cfg.momentum, frozen);
    return rec;
}

namespace {

// Produces one epoch of pairs on a worker thread, in draw order, through a
// queue bounded at twice the batch size.
class EpochProducer {
public:
    EpochProducer(const PairSource& source, Rng& rng, int count, int batch) : queue_(2 * static_cast<std::size_t>(batch))
    {
        worker_ = std::thread([this, &source, &rng, count] {
            try {
                for (int i = 0; i < count; ++i)
                    if (!queue_.push(source(rng))) return;
            } catch (...) {
                error_ = std::current_exception();
            }
            queue_.close();
        });
    }
    ~EpochProducer()
    {
        queue_.close();
        if (worker_.joinable()) worker_.join();
    }
    SamplePair pop()
    {
        auto item = queue_.pop();
        if (!item) {
            if (worker_.joinable()) worker_.join();
            if (error_) std::rethrow_exception(error_);
            throw InputError("pair producer ended early");
        }
        return std::move(*item);
    }
    void finish()
    {
        if (worker_.joinable()) worker_.join();
        if (error_) std::rethrow_exception(error_);
    }

private:
    BoundedQueue<SamplePair> queue_;
    std::thread worker_;
    std::exception_ptr error_;
};

} // namespace

std::vector<BatchRecord> run_stage(TrainState& state, const ModelConfig& model, const TrainConfig& cfg,
                                   const StagePlan& stage, const PairSource& source, const TrainHooks& hooks)
{
    cfg.validate();
    if (stage.epochs < 1) throw ConfigError("stage '" + stage.name + "' has no epochs");
    const auto frozen = freeze_mask(state.params, stage.freeze);
    const auto mask = branch_mask(stage.freeze);
    const int batches = cfg.pairs_per_epoch / cfg.batch;
    const int pairs = batches * cfg.batch;
    std::vector<BatchRecord> log;
    log.reserve(static_cast<std::size_t>(stage.epochs) * batches);

    for (int e = 0; e < stage.epochs; ++e) {
        const double lr = lr_schedule(e, stage.epochs, stage.lr_hi, stage.lr_lo);
        std::optional<EpochProducer> producer;
        if (cfg.prefetch) producer.emplace(source, state.rng, pairs, cfg.batch);
        for (int b = 0; b < batches; ++b) {
            std::vector<SamplePair> batch;
            batch.reserve(static_cast<std::size_t>(cfg.batch));
            for (int i = 0; i < cfg.batch; ++i) batch.push_back(producer ? producer->pop() : source(state.rng));
            BatchRecord rec;
            try {
                rec = train_batch(state, model, cfg, batch, lr, frozen, mask);
            } catch (const NumericError& err) {
                throw NumericError("stage " + stage.name + ", epoch " + std::to_string(state.epoch) + ", batch " +
                                   std::to_string(b) + ": " + err.what());
            }
            rec.epoch = state.epoch;
            rec.batch = b;
            if (hooks.loss_log) write_loss_row(*hooks.loss_log, rec);
            if (hooks.on_batch) hooks.on_batch(rec);
            log.push_back(rec);
        }
        if (producer) producer->finish();
        ++state.epoch;
        if (hooks.loss_log) hooks.loss_log->flush();
        if (!hooks.checkpoint_path.empty()) save_checkpoint(make_checkpoint(state, hooks.config_echo), hooks.checkpoint_path);
    }
    return log;
}

TrainResult train(const TrainConfig& cfg, const ModelConfig& model, const SamplerConfig& sampler, const TrainData& data,
                  const TrainHooks& hooks)
{
    cfg.validate();
    model.validate();
    const auto stages = plan_stages(cfg);
    for (const auto& s : stages) {
        if ((s.data == DataSource::grayscale || s.data == DataSource::mixed) && data.grayscale.empty())
            throw ConfigError("strategy " + to_string(cfg.strategy) + " needs a grayscale dataset");
        if ((s.data == DataSource::tir || s.data == DataSource::mixed) && data.tir.empty())
            throw ConfigError("strategy " + to_string(cfg.strategy) + " needs a TIR dataset");
    }
    for (const auto& seqs : {&data.grayscale, &data.tir})
        for (const auto& s : *seqs)
            if (s.class_id < 0 || s.class_id >= model.num_classes)
                throw ConfigError("sequence " + s.name + " has class_id " + std::to_string(s.class_id) +
                                  " outside [0, " + std::to_string(model.num_classes) + ")");

    TrainHooks h = hooks;
    if (h.config_echo.empty()) {
        RunConfig rc;
        rc.model = model;
        rc.sampler = sampler;
        rc.train = cfg;
        h.config_echo = to_ini(rc);
    }

    TrainState state{build_model<float>(model, cfg.seed), {}, Rng(cfg.seed ^ 0x5eed5eed5eed5eedULL), 0};
    state.velocity = state.params.zeros_like();
    TrainResult result;
    for (const auto& stage : stages) {
        state.velocity.set_zero();
        PairSource source;
        switch (stage.data) {
        case DataSource::grayscale:
            source = [&](Rng& rng) { return sample_pair(data.grayscale, rng, sampler); };
            break;
        case DataSource::tir:
            source = [&](Rng& rng) { return sample_pair(data.tir, rng, sampler); };
            break;
        case DataSource::mixed:
            source = [&](Rng& rng) { return sample_mixed(data.grayscale, data.tir, 0.5, rng, sampler); };
            break;
        }
        auto log = run_stage(state, model, cfg, stage, source, h);
        result.log.insert(result.log.end(), log.begin(), log.end());
    }
    result.checkpoint = make_checkpoint(state, h.config_echo);
    return result;
}

} // namespace mmnet
