#pragma once

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "mmnet/rng.hpp"
#include "mmnet/tensor.hpp"

namespace mmnet {

/// Axis-aligned box in pixels, top-left origin.
struct Box {
    double x = 0, y = 0, w = 0, h = 0;

    double cx() const { return x + w / 2.0; }
    double cy() const { return y + h / 2.0; }
    static Box from_center(double cx, double cy, double w, double h) { return {cx - w / 2.0, cy - h / 2.0, w, h}; }
    bool operator==(const Box&) const = default;
};

/// 8-bit single-channel image, row-major.
struct GrayImage {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels;

    GrayImage() = default;
    GrayImage(int w, int h, std::uint8_t fill = 0) : width(w), height(h), pixels(static_cast<std::size_t>(w) * h, fill) {}
    std::uint8_t at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
    std::uint8_t& at(int x, int y) { return pixels[static_cast<std::size_t>(y) * width + x]; }
    double mean() const;
    bool operator==(const GrayImage&) const = default;
};

enum class Domain { grayscale, tir };
Domain parse_domain(const std::string& s);
std::string to_string(Domain d);

struct SequenceRecord {
    std::string name;
    std::vector<GrayImage> frames;
    std::vector<Box> boxes;
    int class_id = 0;
    Domain domain = Domain::tir;

    bool operator==(const SequenceRecord&) const = default;
};

// Directory format:
//   <seq>/frames/%08d.pgm   binary P5, 8-bit (PNG accepted on read)
//   <seq>/groundtruth.txt   "x,y,w,h" per frame
//   <seq>/meta.txt          "class_id=<int>", "domain=<grayscale|tir>"
SequenceRecord load_sequence(const std::filesystem::path& dir);
void save_sequence(const SequenceRecord& seq, const std::filesystem::path& dir);

GrayImage read_image(const std::filesystem::path& file);
void write_pgm(const GrayImage& img, const std::filesystem::path& file);

/// Shortest decimal text that parses back to the same double.
std::string format_double(double v);
double parse_double(std::string_view text);

/// Side of the context crop around a box: sqrt((w+2p)(h+2p)), p = context*(w+h)/2.
double context_side(const Box& box, double context_amount);

/// Square window of `side` pixels centered at (cx, cy), bilinearly resampled
/// to out_size x out_size and scaled to [0, 1]. Samples outside the frame take
/// the frame mean.
Tensor crop_square(const GrayImage& frame, double cx, double cy, double side, int out_size);

/// Context crop around `box` (crop_square with context_side).
Tensor crop_patch(const GrayImage& frame, const Box& box, double context_amount, int out_size);

struct SamplerConfig {
    int exemplar_size = 127;
    int search_size = 255;
    double context_amount = 0.5;
    int stride = 8;
    int max_jitter = 8;   ///< search-crop pixels
    int jitter_step = 1;  ///< jitter is a multiple of this
    int max_gap = 100;
};

struct SamplePair {
    Tensor exemplar;  ///< (1,1,127,127)
    Tensor search;    ///< (1,1,255,255)
    int class_id = 0;
    /// Target offset from the search-crop center, in response cells.
    double disp_y = 0;
    double disp_x = 0;
};

/// Uniform sequence, then a uniform frame pair (distinct frames, gap <= max_gap).
SamplePair sample_pair(const std::vector<SequenceRecord>& dataset, Rng& rng, const SamplerConfig& cfg = {});

/// Builds the pair from explicit frames and a search-crop jitter.
SamplePair make_pair(const SequenceRecord& seq, std::size_t exemplar_frame, std::size_t search_frame, int jitter_x,
                     int jitter_y, const SamplerConfig& cfg = {});

/// One mixed draw: dataset a with probability p_a, else b. An empty chosen
/// dataset falls back to the other; both empty is an InputError.
SamplePair sample_mixed(const std::vector<SequenceRecord>& a, const std::vector<SequenceRecord>& b, double p_a, Rng& rng,
                        const SamplerConfig& cfg = {});

/// Draws from dataset a with probability wa / (wa + wb), else b.
class MixedPairStream {
public:
    MixedPairStream(const std::vector<SequenceRecord>* a, const std::vector<SequenceRecord>* b, double weight_a,
                    double weight_b, std::uint64_t seed, SamplerConfig cfg = {});

    SamplePair next();
    /// Domain index (0 = a, 1 = b) of the next draw, consuming one choice.
    int next_domain();
    Rng& rng() { return rng_; }

private:
    const std::vector<SequenceRecord>* a_;
    const std::vector<SequenceRecord>* b_;
    double p_a_;
    Rng rng_;
    SamplerConfig cfg_;
};

/// Smooth trajectory: start + velocity*t + amplitude*sin(2*pi*t/period + phase),
/// reflected into the allowed band per axis.
struct Motion {
    double x0 = 0, y0 = 0;
    double vx = 0, vy = 0;
    double ax = 0, ay = 0;
    double period = 40;
    double phase = 0;
};

struct SynthSpec {
    int frames = 100;
    int size = 256;
    double target_size = 24;
    int n_distractors = 0;
    double noise_std = 0;
    double background = 40;
    double target_level = 220;
    std::optional<Motion> target_motion;  ///< drawn from the seed when absent
    int class_id = 0;
    Domain domain = Domain::tir;
    std::string name = "synth";
};

/// Center of `m` at frame t, reflected into [lo, hi] on both axes.
std::pair<double, double> motion_center(const Motion& m, int t, double lo, double hi);

double box_iou(const Box& a, const Box& b);

/// White-hot synthetic sequence: dark noisy background, bright square target,
/// same-looking distractors that never overlap the target by IoU > 0.2.
SequenceRecord synth_sequence(const SynthSpec& spec, std::uint64_t seed);

/// Blocking bounded FIFO between a producer thread and the trainer.
template <typename T>
class BoundedQueue {
public:
    explicit BoundedQueue(std::size_t capacity) : capacity_(capacity) {}

    /// Blocks while full. Returns false once closed.
    bool push(T item)
    {
        std::unique_lock lock(mu_);
        not_full_.wait(lock, [&] { return items_.size() < capacity_ || closed_; });
        if (closed_) return false;
        items_.push_back(std::move(item));
        not_empty_.notify_one();
        return true;
    }

    /// Blocks while empty. Empty optional once closed and drained.
    std::optional<T> pop()
    {
        std::unique_lock lock(mu_);
        not_empty_.wait(lock, [&] { return !items_.empty() || closed_; });
        if (items_.empty()) return std::nullopt;
        T item = std::move(items_.front());
        items_.pop_front();
        not_full_.notify_one();
        return item;
    }

    void close()
    {
        std::lock_guard lock(mu_);
        closed_ = true;
        not_full_.notify_all();
        not_empty_.notify_all();
    }

    std::size_t size() const
    {
        std::lock_guard lock(mu_);
        return items_.size();
    }

private:
    std::size_t capacity_;
    mutable std::mutex mu_;
    std::condition_variable not_full_, not_empty_;
    std::deque<T> items_;
    bool closed_ = false;
};

} // namespace mmnet
