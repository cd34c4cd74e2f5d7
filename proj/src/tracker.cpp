#include "mmnet/tracker.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>
#include <sstream>

#include "mmnet/config_file.hpp"
#include "mmnet/error.hpp"

namespace mmnet {

TemplateMode parse_template_mode(const std::string& s)
{
    if (s == "first") return TemplateMode::first;
    if (s == "previous") return TemplateMode::previous;
    if (s == "ema") return TemplateMode::ema;
    throw ConfigError("unknown template_mode '" + s + "' (expected first, previous or ema)");
}

std::string to_string(TemplateMode m)
{
    switch (m) {
    case TemplateMode::first: return "first";
    case TemplateMode::previous: return "previous";
    case TemplateMode::ema: return "ema";
    }
    return "?";
}

void TrackerConfig::validate() const
{
    if (scales < 1 || scales % 2 == 0) throw ConfigError("scales must be a positive odd number");
    if (!(scale_step > 0)) throw ConfigError("scale_step must be > 0");
    auto unit = [](double v, const char* name) {
        if (!(v >= 0 && v <= 1)) throw ConfigError(std::string(name) + " must lie in [0, 1]");
    };
    unit(scale_penalty, "scale_penalty");
    unit(scale_damping, "scale_damping");
    unit(window_weight, "window_weight");
    unit(ema_rate, "ema_rate");
    unit(branch_mix, "branch_mix");
    if (response_upsample < 1) throw ConfigError("response_upsample must be >= 1");
    if (!(context_amount >= 0)) throw ConfigError("context_amount must be >= 0");
}

namespace {

double keys_cubic(double x)
{
    constexpr double a = -0.5;
    x = std::abs(x);
    if (x <= 1) return ((a + 2) * x - (a + 3)) * x * x + 1;
    if (x < 2) return ((a * x - 5 * a) * x + 8 * a) * x - 4 * a;
    return 0;
}

// Resamples along one axis: `n` samples with `stride` apart, `count` lines.
std::vector<double> resize_axis(const std::vector<double>& in, int lines, int n, int factor, bool rows)
{
    const int m = n * factor;
    std::vector<double> out(static_cast<std::size_t>(lines) * m);
    for (int u = 0; u < m; ++u) {
        const double src = (u + 0.5) / factor - 0.5;
        const int i0 = static_cast<int>(std::floor(src));
        const double t = src - i0;
        double wts[4];
        int idx[4];
        for (int k = 0; k < 4; ++k) {
            wts[k] = keys_cubic(t - (k - 1));
            idx[k] = std::clamp(i0 + k - 1, 0, n - 1);
        }
        for (int l = 0; l < lines; ++l) {
            double acc = 0;
            for (int k = 0; k < 4; ++k) {
                const std::size_t at = rows ? static_cast<std::size_t>(idx[k]) * lines + l
                                            : static_cast<std::size_t>(l) * n + idx[k];
                acc += wts[k] * in[at];
            }
            if (rows)
                out[static_cast<std::size_t>(u) * lines + l] = acc;
            else
                out[static_cast<std::size_t>(l) * m + u] = acc;
        }
    }
    return out;
}

} // namespace

std::vector<double> bicubic_upsample(const std::vector<double>& in, int h, int w, int factor)
{
    if (static_cast<std::size_t>(h) * w != in.size()) throw ShapeError("bicubic_upsample: size mismatch");
    if (factor == 1) return in;
    auto horiz = resize_axis(in, h, w, factor, false);  // h x (w*f)
    return resize_axis(horiz, w * factor, h, factor, true);
}

Params prune_classifier(const Params& params)
{
    Params out;
    for (const auto& e : params)
        if (e.name.rfind("heads.cls.", 0) != 0) out.add(e.name, e.value);
    return out;
}

ModelConfig checkpoint_model_config(const Checkpoint& ckpt)
{
    return parse_config(ckpt.config, "checkpoint config").model;
}

TrackerSession::TrackerSession(const Params& params, const ModelConfig& model, const TrackerConfig& cfg,
                               const GrayImage& frame0, const Box& box0)
    : params_(prune_classifier(params)), model_(model), cfg_(cfg), box_(box0)
{
    cfg_.validate();
    model_.validate();
    if (!(box0.w > 0) || !(box0.h > 0)) throw InputError("degenerate initial box (w or h <= 0)");
    base_w_ = box0.w;
    base_h_ = box0.h;
    const auto& bb = model_.backbone;
    const Tensor exemplar = crop_patch(frame0, box_, cfg_.context_amount, bb.exemplar_size);
    features_ = template_features(params_, model_, exemplar);
    filters_ = template_filters(features_, model_);

    const int m = model_.response_size() * cfg_.response_upsample;
    const auto hann = hann_window<double>(m);
    double total = 0;
    window_.resize(static_cast<std::size_t>(m) * m);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j) total += window_[static_cast<std::size_t>(i) * m + j] = hann[i] * hann[j];
    for (auto& v : window_) v /= total;
}

bool TrackerSession::update_template(const TemplateFeatures<float>& fresh)
{
    if (cfg_.template_mode == TemplateMode::first) {
        if (!warned_) {
            std::clog << "warning: template update ignored in template_mode=first\n";
            warned_ = true;
        }
        return false;
    }
    if (!(fresh.dis.shape() == features_.dis.shape()) || !(fresh.fin.shape() == features_.fin.shape()))
        throw ShapeError("template update has mismatched feature shapes");
    if (cfg_.template_mode == TemplateMode::previous) {
        features_ = fresh;
    } else {
        const float r = static_cast<float>(cfg_.ema_rate);
        const float keep = static_cast<float>(1.0 - cfg_.ema_rate);
        for (std::size_t i = 0; i < features_.dis.size(); ++i) features_.dis[i] = keep * features_.dis[i] + r * fresh.dis[i];
        for (std::size_t i = 0; i < features_.fin.size(); ++i) features_.fin[i] = keep * features_.fin[i] + r * fresh.fin[i];
    }
    filters_ = template_filters(features_, model_);
    return true;
}

TrackStep TrackerSession::track(const GrayImage& frame)
{
    const auto& bb = model_.backbone;
    const int n = model_.response_size();
    const int up = cfg_.response_upsample;
    const int m = n * up;
    const double side_z = context_side(box_, cfg_.context_amount);
    const double side_x = side_z * bb.search_size / bb.exemplar_size;
    const int mid = (cfg_.scales - 1) / 2;

    struct Candidate {
        std::vector<double> raw;  // fused, n x n
        double peak = 0;
        double factor = 1;
    };
    std::vector<Candidate> cands(static_cast<std::size_t>(cfg_.scales));
    int best = mid;
    double best_score = -std::numeric_limits<double>::infinity();
    // The central scale is evaluated first so ties keep the current size.
    std::vector<int> order{mid};
    for (int s = 0; s < cfg_.scales; ++s)
        if (s != mid) order.push_back(s);
    for (int s : order) {
        auto& c = cands[static_cast<std::size_t>(s)];
        c.factor = std::pow(cfg_.scale_step, s - mid);
        const Tensor search = crop_square(frame, box_.cx(), box_.cy(), side_x * c.factor, bb.search_size);
        const auto resp = search_responses(params_, model_, filters_, search);
        const auto fused = fuse_responses(resp.dis, resp.fin, cfg_.branch_mix);
        c.raw.assign(fused.data(), fused.data() + fused.size());
        c.peak = *std::max_element(c.raw.begin(), c.raw.end());
        double score = c.peak;
        // A penalty always lowers the score, whatever the sign of the peak.
        if (s != mid) score = score >= 0 ? score * cfg_.scale_penalty : score / std::max(cfg_.scale_penalty, 1e-12);
        if (score > best_score) {
            best_score = score;
            best = s;
        }
    }

    const auto& chosen = cands[static_cast<std::size_t>(best)];
    auto map = bicubic_upsample(chosen.raw, n, n, up);
    const double lo = *std::min_element(map.begin(), map.end());
    double sum = 0;
    for (auto& v : map) sum += (v -= lo);
    const double norm = sum > 0 ? 1.0 / sum : 0.0;
    std::size_t arg = 0;
    double arg_v = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < map.size(); ++i) {
        const double v = (1 - cfg_.window_weight) * map[i] * norm + cfg_.window_weight * window_[i];
        if (v > arg_v) {
            arg_v = v;
            arg = i;
        }
    }
    const double ry = static_cast<double>(arg / m) - (m - 1) / 2.0;
    const double rx = static_cast<double>(arg % m) - (m - 1) / 2.0;
    // Upsampled cells -> search-crop pixels -> frame pixels.
    const double to_frame = static_cast<double>(bb.total_stride()) / up * (side_x * chosen.factor) / bb.search_size;
    double cx = box_.cx() + rx * to_frame;
    double cy = box_.cy() + ry * to_frame;
    const double scale = 1.0 + cfg_.scale_damping * (chosen.factor - 1.0);
    double w = std::clamp(box_.w * scale, 0.1 * base_w_, 10.0 * base_w_);
    double h = std::clamp(box_.h * scale, 0.1 * base_h_, 10.0 * base_h_);
    cx = std::clamp(cx, 0.0, static_cast<double>(frame.width));
    cy = std::clamp(cy, 0.0, static_cast<double>(frame.height));
    box_ = Box::from_center(cx, cy, w, h);

    if (cfg_.template_mode != TemplateMode::first) {
        const Tensor exemplar = crop_patch(frame, box_, cfg_.context_amount, bb.exemplar_size);
        update_template(template_features(params_, model_, exemplar));
    }
    return {box_, chosen.peak, best};
}

double TrackRun::fps() const
{
    const double n = frames.size() > 1 ? static_cast<double>(frames.size() - 1) : 0.0;
    return seconds > 0 ? n / seconds : 0.0;
}

TrackRun track_sequence(const Params& params, const ModelConfig& model, const TrackerConfig& cfg,
                        const SequenceRecord& seq)
{
    if (seq.frames.empty() || seq.boxes.empty()) throw InputError("empty sequence " + seq.name);
    TrackRun run;
    TrackerSession session(params, model, cfg, seq.frames[0], seq.boxes[0]);
    run.frames.push_back({0, seq.boxes[0], 1.0});
    const auto t0 = std::chrono::steady_clock::now();
    for (std::size_t f = 1; f < seq.frames.size(); ++f) {
        const auto step = session.track(seq.frames[f]);
        run.frames.push_back({static_cast<int>(f), step.box, step.score});
    }
    run.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return run;
}

void write_trajectory(std::ostream& out, const std::vector<TrackedFrame>& frames)
{
    out << kTrajectoryHeader << '\n';
    for (const auto& f : frames)
        out << f.frame_index << ',' << format_double(f.box.x) << ',' << format_double(f.box.y) << ','
            << format_double(f.box.w) << ',' << format_double(f.box.h) << ',' << format_double(f.score) << '\n';
}

std::vector<TrackedFrame> read_trajectory(const std::filesystem::path& file)
{
    std::ifstream in(file);
    if (!in) throw IoError("cannot open " + file.string());
    std::string line;
    if (!std::getline(in, line)) throw FormatError(file.string() + ": empty trajectory file");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != kTrajectoryHeader) throw FormatError(file.string() + ": expected header '" + kTrajectoryHeader + "'");
    std::vector<TrackedFrame> out;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (cells.size() != 6) throw FormatError(file.string() + " line " + std::to_string(line_no) + ": expected 6 fields");
        try {
            TrackedFrame f;
            f.frame_index = static_cast<int>(parse_double(cells[0]));
            f.box = {parse_double(cells[1]), parse_double(cells[2]), parse_double(cells[3]), parse_double(cells[4])};
            f.score = parse_double(cells[5]);
            out.push_back(f);
        } catch (const FormatError& e) {
            throw FormatError(file.string() + " line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

} // namespace mmnet
