#include "mmnet/dataio.hpp"

#include <png.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>

#include "mmnet/error.hpp"

namespace fs = std::filesystem;

namespace mmnet {

double GrayImage::mean() const
{
    if (pixels.empty()) return 0.0;
    std::uint64_t s = 0;
    for (auto p : pixels) s += p;
    return static_cast<double>(s) / static_cast<double>(pixels.size());
}

Domain parse_domain(const std::string& s)
{
    if (s == "grayscale") return Domain::grayscale;
    if (s == "tir") return Domain::tir;
    throw FormatError("unknown domain '" + s + "' (expected grayscale or tir)");
}

std::string to_string(Domain d) { return d == Domain::grayscale ? "grayscale" : "tir"; }

std::string format_double(double v)
{
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

double parse_double(std::string_view text)
{
    while (!text.empty() && (text.front() == ' ' || text.front() == '\t')) text.remove_prefix(1);
    while (!text.empty() && (text.back() == ' ' || text.back() == '\t' || text.back() == '\r')) text.remove_suffix(1);
    if (!text.empty() && text.front() == '+') text.remove_prefix(1);
    double v = 0;
    auto res = std::from_chars(text.data(), text.data() + text.size(), v);
    if (res.ec != std::errc() || res.ptr != text.data() + text.size())
        throw FormatError("not a number: '" + std::string(text) + "'");
    return v;
}

// ---------------------------------------------------------------- images

namespace {

GrayImage read_pgm(const fs::path& file)
{
    std::ifstream in(file, std::ios::binary);
    if (!in) throw IoError("cannot open " + file.string());
    std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::size_t pos = 0;
    auto skip_space = [&] {
        while (pos < data.size()) {
            if (data[pos] == '#') {
                while (pos < data.size() && data[pos] != '\n') ++pos;
            } else if (std::isspace(static_cast<unsigned char>(data[pos]))) {
                ++pos;
            } else {
                break;
            }
        }
    };
    auto read_int = [&](const char* what) {
        skip_space();
        long v = 0;
        auto res = std::from_chars(data.data() + pos, data.data() + data.size(), v);
        if (res.ec != std::errc() || v <= 0)
            throw FormatError(file.string() + ": bad PGM " + what + " at byte " + std::to_string(pos));
        pos = static_cast<std::size_t>(res.ptr - data.data());
        return v;
    };
    if (data.size() < 2 || data[0] != 'P' || data[1] != '5') throw FormatError(file.string() + ": not a binary PGM (P5)");
    pos = 2;
    const long w = read_int("width");
    const long h = read_int("height");
    const long maxval = read_int("maxval");
    if (maxval != 255) throw FormatError(file.string() + ": only 8-bit PGM is supported (maxval " + std::to_string(maxval) + ")");
    if (pos >= data.size() || !std::isspace(static_cast<unsigned char>(data[pos])))
        throw FormatError(file.string() + ": malformed PGM header");
    ++pos;
    const std::size_t n = static_cast<std::size_t>(w) * static_cast<std::size_t>(h);
    if (data.size() - pos < n)
        throw FormatError(file.string() + ": truncated PGM at byte " + std::to_string(data.size()));
    GrayImage img(static_cast<int>(w), static_cast<int>(h));
    std::copy_n(reinterpret_cast<const std::uint8_t*>(data.data() + pos), n, img.pixels.begin());
    return img;
}

GrayImage read_png(const fs::path& file)
{
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, file.string().c_str()))
        throw FormatError(file.string() + ": " + image.message);
    image.format = PNG_FORMAT_RGB;
    std::vector<std::uint8_t> rgb(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, rgb.data(), 0, nullptr)) {
        png_image_free(&image);
        throw FormatError(file.string() + ": " + image.message);
    }
    GrayImage img(static_cast<int>(image.width), static_cast<int>(image.height));
    for (std::size_t i = 0; i < img.pixels.size(); ++i) {
        const double y = 0.299 * rgb[3 * i] + 0.587 * rgb[3 * i + 1] + 0.114 * rgb[3 * i + 2];
        img.pixels[i] = static_cast<std::uint8_t>(std::clamp(std::lround(y), 0L, 255L));
    }
    return img;
}

std::string lower_ext(const fs::path& p)
{
    std::string e = p.extension().string();
    std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return e;
}

void write_text_atomic(const fs::path& file, const std::string& text)
{
    std::ofstream out(file, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + file.string());
    out << text;
    if (!out) throw IoError("write failed: " + file.string());
}

} // namespace

GrayImage read_image(const fs::path& file)
{
    const auto ext = lower_ext(file);
    if (ext == ".pgm") return read_pgm(file);
    if (ext == ".png") return read_png(file);
    throw FormatError(file.string() + ": unsupported image type");
}

void write_pgm(const GrayImage& img, const fs::path& file)
{
    std::ofstream out(file, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + file.string());
    out << "P5\n" << img.width << ' ' << img.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
    if (!out) throw IoError("write failed: " + file.string());
}

// ---------------------------------------------------------------- sequences

SequenceRecord load_sequence(const fs::path& dir)
{
    if (!fs::is_directory(dir)) throw IoError("not a sequence directory: " + dir.string());
    const fs::path frames_dir = dir / "frames";
    if (!fs::is_directory(frames_dir)) throw IoError("missing frames/ in " + dir.string());

    std::map<long, fs::path> numbered;
    for (const auto& entry : fs::directory_iterator(frames_dir)) {
        if (!entry.is_regular_file()) continue;
        const auto ext = lower_ext(entry.path());
        if (ext != ".pgm" && ext != ".png") continue;
        const std::string stem = entry.path().stem().string();
        long idx = 0;
        auto res = std::from_chars(stem.data(), stem.data() + stem.size(), idx);
        if (stem.empty() || res.ec != std::errc() || res.ptr != stem.data() + stem.size())
            throw FormatError("frame name is not numeric: " + entry.path().filename().string());
        if (!numbered.emplace(idx, entry.path()).second)
            throw FormatError("duplicate frame number " + std::to_string(idx) + " in " + frames_dir.string());
    }
    if (numbered.empty()) throw FormatError("no frames in " + frames_dir.string());
    long expect = numbered.begin()->first;
    for (const auto& [idx, path] : numbered) {
        if (idx != expect)
            throw FormatError("frame numbering is not consecutive: expected " + std::to_string(expect) + ", found " +
                              path.filename().string());
        ++expect;
    }

    SequenceRecord seq;
    seq.name = dir.filename().string();
    if (seq.name.empty()) seq.name = dir.parent_path().filename().string();
    for (const auto& [idx, path] : numbered) seq.frames.push_back(read_image(path));

    std::ifstream gt(dir / "groundtruth.txt");
    if (!gt) throw IoError("cannot open " + (dir / "groundtruth.txt").string());
    std::string line;
    int line_no = 0;
    while (std::getline(gt, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) {
            if (static_cast<std::size_t>(line_no) > seq.frames.size()) continue;
            throw FormatError("groundtruth.txt line " + std::to_string(line_no) + ": empty");
        }
        double v[4];
        std::string_view rest(line);
        for (int k = 0; k < 4; ++k) {
            const auto comma = rest.find(',');
            if ((k < 3) == (comma == std::string_view::npos))
                throw FormatError("groundtruth.txt line " + std::to_string(line_no) + ": expected x,y,w,h");
            try {
                v[k] = parse_double(rest.substr(0, comma));
            } catch (const FormatError& e) {
                throw FormatError("groundtruth.txt line " + std::to_string(line_no) + ": " + e.what());
            }
            if (comma != std::string_view::npos) rest.remove_prefix(comma + 1);
        }
        seq.boxes.push_back({v[0], v[1], v[2], v[3]});
    }
    if (seq.boxes.size() < seq.frames.size())
        throw FormatError("groundtruth.txt line " + std::to_string(seq.boxes.size() + 1) + ": missing (" +
                          std::to_string(seq.frames.size()) + " frames)");
    if (seq.boxes.size() > seq.frames.size())
        throw FormatError("groundtruth.txt has " + std::to_string(seq.boxes.size()) + " boxes for " +
                          std::to_string(seq.frames.size()) + " frames");

    std::ifstream meta(dir / "meta.txt");
    if (meta) {
        line_no = 0;
        while (std::getline(meta, line)) {
            ++line_no;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (line.empty()) continue;
            const auto eq = line.find('=');
            if (eq == std::string::npos)
                throw FormatError("meta.txt line " + std::to_string(line_no) + ": expected key=value");
            const std::string key = line.substr(0, eq), value = line.substr(eq + 1);
            if (key == "class_id") {
                int c = 0;
                auto res = std::from_chars(value.data(), value.data() + value.size(), c);
                if (res.ec != std::errc() || res.ptr != value.data() + value.size() || c < 0)
                    throw FormatError("meta.txt line " + std::to_string(line_no) + ": bad class_id");
                seq.class_id = c;
            } else if (key == "domain") {
                seq.domain = parse_domain(value);
            } else {
                throw FormatError("meta.txt line " + std::to_string(line_no) + ": unknown key '" + key + "'");
            }
        }
    }
    return seq;
}

void save_sequence(const SequenceRecord& seq, const fs::path& dir)
{
    if (seq.frames.size() != seq.boxes.size()) throw InputError("sequence has a box count different from its frame count");
    std::error_code ec;
    fs::create_directories(dir / "frames", ec);
    if (ec) throw IoError("cannot create " + (dir / "frames").string() + ": " + ec.message());
    for (std::size_t i = 0; i < seq.frames.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "%08zu.pgm", i + 1);
        write_pgm(seq.frames[i], dir / "frames" / name);
    }
    std::string gt;
    for (const auto& b : seq.boxes)
        gt += format_double(b.x) + "," + format_double(b.y) + "," + format_double(b.w) + "," + format_double(b.h) + "\n";
    write_text_atomic(dir / "groundtruth.txt", gt);
    write_text_atomic(dir / "meta.txt",
                      "class_id=" + std::to_string(seq.class_id) + "\ndomain=" + to_string(seq.domain) + "\n");
}

// ---------------------------------------------------------------- crops

double context_side(const Box& box, double context_amount)
{
    const double p = context_amount * (box.w + box.h) / 2.0;
    return std::sqrt((box.w + 2 * p) * (box.h + 2 * p));
}

Tensor crop_square(const GrayImage& frame, double cx, double cy, double side, int out_size)
{
    if (out_size < 8) throw InputError("crop size must be >= 8");
    if (!(side > 0) || !std::isfinite(side)) throw InputError("crop side must be positive");
    if (frame.width <= 0 || frame.height <= 0) throw InputError("empty frame");
    const float fill = static_cast<float>(frame.mean());
    const double step = side / out_size;
    const double x0 = cx - side / 2.0 - 0.5;
    const double y0 = cy - side / 2.0 - 0.5;

    auto pix = [&](long x, long y) -> float {
        if (x < 0 || y < 0 || x >= frame.width || y >= frame.height) return fill;
        return frame.pixels[static_cast<std::size_t>(y) * frame.width + x];
    };

    Tensor out(Shape{1, 1, out_size, out_size});
    std::vector<long> xi(out_size);
    std::vector<float> xf(out_size);
    for (int j = 0; j < out_size; ++j) {
        const double u = x0 + (j + 0.5) * step;
        const double fl = std::floor(u);
        xi[j] = static_cast<long>(fl);
        xf[j] = static_cast<float>(u - fl);
    }
    for (int i = 0; i < out_size; ++i) {
        const double v = y0 + (i + 0.5) * step;
        const double fl = std::floor(v);
        const long yi = static_cast<long>(fl);
        const float fy = static_cast<float>(v - fl);
        for (int j = 0; j < out_size; ++j) {
            const float fx = xf[j];
            const float top = pix(xi[j], yi) * (1 - fx) + pix(xi[j] + 1, yi) * fx;
            const float bot = pix(xi[j], yi + 1) * (1 - fx) + pix(xi[j] + 1, yi + 1) * fx;
            out(0, 0, i, j) = (top * (1 - fy) + bot * fy) / 255.0f;
        }
    }
    return out;
}

Tensor crop_patch(const GrayImage& frame, const Box& box, double context_amount, int out_size)
{
    if (!(box.w > 0) || !(box.h > 0)) throw InputError("degenerate box (w or h <= 0)");
    return crop_square(frame, box.cx(), box.cy(), context_side(box, context_amount), out_size);
}

// ---------------------------------------------------------------- pair sampling

SamplePair make_pair(const SequenceRecord& seq, std::size_t exemplar_frame, std::size_t search_frame, int jitter_x,
                     int jitter_y, const SamplerConfig& cfg)
{
    if (exemplar_frame >= seq.frames.size() || search_frame >= seq.frames.size())
        throw InputError("frame index out of range in " + seq.name);
    const Box& bz = seq.boxes[exemplar_frame];
    const Box& by = seq.boxes[search_frame];
    SamplePair pair;
    pair.class_id = seq.class_id;
    pair.exemplar = crop_patch(seq.frames[exemplar_frame], bz, cfg.context_amount, cfg.exemplar_size);
    if (!(by.w > 0) || !(by.h > 0)) throw InputError("degenerate box (w or h <= 0)");
    // Search window is the exemplar window scaled by search/exemplar, shifted by
    // the jitter (given in search-crop pixels).
    const double side_z = context_side(by, cfg.context_amount);
    const double side_x = side_z * cfg.search_size / cfg.exemplar_size;
    const double px = side_x / cfg.search_size;
    pair.search = crop_square(seq.frames[search_frame], by.cx() + jitter_x * px, by.cy() + jitter_y * px, side_x,
                              cfg.search_size);
    pair.disp_x = -static_cast<double>(jitter_x) / cfg.stride;
    pair.disp_y = -static_cast<double>(jitter_y) / cfg.stride;
    return pair;
}

namespace {

bool usable(const SequenceRecord& s)
{
    if (s.frames.size() < 2) return false;
    return std::any_of(s.boxes.begin(), s.boxes.end(), [](const Box& b) { return b.w > 0 && b.h > 0; });
}

int draw_jitter(Rng& rng, const SamplerConfig& cfg)
{
    const int step = std::max(1, cfg.jitter_step);
    const int k = cfg.max_jitter / step;
    return static_cast<int>(rng.uniform_int(-k, k)) * step;
}

} // namespace

SamplePair sample_pair(const std::vector<SequenceRecord>& dataset, Rng& rng, const SamplerConfig& cfg)
{
    if (dataset.empty()) throw InputError("cannot sample pairs from an empty dataset");
    if (cfg.max_gap < 1) throw ConfigError("max_gap must be >= 1");
    for (int attempt = 0; attempt < 100; ++attempt) {
        const auto& seq = dataset[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(dataset.size()) - 1))];
        if (!usable(seq)) continue;
        const auto n = static_cast<std::int64_t>(seq.frames.size());
        const auto i = rng.uniform_int(0, n - 1);
        const auto lo = std::max<std::int64_t>(0, i - cfg.max_gap);
        const auto hi = std::min<std::int64_t>(n - 1, i + cfg.max_gap);
        // Uniform over [lo, hi] \ {i}.
        auto j = rng.uniform_int(lo, hi - 1);
        if (j >= i) ++j;
        const Box& bz = seq.boxes[static_cast<std::size_t>(i)];
        const Box& by = seq.boxes[static_cast<std::size_t>(j)];
        if (!(bz.w > 0 && bz.h > 0 && by.w > 0 && by.h > 0)) continue;
        const int jx = draw_jitter(rng, cfg);
        const int jy = draw_jitter(rng, cfg);
        return make_pair(seq, static_cast<std::size_t>(i), static_cast<std::size_t>(j), jx, jy, cfg);
    }
    throw InputError("no valid training pair after 100 attempts");
}

MixedPairStream::MixedPairStream(const std::vector<SequenceRecord>* a, const std::vector<SequenceRecord>* b,
                                 double weight_a, double weight_b, std::uint64_t seed, SamplerConfig cfg)
    : a_(a), b_(b), rng_(seed), cfg_(cfg)
{
    if (!(weight_a >= 0) || !(weight_b >= 0) || weight_a + weight_b <= 0)
        throw ConfigError("mixing weights must be nonnegative and not both zero");
    p_a_ = weight_a / (weight_a + weight_b);
}

namespace {

int pick_domain(bool a_empty, bool b_empty, double p_a, Rng& rng)
{
    if (a_empty && b_empty) throw InputError("both datasets are empty");
    const int pick = rng.uniform() < p_a ? 0 : 1;
    if (pick == 0 && a_empty) return 1;
    if (pick == 1 && b_empty) return 0;
    return pick;
}

const std::vector<SequenceRecord> kNoSequences;

} // namespace

SamplePair sample_mixed(const std::vector<SequenceRecord>& a, const std::vector<SequenceRecord>& b, double p_a, Rng& rng,
                        const SamplerConfig& cfg)
{
    return sample_pair(pick_domain(a.empty(), b.empty(), p_a, rng) == 0 ? a : b, rng, cfg);
}

int MixedPairStream::next_domain()
{
    return pick_domain(a_ == nullptr || a_->empty(), b_ == nullptr || b_->empty(), p_a_, rng_);
}

SamplePair MixedPairStream::next()
{
    return sample_mixed(a_ ? *a_ : kNoSequences, b_ ? *b_ : kNoSequences, p_a_, rng_, cfg_);
}

// ---------------------------------------------------------------- synthetic sequences

namespace {

double reflect(double v, double lo, double hi)
{
    const double span = hi - lo;
    if (span <= 0) return lo;
    double t = std::fmod(v - lo, 2 * span);
    if (t < 0) t += 2 * span;
    return t <= span ? lo + t : lo + 2 * span - t;
}

Motion random_motion(Rng& rng, double lo, double hi)
{
    Motion m;
    m.x0 = rng.uniform(lo, hi);
    m.y0 = rng.uniform(lo, hi);
    m.vx = rng.uniform(-2.0, 2.0);
    m.vy = rng.uniform(-2.0, 2.0);
    m.ax = rng.uniform(0.0, 10.0);
    m.ay = rng.uniform(0.0, 10.0);
    m.period = rng.uniform(20.0, 60.0);
    m.phase = rng.uniform(0.0, 2 * std::numbers::pi);
    return m;
}

// Fraction of the unit pixel [p, p+1) covered by [a, b).
double overlap_1d(double p, double a, double b)
{
    return std::max(0.0, std::min(p + 1.0, b) - std::max(p, a));
}

} // namespace

std::pair<double, double> motion_center(const Motion& m, int t, double lo, double hi)
{
    const double arg = 2 * std::numbers::pi * t / m.period + m.phase;
    const double x = m.x0 + m.vx * t + m.ax * std::sin(arg);
    const double y = m.y0 + m.vy * t + m.ay * std::sin(arg);
    return {reflect(x, lo, hi), reflect(y, lo, hi)};
}

double box_iou(const Box& a, const Box& b)
{
    const double iw = std::max(0.0, std::min(a.x + a.w, b.x + b.w) - std::max(a.x, b.x));
    const double ih = std::max(0.0, std::min(a.y + a.h, b.y + b.h) - std::max(a.y, b.y));
    const double inter = iw * ih;
    const double uni = a.w * a.h + b.w * b.h - inter;
    return uni > 0 ? inter / uni : 0.0;
}

SequenceRecord synth_sequence(const SynthSpec& spec, std::uint64_t seed)
{
    if (spec.frames < 2) throw InputError("synthetic sequence needs at least 2 frames");
    if (spec.size < 64) throw InputError("synthetic frame size must be >= 64");
    if (spec.n_distractors < 0) throw InputError("distractor count must be >= 0");
    if (!(spec.noise_std >= 0)) throw InputError("noise_std must be >= 0");
    const double ts = spec.target_size;
    // Keep every square at least one target size away from the borders.
    const double lo = 1.5 * ts, hi = spec.size - 1.5 * ts;
    if (!(ts > 0) || hi <= lo) throw InputError("target size does not fit the frame");

    Rng rng(seed);
    const Motion target = spec.target_motion ? *spec.target_motion : random_motion(rng, lo, hi);

    SequenceRecord seq;
    seq.name = spec.name;
    seq.class_id = spec.class_id;
    seq.domain = spec.domain;
    std::vector<std::vector<Box>> objects(1);
    for (int t = 0; t < spec.frames; ++t) {
        auto [cx, cy] = motion_center(target, t, lo, hi);
        objects[0].push_back(Box::from_center(cx, cy, ts, ts));
    }
    for (int d = 0; d < spec.n_distractors; ++d) {
        bool placed = false;
        for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
            const Motion m = random_motion(rng, lo, hi);
            std::vector<Box> path;
            bool ok = true;
            for (int t = 0; t < spec.frames && ok; ++t) {
                auto [cx, cy] = motion_center(m, t, lo, hi);
                path.push_back(Box::from_center(cx, cy, ts, ts));
                ok = box_iou(path.back(), objects[0][static_cast<std::size_t>(t)]) <= 0.2;
            }
            if (ok) {
                objects.push_back(std::move(path));
                placed = true;
            }
        }
        if (!placed)
            throw InputError("could not place distractor " + std::to_string(d + 1) +
                             " without overlapping the target after 100 attempts");
    }

    const int n = spec.size;
    const double amp = spec.target_level - spec.background;
    std::vector<double> cover(static_cast<std::size_t>(n) * n);
    for (int t = 0; t < spec.frames; ++t) {
        std::fill(cover.begin(), cover.end(), 0.0);
        for (const auto& path : objects) {
            const Box& b = path[static_cast<std::size_t>(t)];
            const int x_lo = std::max(0, static_cast<int>(std::floor(b.x)));
            const int x_hi = std::min(n - 1, static_cast<int>(std::floor(b.x + b.w)));
            const int y_lo = std::max(0, static_cast<int>(std::floor(b.y)));
            const int y_hi = std::min(n - 1, static_cast<int>(std::floor(b.y + b.h)));
            for (int y = y_lo; y <= y_hi; ++y) {
                const double cy = overlap_1d(y, b.y, b.y + b.h);
                for (int x = x_lo; x <= x_hi; ++x) {
                    double& c = cover[static_cast<std::size_t>(y) * n + x];
                    c = std::max(c, cy * overlap_1d(x, b.x, b.x + b.w));
                }
            }
        }
        GrayImage img(n, n);
        for (std::size_t i = 0; i < cover.size(); ++i) {
            double v = spec.background + amp * cover[i];
            if (spec.noise_std > 0) v += rng.normal(0.0, spec.noise_std);
            img.pixels[i] = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
        }
        seq.frames.push_back(std::move(img));
    }
    seq.boxes = objects[0];
    return seq;
}

} // namespace mmnet
