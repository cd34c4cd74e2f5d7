#include "mmnet/verify.hpp"

#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <complex>
#include <cstdio>
#include <numbers>
#include <sstream>
#include <tuple>

#include "mmnet/config_file.hpp"
#include "mmnet/error.hpp"
#include "mmnet/evalkit.hpp"
#include "mmnet/fanet.hpp"
#include "mmnet/fft.hpp"
#include "mmnet/gradcheck.hpp"
#include "mmnet/ops.hpp"
#include "mmnet/tracker.hpp"

namespace fs = std::filesystem;

namespace mmnet {

// ---------------------------------------------------------------- bookkeeping

void Verifier::record(Check c)
{
    if (on_check) on_check(c);
    checks_.push_back(std::move(c));
}

bool Verifier::all_passed() const
{
    return std::all_of(checks_.begin(), checks_.end(), [](const Check& c) { return c.informational || c.passed; });
}

bool Verifier::criterion_passed(int criterion) const
{
    bool any = false;
    for (const auto& c : checks_) {
        if (c.criterion != criterion || c.informational) continue;
        any = true;
        if (!c.passed) return false;
    }
    return any;
}

std::string format_check(const Check& c)
{
    char head[64];
    std::snprintf(head, sizeof head, "[%s] %d ", c.informational ? "INFO" : (c.passed ? "PASS" : "FAIL"), c.criterion);
    std::string s = head + c.name;
    if (!c.detail.empty()) s += ": " + c.detail;
    if (c.seconds > 0) {
        char t[32];
        std::snprintf(t, sizeof t, " (%.1fs)", c.seconds);
        s += t;
    }
    return s;
}

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string sci(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3g", v);
    return buf;
}

template <typename T>
BasicTensor<T> random_tensor(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0)
{
    BasicTensor<T> t(s);
    for (auto& v : t.values()) v = static_cast<T>(rng.uniform(lo, hi));
    return t;
}

// Runs `body`, turning an escaping exception into a failed check.
template <typename F>
void guarded(Verifier& v, int criterion, const std::string& name, F&& body)
{
    const auto t0 = Clock::now();
    try {
        body();
    } catch (const std::exception& e) {
        v.record({criterion, name, false, false, std::string("exception: ") + e.what(), since(t0)});
    }
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag)
    {
        static int counter = 0;
        path = fs::temp_directory_path() /
               ("mmnet-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir()
    {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
};

double mean_iou_after_init(const std::vector<TrackedFrame>& frames, const std::vector<Box>& gt)
{
    double s = 0;
    for (std::size_t i = 1; i < frames.size(); ++i) s += iou(frames[i].box, gt[i]);
    return s / static_cast<double>(frames.size() - 1);
}

} // namespace

// ---------------------------------------------------------------- 1

void verify_scale_note(Verifier& v)
{
    v.record({1, "full-scale benchmark numbers", false, true,
              "not reproducible at desk scale (needs the full TIR training set and benchmark toolkits); "
              "criteria 2-9 substitute",
              0});
}

// ---------------------------------------------------------------- 2

namespace {

constexpr double kGradTol = 1e-4;

void grad_entry(Verifier& v, const std::string& name, const ParamsD& params, const Objective& f, double& total)
{
    const auto t0 = Clock::now();
    try {
        const auto r = grad_check(f, params, name);
        const double secs = since(t0);
        total += secs;
        v.record({2, "grad " + name, r.max_rel_error < kGradTol, false,
                  "max rel err " + sci(r.max_rel_error) + " over " + std::to_string(r.coordinates_checked) +
                      " coords (worst " + r.worst_param + "[" + std::to_string(r.worst_index) + "]: analytic " +
                      sci(r.analytic) + ", numeric " + sci(r.numeric) + ")",
                  secs});
    } catch (const std::exception& e) {
        total += since(t0);
        v.record({2, "grad " + name, false, false, std::string("exception: ") + e.what(), since(t0)});
    }
}

void add_bias_grad(TensorD& g, const std::vector<double>& b)
{
    for (std::size_t i = 0; i < b.size(); ++i) g[i] += b[i];
}

ParamsD fanet_probe(int channels, Rng& rng, double delta)
{
    ParamsD p = build_fanet<double>(channels, 5);
    p.at(fanet_names::delta)[0] = delta;
    p.add("x", random_tensor<double>({1, channels, 8, 8}, rng));
    return p;
}

Objective fanet_objective(const TensorD& r)
{
    return [r](const ParamsD& q, ParamsD* g) {
        FanetTape<double> tape;
        const auto y = fanet_forward(q.at("x"), q, g ? &tape : nullptr);
        if (g) add_inplace(g->at("x"), fanet_backward(q, tape, r, *g));
        return dot(y, r);
    };
}

void select_fuse_half(ParamsD& p, int channels, bool holistic)
{
    auto& w = p.at(std::string(fanet_names::fuse) + ".weight");
    w.fill(0.0);
    for (int o = 0; o < channels; ++o) w(o, holistic ? o : channels + o, 0, 0) = 1.0;
    p.at(std::string(fanet_names::fuse) + ".bias").fill(0.0);
}

} // namespace

void verify_gradients(Verifier& v)
{
    double total = 0;
    Rng rng(2024);

    {
        ParamsD p;
        p.add("x", random_tensor<double>({2, 3, 9, 8}, rng));
        p.add("kernel", random_tensor<double>({4, 3, 3, 3}, rng));
        p.add("bias", random_tensor<double>({4, 1, 1, 1}, rng));
        const auto r = random_tensor<double>({2, 4, 5, 4}, rng);
        grad_entry(v, "conv2d", p, [r](const ParamsD& q, ParamsD* g) {
            const auto y = conv2d(q.at("x"), q.at("kernel"), q.at("bias").values(), 2, 1);
            if (g) {
                auto cg = conv2d_backward(q.at("x"), q.at("kernel"), 2, 1, r);
                add_inplace(g->at("x"), cg.input);
                add_inplace(g->at("kernel"), cg.kernel);
                add_bias_grad(g->at("bias"), cg.bias);
            }
            return dot(y, r);
        }, total);
    }
    for (int target : {10, 9}) {
        ParamsD p;
        p.add("x", random_tensor<double>({1, 4, 5, 5}, rng));
        p.add("kernel", random_tensor<double>({4, 2, 4, 4}, rng));
        p.add("bias", random_tensor<double>({2, 1, 1, 1}, rng));
        const auto r = random_tensor<double>({1, 2, target, target}, rng);
        grad_entry(v, "conv_transpose2d (" + std::to_string(target) + "x" + std::to_string(target) + ")", p,
                   [r, target](const ParamsD& q, ParamsD* g) {
                       const auto y = conv_transpose2d(q.at("x"), q.at("kernel"), q.at("bias").values(), 2, 1, target, target);
                       if (g) {
                           auto cg = conv_transpose2d_backward(q.at("x"), q.at("kernel"), 2, 1, r);
                           add_inplace(g->at("x"), cg.input);
                           add_inplace(g->at("kernel"), cg.kernel);
                           add_bias_grad(g->at("bias"), cg.bias);
                       }
                       return dot(y, r);
                   },
                   total);
    }
    {
        // Well-separated values so a probe never changes the window argmax.
        TensorD x(Shape{1, 2, 9, 9});
        std::vector<double> levels(x.size());
        for (std::size_t i = 0; i < levels.size(); ++i) levels[i] = 0.01 * static_cast<double>(i);
        for (std::size_t i = levels.size(); i > 1; --i)
            std::swap(levels[i - 1], levels[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);
        for (std::size_t i = 0; i < x.size(); ++i) x[i] = levels[i];
        ParamsD p;
        p.add("x", x);
        const auto r = random_tensor<double>({1, 2, 4, 4}, rng);
        grad_entry(v, "max_pool2d", p, [r](const ParamsD& q, ParamsD* g) {
            const auto pr = max_pool2d(q.at("x"), 3, 2);
            if (g) add_inplace(g->at("x"), max_pool2d_backward(q.at("x").shape(), pr.argmax, r));
            return dot(pr.output, r);
        }, total);
    }
    {
        ParamsD p;
        p.add("x", random_tensor<double>({2, 3, 4, 5}, rng));
        const auto r = random_tensor<double>({2, 3, 1, 1}, rng);
        grad_entry(v, "global_avg_pool", p, [r](const ParamsD& q, ParamsD* g) {
            if (g) add_inplace(g->at("x"), global_avg_pool_backward(q.at("x").shape(), r));
            return dot(global_avg_pool(q.at("x")), r);
        }, total);
    }
    {
        ParamsD p;
        p.add("x", random_tensor<double>({1, 2, 3, 5}, rng, -3, 3));
        const auto r = random_tensor<double>({1, 2, 3, 5}, rng);
        grad_entry(v, "softmax", p, [r](const ParamsD& q, ParamsD* g) {
            const auto y = softmax_rows(q.at("x"));
            if (g) add_inplace(g->at("x"), softmax_rows_backward(y, r));
            return dot(y, r);
        }, total);
    }
    {
        ParamsD p;
        p.add("x", random_tensor<double>({1, 2, 4, 4}, rng, -4, 4));
        const auto r = random_tensor<double>({1, 2, 4, 4}, rng);
        grad_entry(v, "sigmoid", p, [r](const ParamsD& q, ParamsD* g) {
            const auto y = activation(q.at("x"), Activation::sigmoid);
            if (g) add_inplace(g->at("x"), activation_backward(y, Activation::sigmoid, r));
            return dot(y, r);
        }, total);
    }
    {
        // Relu is checked away from its kink only.
        auto x = random_tensor<double>({1, 2, 4, 4}, rng, 0.1, 1.0);
        for (std::size_t i = 0; i < x.size(); i += 2) x[i] = -x[i];
        ParamsD p;
        p.add("x", x);
        const auto r = random_tensor<double>({1, 2, 4, 4}, rng);
        grad_entry(v, "relu", p, [r](const ParamsD& q, ParamsD* g) {
            const auto y = activation(q.at("x"), Activation::relu);
            if (g) add_inplace(g->at("x"), activation_backward(q.at("x"), Activation::relu, r));
            return dot(y, r);
        }, total);
    }
    {
        auto p = fanet_probe(8, rng, 0.3);
        select_fuse_half(p, 8, true);
        grad_entry(v, "fanet holistic correlation", p, fanet_objective(random_tensor<double>({1, 8, 8, 8}, rng)), total);
    }
    {
        auto p = fanet_probe(8, rng, 0.3);
        select_fuse_half(p, 8, false);
        grad_entry(v, "fanet pixel correlation", p, fanet_objective(random_tensor<double>({1, 8, 8, 8}, rng)), total);
    }
    {
        auto p = fanet_probe(8, rng, 0.3);
        grad_entry(v, "fanet (fused)", p, fanet_objective(random_tensor<double>({1, 8, 8, 8}, rng)), total);
    }
    for (const auto& [c, n, window, lambda] : {std::tuple{3, 6, true, 0.01}, std::tuple{2, 10, false, 0.1}}) {
        CFConfig cf;
        cf.window = window;
        cf.lambda = lambda;
        ParamsD p;
        p.add("templ", random_tensor<double>({1, c, n, n}, rng));
        const auto r = random_tensor<double>({1, c, n, n}, rng);
        grad_entry(v, "cf block " + std::to_string(n) + "x" + std::to_string(n) + (window ? " windowed" : ""), p,
                   [r, cf](const ParamsD& q, ParamsD* g) {
                       if (g) add_inplace(g->at("templ"), cf_block_backward(q.at("templ"), cf, r));
                       return dot(cf_block(q.at("templ"), cf), r);
                   },
                   total);
    }
    {
        ParamsD p;
        p.add("response", random_tensor<double>({1, 1, 17, 17}, rng, -2, 2));
        const auto labels = make_label_map(17, 2.0, 0.5, 0.3, -0.6);
        grad_entry(v, "logistic loss", p, [labels](const ParamsD& q, ParamsD* g) {
            auto l = logistic_loss(q.at("response"), labels);
            if (g) add_inplace(g->at("response"), l.grad);
            return l.value;
        }, total);
    }
    {
        ParamsD p;
        p.add("logits", random_tensor<double>({3, 5, 1, 1}, rng, -2, 2));
        grad_entry(v, "cross entropy", p, [](const ParamsD& q, ParamsD* g) {
            auto l = cross_entropy(q.at("logits"), {0, 4, 2});
            if (g) add_inplace(g->at("logits"), l.grad);
            return l.value;
        }, total);
    }
    {
        ParamsD p;
        p.add("conv5", random_tensor<double>({2, 6, 4, 4}, rng));
        for (auto& e : build_heads<double>(6, 5, 9)) {
            if (e.name.rfind("heads.cls.", 0) == 0) p.add(e.name, e.value);
        }
        for (auto& b : p.at(head_names::cls_bias).values()) b = rng.uniform(-0.5, 0.5);
        grad_entry(v, "classification head", p, [](const ParamsD& q, ParamsD* g) {
            const auto logits = classification_forward(q.at("conv5"), q.at(head_names::cls_weight), q.at(head_names::cls_bias));
            auto l = cross_entropy(logits, {1, 3});
            if (g) {
                auto cg = classification_backward(q.at("conv5"), q.at(head_names::cls_weight), l.grad);
                add_inplace(g->at("conv5"), cg.conv5);
                add_inplace(g->at(head_names::cls_weight), cg.weight);
                add_inplace(g->at(head_names::cls_bias), cg.bias);
            }
            return l.value;
        }, total);
    }
    {
        // Whole desk model: each matching branch alone, then the weighted sum.
        ModelConfig cfg;
        auto params = build_model<double>(cfg, 7);
        params.at(head_names::dis_gain)[0] = 0.5;
        params.at(head_names::fin_gain)[0] = 0.5;
        params.at(fanet_names::delta)[0] = 0.3;
        Rng img(3);
        PairSample<double> s;
        s.exemplar = random_tensor<double>({1, 1, 127, 127}, img, 0, 1);
        s.search = random_tensor<double>({1, 1, 255, 255}, img, 0, 1);
        s.labels = make_label_map(cfg.response_size(), 2.0);
        s.class_id = 3;
        const std::vector<std::pair<std::string, LossWeights>> cases = {
            {"discriminative matching branch (desk model)", {1, 0, 0}},
            {"fine-grained matching branch (desk model)", {0, 0, 1}},
            {"multi-task loss (desk model)", {1, 1, 1}}};
        for (const auto& [name, w] : cases) {
            grad_entry(v, name, params, [&, w = w](const ParamsD& q, ParamsD* g) {
                return static_cast<double>(pair_forward_backward(q, cfg, s, w, g).total);
            }, total);
        }
    }
    v.record({2, "gradient suite runtime", total < 120.0, false, sci(total) + " s (limit 120 s)", 0});
}

// ---------------------------------------------------------------- 3

namespace {

TensorD naive_conv(const Tensor& x, const Tensor& k, std::span<const float> bias, int stride, int pad)
{
    const Shape xs = x.shape(), ks = k.shape();
    const int oh = (xs.h + 2 * pad - ks.h) / stride + 1;
    const int ow = (xs.w + 2 * pad - ks.w) / stride + 1;
    TensorD y(Shape{xs.n, ks.n, oh, ow});
    for (int n = 0; n < xs.n; ++n)
        for (int o = 0; o < ks.n; ++o)
            for (int i = 0; i < oh; ++i)
                for (int j = 0; j < ow; ++j) {
                    double acc = bias.empty() ? 0.0 : bias[static_cast<std::size_t>(o)];
                    for (int c = 0; c < xs.c; ++c)
                        for (int u = 0; u < ks.h; ++u)
                            for (int w = 0; w < ks.w; ++w) {
                                const int yy = i * stride - pad + u, xx = j * stride - pad + w;
                                if (yy < 0 || xx < 0 || yy >= xs.h || xx >= xs.w) continue;
                                acc += static_cast<double>(x(n, c, yy, xx)) * k(o, c, u, w);
                            }
                    y(n, o, i, j) = acc;
                }
    return y;
}

template <typename A, typename B>
double max_abs_diff(const A& a, const B& b)
{
    double m = 0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
    return m;
}

} // namespace

void verify_oracles(Verifier& v)
{
    Rng rng(77);
    for (const auto& [stride, pad] : {std::pair{1, 0}, std::pair{2, 1}}) {
        const std::string name = "conv2d vs loop oracle (stride " + std::to_string(stride) + ", pad " + std::to_string(pad) + ")";
        guarded(v, 3, name, [&] {
            const auto x = random_tensor<float>({2, 3, 11, 10}, rng, -0.5, 0.5);
            const auto k = random_tensor<float>({4, 3, 3, 3}, rng, -0.5, 0.5);
            const auto b = random_tensor<float>({4, 1, 1, 1}, rng, -0.5, 0.5);
            const auto y = conv2d(x, k, b.values(), stride, pad);
            const auto ref = naive_conv(x, k, b.values(), stride, pad);
            const bool shape_ok = y.shape() == ref.shape();
            const double err = shape_ok ? max_abs_diff(y, ref) : 1.0;
            v.record({3, name, shape_ok && err < 1e-6, false, "max abs err " + sci(err), 0});
        });
    }
    guarded(v, 3, "cross-correlation vs loop oracle", [&] {
        const auto z = random_tensor<float>({1, 4, 6, 6}, rng, -0.5, 0.5);
        const auto y = random_tensor<float>({1, 4, 22, 22}, rng, -0.5, 0.5);
        const auto r = cross_correlate(z, y);
        double err = r.shape() == Shape{1, 1, 17, 17} ? 0.0 : 1.0;
        for (int i = 0; i < 17 && err < 1; ++i)
            for (int j = 0; j < 17; ++j) {
                double acc = 0;
                for (int c = 0; c < 4; ++c)
                    for (int u = 0; u < 6; ++u)
                        for (int w = 0; w < 6; ++w) acc += static_cast<double>(z(0, c, u, w)) * y(0, c, i + u, j + w);
                err = std::max(err, std::abs(acc - r(0, 0, i, j)));
            }
        v.record({3, "cross-correlation vs loop oracle", err < 1e-6, false, "max abs err " + sci(err), 0});
    });
    guarded(v, 3, "transposed conv is the adjoint of conv", [&] {
        const auto x = random_tensor<double>({1, 2, 9, 9}, rng);
        const auto k = random_tensor<double>({4, 2, 4, 4}, rng);
        const auto y = random_tensor<double>({1, 4, 4, 4}, rng);
        const double lhs = dot(conv2d(x, k, {}, 2, 1), y);
        const double rhs = dot(x, conv_transpose2d(y, k, {}, 2, 1, 9, 9));
        const double err = std::abs(lhs - rhs);
        v.record({3, "transposed conv is the adjoint of conv", err < 1e-10, false, "|<Ax,y>-<x,A'y>| " + sci(err), 0});
    });
    for (int n : {8, 6, 10, 17}) {
        const std::string name = "fft2d vs direct DFT " + std::to_string(n) + "x" + std::to_string(n);
        guarded(v, 3, name, [&] {
            const auto x = random_tensor<double>({1, 1, n, n}, rng);
            const auto spec = fft2d(x);
            double err = 0;
            for (int ky = 0; ky < n; ++ky)
                for (int kx = 0; kx < n; ++kx) {
                    std::complex<double> acc = 0;
                    for (int yy = 0; yy < n; ++yy)
                        for (int xx = 0; xx < n; ++xx)
                            acc += x(0, 0, yy, xx) *
                                   std::polar(1.0, -2 * std::numbers::pi * (static_cast<double>(ky * yy) / n +
                                                                           static_cast<double>(kx * xx) / n));
                    err = std::max(err, std::abs(acc - spec.data[static_cast<std::size_t>(ky * n + kx)]));
                }
            const double round = max_abs_diff(ifft2d(spec), x);
            v.record({3, name, err < 1e-8 && round < 1e-10, false, "max abs err " + sci(err) + ", round trip " + sci(round), 0});
        });
    }
    guarded(v, 3, "cf block reproduces its label (delta template, lambda 0)", [&] {
        CFConfig cf;
        cf.lambda = 0.0;
        cf.window = false;
        const int n = 6;
        TensorD z(Shape{1, 1, n, n});
        z(0, 0, 0, 0) = 1.0;
        const auto w = cf_block(z, cf);
        const auto g = gaussian_label<double>(n, n, cf.sigma_fraction * n);
        double err = 0;
        for (int sy = 0; sy < n; ++sy)
            for (int sx = 0; sx < n; ++sx) {
                double acc = 0;  // circular correlation of the filter with its template
                for (int u = 0; u < n; ++u)
                    for (int q = 0; q < n; ++q) acc += w(0, 0, u, q) * z(0, 0, (u + sy) % n, (q + sx) % n);
                err = std::max(err, std::abs(acc - g(0, 0, sy, sx)));
            }
        v.record({3, "cf block reproduces its label (delta template, lambda 0)", err < 1e-5, false, "max abs err " + sci(err), 0});
    });
    guarded(v, 3, "non-local attention rows sum to one", [&] {
        auto p = build_fanet<float>(8, 3);
        const auto x = random_tensor<float>({1, 8, 6, 6}, rng);
        const auto a = pixel_correlation_map(x, p);
        const int rows = a.shape().h, cols = a.shape().w;
        double err = 0;
        for (int i = 0; i < rows; ++i) {
            double s = 0;
            for (int j = 0; j < cols; ++j) s += a(0, 0, i, j);
            err = std::max(err, std::abs(s - 1.0));
        }
        v.record({3, "non-local attention rows sum to one", err < 1e-5, false, "max |row sum - 1| " + sci(err), 0});
    });
    guarded(v, 3, "pixel correlation with delta 0 is the identity", [&] {
        auto p = build_fanet<float>(8, 3);
        p.at(fanet_names::delta)[0] = 0.0f;
        const auto x = random_tensor<float>({1, 8, 6, 6}, rng);
        const bool same = pixel_correlation(x, p) == x;
        v.record({3, "pixel correlation with delta 0 is the identity", same, false, same ? "bitwise equal" : "differs", 0});
    });
}

// ---------------------------------------------------------------- 4

void verify_shapes(Verifier& v)
{
    guarded(v, 4, "default shapes", [&] {
        ModelConfig cfg;
        const auto& bb = cfg.backbone;
        const bool taps = bb.conv3_size(127) == 10 && bb.conv5_size(127) == 6 && bb.conv3_size(255) == 26 &&
                          bb.conv5_size(255) == 22;
        v.record({4, "conv3/conv5 taps (10,6) for 127 and (26,22) for 255", taps, false,
                  "127 -> (" + std::to_string(bb.conv3_size(127)) + "," + std::to_string(bb.conv5_size(127)) +
                      "), 255 -> (" + std::to_string(bb.conv3_size(255)) + "," + std::to_string(bb.conv5_size(255)) + ")",
                  0});
        const auto params = build_model<float>(cfg, 1);
        Rng rng(4);
        const auto z = random_tensor<float>({1, 1, 127, 127}, rng, 0, 1);
        const auto y = random_tensor<float>({1, 1, 255, 255}, rng, 0, 1);
        const auto filters = template_filters(template_features(params, cfg, z), cfg);
        const auto r = search_responses(params, cfg, filters, y);
        const Shape want{1, 1, 17, 17};
        const bool ok = r.dis.shape() == want && r.fin.shape() == want && cfg.response_size() == 17;
        v.record({4, "17x17 response on both branches", ok, false,
                  "discriminative " + r.dis.shape().str() + ", fine-grained " + r.fin.shape().str(), 0});
        const auto fused = fuse_responses(r.dis, r.fin, 0.5);
        v.record({4, "fused response well-typed", fused.shape() == want, false, fused.shape().str(), 0});
    });
}

// ---------------------------------------------------------------- 5

OverfitSet overfit_set()
{
    SynthSpec spec;
    spec.frames = 60;
    spec.noise_std = 4;
    spec.name = "overfit";
    OverfitSet set;
    set.sequence = synth_sequence(spec, 11);
    // Jitters are whole response cells so the ground-truth cell is exact.
    const int jitter[8][2] = {{0, 0}, {8, 0}, {-8, 0}, {0, 8}, {0, -8}, {8, 8}, {-8, -8}, {8, -8}};
    for (int k = 0; k < 8; ++k)
        set.pairs.push_back(make_pair(set.sequence, static_cast<std::size_t>(7 * k), static_cast<std::size_t>(7 * k + 3),
                                      jitter[k][0], jitter[k][1]));
    return set;
}

std::pair<double, int> evaluate_overfit(const Params& params, const ModelConfig& model, const OverfitSet& set)
{
    double total = 0;
    int hits = 0;
    const int m = model.response_size();
    for (const auto& pair : set.pairs) {
        const auto sample = to_training_sample(pair, model);
        const auto out = pair_forward_backward<float>(params, model, sample, LossWeights{}, nullptr);
        total += out.total;
        const auto fused = fuse_responses(out.response_dis, out.response_fin, 0.5);
        const auto best = static_cast<int>(std::max_element(fused.values().begin(), fused.values().end()) - fused.values().begin());
        const int gy = (m - 1) / 2 + static_cast<int>(std::lround(pair.disp_y));
        const int gx = (m - 1) / 2 + static_cast<int>(std::lround(pair.disp_x));
        hits += best / m == gy && best % m == gx;
    }
    return {total / static_cast<double>(set.pairs.size()), hits};
}

OverfitOutcome train_overfit(const OverfitOptions& opt)
{
    const auto set = overfit_set();
    OverfitOutcome out;
    out.model.label_radius = opt.label_radius;
    TrainConfig tc;
    tc.strategy = Strategy::vid_only;
    tc.batch = 8;
    tc.pairs_per_epoch = 8 * opt.batches_per_epoch;
    tc.epochs = opt.batches / opt.batches_per_epoch;
    tc.lr_hi = opt.lr_hi;
    tc.lr_lo = opt.lr_lo;
    tc.seed = opt.seed;
    tc.prefetch = false;
    TrainState state{build_model<float>(out.model, opt.seed), {}, Rng(opt.seed), 0};
    state.velocity = state.params.zeros_like();
    out.initial_loss = evaluate_overfit(state.params, out.model, set).first;
    std::size_t next = 0;
    const PairSource source = [&](Rng&) { return set.pairs[next++ % set.pairs.size()]; };
    const auto t0 = Clock::now();
    out.log = run_stage(state, out.model, tc, plan_stages(tc).front(), source);
    out.seconds = since(t0);
    std::tie(out.final_loss, out.argmax_hits) = evaluate_overfit(state.params, out.model, set);
    out.params = std::move(state.params);
    return out;
}

OverfitOutcome verify_overfit(Verifier& v)
{
    OverfitOutcome out;
    try {
        out = train_overfit();
    } catch (const std::exception& e) {
        v.record({5, "overfit training", false, false, std::string("exception: ") + e.what(), 0});
        return out;
    }
    const double ratio = out.final_loss / out.initial_loss;
    v.record({5, "overfit loss below 0.1x initial", ratio < 0.1, false,
              "initial " + sci(out.initial_loss) + ", final " + sci(out.final_loss) + ", ratio " + sci(ratio) + " over " +
                  std::to_string(out.log.size()) + " batches",
              0});
    v.record({5, "fused argmax at the ground-truth cell", out.argmax_hits == 8, false,
              std::to_string(out.argmax_hits) + "/8 pairs", 0});
    v.record({5, "overfit runtime under 10 minutes", out.seconds < 600, false, sci(out.seconds) + " s", out.seconds});
    return out;
}

// ---------------------------------------------------------------- 6

void verify_tracking(Verifier& v, const OverfitOutcome& model)
{
    if (model.params.size() == 0) {
        v.record({6, "tracking suite", false, false, "no trained model (overfit training failed)", 0});
        return;
    }
    TrackerConfig tc;
    guarded(v, 6, "no distractors, mean IoU >= 0.5", [&] {
        SynthSpec spec;
        spec.noise_std = 4;
        const auto seq = synth_sequence(spec, 101);
        const auto run = track_sequence(model.params, model.model, tc, seq);
        const double m = mean_iou_after_init(run.frames, seq.boxes);
        v.record({6, "no distractors, mean IoU >= 0.5", m >= 0.5, false,
                  "mean IoU " + sci(m) + " at " + sci(run.fps()) + " FPS", run.seconds});
    });
    guarded(v, 6, "static target stays within 2 px", [&] {
        SynthSpec spec;
        spec.frames = 30;
        spec.target_motion = Motion{128, 128, 0, 0, 0, 0, 40, 0};
        const auto seq = synth_sequence(spec, 5);
        const auto run = track_sequence(model.params, model.model, tc, seq);
        double worst = 0;
        for (std::size_t i = 0; i < seq.boxes.size(); ++i) worst = std::max(worst, cle(run.frames[i].box, seq.boxes[i]));
        v.record({6, "static target stays within 2 px", worst <= 2.0, false, "max center error " + sci(worst) + " px", run.seconds});
    });
    guarded(v, 6, "linear +3 px/frame target, mean IoU >= 0.5", [&] {
        SynthSpec spec;
        spec.size = 384;
        spec.target_motion = Motion{40, 60, 3, 2, 0, 0, 40, 0};
        const auto seq = synth_sequence(spec, 6);
        const auto run = track_sequence(model.params, model.model, tc, seq);
        const double m = mean_iou_after_init(run.frames, seq.boxes);
        v.record({6, "linear +3 px/frame target, mean IoU >= 0.5", m >= 0.5, false, "mean IoU " + sci(m), run.seconds});
    });
    guarded(v, 6, "fused >= discriminative-only on >= 7/10 distractor seeds", [&] {
        const auto t0 = Clock::now();
        int wins = 0;
        std::string detail;
        for (int s = 1; s <= 10; ++s) {
            SynthSpec spec;
            spec.noise_std = 4;
            spec.n_distractors = 2;
            const auto seq = synth_sequence(spec, 1000 + static_cast<std::uint64_t>(s));
            TrackerConfig fused = tc, dis = tc;
            fused.branch_mix = 0.5;
            dis.branch_mix = 1.0;
            const double a = mean_iou_after_init(track_sequence(model.params, model.model, fused, seq).frames, seq.boxes);
            const double b = mean_iou_after_init(track_sequence(model.params, model.model, dis, seq).frames, seq.boxes);
            wins += a >= b;
            detail += (s > 1 ? " " : "") + sci(a) + "/" + sci(b);
        }
        v.record({6, "fused >= discriminative-only on >= 7/10 distractor seeds", wins >= 7, false,
                  std::to_string(wins) + "/10 (fused/dis mean IoU: " + detail + ")", since(t0)});
    });
}

// ---------------------------------------------------------------- 7

namespace {

TrainData small_data()
{
    TrainData d;
    for (int k = 0; k < 2; ++k) {
        SynthSpec s;
        s.frames = 30;
        s.noise_std = 4;
        s.class_id = k;
        s.domain = Domain::grayscale;
        s.name = "gray" + std::to_string(k);
        d.grayscale.push_back(synth_sequence(s, 200 + static_cast<std::uint64_t>(k)));
        s.domain = Domain::tir;
        s.class_id = k + 2;
        s.name = "tir" + std::to_string(k);
        d.tir.push_back(synth_sequence(s, 300 + static_cast<std::uint64_t>(k)));
    }
    return d;
}

// Bitwise comparison of every tensor against `before`, split by mask.
std::pair<bool, bool> frozen_report(const Params& before, const Params& after, const std::vector<bool>& frozen,
                                    std::string& detail)
{
    bool frozen_same = true, others_moved = true;
    int n_frozen = 0;
    for (std::size_t k = 0; k < before.size(); ++k) {
        const bool same = before[k].value == after[k].value;
        if (frozen[k]) {
            ++n_frozen;
            if (!same) {
                frozen_same = false;
                detail += " moved:" + before[k].name;
            }
        } else if (same) {
            others_moved = false;
            detail += " stuck:" + before[k].name;
        }
    }
    detail = std::to_string(n_frozen) + " frozen tensors" + detail;
    return {frozen_same, others_moved};
}

} // namespace

void verify_strategies(Verifier& v)
{
    v.record({7, "lr schedule starts at 1e-2", lr_schedule(0, 60, 1e-2, 1e-5) == 1e-2, false,
              sci(lr_schedule(0, 60, 1e-2, 1e-5)), 0});
    v.record({7, "lr schedule ends at 1e-5", lr_schedule(59, 60, 1e-2, 1e-5) == 1e-5, false,
              sci(lr_schedule(59, 60, 1e-2, 1e-5)), 0});

    const auto data = small_data();
    ModelConfig model;
    SamplerConfig sampler;
    TrainConfig tc;
    tc.epochs = 1;
    tc.pairs_per_epoch = 16;
    tc.seed = 3;

    guarded(v, 7, "finetune freezes conv1-3 and the fine-grained branch", [&] {
        tc.strategy = Strategy::finetune;
        const auto stages = plan_stages(tc);
        TrainState st{build_model<float>(model, tc.seed), {}, Rng(9), 0};
        st.velocity = st.params.zeros_like();
        const PairSource gray = [&](Rng& r) { return sample_pair(data.grayscale, r, sampler); };
        const PairSource tir = [&](Rng& r) { return sample_pair(data.tir, r, sampler); };
        run_stage(st, model, tc, stages.at(0), gray);
        const Params before = st.params;
        st.velocity.set_zero();
        run_stage(st, model, tc, stages.at(1), tir);
        const auto frozen = freeze_mask(before, stages.at(1).freeze);
        std::string detail;
        const auto [same, moved] = frozen_report(before, st.params, frozen, detail);
        v.record({7, "finetune freezes conv1-3 and the fine-grained branch", same && moved, false, detail, 0});
    });
    guarded(v, 7, "mix freezes the classification head", [&] {
        tc.strategy = Strategy::mix;
        const auto stage = plan_stages(tc).at(0);
        // A nonzero delta lets gradient reach the attention projections, so
        // every trainable tensor is expected to move.
        auto start = [&] {
            auto p = build_model<float>(model, tc.seed);
            p.at(fanet_names::delta)[0] = 0.1f;
            return p;
        };
        auto run = [&](double lambda2) {
            TrainConfig c = tc;
            c.lambda2 = lambda2;
            TrainState st{start(), {}, Rng(9), 0};
            st.velocity = st.params.zeros_like();
            const PairSource mixed = [&](Rng& r) { return sample_mixed(data.grayscale, data.tir, 0.5, r, sampler); };
            auto log = run_stage(st, model, c, stage, mixed);
            return std::pair{std::move(st.params), std::move(log)};
        };
        const Params before = start();
        auto [after, log] = run(1.0);
        std::string detail;
        const auto [same, moved] = frozen_report(before, after, freeze_mask(before, stage.freeze), detail);
        const bool reported = std::all_of(log.begin(), log.end(), [](const BatchRecord& r) { return r.l_cls > 0; });
        v.record({7, "mix freezes the classification head", same && moved && reported, false,
                  detail + (reported ? ", classification loss still reported" : ", classification loss missing"), 0});
        auto [after0, log0] = run(0.0);
        v.record({7, "mix: lambda2 = 0 gives the identical parameter trajectory", after0 == after, false,
                  after0 == after ? "bitwise equal" : "differs", 0});
    });
}

// ---------------------------------------------------------------- 8

void verify_metrics(Verifier& v)
{
    auto exact = [](double a, double b) { return std::abs(a - b) <= 1e-9; };
    {
        const double r = iou({0, 0, 2, 2}, {1, 0, 2, 2});
        v.record({8, "iou fixture = 1/3", exact(r, 1.0 / 3.0), false, sci(r), 0});
    }
    {
        // Center errors 5, 25, 10 px.
        const std::vector<Box> gt{{0, 0, 10, 10}, {0, 0, 10, 10}, {0, 0, 10, 10}};
        const std::vector<Box> pred{{3, 4, 10, 10}, {15, 20, 10, 10}, {6, 8, 10, 10}};
        const double p = precision_at_20(precision_curve(pred, gt));
        v.record({8, "pre20 fixture = 2/3", exact(p, 2.0 / 3.0), false, sci(p), 0});
    }
    {
        const std::vector<Box> gt{{0, 0, 10, 10}, {5, 5, 10, 10}, {1, 2, 3, 4}};
        const double a = success_auc(success_curve(gt, gt));
        v.record({8, "AUC fixture = 20/21", exact(a, 20.0 / 21.0), false, sci(a), 0});
    }
    {
        // 30 frames; failures planted at frames 5 and 22, half-overlap at 12 and 13.
        const std::vector<Box> gt(30, Box{0, 0, 30, 30});
        auto scripted = [](std::size_t f) -> Box {
            if (f == 5 || f == 22) return {100, 100, 30, 30};
            if (f == 12 || f == 13) return {10, 0, 30, 30};
            return {0, 0, 30, 30};
        };
        std::vector<std::size_t> inits;
        TrackerRunner runner{[&](std::size_t f, const Box&) { inits.push_back(f); }, scripted};
        const auto r = vot_lite(runner, gt, 5, 3);
        // Hand count: accuracy frames 3,4 | 13..21 -> (2 + 0.5 + 8) / 11; overlaps sum 19 over 30.
        const bool ok = exact(r.accuracy, 10.5 / 11.0) && r.robustness == 2 && exact(r.eao_lite, 19.0 / 30.0) &&
                        inits == std::vector<std::size_t>{0, 10, 27};
        v.record({8, "vot-lite planted-failure fixture", ok, false,
                  "accuracy " + sci(r.accuracy) + ", robustness " + std::to_string(r.robustness) + ", eao_lite " +
                      sci(r.eao_lite),
                  0});
    }
}

// ---------------------------------------------------------------- 9

void verify_persistence(Verifier& v)
{
    guarded(v, 9, "checkpoint round trip", [&] {
        ModelConfig model;
        Checkpoint ck;
        ck.params = build_model<float>(model, 21);
        ck.velocity = ck.params.zeros_like();
        Rng rng(8);
        for (auto& e : ck.velocity)
            for (auto& x : e.value.values()) x = static_cast<float>(rng.normal());
        ck.rng = rng.state();
        ck.epoch = 7;
        ck.config = to_ini(RunConfig{});
        TempDir dir("ckpt");
        save_checkpoint(ck, dir.path / "a.ckpt");
        const auto back = load_checkpoint(dir.path / "a.ckpt");
        save_checkpoint(back, dir.path / "b.ckpt");
        const bool same_values = back.params == ck.params && back.velocity == ck.velocity && back.rng == ck.rng &&
                                 back.epoch == ck.epoch && back.config == ck.config;
        const bool same_bytes = encode_checkpoint(back) == encode_checkpoint(ck);
        auto bytes = encode_checkpoint(ck);
        bytes[1] ^= 0xFF;
        bool rejected = false;
        try {
            decode_checkpoint(bytes);
        } catch (const CheckpointError&) {
            rejected = true;
        }
        auto cut = encode_checkpoint(ck);
        cut.resize(cut.size() / 2);
        bool truncated = false;
        try {
            decode_checkpoint(cut);
        } catch (const CheckpointError& e) {
            truncated = std::string(e.what()).find("byte") != std::string::npos;
        }
        rejected = rejected && truncated;
        v.record({9, "checkpoint round trip", same_values && same_bytes && rejected, false,
                  std::string(same_values ? "values equal" : "values differ") + ", " +
                      (same_bytes ? "bytes equal" : "bytes differ") + ", " +
                      (rejected ? "corrupt and truncated files rejected" : "bad file accepted"),
                  0});
    });
    guarded(v, 9, "sequence round trip", [&] {
        SynthSpec spec;
        spec.frames = 12;
        spec.n_distractors = 2;
        spec.noise_std = 6;
        spec.name = "roundtrip";
        spec.class_id = 4;
        const auto seq = synth_sequence(spec, 31);
        TempDir dir("seq");
        save_sequence(seq, dir.path / seq.name);
        const auto back = load_sequence(dir.path / seq.name);
        v.record({9, "sequence round trip", back == seq, false, back == seq ? "pixels and boxes bit-exact" : "differs", 0});
    });
    guarded(v, 9, "identical seeds give identical checkpoints", [&] {
        const auto data = small_data();
        TrainConfig tc;
        tc.epochs = 2;
        tc.pairs_per_epoch = 16;
        tc.seed = 12;
        const auto a = train(tc, ModelConfig{}, SamplerConfig{}, data);
        const auto b = train(tc, ModelConfig{}, SamplerConfig{}, data);
        const bool same = encode_checkpoint(a.checkpoint) == encode_checkpoint(b.checkpoint);
        v.record({9, "identical seeds give identical checkpoints", same, false, same ? "byte-identical" : "differ", 0});
    });
    guarded(v, 9, "identical inputs give identical trajectories", [&] {
        ModelConfig model;
        const auto params = build_model<float>(model, 5);
        SynthSpec spec;
        spec.frames = 15;
        spec.noise_std = 4;
        const auto seq = synth_sequence(spec, 77);
        auto csv = [&] {
            std::ostringstream out;
            write_trajectory(out, track_sequence(params, model, TrackerConfig{}, seq).frames);
            return out.str();
        };
        const bool same = csv() == csv();
        v.record({9, "identical inputs give identical trajectories", same, false, same ? "byte-identical CSV" : "differ", 0});
    });
}

// ---------------------------------------------------------------- suites

std::vector<std::string> suite_names()
{
    return {"grad", "oracle", "shape", "overfit", "track-synth", "strategy", "metrics", "persistence", "all"};
}

void run_suites(const std::vector<std::string>& names, Verifier& v)
{
    const auto known = suite_names();
    for (const auto& n : names)
        if (std::find(known.begin(), known.end(), n) == known.end())
            throw ConfigError("unknown suite '" + n + "'");
    auto want = [&](const char* s) {
        return std::find(names.begin(), names.end(), s) != names.end() ||
               std::find(names.begin(), names.end(), "all") != names.end();
    };
    if (want("all")) verify_scale_note(v);
    if (want("grad")) verify_gradients(v);
    if (want("oracle")) verify_oracles(v);
    if (want("shape")) verify_shapes(v);
    OverfitOutcome trained;
    if (want("overfit")) {
        trained = verify_overfit(v);
    } else if (want("track-synth")) {
        trained = train_overfit();
    }
    if (want("track-synth")) verify_tracking(v, trained);
    if (want("strategy")) verify_strategies(v);
    if (want("metrics")) verify_metrics(v);
    if (want("persistence")) verify_persistence(v);
}

} // namespace mmnet
