#include "mmnet/heads.hpp"

#include <cmath>
#include <complex>
#include <numbers>
#include <string>

#include "mmnet/fft.hpp"
#include "mmnet/ops.hpp"
#include "mmnet/rng.hpp"

namespace mmnet {

void CFConfig::validate() const
{
    if (!(lambda >= 0.0)) throw ConfigError("cf lambda must be >= 0, got " + std::to_string(lambda));
    if (!(sigma_fraction > 0.0)) throw ConfigError("cf sigma_fraction must be > 0");
}

int LabelMap::positives() const
{
    int n = 0;
    for (double v : values) n += v > 0 ? 1 : 0;
    return n;
}

template <typename T>
BasicTensor<T> cross_correlate(const BasicTensor<T>& templ, const BasicTensor<T>& search)
{
    if (templ.n() != 1 || search.n() != 1) throw ShapeError("cross_correlate expects batch size 1 (axis n)");
    if (templ.c() != search.c())
        throw ShapeError("cross_correlate: channel mismatch " + std::to_string(templ.c()) + " vs " +
                         std::to_string(search.c()) + " (axis c)");
    if (templ.h() > search.h()) throw ShapeError("cross_correlate: template taller than search (axis h)");
    if (templ.w() > search.w()) throw ShapeError("cross_correlate: template wider than search (axis w)");
    return conv2d<T>(search, templ, {}, 1, 0);
}

template <typename T>
CorrelationGrads<T> cross_correlate_backward(const BasicTensor<T>& templ, const BasicTensor<T>& search,
                                             const BasicTensor<T>& grad_out)
{
    auto g = conv2d_backward(search, templ, 1, 0, grad_out);
    return {std::move(g.kernel), std::move(g.input)};
}

template <typename T>
BasicTensor<T> gaussian_label(int h, int w, double sigma)
{
    BasicTensor<T> g(1, 1, h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double dy = std::min(y, h - y);
            const double dx = std::min(x, w - x);
            g(0, 0, y, x) = static_cast<T>(std::exp(-(dy * dy + dx * dx) / (2.0 * sigma * sigma)));
        }
    return g;
}

template <typename T>
std::vector<T> hann_window(int n)
{
    std::vector<T> w(n);
    for (int i = 0; i < n; ++i)
        w[i] = static_cast<T>(0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * (i + 1) / (n + 1))));
    return w;
}

namespace {

template <typename T>
struct CfState {
    int h = 0, w = 0, channels = 0;
    std::vector<T> window;                    // h*w, all ones when disabled
    std::vector<std::complex<T>> label;       // G
    std::vector<std::complex<T>> spectra;     // Z_c, channel-major
    std::vector<T> denom;                     // sum_c |Z_c|^2 + lambda
};

template <typename T>
CfState<T> cf_prepare(const BasicTensor<T>& templ, const CFConfig& cfg)
{
    cfg.validate();
    if (templ.n() != 1) throw ShapeError("cf_block expects batch size 1 (axis n)");
    if (templ.h() < 3 || templ.w() < 3) throw ShapeError("cf_block: template smaller than 3x3");
    CfState<T> s;
    s.h = templ.h();
    s.w = templ.w();
    s.channels = templ.c();
    const std::size_t hw = templ.shape().plane();
    s.window.assign(hw, T(1));
    if (cfg.window) {
        const auto wy = hann_window<T>(s.h);
        const auto wx = hann_window<T>(s.w);
        for (int y = 0; y < s.h; ++y)
            for (int x = 0; x < s.w; ++x) s.window[static_cast<std::size_t>(y) * s.w + x] = wy[y] * wx[x];
    }
    const auto label = gaussian_label<T>(s.h, s.w, cfg.sigma_fraction * std::min(s.h, s.w));
    s.label.assign(label.values().begin(), label.values().end());
    fft2d_inplace<T>(s.label, s.h, s.w, false);

    s.spectra.resize(hw * s.channels);
    s.denom.assign(hw, static_cast<T>(cfg.lambda));
    for (int c = 0; c < s.channels; ++c) {
        std::span<std::complex<T>> z(s.spectra.data() + c * hw, hw);
        const T* src = templ.plane(0, c);
        for (std::size_t i = 0; i < hw; ++i) z[i] = src[i] * s.window[i];
        fft2d_inplace(z, s.h, s.w, false);
        for (std::size_t i = 0; i < hw; ++i) s.denom[i] += std::norm(z[i]);
    }
    return s;
}

} // namespace

template <typename T>
BasicTensor<T> cf_block(const BasicTensor<T>& templ, const CFConfig& cfg)
{
    const auto s = cf_prepare(templ, cfg);
    const std::size_t hw = templ.shape().plane();
    BasicTensor<T> out(templ.shape());
    std::vector<std::complex<T>> a(hw);
    for (int c = 0; c < s.channels; ++c) {
        const std::complex<T>* z = s.spectra.data() + c * hw;
        for (std::size_t i = 0; i < hw; ++i)
            a[i] = s.denom[i] > T(0) ? std::conj(s.label[i]) * z[i] / s.denom[i] : std::complex<T>(0);
        fft2d_inplace<T>(a, s.h, s.w, true);
        T* dst = out.plane(0, c);
        for (std::size_t i = 0; i < hw; ++i) dst[i] = a[i].real();
    }
    return out;
}

template <typename T>
BasicTensor<T> cf_block_backward(const BasicTensor<T>& templ, const CFConfig& cfg, const BasicTensor<T>& grad_out)
{
    // Complex gradients use the convention g = dL/dRe + i dL/dIm.
    const auto s = cf_prepare(templ, cfg);
    const std::size_t hw = templ.shape().plane();
    const T n = static_cast<T>(hw);

    // Filter = Re(F^-1 A)  =>  g_A = F(g_W) / N.
    std::vector<std::complex<T>> g_a(hw * s.channels);
    for (int c = 0; c < s.channels; ++c) {
        std::span<std::complex<T>> ga(g_a.data() + c * hw, hw);
        const T* src = grad_out.plane(0, c);
        for (std::size_t i = 0; i < hw; ++i) ga[i] = src[i];
        fft2d_inplace(ga, s.h, s.w, false);
        for (auto& v : ga) v /= n;
    }
    // A_c = conj(G) Z_c / D  =>  g_D = sum_c Re(conj(g_A) * -conj(G) Z_c / D^2)
    std::vector<T> g_d(hw, T(0));
    for (int c = 0; c < s.channels; ++c)
        for (std::size_t i = 0; i < hw; ++i) {
            if (s.denom[i] <= T(0)) continue;
            const auto dA = -std::conj(s.label[i]) * s.spectra[c * hw + i] / (s.denom[i] * s.denom[i]);
            g_d[i] += (std::conj(g_a[c * hw + i]) * dA).real();
        }
    BasicTensor<T> g_templ(templ.shape());
    std::vector<std::complex<T>> g_z(hw);
    for (int c = 0; c < s.channels; ++c) {
        // g_Z = G g_A / D + 2 g_D Z
        for (std::size_t i = 0; i < hw; ++i) {
            if (s.denom[i] <= T(0)) {
                g_z[i] = 0;
                continue;
            }
            g_z[i] = s.label[i] * g_a[c * hw + i] / s.denom[i] + T(2) * g_d[i] * s.spectra[c * hw + i];
        }
        // Z = F z (z real)  =>  g_z = Re(N * F^-1 g_Z).
        fft2d_inplace<T>(g_z, s.h, s.w, true);
        T* dst = g_templ.plane(0, c);
        for (std::size_t i = 0; i < hw; ++i) dst[i] = n * g_z[i].real() * s.window[i];
    }
    return g_templ;
}

LabelMap make_label_map(int m, double radius_cells, double pos_weight_share, double offset_y, double offset_x)
{
    if (m < 1) throw ConfigError("label map size must be >= 1");
    if (radius_cells < 0) throw ConfigError("label radius must be >= 0");
    if (!(pos_weight_share > 0.0 && pos_weight_share < 1.0))
        throw ConfigError("positive weight share must lie in (0, 1)");
    LabelMap lm;
    lm.size = m;
    lm.values.assign(static_cast<std::size_t>(m) * m, -1.0);
    lm.weights.assign(lm.values.size(), 0.0);
    const double cy = (m - 1) / 2.0 + offset_y;
    const double cx = (m - 1) / 2.0 + offset_x;
    int pos = 0;
    for (int y = 0; y < m; ++y)
        for (int x = 0; x < m; ++x) {
            const double dy = y - cy, dx = x - cx;
            if (dy * dy + dx * dx <= radius_cells * radius_cells + 1e-12) {
                lm.values[static_cast<std::size_t>(y) * m + x] = 1.0;
                ++pos;
            }
        }
    const int neg = m * m - pos;
    if (neg == 0) throw ConfigError("label radius " + std::to_string(radius_cells) + " leaves no negative cells");
    if (pos == 0) throw ConfigError("label map has no positive cell (offset outside the map?)");
    for (std::size_t i = 0; i < lm.values.size(); ++i)
        lm.weights[i] = lm.values[i] > 0 ? pos_weight_share / pos : (1.0 - pos_weight_share) / neg;
    return lm;
}

template <typename T>
LossResult<T> logistic_loss(const BasicTensor<T>& response, const LabelMap& labels)
{
    if (response.size() != labels.values.size() || response.h() != labels.size || response.w() != labels.size)
        throw ShapeError("logistic_loss: response " + response.shape().str() + " vs label side " +
                         std::to_string(labels.size));
    LossResult<T> r{T(0), BasicTensor<T>(response.shape())};
    double total = 0.0;
    for (std::size_t i = 0; i < response.size(); ++i) {
        const double y = labels.values[i];
        const double o = response[i];
        total += labels.weights[i] * softplus(-y * o);
        // d/do softplus(-y o) = -y * sigmoid(-y o)
        r.grad[i] = static_cast<T>(labels.weights[i] * (-y) * sigmoid(-y * o));
    }
    r.value = static_cast<T>(total);
    return r;
}

template <typename T>
BasicTensor<T> classification_forward(const BasicTensor<T>& conv5, const BasicTensor<T>& weight,
                                      const BasicTensor<T>& bias)
{
    if (weight.c() != conv5.c())
        throw ConfigError("classifier expects " + std::to_string(weight.c()) + " input channels, got " +
                          std::to_string(conv5.c()));
    return conv2d<T>(global_avg_pool(conv5), weight, bias.values(), 1, 0);
}

template <typename T>
ClassifierGrads<T> classification_backward(const BasicTensor<T>& conv5, const BasicTensor<T>& weight,
                                           const BasicTensor<T>& grad_logits)
{
    const auto pooled = global_avg_pool(conv5);
    auto g = conv2d_backward(pooled, weight, 1, 0, grad_logits);
    ClassifierGrads<T> out;
    out.conv5 = global_avg_pool_backward(conv5.shape(), g.input);
    out.weight = std::move(g.kernel);
    const int classes = static_cast<int>(g.bias.size());
    out.bias = BasicTensor<T>(Shape{classes, 1, 1, 1}, std::move(g.bias));
    return out;
}

template <typename T>
LossResult<T> cross_entropy(const BasicTensor<T>& logits, const std::vector<int>& classes)
{
    const int n = logits.n();
    const int k = logits.c() * logits.h() * logits.w();
    if (static_cast<int>(classes.size()) != n)
        throw InputError("cross_entropy: " + std::to_string(classes.size()) + " labels for batch of " +
                         std::to_string(n));
    LossResult<T> r{T(0), BasicTensor<T>(logits.shape())};
    double total = 0.0;
    for (int b = 0; b < n; ++b) {
        const int cls = classes[b];
        if (cls < 0 || cls >= k)
            throw InputError("cross_entropy: class " + std::to_string(cls) + " outside [0, " + std::to_string(k) + ")");
        const T* z = logits.data() + static_cast<std::size_t>(b) * k;
        double m = z[0];
        for (int j = 1; j < k; ++j) m = std::max(m, static_cast<double>(z[j]));
        double s = 0.0;
        for (int j = 0; j < k; ++j) s += std::exp(z[j] - m);
        const double lse = m + std::log(s);
        total += lse - z[cls];
        T* g = r.grad.data() + static_cast<std::size_t>(b) * k;
        for (int j = 0; j < k; ++j)
            g[j] = static_cast<T>((std::exp(z[j] - lse) - (j == cls ? 1.0 : 0.0)) / n);
    }
    r.value = static_cast<T>(total / n);
    return r;
}

template <typename T>
ParamSet<T> build_heads(int conv5_channels, int num_classes, std::uint64_t seed, double gain_init)
{
    if (num_classes < 2) throw ConfigError("classifier needs at least 2 classes, got " + std::to_string(num_classes));
    Rng rng(seed);
    ParamSet<T> p;
    p.add(head_names::dis_gain, BasicTensor<T>(1, 1, 1, 1, static_cast<T>(gain_init)));
    p.add(head_names::dis_bias, BasicTensor<T>(1, 1, 1, 1));
    p.add(head_names::fin_gain, BasicTensor<T>(1, 1, 1, 1, static_cast<T>(gain_init)));
    p.add(head_names::fin_bias, BasicTensor<T>(1, 1, 1, 1));
    BasicTensor<T> w(num_classes, conv5_channels, 1, 1);
    const double stddev = std::sqrt(1.0 / conv5_channels);
    for (auto& v : w.values()) v = static_cast<T>(rng.normal(0.0, stddev));
    p.add(head_names::cls_weight, std::move(w));
    p.add(head_names::cls_bias, BasicTensor<T>(num_classes, 1, 1, 1));
    return p;
}

#define MMNET_INSTANTIATE_HEADS(T)                                                                                \
    template BasicTensor<T> cross_correlate(const BasicTensor<T>&, const BasicTensor<T>&);                       \
    template CorrelationGrads<T> cross_correlate_backward(const BasicTensor<T>&, const BasicTensor<T>&,          \
                                                          const BasicTensor<T>&);                                \
    template BasicTensor<T> gaussian_label<T>(int, int, double);                                                 \
    template std::vector<T> hann_window<T>(int);                                                                 \
    template BasicTensor<T> cf_block(const BasicTensor<T>&, const CFConfig&);                                    \
    template BasicTensor<T> cf_block_backward(const BasicTensor<T>&, const CFConfig&, const BasicTensor<T>&);    \
    template LossResult<T> logistic_loss(const BasicTensor<T>&, const LabelMap&);                                \
    template BasicTensor<T> classification_forward(const BasicTensor<T>&, const BasicTensor<T>&,                 \
                                                   const BasicTensor<T>&);                                       \
    template ClassifierGrads<T> classification_backward(const BasicTensor<T>&, const BasicTensor<T>&,            \
                                                        const BasicTensor<T>&);                                  \
    template LossResult<T> cross_entropy(const BasicTensor<T>&, const std::vector<int>&);                        \
    template ParamSet<T> build_heads<T>(int, int, std::uint64_t, double);

MMNET_INSTANTIATE_HEADS(float)
MMNET_INSTANTIATE_HEADS(double)

} // namespace mmnet
