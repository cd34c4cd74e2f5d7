#include "mmnet/fanet.hpp"

#include <Eigen/Core>

#include <cmath>
#include <string>

#include "mmnet/ops.hpp"
#include "mmnet/rng.hpp"

namespace mmnet {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;

constexpr int kEncKernel = 5;
constexpr int kEncStride = 2;
constexpr int kEncPad = 2;
constexpr int kDecKernel = 4;
constexpr int kDecStride = 2;
constexpr int kDecPad = 1;

std::string wname(const char* layer) { return std::string(layer) + ".weight"; }
std::string bname(const char* layer) { return std::string(layer) + ".bias"; }

template <typename T>
const BasicTensor<T>& weight(const ParamSet<T>& p, const char* layer)
{
    return p.at(wname(layer));
}

template <typename T>
std::span<const T> bias(const ParamSet<T>& p, const char* layer)
{
    return p.at(bname(layer)).values();
}

template <typename T>
void accumulate(ParamSet<T>& grads, const char* layer, const ConvGrads<T>& g)
{
    add_inplace(grads.at(wname(layer)), g.kernel);
    auto& gb = grads.at(bname(layer));
    for (std::size_t i = 0; i < g.bias.size(); ++i) gb[i] += g.bias[i];
}

template <typename T>
void check_input(const BasicTensor<T>& x, const ParamSet<T>& p)
{
    if (x.h() < 4 || x.w() < 4)
        throw ShapeError("fanet: spatial size " + std::to_string(x.h()) + "x" + std::to_string(x.w()) +
                         " below the 4x4 minimum");
    if (weight(p, fanet_names::enc1).c() != x.c())
        throw ShapeError("fanet: input has " + std::to_string(x.c()) + " channels, parameters expect " +
                         std::to_string(weight(p, fanet_names::enc1).c()) + " (axis c)");
}

template <typename T>
void add_layer(ParamSet<T>& p, Rng& rng, const char* layer, Shape wshape, int bias_len, double stddev)
{
    BasicTensor<T> w(wshape);
    for (auto& v : w.values()) v = static_cast<T>(rng.normal(0.0, stddev));
    p.add(wname(layer), std::move(w));
    p.add(bname(layer), BasicTensor<T>(bias_len, 1, 1, 1));
}

} // namespace

template <typename T>
ParamSet<T> build_fanet(int channels, std::uint64_t seed)
{
    const int c = channels;
    if (c < 4 || c % 4 != 0) throw ConfigError("fanet channels must be a positive multiple of 4, got " + std::to_string(c));
    Rng rng(seed);
    ParamSet<T> p;
    const auto fan = [](int cin, int k) { return std::sqrt(1.0 / static_cast<double>(cin * k * k)); };
    add_layer<T>(p, rng, fanet_names::enc1, {c / 2, c, kEncKernel, kEncKernel}, c / 2, fan(c, kEncKernel));
    add_layer<T>(p, rng, fanet_names::enc2, {c / 4, c / 2, kEncKernel, kEncKernel}, c / 4, fan(c / 2, kEncKernel));
    add_layer<T>(p, rng, fanet_names::dec1, {c / 4, c / 2, kDecKernel, kDecKernel}, c / 2, fan(c / 4, kDecKernel));
    add_layer<T>(p, rng, fanet_names::dec2, {c / 2, 1, kDecKernel, kDecKernel}, 1, fan(c / 2, kDecKernel));
    add_layer<T>(p, rng, fanet_names::query, {c / 2, c, 1, 1}, c / 2, fan(c, 1));
    add_layer<T>(p, rng, fanet_names::key, {c / 2, c, 1, 1}, c / 2, fan(c, 1));
    add_layer<T>(p, rng, fanet_names::value, {c, c, 1, 1}, c, fan(c, 1));

    BasicTensor<T> fuse(c, 2 * c, 1, 1);
    for (int o = 0; o < c; ++o)
        for (int i = 0; i < 2 * c; ++i) {
            const double base = (i == o || i == c + o) ? 0.5 : 0.0;
            fuse(o, i, 0, 0) = static_cast<T>(base + rng.normal(0.0, 0.01));
        }
    p.add(wname(fanet_names::fuse), std::move(fuse));
    p.add(bname(fanet_names::fuse), BasicTensor<T>(c, 1, 1, 1));
    p.add(fanet_names::delta, BasicTensor<T>(1, 1, 1, 1));
    return p;
}

template <typename T>
BasicTensor<T> holistic_correlation(const BasicTensor<T>& x, const ParamSet<T>& p, FanetTape<T>* tape)
{
    using namespace fanet_names;
    check_input(x, p);
    auto e1 = conv2d<T>(x, weight(p, enc1), bias(p, enc1), kEncStride, kEncPad);
    auto e2 = conv2d<T>(e1, weight(p, enc2), bias(p, enc2), kEncStride, kEncPad);
    auto d1 = conv_transpose2d<T>(e2, weight(p, dec1), bias(p, dec1), kDecStride, kDecPad, e1.h(), e1.w());
    auto logits = conv_transpose2d<T>(d1, weight(p, dec2), bias(p, dec2), kDecStride, kDecPad, x.h(), x.w());
    auto gate = activation(logits, Activation::sigmoid);

    BasicTensor<T> out(x.shape());
    const std::size_t hw = x.shape().plane();
    for (int n = 0; n < x.n(); ++n) {
        const T* g = gate.plane(n, 0);
        for (int c = 0; c < x.c(); ++c) {
            const T* src = x.plane(n, c);
            T* dst = out.plane(n, c);
            for (std::size_t i = 0; i < hw; ++i) dst[i] = src[i] * g[i];
        }
    }
    if (tape) {
        tape->enc1 = std::move(e1);
        tape->enc2 = std::move(e2);
        tape->dec1 = std::move(d1);
        tape->gate = std::move(gate);
        tape->holistic = out;
    }
    return out;
}

namespace {

template <typename T>
BasicTensor<T> attention_from(const BasicTensor<T>& q, const BasicTensor<T>& k)
{
    const int n_pix = q.h() * q.w();
    BasicTensor<T> scores(q.n(), 1, n_pix, n_pix);
    for (int n = 0; n < q.n(); ++n) {
        ConstMapMat<T> Q(q.plane(n, 0), q.c(), n_pix);
        ConstMapMat<T> K(k.plane(n, 0), k.c(), n_pix);
        MapMat<T>(scores.plane(n, 0), n_pix, n_pix).noalias() = Q.transpose() * K;
    }
    return softmax_rows(scores);
}

} // namespace

template <typename T>
BasicTensor<T> pixel_correlation_map(const BasicTensor<T>& x, const ParamSet<T>& p)
{
    using namespace fanet_names;
    auto q = conv2d<T>(x, weight(p, query), bias(p, query), 1, 0);
    auto k = conv2d<T>(x, weight(p, key), bias(p, key), 1, 0);
    return attention_from(q, k);
}

template <typename T>
BasicTensor<T> pixel_correlation(const BasicTensor<T>& x, const ParamSet<T>& p, FanetTape<T>* tape)
{
    using namespace fanet_names;
    auto q = conv2d<T>(x, weight(p, query), bias(p, query), 1, 0);
    auto k = conv2d<T>(x, weight(p, key), bias(p, key), 1, 0);
    auto v = conv2d<T>(x, weight(p, value), bias(p, value), 1, 0);
    auto s = attention_from(q, k);
    const int n_pix = x.h() * x.w();
    BasicTensor<T> agg(v.shape());
    for (int n = 0; n < x.n(); ++n) {
        ConstMapMat<T> V(v.plane(n, 0), v.c(), n_pix);
        ConstMapMat<T> S(s.plane(n, 0), n_pix, n_pix);
        MapMat<T>(agg.plane(n, 0), v.c(), n_pix).noalias() = V * S.transpose();
    }
    const T d = p.at(delta)[0];
    BasicTensor<T> out = x;
    axpy_inplace(out, d, agg);
    if (tape) {
        tape->query = std::move(q);
        tape->key = std::move(k);
        tape->value = std::move(v);
        tape->attention = std::move(s);
        tape->aggregated = std::move(agg);
        tape->pixel = out;
    }
    return out;
}

template <typename T>
BasicTensor<T> fanet_forward(const BasicTensor<T>& x, const ParamSet<T>& p, FanetTape<T>* tape)
{
    using namespace fanet_names;
    auto h = holistic_correlation(x, p, tape);
    auto px = pixel_correlation(x, p, tape);
    auto cat = concat_channels(h, px);
    auto out = conv2d<T>(cat, weight(p, fuse), bias(p, fuse), 1, 0);
    if (tape) {
        tape->input = x;
        tape->concat = std::move(cat);
    }
    return out;
}

template <typename T>
BasicTensor<T> fanet_backward(const ParamSet<T>& p, const FanetTape<T>& tape, const BasicTensor<T>& grad_out,
                              ParamSet<T>& grads)
{
    using namespace fanet_names;
    const auto& x = tape.input;
    const int C = x.c();
    const int n_pix = x.h() * x.w();
    const std::size_t hw = x.shape().plane();

    auto gf = conv2d_backward(tape.concat, weight(p, fuse), 1, 0, grad_out);
    accumulate(grads, fuse, gf);
    auto g_hol = slice_channels(gf.input, 0, C);
    auto g_pix = slice_channels(gf.input, C, C);

    BasicTensor<T> gx = g_pix;  // residual path of the pixel branch

    // Pixel branch: out = X + delta * S_p.
    const T d = p.at(delta)[0];
    grads.at(delta)[0] += dot(g_pix, tape.aggregated);
    BasicTensor<T> g_q(tape.query.shape()), g_k(tape.key.shape()), g_v(tape.value.shape());
    for (int n = 0; n < x.n(); ++n) {
        ConstMapMat<T> gSp(g_pix.plane(n, 0), C, n_pix);
        ConstMapMat<T> S(tape.attention.plane(n, 0), n_pix, n_pix);
        ConstMapMat<T> V(tape.value.plane(n, 0), C, n_pix);
        // S_p = V S^T  =>  dV = dS_p S,  dS = dS_p^T V   (both scaled by delta)
        MapMat<T>(g_v.plane(n, 0), C, n_pix).noalias() = d * (gSp * S);
        RowMat<T> gS = d * (gSp.transpose() * V);
        // Softmax backward per row.
        for (int i = 0; i < n_pix; ++i) {
            T inner = 0;  // serial, so the result does not depend on alignment
            for (int j = 0; j < n_pix; ++j) inner += gS(i, j) * S(i, j);
            gS.row(i) = (S.row(i).array() * (gS.row(i).array() - inner)).matrix();
        }
        ConstMapMat<T> Q(tape.query.plane(n, 0), tape.query.c(), n_pix);
        ConstMapMat<T> K(tape.key.plane(n, 0), tape.key.c(), n_pix);
        // scores = Q^T K  =>  dQ = K dScores^T,  dK = Q dScores
        MapMat<T>(g_q.plane(n, 0), tape.query.c(), n_pix).noalias() = K * gS.transpose();
        MapMat<T>(g_k.plane(n, 0), tape.key.c(), n_pix).noalias() = Q * gS;
    }
    for (auto [layer, g] : {std::pair{query, &g_q}, std::pair{key, &g_k}, std::pair{value, &g_v}}) {
        auto cg = conv2d_backward(x, weight(p, layer), 1, 0, *g);
        accumulate(grads, layer, cg);
        add_inplace(gx, cg.input);
    }

    // Holistic branch: out = X * gate.
    BasicTensor<T> g_gate(tape.gate.shape());
    for (int n = 0; n < x.n(); ++n) {
        const T* gate = tape.gate.plane(n, 0);
        T* gg = g_gate.plane(n, 0);
        for (int c = 0; c < C; ++c) {
            const T* gh = g_hol.plane(n, c);
            const T* xv = x.plane(n, c);
            T* gxv = gx.plane(n, c);
            for (std::size_t i = 0; i < hw; ++i) {
                gxv[i] += gh[i] * gate[i];
                gg[i] += gh[i] * xv[i];
            }
        }
    }
    auto g_logits = activation_backward(tape.gate, Activation::sigmoid, g_gate);
    auto gd2 = conv_transpose2d_backward(tape.dec1, weight(p, dec2), kDecStride, kDecPad, g_logits);
    accumulate(grads, dec2, gd2);
    auto gd1 = conv_transpose2d_backward(tape.enc2, weight(p, dec1), kDecStride, kDecPad, gd2.input);
    accumulate(grads, dec1, gd1);
    auto ge2 = conv2d_backward(tape.enc1, weight(p, enc2), kEncStride, kEncPad, gd1.input);
    accumulate(grads, enc2, ge2);
    auto ge1 = conv2d_backward(x, weight(p, enc1), kEncStride, kEncPad, ge2.input);
    accumulate(grads, enc1, ge1);
    add_inplace(gx, ge1.input);
    return gx;
}

#define MMNET_INSTANTIATE_FANET(T)                                                                               \
    template ParamSet<T> build_fanet<T>(int, std::uint64_t);                                                    \
    template BasicTensor<T> holistic_correlation(const BasicTensor<T>&, const ParamSet<T>&, FanetTape<T>*);     \
    template BasicTensor<T> pixel_correlation_map(const BasicTensor<T>&, const ParamSet<T>&);                   \
    template BasicTensor<T> pixel_correlation(const BasicTensor<T>&, const ParamSet<T>&, FanetTape<T>*);        \
    template BasicTensor<T> fanet_forward(const BasicTensor<T>&, const ParamSet<T>&, FanetTape<T>*);            \
    template BasicTensor<T> fanet_backward(const ParamSet<T>&, const FanetTape<T>&, const BasicTensor<T>&,      \
                                           ParamSet<T>&);

MMNET_INSTANTIATE_FANET(float)
MMNET_INSTANTIATE_FANET(double)

} // namespace mmnet
