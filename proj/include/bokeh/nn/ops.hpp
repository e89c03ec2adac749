#ifndef BOKEH_NN_OPS_HPP
#define BOKEH_NN_OPS_HPP

// Forward/backward kernels on C x H x W feature maps. Backward functions
// accumulate (+=) into parameter gradients and return input gradients.

#include <cmath>
#include <numbers>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <unsupported/Eigen/SpecialFunctions>

#include "bokeh/tensor.hpp"

namespace bokeh::nn {

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapR = Eigen::Map<MatR<T>>;
template <typename T>
using CMapR = Eigen::Map<const MatR<T>>;
template <typename T>
using VecMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>;
template <typename T>
using CVecMap = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>;

template <typename T>
CMapR<T> as_matrix(const Tensor<T>& x) {
    return CMapR<T>(x.data(), static_cast<Eigen::Index>(x.channels()), static_cast<Eigen::Index>(x.plane()));
}
template <typename T>
MapR<T> as_matrix(Tensor<T>& x) {
    return MapR<T>(x.data(), static_cast<Eigen::Index>(x.channels()), static_cast<Eigen::Index>(x.plane()));
}
template <typename T>
CMapR<T> weight_matrix(const Tensor<T>& w) {
    return CMapR<T>(w.data(), static_cast<Eigen::Index>(w.dim(0)), static_cast<Eigen::Index>(w.size() / w.dim(0)));
}
template <typename T>
MapR<T> weight_matrix(Tensor<T>& w) {
    return MapR<T>(w.data(), static_cast<Eigen::Index>(w.dim(0)), static_cast<Eigen::Index>(w.size() / w.dim(0)));
}

// ---- affine map on vectors ---------------------------------------------------

template <typename T>
Tensor<T> linear_forward(const Tensor<T>& w, const Tensor<T>* b, const Tensor<T>& x) {
    if (w.dim(1) != x.size())
        throw DimensionError("linear expects " + std::to_string(w.dim(1)) + " inputs, got " + std::to_string(x.size()));
    Tensor<T> y({w.dim(0)});
    VecMap<T> ym(y.data(), static_cast<Eigen::Index>(y.size()));
    ym.noalias() = weight_matrix(w) * CVecMap<T>(x.data(), static_cast<Eigen::Index>(x.size()));
    if (b) ym += CVecMap<T>(b->data(), static_cast<Eigen::Index>(b->size()));
    return y;
}

template <typename T>
Tensor<T> linear_backward(const Tensor<T>& w, const Tensor<T>& x, const Tensor<T>& dy, Tensor<T>& dw, Tensor<T>* db) {
    CVecMap<T> dym(dy.data(), static_cast<Eigen::Index>(dy.size()));
    CVecMap<T> xm(x.data(), static_cast<Eigen::Index>(x.size()));
    weight_matrix(dw).noalias() += dym * xm.transpose();
    if (db) VecMap<T>(db->data(), static_cast<Eigen::Index>(db->size())) += dym;
    Tensor<T> dx({x.size()});
    VecMap<T>(dx.data(), static_cast<Eigen::Index>(dx.size())).noalias() = weight_matrix(w).transpose() * dym;
    return dx;
}

// ---- 1x1 convolution ---------------------------------------------------------

template <typename T>
Tensor<T> conv1x1_forward(const Tensor<T>& w, const Tensor<T>* b, const Tensor<T>& x) {
    if (w.dim(1) != x.channels())
        throw DimensionError("1x1 convolution expects " + std::to_string(w.dim(1)) + " channels, got " +
                             shape_string(x.shape()));
    Tensor<T> y = Tensor<T>::chw(w.dim(0), x.height(), x.width());
    auto ym = as_matrix(y);
    ym.noalias() = weight_matrix(w) * as_matrix(x);
    if (b)
        for (std::size_t c = 0; c < y.channels(); ++c) ym.row(static_cast<Eigen::Index>(c)).array() += (*b)[c];
    return y;
}

template <typename T>
Tensor<T> conv1x1_backward(const Tensor<T>& w, const Tensor<T>& x, const Tensor<T>& dy, Tensor<T>& dw, Tensor<T>* db) {
    auto dym = as_matrix(dy);
    weight_matrix(dw).noalias() += dym * as_matrix(x).transpose();
    if (db)
        for (std::size_t c = 0; c < dy.channels(); ++c) (*db)[c] += dym.row(static_cast<Eigen::Index>(c)).sum();
    Tensor<T> dx = Tensor<T>::chw(x.channels(), x.height(), x.width());
    as_matrix(dx).noalias() = weight_matrix(w).transpose() * dym;
    return dx;
}

// ---- dense 3x3 convolution, zero padding 1 -----------------------------------

namespace detail {

// dst[c, y, x] = src[c, y + dy, x + dx] (zero outside).
template <typename T>
void shift_copy(const Tensor<T>& src, Tensor<T>& dst, int dy, int dx) {
    const int h = static_cast<int>(src.height()), wd = static_cast<int>(src.width());
    dst.zero();
    for (std::size_t c = 0; c < src.channels(); ++c) {
        const T* s = src.channel(c);
        T* d = dst.channel(c);
        for (int y = 0; y < h; ++y) {
            const int sy = y + dy;
            if (sy < 0 || sy >= h) continue;
            const int x0 = std::max(0, -dx), x1 = std::min(wd, wd - dx);
            for (int x = x0; x < x1; ++x) d[y * wd + x] = s[sy * wd + x + dx];
        }
    }
}

// dst[c, y + dy, x + dx] += src[c, y, x] (dropped outside).
template <typename T>
void shift_add_back(const Tensor<T>& src, Tensor<T>& dst, int dy, int dx) {
    const int h = static_cast<int>(src.height()), wd = static_cast<int>(src.width());
    for (std::size_t c = 0; c < src.channels(); ++c) {
        const T* s = src.channel(c);
        T* d = dst.channel(c);
        for (int y = 0; y < h; ++y) {
            const int sy = y + dy;
            if (sy < 0 || sy >= h) continue;
            const int x0 = std::max(0, -dx), x1 = std::min(wd, wd - dx);
            for (int x = x0; x < x1; ++x) d[sy * wd + x + dx] += s[y * wd + x];
        }
    }
}

// Tap k of a [Cout, Cin, 3, 3] kernel as a Cout x Cin matrix.
template <typename T>
MatR<T> tap_matrix(const Tensor<T>& w, int k) {
    const auto co = static_cast<Eigen::Index>(w.dim(0)), ci = static_cast<Eigen::Index>(w.dim(1));
    MatR<T> m(co, ci);
    for (Eigen::Index o = 0; o < co; ++o)
        for (Eigen::Index i = 0; i < ci; ++i) m(o, i) = w[static_cast<std::size_t>((o * ci + i) * 9 + k)];
    return m;
}

} // namespace detail

template <typename T>
Tensor<T> conv3x3_forward(const Tensor<T>& w, const Tensor<T>* b, const Tensor<T>& x) {
    if (w.dim(1) != x.channels())
        throw DimensionError("3x3 convolution expects " + std::to_string(w.dim(1)) + " channels, got " +
                             shape_string(x.shape()));
    Tensor<T> y = Tensor<T>::chw(w.dim(0), x.height(), x.width());
    Tensor<T> shifted = Tensor<T>::chw(x.channels(), x.height(), x.width());
    auto ym = as_matrix(y);
    for (int k = 0; k < 9; ++k) {
        detail::shift_copy(x, shifted, k / 3 - 1, k % 3 - 1);
        ym.noalias() += detail::tap_matrix(w, k) * as_matrix(std::as_const(shifted));
    }
    if (b)
        for (std::size_t c = 0; c < y.channels(); ++c) ym.row(static_cast<Eigen::Index>(c)).array() += (*b)[c];
    return y;
}

template <typename T>
Tensor<T> conv3x3_backward(const Tensor<T>& w, const Tensor<T>& x, const Tensor<T>& dy, Tensor<T>& dw, Tensor<T>* db) {
    const auto co = w.dim(0), ci = w.dim(1);
    auto dym = as_matrix(dy);
    Tensor<T> dx = Tensor<T>::chw(ci, x.height(), x.width());
    Tensor<T> shifted = Tensor<T>::chw(ci, x.height(), x.width());
    for (int k = 0; k < 9; ++k) {
        const int sy = k / 3 - 1, sx = k % 3 - 1;
        detail::shift_copy(x, shifted, sy, sx);
        MatR<T> gk = dym * as_matrix(std::as_const(shifted)).transpose();
        for (std::size_t o = 0; o < co; ++o)
            for (std::size_t i = 0; i < ci; ++i) dw[(o * ci + i) * 9 + static_cast<std::size_t>(k)] += gk(o, i);
        as_matrix(shifted).noalias() = detail::tap_matrix(w, k).transpose() * dym;
        detail::shift_add_back(shifted, dx, sy, sx);
    }
    if (db)
        for (std::size_t c = 0; c < co; ++c) (*db)[c] += dym.row(static_cast<Eigen::Index>(c)).sum();
    return dx;
}

// ---- depth-wise 3x3 convolution, zero padding 1 ------------------------------

namespace detail {

// Writes a channel plane into the interior of an (h+2) x (w+2) buffer whose
// border the caller keeps at zero.
template <typename T>
void pad_plane(const T* src, std::size_t h, std::size_t w, AlignedVector<T>& dst) {
    const std::size_t pw = w + 2;
    for (std::size_t r = 0; r < h; ++r) std::copy_n(src + r * w, w, dst.data() + (r + 1) * pw + 1);
}

} // namespace detail

template <typename T>
Tensor<T> dwconv3x3_forward(const Tensor<T>& w, const Tensor<T>& x) {
    if (w.dim(0) != x.channels())
        throw DimensionError("depth-wise convolution expects " + std::to_string(w.dim(0)) + " channels, got " +
                             shape_string(x.shape()));
    const std::size_t h = x.height(), wd = x.width(), pw = wd + 2;
    Tensor<T> y = Tensor<T>::chw(x.channels(), h, wd);
    AlignedVector<T> pad((h + 2) * pw, T(0));
    for (std::size_t c = 0; c < x.channels(); ++c) {
        detail::pad_plane(x.channel(c), h, wd, pad);
        T* __restrict__ d = y.channel(c);
        const T* k = w.data() + c * 9;
        for (std::size_t r = 0; r < h; ++r) {
            T* __restrict__ out = d + r * wd;
            const T* __restrict__ i0 = pad.data() + r * pw;
            const T* __restrict__ i1 = i0 + pw;
            const T* __restrict__ i2 = i1 + pw;
            for (std::size_t i = 0; i < wd; ++i)
                out[i] = k[0] * i0[i] + k[1] * i0[i + 1] + k[2] * i0[i + 2] + k[3] * i1[i] + k[4] * i1[i + 1] +
                         k[5] * i1[i + 2] + k[6] * i2[i] + k[7] * i2[i + 1] + k[8] * i2[i + 2];
        }
    }
    return y;
}

template <typename T>
Tensor<T> dwconv3x3_backward(const Tensor<T>& w, const Tensor<T>& x, const Tensor<T>& dy, Tensor<T>& dw) {
    const std::size_t h = x.height(), wd = x.width(), pw = wd + 2;
    Tensor<T> dx = Tensor<T>::chw(x.channels(), h, wd);
    // Input and output gradient both padded by one pixel; the transposed
    // kernel then reads dy like the forward reads x.
    AlignedVector<T> pad((h + 2) * pw, T(0)), gpad((h + 2) * pw, T(0));
    const auto n = static_cast<Eigen::Index>(wd);
    for (std::size_t c = 0; c < x.channels(); ++c) {
        detail::pad_plane(x.channel(c), h, wd, pad);
        detail::pad_plane(dy.channel(c), h, wd, gpad);
        const T* g = dy.channel(c);
        const T* k = w.data() + c * 9;
        T acc[9] = {};
        for (std::size_t r = 0; r < h; ++r) {
            CVecMap<T> gv(g + r * wd, n);
            for (std::size_t ky = 0; ky < 3; ++ky) {
                const T* in = pad.data() + (r + ky) * pw;
                acc[ky * 3] += gv.dot(CVecMap<T>(in, n));
                acc[ky * 3 + 1] += gv.dot(CVecMap<T>(in + 1, n));
                acc[ky * 3 + 2] += gv.dot(CVecMap<T>(in + 2, n));
            }
        }
        for (int t = 0; t < 9; ++t) dw[c * 9 + static_cast<std::size_t>(t)] += acc[t];
        T* __restrict__ d = dx.channel(c);
        for (std::size_t r = 0; r < h; ++r) {
            T* __restrict__ out = d + r * wd;
            const T* __restrict__ g0 = gpad.data() + r * pw;
            const T* __restrict__ g1 = g0 + pw;
            const T* __restrict__ g2 = g1 + pw;
            for (std::size_t i = 0; i < wd; ++i)
                out[i] = k[8] * g0[i] + k[7] * g0[i + 1] + k[6] * g0[i + 2] + k[5] * g1[i] + k[4] * g1[i + 1] +
                         k[3] * g1[i + 2] + k[2] * g2[i] + k[1] * g2[i + 1] + k[0] * g2[i + 2];
        }
    }
    return dx;
}

// ---- layer normalisation across channels at every pixel ----------------------

template <typename T>
struct LayerNormCache {
    Tensor<T> xhat;
    AlignedVector<T> rstd;
};

template <typename T>
Tensor<T> layernorm_forward(const Tensor<T>& gain, const Tensor<T>& bias, const Tensor<T>& x, T eps,
                            LayerNormCache<T>* cache) {
    const std::size_t c = x.channels(), p = x.plane();
    if (gain.size() != c) throw DimensionError("layer norm over " + std::to_string(gain.size()) + " channels given " + shape_string(x.shape()));
    AlignedVector<T> mean(p, T(0)), var(p, T(0));
    for (std::size_t k = 0; k < c; ++k) {
        const T* s = x.channel(k);
        for (std::size_t i = 0; i < p; ++i) mean[i] += s[i];
    }
    const T inv_c = T(1) / static_cast<T>(c);
    for (auto& m : mean) m *= inv_c;
    for (std::size_t k = 0; k < c; ++k) {
        const T* s = x.channel(k);
        for (std::size_t i = 0; i < p; ++i) {
            const T d = s[i] - mean[i];
            var[i] += d * d;
        }
    }
    for (auto& v : var) v = T(1) / std::sqrt(v * inv_c + eps);
    Tensor<T> y = Tensor<T>::chw(c, x.height(), x.width());
    Tensor<T> xhat;
    if (cache) xhat = Tensor<T>::chw(c, x.height(), x.width());
    for (std::size_t k = 0; k < c; ++k) {
        const T* s = x.channel(k);
        T* d = y.channel(k);
        const T g = gain[k], b = bias[k];
        T* xh = cache ? xhat.channel(k) : nullptr;
        for (std::size_t i = 0; i < p; ++i) {
            const T n = (s[i] - mean[i]) * var[i];
            if (xh) xh[i] = n;
            d[i] = n * g + b;
        }
    }
    if (cache) {
        cache->xhat = std::move(xhat);
        cache->rstd = std::move(var);
    }
    return y;
}

template <typename T>
Tensor<T> layernorm_backward(const Tensor<T>& gain, const LayerNormCache<T>& cache, const Tensor<T>& dy,
                             Tensor<T>& dgain, Tensor<T>& dbias) {
    const std::size_t c = dy.channels(), p = dy.plane();
    AlignedVector<T> mean_g(p, T(0)), mean_gx(p, T(0));
    Tensor<T> dx = Tensor<T>::chw(c, dy.height(), dy.width());
    for (std::size_t k = 0; k < c; ++k) {
        const T* g = dy.channel(k);
        const T* xh = cache.xhat.channel(k);
        T* dxh = dx.channel(k);
        const T gk = gain[k];
        T sg = 0, sb = 0;
        for (std::size_t i = 0; i < p; ++i) {
            sg += g[i] * xh[i];
            sb += g[i];
            const T v = g[i] * gk;
            dxh[i] = v;
            mean_g[i] += v;
            mean_gx[i] += v * xh[i];
        }
        dgain[k] += sg;
        dbias[k] += sb;
    }
    const T inv_c = T(1) / static_cast<T>(c);
    for (std::size_t k = 0; k < c; ++k) {
        const T* xh = cache.xhat.channel(k);
        T* d = dx.channel(k);
        for (std::size_t i = 0; i < p; ++i)
            d[i] = cache.rstd[i] * (d[i] - mean_g[i] * inv_c - xh[i] * mean_gx[i] * inv_c);
    }
    return dx;
}

// ---- GELU (exact, erf form) --------------------------------------------------

template <typename T>
inline T gelu(T x) {
    return T(0.5) * x * (T(1) + std::erf(x * T(std::numbers::sqrt2 / 2)));
}

template <typename T>
inline T gelu_grad(T x) {
    const T cdf = T(0.5) * (T(1) + std::erf(x * T(std::numbers::sqrt2 / 2)));
    const T pdf = std::exp(T(-0.5) * x * x) * T(std::numbers::inv_sqrtpi / std::numbers::sqrt2);
    return cdf + x * pdf;
}

template <typename T>
using ArrMap = Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>>;
template <typename T>
using CArrMap = Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>>;

// Vectorised over a buffer: y = GELU(x).
template <typename T>
void gelu_apply(const T* x, T* y, std::size_t n) {
    CArrMap<T> a(x, static_cast<Eigen::Index>(n));
    ArrMap<T>(y, static_cast<Eigen::Index>(n)) = T(0.5) * a * (T(1) + (a * T(std::numbers::sqrt2 / 2)).erf());
}

// Vectorised: value = GELU(x), slope = GELU'(x).
template <typename T>
void gelu_value_and_slope(const T* x, T* value, T* slope, std::size_t n) {
    const auto len = static_cast<Eigen::Index>(n);
    CArrMap<T> a(x, len);
    ArrMap<T> cdf(slope, len);
    cdf = T(0.5) * (T(1) + (a * T(std::numbers::sqrt2 / 2)).erf());
    ArrMap<T>(value, len) = a * cdf;
    cdf += a * (T(-0.5) * a.square()).exp() * T(std::numbers::inv_sqrtpi / std::numbers::sqrt2);
}

template <typename T>
Tensor<T> gelu_forward(const Tensor<T>& x) {
    Tensor<T> y(x.shape());
    gelu_apply(x.data(), y.data(), x.size());
    return y;
}

template <typename T>
Tensor<T> gelu_backward(const Tensor<T>& x, const Tensor<T>& dy) {
    Tensor<T> value(x.shape()), dx(x.shape());
    gelu_value_and_slope(x.data(), value.data(), dx.data(), x.size());
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] *= dy[i];
    return dx;
}

// ---- space <-> depth rearrangements, factor 2 --------------------------------
// Channel layout matches the usual pixel-(un)shuffle: out[c*4 + i*2 + j] holds
// in[c] at offset (i, j) of each 2x2 cell.

template <typename T>
Tensor<T> pixel_unshuffle(const Tensor<T>& x) {
    const std::size_t c = x.channels(), h = x.height(), w = x.width();
    if (h % 2 || w % 2) throw DimensionError("space-to-depth needs even height and width, got " + shape_string(x.shape()));
    const std::size_t ho = h / 2, wo = w / 2;
    Tensor<T> y = Tensor<T>::chw(c * 4, ho, wo);
    for (std::size_t k = 0; k < c; ++k)
        for (std::size_t i = 0; i < 2; ++i)
            for (std::size_t j = 0; j < 2; ++j) {
                T* d = y.channel(k * 4 + i * 2 + j);
                const T* s = x.channel(k);
                for (std::size_t r = 0; r < ho; ++r)
                    for (std::size_t q = 0; q < wo; ++q) d[r * wo + q] = s[(2 * r + i) * w + 2 * q + j];
            }
    return y;
}

template <typename T>
Tensor<T> pixel_shuffle(const Tensor<T>& x) {
    const std::size_t c4 = x.channels(), h = x.height(), w = x.width();
    if (c4 % 4) throw DimensionError("depth-to-space needs a channel count divisible by 4, got " + shape_string(x.shape()));
    const std::size_t c = c4 / 4, wo = w * 2;
    Tensor<T> y = Tensor<T>::chw(c, h * 2, wo);
    for (std::size_t k = 0; k < c; ++k)
        for (std::size_t i = 0; i < 2; ++i)
            for (std::size_t j = 0; j < 2; ++j) {
                const T* s = x.channel(k * 4 + i * 2 + j);
                T* d = y.channel(k);
                for (std::size_t r = 0; r < h; ++r)
                    for (std::size_t q = 0; q < w; ++q) d[(2 * r + i) * wo + 2 * q + j] = s[r * w + q];
            }
    return y;
}

} // namespace bokeh::nn

#endif // BOKEH_NN_OPS_HPP
