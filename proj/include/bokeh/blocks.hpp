#ifndef BOKEH_BLOCKS_HPP
#define BOKEH_BLOCKS_HPP

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "bokeh/nn/layers.hpp"
#include "bokeh/nn/mlp.hpp"

namespace bokeh {

struct BlockOptions {
    std::size_t d_embed = 48;
    double ffn_expansion = 2.66;
    std::size_t channels_per_head = 16;
    double eps = 1e-6;
};

// ceil(C / 16), at least one.
inline std::size_t head_count(std::size_t channels, std::size_t per_head = 16) {
    return std::max<std::size_t>(1, (channels + per_head - 1) / per_head);
}

inline std::size_t ffn_hidden(std::size_t channels, double expansion) {
    return static_cast<std::size_t>(static_cast<double>(channels) * expansion);
}

// Multi-Dconv head transposed attention: the attention map is C' x C' per
// head (channels attend to channels), so cost is linear in pixel count.
template <typename T>
class Mdta {
public:
    struct Cache {
        Tensor<T> x, qkv, qkv_dw, qn, kn, o;
        std::vector<T> q_norm, k_norm;
        std::vector<nn::MatR<T>> attn;
    };

    Mdta() = default;
    Mdta(std::size_t channels, std::size_t heads, double eps)
        : channels_(channels), heads_(heads), eps_(static_cast<T>(eps)), qkv_(channels, 3 * channels, false),
          qkv_dw_(3 * channels), temperature_({heads}, T(1)), project_(channels, channels, false) {
        if (heads == 0 || channels % heads)
            throw ConfigError(std::to_string(channels) + " channels cannot be split into " + std::to_string(heads) + " heads");
    }

    std::size_t channels() const { return channels_; }
    std::size_t heads() const { return heads_; }

    void init(Rng& rng) {
        qkv_.init(rng);
        qkv_dw_.init(rng);
        temperature_.value.fill(T(1));
        project_.init(rng);
    }

    Tensor<T> forward(const Tensor<T>& x, Cache* cache) const {
        check(x);
        const std::size_t c = channels_, ch = c / heads_, p = x.plane();
        const auto hw = static_cast<Eigen::Index>(p), rows = static_cast<Eigen::Index>(ch);
        Tensor<T> qkv = qkv_.forward(x);
        Tensor<T> qkv_dw = qkv_dw_.forward(qkv);
        Tensor<T> qn = Tensor<T>::chw(c, x.height(), x.width());
        Tensor<T> kn = Tensor<T>::chw(c, x.height(), x.width());
        Tensor<T> o = Tensor<T>::chw(c, x.height(), x.width());
        std::vector<T> q_norm(c), k_norm(c);
        std::vector<nn::MatR<T>> attn(heads_);

        auto normalise_rows = [&](const T* src, T* dst, T* norms) {
            for (std::size_t r = 0; r < c; ++r) {
                nn::CVecMap<T> row(src + r * p, hw);
                const T n = row.norm();
                norms[r] = n;
                nn::VecMap<T>(dst + r * p, hw) = row / std::max(n, eps_);
            }
        };
        normalise_rows(qkv_dw.data(), qn.data(), q_norm.data());
        normalise_rows(qkv_dw.data() + c * p, kn.data(), k_norm.data());

        for (std::size_t h = 0; h < heads_; ++h) {
            const std::size_t off = h * ch * p;
            nn::CMapR<T> qh(qn.data() + off, rows, hw), kh(kn.data() + off, rows, hw);
            nn::CMapR<T> vh(qkv_dw.data() + 2 * c * p + off, rows, hw);
            nn::MatR<T> a = (qh * kh.transpose()) * temperature_.value[h];
            for (Eigen::Index r = 0; r < rows; ++r) {
                const T m = a.row(r).maxCoeff();
                a.row(r) = (a.row(r).array() - m).exp();
                a.row(r) /= a.row(r).sum();
            }
            nn::MapR<T>(o.data() + off, rows, hw).noalias() = a * vh;
            attn[h] = std::move(a);
        }
        Tensor<T> y = project_.forward(o);
        if (cache) {
            *cache = Cache{x, std::move(qkv), std::move(qkv_dw), std::move(qn), std::move(kn), std::move(o),
                           std::move(q_norm), std::move(k_norm), std::move(attn)};
        }
        return y;
    }

    // Attention maps (softmax rows) of the last forward, one per head.
    static const std::vector<nn::MatR<T>>& attention(const Cache& cache) { return cache.attn; }

    Tensor<T> backward(const Cache& cc, const Tensor<T>& dy) {
        const std::size_t c = channels_, ch = c / heads_, p = cc.x.plane();
        const auto hw = static_cast<Eigen::Index>(p), rows = static_cast<Eigen::Index>(ch);
        Tensor<T> d_o = project_.backward(cc.o, dy);
        Tensor<T> dqkv_dw = Tensor<T>::chw(3 * c, cc.x.height(), cc.x.width());
        Tensor<T> dqn = Tensor<T>::chw(c, cc.x.height(), cc.x.width());
        Tensor<T> dkn = Tensor<T>::chw(c, cc.x.height(), cc.x.width());

        for (std::size_t h = 0; h < heads_; ++h) {
            const std::size_t off = h * ch * p;
            nn::CMapR<T> qh(cc.qn.data() + off, rows, hw), kh(cc.kn.data() + off, rows, hw);
            nn::CMapR<T> vh(cc.qkv_dw.data() + 2 * c * p + off, rows, hw);
            nn::CMapR<T> doh(d_o.data() + off, rows, hw);
            const nn::MatR<T>& a = cc.attn[h];

            nn::MapR<T>(dqkv_dw.data() + 2 * c * p + off, rows, hw).noalias() = a.transpose() * doh;
            nn::MatR<T> da = doh * vh.transpose();
            nn::MatR<T> ds = a.cwiseProduct(da);
            for (Eigen::Index r = 0; r < rows; ++r) {
                const T s = ds.row(r).sum();
                ds.row(r) = a.row(r).cwiseProduct((da.row(r).array() - s).matrix());
            }
            nn::MatR<T> m = qh * kh.transpose();
            temperature_.grad[h] += ds.cwiseProduct(m).sum();
            ds *= temperature_.value[h];
            nn::MapR<T>(dqn.data() + off, rows, hw).noalias() = ds * kh;
            nn::MapR<T>(dkn.data() + off, rows, hw).noalias() = ds.transpose() * qh;
        }

        auto normalise_back = [&](const T* y, const T* dyn, const std::vector<T>& norms, T* dx) {
            for (std::size_t r = 0; r < c; ++r) {
                nn::CVecMap<T> yr(y + r * p, hw), gr(dyn + r * p, hw);
                nn::VecMap<T> out(dx + r * p, hw);
                if (norms[r] > eps_)
                    out = (gr - yr * yr.dot(gr)) / norms[r];
                else
                    out = gr / eps_;
            }
        };
        normalise_back(cc.qn.data(), dqn.data(), cc.q_norm, dqkv_dw.data());
        normalise_back(cc.kn.data(), dkn.data(), cc.k_norm, dqkv_dw.data() + c * p);

        Tensor<T> dqkv = qkv_dw_.backward(cc.qkv, dqkv_dw);
        return qkv_.backward(cc.x, dqkv);
    }

    nn::Conv1x1<T>& output_projection() { return project_; }

    template <typename F>
    void visit(F&& f, const std::string& p) { visit_impl(*this, f, p); }
    template <typename F>
    void visit(F&& f, const std::string& p) const { visit_impl(*this, f, p); }

private:
    void check(const Tensor<T>& x) const {
        if (x.rank() != 3 || x.channels() != channels_)
            throw DimensionError("attention block built for " + std::to_string(channels_) + " channels given " +
                                 shape_string(x.shape()));
    }

    template <typename Self, typename F>
    static void visit_impl(Self& s, F& f, const std::string& p) {
        f(nn::join_name(p, "temperature"), s.temperature_);
        s.qkv_.visit(f, nn::join_name(p, "qkv"));
        s.qkv_dw_.visit(f, nn::join_name(p, "qkv_dwconv"));
        s.project_.visit(f, nn::join_name(p, "project_out"));
    }

    std::size_t channels_ = 0, heads_ = 1;
    T eps_ = T(1e-6);
    nn::Conv1x1<T> qkv_;
    nn::DepthwiseConv3x3<T> qkv_dw_;
    nn::Param<T> temperature_;
    nn::Conv1x1<T> project_;
};

// Gated-Dconv feed-forward: expand to 2*hidden, depth-wise conv, split, and
// gate GELU(first half) * second half, then project back to C.
template <typename T>
class Gdfn {
public:
    struct Cache {
        Tensor<T> x, expanded, mixed, gated;
    };

    Gdfn() = default;
    Gdfn(std::size_t channels, std::size_t hidden)
        : channels_(channels), hidden_(hidden), project_in_(channels, 2 * hidden, false), dw_(2 * hidden),
          project_out_(hidden, channels, false) {
        if (hidden == 0) throw ConfigError("feed-forward hidden width must be positive");
    }

    std::size_t channels() const { return channels_; }
    std::size_t hidden() const { return hidden_; }

    void init(Rng& rng) {
        project_in_.init(rng);
        dw_.init(rng);
        project_out_.init(rng);
    }

    Tensor<T> forward(const Tensor<T>& x, Cache* cache) const {
        if (x.rank() != 3 || x.channels() != channels_)
            throw DimensionError("feed-forward block built for " + std::to_string(channels_) + " channels given " +
                                 shape_string(x.shape()));
        Tensor<T> expanded = project_in_.forward(x);
        Tensor<T> mixed = dw_.forward(expanded);
        const std::size_t n = hidden_ * x.plane();
        Tensor<T> gated = Tensor<T>::chw(hidden_, x.height(), x.width());
        const T* a = mixed.data();
        const T* b = mixed.data() + n;
        nn::gelu_apply(a, gated.data(), n);
        for (std::size_t i = 0; i < n; ++i) gated[i] *= b[i];
        Tensor<T> y = project_out_.forward(gated);
        if (cache) *cache = Cache{x, std::move(expanded), std::move(mixed), std::move(gated)};
        return y;
    }

    Tensor<T> backward(const Cache& cc, const Tensor<T>& dy) {
        Tensor<T> dg = project_out_.backward(cc.gated, dy);
        const std::size_t n = hidden_ * cc.x.plane();
        Tensor<T> dmixed = Tensor<T>::chw(2 * hidden_, cc.x.height(), cc.x.width());
        const T* a = cc.mixed.data();
        const T* b = cc.mixed.data() + n;
        // First half receives the slope, second half the activation.
        nn::gelu_value_and_slope(a, dmixed.data() + n, dmixed.data(), n);
        for (std::size_t i = 0; i < n; ++i) {
            dmixed[i] *= dg[i] * b[i];
            dmixed[n + i] *= dg[i];
        }
        Tensor<T> dexp = dw_.backward(cc.expanded, dmixed);
        return project_in_.backward(cc.x, dexp);
    }

    nn::Conv1x1<T>& input_projection() { return project_in_; }
    nn::Conv1x1<T>& output_projection() { return project_out_; }

    template <typename F>
    void visit(F&& f, const std::string& p) { visit_impl(*this, f, p); }
    template <typename F>
    void visit(F&& f, const std::string& p) const { visit_impl(*this, f, p); }

private:
    template <typename Self, typename F>
    static void visit_impl(Self& s, F& f, const std::string& p) {
        s.project_in_.visit(f, nn::join_name(p, "project_in"));
        s.dw_.visit(f, nn::join_name(p, "dwconv"));
        s.project_out_.visit(f, nn::join_name(p, "project_out"));
    }

    std::size_t channels_ = 0, hidden_ = 0;
    nn::Conv1x1<T> project_in_;
    nn::DepthwiseConv3x3<T> dw_;
    nn::Conv1x1<T> project_out_;
};

template <typename T>
struct ScaleShift {
    Tensor<T> scale, shift;
};

// Dual-input transformer block:
//   t   = x + MDTA(norm(x))
//   t_f = t * (1 + scale) + shift       (per channel, from the conditioner)
//   out = t_f + GDFN(norm(t_f))
template <typename T>
class Ditb {
public:
    struct Cache {
        typename nn::LayerNorm<T>::Cache norm1, norm2;
        typename Mdta<T>::Cache attn;
        typename Gdfn<T>::Cache ffn;
        typename nn::Mlp<T>::Cache cond;
        Tensor<T> t;
        Tensor<T> scale;
    };

    Ditb() = default;
    Ditb(std::size_t channels, const BlockOptions& opt)
        : channels_(channels), norm1_(channels, static_cast<T>(opt.eps)),
          attn_(channels, head_count(channels, opt.channels_per_head), opt.eps), norm2_(channels, static_cast<T>(opt.eps)),
          ffn_(channels, ffn_hidden(channels, opt.ffn_expansion)), cond_(opt.d_embed, 2 * channels, 2 * channels) {}

    std::size_t channels() const { return channels_; }

    void init(Rng& rng) {
        norm1_.init(rng);
        attn_.init(rng);
        norm2_.init(rng);
        ffn_.init(rng);
        cond_.init(rng);
    }

    ScaleShift<T> condition(const Tensor<T>& v, typename nn::Mlp<T>::Cache* cache = nullptr) const {
        Tensor<T> ss = cond_.forward(v, cache);
        ScaleShift<T> out{Tensor<T>({channels_}), Tensor<T>({channels_})};
        std::copy(ss.data(), ss.data() + channels_, out.scale.data());
        std::copy(ss.data() + channels_, ss.data() + 2 * channels_, out.shift.data());
        return out;
    }

    Tensor<T> forward(const Tensor<T>& x, const Tensor<T>& v, Cache* cache) const {
        if (x.rank() != 3 || x.channels() != channels_)
            throw DimensionError("transformer block built for " + std::to_string(channels_) + " channels given " +
                                 shape_string(x.shape()));
        if (v.size() != cond_.in_features())
            throw DimensionError("conditioning vector of length " + std::to_string(v.size()) + ", expected " +
                                 std::to_string(cond_.in_features()));
        Tensor<T> n1 = norm1_.forward(x, cache ? &cache->norm1 : nullptr);
        Tensor<T> t = attn_.forward(n1, cache ? &cache->attn : nullptr);
        t += x;
        ScaleShift<T> ss = condition(v, cache ? &cache->cond : nullptr);
        Tensor<T> tf = modulate(t, ss);
        Tensor<T> n2 = norm2_.forward(tf, cache ? &cache->norm2 : nullptr);
        Tensor<T> out = ffn_.forward(n2, cache ? &cache->ffn : nullptr);
        out += tf;
        if (cache) {
            cache->t = std::move(t);
            cache->scale = std::move(ss.scale);
        }
        return out;
    }

    // t * (1 + scale_c) + shift_c
    static Tensor<T> modulate(const Tensor<T>& t, const ScaleShift<T>& ss) {
        Tensor<T> out = Tensor<T>::chw(t.channels(), t.height(), t.width());
        const std::size_t p = t.plane();
        for (std::size_t c = 0; c < t.channels(); ++c) {
            const T a = T(1) + ss.scale[c], b = ss.shift[c];
            const T* s = t.channel(c);
            T* d = out.channel(c);
            for (std::size_t i = 0; i < p; ++i) d[i] = s[i] * a + b;
        }
        return out;
    }

    // Returns d(input); adds d(conditioning vector) into `dv`.
    Tensor<T> backward(const Cache& cc, const Tensor<T>& dy, Tensor<T>& dv) {
        Tensor<T> dtf = norm2_.backward(cc.norm2, ffn_.backward(cc.ffn, dy));
        dtf += dy;
        const std::size_t c = channels_, p = cc.t.plane();
        Tensor<T> dss({2 * c});
        Tensor<T> dt = Tensor<T>::chw(c, cc.t.height(), cc.t.width());
        for (std::size_t k = 0; k < c; ++k) {
            const T* g = dtf.channel(k);
            const T* t = cc.t.channel(k);
            T* d = dt.channel(k);
            const T a = T(1) + cc.scale[k];
            T s_scale = 0, s_shift = 0;
            for (std::size_t i = 0; i < p; ++i) {
                s_scale += g[i] * t[i];
                s_shift += g[i];
                d[i] = g[i] * a;
            }
            dss[k] = s_scale;
            dss[c + k] = s_shift;
        }
        dv += cond_.backward(cc.cond, dss);
        Tensor<T> dx = norm1_.backward(cc.norm1, attn_.backward(cc.attn, dt));
        dx += dt;
        return dx;
    }

    Mdta<T>& attention() { return attn_; }
    Gdfn<T>& feedforward() { return ffn_; }
    nn::Mlp<T>& conditioner() { return cond_; }
    const Mdta<T>& attention() const { return attn_; }

    template <typename F>
    void visit(F&& f, const std::string& p) { visit_impl(*this, f, p); }
    template <typename F>
    void visit(F&& f, const std::string& p) const { visit_impl(*this, f, p); }

private:
    template <typename Self, typename F>
    static void visit_impl(Self& s, F& f, const std::string& p) {
        s.norm1_.visit(f, nn::join_name(p, "norm1"));
        s.attn_.visit(f, nn::join_name(p, "attn"));
        s.norm2_.visit(f, nn::join_name(p, "norm2"));
        s.ffn_.visit(f, nn::join_name(p, "ffn"));
        s.cond_.visit(f, nn::join_name(p, "cond"));
    }

    std::size_t channels_ = 0;
    nn::LayerNorm<T> norm1_;
    Mdta<T> attn_;
    nn::LayerNorm<T> norm2_;
    Gdfn<T> ffn_;
    nn::Mlp<T> cond_;
};

// C x H x W -> 2C x H/2 x W/2: 1x1 conv to C/2, then space-to-depth.
template <typename T>
class Downsample {
public:
    Downsample() = default;
    explicit Downsample(std::size_t channels) : conv_(channels, channels / 2, false) {
        if (channels % 2) throw ConfigError("downsampling needs an even channel count, got " + std::to_string(channels));
    }

    void init(Rng& rng) { conv_.init(rng); }

    Tensor<T> forward(const Tensor<T>& x) const {
        if (x.rank() != 3 || x.height() % 2 || x.width() % 2)
            throw DimensionError("downsampling needs even height and width, got " + shape_string(x.shape()));
        return nn::pixel_unshuffle(conv_.forward(x));
    }
    Tensor<T> backward(const Tensor<T>& x, const Tensor<T>& dy) { return conv_.backward(x, nn::pixel_shuffle(dy)); }

    template <typename F>
    void visit(F&& f, const std::string& p) { conv_.visit(f, nn::join_name(p, "conv")); }
    template <typename F>
    void visit(F&& f, const std::string& p) const { conv_.visit(f, nn::join_name(p, "conv")); }

private:
    nn::Conv1x1<T> conv_;
};

// C x H x W -> C/2 x 2H x 2W: 1x1 conv to 2C, then depth-to-space.
template <typename T>
class Upsample {
public:
    Upsample() = default;
    explicit Upsample(std::size_t channels) : conv_(channels, channels * 2, false) {
        if (channels % 2) throw ConfigError("upsampling needs an even channel count, got " + std::to_string(channels));
    }

    void init(Rng& rng) { conv_.init(rng); }

    Tensor<T> forward(const Tensor<T>& x) const { return nn::pixel_shuffle(conv_.forward(x)); }
    Tensor<T> backward(const Tensor<T>& x, const Tensor<T>& dy) { return conv_.backward(x, nn::pixel_unshuffle(dy)); }

    template <typename F>
    void visit(F&& f, const std::string& p) { conv_.visit(f, nn::join_name(p, "conv")); }
    template <typename F>
    void visit(F&& f, const std::string& p) const { conv_.visit(f, nn::join_name(p, "conv")); }

private:
    nn::Conv1x1<T> conv_;
};

} // namespace bokeh

#endif // BOKEH_BLOCKS_HPP
