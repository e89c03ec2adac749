#include <gtest/gtest.h>

#include <map>

#include "test_support.hpp"

using namespace bokeh;
using testsupport::random_tensor;

namespace {

using Params = std::map<std::string, Tensor<double>>;

template <typename M>
Params params_of(const M& m) {
    Params out;
    m.visit([&](const std::string& n, const nn::Param<double>& p) { out[n] = p.value; }, "");
    return out;
}

// ---- naive reference implementations (direct loops over the definitions) ----

Tensor<double> ref_conv1x1(const Tensor<double>& w, const Tensor<double>& x) {
    const std::size_t co = w.dim(0), ci = w.dim(1);
    Tensor<double> y = Tensor<double>::chw(co, x.height(), x.width());
    for (std::size_t o = 0; o < co; ++o)
        for (std::size_t i = 0; i < ci; ++i)
            for (std::size_t yy = 0; yy < x.height(); ++yy)
                for (std::size_t xx = 0; xx < x.width(); ++xx) y(o, yy, xx) += w[o * ci + i] * x(i, yy, xx);
    return y;
}

double at(const Tensor<double>& x, std::size_t c, long y, long xx) {
    if (y < 0 || xx < 0 || y >= static_cast<long>(x.height()) || xx >= static_cast<long>(x.width())) return 0.0;
    return x(c, static_cast<std::size_t>(y), static_cast<std::size_t>(xx));
}

Tensor<double> ref_dwconv(const Tensor<double>& k, const Tensor<double>& x) {
    Tensor<double> y = Tensor<double>::chw(x.channels(), x.height(), x.width());
    for (std::size_t c = 0; c < x.channels(); ++c)
        for (long yy = 0; yy < static_cast<long>(x.height()); ++yy)
            for (long xx = 0; xx < static_cast<long>(x.width()); ++xx) {
                double s = 0;
                for (long dy = -1; dy <= 1; ++dy)
                    for (long dx = -1; dx <= 1; ++dx)
                        s += k[c * 9 + static_cast<std::size_t>((dy + 1) * 3 + dx + 1)] * at(x, c, yy + dy, xx + dx);
                y(c, static_cast<std::size_t>(yy), static_cast<std::size_t>(xx)) = s;
            }
    return y;
}

Tensor<double> ref_conv3x3(const Tensor<double>& w, const Tensor<double>* b, const Tensor<double>& x) {
    const std::size_t co = w.dim(0), ci = w.dim(1);
    Tensor<double> y = Tensor<double>::chw(co, x.height(), x.width());
    for (std::size_t o = 0; o < co; ++o)
        for (long yy = 0; yy < static_cast<long>(x.height()); ++yy)
            for (long xx = 0; xx < static_cast<long>(x.width()); ++xx) {
                double s = b ? (*b)[o] : 0.0;
                for (std::size_t i = 0; i < ci; ++i)
                    for (long dy = -1; dy <= 1; ++dy)
                        for (long dx = -1; dx <= 1; ++dx)
                            s += w[((o * ci + i) * 3 + static_cast<std::size_t>(dy + 1)) * 3 + static_cast<std::size_t>(dx + 1)] *
                                 at(x, i, yy + dy, xx + dx);
                y(o, static_cast<std::size_t>(yy), static_cast<std::size_t>(xx)) = s;
            }
    return y;
}

Tensor<double> ref_layernorm(const Tensor<double>& g, const Tensor<double>& b, const Tensor<double>& x, double eps) {
    Tensor<double> y(x.shape());
    const std::size_t c = x.channels();
    for (std::size_t yy = 0; yy < x.height(); ++yy)
        for (std::size_t xx = 0; xx < x.width(); ++xx) {
            double mu = 0, var = 0;
            for (std::size_t k = 0; k < c; ++k) mu += x(k, yy, xx) / static_cast<double>(c);
            for (std::size_t k = 0; k < c; ++k) var += std::pow(x(k, yy, xx) - mu, 2) / static_cast<double>(c);
            for (std::size_t k = 0; k < c; ++k) y(k, yy, xx) = (x(k, yy, xx) - mu) / std::sqrt(var + eps) * g[k] + b[k];
        }
    return y;
}

double ref_gelu(double v) { return 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0))); }

Tensor<double> ref_mdta(const Params& p, const std::string& pre, const Tensor<double>& x, std::size_t heads) {
    const std::size_t c = x.channels(), hw = x.plane(), ch = c / heads;
    const Tensor<double> qkv = ref_dwconv(p.at(pre + "qkv_dwconv.weight"), ref_conv1x1(p.at(pre + "qkv.weight"), x));
    const Tensor<double>& tau = p.at(pre + "temperature");
    auto row = [&](std::size_t part, std::size_t r) { return qkv.data() + (part * c + r) * hw; };
    auto norm = [&](const double* v) {
        double s = 0;
        for (std::size_t i = 0; i < hw; ++i) s += v[i] * v[i];
        return std::max(std::sqrt(s), 1e-6);
    };
    Tensor<double> o = Tensor<double>::chw(c, x.height(), x.width());
    for (std::size_t h = 0; h < heads; ++h)
        for (std::size_t i = 0; i < ch; ++i) {
            const double* q = row(0, h * ch + i);
            std::vector<double> logits(ch);
            for (std::size_t j = 0; j < ch; ++j) {
                const double* k = row(1, h * ch + j);
                double d = 0;
                for (std::size_t t = 0; t < hw; ++t) d += q[t] * k[t];
                logits[j] = tau[h] * d / (norm(q) * norm(k));
            }
            double z = 0;
            for (double l : logits) z += std::exp(l);
            for (std::size_t j = 0; j < ch; ++j) {
                const double a = std::exp(logits[j]) / z;
                const double* v = row(2, h * ch + j);
                for (std::size_t t = 0; t < hw; ++t) o.data()[(h * ch + i) * hw + t] += a * v[t];
            }
        }
    return ref_conv1x1(p.at(pre + "project_out.weight"), o);
}

Tensor<double> ref_gdfn(const Params& p, const std::string& pre, const Tensor<double>& x) {
    const Tensor<double> m = ref_dwconv(p.at(pre + "dwconv.weight"), ref_conv1x1(p.at(pre + "project_in.weight"), x));
    const std::size_t hidden = m.channels() / 2, hw = x.plane();
    Tensor<double> g = Tensor<double>::chw(hidden, x.height(), x.width());
    for (std::size_t i = 0; i < hidden * hw; ++i) g[i] = ref_gelu(m[i]) * m[hidden * hw + i];
    return ref_conv1x1(p.at(pre + "project_out.weight"), g);
}

std::vector<double> ref_mlp(const Params& p, const std::string& pre, const std::vector<double>& v) {
    auto affine = [&](const Tensor<double>& w, const Tensor<double>& b, const std::vector<double>& in) {
        std::vector<double> out(w.dim(0));
        for (std::size_t o = 0; o < out.size(); ++o) {
            out[o] = b[o];
            for (std::size_t i = 0; i < in.size(); ++i) out[o] += w[o * in.size() + i] * in[i];
        }
        return out;
    };
    auto h = affine(p.at(pre + "fc1.weight"), p.at(pre + "fc1.bias"), v);
    for (auto& e : h) e = ref_gelu(e);
    return affine(p.at(pre + "fc2.weight"), p.at(pre + "fc2.bias"), h);
}

Tensor<double> ref_ditb(const Params& p, const Tensor<double>& x, const Tensor<double>& v, std::size_t heads) {
    Tensor<double> t = x;
    t += ref_mdta(p, "attn.", ref_layernorm(p.at("norm1.weight"), p.at("norm1.bias"), x, 1e-6), heads);
    const auto ss = ref_mlp(p, "cond.", std::vector<double>(v.data(), v.data() + v.size()));
    const std::size_t c = x.channels();
    for (std::size_t k = 0; k < c; ++k)
        for (std::size_t i = 0; i < x.plane(); ++i) t.channel(k)[i] = t.channel(k)[i] * (1 + ss[k]) + ss[c + k];
    Tensor<double> out = t;
    out += ref_gdfn(p, "ffn.", ref_layernorm(p.at("norm2.weight"), p.at("norm2.bias"), t, 1e-6));
    return out;
}

BlockOptions small_options() {
    BlockOptions o;
    o.d_embed = 12;
    o.channels_per_head = 4;
    return o;
}

void randomise(nn::Param<double>& p, Rng& rng) {
    for (auto& v : p.value.values()) v = rng.uniform(-0.5, 0.5);
}

} // namespace

TEST(Primitives, MatchNaiveReferences) {
    Rng rng(1);
    const Tensor<double> x = random_tensor({3, 5, 6}, rng);
    nn::Conv3x3<double> c3(3, 4, true);
    c3.init(rng);
    randomise(*c3.bias, rng);
    EXPECT_LT(max_abs_diff(c3.forward(x), ref_conv3x3(c3.weight.value, &c3.bias->value, x)), 1e-12);
    nn::Conv1x1<double> c1(3, 4, false);
    c1.init(rng);
    EXPECT_LT(max_abs_diff(c1.forward(x), ref_conv1x1(c1.weight.value, x)), 1e-12);
    nn::DepthwiseConv3x3<double> dw(3);
    dw.init(rng);
    EXPECT_LT(max_abs_diff(dw.forward(x), ref_dwconv(dw.weight.value, x)), 1e-12);
    nn::LayerNorm<double> ln(3, 1e-6);
    randomise(ln.gain, rng);
    randomise(ln.bias, rng);
    EXPECT_LT(max_abs_diff(ln.forward(x, nullptr), ref_layernorm(ln.gain.value, ln.bias.value, x, 1e-6)), 1e-12);
}

TEST(Mdta, MatchesReferenceAndPreservesShape) {
    Rng rng(2);
    Mdta<double> m(8, 2, 1e-6);
    m.init(rng);
    const Tensor<double> x = random_tensor({8, 6, 5}, rng);
    const Tensor<double> y = m.forward(x, nullptr);
    EXPECT_EQ(y.shape(), x.shape());
    EXPECT_LT(max_abs_diff(y, ref_mdta(params_of(m), "", x, 2)), 1e-12);
    EXPECT_THROW(m.forward(random_tensor({6, 4, 4}, rng), nullptr), DimensionError);
}

TEST(Mdta, AttentionRowsSumToOne) {
    Rng rng(3);
    Mdta<double> m(2, 1, 1e-6);
    m.init(rng);
    Mdta<double>::Cache c;
    m.forward(random_tensor({2, 8, 8}, rng), &c);
    const auto& maps = Mdta<double>::attention(c);
    ASSERT_EQ(maps.size(), 1u);
    EXPECT_EQ(maps[0].rows(), 2);
    EXPECT_EQ(maps[0].cols(), 2);
    for (const auto& a : maps)
        for (Eigen::Index r = 0; r < a.rows(); ++r) EXPECT_NEAR(a.row(r).sum(), 1.0, 1e-12);
}

TEST(Mdta, ZeroOutputProjectionGivesZero) {
    Rng rng(4);
    Mdta<double> m(16, 1, 1e-6);
    m.init(rng);
    m.output_projection().weight.value.zero();
    const auto y = m.forward(random_tensor({16, 4, 4}, rng), nullptr);
    for (double v : y.values()) EXPECT_EQ(v, 0.0);
    // all-zero input exercises the normalisation guard
    EXPECT_TRUE(m.forward(Tensor<double>({16, 4, 4}), nullptr).all_finite());
}

TEST(Gdfn, MatchesReferenceAndZeroGate) {
    Rng rng(5);
    Gdfn<double> g(2, ffn_hidden(2, 2.66));
    g.init(rng);
    const Tensor<double> x = random_tensor({2, 4, 4}, rng);
    EXPECT_EQ(g.forward(x, nullptr).shape(), x.shape());
    EXPECT_LT(max_abs_diff(g.forward(x, nullptr), ref_gdfn(params_of(g), "", x)), 1e-12);
    // zero the rows feeding the gate half of the expansion
    auto& w = g.input_projection().weight.value;
    const std::size_t h = g.hidden(), in = w.dim(1);
    for (std::size_t r = h; r < 2 * h; ++r)
        for (std::size_t i = 0; i < in; ++i) w[r * in + i] = 0;
    const auto y = g.forward(x, nullptr);
    for (double v : y.values()) EXPECT_EQ(v, 0.0);
}

TEST(Blocks, HeadCountAndHiddenWidth) {
    EXPECT_EQ(head_count(16), 1u);
    EXPECT_EQ(head_count(17), 2u);
    EXPECT_EQ(head_count(48), 3u);
    EXPECT_EQ(head_count(4), 1u);
    EXPECT_EQ(ffn_hidden(16, 2.66), 42u);
    EXPECT_EQ(ffn_hidden(48, 2.66), 127u);
}

TEST(Ditb, MatchesReferenceEquations) {
    Rng rng(6);
    Ditb<double> blk(8, small_options());
    blk.init(rng);
    blk.visit([&](const std::string& n, nn::Param<double>& p) {
        if (n.find("norm") == 0 || n.find("bias") != std::string::npos) randomise(p, rng);
    }, "");
    const Tensor<double> x = random_tensor({8, 5, 6}, rng), v = random_tensor({12}, rng);
    EXPECT_LT(max_abs_diff(blk.forward(x, v, nullptr), ref_ditb(params_of(blk), x, v, 2)), 1e-12);
}

TEST(Ditb, ConditionSplitsScaleAndShift) {
    Rng rng(7);
    Ditb<double> blk(8, small_options());
    blk.init(rng);
    const Tensor<double> v1 = random_tensor({12}, rng), v2 = random_tensor({12}, rng);
    const ScaleShift<double> a = blk.condition(v1), b = blk.condition(v2);
    EXPECT_EQ(a.scale.size(), 8u);
    EXPECT_EQ(a.shift.size(), 8u);
    EXPECT_GT(max_abs_diff(a.scale, b.scale) + max_abs_diff(a.shift, b.shift), 0.0);
    const Tensor<double> x = random_tensor({8, 4, 4}, rng);
    EXPECT_GT(max_abs_diff(blk.forward(x, v1, nullptr), blk.forward(x, v2, nullptr)), 0.0);

    blk.conditioner().visit([](const std::string&, nn::Param<double>& p) { p.value.zero(); }, "");
    const ScaleShift<double> z = blk.condition(v1);
    for (double s : z.scale.values()) EXPECT_EQ(s, 0.0);
    for (double s : z.shift.values()) EXPECT_EQ(s, 0.0);
    EXPECT_EQ(Ditb<double>::modulate(x, z), x);
}

TEST(Ditb, ResidualIdentityWhenBranchesZeroed) {
    Rng rng(8);
    Ditb<double> blk(8, small_options());
    blk.init(rng);
    blk.attention().output_projection().weight.value.zero();
    blk.feedforward().output_projection().weight.value.zero();
    blk.conditioner().visit([](const std::string&, nn::Param<double>& p) { p.value.zero(); }, "");
    const Tensor<double> x = random_tensor({8, 4, 4}, rng);
    EXPECT_EQ(blk.forward(x, random_tensor({12}, rng), nullptr), x);
}

TEST(Ditb, ShapesAndFiniteOutputs) {
    Rng rng(9);
    for (auto [c, s] : {std::pair<std::size_t, std::size_t>{16, 32}, {48, 64}}) {
        Ditb<float> blk(c, BlockOptions{});
        blk.init(rng);
        const Tensor<float> x = random_tensor<float>({c, s, s}, rng);
        const Tensor<float> y = blk.forward(x, random_tensor<float>({48}, rng), nullptr);
        EXPECT_EQ(y.shape(), x.shape());
        EXPECT_TRUE(y.all_finite());
    }
    Ditb<double> blk(8, small_options());
    EXPECT_THROW(blk.forward(random_tensor({4, 4, 4}, rng), random_tensor({12}, rng), nullptr), DimensionError);
    EXPECT_THROW(blk.forward(random_tensor({8, 4, 4}, rng), random_tensor({11}, rng), nullptr), DimensionError);
}

TEST(Resamplers, ShapeContract) {
    Rng rng(10);
    Downsample<double> down(16);
    Upsample<double> up(32);
    down.init(rng);
    up.init(rng);
    const Tensor<double> x = random_tensor({16, 32, 32}, rng);
    const Tensor<double> d = down.forward(x);
    EXPECT_EQ(d.shape(), (Shape{32, 16, 16}));
    EXPECT_EQ(up.forward(d).shape(), x.shape());
    EXPECT_THROW(down.forward(random_tensor({16, 7, 8}, rng)), DimensionError);
}

TEST(PixelShuffle, InverseRearrangements) {
    Rng rng(11);
    const Tensor<double> x = random_tensor({3, 6, 4}, rng);
    const Tensor<double> u = nn::pixel_unshuffle(x);
    EXPECT_EQ(u.shape(), (Shape{12, 3, 2}));
    EXPECT_EQ(u(1, 0, 0), x(0, 0, 1));
    EXPECT_EQ(u(2, 0, 0), x(0, 1, 0));
    EXPECT_EQ(nn::pixel_shuffle(u), x);
}
