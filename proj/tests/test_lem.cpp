#include <gtest/gtest.h>

#include "test_support.hpp"

using namespace bokeh;

TEST(LensValue, SignCarriesBrand) {
    EXPECT_EQ(scalar_to_lens_value(encode_lens(testsupport::lens("Canon", 1.4))), -1.4);
    EXPECT_EQ(scalar_to_lens_value(encode_lens(testsupport::lens("Sony", 1.8))), 1.8);
    EXPECT_EQ(scalar_to_lens_value(encode_lens(testsupport::lens("Sony", 16.0))), 16.0);
    EXPECT_THROW(scalar_to_lens_value(LensCode{{1, -1}, 2.0}), ConfigError);
}

TEST(SinusoidalEmbed, MatchesDirectFormula) {
    const auto zero = sinusoidal_embed(0.0, 48);
    ASSERT_EQ(zero.size(), 48u);
    for (std::size_t i = 0; i < 48; ++i) EXPECT_EQ(zero[i], i % 2 ? 1.0 : 0.0);

    const auto e = sinusoidal_embed(1.4, 4);
    const std::vector<double> expected{std::sin(1.4), std::cos(1.4), std::sin(1.4 / 100), std::cos(1.4 / 100)};
    for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(e[i], expected[i], 1e-15);

    Rng rng(2);
    for (int k = 0; k < 200; ++k) {
        const double v = rng.uniform(-1e4, 1e4);
        for (double x : sinusoidal_embed(v, 48)) {
            EXPECT_GE(x, -1.0);
            EXPECT_LE(x, 1.0);
        }
    }
    EXPECT_THROW(sinusoidal_embed(1.0, 7), ConfigError);
    EXPECT_THROW(sinusoidal_embed(1.0, 0), ConfigError);
}

TEST(Lem, OutputShapeZeroMapAndDeterminism) {
    Lem<double> lem(48, 96);
    Rng rng(1);
    lem.init(rng);
    const auto a = lem.forward(1.8, -1.4, 2.0);
    EXPECT_EQ(a.shape(), Shape{48});
    EXPECT_TRUE(a.all_finite());
    EXPECT_EQ(a, lem.forward(1.8, -1.4, 2.0));
    for (double s : {-1e6, 0.0, 1e6}) EXPECT_TRUE(lem.forward(s, -s, std::abs(s)).all_finite());

    lem.visit([](const std::string&, nn::Param<double>& p) { p.value.zero(); }, "");
    const auto zeroed = lem.forward(16.0, -1.8, 4.0);
    for (double v : zeroed.values()) EXPECT_EQ(v, 0.0);
}

TEST(Lem, InitialisationBoundsAndParameterNames) {
    Lem<double> lem(48, 96);
    Rng rng(4);
    lem.init(rng);
    std::vector<std::string> names;
    lem.visit([&](const std::string& n, const nn::Param<double>& p) {
        names.push_back(n);
        const bool bias = n.find("bias") != std::string::npos;
        const double fan_in = n.rfind("fc1", 0) == 0 ? 144.0 : 96.0;
        for (double v : p.value.values()) {
            if (bias)
                EXPECT_EQ(v, 0.0);
            else
                EXPECT_LE(std::abs(v), 1.0 / std::sqrt(fan_in));
        }
    }, "");
    EXPECT_EQ(names, (std::vector<std::string>{"fc1.weight", "fc1.bias", "fc2.weight", "fc2.bias"}));
}

TEST(Lem, DistinguishesBetdLensSpecs) {
    Lem<double> lem(48, 96);
    Rng rng(9);
    lem.init(rng);
    const std::vector<LensSpec> specs{testsupport::lens("Sony", 1.8), testsupport::lens("Sony", 16.0),
                                      testsupport::lens("Canon", 1.4), testsupport::lens("Canon", 1.8)};
    std::vector<Tensor<double>> out;
    for (const auto& s : specs) out.push_back(lem.forward(scalar_to_lens_value(encode_lens(s)), 1.8, 2.0));
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 4; ++j) {
            double d = 0;
            for (std::size_t k = 0; k < 48; ++k) d += std::pow(out[i][k] - out[j][k], 2);
            if (i == j)
                EXPECT_EQ(d, 0.0);
            else
                EXPECT_GT(d, 0.0);
        }
}

TEST(LensScalars, BinaryAndExtendedRegistries) {
    const MetaTuple m = testsupport::meta("Canon", 1.4, "Sony", 16.0, 3.0);
    EXPECT_EQ(lens_scalars(m), (std::vector<double>{-1.4, 16.0, 3.0}));
    const BrandRegistry reg({"Sony", "Canon", "Leica"});
    EXPECT_EQ(lens_scalars(m, reg), (std::vector<double>{-1, 1, 1.4, 1, -1, 16.0, 3.0}));
    EXPECT_EQ(lens_scalar_count(reg), 7u);
    Lem<double> lem(8, 16, lens_scalar_count(reg));
    EXPECT_EQ(lem.forward(lens_scalars(m, reg), nullptr).size(), 8u);
    EXPECT_THROW(lem.forward(lens_scalars(m), nullptr), DimensionError);
}
