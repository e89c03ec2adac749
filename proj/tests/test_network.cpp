#include <gtest/gtest.h>

#include "test_support.hpp"

using namespace bokeh;
using testsupport::random_tensor;

namespace {

// Hand-computed parameter count from layer sizes.
std::size_t expected_count(const ModelConfig& c) {
    const std::size_t e = c.d_embed, lem = 3 * e * c.lem_hidden + c.lem_hidden + c.lem_hidden * e + e;
    auto ditb = [&](std::size_t ch) {
        const std::size_t heads = (ch + c.channels_per_head - 1) / c.channels_per_head;
        const auto h = static_cast<std::size_t>(std::floor(static_cast<double>(ch) * c.ffn_expansion));
        const std::size_t norms = 4 * ch;
        const std::size_t mdta = 3 * ch * ch + 3 * ch * 9 + heads + ch * ch;
        const std::size_t gdfn = ch * 2 * h + 2 * h * 9 + h * ch;
        const std::size_t cond = e * 2 * ch + 2 * ch + 2 * ch * 2 * ch + 2 * ch;
        return norms + mdta + gdfn + cond;
    };
    const std::size_t img = c.image_channels, b = c.base_channels;
    std::size_t n = lem + img * b * 9 + b + b * img * 9 + img;
    for (std::size_t l = 0; l < 3; ++l) {
        const std::size_t w = b << l;
        n += 2 * c.level_blocks[l] * ditb(w);  // encoder + decoder
        n += w * (w / 2);                      // downsample 1x1
        n += (2 * w) * (4 * w);                // upsample 1x1
        n += 2 * w * w;                        // skip merge
    }
    n += c.level_blocks[3] * ditb(b << 3);
    n += c.refinement_blocks * ditb(b);
    return n;
}

} // namespace

TEST(Network, ParameterCountMatchesHandSum) {
    const ModelConfig toy = ModelConfig::toy();
    EXPECT_EQ(BokehModel<float>(toy).count_parameters().total, expected_count(toy));
    const ModelConfig def;
    const ParameterCount pc = BokehModel<float>(def).count_parameters();
    EXPECT_EQ(pc.total, expected_count(def));
    std::size_t sum = 0;
    for (const auto& [name, n] : pc.by_module) sum += n;
    EXPECT_EQ(sum, pc.total);
    EXPECT_EQ(pc.by_module.front().first, "lem");
    EXPECT_EQ(pc.by_module.back().first, "output");

    ModelConfig wide = toy;
    wide.base_channels = 32;
    EXPECT_GT(BokehModel<float>(wide).count_parameters().total, BokehModel<float>(toy).count_parameters().total);
    EXPECT_EQ(BokehModel<float>(toy, 1).count_parameters().total, BokehModel<float>(toy, 2).count_parameters().total);
}

TEST(Network, PreservesShapeAndRejectsIndivisibleSizes) {
    BokehModel<float> model(ModelConfig::toy(), 1);
    Rng rng(2);
    const MetaTuple m = testsupport::meta("Sony", 16.0, "Canon", 1.4, 1.0);
    for (std::size_t s : {8, 24, 64}) {
        const auto y = model.forward(random_tensor<float>({3, s, s + 8}, rng, 0, 1), m);
        EXPECT_EQ(y.shape(), (Shape{3, s, s + 8}));
        EXPECT_TRUE(y.all_finite());
    }
    EXPECT_THROW(model.forward(random_tensor<float>({3, 60, 64}, rng), m), DimensionError);
    EXPECT_THROW(model.forward(random_tensor<float>({3, 64, 12}, rng), m), DimensionError);
    EXPECT_THROW(model.forward(random_tensor<float>({1, 64, 64}, rng), m), DimensionError);
    try {
        model.forward(random_tensor<float>({3, 60, 64}, rng), m);
    } catch (const DimensionError& e) {
        EXPECT_NE(std::string(e.what()).find("multiples of 8"), std::string::npos);
    }
}

TEST(Network, ZeroOutputProjectionIsIdentity) {
    BokehModel<float> model(ModelConfig::toy(), 3);
    model.output_projection().weight.value.zero();
    model.output_projection().bias->value.zero();
    Rng rng(4);
    const auto x = random_tensor<float>({3, 32, 16}, rng, 0, 1);
    EXPECT_EQ(model.forward(x, testsupport::meta("Canon", 1.8, "Sony", 16.0, 4.0)), x);
}

TEST(Network, ConditioningIsLive) {
    BokehModel<double> model(ModelConfig::toy(), 5);
    Rng rng(6);
    const auto x = random_tensor({3, 16, 16}, rng, 0, 1);
    const MetaTuple a = testsupport::meta("Sony", 16.0, "Canon", 1.4, 2.0);
    const MetaTuple swapped = testsupport::meta("Canon", 1.4, "Sony", 16.0, 2.0);
    EXPECT_GT(max_abs_diff(model.forward(x, a), model.forward(x, swapped)), 0.0);

    BokehModel<double>::Cache c;
    model.zero_grad();
    const auto y = model.forward(x, a, &c);
    Tensor<double> g(y.shape(), 1.0 / static_cast<double>(y.size()));
    model.backward(c, g);
    double lem_grad = 0;
    model.visit([&](const std::string& n, const nn::Param<double>& p) {
        if (n.rfind("lem.", 0) == 0)
            for (double v : p.grad.values()) lem_grad += std::abs(v);
    });
    EXPECT_GT(lem_grad, 0.0);
}

TEST(Network, ForwardIsDeterministicAndSeedDependent) {
    Rng rng(7);
    const auto x = random_tensor<float>({3, 16, 16}, rng, 0, 1);
    const MetaTuple m = testsupport::meta("Sony", 1.8, "Sony", 16.0, 0.0);
    BokehModel<float> a(ModelConfig::toy(), 11), b(ModelConfig::toy(), 11), c(ModelConfig::toy(), 12);
    EXPECT_EQ(a.forward(x, m), b.forward(x, m));
    EXPECT_GT(max_abs_diff(a.forward(x, m), c.forward(x, m)), 0.0);
}

TEST(Network, ParameterNamesAreUniqueAndStructured) {
    BokehModel<float> model(ModelConfig::toy());
    std::set<std::string> names;
    model.visit([&](const std::string& n, const nn::Param<float>&) { EXPECT_TRUE(names.insert(n).second) << n; });
    for (const char* n : {"lem.fc1.weight", "patch_embed.weight", "patch_embed.bias", "encoder1.0.attn.temperature",
                          "down3.conv.weight", "latent.0.ffn.dwconv.weight", "up1.conv.weight", "merge2.weight",
                          "decoder1.0.cond.fc2.bias", "output.weight", "output.bias"})
        EXPECT_TRUE(names.count(n)) << n;
}

TEST(ModelConfig, ValidatesFields) {
    ModelConfig c = ModelConfig::toy();
    c.base_channels = 6;
    EXPECT_NO_THROW(c.validate());
    c.base_channels = 3;
    EXPECT_THROW(c.validate(), ConfigError);
    c = ModelConfig::toy();
    c.level_blocks[2] = 0;
    EXPECT_THROW(c.validate(), ConfigError);
    c = ModelConfig::toy();
    c.d_embed = 7;
    EXPECT_THROW(c.validate(), ConfigError);
    c = ModelConfig::toy();
    c.base_channels = 20;  // 40 channels over 3 heads
    EXPECT_THROW(c.validate(), ConfigError);
}
