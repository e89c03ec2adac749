#include <gtest/gtest.h>

#include <sstream>

#include "test_support.hpp"

using namespace bokeh;
namespace fs = std::filesystem;

namespace {

std::vector<TrainingPair> synthetic_pairs(std::size_t n, std::size_t size, std::uint64_t seed = 7) {
    SynthConfig cfg;
    cfg.num_pairs = n;
    cfg.height = cfg.width = size;
    Rng rng(seed);
    std::vector<TrainingPair> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(synth_pair(cfg, rng, record_id(i)));
    return out;
}

std::vector<StageConfig> tiny_stages(std::size_t it1 = 3, std::size_t it2 = 2) {
    return {{"precise_detecting", 16, 2, 1e-3, LossKind::l1, it1},
            {"global_transformation", 24, 1, 5e-4, LossKind::alpha_masked, it2}};
}

std::string bytes_of(const Checkpoint& ck) {
    std::ostringstream os;
    write_checkpoint(os, ck);
    return os.str();
}

} // namespace

TEST(StageConfig, Defaults) {
    const auto s = default_stages();
    ASSERT_EQ(s.size(), 2u);
    EXPECT_EQ(s[0], (StageConfig{"precise_detecting", 256, 4, 1e-4, LossKind::l1, 2000}));
    EXPECT_EQ(s[1], (StageConfig{"global_transformation", 384, 2, 5e-5, LossKind::alpha_masked, 2000}));
    EXPECT_THROW((StageConfig{"other", 16, 1, 1e-3, LossKind::l1, 1}.validate()), ConfigError);
    EXPECT_THROW((StageConfig{"precise_detecting", 20, 1, 1e-3, LossKind::l1, 1}.validate()), ConfigError);
    EXPECT_THROW((StageConfig{"precise_detecting", 16, 1, 0.0, LossKind::l1, 1}.validate()), ConfigError);
}

TEST(Adam, MatchesHandComputedUpdates) {
    BokehModel<double> model(ModelConfig::toy(), 1);
    Adam<double> adam;
    auto& w = model.output_projection().bias->value;
    const Tensor<double> w0 = w;
    const double grads[3] = {0.5, -0.25, 1.0};
    double m = 0, v = 0, expect = w0[0];
    for (int t = 1; t <= 3; ++t) {
        model.zero_grad();
        model.output_projection().bias->grad.fill(grads[t - 1]);
        adam.step(model, 1e-2);
        m = 0.9 * m + 0.1 * grads[t - 1];
        v = 0.999 * v + 0.001 * grads[t - 1] * grads[t - 1];
        const double mh = m / (1 - std::pow(0.9, t)), vh = v / (1 - std::pow(0.999, t));
        expect -= 1e-2 * mh / (std::sqrt(vh) + 1e-8);
        EXPECT_NEAR(w[0], expect, 1e-12);
    }
    EXPECT_EQ(adam.step_count(), 3u);
    // parameters with zero gradient stay put
    EXPECT_EQ(model.output_projection().weight.value, BokehModel<double>(ModelConfig::toy(), 1).output_projection().weight.value);
}

TEST(Trainer, LossDecreasesOnFixedBatch) {
    auto data = synthetic_pairs(1, 32);
    BokehModel<float> model(ModelConfig::toy(), 3);
    Trainer<float> tr(model, data, {{"precise_detecting", 32, 1, 1e-3, LossKind::l1, 50}}, 0);
    std::vector<double> losses;
    while (!tr.done()) losses.push_back(tr.step().loss);
    ASSERT_EQ(losses.size(), 50u);
    EXPECT_LT(losses.back(), 0.5 * losses.front());
}

TEST(Trainer, SeedDeterministicAndStagesAdvance) {
    auto run = [](std::uint64_t seed) {
        BokehModel<float> model(ModelConfig::toy(), 1);
        Trainer<float> tr(model, synthetic_pairs(3, 32), tiny_stages(), seed);
        std::vector<double> losses;
        std::vector<std::string> stages;
        while (!tr.done()) {
            const auto r = tr.step();
            losses.push_back(r.loss);
            stages.push_back(r.stage);
        }
        return std::make_pair(losses, stages);
    };
    const auto a = run(5), b = run(5), c = run(6);
    EXPECT_EQ(a.first, b.first);
    EXPECT_NE(a.first, c.first);
    EXPECT_EQ(a.second, (std::vector<std::string>{"precise_detecting", "precise_detecting", "precise_detecting",
                                                  "global_transformation", "global_transformation"}));
}

TEST(Trainer, ResumeReproducesTrajectoryAndBytes) {
    const auto data = synthetic_pairs(3, 32);
    BokehModel<float> model(ModelConfig::toy(), 2);
    Trainer<float> tr(model, data, tiny_stages(3, 3), 9);
    for (int i = 0; i < 2; ++i) tr.step();
    const Checkpoint mid = tr.checkpoint();
    std::vector<double> expected;
    while (!tr.done()) expected.push_back(tr.step().loss);

    // through the on-disk format
    const auto dir = testsupport::scratch_dir("resume");
    save_checkpoint(dir / "mid.ckpt", mid);
    BokehModel<float> fresh(ModelConfig::toy(), 99);
    Trainer<float> resumed(fresh, data, tiny_stages(3, 3), 1234);
    resumed.restore(load_checkpoint(dir / "mid.ckpt"));
    EXPECT_EQ(resumed.global_iteration(), 2u);
    std::vector<double> got;
    while (!resumed.done()) got.push_back(resumed.step().loss);
    EXPECT_EQ(got, expected);
    EXPECT_EQ(bytes_of(resumed.checkpoint()), bytes_of(tr.checkpoint()));
}

TEST(Trainer, RestoreRejectsMismatchedSchedule) {
    const auto data = synthetic_pairs(2, 32);
    BokehModel<float> model(ModelConfig::toy(), 2);
    Trainer<float> tr(model, data, tiny_stages(1, 3), 9);
    tr.step();
    const Checkpoint ck = tr.checkpoint();
    EXPECT_EQ(ck.stage_tag, "global_transformation");
    BokehModel<float> other(ModelConfig::toy(), 2);
    Trainer<float> single(other, data, {tiny_stages()[0]}, 9);
    EXPECT_THROW(single.restore(ck), ValidationError);
}

TEST(Trainer, NonFiniteLossAbortsWithDiagnostics) {
    BokehModel<float> model(ModelConfig::toy(), 2);
    model.output_projection().bias->value[0] = std::numeric_limits<float>::quiet_NaN();
    Trainer<float> tr(model, synthetic_pairs(2, 32), tiny_stages(), 1);
    try {
        tr.step();
        FAIL();
    } catch (const TrainingDiverged& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("iteration 1"), std::string::npos) << msg;
        EXPECT_NE(msg.find("0000"), std::string::npos) << msg;
        EXPECT_NE(msg.find("nan"), std::string::npos) << msg;
    }
}

TEST(Trainer, ValidatesInputs) {
    BokehModel<float> model(ModelConfig::toy(), 2);
    EXPECT_THROW(Trainer<float>(model, {}, tiny_stages(), 1), ValidationError);
    EXPECT_THROW(Trainer<float>(model, synthetic_pairs(1, 32), {}, 1), ConfigError);
    EXPECT_THROW(Trainer<float>(model, synthetic_pairs(1, 16), tiny_stages(), 1), ConfigError);
}

TEST(Checkpoint, RoundTripIsLossless) {
    BokehModel<float> model(ModelConfig::toy(), 4);
    Trainer<float> tr(model, synthetic_pairs(2, 32), tiny_stages(), 3);
    tr.step();
    const Checkpoint ck = tr.checkpoint();
    const std::string bytes = bytes_of(ck);
    std::istringstream in(bytes);
    const Checkpoint back = read_checkpoint(in, "memory");
    EXPECT_EQ(back.config, ck.config);
    EXPECT_EQ(back.rng_state, ck.rng_state);
    EXPECT_EQ(back.order, ck.order);
    EXPECT_EQ(back.optimizer_step, 1u);
    ASSERT_EQ(back.arrays.size(), ck.arrays.size());
    for (std::size_t i = 0; i < ck.arrays.size(); ++i) {
        EXPECT_EQ(back.arrays[i].name, ck.arrays[i].name);
        EXPECT_EQ(back.arrays[i].values, ck.arrays[i].values);
    }
    EXPECT_EQ(bytes_of(back), bytes);
    EXPECT_EQ(bytes.substr(0, 8), "BOKEHCKP");

    const BokehModel<float> loaded = model_from_checkpoint<float>(back);
    Rng rng(1);
    const auto x = testsupport::random_tensor<float>({3, 16, 16}, rng, 0, 1);
    const MetaTuple m = testsupport::meta("Sony", 16.0, "Canon", 1.4, 1.0);
    EXPECT_EQ(loaded.forward(x, m), model.forward(x, m));
}

TEST(Checkpoint, RejectsCorruptFiles) {
    BokehModel<float> model(ModelConfig::toy(), 4);
    Checkpoint ck;
    ck.config = model.config();
    append_parameters(ck, model);
    const std::string bytes = bytes_of(ck);
    std::string bad_magic = bytes;
    bad_magic[0] = 'X';
    std::istringstream a(bad_magic), b(bytes.substr(0, bytes.size() / 2));
    EXPECT_THROW(read_checkpoint(a, "bad"), ValidationError);
    EXPECT_THROW(read_checkpoint(b, "short"), ValidationError);
    EXPECT_THROW(load_checkpoint("/nonexistent/x.ckpt"), IoError);
    Checkpoint missing = ck;
    missing.arrays.pop_back();
    EXPECT_THROW(model_from_checkpoint<float>(missing), ValidationError);
}

TEST(TrainConfigFile, ParsesKeysAndCollectsAllErrors) {
    const auto kv = KeyValues::parse_text("# comment\ndata = synth\nseed = 3\nmodel.base_channels = 16\n"
                                          "model.level_blocks = 1,1,1,1\nmodel.refinement_blocks = 0\n"
                                          "stage.precise_detecting.crop = 64\nstage.global_transformation.loss = l1\n",
                                          "cfg");
    const TrainConfig c = parse_train_config(kv);
    EXPECT_EQ(c.model, ModelConfig::toy());
    EXPECT_EQ(c.seed, 3u);
    EXPECT_EQ(c.stages[0].crop, 64u);
    EXPECT_EQ(c.stages[0].batch, 4u);
    EXPECT_EQ(c.stages[1].loss, LossKind::l1);

    const auto bad = KeyValues::parse_text("seed = x\nmodel.base_channels = 3\nstage.precise_detecting.loss = l2\nbogus = 1\n",
                                           "bad.cfg");
    try {
        parse_train_config(bad);
        FAIL();
    } catch (const ConfigError& e) {
        const std::string msg = e.what();
        for (const char* needle : {"data", "seed", "base_channels", "l2", "bogus"})
            EXPECT_NE(msg.find(needle), std::string::npos) << needle << " missing from: " << msg;
    }
    EXPECT_THROW(KeyValues::parse_text("a = 1\na = 2\n", "dup"), ConfigError);
    EXPECT_THROW(KeyValues::parse_text("novalue\n", "x"), ConfigError);
}

TEST(TrainConfigFile, WorkdirResolvesRelativePaths) {
    const auto dir = testsupport::scratch_dir("cfg");
    {
        std::ofstream f(dir / "train.cfg");
        f << "data = synth\nout = run\nval_data = /abs/val\n";
    }
    const TrainConfig c = load_train_config(dir / "train.cfg", dir);
    EXPECT_EQ(c.data, dir / "synth");
    EXPECT_EQ(c.out, dir / "run");
    EXPECT_EQ(c.val_data, fs::path("/abs/val"));
}

TEST(Evaluate, IdentityModelReproducesBaseline) {
    const auto data = synthetic_pairs(6, 32);
    BokehModel<float> model(ModelConfig::toy(), 1);
    model.output_projection().weight.value.zero();
    model.output_projection().bias->value.zero();
    const EvalReport id = evaluate(data, model_predictor(model));
    const EvalReport base = evaluate(data, identity_prediction);
    EXPECT_EQ(id.overall.psnr_db, base.overall.psnr_db);
    EXPECT_EQ(id.overall.ssim, base.overall.ssim);
    EXPECT_EQ(format_records(id), format_records(base));
    std::size_t total = 0;
    for (const auto& [k, g] : id.groups) total += g.count;
    EXPECT_EQ(total, data.size());
    for (const auto& p : data) EXPECT_TRUE(id.groups.count({lens_label(p.meta.source), lens_label(p.meta.target)}));
}

TEST(Evaluate, MeansMatchHandComputation) {
    auto data = synthetic_pairs(3, 32);
    data[2].meta.source = data[0].meta.source;
    data[2].meta.target = data[0].meta.target;
    const EvalReport r = evaluate(data, identity_prediction);
    std::vector<double> ps, ss;
    for (const auto& p : data) {
        ps.push_back(psnr(p.source, p.target));
        ss.push_back(ssim(p.source, p.target));
    }
    EXPECT_NEAR(r.overall.psnr_db, (ps[0] + ps[1] + ps[2]) / 3, 1e-12);
    EXPECT_NEAR(r.overall.ssim, (ss[0] + ss[1] + ss[2]) / 3, 1e-12);
    const auto& g = r.groups.at({lens_label(data[0].meta.source), lens_label(data[0].meta.target)});
    EXPECT_EQ(g.count, 2u);
    EXPECT_NEAR(g.psnr_db, (ps[0] + ps[2]) / 2, 1e-12);
    const std::string grid = format_grid_report(r);
    EXPECT_NE(grid.find("notice:"), std::string::npos);
    EXPECT_NE(grid.find("overall: images=3"), std::string::npos);
}

TEST(Infer, ShapeDeterminismAndValidation) {
    BokehModel<float> model(ModelConfig::toy(), 5);
    Rng rng(2);
    const Image src = testsupport::random_tensor<float>({3, 30, 21}, rng, 0, 1);
    const MetaTuple m = testsupport::meta("Sony", 16.0, "Canon", 1.4, 2.0);
    const Image a = infer(model, src, m), b = infer(model, src, m);
    EXPECT_EQ(a.shape(), src.shape());
    EXPECT_EQ(a, b);
    for (float v : a.values()) {
        EXPECT_GE(v, 0.0f);
        EXPECT_LE(v, 1.0f);
    }
    EXPECT_THROW(infer(model, src, testsupport::meta("Sony", 16.0, "Sony", 16.0, 2.0)), ValidationError);
    EXPECT_THROW(infer(model, src, testsupport::meta("Sony", 16.0, "Nikon", 1.4, 2.0)), UnknownBrandError);
    EXPECT_THROW(infer(model, src, m, TilingPolicy{true, 20, 4}), ValidationError);
    EXPECT_THROW(infer(model, src, m, TilingPolicy{true, 16, 8}), ValidationError);
}

TEST(Infer, TileLayoutCoversImage) {
    for (auto [len, tile, ov] : {std::tuple<std::size_t, std::size_t, std::size_t>{512, 256, 64}, {520, 256, 64}, {64, 768, 64}}) {
        const auto starts = detail::tile_starts(len, std::min(tile, len), ov);
        EXPECT_EQ(starts.front(), 0u);
        EXPECT_EQ(starts.back() + std::min(tile, len), len);
        for (std::size_t i = 1; i < starts.size(); ++i) EXPECT_LE(starts[i], starts[i - 1] + tile - ov);
    }
    const auto w = detail::tile_ramp(0, 8, 16, 3);
    EXPECT_EQ(w.front(), 1.0);
    EXPECT_DOUBLE_EQ(w.back(), 0.25);
}

TEST(Infer, TiledMatchesWholeForPerPixelModel) {
    // Zero output projection makes the model the identity, so any blending
    // artefact would show up directly.
    BokehModel<float> model(ModelConfig::toy(), 5);
    model.output_projection().weight.value.zero();
    model.output_projection().bias->value.zero();
    Rng rng(3);
    const Image src = testsupport::random_tensor<float>({3, 72, 88}, rng, 0, 1);
    const MetaTuple m = testsupport::meta("Sony", 16.0, "Canon", 1.4, 2.0);
    EXPECT_LT(max_abs_diff(infer(model, src, m, TilingPolicy{true, 32, 8}), infer(model, src, m, TilingPolicy{false})), 1e-6f);
}

TEST(Stats, GridCountsAndPercentages) {
    const auto root = testsupport::scratch_dir("stats");
    SynthConfig cfg;
    cfg.height = cfg.width = 32;
    generate_synthetic(cfg, root);
    const DatasetStats st = dataset_stats(load_dataset(root));
    std::size_t cells = 0;
    for (const auto& [k, n] : st.occurrences) cells += n;
    EXPECT_EQ(cells, 8u);
    double pct = 0;
    for (const auto& [d, n] : st.disparities) pct += st.disparity_percent(d);
    EXPECT_NEAR(pct, 100.0, 0.1);
    const std::string text = format_stats(st);
    EXPECT_NE(text.find("Lens-pair occurrences (8 records)"), std::string::npos);
    EXPECT_NE(format_stats_records(st).find("overall count=8"), std::string::npos);
}

TEST(Stats, IdenticalPairsReportInfinitePsnr) {
    auto data = synthetic_pairs(2, 32);
    for (auto& p : data) p.target = p.source;
    const EvalReport r = evaluate(data, identity_prediction);
    EXPECT_EQ(r.overall.psnr_db, kPsnrInfinite);
    EXPECT_EQ(r.overall.infinite_psnr, 2u);
    EXPECT_NE(format_grid_report(r).find("psnr=inf"), std::string::npos);
}
