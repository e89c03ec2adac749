#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "test_support.hpp"

namespace fs = std::filesystem;
using namespace bokeh;

namespace {

struct CliResult {
    int status = -1;
    std::string output;
};

// Runs the command-line tool with stdout and stderr captured together.
CliResult run(const std::string& args, const fs::path& scratch) {
    const fs::path log = scratch / "cli_output.txt";
    const std::string cmd = std::string("'") + BOKEHORNOT_PATH + "' " + args + " > '" + log.string() + "' 2>&1";
    const int raw = std::system(cmd.c_str());
    CliResult r;
    r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
    std::ifstream in(log);
    std::ostringstream os;
    os << in.rdbuf();
    r.output = os.str();
    return r;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

} // namespace

TEST(Cli, GenSynthRejectsZeroPairsAndIsReproducible) {
    const auto dir = testsupport::scratch_dir("cli_gen");
    EXPECT_EQ(run("gen-synth --out '" + (dir / "none").string() + "' --pairs 0", dir).status, 1);

    ASSERT_EQ(run("gen-synth --out '" + (dir / "a").string() + "' --pairs 2 --size 32 --seed 3", dir).status, 0);
    ASSERT_EQ(run("gen-synth --out '" + (dir / "b").string() + "' --pairs 2 --size 32 --seed 3", dir).status, 0);
    for (const char* f : {"meta.txt", "source/00000.png", "target/00001.png", "alpha/00001.png"})
        EXPECT_EQ(slurp(dir / "a" / f), slurp(dir / "b" / f)) << f;
}

TEST(Cli, StatsReportsGridAndRejectsMissingData) {
    const auto dir = testsupport::scratch_dir("cli_stats");
    ASSERT_EQ(run("gen-synth --out '" + (dir / "d").string() + "' --pairs 3 --size 32", dir).status, 0);
    const CliResult ok = run("stats --data '" + (dir / "d").string() + "'", dir);
    EXPECT_EQ(ok.status, 0) << ok.output;
    EXPECT_NE(ok.output.find("overall: images=3"), std::string::npos) << ok.output;
    const CliResult missing = run("stats --data '" + (dir / "absent").string() + "'", dir);
    EXPECT_NE(missing.status, 0);
    EXPECT_NE(missing.output.find("absent"), std::string::npos) << missing.output;
}

TEST(Cli, TrainEvalInferRoundTrip) {
    const auto dir = testsupport::scratch_dir("cli_train");
    ASSERT_EQ(run("--workdir '" + dir.string() + "' gen-synth --out data --pairs 2 --size 32", dir).status, 0);
    {
        std::ofstream cfg(dir / "toy.cfg");
        cfg << "data = data\nout = run\nseed = 1\nlog_every = 1\n"
               "model.base_channels = 16\nmodel.level_blocks = 1,1,1,1\nmodel.refinement_blocks = 0\n"
               "stage.precise_detecting.crop = 16\nstage.precise_detecting.iterations = 2\n"
               "stage.global_transformation.crop = 24\nstage.global_transformation.iterations = 2\n";
    }
    const CliResult train = run("--workdir '" + dir.string() + "' train --config toy.cfg --quiet", dir);
    ASSERT_EQ(train.status, 0) << train.output;
    ASSERT_TRUE(fs::exists(dir / "run" / "final.ckpt"));
    EXPECT_NO_THROW(load_model<float>(dir / "run" / "final.ckpt"));

    const CliResult eval = run("--workdir '" + dir.string() + "' eval --checkpoint run/final.ckpt --data data --format records", dir);
    EXPECT_EQ(eval.status, 0) << eval.output;
    EXPECT_NE(eval.output.find("overall count=2"), std::string::npos) << eval.output;

    const std::string infer_args = "--workdir '" + dir.string() +
                                   "' infer --checkpoint run/final.ckpt --input data/source/00000.png --disparity 1 "
                                   "--output out.png --source-lens Sony50mmf1.8BS ";
    const CliResult good = run(infer_args + "--target-lens Canon50mmf16.0BS", dir);
    EXPECT_EQ(good.status, 0) << good.output;
    const Image out = read_png(dir / "out.png");
    EXPECT_EQ(out.shape(), (Shape{3, 32, 32}));

    const CliResult bad = run(infer_args + "--target-lens Nikon50mmf16.0BS", dir);
    EXPECT_EQ(bad.status, 1);
    EXPECT_NE(bad.output.find("Nikon"), std::string::npos) << bad.output;
}
