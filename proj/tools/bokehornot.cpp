// Command-line front end: gen-synth, stats, train, eval, infer.
// Exit status: 0 success, 1 invalid input, 2 runtime failure.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <string>

#include "bokeh/bokeh.hpp"

namespace fs = std::filesystem;
using namespace bokeh;

namespace {

constexpr int kExitInvalid = 1;
constexpr int kExitFailure = 2;

struct Options {
    fs::path workdir;

    // gen-synth
    fs::path out;
    std::size_t pairs = 8;
    std::size_t size = 128;
    std::uint64_t seed = 7;

    // stats / eval
    fs::path data;
    std::string format = "table";

    // train
    fs::path config;
    fs::path resume;
    bool quiet = false;

    // eval / infer
    fs::path checkpoint;
    fs::path input, output;
    std::string source_lens, target_lens;
    double disparity = 0;
    std::size_t tile = 768;
    std::size_t overlap = 64;
    bool no_tiling = false;
};

fs::path resolve(const Options& o, const fs::path& p) {
    return o.workdir.empty() || p.empty() || p.is_absolute() ? p : o.workdir / p;
}

TilingPolicy tiling(const Options& o) {
    TilingPolicy t{!o.no_tiling, o.tile, o.overlap};
    t.validate();
    return t;
}

int cmd_gen_synth(const Options& o) {
    SynthConfig cfg;
    cfg.num_pairs = o.pairs;
    cfg.height = cfg.width = o.size;
    cfg.seed = o.seed;
    cfg.validate();
    const SynthSummary s = generate_synthetic(cfg, resolve(o, o.out));
    std::cout << "wrote " << s.pairs << " pairs to " << resolve(o, o.out).string() << "\n";
    std::cout << "transformations:\n";
    for (const auto& [k, n] : s.transformations) std::cout << "  " << k.first << " -> " << k.second << ": " << n << "\n";
    return 0;
}

int cmd_stats(const Options& o) {
    const DatasetStats st = dataset_stats(load_dataset(resolve(o, o.data)));
    std::cout << (o.format == "records" ? format_stats_records(st) : format_stats(st));
    return 0;
}

int cmd_train(const Options& o) {
    const TrainConfig cfg = load_train_config(resolve(o, o.config), o.workdir);
    const TrainSummary s = run_training(cfg, resolve(o, o.resume), [&](const std::string& line) {
        if (!o.quiet) std::cout << line << "\n" << std::flush;
    });
    std::cout << "finished " << s.iterations << " iterations; final loss " << format_real(s.last_loss) << "\n";
    if (s.best_val_psnr) std::cout << "best validation psnr " << format_metric(*s.best_val_psnr, 4) << " dB\n";
    std::cout << "checkpoint " << s.final_checkpoint.string() << "\n";
    return 0;
}

int cmd_eval(const Options& o) {
    const TilingPolicy t = tiling(o);
    const BokehModel<float> model = load_model<float>(resolve(o, o.checkpoint));
    const auto records = load_dataset(resolve(o, o.data), model.registry());
    const EvalReport r = evaluate(records, model_predictor(model, t));
    std::cout << (o.format == "records" ? format_records(r) : format_grid_report(r));
    return 0;
}

int cmd_infer(const Options& o) {
    const TilingPolicy t = tiling(o);
    const BokehModel<float> model = load_model<float>(resolve(o, o.checkpoint));
    MetaTuple meta{"input", parse_lens_name(o.source_lens, model.registry()), parse_lens_name(o.target_lens, model.registry()),
                   o.disparity};
    validate_meta(meta);
    const Image src = read_png(resolve(o, o.input), model.config().image_channels);
    const Image out = infer(model, src, meta, t);
    write_png(resolve(o, o.output), out);
    std::cout << "wrote " << resolve(o, o.output).string() << " (" << out.width() << "x" << out.height() << ")\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Lens-conditioned bokeh effect transformation"};
    app.require_subcommand(1);
    Options o;
    app.add_option("--workdir", o.workdir, "Directory that relative paths are resolved against");

    auto* gen = app.add_subcommand("gen-synth", "Generate a synthetic paired dataset");
    gen->add_option("--out", o.out, "Output dataset directory")->required();
    gen->add_option("--pairs", o.pairs, "Number of pairs")->check(CLI::PositiveNumber);
    gen->add_option("--size", o.size, "Image height and width in pixels")->check(CLI::Range(16, 8192));
    gen->add_option("--seed", o.seed, "Random seed");

    auto* stats = app.add_subcommand("stats", "Dataset statistics: lens-pair grid, disparity distribution, baseline metrics");
    stats->add_option("--data", o.data, "Dataset directory")->required();
    stats->add_option("--format", o.format, "table or records")->check(CLI::IsMember({"table", "records"}));

    auto* train = app.add_subcommand("train", "Two-stage training from a configuration file");
    train->add_option("--config", o.config, "Configuration file (key = value)")->required();
    train->add_option("--resume", o.resume, "Checkpoint to resume from");
    train->add_flag("--quiet", o.quiet, "Do not echo log lines");

    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
    eval->add_option("--checkpoint", o.checkpoint, "Model checkpoint")->required();
    eval->add_option("--data", o.data, "Dataset directory")->required();
    eval->add_option("--format", o.format, "table or records")->check(CLI::IsMember({"table", "records"}));

    auto* inf = app.add_subcommand("infer", "Transform one image");
    inf->add_option("--checkpoint", o.checkpoint, "Model checkpoint")->required();
    inf->add_option("--input", o.input, "Source PNG")->required();
    inf->add_option("--source-lens", o.source_lens, "Source lens, e.g. Sony50mmf1.8BS")->required();
    inf->add_option("--target-lens", o.target_lens, "Target lens, e.g. Canon50mmf16.0BS")->required();
    inf->add_option("--disparity", o.disparity, "Non-negative disparity")->required();
    inf->add_option("--output", o.output, "Output PNG")->required();

    for (auto* sub : {eval, inf}) {
        sub->add_option("--tile", o.tile, "Tile size (multiple of 8)");
        sub->add_option("--overlap", o.overlap, "Tile overlap in pixels");
        sub->add_flag("--no-tiling", o.no_tiling, "Run the whole image in one pass");
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitInvalid;
    }

    try {
        if (*gen) return cmd_gen_synth(o);
        if (*stats) return cmd_stats(o);
        if (*train) return cmd_train(o);
        if (*eval) return cmd_eval(o);
        if (*inf) return cmd_infer(o);
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitInvalid;
    } catch (const std::exception& e) {
        std::cerr << "failure: " << e.what() << "\n";
        return kExitFailure;
    }
    return kExitInvalid;
}
