#ifndef BOKEH_ENGINE_HPP
#define BOKEH_ENGINE_HPP

#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "bokeh/checkpoint.hpp"
#include "bokeh/config.hpp"
#include "bokeh/data.hpp"
#include "bokeh/evaluation.hpp"
#include "bokeh/inference.hpp"
#include "bokeh/loss_metrics.hpp"
#include "bokeh/network.hpp"

namespace bokeh {

enum class LossKind { l1, alpha_masked };

inline std::string to_string(LossKind k) { return k == LossKind::l1 ? "l1" : "alpha_masked"; }

inline LossKind parse_loss_kind(const std::string& s) {
    if (s == "l1") return LossKind::l1;
    if (s == "alpha_masked") return LossKind::alpha_masked;
    throw ParseError("unknown loss (expected l1 or alpha_masked)", s);
}

template <typename T>
double stage_loss(LossKind k, const Tensor<T>& pred, const Tensor<T>& gt, const Image& alpha) {
    return k == LossKind::l1 ? l1_loss(pred, gt) : alpha_masked_loss(pred, gt, alpha);
}

template <typename T>
Tensor<T> stage_loss_grad(LossKind k, const Tensor<T>& pred, const Tensor<T>& gt, const Image& alpha) {
    return k == LossKind::l1 ? l1_loss_grad(pred, gt) : alpha_masked_loss_grad(pred, gt, alpha);
}

struct StageConfig {
    std::string name;
    std::size_t crop = 256;
    std::size_t batch = 4;
    double lr = 1e-4;
    LossKind loss = LossKind::l1;
    std::size_t iterations = 2000;

    static StageConfig precise_detecting() { return {"precise_detecting", 256, 4, 1e-4, LossKind::l1, 2000}; }
    static StageConfig global_transformation() { return {"global_transformation", 384, 2, 5e-5, LossKind::alpha_masked, 2000}; }

    void validate() const {
        if (name != "precise_detecting" && name != "global_transformation")
            throw ConfigError("unknown stage name '" + name + "'");
        if (crop == 0 || crop % kSpatialMultiple)
            throw ConfigError("stage " + name + ": crop must be a positive multiple of " + std::to_string(kSpatialMultiple));
        if (batch == 0) throw ConfigError("stage " + name + ": batch must be positive");
        if (!(lr > 0) || !std::isfinite(lr)) throw ConfigError("stage " + name + ": learning rate must be positive");
        if (iterations == 0) throw ConfigError("stage " + name + ": iterations must be positive");
    }

    bool operator==(const StageConfig&) const = default;
};

inline std::vector<StageConfig> default_stages() {
    return {StageConfig::precise_detecting(), StageConfig::global_transformation()};
}

// Adam with bias correction. Moments are allocated on the first step in the
// model's parameter visiting order.
template <typename T>
class Adam {
public:
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    void reset() {
        m_.clear();
        v_.clear();
        step_ = 0;
    }

    std::uint64_t step_count() const noexcept { return step_; }

    void step(BokehModel<T>& model, double lr) {
        if (m_.empty())
            model.visit([&](const std::string&, nn::Param<T>& p) {
                m_.emplace_back(p.value.shape());
                v_.emplace_back(p.value.shape());
            });
        ++step_;
        const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step_));
        const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step_));
        const T b1 = static_cast<T>(beta1), b2 = static_cast<T>(beta2);
        const T step_size = static_cast<T>(lr / c1);
        const T inv_sqrt_c2 = static_cast<T>(1.0 / std::sqrt(c2));
        const T e = static_cast<T>(eps);
        std::size_t k = 0;
        model.visit([&](const std::string&, nn::Param<T>& p) {
            T* m = m_[k].data();
            T* v = v_[k].data();
            T* w = p.value.data();
            const T* g = p.grad.data();
            for (std::size_t i = 0; i < p.size(); ++i) {
                m[i] = b1 * m[i] + (T(1) - b1) * g[i];
                v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
                w[i] -= step_size * m[i] / (std::sqrt(v[i]) * inv_sqrt_c2 + e);
            }
            ++k;
        });
    }

    void save(Checkpoint& ck, const BokehModel<T>& model) const {
        ck.optimizer_step = step_;
        if (m_.empty()) return;
        std::size_t k = 0;
        model.visit([&](const std::string& name, const nn::Param<T>&) {
            ck.arrays.push_back(to_named_array("adam.m/" + name, m_[k]));
            ck.arrays.push_back(to_named_array("adam.v/" + name, v_[k]));
            ++k;
        });
    }

    void load(const Checkpoint& ck, BokehModel<T>& model) {
        reset();
        step_ = ck.optimizer_step;
        if (!ck.find("adam.m/" + first_name(model))) return;
        model.visit([&](const std::string& name, nn::Param<T>& p) {
            const NamedArray* m = ck.find("adam.m/" + name);
            const NamedArray* v = ck.find("adam.v/" + name);
            if (!m || !v) throw ValidationError("checkpoint is missing optimizer moments for " + name);
            m_.emplace_back(p.value.shape());
            v_.emplace_back(p.value.shape());
            from_named_array(*m, m_.back());
            from_named_array(*v, v_.back());
        });
    }

private:
    static std::string first_name(BokehModel<T>& model) {
        std::string first;
        model.visit([&](const std::string& name, nn::Param<T>&) {
            if (first.empty()) first = name;
        });
        return first;
    }

    std::vector<Tensor<T>> m_, v_;
    std::uint64_t step_ = 0;
};

// Epoch-wise shuffled record order; a pure function of the rng stream.
class BatchSampler {
public:
    explicit BatchSampler(std::size_t n = 0) : n_(n) {}

    std::size_t next(Rng& rng) {
        if (cursor_ >= order_.size()) {
            order_.resize(n_);
            std::iota(order_.begin(), order_.end(), std::size_t{0});
            rng.shuffle(order_.begin(), order_.end());
            cursor_ = 0;
        }
        return order_[cursor_++];
    }

    void save(Checkpoint& ck) const {
        ck.cursor = cursor_;
        ck.order.assign(order_.begin(), order_.end());
    }

    void load(const Checkpoint& ck) {
        if (!ck.order.empty() && ck.order.size() != n_)
            throw ValidationError("checkpoint sampler covers " + std::to_string(ck.order.size()) + " records, dataset has " +
                                  std::to_string(n_));
        for (auto i : ck.order)
            if (i >= n_) throw ValidationError("checkpoint sampler index out of range");
        if (ck.cursor > ck.order.size()) throw ValidationError("checkpoint sampler cursor out of range");
        order_.assign(ck.order.begin(), ck.order.end());
        cursor_ = static_cast<std::size_t>(ck.cursor);
    }

private:
    std::size_t n_;
    std::vector<std::size_t> order_;
    std::size_t cursor_ = 0;
};

class TrainingDiverged : public RuntimeFailure {
public:
    using RuntimeFailure::RuntimeFailure;
};

struct StepResult {
    std::size_t iteration = 0;  // 1-based global iteration just completed
    std::string stage;
    double loss = 0;
    double lr = 0;
    std::vector<std::string> batch_ids;
};

// Owns the optimizer, sampler and rng; trains a caller-owned model.
template <typename T>
class Trainer {
public:
    Trainer(BokehModel<T>& model, std::vector<TrainingPair> data, std::vector<StageConfig> stages, std::uint64_t seed)
        : model_(model), data_(std::move(data)), stages_(std::move(stages)), rng_(seed), sampler_(data_.size()) {
        if (data_.empty()) throw ValidationError("training set is empty");
        if (stages_.empty()) throw ConfigError("at least one training stage is required");
        std::size_t min_side = SIZE_MAX;
        for (const auto& p : data_) {
            validate_pair(p);
            min_side = std::min({min_side, p.source.height(), p.source.width()});
        }
        for (const auto& s : stages_) {
            s.validate();
            if (s.crop > min_side)
                throw ConfigError("stage " + s.name + ": crop " + std::to_string(s.crop) +
                                  " exceeds the smallest training image side " + std::to_string(min_side));
        }
    }

    bool done() const noexcept { return stage_index_ >= stages_.size(); }
    std::size_t global_iteration() const noexcept { return global_iteration_; }
    std::size_t stage_index() const noexcept { return stage_index_; }
    std::size_t stage_iteration() const noexcept { return stage_iteration_; }
    const std::vector<StageConfig>& stages() const noexcept { return stages_; }
    const StageConfig& current_stage() const { return stages_.at(stage_index_); }
    const std::vector<TrainingPair>& data() const noexcept { return data_; }
    BokehModel<T>& model() noexcept { return model_; }

    StepResult step() {
        if (done()) throw ValidationError("training schedule already finished");
        const StageConfig& st = current_stage();
        StepResult r{global_iteration_ + 1, st.name, 0.0, st.lr, {}};
        model_.zero_grad();
        const T scale = T(1) / static_cast<T>(st.batch);
        typename BokehModel<T>::Cache cache;
        for (std::size_t b = 0; b < st.batch; ++b) {
            const TrainingPair& rec = data_[sampler_.next(rng_)];
            r.batch_ids.push_back(rec.meta.id);
            const TrainingPair crop = paired_random_crop(rec, st.crop, rng_);
            const Tensor<T> src = crop.source.template cast<T>();
            const Tensor<T> tgt = crop.target.template cast<T>();
            const Tensor<T> out = model_.forward(src, crop.meta, &cache);
            r.loss += stage_loss(st.loss, out, tgt, crop.alpha) / static_cast<double>(st.batch);
            Tensor<T> g = stage_loss_grad(st.loss, out, tgt, crop.alpha);
            g *= scale;
            model_.backward(cache, g);
        }
        if (!std::isfinite(r.loss)) {
            std::string ids;
            for (const auto& id : r.batch_ids) ids += (ids.empty() ? "" : ",") + id;
            throw TrainingDiverged("non-finite loss " + format_real(r.loss) + " at iteration " + std::to_string(r.iteration) +
                                   " (stage " + st.name + ", batch ids " + ids + ")");
        }
        adam_.step(model_, st.lr);
        ++global_iteration_;
        if (++stage_iteration_ >= st.iterations) {
            ++stage_index_;
            stage_iteration_ = 0;
            adam_.reset();
        }
        return r;
    }

    Checkpoint checkpoint() const {
        Checkpoint ck;
        ck.config = model_.config();
        ck.stage_tag = done() ? "finished" : current_stage().name;
        ck.stage_index = stage_index_;
        ck.stage_iteration = stage_iteration_;
        ck.global_iteration = global_iteration_;
        ck.rng_state = rng_.state();
        sampler_.save(ck);
        ck.scalar_bytes = sizeof(T);
        append_parameters(ck, model_);
        adam_.save(ck, model_);
        return ck;
    }

    // Restores model, optimizer, sampler, rng and schedule position.
    void restore(const Checkpoint& ck) {
        if (!(ck.config == model_.config())) throw ValidationError("checkpoint model configuration differs from the trainer's");
        if (ck.scalar_bytes != sizeof(T)) throw ValidationError("checkpoint scalar width does not match the training precision");
        if (ck.stage_index > stages_.size()) throw ValidationError("checkpoint stage index beyond the configured schedule");
        const std::string expected = ck.stage_index == stages_.size() ? "finished" : stages_[ck.stage_index].name;
        if (ck.stage_tag != expected)
            throw ValidationError("checkpoint stage '" + ck.stage_tag + "' does not match configured stage '" + expected + "'");
        restore_parameters(ck, model_);
        adam_.load(ck, model_);
        sampler_.load(ck);
        rng_.set_state(ck.rng_state);
        stage_index_ = static_cast<std::size_t>(ck.stage_index);
        stage_iteration_ = static_cast<std::size_t>(ck.stage_iteration);
        global_iteration_ = static_cast<std::size_t>(ck.global_iteration);
    }

private:
    BokehModel<T>& model_;
    std::vector<TrainingPair> data_;
    std::vector<StageConfig> stages_;
    Rng rng_;
    BatchSampler sampler_;
    Adam<T> adam_;
    std::size_t stage_index_ = 0, stage_iteration_ = 0, global_iteration_ = 0;
};

// Mean stage loss of whole-image predictions over a dataset.
template <typename T>
double dataset_loss(const BokehModel<T>& model, const std::vector<TrainingPair>& data, LossKind kind) {
    double s = 0;
    for (const auto& p : data) {
        const Tensor<T> out = model.forward(p.source.template cast<T>(), p.meta);
        s += stage_loss(kind, out, p.target.template cast<T>(), p.alpha);
    }
    return data.empty() ? 0.0 : s / static_cast<double>(data.size());
}

template <typename T>
Predictor model_predictor(const BokehModel<T>& model, TilingPolicy tiling = {}) {
    return [&model, tiling](const TrainingPair& p) { return infer(model, p.source, p.meta, tiling); };
}

// ---- configuration file and training driver ---------------------------------

struct TrainConfig {
    ModelConfig model;
    std::vector<StageConfig> stages = default_stages();
    std::filesystem::path data;
    std::filesystem::path val_data;
    std::filesystem::path out = "runs/train";
    std::uint64_t seed = 0;
    std::size_t val_every = 250;
    std::size_t log_every = 10;
    std::size_t checkpoint_every = 250;
};

// Keys: data, val_data, out, seed, val_every, log_every, checkpoint_every,
// model.<field>, stages (comma list), stage.<name>.{crop,batch,lr,loss,iterations}.
inline TrainConfig parse_train_config(const KeyValues& kv) {
    ConfigReader r(kv);
    TrainConfig c;
    r.require("data", c.data);
    r.read("val_data", c.val_data);
    r.read("out", c.out);
    r.read("seed", c.seed);
    r.read("val_every", c.val_every);
    r.read("log_every", c.log_every);
    r.read("checkpoint_every", c.checkpoint_every);
    read_model_config(r, c.model);

    std::vector<std::string> names;
    for (const auto& s : c.stages) names.push_back(s.name);
    r.read("stages", names);
    c.stages.clear();
    for (const auto& n : names) {
        StageConfig s = n == "precise_detecting"       ? StageConfig::precise_detecting()
                        : n == "global_transformation" ? StageConfig::global_transformation()
                                                       : StageConfig{n};
        const std::string p = "stage." + n + ".";
        r.read(p + "crop", s.crop);
        r.read(p + "batch", s.batch);
        r.read(p + "lr", s.lr);
        r.read(p + "iterations", s.iterations);
        std::string loss = to_string(s.loss);
        r.read(p + "loss", loss);
        try {
            s.loss = parse_loss_kind(loss);
            s.validate();
        } catch (const Error& e) {
            r.fail(e.what());
        }
        c.stages.push_back(s);
    }
    if (c.stages.empty()) r.fail("at least one training stage is required");
    if (c.log_every == 0) r.fail("log_every must be positive");
    r.finish();
    return c;
}

inline TrainConfig load_train_config(const std::filesystem::path& path, const std::filesystem::path& workdir = {}) {
    TrainConfig c = parse_train_config(KeyValues::load(path));
    if (!workdir.empty()) {
        for (auto* p : {&c.data, &c.val_data, &c.out})
            if (!p->empty() && p->is_relative()) *p = workdir / *p;
    }
    return c;
}

inline std::string timestamp_utc() {
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::ostringstream os;
    os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return os.str();
}

inline std::string format_log_line(const StepResult& r) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.8g", r.loss);
    return "iter=" + std::to_string(r.iteration) + " stage=" + r.stage + " loss=" + buf + " lr=" + format_real(r.lr) +
           " time=" + timestamp_utc();
}

struct TrainSummary {
    std::size_t iterations = 0;
    double last_loss = 0;
    std::optional<double> best_val_psnr;
    std::filesystem::path final_checkpoint;
};

// Writes train_log.txt, last.ckpt every checkpoint_every iterations,
// best.ckpt on improved validation PSNR and final.ckpt at the end.
inline TrainSummary run_training(const TrainConfig& cfg, const std::filesystem::path& resume = {},
                                 const std::function<void(const std::string&)>& echo = {}) {
    const BrandRegistry registry(cfg.model.brands);
    const auto train_records = load_dataset(cfg.data, registry);
    std::vector<PairDescriptor> val_records;
    if (!cfg.val_data.empty()) val_records = load_dataset(cfg.val_data, registry);
    BokehModel<float> model(cfg.model, cfg.seed);
    Trainer<float> trainer(model, load_all(train_records), cfg.stages, cfg.seed);
    if (!resume.empty()) trainer.restore(load_checkpoint(resume));

    std::error_code ec;
    std::filesystem::create_directories(cfg.out, ec);
    if (ec) throw IoError("cannot create output directory " + cfg.out.string() + ": " + ec.message());
    std::ofstream log(cfg.out / "train_log.txt", resume.empty() ? std::ios::trunc : std::ios::app);
    if (!log) throw IoError("cannot write " + (cfg.out / "train_log.txt").string());
    auto emit = [&](const std::string& line) {
        log << line << "\n" << std::flush;
        if (echo) echo(line);
    };

    TrainSummary summary;
    while (!trainer.done()) {
        const StepResult r = trainer.step();
        summary.last_loss = r.loss;
        if (r.iteration % cfg.log_every == 0 || trainer.done()) emit(format_log_line(r));
        if (cfg.checkpoint_every && r.iteration % cfg.checkpoint_every == 0) save_checkpoint(cfg.out / "last.ckpt", trainer.checkpoint());
        if (!val_records.empty() && cfg.val_every && (r.iteration % cfg.val_every == 0 || trainer.done())) {
            const EvalReport rep = evaluate(val_records, model_predictor(model));
            emit("validation iter=" + std::to_string(r.iteration) + " psnr=" + format_metric(rep.overall.psnr_db, 4) +
                 " ssim=" + format_metric(rep.overall.ssim, 4));
            if (!summary.best_val_psnr || rep.overall.psnr_db > *summary.best_val_psnr) {
                summary.best_val_psnr = rep.overall.psnr_db;
                save_checkpoint(cfg.out / "best.ckpt", trainer.checkpoint());
            }
        }
    }
    summary.iterations = trainer.global_iteration();
    summary.final_checkpoint = cfg.out / "final.ckpt";
    save_checkpoint(summary.final_checkpoint, trainer.checkpoint());
    return summary;
}

} // namespace bokeh

#endif // BOKEH_ENGINE_HPP
