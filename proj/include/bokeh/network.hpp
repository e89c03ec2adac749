#ifndef BOKEH_NETWORK_HPP
#define BOKEH_NETWORK_HPP

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "bokeh/blocks.hpp"
#include "bokeh/lem.hpp"

namespace bokeh {

inline constexpr std::size_t kLevels = 3;
// Spatial extents must be multiples of 2^kLevels.
inline constexpr std::size_t kSpatialMultiple = 1u << kLevels;

struct ModelConfig {
    std::size_t base_channels = 48;
    // Blocks per encoder level 1..3, then the latent stage; decoder mirrors.
    std::array<std::size_t, 4> level_blocks{2, 3, 3, 4};
    std::size_t refinement_blocks = 2;
    std::size_t d_embed = 48;
    std::size_t lem_hidden = 96;
    std::size_t image_channels = 3;
    double ffn_expansion = 2.66;
    std::size_t channels_per_head = 16;
    std::vector<std::string> brands{"Sony", "Canon"};

    static ModelConfig toy() {
        ModelConfig c;
        c.base_channels = 16;
        c.level_blocks = {1, 1, 1, 1};
        c.refinement_blocks = 0;
        return c;
    }

    std::size_t width(std::size_t level) const { return base_channels << level; }

    BlockOptions block_options() const { return BlockOptions{d_embed, ffn_expansion, channels_per_head, 1e-6}; }

    void validate() const {
        if (base_channels < 4 || base_channels % 2)
            throw ConfigError("base_channels must be even and at least 4, got " + std::to_string(base_channels));
        for (std::size_t l = 0; l <= kLevels; ++l) {
            const std::size_t w = width(l);
            if (w % head_count(w, channels_per_head))
                throw ConfigError("level " + std::to_string(l + 1) + " width " + std::to_string(w) +
                                  " is not divisible by its head count " + std::to_string(head_count(w, channels_per_head)));
        }
        for (std::size_t b : level_blocks)
            if (b == 0) throw ConfigError("every level needs at least one transformer block");
        if (d_embed == 0 || d_embed % 2) throw ConfigError("d_embed must be even and positive");
        if (lem_hidden == 0) throw ConfigError("lem_hidden must be positive");
        if (image_channels == 0) throw ConfigError("image_channels must be positive");
        if (!(ffn_expansion > 0)) throw ConfigError("ffn_expansion must be positive");
        BrandRegistry check(brands);
    }

    bool operator==(const ModelConfig&) const = default;
};

struct ParameterCount {
    std::size_t total = 0;
    std::vector<std::pair<std::string, std::size_t>> by_module;
};

// U-shaped transformer: shallow 3x3 projection, three encoder levels with
// downsampling, a latent stage, three decoder levels with skip merges, an
// optional refinement stack and a 3x3 output projection added to the input.
// One conditioning vector from the lens embedding module feeds every block.
template <typename T>
class BokehModel {
public:
    using Blocks = std::vector<Ditb<T>>;
    using BlockCaches = std::vector<typename Ditb<T>::Cache>;

    struct Cache {
        typename Lem<T>::Cache lem;
        Tensor<T> v;
        Tensor<T> source;
        std::array<BlockCaches, kLevels> enc, dec;
        BlockCaches latent, refine;
        std::array<Tensor<T>, kLevels> skip, up_in, merge_in;
        Tensor<T> head_in;
    };

    BokehModel() = default;
    explicit BokehModel(const ModelConfig& config, std::uint64_t seed = 0) : config_(config), registry_(config.brands) {
        config_.validate();
        const BlockOptions opt = config_.block_options();
        const std::size_t c = config_.base_channels;
        lem_ = Lem<T>(config_.d_embed, config_.lem_hidden, lens_scalar_count(registry_));
        input_ = nn::Conv3x3<T>(config_.image_channels, c, true);
        for (std::size_t l = 0; l < kLevels; ++l) {
            const std::size_t w = config_.width(l);
            enc_[l] = Blocks(config_.level_blocks[l], Ditb<T>(w, opt));
            dec_[l] = Blocks(config_.level_blocks[l], Ditb<T>(w, opt));
            down_[l] = Downsample<T>(w);
            up_[l] = Upsample<T>(2 * w);
            merge_[l] = nn::Conv1x1<T>(2 * w, w, false);
        }
        latent_ = Blocks(config_.level_blocks[3], Ditb<T>(config_.width(3), opt));
        refine_ = Blocks(config_.refinement_blocks, Ditb<T>(c, opt));
        output_ = nn::Conv3x3<T>(c, config_.image_channels, true);
        Rng rng(seed);
        init(rng);
    }

    const ModelConfig& config() const { return config_; }
    const BrandRegistry& registry() const { return registry_; }

    void init(Rng& rng) {
        lem_.init(rng);
        input_.init(rng);
        for (std::size_t l = 0; l < kLevels; ++l) {
            for (auto& b : enc_[l]) b.init(rng);
            down_[l].init(rng);
        }
        for (auto& b : latent_) b.init(rng);
        for (std::size_t l = kLevels; l-- > 0;) {
            up_[l].init(rng);
            merge_[l].init(rng);
            for (auto& b : dec_[l]) b.init(rng);
        }
        for (auto& b : refine_) b.init(rng);
        output_.init(rng);
    }

    void check_input(const Tensor<T>& source) const {
        if (source.rank() != 3 || source.channels() != config_.image_channels)
            throw DimensionError("model expects a " + std::to_string(config_.image_channels) + "-channel image, got " +
                                 shape_string(source.shape()));
        if (source.height() % kSpatialMultiple || source.width() % kSpatialMultiple || source.height() == 0 ||
            source.width() == 0)
            throw DimensionError("image height and width must be positive multiples of " + std::to_string(kSpatialMultiple) +
                                 ", got " + shape_string(source.shape()));
    }

    Tensor<T> conditioning(const MetaTuple& meta, typename Lem<T>::Cache* cache = nullptr) const {
        return lem_.forward(lens_scalars(meta, registry_), cache);
    }

    Tensor<T> forward(const Tensor<T>& source, const MetaTuple& meta, Cache* cache = nullptr) const {
        return forward(source, lens_scalars(meta, registry_), cache);
    }

    Tensor<T> forward(const Tensor<T>& source, const std::vector<double>& scalars, Cache* cache) const {
        check_input(source);
        Tensor<T> v = lem_.forward(scalars, cache ? &cache->lem : nullptr);
        auto run = [&](const Blocks& blocks, BlockCaches* caches, Tensor<T> x) {
            if (caches) caches->resize(blocks.size());
            for (std::size_t i = 0; i < blocks.size(); ++i) x = blocks[i].forward(x, v, caches ? &(*caches)[i] : nullptr);
            return x;
        };

        Tensor<T> x = input_.forward(source);
        std::array<Tensor<T>, kLevels> skip;
        for (std::size_t l = 0; l < kLevels; ++l) {
            x = run(enc_[l], cache ? &cache->enc[l] : nullptr, std::move(x));
            skip[l] = x;
            x = down_[l].forward(x);
        }
        x = run(latent_, cache ? &cache->latent : nullptr, std::move(x));
        for (std::size_t l = kLevels; l-- > 0;) {
            Tensor<T> merged = concat_channels(up_[l].forward(x), skip[l]);
            if (cache) cache->up_in[l] = std::move(x);
            x = merge_[l].forward(merged);
            if (cache) cache->merge_in[l] = std::move(merged);
            x = run(dec_[l], cache ? &cache->dec[l] : nullptr, std::move(x));
        }
        x = run(refine_, cache ? &cache->refine : nullptr, std::move(x));
        Tensor<T> out = output_.forward(x);
        out += source;
        if (cache) {
            cache->v = std::move(v);
            cache->source = source;
            cache->skip = std::move(skip);
            cache->head_in = std::move(x);
        }
        return out;
    }

    // Accumulates parameter gradients for d(loss)/d(output) = dout.
    void backward(const Cache& cc, const Tensor<T>& dout) {
        Tensor<T> dv({config_.d_embed});
        auto run_back = [&](Blocks& blocks, const BlockCaches& caches, Tensor<T> d) {
            for (std::size_t i = blocks.size(); i-- > 0;) d = blocks[i].backward(caches[i], d, dv);
            return d;
        };

        Tensor<T> d = output_.backward(cc.head_in, dout);
        d = run_back(refine_, cc.refine, std::move(d));
        std::array<Tensor<T>, kLevels> dskip;
        for (std::size_t l = 0; l < kLevels; ++l) {
            d = run_back(dec_[l], cc.dec[l], std::move(d));
            Tensor<T> dmerged = merge_[l].backward(cc.merge_in[l], d);
            auto [dup, ds] = split_channels(dmerged, config_.width(l));
            dskip[l] = std::move(ds);
            d = up_[l].backward(cc.up_in[l], dup);
        }
        d = run_back(latent_, cc.latent, std::move(d));
        for (std::size_t l = kLevels; l-- > 0;) {
            d = down_[l].backward(cc.skip[l], d);
            d += dskip[l];
            d = run_back(enc_[l], cc.enc[l], std::move(d));
        }
        input_.backward(cc.source, d);
        lem_.backward(cc.lem, dv);
    }

    template <typename F>
    void visit(F&& f) { visit_impl(*this, f); }
    template <typename F>
    void visit(F&& f) const { visit_impl(*this, f); }

    void zero_grad() {
        visit([](const std::string&, nn::Param<T>& p) { p.zero_grad(); });
    }

    ParameterCount count_parameters() const {
        ParameterCount pc;
        visit([&](const std::string& name, const nn::Param<T>& p) {
            const std::string top = name.substr(0, name.find('.'));
            if (pc.by_module.empty() || pc.by_module.back().first != top) pc.by_module.emplace_back(top, 0);
            pc.by_module.back().second += p.size();
            pc.total += p.size();
        });
        return pc;
    }

    Lem<T>& lem() { return lem_; }
    const Lem<T>& lem() const { return lem_; }
    nn::Conv3x3<T>& output_projection() { return output_; }
    Ditb<T>& encoder_block(std::size_t level, std::size_t i) { return enc_.at(level).at(i); }

private:
    template <typename Self, typename F>
    static void visit_impl(Self& s, F& f) {
        s.lem_.visit(f, "lem");
        s.input_.visit(f, "patch_embed");
        for (std::size_t l = 0; l < kLevels; ++l) {
            const std::string lv = std::to_string(l + 1);
            for (std::size_t i = 0; i < s.enc_[l].size(); ++i) s.enc_[l][i].visit(f, "encoder" + lv + "." + std::to_string(i));
            s.down_[l].visit(f, "down" + lv);
        }
        for (std::size_t i = 0; i < s.latent_.size(); ++i) s.latent_[i].visit(f, "latent." + std::to_string(i));
        for (std::size_t l = kLevels; l-- > 0;) {
            const std::string lv = std::to_string(l + 1);
            s.up_[l].visit(f, "up" + lv);
            s.merge_[l].visit(f, "merge" + lv);
            for (std::size_t i = 0; i < s.dec_[l].size(); ++i) s.dec_[l][i].visit(f, "decoder" + lv + "." + std::to_string(i));
        }
        for (std::size_t i = 0; i < s.refine_.size(); ++i) s.refine_[i].visit(f, "refinement." + std::to_string(i));
        s.output_.visit(f, "output");
    }

    ModelConfig config_;
    BrandRegistry registry_;
    Lem<T> lem_;
    nn::Conv3x3<T> input_;
    std::array<Blocks, kLevels> enc_, dec_;
    std::array<Downsample<T>, kLevels> down_;
    std::array<Upsample<T>, kLevels> up_;
    std::array<nn::Conv1x1<T>, kLevels> merge_;
    Blocks latent_, refine_;
    nn::Conv3x3<T> output_;
};

} // namespace bokeh

#endif // BOKEH_NETWORK_HPP
