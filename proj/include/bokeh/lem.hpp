#ifndef BOKEH_LEM_HPP
#define BOKEH_LEM_HPP

#include <cmath>
#include <string>
#include <vector>

#include "bokeh/lens_meta.hpp"
#include "bokeh/nn/mlp.hpp"

namespace bokeh {

// Sign carries the brand, magnitude the aperture: Canon f/1.4 -> -1.4.
inline double scalar_to_lens_value(const LensCode& code) {
    if (code.brand_code.size() != 1)
        throw ConfigError("scalar lens value is defined for two-brand registries only (code length " +
                          std::to_string(code.brand_code.size()) + ")");
    return code.brand_code[0] * code.aperture;
}

// out[2i] = sin(v / 10000^(2i/dim)), out[2i+1] = cos(same).
template <typename T = double>
std::vector<T> sinusoidal_embed(double v, std::size_t dim) {
    if (dim == 0 || dim % 2) throw ConfigError("sinusoidal embedding width must be even and positive, got " + std::to_string(dim));
    std::vector<T> out(dim);
    for (std::size_t i = 0; i < dim / 2; ++i) {
        const double freq = std::pow(10000.0, -static_cast<double>(2 * i) / static_cast<double>(dim));
        out[2 * i] = static_cast<T>(std::sin(v * freq));
        out[2 * i + 1] = static_cast<T>(std::cos(v * freq));
    }
    return out;
}

// Scalars fed to the embedding module for one record. Two-brand registries
// give (source value, target value, disparity); larger registries embed every
// code element and aperture separately.
inline std::vector<double> lens_scalars(const MetaTuple& meta, const BrandRegistry& registry = {}) {
    const LensCode src = encode_lens(meta.source, registry);
    const LensCode tgt = encode_lens(meta.target, registry);
    if (registry.size() == 2) return {scalar_to_lens_value(src), scalar_to_lens_value(tgt), meta.disparity};
    std::vector<double> out;
    for (const LensCode* c : {&src, &tgt}) {
        for (int k : c->brand_code) out.push_back(k);
        out.push_back(c->aperture);
    }
    out.push_back(meta.disparity);
    return out;
}

inline std::size_t lens_scalar_count(const BrandRegistry& registry) {
    return registry.size() == 2 ? 3 : 2 * registry.size() + 1;
}

// Lens embedding module: each scalar is embedded to d_embed values, the rows
// are concatenated and a two-layer perceptron compresses them to one
// d_embed conditioning vector.
template <typename T>
class Lem {
public:
    struct Cache {
        typename nn::Mlp<T>::Cache mlp;
    };

    Lem() = default;
    Lem(std::size_t d_embed, std::size_t hidden, std::size_t inputs = 3)
        : d_embed_(d_embed), inputs_(inputs), mlp_(inputs * d_embed, hidden, d_embed) {
        if (d_embed % 2) throw ConfigError("embedding width must be even");
    }

    std::size_t d_embed() const { return d_embed_; }
    std::size_t inputs() const { return inputs_; }
    void init(Rng& rng) { mlp_.init(rng); }

    // Concatenated sinusoidal rows, length inputs * d_embed.
    Tensor<T> embed(const std::vector<double>& scalars) const {
        if (scalars.size() != inputs_)
            throw DimensionError("embedding module expects " + std::to_string(inputs_) + " scalars, got " +
                                 std::to_string(scalars.size()));
        Tensor<T> stacked({inputs_ * d_embed_});
        for (std::size_t r = 0; r < inputs_; ++r) {
            const auto row = sinusoidal_embed<T>(scalars[r], d_embed_);
            std::copy(row.begin(), row.end(), stacked.data() + r * d_embed_);
        }
        return stacked;
    }

    Tensor<T> forward(const std::vector<double>& scalars, Cache* cache) const {
        return mlp_.forward(embed(scalars), cache ? &cache->mlp : nullptr);
    }

    Tensor<T> forward(double source, double target, double disparity, Cache* cache = nullptr) const {
        return forward(std::vector<double>{source, target, disparity}, cache);
    }

    // Inputs are constants; only parameter gradients are produced.
    void backward(const Cache& cache, const Tensor<T>& dy) { mlp_.backward(cache.mlp, dy); }

    nn::Mlp<T>& mlp() { return mlp_; }
    const nn::Mlp<T>& mlp() const { return mlp_; }

    template <typename F>
    void visit(F&& f, const std::string& prefix) { mlp_.visit(f, prefix); }
    template <typename F>
    void visit(F&& f, const std::string& prefix) const { mlp_.visit(f, prefix); }

private:
    std::size_t d_embed_ = 48;
    std::size_t inputs_ = 3;
    nn::Mlp<T> mlp_;
};

} // namespace bokeh

#endif // BOKEH_LEM_HPP
