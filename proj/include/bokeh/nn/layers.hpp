#ifndef BOKEH_NN_LAYERS_HPP
#define BOKEH_NN_LAYERS_HPP

#include <optional>
#include <string>

#include "bokeh/nn/ops.hpp"
#include "bokeh/nn/param.hpp"

namespace bokeh::nn {

template <typename T>
class Conv1x1 {
public:
    Conv1x1() = default;
    Conv1x1(std::size_t in, std::size_t out, bool bias) : weight({out, in}) {
        if (bias) this->bias = Param<T>({out});
    }

    std::size_t in_channels() const { return weight.value.dim(1); }
    std::size_t out_channels() const { return weight.value.dim(0); }
    bool has_bias() const { return bias.has_value(); }

    void init(Rng& rng) {
        weight.init_uniform(rng, in_channels());
        if (bias) bias->value.zero();
    }

    Tensor<T> forward(const Tensor<T>& x) const { return conv1x1_forward(weight.value, bias ? &bias->value : nullptr, x); }
    Tensor<T> backward(const Tensor<T>& x, const Tensor<T>& dy) {
        return conv1x1_backward(weight.value, x, dy, weight.grad, bias ? &bias->grad : nullptr);
    }

    template <typename F>
    void visit(F&& f, const std::string& p) { visit_impl(*this, f, p); }
    template <typename F>
    void visit(F&& f, const std::string& p) const { visit_impl(*this, f, p); }

    Param<T> weight;
    std::optional<Param<T>> bias;

private:
    template <typename Self, typename F>
    static void visit_impl(Self& s, F& f, const std::string& p) {
        f(join_name(p, "weight"), s.weight);
        if (s.bias) f(join_name(p, "bias"), *s.bias);
    }
};

template <typename T>
class Conv3x3 {
public:
    Conv3x3() = default;
    Conv3x3(std::size_t in, std::size_t out, bool bias) : weight({out, in, 3, 3}) {
        if (bias) this->bias = Param<T>({out});
    }

    std::size_t in_channels() const { return weight.value.dim(1); }
    std::size_t out_channels() const { return weight.value.dim(0); }

    void init(Rng& rng) {
        weight.init_uniform(rng, in_channels() * 9);
        if (bias) bias->value.zero();
    }

    Tensor<T> forward(const Tensor<T>& x) const { return conv3x3_forward(weight.value, bias ? &bias->value : nullptr, x); }
    Tensor<T> backward(const Tensor<T>& x, const Tensor<T>& dy) {
        return conv3x3_backward(weight.value, x, dy, weight.grad, bias ? &bias->grad : nullptr);
    }

    template <typename F>
    void visit(F&& f, const std::string& p) { visit_impl(*this, f, p); }
    template <typename F>
    void visit(F&& f, const std::string& p) const { visit_impl(*this, f, p); }

    Param<T> weight;
    std::optional<Param<T>> bias;

private:
    template <typename Self, typename F>
    static void visit_impl(Self& s, F& f, const std::string& p) {
        f(join_name(p, "weight"), s.weight);
        if (s.bias) f(join_name(p, "bias"), *s.bias);
    }
};

template <typename T>
class DepthwiseConv3x3 {
public:
    DepthwiseConv3x3() = default;
    explicit DepthwiseConv3x3(std::size_t channels) : weight({channels, 3, 3}) {}

    void init(Rng& rng) { weight.init_uniform(rng, 9); }
    Tensor<T> forward(const Tensor<T>& x) const { return dwconv3x3_forward(weight.value, x); }
    Tensor<T> backward(const Tensor<T>& x, const Tensor<T>& dy) { return dwconv3x3_backward(weight.value, x, dy, weight.grad); }

    template <typename F>
    void visit(F&& f, const std::string& p) { f(join_name(p, "weight"), weight); }
    template <typename F>
    void visit(F&& f, const std::string& p) const { f(join_name(p, "weight"), weight); }

    Param<T> weight;
};

// Normalises each pixel's channel vector, then applies per-channel gain/bias.
template <typename T>
class LayerNorm {
public:
    using Cache = LayerNormCache<T>;

    LayerNorm() = default;
    LayerNorm(std::size_t channels, T eps) : gain({channels}, T(1)), bias({channels}), eps_(eps) {}

    void init(Rng&) {
        gain.value.fill(T(1));
        bias.value.zero();
    }

    Tensor<T> forward(const Tensor<T>& x, Cache* cache) const { return layernorm_forward(gain.value, bias.value, x, eps_, cache); }
    Tensor<T> backward(const Cache& cache, const Tensor<T>& dy) {
        return layernorm_backward(gain.value, cache, dy, gain.grad, bias.grad);
    }

    template <typename F>
    void visit(F&& f, const std::string& p) { visit_impl(*this, f, p); }
    template <typename F>
    void visit(F&& f, const std::string& p) const { visit_impl(*this, f, p); }

    Param<T> gain, bias;

private:
    T eps_ = T(1e-6);

    template <typename Self, typename F>
    static void visit_impl(Self& s, F& f, const std::string& p) {
        f(join_name(p, "weight"), s.gain);
        f(join_name(p, "bias"), s.bias);
    }
};

} // namespace bokeh::nn

#endif // BOKEH_NN_LAYERS_HPP
