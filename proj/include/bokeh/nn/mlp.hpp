#ifndef BOKEH_NN_MLP_HPP
#define BOKEH_NN_MLP_HPP

#include <string>

#include "bokeh/nn/ops.hpp"
#include "bokeh/nn/param.hpp"

namespace bokeh::nn {

// affine -> GELU -> affine, on vectors.
template <typename T>
class Mlp {
public:
    struct Cache {
        Tensor<T> input, hidden_pre, hidden;
    };

    Mlp() = default;
    Mlp(std::size_t in, std::size_t hidden, std::size_t out)
        : w1({hidden, in}), b1({hidden}), w2({out, hidden}), b2({out}) {}

    std::size_t in_features() const { return w1.value.dim(1); }
    std::size_t hidden_features() const { return w1.value.dim(0); }
    std::size_t out_features() const { return w2.value.dim(0); }

    void init(Rng& rng) {
        w1.init_uniform(rng, in_features());
        w2.init_uniform(rng, hidden_features());
        b1.value.zero();
        b2.value.zero();
    }

    Tensor<T> forward(const Tensor<T>& x, Cache* cache) const {
        Tensor<T> pre = linear_forward(w1.value, &b1.value, x);
        Tensor<T> hid = gelu_forward(pre);
        Tensor<T> y = linear_forward(w2.value, &b2.value, hid);
        if (cache) *cache = Cache{x, std::move(pre), std::move(hid)};
        return y;
    }

    Tensor<T> backward(const Cache& cache, const Tensor<T>& dy) {
        Tensor<T> dhid = linear_backward(w2.value, cache.hidden, dy, w2.grad, &b2.grad);
        Tensor<T> dpre = gelu_backward(cache.hidden_pre, dhid);
        return linear_backward(w1.value, cache.input, dpre, w1.grad, &b1.grad);
    }

    template <typename F>
    void visit(F&& f, const std::string& prefix) { visit_impl(*this, f, prefix); }
    template <typename F>
    void visit(F&& f, const std::string& prefix) const { visit_impl(*this, f, prefix); }

    Param<T> w1, b1, w2, b2;

private:
    template <typename Self, typename F>
    static void visit_impl(Self& s, F& f, const std::string& p) {
        f(join_name(p, "fc1.weight"), s.w1);
        f(join_name(p, "fc1.bias"), s.b1);
        f(join_name(p, "fc2.weight"), s.w2);
        f(join_name(p, "fc2.bias"), s.b2);
    }
};

} // namespace bokeh::nn

#endif // BOKEH_NN_MLP_HPP
