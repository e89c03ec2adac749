#ifndef BOKEH_NN_PARAM_HPP
#define BOKEH_NN_PARAM_HPP

#include <cmath>
#include <string>

#include "bokeh/rng.hpp"
#include "bokeh/tensor.hpp"

namespace bokeh::nn {

// A trainable tensor and its accumulated gradient.
template <typename T>
struct Param {
    Tensor<T> value;
    Tensor<T> grad;

    Param() = default;
    explicit Param(Shape shape, T fill = T(0)) : value(shape, fill), grad(shape) {}

    std::size_t size() const noexcept { return value.size(); }
    void zero_grad() { grad.zero(); }

    // U(-1/sqrt(fan_in), +1/sqrt(fan_in))
    void init_uniform(Rng& rng, std::size_t fan_in) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        for (auto& v : value.values()) v = static_cast<T>(rng.uniform(-bound, bound));
    }
};

inline std::string join_name(const std::string& prefix, const std::string& name) {
    return prefix.empty() ? name : prefix + "." + name;
}

} // namespace bokeh::nn

#endif // BOKEH_NN_PARAM_HPP
