#ifndef BOKEH_TENSOR_HPP
#define BOKEH_TENSOR_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <new>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "bokeh/error.hpp"

namespace bokeh {

using Shape = std::vector<std::size_t>;

// Cache-line aligned storage. Vectorised reductions peel a scalar head up to
// the first aligned element, so the summation order (and the low bits of every
// result) would otherwise depend on where the allocator placed the buffer.
template <typename T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::align_val_t alignment{64};

    AlignedAllocator() noexcept = default;
    template <typename U>
    AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

    T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), alignment)); }
    void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, alignment); }

    template <typename U>
    bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

template <typename T>
using AlignedVector = std::vector<T, AlignedAllocator<T>>;

inline std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    return os.str();
}

inline std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

// Dense row-major tensor. Feature maps are rank 3 (C x H x W); vectors and
// affine weights use rank 1 and 2.
template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;
    explicit Tensor(Shape shape, T fill = T(0)) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}
    Tensor(std::initializer_list<std::size_t> shape, T fill = T(0)) : Tensor(Shape(shape), fill) {}
    Tensor(Shape shape, const std::vector<T>& values) : Tensor(std::move(shape), AlignedVector<T>(values.begin(), values.end())) {}
    Tensor(Shape shape, AlignedVector<T> values) : shape_(std::move(shape)), data_(std::move(values)) {
        if (data_.size() != shape_numel(shape_))
            throw DimensionError("tensor of shape " + shape_string(shape_) + " given " +
                                 std::to_string(data_.size()) + " values");
    }

    static Tensor chw(std::size_t c, std::size_t h, std::size_t w, T fill = T(0)) { return Tensor(Shape{c, h, w}, fill); }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    // Rank-3 accessors.
    std::size_t channels() const { return shape_.at(0); }
    std::size_t height() const { return shape_.at(1); }
    std::size_t width() const { return shape_.at(2); }
    std::size_t plane() const { return shape_.at(1) * shape_.at(2); }

    T* data() noexcept { return data_.data(); }
    const T* data() const noexcept { return data_.data(); }
    std::span<T> span() noexcept { return data_; }
    std::span<const T> span() const noexcept { return data_; }
    AlignedVector<T>& values() noexcept { return data_; }
    const AlignedVector<T>& values() const noexcept { return data_; }

    T* channel(std::size_t c) { return data_.data() + c * plane(); }
    const T* channel(std::size_t c) const { return data_.data() + c * plane(); }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }
    T& operator()(std::size_t c, std::size_t y, std::size_t x) { return data_[(c * shape_[1] + y) * shape_[2] + x]; }
    const T& operator()(std::size_t c, std::size_t y, std::size_t x) const {
        return data_[(c * shape_[1] + y) * shape_[2] + x];
    }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }
    void zero() { fill(T(0)); }

    Tensor& operator+=(const Tensor& o) {
        require_same_shape(o, "+=");
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
        return *this;
    }
    Tensor& operator-=(const Tensor& o) {
        require_same_shape(o, "-=");
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
        return *this;
    }
    Tensor& operator*=(T s) {
        for (auto& v : data_) v *= s;
        return *this;
    }
    friend Tensor operator+(Tensor a, const Tensor& b) { return a += b; }
    friend Tensor operator-(Tensor a, const Tensor& b) { return a -= b; }

    bool operator==(const Tensor& o) const = default;

    template <typename U>
    Tensor<U> cast() const {
        AlignedVector<U> out(data_.size());
        std::transform(data_.begin(), data_.end(), out.begin(), [](T v) { return static_cast<U>(v); });
        return Tensor<U>(shape_, std::move(out));
    }

    Tensor reshaped(Shape shape) const& {
        Tensor t = *this;
        t.reshape(std::move(shape));
        return t;
    }
    void reshape(Shape shape) {
        if (shape_numel(shape) != data_.size())
            throw DimensionError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
        shape_ = std::move(shape);
    }

    bool all_finite() const {
        return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
    }

    void require_same_shape(const Tensor& o, const char* op) const {
        if (shape_ != o.shape_)
            throw DimensionError(std::string("shape mismatch in ") + op + ": " + shape_string(shape_) + " vs " +
                                 shape_string(o.shape_));
    }

private:
    Shape shape_;
    AlignedVector<T> data_;
};

template <typename T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
    a.require_same_shape(b, "max_abs_diff");
    T m = 0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

// Channel concatenation of two C x H x W maps with equal spatial extent.
template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.height() != b.height() || a.width() != b.width())
        throw DimensionError("concat of " + shape_string(a.shape()) + " and " + shape_string(b.shape()));
    Tensor<T> out = Tensor<T>::chw(a.channels() + b.channels(), a.height(), a.width());
    std::copy(a.values().begin(), a.values().end(), out.data());
    std::copy(b.values().begin(), b.values().end(), out.data() + a.size());
    return out;
}

// Inverse of concat_channels: first `c` channels and the rest.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>& x, std::size_t c) {
    const std::size_t p = x.plane();
    Tensor<T> a = Tensor<T>::chw(c, x.height(), x.width());
    Tensor<T> b = Tensor<T>::chw(x.channels() - c, x.height(), x.width());
    std::copy(x.data(), x.data() + c * p, a.data());
    std::copy(x.data() + c * p, x.data() + x.size(), b.data());
    return {std::move(a), std::move(b)};
}

} // namespace bokeh

#endif // BOKEH_TENSOR_HPP
