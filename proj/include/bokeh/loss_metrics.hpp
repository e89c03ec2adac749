#ifndef BOKEH_LOSS_METRICS_HPP
#define BOKEH_LOSS_METRICS_HPP

#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "bokeh/tensor.hpp"

namespace bokeh {

// Mean |pred - gt| over every element.
template <typename T>
double l1_loss(const Tensor<T>& pred, const Tensor<T>& gt) {
    pred.require_same_shape(gt, "l1_loss");
    double s = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) s += std::abs(static_cast<double>(pred[i]) - static_cast<double>(gt[i]));
    return s / static_cast<double>(pred.size());
}

template <typename T>
Tensor<T> l1_loss_grad(const Tensor<T>& pred, const Tensor<T>& gt) {
    pred.require_same_shape(gt, "l1_loss_grad");
    Tensor<T> g(pred.shape());
    const T inv = T(1) / static_cast<T>(pred.size());
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const T d = pred[i] - gt[i];
        g[i] = d > 0 ? inv : (d < 0 ? -inv : T(0));
    }
    return g;
}

namespace detail {

template <typename T, typename U>
void check_alpha(const Tensor<T>& pred, const Tensor<T>& gt, const Tensor<U>& alpha) {
    pred.require_same_shape(gt, "alpha_masked_loss");
    if (pred.rank() != 3) throw DimensionError("alpha-masked loss expects C x H x W images, got " + shape_string(pred.shape()));
    if (alpha.size() != pred.plane() || (alpha.rank() == 3 && alpha.channels() != 1))
        throw DimensionError("alpha mask of shape " + shape_string(alpha.shape()) + " does not match image " +
                             shape_string(pred.shape()));
    for (std::size_t i = 0; i < alpha.size(); ++i)
        if (!(alpha[i] >= U(0) && alpha[i] <= U(1)))
            throw ValidationError("alpha mask value " + std::to_string(static_cast<double>(alpha[i])) + " at index " +
                                  std::to_string(i) + " is outside [0, 1]");
}

} // namespace detail

// (1/N) * sum_i |pred_i - gt_i| * (1 - alpha_i); alpha (1 x H x W) is shared by
// every colour channel and N counts all C*H*W elements.
template <typename T, typename U>
double alpha_masked_loss(const Tensor<T>& pred, const Tensor<T>& gt, const Tensor<U>& alpha) {
    detail::check_alpha(pred, gt, alpha);
    const std::size_t p = pred.plane();
    double s = 0;
    for (std::size_t c = 0; c < pred.channels(); ++c) {
        const T* a = pred.channel(c);
        const T* b = gt.channel(c);
        for (std::size_t i = 0; i < p; ++i)
            s += std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])) * (1.0 - static_cast<double>(alpha[i]));
    }
    return s / static_cast<double>(pred.size());
}

// sign(pred - gt) * (1 - alpha) / N, zero at ties.
template <typename T, typename U>
Tensor<T> alpha_masked_loss_grad(const Tensor<T>& pred, const Tensor<T>& gt, const Tensor<U>& alpha) {
    detail::check_alpha(pred, gt, alpha);
    Tensor<T> g(pred.shape());
    const std::size_t p = pred.plane();
    const T inv = T(1) / static_cast<T>(pred.size());
    for (std::size_t c = 0; c < pred.channels(); ++c)
        for (std::size_t i = 0; i < p; ++i) {
            const std::size_t k = c * p + i;
            const T d = pred[k] - gt[k];
            const T w = (T(1) - static_cast<T>(alpha[i])) * inv;
            g[k] = d > 0 ? w : (d < 0 ? -w : T(0));
        }
    return g;
}

template <typename T>
double mse(const Tensor<T>& a, const Tensor<T>& b) {
    a.require_same_shape(b, "mse");
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
        s += d * d;
    }
    return s / static_cast<double>(a.size());
}

// Returned for identical images.
inline constexpr double kPsnrInfinite = std::numeric_limits<double>::infinity();

// 10 log10(1 / MSE) for unit-range images.
template <typename T>
double psnr(const Tensor<T>& pred, const Tensor<T>& gt) {
    const double m = mse(pred, gt);
    if (m == 0) return kPsnrInfinite;
    return 10.0 * std::log10(1.0 / m);
}

struct SsimOptions {
    int window = 11;
    double sigma = 1.5;
    double k1 = 0.01;
    double k2 = 0.03;
    double data_range = 1.0;
};

inline std::vector<double> gaussian_window(int size, double sigma) {
    std::vector<double> g(static_cast<std::size_t>(size));
    const double c = (size - 1) / 2.0;
    double sum = 0;
    for (int i = 0; i < size; ++i) sum += g[static_cast<std::size_t>(i)] = std::exp(-(i - c) * (i - c) / (2 * sigma * sigma));
    for (auto& v : g) v /= sum;
    return g;
}

// Mean local SSIM over all window positions fully inside the image (no
// padding), averaged over channels.
template <typename T>
double ssim(const Tensor<T>& a, const Tensor<T>& b, const SsimOptions& opt = {}) {
    a.require_same_shape(b, "ssim");
    if (a.rank() != 3) throw DimensionError("ssim expects C x H x W images, got " + shape_string(a.shape()));
    const int h = static_cast<int>(a.height()), w = static_cast<int>(a.width()), win = opt.window;
    if (h < win || w < win)
        throw ValidationError("image " + shape_string(a.shape()) + " is smaller than the " + std::to_string(win) + "x" +
                              std::to_string(win) + " ssim window");
    const auto g = gaussian_window(win, opt.sigma);
    const double c1 = std::pow(opt.k1 * opt.data_range, 2), c2 = std::pow(opt.k2 * opt.data_range, 2);
    const int oh = h - win + 1, ow = w - win + 1;

    // Horizontal pass into five moment planes, then vertical pass.
    std::vector<double> hx(static_cast<std::size_t>(h * ow) * 5);
    double total = 0;
    for (std::size_t c = 0; c < a.channels(); ++c) {
        const T* pa = a.channel(c);
        const T* pb = b.channel(c);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < ow; ++x) {
                double m[5] = {0, 0, 0, 0, 0};
                for (int k = 0; k < win; ++k) {
                    const double u = pa[y * w + x + k], v = pb[y * w + x + k], gk = g[static_cast<std::size_t>(k)];
                    m[0] += gk * u;
                    m[1] += gk * v;
                    m[2] += gk * u * u;
                    m[3] += gk * v * v;
                    m[4] += gk * u * v;
                }
                for (int j = 0; j < 5; ++j) hx[(static_cast<std::size_t>(y * ow + x)) * 5 + static_cast<std::size_t>(j)] = m[j];
            }
        double sum = 0;
        for (int y = 0; y < oh; ++y)
            for (int x = 0; x < ow; ++x) {
                double m[5] = {0, 0, 0, 0, 0};
                for (int k = 0; k < win; ++k) {
                    const double gk = g[static_cast<std::size_t>(k)];
                    const double* src = &hx[(static_cast<std::size_t>((y + k) * ow + x)) * 5];
                    for (int j = 0; j < 5; ++j) m[j] += gk * src[j];
                }
                const double mu1 = m[0], mu2 = m[1];
                const double s1 = m[2] - mu1 * mu1, s2 = m[3] - mu2 * mu2, s12 = m[4] - mu1 * mu2;
                sum += ((2 * mu1 * mu2 + c1) * (2 * s12 + c2)) / ((mu1 * mu1 + mu2 * mu2 + c1) * (s1 + s2 + c2));
            }
        total += sum / (static_cast<double>(oh) * ow);
    }
    return total / static_cast<double>(a.channels());
}

// Optional external perceptual scorer (e.g. a learned patch similarity). The
// library ships none; callers may plug one in.
using PerceptualScorer = std::function<double(const Tensor<float>& pred, const Tensor<float>& gt)>;

struct MetricReport {
    double psnr_db = 0;
    double ssim = 0;
    std::size_t count = 0;
    // Images whose PSNR was infinite (identical pair); excluded from psnr_db.
    std::size_t infinite_psnr = 0;
    std::optional<double> perceptual;
};

// Arithmetic means; infinite PSNR values are left out of the PSNR mean and
// counted separately. All-infinite input yields an infinite mean.
class MetricAccumulator {
public:
    void add(double psnr_db, double ssim_value, std::optional<double> perceptual = std::nullopt) {
        ++count_;
        ssim_sum_ += ssim_value;
        if (std::isinf(psnr_db))
            ++infinite_;
        else
            psnr_sum_ += psnr_db;
        if (perceptual) {
            perceptual_sum_ += *perceptual;
            ++perceptual_count_;
        }
    }

    MetricReport report() const {
        MetricReport r;
        r.count = count_;
        r.infinite_psnr = infinite_;
        if (count_ == 0) return r;
        const std::size_t finite = count_ - infinite_;
        r.psnr_db = finite ? psnr_sum_ / static_cast<double>(finite) : kPsnrInfinite;
        r.ssim = ssim_sum_ / static_cast<double>(count_);
        if (perceptual_count_) r.perceptual = perceptual_sum_ / static_cast<double>(perceptual_count_);
        return r;
    }

private:
    std::size_t count_ = 0, infinite_ = 0, perceptual_count_ = 0;
    double psnr_sum_ = 0, ssim_sum_ = 0, perceptual_sum_ = 0;
};

} // namespace bokeh

#endif // BOKEH_LOSS_METRICS_HPP
