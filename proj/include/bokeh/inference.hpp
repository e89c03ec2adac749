#ifndef BOKEH_INFERENCE_HPP
#define BOKEH_INFERENCE_HPP

#include <algorithm>
#include <vector>

#include "bokeh/data.hpp"
#include "bokeh/image_io.hpp"
#include "bokeh/lem.hpp"
#include "bokeh/network.hpp"

namespace bokeh {

struct TilingPolicy {
    bool enabled = true;
    std::size_t tile = 768;
    std::size_t overlap = 64;

    void validate() const {
        if (!enabled) return;
        if (tile == 0 || tile % kSpatialMultiple)
            throw ValidationError("tile size must be a positive multiple of " + std::to_string(kSpatialMultiple) + ", got " +
                                  std::to_string(tile));
        if (overlap * 2 >= tile)
            throw ValidationError("tile overlap " + std::to_string(overlap) + " must be less than half the tile size " +
                                  std::to_string(tile));
    }
};

namespace detail {

// Reflect-pads bottom and right edges up to the next multiple of `m`.
template <typename T>
Tensor<T> pad_to_multiple(const Image& img, std::size_t m) {
    const std::size_t h = img.height(), w = img.width();
    const std::size_t ph = (h + m - 1) / m * m, pw = (w + m - 1) / m * m;
    Tensor<T> out = Tensor<T>::chw(img.channels(), ph, pw);
    for (std::size_t c = 0; c < img.channels(); ++c)
        for (std::size_t y = 0; y < ph; ++y) {
            const auto sy = static_cast<std::size_t>(reflect_index(static_cast<int>(y), static_cast<int>(h)));
            for (std::size_t x = 0; x < pw; ++x)
                out(c, y, x) = static_cast<T>(img(c, sy, static_cast<std::size_t>(reflect_index(static_cast<int>(x), static_cast<int>(w)))));
        }
    return out;
}

// Tile origins covering [0, length); the last tile is flush with the end.
inline std::vector<std::size_t> tile_starts(std::size_t length, std::size_t tile, std::size_t overlap) {
    if (tile >= length) return {0};
    std::vector<std::size_t> s;
    for (std::size_t a = 0;; a += tile - overlap) {
        if (a + tile >= length) {
            s.push_back(length - tile);
            break;
        }
        s.push_back(a);
    }
    return s;
}

// Linear ramp of width `overlap` on sides that border another tile.
inline std::vector<double> tile_ramp(std::size_t start, std::size_t tile, std::size_t length, std::size_t overlap) {
    std::vector<double> w(tile, 1.0);
    const double span = static_cast<double>(overlap + 1);
    for (std::size_t i = 0; i < tile; ++i) {
        if (start > 0) w[i] = std::min(w[i], static_cast<double>(i + 1) / span);
        if (start + tile < length) w[i] = std::min(w[i], static_cast<double>(tile - i) / span);
    }
    return w;
}

} // namespace detail

// Runs the model on an arbitrary-size image: metadata is validated first,
// the input is reflect-padded to a multiple of 8, optionally processed in
// overlapping tiles blended with linear ramps, cropped back and clamped to
// [0, 1].
template <typename T>
Image infer(const BokehModel<T>& model, const Image& source, const MetaTuple& meta, const TilingPolicy& policy = {}) {
    validate_meta(meta);
    const std::vector<double> scalars = lens_scalars(meta, model.registry());
    policy.validate();
    if (source.rank() != 3 || source.channels() != model.config().image_channels || source.height() == 0 ||
        source.width() == 0)
        throw DimensionError("inference expects a " + std::to_string(model.config().image_channels) +
                             "-channel image, got " + shape_string(source.shape()));

    const Tensor<T> padded = detail::pad_to_multiple<T>(source, kSpatialMultiple);
    const std::size_t ph = padded.height(), pw = padded.width(), ch = padded.channels();
    Tensor<T> result;
    if (!policy.enabled || (ph <= policy.tile && pw <= policy.tile)) {
        result = model.forward(padded, scalars, nullptr);
    } else {
        const std::size_t th = std::min(policy.tile, ph), tw = std::min(policy.tile, pw);
        Tensor<double> acc = Tensor<double>::chw(ch, ph, pw);
        std::vector<double> wsum(ph * pw, 0.0);
        for (std::size_t y0 : detail::tile_starts(ph, th, policy.overlap)) {
            const auto wy = detail::tile_ramp(y0, th, ph, policy.overlap);
            for (std::size_t x0 : detail::tile_starts(pw, tw, policy.overlap)) {
                const auto wx = detail::tile_ramp(x0, tw, pw, policy.overlap);
                Tensor<T> tile = Tensor<T>::chw(ch, th, tw);
                for (std::size_t c = 0; c < ch; ++c)
                    for (std::size_t y = 0; y < th; ++y)
                        std::copy_n(&padded(c, y0 + y, x0), tw, &tile(c, y, 0));
                const Tensor<T> out = model.forward(tile, scalars, nullptr);
                for (std::size_t y = 0; y < th; ++y)
                    for (std::size_t x = 0; x < tw; ++x) {
                        const double w = wy[y] * wx[x];
                        wsum[(y0 + y) * pw + x0 + x] += w;
                        for (std::size_t c = 0; c < ch; ++c) acc(c, y0 + y, x0 + x) += w * static_cast<double>(out(c, y, x));
                    }
            }
        }
        result = Tensor<T>::chw(ch, ph, pw);
        for (std::size_t c = 0; c < ch; ++c)
            for (std::size_t i = 0; i < ph * pw; ++i) result.channel(c)[i] = static_cast<T>(acc.channel(c)[i] / wsum[i]);
    }

    Image out = Image::chw(ch, source.height(), source.width());
    for (std::size_t c = 0; c < ch; ++c)
        for (std::size_t y = 0; y < source.height(); ++y)
            for (std::size_t x = 0; x < source.width(); ++x)
                out(c, y, x) = std::clamp(static_cast<float>(result(c, y, x)), 0.0f, 1.0f);
    return out;
}

} // namespace bokeh

#endif // BOKEH_INFERENCE_HPP
