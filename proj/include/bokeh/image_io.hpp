#ifndef BOKEH_IMAGE_IO_HPP
#define BOKEH_IMAGE_IO_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include <png.h>

#include "bokeh/tensor.hpp"

namespace bokeh {

using Image = Tensor<float>;

inline std::uint8_t quantize_unit(float v) {
    const float c = std::clamp(v, 0.0f, 1.0f);
    return static_cast<std::uint8_t>(std::lround(c * 255.0f));
}

// Reads an 8-bit PNG as `channels` planes (3 = RGB, 1 = grey) scaled to k/255.
inline Image read_png(const std::filesystem::path& path, std::size_t channels = 3) {
    png_image img;
    std::memset(&img, 0, sizeof img);
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&img, path.c_str()))
        throw IoError("cannot read PNG " + path.string() + ": " + img.message);
    img.format = channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
    std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(img));
    if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
        png_image_free(&img);
        throw IoError("cannot decode PNG " + path.string() + ": " + img.message);
    }
    const std::size_t h = img.height, w = img.width;
    Image out = Image::chw(channels, h, w);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
            for (std::size_t c = 0; c < channels; ++c)
                out(c, y, x) = static_cast<float>(buf[(y * w + x) * channels + c]) / 255.0f;
    return out;
}

// Writes a 1- or 3-channel unit-range image as 8-bit PNG (values clamped).
inline void write_png(const std::filesystem::path& path, const Image& image) {
    const std::size_t c = image.channels(), h = image.height(), w = image.width();
    if (c != 1 && c != 3) throw DimensionError("PNG output needs 1 or 3 channels, got " + shape_string(image.shape()));
    std::vector<std::uint8_t> buf(c * h * w);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
            for (std::size_t k = 0; k < c; ++k) buf[(y * w + x) * c + k] = quantize_unit(image(k, y, x));
    png_image img;
    std::memset(&img, 0, sizeof img);
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(w);
    img.height = static_cast<png_uint_32>(h);
    img.format = c == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
    if (!png_image_write_to_file(&img, path.c_str(), 0, buf.data(), 0, nullptr))
        throw IoError("cannot write PNG " + path.string() + ": " + img.message);
}

// Rounds every value to the nearest k/255 level.
inline Image quantize_8bit(Image image) {
    for (auto& v : image.values()) v = static_cast<float>(quantize_unit(v)) / 255.0f;
    return image;
}

} // namespace bokeh

#endif // BOKEH_IMAGE_IO_HPP
