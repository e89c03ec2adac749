#ifndef BOKEH_DATA_HPP
#define BOKEH_DATA_HPP

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <string>
#include <vector>

#include "bokeh/image_io.hpp"
#include "bokeh/lens_meta.hpp"
#include "bokeh/rng.hpp"

namespace bokeh {

namespace fs = std::filesystem;

struct TrainingPair {
    Image source;
    Image target;
    Image alpha;  // 1 x H x W
    MetaTuple meta;
};

inline void validate_pair(const TrainingPair& p) {
    if (p.source.rank() != 3 || p.source.shape() != p.target.shape() || p.alpha.rank() != 3 || p.alpha.channels() != 1 ||
        p.alpha.height() != p.source.height() || p.alpha.width() != p.source.width())
        throw DimensionError("record " + p.meta.id + ": source " + shape_string(p.source.shape()) + ", target " +
                             shape_string(p.target.shape()) + " and alpha " + shape_string(p.alpha.shape()) +
                             " do not share a spatial extent");
}

// One dataset record; the three images are decoded on demand.
struct PairDescriptor {
    MetaTuple meta;
    fs::path source, target, alpha;

    TrainingPair load() const {
        TrainingPair p{read_png(source, 3), read_png(target, 3), read_png(alpha, 1), meta};
        validate_pair(p);
        return p;
    }
};

class DatasetError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

inline std::size_t count_png(const fs::path& dir) {
    std::size_t n = 0;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".png") ++n;
    return n;
}

// Layout: <root>/meta.txt, <root>/{source,target,alpha}/<id>.png
inline std::vector<PairDescriptor> load_dataset(const fs::path& root, const BrandRegistry& registry = {}) {
    if (!fs::is_directory(root)) throw DatasetError("dataset root " + root.string() + " is not a directory");
    for (const char* sub : {"source", "target", "alpha"})
        if (!fs::is_directory(root / sub)) throw DatasetError("dataset " + root.string() + " has no '" + sub + "/' directory");
    if (!fs::is_regular_file(root / "meta.txt")) throw DatasetError("dataset " + root.string() + " has no meta.txt");

    const auto metas = read_meta_file(root / "meta.txt", registry);
    std::vector<PairDescriptor> out;
    out.reserve(metas.size());
    std::map<std::string, int> seen;
    for (const auto& m : metas) {
        if (seen[m.id]++) throw DatasetError("duplicate record id " + m.id + " in " + (root / "meta.txt").string());
        PairDescriptor d{m, root / "source" / (m.id + ".png"), root / "target" / (m.id + ".png"),
                         root / "alpha" / (m.id + ".png")};
        for (const auto* p : {&d.source, &d.target, &d.alpha})
            if (!fs::is_regular_file(*p)) throw DatasetError("record " + m.id + ": missing file " + p->string());
        out.push_back(std::move(d));
    }
    for (const char* sub : {"source", "target", "alpha"}) {
        const std::size_t n = count_png(root / sub);
        if (n != metas.size())
            throw DatasetError("dataset " + root.string() + ": meta.txt lists " + std::to_string(metas.size()) +
                               " records but " + sub + "/ holds " + std::to_string(n) + " images");
    }
    return out;
}

inline std::vector<TrainingPair> load_all(const std::vector<PairDescriptor>& descriptors) {
    std::vector<TrainingPair> out;
    out.reserve(descriptors.size());
    for (const auto& d : descriptors) out.push_back(d.load());
    return out;
}

inline Image crop(const Image& img, std::size_t y0, std::size_t x0, std::size_t h, std::size_t w) {
    Image out = Image::chw(img.channels(), h, w);
    for (std::size_t c = 0; c < img.channels(); ++c)
        for (std::size_t y = 0; y < h; ++y)
            std::copy_n(&img(c, y0 + y, x0), w, &out(c, y, 0));
    return out;
}

// Same size x size window, at a random offset, from source, target and alpha.
inline TrainingPair paired_random_crop(const TrainingPair& pair, std::size_t size, Rng& rng) {
    validate_pair(pair);
    const std::size_t h = pair.source.height(), w = pair.source.width();
    if (size == 0 || size > std::min(h, w))
        throw ValidationError("crop size " + std::to_string(size) + " does not fit record " + pair.meta.id + " of size " +
                              std::to_string(h) + "x" + std::to_string(w));
    const auto y0 = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(h - size)));
    const auto x0 = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(w - size)));
    return TrainingPair{crop(pair.source, y0, x0, size, size), crop(pair.target, y0, x0, size, size),
                        crop(pair.alpha, y0, x0, size, size), pair.meta};
}

// ---- defocus kernels ---------------------------------------------------------

inline int reflect_index(int i, int n) {
    if (n == 1) return 0;
    while (i < 0 || i >= n) i = i < 0 ? -i : 2 * (n - 1) - i;
    return i;
}

// Separable Gaussian, reflect border; sigma <= 0 returns the input.
inline Image gaussian_blur(const Image& img, double sigma) {
    if (sigma <= 0) return img;
    const int rad = std::max(1, static_cast<int>(std::ceil(3 * sigma)));
    std::vector<double> k(static_cast<std::size_t>(2 * rad + 1));
    double sum = 0;
    for (int i = -rad; i <= rad; ++i) sum += k[static_cast<std::size_t>(i + rad)] = std::exp(-i * i / (2 * sigma * sigma));
    for (auto& v : k) v /= sum;
    const int h = static_cast<int>(img.height()), w = static_cast<int>(img.width());
    Image tmp = Image::chw(img.channels(), img.height(), img.width()), out = tmp;
    for (std::size_t c = 0; c < img.channels(); ++c) {
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double s = 0;
                for (int i = -rad; i <= rad; ++i)
                    s += k[static_cast<std::size_t>(i + rad)] * img(c, static_cast<std::size_t>(y), static_cast<std::size_t>(reflect_index(x + i, w)));
                tmp(c, static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = static_cast<float>(s);
            }
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double s = 0;
                for (int i = -rad; i <= rad; ++i)
                    s += k[static_cast<std::size_t>(i + rad)] * tmp(c, static_cast<std::size_t>(reflect_index(y + i, h)), static_cast<std::size_t>(x));
                out(c, static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = static_cast<float>(s);
            }
    }
    return out;
}

// Uniform disk of the given radius with a one-pixel anti-aliased rim.
inline Image disk_blur(const Image& img, double radius) {
    if (radius <= 0) return img;
    const int rad = static_cast<int>(std::ceil(radius + 0.5));
    std::vector<double> k;
    std::vector<std::pair<int, int>> offs;
    double sum = 0;
    for (int dy = -rad; dy <= rad; ++dy)
        for (int dx = -rad; dx <= rad; ++dx) {
            const double wgt = std::clamp(radius + 0.5 - std::hypot(dy, dx), 0.0, 1.0);
            if (wgt <= 0) continue;
            k.push_back(wgt);
            offs.emplace_back(dy, dx);
            sum += wgt;
        }
    for (auto& v : k) v /= sum;
    const int h = static_cast<int>(img.height()), w = static_cast<int>(img.width());
    Image out = Image::chw(img.channels(), img.height(), img.width());
    for (std::size_t c = 0; c < img.channels(); ++c)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double s = 0;
                for (std::size_t i = 0; i < k.size(); ++i)
                    s += k[i] * img(c, static_cast<std::size_t>(reflect_index(y + offs[i].first, h)),
                                    static_cast<std::size_t>(reflect_index(x + offs[i].second, w)));
                out(c, static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = static_cast<float>(s);
            }
    return out;
}

// ---- synthetic depth-of-field pairs -----------------------------------------

struct SynthConfig {
    std::size_t height = 128;
    std::size_t width = 128;
    std::size_t num_pairs = 8;
    std::uint64_t seed = 7;
    double focal_length_mm = 50.0;
    std::vector<double> f_numbers{1.4, 1.8, 16.0};
    std::vector<std::string> brands{"Sony", "Canon"};
    std::vector<double> disparities{0, 1, 2, 3, 4};
    // radius = max_radius * (D / D_max) * (1 + disparity_gain * disparity),
    // D = focal / f_number, D_max from the widest aperture.
    double max_radius = 8.0;
    double disparity_gain = 0.25;
    int min_foreground = 1;
    int max_foreground = 3;
    int background_waves = 8;
    double noise_amplitude = 0.02;

    void validate() const {
        if (num_pairs == 0) throw ValidationError("number of pairs must be positive");
        if (height < 16 || width < 16) throw ValidationError("synthetic images must be at least 16x16");
        if (f_numbers.empty() || brands.size() < 2 || disparities.empty())
            throw ValidationError("synthetic generator needs f-numbers, two or more brands and disparities");
        if (min_foreground < 1 || max_foreground < min_foreground) throw ValidationError("bad foreground count range");
    }
};

// Blur radius in pixels for one side of a pair.
inline double defocus_radius(const SynthConfig& cfg, double f_number, double disparity) {
    const double widest = *std::min_element(cfg.f_numbers.begin(), cfg.f_numbers.end());
    const double d = cfg.focal_length_mm / f_number, d_max = cfg.focal_length_mm / widest;
    return cfg.max_radius * (d / d_max) * (1.0 + cfg.disparity_gain * disparity);
}

// Sony renders Gaussian bokeh (sigma = radius / 2); every other brand a disk.
inline Image render_defocus(const Image& background, const std::string& brand, double radius) {
    if (brand == "Sony") return gaussian_blur(background, radius / 2.0);
    return disk_blur(background, radius);
}

namespace detail {

inline Image synth_background(const SynthConfig& cfg, Rng& rng) {
    Image bg = Image::chw(3, cfg.height, cfg.width);
    double base[3];
    for (auto& b : base) b = rng.uniform(0.25, 0.75);
    struct Wave {
        double fx, fy, phase, amp, gain[3];
    };
    std::vector<Wave> waves(static_cast<std::size_t>(cfg.background_waves));
    for (auto& wv : waves) {
        const double f = rng.uniform(0.02, 0.25), theta = rng.uniform(0, std::numbers::pi);
        wv.fx = f * std::cos(theta);
        wv.fy = f * std::sin(theta);
        wv.phase = rng.uniform(0, 2 * std::numbers::pi);
        wv.amp = rng.uniform(0.03, 0.10);
        for (auto& g : wv.gain) g = rng.uniform(0.5, 1.5);
    }
    for (std::size_t y = 0; y < cfg.height; ++y)
        for (std::size_t x = 0; x < cfg.width; ++x) {
            double v[3] = {base[0], base[1], base[2]};
            for (const auto& wv : waves) {
                const double s = wv.amp * std::sin(2 * std::numbers::pi * (wv.fx * x + wv.fy * y) + wv.phase);
                for (int c = 0; c < 3; ++c) v[c] += wv.gain[c] * s;
            }
            for (int c = 0; c < 3; ++c) {
                const double n = rng.uniform(-cfg.noise_amplitude, cfg.noise_amplitude);
                bg(static_cast<std::size_t>(c), y, x) = static_cast<float>(std::clamp(v[c] + n, 0.0, 1.0));
            }
        }
    return bg;
}

// Premultiplied foreground colour and coverage from 1..3 supersampled shapes
// (ellipses and star polygons) with linear colour gradients.
inline void synth_foreground(const SynthConfig& cfg, Rng& rng, Image& premul, Image& cover) {
    const double h = static_cast<double>(cfg.height), w = static_cast<double>(cfg.width);
    premul = Image::chw(3, cfg.height, cfg.width);
    cover = Image::chw(1, cfg.height, cfg.width);
    const auto shapes = rng.uniform_int(cfg.min_foreground, cfg.max_foreground);
    constexpr int ss = 4;
    for (std::int64_t s = 0; s < shapes; ++s) {
        const bool ellipse = rng.uniform() < 0.5;
        const double cx = rng.uniform(0.2, 0.8) * w, cy = rng.uniform(0.2, 0.8) * h;
        const double scale = std::min(h, w);
        const double ra = rng.uniform(0.08, 0.22) * scale, rb = rng.uniform(0.08, 0.22) * scale;
        const double rot = rng.uniform(0, std::numbers::pi);
        const int vertices = static_cast<int>(rng.uniform_int(5, 9));
        std::vector<double> radii(static_cast<std::size_t>(vertices));
        for (auto& r : radii) r = rng.uniform(0.6, 1.0) * ra;
        double col[3], grad[3];
        for (int c = 0; c < 3; ++c) {
            col[c] = rng.uniform(0.1, 0.9);
            grad[c] = rng.uniform(-0.3, 0.3);
        }
        const double cr = std::cos(rot), sr = std::sin(rot);
        auto inside = [&](double px, double py) {
            const double dx = px - cx, dy = py - cy;
            const double u = cr * dx + sr * dy, v = -sr * dx + cr * dy;
            if (ellipse) return (u * u) / (ra * ra) + (v * v) / (rb * rb) <= 1.0;
            // Star polygon: compare radius with the edge between adjacent vertices.
            double ang = std::atan2(v, u);
            if (ang < 0) ang += 2 * std::numbers::pi;
            const double step = 2 * std::numbers::pi / vertices;
            const int i = std::min(vertices - 1, static_cast<int>(ang / step));
            const double t = (ang - i * step) / step;
            const double r = radii[static_cast<std::size_t>(i)] * (1 - t) + radii[static_cast<std::size_t>((i + 1) % vertices)] * t;
            return std::hypot(u, v) <= r;
        };
        for (std::size_t y = 0; y < cfg.height; ++y)
            for (std::size_t x = 0; x < cfg.width; ++x) {
                int hits = 0;
                for (int sy = 0; sy < ss; ++sy)
                    for (int sx = 0; sx < ss; ++sx)
                        hits += inside(static_cast<double>(x) + (sx + 0.5) / ss, static_cast<double>(y) + (sy + 0.5) / ss);
                if (!hits) continue;
                const double a = static_cast<double>(hits) / (ss * ss);
                const double rel = ((static_cast<double>(x) - cx) + (static_cast<double>(y) - cy)) / scale;
                for (std::size_t c = 0; c < 3; ++c) {
                    const double colour = std::clamp(col[c] + grad[c] * rel, 0.0, 1.0);
                    premul(c, y, x) = static_cast<float>(colour * a + premul(c, y, x) * (1 - a));
                }
                cover(0, y, x) = static_cast<float>(a + cover(0, y, x) * (1 - a));
            }
    }
}

struct LensChoice {
    std::string brand;
    double f_number;
};

} // namespace detail

// composite = foreground + (1 - alpha) * defocus(background). Alpha is
// quantised to 8 bits before compositing so that pixels stored as fully
// opaque are bit-identical in source and target.
inline Image composite(const Image& premul, const Image& alpha, const Image& background) {
    Image out = Image::chw(3, alpha.height(), alpha.width());
    const std::size_t p = alpha.plane();
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < p; ++i)
            out[c * p + i] = premul[c * p + i] + (1.0f - alpha[i]) * background[c * p + i];
    return out;
}

struct SynthSummary {
    std::size_t pairs = 0;
    std::map<std::pair<std::string, std::string>, std::size_t> transformations;
};

inline std::string synth_config_text(const SynthConfig& c) {
    auto list = [](const auto& v) {
        std::string s;
        for (std::size_t i = 0; i < v.size(); ++i) {
            if (i) s += ",";
            if constexpr (std::is_same_v<std::decay_t<decltype(v[i])>, std::string>)
                s += v[i];
            else
                s += format_real(v[i]);
        }
        return s;
    };
    std::string t;
    t += "height = " + std::to_string(c.height) + "\n";
    t += "width = " + std::to_string(c.width) + "\n";
    t += "num_pairs = " + std::to_string(c.num_pairs) + "\n";
    t += "seed = " + std::to_string(c.seed) + "\n";
    t += "focal_length_mm = " + format_real(c.focal_length_mm) + "\n";
    t += "f_numbers = " + list(c.f_numbers) + "\n";
    t += "brands = " + list(c.brands) + "\n";
    t += "disparities = " + list(c.disparities) + "\n";
    t += "max_radius = " + format_real(c.max_radius) + "\n";
    t += "disparity_gain = " + format_real(c.disparity_gain) + "\n";
    t += "foreground_count = " + std::to_string(c.min_foreground) + ".." + std::to_string(c.max_foreground) + "\n";
    t += "background_waves = " + std::to_string(c.background_waves) + "\n";
    t += "noise_amplitude = " + format_real(c.noise_amplitude) + "\n";
    return t;
}

inline std::string record_id(std::size_t i) {
    std::string s = std::to_string(i);
    return std::string(s.size() < 5 ? 5 - s.size() : 0, '0') + s;
}

// Renders one pair in memory. Source and target lenses are drawn unless
// given explicitly.
inline TrainingPair synth_pair(const SynthConfig& cfg, Rng& rng, const std::string& id,
                               const LensSpec* forced_source = nullptr, const LensSpec* forced_target = nullptr,
                               const double* forced_disparity = nullptr) {
    std::vector<detail::LensChoice> lenses;
    for (const auto& b : cfg.brands)
        for (double f : cfg.f_numbers) lenses.push_back({b, f});
    const auto si = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(lenses.size()) - 1));
    auto ti = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(lenses.size()) - 2));
    if (ti >= si) ++ti;
    const double disparity =
        cfg.disparities[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(cfg.disparities.size()) - 1))];

    auto spec = [&](const detail::LensChoice& l) {
        LensSpec s{l.brand, cfg.focal_length_mm, l.f_number, ""};
        s.raw_name = format_lens_name(s);
        return s;
    };
    MetaTuple meta{id, forced_source ? *forced_source : spec(lenses[si]), forced_target ? *forced_target : spec(lenses[ti]),
                   forced_disparity ? *forced_disparity : disparity};

    Image bg = detail::synth_background(cfg, rng);
    Image premul, cover;
    detail::synth_foreground(cfg, rng, premul, cover);
    Image alpha = quantize_8bit(cover);

    auto side = [&](const LensSpec& lens) {
        const double r = defocus_radius(cfg, lens.f_number, meta.disparity);
        return quantize_8bit(composite(premul, alpha, render_defocus(bg, lens.brand, r)));
    };
    Image source = side(meta.source);
    Image target = side(meta.target);
    return TrainingPair{std::move(source), std::move(target), std::move(alpha), std::move(meta)};
}

inline SynthSummary generate_synthetic(const SynthConfig& cfg, const fs::path& out_root) {
    cfg.validate();
    try {
        for (const char* sub : {"source", "target", "alpha"}) fs::create_directories(out_root / sub);
    } catch (const fs::filesystem_error& e) {
        throw IoError("cannot create dataset directories under " + out_root.string() + ": " + e.what());
    }
    Rng rng(cfg.seed);
    SynthSummary summary;
    std::ofstream meta(out_root / "meta.txt", std::ios::binary);
    if (!meta) throw IoError("cannot write " + (out_root / "meta.txt").string());
    meta << "# id,source,target,disparity\n";
    for (std::size_t i = 0; i < cfg.num_pairs; ++i) {
        const std::string id = record_id(i);
        TrainingPair p = synth_pair(cfg, rng, id);
        write_png(out_root / "source" / (id + ".png"), p.source);
        write_png(out_root / "target" / (id + ".png"), p.target);
        write_png(out_root / "alpha" / (id + ".png"), p.alpha);
        meta << format_meta_line(p.meta) << "\n";
        ++summary.transformations[{lens_label(p.meta.source), lens_label(p.meta.target)}];
        ++summary.pairs;
    }
    if (!meta.flush()) throw IoError("cannot write " + (out_root / "meta.txt").string());
    std::ofstream prov(out_root / "synth_config.txt", std::ios::binary);
    prov << synth_config_text(cfg);
    if (!prov) throw IoError("cannot write " + (out_root / "synth_config.txt").string());
    return summary;
}

} // namespace bokeh

#endif // BOKEH_DATA_HPP
