#ifndef BOKEH_LENS_META_HPP
#define BOKEH_LENS_META_HPP

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include "bokeh/error.hpp"

namespace bokeh {

// Shortest decimal that parses back to `v`; `force_fraction` appends ".0" to
// integral values ("16" -> "16.0").
inline std::string format_real(double v, bool force_fraction = false) {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    std::string s(buf, end);
    if (force_fraction && s.find_first_of(".eE") == std::string::npos && std::isfinite(v)) s += ".0";
    return s;
}

inline double parse_real(std::string_view text, const std::string& what) {
    double v = 0;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc() || ptr != text.data() + text.size() || text.empty())
        throw ParseError("invalid " + what, std::string(text));
    return v;
}

inline std::string_view trim(std::string_view s) {
    const auto ws = " \t\r\n";
    const auto b = s.find_first_not_of(ws);
    if (b == std::string_view::npos) return {};
    return s.substr(b, s.find_last_not_of(ws) - b + 1);
}

// Ordered list of lens families. Position defines the code layout.
class BrandRegistry {
public:
    BrandRegistry() : brands_{"Sony", "Canon"} {}
    explicit BrandRegistry(std::vector<std::string> brands) : brands_(std::move(brands)) {
        if (brands_.size() < 2) throw ConfigError("brand registry needs at least two brands");
        for (std::size_t i = 0; i < brands_.size(); ++i)
            if (std::find(brands_.begin(), brands_.begin() + i, brands_[i]) != brands_.begin() + i)
                throw ConfigError("duplicate brand '" + brands_[i] + "' in registry");
    }

    std::size_t size() const noexcept { return brands_.size(); }
    const std::vector<std::string>& brands() const noexcept { return brands_; }
    bool contains(std::string_view brand) const { return std::find(brands_.begin(), brands_.end(), brand) != brands_.end(); }

    std::size_t index_of(std::string_view brand) const {
        auto it = std::find(brands_.begin(), brands_.end(), brand);
        if (it == brands_.end()) throw UnknownBrandError(std::string(brand));
        return static_cast<std::size_t>(it - brands_.begin());
    }

private:
    std::vector<std::string> brands_;
};

struct LensSpec {
    std::string brand;
    double focal_length_mm = 50.0;
    double f_number = 1.0;
    std::string raw_name;

    // Identity is (brand, focal, aperture); raw_name is provenance only.
    bool operator==(const LensSpec& o) const {
        return brand == o.brand && focal_length_mm == o.focal_length_mm && f_number == o.f_number;
    }
};

// Canonical identifier, e.g. "Sony50mmf16.0BS".
inline std::string format_lens_name(const LensSpec& spec) {
    return spec.brand + format_real(spec.focal_length_mm) + "mmf" + format_real(spec.f_number, true) + "BS";
}

// Short table label, e.g. "Canon1.4", "Sony16".
inline std::string lens_label(const LensSpec& spec) { return spec.brand + format_real(spec.f_number); }

// Grammar: <Brand><Focal>mmf<FNumber>BS, brand alphabetic, numbers decimal.
inline LensSpec parse_lens_name(std::string_view name, const BrandRegistry& registry = {}) {
    const std::string full(name);
    auto is_alpha = [](char c) { return (c >= 'A' && c <= 'Z') || (c >= 'a' && c <= 'z'); };
    auto is_num = [](char c) { return (c >= '0' && c <= '9') || c == '.'; };

    std::size_t pos = 0;
    while (pos < name.size() && is_alpha(name[pos])) ++pos;
    if (pos == 0) throw ParseError("lens name '" + full + "' must start with a brand", full);
    const std::string brand(name.substr(0, pos));

    auto take_number = [&](const std::string& what) {
        const std::size_t start = pos;
        while (pos < name.size() && is_num(name[pos])) ++pos;
        const auto token = name.substr(start, pos - start);
        if (token.empty()) {
            const std::string rest(name.substr(start));
            throw ParseError("lens name '" + full + "' is missing the " + what, rest.empty() ? "<end>" : rest);
        }
        return parse_real(token, what + " in '" + full + "'");
    };
    auto expect = [&](std::string_view literal, const std::string& what) {
        if (name.substr(pos, literal.size()) != literal) {
            const std::string rest(name.substr(pos));
            throw ParseError("lens name '" + full + "': expected " + what, rest.empty() ? "<end>" : rest);
        }
        pos += literal.size();
    };

    const double focal = take_number("focal length");
    expect("mm", "'mm' after the focal length");
    expect("f", "'f' introducing the f-number");
    const double f_number = take_number("f-number");
    expect("BS", "suffix 'BS'");
    if (pos != name.size()) throw ParseError("lens name '" + full + "' has trailing characters", std::string(name.substr(pos)));

    if (!(focal > 0)) throw ParseError("focal length must be positive", format_real(focal));
    if (!(f_number > 0)) throw ParseError("f-number must be positive", format_real(f_number));
    if (!registry.contains(brand)) throw UnknownBrandError(brand);

    return LensSpec{brand, focal, f_number, full};
}

// Signed one-hot brand code of length n-1 followed by the aperture value.
struct LensCode {
    std::vector<int> brand_code;
    double aperture = 0;

    bool operator==(const LensCode&) const = default;
};

inline LensCode encode_lens(const LensSpec& spec, const BrandRegistry& registry = {}) {
    const std::size_t idx = registry.index_of(spec.brand);
    LensCode code;
    code.brand_code.assign(registry.size() - 1, -1);
    if (idx < code.brand_code.size()) code.brand_code[idx] = 1;
    code.aperture = spec.f_number;
    return code;
}

// Number of differing brand-code elements plus |aperture difference|. Reduces
// to the plain aperture difference for equal brands.
inline double transformation_magnitude(const LensCode& src, const LensCode& tgt) {
    if (src.brand_code.size() != tgt.brand_code.size())
        throw DimensionError("lens codes of different length: " + std::to_string(src.brand_code.size()) + " vs " +
                             std::to_string(tgt.brand_code.size()));
    std::size_t hamming = 0;
    for (std::size_t i = 0; i < src.brand_code.size(); ++i) hamming += src.brand_code[i] != tgt.brand_code[i];
    return static_cast<double>(hamming) + std::abs(src.aperture - tgt.aperture);
}

struct MetaTuple {
    std::string id;
    LensSpec source;
    LensSpec target;
    double disparity = 0;

    bool operator==(const MetaTuple& o) const {
        return id == o.id && source == o.source && target == o.target && disparity == o.disparity;
    }
};

inline void validate_meta(const MetaTuple& m) {
    if (m.id.empty()) throw ValidationError("metadata record has an empty id");
    if (!(m.disparity >= 0) || !std::isfinite(m.disparity))
        throw ValidationError("record " + m.id + ": disparity must be a non-negative real, got " + format_real(m.disparity));
    if (m.source.brand == m.target.brand && m.source.f_number == m.target.f_number)
        throw ValidationError("record " + m.id + ": source and target lens are identical (" +
                              format_lens_name(m.source) + ")");
}

// `id,source_name,target_name,disparity`
inline MetaTuple parse_meta_line(std::string_view line, const BrandRegistry& registry = {}) {
    std::vector<std::string_view> fields;
    std::size_t start = 0;
    while (true) {
        const auto comma = line.find(',', start);
        fields.push_back(trim(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start)));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    if (fields.size() != 4)
        throw ParseError("metadata line needs 4 comma-separated fields, got " + std::to_string(fields.size()),
                         std::string(trim(line)));
    MetaTuple m;
    m.id = std::string(fields[0]);
    m.source = parse_lens_name(fields[1], registry);
    m.target = parse_lens_name(fields[2], registry);
    m.disparity = parse_real(fields[3], "disparity");
    validate_meta(m);
    return m;
}

inline std::string format_meta_line(const MetaTuple& m) {
    return m.id + "," + format_lens_name(m.source) + "," + format_lens_name(m.target) + "," +
           format_real(m.disparity, true);
}

inline std::vector<MetaTuple> parse_meta_stream(std::istream& in, const std::string& origin,
                                                const BrandRegistry& registry = {}) {
    std::vector<MetaTuple> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto t = trim(line);
        if (t.empty() || t.front() == '#') continue;
        try {
            out.push_back(parse_meta_line(t, registry));
        } catch (const ParseError& e) {
            throw ParseError(origin + ":" + std::to_string(lineno) + ": " + e.what(), e.token());
        } catch (const UnknownBrandError& e) {
            throw ValidationError(origin + ":" + std::to_string(lineno) + ": " + e.what());
        } catch (const ValidationError& e) {
            throw ValidationError(origin + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

inline std::vector<MetaTuple> read_meta_file(const std::filesystem::path& path, const BrandRegistry& registry = {}) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open metadata file " + path.string());
    return parse_meta_stream(in, path.string(), registry);
}

} // namespace bokeh

#endif // BOKEH_LENS_META_HPP
