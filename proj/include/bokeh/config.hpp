#ifndef BOKEH_CONFIG_HPP
#define BOKEH_CONFIG_HPP

#include <array>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "bokeh/lens_meta.hpp"
#include "bokeh/network.hpp"

namespace bokeh {

// Flat `key = value` text; `#` starts a comment line. Lookups record which
// keys were consumed so that leftovers can be reported as unknown.
class KeyValues {
public:
    static KeyValues parse(std::istream& in, const std::string& origin) {
        KeyValues kv;
        kv.origin_ = origin;
        std::string line;
        int lineno = 0;
        std::vector<std::string> errors;
        while (std::getline(in, line)) {
            ++lineno;
            const auto t = trim(line);
            if (t.empty() || t.front() == '#') continue;
            const auto eq = t.find('=');
            if (eq == std::string_view::npos) {
                errors.push_back(origin + ":" + std::to_string(lineno) + ": expected 'key = value', got '" + std::string(t) + "'");
                continue;
            }
            const std::string key(trim(t.substr(0, eq)));
            const std::string value(trim(t.substr(eq + 1)));
            if (key.empty()) errors.push_back(origin + ":" + std::to_string(lineno) + ": empty key");
            if (kv.values_.count(key)) errors.push_back(origin + ":" + std::to_string(lineno) + ": duplicate key '" + key + "'");
            kv.values_[key] = {value, lineno};
        }
        if (!errors.empty()) throw ConfigError(join(errors));
        return kv;
    }

    static KeyValues parse_text(const std::string& text, const std::string& origin) {
        std::istringstream in(text);
        return parse(in, origin);
    }

    static KeyValues load(const std::filesystem::path& path) {
        std::ifstream in(path);
        if (!in) throw ConfigError("cannot open configuration file " + path.string());
        return parse(in, path.string());
    }

    bool has(const std::string& key) const { return values_.count(key) != 0; }

    const std::string* raw(const std::string& key) const {
        auto it = values_.find(key);
        if (it == values_.end()) return nullptr;
        used_.insert(key);
        return &it->second.first;
    }

    std::string where(const std::string& key) const {
        auto it = values_.find(key);
        return origin_ + (it == values_.end() ? "" : ":" + std::to_string(it->second.second)) + ": '" + key + "'";
    }

    std::vector<std::string> unused_keys() const {
        std::vector<std::string> out;
        for (const auto& [k, v] : values_)
            if (!used_.count(k)) out.push_back(k);
        return out;
    }

    static std::string join(const std::vector<std::string>& errors) {
        std::string s;
        for (const auto& e : errors) s += (s.empty() ? "" : "\n") + e;
        return s;
    }

private:
    std::string origin_;
    std::map<std::string, std::pair<std::string, int>> values_;
    mutable std::set<std::string> used_;
};

// Typed reads that append a message to `errors` instead of throwing, so
// every problem in a file is reported at once.
class ConfigReader {
public:
    explicit ConfigReader(const KeyValues& kv) : kv_(kv) {}

    std::vector<std::string>& errors() { return errors_; }

    template <typename U>
    void read(const std::string& key, U& out) {
        const std::string* v = kv_.raw(key);
        if (!v) return;
        try {
            out = convert<U>(*v);
        } catch (const std::exception& e) {
            errors_.push_back(kv_.where(key) + ": " + e.what());
        }
    }

    template <typename U>
    void require(const std::string& key, U& out) {
        if (!kv_.has(key)) {
            errors_.push_back("missing required key '" + key + "'");
            return;
        }
        read(key, out);
    }

    void fail(const std::string& msg) { errors_.push_back(msg); }

    void finish() {
        for (const auto& k : kv_.unused_keys()) errors_.push_back(kv_.where(k) + ": unknown key");
        if (!errors_.empty()) throw ConfigError("invalid configuration:\n" + KeyValues::join(errors_));
    }

private:
    static std::vector<std::string> split_list(const std::string& s) {
        std::vector<std::string> out;
        std::stringstream ss(s);
        std::string item;
        while (std::getline(ss, item, ',')) out.emplace_back(trim(item));
        return out;
    }

    template <typename U>
    static U convert(const std::string& v) {
        if constexpr (std::is_same_v<U, std::string>) {
            return v;
        } else if constexpr (std::is_same_v<U, std::filesystem::path>) {
            return std::filesystem::path(v);
        } else if constexpr (std::is_same_v<U, double>) {
            return parse_real(v, "real value");
        } else if constexpr (std::is_same_v<U, bool>) {
            if (v == "true" || v == "1") return true;
            if (v == "false" || v == "0") return false;
            throw ParseError("expected true/false", v);
        } else if constexpr (std::is_integral_v<U>) {
            U out{};
            auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
            if (ec != std::errc() || p != v.data() + v.size()) throw ParseError("expected a non-negative integer", v);
            return out;
        } else if constexpr (std::is_same_v<U, std::vector<std::string>>) {
            return split_list(v);
        } else if constexpr (std::is_same_v<U, std::array<std::size_t, 4>>) {
            const auto items = split_list(v);
            if (items.size() != 4) throw ParseError("expected 4 comma-separated integers", v);
            std::array<std::size_t, 4> out{};
            for (std::size_t i = 0; i < 4; ++i) out[i] = convert<std::size_t>(items[i]);
            return out;
        } else {
            static_assert(sizeof(U) == 0, "unsupported configuration type");
        }
    }

    const KeyValues& kv_;
    std::vector<std::string> errors_;
};

inline void read_model_config(ConfigReader& r, ModelConfig& m, const std::string& prefix = "model.") {
    r.read(prefix + "base_channels", m.base_channels);
    r.read(prefix + "level_blocks", m.level_blocks);
    r.read(prefix + "refinement_blocks", m.refinement_blocks);
    r.read(prefix + "d_embed", m.d_embed);
    r.read(prefix + "lem_hidden", m.lem_hidden);
    r.read(prefix + "image_channels", m.image_channels);
    r.read(prefix + "ffn_expansion", m.ffn_expansion);
    r.read(prefix + "channels_per_head", m.channels_per_head);
    r.read(prefix + "brands", m.brands);
    try {
        m.validate();
    } catch (const Error& e) {
        r.fail(e.what());
    }
}

inline std::string model_config_text(const ModelConfig& m, const std::string& prefix = "model.") {
    std::string brands;
    for (const auto& b : m.brands) brands += (brands.empty() ? "" : ",") + b;
    std::ostringstream os;
    os << prefix << "base_channels = " << m.base_channels << "\n"
       << prefix << "level_blocks = " << m.level_blocks[0] << "," << m.level_blocks[1] << "," << m.level_blocks[2] << ","
       << m.level_blocks[3] << "\n"
       << prefix << "refinement_blocks = " << m.refinement_blocks << "\n"
       << prefix << "d_embed = " << m.d_embed << "\n"
       << prefix << "lem_hidden = " << m.lem_hidden << "\n"
       << prefix << "image_channels = " << m.image_channels << "\n"
       << prefix << "ffn_expansion = " << format_real(m.ffn_expansion) << "\n"
       << prefix << "channels_per_head = " << m.channels_per_head << "\n"
       << prefix << "brands = " << brands << "\n";
    return os.str();
}

inline ModelConfig parse_model_config_text(const std::string& text, const std::string& origin) {
    const KeyValues kv = KeyValues::parse_text(text, origin);
    ConfigReader r(kv);
    ModelConfig m;
    read_model_config(r, m);
    r.finish();
    return m;
}

} // namespace bokeh

#endif // BOKEH_CONFIG_HPP
