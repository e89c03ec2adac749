#ifndef BOKEH_CHECKPOINT_HPP
#define BOKEH_CHECKPOINT_HPP

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "bokeh/config.hpp"
#include "bokeh/error.hpp"
#include "bokeh/network.hpp"
#include "bokeh/tensor.hpp"

namespace bokeh {

// On-disk layout, all integers little-endian:
//   magic "BOKEHCKP", u32 version, str model config, str stage tag,
//   u64 stage index, u64 stage iteration, u64 global iteration,
//   str rng state, u64 sampler cursor, u64 n + n x u64 sampler order,
//   u64 optimizer step, u8 scalar width (4|8), u64 array count, arrays.
// Array: str name, u32 rank, rank x u64 dims, values.
// Strings are u64 length + bytes. No wall-clock data is stored, so equal
// states produce byte-identical files.
inline constexpr char kCheckpointMagic[8] = {'B', 'O', 'K', 'E', 'H', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedArray {
    std::string name;
    Shape shape;
    std::vector<double> values;
};

struct Checkpoint {
    ModelConfig config;
    std::string stage_tag;
    std::uint64_t stage_index = 0;
    std::uint64_t stage_iteration = 0;
    std::uint64_t global_iteration = 0;
    std::string rng_state;
    std::uint64_t cursor = 0;
    std::vector<std::uint64_t> order;
    std::uint64_t optimizer_step = 0;
    std::uint8_t scalar_bytes = 4;
    std::vector<NamedArray> arrays;

    const NamedArray* find(const std::string& name) const {
        for (const auto& a : arrays)
            if (a.name == name) return &a;
        return nullptr;
    }
};

namespace detail {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

class BinaryWriter {
public:
    explicit BinaryWriter(std::ostream& os) : os_(os) {}
    template <typename U>
    void pod(U v) { os_.write(reinterpret_cast<const char*>(&v), sizeof(U)); }
    void str(const std::string& s) {
        pod<std::uint64_t>(s.size());
        os_.write(s.data(), static_cast<std::streamsize>(s.size()));
    }

private:
    std::ostream& os_;
};

class BinaryReader {
public:
    BinaryReader(std::istream& is, std::string origin) : is_(is), origin_(std::move(origin)) {}
    template <typename U>
    U pod() {
        U v{};
        is_.read(reinterpret_cast<char*>(&v), sizeof(U));
        if (!is_) fail("truncated file");
        return v;
    }
    std::string str(std::uint64_t limit = (1u << 24)) {
        const auto n = pod<std::uint64_t>();
        if (n > limit) fail("implausible string length " + std::to_string(n));
        std::string s(n, '\0');
        is_.read(s.data(), static_cast<std::streamsize>(n));
        if (!is_) fail("truncated file");
        return s;
    }
    [[noreturn]] void fail(const std::string& msg) const { throw ValidationError("checkpoint " + origin_ + ": " + msg); }

private:
    std::istream& is_;
    std::string origin_;
};

} // namespace detail

inline void write_checkpoint(std::ostream& os, const Checkpoint& ck) {
    detail::BinaryWriter w(os);
    os.write(kCheckpointMagic, sizeof kCheckpointMagic);
    w.pod(kCheckpointVersion);
    w.str(model_config_text(ck.config));
    w.str(ck.stage_tag);
    w.pod(ck.stage_index);
    w.pod(ck.stage_iteration);
    w.pod(ck.global_iteration);
    w.str(ck.rng_state);
    w.pod(ck.cursor);
    w.pod<std::uint64_t>(ck.order.size());
    for (auto v : ck.order) w.pod(v);
    w.pod(ck.optimizer_step);
    if (ck.scalar_bytes != 4 && ck.scalar_bytes != 8) throw ValidationError("checkpoint scalar width must be 4 or 8");
    w.pod(ck.scalar_bytes);
    w.pod<std::uint64_t>(ck.arrays.size());
    for (const auto& a : ck.arrays) {
        if (shape_numel(a.shape) != a.values.size()) throw DimensionError("array " + a.name + " does not match its shape");
        w.str(a.name);
        w.pod<std::uint32_t>(static_cast<std::uint32_t>(a.shape.size()));
        for (auto d : a.shape) w.pod<std::uint64_t>(d);
        for (double v : a.values) {
            if (ck.scalar_bytes == 4)
                w.pod(static_cast<float>(v));
            else
                w.pod(v);
        }
    }
}

inline Checkpoint read_checkpoint(std::istream& is, const std::string& origin) {
    detail::BinaryReader r(is, origin);
    char magic[sizeof kCheckpointMagic];
    is.read(magic, sizeof magic);
    if (!is || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0) r.fail("not a checkpoint file");
    const auto version = r.pod<std::uint32_t>();
    if (version != kCheckpointVersion) r.fail("unsupported format version " + std::to_string(version));
    Checkpoint ck;
    ck.config = parse_model_config_text(r.str(), origin);
    ck.stage_tag = r.str();
    ck.stage_index = r.pod<std::uint64_t>();
    ck.stage_iteration = r.pod<std::uint64_t>();
    ck.global_iteration = r.pod<std::uint64_t>();
    ck.rng_state = r.str();
    ck.cursor = r.pod<std::uint64_t>();
    const auto n = r.pod<std::uint64_t>();
    if (n > (1u << 28)) r.fail("implausible sampler size");
    ck.order.resize(n);
    for (auto& v : ck.order) v = r.pod<std::uint64_t>();
    ck.optimizer_step = r.pod<std::uint64_t>();
    ck.scalar_bytes = r.pod<std::uint8_t>();
    if (ck.scalar_bytes != 4 && ck.scalar_bytes != 8) r.fail("bad scalar width");
    const auto count = r.pod<std::uint64_t>();
    if (count > (1u << 20)) r.fail("implausible array count");
    ck.arrays.resize(count);
    for (auto& a : ck.arrays) {
        a.name = r.str(4096);
        const auto rank = r.pod<std::uint32_t>();
        if (rank > 8) r.fail("array " + a.name + " has rank " + std::to_string(rank));
        a.shape.resize(rank);
        for (auto& d : a.shape) d = r.pod<std::uint64_t>();
        const std::size_t numel = shape_numel(a.shape);
        if (numel > (std::size_t{1} << 32)) r.fail("array " + a.name + " is implausibly large");
        a.values.resize(numel);
        for (auto& v : a.values) v = ck.scalar_bytes == 4 ? static_cast<double>(r.pod<float>()) : r.pod<double>();
    }
    return ck;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw IoError("cannot write checkpoint " + tmp.string());
        write_checkpoint(os, ck);
        if (!os.flush()) throw IoError("failed writing checkpoint " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open checkpoint " + path.string());
    return read_checkpoint(is, path.string());
}

template <typename T>
NamedArray to_named_array(const std::string& name, const Tensor<T>& t) {
    NamedArray a{name, t.shape(), {}};
    a.values.assign(t.data(), t.data() + t.size());
    return a;
}

template <typename T>
void from_named_array(const NamedArray& a, Tensor<T>& t) {
    if (a.shape != t.shape())
        throw DimensionError("checkpoint array " + a.name + " has shape " + shape_string(a.shape) + ", expected " +
                             shape_string(t.shape()));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(a.values[i]);
}

inline constexpr const char* kParamPrefix = "param/";

template <typename T>
void append_parameters(Checkpoint& ck, const BokehModel<T>& model) {
    model.visit([&](const std::string& name, const nn::Param<T>& p) {
        ck.arrays.push_back(to_named_array(kParamPrefix + name, p.value));
    });
}

// Loads every parameter; missing or mis-shaped arrays are errors.
template <typename T>
void restore_parameters(const Checkpoint& ck, BokehModel<T>& model) {
    model.visit([&](const std::string& name, nn::Param<T>& p) {
        const NamedArray* a = ck.find(kParamPrefix + name);
        if (!a) throw ValidationError("checkpoint is missing parameter " + name);
        from_named_array(*a, p.value);
    });
}

template <typename T>
BokehModel<T> model_from_checkpoint(const Checkpoint& ck) {
    BokehModel<T> model(ck.config, 0);
    restore_parameters(ck, model);
    return model;
}

template <typename T>
BokehModel<T> load_model(const std::filesystem::path& path) {
    return model_from_checkpoint<T>(load_checkpoint(path));
}

} // namespace bokeh

#endif // BOKEH_CHECKPOINT_HPP
