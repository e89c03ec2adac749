#ifndef BOKEH_EVALUATION_HPP
#define BOKEH_EVALUATION_HPP

#include <cstdio>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "bokeh/data.hpp"
#include "bokeh/loss_metrics.hpp"

namespace bokeh {

using Predictor = std::function<Image(const TrainingPair&)>;
using LensPair = std::pair<std::string, std::string>;

struct ImageScore {
    std::string id;
    std::string source;  // lens label, e.g. "Sony16"
    std::string target;
    double psnr_db = 0;
    double ssim = 0;
    std::optional<double> perceptual;
};

struct EvalReport {
    std::vector<ImageScore> images;
    std::map<LensPair, MetricReport> groups;
    MetricReport overall;
    // Lens labels in display order (brand, then f-number).
    std::vector<std::string> labels;
};

// Orders lens labels by brand name, then numerically by f-number.
inline std::vector<std::string> ordered_labels(const std::vector<LensSpec>& specs) {
    std::vector<LensSpec> s = specs;
    std::sort(s.begin(), s.end(), [](const LensSpec& a, const LensSpec& b) {
        return a.brand != b.brand ? a.brand < b.brand : a.f_number < b.f_number;
    });
    std::vector<std::string> out;
    for (const auto& spec : s) {
        const std::string l = lens_label(spec);
        if (out.empty() || out.back() != l) out.push_back(l);
    }
    return out;
}

class Evaluator {
public:
    explicit Evaluator(const PerceptualScorer* perceptual = nullptr) : perceptual_(perceptual) {}

    void add(const TrainingPair& pair, const Image& prediction) {
        ImageScore s{pair.meta.id, lens_label(pair.meta.source), lens_label(pair.meta.target), psnr(prediction, pair.target),
                     ssim(prediction, pair.target), std::nullopt};
        if (perceptual_ && *perceptual_) s.perceptual = (*perceptual_)(prediction, pair.target);
        groups_[{s.source, s.target}].add(s.psnr_db, s.ssim, s.perceptual);
        overall_.add(s.psnr_db, s.ssim, s.perceptual);
        specs_.push_back(pair.meta.source);
        specs_.push_back(pair.meta.target);
        images_.push_back(std::move(s));
    }

    EvalReport report() const {
        EvalReport r;
        r.images = images_;
        for (const auto& [k, acc] : groups_) r.groups[k] = acc.report();
        r.overall = overall_.report();
        r.labels = ordered_labels(specs_);
        return r;
    }

private:
    const PerceptualScorer* perceptual_;
    std::vector<ImageScore> images_;
    std::map<LensPair, MetricAccumulator> groups_;
    MetricAccumulator overall_;
    std::vector<LensSpec> specs_;
};

inline EvalReport evaluate(const std::vector<TrainingPair>& pairs, const Predictor& predict,
                           const PerceptualScorer* perceptual = nullptr) {
    Evaluator ev(perceptual);
    for (const auto& p : pairs) ev.add(p, predict(p));
    return ev.report();
}

// Decodes one record at a time.
inline EvalReport evaluate(const std::vector<PairDescriptor>& records, const Predictor& predict,
                           const PerceptualScorer* perceptual = nullptr) {
    Evaluator ev(perceptual);
    for (const auto& d : records) {
        const TrainingPair p = d.load();
        ev.add(p, predict(p));
    }
    return ev.report();
}

// Source-vs-target baseline: the prediction is the unmodified source.
inline Image identity_prediction(const TrainingPair& p) { return p.source; }

// ---- text formatting ---------------------------------------------------------

inline std::string format_metric(double v, int precision) {
    if (std::isinf(v)) return "inf";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", precision, v);
    return buf;
}

namespace detail {

inline std::string pad(const std::string& s, std::size_t w) { return s.size() >= w ? s : std::string(w - s.size(), ' ') + s; }

// Rows are source lenses, columns target lenses; `cell` returns nullopt for
// an empty cell, shown as "-".
inline std::string grid(const std::string& title, const std::vector<std::string>& labels,
                        const std::function<std::optional<std::string>(const std::string&, const std::string&)>& cell) {
    std::size_t w = 9;
    for (const auto& l : labels) w = std::max(w, l.size() + 2);
    std::ostringstream os;
    os << title << "\n" << pad("src\\tgt", w);
    for (const auto& l : labels) os << pad(l, w);
    os << "\n";
    for (const auto& r : labels) {
        os << pad(r, w);
        for (const auto& c : labels) os << pad(cell(r, c).value_or("-"), w);
        os << "\n";
    }
    return os.str();
}

} // namespace detail

// Table-style cross tabulation of per-pair means plus the overall line.
// Lens pairs without images are listed in a notice.
inline std::string format_grid_report(const EvalReport& r) {
    std::ostringstream os;
    auto metric_grid = [&](const std::string& title, auto pick) {
        return detail::grid(title, r.labels, [&](const std::string& s, const std::string& t) -> std::optional<std::string> {
            auto it = r.groups.find({s, t});
            if (it == r.groups.end()) return std::nullopt;
            return pick(it->second);
        });
    };
    os << metric_grid("PSNR (dB) by transformation", [](const MetricReport& m) { return format_metric(m.psnr_db, 3); });
    os << "\n" << metric_grid("SSIM by transformation", [](const MetricReport& m) { return format_metric(m.ssim, 4); });
    if (r.overall.perceptual)
        os << "\n" << metric_grid("Perceptual by transformation", [](const MetricReport& m) {
            return m.perceptual ? format_metric(*m.perceptual, 4) : std::string("-");
        });
    std::size_t empty = 0;
    std::string missing;
    for (const auto& s : r.labels)
        for (const auto& t : r.labels)
            if (s != t && !r.groups.count({s, t})) {
                ++empty;
                missing += (missing.empty() ? "" : ", ") + s + "->" + t;
            }
    if (empty) os << "\nnotice: " << empty << " lens pair(s) have no images and are omitted: " << missing << "\n";
    os << "\noverall: images=" << r.overall.count << " psnr=" << format_metric(r.overall.psnr_db, 3)
       << " ssim=" << format_metric(r.overall.ssim, 4);
    if (r.overall.perceptual) os << " perceptual=" << format_metric(*r.overall.perceptual, 4);
    if (r.overall.infinite_psnr) os << " identical_images=" << r.overall.infinite_psnr;
    os << "\n";
    return os.str();
}

// One `key=value` record per image followed by group and overall footers.
inline std::string format_records(const EvalReport& r) {
    std::ostringstream os;
    auto metrics = [&](const MetricReport& m) {
        std::string s = "count=" + std::to_string(m.count) + " psnr=" + format_metric(m.psnr_db, 6) +
                        " ssim=" + format_metric(m.ssim, 6) + " infinite_psnr=" + std::to_string(m.infinite_psnr);
        if (m.perceptual) s += " perceptual=" + format_metric(*m.perceptual, 6);
        return s;
    };
    for (const auto& i : r.images) {
        os << "image id=" << i.id << " source=" << i.source << " target=" << i.target
           << " psnr=" << format_metric(i.psnr_db, 6) << " ssim=" << format_metric(i.ssim, 6);
        if (i.perceptual) os << " perceptual=" << format_metric(*i.perceptual, 6);
        os << "\n";
    }
    for (const auto& [k, m] : r.groups) os << "group source=" << k.first << " target=" << k.second << " " << metrics(m) << "\n";
    os << "overall " << metrics(r.overall) << "\n";
    return os.str();
}

// ---- dataset statistics ------------------------------------------------------

struct DatasetStats {
    std::vector<std::string> labels;
    std::map<LensPair, std::size_t> occurrences;
    std::map<double, std::size_t> disparities;
    std::size_t records = 0;
    EvalReport baseline;  // source used as the prediction of the target

    double disparity_percent(double d) const {
        auto it = disparities.find(d);
        return it == disparities.end() || records == 0 ? 0.0 : 100.0 * static_cast<double>(it->second) / static_cast<double>(records);
    }
};

inline DatasetStats dataset_stats(const std::vector<PairDescriptor>& records) {
    DatasetStats st;
    std::vector<LensSpec> specs;
    for (const auto& r : records) {
        ++st.occurrences[{lens_label(r.meta.source), lens_label(r.meta.target)}];
        ++st.disparities[r.meta.disparity];
        specs.push_back(r.meta.source);
        specs.push_back(r.meta.target);
    }
    st.records = records.size();
    st.labels = ordered_labels(specs);
    st.baseline = evaluate(records, identity_prediction);
    return st;
}

inline std::string format_stats(const DatasetStats& st) {
    std::ostringstream os;
    os << detail::grid("Lens-pair occurrences (" + std::to_string(st.records) + " records)", st.labels,
                       [&](const std::string& s, const std::string& t) -> std::optional<std::string> {
                           auto it = st.occurrences.find({s, t});
                           return std::to_string(it == st.occurrences.end() ? 0 : it->second);
                       });
    os << "\nDisparity distribution\n";
    for (const auto& [d, n] : st.disparities)
        os << detail::pad(format_real(d), 10) << detail::pad(std::to_string(n), 8)
           << detail::pad(format_metric(st.disparity_percent(d), 2) + "%", 10) << "\n";
    const MetricReport& b = st.baseline.overall;
    os << "\nSource vs target\n"
       << detail::pad("PSNR (dB)", 12) << detail::pad("SSIM", 10) << "\n"
       << detail::pad(format_metric(b.psnr_db, 3), 12) << detail::pad(format_metric(b.ssim, 4), 10) << "\n";
    if (b.infinite_psnr) os << "notice: " << b.infinite_psnr << " identical pair(s) have infinite PSNR and are excluded from the mean\n";
    os << "\n" << format_grid_report(st.baseline);
    return os.str();
}

inline std::string format_stats_records(const DatasetStats& st) {
    std::ostringstream os;
    for (const auto& [k, n] : st.occurrences) os << "pair source=" << k.first << " target=" << k.second << " count=" << n << "\n";
    for (const auto& [d, n] : st.disparities)
        os << "disparity value=" << format_real(d) << " count=" << n << " percent=" << format_metric(st.disparity_percent(d), 6)
           << "\n";
    os << format_records(st.baseline);
    return os.str();
}

} // namespace bokeh

#endif // BOKEH_EVALUATION_HPP
