#pragma once

// Evaluation metrics for both tasks: regression-style sentiment metrics
// (MAE, Pearson correlation, seven-bucket accuracy, two binary ACC/F1
// conventions) and per-utterance classification metrics (accuracy,
// support-weighted F1), plus plain-text and key=value report formatting.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "unimse/common.hpp"

namespace unimse::evalmetrics {

// One task's metric values. `values` preserves insertion order so reports
// print in a stable layout. Names in `undefined` were computed but have no
// defined value on this input (correlation of a constant vector, or the
// negative-vs-positive pair when every gold value is exactly zero).
// `malformed` counts generations that failed to decode and were scored with
// fallback values; those samples are still inside `n` and every metric.
struct MetricReport {
    std::string task;
    std::vector<std::pair<std::string, double>> values;
    std::vector<std::string> undefined;
    std::size_t n = 0;
    std::size_t malformed = 0;

    bool has(const std::string& name) const {
        for (const auto& kv : values)
            if (kv.first == name) return true;
        return false;
    }

    bool defined(const std::string& name) const {
        if (!has(name)) return false;
        for (const auto& u : undefined)
            if (u == name) return false;
        return true;
    }

    double value(const std::string& name) const {
        for (const auto& u : undefined)
            if (u == name) fail("MetricReport: metric '", name, "' is undefined on this input");
        for (const auto& kv : values)
            if (kv.first == name) return kv.second;
        fail("MetricReport: no metric named '", name, "' in the ", task, " report");
    }
};

// Seven-class sentiment bucket: clamp to [-3, 3], then round to the nearest
// integer with ties away from zero (so 1.5 -> 2 and -1.5 -> -2).
inline int sentiment_bucket(double intensity) {
    return static_cast<int>(std::lround(std::clamp(intensity, -3.0, 3.0)));
}

namespace detail {

// Binary F1 of the positive class from one-vs-rest counts. When the class
// has no true positives and no false calls either way the score has no
// support; it is defined as zero (the precision + recall = 0 convention).
inline double binary_f1(std::size_t tp, std::size_t fp, std::size_t fn) {
    const double denom = static_cast<double>(2 * tp + fp + fn);
    if (denom == 0.0) return 0.0;
    return 2.0 * static_cast<double>(tp) / denom;
}

inline void check_finite(const std::vector<double>& xs, const char* what) {
    for (std::size_t i = 0; i < xs.size(); ++i)
        if (!std::isfinite(xs[i]))
            fail("msa_metrics: ", what, "[", i, "] is not finite (", xs[i], ")");
}

} // namespace detail

// Sentiment-intensity metrics over parallel prediction/gold vectors.
//
//   mae             mean |pred - gold|
//   corr            Pearson correlation, clamped to [-1, 1] against
//                   floating-point drift; undefined when either vector has
//                   zero variance
//   acc7            bucket match rate under sentiment_bucket
//   acc2_neg_nonneg binary accuracy, negative vs non-negative, where a
//                   value of exactly zero counts as non-negative; scored
//                   over every sample
//   f1_neg_nonneg   binary F1 of the non-negative side of that split
//   acc2_neg_pos    binary accuracy, negative vs positive; samples whose
//                   gold value is exactly zero are excluded, and a
//                   prediction of exactly zero falls on the negative side
//   f1_neg_pos      binary F1 of the positive side of that split
//
// `malformed` is a caller-supplied count of predictions that came from
// unparseable generations and were replaced with fallback values; it is
// recorded in the report but does not change any computation here.
inline MetricReport msa_metrics(const std::vector<double>& pred, const std::vector<double>& gold,
                                std::size_t malformed = 0) {
    if (pred.size() != gold.size())
        fail("msa_metrics: pred has ", pred.size(), " value(s) but gold has ", gold.size());
    if (pred.empty()) fail("msa_metrics: empty input");
    detail::check_finite(pred, "pred");
    detail::check_finite(gold, "gold");

    MetricReport r;
    r.task = "msa";
    r.n = pred.size();
    r.malformed = malformed;
    const double n = static_cast<double>(pred.size());

    double mae = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) mae += std::abs(pred[i] - gold[i]);
    mae /= n;
    r.values.emplace_back("mae", mae);

    double mean_p = 0.0, mean_g = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        mean_p += pred[i];
        mean_g += gold[i];
    }
    mean_p /= n;
    mean_g /= n;
    double spp = 0.0, sgg = 0.0, spg = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double dp = pred[i] - mean_p;
        const double dg = gold[i] - mean_g;
        spp += dp * dp;
        sgg += dg * dg;
        spg += dp * dg;
    }
    if (spp > 0.0 && sgg > 0.0) {
        r.values.emplace_back("corr", std::clamp(spg / std::sqrt(spp * sgg), -1.0, 1.0));
    } else {
        r.values.emplace_back("corr", 0.0);
        r.undefined.push_back("corr");
    }

    std::size_t bucket_hits = 0;
    for (std::size_t i = 0; i < pred.size(); ++i)
        if (sentiment_bucket(pred[i]) == sentiment_bucket(gold[i])) ++bucket_hits;
    r.values.emplace_back("acc7", static_cast<double>(bucket_hits) / n);

    std::size_t a_hits = 0, a_tp = 0, a_fp = 0, a_fn = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const bool ps = pred[i] >= 0.0;
        const bool gs = gold[i] >= 0.0;
        if (ps == gs) ++a_hits;
        if (ps && gs) ++a_tp;
        if (ps && !gs) ++a_fp;
        if (!ps && gs) ++a_fn;
    }
    r.values.emplace_back("acc2_neg_nonneg", static_cast<double>(a_hits) / n);
    r.values.emplace_back("f1_neg_nonneg", detail::binary_f1(a_tp, a_fp, a_fn));

    std::size_t kept = 0, b_hits = 0, b_tp = 0, b_fp = 0, b_fn = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (gold[i] == 0.0) continue;
        ++kept;
        const bool ps = pred[i] > 0.0;
        const bool gs = gold[i] > 0.0;
        if (ps == gs) ++b_hits;
        if (ps && gs) ++b_tp;
        if (ps && !gs) ++b_fp;
        if (!ps && gs) ++b_fn;
    }
    if (kept > 0) {
        r.values.emplace_back("acc2_neg_pos", static_cast<double>(b_hits) / static_cast<double>(kept));
        r.values.emplace_back("f1_neg_pos", detail::binary_f1(b_tp, b_fp, b_fn));
    } else {
        r.values.emplace_back("acc2_neg_pos", 0.0);
        r.values.emplace_back("f1_neg_pos", 0.0);
        r.undefined.push_back("acc2_neg_pos");
        r.undefined.push_back("f1_neg_pos");
    }
    return r;
}

// Emotion-classification metrics over parallel prediction/gold vectors.
//
//   acc  exact-match rate
//   wf1  sum over classes of (gold support / N) * one-vs-rest F1, with a
//        class F1 of zero whenever precision + recall is zero
//
// Every prediction and gold label must appear in `labels`; classes with no
// gold support carry zero weight. `malformed` is recorded as in msa_metrics.
inline MetricReport erc_metrics(const std::vector<std::string>& pred,
                                const std::vector<std::string>& gold,
                                const std::vector<std::string>& labels,
                                std::size_t malformed = 0) {
    if (pred.size() != gold.size())
        fail("erc_metrics: pred has ", pred.size(), " label(s) but gold has ", gold.size());
    if (pred.empty()) fail("erc_metrics: empty input");
    if (labels.empty()) fail("erc_metrics: empty label set");

    std::map<std::string, std::size_t> index;
    for (std::size_t c = 0; c < labels.size(); ++c) {
        if (!index.emplace(labels[c], c).second)
            fail("erc_metrics: duplicate label '", labels[c], "' in label set");
    }
    auto class_of = [&](const std::vector<std::string>& xs, std::size_t i, const char* what) {
        auto it = index.find(xs[i]);
        if (it == index.end())
            fail("erc_metrics: ", what, "[", i, "] label '", xs[i], "' is not in the label set");
        return it->second;
    };

    MetricReport r;
    r.task = "erc";
    r.n = pred.size();
    r.malformed = malformed;
    const double n = static_cast<double>(pred.size());

    std::size_t hits = 0;
    std::vector<std::size_t> support(labels.size(), 0);
    std::vector<std::size_t> tp(labels.size(), 0), fp(labels.size(), 0), fn(labels.size(), 0);
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const std::size_t p = class_of(pred, i, "pred");
        const std::size_t g = class_of(gold, i, "gold");
        ++support[g];
        if (p == g) {
            ++hits;
            ++tp[g];
        } else {
            ++fp[p];
            ++fn[g];
        }
    }
    r.values.emplace_back("acc", static_cast<double>(hits) / n);

    double wf1 = 0.0;
    for (std::size_t c = 0; c < labels.size(); ++c)
        wf1 += (static_cast<double>(support[c]) / n) * detail::binary_f1(tp[c], fp[c], fn[c]);
    r.values.emplace_back("wf1", wf1);
    return r;
}

// Full-precision decimal text for a double; round-trips exactly on read.
inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
}

// Human-readable report block: a header with the task, sample count, and
// malformed count, then one aligned line per metric.
inline std::string report_text(const MetricReport& r) {
    std::ostringstream os;
    os << r.task << " metrics over " << r.n << " sample(s), " << r.malformed
       << " malformed generation(s)\n";
    std::size_t width = 0;
    for (const auto& kv : r.values) width = std::max(width, kv.first.size());
    for (const auto& kv : r.values) {
        os << "  " << kv.first << std::string(width - kv.first.size() + 2, ' ');
        if (r.defined(kv.first))
            os << format_double(kv.second);
        else
            os << "undefined";
        os << "\n";
    }
    return os.str();
}

// Machine-readable lines, one `task.key=value` per line. Undefined metrics
// print the literal token `undefined`; counts ride along as task.n and
// task.malformed.
inline std::string report_keyvals(const MetricReport& r) {
    std::ostringstream os;
    os << r.task << ".n=" << r.n << "\n";
    os << r.task << ".malformed=" << r.malformed << "\n";
    for (const auto& kv : r.values) {
        os << r.task << "." << kv.first << "=";
        if (r.defined(kv.first))
            os << format_double(kv.second);
        else
            os << "undefined";
        os << "\n";
    }
    return os.str();
}

} // namespace unimse::evalmetrics
