#pragma once

// Universal-label construction: polarity mapping, text similarity, and
// cross-task label completion.
//
// A regression-task sample owns an intensity and is missing an emotion; a
// classification-task sample owns an emotion and is missing an intensity.
// Completion copies the missing field from the most text-similar donor of the
// opposite task with the same polarity, so a copied emotion can never
// contradict the sample's own polarity.

#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "unimse/common.hpp"
#include "unimse/textcodec.hpp"

namespace unimse::unilabel {

using textcodec::Polarity;
using textcodec::Provenance;
using textcodec::Task;
using textcodec::UniversalLabel;

inline Polarity polarity_of_intensity(double intensity) {
    if (!std::isfinite(intensity)) fail("polarity_of_intensity: non-finite intensity");
    if (intensity > 0.0) return Polarity::positive;
    if (intensity < 0.0) return Polarity::negative;
    return Polarity::neutral;
}

inline const std::map<std::string, Polarity>& emotion_polarity_map() {
    static const std::map<std::string, Polarity> m = {
        {"joy", Polarity::positive},       {"excited", Polarity::positive},
        {"surprise", Polarity::positive},  {"sadness", Polarity::negative},
        {"anger", Polarity::negative},     {"angry", Polarity::negative},
        {"fear", Polarity::negative},      {"disgust", Polarity::negative},
        {"frustrated", Polarity::negative},{"neutral", Polarity::neutral},
    };
    return m;
}

inline Polarity polarity_of_emotion(const std::string& emotion) {
    const auto& m = emotion_polarity_map();
    auto it = m.find(emotion);
    if (it == m.end()) {
        std::string known;
        for (const auto& [name, pol] : m) known += str(" ", name, "->", textcodec::polarity_name(pol));
        fail("polarity_of_emotion: unknown emotion '", emotion, "'; known mappings:", known);
    }
    return it->second;
}

// One sample as the label machinery sees it: the raw text plus whichever
// label fields the source annotation scheme provided.
struct LabeledSample {
    std::string id;
    Task task = Task::msa;
    std::string text;
    std::optional<double> intensity; // regression annotation
    std::optional<std::string> emotion; // classification annotation
    std::string split = "train";
};

// Polarity from the task-native annotation.
inline Polarity sample_polarity(const LabeledSample& s) {
    if (s.task == Task::msa) {
        if (!s.intensity) fail("sample_polarity: sample ", s.id, " is msa but has no intensity");
        return polarity_of_intensity(*s.intensity);
    }
    if (!s.emotion) fail("sample_polarity: sample ", s.id, " is erc but has no emotion");
    return polarity_of_emotion(*s.emotion);
}

// ---- text similarity ----

struct SimilarityScore {
    double value = 0.0;
    bool degenerate = false; // at least one side has no tokens; the score is a convention
};

using SimilarityFn = std::function<SimilarityScore(const std::string&, const std::string&)>;

// Cosine over L2-normalized term-frequency bags; symmetric, bounded by [0, 1]
// for token counts (and by [-1, 1] for any real-valued drop-in replacement).
inline SimilarityScore bow_cosine(const std::string& a, const std::string& b) {
    std::unordered_map<std::string, double> fa, fb;
    for (const auto& t : textcodec::Vocabulary::tokenize(a)) fa[t] += 1.0;
    for (const auto& t : textcodec::Vocabulary::tokenize(b)) fb[t] += 1.0;
    double na = 0.0, nb = 0.0, dot = 0.0;
    for (const auto& [t, c] : fa) na += c * c;
    for (const auto& [t, c] : fb) nb += c * c;
    if (na == 0.0 || nb == 0.0) return {0.0, true};
    for (const auto& [t, c] : fa) {
        auto it = fb.find(t);
        if (it != fb.end()) dot += c * it->second;
    }
    return {dot / (std::sqrt(na) * std::sqrt(nb)), false};
}

// Named oracles, so an embedding-based scorer can drop in without touching
// completion logic.
class SimilarityRegistry {
public:
    static SimilarityRegistry& instance() {
        static SimilarityRegistry reg;
        return reg;
    }

    void add(const std::string& name, SimilarityFn fn) { oracles_[name] = std::move(fn); }

    const SimilarityFn& get(const std::string& name) const {
        auto it = oracles_.find(name);
        if (it == oracles_.end()) {
            std::string known;
            for (const auto& [n, fn] : oracles_) known += str(" '", n, "'");
            fail("similarity oracle '", name, "' is not registered; available:", known);
        }
        return it->second;
    }

private:
    SimilarityRegistry() { oracles_["bow-cosine"] = bow_cosine; }
    std::map<std::string, SimilarityFn> oracles_;
};

inline const SimilarityFn& similarity_oracle(const std::string& name = "bow-cosine") {
    return SimilarityRegistry::instance().get(name);
}

// ---- completion ----

struct CompletionAudit {
    std::string sample_id;
    std::string donor_id;
    double score = 0.0;
    std::string copied_field; // "emotion" or "intensity"
};

struct CompletionOptions {
    // When no donor shares the sample's polarity, widen to every opposite-task
    // candidate instead of failing. Off by default: silent cross-polarity
    // copies are usually a data bug.
    bool widen_on_empty = false;
};

struct CompletionResult {
    UniversalLabel label;
    CompletionAudit audit;
};

namespace detail {

inline const LabeledSample* pick_donor(const LabeledSample& sample,
                                       const std::vector<LabeledSample>& pool,
                                       const SimilarityFn& sim, bool widen, double* best_score) {
    const Polarity pol = sample_polarity(sample);
    const Task donor_task = sample.task == Task::msa ? Task::erc : Task::msa;
    const LabeledSample* best = nullptr;
    bool widened = false;
    for (int pass = 0; pass < 2 && !best; ++pass) {
        for (const auto& cand : pool) {
            if (cand.task != donor_task) continue;
            if (!widened && sample_polarity(cand) != pol) continue;
            const double score = sim(sample.text, cand.text).value;
            // argmax with deterministic ties: higher score, then smaller id
            if (!best || score > *best_score || (score == *best_score && cand.id < best->id)) {
                best = &cand;
                *best_score = score;
            }
        }
        if (best || !widen) break;
        widened = true;
    }
    return best;
}

} // namespace detail

// Fills the one missing label field of `sample` from the best donor in `pool`.
// The pool is used as given; restricting donors (e.g. to the training split)
// is the caller's responsibility.
inline CompletionResult complete_universal_label(const LabeledSample& sample,
                                                 const std::vector<LabeledSample>& pool,
                                                 const SimilarityFn& sim,
                                                 const CompletionOptions& opt = {}) {
    const bool has_i = sample.intensity.has_value();
    const bool has_e = sample.emotion.has_value();
    if (has_i == has_e)
        fail("complete_universal_label: sample ", sample.id, " must have exactly one of ",
             "intensity/emotion, has ", has_i ? "both" : "neither");

    double best_score = 0.0;
    const LabeledSample* donor = detail::pick_donor(sample, pool, sim, opt.widen_on_empty, &best_score);
    if (!donor)
        fail("complete_universal_label: no ", sample.task == Task::msa ? "erc" : "msa",
             " donor with polarity ", textcodec::polarity_name(sample_polarity(sample)),
             " for sample ", sample.id,
             " (enable the widen-on-empty completion fallback to search all candidates)");

    CompletionResult out;
    const Polarity pol = sample_polarity(sample);
    if (sample.task == Task::msa) {
        if (!donor->emotion) fail("complete_universal_label: donor ", donor->id, " has no emotion");
        out.label = textcodec::make_universal_label(pol, *sample.intensity, *donor->emotion,
                                                    Provenance::original, Provenance::generated);
        out.audit = {sample.id, donor->id, best_score, "emotion"};
    } else {
        if (!donor->intensity) fail("complete_universal_label: donor ", donor->id, " has no intensity");
        out.label = textcodec::make_universal_label(pol, *donor->intensity, *sample.emotion,
                                                    Provenance::generated, Provenance::original);
        out.audit = {sample.id, donor->id, best_score, "intensity"};
    }
    return out;
}

struct UnifiedSample {
    LabeledSample sample;
    UniversalLabel label;
};

struct UnifiedDataset {
    std::vector<UnifiedSample> samples;
    std::vector<CompletionAudit> audits;
    std::size_t completed_emotion = 0;   // msa samples that gained an emotion
    std::size_t completed_intensity = 0; // erc samples that gained an intensity
    std::size_t already_complete = 0;
};

// Completes every incomplete sample. Donor pools are restricted to the
// training split of the opposite task, so labels in validation and test never
// leak information from those splits. Output preserves input order, all msa
// samples first.
inline UnifiedDataset build_unified_dataset(const std::vector<LabeledSample>& msa,
                                            const std::vector<LabeledSample>& erc,
                                            const SimilarityFn& sim,
                                            const CompletionOptions& opt = {}) {
    std::vector<LabeledSample> donor_pool;
    for (const auto& s : msa)
        if (s.split == "train") donor_pool.push_back(s);
    for (const auto& s : erc)
        if (s.split == "train") donor_pool.push_back(s);

    UnifiedDataset out;
    auto process = [&](const LabeledSample& s) {
        if (s.task == Task::msa && s.intensity && !s.emotion) {
            auto r = complete_universal_label(s, donor_pool, sim, opt);
            out.audits.push_back(r.audit);
            ++out.completed_emotion;
            UnifiedSample u{s, r.label};
            u.sample.emotion = r.label.emotion;
            out.samples.push_back(std::move(u));
        } else if (s.task == Task::erc && s.emotion && !s.intensity) {
            auto r = complete_universal_label(s, donor_pool, sim, opt);
            out.audits.push_back(r.audit);
            ++out.completed_intensity;
            UnifiedSample u{s, r.label};
            u.sample.intensity = r.label.intensity;
            out.samples.push_back(std::move(u));
        } else if (s.intensity && s.emotion) {
            ++out.already_complete;
            const Polarity pol = sample_polarity(s);
            const bool native_i = s.task == Task::msa;
            out.samples.push_back(
                {s, textcodec::make_universal_label(
                        pol, *s.intensity, *s.emotion,
                        native_i ? Provenance::original : Provenance::generated,
                        native_i ? Provenance::generated : Provenance::original)});
        } else if (!s.intensity && !s.emotion) {
            fail("build_unified_dataset: sample ", s.id, " has no label fields at all");
        } else {
            // msa with only an emotion, or erc with only an intensity
            fail("build_unified_dataset: sample ", s.id, " (", textcodec::task_name(s.task),
                 ") is missing its task-native label field");
        }
    };
    for (const auto& s : msa) process(s);
    for (const auto& s : erc) process(s);
    return out;
}

} // namespace unimse::unilabel
