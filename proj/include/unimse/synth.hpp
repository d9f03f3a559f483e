#pragma once

// Synthetic dataset generator. Each sample is drawn from a small generative
// model with three independent latents:
//
//   z_t in {positive, negative, neutral}  -> a lexical cue word in the text
//   z_a in {0, 1}                         -> a mean shift on acoustic features
//   z_v in {0, 1}                         -> a mean shift on visual features
//
// Labels are a deterministic function of the latents, so every modality
// carries information no other modality has:
//
//   intensity = sign(z_t) * (1.0 + 0.5*z_a + 1.0*z_v), 0.0 when neutral
//   emotion   = [joy, excited][z_a] when positive,
//               [sadness, angry][z_a] when negative, neutral otherwise
//
// signal_strength scales both the cue-planting probability and the feature
// mean shifts; at 0 no modality carries any label information. In the default
// complete-labels mode every record carries both label fields as original
// annotations. In paired mode each sample instead yields a regression/
// classification twin pair sharing the exact same text (including a unique
// pairtag token), each twin carrying only its task-native field; the twin is
// the unambiguous best completion donor by construction.

#include <cstdint>
#include <filesystem>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "unimse/common.hpp"
#include "unimse/datapipe.hpp"
#include "unimse/rng.hpp"
#include "unimse/textcodec.hpp"

namespace unimse::synth {

using datapipe::FeatureMatrix;
using datapipe::ManifestRecord;
using textcodec::Polarity;
using textcodec::Task;

struct SynthConfig {
    int msa_train = 0, msa_valid = 0, msa_test = 0;
    int erc_train = 0, erc_valid = 0, erc_test = 0;
    int acoustic_dim = 6;
    int visual_dim = 6;
    int min_feature_len = 4, max_feature_len = 10;
    int min_filler_words = 3, max_filler_words = 7;
    double signal_strength = 1.0; // scales cue probability and feature shifts
    double feature_noise = 1.0;   // stddev of feature values around their mean
    double acoustic_shift = 2.0;  // mean added to acoustic features when z_a = 1
    double visual_shift = 2.0;    // mean added to visual features when z_v = 1
    int turns_per_dialogue = 1;   // classification records per dialogue
    bool paired = false;          // twin-pair mode; pair counts come from msa_*
    double p_positive = 1.0 / 3.0;
    double p_negative = 1.0 / 3.0;
    std::uint64_t seed = 1;
};

namespace detail {

inline const std::vector<std::string>& filler_words() {
    static const std::vector<std::string> w = {
        "the",   "a",     "it",      "this",  "that",  "there", "here",  "now",
        "then",  "today", "again",   "still", "quite", "rather", "about", "around",
        "maybe", "perhaps", "just",  "very",  "so",    "well",  "okay",  "right"};
    return w;
}

inline const std::vector<std::string>& cue_words(Polarity p) {
    static const std::vector<std::string> pos = {"wonderful", "amazing", "delightful"};
    static const std::vector<std::string> neg = {"terrible", "awful", "horrible"};
    static const std::vector<std::string> neu = {"ordinary", "average", "typical"};
    switch (p) {
        case Polarity::positive: return pos;
        case Polarity::negative: return neg;
        default: return neu;
    }
}

struct Latents {
    Polarity z_t = Polarity::neutral;
    int z_a = 0;
    int z_v = 0;
};

inline double latent_intensity(const Latents& z) {
    if (z.z_t == Polarity::neutral) return 0.0;
    const double mag = 1.0 + 0.5 * z.z_a + 1.0 * z.z_v;
    return z.z_t == Polarity::positive ? mag : -mag;
}

inline std::string latent_emotion(const Latents& z) {
    if (z.z_t == Polarity::neutral) return "neutral";
    if (z.z_t == Polarity::positive) return z.z_a == 0 ? "joy" : "excited";
    return z.z_a == 0 ? "sadness" : "angry";
}

inline void validate(const SynthConfig& c) {
    const int counts[] = {c.msa_train, c.msa_valid, c.msa_test,
                          c.erc_train, c.erc_valid, c.erc_test};
    for (int n : counts)
        if (n < 0) fail("synthesize_dataset: negative sample count");
    if (c.acoustic_dim < 1 || c.visual_dim < 1) fail("synthesize_dataset: feature dims must be >= 1");
    if (c.min_feature_len < 1 || c.max_feature_len < c.min_feature_len)
        fail("synthesize_dataset: bad feature length range [", c.min_feature_len, ", ",
             c.max_feature_len, "]");
    if (c.min_filler_words < 1 || c.max_filler_words < c.min_filler_words)
        fail("synthesize_dataset: bad filler word range [", c.min_filler_words, ", ",
             c.max_filler_words, "]");
    if (c.signal_strength < 0.0) fail("synthesize_dataset: signal strength must be >= 0");
    if (c.feature_noise <= 0.0) fail("synthesize_dataset: feature noise must be > 0");
    if (c.turns_per_dialogue < 1) fail("synthesize_dataset: turns per dialogue must be >= 1");
    if (c.p_positive < 0.0 || c.p_negative < 0.0 || c.p_positive + c.p_negative > 1.0)
        fail("synthesize_dataset: polarity prior must be a distribution, got p_positive=",
             c.p_positive, " p_negative=", c.p_negative);
}

} // namespace detail

// Generates a dataset under out_dir (manifest.jsonl plus a features/
// subdirectory) and returns the manifest path. Fully deterministic in the
// config: one RNG stream derived from the seed drives every draw in a fixed
// order.
inline std::string synthesize_dataset(const SynthConfig& cfg, const std::string& out_dir) {
    detail::validate(cfg);
    namespace fs = std::filesystem;
    const fs::path base(out_dir);
    fs::create_directories(base / "features");

    Rng rng(derive_seed(cfg.seed, SeedStream::synth));
    std::vector<ManifestRecord> records;
    int pairtag_counter = 0;

    auto draw_latents = [&]() {
        detail::Latents z;
        const double u = rng.uniform();
        z.z_t = u < cfg.p_positive                  ? Polarity::positive
                : u < cfg.p_positive + cfg.p_negative ? Polarity::negative
                                                      : Polarity::neutral;
        z.z_a = rng.range(0, 1);
        z.z_v = rng.range(0, 1);
        return z;
    };

    auto draw_text = [&](const detail::Latents& z, bool tagged) {
        const auto& fillers = detail::filler_words();
        const int n = rng.range(cfg.min_filler_words, cfg.max_filler_words);
        std::vector<std::string> words;
        for (int i = 0; i < n; ++i)
            words.push_back(fillers[static_cast<std::size_t>(
                rng.range(0, static_cast<int>(fillers.size()) - 1))]);
        const auto& cues = detail::cue_words(z.z_t);
        const std::string cue =
            cues[static_cast<std::size_t>(rng.range(0, static_cast<int>(cues.size()) - 1))];
        const auto pos = static_cast<std::ptrdiff_t>(rng.range(0, static_cast<int>(words.size())));
        const bool plant = rng.uniform() < std::min(1.0, cfg.signal_strength);
        if (plant) words.insert(words.begin() + pos, cue);
        if (tagged) {
            std::ostringstream tag;
            tag << "pairtag" << std::setw(6) << std::setfill('0') << pairtag_counter;
            words.push_back(tag.str());
        }
        std::string text;
        for (std::size_t i = 0; i < words.size(); ++i) {
            if (i) text += ' ';
            text += words[i];
        }
        return text;
    };

    auto draw_features = [&](int bit, int dim, double shift) {
        FeatureMatrix m;
        m.rows = rng.range(cfg.min_feature_len, cfg.max_feature_len);
        m.cols = dim;
        const double mean = bit * shift * cfg.signal_strength;
        m.data.resize(static_cast<std::size_t>(m.rows) * m.cols);
        for (auto& v : m.data) v = rng.normal(mean, cfg.feature_noise);
        return m;
    };

    auto emit = [&](Task task, const std::string& split, int index, const detail::Latents& z,
                    const std::string& text) {
        ManifestRecord r;
        std::ostringstream id;
        id << "syn_" << textcodec::task_name(task) << "_" << split << "_" << std::setw(4)
           << std::setfill('0') << index;
        r.sample.id = id.str();
        r.sample.task = task;
        r.sample.split = split;
        r.sample.text = text;
        const double intensity = detail::latent_intensity(z);
        const std::string emotion = detail::latent_emotion(z);
        const bool native_intensity = task == Task::msa;
        if (cfg.paired) {
            // Twins carry only their native field; completion fills the rest.
            if (native_intensity)
                r.sample.intensity = intensity;
            else
                r.sample.emotion = emotion;
        } else {
            r.sample.intensity = intensity;
            r.sample.emotion = emotion;
            r.intensity_provenance = textcodec::Provenance::original;
            r.emotion_provenance = textcodec::Provenance::original;
        }
        r.acoustic_path = str("features/", r.sample.id, "_a.umse");
        r.visual_path = str("features/", r.sample.id, "_v.umse");
        datapipe::write_features((base / r.acoustic_path).string(),
                                 draw_features(z.z_a, cfg.acoustic_dim, cfg.acoustic_shift));
        datapipe::write_features((base / r.visual_path).string(),
                                 draw_features(z.z_v, cfg.visual_dim, cfg.visual_shift));
        records.push_back(std::move(r));
    };

    const std::vector<std::pair<std::string, std::pair<int, int>>> splits = {
        {"train", {cfg.msa_train, cfg.erc_train}},
        {"valid", {cfg.msa_valid, cfg.erc_valid}},
        {"test", {cfg.msa_test, cfg.erc_test}},
    };

    if (cfg.paired) {
        // Pair counts come from the regression-side numbers; each pair yields
        // one record per task with identical tagged text.
        for (const auto& [split, counts] : splits) {
            for (int i = 0; i < counts.first; ++i) {
                const auto z = draw_latents();
                const std::string text = draw_text(z, true);
                emit(Task::msa, split, i, z, text);
                emit(Task::erc, split, i, z, text);
                ++pairtag_counter;
            }
        }
    } else {
        for (const auto& [split, counts] : splits)
            for (int i = 0; i < counts.first; ++i) {
                const auto z = draw_latents();
                emit(Task::msa, split, i, z, draw_text(z, false));
            }
        for (const auto& [split, counts] : splits) {
            std::vector<std::size_t> dialogue; // indices of the current dialogue
            auto flush = [&]() {
                for (std::size_t k = 0; k < dialogue.size(); ++k) {
                    auto& rec = records[dialogue[k]];
                    for (std::size_t j = (k >= 2 ? k - 2 : 0); j < k; ++j)
                        rec.prev_context.push_back(records[dialogue[j]].sample.text);
                    for (std::size_t j = k + 1; j < std::min(dialogue.size(), k + 3); ++j)
                        rec.next_context.push_back(records[dialogue[j]].sample.text);
                }
                dialogue.clear();
            };
            for (int i = 0; i < counts.second; ++i) {
                const auto z = draw_latents();
                emit(Task::erc, split, i, z, draw_text(z, false));
                dialogue.push_back(records.size() - 1);
                if (static_cast<int>(dialogue.size()) == cfg.turns_per_dialogue) flush();
            }
            flush();
        }
    }

    const std::string manifest = (base / "manifest.jsonl").string();
    datapipe::write_manifest(manifest, records);
    return manifest;
}

} // namespace unimse::synth
