#pragma once

// Vocabulary, tokenization, and the universal-label codec.
//
// A universal label is (polarity, intensity, emotion). Labels serialize to a
// fixed four-token target sequence <pol> <int> <emo> <eos>, and predictions
// decode positionally: the regression slot is position 1, the classification
// slot is position 2. Reserved tokens use namespaced surface forms
// (<pol:positive>, <int:+1.6>, <emo:joy>, ...) so corpus words can never
// collide with them in a vocabulary file.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "unimse/common.hpp"

namespace unimse::textcodec {

enum class Task { msa, erc };

inline const char* task_name(Task t) { return t == Task::msa ? "msa" : "erc"; }

enum class Polarity { positive = 0, negative = 1, neutral = 2 };

inline const char* polarity_name(Polarity p) {
    switch (p) {
        case Polarity::positive: return "positive";
        case Polarity::negative: return "negative";
        case Polarity::neutral: return "neutral";
    }
    fail("polarity_name: bad enum value");
}

// Fixed emotion inventory: the union of the supported dataset label sets, in
// sorted order. Frozen so ids are stable across every built vocabulary.
inline const std::vector<std::string>& emotion_names() {
    static const std::vector<std::string> names = {
        "anger", "angry", "disgust", "excited", "fear",
        "frustrated", "joy", "neutral", "sadness", "surprise",
    };
    return names;
}

// Reserved id layout. Everything before kReservedCount is identical in every
// vocabulary; corpus tokens start at kReservedCount.
constexpr int kPad = 0;
constexpr int kBos = 1;
constexpr int kEos = 2;
constexpr int kUnk = 3;
constexpr int kSep = 4;
constexpr int kPolarityBase = 5;  // 3 tokens: positive, negative, neutral
constexpr int kIntensityBase = 8; // 61 tokens: -3.0 .. +3.0 in steps of 0.1
constexpr int kIntensitySteps = 61;
constexpr int kEmotionBase = kIntensityBase + kIntensitySteps; // 69
inline int emotion_count() { return static_cast<int>(emotion_names().size()); }
inline int reserved_count() { return kEmotionBase + emotion_count(); }

// Intensity grid index: 0 -> -3.0, 30 -> 0.0, 60 -> +3.0.
inline int quantize_intensity(double v) {
    if (!std::isfinite(v)) fail("quantize_intensity: non-finite intensity");
    const long long tenths = std::llround(v * 10.0); // ties away from zero
    if (tenths < -30 || tenths > 30)
        fail("quantize_intensity: ", v, " outside [-3.0, +3.0]");
    return static_cast<int>(tenths) + 30;
}

inline double intensity_grid_value(int grid_index) {
    if (grid_index < 0 || grid_index >= kIntensitySteps)
        fail("intensity_grid_value: index ", grid_index, " out of range");
    return (grid_index - 30) / 10.0;
}

inline std::string intensity_surface(int grid_index) {
    const int tenths = grid_index - 30;
    const int a = std::abs(tenths);
    return str("<int:", tenths < 0 ? "-" : "+", a / 10, ".", a % 10, ">");
}

struct Vocabulary {
    std::vector<std::string> id_to_token;
    std::unordered_map<std::string, int> token_to_id;

    int size() const { return static_cast<int>(id_to_token.size()); }

    // Lowercased maximal alphanumeric runs; punctuation separates and vanishes.
    static std::vector<std::string> tokenize(const std::string& text) {
        std::vector<std::string> out;
        std::string cur;
        for (unsigned char ch : text) {
            if (std::isalnum(ch)) {
                cur.push_back(static_cast<char>(std::tolower(ch)));
            } else if (!cur.empty()) {
                out.push_back(std::move(cur));
                cur.clear();
            }
        }
        if (!cur.empty()) out.push_back(std::move(cur));
        return out;
    }

    int token_id(const std::string& tok) const {
        auto it = token_to_id.find(tok);
        return it == token_to_id.end() ? kUnk : it->second;
    }

    // Empty text encodes to an empty sequence; out-of-vocabulary words map to <unk>.
    std::vector<int> encode(const std::string& text) const {
        std::vector<int> ids;
        for (const auto& tok : tokenize(text)) ids.push_back(token_id(tok));
        return ids;
    }

    const std::string& token(int id) const {
        if (id < 0 || id >= size()) fail("vocabulary: id ", id, " out of range [0, ", size(), ")");
        return id_to_token[static_cast<std::size_t>(id)];
    }

    std::string detokenize(const std::vector<int>& ids) const {
        std::string out;
        for (std::size_t i = 0; i < ids.size(); ++i) {
            if (i) out.push_back(' ');
            out += token(ids[i]);
        }
        return out;
    }

    // -- reserved-block helpers --

    int polarity_id(Polarity p) const { return kPolarityBase + static_cast<int>(p); }

    static bool is_polarity_id(int id) { return id >= kPolarityBase && id < kPolarityBase + 3; }

    static Polarity polarity_from_id(int id) {
        if (!is_polarity_id(id)) fail("polarity_from_id: ", id, " is not a polarity token");
        return static_cast<Polarity>(id - kPolarityBase);
    }

    int intensity_id(double v) const { return kIntensityBase + quantize_intensity(v); }

    static bool is_intensity_id(int id) {
        return id >= kIntensityBase && id < kIntensityBase + kIntensitySteps;
    }

    static double intensity_value(int id) {
        if (!is_intensity_id(id)) fail("intensity_value: ", id, " is not an intensity token");
        return intensity_grid_value(id - kIntensityBase);
    }

    int emotion_id(const std::string& emotion) const {
        const auto& names = emotion_names();
        for (int i = 0; i < static_cast<int>(names.size()); ++i)
            if (names[i] == emotion) return kEmotionBase + i;
        fail("emotion_id: unknown emotion '", emotion, "'");
    }

    static bool is_emotion_id(int id) {
        return id >= kEmotionBase && id < kEmotionBase + static_cast<int>(emotion_names().size());
    }

    static const std::string& emotion_from_id(int id) {
        if (!is_emotion_id(id)) fail("emotion_from_id: ", id, " is not an emotion token");
        return emotion_names()[static_cast<std::size_t>(id - kEmotionBase)];
    }

    // One token per line, LF endings; the line number is the id. The reserved
    // block leads, so the file is bit-exact reproducible across platforms.
    void save(const std::string& path) const {
        std::ofstream out(path, std::ios::binary);
        if (!out) fail("vocabulary: cannot write ", path);
        for (const auto& tok : id_to_token) out << tok << '\n';
        if (!out) fail("vocabulary: write failed for ", path);
    }

    static Vocabulary load(const std::string& path);
};

inline std::vector<std::string> reserved_tokens() {
    std::vector<std::string> toks = {"<pad>", "<bos>", "<eos>", "<unk>", "<sep>",
                                     "<pol:positive>", "<pol:negative>", "<pol:neutral>"};
    for (int i = 0; i < kIntensitySteps; ++i) toks.push_back(intensity_surface(i));
    for (const auto& e : emotion_names()) toks.push_back(str("<emo:", e, ">"));
    return toks;
}

namespace detail {

inline Vocabulary with_reserved() {
    Vocabulary v;
    v.id_to_token = reserved_tokens();
    for (int i = 0; i < v.size(); ++i) v.token_to_id[v.id_to_token[static_cast<std::size_t>(i)]] = i;
    return v;
}

} // namespace detail

// Frequency-descending, ties lexicographic. Tokens below min_freq are dropped
// (they encode as <unk>).
inline Vocabulary build_vocab(const std::vector<std::string>& corpus, int min_freq = 1) {
    if (corpus.empty()) fail("build_vocab: empty corpus");
    std::unordered_map<std::string, std::int64_t> freq;
    for (const auto& text : corpus)
        for (const auto& tok : Vocabulary::tokenize(text)) ++freq[tok];
    std::vector<std::pair<std::string, std::int64_t>> items(freq.begin(), freq.end());
    std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    Vocabulary v = detail::with_reserved();
    for (const auto& [tok, n] : items) {
        if (n < min_freq) continue;
        v.token_to_id[tok] = v.size();
        v.id_to_token.push_back(tok);
    }
    return v;
}

inline Vocabulary Vocabulary::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail("vocabulary: cannot read ", path);
    Vocabulary v;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        v.token_to_id[line] = v.size();
        v.id_to_token.push_back(line);
    }
    const auto expected = reserved_tokens();
    if (v.id_to_token.size() < expected.size())
        fail("vocabulary: ", path, " is missing the reserved block (", v.size(), " tokens)");
    for (std::size_t i = 0; i < expected.size(); ++i)
        if (v.id_to_token[i] != expected[i])
            fail("vocabulary: ", path, " reserved token ", i, " is '", v.id_to_token[i],
                 "', expected '", expected[i], "'");
    return v;
}

// ---- universal labels ----

enum class Provenance { original, generated };

inline const char* provenance_name(Provenance p) {
    return p == Provenance::original ? "original" : "generated";
}

struct UniversalLabel {
    Polarity polarity = Polarity::neutral;
    double intensity = 0.0;   // quantized to the 0.1 grid
    std::string emotion = "neutral";
    Provenance intensity_provenance = Provenance::original;
    Provenance emotion_provenance = Provenance::original;
};

// Validates range and quantizes intensity; checks polarity/sign agreement,
// which must hold whenever the intensity is an original annotation.
inline UniversalLabel make_universal_label(Polarity pol, double intensity, std::string emotion,
                                           Provenance ip = Provenance::original,
                                           Provenance ep = Provenance::original) {
    UniversalLabel ul;
    ul.polarity = pol;
    ul.intensity = intensity_grid_value(quantize_intensity(intensity));
    ul.emotion = std::move(emotion);
    ul.intensity_provenance = ip;
    ul.emotion_provenance = ep;
    if (ip == Provenance::original) {
        const bool ok = (ul.intensity > 0.0 && pol == Polarity::positive) ||
                        (ul.intensity < 0.0 && pol == Polarity::negative) ||
                        (ul.intensity == 0.0 && pol == Polarity::neutral);
        if (!ok)
            fail("make_universal_label: intensity ", ul.intensity, " inconsistent with polarity ",
                 polarity_name(pol));
    }
    return ul;
}

// Always exactly four ids: <pol> <int> <emo> <eos>.
inline std::vector<int> serialize_ul(const UniversalLabel& ul, const Vocabulary& v) {
    return {v.polarity_id(ul.polarity), v.intensity_id(ul.intensity), v.emotion_id(ul.emotion), kEos};
}

struct Prediction {
    Task task = Task::msa;
    Polarity polarity = Polarity::neutral;
    double intensity = 0.0;
    std::string emotion = "neutral";
    bool well_formed = false;
};

// Positional decode of a generated sequence (the tokens after <bos>).
// Content stops at the first <eos>. A sequence is malformed when it has fewer
// than three content tokens or the task's slot holds the wrong token class;
// malformed predictions fall back to 0.0 / "neutral".
inline Prediction decode_prediction(const std::vector<int>& ids, Task task, const Vocabulary& v) {
    Prediction p;
    p.task = task;
    std::vector<int> content;
    for (int id : ids) {
        if (id == kEos) break;
        (void)v.token(id); // range check
        content.push_back(id);
    }
    const bool enough = content.size() >= 3;
    if (enough && Vocabulary::is_polarity_id(content[0]))
        p.polarity = Vocabulary::polarity_from_id(content[0]);
    if (task == Task::msa) {
        p.well_formed = enough && Vocabulary::is_intensity_id(content[1]);
        if (p.well_formed) p.intensity = Vocabulary::intensity_value(content[1]);
        if (enough && Vocabulary::is_emotion_id(content[2])) p.emotion = Vocabulary::emotion_from_id(content[2]);
    } else {
        p.well_formed = enough && Vocabulary::is_emotion_id(content[2]);
        if (p.well_formed) p.emotion = Vocabulary::emotion_from_id(content[2]);
        if (enough && Vocabulary::is_intensity_id(content[1])) p.intensity = Vocabulary::intensity_value(content[1]);
    }
    return p;
}

} // namespace unimse::textcodec
