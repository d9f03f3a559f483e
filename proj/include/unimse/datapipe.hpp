#pragma once

// Data ingestion: the binary feature format, line-delimited manifests,
// dialogue-context formalization, and deterministic batching.
//
// Feature files ("UMSE" container): magic "UMSE", one version byte (1),
// uint32 rows, uint32 cols (little endian), then rows*cols float32 values in
// row-major order. Values are widened to double on load. Manifests are UTF-8
// JSON-lines, one record per line; feature paths are relative to the
// manifest's own directory.

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "unimse/common.hpp"
#include "unimse/rng.hpp"
#include "unimse/textcodec.hpp"
#include "unimse/unilabel.hpp"

namespace unimse::datapipe {

using textcodec::Task;
using unilabel::LabeledSample;

// ---- binary feature container ----

struct FeatureMatrix {
    int rows = 0;
    int cols = 0;
    std::vector<double> data; // row-major

    double at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }
};

namespace detail {

constexpr char kFeatureMagic[4] = {'U', 'M', 'S', 'E'};
constexpr std::uint8_t kFeatureVersion = 1;

inline void put_u32(std::string& buf, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint32_t get_u32(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

} // namespace detail

// Values are stored as float32; callers that need write/read idempotence
// should round through float before handing data in (the generator does).
inline void write_features(const std::string& path, const FeatureMatrix& m) {
    if (m.rows <= 0 || m.cols <= 0) fail("write_features: empty matrix for ", path);
    if (m.data.size() != static_cast<std::size_t>(m.rows) * m.cols)
        fail("write_features: data size mismatch for ", path);
    std::string buf;
    buf.append(detail::kFeatureMagic, 4);
    buf.push_back(static_cast<char>(detail::kFeatureVersion));
    detail::put_u32(buf, static_cast<std::uint32_t>(m.rows));
    detail::put_u32(buf, static_cast<std::uint32_t>(m.cols));
    for (double v : m.data) {
        const float f = static_cast<float>(v);
        char bytes[4];
        std::memcpy(bytes, &f, 4);
        buf.append(bytes, 4);
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) fail("write_features: cannot open ", path);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) fail("write_features: write failed for ", path);
}

inline FeatureMatrix read_features(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail("read_features: cannot open ", path);
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (buf.size() < 13) fail("read_features: ", path, " truncated before header");
    if (std::memcmp(buf.data(), detail::kFeatureMagic, 4) != 0)
        fail("read_features: ", path, " has wrong magic (not a feature file)");
    const auto version = static_cast<std::uint8_t>(buf[4]);
    if (version != detail::kFeatureVersion)
        fail("read_features: ", path, " has unsupported version ", static_cast<int>(version));
    const auto* p = reinterpret_cast<const unsigned char*>(buf.data());
    FeatureMatrix m;
    const std::uint32_t rows = detail::get_u32(p + 5);
    const std::uint32_t cols = detail::get_u32(p + 9);
    if (rows == 0 || cols == 0 || rows > 10'000'000u || cols > 10'000'000u)
        fail("read_features: ", path, " has implausible shape ", rows, "x", cols);
    const std::size_t expect = 13 + static_cast<std::size_t>(rows) * cols * 4;
    if (buf.size() != expect)
        fail("read_features: ", path, " has ", buf.size(), " bytes, expected ", expect);
    m.rows = static_cast<int>(rows);
    m.cols = static_cast<int>(cols);
    m.data.resize(static_cast<std::size_t>(rows) * cols);
    for (std::size_t i = 0; i < m.data.size(); ++i) {
        float f;
        std::memcpy(&f, buf.data() + 13 + i * 4, 4);
        if (!std::isfinite(f)) fail("read_features: ", path, " has non-finite value at index ", i);
        m.data[i] = static_cast<double>(f);
    }
    return m;
}

// ---- manifests ----

struct ManifestRecord {
    LabeledSample sample;
    std::vector<std::string> prev_context; // oldest first, at most 2
    std::vector<std::string> next_context; // nearest first, at most 2
    std::string acoustic_path;
    std::string visual_path;
    // Provenance is recorded once a manifest is unified; absent on raw manifests.
    std::optional<textcodec::Provenance> intensity_provenance;
    std::optional<textcodec::Provenance> emotion_provenance;
};

namespace detail {

inline nlohmann::ordered_json record_to_json(const ManifestRecord& r) {
    nlohmann::ordered_json j;
    j["id"] = r.sample.id;
    j["task"] = textcodec::task_name(r.sample.task);
    j["split"] = r.sample.split;
    j["text"] = r.sample.text;
    if (!r.prev_context.empty()) j["prev"] = r.prev_context;
    if (!r.next_context.empty()) j["next"] = r.next_context;
    j["acoustic"] = r.acoustic_path;
    j["visual"] = r.visual_path;
    if (r.sample.intensity) j["intensity"] = *r.sample.intensity;
    if (r.sample.emotion) j["emotion"] = *r.sample.emotion;
    if (r.intensity_provenance)
        j["intensity_provenance"] = textcodec::provenance_name(*r.intensity_provenance);
    if (r.emotion_provenance)
        j["emotion_provenance"] = textcodec::provenance_name(*r.emotion_provenance);
    return j;
}

inline textcodec::Provenance provenance_from(const std::string& s, const std::string& id) {
    if (s == "original") return textcodec::Provenance::original;
    if (s == "generated") return textcodec::Provenance::generated;
    fail("manifest record ", id, ": bad provenance '", s, "'");
}

} // namespace detail

inline void write_manifest(const std::string& path, const std::vector<ManifestRecord>& records) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail("write_manifest: cannot open ", path);
    for (const auto& r : records) out << detail::record_to_json(r).dump() << '\n';
    if (!out) fail("write_manifest: write failed for ", path);
}

// Parses and validates one manifest. All record-level problems are gathered
// and reported together, so a broken manifest surfaces every issue at once.
inline std::vector<ManifestRecord> load_manifest(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail("load_manifest: cannot open ", path);
    std::vector<ManifestRecord> records;
    std::vector<std::string> problems;
    std::set<std::string> seen_ids;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const std::exception& e) {
            problems.push_back(str("line ", lineno, ": not valid JSON (", e.what(), ")"));
            continue;
        }
        ManifestRecord r;
        try {
            r.sample.id = j.at("id").get<std::string>();
            const std::string task = j.at("task").get<std::string>();
            if (task == "msa")
                r.sample.task = Task::msa;
            else if (task == "erc")
                r.sample.task = Task::erc;
            else
                fail("unknown task '", task, "'");
            r.sample.split = j.at("split").get<std::string>();
            if (r.sample.split != "train" && r.sample.split != "valid" && r.sample.split != "test")
                fail("unknown split '", r.sample.split, "'");
            r.sample.text = j.at("text").get<std::string>();
            if (j.contains("prev")) r.prev_context = j["prev"].get<std::vector<std::string>>();
            if (j.contains("next")) r.next_context = j["next"].get<std::vector<std::string>>();
            if (r.prev_context.size() > 2 || r.next_context.size() > 2)
                fail("more than two context turns on a side");
            r.acoustic_path = j.at("acoustic").get<std::string>();
            r.visual_path = j.at("visual").get<std::string>();
            if (j.contains("intensity")) {
                r.sample.intensity = j["intensity"].get<double>();
                (void)textcodec::quantize_intensity(*r.sample.intensity); // range check
            }
            if (j.contains("emotion")) {
                r.sample.emotion = j["emotion"].get<std::string>();
                (void)unilabel::polarity_of_emotion(*r.sample.emotion); // known-emotion check
            }
            if (j.contains("intensity_provenance"))
                r.intensity_provenance =
                    detail::provenance_from(j["intensity_provenance"].get<std::string>(), r.sample.id);
            if (j.contains("emotion_provenance"))
                r.emotion_provenance =
                    detail::provenance_from(j["emotion_provenance"].get<std::string>(), r.sample.id);
            if (r.sample.task == Task::msa && !r.sample.intensity)
                fail("msa record without intensity");
            if (r.sample.task == Task::erc && !r.sample.emotion) fail("erc record without emotion");
            if (!seen_ids.insert(r.sample.id).second) fail("duplicate id");
        } catch (const std::exception& e) {
            problems.push_back(str("line ", lineno, " (id ",
                                   r.sample.id.empty() ? "?" : r.sample.id, "): ", e.what()));
            continue;
        }
        records.push_back(std::move(r));
    }
    if (!problems.empty()) {
        std::string msg = str("load_manifest: ", path, " has ", problems.size(), " bad record(s):");
        const std::size_t shown = std::min<std::size_t>(problems.size(), 20);
        for (std::size_t i = 0; i < shown; ++i) msg += "\n  " + problems[i];
        if (shown < problems.size()) msg += str("\n  ... and ", problems.size() - shown, " more");
        throw Error(msg);
    }
    return records;
}

// ---- dataset: manifest + features ----

struct Dataset {
    std::vector<ManifestRecord> records;
    std::vector<FeatureMatrix> acoustic; // parallel to records
    std::vector<FeatureMatrix> visual;
    int acoustic_dim = 0;
    int visual_dim = 0;
};

inline Dataset load_dataset(const std::string& manifest_path) {
    Dataset ds;
    ds.records = load_manifest(manifest_path);
    const auto base = std::filesystem::path(manifest_path).parent_path();
    std::vector<std::string> problems;
    for (const auto& r : ds.records) {
        try {
            FeatureMatrix a = read_features((base / r.acoustic_path).string());
            FeatureMatrix v = read_features((base / r.visual_path).string());
            if (ds.acoustic_dim == 0) ds.acoustic_dim = a.cols;
            if (ds.visual_dim == 0) ds.visual_dim = v.cols;
            if (a.cols != ds.acoustic_dim)
                fail("acoustic dim ", a.cols, " differs from dataset dim ", ds.acoustic_dim);
            if (v.cols != ds.visual_dim)
                fail("visual dim ", v.cols, " differs from dataset dim ", ds.visual_dim);
            ds.acoustic.push_back(std::move(a));
            ds.visual.push_back(std::move(v));
        } catch (const std::exception& e) {
            problems.push_back(str("id ", r.sample.id, ": ", e.what()));
        }
    }
    if (!problems.empty()) {
        std::string msg = str("load_dataset: ", manifest_path, " has ", problems.size(),
                              " feature problem(s):");
        const std::size_t shown = std::min<std::size_t>(problems.size(), 20);
        for (std::size_t i = 0; i < shown; ++i) msg += "\n  " + problems[i];
        if (shown < problems.size()) msg += str("\n  ... and ", problems.size() - shown, " more");
        throw Error(msg);
    }
    return ds;
}

// Subset view by split or task, preserving record order.
inline Dataset filter_dataset(const Dataset& ds, const std::string& split,
                              std::optional<Task> task = std::nullopt) {
    Dataset out;
    out.acoustic_dim = ds.acoustic_dim;
    out.visual_dim = ds.visual_dim;
    for (std::size_t i = 0; i < ds.records.size(); ++i) {
        if (!split.empty() && ds.records[i].sample.split != split) continue;
        if (task && ds.records[i].sample.task != *task) continue;
        out.records.push_back(ds.records[i]);
        out.acoustic.push_back(ds.acoustic[i]);
        out.visual.push_back(ds.visual[i]);
    }
    return out;
}

// ---- context formalization ----

struct FormalizedText {
    std::vector<std::string> tokens;
    std::vector<int> segments; // 1 exactly on the current utterance's tokens
};

// Builds the model-facing text for utterance i of a dialogue. Classification
// samples see a five-turn window [i-2, i+2] with <sep> between turns and
// segment id 1 on the current turn only; regression samples see the
// utterance alone under all-1 segment ids. Missing boundary turns are
// omitted, never padded.
inline FormalizedText formalize_context(const std::vector<std::string>& dialogue, int i, Task task) {
    if (i < 0 || i >= static_cast<int>(dialogue.size()))
        fail("formalize_context: index ", i, " out of dialogue size ", dialogue.size());
    FormalizedText out;
    if (task == Task::msa) {
        for (auto& tok : textcodec::Vocabulary::tokenize(dialogue[static_cast<std::size_t>(i)])) {
            out.tokens.push_back(std::move(tok));
            out.segments.push_back(1);
        }
        return out;
    }
    const int lo = std::max(0, i - 2);
    const int hi = std::min(static_cast<int>(dialogue.size()) - 1, i + 2);
    for (int j = lo; j <= hi; ++j) {
        if (j > lo) {
            out.tokens.push_back("<sep>");
            out.segments.push_back(0);
        }
        for (auto& tok : textcodec::Vocabulary::tokenize(dialogue[static_cast<std::size_t>(j)])) {
            out.tokens.push_back(std::move(tok));
            out.segments.push_back(j == i ? 1 : 0);
        }
    }
    return out;
}

// ---- batching ----

// One model-ready sample. Token ids are padded to the batch's common length
// with <pad> / segment 0; true_len marks where padding starts. Feature
// matrices keep their true lengths (the model consumes rows [0, len)).
struct FormalizedInput {
    std::string id;
    Task task = Task::msa;
    std::vector<int> token_ids;
    std::vector<int> segment_ids;
    int true_len = 0;
    const FeatureMatrix* acoustic = nullptr;
    const FeatureMatrix* visual = nullptr;
    std::vector<int> target_ids; // <pol> <int> <emo> <eos>
    textcodec::UniversalLabel label;
};

struct Batch {
    std::vector<FormalizedInput> items;
    int text_len = 0; // common padded length
};

inline textcodec::UniversalLabel record_label(const ManifestRecord& r) {
    const auto& s = r.sample;
    if (!s.intensity || !s.emotion)
        fail("record ", s.id, " is not unified (missing ",
             !s.intensity ? "intensity" : "emotion", "); run the preparation step first");
    const auto pol = unilabel::sample_polarity(s);
    const bool native_i = s.task == Task::msa;
    using textcodec::Provenance;
    const Provenance ip = r.intensity_provenance.value_or(native_i ? Provenance::original
                                                                   : Provenance::generated);
    const Provenance ep = r.emotion_provenance.value_or(native_i ? Provenance::generated
                                                                 : Provenance::original);
    return textcodec::make_universal_label(pol, *s.intensity, *s.emotion, ip, ep);
}

// Formalizes one record against a vocabulary. Pathological empty text maps to
// a single <unk> so downstream shapes stay non-degenerate.
inline FormalizedInput formalize_record(const ManifestRecord& r, const FeatureMatrix& acoustic,
                                        const FeatureMatrix& visual,
                                        const textcodec::Vocabulary& vocab, int max_text_len) {
    std::vector<std::string> dialogue = r.prev_context;
    const int idx = static_cast<int>(dialogue.size());
    dialogue.push_back(r.sample.text);
    dialogue.insert(dialogue.end(), r.next_context.begin(), r.next_context.end());
    FormalizedText ft = formalize_context(dialogue, idx, r.sample.task);

    FormalizedInput fi;
    fi.id = r.sample.id;
    fi.task = r.sample.task;
    for (std::size_t t = 0; t < ft.tokens.size(); ++t) {
        fi.token_ids.push_back(vocab.token_id(ft.tokens[t]));
        fi.segment_ids.push_back(ft.segments[t]);
    }
    if (fi.token_ids.empty()) {
        fi.token_ids.push_back(textcodec::kUnk);
        fi.segment_ids.push_back(1);
    }
    if (max_text_len > 0 && static_cast<int>(fi.token_ids.size()) > max_text_len) {
        fi.token_ids.resize(static_cast<std::size_t>(max_text_len));
        fi.segment_ids.resize(static_cast<std::size_t>(max_text_len));
    }
    fi.true_len = static_cast<int>(fi.token_ids.size());
    fi.acoustic = &acoustic;
    fi.visual = &visual;
    fi.label = record_label(r);
    fi.target_ids = textcodec::serialize_ul(fi.label, vocab);
    return fi;
}

// Deterministic batch sequence over a dataset: a seeded shuffle of record
// order, groups of `batch_size`, the final partial batch kept. Text is padded
// per batch to the longest member.
inline std::vector<Batch> batch_iter(const Dataset& ds, const textcodec::Vocabulary& vocab,
                                     int batch_size, std::uint64_t shuffle_seed, bool with_cl,
                                     bool shuffle = true, int max_text_len = 0) {
    if (batch_size < 1) fail("batch_iter: batch size must be positive");
    if (with_cl && batch_size < 2)
        fail("batch_iter: contrastive learning needs batch size >= 2, got ", batch_size);
    std::vector<std::size_t> order(ds.records.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    if (shuffle) {
        Rng rng(shuffle_seed);
        rng.shuffle(order);
    }
    std::vector<Batch> batches;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(batch_size)) {
        Batch b;
        const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(batch_size));
        for (std::size_t k = start; k < end; ++k) {
            const std::size_t i = order[k];
            b.items.push_back(
                formalize_record(ds.records[i], ds.acoustic[i], ds.visual[i], vocab, max_text_len));
            b.text_len = std::max(b.text_len, b.items.back().true_len);
        }
        for (auto& item : b.items) {
            while (static_cast<int>(item.token_ids.size()) < b.text_len) {
                item.token_ids.push_back(textcodec::kPad);
                item.segment_ids.push_back(0);
            }
        }
        batches.push_back(std::move(b));
    }
    return batches;
}

// Corpus texts for vocabulary building: every record's text (context turns in
// a dialogue are other records' texts, so they are covered).
inline std::vector<std::string> corpus_texts(const Dataset& ds) {
    std::vector<std::string> out;
    out.reserve(ds.records.size());
    for (const auto& r : ds.records) out.push_back(r.sample.text);
    return out;
}

} // namespace unimse::datapipe
