#pragma once

// Run configuration: a flat, schema-validated key-value space covering the
// model dimensions, optimizer settings, ablation switches, and data source,
// with two named presets and JSON persistence of the effective settings.
//
// Feature input widths and the vocabulary size are not configuration; they
// come from the data and are recorded in checkpoints separately.

#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "unimse/common.hpp"

namespace unimse::config {

// Defaults are the desk-scale preset: small enough to train, gradient-check,
// and overfit in seconds on one core.
struct RunConfig {
    // model dimensions
    int d_t = 32;          // text / fusion width
    int enc_layers = 2;
    int dec_layers = 2;
    int heads = 4;
    int d_ff = 64;
    int d_a = 16;          // acoustic recurrent state width
    int d_v = 16;          // visual recurrent state width
    int n_f = 2;           // encoder layers carrying fusion adapters
    int n_cl = 2;          // adapter layers contributing contrastive terms
    int d_c = 16;          // contrastive projection width
    int len_common = 8;    // shared sequence length for contrastive pooling
    int k_a = 1;           // conv kernel sizes for the three projections
    int k_v = 1;
    int k_f = 1;
    int bottleneck = 16;   // adapter down-projection width
    int max_text_len = 64;
    int max_gen_len = 8;
    double dropout = 0.0;

    // optimization
    std::string optimizer = "adam"; // or "sgd"
    double lr_backbone = 3e-4;
    double lr_main = 1e-4;
    double lr_pmf = 1e-4;
    int batch_size = 8;
    int epochs = 10;
    std::uint64_t seed = 1;
    double alpha = 0.5; // weight of the text-acoustic contrastive sum
    double beta = 0.5;  // weight of the text-visual contrastive sum
    double tau = 1.0;   // contrastive temperature
    int valid_every = 1; // epochs between validation passes (0 disables)

    // ablation switches
    bool no_pmf = false;
    bool no_cl = false;
    std::string drop_modality; // "", "a", "v", or "av"

    // data source: a manifest path, or synthetic generation when empty
    std::string data_manifest;
    int synth_msa_train = 0;
    int synth_msa_valid = 0;
    int synth_msa_test = 0;
    int synth_erc_train = 0;
    int synth_erc_valid = 0;
    int synth_erc_test = 0;
    int synth_acoustic_dim = 6;
    int synth_visual_dim = 6;
    double synth_signal = 1.0;
    double synth_noise = 1.0;

    std::string outdir = "out";
};

namespace detail {

struct FieldDef {
    std::string key;
    std::function<nlohmann::json(const RunConfig&)> get;
    std::function<void(RunConfig&, const nlohmann::json&)> set_json;
    std::function<void(RunConfig&, const std::string&)> set_str;
};

inline FieldDef int_field(const std::string& key, int RunConfig::*member) {
    return {key, [member](const RunConfig& c) { return nlohmann::json(c.*member); },
            [key, member](RunConfig& c, const nlohmann::json& v) {
                if (!v.is_number_integer())
                    fail("config: key '", key, "' expects an integer, got ", v.dump());
                c.*member = v.get<int>();
            },
            [key, member](RunConfig& c, const std::string& s) {
                try {
                    std::size_t used = 0;
                    const int parsed = std::stoi(s, &used);
                    if (used != s.size()) throw std::invalid_argument(s);
                    c.*member = parsed;
                } catch (const std::exception&) {
                    fail("config: key '", key, "' expects an integer, got '", s, "'");
                }
            }};
}

inline FieldDef u64_field(const std::string& key, std::uint64_t RunConfig::*member) {
    return {key, [member](const RunConfig& c) { return nlohmann::json(c.*member); },
            [key, member](RunConfig& c, const nlohmann::json& v) {
                if (!v.is_number_unsigned() && !v.is_number_integer())
                    fail("config: key '", key, "' expects a non-negative integer, got ", v.dump());
                if (v.is_number_integer() && v.get<long long>() < 0)
                    fail("config: key '", key, "' expects a non-negative integer, got ", v.dump());
                c.*member = v.get<std::uint64_t>();
            },
            [key, member](RunConfig& c, const std::string& s) {
                try {
                    std::size_t used = 0;
                    const unsigned long long parsed = std::stoull(s, &used);
                    if (used != s.size() || s.find('-') != std::string::npos)
                        throw std::invalid_argument(s);
                    c.*member = parsed;
                } catch (const std::exception&) {
                    fail("config: key '", key, "' expects a non-negative integer, got '", s, "'");
                }
            }};
}

inline FieldDef double_field(const std::string& key, double RunConfig::*member) {
    return {key, [member](const RunConfig& c) { return nlohmann::json(c.*member); },
            [key, member](RunConfig& c, const nlohmann::json& v) {
                if (!v.is_number())
                    fail("config: key '", key, "' expects a number, got ", v.dump());
                c.*member = v.get<double>();
            },
            [key, member](RunConfig& c, const std::string& s) {
                try {
                    std::size_t used = 0;
                    const double parsed = std::stod(s, &used);
                    if (used != s.size()) throw std::invalid_argument(s);
                    c.*member = parsed;
                } catch (const std::exception&) {
                    fail("config: key '", key, "' expects a number, got '", s, "'");
                }
            }};
}

inline FieldDef bool_field(const std::string& key, bool RunConfig::*member) {
    return {key, [member](const RunConfig& c) { return nlohmann::json(c.*member); },
            [key, member](RunConfig& c, const nlohmann::json& v) {
                if (!v.is_boolean())
                    fail("config: key '", key, "' expects true or false, got ", v.dump());
                c.*member = v.get<bool>();
            },
            [key, member](RunConfig& c, const std::string& s) {
                if (s == "true" || s == "1")
                    c.*member = true;
                else if (s == "false" || s == "0")
                    c.*member = false;
                else
                    fail("config: key '", key, "' expects true or false, got '", s, "'");
            }};
}

inline FieldDef string_field(const std::string& key, std::string RunConfig::*member) {
    return {key, [member](const RunConfig& c) { return nlohmann::json(c.*member); },
            [key, member](RunConfig& c, const nlohmann::json& v) {
                if (!v.is_string())
                    fail("config: key '", key, "' expects a string, got ", v.dump());
                c.*member = v.get<std::string>();
            },
            [member](RunConfig& c, const std::string& s) { c.*member = s; }};
}

} // namespace detail

// The full key schema, in the order keys appear in persisted files.
inline const std::vector<detail::FieldDef>& schema() {
    using detail::bool_field;
    using detail::double_field;
    using detail::int_field;
    using detail::string_field;
    using detail::u64_field;
    static const std::vector<detail::FieldDef> defs = {
        int_field("d_t", &RunConfig::d_t),
        int_field("enc_layers", &RunConfig::enc_layers),
        int_field("dec_layers", &RunConfig::dec_layers),
        int_field("heads", &RunConfig::heads),
        int_field("d_ff", &RunConfig::d_ff),
        int_field("d_a", &RunConfig::d_a),
        int_field("d_v", &RunConfig::d_v),
        int_field("n_f", &RunConfig::n_f),
        int_field("n_cl", &RunConfig::n_cl),
        int_field("d_c", &RunConfig::d_c),
        int_field("len_common", &RunConfig::len_common),
        int_field("k_a", &RunConfig::k_a),
        int_field("k_v", &RunConfig::k_v),
        int_field("k_f", &RunConfig::k_f),
        int_field("bottleneck", &RunConfig::bottleneck),
        int_field("max_text_len", &RunConfig::max_text_len),
        int_field("max_gen_len", &RunConfig::max_gen_len),
        double_field("dropout", &RunConfig::dropout),
        string_field("optimizer", &RunConfig::optimizer),
        double_field("lr_backbone", &RunConfig::lr_backbone),
        double_field("lr_main", &RunConfig::lr_main),
        double_field("lr_pmf", &RunConfig::lr_pmf),
        int_field("batch_size", &RunConfig::batch_size),
        int_field("epochs", &RunConfig::epochs),
        u64_field("seed", &RunConfig::seed),
        double_field("alpha", &RunConfig::alpha),
        double_field("beta", &RunConfig::beta),
        double_field("tau", &RunConfig::tau),
        int_field("valid_every", &RunConfig::valid_every),
        bool_field("no_pmf", &RunConfig::no_pmf),
        bool_field("no_cl", &RunConfig::no_cl),
        string_field("drop_modality", &RunConfig::drop_modality),
        string_field("data_manifest", &RunConfig::data_manifest),
        int_field("synth_msa_train", &RunConfig::synth_msa_train),
        int_field("synth_msa_valid", &RunConfig::synth_msa_valid),
        int_field("synth_msa_test", &RunConfig::synth_msa_test),
        int_field("synth_erc_train", &RunConfig::synth_erc_train),
        int_field("synth_erc_valid", &RunConfig::synth_erc_valid),
        int_field("synth_erc_test", &RunConfig::synth_erc_test),
        int_field("synth_acoustic_dim", &RunConfig::synth_acoustic_dim),
        int_field("synth_visual_dim", &RunConfig::synth_visual_dim),
        double_field("synth_signal", &RunConfig::synth_signal),
        double_field("synth_noise", &RunConfig::synth_noise),
        string_field("outdir", &RunConfig::outdir),
    };
    return defs;
}

inline const detail::FieldDef& find_field(const std::string& key) {
    for (const auto& f : schema())
        if (f.key == key) return f;
    fail("config: unknown key '", key, "'");
}

// Applies one "key=value" override as passed on a command line.
inline void apply_set(RunConfig& cfg, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0)
        fail("config: override '", assignment, "' is not of the form key=value");
    const std::string key = assignment.substr(0, eq);
    const std::string value = assignment.substr(eq + 1);
    find_field(key).set_str(cfg, value);
}

// Named starting points. "desk" is the defaults, a shape small enough to
// train and gradient-check in seconds. "full" is production scale: wide
// fusion vector, deep stacks, batch 96, with the adapter bottleneck at half
// the fusion width and the contrastive width matching the modality LSTMs.
inline RunConfig preset(const std::string& name) {
    if (name == "desk") return RunConfig{};
    if (name == "full") {
        RunConfig c;
        c.d_t = 768;
        c.enc_layers = 12;
        c.dec_layers = 12;
        c.heads = 12;
        c.d_ff = 3072;
        c.d_a = 64;
        c.d_v = 64;
        c.n_f = 3;
        c.n_cl = 3;
        c.d_c = 64;
        c.len_common = 16;
        c.bottleneck = 384;
        c.max_text_len = 128;
        c.batch_size = 96;
        return c;
    }
    fail("config: unknown preset '", name, "' (known: desk, full)");
}

// Cross-field checks that the schema's per-key typing cannot express.
// Model-dimension consistency is checked again when the model is built.
inline void validate(const RunConfig& cfg) {
    if (cfg.optimizer != "adam" && cfg.optimizer != "sgd")
        fail("config: optimizer must be 'adam' or 'sgd', got '", cfg.optimizer, "'");
    if (cfg.lr_backbone <= 0.0 || cfg.lr_main <= 0.0 || cfg.lr_pmf <= 0.0)
        fail("config: learning rates must be positive");
    if (cfg.batch_size < 1) fail("config: batch_size must be at least 1");
    if (cfg.epochs < 0) fail("config: epochs must be non-negative");
    if (cfg.alpha < 0.0 || cfg.beta < 0.0)
        fail("config: contrastive weights alpha and beta must be non-negative");
    if (cfg.tau <= 0.0) fail("config: tau must be positive");
    if (cfg.valid_every < 0) fail("config: valid_every must be non-negative");
    if (!cfg.drop_modality.empty() && cfg.drop_modality != "a" && cfg.drop_modality != "v" &&
        cfg.drop_modality != "av")
        fail("config: drop_modality must be one of a, v, av (or empty), got '",
             cfg.drop_modality, "'");
    const bool any_synth = cfg.synth_msa_train > 0 || cfg.synth_erc_train > 0;
    if (cfg.data_manifest.empty() && !any_synth)
        fail("config: set data_manifest or a positive synthetic training count");
    if (!cfg.data_manifest.empty() && any_synth)
        fail("config: data_manifest and synthetic counts are mutually exclusive");
    if (cfg.synth_msa_train < 0 || cfg.synth_msa_valid < 0 || cfg.synth_msa_test < 0 ||
        cfg.synth_erc_train < 0 || cfg.synth_erc_valid < 0 || cfg.synth_erc_test < 0)
        fail("config: synthetic sample counts must be non-negative");
    if (cfg.outdir.empty()) fail("config: outdir must not be empty");
}

// The effective configuration as ordered JSON, every key present.
inline nlohmann::ordered_json to_json(const RunConfig& cfg) {
    nlohmann::ordered_json j;
    for (const auto& f : schema()) j[f.key] = f.get(cfg);
    return j;
}

// Applies keys from a JSON object on top of `cfg`; partial files are fine,
// unknown keys are not.
inline void apply_json(RunConfig& cfg, const nlohmann::json& j) {
    if (!j.is_object()) fail("config: expected a JSON object of settings");
    for (const auto& [key, value] : j.items()) find_field(key).set_json(cfg, value);
}

inline void save_config(const std::string& path, const RunConfig& cfg) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail("config: cannot open ", path, " for writing");
    out << to_json(cfg).dump(2) << "\n";
    if (!out) fail("config: write failed for ", path);
}

inline RunConfig load_config(const std::string& path, RunConfig base = RunConfig{}) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail("config: cannot read ", path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        fail("config: ", path, " is not valid JSON: ", e.what());
    }
    apply_json(base, j);
    return base;
}

// String form of every setting, for embedding in checkpoints.
inline std::map<std::string, std::string> config_manifest(const RunConfig& cfg) {
    std::map<std::string, std::string> m;
    for (const auto& f : schema()) {
        const nlohmann::json v = f.get(cfg);
        m[f.key] = v.is_string() ? v.get<std::string>() : v.dump();
    }
    return m;
}

} // namespace unimse::config
