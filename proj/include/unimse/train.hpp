#pragma once

// Run orchestration: batched loss assembly over formalized samples, the two
// optimizers with per-group learning rates, the deterministic training loop
// with TSV loss logging, periodic validation, and checkpointing, plus
// generation-based evaluation and fusion-state export.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "unimse/checkpoint.hpp"
#include "unimse/config.hpp"
#include "unimse/datapipe.hpp"
#include "unimse/evalmetrics.hpp"
#include "unimse/model.hpp"
#include "unimse/objectives.hpp"
#include "unimse/synth.hpp"
#include "unimse/textcodec.hpp"
#include "unimse/unilabel.hpp"

namespace unimse::train {

using config::RunConfig;
using datapipe::Batch;
using datapipe::Dataset;
using evalmetrics::format_double;
using model::ModelConfig;
using model::ParamStore;
using numcore::Graph;
using numcore::Tensor;
using textcodec::Task;
using textcodec::Vocabulary;

// ---- run assembly ----

inline bool drops_acoustic(const RunConfig& rc) {
    return rc.drop_modality == "a" || rc.drop_modality == "av";
}

inline bool drops_visual(const RunConfig& rc) {
    return rc.drop_modality == "v" || rc.drop_modality == "av";
}

// Ablation-adjusted model dimensions. Disabling the adapters removes the
// contrastive layers with them (the contrastive text stream reads adapter
// outputs); disabling contrastive learning keeps the adapters but leaves no
// contrastive layers.
inline ModelConfig to_model_config(const RunConfig& rc, int vocab_size, int d_a_in, int d_v_in) {
    ModelConfig mc;
    mc.vocab_size = vocab_size;
    mc.d_t = rc.d_t;
    mc.enc_layers = rc.enc_layers;
    mc.dec_layers = rc.dec_layers;
    mc.heads = rc.heads;
    mc.d_ff = rc.d_ff;
    mc.d_a_in = d_a_in;
    mc.d_a = rc.d_a;
    mc.d_v_in = d_v_in;
    mc.d_v = rc.d_v;
    mc.n_f = rc.no_pmf ? 0 : rc.n_f;
    mc.n_cl = (rc.no_pmf || rc.no_cl) ? 0 : rc.n_cl;
    mc.d_c = rc.d_c;
    mc.len_common = rc.len_common;
    mc.k_a = rc.k_a;
    mc.k_v = rc.k_v;
    mc.k_f = rc.k_f;
    mc.bottleneck = rc.bottleneck;
    mc.max_text_len = rc.max_text_len;
    mc.max_gen_len = rc.max_gen_len;
    mc.dropout = rc.dropout;
    mc.validate();
    return mc;
}

// A dropped modality is zeroed at the source, so batching, training, and
// evaluation all see the same silenced features.
inline void apply_modality_drop(Dataset& ds, const RunConfig& rc) {
    if (drops_acoustic(rc))
        for (auto& m : ds.acoustic) std::fill(m.data.begin(), m.data.end(), 0.0);
    if (drops_visual(rc))
        for (auto& m : ds.visual) std::fill(m.data.begin(), m.data.end(), 0.0);
}

// ---- batched loss ----

// One teacher-forced pass over a batch. The task loss covers every target
// position of every sample; contrastive terms stack the per-sample pooled
// projections into K-row matrices, one pair of terms per contrastive layer.
// A dropped modality contributes no contrastive terms; batches of one sample
// have no negatives and skip contrastive learning entirely.
inline objectives::LossBreakdown batch_forward(Graph& g, const ParamStore& P,
                                               const ModelConfig& mc, const Batch& batch,
                                               const RunConfig& rc, bool training) {
    if (batch.items.empty()) fail("batch_forward: empty batch");
    const bool use_cl = mc.n_cl > 0 && batch.items.size() >= 2;
    const bool cl_a = use_cl && !drops_acoustic(rc);
    const bool cl_v = use_cl && !drops_visual(rc);

    std::vector<Tensor> logit_blocks;
    std::vector<int> targets;
    std::vector<model::ClStreams> streams;
    for (const auto& item : batch.items) {
        const model::SampleForward sf = model::forward_sample(g, P, mc, item, training);
        logit_blocks.push_back(sf.logits);
        targets.insert(targets.end(), item.target_ids.begin(), item.target_ids.end());
        if (cl_a || cl_v) streams.push_back(model::project_sample_for_cl(g, P, mc, sf.enc));
    }
    const Tensor task =
        objectives::task_nll(g, numcore::concat_rows(g, logit_blocks), targets);

    std::vector<Tensor> cl_ta, cl_tv;
    if (cl_a || cl_v) {
        Tensor acoustic_pooled, visual_pooled;
        if (cl_a) {
            std::vector<Tensor> rows;
            for (const auto& s : streams) rows.push_back(s.acoustic);
            acoustic_pooled = numcore::concat_rows(g, rows);
        }
        if (cl_v) {
            std::vector<Tensor> rows;
            for (const auto& s : streams) rows.push_back(s.visual);
            visual_pooled = numcore::concat_rows(g, rows);
        }
        for (int j = 0; j < mc.n_cl; ++j) {
            std::vector<Tensor> rows;
            for (const auto& s : streams) rows.push_back(s.text[static_cast<std::size_t>(j)]);
            const Tensor text_pooled = numcore::concat_rows(g, rows);
            if (cl_a) cl_ta.push_back(objectives::inter_modal_cl(g, text_pooled, acoustic_pooled, rc.tau));
            if (cl_v) cl_tv.push_back(objectives::inter_modal_cl(g, text_pooled, visual_pooled, rc.tau));
        }
    }
    return objectives::total_loss(g, task, std::move(cl_ta), std::move(cl_tv), rc.alpha, rc.beta);
}

// ---- optimizers ----

// Fixed-hyperparameter optimizers over named parameter groups. The adaptive
// variant is standard bias-corrected moment estimation; both apply the
// learning rate of the parameter's group.
class Optimizer {
public:
    Optimizer(const std::string& kind, double lr_backbone, double lr_main, double lr_pmf)
        : kind_(kind), lr_backbone_(lr_backbone), lr_main_(lr_main), lr_pmf_(lr_pmf) {
        if (kind != "adam" && kind != "sgd") fail("Optimizer: unknown kind '", kind, "'");
    }

    void step(ParamStore& P) {
        ++t_;
        for (auto& [name, tensor] : P.items) {
            const double lr = lr_for(name);
            auto& v = tensor.mutable_data();
            if (kind_ == "sgd") {
                for (std::size_t i = 0; i < v.size(); ++i) v[i] -= lr * tensor.grad_at(i);
                continue;
            }
            auto& st = state_[name];
            if (st.m.empty()) {
                st.m.assign(v.size(), 0.0);
                st.v.assign(v.size(), 0.0);
            }
            const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
            const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
            for (std::size_t i = 0; i < v.size(); ++i) {
                const double grad = tensor.grad_at(i);
                st.m[i] = kBeta1 * st.m[i] + (1.0 - kBeta1) * grad;
                st.v[i] = kBeta2 * st.v[i] + (1.0 - kBeta2) * grad * grad;
                v[i] -= lr * (st.m[i] / bc1) / (std::sqrt(st.v[i] / bc2) + kEps);
            }
        }
    }

private:
    static constexpr double kBeta1 = 0.9;
    static constexpr double kBeta2 = 0.999;
    static constexpr double kEps = 1e-8;

    struct Moments {
        std::vector<double> m, v;
    };

    double lr_for(const std::string& name) const {
        const std::string group = model::param_group(name);
        if (group == "pmf") return lr_pmf_;
        if (group == "main") return lr_main_;
        return lr_backbone_;
    }

    std::string kind_;
    double lr_backbone_, lr_main_, lr_pmf_;
    long t_ = 0;
    std::map<std::string, Moments> state_;
};

// ---- generation-based evaluation ----

struct SampleEval {
    std::string id;
    Task task = Task::msa;
    textcodec::Prediction pred;
    bool exact = false;
};

struct EvalOutcome {
    std::size_t n = 0;
    std::size_t exact = 0;
    std::size_t malformed = 0;
    std::vector<SampleEval> samples;
    std::optional<evalmetrics::MetricReport> msa;
    std::optional<evalmetrics::MetricReport> erc;

    double exact_match() const {
        return n == 0 ? 0.0 : static_cast<double>(exact) / static_cast<double>(n);
    }
};

// Greedy generation over every record: decode per the record's source task,
// score exact match against the gold serialization, and fold predictions
// into the per-task metric reports. Malformed generations keep their decoded
// fallback values and are counted.
inline EvalOutcome evaluate_dataset(const ParamStore& P, const ModelConfig& mc, const Dataset& ds,
                                    const Vocabulary& vocab, int max_text_len) {
    EvalOutcome out;
    std::vector<double> msa_pred, msa_gold;
    std::vector<std::string> erc_pred, erc_gold;
    std::size_t msa_malformed = 0, erc_malformed = 0;
    for (std::size_t i = 0; i < ds.records.size(); ++i) {
        const auto item = datapipe::formalize_record(ds.records[i], ds.acoustic[i], ds.visual[i],
                                                     vocab, max_text_len);
        const std::vector<int> gen = model::generate(P, mc, item.token_ids, item.segment_ids,
                                                     item.true_len, *item.acoustic, *item.visual);
        const auto pred = textcodec::decode_prediction(gen, item.task, vocab);
        SampleEval se;
        se.id = item.id;
        se.task = item.task;
        se.pred = pred;
        se.exact = gen == item.target_ids;
        ++out.n;
        if (se.exact) ++out.exact;
        if (!pred.well_formed) ++out.malformed;
        if (item.task == Task::msa) {
            msa_pred.push_back(pred.intensity);
            msa_gold.push_back(*ds.records[i].sample.intensity);
            if (!pred.well_formed) ++msa_malformed;
        } else {
            erc_pred.push_back(pred.emotion);
            erc_gold.push_back(*ds.records[i].sample.emotion);
            if (!pred.well_formed) ++erc_malformed;
        }
        out.samples.push_back(std::move(se));
    }
    if (!msa_pred.empty()) out.msa = evalmetrics::msa_metrics(msa_pred, msa_gold, msa_malformed);
    if (!erc_pred.empty()) {
        std::vector<std::string> labels;
        for (const auto& [emotion, pol] : unilabel::emotion_polarity_map()) labels.push_back(emotion);
        out.erc = evalmetrics::erc_metrics(erc_pred, erc_gold, labels, erc_malformed);
    }
    return out;
}

// ---- training loop ----

struct TrainResult {
    std::string outdir;
    std::string manifest;        // the data actually trained on
    std::string final_checkpoint;
    std::string best_checkpoint;
    std::string loss_log;
    std::string valid_log;
    std::string vocab_path;
    int steps = 0;
    double best_valid_em = -1.0; // -1 when validation never ran
};

namespace detail {

// Derived values a checkpoint needs beyond the run settings.
inline std::map<std::string, std::string> checkpoint_manifest(const RunConfig& rc,
                                                              const ModelConfig& mc) {
    auto m = config::config_manifest(rc);
    m["vocab_size"] = str(mc.vocab_size);
    m["d_a_in"] = str(mc.d_a_in);
    m["d_v_in"] = str(mc.d_v_in);
    return m;
}

inline std::string join_path(const std::string& dir, const std::string& leaf) {
    return (std::filesystem::path(dir) / leaf).string();
}

} // namespace detail

// Trains per the run configuration, writing everything under rc.outdir:
// the effective config, the generated data (when synthetic), the vocabulary,
// a per-step loss log, a per-validation exact-match log, and final plus
// best-validation checkpoints. Fully deterministic for a given config.
inline TrainResult train_run(const RunConfig& rc) {
    config::validate(rc);
    std::filesystem::create_directories(rc.outdir);
    config::save_config(detail::join_path(rc.outdir, "config.json"), rc);

    TrainResult result;
    result.outdir = rc.outdir;

    // Data: an existing manifest, or a synthetic corpus generated in place.
    std::string manifest = rc.data_manifest;
    if (manifest.empty()) {
        synth::SynthConfig sc;
        sc.msa_train = rc.synth_msa_train;
        sc.msa_valid = rc.synth_msa_valid;
        sc.msa_test = rc.synth_msa_test;
        sc.erc_train = rc.synth_erc_train;
        sc.erc_valid = rc.synth_erc_valid;
        sc.erc_test = rc.synth_erc_test;
        sc.acoustic_dim = rc.synth_acoustic_dim;
        sc.visual_dim = rc.synth_visual_dim;
        sc.signal_strength = rc.synth_signal;
        sc.feature_noise = rc.synth_noise;
        sc.seed = rc.seed;
        manifest = synth::synthesize_dataset(sc, detail::join_path(rc.outdir, "data"));
    }
    result.manifest = manifest;

    Dataset full = datapipe::load_dataset(manifest);
    apply_modality_drop(full, rc);
    Dataset train_ds = datapipe::filter_dataset(full, "train");
    Dataset valid_ds = datapipe::filter_dataset(full, "valid");
    if (train_ds.records.empty()) fail("train_run: no training records in ", manifest);

    Vocabulary vocab = textcodec::build_vocab(datapipe::corpus_texts(train_ds));
    result.vocab_path = detail::join_path(rc.outdir, "vocab.txt");
    vocab.save(result.vocab_path);

    const ModelConfig mc = to_model_config(rc, vocab.size(), full.acoustic_dim, full.visual_dim);
    ParamStore P = model::init_params(mc, rc.seed);
    const auto manifest_kv = detail::checkpoint_manifest(rc, mc);

    result.loss_log = detail::join_path(rc.outdir, "loss.tsv");
    std::ofstream loss_log(result.loss_log, std::ios::binary);
    if (!loss_log) fail("train_run: cannot open ", result.loss_log);
    loss_log << "step\ttask\tcl_ta_sum\tcl_tv_sum\ttotal\n";

    result.valid_log = detail::join_path(rc.outdir, "valid.tsv");
    std::ofstream valid_log(result.valid_log, std::ios::binary);
    if (!valid_log) fail("train_run: cannot open ", result.valid_log);
    valid_log << "epoch\texact_match\n";

    result.best_checkpoint = detail::join_path(rc.outdir, "best.umck");
    result.final_checkpoint = detail::join_path(rc.outdir, "final.umck");

    Optimizer opt(rc.optimizer, rc.lr_backbone, rc.lr_main, rc.lr_pmf);
    const std::uint64_t shuffle_base = derive_seed(rc.seed, SeedStream::shuffle);
    bool best_written = false;
    int step = 0;
    for (int epoch = 0; epoch < rc.epochs; ++epoch) {
        const auto batches =
            datapipe::batch_iter(train_ds, vocab, rc.batch_size,
                       splitmix64(shuffle_base + static_cast<std::uint64_t>(epoch)),
                       mc.n_cl > 0, true, rc.max_text_len);
        for (const auto& batch : batches) {
            Graph g(derive_seed(rc.seed, SeedStream::dropout) + static_cast<std::uint64_t>(step));
            const auto lb = batch_forward(g, P, mc, batch, rc, true);
            if (!std::isfinite(lb.total_value()))
                fail("train_run: non-finite loss at step ", step + 1, " (epoch ", epoch + 1,
                     ", batch starting with sample ", batch.items[0].id, ")");
            P.zero_grad();
            g.backward(lb.total);
            opt.step(P);
            ++step;
            loss_log << step << '\t' << format_double(lb.task_value()) << '\t'
                     << format_double(lb.cl_ta_sum()) << '\t' << format_double(lb.cl_tv_sum())
                     << '\t' << format_double(lb.total_value()) << '\n';
        }
        if (rc.valid_every > 0 && (epoch + 1) % rc.valid_every == 0 && !valid_ds.records.empty()) {
            const auto vo = evaluate_dataset(P, mc, valid_ds, vocab, rc.max_text_len);
            valid_log << epoch + 1 << '\t' << format_double(vo.exact_match()) << '\n';
            if (vo.exact_match() > result.best_valid_em) {
                result.best_valid_em = vo.exact_match();
                checkpoint::write_checkpoint(result.best_checkpoint, P.items, manifest_kv);
                best_written = true;
            }
        }
    }
    result.steps = step;
    checkpoint::write_checkpoint(result.final_checkpoint, P.items, manifest_kv);
    // Without a validation signal the final state is the best known state.
    if (!best_written) checkpoint::write_checkpoint(result.best_checkpoint, P.items, manifest_kv);

    if (!loss_log || !valid_log) fail("train_run: log write failed under ", rc.outdir);
    return result;
}

// ---- checkpoint loading ----

// Settings that determine the parameter shapes; a checkpoint can only be
// used with a config that agrees on all of them.
inline const std::vector<std::string>& model_shape_keys() {
    static const std::vector<std::string> keys = {
        "d_t",  "enc_layers", "dec_layers", "heads",      "d_ff",         "d_a",
        "d_v",  "n_f",        "n_cl",       "d_c",        "len_common",   "k_a",
        "k_v",  "k_f",        "bottleneck", "max_text_len", "max_gen_len", "no_pmf",
        "no_cl"};
    return keys;
}

// Rebuilds the run settings recorded in a checkpoint manifest. Keys outside
// the schema (the derived vocab_size / d_a_in / d_v_in) are left to callers.
inline RunConfig config_from_manifest(const std::map<std::string, std::string>& manifest) {
    RunConfig rc;
    for (const auto& f : config::schema()) {
        const auto it = manifest.find(f.key);
        if (it != manifest.end()) f.set_str(rc, it->second);
    }
    return rc;
}

inline void check_checkpoint_compatible(const RunConfig& requested,
                                        const std::map<std::string, std::string>& stored) {
    const auto req = config::config_manifest(requested);
    std::string bad;
    for (const auto& key : model_shape_keys()) {
        const auto it = stored.find(key);
        if (it == stored.end()) continue;
        if (it->second != req.at(key)) {
            if (!bad.empty()) bad += ", ";
            bad += str(key, " (checkpoint ", it->second, ", requested ", req.at(key), ")");
        }
    }
    if (!bad.empty()) fail("incompatible checkpoint: config keys differ: ", bad);
}

struct LoadedModel {
    RunConfig rc;
    ModelConfig mc;
    ParamStore P;
    Vocabulary vocab;
};

namespace detail {

inline int manifest_int(const std::map<std::string, std::string>& m, const std::string& key,
                        const std::string& path) {
    const auto it = m.find(key);
    if (it == m.end()) fail("load_model: checkpoint ", path, " does not record ", key);
    try {
        return std::stoi(it->second);
    } catch (const std::exception&) {
        fail("load_model: checkpoint ", path, " has malformed ", key, " '", it->second, "'");
    }
}

} // namespace detail

// Loads a checkpoint plus its sidecar vocabulary into a ready model. User
// overrides apply on top of the recorded settings; an override that changes
// any shape-determining key is rejected with the offending keys listed.
inline LoadedModel load_model(const std::string& ckpt_path, const std::string& vocab_path,
                              const std::vector<std::string>& overrides = {}) {
    const auto ck = checkpoint::read_checkpoint(ckpt_path);
    RunConfig rc = config_from_manifest(ck.config);
    for (const auto& o : overrides) config::apply_set(rc, o);
    check_checkpoint_compatible(rc, ck.config);

    LoadedModel lm;
    lm.vocab = Vocabulary::load(vocab_path);
    const int vocab_size = detail::manifest_int(ck.config, "vocab_size", ckpt_path);
    if (lm.vocab.size() != vocab_size)
        fail("load_model: vocabulary ", vocab_path, " has ", lm.vocab.size(),
             " tokens but the checkpoint recorded ", vocab_size);
    lm.mc = to_model_config(rc, vocab_size, detail::manifest_int(ck.config, "d_a_in", ckpt_path),
                            detail::manifest_int(ck.config, "d_v_in", ckpt_path));
    for (const auto& [name, t] : ck.tensors) lm.P.add(name, t);
    if (!lm.P.has("emb.token"))
        fail("load_model: checkpoint ", ckpt_path, " has no embedding table");
    if (lm.P.get("emb.token").rows() != vocab_size)
        fail("load_model: checkpoint embedding has ", lm.P.get("emb.token").rows(),
             " rows but the recorded vocab_size is ", vocab_size);
    lm.rc = rc;
    return lm;
}

// ---- fusion-state export ----

// Writes the mean-pooled fusion state of adapter layer `layer` (1-based over
// the adapter-equipped layers) for every record, as a feature-format matrix
// with one row per record, plus a sidecar TSV of ids and labels. Returns the
// sidecar path.
inline std::string export_embeddings(const ParamStore& P, const ModelConfig& mc, const Dataset& ds,
                                     const Vocabulary& vocab, int layer,
                                     const std::string& out_path, int max_text_len) {
    if (mc.n_f < 1) fail("export_embeddings: the model has no adapter layers");
    if (layer < 1 || layer > mc.n_f)
        fail("export_embeddings: layer ", layer, " out of range [1, ", mc.n_f, "]");
    if (ds.records.empty()) fail("export_embeddings: no records to export");

    datapipe::FeatureMatrix out;
    out.rows = static_cast<int>(ds.records.size());
    out.cols = mc.d_t;
    out.data.resize(static_cast<std::size_t>(out.rows) * out.cols);
    std::string labels;
    labels += "id\ttask\tpolarity\tintensity\temotion\n";
    for (std::size_t i = 0; i < ds.records.size(); ++i) {
        const auto item = datapipe::formalize_record(ds.records[i], ds.acoustic[i], ds.visual[i],
                                                     vocab, max_text_len);
        Graph g;
        const auto enc = model::encoder_forward(g, P, mc, item.token_ids, item.segment_ids,
                                                item.true_len, model::features_as_tensor(*item.acoustic),
                                                model::features_as_tensor(*item.visual));
        const Tensor pooled = numcore::mean_rows_prefix(
            g, enc.fusion_states[static_cast<std::size_t>(layer - 1)], item.true_len);
        for (int c = 0; c < mc.d_t; ++c)
            out.data[i * static_cast<std::size_t>(mc.d_t) + static_cast<std::size_t>(c)] =
                pooled.at(0, c);
        labels += str(item.id, '\t', item.task == Task::msa ? "msa" : "erc", '\t',
                      textcodec::polarity_name(item.label.polarity), '\t',
                      format_double(item.label.intensity), '\t', item.label.emotion, '\n');
    }
    datapipe::write_features(out_path, out);
    const std::string label_path = out_path + ".labels.tsv";
    std::ofstream lf(label_path, std::ios::binary);
    if (!lf) fail("export_embeddings: cannot open ", label_path);
    lf << labels;
    if (!lf) fail("export_embeddings: write failed for ", label_path);
    return label_path;
}

} // namespace unimse::train
