// umse: command-line front end for the unified multimodal sentiment and
// emotion toolkit. Subcommands cover dataset preparation (label completion),
// training, generation-based evaluation, finite-difference gradient
// checking, and fusion-state export.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "unimse/checkpoint.hpp"
#include "unimse/config.hpp"
#include "unimse/datapipe.hpp"
#include "unimse/evalmetrics.hpp"
#include "unimse/gradcheck.hpp"
#include "unimse/model.hpp"
#include "unimse/synth.hpp"
#include "unimse/textcodec.hpp"
#include "unimse/train.hpp"
#include "unimse/unilabel.hpp"

namespace fs = std::filesystem;
using namespace unimse;
using config::RunConfig;
using evalmetrics::format_double;
using textcodec::Task;

namespace {

// Config sources an invocation may combine, applied in a fixed order:
// preset, then config file, then repeatable --set overrides, then the
// dedicated flags.
struct ConfigArgs {
    std::string preset = "desk";
    std::string config_path;
    std::vector<std::string> sets;
    std::optional<std::uint64_t> seed;
    bool no_pmf = false;
    bool no_cl = false;
    std::string drop_modality;
};

void add_config_options(CLI::App* cmd, ConfigArgs& args) {
    cmd->add_option("--preset", args.preset, "named starting point")
        ->check(CLI::IsMember({"desk", "full"}));
    cmd->add_option("--config", args.config_path, "JSON settings applied over the preset");
    cmd->add_option("--set", args.sets, "key=value override, repeatable");
    cmd->add_option("--seed", args.seed, "master seed");
    cmd->add_flag("--no-pmf", args.no_pmf, "disable the fusion adapters");
    cmd->add_flag("--no-cl", args.no_cl, "disable contrastive learning");
    cmd->add_option("--drop-modality", args.drop_modality, "zero a modality's features")
        ->check(CLI::IsMember({"a", "v", "av"}));
}

RunConfig assemble_config(const ConfigArgs& args) {
    RunConfig rc = config::preset(args.preset);
    if (!args.config_path.empty()) rc = config::load_config(args.config_path, rc);
    for (const auto& s : args.sets) config::apply_set(rc, s);
    if (args.seed) rc.seed = *args.seed;
    if (args.no_pmf) rc.no_pmf = true;
    if (args.no_cl) rc.no_cl = true;
    if (!args.drop_modality.empty()) rc.drop_modality = args.drop_modality;
    return rc;
}

// Feature paths are manifest-relative; a record copied into a manifest in a
// different directory needs its paths rebased.
std::string rebase_path(const std::string& rel, const fs::path& from_dir, const fs::path& to_dir) {
    const fs::path abs = fs::absolute(from_dir / rel);
    std::error_code ec;
    const fs::path prox = fs::proximate(abs, fs::absolute(to_dir), ec);
    if (ec || prox.empty()) return abs.string();
    return prox.string();
}

int run_prepare(const std::string& msa_path, const std::string& erc_path,
                const std::string& oracle, const std::string& out_path) {
    const auto msa_records = datapipe::load_manifest(msa_path);
    const auto erc_records = datapipe::load_manifest(erc_path);

    std::map<std::string, const datapipe::ManifestRecord*> by_id;
    std::vector<unilabel::LabeledSample> msa, erc;
    auto collect = [&](const std::vector<datapipe::ManifestRecord>& records,
                       std::vector<unilabel::LabeledSample>& out, const fs::path&) {
        for (const auto& r : records) {
            if (!by_id.emplace(r.sample.id, &r).second)
                fail("prepare: id ", r.sample.id, " appears in both manifests");
            out.push_back(r.sample);
        }
    };
    const fs::path msa_dir = fs::path(msa_path).parent_path();
    const fs::path erc_dir = fs::path(erc_path).parent_path();
    collect(msa_records, msa, msa_dir);
    collect(erc_records, erc, erc_dir);

    const auto unified =
        unilabel::build_unified_dataset(msa, erc, unilabel::similarity_oracle(oracle));

    const fs::path out_dir = fs::path(out_path).parent_path();
    if (!out_dir.empty()) fs::create_directories(out_dir);
    std::vector<datapipe::ManifestRecord> out_records;
    for (const auto& u : unified.samples) {
        datapipe::ManifestRecord rec = *by_id.at(u.sample.id);
        const fs::path src_dir = rec.sample.task == Task::msa ? msa_dir : erc_dir;
        rec.sample = u.sample;
        rec.intensity_provenance = u.label.intensity_provenance;
        rec.emotion_provenance = u.label.emotion_provenance;
        rec.acoustic_path = rebase_path(rec.acoustic_path, src_dir, out_dir);
        rec.visual_path = rebase_path(rec.visual_path, src_dir, out_dir);
        out_records.push_back(std::move(rec));
    }
    datapipe::write_manifest(out_path, out_records);

    const std::string audit_path = out_path + ".audit.tsv";
    std::ofstream audit(audit_path, std::ios::binary);
    if (!audit) fail("prepare: cannot open ", audit_path);
    audit << "sample_id\tdonor_id\tscore\tcopied_field\n";
    for (const auto& a : unified.audits)
        audit << a.sample_id << '\t' << a.donor_id << '\t' << format_double(a.score) << '\t'
              << a.copied_field << '\n';
    if (!audit) fail("prepare: write failed for ", audit_path);

    std::cout << "unified manifest: " << out_path << " (" << out_records.size() << " records)\n"
              << "completion audit: " << audit_path << "\n"
              << "generated emotions: " << unified.completed_emotion << "\n"
              << "generated intensities: " << unified.completed_intensity << "\n"
              << "already complete: " << unified.already_complete << "\n";
    return 0;
}

int run_train(const ConfigArgs& args) {
    const RunConfig rc = assemble_config(args);
    const auto result = train::train_run(rc);
    std::cout << "config: " << (fs::path(result.outdir) / "config.json").string() << "\n"
              << "data: " << result.manifest << "\n"
              << "vocabulary: " << result.vocab_path << "\n"
              << "loss log: " << result.loss_log << " (" << result.steps << " steps)\n"
              << "validation log: " << result.valid_log << "\n"
              << "final checkpoint: " << result.final_checkpoint << "\n"
              << "best checkpoint: " << result.best_checkpoint;
    if (result.best_valid_em >= 0.0)
        std::cout << " (validation exact-match " << format_double(result.best_valid_em) << ")";
    std::cout << "\n";
    return 0;
}

std::string sibling_vocab(const std::string& ckpt_path) {
    return (fs::path(ckpt_path).parent_path() / "vocab.txt").string();
}

int run_eval(const std::string& ckpt_path, const std::string& manifest_path,
             std::string vocab_path, const std::string& split, const std::string& task_name,
             const std::vector<std::string>& overrides) {
    if (vocab_path.empty()) vocab_path = sibling_vocab(ckpt_path);
    const auto lm = train::load_model(ckpt_path, vocab_path, overrides);

    datapipe::Dataset ds = datapipe::load_dataset(manifest_path);
    train::apply_modality_drop(ds, lm.rc);
    std::optional<Task> task;
    if (task_name == "msa") task = Task::msa;
    if (task_name == "erc") task = Task::erc;
    const datapipe::Dataset subset =
        datapipe::filter_dataset(ds, split == "all" ? "" : split, task);
    if (subset.records.empty())
        fail("eval: no records for split '", split, "' and task '", task_name, "' in ",
             manifest_path);

    const auto outcome = train::evaluate_dataset(lm.P, lm.mc, subset, lm.vocab, lm.rc.max_text_len);

    std::string text, keyvals;
    if (outcome.msa) {
        text += evalmetrics::report_text(*outcome.msa);
        keyvals += evalmetrics::report_keyvals(*outcome.msa);
    }
    if (outcome.erc) {
        text += evalmetrics::report_text(*outcome.erc);
        keyvals += evalmetrics::report_keyvals(*outcome.erc);
    }
    text += str("exact-match rate ", format_double(outcome.exact_match()), " over ", outcome.n,
                " sample(s), ", outcome.malformed, " malformed generation(s)\n");
    keyvals += str("eval.exact_match=", format_double(outcome.exact_match()), "\n");
    keyvals += str("eval.n=", outcome.n, "\n");
    keyvals += str("eval.malformed=", outcome.malformed, "\n");
    std::cout << text << keyvals;

    fs::create_directories(lm.rc.outdir);
    const std::string tag = task_name == "all" ? split : str(split, "_", task_name);
    const auto report_path = (fs::path(lm.rc.outdir) / str("eval_", tag, ".txt")).string();
    const auto kv_path = (fs::path(lm.rc.outdir) / str("eval_", tag, ".kv")).string();
    const auto pred_path = (fs::path(lm.rc.outdir) / str("predictions_", tag, ".tsv")).string();
    std::ofstream rf(report_path, std::ios::binary);
    rf << text;
    std::ofstream kf(kv_path, std::ios::binary);
    kf << keyvals;
    std::ofstream pf(pred_path, std::ios::binary);
    pf << "id\ttask\texact\twell_formed\tpred_intensity\tpred_emotion\n";
    for (const auto& s : outcome.samples)
        pf << s.id << '\t' << (s.task == Task::msa ? "msa" : "erc") << '\t' << (s.exact ? 1 : 0)
           << '\t' << (s.pred.well_formed ? 1 : 0) << '\t' << format_double(s.pred.intensity)
           << '\t' << s.pred.emotion << '\n';
    if (!rf || !kf || !pf) fail("eval: report write failed under ", lm.rc.outdir);
    std::cout << "reports: " << report_path << ", " << kv_path << ", " << pred_path << "\n";
    return 0;
}

int run_gradcheck(const ConfigArgs& args, int batch, double eps, double tol) {
    RunConfig rc = assemble_config(args);
    if (rc.d_t > 64)
        fail("gradcheck: d_t ", rc.d_t,
             " exceeds the runtime bound of 64; shrink it with --set d_t=...");
    if (batch < 1) fail("gradcheck: batch must be at least 1");
    fs::create_directories(rc.outdir);
    config::save_config((fs::path(rc.outdir) / "gradcheck_config.json").string(), rc);

    // One small synthetic batch with short texts: the probe exercises every
    // parameter, not the language.
    synth::SynthConfig sc;
    sc.msa_train = (batch + 1) / 2;
    sc.erc_train = batch / 2;
    sc.acoustic_dim = rc.synth_acoustic_dim;
    sc.visual_dim = rc.synth_visual_dim;
    sc.signal_strength = rc.synth_signal;
    sc.feature_noise = rc.synth_noise;
    sc.min_filler_words = 1;
    sc.max_filler_words = 3;
    sc.min_feature_len = 3;
    sc.max_feature_len = 6;
    sc.seed = rc.seed;
    const std::string manifest =
        synth::synthesize_dataset(sc, (fs::path(rc.outdir) / "gradcheck_data").string());

    datapipe::Dataset ds = datapipe::load_dataset(manifest);
    train::apply_modality_drop(ds, rc);
    const auto vocab = textcodec::build_vocab(datapipe::corpus_texts(ds));
    const auto mc = train::to_model_config(rc, vocab.size(), ds.acoustic_dim, ds.visual_dim);
    auto P = model::init_params(mc, rc.seed);
    const auto batches = datapipe::batch_iter(ds, vocab, batch, derive_seed(rc.seed, SeedStream::shuffle),
                                              mc.n_cl > 0, true, rc.max_text_len);
    const datapipe::Batch& probe = batches.front();

    const auto report = numcore::grad_check(
        P.items, [&](numcore::Graph& g) { return train::batch_forward(g, P, mc, probe, rc, false).total; },
        eps, tol);

    std::map<std::string, double> group_max;
    for (const auto& [name, worst] : report.per_param_max) {
        auto& cur = group_max[model::param_group(name)];
        cur = std::max(cur, worst);
    }
    std::cout << report.summary() << "\n";
    for (const auto& [group, worst] : group_max)
        std::cout << "group " << group << ": max rel err " << format_double(worst) << "\n";
    return report.pass() ? 0 : 1;
}

int run_export(const std::string& ckpt_path, const std::string& manifest_path,
               std::string vocab_path, int layer, const std::string& out_path,
               const std::vector<std::string>& overrides) {
    if (vocab_path.empty()) vocab_path = sibling_vocab(ckpt_path);
    const auto lm = train::load_model(ckpt_path, vocab_path, overrides);
    datapipe::Dataset ds = datapipe::load_dataset(manifest_path);
    train::apply_modality_drop(ds, lm.rc);
    const fs::path out_dir = fs::path(out_path).parent_path();
    if (!out_dir.empty()) fs::create_directories(out_dir);
    const std::string label_path = train::export_embeddings(lm.P, lm.mc, ds, lm.vocab, layer,
                                                            out_path, lm.rc.max_text_len);
    std::cout << "wrote " << ds.records.size() << " x " << lm.mc.d_t << " matrix to " << out_path
              << "\nlabels: " << label_path << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"unified multimodal sentiment and emotion toolkit"};
    app.require_subcommand(1);

    auto* prepare = app.add_subcommand("prepare", "complete universal labels across two manifests");
    std::string prep_msa, prep_erc, prep_out, prep_oracle = "bow-cosine";
    prepare->add_option("--msa", prep_msa, "sentiment-task manifest")->required();
    prepare->add_option("--erc", prep_erc, "emotion-task manifest")->required();
    prepare->add_option("--oracle", prep_oracle, "text similarity oracle name");
    prepare->add_option("--out", prep_out, "unified manifest to write")->required();

    auto* train_cmd = app.add_subcommand("train", "train a model per the run configuration");
    ConfigArgs train_args;
    add_config_options(train_cmd, train_args);

    auto* eval_cmd = app.add_subcommand("eval", "generate and score a checkpoint on a manifest");
    std::string eval_ckpt, eval_manifest, eval_vocab, eval_split = "test", eval_task = "all";
    std::vector<std::string> eval_sets;
    eval_cmd->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();
    eval_cmd->add_option("--manifest", eval_manifest, "unified manifest to score")->required();
    eval_cmd->add_option("--vocab", eval_vocab, "vocabulary file (default: next to checkpoint)");
    eval_cmd->add_option("--split", eval_split, "split to score")
        ->check(CLI::IsMember({"train", "valid", "test", "all"}));
    eval_cmd->add_option("--task", eval_task, "restrict to one task's samples")
        ->check(CLI::IsMember({"msa", "erc", "all"}));
    eval_cmd->add_option("--set", eval_sets, "key=value override, repeatable");

    auto* grad_cmd = app.add_subcommand("gradcheck",
                                        "compare analytic gradients against central differences");
    ConfigArgs grad_args;
    add_config_options(grad_cmd, grad_args);
    int grad_batch = 4;
    double grad_eps = 1e-5, grad_tol = 1e-4;
    grad_cmd->add_option("--batch", grad_batch, "synthetic probe batch size");
    grad_cmd->add_option("--eps", grad_eps, "finite-difference step");
    grad_cmd->add_option("--tol", grad_tol, "relative error tolerance");

    auto* export_cmd =
        app.add_subcommand("export-embeddings", "write mean-pooled fusion states per sample");
    std::string exp_ckpt, exp_manifest, exp_vocab, exp_out;
    std::vector<std::string> exp_sets;
    int exp_layer = 1;
    export_cmd->add_option("--checkpoint", exp_ckpt, "checkpoint file")->required();
    export_cmd->add_option("--manifest", exp_manifest, "manifest to embed")->required();
    export_cmd->add_option("--vocab", exp_vocab, "vocabulary file (default: next to checkpoint)");
    export_cmd->add_option("--layer", exp_layer, "adapter layer, 1-based")->required();
    export_cmd->add_option("--out", exp_out, "feature-format matrix to write")->required();
    export_cmd->add_option("--set", exp_sets, "key=value override, repeatable");

    CLI11_PARSE(app, argc, argv);

    try {
        if (prepare->parsed()) return run_prepare(prep_msa, prep_erc, prep_oracle, prep_out);
        if (train_cmd->parsed()) return run_train(train_args);
        if (eval_cmd->parsed())
            return run_eval(eval_ckpt, eval_manifest, eval_vocab, eval_split, eval_task, eval_sets);
        if (grad_cmd->parsed()) return run_gradcheck(grad_args, grad_batch, grad_eps, grad_tol);
        if (export_cmd->parsed())
            return run_export(exp_ckpt, exp_manifest, exp_vocab, exp_layer, exp_out, exp_sets);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    std::cerr << "error: no subcommand\n";
    return 1;
}
