#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "unimse/checkpoint.hpp"
#include "unimse/config.hpp"
#include "unimse/train.hpp"

using namespace unimse;
using config::RunConfig;
using numcore::Graph;
using numcore::Tensor;

namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "unimse_tests" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void spit(const fs::path& p, const std::string& bytes) {
    std::ofstream out(p, std::ios::binary);
    REQUIRE(out.good());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

// A model small enough that a unit-test training run stays well under a
// second, driven by a self-contained synthetic dataset.
RunConfig tiny_config(const fs::path& outdir) {
    RunConfig rc;
    rc.d_t = 16;
    rc.enc_layers = 1;
    rc.dec_layers = 1;
    rc.heads = 2;
    rc.d_ff = 32;
    rc.d_a = 8;
    rc.d_v = 8;
    rc.n_f = 1;
    rc.n_cl = 1;
    rc.d_c = 8;
    rc.len_common = 4;
    rc.bottleneck = 16;
    rc.max_text_len = 24;
    rc.batch_size = 4;
    rc.epochs = 2;
    rc.synth_msa_train = 8;
    rc.synth_erc_train = 8;
    rc.synth_msa_valid = 2;
    rc.synth_erc_valid = 2;
    rc.seed = 19;
    rc.outdir = outdir.string();
    return rc;
}

struct LossRow {
    int step = 0;
    double task = 0.0, cl_ta = 0.0, cl_tv = 0.0, total = 0.0;
};

std::vector<LossRow> parse_loss_log(const fs::path& p) {
    std::ifstream in(p);
    REQUIRE(in.good());
    std::string header;
    std::getline(in, header);
    REQUIRE(header == "step\ttask\tcl_ta_sum\tcl_tv_sum\ttotal");
    std::vector<LossRow> rows;
    LossRow r;
    while (in >> r.step >> r.task >> r.cl_ta >> r.cl_tv >> r.total) rows.push_back(r);
    return rows;
}

} // namespace

TEST_CASE("checkpoint files round-trip exactly and reject corruption") {
    const fs::path dir = fresh_dir("checkpoint");
    const fs::path path = dir / "model.umck";

    std::vector<std::pair<std::string, Tensor>> tensors = {
        {"w.first", Tensor::leaf(2, 2, {1.0 / 3.0, -0.0, 1e-300, 12345.678901234567}, true,
                                 "w.first")},
        {"w.second", Tensor::leaf(1, 1, {std::nextafter(1.0, 2.0)}, true, "w.second")},
    };
    const std::map<std::string, std::string> config = {
        {"d_t", "16"}, {"note", "value with spaces\tand tabs"}};

    SECTION("exact round trip preserves order, bits, and config") {
        checkpoint::write_checkpoint(path.string(), tensors, config);
        const auto ck = checkpoint::read_checkpoint(path.string());
        REQUIRE(ck.config == config);
        REQUIRE(ck.tensors.size() == 2);
        CHECK(ck.tensors[0].first == "w.first");
        CHECK(ck.tensors[1].first == "w.second");
        for (std::size_t i = 0; i < tensors.size(); ++i) {
            const auto& orig = tensors[i].second.data();
            const auto& back = ck.tensors[i].second.data();
            REQUIRE(orig.size() == back.size());
            for (std::size_t k = 0; k < orig.size(); ++k) {
                std::uint64_t a = 0, b = 0;
                std::memcpy(&a, &orig[k], 8);
                std::memcpy(&b, &back[k], 8);
                CHECK(a == b); // bit pattern, so -0.0 and subnormals count too
            }
            CHECK(ck.tensors[i].second.node()->requires_grad);
        }
    }

    SECTION("rejects non-finite values, unnamed tensors, and empty config keys") {
        const auto nan_t = Tensor::leaf(1, 1, {std::nan("")}, true, "bad");
        CHECK_THROWS_WITH(
            checkpoint::write_checkpoint(path.string(), {{"bad", nan_t}}, config),
            Catch::Matchers::ContainsSubstring("non-finite"));
        const auto ok = Tensor::leaf(1, 1, {1.0}, true, "ok");
        CHECK_THROWS_WITH(checkpoint::write_checkpoint(path.string(), {{"", ok}}, config),
                          Catch::Matchers::ContainsSubstring("unnamed tensor"));
        CHECK_THROWS_WITH(checkpoint::write_checkpoint(path.string(), {{"ok", ok}}, {{"", "x"}}),
                          Catch::Matchers::ContainsSubstring("empty config key"));
    }

    SECTION("detects damage to the stored bytes") {
        checkpoint::write_checkpoint(path.string(), tensors, config);
        const std::string good = slurp(path);

        std::string bad_magic = good;
        bad_magic[0] = 'X';
        spit(dir / "magic.umck", bad_magic);
        CHECK_THROWS_WITH(checkpoint::read_checkpoint((dir / "magic.umck").string()),
                          Catch::Matchers::ContainsSubstring("wrong magic"));

        std::string bad_version = good;
        bad_version[4] = 9;
        spit(dir / "version.umck", bad_version);
        CHECK_THROWS_WITH(checkpoint::read_checkpoint((dir / "version.umck").string()),
                          Catch::Matchers::ContainsSubstring("unsupported version"));

        spit(dir / "short.umck", good.substr(0, good.size() - 3));
        CHECK_THROWS_WITH(checkpoint::read_checkpoint((dir / "short.umck").string()),
                          Catch::Matchers::ContainsSubstring("truncated"));

        spit(dir / "long.umck", good + "zz");
        CHECK_THROWS_WITH(checkpoint::read_checkpoint((dir / "long.umck").string()),
                          Catch::Matchers::ContainsSubstring("trailing"));

        CHECK_THROWS(checkpoint::read_checkpoint((dir / "missing.umck").string()));
    }
}

TEST_CASE("run configuration schema applies presets, overrides, and JSON round trips") {
    SECTION("presets") {
        const RunConfig desk = config::preset("desk");
        CHECK(desk.d_t == 32);
        CHECK(desk.optimizer == "adam");
        const RunConfig full = config::preset("full");
        CHECK(full.d_t == 768);
        CHECK(full.enc_layers == 12);
        CHECK(full.heads == 12);
        CHECK(full.d_ff == 3072);
        CHECK(full.batch_size == 96);
        CHECK(full.alpha == desk.alpha);
        CHECK_THROWS_WITH(config::preset("huge"),
                          Catch::Matchers::ContainsSubstring("unknown preset"));
    }

    SECTION("string overrides parse per field type and reject junk") {
        RunConfig rc;
        config::apply_set(rc, "d_t=48");
        config::apply_set(rc, "lr_main=0.25");
        config::apply_set(rc, "no_pmf=true");
        config::apply_set(rc, "optimizer=sgd");
        config::apply_set(rc, "seed=12345678901234567890"); // needs the full u64 range
        CHECK(rc.d_t == 48);
        CHECK(rc.lr_main == 0.25);
        CHECK(rc.no_pmf);
        CHECK(rc.optimizer == "sgd");
        CHECK(rc.seed == 12345678901234567890ull);
        CHECK_THROWS_WITH(config::apply_set(rc, "d_t=four"),
                          Catch::Matchers::ContainsSubstring("expects an integer"));
        CHECK_THROWS_WITH(config::apply_set(rc, "d_t=4x"),
                          Catch::Matchers::ContainsSubstring("expects an integer"));
        CHECK_THROWS_WITH(config::apply_set(rc, "no_cl=maybe"),
                          Catch::Matchers::ContainsSubstring("expects true or false"));
        CHECK_THROWS_WITH(config::apply_set(rc, "banana=1"),
                          Catch::Matchers::ContainsSubstring("unknown key 'banana'"));
        CHECK_THROWS_WITH(config::apply_set(rc, "no_equals_sign"),
                          Catch::Matchers::ContainsSubstring("key=value"));
    }

    SECTION("JSON files round-trip and partial files inherit the base") {
        const fs::path dir = fresh_dir("config");
        RunConfig rc = config::preset("desk");
        rc.epochs = 77;
        rc.drop_modality = "av";
        rc.lr_pmf = 0.125;
        config::save_config((dir / "full.json").string(), rc);
        const RunConfig back = config::load_config((dir / "full.json").string());
        CHECK(config::config_manifest(back) == config::config_manifest(rc));

        spit(dir / "partial.json", "{\"d_t\": 48, \"no_cl\": true}\n");
        const RunConfig part = config::load_config((dir / "partial.json").string(), rc);
        CHECK(part.d_t == 48);
        CHECK(part.no_cl);
        CHECK(part.epochs == 77); // inherited from the base
        CHECK(part.drop_modality == "av");

        spit(dir / "bad.json", "{\"epochs\": \"many\"}\n");
        CHECK_THROWS_WITH(config::load_config((dir / "bad.json").string()),
                          Catch::Matchers::ContainsSubstring("expects an integer"));
        spit(dir / "unknown.json", "{\"banana\": 1}\n");
        CHECK_THROWS(config::load_config((dir / "unknown.json").string()));
    }

    SECTION("manifest form survives the trip back into a config") {
        RunConfig rc = config::preset("desk");
        rc.seed = 987654321;
        rc.tau = 0.75;
        rc.drop_modality = "v";
        rc.data_manifest = "some/where.jsonl";
        const auto manifest = config::config_manifest(rc);
        const RunConfig back = train::config_from_manifest(manifest);
        CHECK(config::config_manifest(back) == manifest);
    }

    SECTION("validation catches bad combinations") {
        RunConfig rc = config::preset("desk");
        CHECK_THROWS_WITH(config::validate(rc), Catch::Matchers::ContainsSubstring("data_manifest"));
        rc.synth_msa_train = 4;
        REQUIRE_NOTHROW(config::validate(rc));
        rc.data_manifest = "also.jsonl";
        CHECK_THROWS_WITH(config::validate(rc),
                          Catch::Matchers::ContainsSubstring("mutually exclusive"));
        rc.data_manifest.clear();
        rc.epochs = -1;
        CHECK_THROWS_WITH(config::validate(rc), Catch::Matchers::ContainsSubstring("epochs"));
        rc.epochs = 1;
        rc.drop_modality = "x";
        CHECK_THROWS_WITH(config::validate(rc), Catch::Matchers::ContainsSubstring("drop_modality"));
        rc.drop_modality.clear();
        rc.tau = 0.0;
        CHECK_THROWS_WITH(config::validate(rc), Catch::Matchers::ContainsSubstring("tau"));
    }
}

TEST_CASE("model configuration honors the ablation switches") {
    RunConfig rc = config::preset("desk");
    const auto plain = train::to_model_config(rc, 100, 6, 7);
    CHECK(plain.vocab_size == 100);
    CHECK(plain.d_a_in == 6);
    CHECK(plain.d_v_in == 7);
    CHECK(plain.n_f == rc.n_f);
    CHECK(plain.n_cl == rc.n_cl);

    rc.no_cl = true;
    const auto no_cl = train::to_model_config(rc, 100, 6, 7);
    CHECK(no_cl.n_f == rc.n_f);
    CHECK(no_cl.n_cl == 0);

    rc.no_cl = false;
    rc.no_pmf = true;
    const auto no_pmf = train::to_model_config(rc, 100, 6, 7);
    CHECK(no_pmf.n_f == 0);
    CHECK(no_pmf.n_cl == 0);

    RunConfig dropped = config::preset("desk");
    dropped.drop_modality = "av";
    const auto with_drop = train::to_model_config(dropped, 100, 6, 7);
    CHECK(with_drop.n_cl == dropped.n_cl); // streams are excluded at loss time, not here
}

TEST_CASE("optimizer applies group learning rates and the documented update math") {
    // One parameter per learning-rate group, each entering the loss linearly
    // so the gradient is a known constant.
    auto build = [](model::ParamStore& P) {
        P.add("enc.0.ff.w1", Tensor::leaf(1, 2, {1.0, 2.0}, true, "enc.0.ff.w1"));
        P.add("amod.wx", Tensor::leaf(1, 2, {3.0, 4.0}, true, "amod.wx"));
        P.add("pmf.0.wd", Tensor::leaf(1, 2, {5.0, 6.0}, true, "pmf.0.wd"));
    };
    auto loss_of = [](model::ParamStore& P, Graph& g) {
        const auto coeff = Tensor::leaf(2, 1, {2.0, -3.0}, false, "coeff");
        Tensor total = numcore::matmul(g, P.get("enc.0.ff.w1"), coeff);
        total = numcore::add(g, total, numcore::matmul(g, P.get("amod.wx"), coeff));
        return numcore::add(g, total, numcore::matmul(g, P.get("pmf.0.wd"), coeff));
    };

    SECTION("sgd subtracts lr times gradient with the group rate") {
        Graph g;
        model::ParamStore P;
        build(P);
        const auto loss = loss_of(P, g);
        P.zero_grad();
        g.backward(loss);
        train::Optimizer opt("sgd", 0.5, 0.25, 0.125);
        opt.step(P);
        // gradient of each parameter is (2, -3)
        CHECK(P.get("enc.0.ff.w1").at(0, 0) == 1.0 - 0.5 * 2.0);
        CHECK(P.get("enc.0.ff.w1").at(0, 1) == 2.0 - 0.5 * -3.0);
        CHECK(P.get("amod.wx").at(0, 0) == 3.0 - 0.25 * 2.0);
        CHECK(P.get("pmf.0.wd").at(0, 1) == 6.0 - 0.125 * -3.0);
    }

    SECTION("adam first step matches the bias-corrected closed form") {
        Graph g;
        model::ParamStore P;
        build(P);
        const auto loss = loss_of(P, g);
        P.zero_grad();
        g.backward(loss);
        train::Optimizer opt("adam", 0.5, 0.25, 0.125);
        opt.step(P);
        // After one step m-hat = grad and v-hat = grad^2 exactly, so the
        // update is lr * grad / (|grad| + eps).
        auto expect = [](double v0, double lr, double grad) {
            return v0 - lr * grad / (std::abs(grad) + 1e-8);
        };
        CHECK(P.get("enc.0.ff.w1").at(0, 0) ==
              Catch::Approx(expect(1.0, 0.5, 2.0)).epsilon(1e-12));
        CHECK(P.get("enc.0.ff.w1").at(0, 1) ==
              Catch::Approx(expect(2.0, 0.5, -3.0)).epsilon(1e-12));
        CHECK(P.get("amod.wx").at(0, 0) == Catch::Approx(expect(3.0, 0.25, 2.0)).epsilon(1e-12));
        CHECK(P.get("pmf.0.wd").at(0, 0) == Catch::Approx(expect(5.0, 0.125, 2.0)).epsilon(1e-12));
    }

    SECTION("unknown optimizer kind is rejected") {
        CHECK_THROWS_WITH(train::Optimizer("momentum", 0.1, 0.1, 0.1),
                          Catch::Matchers::ContainsSubstring("unknown kind"));
    }
}

TEST_CASE("training runs are deterministic and epochs=0 preserves the initialization") {
    SECTION("same config and seed give bit-identical logs and checkpoints") {
        const fs::path dir = fresh_dir("train_determinism");
        const RunConfig rc = tiny_config(dir);
        const auto first = train::train_run(rc);
        const std::string loss1 = slurp(first.loss_log);
        const std::string valid1 = slurp(first.valid_log);
        const std::string ckpt1 = slurp(first.final_checkpoint);
        const auto second = train::train_run(rc);
        CHECK(slurp(second.loss_log) == loss1);
        CHECK(slurp(second.valid_log) == valid1);
        CHECK(slurp(second.final_checkpoint) == ckpt1);
        REQUIRE(first.steps == 8); // 16 samples, batch 4, 2 epochs
    }

    SECTION("a different seed changes the very first loss value") {
        const fs::path dir = fresh_dir("train_seed");
        RunConfig rc = tiny_config(dir / "a");
        rc.epochs = 1;
        const auto run_a = train::train_run(rc);
        rc.outdir = (dir / "b").string();
        rc.seed += 1;
        const auto run_b = train::train_run(rc);
        const auto rows_a = parse_loss_log(run_a.loss_log);
        const auto rows_b = parse_loss_log(run_b.loss_log);
        REQUIRE(!rows_a.empty());
        REQUIRE(!rows_b.empty());
        CHECK(rows_a[0].total != rows_b[0].total);
    }

    SECTION("epochs=0 writes the untouched initial parameters") {
        const fs::path dir = fresh_dir("train_zero_epochs");
        RunConfig rc = tiny_config(dir);
        rc.epochs = 0;
        rc.valid_every = 0;
        const auto result = train::train_run(rc);
        CHECK(result.steps == 0);
        CHECK(slurp(result.final_checkpoint) == slurp(result.best_checkpoint));

        const auto lm = train::load_model(result.final_checkpoint, result.vocab_path);
        const auto P0 = model::init_params(lm.mc, rc.seed);
        REQUIRE(lm.P.items.size() == P0.items.size());
        for (std::size_t i = 0; i < P0.items.size(); ++i) {
            CHECK(lm.P.items[i].first == P0.items[i].first);
            CHECK(lm.P.items[i].second.data() == P0.items[i].second.data());
        }
    }
}

TEST_CASE("loss log decomposition matches the ablation switches") {
    SECTION("full model: total equals task plus the weighted contrastive sums") {
        const fs::path dir = fresh_dir("loss_full");
        RunConfig rc = tiny_config(dir);
        rc.epochs = 1;
        const auto result = train::train_run(rc);
        const auto rows = parse_loss_log(result.loss_log);
        REQUIRE(rows.size() == 4);
        for (const auto& r : rows) {
            CHECK(r.cl_ta > 0.0);
            CHECK(r.cl_tv > 0.0);
            CHECK(r.total == (r.task + rc.alpha * r.cl_ta) + rc.beta * r.cl_tv);
        }
    }

    SECTION("no_cl zeroes both contrastive columns") {
        const fs::path dir = fresh_dir("loss_no_cl");
        RunConfig rc = tiny_config(dir);
        rc.epochs = 1;
        rc.no_cl = true;
        const auto rows = parse_loss_log(train::train_run(rc).loss_log);
        REQUIRE(!rows.empty());
        for (const auto& r : rows) {
            CHECK(r.cl_ta == 0.0);
            CHECK(r.cl_tv == 0.0);
            CHECK(r.total == r.task);
        }
    }

    SECTION("no_pmf also disables contrastive terms") {
        const fs::path dir = fresh_dir("loss_no_pmf");
        RunConfig rc = tiny_config(dir);
        rc.epochs = 1;
        rc.no_pmf = true;
        const auto rows = parse_loss_log(train::train_run(rc).loss_log);
        REQUIRE(!rows.empty());
        for (const auto& r : rows) {
            CHECK(r.cl_ta == 0.0);
            CHECK(r.cl_tv == 0.0);
            CHECK(r.total == r.task);
        }
    }

    SECTION("dropping the acoustic stream removes only its contrastive term") {
        const fs::path dir = fresh_dir("loss_drop_a");
        RunConfig rc = tiny_config(dir);
        rc.epochs = 1;
        rc.drop_modality = "a";
        const auto rows = parse_loss_log(train::train_run(rc).loss_log);
        REQUIRE(!rows.empty());
        for (const auto& r : rows) {
            CHECK(r.cl_ta == 0.0);
            CHECK(r.cl_tv > 0.0);
            CHECK(r.total == r.task + rc.beta * r.cl_tv);
        }
    }
}

TEST_CASE("modality dropping zeroes features and is recorded in the checkpoint") {
    const fs::path dir = fresh_dir("drop_modality");
    RunConfig rc = tiny_config(dir);
    rc.epochs = 1;
    rc.drop_modality = "av";
    const auto result = train::train_run(rc);

    SECTION("the stored config remembers the drop") {
        const auto ck = checkpoint::read_checkpoint(result.final_checkpoint);
        CHECK(ck.config.at("drop_modality") == "av");
        const auto lm = train::load_model(result.final_checkpoint, result.vocab_path);
        CHECK(lm.rc.drop_modality == "av");
    }

    SECTION("apply_modality_drop zeroes exactly the chosen streams") {
        auto ds = datapipe::load_dataset(result.manifest);
        RunConfig drop_a;
        drop_a.drop_modality = "a";
        train::apply_modality_drop(ds, drop_a);
        for (const auto& m : ds.acoustic)
            for (double v : m.data) CHECK(v == 0.0);
        bool visual_has_signal = false;
        for (const auto& m : ds.visual)
            for (double v : m.data) visual_has_signal |= v != 0.0;
        CHECK(visual_has_signal);

        RunConfig drop_av;
        drop_av.drop_modality = "av";
        train::apply_modality_drop(ds, drop_av);
        for (const auto& m : ds.visual)
            for (double v : m.data) CHECK(v == 0.0);
    }
}

TEST_CASE("checkpoints reload compatibly and reject shape changes") {
    const fs::path dir = fresh_dir("reload");
    RunConfig rc = tiny_config(dir);
    rc.epochs = 1;
    const auto result = train::train_run(rc);

    SECTION("plain reload and non-shape overrides work") {
        const auto lm = train::load_model(result.final_checkpoint, result.vocab_path,
                                          {"lr_main=0.5", "epochs=99"});
        CHECK(lm.rc.lr_main == 0.5);
        CHECK(lm.rc.epochs == 99);
        CHECK(lm.rc.d_t == rc.d_t);
        CHECK(lm.mc.vocab_size == static_cast<int>(lm.vocab.size()));
        CHECK(lm.P.items.size() == model::init_params(lm.mc, 1).items.size());
    }

    SECTION("shape-changing overrides are listed in the error") {
        CHECK_THROWS_WITH(
            train::load_model(result.final_checkpoint, result.vocab_path, {"d_ff=64"}),
            Catch::Matchers::ContainsSubstring("d_ff (checkpoint 32, requested 64)"));
        CHECK_THROWS_WITH(
            train::load_model(result.final_checkpoint, result.vocab_path,
                              {"d_t=32", "heads=4"}),
            Catch::Matchers::ContainsSubstring("d_t (checkpoint 16, requested 32)") &&
                Catch::Matchers::ContainsSubstring("heads (checkpoint 2, requested 4)"));
    }

    SECTION("a vocabulary of the wrong size is rejected") {
        const auto small = textcodec::build_vocab({"one tiny corpus"});
        const fs::path other = dir / "other_vocab.txt";
        small.save(other.string());
        CHECK_THROWS_WITH(train::load_model(result.final_checkpoint, other.string()),
                          Catch::Matchers::ContainsSubstring("vocab"));
    }

    SECTION("a feature file is not mistaken for a checkpoint") {
        auto ds = datapipe::load_dataset(result.manifest);
        REQUIRE(!ds.records.empty());
        const fs::path feat = dir / "not_a_checkpoint.umse";
        datapipe::write_features(feat.string(), ds.acoustic[0]);
        CHECK_THROWS_WITH(checkpoint::read_checkpoint(feat.string()),
                          Catch::Matchers::ContainsSubstring("wrong magic"));
    }
}

TEST_CASE("evaluation scores real generations and export writes pooled fusion states") {
    const fs::path dir = fresh_dir("eval_export");
    RunConfig rc = tiny_config(dir);
    rc.synth_msa_valid = 0;
    rc.synth_erc_valid = 0;
    rc.valid_every = 0;
    rc.epochs = 500; // enough to overfit 16 tiny samples completely
    const auto result = train::train_run(rc);
    const auto lm = train::load_model(result.final_checkpoint, result.vocab_path);
    const auto ds = datapipe::load_dataset(result.manifest);

    SECTION("an overfit model reproduces its training labels through generation") {
        const auto outcome = train::evaluate_dataset(lm.P, lm.mc, ds, lm.vocab, rc.max_text_len);
        REQUIRE(outcome.n == 16);
        CHECK(outcome.exact_match() == 1.0);
        CHECK(outcome.malformed == 0);
        REQUIRE(outcome.msa.has_value());
        REQUIRE(outcome.erc.has_value());
        CHECK(outcome.msa->value("mae") == 0.0);
        CHECK(outcome.erc->value("acc") == 1.0);
        CHECK(outcome.erc->value("wf1") == 1.0);

        // Per-sample records agree with the aggregate and with the gold labels.
        std::size_t exact = 0;
        for (const auto& s : outcome.samples) exact += s.exact ? 1 : 0;
        CHECK(static_cast<double>(exact) / outcome.n == outcome.exact_match());
        for (std::size_t i = 0; i < ds.records.size(); ++i) {
            const auto& s = outcome.samples[i];
            CHECK(s.id == ds.records[i].sample.id);
            CHECK(s.pred.well_formed);
            if (s.task == textcodec::Task::msa)
                CHECK(s.pred.intensity == *ds.records[i].sample.intensity);
            else
                CHECK(s.pred.emotion == *ds.records[i].sample.emotion);
        }
    }

    SECTION("export writes one pooled row per record, reproducibly") {
        const fs::path out = dir / "emb.umse";
        const auto labels1 = train::export_embeddings(lm.P, lm.mc, ds, lm.vocab, 1, out.string(),
                                                      rc.max_text_len);
        const std::string bytes1 = slurp(out);
        train::export_embeddings(lm.P, lm.mc, ds, lm.vocab, 1, out.string(), rc.max_text_len);
        CHECK(slurp(out) == bytes1);

        const auto mat = datapipe::read_features(out.string());
        CHECK(mat.rows == static_cast<int>(ds.records.size()));
        CHECK(mat.cols == rc.d_t);

        std::ifstream lab(labels1);
        REQUIRE(lab.good());
        std::string line;
        std::getline(lab, line);
        CHECK(line == "id\ttask\tpolarity\tintensity\temotion");
        std::size_t label_rows = 0;
        while (std::getline(lab, line))
            if (!line.empty()) ++label_rows;
        CHECK(label_rows == ds.records.size());

        // Recompute the first record's pooled state by hand; the file stores
        // floats, so the comparison happens after the same narrowing.
        const auto vocab = lm.vocab;
        const auto item = datapipe::formalize_record(ds.records[0], ds.acoustic[0], ds.visual[0],
                                                     vocab, rc.max_text_len);
        Graph g;
        const auto sf = model::forward_sample(g, lm.P, lm.mc, item, false);
        REQUIRE(!sf.enc.fusion_states.empty());
        const auto pooled =
            numcore::mean_rows_prefix(g, sf.enc.fusion_states[0], item.true_len);
        for (int c = 0; c < mat.cols; ++c)
            CHECK(mat.data[static_cast<std::size_t>(c)] ==
                  static_cast<double>(static_cast<float>(pooled.at(0, c))));
    }

    SECTION("layer bounds are enforced") {
        const fs::path out = dir / "emb_bad.umse";
        CHECK_THROWS_WITH(train::export_embeddings(lm.P, lm.mc, ds, lm.vocab, 0, out.string(),
                                                   rc.max_text_len),
                          Catch::Matchers::ContainsSubstring("out of range"));
        CHECK_THROWS_WITH(train::export_embeddings(lm.P, lm.mc, ds, lm.vocab, 2, out.string(),
                                                   rc.max_text_len),
                          Catch::Matchers::ContainsSubstring("out of range"));
    }
}
