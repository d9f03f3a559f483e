#pragma once

// The encoder-decoder model: word embeddings with learned absolute positions
// and segment ids, a pre-norm transformer encoder whose last n_f layers carry
// multimodal fusion adapters, single-layer recurrent encoders for the
// acoustic and visual streams, convolutional projections for contrastive
// learning, a causal transformer decoder, and greedy generation.
//
// Everything runs per sample on 2-D tensors; a batch is a loop over samples
// sharing one tape.

#include <cmath>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "unimse/common.hpp"
#include "unimse/datapipe.hpp"
#include "unimse/rng.hpp"
#include "unimse/tensor.hpp"
#include "unimse/textcodec.hpp"

namespace unimse::model {

using numcore::Graph;
using numcore::Tensor;

struct ModelConfig {
    int vocab_size = 0;
    int d_t = 32;       // text / residual width
    int enc_layers = 2;
    int dec_layers = 2;
    int heads = 4;
    int d_ff = 64;
    int d_a_in = 6;     // acoustic feature width (from data)
    int d_a = 16;       // acoustic recurrent state width
    int d_v_in = 6;
    int d_v = 16;
    int n_f = 2;        // encoder layers carrying fusion adapters (the last n_f)
    int n_cl = 2;       // fusion states entering contrastive learning (the last n_cl)
    int d_c = 16;       // contrastive projection width
    int len_common = 8; // common sequence length before pooling
    int k_a = 1;        // conv kernel per stream
    int k_v = 1;
    int k_f = 1;
    int bottleneck = 16; // adapter down-projection width
    int max_text_len = 64;
    int max_gen_len = 8;
    double dropout = 0.0;

    void validate() const {
        const int min_vocab = static_cast<int>(textcodec::reserved_tokens().size());
        if (vocab_size < min_vocab)
            fail("ModelConfig: vocab size ", vocab_size, " is smaller than the reserved block (",
                 min_vocab, ")");
        const int dims[] = {d_t, enc_layers, dec_layers, heads, d_ff, d_a_in, d_a, d_v_in, d_v,
                            d_c, len_common, k_a, k_v, k_f, bottleneck, max_text_len, max_gen_len};
        for (int d : dims)
            if (d < 1) fail("ModelConfig: all dimensions must be >= 1");
        if (d_t % heads != 0) fail("ModelConfig: d_t ", d_t, " not divisible by heads ", heads);
        if (n_f < 0 || n_f > enc_layers)
            fail("ModelConfig: n_f ", n_f, " must be in [0, ", enc_layers, "]");
        if (n_cl < 0 || n_cl > n_f) fail("ModelConfig: n_cl ", n_cl, " must be in [0, ", n_f, "]");
        if (dropout < 0.0 || dropout >= 1.0) fail("ModelConfig: dropout must be in [0, 1)");
    }
};

// Ordered named parameter container. Construction order is fixed, so
// initialization draws and checkpoint layout are reproducible.
struct ParamStore {
    std::vector<std::pair<std::string, Tensor>> items;
    std::unordered_map<std::string, std::size_t> index;

    Tensor add(const std::string& name, Tensor t) {
        if (!index.emplace(name, items.size()).second) fail("ParamStore: duplicate name ", name);
        items.emplace_back(name, t);
        return t;
    }
    const Tensor& get(const std::string& name) const {
        const auto it = index.find(name);
        if (it == index.end()) fail("ParamStore: no parameter named ", name);
        return items[it->second].second;
    }
    bool has(const std::string& name) const { return index.count(name) > 0; }
    void zero_grad() {
        for (auto& [name, t] : items) t.zero_grad();
    }
    std::size_t scalar_count() const {
        std::size_t n = 0;
        for (const auto& [name, t] : items) n += t.size();
        return n;
    }
};

// Optimizer group by name prefix: adapters and the modality/contrastive
// pathway train at their own learning rates.
inline const char* param_group(const std::string& name) {
    if (name.rfind("pmf.", 0) == 0) return "pmf";
    if (name.rfind("amod.", 0) == 0 || name.rfind("vmod.", 0) == 0 || name.rfind("cl.", 0) == 0)
        return "main";
    return "backbone";
}

namespace detail {

inline Tensor weight(ParamStore& P, Rng& rng, const std::string& name, int r, int c,
                     double stddev = 0.02) {
    return P.add(name, Tensor::randn(r, c, rng, stddev, name));
}

inline Tensor zeros_param(ParamStore& P, const std::string& name, int r, int c) {
    return P.add(name, Tensor::leaf(r, c, std::vector<double>(static_cast<std::size_t>(r) * c, 0.0),
                                    true, name));
}

inline Tensor ones_param(ParamStore& P, const std::string& name, int r, int c) {
    return P.add(name, Tensor::leaf(r, c, std::vector<double>(static_cast<std::size_t>(r) * c, 1.0),
                                    true, name));
}

inline void add_ln(ParamStore& P, Rng&, const std::string& prefix, int d) {
    ones_param(P, prefix + ".gamma", 1, d);
    zeros_param(P, prefix + ".beta", 1, d);
}

inline void add_attn(ParamStore& P, Rng& rng, const std::string& prefix, int d) {
    weight(P, rng, prefix + ".wq", d, d);
    weight(P, rng, prefix + ".wk", d, d);
    weight(P, rng, prefix + ".wv", d, d);
    weight(P, rng, prefix + ".wo", d, d);
}

inline void add_ff(ParamStore& P, Rng& rng, const std::string& prefix, int d, int d_ff) {
    weight(P, rng, prefix + ".w1", d, d_ff);
    zeros_param(P, prefix + ".b1", 1, d_ff);
    weight(P, rng, prefix + ".w2", d_ff, d);
    zeros_param(P, prefix + ".b2", 1, d);
}

inline void add_lstm(ParamStore& P, Rng& rng, const std::string& prefix, int d_in, int d) {
    weight(P, rng, prefix + ".wx", d_in, 4 * d);
    weight(P, rng, prefix + ".wh", d, 4 * d);
    zeros_param(P, prefix + ".b", 1, 4 * d);
}

} // namespace detail

// Builds all parameters in a fixed order from one derived seed.
inline ParamStore init_params(const ModelConfig& cfg, std::uint64_t master_seed) {
    cfg.validate();
    ParamStore P;
    Rng rng(derive_seed(master_seed, SeedStream::init));
    using namespace detail;

    weight(P, rng, "emb.token", cfg.vocab_size, cfg.d_t);
    weight(P, rng, "emb.pos_enc", cfg.max_text_len, cfg.d_t);
    weight(P, rng, "emb.pos_dec", cfg.max_gen_len + 1, cfg.d_t);
    weight(P, rng, "emb.seg", 2, cfg.d_t);

    for (int i = 0; i < cfg.enc_layers; ++i) {
        const std::string p = str("enc.", i);
        add_ln(P, rng, p + ".ln1", cfg.d_t);
        add_attn(P, rng, p + ".attn", cfg.d_t);
        add_ln(P, rng, p + ".ln2", cfg.d_t);
        add_ff(P, rng, p + ".ff", cfg.d_t, cfg.d_ff);
    }
    add_ln(P, rng, "enc.final_ln", cfg.d_t);

    for (int i = 0; i < cfg.dec_layers; ++i) {
        const std::string p = str("dec.", i);
        add_ln(P, rng, p + ".ln1", cfg.d_t);
        add_attn(P, rng, p + ".self_attn", cfg.d_t);
        add_ln(P, rng, p + ".ln2", cfg.d_t);
        add_attn(P, rng, p + ".cross_attn", cfg.d_t);
        add_ln(P, rng, p + ".ln3", cfg.d_t);
        add_ff(P, rng, p + ".ff", cfg.d_t, cfg.d_ff);
    }
    add_ln(P, rng, "dec.final_ln", cfg.d_t);
    weight(P, rng, "out.w", cfg.d_t, cfg.vocab_size);

    add_lstm(P, rng, "amod", cfg.d_a_in, cfg.d_a);
    add_lstm(P, rng, "vmod", cfg.d_v_in, cfg.d_v);

    weight(P, rng, "cl.a.w", cfg.k_a * cfg.d_a, cfg.d_c);
    zeros_param(P, "cl.a.b", 1, cfg.d_c);
    weight(P, rng, "cl.v.w", cfg.k_v * cfg.d_v, cfg.d_c);
    zeros_param(P, "cl.v.b", 1, cfg.d_c);
    weight(P, rng, "cl.f.w", cfg.k_f * cfg.d_t, cfg.d_c);
    zeros_param(P, "cl.f.b", 1, cfg.d_c);

    // Adapter draws come last: two configs differing only in n_f then share
    // every other parameter's initial values under the same seed, which keeps
    // ablation arms comparable.
    for (int j = 0; j < cfg.n_f; ++j) {
        const std::string p = str("pmf.", j);
        const int concat_dim = cfg.d_t + cfg.d_a + cfg.d_v;
        weight(P, rng, p + ".wd", concat_dim, cfg.bottleneck);
        zeros_param(P, p + ".bd", 1, cfg.bottleneck);
        weight(P, rng, p + ".wu", cfg.bottleneck, cfg.d_t);
        zeros_param(P, p + ".bu", 1, cfg.d_t);
        weight(P, rng, p + ".w", cfg.d_t, cfg.d_t);
    }
    return P;
}

// ---- building blocks ----

// Single-layer recurrent encoder over a feature sequence. Returns the full
// state sequence and the state at the true (unpadded) length.
struct ModalityOut {
    Tensor seq;  // len x d
    Tensor last; // 1 x d
};

inline ModalityOut modality_encode(Graph& g, const ParamStore& P, const std::string& prefix,
                                   const Tensor& x, int true_len) {
    // An empty sequence cannot reach here: tensors reject non-positive shapes
    // at construction, so x always has at least one row.
    if (true_len < 1 || true_len > x.rows())
        fail("modality_encode: true length ", true_len, " outside [1, ", x.rows(), "]");
    const Tensor& wx = P.get(prefix + ".wx");
    const Tensor& wh = P.get(prefix + ".wh");
    const Tensor& b = P.get(prefix + ".b");
    const int d = wh.rows();
    if (x.cols() != wx.rows())
        fail("modality_encode: input width ", x.cols(), " does not match ", prefix, ".wx rows ",
             wx.rows());

    const Tensor xw = numcore::add_rowvec(g, numcore::matmul(g, x, wx), b);
    Tensor h = Tensor::zeros(1, d);
    Tensor c = Tensor::zeros(1, d);
    std::vector<Tensor> states;
    for (int t = 0; t < true_len; ++t) {
        const Tensor gates =
            numcore::add(g, numcore::row_slice(g, xw, t, t + 1), numcore::matmul(g, h, wh));
        const Tensor gi = numcore::sigmoid(g, numcore::col_slice(g, gates, 0, d));
        const Tensor gf = numcore::sigmoid(g, numcore::col_slice(g, gates, d, 2 * d));
        const Tensor go = numcore::sigmoid(g, numcore::col_slice(g, gates, 2 * d, 3 * d));
        const Tensor gg = numcore::tanh(g, numcore::col_slice(g, gates, 3 * d, 4 * d));
        c = numcore::add(g, numcore::mul(g, gf, c), numcore::mul(g, gi, gg));
        h = numcore::mul(g, go, numcore::tanh(g, c));
        states.push_back(h);
    }
    ModalityOut out;
    out.seq = states.size() == 1 ? states[0] : numcore::concat_rows(g, states);
    out.last = states.back();
    return out;
}

namespace detail {

// Multi-head attention. `keep` is a full (queries x keys) 0/1 mask.
inline Tensor attention(Graph& g, const ParamStore& P, const std::string& prefix, int heads,
                        const Tensor& x_q, const Tensor& x_kv,
                        const std::vector<std::uint8_t>& keep) {
    const Tensor q = numcore::matmul(g, x_q, P.get(prefix + ".wq"));
    const Tensor k = numcore::matmul(g, x_kv, P.get(prefix + ".wk"));
    const Tensor v = numcore::matmul(g, x_kv, P.get(prefix + ".wv"));
    const int d = q.cols();
    const int dh = d / heads;
    std::vector<Tensor> ctx;
    for (int h = 0; h < heads; ++h) {
        const Tensor qh = numcore::col_slice(g, q, h * dh, (h + 1) * dh);
        const Tensor kh = numcore::col_slice(g, k, h * dh, (h + 1) * dh);
        const Tensor vh = numcore::col_slice(g, v, h * dh, (h + 1) * dh);
        const Tensor scores =
            numcore::scale(g, numcore::matmul_nt(g, qh, kh), 1.0 / std::sqrt(double(dh)));
        const Tensor attn = numcore::masked_softmax_rows(g, scores, keep);
        ctx.push_back(numcore::matmul(g, attn, vh));
    }
    const Tensor merged = heads == 1 ? ctx[0] : numcore::concat_cols(g, ctx);
    return numcore::matmul(g, merged, P.get(prefix + ".wo"));
}

inline Tensor feed_forward(Graph& g, const ParamStore& P, const std::string& prefix,
                           const Tensor& x) {
    const Tensor hidden = numcore::tanh(
        g, numcore::add_rowvec(g, numcore::matmul(g, x, P.get(prefix + ".w1")),
                               P.get(prefix + ".b1")));
    return numcore::add_rowvec(g, numcore::matmul(g, hidden, P.get(prefix + ".w2")),
                               P.get(prefix + ".b2"));
}

inline Tensor ln(Graph& g, const ParamStore& P, const std::string& prefix, const Tensor& x) {
    return numcore::layer_norm_rows(g, x, P.get(prefix + ".gamma"), P.get(prefix + ".beta"));
}

inline Tensor maybe_dropout(Graph& g, const Tensor& x, double p, bool training) {
    return training && p > 0.0 ? numcore::dropout(g, x, p) : x;
}

} // namespace detail

// The fusion adapter. Replicates the modality summary vectors across all text
// positions, concatenates on the feature dim, squeezes through a sigmoid
// bottleneck, and maps the up-projected result plus the incoming state back
// to text width.
inline Tensor pmf_fuse(Graph& g, const Tensor& f_prev, const Tensor& a_last, const Tensor& v_last,
                       const Tensor& wd, const Tensor& bd, const Tensor& wu, const Tensor& bu,
                       const Tensor& w) {
    if (a_last.rows() != 1 || v_last.rows() != 1)
        fail("pmf_fuse: modality summaries must be single rows");
    const int concat_dim = f_prev.cols() + a_last.cols() + v_last.cols();
    if (wd.rows() != concat_dim)
        fail("pmf_fuse: down-projection expects ", wd.rows(), " input features, got ", concat_dim);
    if (wu.cols() != f_prev.cols())
        fail("pmf_fuse: up-projection emits ", wu.cols(), " features, state width is ",
             f_prev.cols());
    if (w.rows() != f_prev.cols() || w.cols() != f_prev.cols())
        fail("pmf_fuse: output map must be square at state width ", f_prev.cols());
    const int l = f_prev.rows();
    const Tensor f = numcore::concat_cols(
        g, {f_prev, numcore::repeat_row(g, a_last, l), numcore::repeat_row(g, v_last, l)});
    const Tensor fd = numcore::sigmoid(g, numcore::add_rowvec(g, numcore::matmul(g, f, wd), bd));
    const Tensor fu = numcore::add_rowvec(g, numcore::matmul(g, fd, wu), bu);
    return numcore::matmul(g, numcore::add(g, fu, f_prev), w);
}

inline Tensor pmf_fuse(Graph& g, const ParamStore& P, int j, const Tensor& f_prev,
                       const Tensor& a_last, const Tensor& v_last) {
    const std::string p = str("pmf.", j);
    return pmf_fuse(g, f_prev, a_last, v_last, P.get(p + ".wd"), P.get(p + ".bd"),
                    P.get(p + ".wu"), P.get(p + ".bu"), P.get(p + ".w"));
}

// ---- encoder ----

struct EncoderOut {
    Tensor states;                      // l x d_t, after the final normalization
    std::vector<Tensor> fusion_states;  // residual stream after each adapter layer
    Tensor a_seq, v_seq;                // modality state sequences
    Tensor a_last, v_last;
    std::vector<std::uint8_t> key_keep; // 1 on real text positions, 0 on padding
    int true_len = 0;
};

// Runs the text encoder with modality fusion. Token and segment ids may carry
// padding past true_len; attention never reads padded keys.
inline EncoderOut encoder_forward(Graph& g, const ParamStore& P, const ModelConfig& cfg,
                                  const std::vector<int>& token_ids,
                                  const std::vector<int>& segment_ids, int true_len,
                                  const Tensor& acoustic, const Tensor& visual,
                                  bool training = false) {
    const int l = static_cast<int>(token_ids.size());
    if (l < 1) fail("encoder_forward: empty token sequence");
    if (l > cfg.max_text_len)
        fail("encoder_forward: sequence length ", l, " exceeds max ", cfg.max_text_len);
    if (segment_ids.size() != token_ids.size())
        fail("encoder_forward: segment ids size mismatch");
    if (true_len < 1 || true_len > l)
        fail("encoder_forward: true length ", true_len, " outside [1, ", l, "]");

    EncoderOut out;
    out.true_len = true_len;
    out.key_keep.assign(static_cast<std::size_t>(l), 0);
    for (int i = 0; i < true_len; ++i) out.key_keep[static_cast<std::size_t>(i)] = 1;

    const ModalityOut am = modality_encode(g, P, "amod", acoustic, acoustic.rows());
    const ModalityOut vm = modality_encode(g, P, "vmod", visual, visual.rows());
    out.a_seq = am.seq;
    out.v_seq = vm.seq;
    out.a_last = am.last;
    out.v_last = vm.last;

    Tensor x = numcore::add(
        g,
        numcore::add(g, numcore::embedding(g, P.get("emb.token"), token_ids),
                     numcore::row_slice(g, P.get("emb.pos_enc"), 0, l)),
        numcore::embedding(g, P.get("emb.seg"), segment_ids));
    x = detail::maybe_dropout(g, x, cfg.dropout, training);

    // Full self-attention mask: every query row keeps only real key columns.
    std::vector<std::uint8_t> self_keep(static_cast<std::size_t>(l) * l, 0);
    for (int r = 0; r < l; ++r)
        for (int c = 0; c < true_len; ++c) self_keep[static_cast<std::size_t>(r) * l + c] = 1;

    for (int i = 0; i < cfg.enc_layers; ++i) {
        const std::string p = str("enc.", i);
        const Tensor normed = detail::ln(g, P, p + ".ln1", x);
        const Tensor attn_out =
            detail::attention(g, P, p + ".attn", cfg.heads, normed, normed, self_keep);
        x = numcore::add(g, x, detail::maybe_dropout(g, attn_out, cfg.dropout, training));
        Tensor ff = detail::feed_forward(g, P, p + ".ff", detail::ln(g, P, p + ".ln2", x));
        const int adapter = i - (cfg.enc_layers - cfg.n_f); // >= 0 in adapter layers
        if (adapter >= 0) ff = pmf_fuse(g, P, adapter, ff, am.last, vm.last);
        x = numcore::add(g, x, detail::maybe_dropout(g, ff, cfg.dropout, training));
        if (adapter >= 0) out.fusion_states.push_back(x);
    }
    out.states = detail::ln(g, P, "enc.final_ln", x);
    return out;
}

// ---- decoder ----

// Teacher-forced decoder pass: input ids (starting with <bos>) to one logits
// row per input position.
inline Tensor decoder_forward(Graph& g, const ParamStore& P, const ModelConfig& cfg,
                              const std::vector<int>& input_ids, const EncoderOut& enc,
                              bool training = false) {
    const int m = static_cast<int>(input_ids.size());
    if (m < 1) fail("decoder_forward: empty input");
    if (m > cfg.max_gen_len + 1)
        fail("decoder_forward: input length ", m, " exceeds max ", cfg.max_gen_len + 1);

    Tensor x = numcore::add(g, numcore::embedding(g, P.get("emb.token"), input_ids),
                            numcore::row_slice(g, P.get("emb.pos_dec"), 0, m));
    x = detail::maybe_dropout(g, x, cfg.dropout, training);

    std::vector<std::uint8_t> causal(static_cast<std::size_t>(m) * m, 0);
    for (int r = 0; r < m; ++r)
        for (int c = 0; c <= r; ++c) causal[static_cast<std::size_t>(r) * m + c] = 1;
    const int l = enc.states.rows();
    std::vector<std::uint8_t> cross(static_cast<std::size_t>(m) * l, 0);
    for (int r = 0; r < m; ++r)
        for (int c = 0; c < l; ++c)
            cross[static_cast<std::size_t>(r) * l + c] = enc.key_keep[static_cast<std::size_t>(c)];

    for (int i = 0; i < cfg.dec_layers; ++i) {
        const std::string p = str("dec.", i);
        const Tensor normed = detail::ln(g, P, p + ".ln1", x);
        const Tensor self_out =
            detail::attention(g, P, p + ".self_attn", cfg.heads, normed, normed, causal);
        x = numcore::add(g, x, detail::maybe_dropout(g, self_out, cfg.dropout, training));
        const Tensor cross_out = detail::attention(g, P, p + ".cross_attn", cfg.heads,
                                                   detail::ln(g, P, p + ".ln2", x), enc.states,
                                                   cross);
        x = numcore::add(g, x, detail::maybe_dropout(g, cross_out, cfg.dropout, training));
        const Tensor ff = detail::feed_forward(g, P, p + ".ff", detail::ln(g, P, p + ".ln3", x));
        x = numcore::add(g, x, detail::maybe_dropout(g, ff, cfg.dropout, training));
    }
    x = detail::ln(g, P, "dec.final_ln", x);
    return numcore::matmul(g, x, P.get("out.w"));
}

// ---- contrastive projection ----

// Maps one stream to the common width via temporal convolution, adjusts to
// the common length (truncate or zero-pad), and mean-pools to a single row.
inline Tensor project_for_cl(Graph& g, const Tensor& seq, const Tensor& w, const Tensor& b, int k,
                             int len_common) {
    if (len_common < 1) fail("project_for_cl: common length must be >= 1");
    Tensor x = numcore::conv1d_same(g, seq, w, b, k);
    if (x.rows() > len_common) {
        x = numcore::row_slice(g, x, 0, len_common);
    } else if (x.rows() < len_common) {
        x = numcore::concat_rows(g, {x, Tensor::zeros(len_common - x.rows(), x.cols())});
    }
    return numcore::mean_rows(g, x);
}

// All three pooled streams for one sample. The text stream reads the fusion
// state's real positions only. Index j counts adapter layers from the first;
// only the last n_cl of them are projected.
struct ClStreams {
    std::vector<Tensor> text; // one per contrastive layer, each 1 x d_c
    Tensor acoustic;          // 1 x d_c
    Tensor visual;            // 1 x d_c
};

inline ClStreams project_sample_for_cl(Graph& g, const ParamStore& P, const ModelConfig& cfg,
                                       const EncoderOut& enc) {
    if (cfg.n_cl < 1) fail("project_sample_for_cl: contrastive learning is disabled (n_cl = 0)");
    ClStreams out;
    out.acoustic =
        project_for_cl(g, enc.a_seq, P.get("cl.a.w"), P.get("cl.a.b"), cfg.k_a, cfg.len_common);
    out.visual =
        project_for_cl(g, enc.v_seq, P.get("cl.v.w"), P.get("cl.v.b"), cfg.k_v, cfg.len_common);
    for (int j = cfg.n_f - cfg.n_cl; j < cfg.n_f; ++j) {
        const Tensor real_rows =
            numcore::row_slice(g, enc.fusion_states[static_cast<std::size_t>(j)], 0, enc.true_len);
        out.text.push_back(project_for_cl(g, real_rows, P.get("cl.f.w"), P.get("cl.f.b"), cfg.k_f,
                                          cfg.len_common));
    }
    return out;
}

// ---- whole-sample passes ----

struct SampleForward {
    EncoderOut enc;
    Tensor logits; // one row per target position
};

inline Tensor features_as_tensor(const datapipe::FeatureMatrix& m) {
    return Tensor::leaf(m.rows, m.cols, m.data);
}

// Teacher-forced pass over one formalized sample: encoder plus decoder fed
// <bos> followed by all but the last target id, producing logits aligned with
// the full target sequence.
inline SampleForward forward_sample(Graph& g, const ParamStore& P, const ModelConfig& cfg,
                                    const datapipe::FormalizedInput& item, bool training = false) {
    if (item.target_ids.empty()) fail("forward_sample: sample ", item.id, " has no target");
    SampleForward out;
    out.enc = encoder_forward(g, P, cfg, item.token_ids, item.segment_ids, item.true_len,
                              features_as_tensor(*item.acoustic), features_as_tensor(*item.visual),
                              training);
    std::vector<int> dec_in;
    dec_in.push_back(textcodec::kBos);
    dec_in.insert(dec_in.end(), item.target_ids.begin(), item.target_ids.end() - 1);
    out.logits = decoder_forward(g, P, cfg, dec_in, out.enc, training);
    return out;
}

// Greedy decoding: argmax at each step (ties to the lowest id), stopping at
// <eos> or the configured cap. Returns the generated ids, <eos> included when
// emitted.
inline std::vector<int> generate(const ParamStore& P, const ModelConfig& cfg,
                                 const std::vector<int>& token_ids,
                                 const std::vector<int>& segment_ids, int true_len,
                                 const datapipe::FeatureMatrix& acoustic,
                                 const datapipe::FeatureMatrix& visual) {
    std::vector<int> out;
    Graph g;
    const EncoderOut enc = encoder_forward(g, P, cfg, token_ids, segment_ids, true_len,
                                           features_as_tensor(acoustic),
                                           features_as_tensor(visual));
    for (int step = 0; step < cfg.max_gen_len; ++step) {
        std::vector<int> dec_in;
        dec_in.push_back(textcodec::kBos);
        dec_in.insert(dec_in.end(), out.begin(), out.end());
        const Tensor logits = decoder_forward(g, P, cfg, dec_in, enc);
        const int last = logits.rows() - 1;
        int best = 0;
        double best_v = logits.at(last, 0);
        for (int j = 1; j < logits.cols(); ++j)
            if (logits.at(last, j) > best_v) {
                best_v = logits.at(last, j);
                best = j;
            }
        out.push_back(best);
        if (best == textcodec::kEos) break;
    }
    return out;
}

} // namespace unimse::model
