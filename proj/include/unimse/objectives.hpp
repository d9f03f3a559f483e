#pragma once

// Training objectives: generative task loss, inter-modality contrastive
// losses, and their weighted combination.

#include <cstdint>
#include <vector>

#include "unimse/common.hpp"
#include "unimse/tensor.hpp"

namespace unimse::objectives {

using numcore::Graph;
using numcore::Tensor;

// Mean negative log-likelihood over unmasked target positions. Logits row r
// scores target id targets[r]; mask entries are 0/1 keep flags.
inline Tensor task_nll(Graph& g, const Tensor& logits, const std::vector<int>& targets,
                       const std::vector<std::uint8_t>& mask) {
    if (targets.size() != mask.size()) fail("task_nll: targets and mask sizes differ");
    std::vector<double> weights(mask.size());
    for (std::size_t i = 0; i < mask.size(); ++i) weights[i] = mask[i] ? 1.0 : 0.0;
    return numcore::cross_entropy_rows(g, logits, targets, weights);
}

inline Tensor task_nll(Graph& g, const Tensor& logits, const std::vector<int>& targets) {
    return task_nll(g, logits, targets,
                    std::vector<std::uint8_t>(targets.size(), std::uint8_t{1}));
}

// Contrastive loss with the text stream as anchor. Row i of each matrix is
// sample i's pooled vector; score(i, k) = dot(text_i, other_k) / tau. Each
// anchor's positive is its own sample, every other sample is a negative, and
// the per-anchor softmax losses are averaged.
inline Tensor inter_modal_cl(Graph& g, const Tensor& text_pooled, const Tensor& other_pooled,
                             double tau = 1.0) {
    const int k = text_pooled.rows();
    if (k < 2) fail("inter_modal_cl: need at least 2 samples, got ", k);
    if (other_pooled.rows() != k)
        fail("inter_modal_cl: stream sizes differ (", k, " vs ", other_pooled.rows(), ")");
    if (text_pooled.cols() != other_pooled.cols())
        fail("inter_modal_cl: pooled widths differ (", text_pooled.cols(), " vs ",
             other_pooled.cols(), ")");
    if (tau <= 0.0) fail("inter_modal_cl: temperature must be positive, got ", tau);
    const Tensor scores = numcore::scale(g, numcore::matmul_nt(g, text_pooled, other_pooled),
                                         1.0 / tau);
    std::vector<int> diag(static_cast<std::size_t>(k));
    for (int i = 0; i < k; ++i) diag[static_cast<std::size_t>(i)] = i;
    return numcore::cross_entropy_rows(g, scores, diag,
                                       std::vector<double>(static_cast<std::size_t>(k), 1.0));
}

// The combined objective and its parts. Scalars are graph nodes so the total
// can be backpropagated; value() reads give the logged numbers.
struct LossBreakdown {
    Tensor task;
    std::vector<Tensor> cl_ta; // one per contrastive layer, possibly empty
    std::vector<Tensor> cl_tv;
    double alpha = 0.5;
    double beta = 0.5;
    Tensor total;

    double task_value() const { return task.at(0, 0); }
    double cl_ta_sum() const {
        double s = 0.0;
        for (const auto& t : cl_ta) s += t.at(0, 0);
        return s;
    }
    double cl_tv_sum() const {
        double s = 0.0;
        for (const auto& t : cl_tv) s += t.at(0, 0);
        return s;
    }
    double total_value() const { return total.at(0, 0); }
};

// total = task + alpha * sum(cl_ta) + beta * sum(cl_tv), summed left to
// right so the arithmetic identity is reproducible exactly. Either list may
// be empty on its own (a dropped modality contributes no terms); two
// non-empty lists must cover the same layers.
inline LossBreakdown total_loss(Graph& g, const Tensor& task, std::vector<Tensor> cl_ta,
                                std::vector<Tensor> cl_tv, double alpha = 0.5, double beta = 0.5) {
    if (alpha < 0.0 || beta < 0.0)
        fail("total_loss: weights must be non-negative, got alpha=", alpha, " beta=", beta);
    if (!cl_ta.empty() && !cl_tv.empty() && cl_ta.size() != cl_tv.size())
        fail("total_loss: per-layer term counts differ (", cl_ta.size(), " vs ", cl_tv.size(), ")");
    LossBreakdown b;
    b.task = task;
    b.cl_ta = std::move(cl_ta);
    b.cl_tv = std::move(cl_tv);
    b.alpha = alpha;
    b.beta = beta;
    Tensor total = task;
    if (!b.cl_ta.empty()) {
        Tensor sum_ta = b.cl_ta[0];
        for (std::size_t j = 1; j < b.cl_ta.size(); ++j) sum_ta = numcore::add(g, sum_ta, b.cl_ta[j]);
        total = numcore::add(g, total, numcore::scale(g, sum_ta, alpha));
    }
    if (!b.cl_tv.empty()) {
        Tensor sum_tv = b.cl_tv[0];
        for (std::size_t j = 1; j < b.cl_tv.size(); ++j) sum_tv = numcore::add(g, sum_tv, b.cl_tv[j]);
        total = numcore::add(g, total, numcore::scale(g, sum_tv, beta));
    }
    b.total = total;
    return b;
}

} // namespace unimse::objectives
