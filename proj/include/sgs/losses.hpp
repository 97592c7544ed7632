#pragma once
// The three contrastive pretraining losses and their unweighted sum, as pure
// functions of tensors. No temperature anywhere: scores enter the softmax
// denominators as raw cosine similarities (or matching scores).
//
// Shared form: given a square score matrix M with matched pairs on the
// diagonal, the symmetric InfoNCE value is
//   sum_i lse(row_i) + sum_i lse(col_i) - 2 * trace(M),
// which equals the negated sum of the two log-softmax diagonals.
//
// Zero-norm vectors are an error (cosine similarity is undefined); the
// encoders are responsible for producing nonzero outputs, and silently
// clamping here would mask a collapsed representation.

#include <stdexcept>
#include <vector>

#include "sgs/tensor.hpp"

namespace sgs {

// Cosine similarity between all row pairs: [A, d] x [B, d] -> [A, B].
template <class S>
Tensor<S> cosine_matrix(const Tensor<S>& a, const Tensor<S>& b) {
  return matmul_nt(rows_l2_normalize(a), rows_l2_normalize(b));
}

template <class S>
Tensor<S> symmetric_info_nce(const Tensor<S>& scores) {
  require_rank(scores, 2, "symmetric_info_nce");
  if (scores.extent(0) != scores.extent(1))
    throw std::invalid_argument("symmetric_info_nce: score matrix must be square");
  auto row_lse = sum_all(logsumexp_rows(scores));
  auto col_lse = sum_all(logsumexp_rows(transpose(scores)));
  return sub(add(row_lse, col_lse), scale(diag_sum(scores), S(2)));
}

// Matched graph representations and frame vectors of one video: [T, d] each.
template <class S>
Tensor<S> intra_loss(const Tensor<S>& g, const Tensor<S>& f) {
  require_rank(g, 2, "intra_loss");
  if (g.shape() != f.shape()) throw std::invalid_argument("intra_loss: shape mismatch");
  return symmetric_info_nce(cosine_matrix(g, f));
}

// Batch of videos: [B, T, d] each; per frame index, contrast across the
// batch, then sum the per-frame values over all T frames.
template <class S>
Tensor<S> inter_loss(const Tensor<S>& g, const Tensor<S>& f) {
  require_rank(g, 3, "inter_loss");
  if (g.shape() != f.shape()) throw std::invalid_argument("inter_loss: shape mismatch");
  const int T = g.extent(1);
  Tensor<S> total = Tensor<S>::scalar(S(0));
  for (int t = 0; t < T; ++t)
    total = add(total, symmetric_info_nce(cosine_matrix(chip1(g, t), chip1(f, t))));
  return total;
}

// Visual context of each semantic embedding, literally as defined: an inner
// softmax over the N_g embeddings normalizes the dot products per sub-region,
// and an outer softmax over sub-regions weights the region vectors. The inner
// softmax output itself is the score of the outer one (not simplified away).
//   e: [N_g, d] node+edge representations; r: [h*w, d] sub-region vectors.
template <class S>
Tensor<S> visual_context(const Tensor<S>& e, const Tensor<S>& r) {
  require_rank(e, 2, "visual_context");
  require_rank(r, 2, "visual_context");
  if (e.extent(1) != r.extent(1))
    throw std::invalid_argument("visual_context: dim mismatch");
  if (e.extent(0) < 1 || r.extent(0) < 1)
    throw std::invalid_argument("visual_context: empty inputs");
  // dots[j, i] = r_j . e_i; row softmax normalizes over embeddings i.
  auto sim_dot = transpose(softmax_rows(matmul_nt(r, e)));  // [N_g, h*w]
  auto weights = softmax_rows(sim_dot);                     // outer softmax over regions
  return matmul(weights, r);                                // [N_g, d]
}

// S(G, F) = log sum_i exp(cos(e_i, c_i)) with c_i the visual context of e_i.
template <class S>
Tensor<S> matching_score(const Tensor<S>& e, const Tensor<S>& r) {
  auto c = visual_context(e, r);
  auto en = rows_l2_normalize(e);
  auto cn = rows_l2_normalize(c);
  const int ng = e.extent(0), d = e.extent(1);
  auto ones = Tensor<S>::filled({d, 1}, S(1));
  auto diag = matmul(mul(en, cn), ones);  // [N_g, 1] of cos(e_i, c_i)
  return reshape(logsumexp_rows(reshape(diag, {1, ng})), {});
}

template <class S>
struct GraphFramePair {
  Tensor<S> semantic_embeddings;  // [N_g, d]
  Tensor<S> feature_map;          // [h*w, d]
};

// Symmetric InfoNCE over the P x P matching-score matrix of all annotated
// (graph, frame) pairs pooled across the batch.
template <class S>
Tensor<S> finegrain_loss(const std::vector<GraphFramePair<S>>& pairs) {
  const int P = static_cast<int>(pairs.size());
  if (P < 1) throw std::invalid_argument("finegrain_loss: no pairs");
  std::vector<Tensor<S>> rows;
  rows.reserve(static_cast<size_t>(P));
  for (int i = 0; i < P; ++i) {
    std::vector<Tensor<S>> cells;
    cells.reserve(static_cast<size_t>(P));
    for (int j = 0; j < P; ++j)
      cells.push_back(reshape(
          matching_score(pairs[i].semantic_embeddings, pairs[j].feature_map), {1, 1}));
    rows.push_back(concat_cols(cells));
  }
  return symmetric_info_nce(concat_rows(rows));
}

template <class S>
Tensor<S> total_loss(const Tensor<S>& intra, const Tensor<S>& inter, const Tensor<S>& fine) {
  return add(add(intra, inter), fine);
}

}  // namespace sgs
