#pragma once

// Similarity kernels and the contrastive objectives. The InfoNCE paths go
// through log-softmax (row-max subtracted) so small temperatures stay finite.

#include <cmath>
#include <cstdint>

#include "cscon/common.hpp"
#include "cscon/tensor.hpp"

namespace cscon {

inline constexpr double kCosineFloor = 1e-12;

// Plain scalar cosine similarity; a zero-length operand yields 0 and sets
// the degeneracy flag.
inline double cosine_sim(const std::vector<double>& a, const std::vector<double>& b,
                         bool* degenerate = nullptr) {
  if (a.size() != b.size()) throw InvalidArgument("cosine_sim: length mismatch");
  for (double v : a)
    if (!std::isfinite(v)) throw InvalidArgument("cosine_sim: non-finite operand");
  for (double v : b)
    if (!std::isfinite(v)) throw InvalidArgument("cosine_sim: non-finite operand");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) {
    if (degenerate) *degenerate = true;
    return 0.0;
  }
  if (degenerate) *degenerate = false;
  return dot / std::max(std::sqrt(na) * std::sqrt(nb), kCosineFloor);
}

// Pairwise cosine similarities between corresponding row blocks:
// (batch, m, d) x (batch, m, d) -> (batch, m, m), entry (i, j) comparing
// row i of a against row j of b.
template <class Real>
TensorT<Real> cosine_matrix(const TensorT<Real>& a, const TensorT<Real>& b) {
  if (a.shape().ndim() != 3 || a.shape() != b.shape())
    throw InvalidArgument("cosine_matrix: expected matching 3-axis shapes, got " +
                          a.shape().str() + " and " + b.shape().str());
  return batched_matmul(l2_normalize_last(a, kCosineFloor), l2_normalize_last(b, kCosineFloor),
                        /*trans_b=*/true);
}

// InfoNCE over a precomputed similarity tensor (batch, m, m): the diagonal
// entries are the positives, rows are the anchors. Mean over all anchors.
template <class Real>
TensorT<Real> info_nce_from_sim(const TensorT<Real>& sim, double tau) {
  if (tau <= 0.0) throw InvalidArgument("info_nce_from_sim: tau must be > 0");
  if (sim.shape().ndim() != 3 || sim.shape()[1] != sim.shape()[2])
    throw InvalidArgument("info_nce_from_sim: expected square trailing axes, got " +
                          sim.shape().str());
  const std::int64_t m = sim.shape()[1];
  auto logp = log_softmax_last(scale(sim, 1.0 / tau));
  auto eye = TensorT<Real>::zeros(Shape{1, m, m});
  for (std::int64_t i = 0; i < m; ++i) eye.values()[i * m + i] = Real(1);
  auto diag = reduce_sum(mul(logp, eye), 2);  // (batch, m)
  return scale(reduce_mean_all(diag), -1.0);
}

// Per-sample InfoNCE whose negatives never cross samples; mean over the
// batch. v_c anchors against v_s candidates, positives on the diagonal.
template <class Real>
TensorT<Real> inner_instance_loss(const TensorT<Real>& v_c, const TensorT<Real>& v_s,
                                  double tau) {
  if (tau <= 0.0) throw InvalidArgument("inner_instance_loss: tau must be > 0");
  if (v_c.shape().ndim() != 3 || v_c.shape() != v_s.shape())
    throw InvalidArgument("inner_instance_loss: expected matching (batch, m, d) shapes, got " +
                          v_c.shape().str() + " and " + v_s.shape().str());
  return info_nce_from_sim(cosine_matrix(v_c, v_s), tau);
}

// All rows of the batch pooled into one InfoNCE: anchors and negatives span
// every masked patch of every sample. Inputs are (batch * m, d).
template <class Real>
TensorT<Real> inter_instance_loss(const TensorT<Real>& v_c, const TensorT<Real>& v_s,
                                  double tau) {
  if (tau <= 0.0) throw InvalidArgument("inter_instance_loss: tau must be > 0");
  if (v_c.shape().ndim() != 2 || v_c.shape() != v_s.shape())
    throw InvalidArgument("inter_instance_loss: expected matching (rows, d) shapes, got " +
                          v_c.shape().str() + " and " + v_s.shape().str());
  const std::int64_t rows = v_c.shape()[0], d = v_c.shape()[1];
  auto a = reshape(v_c, Shape{1, rows, d});
  auto b = reshape(v_s, Shape{1, rows, d});
  return info_nce_from_sim(cosine_matrix(a, b), tau);
}

// Negative mean cosine similarity between corresponding tokens; used by the
// triplet-branch ablation to align a masked branch with the unmasked encode.
template <class Real>
TensorT<Real> alignment_target_loss(const TensorT<Real>& full_repr,
                                    const TensorT<Real>& branch_repr) {
  if (full_repr.shape().ndim() != 2 || full_repr.shape() != branch_repr.shape())
    throw InvalidArgument("alignment_target_loss: expected matching (rows, d) shapes, got " +
                          full_repr.shape().str() + " and " + branch_repr.shape().str());
  auto cos = reduce_sum(mul(l2_normalize_last(full_repr, kCosineFloor),
                            l2_normalize_last(branch_repr, kCosineFloor)),
                        1);  // (rows)
  return scale(reduce_mean_all(cos), -1.0);
}

// Softmax cross-entropy against integer labels; mean over rows.
template <class Real>
TensorT<Real> cross_entropy(const TensorT<Real>& logits, const std::vector<int>& labels) {
  if (logits.shape().ndim() != 2 ||
      logits.shape()[0] != static_cast<std::int64_t>(labels.size()))
    throw InvalidArgument("cross_entropy: logits " + logits.shape().str() + " do not match " +
                          std::to_string(labels.size()) + " labels");
  const std::int64_t rows = logits.shape()[0], cols = logits.shape()[1];
  auto onehot = TensorT<Real>::zeros(Shape{rows, cols});
  for (std::int64_t r = 0; r < rows; ++r) {
    if (labels[r] < 0 || labels[r] >= cols)
      throw InvalidArgument("cross_entropy: label out of range");
    onehot.values()[r * cols + labels[r]] = Real(1);
  }
  auto picked = reduce_sum(mul(log_softmax_last(logits), onehot), 1);  // (rows)
  return scale(reduce_mean_all(picked), -1.0);
}

}  // namespace cscon
