#pragma once

#include <array>
#include <string>

#include "detco/matrix.hpp"
#include "detco/memory.hpp"
#include "detco/model.hpp"

namespace detco::contrast {

struct Temperatures {
  double tau_gg = 0.2;
  double tau_ll = 0.15;
  double tau_gl = 0.5;
  void validate() const;
};

/// Per-stage weights, shallow (Res2) to deep (Res5).
struct LossWeights {
  std::array<double, model::kNumStages> w{0.1, 0.4, 0.7, 1.0};
  void validate() const;
  /// Weights with only the deepest stage kept, used when multi-level
  /// supervision is disabled.
  static LossWeights deepest_only() { return {{0.0, 0.0, 0.0, 1.0}}; }
};

struct BranchLosses {
  double l_gg = 0.0;
  double l_ll = 0.0;
  double l_gl = 0.0;
  double sum() const { return l_gg + l_ll + l_gl; }
};

struct DetcoLossReport {
  std::array<BranchLosses, model::kNumStages> per_stage{};
  double total = 0.0;

  /// sum_i w_i * (l_gg + l_ll + l_gl) recomputed from the sub-losses.
  double recombine(const LossWeights& weights) const;
  /// Throws NonFiniteLossError naming the first non-finite sub-loss.
  void check_finite() const;
  std::string describe() const;
};

/// Mean over the batch of -log softmax of the positive logit against the
/// negatives, all logits scaled by 1/tau. `negs` may have zero rows.
double info_nce(const MatrixRef& q, const MatrixRef& k_pos, const MatrixRef& negs, double tau);

struct InfoNceResult {
  double loss = 0.0;
  Matrix grad_q;  // d loss / d q; keys are constants
};
InfoNceResult info_nce_with_grad(const MatrixRef& q, const MatrixRef& k_pos, const MatrixRef& negs,
                                 double tau);

/// l_gg = InfoNCE(q_g, k_g; global queue), l_ll = InfoNCE(q_l, k_l; local
/// queue), l_gl = InfoNCE(q_l, k_g; global queue).
BranchLosses stage_losses(const MatrixRef& q_g, const MatrixRef& k_g, const MatrixRef& q_l,
                          const MatrixRef& k_l, const memory::FeatureQueue& global_queue,
                          const memory::FeatureQueue& local_queue, const Temperatures& taus);

DetcoLossReport detco_loss(const model::EmbeddingSet& embeds_q, const model::EmbeddingSet& embeds_k,
                           const memory::QueueBank& bank, const Temperatures& taus,
                           const LossWeights& weights);

/// Loss plus gradients with respect to the query embeddings. With
/// `include_local == false` only the global<->global branch is evaluated
/// and the local terms are reported as 0. Gradients of zero-weight stages
/// are left empty.
struct DetcoLossResult {
  DetcoLossReport report;
  std::array<Matrix, model::kNumStages> grad_global;
  std::array<Matrix, model::kNumStages> grad_local;
};
DetcoLossResult detco_loss_with_grad(const model::EmbeddingSet& embeds_q, const model::EmbeddingSet& embeds_k,
                                     const memory::QueueBank& bank, const Temperatures& taus,
                                     const LossWeights& weights, bool include_local);

}  // namespace detco::contrast
