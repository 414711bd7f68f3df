#include "detco/contrast.hpp"

#include <cmath>
#include <sstream>

#include "detco/errors.hpp"

namespace detco::contrast {
namespace {

void check_inputs(const MatrixRef& q, const MatrixRef& k_pos, const MatrixRef& negs, double tau) {
  if (!(tau > 0.0)) throw InputError("temperature must be positive, got " + std::to_string(tau));
  if (q.rows() != k_pos.rows() || q.cols() != k_pos.cols()) {
    throw InputError("query and positive key batches differ in shape");
  }
  if (negs.rows() > 0 && negs.cols() != q.cols()) throw InputError("negatives dim does not match query dim");
  memory::check_unit_rows(q, memory::kUnitNormTolerance, "info_nce query");
  memory::check_unit_rows(k_pos, memory::kUnitNormTolerance, "info_nce positive key");
  memory::check_unit_rows(negs, memory::kUnitNormTolerance, "info_nce negatives");
}

// Per-row loss and, if requested, softmax weights over [positive, negatives].
double evaluate(const MatrixRef& q, const MatrixRef& k_pos, const MatrixRef& negs, double tau, Matrix* grad) {
  check_inputs(q, k_pos, negs, tau);
  const Eigen::Index b = q.rows();
  if (b == 0) throw InputError("info_nce needs a non-empty batch");
  const Eigen::VectorXd pos = (q.cwiseProduct(k_pos)).rowwise().sum() / tau;
  Matrix neg;
  if (negs.rows() > 0) neg = (q * negs.transpose()) / tau;
  double total = 0.0;
  if (grad) *grad = Matrix::Zero(b, q.cols());
  for (Eigen::Index i = 0; i < b; ++i) {
    double m = pos[i];
    if (negs.rows() > 0) m = std::max(m, neg.row(i).maxCoeff());
    double z = std::exp(pos[i] - m);
    Eigen::RowVectorXd e;
    if (negs.rows() > 0) {
      e = (neg.row(i).array() - m).exp().matrix();
      z += e.sum();
    }
    const double lse = m + std::log(z);
    total += lse - pos[i];
    if (grad) {
      const double p0 = std::exp(pos[i] - lse);
      Eigen::RowVectorXd g = (p0 - 1.0) * k_pos.row(i);
      if (negs.rows() > 0) g += (e / z) * negs;
      grad->row(i) = g / (tau * static_cast<double>(b));
    }
  }
  return total / static_cast<double>(b);
}

}  // namespace

void Temperatures::validate() const {
  if (!(tau_gg > 0.0)) throw ConfigError("contrast.tau_gg: expected positive number, got " + std::to_string(tau_gg));
  if (!(tau_ll > 0.0)) throw ConfigError("contrast.tau_ll: expected positive number, got " + std::to_string(tau_ll));
  if (!(tau_gl > 0.0)) throw ConfigError("contrast.tau_gl: expected positive number, got " + std::to_string(tau_gl));
}

void LossWeights::validate() const {
  for (double v : w) {
    if (!(v >= 0.0) || !std::isfinite(v)) {
      throw ConfigError("contrast.loss_weights: entries must be finite and non-negative");
    }
  }
}

double DetcoLossReport::recombine(const LossWeights& weights) const {
  double t = 0.0;
  for (int s = 0; s < model::kNumStages; ++s) t += weights.w[s] * per_stage[s].sum();
  return t;
}

void DetcoLossReport::check_finite() const {
  for (int s = 0; s < model::kNumStages; ++s) {
    const auto& b = per_stage[s];
    const std::pair<const char*, double> items[] = {{"l_gg", b.l_gg}, {"l_ll", b.l_ll}, {"l_gl", b.l_gl}};
    for (const auto& [name, v] : items) {
      if (!std::isfinite(v)) {
        throw NonFiniteLossError("non-finite " + std::string(name) + " at stage Res" +
                                 std::to_string(model::kStageNames[s]) + "\n" + describe());
      }
    }
  }
  if (!std::isfinite(total)) throw NonFiniteLossError("non-finite total loss\n" + describe());
}

std::string DetcoLossReport::describe() const {
  std::ostringstream os;
  os.precision(8);
  for (int s = 0; s < model::kNumStages; ++s) {
    os << "Res" << model::kStageNames[s] << ": l_gg=" << per_stage[s].l_gg << " l_ll=" << per_stage[s].l_ll
       << " l_gl=" << per_stage[s].l_gl << '\n';
  }
  os << "total=" << total;
  return os.str();
}

double info_nce(const MatrixRef& q, const MatrixRef& k_pos, const MatrixRef& negs, double tau) {
  return evaluate(q, k_pos, negs, tau, nullptr);
}

InfoNceResult info_nce_with_grad(const MatrixRef& q, const MatrixRef& k_pos, const MatrixRef& negs, double tau) {
  InfoNceResult r;
  r.loss = evaluate(q, k_pos, negs, tau, &r.grad_q);
  return r;
}

BranchLosses stage_losses(const MatrixRef& q_g, const MatrixRef& k_g, const MatrixRef& q_l, const MatrixRef& k_l,
                          const memory::FeatureQueue& global_queue, const memory::FeatureQueue& local_queue,
                          const Temperatures& taus) {
  BranchLosses out;
  out.l_gg = info_nce(q_g, k_g, global_queue.view(), taus.tau_gg);
  out.l_ll = info_nce(q_l, k_l, local_queue.view(), taus.tau_ll);
  out.l_gl = info_nce(q_l, k_g, global_queue.view(), taus.tau_gl);
  return out;
}

DetcoLossReport detco_loss(const model::EmbeddingSet& embeds_q, const model::EmbeddingSet& embeds_k,
                           const memory::QueueBank& bank, const Temperatures& taus, const LossWeights& weights) {
  taus.validate();
  weights.validate();
  DetcoLossReport report;
  for (int s = 0; s < model::kNumStages; ++s) {
    report.per_stage[s] = stage_losses(embeds_q.global[s], embeds_k.global[s], embeds_q.local[s],
                                       embeds_k.local[s], bank.global(s), bank.local(s), taus);
  }
  report.total = report.recombine(weights);
  return report;
}

DetcoLossResult detco_loss_with_grad(const model::EmbeddingSet& embeds_q, const model::EmbeddingSet& embeds_k,
                                     const memory::QueueBank& bank, const Temperatures& taus,
                                     const LossWeights& weights, bool include_local) {
  taus.validate();
  weights.validate();
  DetcoLossResult r;
  for (int s = 0; s < model::kNumStages; ++s) {
    const double w = weights.w[s];
    auto gg = info_nce_with_grad(embeds_q.global[s], embeds_k.global[s], bank.global(s).view(), taus.tau_gg);
    r.report.per_stage[s].l_gg = gg.loss;
    if (w != 0.0) r.grad_global[s] = w * gg.grad_q;
    if (!include_local) continue;
    auto ll = info_nce_with_grad(embeds_q.local[s], embeds_k.local[s], bank.local(s).view(), taus.tau_ll);
    auto gl = info_nce_with_grad(embeds_q.local[s], embeds_k.global[s], bank.global(s).view(), taus.tau_gl);
    r.report.per_stage[s].l_ll = ll.loss;
    r.report.per_stage[s].l_gl = gl.loss;
    if (w != 0.0) r.grad_local[s] = w * (ll.grad_q + gl.grad_q);
  }
  r.report.total = r.report.recombine(weights);
  return r;
}

}  // namespace detco::contrast
