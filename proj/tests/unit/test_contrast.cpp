#include <doctest.h>

#include <algorithm>
#include <numeric>

#include "detco/contrast.hpp"
#include "detco/errors.hpp"
#include "helpers.hpp"

using namespace detco;
using namespace detco::contrast;

namespace {

// Explicit softmax cross-entropy with the positive at index 0.
double softmax_ce(const Matrix& q, const Matrix& k, const Matrix& negs, double tau) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < q.rows(); ++i) {
    std::vector<double> logits{q.row(i).dot(k.row(i)) / tau};
    for (Eigen::Index j = 0; j < negs.rows(); ++j) logits.push_back(q.row(i).dot(negs.row(j)) / tau);
    const double m = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (double l : logits) z += std::exp(l - m);
    total += -(logits[0] - m - std::log(z));
  }
  return total / static_cast<double>(q.rows());
}

Matrix basis_rows(std::initializer_list<int> axes, int dim) {
  Matrix m = Matrix::Zero(static_cast<Eigen::Index>(axes.size()), dim);
  int i = 0;
  for (int a : axes) m(i++, a) = 1.0;
  return m;
}

// Queue holding exactly the given rows.
memory::FeatureQueue queue_of(const Matrix& rows, int capacity) {
  memory::FeatureQueue q(capacity, static_cast<int>(rows.cols()));
  q.enqueue(rows);
  return q;
}

}  // namespace

TEST_CASE("hand-computed InfoNCE values") {
  const Matrix q = basis_rows({0}, 4);
  CHECK(info_nce(q, basis_rows({1}, 4), Matrix(0, 4), 0.3) == 0.0);
  CHECK(info_nce(q, q, basis_rows({1}, 4), 1.0) == doctest::Approx(-std::log(std::exp(1.0) / (std::exp(1.0) + 1.0))));
  CHECK(info_nce(q, q, basis_rows({1}, 4), 1.0) == doctest::Approx(0.31326).epsilon(1e-5));
  for (double tau : {0.05, 1.0, 7.0}) {
    CHECK(info_nce(q, basis_rows({1}, 4), basis_rows({2, 3, 1}, 4), tau) == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  }
}

TEST_CASE("InfoNCE matches an explicit softmax oracle") {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 300; ++trial) {
    const int b = std::uniform_int_distribution<int>(1, 8)(rng);
    const int k = std::uniform_int_distribution<int>(0, 64)(rng);
    const int d = std::uniform_int_distribution<int>(2, 32)(rng);
    const double tau = std::uniform_real_distribution<double>(0.05, 1.0)(rng);
    const Matrix q = testing::random_unit_rows(b, d, rng), kp = testing::random_unit_rows(b, d, rng),
                 n = testing::random_unit_rows(k, d, rng);
    REQUIRE(std::abs(info_nce(q, kp, n, tau) - softmax_ce(q, kp, n, tau)) < 1e-6);
  }
}

TEST_CASE("InfoNCE gradient matches central differences") {
  std::mt19937_64 rng(22);
  for (int trial = 0; trial < 100; ++trial) {
    const int b = std::uniform_int_distribution<int>(1, 4)(rng);
    const int d = std::uniform_int_distribution<int>(2, 16)(rng);
    const Matrix q = testing::random_unit_rows(b, d, rng), kp = testing::random_unit_rows(b, d, rng),
                 n = testing::random_unit_rows(16, d, rng);
    const InfoNceResult r = info_nce_with_grad(q, kp, n, 0.2);
    Matrix numeric(b, d);
    for (int i = 0; i < b; ++i) {
      for (int j = 0; j < d; ++j) {
        // Evaluate the unconstrained formula off the sphere.
        Matrix up = q, down = q;
        up(i, j) += 1e-4;
        down(i, j) -= 1e-4;
        numeric(i, j) = (softmax_ce(up, kp, n, 0.2) - softmax_ce(down, kp, n, 0.2)) / 2e-4;
      }
    }
    REQUIRE((r.grad_q - numeric).norm() / numeric.norm() < 1e-3);
  }
}

TEST_CASE("loss is invariant to negative order") {
  std::mt19937_64 rng(23);
  const Matrix q = testing::random_unit_rows(5, 12, rng), kp = testing::random_unit_rows(5, 12, rng);
  Matrix n = testing::random_unit_rows(40, 12, rng);
  const double base = info_nce(q, kp, n, 0.1);
  std::vector<int> perm(40);
  std::iota(perm.begin(), perm.end(), 0);
  for (int t = 0; t < 10; ++t) {
    std::shuffle(perm.begin(), perm.end(), rng);
    Matrix p(40, 12);
    for (int i = 0; i < 40; ++i) p.row(i) = n.row(perm[i]);
    CHECK(std::abs(info_nce(q, kp, p, 0.1) - base) < 1e-9);
  }
}

TEST_CASE("loss tends to zero as tau shrinks at a correct-positive configuration") {
  const Matrix q = basis_rows({0}, 3);
  Matrix kp(1, 3), n(2, 3);
  kp << 0.8, 0.6, 0.0;
  n << 0.6, 0.8, 0.0, 0.0, 0.0, 1.0;
  double prev = info_nce(q, kp, n, 1.0);
  for (double tau : {0.5, 0.2, 0.1, 0.05, 0.01, 0.001}) {
    const double l = info_nce(q, kp, n, tau);
    CHECK(l < prev);
    prev = l;
  }
  CHECK(prev < 1e-12);
  CHECK(std::isfinite(info_nce(q, kp, n, 1e-6)));
}

TEST_CASE("InfoNCE input errors") {
  const Matrix q = basis_rows({0}, 3);
  CHECK_THROWS_AS(info_nce(q, q, q, 0.0), InputError);
  CHECK_THROWS_AS(info_nce(q, q, q, -1.0), InputError);
  CHECK_THROWS_AS(info_nce(2.0 * q, q, q, 0.2), ValidationError);
  CHECK_THROWS_AS(info_nce(q, basis_rows({0, 1}, 3), q, 0.2), InputError);
}

TEST_CASE("stage losses: symmetry and orthogonal g-l branch") {
  std::mt19937_64 rng(24);
  const Matrix q = testing::random_unit_rows(3, 8, rng), k = testing::random_unit_rows(3, 8, rng);
  const auto queue = queue_of(testing::random_unit_rows(6, 8, rng), 6);
  const Temperatures same{0.3, 0.3, 0.3};
  const BranchLosses s = stage_losses(q, k, q, k, queue, queue, same);
  CHECK(s.l_gg == s.l_ll);
  CHECK(s.l_gg == s.l_gl);

  // q_l along axis 0, k_g and the global queue in the orthogonal complement.
  const Matrix ql = basis_rows({0, 0}, 6), kg = basis_rows({1, 2}, 6);
  const auto gq = queue_of(basis_rows({3, 4, 5, 1, 2}, 6), 8);
  const BranchLosses o = stage_losses(kg, kg, ql, ql, gq, gq, Temperatures{});
  CHECK(o.l_gl == doctest::Approx(std::log(6.0)).epsilon(1e-12));
}

TEST_CASE("stage losses match a manual softmax for one sample") {
  Matrix qg(1, 3), kg(1, 3), ql(1, 3), kl(1, 3), gneg(3, 3), lneg(3, 3);
  qg << 1, 0, 0;
  kg << 0.6, 0.8, 0;
  ql << 0, 1, 0;
  kl << 0, 0.6, 0.8;
  gneg << 0, 0, 1, 0.8, 0, 0.6, 0, 1, 0;
  lneg << 1, 0, 0, 0, 0.8, 0.6, 0, 0, 1;
  const Temperatures t{0.2, 0.15, 0.5};
  const BranchLosses s = stage_losses(qg, kg, ql, kl, queue_of(gneg, 3), queue_of(lneg, 3), t);
  auto manual = [](double pos, std::initializer_list<double> negs, double tau) {
    double z = std::exp(pos / tau);
    for (double n : negs) z += std::exp(n / tau);
    return -std::log(std::exp(pos / tau) / z);
  };
  CHECK(s.l_gg == doctest::Approx(manual(0.6, {0.0, 0.8, 0.0}, 0.2)).epsilon(1e-9));
  CHECK(s.l_ll == doctest::Approx(manual(0.6, {0.0, 0.8, 0.0}, 0.15)).epsilon(1e-9));
  CHECK(s.l_gl == doctest::Approx(manual(0.8, {0.0, 0.0, 1.0}, 0.5)).epsilon(1e-9));
}

TEST_CASE("uniform logits give the weighted total 2.2 * 3 * log 4") {
  // Every query orthogonal to its positive and to 3 queued negatives.
  model::EmbeddingSet q, k;
  memory::QueueBank bank;
  for (int s = 0; s < model::kNumStages; ++s) {
    q.global[s] = q.local[s] = basis_rows({0, 0}, 5);
    k.global[s] = k.local[s] = basis_rows({1, 1}, 5);
    bank.global_queues.push_back(queue_of(basis_rows({2, 3, 4}, 5), 8));
    bank.local_queues.push_back(queue_of(basis_rows({2, 3, 4}, 5), 8));
  }
  const DetcoLossReport r = detco_loss(q, k, bank, Temperatures{}, LossWeights{});
  CHECK(r.total == doctest::Approx(2.2 * 3 * std::log(4.0)).epsilon(1e-12));
  CHECK(std::abs(r.total - r.recombine(LossWeights{})) < 1e-12);

  const DetcoLossReport last = detco_loss(q, k, bank, Temperatures{}, LossWeights::deepest_only());
  CHECK(last.total == doctest::Approx(last.per_stage[3].sum()));
}

TEST_CASE("total is linear in the weights and consistent with the gradient path") {
  std::mt19937_64 rng(25);
  model::EmbeddingSet q, k;
  for (int s = 0; s < model::kNumStages; ++s) {
    q.global[s] = testing::random_unit_rows(4, 8, rng);
    q.local[s] = testing::random_unit_rows(4, 8, rng);
    k.global[s] = testing::random_unit_rows(4, 8, rng);
    k.local[s] = testing::random_unit_rows(4, 8, rng);
  }
  const memory::QueueBank bank = memory::QueueBank::random_unit(16, 8, 7);
  const LossWeights w;
  LossWeights w3;
  for (int s = 0; s < model::kNumStages; ++s) w3.w[s] = 3.0 * w.w[s];
  const DetcoLossReport a = detco_loss(q, k, bank, Temperatures{}, w);
  const DetcoLossReport b = detco_loss(q, k, bank, Temperatures{}, w3);
  CHECK(b.total == doctest::Approx(3.0 * a.total).epsilon(1e-12));

  const DetcoLossResult g = detco_loss_with_grad(q, k, bank, Temperatures{}, w, true);
  CHECK(g.report.total == doctest::Approx(a.total).epsilon(1e-12));
  for (int s = 0; s < model::kNumStages; ++s) {
    const InfoNceResult gg = info_nce_with_grad(q.global[s], k.global[s], bank.global(s).view(), 0.2);
    CHECK((g.grad_global[s] - w.w[s] * gg.grad_q).norm() < 1e-12);
  }

  const DetcoLossResult no_local = detco_loss_with_grad(q, k, bank, Temperatures{}, w, false);
  for (int s = 0; s < model::kNumStages; ++s) {
    CHECK(no_local.report.per_stage[s].l_ll == 0.0);
    CHECK(no_local.grad_local[s].size() == 0);
  }
}

TEST_CASE("non-finite sub-losses are reported by name") {
  DetcoLossReport r;
  r.per_stage[1].l_ll = std::nan("");
  CHECK_THROWS_WITH_AS(r.check_finite(), doctest::Contains("l_ll at stage Res3"), NonFiniteLossError);
  CHECK_THROWS_AS((Temperatures{0.2, 0.0, 0.5}.validate()), ConfigError);
  CHECK_THROWS_AS((LossWeights{{0.1, -1.0, 0.7, 1.0}}.validate()), ConfigError);
}
