#include "detco/memory.hpp"

#include <cmath>

#include "detco/errors.hpp"
#include "detco/rng.hpp"

namespace detco::memory {

void check_unit_rows(const MatrixRef& rows, double tol, const char* what) {
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    const double n = rows.row(i).norm();
    if (!(std::abs(n - 1.0) <= tol)) {
      throw ValidationError(std::string(what) + ": row " + std::to_string(i) + " has norm " +
                            std::to_string(n) + ", expected 1");
    }
  }
}

FeatureQueue::FeatureQueue(int capacity, int dim) {
  if (capacity <= 0 || dim <= 0) {
    throw InputError("queue capacity and dim must be positive, got " + std::to_string(capacity) + "x" +
                     std::to_string(dim));
  }
  storage_ = Matrix::Zero(capacity, dim);
}

FeatureQueue FeatureQueue::random_unit(int capacity, int dim, std::uint64_t seed) {
  FeatureQueue q(capacity, dim);
  Rng rng(seed);
  for (int i = 0; i < capacity; ++i) {
    double norm = 0.0;
    do {
      for (int j = 0; j < dim; ++j) q.storage_(i, j) = rng.normal();
      norm = q.storage_.row(i).norm();
    } while (norm == 0.0);
    q.storage_.row(i) /= norm;
  }
  q.filled_ = capacity;
  q.ptr_ = 0;
  return q;
}

FeatureQueue FeatureQueue::restore(Matrix storage, int ptr, int filled) {
  if (storage.rows() == 0 || storage.cols() == 0) throw StructuralError("queue storage is empty");
  const int k = static_cast<int>(storage.rows());
  if (ptr < 0 || ptr >= k || filled < 0 || filled > k) {
    throw StructuralError("queue state out of range: ptr=" + std::to_string(ptr) +
                          " filled=" + std::to_string(filled) + " capacity=" + std::to_string(k));
  }
  FeatureQueue q(k, static_cast<int>(storage.cols()));
  q.storage_ = std::move(storage);
  q.ptr_ = ptr;
  q.filled_ = filled;
  return q;
}

void FeatureQueue::enqueue(const MatrixRef& keys) {
  const int b = static_cast<int>(keys.rows());
  if (b > capacity()) {
    throw InputError("enqueue of " + std::to_string(b) + " rows exceeds queue capacity " +
                     std::to_string(capacity()));
  }
  if (keys.cols() != dim()) {
    throw InputError("enqueue rows have dim " + std::to_string(keys.cols()) + ", queue dim is " +
                     std::to_string(dim()));
  }
  check_unit_rows(keys, kUnitNormTolerance, "enqueue");
  for (int i = 0; i < b; ++i) {
    storage_.row(ptr_) = keys.row(i);
    ptr_ = (ptr_ + 1) % capacity();
  }
  filled_ = std::min(capacity(), filled_ + b);
}

MatrixRef FeatureQueue::view() const {
  if (filled_ == 0) throw StateError("negatives requested from an empty queue; initialize it with random unit rows");
  // Until the ring wraps, the filled rows are exactly [0, filled).
  return storage_.topRows(filled_);
}

Matrix FeatureQueue::negatives() const { return Matrix(view()); }

QueueBank QueueBank::random_unit(int capacity, int dim, std::uint64_t seed) {
  QueueBank bank;
  for (int s = 0; s < model::kNumStages; ++s) {
    bank.global_queues.push_back(FeatureQueue::random_unit(capacity, dim, derive_seed(seed, {0, static_cast<std::uint64_t>(s)})));
    bank.local_queues.push_back(FeatureQueue::random_unit(capacity, dim, derive_seed(seed, {1, static_cast<std::uint64_t>(s)})));
  }
  return bank;
}

}  // namespace detco::memory
