#pragma once

#include <array>
#include <cstdint>

#include "detco/matrix.hpp"
#include "detco/model.hpp"

namespace detco::memory {

/// Tolerance on row norms accepted by `enqueue`.
inline constexpr double kUnitNormTolerance = 1e-4;

/// Fixed-capacity FIFO ring of unit-norm key embeddings.
class FeatureQueue {
 public:
  FeatureQueue(int capacity, int dim);

  /// Queue filled with `capacity` random unit vectors (filled == capacity).
  static FeatureQueue random_unit(int capacity, int dim, std::uint64_t seed);
  /// Rebuilds a queue from serialized state; validates ranges.
  static FeatureQueue restore(Matrix storage, int ptr, int filled);

  int capacity() const { return static_cast<int>(storage_.rows()); }
  int dim() const { return static_cast<int>(storage_.cols()); }
  int ptr() const { return ptr_; }
  int filled() const { return filled_; }

  /// Writes B <= K unit rows at the cursor, overwriting the oldest entries.
  void enqueue(const MatrixRef& keys);

  /// Immutable copy of the current contents (filled x d). Throws
  /// StateError on an empty queue.
  Matrix negatives() const;
  /// Zero-copy view of the same rows; invalidated by the next enqueue.
  MatrixRef view() const;

  const Matrix& storage() const { return storage_; }

 private:
  Matrix storage_;
  int ptr_ = 0;
  int filled_ = 0;
};

/// One global and one local queue per stage.
struct QueueBank {
  std::vector<FeatureQueue> global_queues;
  std::vector<FeatureQueue> local_queues;

  static QueueBank random_unit(int capacity, int dim, std::uint64_t seed);
  const FeatureQueue& global(int stage) const { return global_queues.at(static_cast<std::size_t>(stage)); }
  const FeatureQueue& local(int stage) const { return local_queues.at(static_cast<std::size_t>(stage)); }
  FeatureQueue& global(int stage) { return global_queues.at(static_cast<std::size_t>(stage)); }
  FeatureQueue& local(int stage) { return local_queues.at(static_cast<std::size_t>(stage)); }
};

/// Throws ValidationError if any row's norm deviates from 1 by more than `tol`.
void check_unit_rows(const MatrixRef& rows, double tol, const char* what);

}  // namespace detco::memory
