#pragma once

#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "detco/tensor.hpp"

namespace detco::nn {

/// A value in the computation graph. `grad` stays empty until something
/// flows into it.
struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;

  Tensor& grad_buffer();
  void accumulate_grad(const Tensor& g);
  bool has_grad() const { return !grad.empty(); }
};

using Var = std::shared_ptr<Node>;

/// Reverse-mode tape. When constructed with `recording == false` ops build
/// plain values and register nothing, which is the inference/key-encoder path.
class Tape {
 public:
  explicit Tape(bool recording = true) : recording_(recording) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return recording_; }

  Var constant(Tensor value) const;
  Var variable(Tensor value) const;

  /// Whether an op producing from `inputs` must record a backward step.
  bool tracks(std::initializer_list<const Var*> inputs) const;
  void push(std::function<void()> backward_step);

  /// Seeds output gradients and replays the tape in reverse. The tape is
  /// consumed.
  void backward(const std::vector<std::pair<Var, Tensor>>& seeds);

 private:
  bool recording_;
  std::vector<std::function<void()>> steps_;
};

}  // namespace detco::nn
