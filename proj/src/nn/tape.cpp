#include "detco/nn/tape.hpp"

#include "detco/errors.hpp"

namespace detco::nn {

Tensor& Node::grad_buffer() {
  if (grad.empty()) grad = Tensor(value.shape(), 0.0f);
  return grad;
}

void Node::accumulate_grad(const Tensor& g) {
  if (!g.same_shape(value)) {
    throw InputError("gradient shape " + shape_string(g.shape()) + " does not match value " +
                     shape_string(value.shape()));
  }
  if (grad.empty()) {
    grad = g;
    return;
  }
  float* dst = grad.data();
  const float* src = g.data();
  for (std::size_t i = 0; i < grad.size(); ++i) dst[i] += src[i];
}

Var Tape::constant(Tensor value) const {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  return n;
}

Var Tape::variable(Tensor value) const {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = recording_;
  return n;
}

bool Tape::tracks(std::initializer_list<const Var*> inputs) const {
  if (!recording_) return false;
  for (const Var* v : inputs) {
    if (v && *v && (*v)->requires_grad) return true;
  }
  return false;
}

void Tape::push(std::function<void()> backward_step) { steps_.push_back(std::move(backward_step)); }

void Tape::backward(const std::vector<std::pair<Var, Tensor>>& seeds) {
  if (!recording_) throw StateError("backward called on a non-recording tape");
  for (const auto& [var, g] : seeds) {
    if (var->requires_grad) var->accumulate_grad(g);
  }
  for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
  steps_.clear();
}

}  // namespace detco::nn
