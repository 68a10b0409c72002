#pragma once

#include <functional>
#include <memory>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "ssn/tensor.hpp"

namespace ssn {

/// Reverse-mode tape. Ops append one node per executed primitive; backward
/// replays the nodes in reverse execution order.
///
/// Gradient semantics: node outputs (intermediates) get a fresh zeroed
/// gradient at every backward() call, while leaf tensors (parameters,
/// inputs) accumulate across calls until explicitly reset.
template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void()>;

  void record(const char* op, const Tensor<T>& out, BackwardFn fn) {
    outputs_.insert(out.impl().get());
    nodes_.push_back(Node{op, out.impl(), std::move(fn)});
  }

  /// True when `t` was produced by a node on this tape.
  bool produced(const Tensor<T>& t) const {
    return outputs_.count(t.impl().get()) != 0;
  }

  void backward(const Tensor<T>& loss) {
    if (loss.numel() != 1)
      throw ShapeError("backward expects a scalar loss, got shape " +
                       shape_str(loss.shape()));
    for (auto& n : nodes_) {
      auto g = n.out->ensure_grad();
      std::fill(g.begin(), g.end(), T(0));
    }
    loss.impl()->ensure_grad()[0] += T(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->fn();
  }

  std::size_t node_count() const { return nodes_.size(); }

  std::size_t count_op(std::string_view op) const {
    std::size_t n = 0;
    for (const auto& node : nodes_)
      if (op == node.op) ++n;
    return n;
  }

  void clear() {
    nodes_.clear();
    outputs_.clear();
  }

 private:
  struct Node {
    const char* op;
    std::shared_ptr<detail::TensorImpl<T>> out;
    BackwardFn fn;
  };
  std::vector<Node> nodes_;
  std::unordered_set<const detail::TensorImpl<T>*> outputs_;
};

}  // namespace ssn
