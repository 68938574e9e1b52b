#pragma once

#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "hgan/common.hpp"
#include "hgan/tensor.hpp"

namespace hgan {

// Reverse-mode tape. Ops append nodes in execution order, which is already
// a topological order (an op's inputs exist before its output). backward()
// walks the tape once in reverse, accumulating into Tensor::grad.
//
// Single writer: one forward/backward pass at a time per Graph. Concurrent
// passes need separate Graph instances.
template <class Real>
class Graph {
 public:
  explicit Graph(bool recording = true) : recording_(recording) {}

  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool recording() const { return recording_; }

  void record(const char* op, std::vector<Tensor<Real>> inputs, Tensor<Real> output,
              std::function<void()> backward_fn) {
    if (!recording_) return;
    for (const auto& t : inputs) members_.insert(t.raw());
    members_.insert(output.raw());
    nodes_.push_back(Node{op, std::move(inputs), std::move(output), std::move(backward_fn)});
  }

  bool contains(const Tensor<Real>& t) const { return members_.count(t.raw()) != 0; }

  std::size_t size() const { return nodes_.size(); }

  // Populates grad for every tensor reachable in this graph. Grads are
  // zeroed first; within the pass, fan-out accumulates additively.
  void backward(const Tensor<Real>& loss) {
    if (loss.numel() != 1) {
      throw ContractError("backward: loss must be scalar, got " + shape_str(loss.shape()));
    }
    if (!contains(loss)) {
      throw ContractError("backward: loss tensor was not produced on this graph");
    }
    for (auto& node : nodes_) {
      for (auto& t : node.inputs) {
        t.ensure_grad();
        t.zero_grad();
      }
      node.output.ensure_grad();
      node.output.zero_grad();
    }
    const_cast<Tensor<Real>&>(loss).grad()[0] = Real(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      if (it->backward_fn) it->backward_fn();
    }
  }

  void clear() {
    nodes_.clear();
    members_.clear();
  }

 private:
  struct Node {
    const char* op;
    std::vector<Tensor<Real>> inputs;
    Tensor<Real> output;
    std::function<void()> backward_fn;
  };

  std::vector<Node> nodes_;
  std::unordered_set<const void*> members_;
  bool recording_;
};

}  // namespace hgan
