// Copyright (C) 2026 rigidflow contributors
// SPDX-License-Identifier: Apache-2.0
//
// Minimal reverse-mode autodiff over dense Eigen matrices. Nodes are created
// in topological order on a tape; backward() replays the tape in reverse and
// accumulates gradients into every node created with needs_grad. The op set
// is exactly what the vector-field network requires.

#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "rigidflow/types.hpp"

namespace rigidflow::tape {

struct Node {
  Mat value;
  Mat grad;  // allocated lazily; same shape as value
  bool needs_grad = false;
  std::function<void()> backward;  // reads this node's grad, feeds parents

  void ensure_grad() {
    if (grad.size() == 0) grad = Mat::Zero(value.rows(), value.cols());
  }
  void add_grad(const Mat& g) {
    ensure_grad();
    grad += g;
  }
};

using NodePtr = std::shared_ptr<Node>;

/// Applies the "tanh of the norm" radial saturation out = v * tanh(r)/r with
/// r = |v|/scale, so |out| < scale. Shared by the tape op and the plain head
/// evaluators so both paths are bit-identical.
Vec saturate_value(const Vec& v, double scale);

class Tape {
 public:
  NodePtr constant(Mat v);
  NodePtr leaf(Mat v);  // differentiable input (parameter)

  NodePtr matmul(const NodePtr& a, const NodePtr& b);
  NodePtr add(const NodePtr& a, const NodePtr& b);
  NodePtr sub(const NodePtr& a, const NodePtr& b);
  NodePtr cmul(const NodePtr& a, const NodePtr& b);  // elementwise
  NodePtr scale(const NodePtr& a, double c);
  NodePtr add_rowvec(const NodePtr& a, const NodePtr& row);  // row is 1 x C
  NodePtr mul_rowvec(const NodePtr& a, const NodePtr& row);
  NodePtr silu(const NodePtr& a);
  NodePtr tanh(const NodePtr& a);
  NodePtr sqrt_shift(const NodePtr& a, double eps);  // sqrt(x + eps)
  NodePtr gather_rows(const NodePtr& a, const std::vector<int>& idx);
  NodePtr scatter_rows(const NodePtr& a, const std::vector<int>& idx, int n_out);
  NodePtr slice_cols(const NodePtr& a, int c0, int n);
  NodePtr slice_rows(const NodePtr& a, int r0, int n);
  NodePtr concat_cols(const NodePtr& a, const NodePtr& b);
  NodePtr repeat3(const NodePtr& a);  // (n x C) -> stacked (3n x C)
  NodePtr sum3(const NodePtr& a);     // (3n x C) -> (n x C)

  /// v is a column vector, logscale a 1x1 leaf; scale = exp(logscale).
  /// Throws NonFiniteError if v is not finite.
  NodePtr saturate(const NodePtr& v, const NodePtr& logscale);

  void backward();

  std::size_t size() const { return order_.size(); }

 private:
  NodePtr make(Mat v, bool needs_grad, std::function<void()> bw = nullptr);
  std::vector<NodePtr> order_;
};

}  // namespace rigidflow::tape
