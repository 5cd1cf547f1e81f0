// Copyright (C) 2026 rigidflow contributors
// SPDX-License-Identifier: Apache-2.0

#include "rigidflow/tape.hpp"

#include <algorithm>
#include <cmath>

namespace rigidflow::tape {

namespace {

// tanh(r)/r and its derivative, with the small-r series to keep the r -> 0
// limit exact (g(0) = 1, g'(0) = 0). tanh is capped just below 1 so the
// saturated norm stays strictly inside the scale even after rounding of the
// final products (bare tanh rounds to 1.0 from r ~ 19 on).
void radial_coeffs(double r, double& g, double& gp) {
  if (r < 1e-4) {
    const double r2 = r * r;
    g = 1.0 - r2 / 3.0;
    gp = -2.0 * r / 3.0 + 8.0 * r * r2 / 15.0;
  } else {
    const double th = std::min(std::tanh(r), 1.0 - 1e-12);
    g = th / r;
    gp = (1.0 - th * th) / r - th / (r * r);
  }
}

}  // namespace

Vec saturate_value(const Vec& v, double scale) {
  const double r = v.norm() / scale;
  double g, gp;
  radial_coeffs(r, g, gp);
  return v * g;
}

namespace {

void require_same_shape(const NodePtr& a, const NodePtr& b, const char* op) {
  if (a->value.rows() != b->value.rows() || a->value.cols() != b->value.cols()) {
    throw std::logic_error(std::string("tape: shape mismatch in ") + op);
  }
}

}  // namespace

NodePtr Tape::make(Mat v, bool needs_grad, std::function<void()> bw) {
  auto n = std::make_shared<Node>();
  n->value = std::move(v);
  n->needs_grad = needs_grad;
  n->backward = std::move(bw);
  order_.push_back(n);
  return n;
}

NodePtr Tape::constant(Mat v) { return make(std::move(v), false); }

NodePtr Tape::leaf(Mat v) { return make(std::move(v), true); }

void Tape::backward() {
  for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
    Node& n = **it;
    if (n.backward && n.grad.size() != 0) n.backward();
  }
}

NodePtr Tape::matmul(const NodePtr& a, const NodePtr& b) {
  Mat v = a->value * b->value;
  const bool ng = a->needs_grad || b->needs_grad;
  auto out = make(std::move(v), ng);
  if (ng) {
    Node* self = out.get();
    out->backward = [a, b, self] {
      if (a->needs_grad) a->add_grad(self->grad * b->value.transpose());
      if (b->needs_grad) b->add_grad(a->value.transpose() * self->grad);
    };
  }
  return out;
}

NodePtr Tape::add(const NodePtr& a, const NodePtr& b) {
  require_same_shape(a, b, "add");
  auto out = make(a->value + b->value, a->needs_grad || b->needs_grad);
  if (out->needs_grad) {
    Node* self = out.get();
    out->backward = [a, b, self] {
      if (a->needs_grad) a->add_grad(self->grad);
      if (b->needs_grad) b->add_grad(self->grad);
    };
  }
  return out;
}

NodePtr Tape::sub(const NodePtr& a, const NodePtr& b) {
  require_same_shape(a, b, "sub");
  auto out = make(a->value - b->value, a->needs_grad || b->needs_grad);
  if (out->needs_grad) {
    Node* self = out.get();
    out->backward = [a, b, self] {
      if (a->needs_grad) a->add_grad(self->grad);
      if (b->needs_grad) b->add_grad(-self->grad);
    };
  }
  return out;
}

NodePtr Tape::cmul(const NodePtr& a, const NodePtr& b) {
  require_same_shape(a, b, "cmul");
  auto out = make(a->value.cwiseProduct(b->value), a->needs_grad || b->needs_grad);
  if (out->needs_grad) {
    Node* self = out.get();
    out->backward = [a, b, self] {
      if (a->needs_grad) a->add_grad(self->grad.cwiseProduct(b->value));
      if (b->needs_grad) b->add_grad(self->grad.cwiseProduct(a->value));
    };
  }
  return out;
}

NodePtr Tape::scale(const NodePtr& a, double c) {
  auto out = make(a->value * c, a->needs_grad);
  if (out->needs_grad) {
    Node* self = out.get();
    out->backward = [a, c, self] { a->add_grad(self->grad * c); };
  }
  return out;
}

NodePtr Tape::add_rowvec(const NodePtr& a, const NodePtr& row) {
  Mat v = a->value;
  v.array().rowwise() += row->value.row(0).array();
  auto out = make(std::move(v), a->needs_grad || row->needs_grad);
  if (out->needs_grad) {
    Node* self = out.get();
    out->backward = [a, row, self] {
      if (a->needs_grad) a->add_grad(self->grad);
      if (row->needs_grad) row->add_grad(self->grad.colwise().sum());
    };
  }
  return out;
}

NodePtr Tape::mul_rowvec(const NodePtr& a, const NodePtr& row) {
  Mat v = a->value;
  v.array().rowwise() *= row->value.row(0).array();
  auto out = make(std::move(v), a->needs_grad || row->needs_grad);
  if (out->needs_grad) {
    Node* self = out.get();
    out->backward = [a, row, self] {
      if (a->needs_grad) {
        Mat g = self->grad;
        g.array().rowwise() *= row->value.row(0).array();
        a->add_grad(g);
      }
      if (row->needs_grad) {
        row->add_grad(self->grad.cwiseProduct(a->value).colwise().sum());
      }
    };
  }
  return out;
}

NodePtr Tape::silu(const NodePtr& a) {
  const Mat sig = (1.0 + (-a->value.array()).exp()).inverse().matrix();
  auto out = make(a->value.cwiseProduct(sig), a->needs_grad);
  if (out->needs_grad) {
    Node* self = out.get();
    out->backward = [a, sig, self] {
      // d/dx x*s(x) = s(x) (1 + x (1 - s(x)))
      const Mat d =
          sig.array() * (1.0 + a->value.array() * (1.0 - sig.array()));
      a->add_grad(self->grad.cwiseProduct(d));
    };
  }
  return out;
}

NodePtr Tape::tanh(const NodePtr& a) {
  Mat v = a->value.array().tanh().matrix();
  auto out = make(v, a->needs_grad);
  if (out->needs_grad) {
    Node* self = out.get();
    out->backward = [a, self] {
      const Mat d = 1.0 - self->value.array().square();
      a->add_grad(self->grad.cwiseProduct(d));
    };
  }
  return out;
}

NodePtr Tape::sqrt_shift(const NodePtr& a, double eps) {
  Mat v = (a->value.array() + eps).sqrt().matrix();
  auto out = make(std::move(v), a->needs_grad);
  if (out->needs_grad) {
    Node* self = out.get();
    out->backward = [a, self] {
      a->add_grad((self->grad.array() * 0.5 / self->value.array()).matrix());
    };
  }
  return out;
}

NodePtr Tape::gather_rows(const NodePtr& a, const std::vector<int>& idx) {
  Mat v(static_cast<Eigen::Index>(idx.size()), a->value.cols());
  for (std::size_t k = 0; k < idx.size(); ++k) v.row(k) = a->value.row(idx[k]);
  auto out = make(std::move(v), a->needs_grad);
  if (out->needs_grad) {
    Node* self = out.get();
    out->backward = [a, idx, self] {
      a->ensure_grad();
      for (std::size_t k = 0; k < idx.size(); ++k) {
        a->grad.row(idx[k]) += self->grad.row(k);
      }
    };
  }
  return out;
}

NodePtr Tape::scatter_rows(const NodePtr& a, const std::vector<int>& idx, int n_out) {
  Mat v = Mat::Zero(n_out, a->value.cols());
  for (std::size_t k = 0; k < idx.size(); ++k) v.row(idx[k]) += a->value.row(k);
  auto out = make(std::move(v), a->needs_grad);
  if (out->needs_grad) {
    Node* self = out.get();
    out->backward = [a, idx, self] {
      Mat g(static_cast<Eigen::Index>(idx.size()), self->grad.cols());
      for (std::size_t k = 0; k < idx.size(); ++k) g.row(k) = self->grad.row(idx[k]);
      a->add_grad(g);
    };
  }
  return out;
}

NodePtr Tape::slice_cols(const NodePtr& a, int c0, int n) {
  auto out = make(a->value.middleCols(c0, n), a->needs_grad);
  if (out->needs_grad) {
    Node* self = out.get();
    out->backward = [a, c0, n, self] {
      a->ensure_grad();
      a->grad.middleCols(c0, n) += self->grad;
    };
  }
  return out;
}

NodePtr Tape::slice_rows(const NodePtr& a, int r0, int n) {
  auto out = make(a->value.middleRows(r0, n), a->needs_grad);
  if (out->needs_grad) {
    Node* self = out.get();
    out->backward = [a, r0, n, self] {
      a->ensure_grad();
      a->grad.middleRows(r0, n) += self->grad;
    };
  }
  return out;
}

NodePtr Tape::concat_cols(const NodePtr& a, const NodePtr& b) {
  Mat v(a->value.rows(), a->value.cols() + b->value.cols());
  v << a->value, b->value;
  auto out = make(std::move(v), a->needs_grad || b->needs_grad);
  if (out->needs_grad) {
    Node* self = out.get();
    const int ca = static_cast<int>(a->value.cols());
    out->backward = [a, b, ca, self] {
      if (a->needs_grad) a->add_grad(self->grad.leftCols(ca));
      if (b->needs_grad) b->add_grad(self->grad.rightCols(self->grad.cols() - ca));
    };
  }
  return out;
}

NodePtr Tape::repeat3(const NodePtr& a) {
  const Eigen::Index n = a->value.rows();
  Mat v(3 * n, a->value.cols());
  v << a->value, a->value, a->value;
  auto out = make(std::move(v), a->needs_grad);
  if (out->needs_grad) {
    Node* self = out.get();
    out->backward = [a, n, self] {
      a->add_grad(self->grad.topRows(n) + self->grad.middleRows(n, n) +
                  self->grad.bottomRows(n));
    };
  }
  return out;
}

NodePtr Tape::sum3(const NodePtr& a) {
  const Eigen::Index n = a->value.rows() / 3;
  Mat v = a->value.topRows(n) + a->value.middleRows(n, n) + a->value.bottomRows(n);
  auto out = make(std::move(v), a->needs_grad);
  if (out->needs_grad) {
    Node* self = out.get();
    out->backward = [a, n, self] {
      a->ensure_grad();
      a->grad.topRows(n) += self->grad;
      a->grad.middleRows(n, n) += self->grad;
      a->grad.bottomRows(n) += self->grad;
    };
  }
  return out;
}

NodePtr Tape::saturate(const NodePtr& v, const NodePtr& logscale) {
  if (!v->value.allFinite()) {
    throw NonFiniteError("saturate: non-finite pre-activation");
  }
  const double s = std::exp(logscale->value(0, 0));
  Vec out_v = saturate_value(v->value.col(0), s);
  auto out = make(out_v, v->needs_grad || logscale->needs_grad);
  if (out->needs_grad) {
    Node* self = out.get();
    out->backward = [v, logscale, s, self] {
      const Vec x = v->value.col(0);
      const double nrm = x.norm();
      const double r = nrm / s;
      double g, gp;
      radial_coeffs(r, g, gp);
      const Vec go = self->grad.col(0);
      if (v->needs_grad) {
        // d out / d x = g I + (g'/(s n)) x x^T  (limit g' r/n^2 -> finite)
        Vec gx = g * go;
        if (nrm > 0.0) gx += (gp / (s * nrm)) * x * x.dot(go);
        v->add_grad(gx);
      }
      if (logscale->needs_grad) {
        // d out / d raw = d out / d s * s = -x g'(r) r
        Mat gl(1, 1);
        gl(0, 0) = -gp * r * x.dot(go);
        logscale->add_grad(gl);
      }
    };
  }
  return out;
}

}  // namespace rigidflow::tape
