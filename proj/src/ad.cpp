#include "graphdiff/ad.hpp"

#include <cassert>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace graphdiff::ad {

namespace {

void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument(std::string(op) + ": shape mismatch");
}

Node* raw(const Var& v) { return v.node().get(); }

}  // namespace

Var make_op(Matrix value, std::vector<Var> parents, std::function<void(Node&)> backprop) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->parents.reserve(parents.size());
  for (const auto& p : parents) {
    n->requires_grad = n->requires_grad || p.requires_grad();
    n->parents.push_back(p.node());
  }
  if (n->requires_grad) n->backprop = std::move(backprop);
  return Var(std::move(n));
}

void backward(const Var& root) {
  if (root.rows() != 1 || root.cols() != 1)
    throw std::invalid_argument("backward: root must be a 1x1 scalar");
  if (!root.requires_grad()) return;

  // Post-order over the requires_grad subgraph.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  struct Frame {
    Node* n;
    std::size_t next_parent;
  };
  std::vector<Frame> stack;
  stack.push_back({raw(root), 0});
  visited.insert(raw(root));
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.n->parents.size()) {
      Node* p = f.n->parents[f.next_parent++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(f.n);
      stack.pop_back();
    }
  }

  for (Node* n : order) {
    n->grad = Matrix::Zero(n->value.rows(), n->value.cols());
    n->grad_alloc = true;
  }
  raw(root)->grad(0, 0) = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backprop) n->backprop(*n);
  }
}

// ---------------------------------------------------------------------------
// elementwise / arithmetic

Var operator+(const Var& a, const Var& b) {
  check_same_shape(a, b, "add");
  Node* pa = raw(a);
  Node* pb = raw(b);
  return make_op(a.value() + b.value(), {a, b}, [pa, pb](Node& n) {
    if (pa->requires_grad) pa->grad += n.grad;
    if (pb->requires_grad) pb->grad += n.grad;
  });
}

Var operator-(const Var& a, const Var& b) {
  check_same_shape(a, b, "sub");
  Node* pa = raw(a);
  Node* pb = raw(b);
  return make_op(a.value() - b.value(), {a, b}, [pa, pb](Node& n) {
    if (pa->requires_grad) pa->grad += n.grad;
    if (pb->requires_grad) pb->grad -= n.grad;
  });
}

Var operator-(const Var& a) { return scale(a, -1.0); }

Var cmul(const Var& a, const Var& b) {
  check_same_shape(a, b, "cmul");
  Node* pa = raw(a);
  Node* pb = raw(b);
  return make_op(a.value().cwiseProduct(b.value()), {a, b}, [pa, pb](Node& n) {
    if (pa->requires_grad) pa->grad += n.grad.cwiseProduct(pb->value);
    if (pb->requires_grad) pb->grad += n.grad.cwiseProduct(pa->value);
  });
}

Var cdiv(const Var& a, const Var& b) {
  check_same_shape(a, b, "cdiv");
  Node* pa = raw(a);
  Node* pb = raw(b);
  return make_op(a.value().cwiseQuotient(b.value()), {a, b}, [pa, pb](Node& n) {
    if (pa->requires_grad) pa->grad += n.grad.cwiseQuotient(pb->value);
    if (pb->requires_grad)
      pb->grad -= n.grad.cwiseProduct(pa->value).cwiseQuotient(pb->value.cwiseProduct(pb->value));
  });
}

Var scale(const Var& a, double s) {
  Node* pa = raw(a);
  return make_op(s * a.value(), {a}, [pa, s](Node& n) {
    if (pa->requires_grad) pa->grad += s * n.grad;
  });
}

Var operator*(double s, const Var& a) { return scale(a, s); }

Var add_scalar(const Var& a, double s) {
  Node* pa = raw(a);
  return make_op(a.value().array() + s, {a}, [pa](Node& n) {
    if (pa->requires_grad) pa->grad += n.grad;
  });
}

Var relu(const Var& a) {
  Node* pa = raw(a);
  return make_op(a.value().cwiseMax(0.0), {a}, [pa](Node& n) {
    if (pa->requires_grad)
      pa->grad.array() += n.grad.array() * (pa->value.array() > 0.0).cast<double>();
  });
}

Var exp(const Var& a) {
  Node* pa = raw(a);
  return make_op(a.value().array().exp(), {a}, [pa](Node& n) {
    if (pa->requires_grad) pa->grad.array() += n.grad.array() * n.value.array();
  });
}

Var log(const Var& a) {
  Node* pa = raw(a);
  return make_op(a.value().array().log(), {a}, [pa](Node& n) {
    if (pa->requires_grad) pa->grad.array() += n.grad.array() / pa->value.array();
  });
}

Var sqrt(const Var& a) {
  Node* pa = raw(a);
  return make_op(a.value().array().sqrt(), {a}, [pa](Node& n) {
    if (pa->requires_grad) pa->grad.array() += 0.5 * n.grad.array() / n.value.array();
  });
}

Var square(const Var& a) {
  Node* pa = raw(a);
  return make_op(a.value().array().square(), {a}, [pa](Node& n) {
    if (pa->requires_grad) pa->grad.array() += 2.0 * n.grad.array() * pa->value.array();
  });
}

// ---------------------------------------------------------------------------
// matrix products

Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) throw std::invalid_argument("matmul: inner dim mismatch");
  Node* pa = raw(a);
  Node* pb = raw(b);
  return make_op(a.value() * b.value(), {a, b}, [pa, pb](Node& n) {
    if (pa->requires_grad) pa->grad.noalias() += n.grad * pb->value.transpose();
    if (pb->requires_grad) pb->grad.noalias() += pa->value.transpose() * n.grad;
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  if (a.cols() != b.cols()) throw std::invalid_argument("matmul_nt: inner dim mismatch");
  Node* pa = raw(a);
  Node* pb = raw(b);
  return make_op(a.value() * b.value().transpose(), {a, b}, [pa, pb](Node& n) {
    if (pa->requires_grad) pa->grad.noalias() += n.grad * pb->value;
    if (pb->requires_grad) pb->grad.noalias() += n.grad.transpose() * pa->value;
  });
}

Var matmul_tn(const Var& a, const Var& b) {
  if (a.rows() != b.rows()) throw std::invalid_argument("matmul_tn: inner dim mismatch");
  Node* pa = raw(a);
  Node* pb = raw(b);
  return make_op(a.value().transpose() * b.value(), {a, b}, [pa, pb](Node& n) {
    if (pa->requires_grad) pa->grad.noalias() += pb->value * n.grad.transpose();
    if (pb->requires_grad) pb->grad.noalias() += pa->value * n.grad;
  });
}

Var transpose(const Var& a) {
  Node* pa = raw(a);
  return make_op(a.value().transpose(), {a}, [pa](Node& n) {
    if (pa->requires_grad) pa->grad += n.grad.transpose();
  });
}

// ---------------------------------------------------------------------------
// broadcasting

Var add_rowvec(const Var& a, const Var& r) {
  if (r.rows() != 1 || r.cols() != a.cols())
    throw std::invalid_argument("add_rowvec: expected 1 x cols(a)");
  Node* pa = raw(a);
  Node* pr = raw(r);
  Matrix out = a.value();
  out.rowwise() += r.value().row(0);
  return make_op(std::move(out), {a, r}, [pa, pr](Node& n) {
    if (pa->requires_grad) pa->grad += n.grad;
    if (pr->requires_grad) pr->grad += n.grad.colwise().sum();
  });
}

Var add_colvec(const Var& a, const Var& c) {
  if (c.cols() != 1 || c.rows() != a.rows())
    throw std::invalid_argument("add_colvec: expected rows(a) x 1");
  Node* pa = raw(a);
  Node* pc = raw(c);
  Matrix out = a.value();
  out.colwise() += c.value().col(0);
  return make_op(std::move(out), {a, c}, [pa, pc](Node& n) {
    if (pa->requires_grad) pa->grad += n.grad;
    if (pc->requires_grad) pc->grad += n.grad.rowwise().sum();
  });
}

Var mul_colvec(const Var& a, const Var& c) {
  if (c.cols() != 1 || c.rows() != a.rows())
    throw std::invalid_argument("mul_colvec: expected rows(a) x 1");
  Node* pa = raw(a);
  Node* pc = raw(c);
  Matrix out = c.value().col(0).asDiagonal() * a.value();
  return make_op(std::move(out), {a, c}, [pa, pc](Node& n) {
    if (pa->requires_grad) pa->grad += pc->value.col(0).asDiagonal() * n.grad;
    if (pc->requires_grad) pc->grad += n.grad.cwiseProduct(pa->value).rowwise().sum();
  });
}

Var repeat_rows(const Var& r, Index nrep) {
  if (r.rows() != 1) throw std::invalid_argument("repeat_rows: expected a row vector");
  Node* pr = raw(r);
  return make_op(r.value().replicate(nrep, 1), {r}, [pr](Node& n) {
    if (pr->requires_grad) pr->grad += n.grad.colwise().sum();
  });
}

// ---------------------------------------------------------------------------
// reductions

Var sum(const Var& a) {
  Node* pa = raw(a);
  return make_op(Matrix::Constant(1, 1, a.value().sum()), {a}, [pa](Node& n) {
    if (pa->requires_grad) pa->grad.array() += n.grad(0, 0);
  });
}

Var mean(const Var& a) {
  Node* pa = raw(a);
  const double inv = 1.0 / static_cast<double>(a.rows() * a.cols());
  return make_op(Matrix::Constant(1, 1, a.value().mean()), {a}, [pa, inv](Node& n) {
    if (pa->requires_grad) pa->grad.array() += n.grad(0, 0) * inv;
  });
}

Var rowwise_sum(const Var& a) {
  Node* pa = raw(a);
  return make_op(a.value().rowwise().sum(), {a}, [pa](Node& n) {
    if (pa->requires_grad) pa->grad.colwise() += n.grad.col(0);
  });
}

Var rowwise_mean(const Var& a) {
  Node* pa = raw(a);
  const double inv = 1.0 / static_cast<double>(a.cols());
  return make_op(a.value().rowwise().mean(), {a}, [pa, inv](Node& n) {
    if (pa->requires_grad) pa->grad.colwise() += inv * n.grad.col(0);
  });
}

Var colwise_mean(const Var& a) {
  Node* pa = raw(a);
  const double inv = 1.0 / static_cast<double>(a.rows());
  return make_op(a.value().colwise().mean(), {a}, [pa, inv](Node& n) {
    if (pa->requires_grad) pa->grad.rowwise() += inv * n.grad.row(0);
  });
}

// ---------------------------------------------------------------------------
// structure

Var gather_rows(const Var& a, std::vector<Index> idx) {
  Node* pa = raw(a);
  Matrix out(static_cast<Index>(idx.size()), a.cols());
  for (Index i = 0; i < out.rows(); ++i) {
    if (idx[i] < 0 || idx[i] >= a.rows()) throw std::out_of_range("gather_rows: index");
    out.row(i) = a.value().row(idx[i]);
  }
  return make_op(std::move(out), {a}, [pa, idx = std::move(idx)](Node& n) {
    if (!pa->requires_grad) return;
    for (Index i = 0; i < n.grad.rows(); ++i) pa->grad.row(idx[i]) += n.grad.row(i);
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: empty");
  Index total = 0;
  for (const auto& p : parts) {
    if (p.cols() != parts[0].cols()) throw std::invalid_argument("concat_rows: cols mismatch");
    total += p.rows();
  }
  Matrix out(total, parts[0].cols());
  Index r = 0;
  std::vector<Node*> ps;
  std::vector<Index> offs;
  for (const auto& p : parts) {
    out.middleRows(r, p.rows()) = p.value();
    ps.push_back(raw(p));
    offs.push_back(r);
    r += p.rows();
  }
  return make_op(std::move(out), parts, [ps, offs](Node& n) {
    for (std::size_t i = 0; i < ps.size(); ++i) {
      if (ps[i]->requires_grad)
        ps[i]->grad += n.grad.middleRows(offs[i], ps[i]->value.rows());
    }
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: empty");
  Index total = 0;
  for (const auto& p : parts) {
    if (p.rows() != parts[0].rows()) throw std::invalid_argument("concat_cols: rows mismatch");
    total += p.cols();
  }
  Matrix out(parts[0].rows(), total);
  Index c = 0;
  std::vector<Node*> ps;
  std::vector<Index> offs;
  for (const auto& p : parts) {
    out.middleCols(c, p.cols()) = p.value();
    ps.push_back(raw(p));
    offs.push_back(c);
    c += p.cols();
  }
  return make_op(std::move(out), parts, [ps, offs](Node& n) {
    for (std::size_t i = 0; i < ps.size(); ++i) {
      if (ps[i]->requires_grad)
        ps[i]->grad += n.grad.middleCols(offs[i], ps[i]->value.cols());
    }
  });
}

Var slice_rows(const Var& a, Index r0, Index n) {
  if (r0 < 0 || r0 + n > a.rows()) throw std::out_of_range("slice_rows");
  Node* pa = raw(a);
  return make_op(a.value().middleRows(r0, n), {a}, [pa, r0, n](Node& nd) {
    if (pa->requires_grad) pa->grad.middleRows(r0, n) += nd.grad;
  });
}

Var slice_cols(const Var& a, Index c0, Index n) {
  if (c0 < 0 || c0 + n > a.cols()) throw std::out_of_range("slice_cols");
  Node* pa = raw(a);
  return make_op(a.value().middleCols(c0, n), {a}, [pa, c0, n](Node& nd) {
    if (pa->requires_grad) pa->grad.middleCols(c0, n) += nd.grad;
  });
}

// ---------------------------------------------------------------------------
// normalized maps

Var normalize_rows(const Var& a, double eps) {
  Node* pa = raw(a);
  Eigen::VectorXd inv_norm(a.rows());
  Matrix out = a.value();
  for (Index i = 0; i < a.rows(); ++i) {
    inv_norm(i) = 1.0 / std::max(eps, out.row(i).norm());
    out.row(i) *= inv_norm(i);
  }
  return make_op(std::move(out), {a}, [pa, inv_norm = std::move(inv_norm)](Node& n) {
    if (!pa->requires_grad) return;
    for (Index i = 0; i < n.value.rows(); ++i) {
      const double dot = n.grad.row(i).dot(n.value.row(i));
      pa->grad.row(i) += inv_norm(i) * (n.grad.row(i) - dot * n.value.row(i));
    }
  });
}

Var softmax_rows(const Var& a) {
  Node* pa = raw(a);
  Matrix out = a.value();
  for (Index i = 0; i < out.rows(); ++i) {
    const double m = out.row(i).maxCoeff();
    out.row(i) = (out.row(i).array() - m).exp();
    out.row(i) /= out.row(i).sum();
  }
  return make_op(std::move(out), {a}, [pa](Node& n) {
    if (!pa->requires_grad) return;
    for (Index i = 0; i < n.value.rows(); ++i) {
      const double dot = n.grad.row(i).dot(n.value.row(i));
      pa->grad.row(i).array() +=
          n.value.row(i).array() * (n.grad.row(i).array() - dot);
    }
  });
}

Var logsumexp_rows(const Var& a) {
  Node* pa = raw(a);
  Matrix out(a.rows(), 1);
  for (Index i = 0; i < a.rows(); ++i) {
    const double m = a.value().row(i).maxCoeff();
    out(i, 0) = m + std::log((a.value().row(i).array() - m).exp().sum());
  }
  return make_op(std::move(out), {a}, [pa](Node& n) {
    if (!pa->requires_grad) return;
    for (Index i = 0; i < pa->value.rows(); ++i) {
      pa->grad.row(i).array() +=
          n.grad(i, 0) * (pa->value.row(i).array() - n.value(i, 0)).exp();
    }
  });
}

Var layer_norm_rows(const Var& x, const Var& gamma, const Var& beta, double eps) {
  if (gamma.rows() != 1 || gamma.cols() != x.cols() || beta.rows() != 1 ||
      beta.cols() != x.cols())
    throw std::invalid_argument("layer_norm_rows: gain/bias must be 1 x cols(x)");
  Node* px = raw(x);
  Node* pg = raw(gamma);
  Node* pb = raw(beta);
  const Index c = x.cols();
  Matrix xhat(x.rows(), c);
  Eigen::VectorXd inv_sigma(x.rows());
  for (Index i = 0; i < x.rows(); ++i) {
    const double mu = x.value().row(i).mean();
    const double var = (x.value().row(i).array() - mu).square().mean();
    inv_sigma(i) = 1.0 / std::sqrt(var + eps);
    xhat.row(i) = (x.value().row(i).array() - mu) * inv_sigma(i);
  }
  Matrix out = xhat;
  for (Index i = 0; i < out.rows(); ++i)
    out.row(i) = out.row(i).cwiseProduct(gamma.value().row(0)) + beta.value().row(0);
  return make_op(std::move(out), {x, gamma, beta},
                 [px, pg, pb, xhat = std::move(xhat), inv_sigma = std::move(inv_sigma),
                  c](Node& n) {
                   if (pb->requires_grad) pb->grad += n.grad.colwise().sum();
                   if (pg->requires_grad)
                     pg->grad += n.grad.cwiseProduct(xhat).colwise().sum();
                   if (!px->requires_grad) return;
                   for (Index i = 0; i < n.grad.rows(); ++i) {
                     Eigen::RowVectorXd dxhat =
                         n.grad.row(i).cwiseProduct(pg->value.row(0));
                     const double m1 = dxhat.mean();
                     const double m2 = dxhat.cwiseProduct(xhat.row(i)).mean();
                     px->grad.row(i).array() +=
                         inv_sigma(i) *
                         (dxhat.array() - m1 - xhat.row(i).array() * m2);
                   }
                 });
}

Var layer_norm_cols(const Var& x, const Var& gamma, const Var& beta, double eps) {
  if (gamma.cols() != 1 || gamma.rows() != x.rows() || beta.cols() != 1 ||
      beta.rows() != x.rows())
    throw std::invalid_argument("layer_norm_cols: gain/bias must be rows(x) x 1");
  Node* px = raw(x);
  Node* pg = raw(gamma);
  Node* pb = raw(beta);
  const Index r = x.rows();
  Matrix xhat(r, x.cols());
  Eigen::VectorXd inv_sigma(x.cols());
  for (Index j = 0; j < x.cols(); ++j) {
    const double mu = x.value().col(j).mean();
    const double var = (x.value().col(j).array() - mu).square().mean();
    inv_sigma(j) = 1.0 / std::sqrt(var + eps);
    xhat.col(j) = (x.value().col(j).array() - mu) * inv_sigma(j);
  }
  Matrix out = xhat;
  out.array().colwise() *= gamma.value().col(0).array();
  out.colwise() += beta.value().col(0);
  return make_op(std::move(out), {x, gamma, beta},
                 [px, pg, pb, xhat = std::move(xhat), inv_sigma = std::move(inv_sigma),
                  r](Node& n) {
                   if (pb->requires_grad) pb->grad += n.grad.rowwise().sum();
                   if (pg->requires_grad)
                     pg->grad += n.grad.cwiseProduct(xhat).rowwise().sum();
                   if (!px->requires_grad) return;
                   const double invr = 1.0 / static_cast<double>(r);
                   for (Index j = 0; j < n.grad.cols(); ++j) {
                     Eigen::VectorXd dxhat =
                         n.grad.col(j).cwiseProduct(pg->value.col(0));
                     const double m1 = dxhat.mean();
                     const double m2 = dxhat.cwiseProduct(xhat.col(j)).sum() * invr;
                     px->grad.col(j).array() +=
                         inv_sigma(j) *
                         (dxhat.array() - m1 - xhat.col(j).array() * m2);
                   }
                 });
}

// ---------------------------------------------------------------------------
// spatial ops

Matrix im2col(const Matrix& x, const ConvSpec& s) {
  const Index oh = s.out_h();
  const Index ow = s.out_w();
  Matrix cols = Matrix::Zero(s.in_ch * s.kernel * s.kernel, s.batch * oh * ow);
  for (Index n = 0; n < s.batch; ++n) {
    const Index xoff = n * s.h * s.w;
    const Index coff = n * oh * ow;
    for (Index ky = 0; ky < s.kernel; ++ky) {
      for (Index kx = 0; kx < s.kernel; ++kx) {
        const Index rrow = (ky * s.kernel + kx) * s.in_ch;
        for (Index oy = 0; oy < oh; ++oy) {
          const Index iy = oy * s.stride - s.pad + ky;
          if (iy < 0 || iy >= s.h) continue;
          if (s.stride == 1) {
            // valid ox form one contiguous run; copy it as a single block
            const Index ox0 = std::max<Index>(0, s.pad - kx);
            const Index ox1 = std::min(ow, s.w + s.pad - kx);
            if (ox1 <= ox0) continue;
            cols.block(rrow, coff + oy * ow + ox0, s.in_ch, ox1 - ox0) =
                x.middleCols(xoff + iy * s.w + ox0 - s.pad + kx, ox1 - ox0);
          } else {
            for (Index ox = 0; ox < ow; ++ox) {
              const Index ix = ox * s.stride - s.pad + kx;
              if (ix < 0 || ix >= s.w) continue;
              cols.block(rrow, coff + oy * ow + ox, s.in_ch, 1) =
                  x.col(xoff + iy * s.w + ix);
            }
          }
        }
      }
    }
  }
  return cols;
}

void col2im_acc(const Matrix& cols, const ConvSpec& s, Matrix& x_grad) {
  const Index oh = s.out_h();
  const Index ow = s.out_w();
  for (Index n = 0; n < s.batch; ++n) {
    const Index xoff = n * s.h * s.w;
    const Index coff = n * oh * ow;
    for (Index ky = 0; ky < s.kernel; ++ky) {
      for (Index kx = 0; kx < s.kernel; ++kx) {
        const Index rrow = (ky * s.kernel + kx) * s.in_ch;
        for (Index oy = 0; oy < oh; ++oy) {
          const Index iy = oy * s.stride - s.pad + ky;
          if (iy < 0 || iy >= s.h) continue;
          if (s.stride == 1) {
            const Index ox0 = std::max<Index>(0, s.pad - kx);
            const Index ox1 = std::min(ow, s.w + s.pad - kx);
            if (ox1 <= ox0) continue;
            x_grad.middleCols(xoff + iy * s.w + ox0 - s.pad + kx, ox1 - ox0) +=
                cols.block(rrow, coff + oy * ow + ox0, s.in_ch, ox1 - ox0);
          } else {
            for (Index ox = 0; ox < ow; ++ox) {
              const Index ix = ox * s.stride - s.pad + kx;
              if (ix < 0 || ix >= s.w) continue;
              x_grad.col(xoff + iy * s.w + ix) +=
                  cols.block(rrow, coff + oy * ow + ox, s.in_ch, 1);
            }
          }
        }
      }
    }
  }
}

Var conv2d(const Var& x, const Var& weight, const Var& bias, const ConvSpec& s) {
  if (x.rows() != s.in_ch || x.cols() != s.batch * s.h * s.w)
    throw std::invalid_argument("conv2d: input shape mismatch");
  if (weight.rows() != s.out_ch || weight.cols() != s.in_ch * s.kernel * s.kernel)
    throw std::invalid_argument("conv2d: weight shape mismatch");
  if (bias.rows() != s.out_ch || bias.cols() != 1)
    throw std::invalid_argument("conv2d: bias shape mismatch");
  Node* px = raw(x);
  Node* pw = raw(weight);
  Node* pb = raw(bias);
  Matrix cols = im2col(x.value(), s);
  Matrix out = weight.value() * cols;
  out.colwise() += bias.value().col(0);
  return make_op(std::move(out), {x, weight, bias},
                 [px, pw, pb, cols = std::move(cols), s](Node& n) {
                   if (pb->requires_grad) pb->grad += n.grad.rowwise().sum();
                   if (pw->requires_grad) pw->grad.noalias() += n.grad * cols.transpose();
                   if (px->requires_grad) {
                     Matrix dcols = pw->value.transpose() * n.grad;
                     col2im_acc(dcols, s, px->grad);
                   }
                 });
}

Var nearest_upsample2(const Var& x, Index batch, Index ch, Index h, Index w) {
  if (x.rows() != ch || x.cols() != batch * h * w)
    throw std::invalid_argument("nearest_upsample2: input shape mismatch");
  Node* px = raw(x);
  const Index oh = 2 * h;
  const Index ow = 2 * w;
  Matrix out(ch, batch * oh * ow);
  for (Index n = 0; n < batch; ++n) {
    for (Index oy = 0; oy < oh; ++oy) {
      for (Index ox = 0; ox < ow; ++ox) {
        out.col(n * oh * ow + oy * ow + ox) =
            x.value().col(n * h * w + (oy / 2) * w + (ox / 2));
      }
    }
  }
  return make_op(std::move(out), {x}, [px, batch, h, w, oh, ow](Node& n) {
    if (!px->requires_grad) return;
    for (Index b = 0; b < batch; ++b) {
      for (Index oy = 0; oy < oh; ++oy) {
        for (Index ox = 0; ox < ow; ++ox) {
          px->grad.col(b * h * w + (oy / 2) * w + (ox / 2)) +=
              n.grad.col(b * oh * ow + oy * ow + ox);
        }
      }
    }
  });
}

}  // namespace graphdiff::ad
