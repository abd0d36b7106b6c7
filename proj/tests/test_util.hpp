#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "graphdiff/ad.hpp"
#include "graphdiff/nn.hpp"

namespace testutil {

using graphdiff::ad::Matrix;
using graphdiff::ad::Var;

inline double rel_err(double a, double b, double floor = 1e-8) {
  const double denom = std::max({std::abs(a), std::abs(b), floor});
  return std::abs(a - b) / denom;
}

// Central-difference check of d(loss)/d(leaf) against the autodiff gradient.
// `build` must construct a fresh 1x1 graph from the current leaf values.
// Returns the worst relative error over all checked entries.
inline double grad_check(const std::function<Var()>& build, const std::vector<Var>& leaves,
                         double step = 1e-5) {
  Var root = build();
  graphdiff::ad::backward(root);
  std::vector<Matrix> analytic;
  analytic.reserve(leaves.size());
  for (const auto& leaf : leaves) analytic.push_back(leaf.grad());

  double worst = 0.0;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    Var leaf = leaves[li];
    Matrix& v = leaf.value();
    for (Eigen::Index j = 0; j < v.cols(); ++j) {
      for (Eigen::Index i = 0; i < v.rows(); ++i) {
        const double saved = v(i, j);
        v(i, j) = saved + step;
        const double fp = build().item();
        v(i, j) = saved - step;
        const double fm = build().item();
        v(i, j) = saved;
        const double numeric = (fp - fm) / (2.0 * step);
        // a leaf the graph never touched has no gradient allocated: it is 0
        const double a = analytic[li].size() == 0 ? 0.0 : analytic[li](i, j);
        if (std::abs(a) < 1e-10 && std::abs(numeric) < 1e-7) continue;  // both ~0
        worst = std::max(worst, rel_err(a, numeric));
      }
    }
  }
  return worst;
}

inline Matrix random_matrix(graphdiff::RandomStream& rng, Eigen::Index r, Eigen::Index c,
                            double scale = 1.0) {
  Matrix m(r, c);
  for (Eigen::Index j = 0; j < c; ++j)
    for (Eigen::Index i = 0; i < r; ++i) m(i, j) = scale * rng.normal();
  return m;
}

}  // namespace testutil
