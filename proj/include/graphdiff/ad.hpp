#pragma once

#include <Eigen/Dense>
#include <functional>
#include <memory>
#include <vector>

namespace graphdiff::ad {

using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

// One node of the dynamically built computation tape.  `backprop` scatters
// the node's accumulated gradient into its parents' gradients.
struct Node {
  Matrix value;
  Matrix grad;
  bool requires_grad = false;
  bool grad_alloc = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backprop;

  void ensure_grad() {
    if (!grad_alloc) {
      grad = Matrix::Zero(value.rows(), value.cols());
      grad_alloc = true;
    }
  }
};

// Value-semantics handle to a tape node.  Graphs are rebuilt per evaluation;
// leaves (parameters, inputs) persist across evaluations and their node
// values may be mutated in place by an optimizer.
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> n) : node_(std::move(n)) {}

  static Var leaf(Matrix v, bool requires_grad = false) {
    auto n = std::make_shared<Node>();
    n->value = std::move(v);
    n->requires_grad = requires_grad;
    return Var(std::move(n));
  }
  static Var constant(Matrix v) { return leaf(std::move(v), false); }
  static Var scalar(double v, bool requires_grad = false) {
    return leaf(Matrix::Constant(1, 1, v), requires_grad);
  }

  bool valid() const { return node_ != nullptr; }
  const Matrix& value() const { return node_->value; }
  Matrix& value() { return node_->value; }
  const Matrix& grad() const { return node_->grad; }
  bool requires_grad() const { return node_->requires_grad; }
  double item() const { return node_->value(0, 0); }
  Index rows() const { return node_->value.rows(); }
  Index cols() const { return node_->value.cols(); }
  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

Var make_op(Matrix value, std::vector<Var> parents, std::function<void(Node&)> backprop);

// Runs reverse-mode accumulation from a 1x1 root.  Zeroes and (re)allocates
// gradients of every reachable node that requires them.
void backward(const Var& root);

// ---- elementwise / arithmetic ----
Var operator+(const Var& a, const Var& b);
Var operator-(const Var& a, const Var& b);
Var operator-(const Var& a);
Var cmul(const Var& a, const Var& b);
Var cdiv(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var operator*(double s, const Var& a);
Var add_scalar(const Var& a, double s);
Var relu(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);
Var sqrt(const Var& a);
Var square(const Var& a);

// ---- matrix products ----
Var matmul(const Var& a, const Var& b);     // a * b
Var matmul_nt(const Var& a, const Var& b);  // a * b^T
Var matmul_tn(const Var& a, const Var& b);  // a^T * b
Var transpose(const Var& a);

// ---- broadcasting ----
Var add_rowvec(const Var& a, const Var& r);   // r: 1 x c, added to every row
Var add_colvec(const Var& a, const Var& c);   // c: n x 1, added to every column
Var mul_colvec(const Var& a, const Var& c);   // row i scaled by c(i)
Var repeat_rows(const Var& r, Index n);       // 1 x c -> n x c

// ---- reductions ----
Var sum(const Var& a);   // 1 x 1
Var mean(const Var& a);  // 1 x 1
Var rowwise_sum(const Var& a);   // n x 1
Var rowwise_mean(const Var& a);  // n x 1
Var colwise_mean(const Var& a);  // 1 x c

// ---- structure ----
Var gather_rows(const Var& a, std::vector<Index> idx);
Var concat_rows(const std::vector<Var>& parts);
Var concat_cols(const std::vector<Var>& parts);
Var slice_rows(const Var& a, Index r0, Index n);
Var slice_cols(const Var& a, Index c0, Index n);

// ---- normalized maps ----
Var normalize_rows(const Var& a, double eps = 1e-12);  // each row to unit L2 norm
Var softmax_rows(const Var& a);     // stable, max-subtracted
Var logsumexp_rows(const Var& a);   // n x 1, stable
// Per-row layer norm with learnable 1 x c gain/bias.
Var layer_norm_rows(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);
// Per-column layer norm (C x L feature maps) with C x 1 gain/bias.
Var layer_norm_cols(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);

// ---- spatial ops ----
// Feature maps are stored channels-by-positions: x is C x (N*H*W) with
// column index n*H*W + y*W + xpos.
struct ConvSpec {
  Index batch = 1;
  Index in_ch = 1;
  Index h = 1;
  Index w = 1;
  Index out_ch = 1;
  Index kernel = 3;
  Index stride = 1;
  Index pad = 1;
  Index out_h() const { return (h + 2 * pad - kernel) / stride + 1; }
  Index out_w() const { return (w + 2 * pad - kernel) / stride + 1; }
};

// weight: out_ch x (in_ch*kernel*kernel), bias: out_ch x 1.
Var conv2d(const Var& x, const Var& weight, const Var& bias, const ConvSpec& spec);
Var nearest_upsample2(const Var& x, Index batch, Index ch, Index h, Index w);

// im2col matrix for `x` under `spec`: (in_ch*k*k) x (batch*out_h*out_w).
Matrix im2col(const Matrix& x, const ConvSpec& spec);
void col2im_acc(const Matrix& cols, const ConvSpec& spec, Matrix& x_grad);

}  // namespace graphdiff::ad
