#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major
// matrices. Every op returns a new graph node holding its value and a
// closure that scatters the upstream gradient into its parents.

#include <Eigen/Dense>

#include <functional>
#include <memory>
#include <span>
#include <vector>

namespace commitlink::ag {

using Matrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
  Matrix value;
  Matrix grad;
  bool requires_grad = false;
  std::vector<Var> parents;
  std::function<void(Node&)> backward_fn;

  Eigen::Index rows() const { return value.rows(); }
  Eigen::Index cols() const { return value.cols(); }
  double scalar() const { return value(0, 0); }
  Matrix& ensure_grad();
};

// Leaves.
Var constant(Matrix value);
Var constant_scalar(double value);
Var parameter(Matrix value);

// Runs backpropagation from a 1x1 root, accumulating into every
// reachable node that requires a gradient.
void backward(const Var& root);

// Linear algebra.
Var matmul(const Var& a, const Var& b);
Var matmul_nt(const Var& a, const Var& b);  // a * b^T
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);  // elementwise
Var scale(const Var& a, double factor);
Var add_row(const Var& a, const Var& row);  // broadcast 1xC over rows

// Elementwise nonlinearities.
Var gelu(const Var& a);
Var tanh(const Var& a);
Var abs(const Var& a);

// Row-wise layer normalization with learned gain and bias (1xC each).
Var layer_norm(const Var& x, const Var& gain, const Var& bias,
               double eps = 1e-5);

// Gathers rows of `table` by id.
Var embedding(const Var& table, std::span<const int> ids);

// Row-wise softmax over columns whose key_mask entry is nonzero; masked
// columns get probability 0. A row with no active column is all zero.
Var masked_softmax(const Var& scores, std::span<const unsigned char> key_mask);

Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count);
Var concat_cols(std::span<const Var> parts);

// Mean of the rows whose mask entry is nonzero, as a 1xC row. Zero row
// when the mask is empty.
Var masked_mean_rows(const Var& h, std::span<const unsigned char> mask);

// Cosine similarity of two same-shape tensors as a 1x1 node. Defined as 0
// (with zero gradient) when either side has zero norm.
Var cosine(const Var& a, const Var& b);

Var sum(const Var& a);
Var sum(std::span<const Var> scalars);
Var log_sum_exp(const Var& row);

// -log(max(softmax(logits)[label], floor)) for a 1xK row of logits.
Var softmax_nll(const Var& logits, int label, double floor = 1e-12);

// Sum over active rows of the squared elementwise difference.
Var masked_squared_distance(const Var& a, const Var& b,
                            std::span<const unsigned char> mask);

Matrix softmax_row(const Eigen::Ref<const Matrix>& logits);

}  // namespace commitlink::ag
