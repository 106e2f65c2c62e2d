#include "commitlink/autograd.hpp"

#include <cmath>
#include <limits>
#include <string>
#include <stdexcept>
#include <unordered_set>

namespace commitlink::ag {
namespace {

Var make_node(Matrix value, std::vector<Var> parents,
              std::function<void(Node&)> backward_fn) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  for (const auto& p : parents) {
    if (p->requires_grad) {
      node->requires_grad = true;
      break;
    }
  }
  if (node->requires_grad) {
    node->parents = std::move(parents);
    node->backward_fn = std::move(backward_fn);
  }
  return node;
}

void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (a->rows() != b->rows() || a->cols() != b->cols()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch");
  }
}

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

}  // namespace

Matrix& Node::ensure_grad() {
  if (grad.rows() != value.rows() || grad.cols() != value.cols()) {
    grad = Matrix::Zero(value.rows(), value.cols());
  }
  return grad;
}

Var constant(Matrix value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  return node;
}

Var constant_scalar(double value) {
  Matrix m(1, 1);
  m(0, 0) = value;
  return constant(std::move(m));
}

Var parameter(Matrix value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = true;
  return node;
}

void backward(const Var& root) {
  if (root->rows() != 1 || root->cols() != 1) {
    throw std::invalid_argument("backward: root must be a scalar");
  }
  if (!root->requires_grad) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.get(), 0);
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) {
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->ensure_grad()(0, 0) += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward_fn) {
      node->ensure_grad();
      node->backward_fn(*node);
    }
  }
}

Var matmul(const Var& a, const Var& b) {
  if (a->cols() != b->rows()) throw std::invalid_argument("matmul: shape");
  Matrix out = a->value * b->value;
  return make_node(std::move(out), {a, b}, [a, b](Node& self) {
    if (a->requires_grad) a->ensure_grad().noalias() += self.grad * b->value.transpose();
    if (b->requires_grad) b->ensure_grad().noalias() += a->value.transpose() * self.grad;
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  if (a->cols() != b->cols()) throw std::invalid_argument("matmul_nt: shape");
  Matrix out = a->value * b->value.transpose();
  return make_node(std::move(out), {a, b}, [a, b](Node& self) {
    if (a->requires_grad) a->ensure_grad().noalias() += self.grad * b->value;
    if (b->requires_grad) b->ensure_grad().noalias() += self.grad.transpose() * a->value;
  });
}

Var add(const Var& a, const Var& b) {
  check_same_shape(a, b, "add");
  Matrix out = a->value + b->value;
  return make_node(std::move(out), {a, b}, [a, b](Node& self) {
    if (a->requires_grad) a->ensure_grad() += self.grad;
    if (b->requires_grad) b->ensure_grad() += self.grad;
  });
}

Var sub(const Var& a, const Var& b) {
  check_same_shape(a, b, "sub");
  Matrix out = a->value - b->value;
  return make_node(std::move(out), {a, b}, [a, b](Node& self) {
    if (a->requires_grad) a->ensure_grad() += self.grad;
    if (b->requires_grad) b->ensure_grad() -= self.grad;
  });
}

Var mul(const Var& a, const Var& b) {
  check_same_shape(a, b, "mul");
  Matrix out = a->value.cwiseProduct(b->value);
  return make_node(std::move(out), {a, b}, [a, b](Node& self) {
    if (a->requires_grad) a->ensure_grad() += self.grad.cwiseProduct(b->value);
    if (b->requires_grad) b->ensure_grad() += self.grad.cwiseProduct(a->value);
  });
}

Var scale(const Var& a, double factor) {
  Matrix out = a->value * factor;
  return make_node(std::move(out), {a}, [a, factor](Node& self) {
    a->ensure_grad() += self.grad * factor;
  });
}

Var add_row(const Var& a, const Var& row) {
  if (row->rows() != 1 || row->cols() != a->cols()) {
    throw std::invalid_argument("add_row: shape");
  }
  Matrix out = a->value.rowwise() + row->value.row(0);
  return make_node(std::move(out), {a, row}, [a, row](Node& self) {
    if (a->requires_grad) a->ensure_grad() += self.grad;
    if (row->requires_grad) row->ensure_grad() += self.grad.colwise().sum();
  });
}

Var gelu(const Var& a) {
  Matrix out = a->value.unaryExpr([](double x) {
    return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2));
  });
  return make_node(std::move(out), {a}, [a](Node& self) {
    Matrix d = a->value.unaryExpr([](double x) {
      return 0.5 * (1.0 + std::erf(x * kInvSqrt2)) +
             x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
    });
    a->ensure_grad() += self.grad.cwiseProduct(d);
  });
}

Var tanh(const Var& a) {
  Matrix out = a->value.array().tanh().matrix();
  return make_node(std::move(out), {a}, [a](Node& self) {
    Matrix d = (1.0 - self.value.array().square()).matrix();
    a->ensure_grad() += self.grad.cwiseProduct(d);
  });
}

Var abs(const Var& a) {
  Matrix out = a->value.cwiseAbs();
  return make_node(std::move(out), {a}, [a](Node& self) {
    Matrix sign = a->value.unaryExpr(
        [](double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
    a->ensure_grad() += self.grad.cwiseProduct(sign);
  });
}

Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps) {
  const Eigen::Index n = x->rows();
  const Eigen::Index c = x->cols();
  if (gain->cols() != c || bias->cols() != c) {
    throw std::invalid_argument("layer_norm: shape");
  }
  Matrix xhat(n, c);
  Eigen::VectorXd rstd(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mean = x->value.row(i).mean();
    const double var =
        (x->value.row(i).array() - mean).square().sum() / static_cast<double>(c);
    rstd(i) = 1.0 / std::sqrt(var + eps);
    xhat.row(i) = (x->value.row(i).array() - mean) * rstd(i);
  }
  Matrix out =
      (xhat.array().rowwise() * gain->value.row(0).array()).rowwise() +
      bias->value.row(0).array();
  return make_node(
      std::move(out), {x, gain, bias},
      [x, gain, bias, xhat = std::move(xhat), rstd = std::move(rstd)](Node& self) {
        if (gain->requires_grad) {
          gain->ensure_grad() += self.grad.cwiseProduct(xhat).colwise().sum();
        }
        if (bias->requires_grad) bias->ensure_grad() += self.grad.colwise().sum();
        if (x->requires_grad) {
          Matrix& gx = x->ensure_grad();
          const double inv_c = 1.0 / static_cast<double>(xhat.cols());
          for (Eigen::Index i = 0; i < xhat.rows(); ++i) {
            Eigen::RowVectorXd dxhat =
                self.grad.row(i).cwiseProduct(gain->value.row(0));
            const double m1 = dxhat.sum() * inv_c;
            const double m2 = dxhat.dot(xhat.row(i)) * inv_c;
            gx.row(i).array() +=
                rstd(i) * (dxhat.array() - m1 - xhat.row(i).array() * m2);
          }
        }
      });
}

Var embedding(const Var& table, std::span<const int> ids) {
  Matrix out(static_cast<Eigen::Index>(ids.size()), table->cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= table->rows()) {
      throw std::out_of_range("embedding: id out of range");
    }
    out.row(static_cast<Eigen::Index>(i)) = table->value.row(ids[i]);
  }
  std::vector<int> idx(ids.begin(), ids.end());
  return make_node(std::move(out), {table}, [table, idx = std::move(idx)](Node& self) {
    Matrix& g = table->ensure_grad();
    for (std::size_t i = 0; i < idx.size(); ++i) {
      g.row(idx[i]) += self.grad.row(static_cast<Eigen::Index>(i));
    }
  });
}

Var masked_softmax(const Var& scores, std::span<const unsigned char> key_mask) {
  const Eigen::Index n = scores->rows();
  const Eigen::Index m = scores->cols();
  if (static_cast<Eigen::Index>(key_mask.size()) != m) {
    throw std::invalid_argument("masked_softmax: mask length");
  }
  Matrix out = Matrix::Zero(n, m);
  for (Eigen::Index i = 0; i < n; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < m; ++j) {
      if (key_mask[j]) mx = std::max(mx, scores->value(i, j));
    }
    if (!std::isfinite(mx)) continue;
    double total = 0.0;
    for (Eigen::Index j = 0; j < m; ++j) {
      if (key_mask[j]) {
        out(i, j) = std::exp(scores->value(i, j) - mx);
        total += out(i, j);
      }
    }
    out.row(i) /= total;
  }
  return make_node(std::move(out), {scores}, [scores](Node& self) {
    const Eigen::VectorXd dot = self.grad.cwiseProduct(self.value).rowwise().sum();
    Matrix d = self.value.array() * (self.grad.colwise() - dot).array();
    scores->ensure_grad() += d;
  });
}

Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || start + count > a->cols()) {
    throw std::out_of_range("slice_cols: range");
  }
  Matrix out = a->value.middleCols(start, count);
  return make_node(std::move(out), {a}, [a, start, count](Node& self) {
    a->ensure_grad().middleCols(start, count) += self.grad;
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: empty");
  const Eigen::Index rows = parts.front()->rows();
  Eigen::Index cols = 0;
  for (const auto& p : parts) {
    if (p->rows() != rows) throw std::invalid_argument("concat_cols: rows");
    cols += p->cols();
  }
  Matrix out(rows, cols);
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    out.middleCols(at, p->cols()) = p->value;
    at += p->cols();
  }
  std::vector<Var> parents(parts.begin(), parts.end());
  return make_node(std::move(out), parents, [parents](Node& self) {
    Eigen::Index offset = 0;
    for (const auto& p : parents) {
      if (p->requires_grad) p->ensure_grad() += self.grad.middleCols(offset, p->cols());
      offset += p->cols();
    }
  });
}

Var masked_mean_rows(const Var& h, std::span<const unsigned char> mask) {
  if (static_cast<Eigen::Index>(mask.size()) != h->rows()) {
    throw std::invalid_argument("masked_mean_rows: mask length");
  }
  std::vector<Eigen::Index> active;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i]) active.push_back(static_cast<Eigen::Index>(i));
  }
  Matrix out = Matrix::Zero(1, h->cols());
  if (active.empty()) return constant(std::move(out));
  for (auto i : active) out.row(0) += h->value.row(i);
  const double inv = 1.0 / static_cast<double>(active.size());
  out *= inv;
  return make_node(std::move(out), {h}, [h, active = std::move(active), inv](Node& self) {
    Matrix& g = h->ensure_grad();
    for (auto i : active) g.row(i) += self.grad.row(0) * inv;
  });
}

Var cosine(const Var& a, const Var& b) {
  check_same_shape(a, b, "cosine");
  const double na = a->value.norm();
  const double nb = b->value.norm();
  Matrix out(1, 1);
  if (na == 0.0 || nb == 0.0) {
    out(0, 0) = 0.0;
    return constant(std::move(out));
  }
  const double c = a->value.cwiseProduct(b->value).sum() / (na * nb);
  out(0, 0) = c;
  return make_node(std::move(out), {a, b}, [a, b, na, nb, c](Node& self) {
    const double g = self.grad(0, 0);
    if (a->requires_grad) {
      a->ensure_grad() += g * (b->value / (na * nb) - c * a->value / (na * na));
    }
    if (b->requires_grad) {
      b->ensure_grad() += g * (a->value / (na * nb) - c * b->value / (nb * nb));
    }
  });
}

Var sum(const Var& a) {
  Matrix out(1, 1);
  out(0, 0) = a->value.sum();
  return make_node(std::move(out), {a}, [a](Node& self) {
    a->ensure_grad().array() += self.grad(0, 0);
  });
}

Var sum(std::span<const Var> scalars) {
  Matrix out = Matrix::Zero(1, 1);
  for (const auto& s : scalars) out(0, 0) += s->value.sum();
  std::vector<Var> parents(scalars.begin(), scalars.end());
  return make_node(std::move(out), parents, [parents](Node& self) {
    for (const auto& p : parents) {
      if (p->requires_grad) p->ensure_grad().array() += self.grad(0, 0);
    }
  });
}

Matrix softmax_row(const Eigen::Ref<const Matrix>& logits) {
  const double mx = logits.maxCoeff();
  Matrix p = (logits.array() - mx).exp().matrix();
  p /= p.sum();
  return p;
}

Var log_sum_exp(const Var& row) {
  const double mx = row->value.maxCoeff();
  Matrix out(1, 1);
  out(0, 0) = mx + std::log((row->value.array() - mx).exp().sum());
  return make_node(std::move(out), {row}, [row](Node& self) {
    row->ensure_grad() += self.grad(0, 0) * softmax_row(row->value);
  });
}

Var softmax_nll(const Var& logits, int label, double floor) {
  if (logits->rows() != 1 || label < 0 || label >= logits->cols()) {
    throw std::invalid_argument("softmax_nll: bad logits or label");
  }
  Matrix p = softmax_row(logits->value);
  Matrix out(1, 1);
  if (p(0, label) < floor) {
    out(0, 0) = -std::log(floor);
    return constant(std::move(out));
  }
  out(0, 0) = -std::log(p(0, label));
  return make_node(std::move(out), {logits}, [logits, p, label](Node& self) {
    Matrix d = p;
    d(0, label) -= 1.0;
    logits->ensure_grad() += self.grad(0, 0) * d;
  });
}

Var masked_squared_distance(const Var& a, const Var& b,
                            std::span<const unsigned char> mask) {
  check_same_shape(a, b, "masked_squared_distance");
  if (static_cast<Eigen::Index>(mask.size()) != a->rows()) {
    throw std::invalid_argument("masked_squared_distance: mask length");
  }
  Matrix diff = a->value - b->value;
  double total = 0.0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i]) total += diff.row(static_cast<Eigen::Index>(i)).squaredNorm();
  }
  std::vector<unsigned char> m(mask.begin(), mask.end());
  Matrix out(1, 1);
  out(0, 0) = total;
  return make_node(std::move(out), {a, b},
                   [a, b, diff = std::move(diff), m = std::move(m)](Node& self) {
                     const double g = 2.0 * self.grad(0, 0);
                     for (std::size_t i = 0; i < m.size(); ++i) {
                       if (!m[i]) continue;
                       const auto r = static_cast<Eigen::Index>(i);
                       if (a->requires_grad) a->ensure_grad().row(r) += g * diff.row(r);
                       if (b->requires_grad) b->ensure_grad().row(r) -= g * diff.row(r);
                     }
                   });
}

}  // namespace commitlink::ag
