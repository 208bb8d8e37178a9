#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "pmmn/params.hpp"
#include "pmmn/tensor.hpp"

namespace pmmn {

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

inline MatMap as_mat(Tensor& t) {
  return MatMap(t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}
inline ConstMatMap as_mat(const Tensor& t) {
  return ConstMatMap(t.data(), static_cast<Eigen::Index>(t.rows()),
                     static_cast<Eigen::Index>(t.cols()));
}
inline MatMap block_of(Tensor& t, std::size_t row0, std::size_t nrows) {
  return MatMap(t.data() + row0 * t.cols(), static_cast<Eigen::Index>(nrows),
                static_cast<Eigen::Index>(t.cols()));
}
inline ConstMatMap block_of(const Tensor& t, std::size_t row0, std::size_t nrows) {
  return ConstMatMap(t.data() + row0 * t.cols(), static_cast<Eigen::Index>(nrows),
                     static_cast<Eigen::Index>(t.cols()));
}

}  // namespace detail

/// Handle to a value recorded on a GradTape.
struct Var {
  std::size_t id = static_cast<std::size_t>(-1);
};

/// Batch-norm behaviour. Train uses batch statistics and updates the running
/// statistics; Eval uses the running statistics only.
enum class Mode { Train, Eval };

/// Reverse-mode recorder for the fixed set of operations the forecasting
/// model needs. Each forward op appends a node; backward() replays the nodes
/// in reverse once and accumulates parameter gradients into the ParamStore.
class GradTape {
 public:
  GradTape() = default;
  GradTape(const GradTape&) = delete;
  GradTape& operator=(const GradTape&) = delete;

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  std::size_t size() const { return nodes_.size(); }

  Var constant(Tensor t) { return push(std::move(t), false, nullptr, "constant"); }

  Var param(ParamStore& store, const std::string& name) {
    auto it = param_nodes_.find(name);
    if (it != param_nodes_.end()) return Var{it->second};
    Parameter& p = store.param(name);
    Var v = push(p.value, true, nullptr, "param");
    nodes_[v.id].param = &p;
    param_nodes_.emplace(name, v.id);
    stores_.push_back(&store);
    return v;
  }

  // ---- linear algebra -------------------------------------------------------

  Var matmul(Var a, Var b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (A.cols() != B.rows()) {
      throw Error("matmul: inner dimensions disagree (" + A.shape_string() + " * " +
                  B.shape_string() + ")");
    }
    Tensor out(A.rows(), B.cols());
    detail::as_mat(out).noalias() = detail::as_mat(A) * detail::as_mat(B);
    return push(std::move(out), needs(a) || needs(b), [a, b](GradTape& t, Node& self) {
      if (t.needs(a)) {
        detail::as_mat(t.grad_of(a)).noalias() +=
            detail::as_mat(self.grad) * detail::as_mat(t.value(b)).transpose();
      }
      if (t.needs(b)) {
        detail::as_mat(t.grad_of(b)).noalias() +=
            detail::as_mat(t.value(a)).transpose() * detail::as_mat(self.grad);
      }
    }, "matmul");
  }

  /// a * b^T.
  Var matmul_nt(Var a, Var b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (A.cols() != B.cols()) {
      throw Error("matmul_nt: inner dimensions disagree (" + A.shape_string() + " * " +
                  B.shape_string() + "^T)");
    }
    Tensor out(A.rows(), B.rows());
    detail::as_mat(out).noalias() = detail::as_mat(A) * detail::as_mat(B).transpose();
    return push(std::move(out), needs(a) || needs(b), [a, b](GradTape& t, Node& self) {
      if (t.needs(a)) {
        detail::as_mat(t.grad_of(a)).noalias() +=
            detail::as_mat(self.grad) * detail::as_mat(t.value(b));
      }
      if (t.needs(b)) {
        detail::as_mat(t.grad_of(b)).noalias() +=
            detail::as_mat(self.grad).transpose() * detail::as_mat(t.value(a));
      }
    }, "matmul_nt");
  }

  /// Applies a node-axis support to every block of `block` rows of x.
  /// `support` is either block x block (shared by all blocks) or
  /// (blocks*block) x block (one support per block).
  Var block_matmul(Var support, Var x, std::size_t block) {
    const Tensor& S = value(support);
    const Tensor& X = value(x);
    if (block == 0 || X.rows() % block != 0 || S.cols() != block ||
        (S.rows() != block && S.rows() != X.rows())) {
      throw Error("block_matmul: support " + S.shape_string() + " incompatible with input " +
                  X.shape_string() + " at block size " + std::to_string(block));
    }
    const std::size_t nb = X.rows() / block;
    const bool shared = S.rows() == block && nb > 1;
    Tensor out(X.rows(), X.cols());
    for (std::size_t b = 0; b < nb; ++b) {
      const std::size_t r0 = b * block;
      detail::block_of(out, r0, block).noalias() =
          detail::block_of(S, shared ? 0 : r0, block) * detail::block_of(X, r0, block);
    }
    return push(std::move(out), needs(support) || needs(x),
                [support, x, block, nb, shared](GradTape& t, Node& self) {
                  const Tensor& S = t.value(support);
                  const Tensor& X = t.value(x);
                  for (std::size_t b = 0; b < nb; ++b) {
                    const std::size_t r0 = b * block;
                    auto g = detail::block_of(self.grad, r0, block);
                    if (t.needs(support)) {
                      detail::block_of(t.grad_of(support), shared ? 0 : r0, block).noalias() +=
                          g * detail::block_of(X, r0, block).transpose();
                    }
                    if (t.needs(x)) {
                      detail::block_of(t.grad_of(x), r0, block).noalias() +=
                          detail::block_of(S, shared ? 0 : r0, block).transpose() * g;
                    }
                  }
                }, "block_matmul");
  }

  /// Per-block scaled score matrix: out_b = scale * h_b m_b^T (block x block).
  Var block_scores(Var h, Var m, std::size_t block, double scale) {
    const Tensor& H = value(h);
    const Tensor& M = value(m);
    if (!H.same_shape(M) || block == 0 || H.rows() % block != 0) {
      throw Error("block_scores: shapes " + H.shape_string() + " and " + M.shape_string() +
                  " incompatible at block size " + std::to_string(block));
    }
    const std::size_t nb = H.rows() / block;
    Tensor out(H.rows(), block);
    for (std::size_t b = 0; b < nb; ++b) {
      const std::size_t r0 = b * block;
      detail::block_of(out, r0, block).noalias() =
          scale * detail::block_of(H, r0, block) * detail::block_of(M, r0, block).transpose();
    }
    return push(std::move(out), needs(h) || needs(m),
                [h, m, block, nb, scale](GradTape& t, Node& self) {
                  for (std::size_t b = 0; b < nb; ++b) {
                    const std::size_t r0 = b * block;
                    auto g = detail::block_of(self.grad, r0, block);
                    if (t.needs(h)) {
                      detail::block_of(t.grad_of(h), r0, block).noalias() +=
                          scale * g * detail::block_of(t.value(m), r0, block);
                    }
                    if (t.needs(m)) {
                      detail::block_of(t.grad_of(m), r0, block).noalias() +=
                          scale * g.transpose() * detail::block_of(t.value(h), r0, block);
                    }
                  }
                }, "block_scores");
  }

  // ---- elementwise ----------------------------------------------------------

  Var add(Var a, Var b) {
    check_same(a, b, "add");
    Tensor out = value(a);
    const Tensor& B = value(b);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += B[i];
    return push(std::move(out), needs(a) || needs(b), [a, b](GradTape& t, Node& self) {
      if (t.needs(a)) accumulate(t.grad_of(a), self.grad, 1.0);
      if (t.needs(b)) accumulate(t.grad_of(b), self.grad, 1.0);
    }, "add");
  }

  Var sub(Var a, Var b) {
    check_same(a, b, "sub");
    Tensor out = value(a);
    const Tensor& B = value(b);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= B[i];
    return push(std::move(out), needs(a) || needs(b), [a, b](GradTape& t, Node& self) {
      if (t.needs(a)) accumulate(t.grad_of(a), self.grad, 1.0);
      if (t.needs(b)) accumulate(t.grad_of(b), self.grad, -1.0);
    }, "sub");
  }

  /// Hadamard product.
  Var mul(Var a, Var b) {
    check_same(a, b, "mul");
    Tensor out = value(a);
    const Tensor& B = value(b);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= B[i];
    return push(std::move(out), needs(a) || needs(b), [a, b](GradTape& t, Node& self) {
      if (t.needs(a)) {
        Tensor& g = t.grad_of(a);
        const Tensor& B = t.value(b);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * B[i];
      }
      if (t.needs(b)) {
        Tensor& g = t.grad_of(b);
        const Tensor& A = t.value(a);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * A[i];
      }
    }, "mul");
  }

  Var scale(Var a, double c) {
    Tensor out = value(a);
    for (double& v : out.values()) v *= c;
    return push(std::move(out), needs(a), [a, c](GradTape& t, Node& self) {
      accumulate(t.grad_of(a), self.grad, c);
    }, "scale");
  }

  /// a (m x n) + bias (1 x n) broadcast over rows.
  Var add_row(Var a, Var bias) {
    const Tensor& B = value(bias);
    Tensor out = value(a);
    if (B.rows() != 1 || B.cols() != out.cols()) {
      throw Error("add_row: bias " + B.shape_string() + " incompatible with " +
                  out.shape_string());
    }
    for (std::size_t r = 0; r < out.rows(); ++r) {
      for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) += B[c];
    }
    return push(std::move(out), needs(a) || needs(bias), [a, bias](GradTape& t, Node& self) {
      if (t.needs(a)) accumulate(t.grad_of(a), self.grad, 1.0);
      if (t.needs(bias)) {
        Tensor& g = t.grad_of(bias);
        for (std::size_t r = 0; r < self.grad.rows(); ++r) {
          for (std::size_t c = 0; c < self.grad.cols(); ++c) g[c] += self.grad(r, c);
        }
      }
    }, "add_row");
  }

  Var relu(Var a) {
    Tensor out = value(a);
    for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
    return push(std::move(out), needs(a), [a](GradTape& t, Node& self) {
      Tensor& g = t.grad_of(a);
      const Tensor& x = t.value(a);
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (x[i] > 0.0) g[i] += self.grad[i];
      }
    }, "relu");
  }

  Var sigmoid(Var a) {
    Tensor out = value(a);
    for (double& v : out.values()) v = 1.0 / (1.0 + std::exp(-v));
    return push(std::move(out), needs(a), [a](GradTape& t, Node& self) {
      Tensor& g = t.grad_of(a);
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double y = self.value[i];
        g[i] += self.grad[i] * y * (1.0 - y);
      }
    }, "sigmoid");
  }

  Var tanh(Var a) {
    Tensor out = value(a);
    for (double& v : out.values()) v = std::tanh(v);
    return push(std::move(out), needs(a), [a](GradTape& t, Node& self) {
      Tensor& g = t.grad_of(a);
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double y = self.value[i];
        g[i] += self.grad[i] * (1.0 - y * y);
      }
    }, "tanh");
  }

  /// Softmax over each row.
  Var softmax_rows(Var a) {
    Tensor out = value(a);
    for (std::size_t r = 0; r < out.rows(); ++r) softmax_inplace(out.row_span(r));
    return push(std::move(out), needs(a), [a](GradTape& t, Node& self) {
      Tensor& g = t.grad_of(a);
      const Tensor& y = self.value;
      for (std::size_t r = 0; r < y.rows(); ++r) {
        double dot = 0.0;
        for (std::size_t c = 0; c < y.cols(); ++c) dot += self.grad(r, c) * y(r, c);
        for (std::size_t c = 0; c < y.cols(); ++c) {
          g(r, c) += y(r, c) * (self.grad(r, c) - dot);
        }
      }
    }, "softmax_rows");
  }

  // ---- reductions and reshapes ---------------------------------------------

  /// Row-wise dot product: out (m x 1), out_r = <a_r, b_r>.
  Var rowdot(Var a, Var b) {
    check_same(a, b, "rowdot");
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    Tensor out(A.rows(), 1);
    for (std::size_t r = 0; r < A.rows(); ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < A.cols(); ++c) s += A(r, c) * B(r, c);
      out[r] = s;
    }
    return push(std::move(out), needs(a) || needs(b), [a, b](GradTape& t, Node& self) {
      const Tensor& A = t.value(a);
      const Tensor& B = t.value(b);
      for (std::size_t r = 0; r < A.rows(); ++r) {
        const double g = self.grad[r];
        if (t.needs(a)) {
          Tensor& ga = t.grad_of(a);
          for (std::size_t c = 0; c < A.cols(); ++c) ga(r, c) += g * B(r, c);
        }
        if (t.needs(b)) {
          Tensor& gb = t.grad_of(b);
          for (std::size_t c = 0; c < A.cols(); ++c) gb(r, c) += g * A(r, c);
        }
      }
    }, "rowdot");
  }

  /// Sum of each row: out (m x 1).
  Var rowsum(Var a) {
    const Tensor& A = value(a);
    Tensor out(A.rows(), 1);
    for (std::size_t r = 0; r < A.rows(); ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < A.cols(); ++c) s += A(r, c);
      out[r] = s;
    }
    return push(std::move(out), needs(a), [a](GradTape& t, Node& self) {
      Tensor& g = t.grad_of(a);
      for (std::size_t r = 0; r < g.rows(); ++r) {
        for (std::size_t c = 0; c < g.cols(); ++c) g(r, c) += self.grad[r];
      }
    }, "rowsum");
  }

  Var sum_all(Var a) {
    double s = 0.0;
    for (double v : value(a).values()) s += v;
    return push(Tensor(1, 1, s), needs(a), [a](GradTape& t, Node& self) {
      Tensor& g = t.grad_of(a);
      for (double& v : g.values()) v += self.grad[0];
    }, "sum_all");
  }

  /// Concatenates tensors with equal row counts along columns.
  Var hconcat(const std::vector<Var>& parts) {
    if (parts.empty()) throw Error("hconcat: no inputs");
    const std::size_t rows = value(parts[0]).rows();
    std::size_t cols = 0;
    bool any = false;
    for (Var p : parts) {
      if (value(p).rows() != rows) throw Error("hconcat: row counts disagree");
      cols += value(p).cols();
      any = any || needs(p);
    }
    Tensor out(rows, cols);
    std::size_t c0 = 0;
    for (Var p : parts) {
      const Tensor& P = value(p);
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < P.cols(); ++c) out(r, c0 + c) = P(r, c);
      }
      c0 += P.cols();
    }
    return push(std::move(out), any, [parts](GradTape& t, Node& self) {
      std::size_t c0 = 0;
      for (Var p : parts) {
        const std::size_t pc = t.value(p).cols();
        if (t.needs(p)) {
          Tensor& g = t.grad_of(p);
          for (std::size_t r = 0; r < g.rows(); ++r) {
            for (std::size_t c = 0; c < pc; ++c) g(r, c) += self.grad(r, c0 + c);
          }
        }
        c0 += pc;
      }
    }, "hconcat");
  }

  /// out_r = sum over i in rows[r] of table_i.
  Var gather_sum(Var table, std::vector<std::vector<std::size_t>> rows) {
    const Tensor& T = value(table);
    Tensor out(rows.size(), T.cols());
    for (std::size_t r = 0; r < rows.size(); ++r) {
      for (std::size_t idx : rows[r]) {
        if (idx >= T.rows()) throw Error("gather_sum: index out of range");
        for (std::size_t c = 0; c < T.cols(); ++c) out(r, c) += T(idx, c);
      }
    }
    auto shared = std::make_shared<std::vector<std::vector<std::size_t>>>(std::move(rows));
    return push(std::move(out), needs(table), [table, shared](GradTape& t, Node& self) {
      Tensor& g = t.grad_of(table);
      for (std::size_t r = 0; r < shared->size(); ++r) {
        for (std::size_t idx : (*shared)[r]) {
          for (std::size_t c = 0; c < g.cols(); ++c) g(idx, c) += self.grad(r, c);
        }
      }
    }, "gather_sum");
  }

  /// out_r = sum_j weights(r, j) * table_{ids(r, j)}; ids and weights are m x k.
  Var weighted_gather(Var table, std::vector<std::size_t> ids, Tensor weights) {
    const Tensor& T = value(table);
    if (ids.size() != weights.size()) throw Error("weighted_gather: ids/weights size mismatch");
    const std::size_t k = weights.cols();
    Tensor out(weights.rows(), T.cols());
    for (std::size_t r = 0; r < weights.rows(); ++r) {
      for (std::size_t j = 0; j < k; ++j) {
        const std::size_t idx = ids[r * k + j];
        if (idx >= T.rows()) {
          throw Error("weighted_gather: pattern id " + std::to_string(idx) +
                      " outside memory bank of " + std::to_string(T.rows()) + " rows");
        }
        const double w = weights(r, j);
        for (std::size_t c = 0; c < T.cols(); ++c) out(r, c) += w * T(idx, c);
      }
    }
    auto sid = std::make_shared<std::vector<std::size_t>>(std::move(ids));
    auto sw = std::make_shared<Tensor>(std::move(weights));
    return push(std::move(out), needs(table), [table, sid, sw, k](GradTape& t, Node& self) {
      Tensor& g = t.grad_of(table);
      for (std::size_t r = 0; r < sw->rows(); ++r) {
        for (std::size_t j = 0; j < k; ++j) {
          const std::size_t idx = (*sid)[r * k + j];
          const double w = (*sw)(r, j);
          for (std::size_t c = 0; c < g.cols(); ++c) g(idx, c) += w * self.grad(r, c);
        }
      }
    }, "weighted_gather");
  }

  // ---- normalisation and loss ----------------------------------------------

  /// Per-column batch normalisation of x (rows = samples). In Train mode with
  /// more than one row, batch statistics are used and the running statistics
  /// are updated in place; otherwise the running statistics are used.
  Var batchnorm(Var x, Var gamma, Var beta, Tensor& running_mean, Tensor& running_var,
                Mode mode, double momentum = 0.1, double eps = 1e-5) {
    const Tensor& X = value(x);
    const std::size_t m = X.rows();
    const std::size_t n = X.cols();
    if (value(gamma).size() != n || value(beta).size() != n || running_mean.size() != n ||
        running_var.size() != n) {
      throw Error("batchnorm: parameter width does not match input " + X.shape_string());
    }
    const bool batch_stats = mode == Mode::Train && m > 1;
    auto xhat = std::make_shared<Tensor>(m, n);
    auto inv_std = std::make_shared<std::vector<double>>(n);
    for (std::size_t c = 0; c < n; ++c) {
      double mu;
      double var;
      if (batch_stats) {
        mu = 0.0;
        for (std::size_t r = 0; r < m; ++r) mu += X(r, c);
        mu /= static_cast<double>(m);
        var = 0.0;
        for (std::size_t r = 0; r < m; ++r) var += (X(r, c) - mu) * (X(r, c) - mu);
        var /= static_cast<double>(m);
        running_mean[c] = (1.0 - momentum) * running_mean[c] + momentum * mu;
        running_var[c] = (1.0 - momentum) * running_var[c] +
                         momentum * var * static_cast<double>(m) / static_cast<double>(m - 1);
      } else {
        mu = running_mean[c];
        var = running_var[c];
      }
      (*inv_std)[c] = 1.0 / std::sqrt(var + eps);
      for (std::size_t r = 0; r < m; ++r) (*xhat)(r, c) = (X(r, c) - mu) * (*inv_std)[c];
    }
    const Tensor& G = value(gamma);
    const Tensor& B = value(beta);
    Tensor out(m, n);
    for (std::size_t r = 0; r < m; ++r) {
      for (std::size_t c = 0; c < n; ++c) out(r, c) = G[c] * (*xhat)(r, c) + B[c];
    }
    return push(std::move(out), needs(x) || needs(gamma) || needs(beta),
                [x, gamma, beta, xhat, inv_std, batch_stats](GradTape& t, Node& self) {
                  const std::size_t m = xhat->rows();
                  const std::size_t n = xhat->cols();
                  const Tensor& G = t.value(gamma);
                  const Tensor& dy = self.grad;
                  for (std::size_t c = 0; c < n; ++c) {
                    double sum_dy = 0.0;
                    double sum_dy_xhat = 0.0;
                    for (std::size_t r = 0; r < m; ++r) {
                      sum_dy += dy(r, c);
                      sum_dy_xhat += dy(r, c) * (*xhat)(r, c);
                    }
                    if (t.needs(gamma)) t.grad_of(gamma)[c] += sum_dy_xhat;
                    if (t.needs(beta)) t.grad_of(beta)[c] += sum_dy;
                    if (!t.needs(x)) continue;
                    Tensor& gx = t.grad_of(x);
                    const double s = G[c] * (*inv_std)[c];
                    if (batch_stats) {
                      const double md = static_cast<double>(m);
                      for (std::size_t r = 0; r < m; ++r) {
                        gx(r, c) += s / md *
                                    (md * dy(r, c) - sum_dy - (*xhat)(r, c) * sum_dy_xhat);
                      }
                    } else {
                      for (std::size_t r = 0; r < m; ++r) gx(r, c) += s * dy(r, c);
                    }
                  }
                }, "batchnorm");
  }

  /// Mean absolute error over entries with mask != 0. The subgradient at a
  /// zero residual is 0.
  Var mae_loss(Var pred, const Tensor& target, const Tensor& mask) {
    const Tensor& P = value(pred);
    if (!P.same_shape(target) || !P.same_shape(mask)) {
      throw Error("mae_loss: shape mismatch between prediction " + P.shape_string() +
                  " and target " + target.shape_string());
    }
    double count = 0.0;
    double sum = 0.0;
    for (std::size_t i = 0; i < P.size(); ++i) {
      if (mask[i] != 0.0) {
        sum += std::abs(P[i] - target[i]);
        count += 1.0;
      }
    }
    if (count == 0.0) throw Error("mae_loss: no valid target entries");
    auto tgt = std::make_shared<Tensor>(target);
    auto msk = std::make_shared<Tensor>(mask);
    return push(Tensor(1, 1, sum / count), needs(pred),
                [pred, tgt, msk, count](GradTape& t, Node& self) {
                  Tensor& g = t.grad_of(pred);
                  const Tensor& P = t.value(pred);
                  for (std::size_t i = 0; i < g.size(); ++i) {
                    if ((*msk)[i] == 0.0) continue;
                    const double d = P[i] - (*tgt)[i];
                    const double sgn = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
                    g[i] += self.grad[0] * sgn / count;
                  }
                }, "mae_loss");
  }

  // ---- backward -------------------------------------------------------------

  /// Propagates d(loss)/d(.) through the recorded operations and adds the
  /// result to the gradient accumulators of every parameter touched. Valid
  /// exactly once per recording.
  void backward(Var loss) {
    if (consumed_) throw Error("backward: tape already consumed; record a new forward pass");
    const Tensor& L = value(loss);
    if (L.size() != 1) throw Error("backward: loss must be a scalar, got " + L.shape_string());
    consumed_ = true;
    if (!needs(loss)) {
      for (ParamStore* s : stores_) s->mark_grads_ready();
      return;
    }
    grad_of(loss)[0] = 1.0;
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.has_grad) continue;
      if (n.backward) n.backward(*this, n);
      if (n.param != nullptr) accumulate(n.param->grad, n.grad, 1.0);
    }
    for (ParamStore* s : stores_) s->mark_grads_ready();
  }

  bool consumed() const { return consumed_; }

  /// Gradient recorded for a node during backward (zeros if not reached).
  Tensor gradient(Var v) const {
    const Node& n = nodes_.at(v.id);
    return n.has_grad ? n.grad : Tensor(n.value.rows(), n.value.cols());
  }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool has_grad = false;
    bool requires_grad = false;
    Parameter* param = nullptr;
    std::function<void(GradTape&, Node&)> backward;
  };

  static void accumulate(Tensor& dst, const Tensor& src, double c) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += c * src[i];
  }

  bool needs(Var v) const { return nodes_.at(v.id).requires_grad; }

  Tensor& grad_of(Var v) {
    Node& n = nodes_.at(v.id);
    if (!n.has_grad) {
      n.grad = Tensor(n.value.rows(), n.value.cols());
      n.has_grad = true;
    }
    return n.grad;
  }

  void check_same(Var a, Var b, const char* op) const {
    if (!value(a).same_shape(value(b))) {
      throw Error(std::string(op) + ": shape mismatch (" + value(a).shape_string() + " vs " +
                  value(b).shape_string() + ")");
    }
  }

  Var push(Tensor value, bool requires_grad, std::function<void(GradTape&, Node&)> bw,
           const char* op) {
    if (!value.all_finite()) throw Error(std::string(op) + ": produced a non-finite value");
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    if (requires_grad) n.backward = std::move(bw);
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
  }

  std::deque<Node> nodes_;  // references to values stay valid as the tape grows
  std::unordered_map<std::string, std::size_t> param_nodes_;
  std::vector<ParamStore*> stores_;
  bool consumed_ = false;
};

}  // namespace pmmn
