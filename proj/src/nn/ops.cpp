#include "travgrid/nn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <unordered_set>

#include <Eigen/Core>

namespace travgrid::nn {

namespace {

template <typename T>
std::shared_ptr<Node<T>> make_node(int rows, int cols, const char* op,
                                   std::vector<std::shared_ptr<Node<T>>> parents) {
  auto n = std::make_shared<Node<T>>();
  n->rows = rows;
  n->cols = cols;
  n->op = op;
  n->value.assign(static_cast<std::size_t>(rows) * cols, T(0));
  for (const auto& p : parents) n->requires_grad = n->requires_grad || p->requires_grad;
  if (n->requires_grad) n->parents = std::move(parents);
  return n;
}

template <typename T>
[[noreturn]] void shape_fail(const char* op, const Var<T>& a, const Var<T>& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + a.shape_string() + " and " +
                   b.shape_string());
}

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using CMap = Eigen::Map<const RowMat<T>>;
template <typename T>
using MMap = Eigen::Map<RowMat<T>>;

// C[m x n] += A[m x k] * B[k x n]
template <typename T>
void gemm_nn(int m, int k, int n, const T* a, const T* b, T* c) {
  MMap<T>(c, m, n).noalias() += CMap<T>(a, m, k) * CMap<T>(b, k, n);
}

// C[m x k] += A[m x n] * B[k x n]^T
template <typename T>
void gemm_nt(int m, int n, int k, const T* a, const T* b, T* c) {
  MMap<T>(c, m, k).noalias() += CMap<T>(a, m, n) * CMap<T>(b, k, n).transpose();
}

// C[k x n] += A[m x k]^T * B[m x n]
template <typename T>
void gemm_tn(int m, int k, int n, const T* a, const T* b, T* c) {
  MMap<T>(c, k, n).noalias() += CMap<T>(a, m, k).transpose() * CMap<T>(b, m, n);
}

}  // namespace

template <typename T>
void backward(const Var<T>& root) {
  if (root.size() != 1) {
    throw ShapeError("backward: root must be a scalar, got " + root.shape_string());
  }
  if (!root.requires_grad()) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{root.node(), 0}};
  seen.insert(root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root.node()->grad_buffer()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
}

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  if (a.cols() != b.rows()) shape_fail("matmul", a, b);
  const int m = a.rows(), k = a.cols(), n = b.cols();
  auto out = make_node<T>(m, n, "matmul", {a.shared(), b.shared()});
  gemm_nn(m, k, n, a.value().data(), b.value().data(), out->value.data());
  if (out->requires_grad) {
    out->backward = [m, k, n](Node<T>& self) {
      auto& pa = *self.parents[0];
      auto& pb = *self.parents[1];
      if (pa.requires_grad) gemm_nt(m, n, k, self.grad.data(), pb.value.data(), pa.grad_buffer());
      if (pb.requires_grad) gemm_tn(m, k, n, pa.value.data(), self.grad.data(), pb.grad_buffer());
    };
  }
  return Var<T>(out);
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  const bool same = a.rows() == b.rows() && a.cols() == b.cols();
  const bool row_broadcast = b.rows() == 1 && b.cols() == a.cols();
  if (!same && !row_broadcast) shape_fail("add", a, b);
  const int m = a.rows(), n = a.cols();
  auto out = make_node<T>(m, n, "add", {a.shared(), b.shared()});
  const auto& av = a.value();
  const auto& bv = b.value();
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      const std::size_t idx = static_cast<std::size_t>(i) * n + j;
      out->value[idx] = av[idx] + bv[same ? idx : static_cast<std::size_t>(j)];
    }
  }
  if (out->requires_grad) {
    out->backward = [m, n, same](Node<T>& self) {
      auto& pa = *self.parents[0];
      auto& pb = *self.parents[1];
      if (pa.requires_grad) {
        T* g = pa.grad_buffer();
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
      }
      if (pb.requires_grad) {
        T* g = pb.grad_buffer();
        for (int i = 0; i < m; ++i) {
          for (int j = 0; j < n; ++j) {
            const std::size_t idx = static_cast<std::size_t>(i) * n + j;
            g[same ? idx : static_cast<std::size_t>(j)] += self.grad[idx];
          }
        }
      }
    };
  }
  return Var<T>(out);
}

template <typename T>
Var<T> scale(const Var<T>& a, T factor) {
  auto out = make_node<T>(a.rows(), a.cols(), "scale", {a.shared()});
  for (std::size_t i = 0; i < a.size(); ++i) out->value[i] = factor * a.value()[i];
  if (out->requires_grad) {
    out->backward = [factor](Node<T>& self) {
      T* g = self.parents[0]->grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += factor * self.grad[i];
    };
  }
  return Var<T>(out);
}

template <typename T>
Var<T> transpose(const Var<T>& a) {
  const int m = a.rows(), n = a.cols();
  auto out = make_node<T>(n, m, "transpose", {a.shared()});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      out->value[static_cast<std::size_t>(j) * m + i] = a.value()[static_cast<std::size_t>(i) * n + j];
  if (out->requires_grad) {
    out->backward = [m, n](Node<T>& self) {
      T* g = self.parents[0]->grad_buffer();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
          g[static_cast<std::size_t>(i) * n + j] += self.grad[static_cast<std::size_t>(j) * m + i];
    };
  }
  return Var<T>(out);
}

template <typename T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const int m = parts.front().rows();
  int n = 0;
  std::vector<std::shared_ptr<Node<T>>> parents;
  std::vector<int> offsets;
  for (const auto& p : parts) {
    if (p.rows() != m) shape_fail("concat_cols", parts.front(), p);
    offsets.push_back(n);
    n += p.cols();
    parents.push_back(p.shared());
  }
  auto out = make_node<T>(m, n, "concat_cols", parents);
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const int pc = parts[k].cols();
    for (int i = 0; i < m; ++i)
      std::copy_n(parts[k].value().data() + static_cast<std::size_t>(i) * pc, pc,
                  out->value.data() + static_cast<std::size_t>(i) * n + offsets[k]);
  }
  if (out->requires_grad) {
    out->backward = [m, n, offsets](Node<T>& self) {
      for (std::size_t k = 0; k < self.parents.size(); ++k) {
        auto& p = *self.parents[k];
        if (!p.requires_grad) continue;
        T* g = p.grad_buffer();
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < p.cols; ++j)
            g[static_cast<std::size_t>(i) * p.cols + j] +=
                self.grad[static_cast<std::size_t>(i) * n + offsets[k] + j];
      }
    };
  }
  return Var<T>(out);
}

template <typename T>
Var<T> slice_cols(const Var<T>& a, int begin, int count) {
  if (begin < 0 || count < 0 || begin + count > a.cols()) {
    throw ShapeError("slice_cols: columns [" + std::to_string(begin) + ", " +
                     std::to_string(begin + count) + ") out of range for " + a.shape_string());
  }
  const int m = a.rows(), n = a.cols();
  auto out = make_node<T>(m, count, "slice_cols", {a.shared()});
  for (int i = 0; i < m; ++i)
    std::copy_n(a.value().data() + static_cast<std::size_t>(i) * n + begin, count,
                out->value.data() + static_cast<std::size_t>(i) * count);
  if (out->requires_grad) {
    out->backward = [m, n, begin, count](Node<T>& self) {
      T* g = self.parents[0]->grad_buffer();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < count; ++j)
          g[static_cast<std::size_t>(i) * n + begin + j] +=
              self.grad[static_cast<std::size_t>(i) * count + j];
    };
  }
  return Var<T>(out);
}

template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps) {
  const int m = x.rows(), n = x.cols();
  if (gamma.rows() != 1 || gamma.cols() != n) shape_fail("layer_norm(gamma)", x, gamma);
  if (beta.rows() != 1 || beta.cols() != n) shape_fail("layer_norm(beta)", x, beta);
  auto out = make_node<T>(m, n, "layer_norm", {x.shared(), gamma.shared(), beta.shared()});
  std::vector<T> xhat(x.size());
  std::vector<T> inv_std(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) {
    const T* xi = x.value().data() + static_cast<std::size_t>(i) * n;
    T mean = T(0);
    for (int j = 0; j < n; ++j) mean += xi[j];
    mean /= n;
    T var = T(0);
    for (int j = 0; j < n; ++j) var += (xi[j] - mean) * (xi[j] - mean);
    var /= n;
    const T inv = T(1) / std::sqrt(var + eps);
    inv_std[static_cast<std::size_t>(i)] = inv;
    for (int j = 0; j < n; ++j) {
      const std::size_t idx = static_cast<std::size_t>(i) * n + j;
      xhat[idx] = (xi[j] - mean) * inv;
      out->value[idx] = xhat[idx] * gamma.value()[j] + beta.value()[j];
    }
  }
  if (out->requires_grad) {
    out->backward = [m, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<T>& self) {
      auto& px = *self.parents[0];
      auto& pg = *self.parents[1];
      auto& pb = *self.parents[2];
      const T* dy = self.grad.data();
      if (pg.requires_grad) {
        T* g = pg.grad_buffer();
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j) {
            const std::size_t idx = static_cast<std::size_t>(i) * n + j;
            g[j] += dy[idx] * xhat[idx];
          }
      }
      if (pb.requires_grad) {
        T* g = pb.grad_buffer();
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j) g[j] += dy[static_cast<std::size_t>(i) * n + j];
      }
      if (px.requires_grad) {
        T* g = px.grad_buffer();
        const T* gamma_v = pg.value.data();
        for (int i = 0; i < m; ++i) {
          T mean_d = T(0);
          T mean_dx = T(0);
          for (int j = 0; j < n; ++j) {
            const std::size_t idx = static_cast<std::size_t>(i) * n + j;
            const T d = dy[idx] * gamma_v[j];
            mean_d += d;
            mean_dx += d * xhat[idx];
          }
          mean_d /= n;
          mean_dx /= n;
          for (int j = 0; j < n; ++j) {
            const std::size_t idx = static_cast<std::size_t>(i) * n + j;
            const T d = dy[idx] * gamma_v[j];
            g[idx] += inv_std[static_cast<std::size_t>(i)] * (d - mean_d - xhat[idx] * mean_dx);
          }
        }
      }
    };
  }
  return Var<T>(out);
}

template <typename T>
Var<T> softmax_rows(const Var<T>& x) {
  const int m = x.rows(), n = x.cols();
  auto out = make_node<T>(m, n, "softmax_rows", {x.shared()});
  for (int i = 0; i < m; ++i) {
    const T* xi = x.value().data() + static_cast<std::size_t>(i) * n;
    T* yi = out->value.data() + static_cast<std::size_t>(i) * n;
    const T mx = *std::max_element(xi, xi + n);
    T sum = T(0);
    for (int j = 0; j < n; ++j) {
      yi[j] = std::exp(xi[j] - mx);
      sum += yi[j];
    }
    for (int j = 0; j < n; ++j) yi[j] /= sum;
  }
  if (out->requires_grad) {
    out->backward = [m, n](Node<T>& self) {
      T* g = self.parents[0]->grad_buffer();
      for (int i = 0; i < m; ++i) {
        const std::size_t off = static_cast<std::size_t>(i) * n;
        T dot = T(0);
        for (int j = 0; j < n; ++j) dot += self.grad[off + j] * self.value[off + j];
        for (int j = 0; j < n; ++j) g[off + j] += self.value[off + j] * (self.grad[off + j] - dot);
      }
    };
  }
  return Var<T>(out);
}

template <typename T>
Var<T> gelu(const Var<T>& x) {
  auto out = make_node<T>(x.rows(), x.cols(), "gelu", {x.shared()});
  const T inv_sqrt2 = T(1) / std::sqrt(T(2));
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T v = x.value()[i];
    out->value[i] = T(0.5) * v * (T(1) + std::erf(v * inv_sqrt2));
  }
  if (out->requires_grad) {
    out->backward = [inv_sqrt2](Node<T>& self) {
      auto& px = *self.parents[0];
      T* g = px.grad_buffer();
      const T inv_sqrt_2pi = T(1) / std::sqrt(T(2) * std::numbers::pi_v<T>);
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        const T v = px.value[i];
        const T cdf = T(0.5) * (T(1) + std::erf(v * inv_sqrt2));
        const T pdf = inv_sqrt_2pi * std::exp(T(-0.5) * v * v);
        g[i] += self.grad[i] * (cdf + v * pdf);
      }
    };
  }
  return Var<T>(out);
}

template <typename T>
Var<T> l2_normalize_rows(const Var<T>& x) {
  const int m = x.rows(), n = x.cols();
  auto out = make_node<T>(m, n, "l2_normalize_rows", {x.shared()});
  std::vector<T> norms(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) {
    const T* xi = x.value().data() + static_cast<std::size_t>(i) * n;
    T ss = T(0);
    for (int j = 0; j < n; ++j) ss += xi[j] * xi[j];
    const T norm = std::max(std::sqrt(ss), static_cast<T>(1e-12));
    norms[static_cast<std::size_t>(i)] = norm;
    for (int j = 0; j < n; ++j) out->value[static_cast<std::size_t>(i) * n + j] = xi[j] / norm;
  }
  if (out->requires_grad) {
    out->backward = [m, n, norms = std::move(norms)](Node<T>& self) {
      T* g = self.parents[0]->grad_buffer();
      for (int i = 0; i < m; ++i) {
        const std::size_t off = static_cast<std::size_t>(i) * n;
        T dot = T(0);
        for (int j = 0; j < n; ++j) dot += self.grad[off + j] * self.value[off + j];
        const T inv = T(1) / norms[static_cast<std::size_t>(i)];
        for (int j = 0; j < n; ++j) g[off + j] += inv * (self.grad[off + j] - self.value[off + j] * dot);
      }
    };
  }
  return Var<T>(out);
}

template <typename T>
Var<T> cross_entropy_rows(const Var<T>& probs, std::span<const T> targets) {
  if (targets.size() != probs.size()) {
    throw ShapeError("cross_entropy_rows: target count " + std::to_string(targets.size()) +
                     " does not match " + probs.shape_string());
  }
  const int m = probs.rows();
  const T floor = static_cast<T>(1e-12);
  auto out = make_node<T>(1, 1, "cross_entropy_rows", {probs.shared()});
  T total = T(0);
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (targets[i] == T(0)) continue;
    total -= targets[i] * std::log(std::max(probs.value()[i], floor));
  }
  out->value[0] = m > 0 ? total / m : T(0);
  if (out->requires_grad && m > 0) {
    std::vector<T> tgt(targets.begin(), targets.end());
    out->backward = [m, floor, tgt = std::move(tgt)](Node<T>& self) {
      auto& pp = *self.parents[0];
      T* g = pp.grad_buffer();
      const T upstream = self.grad[0] / m;
      for (std::size_t i = 0; i < tgt.size(); ++i) {
        if (tgt[i] == T(0) || pp.value[i] <= floor) continue;
        g[i] -= upstream * tgt[i] / pp.value[i];
      }
    };
  }
  return Var<T>(out);
}

namespace {

// Fills `logits` with z.q_j / temperature and returns the per-row loss, also
// leaving softmax(logits) in `logits` and the positive count in `positives`.
template <typename T>
T contrastive_row(const T* z, int dim, std::span<const T> queue,
                  std::span<const std::int32_t> queue_labels, std::int32_t anchor, T temperature,
                  std::vector<T>& logits, std::size_t& positives) {
  const std::size_t n = queue_labels.size();
  logits.resize(n);
  positives = 0;
  for (std::size_t j = 0; j < n; ++j) {
    if (queue_labels[j] == anchor) ++positives;
  }
  if (positives == 0 || n == 0) return T(0);
  T mx = -std::numeric_limits<T>::infinity();
  for (std::size_t j = 0; j < n; ++j) {
    const T* q = queue.data() + j * static_cast<std::size_t>(dim);
    T s = T(0);
    for (int d = 0; d < dim; ++d) s += z[d] * q[d];
    logits[j] = s / temperature;
    mx = std::max(mx, logits[j]);
  }
  T sum = T(0);
  for (std::size_t j = 0; j < n; ++j) sum += std::exp(logits[j] - mx);
  const T log_z = mx + std::log(sum);
  T pos = T(0);
  for (std::size_t j = 0; j < n; ++j) {
    if (queue_labels[j] == anchor) pos += logits[j] - log_z;
    logits[j] = std::exp(logits[j] - log_z);
  }
  return -pos / static_cast<T>(positives);
}

}  // namespace

template <typename T>
T contrastive_value(std::span<const T> z, std::span<const T> queue,
                    std::span<const std::int32_t> queue_labels, std::int32_t anchor,
                    T temperature) {
  const int dim = static_cast<int>(z.size());
  if (queue.size() != queue_labels.size() * z.size()) {
    throw ShapeError("contrastive_value: queue size does not match labels x dim");
  }
  std::vector<T> scratch;
  std::size_t positives = 0;
  return contrastive_row(z.data(), dim, queue, queue_labels, anchor, temperature, scratch,
                         positives);
}

template <typename T>
Var<T> contrastive_rows(const Var<T>& z, std::span<const T> queue,
                        std::span<const std::int32_t> queue_labels,
                        std::span<const std::int32_t> anchors, T temperature) {
  const int m = z.rows(), dim = z.cols();
  if (queue.size() != queue_labels.size() * static_cast<std::size_t>(dim)) {
    throw ShapeError("contrastive_rows: queue holds " + std::to_string(queue.size()) +
                     " values, expected labels x " + std::to_string(dim));
  }
  if (anchors.size() != static_cast<std::size_t>(m)) {
    throw ShapeError("contrastive_rows: " + std::to_string(anchors.size()) + " anchors for " +
                     z.shape_string());
  }
  auto out = make_node<T>(1, 1, "contrastive_rows", {z.shared()});
  const std::size_t n = queue_labels.size();
  // d loss_i / d z_i, kept for backward
  std::vector<T> dz(z.size(), T(0));
  std::vector<T> probs;
  T total = T(0);
  for (int i = 0; i < m; ++i) {
    std::size_t positives = 0;
    const T* zi = z.value().data() + static_cast<std::size_t>(i) * dim;
    total += contrastive_row(zi, dim, queue, queue_labels, anchors[static_cast<std::size_t>(i)],
                             temperature, probs, positives);
    if (positives == 0) continue;
    T* gi = dz.data() + static_cast<std::size_t>(i) * dim;
    const T inv_pos = T(1) / static_cast<T>(positives);
    for (std::size_t j = 0; j < n; ++j) {
      const T coeff = (probs[j] - (queue_labels[j] == anchors[static_cast<std::size_t>(i)]
                                       ? inv_pos
                                       : T(0))) /
                      temperature;
      if (coeff == T(0)) continue;
      const T* q = queue.data() + j * static_cast<std::size_t>(dim);
      for (int d = 0; d < dim; ++d) gi[d] += coeff * q[d];
    }
  }
  out->value[0] = m > 0 ? total / m : T(0);
  if (out->requires_grad && m > 0) {
    out->backward = [m, dz = std::move(dz)](Node<T>& self) {
      T* g = self.parents[0]->grad_buffer();
      const T upstream = self.grad[0] / m;
      for (std::size_t i = 0; i < dz.size(); ++i) g[i] += upstream * dz[i];
    };
  }
  return Var<T>(out);
}

#define TRAVGRID_INSTANTIATE_OPS(T)                                                          \
  template void backward<T>(const Var<T>&);                                                  \
  template Var<T> matmul<T>(const Var<T>&, const Var<T>&);                                   \
  template Var<T> add<T>(const Var<T>&, const Var<T>&);                                      \
  template Var<T> scale<T>(const Var<T>&, T);                                                \
  template Var<T> transpose<T>(const Var<T>&);                                               \
  template Var<T> concat_cols<T>(const std::vector<Var<T>>&);                                \
  template Var<T> slice_cols<T>(const Var<T>&, int, int);                                    \
  template Var<T> layer_norm<T>(const Var<T>&, const Var<T>&, const Var<T>&, T);             \
  template Var<T> softmax_rows<T>(const Var<T>&);                                            \
  template Var<T> gelu<T>(const Var<T>&);                                                    \
  template Var<T> l2_normalize_rows<T>(const Var<T>&);                                       \
  template Var<T> cross_entropy_rows<T>(const Var<T>&, std::span<const T>);                  \
  template Var<T> contrastive_rows<T>(const Var<T>&, std::span<const T>,                     \
                                      std::span<const std::int32_t>,                         \
                                      std::span<const std::int32_t>, T);                     \
  template T contrastive_value<T>(std::span<const T>, std::span<const T>,                    \
                                  std::span<const std::int32_t>, std::int32_t, T);

TRAVGRID_INSTANTIATE_OPS(float)
TRAVGRID_INSTANTIATE_OPS(double)

#undef TRAVGRID_INSTANTIATE_OPS

}  // namespace travgrid::nn
