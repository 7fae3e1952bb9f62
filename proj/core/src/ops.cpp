// SPDX-License-Identifier: Apache-2.0
#include "pmae/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numbers>

#include "pmae/error.hpp"

namespace pmae {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;

template <typename T>
using Backward = std::function<void(detail::Node<T>&)>;

template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> values, std::initializer_list<const Tensor<T>*> inputs,
                      Backward<T> backward) {
  auto node = std::make_shared<detail::Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  const bool tracked = std::any_of(inputs.begin(), inputs.end(), [](const Tensor<T>* t) { return t->requires_grad(); });
  if (tracked) {
    node->requires_grad = true;
    for (const auto* in : inputs) node->inputs.push_back(in->node_ptr());
    node->backward = std::move(backward);
  }
  return Tensor<T>::from_node(std::move(node));
}

template <typename T>
void require_defined(const Tensor<T>& t, const char* what) {
  if (!t.defined()) throw ShapeError(std::string(what) + ": undefined tensor");
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
  require_defined(a, what);
  require_defined(b, what);
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

template <typename T>
void require_rank(const Tensor<T>& a, std::size_t rank, const char* what) {
  require_defined(a, what);
  if (a.rank() != rank) {
    throw ShapeError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " + shape_str(a.shape()));
  }
}

template <typename T>
std::size_t last_extent(const Tensor<T>& t) {
  return t.shape().back();
}

}  // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: inner extents differ, " + shape_str(a.shape()) + " . " + shape_str(b.shape()));
  }
  std::vector<T> out(m * n);
  MatMap<T>(out.data(), m, n).noalias() = ConstMatMap<T>(a.values().data(), m, k) * ConstMatMap<T>(b.values().data(), k, n);
  return make_result<T>({m, n}, std::move(out), {&a, &b}, [m, k, n](detail::Node<T>& self) {
    ConstMatMap<T> dc(self.grad.data(), m, n);
    auto& na = *self.inputs[0];
    auto& nb = *self.inputs[1];
    if (na.requires_grad) {
      MatMap<T>(na.grad_buffer().data(), m, k).noalias() += dc * ConstMatMap<T>(nb.value.data(), k, n).transpose();
    }
    if (nb.requires_grad) {
      MatMap<T>(nb.grad_buffer().data(), k, n).noalias() += ConstMatMap<T>(na.value.data(), m, k).transpose() * dc;
    }
  });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  require_rank(a, 2, "transpose");
  const auto m = a.dim(0), n = a.dim(1);
  std::vector<T> out(m * n);
  MatMap<T>(out.data(), n, m) = ConstMatMap<T>(a.values().data(), m, n).transpose();
  return make_result<T>({n, m}, std::move(out), {&a}, [m, n](detail::Node<T>& self) {
    MatMap<T>(self.inputs[0]->grad_buffer().data(), m, n) += ConstMatMap<T>(self.grad.data(), n, m).transpose();
  });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  require_defined(a, "reshape");
  if (shape_numel(shape) != a.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  std::vector<T> out(a.values().begin(), a.values().end());
  return make_result<T>(std::move(shape), std::move(out), {&a}, [](detail::Node<T>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add");
  std::vector<T> out(a.numel());
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return make_result<T>(a.shape(), std::move(out), {&a, &b}, [](detail::Node<T>& self) {
    for (auto& in : self.inputs) {
      if (!in->requires_grad) continue;
      auto& g = in->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "sub");
  std::vector<T> out(a.numel());
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return make_result<T>(a.shape(), std::move(out), {&a, &b}, [](detail::Node<T>& self) {
    if (self.inputs[0]->requires_grad) {
      auto& g = self.inputs[0]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (self.inputs[1]->requires_grad) {
      auto& g = self.inputs[1]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "mul");
  std::vector<T> out(a.numel());
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return make_result<T>(a.shape(), std::move(out), {&a, &b}, [](detail::Node<T>& self) {
    auto& na = *self.inputs[0];
    auto& nb = *self.inputs[1];
    if (na.requires_grad) {
      auto& g = na.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * nb.value[i];
    }
    if (nb.requires_grad) {
      auto& g = nb.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * na.value[i];
    }
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  require_defined(a, "scale");
  std::vector<T> out(a.values().begin(), a.values().end());
  for (auto& v : out) v *= factor;
  return make_result<T>(a.shape(), std::move(out), {&a}, [factor](detail::Node<T>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * factor;
  });
}

template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias) {
  require_defined(x, "add_bias");
  require_defined(bias, "add_bias");
  const auto n = last_extent(x);
  if (bias.numel() != n) {
    throw ShapeError("add_bias: bias " + shape_str(bias.shape()) + " does not match rows of " + shape_str(x.shape()));
  }
  const auto rows = x.numel() / n;
  std::vector<T> out(x.values().begin(), x.values().end());
  auto bv = bias.values();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] += bv[j];
  }
  return make_result<T>(x.shape(), std::move(out), {&x, &bias}, [rows, n](detail::Node<T>& self) {
    if (self.inputs[0]->requires_grad) {
      auto& g = self.inputs[0]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (self.inputs[1]->requires_grad) {
      auto& g = self.inputs[1]->grad_buffer();
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < n; ++j) g[j] += self.grad[r * n + j];
      }
    }
  });
}

template <typename T>
Tensor<T> add_tiled(const Tensor<T>& x, const Tensor<T>& table) {
  require_rank(x, 2, "add_tiled");
  require_rank(table, 2, "add_tiled");
  if (x.dim(1) != table.dim(1) || x.dim(0) % table.dim(0) != 0) {
    throw ShapeError("add_tiled: table " + shape_str(table.shape()) + " does not tile " + shape_str(x.shape()));
  }
  const auto period = table.numel();
  std::vector<T> out(x.values().begin(), x.values().end());
  auto tv = table.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += tv[i % period];
  return make_result<T>(x.shape(), std::move(out), {&x, &table}, [period](detail::Node<T>& self) {
    if (self.inputs[0]->requires_grad) {
      auto& g = self.inputs[0]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (self.inputs[1]->requires_grad) {
      auto& g = self.inputs[1]->grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i % period] += self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  require_defined(x, "gelu");
  const T inv_sqrt2 = T(1) / std::numbers::sqrt2_v<T>;
  std::vector<T> out(x.numel());
  auto xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = xv[i] * T(0.5) * (T(1) + std::erf(xv[i] * inv_sqrt2));
  }
  return make_result<T>(x.shape(), std::move(out), {&x}, [inv_sqrt2](detail::Node<T>& self) {
    auto& in = *self.inputs[0];
    auto& g = in.grad_buffer();
    const T inv_sqrt_2pi = std::numbers::inv_sqrtpi_v<T> * inv_sqrt2;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T v = in.value[i];
      const T cdf = T(0.5) * (T(1) + std::erf(v * inv_sqrt2));
      const T pdf = inv_sqrt_2pi * std::exp(T(-0.5) * v * v);
      g[i] += self.grad[i] * (cdf + v * pdf);
    }
  });
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
  require_defined(x, "softmax");
  if (axis >= x.rank()) {
    throw ShapeError("softmax: axis " + std::to_string(axis) + " invalid for " + shape_str(x.shape()));
  }
  const auto& shape = x.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
  const auto len = shape[axis];
  std::vector<T> out(x.numel());
  auto xv = x.values();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      T peak = xv[base];
      for (std::size_t j = 1; j < len; ++j) peak = std::max(peak, xv[base + j * inner]);
      T total = 0;
      for (std::size_t j = 0; j < len; ++j) {
        const T e = std::exp(xv[base + j * inner] - peak);
        out[base + j * inner] = e;
        total += e;
      }
      for (std::size_t j = 0; j < len; ++j) out[base + j * inner] /= total;
    }
  }
  return make_result<T>(shape, std::move(out), {&x}, [outer, inner, len](detail::Node<T>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    const auto& y = self.value;
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = o * len * inner + in;
        T dot = 0;
        for (std::size_t j = 0; j < len; ++j) dot += self.grad[base + j * inner] * y[base + j * inner];
        for (std::size_t j = 0; j < len; ++j) {
          const auto idx = base + j * inner;
          g[idx] += y[idx] * (self.grad[idx] - dot);
        }
      }
    }
  });
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps) {
  require_defined(x, "layer_norm");
  const auto n = last_extent(x);
  if (gain.numel() != n || bias.numel() != n) {
    throw ShapeError("layer_norm: gain/bias must have " + std::to_string(n) + " entries");
  }
  if (!(eps > T(0))) throw ShapeError("layer_norm: eps must be positive");
  const auto rows = x.numel() / n;
  std::vector<T> out(x.numel());
  std::vector<T> normed(x.numel());
  std::vector<T> inv_std(rows);
  auto xv = x.values();
  auto gv = gain.values();
  auto bv = bias.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xv.data() + r * n;
    T mu = 0;
    for (std::size_t j = 0; j < n; ++j) mu += row[j];
    mu /= T(n);
    T var = 0;
    for (std::size_t j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= T(n);
    const T inv = T(1) / std::sqrt(var + eps);
    inv_std[r] = inv;
    for (std::size_t j = 0; j < n; ++j) {
      const T h = (row[j] - mu) * inv;
      normed[r * n + j] = h;
      out[r * n + j] = h * gv[j] + bv[j];
    }
  }
  return make_result<T>(x.shape(), std::move(out), {&x, &gain, &bias},
                        [rows, n, normed = std::move(normed), inv_std = std::move(inv_std)](detail::Node<T>& self) {
                          auto& nx = *self.inputs[0];
                          auto& ng = *self.inputs[1];
                          auto& nb = *self.inputs[2];
                          if (ng.requires_grad) {
                            auto& g = ng.grad_buffer();
                            for (std::size_t r = 0; r < rows; ++r)
                              for (std::size_t j = 0; j < n; ++j) g[j] += self.grad[r * n + j] * normed[r * n + j];
                          }
                          if (nb.requires_grad) {
                            auto& g = nb.grad_buffer();
                            for (std::size_t r = 0; r < rows; ++r)
                              for (std::size_t j = 0; j < n; ++j) g[j] += self.grad[r * n + j];
                          }
                          if (nx.requires_grad) {
                            auto& g = nx.grad_buffer();
                            std::vector<T> dh(n);
                            for (std::size_t r = 0; r < rows; ++r) {
                              T mean_dh = 0, mean_dh_h = 0;
                              for (std::size_t j = 0; j < n; ++j) {
                                dh[j] = self.grad[r * n + j] * ng.value[j];
                                mean_dh += dh[j];
                                mean_dh_h += dh[j] * normed[r * n + j];
                              }
                              mean_dh /= T(n);
                              mean_dh_h /= T(n);
                              for (std::size_t j = 0; j < n; ++j) {
                                g[r * n + j] += inv_std[r] * (dh[j] - mean_dh - normed[r * n + j] * mean_dh_h);
                              }
                            }
                          }
                        });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  require_defined(x, "sum");
  T total = 0;
  for (auto v : x.values()) total += v;
  return make_result<T>({1}, {total}, {&x}, [](detail::Node<T>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (auto& v : g) v += self.grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  require_defined(x, "mean");
  T total = 0;
  for (auto v : x.values()) total += v;
  const T count = T(x.numel());
  return make_result<T>({1}, {total / count}, {&x}, [count](detail::Node<T>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (auto& v : g) v += self.grad[0] / count;
  });
}

namespace {

template <typename T>
Tensor<T> gather_rows_impl(const Tensor<T>& x, std::span<const std::ptrdiff_t> rows, const Tensor<T>* fill) {
  require_rank(x, 2, "gather_rows");
  const auto n = x.dim(1);
  const auto available = static_cast<std::ptrdiff_t>(x.dim(0));
  if (fill) {
    require_defined(*fill, "gather_rows");
    if (fill->numel() != n) {
      throw ShapeError("gather_rows: fill row " + shape_str(fill->shape()) + " does not match width " + std::to_string(n));
    }
  }
  if (rows.empty()) throw ShapeError("gather_rows: empty index list");
  std::vector<std::ptrdiff_t> index(rows.begin(), rows.end());
  std::vector<T> out(index.size() * n);
  auto xv = x.values();
  for (std::size_t r = 0; r < index.size(); ++r) {
    const auto src = index[r];
    if (src == -1) {
      if (!fill) throw ShapeError("gather_rows: index -1 without a fill row");
      std::copy_n(fill->values().begin(), n, out.begin() + r * n);
    } else if (src < 0 || src >= available) {
      throw ShapeError("gather_rows: row " + std::to_string(src) + " out of range for " + shape_str(x.shape()));
    } else {
      std::copy_n(xv.begin() + src * n, n, out.begin() + r * n);
    }
  }
  Shape shape{index.size(), n};
  auto backward = [n, index = std::move(index)](detail::Node<T>& self) {
    auto& nx = *self.inputs[0];
    detail::Node<T>* nf = self.inputs.size() > 1 ? self.inputs[1].get() : nullptr;
    T* gx = nx.requires_grad ? nx.grad_buffer().data() : nullptr;
    T* gf = (nf && nf->requires_grad) ? nf->grad_buffer().data() : nullptr;
    for (std::size_t r = 0; r < index.size(); ++r) {
      T* dst = index[r] == -1 ? gf : (gx ? gx + index[r] * n : nullptr);
      if (!dst) continue;
      for (std::size_t j = 0; j < n; ++j) dst[j] += self.grad[r * n + j];
    }
  };
  if (fill) return make_result<T>(std::move(shape), std::move(out), {&x, fill}, std::move(backward));
  return make_result<T>(std::move(shape), std::move(out), {&x}, std::move(backward));
}

}  // namespace

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, std::span<const std::ptrdiff_t> rows) {
  return gather_rows_impl(x, rows, static_cast<const Tensor<T>*>(nullptr));
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, std::span<const std::ptrdiff_t> rows, const Tensor<T>& fill) {
  return gather_rows_impl(x, rows, &fill);
}

template <typename T>
Tensor<T> multi_head_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, std::size_t batch,
                               std::size_t heads) {
  require_rank(q, 2, "attention");
  require_same_shape(q, k, "attention");
  require_same_shape(q, v, "attention");
  const auto rows = q.dim(0), dim = q.dim(1);
  if (batch == 0 || rows % batch != 0) {
    throw ShapeError("attention: " + std::to_string(rows) + " rows do not split into " + std::to_string(batch) + " sequences");
  }
  if (heads == 0 || dim % heads != 0) {
    throw ShapeError("attention: " + std::to_string(heads) + " heads do not divide width " + std::to_string(dim));
  }
  const auto tokens = rows / batch;
  const auto head_dim = dim / heads;
  const T scale_factor = T(1) / std::sqrt(T(head_dim));

  ConstMatMap<T> qm(q.values().data(), rows, dim);
  ConstMatMap<T> km(k.values().data(), rows, dim);
  ConstMatMap<T> vm(v.values().data(), rows, dim);
  std::vector<T> out(rows * dim);
  MatMap<T> om(out.data(), rows, dim);
  // Attention weights for every (sequence, head), kept for the adjoint.
  std::vector<T> probs(batch * heads * tokens * tokens);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      MatMap<T> p(probs.data() + (b * heads + h) * tokens * tokens, tokens, tokens);
      p.noalias() = qm.block(b * tokens, h * head_dim, tokens, head_dim) *
                    km.block(b * tokens, h * head_dim, tokens, head_dim).transpose();
      p *= scale_factor;
      for (std::size_t i = 0; i < tokens; ++i) {
        auto row = p.row(i);
        const T peak = row.maxCoeff();
        row = (row.array() - peak).exp();
        row /= row.sum();
      }
      om.block(b * tokens, h * head_dim, tokens, head_dim).noalias() = p * vm.block(b * tokens, h * head_dim, tokens, head_dim);
    }
  }
  return make_result<T>(
      {rows, dim}, std::move(out), {&q, &k, &v},
      [=, probs = std::move(probs)](detail::Node<T>& self) {
        auto& nq = *self.inputs[0];
        auto& nk = *self.inputs[1];
        auto& nv = *self.inputs[2];
        ConstMatMap<T> qv(nq.value.data(), rows, dim);
        ConstMatMap<T> kv(nk.value.data(), rows, dim);
        ConstMatMap<T> vv(nv.value.data(), rows, dim);
        ConstMatMap<T> dout(self.grad.data(), rows, dim);
        T* gq = nq.requires_grad ? nq.grad_buffer().data() : nullptr;
        T* gk = nk.requires_grad ? nk.grad_buffer().data() : nullptr;
        T* gv = nv.requires_grad ? nv.grad_buffer().data() : nullptr;
        RowMat<T> dp(tokens, tokens);
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t h = 0; h < heads; ++h) {
            ConstMatMap<T> p(probs.data() + (b * heads + h) * tokens * tokens, tokens, tokens);
            auto d_o = dout.block(b * tokens, h * head_dim, tokens, head_dim);
            if (gv) {
              MatMap<T>(gv, rows, dim).block(b * tokens, h * head_dim, tokens, head_dim).noalias() += p.transpose() * d_o;
            }
            if (!gq && !gk) continue;
            dp.noalias() = d_o * vv.block(b * tokens, h * head_dim, tokens, head_dim).transpose();
            // softmax adjoint, row by row
            for (std::size_t i = 0; i < tokens; ++i) {
              const T dot = dp.row(i).dot(p.row(i));
              dp.row(i) = (p.row(i).array() * (dp.row(i).array() - dot)).matrix();
            }
            dp *= scale_factor;
            if (gq) {
              MatMap<T>(gq, rows, dim).block(b * tokens, h * head_dim, tokens, head_dim).noalias() +=
                  dp * kv.block(b * tokens, h * head_dim, tokens, head_dim);
            }
            if (gk) {
              MatMap<T>(gk, rows, dim).block(b * tokens, h * head_dim, tokens, head_dim).noalias() +=
                  dp.transpose() * qv.block(b * tokens, h * head_dim, tokens, head_dim);
            }
          }
        }
      });
}

template <typename T>
Tensor<T> scale_groups(const Tensor<T>& x, std::span<const T> factors) {
  require_defined(x, "scale_groups");
  if (factors.empty() || x.numel() % factors.size() != 0) {
    throw ShapeError("scale_groups: " + std::to_string(factors.size()) + " groups do not divide " + shape_str(x.shape()));
  }
  const auto group = x.numel() / factors.size();
  std::vector<T> f(factors.begin(), factors.end());
  std::vector<T> out(x.values().begin(), x.values().end());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= f[i / group];
  return make_result<T>(x.shape(), std::move(out), {&x}, [group, f = std::move(f)](detail::Node<T>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * f[i / group];
  });
}

template <typename T>
Tensor<T> masked_row_mse(const Tensor<T>& prediction, const Tensor<T>& target, std::span<const std::uint8_t> selected_rows) {
  require_rank(prediction, 2, "masked_row_mse");
  require_same_shape(prediction, target, "masked_row_mse");
  const auto rows = prediction.dim(0), width = prediction.dim(1);
  if (selected_rows.size() != rows) {
    throw ShapeError("masked_row_mse: selection has " + std::to_string(selected_rows.size()) + " entries for " +
                     std::to_string(rows) + " rows");
  }
  std::vector<std::size_t> chosen;
  for (std::size_t r = 0; r < rows; ++r) {
    if (selected_rows[r]) chosen.push_back(r);
  }
  if (chosen.empty()) throw ShapeError("masked_row_mse: no selected rows, loss undefined");
  auto pv = prediction.values();
  auto tv = target.values();
  T total = 0;
  for (auto r : chosen) {
    T row_sum = 0;
    for (std::size_t j = 0; j < width; ++j) {
      const T d = pv[r * width + j] - tv[r * width + j];
      row_sum += d * d;
    }
    total += row_sum / T(width);
  }
  const T denom = T(chosen.size());
  std::vector<T> target_copy(tv.begin(), tv.end());
  return make_result<T>({1}, {total / denom}, {&prediction},
                        [width, denom, chosen = std::move(chosen), target_values = std::move(target_copy)](
                            detail::Node<T>& self) {
                          auto& np = *self.inputs[0];
                          auto& g = np.grad_buffer();
                          const T coeff = T(2) * self.grad[0] / (denom * T(width));
                          for (auto r : chosen) {
                            for (std::size_t j = 0; j < width; ++j) {
                              const auto idx = r * width + j;
                              g[idx] += coeff * (np.value[idx] - target_values[idx]);
                            }
                          }
                        });
}

template <typename T>
Tensor<T> smoothed_cross_entropy(const Tensor<T>& logits, std::span<const std::size_t> labels, T epsilon) {
  require_rank(logits, 2, "cross_entropy");
  const auto batch = logits.dim(0), classes = logits.dim(1);
  if (labels.size() != batch) {
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for " + std::to_string(batch) + " rows");
  }
  if (!(epsilon >= T(0) && epsilon < T(1))) throw ConfigError("label_smoothing", "must lie in [0, 1)");
  std::vector<std::size_t> y(labels.begin(), labels.end());
  for (auto label : y) {
    if (label >= classes) {
      throw DataError("cross_entropy: label " + std::to_string(label) + " out of range for " + std::to_string(classes) +
                      " classes");
    }
  }
  auto lv = logits.values();
  std::vector<T> probs(lv.size());
  const T off = epsilon / T(classes);
  const T on = T(1) - epsilon + off;
  T total = 0;
  for (std::size_t b = 0; b < batch; ++b) {
    const T* row = lv.data() + b * classes;
    const T peak = *std::max_element(row, row + classes);
    T z = 0;
    for (std::size_t c = 0; c < classes; ++c) z += std::exp(row[c] - peak);
    const T log_z = std::log(z) + peak;
    T loss = 0;
    for (std::size_t c = 0; c < classes; ++c) {
      const T log_p = row[c] - log_z;
      probs[b * classes + c] = std::exp(log_p);
      loss -= (c == y[b] ? on : off) * log_p;
    }
    total += loss;
  }
  return make_result<T>({1}, {total / T(batch)}, {&logits},
                        [batch, classes, on, off, y = std::move(y), probs = std::move(probs)](detail::Node<T>& self) {
                          auto& g = self.inputs[0]->grad_buffer();
                          const T coeff = self.grad[0] / T(batch);
                          for (std::size_t b = 0; b < batch; ++b) {
                            for (std::size_t c = 0; c < classes; ++c) {
                              const T target = c == y[b] ? on : off;
                              g[b * classes + c] += coeff * (probs[b * classes + c] - target);
                            }
                          }
                        });
}

#define PMAE_INSTANTIATE_OPS(T)                                                                                      \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                                    \
  template Tensor<T> transpose(const Tensor<T>&);                                                                    \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                                               \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                                       \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                                       \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                                       \
  template Tensor<T> scale(const Tensor<T>&, T);                                                                     \
  template Tensor<T> add_bias(const Tensor<T>&, const Tensor<T>&);                                                  \
  template Tensor<T> add_tiled(const Tensor<T>&, const Tensor<T>&);                                                 \
  template Tensor<T> gelu(const Tensor<T>&);                                                                         \
  template Tensor<T> softmax(const Tensor<T>&, std::size_t);                                                         \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);                            \
  template Tensor<T> sum(const Tensor<T>&);                                                                          \
  template Tensor<T> mean(const Tensor<T>&);                                                                         \
  template Tensor<T> gather_rows(const Tensor<T>&, std::span<const std::ptrdiff_t>);                                 \
  template Tensor<T> gather_rows(const Tensor<T>&, std::span<const std::ptrdiff_t>, const Tensor<T>&);               \
  template Tensor<T> multi_head_attention(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t,        \
                                          std::size_t);                                                              \
  template Tensor<T> scale_groups(const Tensor<T>&, std::span<const T>);                                             \
  template Tensor<T> masked_row_mse(const Tensor<T>&, const Tensor<T>&, std::span<const std::uint8_t>);              \
  template Tensor<T> smoothed_cross_entropy(const Tensor<T>&, std::span<const std::size_t>, T);

PMAE_INSTANTIATE_OPS(float)
PMAE_INSTANTIATE_OPS(double)

#undef PMAE_INSTANTIATE_OPS

}  // namespace pmae
