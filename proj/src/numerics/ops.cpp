// Copyright 2026 The qdistill Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "qdistill/numerics/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <type_traits>

#include "qdistill/simd/kernels.hpp"
#include "qdistill/simd/scalar.hpp"

namespace qdistill {
namespace {

template <typename T>
using Node = detail::TensorNode<T>;

// Precision-specific routing: float goes through the runtime-selected SIMD
// table, double always uses the scalar reference.
template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a,
             const T* b, T* c, bool acc) {
  if constexpr (std::is_same_v<T, float>) {
    simd::active().gemm_nn(m, n, k, a, b, c, acc);
  } else {
    simd::scalar::gemm_nn<T>(m, n, k, a, b, c, acc);
  }
}

template <typename T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a,
             const T* b, T* c, bool acc) {
  if constexpr (std::is_same_v<T, float>) {
    simd::active().gemm_nt(m, n, k, a, b, c, acc);
  } else {
    simd::scalar::gemm_nt<T>(m, n, k, a, b, c, acc);
  }
}

template <typename T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a,
             const T* b, T* c, bool acc) {
  if constexpr (std::is_same_v<T, float>) {
    simd::active().gemm_tn(m, n, k, a, b, c, acc);
  } else {
    simd::scalar::gemm_tn<T>(m, n, k, a, b, c, acc);
  }
}

template <typename T>
bool tracking(std::initializer_list<const BasicTensor<T>*> inputs) {
  if (GradTape<T>::active() == nullptr) return false;
  for (const auto* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

template <typename T, typename Fn>
BasicTensor<T> emit(const char* op, Shape shape, std::vector<T> values,
                    bool track, Fn&& fn) {
  for (T v : values) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string(op) + " produced a non-finite value");
    }
  }
  BasicTensor<T> out(std::move(shape), std::move(values));
  if (track) {
    out.set_requires_grad(true);
    GradTape<T>::active()->record(out.node_ptr(), std::forward<Fn>(fn));
  }
  return out;
}

void require(bool ok, const std::string& what) {
  if (!ok) throw DimensionError(what);
}

template <typename T>
std::string shapes(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return shape_str(a.shape()) + " and " + shape_str(b.shape());
}

}  // namespace

template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(0),
          "matmul: incompatible shapes " + shapes(a, b));
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<T> out(m * n);
  gemm_nn<T>(m, n, k, a.values().data(), b.values().data(), out.data(), false);
  return emit("matmul", {m, n}, std::move(out), tracking({&a, &b}),
              [an = a.node_ptr(), bn = b.node_ptr(), m, n, k](const Node<T>& o) {
                if (an->requires_grad) {
                  gemm_nt<T>(m, k, n, o.grad.data(), bn->values.data(),
                             an->ensure_grad().data(), true);
                }
                if (bn->requires_grad) {
                  gemm_tn<T>(k, n, m, an->values.data(), o.grad.data(),
                             bn->ensure_grad().data(), true);
                }
              });
}

template <typename T>
BasicTensor<T> transpose(const BasicTensor<T>& a) {
  require(a.rank() == 2, "transpose: expected a matrix, got " +
                             shape_str(a.shape()));
  const std::size_t r = a.dim(0), c = a.dim(1);
  std::vector<T> out(r * c);
  const auto av = a.values();
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = av[i * c + j];
  }
  return emit("transpose", {c, r}, std::move(out), tracking({&a}),
              [an = a.node_ptr(), r, c](const Node<T>& o) {
                auto& ga = an->ensure_grad();
                for (std::size_t i = 0; i < r; ++i) {
                  for (std::size_t j = 0; j < c; ++j) {
                    ga[i * c + j] += o.grad[j * r + i];
                  }
                }
              });
}

template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& x, const BasicTensor<T>& w,
                      const BasicTensor<T>& bias) {
  require(x.rank() >= 1 && w.rank() == 2 && bias.rank() == 1 &&
              x.shape().back() == w.dim(0) && bias.dim(0) == w.dim(1),
          "linear: incompatible shapes " + shape_str(x.shape()) + ", " +
              shape_str(w.shape()) + ", " + shape_str(bias.shape()));
  const std::size_t in = w.dim(0), out_dim = w.dim(1);
  const std::size_t rows = x.numel() / in;
  std::vector<T> out(rows * out_dim);
  gemm_nn<T>(rows, out_dim, in, x.values().data(), w.values().data(),
             out.data(), false);
  const auto bv = bias.values();
  for (std::size_t r = 0; r < rows; ++r) {
    T* row = out.data() + r * out_dim;
    for (std::size_t j = 0; j < out_dim; ++j) row[j] += bv[j];
  }
  Shape shape = x.shape();
  shape.back() = out_dim;
  return emit("linear", std::move(shape), std::move(out),
              tracking({&x, &w, &bias}),
              [xn = x.node_ptr(), wn = w.node_ptr(), bn = bias.node_ptr(), rows,
               in, out_dim](const Node<T>& o) {
                if (xn->requires_grad) {
                  gemm_nt<T>(rows, in, out_dim, o.grad.data(),
                             wn->values.data(), xn->ensure_grad().data(), true);
                }
                if (wn->requires_grad) {
                  gemm_tn<T>(in, out_dim, rows, xn->values.data(),
                             o.grad.data(), wn->ensure_grad().data(), true);
                }
                if (bn->requires_grad) {
                  auto& gb = bn->ensure_grad();
                  for (std::size_t r = 0; r < rows; ++r) {
                    const T* g = o.grad.data() + r * out_dim;
                    for (std::size_t j = 0; j < out_dim; ++j) gb[j] += g[j];
                  }
                }
              });
}

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require(a.shape() == b.shape(), "add: shape mismatch " + shapes(a, b));
  std::vector<T> out(a.numel());
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return emit("add", a.shape(), std::move(out), tracking({&a, &b}),
              [an = a.node_ptr(), bn = b.node_ptr()](const Node<T>& o) {
                for (auto* n : {an.get(), bn.get()}) {
                  if (!n->requires_grad) continue;
                  auto& g = n->ensure_grad();
                  for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
                }
              });
}

template <typename T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require(a.shape() == b.shape(), "sub: shape mismatch " + shapes(a, b));
  std::vector<T> out(a.numel());
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return emit("sub", a.shape(), std::move(out), tracking({&a, &b}),
              [an = a.node_ptr(), bn = b.node_ptr()](const Node<T>& o) {
                if (an->requires_grad) {
                  auto& g = an->ensure_grad();
                  for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
                }
                if (bn->requires_grad) {
                  auto& g = bn->ensure_grad();
                  for (std::size_t i = 0; i < g.size(); ++i) g[i] -= o.grad[i];
                }
              });
}

template <typename T>
BasicTensor<T> add_bias(const BasicTensor<T>& x, const BasicTensor<T>& bias) {
  require(x.rank() >= 1 && bias.rank() == 1 && x.shape().back() == bias.dim(0),
          "add_bias: incompatible shapes " + shapes(x, bias));
  const std::size_t n = bias.dim(0);
  const std::size_t rows = x.numel() / n;
  std::vector<T> out(x.values().begin(), x.values().end());
  const auto bv = bias.values();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] += bv[j];
  }
  return emit("add_bias", x.shape(), std::move(out), tracking({&x, &bias}),
              [xn = x.node_ptr(), bn = bias.node_ptr(), rows, n](const Node<T>& o) {
                if (xn->requires_grad) {
                  auto& g = xn->ensure_grad();
                  for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
                }
                if (bn->requires_grad) {
                  auto& g = bn->ensure_grad();
                  for (std::size_t r = 0; r < rows; ++r) {
                    for (std::size_t j = 0; j < n; ++j) g[j] += o.grad[r * n + j];
                  }
                }
              });
}

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& x, T factor) {
  std::vector<T> out(x.values().begin(), x.values().end());
  for (T& v : out) v *= factor;
  return emit("scale", x.shape(), std::move(out), tracking({&x}),
              [xn = x.node_ptr(), factor](const Node<T>& o) {
                auto& g = xn->ensure_grad();
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * o.grad[i];
              });
}

template <typename T>
BasicTensor<T> square(const BasicTensor<T>& x) {
  std::vector<T> out(x.values().begin(), x.values().end());
  for (T& v : out) v *= v;
  return emit("square", x.shape(), std::move(out), tracking({&x}),
              [xn = x.node_ptr()](const Node<T>& o) {
                auto& g = xn->ensure_grad();
                for (std::size_t i = 0; i < g.size(); ++i) {
                  g[i] += T(2) * xn->values[i] * o.grad[i];
                }
              });
}

template <typename T>
BasicTensor<T> softmax(const BasicTensor<T>& x, std::size_t axis) {
  if (axis >= x.rank()) {
    throw ContractError("softmax: axis " + std::to_string(axis) +
                        " out of bounds for shape " + shape_str(x.shape()));
  }
  const Shape& s = x.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t len = s[axis];
  const auto xv = x.values();
  std::vector<T> out(x.numel());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t j = 0; j < len; ++j) mx = std::max(mx, xv[base + j * inner]);
      T total = T(0);
      for (std::size_t j = 0; j < len; ++j) {
        const T e = std::exp(xv[base + j * inner] - mx);
        out[base + j * inner] = e;
        total += e;
      }
      for (std::size_t j = 0; j < len; ++j) out[base + j * inner] /= total;
    }
  }
  const bool track = tracking({&x});
  auto y = track ? std::make_shared<std::vector<T>>(out)
                 : std::shared_ptr<std::vector<T>>();
  return emit("softmax", s, std::move(out), track,
              [xn = x.node_ptr(), y, outer, inner, len](const Node<T>& o) {
                auto& g = xn->ensure_grad();
                const auto& yv = *y;
                for (std::size_t ot = 0; ot < outer; ++ot) {
                  for (std::size_t in = 0; in < inner; ++in) {
                    const std::size_t base = ot * len * inner + in;
                    T d = T(0);
                    for (std::size_t j = 0; j < len; ++j) {
                      const std::size_t idx = base + j * inner;
                      d += o.grad[idx] * yv[idx];
                    }
                    for (std::size_t j = 0; j < len; ++j) {
                      const std::size_t idx = base + j * inner;
                      g[idx] += yv[idx] * (o.grad[idx] - d);
                    }
                  }
                }
              });
}

template <typename T>
BasicTensor<T> layer_norm(const BasicTensor<T>& x, const BasicTensor<T>& gamma,
                          const BasicTensor<T>& beta, T eps) {
  require(x.rank() >= 1 && gamma.rank() == 1 && beta.rank() == 1 &&
              gamma.dim(0) == x.shape().back() && beta.dim(0) == x.shape().back(),
          "layer_norm: gamma/beta must match the last dimension of " +
              shape_str(x.shape()));
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.numel() / n;
  const auto xv = x.values();
  const auto gv = gamma.values();
  const auto bv = beta.values();
  auto xhat = std::make_shared<std::vector<T>>(x.numel());
  auto rstd = std::make_shared<std::vector<T>>(rows);
  std::vector<T> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xv.data() + r * n;
    T mu = T(0);
    for (std::size_t j = 0; j < n; ++j) mu += row[j];
    mu /= static_cast<T>(n);
    T var = T(0);
    for (std::size_t j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<T>(n);
    const T rs = T(1) / std::sqrt(var + eps);
    (*rstd)[r] = rs;
    for (std::size_t j = 0; j < n; ++j) {
      const T h = (row[j] - mu) * rs;
      (*xhat)[r * n + j] = h;
      out[r * n + j] = gv[j] * h + bv[j];
    }
  }
  return emit("layer_norm", x.shape(), std::move(out),
              tracking({&x, &gamma, &beta}),
              [xn = x.node_ptr(), gn = gamma.node_ptr(), bn = beta.node_ptr(),
               xhat, rstd, rows, n](const Node<T>& o) {
                const auto& h = *xhat;
                if (gn->requires_grad) {
                  auto& gg = gn->ensure_grad();
                  for (std::size_t r = 0; r < rows; ++r) {
                    for (std::size_t j = 0; j < n; ++j) {
                      gg[j] += o.grad[r * n + j] * h[r * n + j];
                    }
                  }
                }
                if (bn->requires_grad) {
                  auto& gb = bn->ensure_grad();
                  for (std::size_t r = 0; r < rows; ++r) {
                    for (std::size_t j = 0; j < n; ++j) gb[j] += o.grad[r * n + j];
                  }
                }
                if (xn->requires_grad) {
                  auto& gx = xn->ensure_grad();
                  const auto& gam = gn->values;
                  std::vector<T> dh(n);
                  for (std::size_t r = 0; r < rows; ++r) {
                    T m1 = T(0), m2 = T(0);
                    for (std::size_t j = 0; j < n; ++j) {
                      dh[j] = o.grad[r * n + j] * gam[j];
                      m1 += dh[j];
                      m2 += dh[j] * h[r * n + j];
                    }
                    m1 /= static_cast<T>(n);
                    m2 /= static_cast<T>(n);
                    const T rs = (*rstd)[r];
                    for (std::size_t j = 0; j < n; ++j) {
                      gx[r * n + j] += rs * (dh[j] - m1 - h[r * n + j] * m2);
                    }
                  }
                }
              });
}

template <typename T>
BasicTensor<T> gelu(const BasicTensor<T>& x) {
  const T inv_sqrt2 = T(1) / std::numbers::sqrt2_v<T>;
  std::vector<T> out(x.values().begin(), x.values().end());
  for (T& v : out) v = T(0.5) * v * (T(1) + std::erf(v * inv_sqrt2));
  return emit("gelu", x.shape(), std::move(out), tracking({&x}),
              [xn = x.node_ptr(), inv_sqrt2](const Node<T>& o) {
                const T inv_sqrt_2pi = inv_sqrt2 * std::numbers::inv_sqrtpi_v<T>;
                auto& g = xn->ensure_grad();
                for (std::size_t i = 0; i < g.size(); ++i) {
                  const T v = xn->values[i];
                  const T cdf = T(0.5) * (T(1) + std::erf(v * inv_sqrt2));
                  const T pdf = inv_sqrt_2pi * std::exp(T(-0.5) * v * v);
                  g[i] += o.grad[i] * (cdf + v * pdf);
                }
              });
}

template <typename T>
BasicTensor<T> embedding(const BasicTensor<T>& table,
                         std::span<const std::int32_t> ids) {
  require(table.rank() == 2, "embedding: table must be a matrix, got " +
                                 shape_str(table.shape()));
  const std::size_t vocab = table.dim(0), d = table.dim(1);
  std::vector<T> out(ids.size() * d);
  const auto tv = table.values();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
      throw InputError("embedding: id " + std::to_string(ids[i]) +
                       " outside table of " + std::to_string(vocab) + " rows");
    }
    std::copy_n(tv.data() + static_cast<std::size_t>(ids[i]) * d, d,
                out.data() + i * d);
  }
  std::vector<std::int32_t> saved(ids.begin(), ids.end());
  return emit("embedding", {ids.size(), d}, std::move(out), tracking({&table}),
              [tn = table.node_ptr(), saved = std::move(saved), d](const Node<T>& o) {
                auto& g = tn->ensure_grad();
                for (std::size_t i = 0; i < saved.size(); ++i) {
                  T* row = g.data() + static_cast<std::size_t>(saved[i]) * d;
                  for (std::size_t j = 0; j < d; ++j) row[j] += o.grad[i * d + j];
                }
              });
}

template <typename T>
BasicTensor<T> reshape(const BasicTensor<T>& x, Shape shape) {
  require(shape_numel(shape) == x.numel(),
          "reshape: cannot view " + shape_str(x.shape()) + " as " +
              shape_str(shape));
  std::vector<T> out(x.values().begin(), x.values().end());
  return emit("reshape", std::move(shape), std::move(out), tracking({&x}),
              [xn = x.node_ptr()](const Node<T>& o) {
                auto& g = xn->ensure_grad();
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
              });
}

template <typename T>
BasicTensor<T> split_heads(const BasicTensor<T>& x, std::size_t heads) {
  require(x.rank() == 3 && heads > 0 && x.dim(2) % heads == 0,
          "split_heads: " + shape_str(x.shape()) + " not divisible into " +
              std::to_string(heads) + " heads");
  const std::size_t b = x.dim(0), l = x.dim(1), d = x.dim(2), dh = d / heads;
  const auto xv = x.values();
  std::vector<T> out(x.numel());
  for (std::size_t bi = 0; bi < b; ++bi) {
    for (std::size_t li = 0; li < l; ++li) {
      for (std::size_t h = 0; h < heads; ++h) {
        std::copy_n(xv.data() + (bi * l + li) * d + h * dh, dh,
                    out.data() + ((bi * heads + h) * l + li) * dh);
      }
    }
  }
  return emit("split_heads", {b * heads, l, dh}, std::move(out), tracking({&x}),
              [xn = x.node_ptr(), b, l, d, dh, heads](const Node<T>& o) {
                auto& g = xn->ensure_grad();
                for (std::size_t bi = 0; bi < b; ++bi) {
                  for (std::size_t li = 0; li < l; ++li) {
                    for (std::size_t h = 0; h < heads; ++h) {
                      const T* src = o.grad.data() + ((bi * heads + h) * l + li) * dh;
                      T* dst = g.data() + (bi * l + li) * d + h * dh;
                      for (std::size_t e = 0; e < dh; ++e) dst[e] += src[e];
                    }
                  }
                }
              });
}

template <typename T>
BasicTensor<T> merge_heads(const BasicTensor<T>& x, std::size_t heads) {
  require(x.rank() == 3 && heads > 0 && x.dim(0) % heads == 0,
          "merge_heads: " + shape_str(x.shape()) + " not divisible into " +
              std::to_string(heads) + " heads");
  const std::size_t b = x.dim(0) / heads, l = x.dim(1), dh = x.dim(2);
  const std::size_t d = dh * heads;
  const auto xv = x.values();
  std::vector<T> out(x.numel());
  for (std::size_t bi = 0; bi < b; ++bi) {
    for (std::size_t li = 0; li < l; ++li) {
      for (std::size_t h = 0; h < heads; ++h) {
        std::copy_n(xv.data() + ((bi * heads + h) * l + li) * dh, dh,
                    out.data() + (bi * l + li) * d + h * dh);
      }
    }
  }
  return emit("merge_heads", {b, l, d}, std::move(out), tracking({&x}),
              [xn = x.node_ptr(), b, l, d, dh, heads](const Node<T>& o) {
                auto& g = xn->ensure_grad();
                for (std::size_t bi = 0; bi < b; ++bi) {
                  for (std::size_t li = 0; li < l; ++li) {
                    for (std::size_t h = 0; h < heads; ++h) {
                      const T* src = o.grad.data() + (bi * l + li) * d + h * dh;
                      T* dst = g.data() + ((bi * heads + h) * l + li) * dh;
                      for (std::size_t e = 0; e < dh; ++e) dst[e] += src[e];
                    }
                  }
                }
              });
}

template <typename T>
BasicTensor<T> bmm(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require(a.rank() == 3 && b.rank() == 3 && a.dim(0) == b.dim(0) &&
              a.dim(2) == b.dim(1),
          "bmm: incompatible shapes " + shapes(a, b));
  const std::size_t groups = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
  std::vector<T> out(groups * m * n);
  for (std::size_t g = 0; g < groups; ++g) {
    gemm_nn<T>(m, n, k, a.values().data() + g * m * k,
               b.values().data() + g * k * n, out.data() + g * m * n, false);
  }
  return emit("bmm", {groups, m, n}, std::move(out), tracking({&a, &b}),
              [an = a.node_ptr(), bn = b.node_ptr(), groups, m, n, k](const Node<T>& o) {
                for (std::size_t g = 0; g < groups; ++g) {
                  const T* go = o.grad.data() + g * m * n;
                  if (an->requires_grad) {
                    gemm_nt<T>(m, k, n, go, bn->values.data() + g * k * n,
                               an->ensure_grad().data() + g * m * k, true);
                  }
                  if (bn->requires_grad) {
                    gemm_tn<T>(k, n, m, an->values.data() + g * m * k, go,
                               bn->ensure_grad().data() + g * k * n, true);
                  }
                }
              });
}

template <typename T>
BasicTensor<T> bmm_nt(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require(a.rank() == 3 && b.rank() == 3 && a.dim(0) == b.dim(0) &&
              a.dim(2) == b.dim(2),
          "bmm_nt: incompatible shapes " + shapes(a, b));
  const std::size_t groups = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(1);
  std::vector<T> out(groups * m * n);
  for (std::size_t g = 0; g < groups; ++g) {
    gemm_nt<T>(m, n, k, a.values().data() + g * m * k,
               b.values().data() + g * n * k, out.data() + g * m * n, false);
  }
  return emit("bmm_nt", {groups, m, n}, std::move(out), tracking({&a, &b}),
              [an = a.node_ptr(), bn = b.node_ptr(), groups, m, n, k](const Node<T>& o) {
                for (std::size_t g = 0; g < groups; ++g) {
                  const T* go = o.grad.data() + g * m * n;
                  if (an->requires_grad) {
                    gemm_nn<T>(m, k, n, go, bn->values.data() + g * n * k,
                               an->ensure_grad().data() + g * m * k, true);
                  }
                  if (bn->requires_grad) {
                    gemm_tn<T>(n, k, m, go, an->values.data() + g * m * k,
                               bn->ensure_grad().data() + g * n * k, true);
                  }
                }
              });
}

template <typename T>
BasicTensor<T> add_key_bias(const BasicTensor<T>& scores,
                            std::span<const T> key_bias, std::size_t heads) {
  require(scores.rank() == 3 && heads > 0 && scores.dim(0) % heads == 0 &&
              key_bias.size() == (scores.dim(0) / heads) * scores.dim(2),
          "add_key_bias: bias of " + std::to_string(key_bias.size()) +
              " values does not fit scores " + shape_str(scores.shape()));
  const std::size_t bh = scores.dim(0), lq = scores.dim(1), lk = scores.dim(2);
  std::vector<T> out(scores.values().begin(), scores.values().end());
  for (std::size_t g = 0; g < bh; ++g) {
    const T* bias = key_bias.data() + (g / heads) * lk;
    for (std::size_t q = 0; q < lq; ++q) {
      T* row = out.data() + (g * lq + q) * lk;
      for (std::size_t k = 0; k < lk; ++k) row[k] += bias[k];
    }
  }
  return emit("add_key_bias", scores.shape(), std::move(out),
              tracking({&scores}), [sn = scores.node_ptr()](const Node<T>& o) {
                auto& g = sn->ensure_grad();
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
              });
}

template <typename T>
BasicTensor<T> masked_mean(const BasicTensor<T>& x,
                           std::span<const std::uint8_t> mask) {
  require(x.rank() == 3 && mask.size() == x.dim(0) * x.dim(1),
          "masked_mean: mask of " + std::to_string(mask.size()) +
              " entries does not fit " + shape_str(x.shape()));
  const std::size_t b = x.dim(0), l = x.dim(1), d = x.dim(2);
  std::vector<T> counts(b, T(0));
  for (std::size_t bi = 0; bi < b; ++bi) {
    for (std::size_t li = 0; li < l; ++li) counts[bi] += mask[bi * l + li] ? T(1) : T(0);
    if (counts[bi] == T(0)) {
      throw ContractError("masked_mean: row " + std::to_string(bi) +
                          " has an all-zero mask");
    }
  }
  const auto xv = x.values();
  std::vector<T> out(b * d, T(0));
  for (std::size_t bi = 0; bi < b; ++bi) {
    T* dst = out.data() + bi * d;
    for (std::size_t li = 0; li < l; ++li) {
      if (!mask[bi * l + li]) continue;
      const T* src = xv.data() + (bi * l + li) * d;
      for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
    }
    for (std::size_t j = 0; j < d; ++j) dst[j] /= counts[bi];
  }
  std::vector<std::uint8_t> saved(mask.begin(), mask.end());
  return emit("masked_mean", {b, d}, std::move(out), tracking({&x}),
              [xn = x.node_ptr(), saved = std::move(saved), counts, b, l,
               d](const Node<T>& o) {
                auto& g = xn->ensure_grad();
                for (std::size_t bi = 0; bi < b; ++bi) {
                  for (std::size_t li = 0; li < l; ++li) {
                    if (!saved[bi * l + li]) continue;
                    T* dst = g.data() + (bi * l + li) * d;
                    for (std::size_t j = 0; j < d; ++j) {
                      dst[j] += o.grad[bi * d + j] / counts[bi];
                    }
                  }
                }
              });
}

template <typename T>
BasicTensor<T> select_position(const BasicTensor<T>& x, std::size_t position) {
  require(x.rank() == 3 && position < x.dim(1),
          "select_position: position " + std::to_string(position) +
              " invalid for " + shape_str(x.shape()));
  const std::size_t b = x.dim(0), l = x.dim(1), d = x.dim(2);
  std::vector<T> out(b * d);
  const auto xv = x.values();
  for (std::size_t bi = 0; bi < b; ++bi) {
    std::copy_n(xv.data() + (bi * l + position) * d, d, out.data() + bi * d);
  }
  return emit("select_position", {b, d}, std::move(out), tracking({&x}),
              [xn = x.node_ptr(), b, l, d, position](const Node<T>& o) {
                auto& g = xn->ensure_grad();
                for (std::size_t bi = 0; bi < b; ++bi) {
                  T* dst = g.data() + (bi * l + position) * d;
                  for (std::size_t j = 0; j < d; ++j) dst[j] += o.grad[bi * d + j];
                }
              });
}

template <typename T>
BasicTensor<T> row_norm(const BasicTensor<T>& x) {
  require(x.rank() == 2, "row_norm: expected a matrix, got " +
                             shape_str(x.shape()));
  const std::size_t b = x.dim(0), d = x.dim(1);
  const auto xv = x.values();
  std::vector<T> out(b);
  for (std::size_t i = 0; i < b; ++i) {
    T s = T(0);
    for (std::size_t j = 0; j < d; ++j) s += xv[i * d + j] * xv[i * d + j];
    out[i] = std::sqrt(s);
  }
  auto norms = std::make_shared<std::vector<T>>(out);
  return emit("row_norm", {b}, std::move(out), tracking({&x}),
              [xn = x.node_ptr(), norms, b, d](const Node<T>& o) {
                auto& g = xn->ensure_grad();
                for (std::size_t i = 0; i < b; ++i) {
                  const T nrm = (*norms)[i];
                  if (nrm == T(0)) continue;
                  const T f = o.grad[i] / nrm;
                  for (std::size_t j = 0; j < d; ++j) {
                    g[i * d + j] += f * xn->values[i * d + j];
                  }
                }
              });
}

template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& x) {
  T s = T(0);
  for (T v : x.values()) s += v;
  return emit("sum", {}, std::vector<T>{s}, tracking({&x}),
              [xn = x.node_ptr()](const Node<T>& o) {
                auto& g = xn->ensure_grad();
                for (T& v : g) v += o.grad[0];
              });
}

template <typename T>
BasicTensor<T> mean(const BasicTensor<T>& x) {
  if (x.numel() == 0) throw ContractError("mean of an empty tensor");
  T s = T(0);
  for (T v : x.values()) s += v;
  const T n = static_cast<T>(x.numel());
  return emit("mean", {}, std::vector<T>{s / n}, tracking({&x}),
              [xn = x.node_ptr(), n](const Node<T>& o) {
                auto& g = xn->ensure_grad();
                const T f = o.grad[0] / n;
                for (T& v : g) v += f;
              });
}

template <typename T>
BasicTensor<T> cross_entropy(const BasicTensor<T>& logits,
                             std::span<const std::size_t> targets) {
  require(logits.rank() == 2 && targets.size() == logits.dim(0),
          "cross_entropy: " + std::to_string(targets.size()) +
              " targets for logits " + shape_str(logits.shape()));
  const std::size_t b = logits.dim(0), c = logits.dim(1);
  const auto lv = logits.values();
  auto probs = std::make_shared<std::vector<T>>(b * c);
  T total = T(0);
  for (std::size_t i = 0; i < b; ++i) {
    if (targets[i] >= c) {
      throw RangeError("cross_entropy: target " + std::to_string(targets[i]) +
                       " out of " + std::to_string(c) + " classes");
    }
    const T* row = lv.data() + i * c;
    const T mx = *std::max_element(row, row + c);
    T z = T(0);
    for (std::size_t j = 0; j < c; ++j) z += std::exp(row[j] - mx);
    for (std::size_t j = 0; j < c; ++j) (*probs)[i * c + j] = std::exp(row[j] - mx) / z;
    total += (mx + std::log(z)) - row[targets[i]];
  }
  std::vector<std::size_t> saved(targets.begin(), targets.end());
  return emit("cross_entropy", {}, std::vector<T>{total / static_cast<T>(b)},
              tracking({&logits}),
              [ln = logits.node_ptr(), probs, saved = std::move(saved), b,
               c](const Node<T>& o) {
                auto& g = ln->ensure_grad();
                const T f = o.grad[0] / static_cast<T>(b);
                for (std::size_t i = 0; i < b; ++i) {
                  for (std::size_t j = 0; j < c; ++j) {
                    const T onehot = j == saved[i] ? T(1) : T(0);
                    g[i * c + j] += f * ((*probs)[i * c + j] - onehot);
                  }
                }
              });
}

#define QDISTILL_INSTANTIATE_OPS(T)                                              \
  template BasicTensor<T> matmul(const BasicTensor<T>&, const BasicTensor<T>&); \
  template BasicTensor<T> transpose(const BasicTensor<T>&);                     \
  template BasicTensor<T> linear(const BasicTensor<T>&, const BasicTensor<T>&,  \
                                 const BasicTensor<T>&);                        \
  template BasicTensor<T> add(const BasicTensor<T>&, const BasicTensor<T>&);    \
  template BasicTensor<T> sub(const BasicTensor<T>&, const BasicTensor<T>&);    \
  template BasicTensor<T> add_bias(const BasicTensor<T>&, const BasicTensor<T>&); \
  template BasicTensor<T> scale(const BasicTensor<T>&, T);                      \
  template BasicTensor<T> square(const BasicTensor<T>&);                        \
  template BasicTensor<T> softmax(const BasicTensor<T>&, std::size_t);          \
  template BasicTensor<T> layer_norm(const BasicTensor<T>&,                     \
                                     const BasicTensor<T>&,                     \
                                     const BasicTensor<T>&, T);                 \
  template BasicTensor<T> gelu(const BasicTensor<T>&);                          \
  template BasicTensor<T> embedding(const BasicTensor<T>&,                      \
                                    std::span<const std::int32_t>);             \
  template BasicTensor<T> reshape(const BasicTensor<T>&, Shape);                \
  template BasicTensor<T> split_heads(const BasicTensor<T>&, std::size_t);      \
  template BasicTensor<T> merge_heads(const BasicTensor<T>&, std::size_t);      \
  template BasicTensor<T> bmm(const BasicTensor<T>&, const BasicTensor<T>&);    \
  template BasicTensor<T> bmm_nt(const BasicTensor<T>&, const BasicTensor<T>&); \
  template BasicTensor<T> add_key_bias(const BasicTensor<T>&,                   \
                                       std::span<const T>, std::size_t);        \
  template BasicTensor<T> masked_mean(const BasicTensor<T>&,                    \
                                      std::span<const std::uint8_t>);           \
  template BasicTensor<T> select_position(const BasicTensor<T>&, std::size_t);  \
  template BasicTensor<T> row_norm(const BasicTensor<T>&);                      \
  template BasicTensor<T> sum(const BasicTensor<T>&);                           \
  template BasicTensor<T> mean(const BasicTensor<T>&);                          \
  template BasicTensor<T> cross_entropy(const BasicTensor<T>&,                  \
                                        std::span<const std::size_t>);

QDISTILL_INSTANTIATE_OPS(float)
QDISTILL_INSTANTIATE_OPS(double)

#undef QDISTILL_INSTANTIATE_OPS

}  // namespace qdistill
