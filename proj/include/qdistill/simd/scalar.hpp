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

#pragma once

// Scalar reference kernels. Templated so the 64-bit gradient-check build of
// the tensor library shares them with the 32-bit path.

#include <cmath>
#include <cstddef>

#include "qdistill/simd/kernels.hpp"

namespace qdistill::simd::scalar {

template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a,
             const T* b, T* c, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    if (!accumulate) {
      for (std::size_t j = 0; j < n; ++j) crow[j] = T(0);
    }
    const T* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      const T* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename T>
T dot(const T* a, const T* b, std::size_t n) {
  T acc = T(0);
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

template <typename T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a,
             const T* b, T* c, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const T s = dot(a + i * k, b + j * k, k);
      c[i * n + j] = accumulate ? c[i * n + j] + s : s;
    }
  }
}

template <typename T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a,
             const T* b, T* c, bool accumulate) {
  if (!accumulate) {
    for (std::size_t i = 0; i < m * n; ++i) c[i] = T(0);
  }
  for (std::size_t p = 0; p < k; ++p) {
    const T* arow = a + p * m;
    const T* brow = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const T av = arow[i];
      T* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

inline void adamw(float* param, const float* grad, float* m, float* v,
                  std::size_t n, const AdamWCoefficients& coef) {
  for (std::size_t i = 0; i < n; ++i) {
    const float g = grad[i];
    const float p = param[i] * coef.decay;
    const float mi = coef.beta1 * m[i] + coef.one_minus_beta1 * g;
    const float vi = coef.beta2 * v[i] + coef.one_minus_beta2 * (g * g);
    m[i] = mi;
    v[i] = vi;
    const float m_hat = mi / coef.bias_correction1;
    const float v_hat = vi / coef.bias_correction2;
    param[i] = p - coef.lr * (m_hat / (std::sqrt(v_hat) + coef.eps));
  }
}

}  // namespace qdistill::simd::scalar
