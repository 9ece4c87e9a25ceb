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

// AVX2 + FMA kernels. This file is compiled with -mavx2 -mfma and must only be
// entered after a runtime CPU check (see dispatch.cpp).

#include <immintrin.h>

#include <cmath>
#include <cstddef>

#include "qdistill/simd/kernels.hpp"

namespace qdistill::simd::avx2 {
namespace {

inline float hsum(__m256 v) {
  __m128 lo = _mm256_castps256_ps128(v);
  __m128 hi = _mm256_extractf128_ps(v, 1);
  lo = _mm_add_ps(lo, hi);
  __m128 shuf = _mm_movehdup_ps(lo);
  __m128 sums = _mm_add_ps(lo, shuf);
  shuf = _mm_movehl_ps(shuf, sums);
  sums = _mm_add_ss(sums, shuf);
  return _mm_cvtss_f32(sums);
}

// One output row block of gemm_nn: `rows` rows (1..4) by 16 columns.
template <int Rows>
inline void block_nn16(std::size_t n, std::size_t k, const float* a,
                       const float* b, float* c, bool accumulate) {
  __m256 acc0[Rows];
  __m256 acc1[Rows];
  for (int r = 0; r < Rows; ++r) {
    if (accumulate) {
      acc0[r] = _mm256_loadu_ps(c + r * n);
      acc1[r] = _mm256_loadu_ps(c + r * n + 8);
    } else {
      acc0[r] = _mm256_setzero_ps();
      acc1[r] = _mm256_setzero_ps();
    }
  }
  for (std::size_t p = 0; p < k; ++p) {
    const __m256 b0 = _mm256_loadu_ps(b + p * n);
    const __m256 b1 = _mm256_loadu_ps(b + p * n + 8);
    for (int r = 0; r < Rows; ++r) {
      const __m256 av = _mm256_broadcast_ss(a + r * k + p);
      acc0[r] = _mm256_fmadd_ps(av, b0, acc0[r]);
      acc1[r] = _mm256_fmadd_ps(av, b1, acc1[r]);
    }
  }
  for (int r = 0; r < Rows; ++r) {
    _mm256_storeu_ps(c + r * n, acc0[r]);
    _mm256_storeu_ps(c + r * n + 8, acc1[r]);
  }
}

template <int Rows>
inline void block_nn8(std::size_t n, std::size_t k, const float* a,
                      const float* b, float* c, bool accumulate) {
  __m256 acc[Rows];
  for (int r = 0; r < Rows; ++r) {
    acc[r] = accumulate ? _mm256_loadu_ps(c + r * n) : _mm256_setzero_ps();
  }
  for (std::size_t p = 0; p < k; ++p) {
    const __m256 bv = _mm256_loadu_ps(b + p * n);
    for (int r = 0; r < Rows; ++r) {
      acc[r] = _mm256_fmadd_ps(_mm256_broadcast_ss(a + r * k + p), bv, acc[r]);
    }
  }
  for (int r = 0; r < Rows; ++r) _mm256_storeu_ps(c + r * n, acc[r]);
}

template <int Rows>
inline void rows_nn(std::size_t n, std::size_t k, const float* a,
                    const float* b, float* c, bool accumulate) {
  std::size_t j = 0;
  for (; j + 16 <= n; j += 16) {
    block_nn16<Rows>(n, k, a, b + j, c + j, accumulate);
  }
  for (; j + 8 <= n; j += 8) {
    block_nn8<Rows>(n, k, a, b + j, c + j, accumulate);
  }
  for (; j < n; ++j) {
    for (int r = 0; r < Rows; ++r) {
      float acc = accumulate ? c[r * n + j] : 0.0f;
      for (std::size_t p = 0; p < k; ++p) {
        acc = std::fma(a[r * k + p], b[p * n + j], acc);
      }
      c[r * n + j] = acc;
    }
  }
}

float dot_impl(const float* a, const float* b, std::size_t n) {
  __m256 acc0 = _mm256_setzero_ps();
  __m256 acc1 = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + 16 <= n; i += 16) {
    acc0 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i), acc0);
    acc1 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i + 8),
                           _mm256_loadu_ps(b + i + 8), acc1);
  }
  if (i + 8 <= n) {
    acc0 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i), acc0);
    i += 8;
  }
  float acc = hsum(_mm256_add_ps(acc0, acc1));
  for (; i < n; ++i) acc = std::fma(a[i], b[i], acc);
  return acc;
}

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const float* a,
             const float* b, float* c, bool accumulate) {
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    rows_nn<4>(n, k, a + i * k, b, c + i * n, accumulate);
  }
  for (; i < m; ++i) {
    rows_nn<1>(n, k, a + i * k, b, c + i * n, accumulate);
  }
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const float* a,
             const float* b, float* c, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    const float* arow = a + i * k;
    float* crow = c + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const float s = dot_impl(arow, b + j * k, k);
      crow[j] = accumulate ? crow[j] + s : s;
    }
  }
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const float* a,
             const float* b, float* c, bool accumulate) {
  if (!accumulate) {
    for (std::size_t i = 0; i < m * n; ++i) c[i] = 0.0f;
  }
  for (std::size_t p = 0; p < k; ++p) {
    const float* arow = a + p * m;
    const float* brow = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const float av = arow[i];
      if (av == 0.0f) continue;
      const __m256 avv = _mm256_set1_ps(av);
      float* crow = c + i * n;
      std::size_t j = 0;
      for (; j + 8 <= n; j += 8) {
        _mm256_storeu_ps(crow + j, _mm256_fmadd_ps(avv, _mm256_loadu_ps(brow + j),
                                                   _mm256_loadu_ps(crow + j)));
      }
      for (; j < n; ++j) crow[j] = std::fma(av, brow[j], crow[j]);
    }
  }
}

// Mirrors scalar::adamw operation by operation (no fused multiply-add), so
// both paths produce bitwise identical parameters and moments.
void adamw(float* param, const float* grad, float* m, float* v, std::size_t n,
           const AdamWCoefficients& coef) {
  const __m256 decay = _mm256_set1_ps(coef.decay);
  const __m256 beta1 = _mm256_set1_ps(coef.beta1);
  const __m256 beta2 = _mm256_set1_ps(coef.beta2);
  const __m256 omb1 = _mm256_set1_ps(coef.one_minus_beta1);
  const __m256 omb2 = _mm256_set1_ps(coef.one_minus_beta2);
  const __m256 bc1 = _mm256_set1_ps(coef.bias_correction1);
  const __m256 bc2 = _mm256_set1_ps(coef.bias_correction2);
  const __m256 eps = _mm256_set1_ps(coef.eps);
  const __m256 lr = _mm256_set1_ps(coef.lr);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 g = _mm256_loadu_ps(grad + i);
    const __m256 p = _mm256_mul_ps(_mm256_loadu_ps(param + i), decay);
    const __m256 mi = _mm256_add_ps(_mm256_mul_ps(beta1, _mm256_loadu_ps(m + i)),
                                    _mm256_mul_ps(omb1, g));
    const __m256 vi = _mm256_add_ps(_mm256_mul_ps(beta2, _mm256_loadu_ps(v + i)),
                                    _mm256_mul_ps(omb2, _mm256_mul_ps(g, g)));
    _mm256_storeu_ps(m + i, mi);
    _mm256_storeu_ps(v + i, vi);
    const __m256 m_hat = _mm256_div_ps(mi, bc1);
    const __m256 v_hat = _mm256_div_ps(vi, bc2);
    const __m256 step = _mm256_mul_ps(
        lr, _mm256_div_ps(m_hat, _mm256_add_ps(_mm256_sqrt_ps(v_hat), eps)));
    _mm256_storeu_ps(param + i, _mm256_sub_ps(p, step));
  }
  for (; i < n; ++i) {
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

}  // namespace

extern const KernelTable kTable;
const KernelTable kTable{Isa::kAvx2, "avx2", &gemm_nn, &gemm_nt,
                         &gemm_tn,   &dot_impl, &adamw};

}  // namespace qdistill::simd::avx2
