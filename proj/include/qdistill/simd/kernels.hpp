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

// Dense inner loops used by the tensor library, the optimizer and the search
// index. Every kernel has a portable scalar reference in scalar.hpp; vector
// variants live in their own translation units and are picked at runtime.
//
// All matrices are contiguous and row-major. Each output element of a GEMM is
// produced by a reduction whose order depends only on the inner dimension,
// never on the number of rows, so a row computed alone is bitwise equal to
// the same row computed inside a larger batch.

#include <cstddef>
#include <span>
#include <string_view>

namespace qdistill::simd {

enum class Isa { kScalar, kAvx2 };

// Constants for one decoupled-weight-decay Adam update, precomputed in the
// parameter precision so that every kernel sees identical operands.
struct AdamWCoefficients {
  float lr = 0.0f;
  float decay = 1.0f;        // 1 - lr * weight_decay
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float one_minus_beta1 = 0.1f;
  float one_minus_beta2 = 0.001f;
  float bias_correction1 = 1.0f;  // 1 - beta1^t
  float bias_correction2 = 1.0f;  // 1 - beta2^t
  float eps = 1e-8f;
};

struct KernelTable {
  Isa isa;
  std::string_view name;
  // c[m x n] (+)= a[m x k] * b[k x n]
  void (*gemm_nn)(std::size_t m, std::size_t n, std::size_t k, const float* a,
                  const float* b, float* c, bool accumulate);
  // c[m x n] (+)= a[m x k] * b[n x k]^T
  void (*gemm_nt)(std::size_t m, std::size_t n, std::size_t k, const float* a,
                  const float* b, float* c, bool accumulate);
  // c[m x n] (+)= a[k x m]^T * b[k x n]
  void (*gemm_tn)(std::size_t m, std::size_t n, std::size_t k, const float* a,
                  const float* b, float* c, bool accumulate);
  float (*dot)(const float* a, const float* b, std::size_t n);
  void (*adamw)(float* param, const float* grad, float* m, float* v,
                std::size_t n, const AdamWCoefficients& coef);
};

bool supported(Isa isa);

// Best ISA the running CPU supports. QDISTILL_SIMD=scalar|avx2 in the
// environment overrides the choice (an unsupported request falls back).
Isa detect();

const KernelTable& table(Isa isa);

// Kernels currently in use by the library. Selected once on first use.
const KernelTable& active();

// Switches the active kernels; throws ContractError if the CPU lacks `isa`.
void select(Isa isa);

std::string_view isa_name(Isa isa);

}  // namespace qdistill::simd
