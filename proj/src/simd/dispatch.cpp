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

#include <atomic>
#include <cstdlib>
#include <string>

#include "qdistill/error.hpp"
#include "qdistill/simd/kernels.hpp"

namespace qdistill::simd {

namespace scalar {
extern const KernelTable kTable;
}
#if defined(QDISTILL_HAVE_AVX2)
namespace avx2 {
extern const KernelTable kTable;
}
#endif

namespace {

std::atomic<const KernelTable*> g_active{nullptr};

}  // namespace

bool supported(Isa isa) {
  switch (isa) {
    case Isa::kScalar:
      return true;
    case Isa::kAvx2:
#if defined(QDISTILL_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
      return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
      return false;
#endif
  }
  return false;
}

Isa detect() {
  if (const char* env = std::getenv("QDISTILL_SIMD")) {
    const std::string want(env);
    if (want == "scalar") return Isa::kScalar;
    if (want == "avx2" && supported(Isa::kAvx2)) return Isa::kAvx2;
  }
  return supported(Isa::kAvx2) ? Isa::kAvx2 : Isa::kScalar;
}

const KernelTable& table(Isa isa) {
  if (!supported(isa)) {
    throw ContractError("kernel set '" + std::string(isa_name(isa)) +
                        "' is not supported on this CPU");
  }
#if defined(QDISTILL_HAVE_AVX2)
  if (isa == Isa::kAvx2) return avx2::kTable;
#endif
  return scalar::kTable;
}

const KernelTable& active() {
  const KernelTable* t = g_active.load(std::memory_order_acquire);
  if (t == nullptr) {
    t = &table(detect());
    g_active.store(t, std::memory_order_release);
  }
  return *t;
}

void select(Isa isa) { g_active.store(&table(isa), std::memory_order_release); }

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::kScalar:
      return "scalar";
    case Isa::kAvx2:
      return "avx2";
  }
  return "unknown";
}

}  // namespace qdistill::simd
