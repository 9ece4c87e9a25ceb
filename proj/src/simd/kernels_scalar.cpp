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

#include "qdistill/simd/scalar.hpp"

namespace qdistill::simd::scalar {

extern const KernelTable kTable;
const KernelTable kTable{Isa::kScalar,     "scalar",
                         &gemm_nn<float>,  &gemm_nt<float>,
                         &gemm_tn<float>,  &dot<float>,
                         &adamw};

}  // namespace qdistill::simd::scalar
