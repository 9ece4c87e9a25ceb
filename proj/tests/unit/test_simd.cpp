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

#include <cfloat>
#include <cmath>
#include <cstdlib>
#include <random>
#include <vector>

#include "doctest.h"
#include "qdistill/simd/kernels.hpp"
#include "qdistill/simd/scalar.hpp"

using namespace qdistill::simd;

namespace {

std::vector<float> random_floats(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> d(-1.5f, 1.5f);
  std::vector<float> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

std::vector<Isa> available() {
  std::vector<Isa> out = {Isa::kScalar};
  if (supported(Isa::kAvx2)) out.push_back(Isa::kAvx2);
  return out;
}

// Reference c = op(a) * op(b) in double plus the error scale sum |a||b|.
struct Reference {
  std::vector<double> value, magnitude;
};

enum class Layout { kNN, kNT, kTN };

Reference reference(Layout layout, std::size_t m, std::size_t n, std::size_t k,
                    const std::vector<float>& a, const std::vector<float>& b) {
  Reference r{std::vector<double>(m * n), std::vector<double>(m * n)};
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0, mag = 0;
      for (std::size_t p = 0; p < k; ++p) {
        const double av = layout == Layout::kTN ? a[p * m + i] : a[i * k + p];
        const double bv = layout == Layout::kNT ? b[j * k + p] : b[p * n + j];
        s += av * bv;
        mag += std::abs(av * bv);
      }
      r.value[i * n + j] = s;
      r.magnitude[i * n + j] = mag;
    }
  }
  return r;
}

void run(const KernelTable& t, Layout layout, std::size_t m, std::size_t n, std::size_t k,
         const float* a, const float* b, float* c, bool acc) {
  switch (layout) {
    case Layout::kNN: t.gemm_nn(m, n, k, a, b, c, acc); break;
    case Layout::kNT: t.gemm_nt(m, n, k, a, b, c, acc); break;
    case Layout::kTN: t.gemm_tn(m, n, k, a, b, c, acc); break;
  }
}

}  // namespace

TEST_CASE("every available kernel set matches a double-precision reference") {
  std::mt19937_64 rng(11);
  const std::size_t shapes[][3] = {{1, 1, 1},  {3, 5, 7},   {4, 16, 8},  {5, 17, 33},
                                   {9, 31, 64}, {16, 64, 64}, {7, 129, 3}, {33, 8, 256}};
  for (Isa isa : available()) {
    const KernelTable& t = table(isa);
    CAPTURE(t.name);
    for (auto layout : {Layout::kNN, Layout::kNT, Layout::kTN}) {
      for (const auto& s : shapes) {
        const std::size_t m = s[0], n = s[1], k = s[2];
        const auto a = random_floats(m * k, rng);
        const auto b = random_floats(k * n, rng);
        const Reference ref = reference(layout, m, n, k, a, b);
        std::vector<float> c(m * n, 0.0f);
        run(t, layout, m, n, k, a.data(), b.data(), c.data(), false);
        for (std::size_t i = 0; i < m * n; ++i) {
          // Standard floating-point summation bound: k * eps * sum |a||b|.
          const double tol = static_cast<double>(k + 1) * FLT_EPSILON * ref.magnitude[i] + 1e-30;
          REQUIRE(std::abs(c[i] - ref.value[i]) <= tol);
        }
        // accumulate = true adds onto the existing contents.
        std::vector<float> c2(m * n, 0.5f);
        run(t, layout, m, n, k, a.data(), b.data(), c2.data(), true);
        for (std::size_t i = 0; i < m * n; ++i) {
          const double tol =
              static_cast<double>(k + 2) * FLT_EPSILON * (ref.magnitude[i] + 0.5) + 1e-30;
          REQUIRE(std::abs(c2[i] - (ref.value[i] + 0.5)) <= tol);
        }
      }
    }
  }
}

TEST_CASE("scalar and vector kernels agree within rounding") {
  if (!supported(Isa::kAvx2)) return;
  std::mt19937_64 rng(12);
  const KernelTable& s = table(Isa::kScalar);
  const KernelTable& v = table(Isa::kAvx2);
  for (std::size_t n : {1u, 7u, 8u, 15u, 16u, 17u, 31u, 64u, 100u, 257u}) {
    const auto a = random_floats(n, rng), b = random_floats(n, rng);
    double mag = 0;
    for (std::size_t i = 0; i < n; ++i) mag += std::abs(double(a[i]) * b[i]);
    const float ds = s.dot(a.data(), b.data(), n), dv = v.dot(a.data(), b.data(), n);
    CHECK(std::abs(ds - dv) <= 2.0 * (n + 1) * FLT_EPSILON * mag);
  }
  for (auto layout : {Layout::kNN, Layout::kNT, Layout::kTN}) {
    const std::size_t m = 13, n = 37, k = 45;
    const auto a = random_floats(m * k, rng), b = random_floats(k * n, rng);
    const Reference ref = reference(layout, m, n, k, a, b);
    std::vector<float> cs(m * n), cv(m * n);
    run(s, layout, m, n, k, a.data(), b.data(), cs.data(), false);
    run(v, layout, m, n, k, a.data(), b.data(), cv.data(), false);
    for (std::size_t i = 0; i < m * n; ++i) {
      CHECK(std::abs(cs[i] - cv[i]) <= 2.0 * (k + 1) * FLT_EPSILON * ref.magnitude[i]);
    }
  }
}

TEST_CASE("adamw kernels are bitwise identical across kernel sets") {
  std::mt19937_64 rng(13);
  const std::size_t n = 1003;
  const auto p0 = random_floats(n, rng), g = random_floats(n, rng);
  AdamWCoefficients c;
  c.lr = 1e-3f;
  c.decay = 1.0f - 1e-3f * 0.01f;
  c.bias_correction1 = 0.1f;
  c.bias_correction2 = 0.001f;
  std::vector<std::vector<float>> results;
  for (Isa isa : available()) {
    auto p = p0;
    std::vector<float> m(n, 0.0f), v(n, 0.0f);
    for (int step = 0; step < 3; ++step) table(isa).adamw(p.data(), g.data(), m.data(), v.data(), n, c);
    results.push_back(p);
    // The reference template applied element by element.
    auto pr = p0;
    std::vector<float> mr(n, 0.0f), vr(n, 0.0f);
    for (int step = 0; step < 3; ++step) scalar::adamw(pr.data(), g.data(), mr.data(), vr.data(), n, c);
    CHECK(p == pr);
    CHECK(m == mr);
    CHECK(v == vr);
  }
}

TEST_CASE("a GEMM row does not depend on how many rows are computed with it") {
  std::mt19937_64 rng(14);
  const std::size_t m = 11, n = 45, k = 70;
  for (Isa isa : available()) {
    const KernelTable& t = table(isa);
    CAPTURE(t.name);
    const auto a = random_floats(m * k, rng), b = random_floats(k * n, rng);
    const auto bt = random_floats(n * k, rng);
    std::vector<float> full_nn(m * n), full_nt(m * n);
    t.gemm_nn(m, n, k, a.data(), b.data(), full_nn.data(), false);
    t.gemm_nt(m, n, k, a.data(), bt.data(), full_nt.data(), false);
    for (std::size_t i = 0; i < m; ++i) {
      std::vector<float> row(n);
      t.gemm_nn(1, n, k, a.data() + i * k, b.data(), row.data(), false);
      CHECK(std::equal(row.begin(), row.end(), full_nn.begin() + i * n));
      t.gemm_nt(1, n, k, a.data() + i * k, bt.data(), row.data(), false);
      CHECK(std::equal(row.begin(), row.end(), full_nt.begin() + i * n));
      // gemm_nt elements are exactly the dot kernel's results.
      for (std::size_t j = 0; j < n; ++j) {
        CHECK(row[j] == t.dot(a.data() + i * k, bt.data() + j * k, k));
      }
    }
  }
}

TEST_CASE("dispatch honours selection and the environment override") {
  const Isa before = active().isa;
  select(Isa::kScalar);
  CHECK(active().isa == Isa::kScalar);
  CHECK(active().name == "scalar");
  ::setenv("QDISTILL_SIMD", "scalar", 1);
  CHECK(detect() == Isa::kScalar);
  ::unsetenv("QDISTILL_SIMD");
  if (supported(Isa::kAvx2)) {
    CHECK(detect() == Isa::kAvx2);
    select(Isa::kAvx2);
    CHECK(active().isa == Isa::kAvx2);
  } else {
    CHECK_THROWS(select(Isa::kAvx2));
  }
  select(before);
  CHECK(isa_name(Isa::kAvx2) == "avx2");
}
