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

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "../support/gradcheck.hpp"
#include "doctest.h"
#include "qdistill/distill.hpp"
#include "qdistill/error.hpp"
#include "qdistill/model_io.hpp"
#include "qdistill/numerics/ops.hpp"

using namespace qdistill;
using namespace qdistill::testing;
namespace fs = std::filesystem;

namespace {

const std::vector<std::string> kWords = {"river", "stone", "bright", "quiet", "north",
                                         "market", "tower", "garden", "old", "new",
                                         "what", "is", "the", "near", "city"};

std::shared_ptr<const Vocab> word_vocab() {
  std::vector<std::string> tokens = {"[PAD]", "[UNK]", "[CLS]", "[SEP]"};
  tokens.insert(tokens.end(), kWords.begin(), kWords.end());
  return std::make_shared<const Vocab>(std::move(tokens));
}

EncoderConfig small_config(std::size_t layers) {
  EncoderConfig cfg;
  cfg.num_layers = layers;
  cfg.hidden_dim = 16;
  cfg.num_heads = 2;
  cfg.ff_dim = 32;
  cfg.max_len = 12;
  cfg.vocab_size = 4 + kWords.size();
  return cfg;
}

EncoderModel random_model(std::size_t layers, std::uint64_t seed) {
  return make_random_model("m" + std::to_string(seed), small_config(layers), word_vocab(), seed);
}

std::vector<std::string> make_queries(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t len = 2 + rng() % 5;
    std::string q;
    for (std::size_t j = 0; j < len; ++j) {
      if (j) q += ' ';
      q += kWords[rng() % kWords.size()];
    }
    out.push_back(q);
  }
  return out;
}

bool bitwise_equal(const EncoderModel& a, const EncoderModel& b) {
  const auto pa = named_parameters(a.weights), pb = named_parameters(b.weights);
  if (pa.size() != pb.size()) return false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    if (pa[i].second->numel() != pb[i].second->numel()) return false;
    if (std::memcmp(pa[i].second->values().data(), pb[i].second->values().data(),
                    pa[i].second->numel() * sizeof(float)) != 0) {
      return false;
    }
  }
  return true;
}

TrainConfig quick_config() {
  TrainConfig c;
  c.batch_size = 16;
  c.learning_rate = 3e-3;
  c.warmup_steps = 5;
  c.epochs = 1;
  c.seed = 9;
  return c;
}

}  // namespace

TEST_CASE("split_queries takes the leading fraction for training") {
  std::vector<std::string> q;
  for (int i = 0; i < 10; ++i) q.push_back("q" + std::to_string(i));
  auto [train, val] = split_queries(std::span<const std::string>(q), 0.2);
  CHECK(train == std::vector<std::string>(q.begin(), q.begin() + 8));
  CHECK(val == std::vector<std::string>(q.begin() + 8, q.end()));

  auto [all, none] = split_queries(std::span<const std::string>(q), 0.0);
  CHECK(all == q);
  CHECK(none.empty());

  // ceil((1 - 0.25) * 7) = 6
  const std::vector<std::size_t> idx = {0, 1, 2, 3, 4, 5, 6};
  auto [a, b] = split_queries(std::span<const std::size_t>(idx), 0.25);
  CHECK(a.size() == 6);
  CHECK(b == std::vector<std::size_t>{6});

  CHECK_THROWS_AS(split_queries(std::span<const std::string>(), 0.2), ContractError);
  CHECK_THROWS_AS(split_queries(std::span<const std::string>(q), 1.0), ContractError);
}

TEST_CASE("alignment loss examples") {
  const Tensor s({1, 2}, {0, 3}), t({1, 2}, {4, 0});
  CHECK(alignment_loss(s, t, LossKind::kEuclidean).item() == 5.0f);
  CHECK(alignment_loss(s, t, LossKind::kMse).item() == 12.5f);
  CHECK(alignment_loss(s, s, LossKind::kEuclidean).item() == 0.0f);
  CHECK(alignment_loss(s, s, LossKind::kMse).item() == 0.0f);
  // Two rows: Euclidean averages the row distances.
  const Tensor s2({2, 2}, {0, 3, 1, 1}), t2({2, 2}, {4, 0, 1, 2});
  CHECK(alignment_loss(s2, t2, LossKind::kEuclidean).item() == 3.0f);
  CHECK(alignment_loss(s2, t2, LossKind::kMse).item() == 26.0f / 4.0f);
  CHECK_THROWS_AS(alignment_loss(Tensor({2, 3}), Tensor({2, 4}), LossKind::kMse), DimensionError);
  CHECK_THROWS_AS(alignment_loss(Tensor({6}), Tensor({6}), LossKind::kMse), DimensionError);
  CHECK(parse_loss_kind("mse") == LossKind::kMse);
  CHECK(parse_loss_kind("euclidean") == LossKind::kEuclidean);
  CHECK(loss_kind_name(LossKind::kEuclidean) == "euclidean");
  CHECK_THROWS_AS(parse_loss_kind("l1"), ContractError);
}

TEST_CASE("MSE gradient with respect to the student is 2(s-t)/(B d)") {
  std::mt19937_64 rng(8);
  Tensor64 s = random_tensor({5, 7}, rng);
  const Tensor64 t = random_tensor({5, 7}, rng, -2, 2, false);
  {
    GradTape<double> tape;
    tape.backward(alignment_loss(s, t, LossKind::kMse));
  }
  for (std::size_t i = 0; i < s.numel(); ++i) {
    CHECK(s.grad()[i] == doctest::Approx(2.0 * (s[i] - t[i]) / 35.0).epsilon(1e-12));
  }
  for (auto kind : {LossKind::kMse, LossKind::kEuclidean}) {
    std::vector<Tensor64> in = {random_tensor({4, 6}, rng)};
    const Tensor64 target = random_tensor({4, 6}, rng, -2, 2, false);
    const auto r = grad_check(
        in, [&](const std::vector<Tensor64>& x) { return alignment_loss(x[0], target, kind); });
    CAPTURE(r.worst);
    CHECK(r.max_rel_error < kMaxRelativeError);
  }
}

TEST_CASE("alignment loss is invariant under a common rotation") {
  std::mt19937_64 rng(12);
  const std::size_t d = 6;
  // Random orthogonal matrix by Gram-Schmidt.
  const Tensor64 a = random_tensor({d, d}, rng, -1, 1, false);
  std::vector<std::vector<double>> q;
  for (std::size_t i = 0; i < d; ++i) {
    std::vector<double> v(a.values().begin() + i * d, a.values().begin() + (i + 1) * d);
    for (const auto& u : q) {
      const double dot = std::inner_product(v.begin(), v.end(), u.begin(), 0.0);
      for (std::size_t j = 0; j < d; ++j) v[j] -= dot * u[j];
    }
    const double n = std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
    for (auto& x : v) x /= n;
    q.push_back(v);
  }
  std::vector<double> flat;
  for (const auto& r : q) flat.insert(flat.end(), r.begin(), r.end());
  const Tensor64 rot({d, d}, flat);
  for (int trial = 0; trial < 5; ++trial) {
    const Tensor64 s = random_tensor({4, d}, rng, -2, 2, false);
    const Tensor64 t = random_tensor({4, d}, rng, -2, 2, false);
    for (auto kind : {LossKind::kMse, LossKind::kEuclidean}) {
      const double before = alignment_loss(s, t, kind).item();
      const double after = alignment_loss(matmul(s, rot), matmul(t, rot), kind).item();
      CHECK(after == doctest::Approx(before).epsilon(1e-12));
    }
  }
}

TEST_CASE("learning-rate schedule") {
  TrainConfig c;
  c.learning_rate = 1e-4;
  c.warmup_steps = 1000;
  CHECK(lr_at(500, c) == doctest::Approx(5e-5).epsilon(1e-15));
  CHECK(lr_at(0, c) == 0.0);
  CHECK(lr_at(1000, c) == 1e-4);
  CHECK(lr_at(5000, c) == 1e-4);
  c.warmup_steps = 0;
  CHECK(lr_at(0, c) == 1e-4);
}

TEST_CASE("train config validation") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  CHECK(c.batch_size == 128);
  CHECK(c.learning_rate == 1e-4);
  CHECK(c.warmup_steps == 1000);
  CHECK(c.epochs == 1);
  CHECK(c.loss_kind == LossKind::kMse);
  CHECK(c.val_fraction == 0.2);
  c.batch_size = 0;
  CHECK_THROWS_AS(c.validate(), ContractError);
  c = {};
  c.val_fraction = 1.0;
  CHECK_THROWS_AS(c.validate(), ContractError);
  c = {};
  c.val_fraction = -0.1;
  CHECK_THROWS_AS(c.validate(), ContractError);
}

TEST_CASE("AdamW with zero gradient only decays") {
  Tensor p({3}, {1.0f, -2.0f, 0.5f}, true);
  for (auto& g : p.mutable_grad()) g = 0.0f;
  AdamW opt({&p}, 0.9, 0.999, 1e-8, 0.01);
  opt.step(1e-4);
  const float decay = static_cast<float>(1.0 - 1e-6);
  CHECK(p[0] == 1.0f * decay);
  CHECK(p[1] == -2.0f * decay);
  CHECK(p[2] == 0.5f * decay);
  for (float m : opt.first_moment(0)) CHECK(m == 0.0f);
  for (float v : opt.second_moment(0)) CHECK(v == 0.0f);
  CHECK(opt.steps() == 1);
}

TEST_CASE("AdamW first step moves each coordinate by about lr against the gradient") {
  Tensor p({4}, {0.0f, 1.0f, -1.0f, 3.0f}, true);
  const std::vector<float> g = {0.3f, -2.0f, 1e-3f, -7.0f};
  std::copy(g.begin(), g.end(), p.mutable_grad().begin());
  AdamW opt({&p}, 0.9, 0.999, 1e-12, 0.0);
  const std::vector<float> before(p.values().begin(), p.values().end());
  opt.step(1e-2);
  for (std::size_t i = 0; i < 4; ++i) {
    const double expected = -1e-2 * (g[i] > 0 ? 1.0 : -1.0);
    CHECK(p[i] - before[i] == doctest::Approx(expected).epsilon(1e-4));
  }
}

TEST_CASE("AdamW is deterministic") {
  auto run = [] {
    Tensor p({5}, {0.1f, 0.2f, 0.3f, 0.4f, 0.5f}, true);
    AdamW opt({&p}, 0.9, 0.999, 1e-8, 0.01);
    for (int s = 1; s <= 4; ++s) {
      auto g = p.mutable_grad();
      for (std::size_t i = 0; i < 5; ++i) g[i] = float(std::sin(double(s * 7 + i)));
      opt.step(1e-3);
    }
    return std::vector<float>(p.values().begin(), p.values().end());
  };
  CHECK(run() == run());
}

TEST_CASE("shuffled_order is a seeded permutation") {
  const auto a = shuffled_order(50, 3), b = shuffled_order(50, 3), c = shuffled_order(50, 4);
  CHECK(a == b);
  CHECK(a != c);
  auto sorted = a;
  std::sort(sorted.begin(), sorted.end());
  std::vector<std::size_t> iota(50);
  std::iota(iota.begin(), iota.end(), 0);
  CHECK(sorted == iota);
}

TEST_CASE("validate measures the mean distance") {
  const EncoderModel teacher = random_model(3, 1);
  const EncoderModel student = random_model(1, 2);
  const auto queries = make_queries(37, 5);
  CHECK(validate(teacher, teacher, queries) == 0.0);

  const double full = validate(teacher, student, queries, 64);
  const double via_loss = alignment_loss(encode(queries, student, 64),
                                         encode(queries, teacher, 64), LossKind::kEuclidean)
                              .item();
  CHECK(full == doctest::Approx(via_loss).epsilon(1e-6));
  for (std::size_t bs : {1u, 5u, 16u}) {
    CHECK(std::abs(validate(teacher, student, queries, bs) - full) <= 1e-6);
  }
  auto shuffled = queries;
  std::mt19937_64 rng(1);
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  CHECK(std::abs(validate(teacher, student, shuffled) - full) <= 1e-6);
  CHECK_THROWS_AS(validate(teacher, student, std::vector<std::string>{}), ContractError);
}

TEST_CASE("train rejects incompatible models") {
  const EncoderModel teacher = random_model(2, 1);
  const auto queries = make_queries(20, 1);
  EncoderConfig wide = small_config(1);
  wide.hidden_dim = 32;
  const EncoderModel other = make_random_model("w", wide, word_vocab(), 3);
  CHECK_THROWS_AS(train(teacher, other, queries, quick_config()), DimensionError);
  EncoderConfig cls = small_config(1);
  cls.pooling = Pooling::kCls;
  const EncoderModel cls_model = make_random_model("c", cls, word_vocab(), 3);
  CHECK_THROWS_AS(train(teacher, cls_model, queries, quick_config()), ContractError);
}

TEST_CASE("training an identity extraction keeps the loss at zero") {
  const EncoderModel teacher = random_model(3, 1);
  const EncoderModel student = extract_layers(teacher, {0, 1, 2});
  const auto queries = make_queries(120, 2);
  SUBCASE("without weight decay the gradient vanishes and nothing moves") {
    TrainConfig cfg = quick_config();
    cfg.weight_decay = 0.0;
    const TrainResult r = train(teacher, student, queries, cfg);
    REQUIRE_FALSE(r.history.steps.empty());
    for (const auto& s : r.history.steps) CHECK(s.loss == 0.0);
    CHECK(bitwise_equal(r.student, teacher));
    CHECK(*r.history.final_distance() == 0.0);
  }
  SUBCASE("default optimizer settings") {
    TrainConfig cfg = quick_config();
    cfg.learning_rate = TrainConfig{}.learning_rate;
    const TrainResult r = train(teacher, student, queries, cfg);
    REQUIRE_FALSE(r.history.steps.empty());
    CHECK(r.history.steps.front().loss < 1e-8);
    // Decay pulls the student off the teacher and Adam rescales the small
    // corrective gradients, so the loss hovers near, not at, zero. Layer-norm
    // outputs have unit mean square, making 1e-4 a relative bound.
    for (const auto& s : r.history.steps) CHECK(s.loss < 1e-4);
    CHECK(*r.history.initial_distance() < 1e-5);
  }
}

TEST_CASE("training is deterministic, leaves the teacher alone and helps") {
  const EncoderModel teacher = random_model(3, 1);
  EncoderModel teacher_copy = teacher;
  teacher_copy.weights = clone_weights(teacher.weights, false);
  const EncoderModel student = random_model(1, 7);
  const auto queries = make_queries(400, 3);
  TrainConfig cfg = quick_config();
  cfg.epochs = 2;
  cfg.validate_every = 5;

  const TrainResult a = train(teacher, student, queries, cfg);
  const TrainResult b = train(teacher, student, queries, cfg);
  CHECK(a.history.steps == b.history.steps);
  CHECK(a.history.validation == b.history.validation);
  CHECK(bitwise_equal(a.student, b.student));
  CHECK(bitwise_equal(teacher, teacher_copy));
  CHECK_FALSE(bitwise_equal(a.student, student));

  // 320 training queries in batches of 16 over two epochs.
  CHECK(a.history.steps.size() == 40);
  for (std::size_t i = 0; i < a.history.steps.size(); ++i) {
    CHECK(a.history.steps[i].step == i + 1);
    CHECK(a.history.steps[i].lr == lr_at(i + 1, cfg));
  }
  for (std::size_t i = 1; i < a.history.validation.size(); ++i) {
    CHECK(a.history.validation[i].step > a.history.validation[i - 1].step);
  }
  CHECK(a.history.validation.front().step == 0);
  CHECK(a.history.epoch_seconds.size() == 2);
  CHECK(*a.history.final_distance() < *a.history.initial_distance());
  CHECK(*a.history.final_distance() ==
        doctest::Approx(validate(teacher, a.student,
                                 std::span<const std::string>(queries).subspan(320))));

  // Window averages of the training loss go down.
  auto window = [&](std::size_t from) {
    double s = 0;
    for (std::size_t i = from; i < from + 10; ++i) s += a.history.steps[i].loss;
    return s / 10;
  };
  CHECK(window(30) < window(0));

  TrainConfig other = cfg;
  other.seed = 10;
  const TrainResult c = train(teacher, student, queries, other);
  CHECK(c.history.steps != a.history.steps);
}

TEST_CASE("the teacher embedding cache does not change results") {
  const fs::path dir = fs::temp_directory_path() / "qdistill_distill_cache";
  fs::remove_all(dir);
  const EncoderModel teacher = random_model(2, 1);
  const EncoderModel student = random_model(1, 4);
  const auto queries = make_queries(100, 4);
  const TrainConfig cfg = quick_config();
  const TrainResult plain = train(teacher, student, queries, cfg);
  TrainOptions opts;
  opts.cache_dir = dir;
  const TrainResult cold = train(teacher, student, queries, cfg, opts);
  CHECK(std::distance(fs::directory_iterator(dir), fs::directory_iterator()) == 1);
  const TrainResult warm = train(teacher, student, queries, cfg, opts);
  CHECK(plain.history.steps == cold.history.steps);
  CHECK(plain.history.steps == warm.history.steps);
  CHECK(bitwise_equal(plain.student, warm.student));
  fs::remove_all(dir);
}

TEST_CASE("history csv") {
  TrainHistory h;
  h.steps = {{1, 0.5, 0.125}, {2, 0.25, 0.25}};
  const fs::path p = fs::temp_directory_path() / "qdistill_history.csv";
  h.write_csv(p);
  std::ifstream in(p);
  std::string line;
  std::getline(in, line);
  CHECK(line == "step,loss,lr");
  std::getline(in, line);
  CHECK(line == "1,0.5,0.125");
  fs::remove(p);
  CHECK_FALSE(TrainHistory{}.initial_distance().has_value());
}
