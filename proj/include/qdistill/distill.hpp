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

// Query-embedding alignment: a student encoder is trained to reproduce a
// frozen teacher's pooled query embeddings.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "qdistill/encoder.hpp"
#include "qdistill/numerics/tensor.hpp"

namespace qdistill {

enum class LossKind { kMse, kEuclidean };

std::string_view loss_kind_name(LossKind kind);
LossKind parse_loss_kind(std::string_view name);

struct TrainConfig {
  std::size_t batch_size = 128;
  double learning_rate = 1e-4;
  std::size_t warmup_steps = 1000;
  std::size_t epochs = 1;
  LossKind loss_kind = LossKind::kMse;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t seed = 0;
  double val_fraction = 0.2;
  // Also validate every N optimizer steps; 0 validates only before training
  // and at the end of each epoch.
  std::size_t validate_every = 0;

  // Throws ContractError when a field is out of range.
  void validate() const;
};

// First ceil((1 - val_fraction) * n) items train, the rest validate. Order is
// preserved. ContractError on an empty list or val_fraction outside [0, 1).
template <typename Item>
std::pair<std::vector<Item>, std::vector<Item>> split_queries(
    std::span<const Item> items, double val_fraction);

// EUCLIDEAN: mean over rows of ||s - t||_2.
// MSE: mean over rows and columns of (s - t)^2.
// Differentiable in both arguments; DimensionError unless shapes are equal
// [batch x d].
template <typename T>
BasicTensor<T> alignment_loss(const BasicTensor<T>& student,
                              const BasicTensor<T>& teacher, LossKind kind);

// Learning rate for optimizer update number `step` (1-based): linear warmup
// from 0 to learning_rate over warmup_steps, constant afterwards.
double lr_at(std::size_t step, const TrainConfig& config);

// Decoupled-weight-decay Adam over a fixed list of float parameters. Moments
// start at zero; step() consumes the parameters' current gradients.
class AdamW {
 public:
  AdamW(std::vector<Tensor*> params, double beta1 = 0.9, double beta2 = 0.999,
        double eps = 1e-8, double weight_decay = 0.01);

  void step(double lr);
  std::size_t steps() const { return t_; }

  std::span<const float> first_moment(std::size_t i) const { return m_[i]; }
  std::span<const float> second_moment(std::size_t i) const { return v_[i]; }

 private:
  std::vector<Tensor*> params_;
  std::vector<std::vector<float>> m_, v_;
  double beta1_, beta2_, eps_, weight_decay_;
  std::size_t t_ = 0;
};

struct StepRecord {
  std::size_t step = 0;
  double loss = 0.0;
  double lr = 0.0;
  bool operator==(const StepRecord&) const = default;
};

struct ValidationRecord {
  std::size_t step = 0;
  double distance = 0.0;  // mean Euclidean distance on the validation split
  bool operator==(const ValidationRecord&) const = default;
};

struct TrainHistory {
  std::vector<StepRecord> steps;
  std::vector<ValidationRecord> validation;
  std::vector<double> epoch_seconds;  // wall clock, not reproducible

  std::optional<double> initial_distance() const;
  std::optional<double> final_distance() const;

  // "step,loss,lr" rows with full round-trip precision.
  void write_csv(const std::filesystem::path& path) const;
};

// Mean Euclidean distance between teacher and student embeddings of
// `queries`. ContractError on an empty set. The value does not depend on
// batch_size.
double validate(const EncoderModel& teacher, const EncoderModel& student,
                std::span<const std::string> queries,
                std::size_t batch_size = kEncodeBatch);

struct TrainOptions {
  // Directory for precomputed teacher embeddings, keyed by teacher
  // fingerprint and query set. Results are identical with or without it.
  std::optional<std::filesystem::path> cache_dir;
};

struct TrainResult {
  EncoderModel student;
  TrainHistory history;
};

// Splits `queries`, then minimizes alignment_loss between the student and
// the frozen teacher on the training part, validating on the rest. Batches
// are drawn in an order shuffled per epoch from config.seed. The inputs are
// not modified. DimensionError if embedding sizes differ, ContractError if
// vocabularies or pooling differ.
TrainResult train(const EncoderModel& teacher, const EncoderModel& student,
                  std::span<const std::string> queries,
                  const TrainConfig& config, const TrainOptions& options = {});

// Teacher embeddings of tokenized rows, read from or written to cache_dir.
Tensor teacher_embeddings(const EncoderModel& teacher,
                          std::span<const std::vector<std::int32_t>> rows,
                          const std::optional<std::filesystem::path>& cache_dir);

// Deterministic permutation of 0..n-1 for the given seed.
std::vector<std::size_t> shuffled_order(std::size_t n, std::uint64_t seed);

}  // namespace qdistill
