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

// Siamese contrastive training of a teacher on (query, relevant document)
// pairs with in-batch negatives. Used to give the toy teacher a retrieval
// skill worth distilling.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "qdistill/encoder.hpp"

namespace qdistill {

struct TrainingPair {
  std::string query;
  std::string document;
};

// JSON lines {"query", "document"}.
std::vector<TrainingPair> read_training_pairs(const std::filesystem::path& path);
void write_training_pairs(const std::filesystem::path& path,
                          std::span<const TrainingPair> pairs);

struct PretrainConfig {
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  std::size_t warmup_steps = 50;
  std::size_t epochs = 3;
  double weight_decay = 0.01;
  // Dot scores are multiplied by this before the softmax.
  double score_scale = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct PretrainResult {
  EncoderModel model;
  std::vector<double> losses;  // one per optimizer step
};

// Minimizes the cross-entropy of each query against the documents of its
// batch, the paired document being the target. ContractError on no pairs.
PretrainResult pretrain(const EncoderModel& model,
                        std::span<const TrainingPair> pairs,
                        const PretrainConfig& config);

}  // namespace qdistill
