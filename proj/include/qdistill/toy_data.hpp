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

// Synthetic entity-lookup retrieval task small enough to train on a laptop
// CPU. Every document describes one made-up two-syllable entity ("kalo",
// tokenized as "ka ##lo") with a few topic words and a reference to another
// entity. A query names an entity; its own document is grade 2 and documents
// that reference the entity are grade 1.

#include <cstdint>
#include <filesystem>
#include <vector>

#include "qdistill/dataset.hpp"
#include "qdistill/evaluation.hpp"
#include "qdistill/pretrain.hpp"
#include "qdistill/tokenizer.hpp"

namespace qdistill {

struct ToyConfig {
  std::size_t num_docs = 200;
  std::size_t num_queries = 100;        // evaluation queries
  std::size_t pairs_per_doc = 12;       // teacher training pairs
  std::size_t distill_queries = 4000;   // unlabeled student training queries
  std::uint64_t seed = 7;
};

struct ToyDataset {
  Vocab vocab;
  std::vector<Document> corpus;
  std::vector<Query> queries;
  Qrels qrels;
  std::vector<TrainingPair> train_pairs;
  std::vector<Query> distill_queries;
};

// Deterministic for a given config on every platform.
ToyDataset make_toy_dataset(const ToyConfig& config = {});

// File names used by write_toy_dataset and the bundled data directory.
struct ToyFiles {
  static constexpr const char* kVocab = "vocab.txt";
  static constexpr const char* kCorpus = "corpus.jsonl";
  static constexpr const char* kQueries = "queries.jsonl";
  static constexpr const char* kQrels = "qrels.tsv";
  static constexpr const char* kTrainPairs = "train_pairs.jsonl";
  static constexpr const char* kDistillQueries = "distill_queries.jsonl";
};

void write_toy_dataset(const ToyDataset& data, const std::filesystem::path& dir);

}  // namespace qdistill
