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

// Exhaustive dot-product retrieval. Documents are embedded once (typically by
// the full teacher); queries may be embedded by any encoder with the same
// output dimension.

#include <cstddef>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "qdistill/dataset.hpp"
#include "qdistill/encoder.hpp"

namespace qdistill {

struct DenseIndex {
  std::vector<std::string> doc_ids;
  Tensor embeddings;         // [doc_ids.size() x dim]
  std::size_t dim = 0;
  std::string fingerprint;   // of the encoder that built it

  std::size_t size() const { return doc_ids.size(); }
};

// Validates ids (unique) and the embedding shape.
DenseIndex make_index(std::vector<std::string> doc_ids, Tensor embeddings,
                      std::size_t dim, std::string fingerprint);

// FormatError on duplicate document ids.
DenseIndex build_index(std::span<const Document> corpus,
                       const EncoderModel& encoder,
                       std::size_t batch_size = kEncodeBatch);

struct ScoredDoc {
  std::string doc_id;
  float score = 0.0f;
  bool operator==(const ScoredDoc&) const = default;
};

using RankedList = std::vector<ScoredDoc>;

// Query id -> ranking, iterated in ascending query id.
using Run = std::map<std::string, RankedList>;

// Top-k documents by dot product, descending; equal scores are ordered by
// ascending doc_id (byte-wise). k larger than the index returns every
// document. ContractError for k == 0, DimensionError on a size mismatch.
RankedList search(const DenseIndex& index, std::span<const float> query,
                  std::size_t k);

// Row-wise search() over a [queries x dim] matrix, scored with one GEMM.
std::vector<RankedList> search_batch(const DenseIndex& index,
                                     const Tensor& queries, std::size_t k);

// Encodes the queries with `query_encoder` and ranks them against the
// index. ContractError on duplicate query ids.
Run run_retrieval(std::span<const Query> queries, const DenseIndex& index,
                  const EncoderModel& query_encoder, std::size_t k = 10,
                  std::size_t batch_size = kEncodeBatch);

// "qid Q0 docid rank score tag" lines; ranks start at 1.
void write_trec(const Run& run, const std::filesystem::path& path,
                const std::string& tag);
Run read_trec(const std::filesystem::path& path);

// Binary index file: "ADIX", version byte, uint64 header length, JSON header
// {dim, count, fingerprint, doc_ids}, zero padding to 64 bytes, float32
// embeddings.
void save_index(const DenseIndex& index, const std::filesystem::path& path);
DenseIndex load_index(const std::filesystem::path& path);

}  // namespace qdistill
