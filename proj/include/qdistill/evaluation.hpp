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

// nDCG@k scoring and teacher-relative aggregation.
//
// Gain is linear in the grade and the discount is log2(rank + 1). A query
// whose judged grades are all zero, or that has no judgments at all, scores
// 0 and still counts towards the mean.

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "qdistill/retrieval.hpp"

namespace qdistill {

using Judgments = std::map<std::string, int>;     // doc id -> grade >= 0
using Qrels = std::map<std::string, Judgments>;   // query id -> judgments

// Tab-separated "query-id corpus-id score" lines; a first line whose score
// column is not an integer is treated as a header. FormatError on malformed
// or negative grades.
Qrels read_qrels(const std::filesystem::path& path);
void write_qrels(const Qrels& qrels, const std::filesystem::path& path);

// ContractError if the list repeats a document or k == 0.
double ndcg_at_k(const RankedList& ranking, const Judgments& judgments,
                 std::size_t k = 10);

// nDCG@k per run query.
std::map<std::string, double> per_query_ndcg(const Run& run, const Qrels& qrels,
                                             std::size_t k = 10);

// Arithmetic mean of per_query_ndcg. ContractError on an empty run.
double evaluate_run(const Run& run, const Qrels& qrels, std::size_t k = 10);

// (student - teacher) / teacher. RangeError unless teacher > 0.
double relative_change(double student, double teacher);

struct Aggregate {
  double mean_change = 0.0;  // fraction, e.g. -0.1001
  double retention = 1.0;    // 1 + mean_change
};

// Unweighted mean of the given relative changes. ContractError when empty.
Aggregate aggregate(std::span<const double> relative_changes);

struct ReportRow {
  std::string dataset;
  double teacher = 0.0;
  double student = 0.0;
  double change = 0.0;
};

struct MetricsReport {
  std::string model;
  std::vector<ReportRow> rows;
  Aggregate summary;
};

struct DatasetScores {
  std::string dataset;
  double teacher = 0.0;
  double student = 0.0;
};

MetricsReport make_report(std::string model, std::span<const DatasetScores> scores);

// One row per (model, dataset) plus an "average" row per model holding the
// mean change and retention. Fixed formatting, so equal inputs give equal
// bytes.
void write_metrics_csv(std::span<const MetricsReport> reports,
                       const std::filesystem::path& path);
std::string metrics_csv(std::span<const MetricsReport> reports);

// Aligned plain-text table of the same content.
std::string format_metrics_table(std::span<const MetricsReport> reports);

}  // namespace qdistill
