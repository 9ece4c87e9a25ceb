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

// Experiment manifests and the end-to-end pipeline:
// teacher -> document index -> students (extract or random init, distill)
// -> student query runs -> nDCG@10 reports, with optional throughput bench.
//
// Manifests are YAML. Relative paths resolve against the manifest's
// directory. See configs/toy.yaml for an annotated example.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "qdistill/bench.hpp"
#include "qdistill/distill.hpp"
#include "qdistill/encoder.hpp"
#include "qdistill/error.hpp"
#include "qdistill/evaluation.hpp"
#include "qdistill/model_io.hpp"
#include "qdistill/pretrain.hpp"

namespace qdistill {

// Invalid or unsatisfiable manifest; the message names the offending field.
class ManifestError : public ContractError {
 public:
  using ContractError::ContractError;
};

struct DatasetSpec {
  std::string name;
  std::filesystem::path corpus, queries, qrels;
};

struct TeacherPretrainSpec {
  std::filesystem::path pairs;
  std::filesystem::path vocab;
  EncoderConfig encoder;
  PretrainConfig train;
};

struct TeacherSpec {
  std::optional<std::filesystem::path> checkpoint;
  std::optional<TeacherPretrainSpec> pretrain;
};

struct StudentSpec {
  std::string name;
  std::optional<LayerScheme> layers;         // extract these teacher layers
  std::optional<std::size_t> random_layers;  // or random init at this depth
  std::optional<std::filesystem::path> checkpoint;  // or load as is
  bool distill = true;
};

struct BenchSpec {
  bool enabled = false;
  BenchConfig config;
  std::optional<std::filesystem::path> queries;  // default: train_queries
  std::size_t max_queries = 4000;
};

struct Manifest {
  std::uint64_t seed = 0;
  std::filesystem::path output;
  TeacherSpec teacher;
  std::vector<StudentSpec> students;
  std::vector<DatasetSpec> datasets;
  std::filesystem::path train_queries;
  TrainConfig train;
  std::optional<std::filesystem::path> cache_dir;
  BenchSpec bench;
  std::string source_text;  // manifest as written, copied into the output
};

// ManifestError for unknown keys, wrong types or missing required fields.
Manifest parse_manifest(const std::string& yaml, const std::filesystem::path& base_dir);
Manifest load_manifest(const std::filesystem::path& path);

// ManifestError naming the first field whose path does not exist.
void check_paths(const Manifest& manifest);

struct StudentOutcome {
  std::string name;
  std::string fingerprint;
  std::size_t num_layers = 0;
  Provenance provenance;
  std::optional<double> initial_distance, final_distance;
};

struct PipelineResult {
  std::filesystem::path output;
  std::string teacher_fingerprint;
  std::vector<StudentOutcome> students;
  std::vector<MetricsReport> reports;
  std::vector<BenchResult> bench;
};

// Runs every stage, writing into a staging directory that replaces
// manifest.output only on success. Files written:
//   manifest.yaml, summary.json, metrics.csv, metrics.txt,
//   teacher.ckpt (when pretrained), students/<name>.ckpt,
//   history/<name>.csv, runs/<dataset>/<model>.trec, index/<dataset>.adix,
//   and with bench enabled bench.csv, speedup.csv, speedup.txt.
// metrics.csv and summary.json depend only on the manifest and seed.
PipelineResult run_pipeline(const Manifest& manifest, std::ostream* log = nullptr);

// Retention and speedup tables from a finished output directory.
std::string render_report(const std::filesystem::path& output_dir);

}  // namespace qdistill
