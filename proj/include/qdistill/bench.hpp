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

// Query-encoding throughput. Each timed pass runs tokenization, padding,
// the encoder and pooling over the whole query set on the calling thread;
// model loading and file I/O happen outside the timed region.

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "qdistill/encoder.hpp"

namespace qdistill {

struct BenchConfig {
  std::vector<std::size_t> batch_sizes = {4, 8, 16, 32, 64};
  std::size_t repeats = 3;
  // Untimed batches encoded before timing each batch size.
  std::size_t warmup_batches = 2;
};

struct BenchPoint {
  std::size_t batch_size = 0;
  std::vector<double> elapsed_s;  // one per repeat, in run order
  double median_s = 0.0;
  double qps = 0.0;               // query_count / median_s
};

struct BenchResult {
  std::string model;
  std::size_t num_layers = 0;
  std::size_t query_count = 0;
  std::size_t repeats = 0;
  std::string hardware;
  std::vector<BenchPoint> points;

  // RangeError if batch_size was not measured.
  const BenchPoint& at(std::size_t batch_size) const;
};

double median(std::vector<double> samples);

// Builds a point from raw timings. ContractError on no samples or a
// non-positive median.
BenchPoint summarize(std::size_t batch_size, std::vector<double> elapsed_s,
                     std::size_t query_count);

// Times several models under identical conditions. Within each batch size
// every model is warmed up, then the timed passes alternate between models
// (repeat 1 of each model, repeat 2 of each, ...), so slow drifts in machine
// speed affect all models alike. ContractError on an empty query set, no
// batch sizes, a zero batch size or zero repeats.
std::vector<BenchResult> measure_throughput(
    std::span<const EncoderModel* const> models, std::span<const std::string> queries,
    const BenchConfig& config = {});

// Single-model form of the above.
BenchResult measure_throughput(const EncoderModel& model,
                               std::span<const std::string> queries,
                               const BenchConfig& config = {});

// CPU model and active kernel set, e.g. "Intel(R) Xeon(R) ... / avx2".
std::string hardware_description();

struct SpeedupRow {
  std::string model;
  std::size_t num_layers = 0;
  std::vector<double> speedup;  // aligned with SpeedupTable::batch_sizes
};

struct SpeedupTable {
  std::string baseline;
  std::vector<std::size_t> batch_sizes;
  std::vector<SpeedupRow> rows;
};

// speedup = model qps / baseline qps per batch size. ContractError when
// batch-size sets differ.
SpeedupTable compare(const BenchResult& baseline,
                     std::span<const BenchResult> results);

// "model,batch_size,repeat,elapsed_s,qps" per repeat, then one row per
// (model, batch_size) with repeat "median".
std::string bench_csv(std::span<const BenchResult> results);
void write_bench_csv(std::span<const BenchResult> results,
                     const std::filesystem::path& path);

std::string speedup_csv(const SpeedupTable& table);
// Horizontal bar chart, one block per batch size.
std::string speedup_chart(const SpeedupTable& table);

}  // namespace qdistill
