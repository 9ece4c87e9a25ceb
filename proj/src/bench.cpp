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

#include "qdistill/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>

#include "qdistill/error.hpp"
#include "qdistill/simd/kernels.hpp"

namespace qdistill {
namespace {

std::string fmt(const char* format, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), format, v);
  return buf;
}

}  // namespace

const BenchPoint& BenchResult::at(std::size_t batch_size) const {
  for (const auto& p : points) {
    if (p.batch_size == batch_size) return p;
  }
  throw RangeError("bench: batch size " + std::to_string(batch_size) +
                   " not measured for " + model);
}

double median(std::vector<double> samples) {
  if (samples.empty()) throw ContractError("median of no samples");
  std::sort(samples.begin(), samples.end());
  const std::size_t n = samples.size();
  return n % 2 ? samples[n / 2] : 0.5 * (samples[n / 2 - 1] + samples[n / 2]);
}

BenchPoint summarize(std::size_t batch_size, std::vector<double> elapsed_s,
                     std::size_t query_count) {
  BenchPoint p;
  p.batch_size = batch_size;
  p.median_s = median(elapsed_s);
  if (!(p.median_s > 0.0)) throw ContractError("bench: non-positive elapsed time");
  p.elapsed_s = std::move(elapsed_s);
  p.qps = static_cast<double>(query_count) / p.median_s;
  return p;
}

std::vector<BenchResult> measure_throughput(
    std::span<const EncoderModel* const> models, std::span<const std::string> queries,
    const BenchConfig& config) {
  if (queries.empty()) throw ContractError("bench: empty query set");
  if (config.batch_sizes.empty()) throw ContractError("bench: no batch sizes");
  if (config.repeats == 0) throw ContractError("bench: repeats must be >= 1");
  for (std::size_t bs : config.batch_sizes) {
    if (bs == 0) throw ContractError("bench: batch size must be >= 1");
  }

  const std::string hardware = hardware_description();
  std::vector<BenchResult> results;
  for (const EncoderModel* m : models) {
    BenchResult r;
    r.model = m->id;
    r.num_layers = m->config.num_layers;
    r.query_count = queries.size();
    r.repeats = config.repeats;
    r.hardware = hardware;
    results.push_back(std::move(r));
  }

  using Clock = std::chrono::steady_clock;
  for (std::size_t bs : config.batch_sizes) {
    const std::size_t warm = std::min(queries.size(), bs * config.warmup_batches);
    for (const EncoderModel* m : models) encode(queries.first(warm), *m, bs);

    std::vector<std::vector<double>> elapsed(models.size());
    for (std::size_t r = 0; r < config.repeats; ++r) {
      for (std::size_t i = 0; i < models.size(); ++i) {
        const auto start = Clock::now();
        const Tensor out = encode(queries, *models[i], bs);
        const auto stop = Clock::now();
        if (out.dim(0) != queries.size()) throw NumericError("bench: short encode");
        elapsed[i].push_back(std::chrono::duration<double>(stop - start).count());
      }
    }
    for (std::size_t i = 0; i < models.size(); ++i) {
      results[i].points.push_back(summarize(bs, std::move(elapsed[i]), queries.size()));
    }
  }
  return results;
}

BenchResult measure_throughput(const EncoderModel& model,
                               std::span<const std::string> queries,
                               const BenchConfig& config) {
  const EncoderModel* one[] = {&model};
  return std::move(measure_throughput(one, queries, config).front());
}

std::string hardware_description() {
  std::string cpu = "unknown cpu";
  std::ifstream in("/proc/cpuinfo");
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind("model name", 0) == 0) {
      const auto colon = line.find(':');
      if (colon != std::string::npos) {
        cpu = line.substr(line.find_first_not_of(" \t", colon + 1));
      }
      break;
    }
  }
  return cpu + " / " + std::string(simd::active().name);
}

SpeedupTable compare(const BenchResult& baseline,
                     std::span<const BenchResult> results) {
  SpeedupTable table;
  table.baseline = baseline.model;
  for (const auto& p : baseline.points) table.batch_sizes.push_back(p.batch_size);
  for (const auto& r : results) {
    std::vector<std::size_t> sizes;
    for (const auto& p : r.points) sizes.push_back(p.batch_size);
    if (sizes != table.batch_sizes) {
      throw ContractError("compare: " + r.model +
                          " was measured at different batch sizes than " +
                          baseline.model);
    }
    SpeedupRow row{r.model, r.num_layers, {}};
    for (std::size_t i = 0; i < sizes.size(); ++i) {
      row.speedup.push_back(r.points[i].qps / baseline.points[i].qps);
    }
    table.rows.push_back(std::move(row));
  }
  return table;
}

std::string bench_csv(std::span<const BenchResult> results) {
  std::string out;
  if (!results.empty()) out += "# hardware: " + results.front().hardware + "\n";
  out += "model,batch_size,repeat,elapsed_s,qps\n";
  for (const auto& r : results) {
    for (const auto& p : r.points) {
      for (std::size_t i = 0; i < p.elapsed_s.size(); ++i) {
        out += r.model + "," + std::to_string(p.batch_size) + "," + std::to_string(i) +
               "," + fmt("%.6f", p.elapsed_s[i]) + "," +
               fmt("%.1f", static_cast<double>(r.query_count) / p.elapsed_s[i]) + "\n";
      }
    }
  }
  for (const auto& r : results) {
    for (const auto& p : r.points) {
      out += r.model + "," + std::to_string(p.batch_size) + ",median," +
             fmt("%.6f", p.median_s) + "," + fmt("%.1f", p.qps) + "\n";
    }
  }
  return out;
}

void write_bench_csv(std::span<const BenchResult> results,
                     const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << bench_csv(results);
  if (!out) throw IoError("failed writing " + path.string());
}

std::string speedup_csv(const SpeedupTable& table) {
  std::string out = "model,layers";
  for (std::size_t bs : table.batch_sizes) out += ",bs" + std::to_string(bs);
  out += "\n";
  for (const auto& row : table.rows) {
    out += row.model + "," + std::to_string(row.num_layers);
    for (double s : row.speedup) out += "," + fmt("%.3f", s);
    out += "\n";
  }
  return out;
}

std::string speedup_chart(const SpeedupTable& table) {
  constexpr double kCellsPerUnit = 8.0;
  std::size_t name_width = 0;
  double peak = 1.0;
  for (const auto& row : table.rows) {
    name_width = std::max(name_width, row.model.size());
    for (double s : row.speedup) peak = std::max(peak, s);
  }
  const double cells = std::min(kCellsPerUnit, 60.0 / peak);
  std::string out = "speedup over " + table.baseline + "\n";
  for (std::size_t i = 0; i < table.batch_sizes.size(); ++i) {
    out += "batch " + std::to_string(table.batch_sizes[i]) + "\n";
    for (const auto& row : table.rows) {
      const auto bar = static_cast<std::size_t>(row.speedup[i] * cells + 0.5);
      out += "  " + row.model + std::string(name_width - row.model.size(), ' ') + " |" +
             std::string(bar, '#') + " " + fmt("%.2fx", row.speedup[i]) + "\n";
    }
  }
  return out;
}

}  // namespace qdistill
