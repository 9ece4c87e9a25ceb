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

// Acceptance runner: one PASS/FAIL line per criterion. Every threshold is a
// named constant below. Pass criterion names as arguments to run a subset.

#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "../support/oracles.hpp"
#include "../support/primitive_checks.hpp"
#include "../support/reference_deltas.hpp"
#include "qdistill/bench.hpp"
#include "qdistill/dataset.hpp"
#include "qdistill/distill.hpp"
#include "qdistill/evaluation.hpp"
#include "qdistill/model_io.hpp"
#include "qdistill/pipeline.hpp"
#include "qdistill/retrieval.hpp"
#include "qdistill/toy_data.hpp"

using namespace qdistill;
using namespace qdistill::testing;
namespace fs = std::filesystem;

namespace {

// Aggregation of the published deltas, in percentage points.
constexpr double kAggregateTolerancePoints = kAverageTolerancePoints;

// Identity extraction.
constexpr std::size_t kIdentityQueries = 1000;
constexpr double kIdentityMaxAbsDiff = 1e-5;
constexpr double kIdentityMaxInitialLoss = 1e-8;

// Oracles.
constexpr int kOracleInstances = 100;
constexpr double kNdcgTolerance = 1e-9;
constexpr std::size_t kSearchMaxDocs = 500;
constexpr std::size_t kSearchMaxDim = 64;

// Efficacy on the toy task.
constexpr int kEfficacySeeds = 5;
constexpr double kMinRetention = 0.80;
constexpr double kMinDistanceReduction = 0.50;

// Throughput.
constexpr std::size_t kBenchQueries = 4000;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* format, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), format, v);
  return buf;
}

void progress(const std::string& msg) { std::cerr << "  .. " << msg << std::endl; }

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

const fs::path kSourceDir = QDISTILL_SOURCE_DIR;
const fs::path kToyManifest = kSourceDir / "configs" / "toy.yaml";

class Workspace {
 public:
  Workspace()
      : root_(fs::temp_directory_path() /
              ("qdistill_acceptance_" + std::to_string(::getpid()))) {
    fs::remove_all(root_);
    fs::create_directories(root_);
  }
  ~Workspace() {
    std::error_code ec;
    fs::remove_all(root_, ec);
  }
  const fs::path& root() const { return root_; }

  // Full toy pipeline as configured in the repository, run once and shared.
  const PipelineResult& reference_run() {
    if (!reference_) {
      progress("running the toy pipeline (teacher pretraining included)");
      Manifest m = load_manifest(kToyManifest);
      m.output = root_ / "run_a";
      reference_ = run_pipeline(m);
    }
    return *reference_;
  }

  fs::path teacher_path() {
    reference_run();
    return root_ / "run_a" / "teacher.ckpt";
  }

 private:
  fs::path root_;
  std::optional<PipelineResult> reference_;
};

// --- criteria --------------------------------------------------------------

Outcome aggregate_arithmetic(Workspace&) {
  std::vector<double> changes;
  for (const auto& [name, pct] : kPublishedDeltas) changes.push_back(pct / 100.0);
  const double mean_pct = aggregate(changes).mean_change * 100.0;
  const double err = std::abs(mean_pct - kPublishedAverageDelta);
  return {err <= kAggregateTolerancePoints,
          "mean of " + std::to_string(changes.size()) + " deltas = " + fmt("%.4f", mean_pct) +
              "% vs " + fmt("%.2f", kPublishedAverageDelta) + "% (|diff| " + fmt("%.4f", err) +
              " <= " + fmt("%.2f", kAggregateTolerancePoints) + " pp)"};
}

Outcome identity_extraction(Workspace& ws) {
  const EncoderModel teacher = load(ws.teacher_path());
  LayerScheme all(teacher.config.num_layers);
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  const EncoderModel student = extract_layers(teacher, all);

  ToyConfig cfg;
  cfg.distill_queries = kIdentityQueries;
  cfg.seed = 1234;
  const auto queries = query_texts(make_toy_dataset(cfg).distill_queries);

  const Tensor t = encode(queries, teacher), s = encode(queries, student);
  double max_diff = 0.0;
  for (std::size_t i = 0; i < t.numel(); ++i) {
    max_diff = std::max(max_diff, std::abs(double(t[i]) - double(s[i])));
  }
  TrainConfig train_cfg = load_manifest(kToyManifest).train;
  train_cfg.epochs = 1;
  const TrainResult r = train(teacher, student, queries, train_cfg);
  const double initial_loss = r.history.steps.front().loss;
  const bool ok = max_diff <= kIdentityMaxAbsDiff && initial_loss < kIdentityMaxInitialLoss;
  return {ok, std::to_string(queries.size()) + " queries, max |diff| " + fmt("%.3g", max_diff) +
                  " (<= " + fmt("%g", kIdentityMaxAbsDiff) + "), initial " +
                  std::string(loss_kind_name(train_cfg.loss_kind)) + " loss " +
                  fmt("%.3g", initial_loss) + " (< " + fmt("%g", kIdentityMaxInitialLoss) + ")"};
}

Outcome gradients(Workspace&) {
  bool ok = true;
  double worst = 0.0;
  std::string worst_name;
  std::size_t checked = 0;
  auto note = [&](const std::string& name, const GradCheckResult& r) {
    checked += r.checked;
    if (!r.ok() || r.checked == 0) ok = false;
    if (r.max_rel_error >= worst) {
      worst = r.max_rel_error;
      worst_name = name + (r.worst.empty() ? "" : " [" + r.worst + "]");
    }
  };
  const auto prims = check_all_primitives();
  for (const auto& c : prims) note(c.name, c.result);
  note("end-to-end mse", check_alignment_end_to_end(LossKind::kMse));
  note("end-to-end euclidean", check_alignment_end_to_end(LossKind::kEuclidean));
  return {ok, std::to_string(prims.size()) + " primitives + 2 end-to-end losses, " +
                  std::to_string(checked) + " coordinates, h=" +
                  fmt("%g", kFiniteDifferenceStep) + ", max rel err " + fmt("%.2e", worst) +
                  " (< " + fmt("%g", kMaxRelativeError) + ") at " + worst_name};
}

Outcome ndcg_oracle(Workspace&) {
  std::mt19937_64 rng(424242);
  double worst = 0.0;
  std::size_t queries_total = 0;
  for (int inst = 0; inst < kOracleInstances; ++inst) {
    const std::size_t n_docs = 3 + rng() % 60;
    const std::size_t n_queries = 1 + rng() % 10;
    const std::size_t k = 1 + rng() % 20;
    Run run;
    Qrels qrels;
    std::map<std::string, std::vector<std::string>> orders;
    for (std::size_t q = 0; q < n_queries; ++q) {
      const std::string qid = "q" + std::to_string(q);
      // Coarse integer scores make ties common; ties are ordered by doc id.
      std::vector<std::pair<int, std::string>> scored;
      for (std::size_t d = 0; d < n_docs; ++d) {
        if (rng() % 4 == 0) continue;
        scored.emplace_back(static_cast<int>(rng() % 5), "d" + std::to_string(d));
      }
      std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
        return a.first != b.first ? a.first > b.first : a.second < b.second;
      });
      RankedList list;
      for (const auto& [s, id] : scored) {
        list.push_back({id, static_cast<float>(s)});
        orders[qid].push_back(id);
      }
      run[qid] = list;
      if (rng() % 6 != 0) {
        Judgments j;
        for (std::size_t d = 0; d < n_docs; ++d) {
          if (rng() % 3 == 0) j["d" + std::to_string(d)] = static_cast<int>(rng() % 4);
        }
        qrels[qid] = j;
      }
    }
    double expected = 0.0;
    for (const auto& [qid, ids] : orders) {
      const auto it = qrels.find(qid);
      expected += brute_ndcg(ids, it == qrels.end() ? Judgments{} : it->second, k);
    }
    // Queries whose list came out empty still count.
    expected /= static_cast<double>(run.size());
    worst = std::max(worst, std::abs(evaluate_run(run, qrels, k) - expected));
    queries_total += run.size();
  }
  return {worst <= kNdcgTolerance,
          std::to_string(kOracleInstances) + " instances, " + std::to_string(queries_total) +
              " queries, max |diff| " + fmt("%.2e", worst) + " (<= " +
              fmt("%g", kNdcgTolerance) + ")"};
}

Outcome search_oracle(Workspace&) {
  std::mt19937_64 rng(777);
  int mismatches = 0;
  std::size_t ties = 0;
  for (int inst = 0; inst < kOracleInstances; ++inst) {
    const std::size_t n = 1 + rng() % kSearchMaxDocs;
    const std::size_t d = 1 + rng() % kSearchMaxDim;
    const std::size_t k = 1 + rng() % 30;
    std::vector<std::string> ids(n);
    for (std::size_t i = 0; i < n; ++i) ids[i] = "doc-" + std::to_string(rng() % 100000) + "-" + std::to_string(i);
    std::shuffle(ids.begin(), ids.end(), rng);
    std::vector<float> embs(n * d), q(d);
    for (auto& v : embs) v = dyadic(rng);
    for (auto& v : q) v = dyadic(rng);
    const auto expected = exhaustive_search(ids, embs, d, q, k);
    for (std::size_t i = 1; i < expected.size(); ++i) ties += expected[i].second == expected[i - 1].second;
    const DenseIndex index = make_index(ids, Tensor({n, d}, embs), d, "oracle");
    auto same = [&](const RankedList& got) {
      if (got.size() != expected.size()) return false;
      for (std::size_t i = 0; i < got.size(); ++i) {
        if (got[i].doc_id != expected[i].first || got[i].score != expected[i].second) return false;
      }
      return true;
    };
    if (!same(search(index, q, k))) ++mismatches;
    if (!same(search_batch(index, Tensor({1, d}, q), k).front())) ++mismatches;
  }
  return {mismatches == 0, std::to_string(kOracleInstances) + " instances (n <= " +
                               std::to_string(kSearchMaxDocs) + ", d <= " +
                               std::to_string(kSearchMaxDim) + "), " + std::to_string(ties) +
                               " tied neighbours in results, " + std::to_string(mismatches) +
                               " mismatching rankings"};
}

Outcome efficacy(Workspace& ws) {
  const fs::path teacher = ws.teacher_path();
  const Manifest base = load_manifest(kToyManifest);
  std::vector<double> ret_fl, ret_mid, ret_rand, red_fl, dist_fl, dist_mid;
  std::string per_seed;
  bool every_seed_ok = true;
  for (int seed = 0; seed < kEfficacySeeds; ++seed) {
    progress("efficacy seed " + std::to_string(seed));
    Manifest m = base;
    m.seed = static_cast<std::uint64_t>(seed);
    m.train.seed = m.seed;
    m.teacher = TeacherSpec{teacher, std::nullopt};
    m.students.clear();
    StudentSpec fl{"first-last", LayerScheme{0, 5}, std::nullopt, std::nullopt, true};
    StudentSpec mid{"middle", LayerScheme{2, 3}, std::nullopt, std::nullopt, true};
    StudentSpec rnd{"random-2", std::nullopt, std::size_t{2}, std::nullopt, true};
    m.students = {fl, mid, rnd};
    m.bench.enabled = false;
    m.output = ws.root() / ("efficacy_" + std::to_string(seed));
    const PipelineResult r = run_pipeline(m);
    std::map<std::string, const MetricsReport*> by_name;
    for (const auto& rep : r.reports) by_name[rep.model] = &rep;
    std::map<std::string, const StudentOutcome*> outcome;
    for (const auto& s : r.students) outcome[s.name] = &s;

    const double rf = by_name.at("first-last")->summary.retention;
    const double rm = by_name.at("middle")->summary.retention;
    const double rr = by_name.at("random-2")->summary.retention;
    const auto* o = outcome.at("first-last");
    const double reduction = 1.0 - *o->final_distance / *o->initial_distance;
    ret_fl.push_back(rf);
    ret_mid.push_back(rm);
    ret_rand.push_back(rr);
    red_fl.push_back(reduction);
    dist_fl.push_back(*o->final_distance);
    dist_mid.push_back(*outcome.at("middle")->final_distance);
    every_seed_ok = every_seed_ok && rf >= kMinRetention && reduction >= kMinDistanceReduction;
    per_seed += " s" + std::to_string(seed) + ":" + fmt("%.3f", rf) + "/" + fmt("%.2f", reduction) +
                "/" + fmt("%.3f", rr);
  }
  auto mean = [](const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
  };
  const bool random_worse = mean(ret_rand) < mean(ret_fl);
  const bool trend = mean(dist_fl) <= mean(dist_mid);
  return {every_seed_ok && random_worse && trend,
          std::to_string(kEfficacySeeds) + " seeds; first-last retention " +
              fmt("%.4f", mean(ret_fl)) + " (each >= " + fmt("%.2f", kMinRetention) +
              "), distance reduction " + fmt("%.3f", mean(red_fl)) + " (each >= " +
              fmt("%.2f", kMinDistanceReduction) + "); random-2 retention " +
              fmt("%.4f", mean(ret_rand)) + " (< first-last); mean val distance first-last " +
              fmt("%.4f", mean(dist_fl)) + " <= middle " + fmt("%.4f", mean(dist_mid)) +
              "; per seed retention/reduction/random:" + per_seed};
}

Outcome throughput(Workspace& ws) {
  const EncoderModel teacher = load(ws.teacher_path());
  const EncoderModel one = extract_layers(teacher, {5});
  const EncoderModel two = extract_layers(teacher, {0, 5});
  const EncoderModel four = extract_layers(teacher, {0, 1, 4, 5});
  auto queries = query_texts(read_queries(kSourceDir / "data" / "toy" / "distill_queries.jsonl"));
  if (queries.size() > kBenchQueries) queries.resize(kBenchQueries);
  const BenchConfig cfg;  // batch sizes 4..64, median of 3
  progress("benchmarking 1/2/4/6-layer encoders on " + std::to_string(queries.size()) +
           " queries");
  const EncoderModel* models[] = {&one, &two, &four, &teacher};
  const auto results = measure_throughput(models, queries, cfg);

  bool monotone = true;
  std::string table;
  for (std::size_t bs : cfg.batch_sizes) {
    table += " bs" + std::to_string(bs) + ":";
    for (std::size_t i = 0; i < results.size(); ++i) {
      const double qps = results[i].at(bs).qps;
      table += (i ? ">" : "") + fmt("%.0f", qps);
      if (i > 0 && !(results[i - 1].at(bs).qps > qps)) monotone = false;
    }
  }
  const std::size_t lo = cfg.batch_sizes.front(), hi = cfg.batch_sizes.back();
  const double speed_lo = results[0].at(lo).qps / results[3].at(lo).qps;
  const double speed_hi = results[0].at(hi).qps / results[3].at(hi).qps;
  const bool growing = speed_hi >= speed_lo;
  return {monotone && growing,
          "qps 1>2>4>6 layers" + table + "; 1-layer speedup bs" + std::to_string(hi) + " " +
              fmt("%.3f", speed_hi) + " >= bs" + std::to_string(lo) + " " + fmt("%.3f", speed_lo) +
              " [" + results[0].hardware + "]"};
}

Outcome determinism(Workspace& ws) {
  const auto& first = ws.reference_run();
  progress("rerunning the toy pipeline");
  Manifest m = load_manifest(kToyManifest);
  m.output = ws.root() / "run_b";
  run_pipeline(m);
  const std::string a = read_text(first.output / "metrics.csv");
  const std::string b = read_text(m.output / "metrics.csv");
  const bool same_summary =
      read_text(first.output / "summary.json") == read_text(m.output / "summary.json");
  return {!a.empty() && a == b,
          "metrics.csv " + std::to_string(a.size()) + " bytes, " + (a == b ? "identical" : "DIFFERENT") +
              "; summary.json " + (same_summary ? "identical" : "different")};
}

struct Criterion {
  std::string name;
  std::function<Outcome(Workspace&)> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria = {
      {"aggregate-arithmetic", aggregate_arithmetic},
      {"identity-extraction", identity_extraction},
      {"gradient-correctness", gradients},
      {"ndcg-oracle", ndcg_oracle},
      {"search-oracle", search_oracle},
      {"determinism", determinism},
      {"distillation-efficacy", efficacy},
      {"throughput-monotonicity", throughput},
  };
  std::vector<std::string> wanted(argv + 1, argv + argc);
  Workspace ws;
  int failed = 0, ran = 0;
  for (const auto& c : criteria) {
    if (!wanted.empty() && std::find(wanted.begin(), wanted.end(), c.name) == wanted.end()) continue;
    ++ran;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run(ws);
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::cout << (o.pass ? "PASS " : "FAIL ") << c.name << ": " << o.detail << " ("
              << fmt("%.1f", secs) << " s)" << std::endl;
    failed += !o.pass;
  }
  std::cout << (ran - failed) << "/" << ran << " criteria passed" << std::endl;
  return failed == 0 ? 0 : 1;
}
