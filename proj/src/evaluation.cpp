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

#include "qdistill/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include "qdistill/error.hpp"

namespace qdistill {
namespace {

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream ss(line);
  std::string f;
  while (ss >> f) out.push_back(f);
  return out;
}

bool parse_int(const std::string& s, int& out) {
  std::size_t used = 0;
  try {
    out = std::stoi(s, &used);
  } catch (const std::exception&) {
    return false;
  }
  return used == s.size();
}

std::string fmt(const char* format, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), format, v);
  return buf;
}

}  // namespace

Qrels read_qrels(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  Qrels qrels;
  std::string line;
  bool first = true;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    const auto fields = split_fields(line);
    if (fields.empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(n);
    int grade = 0;
    if (fields.size() != 3 || !parse_int(fields[2], grade)) {
      if (first) {
        first = false;
        continue;
      }
      throw FormatError(where + ": expected 'query-id<TAB>corpus-id<TAB>score'");
    }
    first = false;
    if (grade < 0) throw FormatError(where + ": negative relevance grade");
    qrels[fields[0]][fields[1]] = grade;
  }
  return qrels;
}

void write_qrels(const Qrels& qrels, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << "query-id\tcorpus-id\tscore\n";
  for (const auto& [qid, judged] : qrels) {
    for (const auto& [doc, grade] : judged) out << qid << '\t' << doc << '\t' << grade << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

double ndcg_at_k(const RankedList& ranking, const Judgments& judgments,
                 std::size_t k) {
  if (k == 0) throw ContractError("ndcg: k must be >= 1");
  std::unordered_set<std::string> seen;
  for (const auto& r : ranking) {
    if (!seen.insert(r.doc_id).second) {
      throw ContractError("ndcg: document '" + r.doc_id + "' ranked twice");
    }
  }
  std::vector<int> grades;
  for (const auto& [doc, g] : judgments) {
    if (g > 0) grades.push_back(g);
  }
  if (grades.empty()) return 0.0;
  std::sort(grades.begin(), grades.end(), std::greater<>());

  double idcg = 0.0;
  for (std::size_t i = 0; i < std::min(k, grades.size()); ++i) {
    idcg += grades[i] / std::log2(static_cast<double>(i) + 2.0);
  }
  double dcg = 0.0;
  for (std::size_t i = 0; i < std::min(k, ranking.size()); ++i) {
    const auto it = judgments.find(ranking[i].doc_id);
    if (it != judgments.end() && it->second > 0) {
      dcg += it->second / std::log2(static_cast<double>(i) + 2.0);
    }
  }
  return dcg / idcg;
}

std::map<std::string, double> per_query_ndcg(const Run& run, const Qrels& qrels,
                                             std::size_t k) {
  static const Judgments kNone;
  std::map<std::string, double> out;
  for (const auto& [qid, ranking] : run) {
    const auto it = qrels.find(qid);
    out[qid] = ndcg_at_k(ranking, it == qrels.end() ? kNone : it->second, k);
  }
  return out;
}

double evaluate_run(const Run& run, const Qrels& qrels, std::size_t k) {
  if (run.empty()) throw ContractError("evaluate_run: empty run");
  double total = 0.0;
  for (const auto& [qid, v] : per_query_ndcg(run, qrels, k)) total += v;
  return total / static_cast<double>(run.size());
}

double relative_change(double student, double teacher) {
  if (!(teacher > 0.0)) {
    throw RangeError("relative_change: teacher metric must be > 0, got " +
                     fmt("%g", teacher));
  }
  return (student - teacher) / teacher;
}

Aggregate aggregate(std::span<const double> relative_changes) {
  if (relative_changes.empty()) throw ContractError("aggregate: no rows");
  double total = 0.0;
  for (double c : relative_changes) total += c;
  Aggregate a;
  a.mean_change = total / static_cast<double>(relative_changes.size());
  a.retention = 1.0 + a.mean_change;
  return a;
}

MetricsReport make_report(std::string model, std::span<const DatasetScores> scores) {
  MetricsReport r;
  r.model = std::move(model);
  std::vector<double> changes;
  for (const auto& s : scores) {
    const double c = relative_change(s.student, s.teacher);
    r.rows.push_back({s.dataset, s.teacher, s.student, c});
    changes.push_back(c);
  }
  r.summary = aggregate(changes);
  return r;
}

std::string metrics_csv(std::span<const MetricsReport> reports) {
  std::string out = "model,dataset,teacher_ndcg10,student_ndcg10,relative_change,retention\n";
  for (const auto& r : reports) {
    for (const auto& row : r.rows) {
      out += r.model + "," + row.dataset + "," + fmt("%.6f", row.teacher) + "," +
             fmt("%.6f", row.student) + "," + fmt("%.6f", row.change) + ",\n";
    }
    out += r.model + ",average,,," + fmt("%.6f", r.summary.mean_change) + "," +
           fmt("%.6f", r.summary.retention) + "\n";
  }
  return out;
}

void write_metrics_csv(std::span<const MetricsReport> reports,
                       const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << metrics_csv(reports);
  if (!out) throw IoError("failed writing " + path.string());
}

std::string format_metrics_table(std::span<const MetricsReport> reports) {
  std::vector<std::vector<std::string>> cells = {
      {"model", "dataset", "teacher nDCG@10", "student nDCG@10", "change", "retention"}};
  for (const auto& r : reports) {
    for (const auto& row : r.rows) {
      cells.push_back({r.model, row.dataset, fmt("%.4f", row.teacher),
                       fmt("%.4f", row.student), fmt("%+.2f%%", 100.0 * row.change), ""});
    }
    cells.push_back({r.model, "average", "", "", fmt("%+.2f%%", 100.0 * r.summary.mean_change),
                     fmt("%.1f%%", 100.0 * r.summary.retention)});
  }
  std::vector<std::size_t> width(cells[0].size(), 0);
  for (const auto& row : cells) {
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  }
  std::string out;
  for (std::size_t r = 0; r < cells.size(); ++r) {
    for (std::size_t c = 0; c < cells[r].size(); ++c) {
      const auto& s = cells[r][c];
      const std::string pad(width[c] - s.size(), ' ');
      // Text columns left-aligned, numbers right-aligned.
      out += c < 2 ? s + pad : pad + s;
      out += c + 1 < cells[r].size() ? "  " : "\n";
    }
    if (r == 0) {
      std::size_t total = 0;
      for (auto w : width) total += w + 2;
      out += std::string(total - 2, '-') + "\n";
    }
  }
  return out;
}

}  // namespace qdistill
