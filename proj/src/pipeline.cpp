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

#include "qdistill/pipeline.hpp"

#include <fstream>
#include <ostream>
#include <set>
#include <sstream>

#include <unistd.h>
#include <yaml-cpp/yaml.h>

#include "json.hpp"
#include "qdistill/dataset.hpp"
#include "qdistill/retrieval.hpp"

namespace qdistill {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

void check_keys(const YAML::Node& node, const std::string& where,
                const std::set<std::string>& allowed) {
  if (!node.IsMap()) throw ManifestError("manifest: '" + where + "' must be a mapping");
  for (const auto& kv : node) {
    const auto key = kv.first.as<std::string>();
    if (!allowed.count(key)) {
      throw ManifestError("manifest: unknown field '" +
                          (where.empty() ? key : where + "." + key) + "'");
    }
  }
}

std::string join(const std::string& where, const std::string& key) {
  return where.empty() ? key : where + "." + key;
}

template <typename T>
T require(const YAML::Node& node, const std::string& where, const std::string& key) {
  const auto field = join(where, key);
  if (!node[key]) throw ManifestError("manifest: missing required field '" + field + "'");
  try {
    return node[key].as<T>();
  } catch (const YAML::Exception&) {
    throw ManifestError("manifest: field '" + field + "' has the wrong type");
  }
}

template <typename T>
void optional_field(const YAML::Node& node, const std::string& where,
                    const std::string& key, T& out) {
  if (!node[key]) return;
  try {
    out = node[key].as<T>();
  } catch (const YAML::Exception&) {
    throw ManifestError("manifest: field '" + join(where, key) + "' has the wrong type");
  }
}

fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() ? path : (base / path).lexically_normal();
}

EncoderConfig parse_encoder(const YAML::Node& n, const std::string& where) {
  check_keys(n, where, {"layers", "hidden", "heads", "ff", "max_len", "pooling"});
  EncoderConfig c;
  optional_field(n, where, "layers", c.num_layers);
  optional_field(n, where, "hidden", c.hidden_dim);
  optional_field(n, where, "heads", c.num_heads);
  optional_field(n, where, "ff", c.ff_dim);
  optional_field(n, where, "max_len", c.max_len);
  std::string pooling(pooling_name(c.pooling));
  optional_field(n, where, "pooling", pooling);
  try {
    c.pooling = parse_pooling(pooling);
  } catch (const Error& e) {
    throw ManifestError("manifest: field '" + join(where, "pooling") + "': " + e.what());
  }
  return c;
}

TrainConfig parse_train(const YAML::Node& n, const std::string& where) {
  check_keys(n, where, {"batch_size", "learning_rate", "warmup_steps", "epochs", "loss",
                        "weight_decay", "val_fraction", "validate_every"});
  TrainConfig c;
  optional_field(n, where, "batch_size", c.batch_size);
  optional_field(n, where, "learning_rate", c.learning_rate);
  optional_field(n, where, "warmup_steps", c.warmup_steps);
  optional_field(n, where, "epochs", c.epochs);
  optional_field(n, where, "weight_decay", c.weight_decay);
  optional_field(n, where, "val_fraction", c.val_fraction);
  optional_field(n, where, "validate_every", c.validate_every);
  std::string loss(loss_kind_name(c.loss_kind));
  optional_field(n, where, "loss", loss);
  try {
    c.loss_kind = parse_loss_kind(loss);
    c.validate();
  } catch (const Error& e) {
    throw ManifestError("manifest: '" + where + "': " + e.what());
  }
  return c;
}

PretrainConfig parse_pretrain_train(const YAML::Node& n, const std::string& where) {
  check_keys(n, where, {"batch_size", "learning_rate", "warmup_steps", "epochs",
                        "weight_decay", "score_scale"});
  PretrainConfig c;
  optional_field(n, where, "batch_size", c.batch_size);
  optional_field(n, where, "learning_rate", c.learning_rate);
  optional_field(n, where, "warmup_steps", c.warmup_steps);
  optional_field(n, where, "epochs", c.epochs);
  optional_field(n, where, "weight_decay", c.weight_decay);
  optional_field(n, where, "score_scale", c.score_scale);
  try {
    c.validate();
  } catch (const Error& e) {
    throw ManifestError("manifest: '" + where + "': " + e.what());
  }
  return c;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json report_json(const MetricsReport& r) {
  json rows = json::array();
  for (const auto& row : r.rows) {
    rows.push_back({{"dataset", row.dataset}, {"teacher_ndcg10", row.teacher},
                    {"student_ndcg10", row.student}, {"relative_change", row.change}});
  }
  return {{"model", r.model}, {"rows", rows},
          {"mean_change", r.summary.mean_change}, {"retention", r.summary.retention}};
}

MetricsReport report_from_json(const json& j) {
  MetricsReport r;
  r.model = j.at("model").get<std::string>();
  for (const auto& row : j.at("rows")) {
    r.rows.push_back({row.at("dataset").get<std::string>(),
                      row.at("teacher_ndcg10").get<double>(),
                      row.at("student_ndcg10").get<double>(),
                      row.at("relative_change").get<double>()});
  }
  r.summary.mean_change = j.at("mean_change").get<double>();
  r.summary.retention = j.at("retention").get<double>();
  return r;
}

json bench_json(const BenchResult& b) {
  json points = json::array();
  for (const auto& p : b.points) {
    points.push_back({{"batch_size", p.batch_size}, {"elapsed_s", p.elapsed_s},
                      {"median_s", p.median_s}, {"qps", p.qps}});
  }
  return {{"model", b.model}, {"num_layers", b.num_layers}, {"query_count", b.query_count},
          {"repeats", b.repeats}, {"hardware", b.hardware}, {"points", points}};
}

BenchResult bench_from_json(const json& j) {
  BenchResult b;
  b.model = j.at("model").get<std::string>();
  b.num_layers = j.at("num_layers").get<std::size_t>();
  b.query_count = j.at("query_count").get<std::size_t>();
  b.repeats = j.at("repeats").get<std::size_t>();
  b.hardware = j.at("hardware").get<std::string>();
  for (const auto& p : j.at("points")) {
    BenchPoint bp;
    bp.batch_size = p.at("batch_size").get<std::size_t>();
    bp.elapsed_s = p.at("elapsed_s").get<std::vector<double>>();
    bp.median_s = p.at("median_s").get<double>();
    bp.qps = p.at("qps").get<double>();
    b.points.push_back(std::move(bp));
  }
  return b;
}

class Staging {
 public:
  explicit Staging(fs::path target) : target_(std::move(target)) {
    dir_ = target_;
    dir_ += ".partial-" + std::to_string(::getpid());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  ~Staging() {
    if (!committed_) {
      std::error_code ec;
      fs::remove_all(dir_, ec);
    }
  }
  const fs::path& dir() const { return dir_; }
  void commit() {
    fs::remove_all(target_);
    fs::rename(dir_, target_);
    committed_ = true;
  }

 private:
  fs::path target_, dir_;
  bool committed_ = false;
};

}  // namespace

Manifest parse_manifest(const std::string& yaml, const fs::path& base_dir) {
  YAML::Node root;
  try {
    root = YAML::Load(yaml);
  } catch (const YAML::Exception& e) {
    throw ManifestError(std::string("manifest: ") + e.what());
  }
  check_keys(root, "", {"seed", "output", "teacher", "students", "datasets",
                        "train_queries", "train", "cache_dir", "bench"});
  Manifest m;
  m.source_text = yaml;
  m.seed = require<std::uint64_t>(root, "", "seed");
  m.output = resolve(base_dir, require<std::string>(root, "", "output"));
  m.train_queries = resolve(base_dir, require<std::string>(root, "", "train_queries"));

  if (!root["teacher"]) throw ManifestError("manifest: missing required field 'teacher'");
  const YAML::Node t = root["teacher"];
  check_keys(t, "teacher", {"checkpoint", "pretrain"});
  if (t["checkpoint"]) {
    m.teacher.checkpoint = resolve(base_dir, require<std::string>(t, "teacher", "checkpoint"));
  }
  if (t["pretrain"]) {
    const YAML::Node p = t["pretrain"];
    check_keys(p, "teacher.pretrain", {"pairs", "vocab", "encoder", "train"});
    TeacherPretrainSpec spec;
    spec.pairs = resolve(base_dir, require<std::string>(p, "teacher.pretrain", "pairs"));
    spec.vocab = resolve(base_dir, require<std::string>(p, "teacher.pretrain", "vocab"));
    if (p["encoder"]) spec.encoder = parse_encoder(p["encoder"], "teacher.pretrain.encoder");
    if (p["train"]) spec.train = parse_pretrain_train(p["train"], "teacher.pretrain.train");
    spec.train.seed = m.seed;
    m.teacher.pretrain = std::move(spec);
  }
  if (m.teacher.checkpoint.has_value() == m.teacher.pretrain.has_value()) {
    throw ManifestError(
        "manifest: 'teacher' needs exactly one of 'checkpoint' or 'pretrain'");
  }

  if (!root["datasets"] || !root["datasets"].IsSequence() || root["datasets"].size() == 0) {
    throw ManifestError("manifest: 'datasets' must be a non-empty list");
  }
  std::set<std::string> names;
  for (std::size_t i = 0; i < root["datasets"].size(); ++i) {
    const YAML::Node d = root["datasets"][i];
    const std::string where = "datasets[" + std::to_string(i) + "]";
    check_keys(d, where, {"name", "corpus", "queries", "qrels"});
    DatasetSpec spec;
    spec.name = require<std::string>(d, where, "name");
    spec.corpus = resolve(base_dir, require<std::string>(d, where, "corpus"));
    spec.queries = resolve(base_dir, require<std::string>(d, where, "queries"));
    spec.qrels = resolve(base_dir, require<std::string>(d, where, "qrels"));
    if (!names.insert(spec.name).second) {
      throw ManifestError("manifest: duplicate dataset name '" + spec.name + "'");
    }
    m.datasets.push_back(std::move(spec));
  }

  if (!root["students"] || !root["students"].IsSequence() || root["students"].size() == 0) {
    throw ManifestError("manifest: 'students' must be a non-empty list");
  }
  names.clear();
  for (std::size_t i = 0; i < root["students"].size(); ++i) {
    const YAML::Node s = root["students"][i];
    const std::string where = "students[" + std::to_string(i) + "]";
    check_keys(s, where, {"name", "layers", "random_layers", "checkpoint", "distill"});
    StudentSpec spec;
    spec.name = require<std::string>(s, where, "name");
    if (spec.name.empty() || spec.name == "teacher" ||
        spec.name.find_first_of("/\\ ,") != std::string::npos) {
      throw ManifestError("manifest: field '" + where +
                          ".name' must be non-empty, not 'teacher', and free of "
                          "'/', '\\', ',' and spaces");
    }
    if (!names.insert(spec.name).second) {
      throw ManifestError("manifest: duplicate student name '" + spec.name + "'");
    }
    if (s["layers"]) spec.layers = require<std::vector<std::size_t>>(s, where, "layers");
    if (s["random_layers"]) {
      spec.random_layers = require<std::size_t>(s, where, "random_layers");
    }
    if (s["checkpoint"]) {
      spec.checkpoint = resolve(base_dir, require<std::string>(s, where, "checkpoint"));
    }
    optional_field(s, where, "distill", spec.distill);
    const int sources = spec.layers.has_value() + spec.random_layers.has_value() +
                        spec.checkpoint.has_value();
    if (sources != 1) {
      throw ManifestError("manifest: '" + where +
                          "' needs exactly one of 'layers', 'random_layers' or 'checkpoint'");
    }
    m.students.push_back(std::move(spec));
  }

  if (root["train"]) m.train = parse_train(root["train"], "train");
  m.train.seed = m.seed;
  if (root["cache_dir"]) {
    m.cache_dir = resolve(base_dir, require<std::string>(root, "", "cache_dir"));
  }
  if (root["bench"]) {
    const YAML::Node b = root["bench"];
    check_keys(b, "bench", {"enabled", "batch_sizes", "repeats", "queries", "max_queries"});
    optional_field(b, "bench", "enabled", m.bench.enabled);
    optional_field(b, "bench", "batch_sizes", m.bench.config.batch_sizes);
    optional_field(b, "bench", "repeats", m.bench.config.repeats);
    optional_field(b, "bench", "max_queries", m.bench.max_queries);
    if (b["queries"]) m.bench.queries = resolve(base_dir, require<std::string>(b, "bench", "queries"));
  }
  return m;
}

Manifest load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ManifestError("manifest: cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_manifest(ss.str(), path.has_parent_path() ? path.parent_path() : fs::path("."));
}

void check_paths(const Manifest& m) {
  auto need = [](const fs::path& p, const std::string& field) {
    if (!fs::exists(p)) {
      throw ManifestError("manifest field '" + field + "': path does not exist: " + p.string());
    }
  };
  if (m.teacher.checkpoint) need(*m.teacher.checkpoint, "teacher.checkpoint");
  if (m.teacher.pretrain) {
    need(m.teacher.pretrain->pairs, "teacher.pretrain.pairs");
    need(m.teacher.pretrain->vocab, "teacher.pretrain.vocab");
  }
  need(m.train_queries, "train_queries");
  for (std::size_t i = 0; i < m.datasets.size(); ++i) {
    const std::string where = "datasets[" + std::to_string(i) + "]";
    need(m.datasets[i].corpus, where + ".corpus");
    need(m.datasets[i].queries, where + ".queries");
    need(m.datasets[i].qrels, where + ".qrels");
  }
  for (std::size_t i = 0; i < m.students.size(); ++i) {
    if (m.students[i].checkpoint) {
      need(*m.students[i].checkpoint, "students[" + std::to_string(i) + "].checkpoint");
    }
  }
  if (m.bench.enabled && m.bench.queries) need(*m.bench.queries, "bench.queries");
}

PipelineResult run_pipeline(const Manifest& m, std::ostream* log) {
  check_paths(m);
  auto say = [&](const std::string& msg) {
    if (log) *log << msg << std::endl;
  };

  Staging staging(m.output);
  const fs::path& out = staging.dir();
  fs::create_directories(out / "students");
  fs::create_directories(out / "history");
  fs::create_directories(out / "index");
  write_text(out / "manifest.yaml", m.source_text);

  PipelineResult result;
  result.output = m.output;

  EncoderModel teacher;
  if (m.teacher.checkpoint) {
    say("loading teacher " + m.teacher.checkpoint->string());
    teacher = load(*m.teacher.checkpoint);
  } else {
    const auto& p = *m.teacher.pretrain;
    auto vocab = std::make_shared<const Vocab>(Vocab::load(p.vocab));
    EncoderConfig cfg = p.encoder;
    cfg.vocab_size = vocab->size();
    const auto pairs = read_training_pairs(p.pairs);
    say("pretraining teacher (" + std::to_string(cfg.num_layers) + " layers, " +
        std::to_string(pairs.size()) + " pairs)");
    const EncoderModel init = make_random_model("teacher", cfg, vocab, m.seed);
    auto trained = pretrain(init, pairs, p.train);
    teacher = std::move(trained.model);
    save(teacher, out / "teacher.ckpt");
    std::string csv = "step,loss\n";
    char buf[64];
    for (std::size_t i = 0; i < trained.losses.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%zu,%.17g\n", i + 1, trained.losses[i]);
      csv += buf;
    }
    write_text(out / "history" / "teacher_pretrain.csv", csv);
  }
  result.teacher_fingerprint = fingerprint(teacher);

  struct LoadedDataset {
    const DatasetSpec* spec;
    std::vector<Query> queries;
    Qrels qrels;
    DenseIndex index;
    double teacher_ndcg = 0.0;
  };
  std::vector<LoadedDataset> datasets;
  for (const auto& d : m.datasets) {
    LoadedDataset ld{&d, read_queries(d.queries), read_qrels(d.qrels), {}, 0.0};
    const auto corpus = read_corpus(d.corpus);
    say("indexing " + d.name + " (" + std::to_string(corpus.size()) + " documents)");
    ld.index = build_index(corpus, teacher);
    save_index(ld.index, out / "index" / (d.name + ".adix"));
    fs::create_directories(out / "runs" / d.name);
    const Run run = run_retrieval(ld.queries, ld.index, teacher);
    write_trec(run, out / "runs" / d.name / "teacher.trec", "teacher");
    ld.teacher_ndcg = evaluate_run(run, ld.qrels);
    say("  teacher nDCG@10 = " + std::to_string(ld.teacher_ndcg));
    datasets.push_back(std::move(ld));
  }

  const auto train_texts = query_texts(read_queries(m.train_queries));
  TrainOptions options;
  options.cache_dir = m.cache_dir;

  std::vector<EncoderModel> students;
  for (std::size_t i = 0; i < m.students.size(); ++i) {
    const StudentSpec& spec = m.students[i];
    EncoderModel student;
    if (spec.layers) {
      student = extract_layers(teacher, *spec.layers);
    } else if (spec.random_layers) {
      EncoderConfig cfg = teacher.config;
      cfg.num_layers = *spec.random_layers;
      student = make_random_model(spec.name, cfg, teacher.vocab, m.seed + 1000 * (i + 1));
      student.provenance.notes = "random initialization";
    } else {
      student = load(*spec.checkpoint);
    }
    student.id = spec.name;

    StudentOutcome outcome;
    outcome.name = spec.name;
    if (spec.distill) {
      say("distilling " + spec.name + " (" + std::to_string(student.config.num_layers) +
          " layers)");
      auto trained = train(teacher, student, train_texts, m.train, options);
      student = std::move(trained.student);
      trained.history.write_csv(out / "history" / (spec.name + ".csv"));
      outcome.initial_distance = trained.history.initial_distance();
      outcome.final_distance = trained.history.final_distance();
      if (outcome.initial_distance) {
        say("  validation distance " + std::to_string(*outcome.initial_distance) + " -> " +
            std::to_string(*outcome.final_distance));
      }
    }
    save(student, out / "students" / (spec.name + ".ckpt"));
    outcome.fingerprint = fingerprint(student);
    outcome.num_layers = student.config.num_layers;
    outcome.provenance = student.provenance;

    std::vector<DatasetScores> scores;
    for (const auto& ld : datasets) {
      const Run run = run_retrieval(ld.queries, ld.index, student);
      write_trec(run, out / "runs" / ld.spec->name / (spec.name + ".trec"), spec.name);
      scores.push_back({ld.spec->name, ld.teacher_ndcg, evaluate_run(run, ld.qrels)});
    }
    result.reports.push_back(make_report(spec.name, scores));
    say("  retention " + std::to_string(result.reports.back().summary.retention));
    result.students.push_back(std::move(outcome));
    students.push_back(std::move(student));
  }

  write_metrics_csv(result.reports, out / "metrics.csv");
  write_text(out / "metrics.txt", format_metrics_table(result.reports));

  json summary;
  summary["seed"] = m.seed;
  summary["teacher"] = {{"fingerprint", result.teacher_fingerprint},
                        {"num_layers", teacher.config.num_layers},
                        {"hidden_dim", teacher.config.hidden_dim},
                        {"pooling", std::string(pooling_name(teacher.config.pooling))}};
  summary["train"] = {{"batch_size", m.train.batch_size},
                      {"learning_rate", m.train.learning_rate},
                      {"warmup_steps", m.train.warmup_steps},
                      {"epochs", m.train.epochs},
                      {"loss", std::string(loss_kind_name(m.train.loss_kind))},
                      {"weight_decay", m.train.weight_decay},
                      {"val_fraction", m.train.val_fraction},
                      {"seed", m.train.seed}};
  json students_json = json::array();
  for (const auto& s : result.students) {
    json sj = {{"name", s.name}, {"fingerprint", s.fingerprint},
               {"num_layers", s.num_layers}};
    if (s.provenance.extracted()) {
      sj["teacher_layers"] = s.provenance.layers;
    }
    if (s.initial_distance) sj["initial_val_distance"] = *s.initial_distance;
    if (s.final_distance) sj["final_val_distance"] = *s.final_distance;
    students_json.push_back(std::move(sj));
  }
  summary["students"] = students_json;
  json reports = json::array();
  for (const auto& r : result.reports) reports.push_back(report_json(r));
  summary["reports"] = reports;
  json ds = json::array();
  for (const auto& ld : datasets) {
    ds.push_back({{"name", ld.spec->name}, {"teacher_ndcg10", ld.teacher_ndcg},
                  {"documents", ld.index.size()}, {"queries", ld.queries.size()}});
  }
  summary["datasets"] = ds;
  write_text(out / "summary.json", summary.dump(2) + "\n");

  if (m.bench.enabled) {
    auto texts = query_texts(read_queries(m.bench.queries ? *m.bench.queries : m.train_queries));
    if (texts.size() > m.bench.max_queries) texts.resize(m.bench.max_queries);
    say("benchmarking on " + std::to_string(texts.size()) + " queries");
    std::vector<const EncoderModel*> models = {&teacher};
    for (const auto& s : students) models.push_back(&s);
    result.bench = measure_throughput(models, texts, m.bench.config);
    result.bench.front().model = "teacher";
    write_bench_csv(result.bench, out / "bench.csv");
    const auto table = compare(result.bench.front(), result.bench);
    write_text(out / "speedup.csv", speedup_csv(table));
    write_text(out / "speedup.txt", speedup_chart(table));
    json bj = json::array();
    for (const auto& b : result.bench) bj.push_back(bench_json(b));
    write_text(out / "bench.json", json{{"seed", m.seed}, {"results", bj}}.dump(2) + "\n");
  }

  staging.commit();
  return result;
}

std::string render_report(const fs::path& dir) {
  const auto summary_path = dir / "summary.json";
  if (!fs::exists(summary_path)) {
    throw IoError("report: " + summary_path.string() + " not found; run the pipeline first");
  }
  std::vector<MetricsReport> reports;
  json summary;
  try {
    summary = json::parse(read_text(summary_path));
    for (const auto& r : summary.at("reports")) reports.push_back(report_from_json(r));
  } catch (const json::exception& e) {
    throw FormatError("report: " + summary_path.string() + ": " + e.what());
  }
  std::string out = "Retrieval quality (student queries against the teacher index)\n\n";
  out += format_metrics_table(reports);
  const auto bench_path = dir / "bench.json";
  if (fs::exists(bench_path)) {
    std::vector<BenchResult> bench;
    try {
      for (const auto& b : json::parse(read_text(bench_path)).at("results")) {
        bench.push_back(bench_from_json(b));
      }
    } catch (const json::exception& e) {
      throw FormatError("report: " + bench_path.string() + ": " + e.what());
    }
    if (!bench.empty()) {
      const auto table = compare(bench.front(), std::span(bench).subspan(1));
      out += "\nQuery encoding throughput (" + bench.front().hardware + ")\n\n";
      out += speedup_csv(table);
      out += "\n" + speedup_chart(table);
    }
  }
  return out;
}

}  // namespace qdistill
