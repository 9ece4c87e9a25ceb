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

// qdistill: command-line front end.
//
// Exit codes: 0 success, 1 runtime error, 2 usage error.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "qdistill/bench.hpp"
#include "qdistill/dataset.hpp"
#include "qdistill/distill.hpp"
#include "qdistill/encoder.hpp"
#include "qdistill/error.hpp"
#include "qdistill/evaluation.hpp"
#include "qdistill/model_io.hpp"
#include "qdistill/pipeline.hpp"
#include "qdistill/pretrain.hpp"
#include "qdistill/retrieval.hpp"
#include "qdistill/simd/kernels.hpp"
#include "qdistill/toy_data.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace qdistill;

namespace {

// Bad arguments detected after parsing; reported with exit code 2.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

fs::path sidecar(const fs::path& out) {
  fs::path p = out;
  p += ".json";
  return p;
}

json model_json(const EncoderModel& m) {
  json j = {{"id", m.id},
            {"fingerprint", fingerprint(m)},
            {"num_layers", m.config.num_layers},
            {"hidden_dim", m.config.hidden_dim},
            {"pooling", std::string(pooling_name(m.config.pooling))}};
  if (m.provenance.extracted()) {
    j["teacher_id"] = m.provenance.teacher_id;
    j["teacher_layers"] = m.provenance.layers;
  }
  return j;
}

std::string provenance_line(const EncoderModel& m) {
  if (!m.provenance.extracted()) return "original model";
  return "layers [" + scheme_str(m.provenance.layers) + "] of " + m.provenance.teacher_id +
         " (" + std::to_string(m.provenance.teacher_layers) + " layers)";
}

struct Common {
  std::uint64_t seed = 0;
};

void add_seed(CLI::App* cmd, Common& c) {
  cmd->add_option("--seed", c.seed, "Random seed, recorded in the outputs");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"qdistill: shallow query encoders distilled from a full teacher"};
  app.require_subcommand(1);
  std::string simd;
  app.add_option("--simd", simd, "Kernel set: scalar or avx2 (default: best available)")
      ->check(CLI::IsMember({"scalar", "avx2"}));
  Common common;

  // make-toy
  auto* make_toy = app.add_subcommand("make-toy", "Write the synthetic toy dataset");
  fs::path toy_out;
  ToyConfig toy;
  make_toy->add_option("--out", toy_out, "Output directory")->required();
  make_toy->add_option("--docs", toy.num_docs, "Number of documents");
  make_toy->add_option("--queries", toy.num_queries, "Number of evaluation queries");
  make_toy->add_option("--distill-queries", toy.distill_queries, "Unlabeled training queries");
  make_toy->add_option("--pairs-per-doc", toy.pairs_per_doc, "Teacher training pairs per document");
  add_seed(make_toy, common);

  // init
  auto* init = app.add_subcommand("init", "Create a randomly initialized encoder");
  fs::path init_vocab, init_out;
  std::string init_id = "model", init_pooling = "mean";
  EncoderConfig init_cfg;
  init->add_option("--vocab", init_vocab, "Vocabulary file")->required()->check(CLI::ExistingFile);
  init->add_option("--out", init_out, "Output checkpoint")->required();
  init->add_option("--id", init_id, "Model id");
  init->add_option("--layers", init_cfg.num_layers, "Transformer layers");
  init->add_option("--hidden", init_cfg.hidden_dim, "Hidden size");
  init->add_option("--heads", init_cfg.num_heads, "Attention heads");
  init->add_option("--ff", init_cfg.ff_dim, "Feed-forward size");
  init->add_option("--max-len", init_cfg.max_len, "Maximum tokens per text");
  init->add_option("--pooling", init_pooling, "mean or cls")->check(CLI::IsMember({"mean", "cls"}));
  add_seed(init, common);

  // pretrain
  auto* pre = app.add_subcommand("pretrain", "Contrastively train an encoder on query/document pairs");
  fs::path pre_model, pre_pairs, pre_out;
  PretrainConfig pre_cfg;
  pre->add_option("--model", pre_model, "Initial checkpoint")->required()->check(CLI::ExistingFile);
  pre->add_option("--pairs", pre_pairs, "Training pairs (JSON lines)")->required()->check(CLI::ExistingFile);
  pre->add_option("--out", pre_out, "Output checkpoint")->required();
  pre->add_option("--batch-size", pre_cfg.batch_size, "Examples per step");
  pre->add_option("--lr", pre_cfg.learning_rate, "Peak learning rate");
  pre->add_option("--warmup", pre_cfg.warmup_steps, "Linear warmup steps");
  pre->add_option("--epochs", pre_cfg.epochs, "Passes over the training data");
  pre->add_option("--weight-decay", pre_cfg.weight_decay, "Decoupled weight decay");
  pre->add_option("--score-scale", pre_cfg.score_scale, "Multiplier on in-batch dot-product scores");
  add_seed(pre, common);

  // extract
  auto* extract = app.add_subcommand("extract", "Build a student from a subset of teacher layers");
  fs::path ex_teacher, ex_out;
  std::string ex_layers;
  extract->add_option("--teacher", ex_teacher, "Teacher checkpoint")->required()->check(CLI::ExistingFile);
  extract->add_option("--layers", ex_layers, "Comma-separated 0-based layer indices, or 'all'")->required();
  extract->add_option("--out", ex_out, "Output checkpoint")->required();
  add_seed(extract, common);

  // distill
  auto* distill = app.add_subcommand("distill", "Align a student's query embeddings with a teacher");
  fs::path di_teacher, di_student, di_queries, di_out;
  std::optional<fs::path> di_cache;
  std::string di_loss = "mse";
  TrainConfig di_cfg;
  distill->add_option("--teacher", di_teacher, "Teacher checkpoint")->required()->check(CLI::ExistingFile);
  distill->add_option("--student", di_student, "Student checkpoint")->required()->check(CLI::ExistingFile);
  distill->add_option("--queries", di_queries, "Training queries")->required()->check(CLI::ExistingFile);
  distill->add_option("--out", di_out, "Output student checkpoint")->required();
  distill->add_option("--batch-size", di_cfg.batch_size, "Examples per step");
  distill->add_option("--lr", di_cfg.learning_rate, "Peak learning rate");
  distill->add_option("--warmup", di_cfg.warmup_steps, "Linear warmup steps");
  distill->add_option("--epochs", di_cfg.epochs, "Passes over the training data");
  distill->add_option("--weight-decay", di_cfg.weight_decay, "Decoupled weight decay");
  distill->add_option("--val-fraction", di_cfg.val_fraction, "Share of queries held out for validation");
  distill->add_option("--validate-every", di_cfg.validate_every, "Also validate every N steps (0: per epoch only)");
  distill->add_option("--loss", di_loss, "mse or euclidean")->check(CLI::IsMember({"mse", "euclidean"}));
  distill->add_option("--cache-dir", di_cache, "Teacher embedding cache directory");
  add_seed(distill, common);

  // index
  auto* index = app.add_subcommand("index", "Embed a corpus into a dense index");
  fs::path ix_model, ix_corpus, ix_out;
  index->add_option("--model", ix_model, "Document encoder checkpoint")->required()->check(CLI::ExistingFile);
  index->add_option("--corpus", ix_corpus, "Corpus (JSON lines)")->required()->check(CLI::ExistingFile);
  index->add_option("--out", ix_out, "Output index file")->required();
  add_seed(index, common);

  // search
  auto* search_cmd = app.add_subcommand("search", "Rank documents for each query");
  fs::path se_index, se_model, se_queries, se_out;
  std::size_t se_k = 10;
  std::string se_tag;
  search_cmd->add_option("--index", se_index, "Index file")->required()->check(CLI::ExistingFile);
  search_cmd->add_option("--model", se_model, "Query encoder checkpoint")->required()->check(CLI::ExistingFile);
  search_cmd->add_option("--queries", se_queries, "Queries")->required()->check(CLI::ExistingFile);
  search_cmd->add_option("--out", se_out, "Output run (TREC format)")->required();
  search_cmd->add_option("-k,--top-k", se_k, "Results per query")->check(CLI::PositiveNumber);
  search_cmd->add_option("--tag", se_tag, "Run tag (default: model id)");
  add_seed(search_cmd, common);

  // eval
  auto* eval = app.add_subcommand("eval", "Score a run with nDCG@k");
  fs::path ev_run, ev_qrels;
  std::optional<fs::path> ev_baseline, ev_out;
  std::size_t ev_k = 10;
  eval->add_option("--run", ev_run, "Run (TREC format)")->required()->check(CLI::ExistingFile);
  eval->add_option("--qrels", ev_qrels, "Relevance judgments (TSV)")->required()->check(CLI::ExistingFile);
  eval->add_option("--baseline", ev_baseline, "Teacher run for relative change")->check(CLI::ExistingFile);
  eval->add_option("--out", ev_out, "Write results as JSON");
  eval->add_option("-k", ev_k, "Cutoff")->check(CLI::PositiveNumber);
  add_seed(eval, common);

  // bench
  auto* bench = app.add_subcommand("bench", "Measure query-encoding throughput");
  std::vector<fs::path> be_models;
  fs::path be_queries, be_out;
  BenchConfig be_cfg;
  std::size_t be_max = 4000;
  bench->add_option("--model", be_models, "Checkpoints; the first is the baseline")
      ->required()->check(CLI::ExistingFile);
  bench->add_option("--queries", be_queries, "Queries")->required()->check(CLI::ExistingFile);
  bench->add_option("--out", be_out, "Output directory")->required();
  bench->add_option("--batch-sizes", be_cfg.batch_sizes, "Batch sizes")->delimiter(',');
  bench->add_option("--repeats", be_cfg.repeats, "Timed passes per batch size (median reported)")->check(CLI::PositiveNumber);
  bench->add_option("--max-queries", be_max, "Use at most this many queries")->check(CLI::PositiveNumber);
  add_seed(bench, common);

  // report
  auto* report = app.add_subcommand("report", "Print retention and speedup tables for a pipeline output");
  fs::path re_dir;
  report->add_option("--dir", re_dir, "Pipeline output directory")->required();

  // pipeline
  auto* pipeline = app.add_subcommand("pipeline", "Run a manifest end to end");
  fs::path pi_manifest;
  std::optional<fs::path> pi_output;
  std::optional<std::uint64_t> pi_seed;
  bool pi_bench = false;
  pipeline->add_option("--manifest", pi_manifest, "Manifest (YAML)")->required();
  pipeline->add_option("--output", pi_output, "Override the manifest's output directory");
  pipeline->add_option("--seed", pi_seed, "Override the manifest's seed");
  pipeline->add_flag("--bench", pi_bench, "Enable the throughput benchmark");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (!simd.empty()) {
      simd::select(simd == "avx2" ? simd::Isa::kAvx2 : simd::Isa::kScalar);
    }

    if (*make_toy) {
      if (make_toy->count("--seed")) toy.seed = common.seed;
      const auto data = make_toy_dataset(toy);
      write_toy_dataset(data, toy_out);
      std::cout << "wrote " << data.corpus.size() << " documents, " << data.queries.size()
                << " queries, " << data.train_pairs.size() << " training pairs, "
                << data.distill_queries.size() << " distillation queries to " << toy_out
                << "\n";
    } else if (*init) {
      auto vocab = std::make_shared<const Vocab>(Vocab::load(init_vocab));
      init_cfg.vocab_size = vocab->size();
      init_cfg.pooling = parse_pooling(init_pooling);
      try {
        init_cfg.validate();
      } catch (const ContractError& e) {
        throw UsageError(e.what());
      }
      const auto model = make_random_model(init_id, init_cfg, vocab, common.seed);
      save(model, init_out);
      write_json(sidecar(init_out), {{"command", "init"}, {"seed", common.seed},
                                     {"model", model_json(model)}});
      std::cout << "initialized " << init_id << " (" << init_cfg.num_layers
                << " layers) -> " << init_out << "\n";
    } else if (*pre) {
      pre_cfg.seed = common.seed;
      const auto model = load(pre_model);
      const auto pairs = read_training_pairs(pre_pairs);
      auto result = pretrain(model, pairs, pre_cfg);
      save(result.model, pre_out);
      write_json(sidecar(pre_out),
                 {{"command", "pretrain"}, {"seed", common.seed},
                  {"input", model_json(model)}, {"model", model_json(result.model)},
                  {"steps", result.losses.size()},
                  {"final_loss", result.losses.empty() ? 0.0 : result.losses.back()}});
      std::cout << "pretrained " << result.losses.size() << " steps, final loss "
                << (result.losses.empty() ? 0.0 : result.losses.back()) << " -> " << pre_out
                << "\n";
    } else if (*extract) {
      const auto teacher = load(ex_teacher);
      LayerScheme scheme;
      try {
        scheme = parse_scheme(ex_layers, teacher.config.num_layers);
        validate_scheme(scheme, teacher.config.num_layers);
      } catch (const Error& e) {
        throw UsageError(std::string("--layers: ") + e.what());
      }
      const auto student = extract_layers(teacher, scheme);
      save(student, ex_out);
      write_json(sidecar(ex_out), {{"command", "extract"}, {"seed", common.seed},
                                   {"teacher", model_json(teacher)},
                                   {"model", model_json(student)}});
      std::cout << "extracted " << student.config.num_layers << "-layer student: "
                << provenance_line(student) << " -> " << ex_out << "\n";
    } else if (*distill) {
      di_cfg.seed = common.seed;
      di_cfg.loss_kind = parse_loss_kind(di_loss);
      try {
        di_cfg.validate();
      } catch (const ContractError& e) {
        throw UsageError(e.what());
      }
      const auto teacher = load(di_teacher);
      const auto student = load(di_student);
      const auto queries = query_texts(read_queries(di_queries));
      TrainOptions options;
      options.cache_dir = di_cache;
      auto result = train(teacher, student, queries, di_cfg, options);
      save(result.student, di_out);
      fs::path history = di_out;
      history += ".history.csv";
      result.history.write_csv(history);
      json j = {{"command", "distill"},
                {"seed", common.seed},
                {"teacher", model_json(teacher)},
                {"input", model_json(student)},
                {"model", model_json(result.student)},
                {"config",
                 {{"batch_size", di_cfg.batch_size}, {"learning_rate", di_cfg.learning_rate},
                  {"warmup_steps", di_cfg.warmup_steps}, {"epochs", di_cfg.epochs},
                  {"loss", di_loss}, {"weight_decay", di_cfg.weight_decay},
                  {"val_fraction", di_cfg.val_fraction}}},
                {"steps", result.history.steps.size()}};
      if (auto d = result.history.initial_distance()) j["initial_val_distance"] = *d;
      if (auto d = result.history.final_distance()) j["final_val_distance"] = *d;
      write_json(sidecar(di_out), j);
      std::cout << "distilled " << result.history.steps.size() << " steps";
      if (auto d0 = result.history.initial_distance()) {
        std::cout << ", validation distance " << *d0 << " -> "
                  << *result.history.final_distance();
      }
      std::cout << " -> " << di_out << "\n";
    } else if (*index) {
      const auto model = load(ix_model);
      const auto corpus = read_corpus(ix_corpus);
      const auto idx = build_index(corpus, model);
      save_index(idx, ix_out);
      write_json(sidecar(ix_out), {{"command", "index"}, {"seed", common.seed},
                                   {"model", model_json(model)}, {"documents", idx.size()}});
      std::cout << "indexed " << idx.size() << " documents -> " << ix_out << "\n";
    } else if (*search_cmd) {
      const auto idx = load_index(se_index);
      const auto model = load(se_model);
      const auto queries = read_queries(se_queries);
      const auto run = run_retrieval(queries, idx, model, se_k);
      write_trec(run, se_out, se_tag.empty() ? model.id : se_tag);
      write_json(sidecar(se_out), {{"command", "search"}, {"seed", common.seed},
                                   {"model", model_json(model)},
                                   {"index_fingerprint", idx.fingerprint},
                                   {"queries", queries.size()}, {"k", se_k}});
      std::cout << "searched " << queries.size() << " queries -> " << se_out << "\n";
    } else if (*eval) {
      const auto qrels = read_qrels(ev_qrels);
      const double score = evaluate_run(read_trec(ev_run), qrels, ev_k);
      json j = {{"command", "eval"}, {"seed", common.seed}, {"k", ev_k}, {"ndcg", score}};
      std::cout << "nDCG@" << ev_k << " = " << score << "\n";
      if (ev_baseline) {
        const double base = evaluate_run(read_trec(*ev_baseline), qrels, ev_k);
        const double change = relative_change(score, base);
        j["baseline_ndcg"] = base;
        j["relative_change"] = change;
        std::cout << "baseline nDCG@" << ev_k << " = " << base << ", relative change "
                  << 100.0 * change << "%\n";
      }
      if (ev_out) write_json(*ev_out, j);
    } else if (*bench) {
      auto texts = query_texts(read_queries(be_queries));
      if (texts.size() > be_max) texts.resize(be_max);
      std::vector<EncoderModel> loaded;
      json models = json::array();
      for (const auto& p : be_models) {
        loaded.push_back(load(p));
        models.push_back(model_json(loaded.back()));
        std::cout << "benchmarking " << loaded.back().id << " ("
                  << loaded.back().config.num_layers << " layers)\n";
      }
      std::vector<const EncoderModel*> ptrs;
      for (const auto& m : loaded) ptrs.push_back(&m);
      const std::vector<BenchResult> results = measure_throughput(ptrs, texts, be_cfg);
      fs::create_directories(be_out);
      write_bench_csv(results, be_out / "bench.csv");
      const auto table = compare(results.front(), results);
      std::ofstream(be_out / "speedup.csv") << speedup_csv(table);
      std::ofstream(be_out / "speedup.txt") << speedup_chart(table);
      write_json(be_out / "bench.json", {{"command", "bench"}, {"seed", common.seed},
                                         {"models", models}, {"queries", texts.size()},
                                         {"hardware", results.front().hardware}});
      std::cout << speedup_chart(table);
    } else if (*report) {
      std::cout << render_report(re_dir);
    } else if (*pipeline) {
      Manifest manifest = load_manifest(pi_manifest);
      if (pi_output) manifest.output = *pi_output;
      if (pi_seed) {
        manifest.seed = *pi_seed;
        manifest.train.seed = *pi_seed;
        if (manifest.teacher.pretrain) manifest.teacher.pretrain->train.seed = *pi_seed;
      }
      if (pi_bench) manifest.bench.enabled = true;
      const auto result = run_pipeline(manifest, &std::cerr);
      std::cout << format_metrics_table(result.reports);
      std::cout << "outputs in " << result.output << "\n";
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const ManifestError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
