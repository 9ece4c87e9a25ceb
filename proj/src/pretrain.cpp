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

#include "qdistill/pretrain.hpp"

#include <fstream>
#include <numeric>

#include "json.hpp"

#include "qdistill/distill.hpp"
#include "qdistill/error.hpp"
#include "qdistill/numerics/ops.hpp"
#include "qdistill/tokenizer.hpp"

namespace qdistill {

std::vector<TrainingPair> read_training_pairs(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<TrainingPair> out;
  std::string line;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      out.push_back({j.at("query").get<std::string>(), j.at("document").get<std::string>()});
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

void write_training_pairs(const std::filesystem::path& path,
                          std::span<const TrainingPair> pairs) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& p : pairs) {
    out << nlohmann::json{{"query", p.query}, {"document", p.document}}.dump() << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

void PretrainConfig::validate() const {
  if (batch_size < 2) {
    throw ContractError("pretrain: batch_size must be >= 2 for in-batch negatives");
  }
  if (epochs < 1) throw ContractError("pretrain: epochs must be >= 1");
  if (!(learning_rate >= 0.0)) throw ContractError("pretrain: learning_rate < 0");
  if (!(score_scale > 0.0)) throw ContractError("pretrain: score_scale must be > 0");
}

PretrainResult pretrain(const EncoderModel& model,
                        std::span<const TrainingPair> pairs,
                        const PretrainConfig& config) {
  config.validate();
  if (pairs.empty()) throw ContractError("pretrain: no training pairs");
  if (!model.vocab) throw ContractError("pretrain: model has no vocabulary");

  PretrainResult result;
  result.model = model;
  result.model.weights = clone_weights(model.weights, true);
  EncoderModel& m = result.model;

  std::vector<std::vector<std::int32_t>> q_rows, d_rows;
  for (const auto& p : pairs) {
    q_rows.push_back(tokenize(p.query, *m.vocab, m.config.max_len));
    d_rows.push_back(tokenize(p.document, *m.vocab, m.config.max_len));
  }

  std::vector<Tensor*> params;
  for (auto& [name, t] : named_parameters(m.weights)) params.push_back(t);
  AdamW optimizer(params, 0.9, 0.999, 1e-8, config.weight_decay);
  TrainConfig schedule;
  schedule.learning_rate = config.learning_rate;
  schedule.warmup_steps = config.warmup_steps;

  auto embed = [&](const std::vector<std::vector<std::int32_t>>& rows) {
    const EncodedBatch batch = pad_batch(rows, m.vocab->pad_id());
    return pool(forward(batch, m.weights, m.config),
                std::span<const std::uint8_t>(batch.attention_mask),
                m.config.pooling);
  };

  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const auto order = shuffled_order(pairs.size(), config.seed + epoch);
    for (std::size_t start = 0; start + 1 < order.size(); start += config.batch_size) {
      const std::size_t n = std::min(config.batch_size, order.size() - start);
      if (n < 2) break;
      std::vector<std::vector<std::int32_t>> qb, db;
      for (std::size_t i = 0; i < n; ++i) {
        qb.push_back(q_rows[order[start + i]]);
        db.push_back(d_rows[order[start + i]]);
      }
      std::vector<std::size_t> targets(n);
      std::iota(targets.begin(), targets.end(), std::size_t{0});

      ++step;
      {
        GradTape<float> tape;
        const Tensor scores =
            scale(matmul(embed(qb), transpose(embed(db))),
                  static_cast<float>(config.score_scale));
        const Tensor loss = cross_entropy(scores, std::span<const std::size_t>(targets));
        result.losses.push_back(loss.item());
        tape.backward(loss);
      }
      optimizer.step(lr_at(step, schedule));
      for (Tensor* p : params) p->zero_grad();
    }
  }
  for (Tensor* p : params) p->set_requires_grad(false);
  return result;
}

}  // namespace qdistill
