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

#include "qdistill/distill.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>

#include <unistd.h>

#include "qdistill/error.hpp"
#include "qdistill/model_io.hpp"
#include "qdistill/numerics/ops.hpp"
#include "qdistill/simd/kernels.hpp"
#include "qdistill/tokenizer.hpp"

namespace qdistill {

std::string_view loss_kind_name(LossKind kind) {
  return kind == LossKind::kMse ? "mse" : "euclidean";
}

LossKind parse_loss_kind(std::string_view name) {
  if (name == "mse" || name == "MSE") return LossKind::kMse;
  if (name == "euclidean" || name == "EUCLIDEAN") return LossKind::kEuclidean;
  throw ContractError("unknown loss kind '" + std::string(name) +
                      "' (expected mse or euclidean)");
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw ContractError("train config: batch_size must be >= 1");
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) {
    throw ContractError("train config: val_fraction must be in [0, 1)");
  }
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw ContractError("train config: learning_rate must be finite and >= 0");
  }
  if (!(weight_decay >= 0.0)) {
    throw ContractError("train config: weight_decay must be >= 0");
  }
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ContractError("train config: betas must be in [0, 1)");
  }
  if (!(eps > 0.0)) throw ContractError("train config: eps must be > 0");
  if (epochs < 1) throw ContractError("train config: epochs must be >= 1");
}

template <typename Item>
std::pair<std::vector<Item>, std::vector<Item>> split_queries(
    std::span<const Item> items, double val_fraction) {
  if (items.empty()) throw ContractError("split_queries: empty query list");
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) {
    throw ContractError("split_queries: val_fraction must be in [0, 1)");
  }
  const double exact = (1.0 - val_fraction) * static_cast<double>(items.size());
  // Guard against 0.8 * 10 landing at 8.000000000000002.
  auto n_train = static_cast<std::size_t>(std::ceil(exact - 1e-9));
  n_train = std::min(std::max<std::size_t>(n_train, 1), items.size());
  return {std::vector<Item>(items.begin(), items.begin() + n_train),
          std::vector<Item>(items.begin() + n_train, items.end())};
}

template std::pair<std::vector<std::string>, std::vector<std::string>>
split_queries(std::span<const std::string>, double);
template std::pair<std::vector<std::size_t>, std::vector<std::size_t>>
split_queries(std::span<const std::size_t>, double);

template <typename T>
BasicTensor<T> alignment_loss(const BasicTensor<T>& student,
                              const BasicTensor<T>& teacher, LossKind kind) {
  if (student.rank() != 2 || student.shape() != teacher.shape()) {
    throw DimensionError("alignment_loss: student " + shape_str(student.shape()) +
                         " vs teacher " + shape_str(teacher.shape()));
  }
  const BasicTensor<T> diff = sub(student, teacher);
  if (kind == LossKind::kMse) return mean(square(diff));
  return mean(row_norm(diff));
}

template Tensor alignment_loss(const Tensor&, const Tensor&, LossKind);
template Tensor64 alignment_loss(const Tensor64&, const Tensor64&, LossKind);

double lr_at(std::size_t step, const TrainConfig& config) {
  if (config.warmup_steps == 0 || step >= config.warmup_steps) {
    return config.learning_rate;
  }
  return config.learning_rate * static_cast<double>(step) /
         static_cast<double>(config.warmup_steps);
}

AdamW::AdamW(std::vector<Tensor*> params, double beta1, double beta2, double eps,
             double weight_decay)
    : params_(std::move(params)),
      beta1_(beta1),
      beta2_(beta2),
      eps_(eps),
      weight_decay_(weight_decay) {
  for (const Tensor* p : params_) {
    m_.emplace_back(p->numel(), 0.0f);
    v_.emplace_back(p->numel(), 0.0f);
  }
}

void AdamW::step(double lr) {
  ++t_;
  simd::AdamWCoefficients c;
  c.lr = static_cast<float>(lr);
  c.decay = static_cast<float>(1.0 - lr * weight_decay_);
  c.beta1 = static_cast<float>(beta1_);
  c.beta2 = static_cast<float>(beta2_);
  c.one_minus_beta1 = static_cast<float>(1.0 - beta1_);
  c.one_minus_beta2 = static_cast<float>(1.0 - beta2_);
  c.bias_correction1 =
      static_cast<float>(1.0 - std::pow(beta1_, static_cast<double>(t_)));
  c.bias_correction2 =
      static_cast<float>(1.0 - std::pow(beta2_, static_cast<double>(t_)));
  c.eps = static_cast<float>(eps_);
  const auto& kernels = simd::active();
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = *params_[i];
    std::span<float> values = p.mutable_values();
    std::span<const float> grad = p.mutable_grad();
    kernels.adamw(values.data(), grad.data(), m_[i].data(), v_[i].data(),
                  values.size(), c);
    for (float x : values) {
      if (!std::isfinite(x)) {
        throw NumericError("adamw: non-finite parameter after step " +
                           std::to_string(t_));
      }
    }
  }
}

std::optional<double> TrainHistory::initial_distance() const {
  if (validation.empty()) return std::nullopt;
  return validation.front().distance;
}

std::optional<double> TrainHistory::final_distance() const {
  if (validation.empty()) return std::nullopt;
  return validation.back().distance;
}

void TrainHistory::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << "step,loss,lr\n";
  char buf[96];
  for (const auto& s : steps) {
    std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g\n", s.step, s.loss, s.lr);
    out << buf;
  }
  if (!out) throw IoError("failed writing " + path.string());
}

namespace {

double mean_distance(const Tensor& a, const Tensor& b) {
  const std::size_t rows = a.dim(0), d = a.dim(1);
  const auto av = a.values(), bv = b.values();
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    double sq = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double diff = static_cast<double>(av[r * d + j]) - bv[r * d + j];
      sq += diff * diff;
    }
    total += std::sqrt(sq);
  }
  return total / static_cast<double>(rows);
}

void check_compatible(const EncoderModel& teacher, const EncoderModel& student) {
  if (!teacher.vocab || !student.vocab) {
    throw ContractError("train: teacher and student need vocabularies");
  }
  if (teacher.vocab->tokens() != student.vocab->tokens()) {
    throw ContractError("train: teacher and student vocabularies differ");
  }
  if (teacher.config.hidden_dim != student.config.hidden_dim) {
    throw DimensionError("train: teacher embeddings have " +
                         std::to_string(teacher.config.hidden_dim) +
                         " dimensions, student " +
                         std::to_string(student.config.hidden_dim));
  }
  if (teacher.config.pooling != student.config.pooling) {
    throw ContractError("train: teacher and student pooling differ");
  }
}

std::vector<std::vector<std::int32_t>> tokenize_all(
    std::span<const std::string> texts, const EncoderModel& model) {
  std::vector<std::vector<std::int32_t>> out;
  out.reserve(texts.size());
  for (const auto& t : texts) {
    out.push_back(tokenize(t, *model.vocab, model.config.max_len));
  }
  return out;
}

std::uint64_t fnv1a(std::uint64_t h, const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string rows_key(std::span<const std::vector<std::int32_t>> rows) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& r : rows) {
    const std::uint64_t n = r.size();
    h = fnv1a(h, &n, sizeof(n));
    h = fnv1a(h, r.data(), r.size() * sizeof(std::int32_t));
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

constexpr char kCacheMagic[8] = {'Q', 'D', 'T', 'E', 'M', 'B', '0', '1'};

std::optional<Tensor> read_cache(const std::filesystem::path& path,
                                 std::size_t rows, std::size_t d) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return std::nullopt;
  char magic[8];
  std::uint64_t dims[2];
  in.read(magic, 8);
  in.read(reinterpret_cast<char*>(dims), sizeof(dims));
  if (!in || std::memcmp(magic, kCacheMagic, 8) != 0 || dims[0] != rows ||
      dims[1] != d) {
    return std::nullopt;
  }
  std::vector<float> values(rows * d);
  in.read(reinterpret_cast<char*>(values.data()),
          static_cast<std::streamsize>(values.size() * sizeof(float)));
  if (!in) return std::nullopt;
  return Tensor({rows, d}, std::move(values));
}

void write_cache(const std::filesystem::path& path, const Tensor& embs) {
  std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    const std::uint64_t dims[2] = {embs.dim(0), embs.dim(1)};
    out.write(kCacheMagic, 8);
    out.write(reinterpret_cast<const char*>(dims), sizeof(dims));
    out.write(reinterpret_cast<const char*>(embs.values().data()),
              static_cast<std::streamsize>(embs.numel() * sizeof(float)));
    if (!out) throw IoError("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace

Tensor teacher_embeddings(const EncoderModel& teacher,
                          std::span<const std::vector<std::int32_t>> rows,
                          const std::optional<std::filesystem::path>& cache_dir) {
  if (!cache_dir) return encode_tokens(rows, teacher);
  const auto path = *cache_dir / (fingerprint(teacher) + "-" + rows_key(rows) + ".emb");
  if (auto cached = read_cache(path, rows.size(), teacher.config.hidden_dim)) {
    return *cached;
  }
  Tensor embs = encode_tokens(rows, teacher);
  write_cache(path, embs);
  return embs;
}

std::vector<std::size_t> shuffled_order(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  // Explicit Fisher-Yates: std::shuffle's draws are library-specific.
  std::mt19937_64 rng(seed);
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

double validate(const EncoderModel& teacher, const EncoderModel& student,
                std::span<const std::string> queries, std::size_t batch_size) {
  if (queries.empty()) throw ContractError("validate: empty validation set");
  check_compatible(teacher, student);
  const Tensor t = encode(queries, teacher, batch_size);
  const Tensor s = encode(queries, student, batch_size);
  return mean_distance(s, t);
}

TrainResult train(const EncoderModel& teacher, const EncoderModel& student,
                  std::span<const std::string> queries, const TrainConfig& config,
                  const TrainOptions& options) {
  config.validate();
  check_compatible(teacher, student);
  const auto [train_q, val_q] = split_queries(queries, config.val_fraction);

  TrainResult result;
  result.student = student;
  result.student.weights = clone_weights(student.weights, true);
  EncoderModel& model = result.student;
  TrainHistory& history = result.history;

  const auto student_rows = tokenize_all(train_q, model);
  const Tensor targets =
      teacher_embeddings(teacher, tokenize_all(train_q, teacher), options.cache_dir);
  const std::size_t d = model.config.hidden_dim;

  // Validation embeddings of the teacher never change; compute them once.
  const auto val_student_rows = tokenize_all(val_q, model);
  const Tensor val_targets =
      val_q.empty() ? Tensor() : encode_tokens(tokenize_all(val_q, teacher), teacher);
  auto run_validation = [&](std::size_t step) {
    if (val_q.empty()) return;
    const Tensor s = encode_tokens(val_student_rows, model);
    history.validation.push_back({step, mean_distance(s, val_targets)});
  };

  std::vector<Tensor*> params;
  for (auto& [name, t] : named_parameters(model.weights)) params.push_back(t);
  AdamW optimizer(params, config.beta1, config.beta2, config.eps,
                  config.weight_decay);

  run_validation(0);
  std::size_t step = 0;
  const std::int32_t pad = model.vocab->pad_id();
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    const auto order = shuffled_order(student_rows.size(), config.seed + epoch);
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t n = std::min(config.batch_size, order.size() - start);
      std::vector<std::vector<std::int32_t>> rows;
      std::vector<float> target(n * d);
      rows.reserve(n);
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t q = order[start + i];
        rows.push_back(student_rows[q]);
        std::copy_n(targets.values().begin() + q * d, d, target.begin() + i * d);
      }
      const EncodedBatch batch = pad_batch(rows, pad);
      const Tensor target_t({n, d}, std::move(target));

      ++step;
      const double lr = lr_at(step, config);
      double loss_value = 0.0;
      {
        GradTape<float> tape;
        const Tensor emb =
            pool(forward(batch, model.weights, model.config),
                 std::span<const std::uint8_t>(batch.attention_mask),
                 model.config.pooling);
        const Tensor loss = alignment_loss(emb, target_t, config.loss_kind);
        loss_value = loss.item();
        tape.backward(loss);
      }
      optimizer.step(lr);
      for (Tensor* p : params) p->zero_grad();
      history.steps.push_back({step, loss_value, lr});

      if (config.validate_every > 0 && step % config.validate_every == 0) {
        run_validation(step);
      }
    }
    if (history.validation.empty() || history.validation.back().step != step) {
      run_validation(step);
    }
    history.epoch_seconds.push_back(
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started)
            .count());
  }

  for (Tensor* p : params) p->set_requires_grad(false);
  return result;
}

}  // namespace qdistill
