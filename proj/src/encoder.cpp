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

#include "qdistill/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "qdistill/error.hpp"
#include "qdistill/numerics/ops.hpp"

namespace qdistill {

std::string_view pooling_name(Pooling p) {
  return p == Pooling::kMean ? "mean" : "cls";
}

Pooling parse_pooling(std::string_view name) {
  if (name == "mean" || name == "MEAN") return Pooling::kMean;
  if (name == "cls" || name == "CLS") return Pooling::kCls;
  throw FormatError("unknown pooling strategy '" + std::string(name) + "'");
}

void EncoderConfig::validate() const {
  if (hidden_dim == 0 || num_heads == 0 || ff_dim == 0 || max_len == 0 ||
      vocab_size == 0) {
    throw ContractError("encoder config: all dimensions must be >= 1");
  }
  if (hidden_dim % num_heads != 0) {
    throw ContractError("encoder config: num_heads (" +
                        std::to_string(num_heads) +
                        ") must divide hidden_dim (" +
                        std::to_string(hidden_dim) + ")");
  }
  if (max_len < 2) {
    throw ContractError("encoder config: max_len must be at least 2");
  }
}

namespace {

template <typename W, typename Fn>
void visit_layer(W& layer, const std::string& prefix, Fn&& fn) {
  fn(prefix + "attn.q.weight", layer.q_weight);
  fn(prefix + "attn.q.bias", layer.q_bias);
  fn(prefix + "attn.k.weight", layer.k_weight);
  fn(prefix + "attn.k.bias", layer.k_bias);
  fn(prefix + "attn.v.weight", layer.v_weight);
  fn(prefix + "attn.v.bias", layer.v_bias);
  fn(prefix + "attn.o.weight", layer.o_weight);
  fn(prefix + "attn.o.bias", layer.o_bias);
  fn(prefix + "attn.ln.gamma", layer.attn_ln_gamma);
  fn(prefix + "attn.ln.beta", layer.attn_ln_beta);
  fn(prefix + "ffn.in.weight", layer.ff_in_weight);
  fn(prefix + "ffn.in.bias", layer.ff_in_bias);
  fn(prefix + "ffn.out.weight", layer.ff_out_weight);
  fn(prefix + "ffn.out.bias", layer.ff_out_bias);
  fn(prefix + "ffn.ln.gamma", layer.ff_ln_gamma);
  fn(prefix + "ffn.ln.beta", layer.ff_ln_beta);
}

template <typename W, typename Fn>
void visit(W& w, Fn&& fn) {
  fn("embeddings.word", w.word_embedding);
  fn("embeddings.position", w.position_embedding);
  fn("embeddings.token_type", w.token_type_embedding);
  fn("embeddings.ln.gamma", w.embedding_ln_gamma);
  fn("embeddings.ln.beta", w.embedding_ln_beta);
  for (std::size_t i = 0; i < w.layers.size(); ++i) {
    visit_layer(w.layers[i], "layers." + std::to_string(i) + ".", fn);
  }
}

}  // namespace

template <typename T>
std::vector<std::pair<std::string, BasicTensor<T>*>> named_parameters(
    EncoderWeights<T>& w) {
  std::vector<std::pair<std::string, BasicTensor<T>*>> out;
  visit(w, [&](std::string name, BasicTensor<T>& t) {
    out.emplace_back(std::move(name), &t);
  });
  return out;
}

template <typename T>
std::vector<std::pair<std::string, const BasicTensor<T>*>> named_parameters(
    const EncoderWeights<T>& w) {
  std::vector<std::pair<std::string, const BasicTensor<T>*>> out;
  visit(w, [&](std::string name, const BasicTensor<T>& t) {
    out.emplace_back(std::move(name), &t);
  });
  return out;
}

std::vector<std::pair<std::string, Shape>> expected_tensor_shapes(
    const EncoderConfig& c) {
  const std::size_t d = c.hidden_dim, f = c.ff_dim;
  std::vector<std::pair<std::string, Shape>> out = {
      {"embeddings.word", {c.vocab_size, d}},
      {"embeddings.position", {c.max_len, d}},
      {"embeddings.token_type", {2, d}},
      {"embeddings.ln.gamma", {d}},
      {"embeddings.ln.beta", {d}},
  };
  for (std::size_t i = 0; i < c.num_layers; ++i) {
    const std::string p = "layers." + std::to_string(i) + ".";
    for (const char* proj : {"q", "k", "v", "o"}) {
      out.push_back({p + "attn." + proj + ".weight", {d, d}});
      out.push_back({p + "attn." + proj + ".bias", {d}});
    }
    out.push_back({p + "attn.ln.gamma", {d}});
    out.push_back({p + "attn.ln.beta", {d}});
    out.push_back({p + "ffn.in.weight", {d, f}});
    out.push_back({p + "ffn.in.bias", {f}});
    out.push_back({p + "ffn.out.weight", {f, d}});
    out.push_back({p + "ffn.out.bias", {d}});
    out.push_back({p + "ffn.ln.gamma", {d}});
    out.push_back({p + "ffn.ln.beta", {d}});
  }
  return out;
}

template <typename T>
void check_weights(const EncoderWeights<T>& w, const EncoderConfig& config) {
  config.validate();
  if (w.layers.size() != config.num_layers) {
    throw DimensionError("weights have " + std::to_string(w.layers.size()) +
                         " layers, config says " +
                         std::to_string(config.num_layers));
  }
  const auto expected = expected_tensor_shapes(config);
  const auto actual = named_parameters(w);
  for (std::size_t i = 0; i < expected.size(); ++i) {
    const auto& [name, shape] = expected[i];
    const BasicTensor<T>& t = *actual[i].second;
    if (!t.defined()) throw DimensionError("tensor " + name + " is missing");
    const bool type_table = name == "embeddings.token_type";
    const bool ok = type_table ? (t.rank() == 2 && t.dim(0) >= 1 &&
                                  t.dim(1) == config.hidden_dim)
                               : t.shape() == shape;
    if (!ok) {
      throw DimensionError("tensor " + name + " has shape " +
                           shape_str(t.shape()) + ", expected " +
                           shape_str(shape));
    }
  }
}

EncoderWeights<float> init_random_weights(const EncoderConfig& config,
                                          std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> normal(0.0f, 0.02f);
  auto random = [&](Shape shape) {
    std::vector<float> v(shape_numel(shape));
    for (float& x : v) x = normal(rng);
    return Tensor(std::move(shape), std::move(v));
  };
  auto zeros = [](std::size_t n) { return Tensor(Shape{n}); };
  auto ones = [](std::size_t n) { return Tensor::filled(Shape{n}, 1.0f); };
  const std::size_t d = config.hidden_dim, f = config.ff_dim;

  EncoderWeights<float> w;
  w.word_embedding = random({config.vocab_size, d});
  w.position_embedding = random({config.max_len, d});
  w.token_type_embedding = random({2, d});
  w.embedding_ln_gamma = ones(d);
  w.embedding_ln_beta = zeros(d);
  for (std::size_t i = 0; i < config.num_layers; ++i) {
    LayerWeights<float> l;
    l.q_weight = random({d, d});
    l.q_bias = zeros(d);
    l.k_weight = random({d, d});
    l.k_bias = zeros(d);
    l.v_weight = random({d, d});
    l.v_bias = zeros(d);
    l.o_weight = random({d, d});
    l.o_bias = zeros(d);
    l.attn_ln_gamma = ones(d);
    l.attn_ln_beta = zeros(d);
    l.ff_in_weight = random({d, f});
    l.ff_in_bias = zeros(f);
    l.ff_out_weight = random({f, d});
    l.ff_out_bias = zeros(d);
    l.ff_ln_gamma = ones(d);
    l.ff_ln_beta = zeros(d);
    w.layers.push_back(std::move(l));
  }
  return w;
}

template <typename To, typename From>
EncoderWeights<To> cast_weights(const EncoderWeights<From>& w) {
  EncoderWeights<To> out;
  out.layers.resize(w.layers.size());
  auto dst = named_parameters(out);
  auto src = named_parameters(w);
  for (std::size_t i = 0; i < src.size(); ++i) {
    *dst[i].second = cast<To>(*src[i].second);
  }
  return out;
}

template <typename T>
EncoderWeights<T> clone_weights(const EncoderWeights<T>& w, bool requires_grad) {
  EncoderWeights<T> out;
  out.layers.resize(w.layers.size());
  auto dst = named_parameters(out);
  auto src = named_parameters(w);
  for (std::size_t i = 0; i < src.size(); ++i) {
    *dst[i].second = src[i].second->detach();
    dst[i].second->set_requires_grad(requires_grad);
  }
  return out;
}

template <typename T>
BasicTensor<T> forward(const EncodedBatch& batch, const EncoderWeights<T>& w,
                       const EncoderConfig& config) {
  const std::size_t rows = batch.rows, len = batch.width;
  const std::size_t d = config.hidden_dim, heads = config.num_heads;
  if (rows == 0 || len == 0) throw ContractError("forward: empty batch");
  if (len > config.max_len) {
    throw InputError("forward: sequence length " + std::to_string(len) +
                     " exceeds max_len " + std::to_string(config.max_len));
  }
  for (std::int32_t id : batch.token_ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= config.vocab_size) {
      throw InputError("forward: token id " + std::to_string(id) +
                       " outside vocabulary of " +
                       std::to_string(config.vocab_size));
    }
  }

  std::vector<std::int32_t> positions(rows * len);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t p = 0; p < len; ++p) {
      positions[r * len + p] = static_cast<std::int32_t>(p);
    }
  }
  const std::vector<std::int32_t> types(rows * len, 0);

  BasicTensor<T> x = add(add(embedding(w.word_embedding,
                                       std::span<const std::int32_t>(batch.token_ids)),
                             embedding(w.position_embedding,
                                       std::span<const std::int32_t>(positions))),
                         embedding(w.token_type_embedding,
                                   std::span<const std::int32_t>(types)));
  const T eps = static_cast<T>(kLayerNormEps);
  x = layer_norm(x, w.embedding_ln_gamma, w.embedding_ln_beta, eps);
  x = reshape(x, {rows, len, d});

  // Additive key mask: padded keys get -1e9 before the softmax.
  std::vector<T> key_bias(rows * len);
  for (std::size_t i = 0; i < key_bias.size(); ++i) {
    key_bias[i] = batch.attention_mask[i] ? T(0) : T(-1e9);
  }
  const T inv_sqrt_dh =
      T(1) / std::sqrt(static_cast<T>(d / heads));

  for (const LayerWeights<T>& l : w.layers) {
    BasicTensor<T> q = split_heads(linear(x, l.q_weight, l.q_bias), heads);
    BasicTensor<T> k = split_heads(linear(x, l.k_weight, l.k_bias), heads);
    BasicTensor<T> v = split_heads(linear(x, l.v_weight, l.v_bias), heads);
    BasicTensor<T> scores = scale(bmm_nt(q, k), inv_sqrt_dh);
    scores = add_key_bias(scores, std::span<const T>(key_bias), heads);
    BasicTensor<T> probs = softmax(scores, 2);
    BasicTensor<T> context = merge_heads(bmm(probs, v), heads);
    BasicTensor<T> attn = linear(context, l.o_weight, l.o_bias);
    x = layer_norm(add(x, attn), l.attn_ln_gamma, l.attn_ln_beta, eps);
    BasicTensor<T> h = gelu(linear(x, l.ff_in_weight, l.ff_in_bias));
    BasicTensor<T> ff = linear(h, l.ff_out_weight, l.ff_out_bias);
    x = layer_norm(add(x, ff), l.ff_ln_gamma, l.ff_ln_beta, eps);
  }
  return x;
}

template <typename T>
BasicTensor<T> pool(const BasicTensor<T>& token_embs,
                    std::span<const std::uint8_t> mask, Pooling strategy) {
  if (strategy == Pooling::kCls) {
    if (token_embs.rank() == 3 && mask.size() == token_embs.dim(0) * token_embs.dim(1)) {
      const std::size_t len = token_embs.dim(1);
      for (std::size_t r = 0; r < token_embs.dim(0); ++r) {
        if (!std::any_of(mask.begin() + r * len, mask.begin() + (r + 1) * len,
                         [](std::uint8_t m) { return m != 0; })) {
          throw ContractError("pool: row " + std::to_string(r) +
                              " has an all-zero mask");
        }
      }
    }
    return select_position(token_embs, 0);
  }
  return masked_mean(token_embs, mask);
}

EncoderModel make_random_model(std::string id, const EncoderConfig& config,
                               std::shared_ptr<const Vocab> vocab,
                               std::uint64_t seed) {
  if (!vocab) throw ContractError("make_random_model: vocabulary required");
  EncoderConfig c = config;
  c.vocab_size = vocab->size();
  c.validate();
  return EncoderModel{std::move(id), c, init_random_weights(c, seed),
                      std::move(vocab), Provenance{}};
}

Tensor encode_tokens(std::span<const std::vector<std::int32_t>> sequences,
                     const EncoderModel& model, std::size_t batch_size) {
  if (batch_size == 0) throw ContractError("encode: batch_size must be >= 1");
  GradTape<float>::Pause no_tape;
  const std::size_t d = model.config.hidden_dim;
  std::vector<float> out(sequences.size() * d);
  for (std::size_t start = 0; start < sequences.size(); start += batch_size) {
    const std::size_t n = std::min(batch_size, sequences.size() - start);
    const EncodedBatch batch =
        pad_batch(sequences.subspan(start, n), model.vocab->pad_id());
    const Tensor pooled = pool(forward(batch, model.weights, model.config),
                               std::span<const std::uint8_t>(batch.attention_mask),
                               model.config.pooling);
    std::copy(pooled.values().begin(), pooled.values().end(),
              out.begin() + start * d);
  }
  return Tensor({sequences.size(), d}, std::move(out));
}

Tensor encode(std::span<const std::string> texts, const EncoderModel& model,
              std::size_t batch_size) {
  if (!model.vocab) throw ContractError("encode: model has no vocabulary");
  std::vector<std::vector<std::int32_t>> seqs;
  seqs.reserve(texts.size());
  for (const auto& t : texts) {
    seqs.push_back(tokenize(t, *model.vocab, model.config.max_len));
  }
  return encode_tokens(seqs, model, batch_size);
}

template std::vector<std::pair<std::string, Tensor*>> named_parameters(
    EncoderWeights<float>&);
template std::vector<std::pair<std::string, Tensor64*>> named_parameters(
    EncoderWeights<double>&);
template std::vector<std::pair<std::string, const Tensor*>> named_parameters(
    const EncoderWeights<float>&);
template std::vector<std::pair<std::string, const Tensor64*>> named_parameters(
    const EncoderWeights<double>&);
template void check_weights(const EncoderWeights<float>&, const EncoderConfig&);
template void check_weights(const EncoderWeights<double>&, const EncoderConfig&);
template EncoderWeights<double> cast_weights(const EncoderWeights<float>&);
template EncoderWeights<float> cast_weights(const EncoderWeights<double>&);
template EncoderWeights<float> clone_weights(const EncoderWeights<float>&, bool);
template EncoderWeights<double> clone_weights(const EncoderWeights<double>&, bool);
template Tensor forward(const EncodedBatch&, const EncoderWeights<float>&,
                        const EncoderConfig&);
template Tensor64 forward(const EncodedBatch&, const EncoderWeights<double>&,
                          const EncoderConfig&);
template Tensor pool(const Tensor&, std::span<const std::uint8_t>, Pooling);
template Tensor64 pool(const Tensor64&, std::span<const std::uint8_t>, Pooling);

}  // namespace qdistill
