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

// BERT-style text encoder (post-layer-norm blocks, learned absolute
// positions) with mean or [CLS] pooling. The same code serves as teacher and
// as student; only the depth differs.

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "qdistill/numerics/tensor.hpp"
#include "qdistill/tokenizer.hpp"

namespace qdistill {

enum class Pooling { kMean, kCls };

std::string_view pooling_name(Pooling p);
Pooling parse_pooling(std::string_view name);

struct EncoderConfig {
  std::size_t num_layers = 6;
  std::size_t hidden_dim = 64;
  std::size_t num_heads = 4;
  std::size_t ff_dim = 256;
  std::size_t max_len = 64;
  std::size_t vocab_size = 0;
  Pooling pooling = Pooling::kMean;

  // Throws ContractError if a dimension is zero or heads do not divide
  // hidden_dim. num_layers may be zero.
  void validate() const;
  bool operator==(const EncoderConfig&) const = default;
};

// Layer-norm epsilon used throughout the encoder (BERT's value).
inline constexpr double kLayerNormEps = 1e-12;

template <typename T>
struct LayerWeights {
  BasicTensor<T> q_weight, q_bias, k_weight, k_bias, v_weight, v_bias;
  BasicTensor<T> o_weight, o_bias;
  BasicTensor<T> attn_ln_gamma, attn_ln_beta;
  BasicTensor<T> ff_in_weight, ff_in_bias, ff_out_weight, ff_out_bias;
  BasicTensor<T> ff_ln_gamma, ff_ln_beta;
};

// Projection matrices are stored input-major ([in x out]): y = x * W + b.
template <typename T>
struct EncoderWeights {
  BasicTensor<T> word_embedding;        // [vocab_size x hidden]
  BasicTensor<T> position_embedding;    // [max_len x hidden]
  BasicTensor<T> token_type_embedding;  // [types x hidden]; row 0 is added
  BasicTensor<T> embedding_ln_gamma, embedding_ln_beta;
  std::vector<LayerWeights<T>> layers;
};

// Canonical tensor name for every parameter, in a fixed order:
//   embeddings.word, embeddings.position, embeddings.token_type,
//   embeddings.ln.gamma, embeddings.ln.beta,
//   layers.<i>.attn.{q,k,v,o}.{weight,bias}, layers.<i>.attn.ln.{gamma,beta},
//   layers.<i>.ffn.{in,out}.{weight,bias}, layers.<i>.ffn.ln.{gamma,beta}
template <typename T>
std::vector<std::pair<std::string, BasicTensor<T>*>> named_parameters(
    EncoderWeights<T>& w);
template <typename T>
std::vector<std::pair<std::string, const BasicTensor<T>*>> named_parameters(
    const EncoderWeights<T>& w);

// Shapes every named tensor must have under `config`. The token-type table
// may have any positive row count; its expected shape here uses 2 rows.
std::vector<std::pair<std::string, Shape>> expected_tensor_shapes(
    const EncoderConfig& config);

// Throws DimensionError when a tensor does not match `config`.
template <typename T>
void check_weights(const EncoderWeights<T>& w, const EncoderConfig& config);

// Normal(0, 0.02) matrices, zero biases, unit layer-norm gains.
EncoderWeights<float> init_random_weights(const EncoderConfig& config,
                                          std::uint64_t seed);

template <typename To, typename From>
EncoderWeights<To> cast_weights(const EncoderWeights<From>& w);

// Deep copy with the given requires_grad flag on every parameter.
template <typename T>
EncoderWeights<T> clone_weights(const EncoderWeights<T>& w, bool requires_grad);

// Token embeddings [rows x width x hidden]. Padding positions hold values
// but never influence real positions. InputError on out-of-range ids.
template <typename T>
BasicTensor<T> forward(const EncodedBatch& batch, const EncoderWeights<T>& w,
                       const EncoderConfig& config);

// Sentence embeddings [rows x hidden].
template <typename T>
BasicTensor<T> pool(const BasicTensor<T>& token_embs,
                    std::span<const std::uint8_t> mask, Pooling strategy);

// Where a model came from: extracted models remember the original teacher
// and which of its layers they kept.
struct Provenance {
  std::string teacher_id;
  std::size_t teacher_layers = 0;
  std::vector<std::size_t> layers;
  std::string notes;

  bool extracted() const { return !teacher_id.empty(); }
  bool operator==(const Provenance&) const = default;
};

struct EncoderModel {
  std::string id;
  EncoderConfig config;
  EncoderWeights<float> weights;
  std::shared_ptr<const Vocab> vocab;
  Provenance provenance;
};

EncoderModel make_random_model(std::string id, const EncoderConfig& config,
                               std::shared_ptr<const Vocab> vocab,
                               std::uint64_t seed);

// Default chunk size for encode(); results do not depend on it.
inline constexpr std::size_t kEncodeBatch = 64;

// tokenize -> forward -> pool, in chunks of `batch_size` texts. Row i of the
// result embeds texts[i]. Never records on a tape.
Tensor encode(std::span<const std::string> texts, const EncoderModel& model,
              std::size_t batch_size = kEncodeBatch);

// Same, for already-tokenized rows.
Tensor encode_tokens(std::span<const std::vector<std::int32_t>> sequences,
                     const EncoderModel& model,
                     std::size_t batch_size = kEncodeBatch);

}  // namespace qdistill
