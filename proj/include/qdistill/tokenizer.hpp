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

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace qdistill {

// Token <-> id table read from a plain-text vocabulary (one token per line,
// line number = id). [PAD], [UNK], [CLS] and [SEP] must each appear once.
class Vocab {
 public:
  static constexpr std::string_view kPad = "[PAD]";
  static constexpr std::string_view kUnk = "[UNK]";
  static constexpr std::string_view kCls = "[CLS]";
  static constexpr std::string_view kSep = "[SEP]";
  static constexpr std::string_view kContinuation = "##";

  // Throws FormatError on duplicates or missing reserved tokens.
  explicit Vocab(std::vector<std::string> tokens);

  static Vocab load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  std::size_t size() const { return tokens_.size(); }
  std::optional<std::int32_t> find(std::string_view token) const;
  const std::string& token(std::int32_t id) const;
  const std::vector<std::string>& tokens() const { return tokens_; }

  std::int32_t pad_id() const { return pad_; }
  std::int32_t unk_id() const { return unk_; }
  std::int32_t cls_id() const { return cls_; }
  std::int32_t sep_id() const { return sep_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::int32_t> ids_;
  std::int32_t pad_ = 0, unk_ = 0, cls_ = 0, sep_ = 0;
};

// Padded batch of token ids with its attention mask, both row-major
// [rows x width]. Row r is real up to lengths[r], padding afterwards.
struct EncodedBatch {
  std::size_t rows = 0;
  std::size_t width = 0;
  std::vector<std::int32_t> token_ids;
  std::vector<std::uint8_t> attention_mask;
  std::vector<std::size_t> lengths;

  std::span<const std::int32_t> row_ids(std::size_t r) const {
    return std::span(token_ids).subspan(r * width, width);
  }
  std::span<const std::uint8_t> row_mask(std::size_t r) const {
    return std::span(attention_mask).subspan(r * width, width);
  }
};

// Words longer than this many bytes map to [UNK] without a lookup.
inline constexpr std::size_t kMaxWordBytes = 100;

// Lowercases, splits on whitespace and applies greedy longest-match WordPiece
// with "##" continuations; a word that cannot be fully covered becomes [UNK].
// The result is [CLS] pieces... [SEP], truncated to max_len (>= 2) with the
// trailing [SEP] preserved.
std::vector<std::int32_t> tokenize(std::string_view text, const Vocab& vocab,
                                   std::size_t max_len);

// Pads already-tokenized rows to the longest one.
EncodedBatch pad_batch(std::span<const std::vector<std::int32_t>> sequences,
                       std::int32_t pad_id);

// Tokenizes each text and pads to the longest row in this batch (per-batch
// dynamic padding, never wider than max_len).
EncodedBatch batch_encode(std::span<const std::string> texts,
                          const Vocab& vocab, std::size_t max_len);

}  // namespace qdistill
