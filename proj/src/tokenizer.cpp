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

#include "qdistill/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>

#include "qdistill/error.hpp"

namespace qdistill {
namespace {

bool is_space(unsigned char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' ||
         c == '\v';
}

void wordpiece(std::string_view word, const Vocab& vocab,
               std::vector<std::int32_t>& out) {
  if (word.size() > kMaxWordBytes) {
    out.push_back(vocab.unk_id());
    return;
  }
  std::vector<std::int32_t> pieces;
  std::string candidate;
  std::size_t start = 0;
  while (start < word.size()) {
    std::size_t end = word.size();
    std::optional<std::int32_t> found;
    while (start < end) {
      candidate.clear();
      if (start > 0) candidate += Vocab::kContinuation;
      candidate.append(word.substr(start, end - start));
      found = vocab.find(candidate);
      if (found) break;
      --end;
    }
    if (!found) {
      out.push_back(vocab.unk_id());
      return;
    }
    pieces.push_back(*found);
    start = end;
  }
  out.insert(out.end(), pieces.begin(), pieces.end());
}

}  // namespace

Vocab::Vocab(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  ids_.reserve(tokens_.size());
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    auto [it, inserted] =
        ids_.emplace(tokens_[i], static_cast<std::int32_t>(i));
    if (!inserted) {
      throw FormatError("vocabulary token '" + tokens_[i] +
                        "' appears more than once (lines " +
                        std::to_string(it->second + 1) + " and " +
                        std::to_string(i + 1) + ")");
    }
  }
  auto reserved = [&](std::string_view tok) {
    auto id = find(tok);
    if (!id) {
      throw FormatError("vocabulary lacks reserved token " + std::string(tok));
    }
    return *id;
  };
  pad_ = reserved(kPad);
  unk_ = reserved(kUnk);
  cls_ = reserved(kCls);
  sep_ = reserved(kSep);
}

Vocab Vocab::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open vocabulary " + path.string());
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    tokens.push_back(line);
  }
  return Vocab(std::move(tokens));
}

void Vocab::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write vocabulary " + path.string());
  for (const auto& t : tokens_) out << t << '\n';
  if (!out) throw IoError("failed writing vocabulary " + path.string());
}

std::optional<std::int32_t> Vocab::find(std::string_view token) const {
  auto it = ids_.find(std::string(token));
  if (it == ids_.end()) return std::nullopt;
  return it->second;
}

const std::string& Vocab::token(std::int32_t id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw RangeError("token id " + std::to_string(id) + " outside vocabulary");
  }
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<std::int32_t> tokenize(std::string_view text, const Vocab& vocab,
                                   std::size_t max_len) {
  if (max_len < 2) {
    throw ContractError("tokenize: max_len must be at least 2");
  }
  std::vector<std::int32_t> ids;
  ids.push_back(vocab.cls_id());
  std::string word;
  auto flush = [&] {
    if (!word.empty()) {
      wordpiece(word, vocab, ids);
      word.clear();
    }
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (is_space(c)) {
      flush();
      // Stop early once the row is certainly full.
      if (ids.size() >= max_len) break;
    } else {
      word.push_back(c < 0x80 ? static_cast<char>(std::tolower(c)) : ch);
    }
  }
  flush();
  if (ids.size() > max_len - 1) ids.resize(max_len - 1);
  ids.push_back(vocab.sep_id());
  return ids;
}

EncodedBatch pad_batch(std::span<const std::vector<std::int32_t>> sequences,
                       std::int32_t pad_id) {
  EncodedBatch batch;
  batch.rows = sequences.size();
  for (const auto& s : sequences) batch.width = std::max(batch.width, s.size());
  batch.token_ids.assign(batch.rows * batch.width, pad_id);
  batch.attention_mask.assign(batch.rows * batch.width, 0);
  batch.lengths.reserve(batch.rows);
  for (std::size_t r = 0; r < batch.rows; ++r) {
    const auto& s = sequences[r];
    std::copy(s.begin(), s.end(), batch.token_ids.begin() + r * batch.width);
    std::fill_n(batch.attention_mask.begin() + r * batch.width, s.size(), 1);
    batch.lengths.push_back(s.size());
  }
  return batch;
}

EncodedBatch batch_encode(std::span<const std::string> texts,
                          const Vocab& vocab, std::size_t max_len) {
  if (texts.empty()) throw ContractError("batch_encode: empty text list");
  std::vector<std::vector<std::int32_t>> seqs;
  seqs.reserve(texts.size());
  for (const auto& t : texts) seqs.push_back(tokenize(t, vocab, max_len));
  return pad_batch(seqs, vocab.pad_id());
}

}  // namespace qdistill
