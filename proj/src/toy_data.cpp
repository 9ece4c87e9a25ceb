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

#include "qdistill/toy_data.hpp"

#include <algorithm>
#include <array>
#include <random>
#include <set>
#include <string_view>

#include "qdistill/error.hpp"

namespace qdistill {
namespace {

constexpr std::array<std::string_view, 16> kConsonants = {
    "b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "h", "j"};
constexpr std::array<std::string_view, 5> kVowels = {"a", "e", "i", "o", "u"};

constexpr std::array<std::string_view, 40> kTopics = {
    "river",   "mountain", "engine",  "protein", "festival", "dialect", "comet",
    "harbor",  "orchard",  "reactor", "glacier", "painting", "opera",   "cipher",
    "lichen",  "canyon",   "turbine", "sonata",  "fossil",   "market",  "lagoon",
    "tribe",   "enzyme",   "bridge",  "meadow",  "crystal",  "parish",  "vessel",
    "fungus",  "ballad",   "quarry",  "plateau", "beetle",   "ritual",  "alloy",
    "estuary", "sculpture", "monsoon", "pigment", "fortress"};

constexpr std::array<std::string_view, 30> kFiller = {
    "the",   "a",     "of",    "is",    "and",   "in",   "from",  "to",
    "what",  "about", "tell",  "me",    "where", "does", "come",  "who",
    "known", "for",   "it",    "its",   "linked", "with", "near", "old",
    "large", "small", "famous", "type", "describe", "which"};

// Uniform index without std::uniform_int_distribution, whose draws differ
// between standard libraries.
std::size_t pick(std::mt19937_64& rng, std::size_t n) {
  return static_cast<std::size_t>(rng() % n);
}

template <typename C>
std::string_view pick_from(std::mt19937_64& rng, const C& c) {
  return c[pick(rng, c.size())];
}

std::vector<std::string> syllables() {
  std::vector<std::string> out;
  for (auto c : kConsonants) {
    for (auto v : kVowels) out.push_back(std::string(c) + std::string(v));
  }
  return out;
}

struct Entity {
  std::string word;
};

struct DocSpec {
  std::string entity;
  std::array<std::string_view, 4> topics;
  std::size_t related = 0;
};

std::string query_text(std::mt19937_64& rng, const DocSpec& d) {
  const std::string_view t = d.topics[pick(rng, 3)];
  switch (pick(rng, 6)) {
    case 0: return "what is " + d.entity;
    case 1: return d.entity + " " + std::string(t);
    case 2: return "tell me about the " + std::string(t) + " " + d.entity;
    case 3: return "where does " + d.entity + " come from";
    case 4: return "which " + std::string(t) + " is " + d.entity;
    default: return "describe " + d.entity + " and its " + std::string(t);
  }
}

}  // namespace

ToyDataset make_toy_dataset(const ToyConfig& config) {
  if (config.num_docs < 2) throw ContractError("toy data: need at least 2 documents");
  if (config.num_queries > config.num_docs) {
    throw ContractError("toy data: more evaluation queries than documents");
  }
  std::mt19937_64 rng(config.seed);
  const auto syl = syllables();
  if (config.num_docs > syl.size() * syl.size()) {
    throw ContractError("toy data: too many documents for the entity space");
  }

  std::vector<std::string> tokens = {"[PAD]", "[UNK]", "[CLS]", "[SEP]"};
  for (auto w : kFiller) tokens.emplace_back(w);
  for (auto w : kTopics) tokens.emplace_back(w);
  // Some syllables ("me", "to") are already filler words.
  for (const auto& s : syl) {
    if (std::find(tokens.begin(), tokens.end(), s) == tokens.end()) tokens.push_back(s);
  }
  for (const auto& s : syl) tokens.push_back("##" + s);
  tokens.emplace_back(".");
  tokens.emplace_back(",");

  std::set<std::string> used;
  std::vector<DocSpec> specs;
  while (specs.size() < config.num_docs) {
    std::string word = syl[pick(rng, syl.size())] + syl[pick(rng, syl.size())];
    if (!used.insert(word).second) continue;
    DocSpec d;
    d.entity = std::move(word);
    for (auto& t : d.topics) t = pick_from(rng, kTopics);
    specs.push_back(std::move(d));
  }
  for (std::size_t i = 0; i < specs.size(); ++i) {
    std::size_t r = pick(rng, specs.size() - 1);
    if (r >= i) ++r;
    specs[i].related = r;
  }

  ToyDataset data{Vocab(std::move(tokens)), {}, {}, {}, {}, {}};
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const auto& d = specs[i];
    std::string text = d.entity + " is a " + std::string(d.topics[0]) + " " +
                       std::string(d.topics[1]) + " from the " +
                       std::string(d.topics[2]) + " , known for its " +
                       std::string(d.topics[3]) + " . it is linked with " +
                       specs[d.related].entity + " .";
    data.corpus.push_back({"d" + std::to_string(1000 + i), std::move(text)});
  }

  // Evaluation queries target a fixed-seed sample of documents.
  std::vector<std::size_t> docs(specs.size());
  for (std::size_t i = 0; i < docs.size(); ++i) docs[i] = i;
  for (std::size_t i = docs.size(); i > 1; --i) std::swap(docs[i - 1], docs[pick(rng, i)]);
  for (std::size_t n = 0; n < config.num_queries; ++n) {
    const std::size_t target = docs[n];
    const std::string qid = "q" + std::to_string(100 + n);
    data.queries.push_back({qid, query_text(rng, specs[target])});
    auto& judged = data.qrels[qid];
    judged[data.corpus[target].id] = 2;
    for (std::size_t j = 0; j < specs.size(); ++j) {
      if (specs[j].related == target) judged[data.corpus[j].id] = 1;
    }
  }

  for (std::size_t i = 0; i < specs.size(); ++i) {
    for (std::size_t p = 0; p < config.pairs_per_doc; ++p) {
      data.train_pairs.push_back({query_text(rng, specs[i]), data.corpus[i].text});
    }
  }
  for (std::size_t n = 0; n < config.distill_queries; ++n) {
    data.distill_queries.push_back(
        {"u" + std::to_string(n), query_text(rng, specs[pick(rng, specs.size())])});
  }
  return data;
}

void write_toy_dataset(const ToyDataset& data, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  data.vocab.save(dir / ToyFiles::kVocab);
  write_corpus(dir / ToyFiles::kCorpus, data.corpus);
  write_queries(dir / ToyFiles::kQueries, data.queries);
  write_qrels(data.qrels, dir / ToyFiles::kQrels);
  write_training_pairs(dir / ToyFiles::kTrainPairs, data.train_pairs);
  write_queries(dir / ToyFiles::kDistillQueries, data.distill_queries);
}

}  // namespace qdistill
