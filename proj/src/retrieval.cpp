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

#include "qdistill/retrieval.hpp"

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include <unistd.h>

#include "json.hpp"
#include "qdistill/error.hpp"
#include "qdistill/model_io.hpp"
#include "qdistill/simd/kernels.hpp"

namespace qdistill {
namespace {

constexpr char kIndexMagic[4] = {'A', 'D', 'I', 'X'};
constexpr std::uint8_t kIndexVersion = 1;
constexpr std::size_t kIndexPreamble = 4 + 1 + 8;

std::uint64_t align64(std::uint64_t n) { return (n + 63) / 64 * 64; }

RankedList top_k(const DenseIndex& index, const float* scores, std::size_t k) {
  const std::size_t n = index.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto better = [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return index.doc_ids[a] < index.doc_ids[b];
  };
  const std::size_t take = std::min(k, n);
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take),
                    order.end(), better);
  RankedList out;
  out.reserve(take);
  for (std::size_t i = 0; i < take; ++i) {
    out.push_back({index.doc_ids[order[i]], scores[order[i]]});
  }
  return out;
}

}  // namespace

DenseIndex make_index(std::vector<std::string> doc_ids, Tensor embeddings,
                      std::size_t dim, std::string fingerprint) {
  std::unordered_set<std::string> seen;
  for (const auto& id : doc_ids) {
    if (!seen.insert(id).second) {
      throw FormatError("index: duplicate document id '" + id + "'");
    }
  }
  if (embeddings.shape() != Shape{doc_ids.size(), dim}) {
    throw DimensionError("index: embeddings " + shape_str(embeddings.shape()) +
                         " for " + std::to_string(doc_ids.size()) +
                         " documents of dimension " + std::to_string(dim));
  }
  DenseIndex index;
  index.doc_ids = std::move(doc_ids);
  index.embeddings = std::move(embeddings);
  index.dim = dim;
  index.fingerprint = std::move(fingerprint);
  return index;
}

DenseIndex build_index(std::span<const Document> corpus,
                       const EncoderModel& encoder, std::size_t batch_size) {
  std::vector<std::string> ids, texts;
  ids.reserve(corpus.size());
  texts.reserve(corpus.size());
  for (const auto& d : corpus) {
    ids.push_back(d.id);
    texts.push_back(d.text);
  }
  const std::size_t dim = encoder.config.hidden_dim;
  // Reject duplicates before paying for the encode.
  make_index(ids, Tensor({ids.size(), dim}), dim, "");
  Tensor embs = encode(texts, encoder, batch_size);
  return make_index(std::move(ids), std::move(embs), dim, fingerprint(encoder));
}

RankedList search(const DenseIndex& index, std::span<const float> query,
                  std::size_t k) {
  if (k == 0) throw ContractError("search: k must be >= 1");
  if (query.size() != index.dim) {
    throw DimensionError("search: query has " + std::to_string(query.size()) +
                         " dimensions, index " + std::to_string(index.dim));
  }
  const auto& kernels = simd::active();
  const auto embs = index.embeddings.values();
  std::vector<float> scores(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) {
    scores[i] = kernels.dot(query.data(), embs.data() + i * index.dim, index.dim);
  }
  return top_k(index, scores.data(), k);
}

std::vector<RankedList> search_batch(const DenseIndex& index,
                                     const Tensor& queries, std::size_t k) {
  if (k == 0) throw ContractError("search: k must be >= 1");
  if (queries.rank() != 2 || queries.dim(1) != index.dim) {
    throw DimensionError("search: queries " + shape_str(queries.shape()) +
                         " against index dimension " + std::to_string(index.dim));
  }
  const std::size_t nq = queries.dim(0), nd = index.size();
  std::vector<float> scores(nq * nd);
  if (nq > 0 && nd > 0) {
    simd::active().gemm_nt(nq, nd, index.dim, queries.values().data(),
                           index.embeddings.values().data(), scores.data(), false);
  }
  std::vector<RankedList> out;
  out.reserve(nq);
  for (std::size_t q = 0; q < nq; ++q) out.push_back(top_k(index, scores.data() + q * nd, k));
  return out;
}

Run run_retrieval(std::span<const Query> queries, const DenseIndex& index,
                  const EncoderModel& query_encoder, std::size_t k,
                  std::size_t batch_size) {
  std::unordered_set<std::string> seen;
  for (const auto& q : queries) {
    if (!seen.insert(q.id).second) {
      throw ContractError("run_retrieval: duplicate query id '" + q.id + "'");
    }
  }
  if (query_encoder.config.hidden_dim != index.dim) {
    throw DimensionError("run_retrieval: query encoder dimension " +
                         std::to_string(query_encoder.config.hidden_dim) +
                         " does not match index dimension " +
                         std::to_string(index.dim));
  }
  const Tensor embs = encode(query_texts(queries), query_encoder, batch_size);
  auto lists = search_batch(index, embs, k);
  Run run;
  for (std::size_t i = 0; i < queries.size(); ++i) {
    run.emplace(queries[i].id, std::move(lists[i]));
  }
  return run;
}

void write_trec(const Run& run, const std::filesystem::path& path,
                const std::string& tag) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  char score[32];
  for (const auto& [qid, list] : run) {
    for (std::size_t i = 0; i < list.size(); ++i) {
      std::snprintf(score, sizeof(score), "%.9g", static_cast<double>(list[i].score));
      out << qid << " Q0 " << list[i].doc_id << ' ' << (i + 1) << ' ' << score
          << ' ' << tag << '\n';
    }
  }
  if (!out) throw IoError("failed writing " + path.string());
}

Run read_trec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  Run run;
  std::string line;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ss(line);
    std::string qid, q0, doc, tag;
    std::size_t rank = 0;
    float score = 0.0f;
    if (!(ss >> qid >> q0 >> doc >> rank >> score >> tag)) {
      throw FormatError(path.string() + ":" + std::to_string(n) +
                        ": expected 'qid Q0 docid rank score tag'");
    }
    auto& list = run[qid];
    if (rank != list.size() + 1) {
      throw FormatError(path.string() + ":" + std::to_string(n) +
                        ": ranks for query " + qid + " are not consecutive");
    }
    list.push_back({doc, score});
  }
  return run;
}

void save_index(const DenseIndex& index, const std::filesystem::path& path) {
  const std::string header = nlohmann::json{{"dim", index.dim},
                                            {"count", index.size()},
                                            {"fingerprint", index.fingerprint},
                                            {"doc_ids", index.doc_ids}}
                                 .dump();
  const std::uint64_t payload = align64(kIndexPreamble + header.size());
  std::vector<char> bytes(payload + index.embeddings.numel() * sizeof(float), 0);
  std::memcpy(bytes.data(), kIndexMagic, 4);
  bytes[4] = static_cast<char>(kIndexVersion);
  const std::uint64_t len = header.size();
  for (int i = 0; i < 8; ++i) bytes[5 + i] = static_cast<char>(len >> (8 * i));
  std::memcpy(bytes.data() + kIndexPreamble, header.data(), header.size());
  if (index.embeddings.numel() > 0) {
    std::memcpy(bytes.data() + payload, index.embeddings.values().data(),
                index.embeddings.numel() * sizeof(float));
  }
  auto tmp = path;
  tmp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

DenseIndex load_index(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const std::vector<char> bytes(std::istreambuf_iterator<char>(in), {});
  const std::string src = path.string();
  if (bytes.size() < kIndexPreamble || std::memcmp(bytes.data(), kIndexMagic, 4) != 0) {
    throw FormatError(src + ": not an index file");
  }
  if (static_cast<std::uint8_t>(bytes[4]) != kIndexVersion) {
    throw FormatError(src + ": unsupported index version");
  }
  std::uint64_t len = 0;
  for (int i = 0; i < 8; ++i) {
    len |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[5 + i])) << (8 * i);
  }
  if (len > bytes.size() - kIndexPreamble) throw FormatError(src + ": truncated header");
  nlohmann::json h;
  std::size_t dim = 0, count = 0;
  std::vector<std::string> ids;
  std::string fp;
  try {
    h = nlohmann::json::parse(bytes.begin() + kIndexPreamble,
                              bytes.begin() + static_cast<std::ptrdiff_t>(kIndexPreamble + len));
    dim = h.at("dim").get<std::size_t>();
    count = h.at("count").get<std::size_t>();
    ids = h.at("doc_ids").get<std::vector<std::string>>();
    fp = h.at("fingerprint").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(src + ": malformed header: " + e.what());
  }
  if (ids.size() != count) throw FormatError(src + ": doc id count mismatch");
  const std::uint64_t payload = align64(kIndexPreamble + len);
  const std::uint64_t need = static_cast<std::uint64_t>(count) * dim * sizeof(float);
  if (bytes.size() != payload + need) {
    throw FormatError(src + ": payload holds " +
                      std::to_string(bytes.size() > payload ? bytes.size() - payload : 0) +
                      " bytes, expected " + std::to_string(need));
  }
  std::vector<float> values(count * dim);
  if (need > 0) std::memcpy(values.data(), bytes.data() + payload, need);
  return make_index(std::move(ids), Tensor({count, dim}, std::move(values)), dim,
                    std::move(fp));
}

}  // namespace qdistill
