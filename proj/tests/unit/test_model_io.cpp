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

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "doctest.h"
#include "json.hpp"
#include "qdistill/error.hpp"
#include "qdistill/model_io.hpp"

using namespace qdistill;
namespace fs = std::filesystem;

namespace {

EncoderModel teacher_model(std::size_t layers = 4, std::uint64_t seed = 21) {
  std::vector<std::string> tokens = {"[PAD]", "[UNK]", "[CLS]", "[SEP]"};
  for (const char* w : {"red", "green", "blue", "fox", "jumps", "##s"}) tokens.emplace_back(w);
  auto vocab = std::make_shared<const Vocab>(std::move(tokens));
  EncoderConfig cfg;
  cfg.num_layers = layers;
  cfg.hidden_dim = 16;
  cfg.num_heads = 2;
  cfg.ff_dim = 24;
  cfg.max_len = 12;
  cfg.vocab_size = vocab->size();
  return make_random_model("teacher", cfg, vocab, seed);
}

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("qdistill_model_io_" + std::to_string(reinterpret_cast<std::uintptr_t>(this)));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::vector<std::uint8_t> read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void write_bytes(const fs::path& p, const std::vector<std::uint8_t>& b) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

std::uint64_t u64_at(const std::vector<std::uint8_t>& b, std::size_t off) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t(b[off + i]) << (8 * i);
  return v;
}

// Splits a checkpoint into its JSON header and payload, and reassembles it
// after edits.
struct Parts {
  nlohmann::json header;
  std::vector<std::uint8_t> payload;
};

Parts split(const std::vector<std::uint8_t>& b) {
  const std::uint64_t h = u64_at(b, 5);
  Parts p;
  p.header = nlohmann::json::parse(b.begin() + 13, b.begin() + 13 + std::ptrdiff_t(h));
  const std::size_t start = (13 + h + 63) / 64 * 64;
  p.payload.assign(b.begin() + std::ptrdiff_t(start), b.end());
  return p;
}

std::vector<std::uint8_t> join(const Parts& p) {
  const std::string text = p.header.dump(1);
  std::vector<std::uint8_t> b = {'A', 'D', 'E', 'C', 1};
  for (int i = 0; i < 8; ++i) b.push_back(std::uint8_t(text.size() >> (8 * i)));
  b.insert(b.end(), text.begin(), text.end());
  b.resize((b.size() + 63) / 64 * 64, 0);
  b.insert(b.end(), p.payload.begin(), p.payload.end());
  return b;
}

void check_bitwise_equal(const EncoderModel& a, const EncoderModel& b) {
  CHECK(a.config == b.config);
  CHECK(a.vocab->tokens() == b.vocab->tokens());
  const auto pa = named_parameters(a.weights);
  const auto pb = named_parameters(b.weights);
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CAPTURE(pa[i].first);
    CHECK(pa[i].first == pb[i].first);
    CHECK(pa[i].second->shape() == pb[i].second->shape());
    CHECK(std::memcmp(pa[i].second->values().data(), pb[i].second->values().data(),
                      pa[i].second->numel() * sizeof(float)) == 0);
  }
}

}  // namespace

TEST_CASE("save then load is bitwise exact") {
  TempDir dir;
  const EncoderModel m = teacher_model();
  const fs::path p = dir.path / "t.ckpt";
  save(m, p);
  CHECK(fs::exists(dir.path / "t.ckpt.vocab.txt"));
  const EncoderModel back = load(p);
  CHECK(back.id == m.id);
  check_bitwise_equal(m, back);

  // Re-saving the loaded model gives the same bytes.
  const fs::path p2 = dir.path / "t.ckpt";
  const auto before = read_bytes(p);
  save(back, p2);
  CHECK(read_bytes(p2) == before);
  CHECK(fingerprint(m) == fingerprint(back));
}

TEST_CASE("file layout and standalone header") {
  TempDir dir;
  const EncoderModel m = teacher_model(2);
  const fs::path p = dir.path / "m.ckpt";
  save(m, p);
  const auto b = read_bytes(p);
  CHECK(std::string(b.begin(), b.begin() + 4) == "ADEC");
  CHECK(b[4] == 1);
  const CheckpointHeader h = read_header(p);
  CHECK(h.model_id == m.id);
  CHECK(h.config == m.config);
  CHECK(h.vocab_file == "m.ckpt.vocab.txt");
  CHECK(h.payload_offset % kPayloadAlignment == 0);
  CHECK(h.payload_offset == (13 + u64_at(b, 5) + 63) / 64 * 64);
  CHECK(h.payload_offset + h.payload_bytes == b.size());
  CHECK(h.tensors.size() == 5 + 16 * 2);
  std::vector<std::string> names;
  for (const auto& e : h.tensors) {
    CHECK(e.dtype == "f32");
    CHECK(e.offset % kPayloadAlignment == 0);
    CHECK(e.nbytes == shape_numel(e.shape) * 4);
    CHECK(e.offset + e.nbytes <= h.payload_bytes);
    names.push_back(e.name);
  }
  std::sort(names.begin(), names.end());
  CHECK(std::adjacent_find(names.begin(), names.end()) == names.end());

  // The header is readable even if the payload is gone.
  std::vector<std::uint8_t> head(b.begin(), b.begin() + std::ptrdiff_t(h.payload_offset));
  write_bytes(dir.path / "head.ckpt", head);
  CHECK(read_header(dir.path / "head.ckpt").tensors.size() == h.tensors.size());
  CHECK_THROWS_AS(load(dir.path / "head.ckpt"), FormatError);
}

TEST_CASE("payload is little-endian float32 at the manifest offsets") {
  TempDir dir;
  const EncoderModel m = teacher_model(1);
  const fs::path p = dir.path / "m.ckpt";
  save(m, p);
  const auto b = read_bytes(p);
  const CheckpointHeader h = read_header(p);
  const auto params = named_parameters(m.weights);
  for (const auto& e : h.tensors) {
    auto it = std::find_if(params.begin(), params.end(),
                           [&](const auto& kv) { return kv.first == e.name; });
    REQUIRE(it != params.end());
    const std::uint8_t* base = b.data() + h.payload_offset + e.offset;
    for (std::size_t i = 0; i < it->second->numel(); i += 7) {
      std::uint32_t bits = 0;
      for (int k = 0; k < 4; ++k) bits |= std::uint32_t(base[4 * i + k]) << (8 * k);
      float v;
      std::memcpy(&v, &bits, 4);
      CHECK(v == (*it->second)[i]);
    }
  }
}

TEST_CASE("corrupt files are rejected with format errors") {
  TempDir dir;
  const EncoderModel m = teacher_model(1);
  const fs::path p = dir.path / "m.ckpt";
  save(m, p);
  const auto good = read_bytes(p);
  const fs::path bad = dir.path / "bad.ckpt";
  fs::copy_file(dir.path / "m.ckpt.vocab.txt", dir.path / "bad.ckpt.vocab.txt");
  auto expect_error = [&](const std::vector<std::uint8_t>& bytes, const std::string& needle) {
    write_bytes(bad, bytes);
    std::string what;
    try {
      (void)load(bad);
    } catch (const FormatError& e) {
      what = e.what();
    }
    CAPTURE(what);
    CHECK(what.find(needle) != std::string::npos);
  };

  SUBCASE("magic") {
    auto b = good;
    b[0] = 'X';
    expect_error(b, "magic");
  }
  SUBCASE("version") {
    auto b = good;
    b[4] = 2;
    expect_error(b, "version");
  }
  SUBCASE("truncated payload") {
    auto b = good;
    b.resize(b.size() - 10);
    expect_error(b, "truncated");
  }
  SUBCASE("unknown tensors are listed by name") {
    Parts parts = split(good);
    nlohmann::json extra = parts.header["tensors"][0];
    extra["name"] = "layers.9.attn.q.weight";
    extra["offset"] = parts.payload.size();
    parts.header["tensors"].push_back(extra);
    const std::size_t grow = extra["nbytes"].get<std::size_t>();
    parts.payload.resize(parts.payload.size() + grow, 0);
    parts.header["payload_bytes"] = parts.payload.size();
    expect_error(join(parts), "layers.9.attn.q.weight");
  }
  SUBCASE("missing tensors are listed by name") {
    Parts parts = split(good);
    auto& t = parts.header["tensors"];
    t.erase(t.begin() + 1);
    expect_error(join(parts), "embeddings.position");
  }
  SUBCASE("shape inconsistent with the config") {
    Parts parts = split(good);
    parts.header["tensors"][3]["shape"] = {8};
    parts.header["tensors"][3]["nbytes"] = 32;
    expect_error(join(parts), "embeddings.ln.gamma");
  }
  SUBCASE("nbytes inconsistent with the shape") {
    Parts parts = split(good);
    parts.header["tensors"][3]["nbytes"] = 4;
    expect_error(join(parts), "embeddings.ln.gamma");
  }
  SUBCASE("reassembling an untouched header loads fine") {
    write_bytes(bad, join(split(good)));
    check_bitwise_equal(load(bad), m);
  }
}

TEST_CASE("a missing vocabulary file is an error") {
  TempDir dir;
  const fs::path p = dir.path / "m.ckpt";
  save(teacher_model(1), p);
  fs::remove(dir.path / "m.ckpt.vocab.txt");
  CHECK_THROWS(load(p));
}

TEST_CASE("extract_layers keeps embeddings and selected layers") {
  const EncoderModel t = teacher_model(12);
  const EncoderModel s = extract_layers(t, {1, 4, 7, 10});
  CHECK(s.config.num_layers == 4);
  CHECK(s.config.pooling == t.config.pooling);
  CHECK(s.provenance.teacher_id == "teacher");
  CHECK(s.provenance.teacher_layers == 12);
  CHECK(s.provenance.layers == std::vector<std::size_t>{1, 4, 7, 10});
  CHECK(s.id == "teacher-L1,4,7,10");
  CHECK(s.vocab->tokens() == t.vocab->tokens());
  auto same = [](const Tensor& a, const Tensor& b) {
    return a.shape() == b.shape() &&
           std::equal(a.values().begin(), a.values().end(), b.values().begin());
  };
  CHECK(same(s.weights.word_embedding, t.weights.word_embedding));
  CHECK(same(s.weights.position_embedding, t.weights.position_embedding));
  CHECK(same(s.weights.embedding_ln_gamma, t.weights.embedding_ln_gamma));
  const std::size_t picks[] = {1, 4, 7, 10};
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(same(s.weights.layers[i].q_weight, t.weights.layers[picks[i]].q_weight));
    CHECK(same(s.weights.layers[i].ff_out_weight, t.weights.layers[picks[i]].ff_out_weight));
    CHECK(same(s.weights.layers[i].ff_ln_beta, t.weights.layers[picks[i]].ff_ln_beta));
  }
  // No shared storage with the teacher.
  EncoderModel s2 = extract_layers(t, {0});
  s2.weights.layers[0].q_bias.mutable_values()[0] += 1.0f;
  s2.weights.word_embedding.mutable_values()[0] += 1.0f;
  CHECK(s2.weights.layers[0].q_bias[0] != t.weights.layers[0].q_bias[0]);
  CHECK(s2.weights.word_embedding[0] != t.weights.word_embedding[0]);
}

TEST_CASE("extract_layers rejects invalid schemes") {
  const EncoderModel t = teacher_model(12);
  CHECK_THROWS_AS(extract_layers(t, {12}), RangeError);
  CHECK_THROWS_AS(extract_layers(t, {}), ContractError);
  CHECK_THROWS_AS(extract_layers(t, {3, 3}), ContractError);
  CHECK_THROWS_AS(extract_layers(t, {4, 2}), ContractError);
}

TEST_CASE("extraction composes and provenance survives a round trip") {
  TempDir dir;
  const EncoderModel t = teacher_model(6);
  const EncoderModel ab = extract_layers(t, {2, 5});
  const EncoderModel a = extract_layers(ab, {0});
  const EncoderModel direct = extract_layers(t, {2});
  check_bitwise_equal(a, direct);
  CHECK(a.provenance == direct.provenance);
  CHECK(a.provenance.teacher_id == "teacher");
  CHECK(a.provenance.layers == std::vector<std::size_t>{2});

  LayerScheme all(6);
  std::iota(all.begin(), all.end(), 0);
  const EncoderModel id1 = extract_layers(t, all);
  const EncoderModel id2 = extract_layers(id1, all);
  check_bitwise_equal(id1, id2);
  CHECK(id1.provenance == id2.provenance);

  save(ab, dir.path / "ab.ckpt");
  const EncoderModel back = load(dir.path / "ab.ckpt");
  CHECK(back.provenance == ab.provenance);
  CHECK(back.id == ab.id);
}

TEST_CASE("builtin schemes") {
  const auto s12 = builtin_schemes();
  CHECK(s12.size() == 13);
  std::size_t four = 0, two = 0, one = 0;
  for (const auto& s : s12) {
    CHECK_NOTHROW(validate_scheme(s, 12));
    four += s.size() == 4;
    two += s.size() == 2;
    one += s.size() == 1;
  }
  CHECK(four == 5);
  CHECK(two == 4);
  CHECK(one == 4);
  CHECK(s12[0] == LayerScheme{1, 4, 7, 10});
  CHECK(s12[1] == LayerScheme{0, 1, 10, 11});
  CHECK(std::find(s12.begin(), s12.end(), LayerScheme{0, 10}) != s12.end());

  CHECK(builtin_schemes(6) ==
        std::vector<LayerScheme>{{0, 1, 4, 5}, {0, 5}, {0}, {5}});
  CHECK(builtin_schemes(2) == std::vector<LayerScheme>{{0, 1}, {0}, {1}});
  CHECK(builtin_schemes(1) == std::vector<LayerScheme>{{0}});
  for (std::size_t depth = 1; depth <= 16; ++depth) {
    for (const auto& s : builtin_schemes(depth)) CHECK_NOTHROW(validate_scheme(s, depth));
  }
  CHECK_THROWS_AS(builtin_schemes(0), ContractError);
}

TEST_CASE("parse_scheme") {
  CHECK(parse_scheme("0,5, 11", 12) == LayerScheme{0, 5, 11});
  CHECK(parse_scheme("all", 3) == LayerScheme{0, 1, 2});
  CHECK(scheme_str({0, 5, 11}) == "0,5,11");
  CHECK_THROWS_AS(parse_scheme("1,,2", 12), ContractError);
  CHECK_THROWS_AS(parse_scheme("-1", 12), ContractError);
  CHECK_THROWS_AS(parse_scheme("1x", 12), ContractError);
  CHECK_THROWS_AS(parse_scheme("", 12), ContractError);
}

TEST_CASE("fingerprint depends on content only") {
  EncoderModel a = teacher_model(2);
  EncoderModel b = teacher_model(2);
  b.id = "renamed";
  b.provenance.notes = "something";
  CHECK(fingerprint(a) == fingerprint(b));
  CHECK(fingerprint(a).size() == 16);
  b.weights.layers[1].o_bias.mutable_values()[3] += 1e-6f;
  CHECK(fingerprint(a) != fingerprint(b));
  CHECK(fingerprint(a) != fingerprint(teacher_model(2, 22)));
}
