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

#include "qdistill/model_io.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <unistd.h>

#include "json.hpp"
#include "qdistill/error.hpp"

namespace qdistill {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

namespace {

using nlohmann::json;

constexpr std::size_t kPreambleBytes = 4 + 1 + 8;

std::uint64_t align_up(std::uint64_t n) {
  return (n + kPayloadAlignment - 1) / kPayloadAlignment * kPayloadAlignment;
}

json config_json(const EncoderConfig& c) {
  return json{{"num_layers", c.num_layers}, {"hidden_dim", c.hidden_dim},
              {"num_heads", c.num_heads},   {"ff_dim", c.ff_dim},
              {"max_len", c.max_len},       {"vocab_size", c.vocab_size},
              {"pooling", std::string(pooling_name(c.pooling))}};
}

EncoderConfig config_from_json(const json& j) {
  EncoderConfig c;
  c.num_layers = j.at("num_layers").get<std::size_t>();
  c.hidden_dim = j.at("hidden_dim").get<std::size_t>();
  c.num_heads = j.at("num_heads").get<std::size_t>();
  c.ff_dim = j.at("ff_dim").get<std::size_t>();
  c.max_len = j.at("max_len").get<std::size_t>();
  c.vocab_size = j.at("vocab_size").get<std::size_t>();
  c.pooling = parse_pooling(j.at("pooling").get<std::string>());
  return c;
}

struct Layout {
  std::vector<TensorEntry> entries;
  std::uint64_t payload_bytes = 0;
};

Layout layout_of(const EncoderWeights<float>& w) {
  Layout l;
  for (const auto& [name, t] : named_parameters(w)) {
    TensorEntry e;
    e.name = name;
    e.dtype = "f32";
    e.shape = t->shape();
    e.offset = l.payload_bytes;
    e.nbytes = t->numel() * sizeof(float);
    l.payload_bytes = align_up(e.offset + e.nbytes);
    l.entries.push_back(std::move(e));
  }
  return l;
}

std::string header_text(const EncoderModel& m, const std::string& vocab_file,
                        const Layout& layout) {
  json tensors = json::array();
  for (const auto& e : layout.entries) {
    tensors.push_back(json{{"name", e.name},
                           {"dtype", e.dtype},
                           {"shape", e.shape},
                           {"offset", e.offset},
                           {"nbytes", e.nbytes}});
  }
  json header{{"format", "adec"},
              {"version", kCheckpointVersion},
              {"model_id", m.id},
              {"config", config_json(m.config)},
              {"vocab", vocab_file},
              {"payload_bytes", layout.payload_bytes},
              {"tensors", tensors}};
  if (m.provenance.extracted() || !m.provenance.notes.empty()) {
    header["provenance"] = json{{"teacher_id", m.provenance.teacher_id},
                                {"teacher_layers", m.provenance.teacher_layers},
                                {"layers", m.provenance.layers},
                                {"notes", m.provenance.notes}};
  }
  return header.dump(1);
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_u64(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

std::uint64_t fnv1a(std::uint64_t h, const void* data, std::size_t n) {
  const auto* p = static_cast<const std::uint8_t*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

CheckpointHeader parse_header(const std::uint8_t* data, std::size_t size,
                              const std::string& source) {
  if (size < kPreambleBytes ||
      std::memcmp(data, kCheckpointMagic, sizeof(kCheckpointMagic)) != 0) {
    throw FormatError(source + ": bad magic bytes (not an ADEC checkpoint)");
  }
  if (data[4] != kCheckpointVersion) {
    throw FormatError(source + ": unsupported format version " +
                      std::to_string(data[4]));
  }
  const std::uint64_t header_len = get_u64(data + 5);
  if (header_len > size - kPreambleBytes) {
    throw FormatError(source + ": header length " + std::to_string(header_len) +
                      " exceeds file size");
  }
  json j;
  try {
    j = json::parse(data + kPreambleBytes, data + kPreambleBytes + header_len);
  } catch (const json::exception& e) {
    throw FormatError(source + ": unreadable header: " + e.what());
  }
  CheckpointHeader h;
  try {
    h.model_id = j.at("model_id").get<std::string>();
    h.config = config_from_json(j.at("config"));
    h.vocab_file = j.at("vocab").get<std::string>();
    h.payload_bytes = j.at("payload_bytes").get<std::uint64_t>();
    for (const auto& t : j.at("tensors")) {
      TensorEntry e;
      e.name = t.at("name").get<std::string>();
      e.dtype = t.at("dtype").get<std::string>();
      e.shape = t.at("shape").get<Shape>();
      e.offset = t.at("offset").get<std::uint64_t>();
      e.nbytes = t.at("nbytes").get<std::uint64_t>();
      h.tensors.push_back(std::move(e));
    }
    if (j.contains("provenance")) {
      const auto& p = j["provenance"];
      h.provenance.teacher_id = p.at("teacher_id").get<std::string>();
      h.provenance.teacher_layers = p.at("teacher_layers").get<std::size_t>();
      h.provenance.layers = p.at("layers").get<std::vector<std::size_t>>();
      h.provenance.notes = p.value("notes", "");
    }
  } catch (const json::exception& e) {
    throw FormatError(source + ": malformed header: " + e.what());
  }
  h.payload_offset = align_up(kPreambleBytes + header_len);
  try {
    h.config.validate();
  } catch (const ContractError& e) {
    throw FormatError(source + ": " + e.what());
  }
  if (h.provenance.extracted()) {
    try {
      validate_scheme(h.provenance.layers, h.provenance.teacher_layers);
    } catch (const Error& e) {
      throw FormatError(source + ": invalid provenance layers: " + e.what());
    }
  }
  return h;
}

void write_atomic(const std::filesystem::path& path,
                  std::span<const std::uint8_t> bytes) {
  auto tmp = path;
  tmp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) {
      std::filesystem::remove(tmp);
      throw IoError("failed writing " + tmp.string());
    }
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace

void validate_scheme(const LayerScheme& scheme, std::size_t teacher_layers) {
  if (scheme.empty()) throw ContractError("layer scheme is empty");
  for (std::size_t i = 0; i < scheme.size(); ++i) {
    if (scheme[i] >= teacher_layers) {
      throw RangeError("layer index " + std::to_string(scheme[i]) +
                       " out of range for a " + std::to_string(teacher_layers) +
                       "-layer teacher");
    }
    if (i > 0 && scheme[i] <= scheme[i - 1]) {
      throw ContractError("layer scheme " + scheme_str(scheme) +
                          " is not strictly increasing");
    }
  }
}

std::vector<std::uint8_t> serialize(const EncoderModel& model,
                                    const std::string& vocab_file) {
  check_weights(model.weights, model.config);
  const Layout layout = layout_of(model.weights);
  const std::string header = header_text(model, vocab_file, layout);
  const std::uint64_t payload_offset = align_up(kPreambleBytes + header.size());

  std::vector<std::uint8_t> out;
  out.reserve(payload_offset + layout.payload_bytes);
  out.insert(out.end(), kCheckpointMagic, kCheckpointMagic + 4);
  out.push_back(kCheckpointVersion);
  put_u64(out, header.size());
  out.insert(out.end(), header.begin(), header.end());
  out.resize(payload_offset + layout.payload_bytes, 0);
  const auto params = named_parameters(model.weights);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto values = params[i].second->values();
    std::memcpy(out.data() + payload_offset + layout.entries[i].offset,
                values.data(), layout.entries[i].nbytes);
  }
  return out;
}

void save(const EncoderModel& model, const std::filesystem::path& path) {
  if (!model.vocab) throw ContractError("save: model has no vocabulary");
  const std::string vocab_file = path.filename().string() + ".vocab.txt";
  const auto bytes = serialize(model, vocab_file);
  const auto dir = path.has_parent_path() ? path.parent_path()
                                          : std::filesystem::path(".");
  model.vocab->save(dir / vocab_file);
  write_atomic(path, bytes);
}

CheckpointHeader read_header(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> pre(kPreambleBytes);
  in.read(reinterpret_cast<char*>(pre.data()), kPreambleBytes);
  const auto got = static_cast<std::size_t>(in.gcount());
  if (got < kPreambleBytes) {
    return parse_header(pre.data(), got, path.string());
  }
  if (std::memcmp(pre.data(), kCheckpointMagic, 4) != 0 ||
      pre[4] != kCheckpointVersion) {
    return parse_header(pre.data(), got, path.string());
  }
  const std::uint64_t header_len = get_u64(pre.data() + 5);
  const auto file_size = std::filesystem::file_size(path);
  if (header_len > file_size - kPreambleBytes) {
    throw FormatError(path.string() + ": header length " +
                      std::to_string(header_len) + " exceeds file size");
  }
  pre.resize(kPreambleBytes + header_len);
  in.read(reinterpret_cast<char*>(pre.data() + kPreambleBytes),
          static_cast<std::streamsize>(header_len));
  return parse_header(pre.data(), pre.size(), path.string());
}

EncoderModel load(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  const std::string src = path.string();
  CheckpointHeader h = parse_header(bytes.data(), bytes.size(), src);

  if (bytes.size() < h.payload_offset + h.payload_bytes) {
    throw FormatError(src + ": payload truncated: header declares " +
                      std::to_string(h.payload_bytes) + " bytes, file holds " +
                      std::to_string(bytes.size() > h.payload_offset
                                         ? bytes.size() - h.payload_offset
                                         : 0));
  }
  if (bytes.size() > h.payload_offset + h.payload_bytes) {
    throw FormatError(src + ": " +
                      std::to_string(bytes.size() - h.payload_offset - h.payload_bytes) +
                      " trailing bytes after the declared payload");
  }

  const auto expected = expected_tensor_shapes(h.config);
  std::map<std::string, Shape> wanted(expected.begin(), expected.end());
  std::set<std::string> seen;
  std::vector<std::string> unknown;
  for (const auto& e : h.tensors) {
    if (!seen.insert(e.name).second) {
      throw FormatError(src + ": tensor " + e.name + " listed twice");
    }
    if (!wanted.count(e.name)) unknown.push_back(e.name);
  }
  if (!unknown.empty()) {
    std::string list;
    for (const auto& n : unknown) list += (list.empty() ? "" : ", ") + n;
    throw FormatError(src + ": unexpected tensors: " + list);
  }
  std::vector<std::string> missing;
  for (const auto& [name, shape] : expected) {
    if (!seen.count(name)) missing.push_back(name);
  }
  if (!missing.empty()) {
    std::string list;
    for (const auto& n : missing) list += (list.empty() ? "" : ", ") + n;
    throw FormatError(src + ": missing tensors: " + list);
  }

  std::map<std::string, Tensor> loaded;
  for (const auto& e : h.tensors) {
    if (e.dtype != "f32") {
      throw FormatError(src + ": tensor " + e.name + " has dtype " + e.dtype);
    }
    if (shape_numel(e.shape) * sizeof(float) != e.nbytes) {
      throw FormatError(src + ": tensor " + e.name + " shape " +
                        shape_str(e.shape) + " does not match " +
                        std::to_string(e.nbytes) + " bytes");
    }
    if (e.offset + e.nbytes > h.payload_bytes) {
      throw FormatError(src + ": tensor " + e.name + " extends past the payload");
    }
    std::vector<float> values(shape_numel(e.shape));
    std::memcpy(values.data(), bytes.data() + h.payload_offset + e.offset,
                e.nbytes);
    loaded.emplace(e.name, Tensor(e.shape, std::move(values)));
  }

  EncoderModel m;
  m.id = h.model_id;
  m.config = h.config;
  m.provenance = h.provenance;
  m.weights.layers.resize(h.config.num_layers);
  for (auto& [name, t] : named_parameters(m.weights)) *t = loaded.at(name);
  try {
    check_weights(m.weights, m.config);
  } catch (const DimensionError& e) {
    throw FormatError(src + ": " + e.what());
  }

  const auto dir = path.has_parent_path() ? path.parent_path()
                                          : std::filesystem::path(".");
  auto vocab = std::make_shared<const Vocab>(Vocab::load(dir / h.vocab_file));
  if (vocab->size() != m.config.vocab_size) {
    throw FormatError(src + ": vocabulary " + h.vocab_file + " has " +
                      std::to_string(vocab->size()) + " tokens, config says " +
                      std::to_string(m.config.vocab_size));
  }
  m.vocab = std::move(vocab);
  return m;
}

std::string fingerprint(const EncoderModel& model) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  const std::string cfg = config_json(model.config).dump();
  h = fnv1a(h, cfg.data(), cfg.size());
  for (const auto& [name, t] : named_parameters(model.weights)) {
    h = fnv1a(h, name.data(), name.size());
    for (std::size_t d : t->shape()) {
      const std::uint64_t d64 = d;
      h = fnv1a(h, &d64, sizeof(d64));
    }
    const auto v = t->values();
    h = fnv1a(h, v.data(), v.size() * sizeof(float));
  }
  if (model.vocab) {
    for (const auto& tok : model.vocab->tokens()) {
      h = fnv1a(h, tok.data(), tok.size());
      h = fnv1a(h, "\n", 1);
    }
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

EncoderModel extract_layers(const EncoderModel& teacher,
                            const LayerScheme& scheme) {
  validate_scheme(scheme, teacher.config.num_layers);
  EncoderModel student;
  student.config = teacher.config;
  student.config.num_layers = scheme.size();
  student.vocab = teacher.vocab;

  const EncoderWeights<float>& tw = teacher.weights;
  EncoderWeights<float>& sw = student.weights;
  sw.word_embedding = tw.word_embedding.detach();
  sw.position_embedding = tw.position_embedding.detach();
  sw.token_type_embedding = tw.token_type_embedding.detach();
  sw.embedding_ln_gamma = tw.embedding_ln_gamma.detach();
  sw.embedding_ln_beta = tw.embedding_ln_beta.detach();
  EncoderWeights<float> layer_src;
  for (std::size_t idx : scheme) layer_src.layers.push_back(tw.layers[idx]);
  // Deep copy so the student never aliases teacher storage.
  layer_src = clone_weights(
      EncoderWeights<float>{tw.word_embedding, tw.position_embedding,
                            tw.token_type_embedding, tw.embedding_ln_gamma,
                            tw.embedding_ln_beta, layer_src.layers},
      false);
  sw.layers = std::move(layer_src.layers);

  Provenance& p = student.provenance;
  if (teacher.provenance.extracted()) {
    p.teacher_id = teacher.provenance.teacher_id;
    p.teacher_layers = teacher.provenance.teacher_layers;
    for (std::size_t idx : scheme) p.layers.push_back(teacher.provenance.layers[idx]);
  } else {
    p.teacher_id = teacher.id;
    p.teacher_layers = teacher.config.num_layers;
    p.layers = scheme;
  }
  student.id = p.teacher_id + "-L" + scheme_str(p.layers);
  return student;
}

std::vector<LayerScheme> builtin_schemes(std::size_t teacher_layers) {
  if (teacher_layers == 12) {
    return {{1, 4, 7, 10}, {0, 1, 10, 11}, {0, 1, 2, 3}, {4, 5, 6, 7},
            {8, 9, 10, 11}, {0, 10},       {0, 11},       {1, 10},
            {1, 11},        {0},           {1},           {10},
            {11}};
  }
  if (teacher_layers == 0) {
    throw ContractError("builtin_schemes: teacher has no layers");
  }
  const std::size_t last = teacher_layers - 1;
  std::vector<LayerScheme> out;
  auto add = [&](LayerScheme s) {
    if (std::find(out.begin(), out.end(), s) == out.end()) out.push_back(std::move(s));
  };
  if (teacher_layers >= 4) add({0, 1, last - 1, last});
  if (teacher_layers >= 2) add({0, last});
  add({0});
  add({last});
  return out;
}

LayerScheme parse_scheme(const std::string& text, std::size_t teacher_layers) {
  if (text == "all") {
    LayerScheme s(teacher_layers);
    for (std::size_t i = 0; i < teacher_layers; ++i) s[i] = i;
    return s;
  }
  if (text.find_first_not_of(" \t") == std::string::npos) {
    throw ContractError("empty layer scheme");
  }
  LayerScheme s;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    if (b == std::string::npos) throw ContractError("empty layer index in '" + text + "'");
    item = item.substr(b, e - b + 1);
    std::size_t used = 0;
    unsigned long v = 0;
    try {
      v = std::stoul(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != item.size() || item[0] == '-') {
      throw ContractError("invalid layer index '" + item + "'");
    }
    s.push_back(v);
  }
  return s;
}

std::string scheme_str(const LayerScheme& scheme) {
  std::string out;
  for (std::size_t i = 0; i < scheme.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(scheme[i]);
  }
  return out;
}

}  // namespace qdistill
