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

#include "qdistill/dataset.hpp"

#include <fstream>
#include <unordered_set>

#include "json.hpp"
#include "qdistill/error.hpp"

namespace qdistill {
namespace {

using nlohmann::json;

std::string where(const std::filesystem::path& path, std::size_t line) {
  return path.string() + ":" + std::to_string(line);
}

bool blank(const std::string& s) {
  return s.find_first_not_of(" \t\r") == std::string::npos;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  return in;
}

template <typename Record>
std::vector<Record> read_jsonl(const std::filesystem::path& path, bool titles) {
  auto in = open_in(path);
  std::vector<Record> out;
  std::unordered_set<std::string> seen;
  std::string line;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    if (blank(line)) continue;
    Record r;
    try {
      const json j = json::parse(line);
      r.id = j.at("_id").is_string() ? j.at("_id").get<std::string>()
                                     : j.at("_id").dump();
      r.text = j.at("text").get<std::string>();
      if (titles && j.contains("title") && j["title"].is_string()) {
        const auto title = j["title"].get<std::string>();
        if (!title.empty()) r.text = title + " " + r.text;
      }
    } catch (const json::exception& e) {
      throw FormatError(where(path, n) + ": " + e.what());
    }
    if (!seen.insert(r.id).second) {
      throw FormatError(where(path, n) + ": duplicate id '" + r.id + "'");
    }
    out.push_back(std::move(r));
  }
  return out;
}

bool looks_like_jsonl(const std::filesystem::path& path) {
  auto in = open_in(path);
  std::string line;
  while (std::getline(in, line)) {
    const auto p = line.find_first_not_of(" \t\r");
    if (p == std::string::npos) continue;
    return line[p] == '{';
  }
  return false;
}

}  // namespace

std::vector<Document> read_corpus(const std::filesystem::path& path) {
  return read_jsonl<Document>(path, true);
}

std::vector<Query> read_queries(const std::filesystem::path& path) {
  if (looks_like_jsonl(path)) return read_jsonl<Query>(path, false);
  auto in = open_in(path);
  std::vector<Query> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    out.push_back({std::to_string(out.size()), line});
  }
  return out;
}

void write_corpus(const std::filesystem::path& path,
                  std::span<const Document> docs) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& d : docs) out << json{{"_id", d.id}, {"text", d.text}}.dump() << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

void write_queries(const std::filesystem::path& path,
                   std::span<const Query> queries) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& q : queries) out << json{{"_id", q.id}, {"text", q.text}}.dump() << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

std::vector<std::string> query_texts(std::span<const Query> queries) {
  std::vector<std::string> out;
  out.reserve(queries.size());
  for (const auto& q : queries) out.push_back(q.text);
  return out;
}

}  // namespace qdistill
