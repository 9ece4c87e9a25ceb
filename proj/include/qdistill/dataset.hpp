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

// Corpus and query files.
//
// Corpus: JSON lines {"_id", "text"} with an optional "title" that is joined
// to the text with a single space.
// Queries: JSON lines {"_id", "text"}, or plain UTF-8 text with one query per
// line, in which case ids are the 0-based line numbers.

#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace qdistill {

struct Document {
  std::string id;
  std::string text;
};

struct Query {
  std::string id;
  std::string text;
};

// Throws IoError if the file cannot be read and FormatError (with the line
// number) for malformed records or duplicate ids.
std::vector<Document> read_corpus(const std::filesystem::path& path);
std::vector<Query> read_queries(const std::filesystem::path& path);

void write_corpus(const std::filesystem::path& path,
                  std::span<const Document> docs);
void write_queries(const std::filesystem::path& path,
                   std::span<const Query> queries);

std::vector<std::string> query_texts(std::span<const Query> queries);

}  // namespace qdistill
