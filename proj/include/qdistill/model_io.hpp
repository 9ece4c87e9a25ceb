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

// Checkpoint persistence and layer-subset extraction.
//
// File layout (format version 1, all integers little-endian):
//
//   offset 0   4 bytes   magic "ADEC"
//   offset 4   1 byte    format version (1)
//   offset 5   8 bytes   header length H (uint64)
//   offset 13  H bytes   UTF-8 JSON header
//   ...        zero padding up to the next multiple of 64
//   payload    raw float32 tensors; each starts on a 64-byte boundary
//              relative to the payload start
//
// The header carries the encoder config, the vocabulary file name (relative
// to the checkpoint's directory), provenance, the payload size and a tensor
// manifest of {name, dtype, shape, offset, nbytes}. docs/checkpoint-format.md
// has the full schema.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "qdistill/encoder.hpp"

namespace qdistill {

inline constexpr char kCheckpointMagic[4] = {'A', 'D', 'E', 'C'};
inline constexpr std::uint8_t kCheckpointVersion = 1;
inline constexpr std::size_t kPayloadAlignment = 64;

struct TensorEntry {
  std::string name;
  std::string dtype;  // "f32"
  Shape shape;
  std::uint64_t offset = 0;  // relative to payload start
  std::uint64_t nbytes = 0;
};

struct CheckpointHeader {
  std::string model_id;
  EncoderConfig config;
  std::string vocab_file;
  Provenance provenance;
  std::uint64_t payload_offset = 0;  // absolute file offset
  std::uint64_t payload_bytes = 0;
  std::vector<TensorEntry> tensors;
};

// Ordered list of teacher layer indices kept by a student.
using LayerScheme = std::vector<std::size_t>;

// Throws ContractError for an empty or non-increasing scheme and RangeError
// for an index >= teacher_layers.
void validate_scheme(const LayerScheme& scheme, std::size_t teacher_layers);

// Serialized bytes of `model` exactly as save() writes them.
std::vector<std::uint8_t> serialize(const EncoderModel& model,
                                    const std::string& vocab_file);

// Writes the checkpoint atomically (temp file + rename) and the vocabulary
// next to it as "<filename>.vocab.txt".
void save(const EncoderModel& model, const std::filesystem::path& path);

// Reads only the header; the payload is not touched.
CheckpointHeader read_header(const std::filesystem::path& path);

// Full load with validation against the manifest and config. Throws
// FormatError for bad magic/version, length mismatches, unexpected or missing
// tensors and shape inconsistencies.
EncoderModel load(const std::filesystem::path& path);

// 64-bit FNV-1a over config, tensor names, shapes, values and vocabulary, as
// 16 hex digits. Independent of model id, provenance and file name.
std::string fingerprint(const EncoderModel& model);

// Student made of the selected teacher layers (renumbered 0..k-1), with the
// teacher's embeddings, embedding layer-norm, vocabulary and pooling.
// Provenance always refers to the original teacher, so extracting from an
// extracted model composes.
EncoderModel extract_layers(const EncoderModel& teacher,
                            const LayerScheme& scheme);

// The 13 initialization schemes studied for a 12-layer teacher: five 4-layer,
// four 2-layer and four 1-layer subsets. For any other depth L >= 1 the
// analogue of the first/last pattern is returned: {first}, {last},
// {first, last} and {first two, last two} (skipping duplicates and subsets
// that do not fit). Throws ContractError for L == 0.
std::vector<LayerScheme> builtin_schemes(std::size_t teacher_layers = 12);

// Parses "0,5,11" or "all" (which needs teacher_layers).
LayerScheme parse_scheme(const std::string& text, std::size_t teacher_layers);
std::string scheme_str(const LayerScheme& scheme);

}  // namespace qdistill
