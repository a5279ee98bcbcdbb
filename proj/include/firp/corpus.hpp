/* Copyright 2026 The firp-infer Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace firp {

// Character-level tokenizer over 128 ids. ASCII bytes map to themselves;
// bytes >= 128 become [0x7F, b-128]; literal 0x7F and 0x00 become [0x00, 0]
// and [0x00, 1].
class ByteTokenizer {
 public:
  static constexpr int kVocabSize = 128;
  static constexpr int kHighEscape = 0x7F;
  static constexpr int kLiteralEscape = 0x00;

  std::vector<int> encode(std::string_view text) const;
  std::string decode(const std::vector<int>& tokens) const;
};

struct Corpus {
  std::string raw;
  std::array<double, 3> ratios{0.8, 0.1, 0.1};
  std::vector<std::string> train;
  std::vector<std::string> validation;
  std::vector<std::string> test;

  static std::vector<int> tokens(const std::vector<std::string>& lines);
  std::vector<int> train_tokens() const { return tokens(train); }
  std::vector<int> validation_tokens() const { return tokens(validation); }
  std::vector<int> test_tokens() const { return tokens(test); }
};

// Line-level deterministic shuffle and split. Lines keep their trailing '\n'.
Corpus make_corpus(std::string text, std::array<double, 3> ratios, std::uint64_t seed);
Corpus ingest_corpus(const std::string& path, std::array<double, 3> ratios, std::uint64_t seed);

// Synthetic corpus of lines that each repeat one motif a random number of
// times; highly predictable once the motif is seen.
std::string periodic_text(int lines, std::uint64_t seed);

}  // namespace firp
