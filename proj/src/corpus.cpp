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

#include "firp/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "firp/errors.hpp"

namespace firp {

std::vector<int> ByteTokenizer::encode(std::string_view text) const {
  std::vector<int> out;
  out.reserve(text.size());
  for (char ch : text) {
    const auto b = static_cast<unsigned char>(ch);
    if (b >= 0x80) {
      out.push_back(kHighEscape);
      out.push_back(b - 0x80);
    } else if (b == kHighEscape) {
      out.push_back(kLiteralEscape);
      out.push_back(0);
    } else if (b == kLiteralEscape) {
      out.push_back(kLiteralEscape);
      out.push_back(1);
    } else {
      out.push_back(b);
    }
  }
  return out;
}

std::string ByteTokenizer::decode(const std::vector<int>& tokens) const {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const int t = tokens[i];
    if (t < 0 || t >= kVocabSize) throw VocabularyError("decode: token " + std::to_string(t) + " out of range");
    if (t == kHighEscape || t == kLiteralEscape) {
      if (i + 1 == tokens.size()) throw DataError("decode: dangling escape token");
      const int arg = tokens[++i];
      if (t == kHighEscape) {
        out.push_back(static_cast<char>(arg + 0x80));
      } else if (arg == 0 || arg == 1) {
        out.push_back(static_cast<char>(arg == 0 ? kHighEscape : kLiteralEscape));
      } else {
        throw DataError("decode: invalid literal escape");
      }
    } else {
      out.push_back(static_cast<char>(t));
    }
  }
  return out;
}

std::vector<int> Corpus::tokens(const std::vector<std::string>& lines) {
  ByteTokenizer tok;
  std::vector<int> out;
  for (const auto& l : lines) {
    auto t = tok.encode(l);
    out.insert(out.end(), t.begin(), t.end());
  }
  return out;
}

Corpus make_corpus(std::string text, std::array<double, 3> ratios, std::uint64_t seed) {
  if (text.empty()) throw DataError("corpus is empty");
  const double total = ratios[0] + ratios[1] + ratios[2];
  if (std::abs(total - 1.0) > 1e-6 || ratios[0] < 0 || ratios[1] < 0 || ratios[2] < 0) {
    throw ParameterError("split ratios must be non-negative and sum to 1");
  }
  Corpus c;
  c.raw = std::move(text);
  c.ratios = ratios;
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (start < c.raw.size()) {
    const auto nl = c.raw.find('\n', start);
    const auto end = nl == std::string::npos ? c.raw.size() : nl + 1;
    lines.push_back(c.raw.substr(start, end - start));
    start = end;
  }
  std::vector<std::size_t> order(lines.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n = lines.size();
  const auto n_train = static_cast<std::size_t>(std::llround(ratios[0] * n));
  const auto n_valid = std::min(n - n_train, static_cast<std::size_t>(std::llround(ratios[1] * n)));
  for (std::size_t i = 0; i < n; ++i) {
    auto& dst = i < n_train ? c.train : (i < n_train + n_valid ? c.validation : c.test);
    dst.push_back(lines[order[i]]);
  }
  return c;
}

Corpus ingest_corpus(const std::string& path, std::array<double, 3> ratios, std::uint64_t seed) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read corpus file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  std::string text = ss.str();
  if (text.empty()) throw DataError("corpus file '" + path + "' is empty");
  return make_corpus(std::move(text), ratios, seed);
}

std::string periodic_text(int lines, std::uint64_t seed) {
  static const char* const kMotifs[] = {
      "abc",        "hello ",     "tree ",      "draft token ", "xyz-",      "0123456789",
      "layer ",     "ab",         "quick fox ", "north wind ",  "pq",        "lossless ",
      "kv cache ",  "mnopq",      "step one ",  "verify ",      "fast-",     "head ",
  };
  constexpr int kCount = sizeof(kMotifs) / sizeof(kMotifs[0]);
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> motif(0, kCount - 1);
  std::uniform_int_distribution<int> extra(0, 3);
  std::string out;
  for (int i = 0; i < lines; ++i) {
    const std::string m = kMotifs[motif(rng)];
    const int reps = static_cast<int>((60 + m.size() - 1) / m.size()) + extra(rng);
    std::string line;
    for (int r = 0; r < reps; ++r) line += m;
    out += line;
    out += '\n';
  }
  return out;
}

}  // namespace firp
