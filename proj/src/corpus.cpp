/* Copyright 2026 The htsr-decay Authors. All Rights Reserved.

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

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <random>
#include <string>

#include "htsr/error.hpp"
#include "htsr/train.hpp"

namespace htsr {

namespace {

double unit(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

std::size_t below(std::mt19937_64& rng, std::size_t n) {
  return static_cast<std::size_t>(rng() % n);
}

class ZipfSampler {
 public:
  ZipfSampler(std::size_t n, double exponent) : cdf_(n) {
    double sum = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
      sum += 1.0 / std::pow(static_cast<double>(r + 1), exponent);
      cdf_[r] = sum;
    }
    for (double& c : cdf_) c /= sum;
  }

  std::size_t operator()(std::mt19937_64& rng) const {
    const double u = unit(rng);
    auto it = std::lower_bound(cdf_.begin(), cdf_.end(), u);
    return std::min<std::size_t>(it - cdf_.begin(), cdf_.size() - 1);
  }

 private:
  std::vector<double> cdf_;
};

}  // namespace

Corpus split_corpus(std::span<const std::uint8_t> bytes,
                    std::size_t split_offset) {
  if (split_offset == 0 || split_offset >= bytes.size()) {
    throw Error(ErrorCode::kConfig, "split offset must fall inside the corpus");
  }
  Corpus c;
  c.train.assign(bytes.begin(), bytes.begin() + split_offset);
  c.validation.assign(bytes.begin() + split_offset, bytes.end());
  return c;
}

std::vector<std::uint8_t> read_corpus_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kConfig, "cannot open corpus " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::vector<std::uint8_t> synthetic_corpus(std::size_t bytes,
                                           std::uint64_t seed) {
  constexpr std::string_view kOnsets = "bcdfghjklmnprstvwz";
  constexpr std::array<std::string_view, 8> kClusters = {
      "th", "st", "ch", "pr", "tr", "sh", "gr", "pl"};
  constexpr std::string_view kVowels = "aeiouy";
  constexpr std::size_t kWords = 600;
  constexpr std::size_t kFavorites = 5;

  std::mt19937_64 rng(seed);
  std::vector<std::string> words;
  words.reserve(kWords);
  while (words.size() < kWords) {
    std::string w;
    const std::size_t syllables = 1 + below(rng, words.size() < 60 ? 2 : 3);
    for (std::size_t s = 0; s < syllables; ++s) {
      if (below(rng, 5) == 0) {
        w += kClusters[below(rng, kClusters.size())];
      } else {
        w += kOnsets[below(rng, kOnsets.size())];
      }
      w += kVowels[below(rng, kVowels.size())];
    }
    if (below(rng, 3) == 0) w += kOnsets[below(rng, kOnsets.size())];
    if (std::find(words.begin(), words.end(), w) == words.end()) {
      words.push_back(std::move(w));
    }
  }

  const ZipfSampler zipf(kWords, 1.1);
  std::vector<std::array<std::size_t, kFavorites>> favorites(kWords);
  for (auto& fav : favorites) {
    for (auto& f : fav) f = zipf(rng);
  }

  std::string text;
  text.reserve(bytes + 64);
  std::size_t sentences_in_paragraph = 0;
  while (text.size() < bytes) {
    const std::size_t length = 4 + below(rng, 9);
    std::size_t word = zipf(rng);
    for (std::size_t i = 0; i < length; ++i) {
      std::string w = words[word];
      if (i == 0) w[0] = static_cast<char>(std::toupper(w[0]));
      text += w;
      if (i + 1 < length) {
        text += (below(rng, 9) == 0) ? ", " : " ";
        word = unit(rng) < 0.65 ? favorites[word][below(rng, kFavorites)]
                                : zipf(rng);
      }
    }
    text += (below(rng, 6) == 0) ? "?" : ".";
    if (++sentences_in_paragraph >= 3 + below(rng, 4)) {
      text += "\n";
      sentences_in_paragraph = 0;
    } else {
      text += " ";
    }
  }
  text.resize(bytes);
  return {text.begin(), text.end()};
}

Batch sample_batch(std::span<const std::uint8_t> data, std::size_t sequences,
                   std::size_t length, std::uint64_t seed, std::size_t step) {
  if (data.size() < length + 1) {
    throw Error(ErrorCode::kConfig, "training split shorter than one sequence");
  }
  std::seed_seq seq{static_cast<std::uint32_t>(seed),
                    static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(step),
                    static_cast<std::uint32_t>(static_cast<std::uint64_t>(step) >> 32)};
  std::mt19937_64 rng(seq);
  const std::size_t starts = data.size() - length;
  Batch b;
  b.sequences = sequences;
  b.length = length;
  b.tokens.reserve(sequences * (length + 1));
  for (std::size_t s = 0; s < sequences; ++s) {
    const std::size_t start = below(rng, starts);
    b.tokens.insert(b.tokens.end(), data.begin() + start,
                    data.begin() + start + length + 1);
  }
  return b;
}

}  // namespace htsr
