// Copyright (c) 2026 The sage-decode Authors
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

#include "sage/vocab.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>

#include "sage/error.hpp"

namespace sage {

Vocabulary Vocabulary::build(const std::vector<std::string>& words) {
  Vocabulary v;
  auto push = [&v](const std::string& w) {
    if (w.empty() || v.index_.count(w)) return;
    v.index_.emplace(w, static_cast<TokenId>(v.tokens_.size()));
    v.tokens_.push_back(w);
  };
  push(std::string(kBeginText));
  push(std::string(kEndText));
  push(std::string(kImageText));
  for (const auto& w : words) push(w);
  return v;
}

Vocabulary Vocabulary::from_json(const nlohmann::json& j) {
  if (!j.is_array()) throw ParseError("vocabulary JSON must be an array of token strings");
  std::vector<std::string> words;
  for (const auto& t : j) words.push_back(t.get<std::string>());
  if (words.size() < 3 || words[0] != kBeginText || words[1] != kEndText || words[2] != kImageText) {
    throw ParseError("vocabulary JSON must start with the reserved <s>, </s>, <image> markers");
  }
  return build(words);
}

nlohmann::json Vocabulary::to_json() const { return tokens_; }

bool Vocabulary::contains(std::string_view token) const { return index_.count(std::string(token)) != 0; }

TokenId Vocabulary::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  if (it == index_.end()) throw ArgumentError("unknown token '" + std::string(token) + "'");
  return it->second;
}

const std::string& Vocabulary::text(TokenId id) const {
  if (id >= tokens_.size()) throw ArgumentError("unknown token id " + std::to_string(id));
  return tokens_[id];
}

std::vector<TokenId> Vocabulary::tokenize(std::string_view text) const {
  std::vector<TokenId> out;
  std::istringstream in{std::string(text)};
  std::string word;
  while (in >> word) {
    std::transform(word.begin(), word.end(), word.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (contains(word)) {
      out.push_back(id(word));
      continue;
    }
    // Peel trailing punctuation tokens, longest first ("..." before ".").
    std::vector<TokenId> tail;
    bool progress = true;
    while (!word.empty() && !contains(word) && progress) {
      progress = false;
      for (std::size_t n = std::min<std::size_t>(3, word.size() - 1); n >= 1; --n) {
        const std::string suffix = word.substr(word.size() - n);
        if (std::ispunct(static_cast<unsigned char>(suffix[0])) && contains(suffix)) {
          tail.push_back(id(suffix));
          word.erase(word.size() - n);
          progress = true;
          break;
        }
      }
    }
    if (!contains(word)) throw ArgumentError("cannot tokenize '" + word + "': not in vocabulary");
    out.push_back(id(word));
    out.insert(out.end(), tail.rbegin(), tail.rend());
  }
  return out;
}

std::string Vocabulary::detokenize(const std::vector<TokenId>& ids) const {
  std::string out;
  for (TokenId t : ids) {
    if (!out.empty()) out += ' ';
    out += text(t);
  }
  return out;
}

}  // namespace sage
