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

#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "json.hpp"

namespace sage {

using TokenId = std::uint32_t;

// Bidirectional token-string <-> id map. Ids are dense in [0, size()); the
// first three ids are reserved for the begin, end and image-placeholder
// markers.
class Vocabulary {
 public:
  static constexpr TokenId kBegin = 0;
  static constexpr TokenId kEnd = 1;
  static constexpr TokenId kImage = 2;
  static constexpr std::string_view kBeginText = "<s>";
  static constexpr std::string_view kEndText = "</s>";
  static constexpr std::string_view kImageText = "<image>";

  Vocabulary() = default;

  // Reserved markers first, then `words` in order with duplicates dropped.
  static Vocabulary build(const std::vector<std::string>& words);
  static Vocabulary from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;

  std::size_t size() const { return tokens_.size(); }
  bool contains(std::string_view token) const;
  TokenId id(std::string_view token) const;
  const std::string& text(TokenId id) const;

  // Lower-cases, splits on whitespace, and splits trailing punctuation that is
  // itself a vocabulary token ("detail." -> "detail", ".").
  std::vector<TokenId> tokenize(std::string_view text) const;
  std::string detokenize(const std::vector<TokenId>& ids) const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

}  // namespace sage
