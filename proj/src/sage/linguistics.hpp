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

// Sink-token detection and key-concept extraction over the emitted token
// stream. Tagging is a closed lexicon plus suffix rules; chunking is the
// ADJ* NOUN+ grammar.

#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "sage/vocab.hpp"

namespace sage {

enum class PosTag { kNoun, kAdj, kDet, kPrep, kConj, kVerb, kAux, kPron, kNum, kOther };

std::string_view to_string(PosTag tag);
PosTag parse_pos_tag(std::string_view name);
bool is_closed_class(PosTag tag);

class PosLexicon {
 public:
  static PosLexicon defaults();
  // Entries from { "word": "TAG" } are layered over the defaults. Closed-class
  // words keep their tags and no new closed-class words may be introduced.
  static PosLexicon from_json(const nlohmann::json& j);

  PosTag tag(std::string_view word) const;
  const std::map<std::string, PosTag>& entries() const { return entries_; }

 private:
  std::map<std::string, PosTag> entries_;
};

class SinkLexicon {
 public:
  static SinkLexicon defaults();
  static SinkLexicon from_json(const nlohmann::json& j);

  bool contains(std::string_view token) const;
  const std::vector<std::string>& punctuation() const { return punctuation_; }
  const std::vector<std::string>& conjunctions() const { return conjunctions_; }
  std::size_t size() const { return punctuation_.size() + conjunctions_.size(); }

 private:
  std::vector<std::string> punctuation_;
  std::vector<std::string> conjunctions_;
};

// Vocabulary covering every default lexicon word plus the sink tokens.
const Vocabulary& default_vocabulary();

// Half-open index range into the generated token sequence.
struct TokenSpan {
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t size() const { return end - begin; }
  bool empty() const { return end <= begin; }
  bool contains(const TokenSpan& other) const { return begin <= other.begin && other.end <= end; }
  bool operator==(const TokenSpan&) const = default;
};

struct SinkEvent {
  std::size_t step = 0;
  TokenId token = 0;
  TokenSpan segment;  // tokens since the previous sink, excluding this one
};

enum class ConceptKind { kNoun, kAdjective, kNounPhrase };

std::string_view to_string(ConceptKind kind);

struct Concept {
  std::string surface;
  TokenSpan span;
  ConceptKind kind = ConceptKind::kNoun;

  bool operator==(const Concept&) const = default;
};

bool is_sink(TokenId token, const Vocabulary& vocab, const SinkLexicon& lexicon);

// Sink events over a full generated stream. Consecutive segments together
// with the sink tokens partition the stream up to the last sink.
std::vector<SinkEvent> find_sink_events(std::span<const TokenId> generated, const Vocabulary& vocab,
                                        const SinkLexicon& lexicon);

// Concepts in `words`; spans are offset by `offset`. Empty input or only
// function words yields an empty list.
std::vector<Concept> extract_concepts(std::span<const std::string> words, std::size_t offset,
                                      const PosLexicon& pos);

// Concepts in generated[segment].
std::vector<Concept> extract_concepts(std::span<const TokenId> generated, TokenSpan segment, const Vocabulary& vocab,
                                      const PosLexicon& pos);

}  // namespace sage
