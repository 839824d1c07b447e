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

#include "sage/linguistics.hpp"

#include <algorithm>
#include <cctype>
#include <array>
#include <set>
#include <utility>

#include "sage/error.hpp"

namespace sage {

namespace {

struct TagName {
  PosTag tag;
  std::string_view name;
};

constexpr std::array<TagName, 10> kTagNames{{
    {PosTag::kNoun, "NOUN"},
    {PosTag::kAdj, "ADJ"},
    {PosTag::kDet, "DET"},
    {PosTag::kPrep, "PREP"},
    {PosTag::kConj, "CONJ"},
    {PosTag::kVerb, "VERB"},
    {PosTag::kAux, "AUX"},
    {PosTag::kPron, "PRON"},
    {PosTag::kNum, "NUM"},
    {PosTag::kOther, "OTHER"},
}};

const std::vector<std::pair<PosTag, std::vector<std::string>>>& closed_class_words() {
  static const std::vector<std::pair<PosTag, std::vector<std::string>>> words = {
      {PosTag::kDet, {"a", "an", "the", "this", "that", "these", "those", "some", "each", "every", "its", "their"}},
      {PosTag::kPrep,
       {"of", "in", "on", "near", "with", "at", "to", "above", "below", "beside", "behind", "under", "over", "from",
        "by", "into", "across", "next"}},
      {PosTag::kConj, {"and", "or", "but", "so", "yet", "nor"}},
      {PosTag::kPron, {"it", "they", "there", "which", "we", "he", "she", "them"}},
      {PosTag::kAux, {"is", "are", "was", "were", "be", "been", "has", "have", "can"}},
  };
  return words;
}

const std::vector<std::pair<PosTag, std::vector<std::string>>>& open_class_words() {
  static const std::vector<std::pair<PosTag, std::vector<std::string>>> words = {
      {PosTag::kNoun,
       {"image", "picture", "scene", "detail", "background", "center", "corner", "edge", "middle", "left", "right",
        "top", "bottom", "circle", "square", "triangle", "rectangle", "shape", "object", "car", "dog", "cat",
        "frisbee", "table", "ball", "tree", "house", "person", "bird", "chair", "cup", "sports", "dining", "field",
        "sky", "grass", "road"}},
      {PosTag::kAdj,
       {"red", "green", "blue", "yellow", "orange", "purple", "white", "black", "gray", "small", "large", "big",
        "bright", "dark", "wooden", "round", "flat", "plain", "simple"}},
      {PosTag::kVerb, {"shows", "contains", "sits", "lies", "stands", "appears", "describe", "depicts", "features"}},
      {PosTag::kNum, {"one", "two", "three", "four"}},
      {PosTag::kOther, {"please", "also", "very", "here", "not"}},
  };
  return words;
}

bool ends_with(std::string_view s, std::string_view suffix) {
  return s.size() > suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

PosTag suffix_tag(std::string_view word) {
  if (word.empty()) return PosTag::kOther;
  if (!std::isalpha(static_cast<unsigned char>(word[0]))) return PosTag::kOther;
  if (ends_with(word, "ly")) return PosTag::kOther;
  if (ends_with(word, "ing") || ends_with(word, "ed")) return PosTag::kVerb;
  for (std::string_view s : {"ous", "ful", "ive", "able", "ish", "ic"}) {
    if (ends_with(word, s)) return PosTag::kAdj;
  }
  return PosTag::kNoun;
}

}  // namespace

std::string_view to_string(PosTag tag) {
  for (const auto& t : kTagNames)
    if (t.tag == tag) return t.name;
  return "OTHER";
}

PosTag parse_pos_tag(std::string_view name) {
  for (const auto& t : kTagNames)
    if (t.name == name) return t.tag;
  throw ParseError("unknown POS tag '" + std::string(name) + "'");
}

bool is_closed_class(PosTag tag) {
  return tag == PosTag::kDet || tag == PosTag::kPrep || tag == PosTag::kConj || tag == PosTag::kPron ||
         tag == PosTag::kAux;
}

std::string_view to_string(ConceptKind kind) {
  switch (kind) {
    case ConceptKind::kNoun:
      return "noun";
    case ConceptKind::kAdjective:
      return "adjective";
    case ConceptKind::kNounPhrase:
      return "noun_phrase";
  }
  return "noun";
}

// ---- PosLexicon ------------------------------------------------------------

PosLexicon PosLexicon::defaults() {
  PosLexicon lex;
  for (const auto& [tag, words] : closed_class_words())
    for (const auto& w : words) lex.entries_[w] = tag;
  for (const auto& [tag, words] : open_class_words())
    for (const auto& w : words) lex.entries_.emplace(w, tag);
  return lex;
}

PosLexicon PosLexicon::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ParseError("POS lexicon JSON must be an object of word -> TAG");
  PosLexicon lex = defaults();
  for (const auto& [word, value] : j.items()) {
    const PosTag tag = parse_pos_tag(value.get<std::string>());
    auto it = lex.entries_.find(word);
    const bool existing_closed = it != lex.entries_.end() && is_closed_class(it->second);
    if (existing_closed) {
      if (it->second != tag) throw ParseError("closed-class word '" + word + "' cannot be re-tagged");
      continue;
    }
    if (is_closed_class(tag)) {
      throw ParseError("cannot add '" + word + "' to closed class " + std::string(to_string(tag)));
    }
    lex.entries_[word] = tag;
  }
  return lex;
}

PosTag PosLexicon::tag(std::string_view word) const {
  auto it = entries_.find(std::string(word));
  return it != entries_.end() ? it->second : suffix_tag(word);
}

// ---- SinkLexicon -----------------------------------------------------------

SinkLexicon SinkLexicon::defaults() {
  SinkLexicon lex;
  lex.punctuation_ = {".", ",", ":", ";", "!", "?", "-", "--", "..."};
  lex.conjunctions_ = {"and", "or", "but", "so", "yet"};
  return lex;
}

SinkLexicon SinkLexicon::from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("punctuation") || !j.contains("conjunctions")) {
    throw ParseError("sink lexicon JSON needs 'punctuation' and 'conjunctions' arrays");
  }
  SinkLexicon lex;
  lex.punctuation_ = j.at("punctuation").get<std::vector<std::string>>();
  lex.conjunctions_ = j.at("conjunctions").get<std::vector<std::string>>();
  return lex;
}

bool SinkLexicon::contains(std::string_view token) const {
  return std::find(punctuation_.begin(), punctuation_.end(), token) != punctuation_.end() ||
         std::find(conjunctions_.begin(), conjunctions_.end(), token) != conjunctions_.end();
}

const Vocabulary& default_vocabulary() {
  static const Vocabulary vocab = [] {
    std::vector<std::string> words = SinkLexicon::defaults().punctuation();
    const PosLexicon pos = PosLexicon::defaults();
    for (const auto& [w, tag] : pos.entries()) words.push_back(w);
    return Vocabulary::build(words);
  }();
  return vocab;
}

// ---- sinks and concepts ----------------------------------------------------

bool is_sink(TokenId token, const Vocabulary& vocab, const SinkLexicon& lexicon) {
  return lexicon.contains(vocab.text(token));
}

std::vector<SinkEvent> find_sink_events(std::span<const TokenId> generated, const Vocabulary& vocab,
                                        const SinkLexicon& lexicon) {
  std::vector<SinkEvent> events;
  std::size_t segment_begin = 0;
  for (std::size_t i = 0; i < generated.size(); ++i) {
    if (!is_sink(generated[i], vocab, lexicon)) continue;
    events.push_back({i, generated[i], {segment_begin, i}});
    segment_begin = i + 1;
  }
  return events;
}

std::vector<Concept> extract_concepts(std::span<const std::string> words, std::size_t offset,
                                      const PosLexicon& pos) {
  std::vector<Concept> found;
  std::vector<PosTag> tags;
  tags.reserve(words.size());
  for (const auto& w : words) tags.push_back(pos.tag(w));

  auto join = [&](std::size_t b, std::size_t e) {
    std::string s;
    for (std::size_t k = b; k < e; ++k) {
      if (k > b) s += ' ';
      s += words[k];
    }
    return s;
  };

  std::size_t i = 0;
  while (i < words.size()) {
    if (tags[i] != PosTag::kAdj && tags[i] != PosTag::kNoun) {
      ++i;
      continue;
    }
    // Greedy ADJ* NOUN+; an adjective run with no noun after it splits into
    // standalone adjectives.
    std::size_t j = i;
    while (j < words.size() && tags[j] == PosTag::kAdj) ++j;
    std::size_t k = j;
    while (k < words.size() && tags[k] == PosTag::kNoun) ++k;
    if (k == j) {
      for (std::size_t a = i; a < j; ++a)
        found.push_back({words[a], {offset + a, offset + a + 1}, ConceptKind::kAdjective});
      i = j;
      continue;
    }
    const ConceptKind kind = (k - i == 1) ? ConceptKind::kNoun : ConceptKind::kNounPhrase;
    found.push_back({join(i, k), {offset + i, offset + k}, kind});
    i = k;
  }

  std::vector<Concept> unique;
  std::set<std::string> seen;
  for (auto& c : found) {
    if (seen.insert(c.surface).second) unique.push_back(std::move(c));
  }
  return unique;
}

std::vector<Concept> extract_concepts(std::span<const TokenId> generated, TokenSpan segment, const Vocabulary& vocab,
                                      const PosLexicon& pos) {
  if (segment.end > generated.size()) {
    throw ArgumentError("segment [" + std::to_string(segment.begin) + ", " + std::to_string(segment.end) +
                        ") exceeds generated length " + std::to_string(generated.size()));
  }
  std::vector<std::string> words;
  for (std::size_t i = segment.begin; i < segment.end; ++i) words.push_back(vocab.text(generated[i]));
  return extract_concepts(words, segment.begin, pos);
}

}  // namespace sage
