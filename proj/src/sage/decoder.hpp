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

// Sink-aware grounded decoding: greedy generation with grounding checks at
// trigger steps and attention modulation installed from their outcome.

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "sage/grounding.hpp"
#include "sage/linguistics.hpp"
#include "sage/model.hpp"

namespace sage {

inline constexpr const char* kDefaultPrompt = "Please describe this image in detail.";

enum class TriggerKind { kSink, kPeriodic, kOff };
enum class ReliabilityMode { kGradcamIou, kAttentionArea };
enum class ModulationScope { kUntilNextSink, kAtSinkOnly };
enum class TimingMode { kOff, kWall };
enum class Decision { kReinforce, kDiffuse, kSkip };

std::string_view to_string(ReliabilityMode m);
std::string_view to_string(ModulationScope s);
std::string_view to_string(TimingMode m);
std::string_view to_string(Decision d);

struct TriggerPolicy {
  TriggerKind kind = TriggerKind::kSink;
  std::size_t period = 0;  // for kPeriodic

  // "sink", "off" or "periodic:N".
  static TriggerPolicy parse(const std::string& text);
  std::string to_string() const;
  bool operator==(const TriggerPolicy&) const = default;
};

struct SageConfig {
  double tau = 0.5;
  double scale_reinforce = 1.8;
  double scale_diffuse = 0.6;
  TriggerPolicy trigger;
  ReliabilityMode reliability = ReliabilityMode::kGradcamIou;
  ModulationScope scope = ModulationScope::kUntilNextSink;
  // Half-open decoder-layer range; unset means the middle third.
  std::optional<std::pair<std::size_t, std::size_t>> layers;
  double rel_threshold = 0.5;
  std::uint64_t seed = 0;
  std::optional<std::size_t> max_new_tokens;
  std::string prompt = kDefaultPrompt;
  TimingMode timing = TimingMode::kOff;

  // [floor(L/3), floor(2L/3)), widened to one layer when that is empty.
  std::vector<std::size_t> layer_set(std::size_t decoder_layers) const;

  // tau in [0,1]; scale_reinforce >= 1; 0 < scale_diffuse <= 1;
  // rel_threshold in (0,1). Scale 1 is accepted as the neutral control.
  void validate() const;

  // Sets one field from its textual form; keys use the CLI spelling
  // ("tau", "scale-reinforce", "trigger", "layers", ...).
  void set(const std::string& key, const std::string& value);

  nlohmann::json to_json() const;
  // Overlays the fields present in `j` onto *this.
  void merge_json(const nlohmann::json& j);
  static SageConfig from_json(const nlohmann::json& j);
};

struct GroundingReport {
  std::size_t step = 0;
  TriggerKind trigger = TriggerKind::kSink;
  SinkEvent sink;
  std::vector<Concept> concepts;
  ReliabilityMode mode = ReliabilityMode::kGradcamIou;
  std::vector<std::size_t> layer_set;
  std::size_t selected_layer = 0;
  std::size_t selected_head = 0;
  std::optional<SpatialMap> i1_map;
  std::optional<BinaryMask> i1_mask;
  std::vector<SpatialMap> per_concept_maps;
  std::vector<BinaryMask> per_concept_masks;
  std::optional<BinaryMask> i2_mask;
  double overlap = 0.0;
  Decision decision = Decision::kSkip;
  std::string note;  // why a check was skipped
};

struct DirectiveEvent {
  std::size_t step = 0;
  bool install = true;  // false for an expiry
  ModulationDirective directive;
};

enum class TimingComponent { kConceptExtraction = 0, kAttentionIou = 1, kGradcam = 2, kModulation = 3 };
inline constexpr std::size_t kTimingComponents = 4;
std::string_view to_string(TimingComponent c);

struct TimingEvent {
  std::size_t step = 0;
  bool total = false;
  std::array<std::int64_t, kTimingComponents> ns{};
  std::int64_t decode_ns = 0;  // whole decode, totals only
};

struct DecodeTrace {
  std::vector<TokenId> tokens;
  std::vector<std::string> token_text;
  std::vector<std::optional<bool>> hallucinated;
  std::vector<SinkEvent> sinks;
  std::vector<GroundingReport> reports;
  std::vector<DirectiveEvent> directives;
  std::vector<TimingEvent> timings;

  enum class Kind { kToken, kSink, kGrounding, kDirective, kTiming };
  // Serialization order: (kind, index into the matching vector).
  std::vector<std::pair<Kind, std::size_t>> order;

  // One JSON object per line, in event order.
  std::string to_jsonl() const;
  std::string caption() const;
};

struct DecodeRun {
  DecodeTrace trace;
  DecodeState state;
  // Set when the model failed mid-decode; the trace holds the steps before it.
  std::optional<std::string> error;
};

// One grounding check at `step`. Never throws for model or map failures;
// those degrade to a skip with `note` set.
GroundingReport grounding_check(const VlmModel& model, DecodeState& state, const SinkEvent& event,
                                TriggerKind trigger, const SageConfig& config, const PosLexicon& pos,
                                std::array<std::int64_t, kTimingComponents>* timing);

DecodeRun run_decode(const VlmModel& model, const Image& image, std::span<const TokenId> prompt,
                     const SageConfig& config, const SinkLexicon& sinks = SinkLexicon::defaults(),
                     const PosLexicon& pos = PosLexicon::defaults());

// Token-level view of a trace read back from JSONL.
struct TraceTokens {
  std::vector<std::string> tokens;
  std::vector<std::optional<bool>> hallucinated;
  std::vector<TimingEvent> timings;
  std::size_t grounding_events = 0;

  std::string caption() const;
};

TraceTokens parse_trace_jsonl(const std::string& text);

}  // namespace sage
