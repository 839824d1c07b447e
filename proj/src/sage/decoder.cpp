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

#include "sage/decoder.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <sstream>

#include "sage/error.hpp"

namespace sage {

namespace {

using Clock = std::chrono::steady_clock;
using ojson = nlohmann::ordered_json;

std::int64_t elapsed_ns(Clock::time_point t0) {
  return std::chrono::duration_cast<std::chrono::nanoseconds>(Clock::now() - t0).count();
}

// Runs `fn`, charging its wall time to `component` when timing is on.
template <typename Fn>
decltype(auto) timed(std::array<std::int64_t, kTimingComponents>* timing, TimingComponent component, Fn&& fn) {
  if (!timing) return fn();
  struct Charge {
    std::int64_t& slot;
    Clock::time_point t0 = Clock::now();
    ~Charge() { slot += elapsed_ns(t0); }
  } charge{(*timing)[static_cast<std::size_t>(component)]};
  return fn();
}

std::string normalize_key(std::string key) {
  std::replace(key.begin(), key.end(), '_', '-');
  return key;
}

double parse_double(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const double v = std::stod(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ArgumentError("--" + key + " expects a number, got '" + value + "'");
  }
}

std::uint64_t parse_uint(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    if (!value.empty() && value[0] == '-') throw std::invalid_argument(value);
    const auto v = std::stoull(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ArgumentError("--" + key + " expects a non-negative integer, got '" + value + "'");
  }
}

ojson span_json(const TokenSpan& s) { return ojson::array({s.begin, s.end}); }

ojson mask_json(const BinaryMask& m) {
  ojson out = ojson::array();
  for (auto c : m.cells) out.push_back(static_cast<int>(c));
  return out;
}

}  // namespace

std::string_view to_string(ReliabilityMode m) {
  return m == ReliabilityMode::kGradcamIou ? "gradcam" : "attention-area";
}

std::string_view to_string(ModulationScope s) {
  return s == ModulationScope::kUntilNextSink ? "until-next-sink" : "at-sink-only";
}

std::string_view to_string(TimingMode m) { return m == TimingMode::kOff ? "off" : "wall"; }

std::string_view to_string(Decision d) {
  switch (d) {
    case Decision::kReinforce:
      return "reinforce";
    case Decision::kDiffuse:
      return "diffuse";
    case Decision::kSkip:
      return "skip";
  }
  return "skip";
}

std::string_view to_string(TimingComponent c) {
  switch (c) {
    case TimingComponent::kConceptExtraction:
      return "concept_extraction";
    case TimingComponent::kAttentionIou:
      return "attention_iou";
    case TimingComponent::kGradcam:
      return "gradcam";
    case TimingComponent::kModulation:
      return "modulation";
  }
  return "other";
}

// ---- TriggerPolicy ---------------------------------------------------------

TriggerPolicy TriggerPolicy::parse(const std::string& text) {
  if (text == "sink") return {TriggerKind::kSink, 0};
  if (text == "off") return {TriggerKind::kOff, 0};
  const std::string prefix = "periodic:";
  if (text.rfind(prefix, 0) == 0) {
    const std::uint64_t n = parse_uint("trigger", text.substr(prefix.size()));
    if (n == 0) throw ArgumentError("periodic trigger needs a period >= 1");
    return {TriggerKind::kPeriodic, static_cast<std::size_t>(n)};
  }
  throw ArgumentError("--trigger must be sink, off or periodic:N, got '" + text + "'");
}

std::string TriggerPolicy::to_string() const {
  switch (kind) {
    case TriggerKind::kSink:
      return "sink";
    case TriggerKind::kOff:
      return "off";
    case TriggerKind::kPeriodic:
      return "periodic:" + std::to_string(period);
  }
  return "off";
}

// ---- SageConfig ------------------------------------------------------------

std::vector<std::size_t> SageConfig::layer_set(std::size_t decoder_layers) const {
  std::size_t lo = decoder_layers / 3, hi = 2 * decoder_layers / 3;
  if (layers) {
    lo = layers->first;
    hi = layers->second;
    if (hi > decoder_layers) {
      throw ArgumentError("layer range " + std::to_string(lo) + ".." + std::to_string(hi) + " exceeds the model's " +
                          std::to_string(decoder_layers) + " decoder layers");
    }
  } else if (lo == hi) {
    hi = std::min(decoder_layers, lo + 1);
  }
  std::vector<std::size_t> out;
  for (std::size_t l = lo; l < hi; ++l) out.push_back(l);
  if (out.empty()) throw ArgumentError("empty middle-layer set");
  return out;
}

void SageConfig::validate() const {
  if (!(tau >= 0.0 && tau <= 1.0)) throw ArgumentError("tau must lie in [0, 1]");
  if (!(scale_reinforce >= 1.0) || !std::isfinite(scale_reinforce)) {
    throw ArgumentError("scale_reinforce must be >= 1 (got " + std::to_string(scale_reinforce) + ")");
  }
  if (!(scale_diffuse > 0.0 && scale_diffuse <= 1.0)) {
    throw ArgumentError("scale_diffuse must lie in (0, 1] (got " + std::to_string(scale_diffuse) + ")");
  }
  if (!(rel_threshold > 0.0 && rel_threshold < 1.0)) throw ArgumentError("rel_threshold must lie in (0, 1)");
  if (trigger.kind == TriggerKind::kPeriodic && trigger.period == 0) throw ArgumentError("periodic trigger needs N >= 1");
  if (layers && layers->first >= layers->second) throw ArgumentError("layer range must be non-empty (a..b with a < b)");
  if (max_new_tokens && *max_new_tokens == 0) throw ArgumentError("max_new_tokens must be positive");
}

void SageConfig::set(const std::string& raw_key, const std::string& value) {
  const std::string key = normalize_key(raw_key);
  if (key == "tau") {
    tau = parse_double(key, value);
  } else if (key == "scale-reinforce") {
    scale_reinforce = parse_double(key, value);
  } else if (key == "scale-diffuse") {
    scale_diffuse = parse_double(key, value);
  } else if (key == "trigger") {
    trigger = TriggerPolicy::parse(value);
  } else if (key == "reliability") {
    if (value == "gradcam" || value == "gradcam-iou") {
      reliability = ReliabilityMode::kGradcamIou;
    } else if (value == "attention-area") {
      reliability = ReliabilityMode::kAttentionArea;
    } else {
      throw ArgumentError("--reliability must be gradcam or attention-area, got '" + value + "'");
    }
  } else if (key == "scope") {
    if (value == "until-next-sink") {
      scope = ModulationScope::kUntilNextSink;
    } else if (value == "at-sink-only") {
      scope = ModulationScope::kAtSinkOnly;
    } else {
      throw ArgumentError("--scope must be until-next-sink or at-sink-only, got '" + value + "'");
    }
  } else if (key == "layers") {
    if (value.empty() || value == "middle") {
      layers.reset();
    } else {
      const auto dots = value.find("..");
      if (dots == std::string::npos) throw ArgumentError("--layers expects a..b, got '" + value + "'");
      layers = std::make_pair(static_cast<std::size_t>(parse_uint(key, value.substr(0, dots))),
                              static_cast<std::size_t>(parse_uint(key, value.substr(dots + 2))));
    }
  } else if (key == "rel-threshold") {
    rel_threshold = parse_double(key, value);
  } else if (key == "seed") {
    seed = parse_uint(key, value);
  } else if (key == "max-new-tokens") {
    if (value.empty()) {
      max_new_tokens.reset();
    } else {
      max_new_tokens = static_cast<std::size_t>(parse_uint(key, value));
    }
  } else if (key == "prompt") {
    prompt = value;
  } else if (key == "timing") {
    if (value == "off") {
      timing = TimingMode::kOff;
    } else if (value == "wall") {
      timing = TimingMode::kWall;
    } else {
      throw ArgumentError("--timing must be off or wall, got '" + value + "'");
    }
  } else {
    throw ArgumentError("unknown config key '" + raw_key + "'");
  }
}

nlohmann::json SageConfig::to_json() const {
  nlohmann::ordered_json j;
  j["tau"] = tau;
  j["scale_reinforce"] = scale_reinforce;
  j["scale_diffuse"] = scale_diffuse;
  j["trigger"] = trigger.to_string();
  j["reliability"] = std::string(to_string(reliability));
  j["scope"] = std::string(to_string(scope));
  j["layers"] = layers ? nlohmann::ordered_json(std::to_string(layers->first) + ".." + std::to_string(layers->second))
                       : nlohmann::ordered_json(nullptr);
  j["rel_threshold"] = rel_threshold;
  j["seed"] = seed;
  j["max_new_tokens"] = max_new_tokens ? nlohmann::ordered_json(*max_new_tokens) : nlohmann::ordered_json(nullptr);
  j["prompt"] = prompt;
  j["timing"] = std::string(to_string(timing));
  return nlohmann::json::parse(j.dump());
}

void SageConfig::merge_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ParseError("config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (value.is_null()) {
      set(key, "");
    } else if (value.is_string()) {
      set(key, value.get<std::string>());
    } else if (value.is_number() || value.is_boolean()) {
      set(key, value.dump());
    } else {
      throw ParseError("config field '" + key + "' must be a scalar");
    }
  }
}

SageConfig SageConfig::from_json(const nlohmann::json& j) {
  SageConfig c;
  c.merge_json(j);
  c.validate();
  return c;
}

// ---- grounding check -------------------------------------------------------

GroundingReport grounding_check(const VlmModel& model, DecodeState& state, const SinkEvent& event,
                                TriggerKind trigger, const SageConfig& config, const PosLexicon& pos,
                                std::array<std::int64_t, kTimingComponents>* timing) {
  GroundingReport rep;
  rep.step = event.step;
  rep.trigger = trigger;
  rep.sink = event;
  rep.mode = config.reliability;
  try {
    rep.layer_set = config.layer_set(model.decoder_layers());
    rep.concepts = timed(timing, TimingComponent::kConceptExtraction, [&] {
      return extract_concepts(state.generated, event.segment, model.vocab(), pos);
    });
    if (rep.concepts.empty()) {
      rep.note = "no concepts in segment";
      return rep;
    }
    const std::size_t grid = model.grid();
    const HeadChoice choice = timed(timing, TimingComponent::kAttentionIou,
                                    [&] { return attention_map(state, event.step, rep.layer_set, grid); });
    rep.selected_layer = choice.layer;
    rep.selected_head = choice.head;
    rep.i1_map = choice.map;
    rep.i1_mask = timed(timing, TimingComponent::kAttentionIou, [&] { return binarize(choice.map, config.rel_threshold); });

    if (config.reliability == ReliabilityMode::kGradcamIou) {
      for (const auto& c : rep.concepts) {
        SpatialMap m = timed(timing, TimingComponent::kGradcam, [&] { return gradcam_for_concept(model, state, c); });
        rep.per_concept_masks.push_back(
            timed(timing, TimingComponent::kGradcam, [&] { return binarize(m, config.rel_threshold); }));
        rep.per_concept_maps.push_back(std::move(m));
      }
      rep.i2_mask = timed(timing, TimingComponent::kAttentionIou, [&] { return union_masks(rep.per_concept_masks); });
      rep.overlap = timed(timing, TimingComponent::kAttentionIou, [&] { return iou(*rep.i1_mask, *rep.i2_mask); });
    } else {
      rep.overlap = area_ratio(*rep.i1_mask);
    }
    rep.decision = rep.overlap > config.tau ? Decision::kReinforce : Decision::kDiffuse;
  } catch (const std::exception& e) {
    rep.decision = Decision::kSkip;
    rep.note = e.what();
  }
  return rep;
}

// ---- decode loop -----------------------------------------------------------

DecodeRun run_decode(const VlmModel& model, const Image& image, std::span<const TokenId> prompt,
                     const SageConfig& config, const SinkLexicon& sinks, const PosLexicon& pos) {
  config.validate();
  const bool wall = config.timing == TimingMode::kWall;
  const auto t_start = Clock::now();

  DecodeRun run;
  DecodeState& st = run.state;
  DecodeTrace& tr = run.trace;
  st = model.begin(image, prompt);

  const std::size_t limit =
      std::min(model.max_new_tokens(), config.max_new_tokens.value_or(std::numeric_limits<std::size_t>::max()));
  const std::vector<std::size_t> layers =
      config.trigger.kind == TriggerKind::kOff ? std::vector<std::size_t>{} : config.layer_set(model.decoder_layers());
  const auto& vocab = model.vocab();

  std::optional<ModulationDirective> active;
  std::size_t sink_segment_begin = 0;
  std::size_t periodic_segment_begin = 0;
  std::array<std::int64_t, kTimingComponents> totals{};

  auto emit_directive = [&](std::size_t step, bool install, const ModulationDirective& d) {
    tr.directives.push_back({step, install, d});
    tr.order.emplace_back(DecodeTrace::Kind::kDirective, tr.directives.size() - 1);
  };

  while (!st.finished && st.step() < limit) {
    const std::size_t s = st.step();
    const std::int64_t mod_before = st.modulation_ns;
    TokenId tok = 0;
    try {
      tok = model.decode_step(st, active ? &*active : nullptr);
    } catch (const std::exception& e) {
      run.error = e.what();
      break;
    }
    totals[static_cast<std::size_t>(TimingComponent::kModulation)] += st.modulation_ns - mod_before;

    tr.tokens.push_back(tok);
    tr.token_text.push_back(vocab.text(tok));
    tr.hallucinated.push_back(st.hallucinated.back());
    tr.order.emplace_back(DecodeTrace::Kind::kToken, tr.tokens.size() - 1);
    if (tok == Vocabulary::kEnd) break;

    if (active && active->expires == DirectiveExpiry::kOneStep && active->installed_at < s) {
      emit_directive(s, false, *active);
      active.reset();
    }

    std::optional<SinkEvent> trigger;
    if (is_sink(tok, vocab, sinks)) {
      const SinkEvent ev{s, tok, {sink_segment_begin, s}};
      sink_segment_begin = s + 1;
      tr.sinks.push_back(ev);
      tr.order.emplace_back(DecodeTrace::Kind::kSink, tr.sinks.size() - 1);
      if (config.trigger.kind == TriggerKind::kSink) trigger = ev;
    }
    if (config.trigger.kind == TriggerKind::kPeriodic && s > 0 && s % config.trigger.period == 0) {
      trigger = SinkEvent{s, tok, {periodic_segment_begin, s + 1}};
      periodic_segment_begin = s + 1;
    }
    if (!trigger) continue;

    std::array<std::int64_t, kTimingComponents> spent{};
    GroundingReport rep = grounding_check(model, st, *trigger, config.trigger.kind, config, pos, wall ? &spent : nullptr);
    const Decision decision = rep.decision;
    tr.reports.push_back(std::move(rep));
    tr.order.emplace_back(DecodeTrace::Kind::kGrounding, tr.reports.size() - 1);

    timed(wall ? &spent : nullptr, TimingComponent::kModulation, [&] {
      if (active) {
        emit_directive(s, false, *active);
        active.reset();
      }
      if (decision != Decision::kSkip) {
        ModulationDirective d;
        d.scale = decision == Decision::kReinforce ? config.scale_reinforce : config.scale_diffuse;
        d.target_layers = layers;
        d.installed_at = s;
        d.expires = config.scope == ModulationScope::kUntilNextSink ? DirectiveExpiry::kNextTrigger
                                                                     : DirectiveExpiry::kOneStep;
        active = d;
        emit_directive(s, true, d);
      }
    });
    if (wall) {
      for (std::size_t k = 0; k < kTimingComponents; ++k) totals[k] += spent[k];
      tr.timings.push_back({s, false, spent, 0});
      tr.order.emplace_back(DecodeTrace::Kind::kTiming, tr.timings.size() - 1);
    }
  }
  if (wall) {
    TimingEvent total{tr.tokens.empty() ? 0 : tr.tokens.size() - 1, true, totals, elapsed_ns(t_start)};
    tr.timings.push_back(total);
    tr.order.emplace_back(DecodeTrace::Kind::kTiming, tr.timings.size() - 1);
  }
  return run;
}

// ---- serialization ---------------------------------------------------------

std::string DecodeTrace::caption() const {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] == Vocabulary::kEnd) continue;
    if (!out.empty()) out += ' ';
    out += token_text[i];
  }
  return out;
}

std::string DecodeTrace::to_jsonl() const {
  std::string out;
  for (const auto& [kind, idx] : order) {
    ojson j;
    switch (kind) {
      case Kind::kToken: {
        j["kind"] = "token";
        j["step"] = idx;
        j["token"] = token_text[idx];
        j["id"] = tokens[idx];
        if (hallucinated[idx]) j["halluc"] = *hallucinated[idx];
        break;
      }
      case Kind::kSink: {
        const SinkEvent& e = sinks[idx];
        j["kind"] = "sink";
        j["step"] = e.step;
        j["token"] = token_text[e.step];
        j["segment"] = span_json(e.segment);
        break;
      }
      case Kind::kGrounding: {
        const GroundingReport& r = reports[idx];
        j["kind"] = "grounding";
        j["step"] = r.step;
        j["trigger"] = r.trigger == TriggerKind::kPeriodic ? "periodic" : "sink";
        j["segment"] = span_json(r.sink.segment);
        ojson concepts = ojson::array();
        for (const auto& c : r.concepts) {
          concepts.push_back({{"surface", c.surface}, {"span", span_json(c.span)}, {"kind", std::string(to_string(c.kind))}});
        }
        j["concepts"] = concepts;
        j["mode"] = std::string(to_string(r.mode));
        j["layer_set"] = r.layer_set;
        if (r.i1_map) {
          j["layer"] = r.selected_layer;
          j["head"] = r.selected_head;
          j["i1_map"] = r.i1_map->values;
          j["i1_mask"] = mask_json(*r.i1_mask);
        }
        if (r.i2_mask) {
          ojson per = ojson::array();
          for (const auto& m : r.per_concept_masks) per.push_back(mask_json(m));
          j["per_concept_masks"] = per;
          j["i2_mask"] = mask_json(*r.i2_mask);
        }
        j["overlap"] = r.overlap;
        j["decision"] = std::string(to_string(r.decision));
        if (!r.note.empty()) j["note"] = r.note;
        break;
      }
      case Kind::kDirective: {
        const DirectiveEvent& d = directives[idx];
        j["kind"] = "directive";
        j["step"] = d.step;
        j["action"] = d.install ? "install" : "expire";
        j["scale"] = d.directive.scale;
        j["layers"] = d.directive.target_layers;
        j["installed_at"] = d.directive.installed_at;
        j["expires"] = std::string(to_string(d.directive.expires));
        break;
      }
      case Kind::kTiming: {
        const TimingEvent& t = timings[idx];
        j["kind"] = "timing";
        j["step"] = t.step;
        j["scope"] = t.total ? "total" : "trigger";
        for (std::size_t k = 0; k < kTimingComponents; ++k) {
          j[std::string(to_string(static_cast<TimingComponent>(k))) + "_ns"] = t.ns[k];
        }
        if (t.total) j["decode_ns"] = t.decode_ns;
        break;
      }
    }
    out += j.dump();
    out += '\n';
  }
  return out;
}

std::string TraceTokens::caption() const {
  std::string out;
  for (const auto& t : tokens) {
    if (t == Vocabulary::kEndText) continue;
    if (!out.empty()) out += ' ';
    out += t;
  }
  return out;
}

TraceTokens parse_trace_jsonl(const std::string& text) {
  TraceTokens out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("trace line " + std::to_string(lineno) + ": " + e.what());
    }
    const std::string kind = j.value("kind", "");
    if (kind == "token") {
      out.tokens.push_back(j.at("token").get<std::string>());
      out.hallucinated.push_back(j.contains("halluc") ? std::optional<bool>(j.at("halluc").get<bool>()) : std::nullopt);
    } else if (kind == "grounding") {
      ++out.grounding_events;
    } else if (kind == "timing") {
      TimingEvent t;
      t.step = j.value("step", std::size_t{0});
      t.total = j.value("scope", "") == "total";
      for (std::size_t k = 0; k < kTimingComponents; ++k) {
        t.ns[k] = j.value(std::string(to_string(static_cast<TimingComponent>(k))) + "_ns", std::int64_t{0});
      }
      t.decode_ns = j.value("decode_ns", std::int64_t{0});
      out.timings.push_back(t);
    }
  }
  return out;
}

}  // namespace sage
