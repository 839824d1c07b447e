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

#include "sage/oracle_vlm.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>

#include "sage/error.hpp"

namespace sage {

namespace {

std::string when_name(OracleReroute::When w) {
  switch (w) {
    case OracleReroute::When::kDiffuse:
      return "diffuse";
    case OracleReroute::When::kReinforce:
      return "reinforce";
    case OracleReroute::When::kAny:
      return "any";
  }
  return "any";
}

OracleReroute::When parse_when(const std::string& s) {
  if (s == "diffuse") return OracleReroute::When::kDiffuse;
  if (s == "reinforce") return OracleReroute::When::kReinforce;
  if (s == "any") return OracleReroute::When::kAny;
  throw ParseError("reroute 'when' must be diffuse, reinforce or any; got '" + s + "'");
}

std::pair<std::size_t, std::size_t> parse_layer_head(const std::string& key) {
  const auto dot = key.find('.');
  if (dot == std::string::npos || dot == 0 || dot + 1 == key.size()) {
    throw ParseError("attention key '" + key + "' must look like 'layer.head'");
  }
  try {
    return {std::stoul(key.substr(0, dot)), std::stoul(key.substr(dot + 1))};
  } catch (const std::exception&) {
    throw ParseError("attention key '" + key + "' must look like 'layer.head'");
  }
}

std::size_t parse_index(const std::string& s, const char* what) {
  try {
    std::size_t used = 0;
    const auto v = std::stoul(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ParseError(std::string(what) + " key '" + s + "' is not a step index");
  }
}

std::size_t isqrt_exact(std::size_t n) {
  const auto r = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(n))));
  if (r * r != n) throw ParseError("map of " + std::to_string(n) + " values is not a square grid");
  return r;
}

}  // namespace

// ---- OracleScript ----------------------------------------------------------

OracleScript OracleScript::from_json(const nlohmann::json& j) {
  OracleScript s;
  try {
    s.tokens = j.at("tokens").get<std::vector<std::string>>();
    s.gt_objects = j.value("gt_objects", std::vector<std::string>{});
    s.halluc_labels = j.value("halluc_labels", std::vector<bool>{});
    s.image_id = j.value("image_id", std::string{});

    std::size_t max_layer = 0, max_head = 0, grid_hint = 0;
    if (j.contains("attention")) {
      for (const auto& [step_key, per_head] : j.at("attention").items()) {
        const std::size_t step = parse_index(step_key, "attention");
        for (const auto& [lh, values] : per_head.items()) {
          const auto key = parse_layer_head(lh);
          max_layer = std::max(max_layer, key.first);
          max_head = std::max(max_head, key.second);
          s.attention[step][key] = values.get<std::vector<double>>();
          grid_hint = isqrt_exact(s.attention[step][key].size());
        }
      }
    }
    if (j.contains("gradcam")) {
      for (const auto& [cpt, values] : j.at("gradcam").items()) {
        s.gradcam[cpt] = values.get<std::vector<double>>();
        grid_hint = isqrt_exact(s.gradcam[cpt].size());
      }
    }
    if (j.contains("reroute")) {
      for (const auto& [step_key, r] : j.at("reroute").items()) {
        OracleReroute rr;
        rr.when = parse_when(r.value("when", std::string("diffuse")));
        rr.token = r.at("token").get<std::string>();
        rr.hallucinated = r.value("halluc", false);
        s.reroutes[parse_index(step_key, "reroute")] = rr;
      }
    }
    const nlohmann::json meta = j.value("meta", nlohmann::json::object());
    s.grid = meta.value("grid", grid_hint);
    s.layers = meta.value("layers", max_layer + 1);
    s.heads = meta.value("heads", max_head + 1);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("oracle script: ") + e.what());
  }
  if (s.grid == 0) throw ParseError("oracle script: grid size unknown (no meta.grid and no maps)");
  return s;
}

OracleScript OracleScript::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read oracle script " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
  return from_json(j);
}

nlohmann::json OracleScript::to_json() const {
  nlohmann::json j;
  j["image_id"] = image_id;
  j["meta"] = {{"grid", grid}, {"layers", layers}, {"heads", heads}};
  j["tokens"] = tokens;
  nlohmann::json att = nlohmann::json::object();
  for (const auto& [step, per_head] : attention) {
    nlohmann::json rows = nlohmann::json::object();
    for (const auto& [lh, values] : per_head) rows[std::to_string(lh.first) + "." + std::to_string(lh.second)] = values;
    att[std::to_string(step)] = rows;
  }
  j["attention"] = att;
  j["gradcam"] = gradcam;
  j["gt_objects"] = gt_objects;
  j["halluc_labels"] = halluc_labels;
  nlohmann::json rr = nlohmann::json::object();
  for (const auto& [step, r] : reroutes) {
    rr[std::to_string(step)] = {{"when", when_name(r.when)}, {"token", r.token}, {"halluc", r.hallucinated}};
  }
  j["reroute"] = rr;
  return j;
}

void OracleScript::validate(const Vocabulary& vocab) const {
  const std::size_t cells = grid * grid;
  if (layers == 0 || heads == 0) throw ParseError("oracle script: layers and heads must be positive");
  for (const auto& t : tokens)
    if (!vocab.contains(t)) throw ParseError("oracle script token '" + t + "' is not in the vocabulary");
  if (!halluc_labels.empty() && halluc_labels.size() != tokens.size()) {
    throw ParseError("oracle script: halluc_labels has " + std::to_string(halluc_labels.size()) + " entries for " +
                     std::to_string(tokens.size()) + " tokens");
  }
  for (const auto& [step, per_head] : attention) {
    if (step > tokens.size()) throw ParseError("oracle script: attention for step " + std::to_string(step) + " beyond script");
    for (const auto& [lh, row] : per_head) {
      if (lh.first >= layers || lh.second >= heads) throw ParseError("oracle script: attention head out of range");
      if (row.size() != cells) throw ParseError("oracle script: attention row is not grid-sized");
      double total = 0.0;
      for (double v : row) {
        if (!std::isfinite(v) || v < 0.0) throw ParseError("oracle script: attention entries must be finite and >= 0");
        total += v;
      }
      if (total > 1.0 + 1e-9) throw ParseError("oracle script: image attention mass exceeds 1");
    }
  }
  for (const auto& [cpt, map] : gradcam) {
    if (map.size() != cells) throw ParseError("oracle script: gradcam map for '" + cpt + "' is not grid-sized");
    for (double v : map)
      if (!std::isfinite(v) || v < 0.0) throw ParseError("oracle script: gradcam entries must be finite and >= 0");
  }
  for (const auto& [step, r] : reroutes) {
    if (step >= tokens.size()) throw ParseError("oracle script: reroute beyond script");
    if (!vocab.contains(r.token)) throw ParseError("oracle script: reroute token '" + r.token + "' not in vocabulary");
  }
}

// ---- OracleVlm -------------------------------------------------------------

OracleVlm::OracleVlm(OracleScript script, const Vocabulary& vocab) : script_(std::move(script)), vocab_(vocab) {
  script_.validate(vocab_);
  for (const auto& [cpt, map] : script_.gradcam) channels_.push_back(cpt);
}

std::vector<double> OracleVlm::scripted_row(std::size_t step, std::size_t layer, std::size_t head,
                                            std::size_t context) const {
  const std::size_t cells = script_.grid * script_.grid;
  if (context <= cells) throw DimensionError("context must include at least one text position");
  std::vector<double> row(context, 0.0);
  auto it = script_.attention.find(step);
  if (it != script_.attention.end()) {
    auto jt = it->second.find({layer, head});
    if (jt != it->second.end()) {
      double mass = 0.0;
      for (std::size_t i = 0; i < cells; ++i) {
        row[i] = jt->second[i];
        mass += row[i];
      }
      const double rest = std::max(0.0, 1.0 - mass) / static_cast<double>(context - cells);
      for (std::size_t i = cells; i < context; ++i) row[i] = rest;
      return row;
    }
  }
  std::fill(row.begin(), row.end(), 1.0 / static_cast<double>(context));
  return row;
}

DecodeState OracleVlm::begin(const Image& /*image*/, std::span<const TokenId> prompt) const {
  const std::size_t cells = script_.grid * script_.grid;
  const std::size_t k = std::max<std::size_t>(1, channels_.size());
  std::vector<double> acts(cells * k, 0.0);
  for (std::size_t c = 0; c < channels_.size(); ++c) {
    const auto& map = script_.gradcam.at(channels_[c]);
    for (std::size_t p = 0; p < cells; ++p) acts[p * k + c] = map[p];
  }
  DecodeState state;
  state.tape = Tape::create();
  state.vision_activations = state.tape->leaf({cells, k}, std::move(acts));
  state.image_tokens = cells;
  state.prompt.push_back(Vocabulary::kBegin);
  for (TokenId t : prompt) {
    (void)vocab_.text(t);
    state.prompt.push_back(t);
  }
  return state;
}

TokenId OracleVlm::decode_step(DecodeState& state, const ModulationDirective* directive) const {
  if (state.finished) throw StateError("decode already finished");
  const std::size_t step = state.step();
  if (step >= max_new_tokens()) throw StateError("exceeded max_new_tokens (" + std::to_string(max_new_tokens()) + ")");

  std::string text = step < script_.tokens.size() ? script_.tokens[step] : std::string(Vocabulary::kEndText);
  bool halluc = step < script_.halluc_labels.size() && script_.halluc_labels[step];
  auto rr = script_.reroutes.find(step);
  if (rr != script_.reroutes.end() && directive && directive->scale != 1.0) {
    const bool diffuse = directive->scale < 1.0;
    const auto w = rr->second.when;
    if (w == OracleReroute::When::kAny || (w == OracleReroute::When::kDiffuse && diffuse) ||
        (w == OracleReroute::When::kReinforce && !diffuse)) {
      text = rr->second.token;
      halluc = rr->second.hallucinated;
    }
  }
  const TokenId token = vocab_.id(text);

  const std::size_t ctx = state.context_length();
  StepAttention rows;
  rows.pre.resize(script_.layers);
  rows.post.resize(script_.layers);
  for (std::size_t l = 0; l < script_.layers; ++l) {
    const bool modulate = directive && directive->targets(l);
    for (std::size_t h = 0; h < script_.heads; ++h) {
      auto pre = scripted_row(step, l, h, ctx);
      if (modulate) {
        const auto t0 = std::chrono::steady_clock::now();
        rows.post[l].push_back(apply_directive(pre, directive->scale, state.image_tokens));
        state.modulation_ns +=
            std::chrono::duration_cast<std::chrono::nanoseconds>(std::chrono::steady_clock::now() - t0).count();
      } else {
        rows.post[l].push_back(pre);
      }
      rows.pre[l].push_back(std::move(pre));
    }
  }
  std::vector<double> logits(vocab_.size(), 0.0);
  logits[token] = 1.0;

  state.generated.push_back(token);
  state.hallucinated.push_back(step < script_.tokens.size() ? std::optional<bool>(halluc) : std::nullopt);
  state.logits.push_back(DiffTensor::constant({vocab_.size()}, std::move(logits)));
  state.attention_log.push_back(std::move(rows));
  state.applied.push_back(directive ? std::optional<ModulationDirective>(*directive) : std::nullopt);
  if (token == Vocabulary::kEnd) state.finished = true;
  return token;
}

DiffTensor OracleVlm::concept_logit(DecodeState& state, const Concept& cpt) const {
  check_concept_span(state, cpt);
  const auto it = std::find(channels_.begin(), channels_.end(), cpt.surface);
  if (it == channels_.end()) return scale(sum(state.vision_activations), 0.0);
  const auto c = static_cast<std::size_t>(it - channels_.begin());
  return sum(slice_cols(state.vision_activations, c, c + 1));
}

}  // namespace sage
