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

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "sage/model.hpp"

namespace sage {

// Alternative emission at one step, taken when the active directive pushes
// image attention in the named direction.
struct OracleReroute {
  enum class When { kDiffuse, kReinforce, kAny };
  When when = When::kDiffuse;
  std::string token;
  bool hallucinated = false;
};

// Deterministic test double. Attention values are image-position masses for
// one (layer, head); the remaining mass is spread evenly over text positions.
// Unscripted rows are uniform over the whole context.
struct OracleScript {
  std::string image_id;
  std::size_t grid = 0;
  std::size_t layers = 0;
  std::size_t heads = 0;
  std::vector<std::string> tokens;
  std::map<std::size_t, std::map<std::pair<std::size_t, std::size_t>, std::vector<double>>> attention;
  std::map<std::string, std::vector<double>> gradcam;
  std::vector<std::string> gt_objects;
  std::vector<bool> halluc_labels;
  std::map<std::size_t, OracleReroute> reroutes;

  static OracleScript from_json(const nlohmann::json& j);
  static OracleScript load(const std::string& path);
  nlohmann::json to_json() const;
  // Throws ParseError on an invalid script.
  void validate(const Vocabulary& vocab) const;
};

class OracleVlm final : public VlmModel {
 public:
  OracleVlm(OracleScript script, const Vocabulary& vocab);

  const OracleScript& script() const { return script_; }

  std::string backend() const override { return "oracle"; }
  const Vocabulary& vocab() const override { return vocab_; }
  std::size_t grid() const override { return script_.grid; }
  std::size_t decoder_layers() const override { return script_.layers; }
  std::size_t heads() const override { return script_.heads; }
  std::size_t max_new_tokens() const override { return script_.tokens.size() + 1; }

  DecodeState begin(const Image& image, std::span<const TokenId> prompt) const override;
  TokenId decode_step(DecodeState& state, const ModulationDirective* directive) const override;
  DiffTensor concept_logit(DecodeState& state, const Concept& cpt) const override;

  // Pre-modulation row for (step, layer, head) over `context` positions.
  std::vector<double> scripted_row(std::size_t step, std::size_t layer, std::size_t head, std::size_t context) const;

 private:
  OracleScript script_;
  Vocabulary vocab_;
  std::vector<std::string> channels_;  // gradcam concepts, one activation channel each
};

}  // namespace sage
