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
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "sage/model.hpp"

namespace sage {

struct VlmConfig {
  std::size_t image_size = 32;
  std::size_t patch_size = 8;
  std::size_t channels = 3;
  std::size_t vision_layers = 2;
  std::size_t decoder_layers = 4;
  std::size_t heads = 4;
  std::size_t embed_dim = 32;
  std::size_t mlp_ratio = 4;
  std::uint64_t seed = 0;
  std::size_t max_new_tokens = 32;
  std::size_t max_prompt_tokens = 32;
  double init_std = 0.02;
  ConceptLogitMode concept_logit = ConceptLogitMode::kSum;

  std::size_t grid() const { return image_size / patch_size; }
  std::size_t image_tokens() const { return grid() * grid(); }
  std::size_t head_dim() const { return embed_dim / heads; }
  std::size_t max_context() const { return image_tokens() + max_prompt_tokens + 1 + max_new_tokens; }

  // Throws ArgumentError on a violated invariant.
  void validate() const;
  nlohmann::json to_json() const;
  static VlmConfig from_json(const nlohmann::json& j);
};

// Seeded random-weight ViT encoder + causal decoder. Weights are constants;
// only the final vision activations (and everything downstream) are recorded
// on the per-decode tape.
class ToyVlm final : public VlmModel {
 public:
  ToyVlm(VlmConfig config, Vocabulary vocab);

  static ToyVlm load_checkpoint(const std::string& prefix, Vocabulary vocab);
  // Writes <prefix>.bin (raw float64) and <prefix>.json (shape manifest).
  void save_checkpoint(const std::string& prefix) const;

  const VlmConfig& config() const { return config_; }

  std::string backend() const override { return "toy"; }
  const Vocabulary& vocab() const override { return vocab_; }
  std::size_t grid() const override { return config_.grid(); }
  std::size_t decoder_layers() const override { return config_.decoder_layers; }
  std::size_t heads() const override { return config_.heads; }
  std::size_t max_new_tokens() const override { return config_.max_new_tokens; }

  // Final-layer encoder activations, [P^2, embed_dim], as a detached constant.
  DiffTensor encode_image(const Image& image) const;
  // Patch embeddings plus positions, before any encoder layer.
  DiffTensor patch_embed(const Image& image) const;

  DecodeState begin(const Image& image, std::span<const TokenId> prompt) const override;
  // Starts a decode from given activation values instead of an image.
  DecodeState begin_from_activations(std::span<const double> activations, std::span<const TokenId> prompt) const;
  TokenId decode_step(DecodeState& state, const ModulationDirective* directive) const override;
  // Runs a step but appends `forced` instead of the argmax token.
  TokenId forced_step(DecodeState& state, const ModulationDirective* directive, TokenId forced) const;
  DiffTensor concept_logit(DecodeState& state, const Concept& cpt) const override;

  // Re-runs `reference`'s tokens and directives from `activations` and returns
  // the concept logit value. Used for finite-difference checks.
  double replay_concept_logit(std::span<const double> activations, const DecodeState& reference,
                              const Concept& cpt) const;

  const std::vector<std::pair<std::string, DiffTensor>>& weights() const { return weights_; }

 private:
  struct Layer {
    DiffTensor wq, wk, wv, wo, w1, w2;
  };

  ToyVlm(VlmConfig config, Vocabulary vocab, std::vector<std::pair<std::string, DiffTensor>> weights);
  void bind();
  const DiffTensor& weight(const std::string& name) const;
  DiffTensor encoder_block(const DiffTensor& x, const Layer& layer) const;
  TokenId step_impl(DecodeState& state, const ModulationDirective* directive, std::optional<TokenId> forced) const;

  VlmConfig config_;
  Vocabulary vocab_;
  std::vector<std::pair<std::string, DiffTensor>> weights_;
  // Bound views into weights_.
  DiffTensor patch_w_, vision_pos_, proj_, tok_emb_, text_pos_, lm_head_;
  std::vector<Layer> vision_layers_, decoder_layers_;
};

}  // namespace sage
