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

// The hook surface the decoder needs from a vision-language model: per-step
// attention rows for every layer and head, per-step logits, and a
// differentiable path from a concept's logit back to the final-layer vision
// activations.

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sage/linguistics.hpp"
#include "sage/modulation.hpp"
#include "sage/tensor.hpp"
#include "sage/vocab.hpp"

namespace sage {

// Row-major height x width x channels pixel grid.
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  std::vector<double> pixels;

  bool empty() const { return pixels.empty(); }
};

// Attention of the newest token over the whole context, [layer][head][pos].
// Image positions come first.
using AttentionRows = std::vector<std::vector<std::vector<double>>>;

struct StepAttention {
  AttentionRows pre;   // as computed
  AttentionRows post;  // after the active directive, identical when none
};

enum class ConceptLogitMode { kSum, kFirstToken };

struct DecodeState {
  std::vector<TokenId> prompt;     // begin marker followed by the prompt
  std::vector<TokenId> generated;  // one token per completed step
  std::vector<std::optional<bool>> hallucinated;
  std::size_t image_tokens = 0;
  std::vector<StepAttention> attention_log;
  std::vector<DiffTensor> logits;
  std::vector<std::optional<ModulationDirective>> applied;
  std::shared_ptr<Tape> tape;
  DiffTensor vision_activations;  // [image_tokens, channels], requires_grad
  bool finished = false;
  std::int64_t modulation_ns = 0;
  std::shared_ptr<void> cache;  // backend-private

  std::size_t step() const { return generated.size(); }
  // Positions visible to the query at the current step, query included.
  std::size_t context_length() const { return image_tokens + prompt.size() + generated.size(); }
};

class VlmModel {
 public:
  virtual ~VlmModel() = default;

  virtual std::string backend() const = 0;
  virtual const Vocabulary& vocab() const = 0;
  virtual std::size_t grid() const = 0;  // image-token grid side P
  virtual std::size_t decoder_layers() const = 0;
  virtual std::size_t heads() const = 0;
  virtual std::size_t max_new_tokens() const = 0;

  // Encodes the image and primes the context with `prompt` (without the
  // begin marker, which is prepended).
  virtual DecodeState begin(const Image& image, std::span<const TokenId> prompt) const = 0;

  // One greedy step. `directive`, when non-null, scales image attention in
  // its target layers. Logs pre- and post-modulation rows and the logits.
  virtual TokenId decode_step(DecodeState& state, const ModulationDirective* directive) const = 0;

  // Scalar on the state's tape whose gradient reaches vision_activations.
  virtual DiffTensor concept_logit(DecodeState& state, const Concept& cpt) const = 0;
};

// Greedy selection; ties go to the lowest id.
TokenId argmax_token(std::span<const double> logits);

// Throws unless `concept.span` lies inside the generated tokens with logits
// retained for every step.
void check_concept_span(const DecodeState& state, const Concept& cpt);

}  // namespace sage
