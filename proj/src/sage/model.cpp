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

#include "sage/model.hpp"

#include "sage/error.hpp"

namespace sage {

TokenId argmax_token(std::span<const double> logits) {
  if (logits.empty()) throw DimensionError("argmax over empty logits");
  std::size_t best = 0;
  for (std::size_t i = 1; i < logits.size(); ++i)
    if (logits[i] > logits[best]) best = i;
  return static_cast<TokenId>(best);
}

void check_concept_span(const DecodeState& state, const Concept& cpt) {
  if (cpt.span.empty() || cpt.span.end > state.generated.size()) {
    throw ArgumentError("concept '" + cpt.surface + "' span [" + std::to_string(cpt.span.begin) + ", " +
                        std::to_string(cpt.span.end) + ") is outside the " +
                        std::to_string(state.generated.size()) + " generated tokens");
  }
  if (state.logits.size() < cpt.span.end) throw StateError("logits for concept '" + cpt.surface + "' evicted");
  for (std::size_t s = cpt.span.begin; s < cpt.span.end; ++s) {
    if (!state.logits[s].defined()) throw StateError("logits for step " + std::to_string(s) + " evicted");
  }
}

}  // namespace sage
