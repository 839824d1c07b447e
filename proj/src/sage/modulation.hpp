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

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

namespace sage {

enum class DirectiveExpiry { kNextTrigger, kOneStep };

std::string_view to_string(DirectiveExpiry expiry);

// Scales image-position attention in the target layers. At most one directive
// is active during a decode; a new trigger replaces it.
struct ModulationDirective {
  double scale = 1.0;
  std::vector<std::size_t> target_layers;
  std::size_t installed_at = 0;
  DirectiveExpiry expires = DirectiveExpiry::kNextTrigger;

  bool targets(std::size_t layer) const;
  bool operator==(const ModulationDirective&) const = default;
};

// Per-position weights: `scale` on [0, image_positions), 1 elsewhere.
std::vector<double> image_weights(double scale, std::size_t image_positions, std::size_t context);

// Multiplies the image-position entries of `row` by `scale` and renormalizes
// the whole row. Text entries keep their relative proportions.
std::vector<double> apply_directive(std::span<const double> row, double scale, std::size_t image_positions);

// Same as apply_directive with an explicit weight per position.
std::vector<double> reweight_row(std::span<const double> row, std::span<const double> weights);

}  // namespace sage
