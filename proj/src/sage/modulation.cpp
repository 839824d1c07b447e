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

#include "sage/modulation.hpp"

#include <algorithm>
#include <string>

#include "sage/error.hpp"

namespace sage {

std::string_view to_string(DirectiveExpiry expiry) {
  return expiry == DirectiveExpiry::kNextTrigger ? "next-sink" : "one-step";
}

bool ModulationDirective::targets(std::size_t layer) const {
  return std::find(target_layers.begin(), target_layers.end(), layer) != target_layers.end();
}

std::vector<double> image_weights(double scale, std::size_t image_positions, std::size_t context) {
  if (!(scale > 0.0)) throw ArgumentError("modulation scale must be positive, got " + std::to_string(scale));
  if (image_positions > context) throw DimensionError("image positions exceed context length");
  std::vector<double> w(context, 1.0);
  std::fill(w.begin(), w.begin() + static_cast<std::ptrdiff_t>(image_positions), scale);
  return w;
}

std::vector<double> reweight_row(std::span<const double> row, std::span<const double> weights) {
  if (row.size() != weights.size()) throw DimensionError("reweight_row: row and weights differ in length");
  // Mirrors reweight_rows() in tensor.cpp operation for operation so logged
  // rows and the rows used in the forward pass agree bitwise.
  std::vector<double> out(row.size());
  double total = 0.0;
  for (std::size_t c = 0; c < row.size(); ++c) {
    if (row[c] < 0.0) throw ArgumentError("attention row has a negative entry");
    out[c] = weights[c] * row[c];
    total += out[c];
  }
  if (!(total > 0.0)) throw ArgumentError("attention row has no positive mass");
  for (double& v : out) v /= total;
  return out;
}

std::vector<double> apply_directive(std::span<const double> row, double scale, std::size_t image_positions) {
  const auto w = image_weights(scale, image_positions, row.size());
  return reweight_row(row, w);
}

}  // namespace sage
