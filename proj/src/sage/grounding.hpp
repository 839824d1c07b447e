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

// Map algebra for grounding checks: the attention-derived map of a sink
// token, Grad-CAM maps of its concepts, and their overlap.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "sage/model.hpp"

namespace sage {

enum class MapProvenance { kAttention, kGradcam };

// P x P values in [0, 1], max exactly 1 unless identically zero.
struct SpatialMap {
  std::size_t grid = 0;
  std::vector<double> values;  // row-major
  MapProvenance provenance = MapProvenance::kAttention;

  double max() const;
  // Divides by the maximum; leaves an all-zero map untouched.
  static SpatialMap normalized(std::size_t grid, std::vector<double> raw, MapProvenance provenance);
};

struct BinaryMask {
  std::size_t grid = 0;
  std::vector<std::uint8_t> cells;  // row-major, 0 or 1

  static BinaryMask filled(std::size_t grid, bool value);
  // Half-open patch-grid box [r0, r1) x [c0, c1).
  static BinaryMask box(std::size_t grid, std::size_t r0, std::size_t c0, std::size_t r1, std::size_t c1);
  std::size_t count() const;
  bool at(std::size_t r, std::size_t c) const { return cells[r * grid + c] != 0; }
  bool operator==(const BinaryMask&) const = default;
};

struct HeadChoice {
  SpatialMap map;
  std::size_t layer = 0;
  std::size_t head = 0;
  double mean_mass = 0.0;
};

// Among `layers`, the (layer, head) whose post-modulation row at `step` has
// the largest mean mass over image positions; ties go to the lowest layer,
// then head. The chosen row's image slice becomes a P x P map.
HeadChoice attention_map(const DecodeState& state, std::size_t step, std::span<const std::size_t> layers,
                         std::size_t grid);

// Grad-CAM over [P^2, channels] activations whose grad is populated:
// w_k = mean_p dY/dA[p,k], map = relu(sum_k w_k A[:,k]), max-normalized.
SpatialMap gradcam(const DiffTensor& activations, std::size_t grid);

// Zeroes the tape, backpropagates the concept logit and runs gradcam().
SpatialMap gradcam_for_concept(const VlmModel& model, DecodeState& state, const Concept& cpt);

BinaryMask binarize(const SpatialMap& map, double rel_threshold);
BinaryMask union_masks(std::span<const BinaryMask> masks);
// |a and b| / |a or b|; two empty masks give 0.
double iou(const BinaryMask& a, const BinaryMask& b);
double area_ratio(const BinaryMask& mask);

nlohmann::json to_json(const SpatialMap& map);
nlohmann::json to_json(const BinaryMask& mask);

// 8-bit binary PGM, P x P, row-major.
std::string to_pgm(const SpatialMap& map);
std::string to_pgm(const BinaryMask& mask);

}  // namespace sage
