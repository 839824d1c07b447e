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

#include "sage/grounding.hpp"

#include <algorithm>
#include <cmath>

#include "sage/error.hpp"

namespace sage {

namespace {

void check_same_grid(const BinaryMask& a, const BinaryMask& b) {
  if (a.grid != b.grid || a.cells.size() != b.cells.size()) {
    throw DimensionError("mask grids differ: " + std::to_string(a.grid) + "x" + std::to_string(a.grid) + " vs " +
                         std::to_string(b.grid) + "x" + std::to_string(b.grid));
  }
}

std::string pgm_bytes(std::size_t grid, const std::vector<std::uint8_t>& pixels) {
  std::string out = "P5\n" + std::to_string(grid) + " " + std::to_string(grid) + "\n255\n";
  out.append(pixels.begin(), pixels.end());
  return out;
}

}  // namespace

double SpatialMap::max() const {
  double m = 0.0;
  for (double v : values) m = std::max(m, v);
  return m;
}

SpatialMap SpatialMap::normalized(std::size_t grid, std::vector<double> raw, MapProvenance provenance) {
  if (raw.size() != grid * grid) {
    throw DimensionError("map has " + std::to_string(raw.size()) + " values for a " + std::to_string(grid) + "x" +
                         std::to_string(grid) + " grid");
  }
  double m = 0.0;
  for (double v : raw) {
    if (!std::isfinite(v)) throw ArgumentError("map contains a non-finite value");
    if (v < 0.0) throw ArgumentError("map contains a negative value");
    m = std::max(m, v);
  }
  if (m > 0.0) {
    for (double& v : raw) v /= m;
  }
  return SpatialMap{grid, std::move(raw), provenance};
}

BinaryMask BinaryMask::filled(std::size_t grid, bool value) {
  return BinaryMask{grid, std::vector<std::uint8_t>(grid * grid, value ? 1 : 0)};
}

BinaryMask BinaryMask::box(std::size_t grid, std::size_t r0, std::size_t c0, std::size_t r1, std::size_t c1) {
  if (r0 >= r1 || c0 >= c1 || r1 > grid || c1 > grid) throw ArgumentError("box outside grid");
  BinaryMask m = filled(grid, false);
  for (std::size_t r = r0; r < r1; ++r)
    for (std::size_t c = c0; c < c1; ++c) m.cells[r * grid + c] = 1;
  return m;
}

std::size_t BinaryMask::count() const {
  return static_cast<std::size_t>(std::count(cells.begin(), cells.end(), std::uint8_t{1}));
}

HeadChoice attention_map(const DecodeState& state, std::size_t step, std::span<const std::size_t> layers,
                         std::size_t grid) {
  if (layers.empty()) throw ArgumentError("attention_map needs a non-empty layer set");
  if (step >= state.attention_log.size()) throw StateError("no attention logged for step " + std::to_string(step));
  const std::size_t cells = grid * grid;
  if (cells != state.image_tokens) throw DimensionError("grid does not match the image-token count");
  const auto& rows = state.attention_log[step].post;

  bool found = false;
  HeadChoice best;
  std::vector<std::size_t> sorted(layers.begin(), layers.end());
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t layer : sorted) {
    if (layer >= rows.size()) throw StateError("layer " + std::to_string(layer) + " not logged");
    for (std::size_t h = 0; h < rows[layer].size(); ++h) {
      const auto& row = rows[layer][h];
      double mass = 0.0;
      for (std::size_t i = 0; i < cells; ++i) mass += row[i];
      const double mean = mass / static_cast<double>(cells);
      if (!found || mean > best.mean_mass) {
        found = true;
        best.layer = layer;
        best.head = h;
        best.mean_mass = mean;
      }
    }
  }
  if (!found) throw StateError("no heads logged for the requested layers");
  const auto& row = rows[best.layer][best.head];
  best.map = SpatialMap::normalized(grid, std::vector<double>(row.begin(), row.begin() + static_cast<std::ptrdiff_t>(cells)),
                                    MapProvenance::kAttention);
  return best;
}

SpatialMap gradcam(const DiffTensor& activations, std::size_t grid) {
  if (!activations.defined() || activations.rank() != 2) throw DimensionError("gradcam expects [P^2, channels] activations");
  const std::size_t cells = activations.rows(), channels = activations.cols();
  if (cells != grid * grid) throw DimensionError("activations do not cover the " + std::to_string(grid) + "x" + std::to_string(grid) + " grid");
  if (!activations.requires_grad()) throw StateError("gradcam on detached activations");
  if (!activations.has_grad()) throw StateError("gradcam before a backward pass reached the activations");
  const auto a = activations.values();
  const auto g = activations.grad();

  std::vector<double> weights(channels, 0.0);
  for (std::size_t p = 0; p < cells; ++p)
    for (std::size_t k = 0; k < channels; ++k) weights[k] += g[p * channels + k];
  for (double& w : weights) w /= static_cast<double>(cells);

  std::vector<double> raw(cells, 0.0);
  for (std::size_t p = 0; p < cells; ++p) {
    double acc = 0.0;
    for (std::size_t k = 0; k < channels; ++k) acc += weights[k] * a[p * channels + k];
    raw[p] = acc > 0.0 ? acc : 0.0;
  }
  return SpatialMap::normalized(grid, std::move(raw), MapProvenance::kGradcam);
}

SpatialMap gradcam_for_concept(const VlmModel& model, DecodeState& state, const Concept& cpt) {
  if (!state.tape) throw StateError("decode state has no tape");
  state.tape->zero_grad();
  const DiffTensor y = model.concept_logit(state, cpt);
  backward(y);
  return gradcam(state.vision_activations, model.grid());
}

BinaryMask binarize(const SpatialMap& map, double rel_threshold) {
  if (!(rel_threshold > 0.0 && rel_threshold < 1.0)) {
    throw ArgumentError("binarization threshold must lie in (0, 1), got " + std::to_string(rel_threshold));
  }
  BinaryMask mask = BinaryMask::filled(map.grid, false);
  const double m = map.max();
  if (m <= 0.0) return mask;
  const double cut = rel_threshold * m;
  for (std::size_t i = 0; i < map.values.size(); ++i) mask.cells[i] = map.values[i] >= cut ? 1 : 0;
  return mask;
}

BinaryMask union_masks(std::span<const BinaryMask> masks) {
  if (masks.empty()) throw ArgumentError("union of an empty concept list");
  BinaryMask out = masks[0];
  for (std::size_t k = 1; k < masks.size(); ++k) {
    check_same_grid(out, masks[k]);
    for (std::size_t i = 0; i < out.cells.size(); ++i) out.cells[i] = (out.cells[i] | masks[k].cells[i]) ? 1 : 0;
  }
  return out;
}

double iou(const BinaryMask& a, const BinaryMask& b) {
  check_same_grid(a, b);
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.cells.size(); ++i) {
    inter += (a.cells[i] && b.cells[i]) ? 1 : 0;
    uni += (a.cells[i] || b.cells[i]) ? 1 : 0;
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

double area_ratio(const BinaryMask& mask) {
  if (mask.cells.empty()) return 0.0;
  return static_cast<double>(mask.count()) / static_cast<double>(mask.cells.size());
}

nlohmann::json to_json(const SpatialMap& map) { return map.values; }

nlohmann::json to_json(const BinaryMask& mask) {
  nlohmann::json out = nlohmann::json::array();
  for (auto c : mask.cells) out.push_back(static_cast<int>(c));
  return out;
}

std::string to_pgm(const SpatialMap& map) {
  std::vector<std::uint8_t> px(map.values.size());
  for (std::size_t i = 0; i < px.size(); ++i) {
    px[i] = static_cast<std::uint8_t>(std::lround(std::clamp(map.values[i], 0.0, 1.0) * 255.0));
  }
  return pgm_bytes(map.grid, px);
}

std::string to_pgm(const BinaryMask& mask) {
  std::vector<std::uint8_t> px(mask.cells.size());
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = mask.cells[i] ? 255 : 0;
  return pgm_bytes(mask.grid, px);
}

}  // namespace sage
