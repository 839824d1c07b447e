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

// Caption-level hallucination metrics (CHAIR, Cover), attention entropy,
// per-layer grounding analysis and sink-proximity statistics.

#include <array>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "sage/error.hpp"
#include "sage/grounding.hpp"
#include "sage/linguistics.hpp"
#include "sage/model.hpp"

namespace sage {

// Half-open patch-grid box [r0, r1) x [c0, c1).
using GridBox = std::array<std::size_t, 4>;

struct ImageAnnotation {
  std::vector<std::string> objects;  // canonical labels
  std::map<std::string, GridBox> boxes;
};

struct AnnotationSet {
  std::size_t grid = 0;  // 0 when boxes are absent
  std::map<std::string, ImageAnnotation> images;
  std::map<std::string, std::string> synonyms;  // word or phrase -> label

  static AnnotationSet from_json(const nlohmann::json& j);
  static AnnotationSet load(const std::string& path);
  nlohmann::json to_json() const;
  void validate() const;

  const ImageAnnotation& image(const std::string& id) const;
  bool has_boxes() const;
  // Label for a single word or multi-word phrase, via the synonym map or an
  // exact label match.
  std::optional<std::string> canonical(std::string_view phrase) const;
  BinaryMask box_mask(const GridBox& box) const;
};

// Lower-cases and splits on whitespace; leading and trailing punctuation
// becomes separate tokens.
std::vector<std::string> caption_words(std::string_view caption);

// Canonical object labels mentioned in `words`, first-mention order, each once.
std::vector<std::string> object_mentions(std::span<const std::string> words, const AnnotationSet& ann,
                                         const PosLexicon& pos);

struct CaptionChair {
  std::string image_id;
  std::vector<std::string> mentioned;
  std::vector<std::string> hallucinated;
};

struct ChairResult {
  double c_s = 0.0;
  double c_i = 0.0;
  std::size_t captions = 0;
  std::size_t hallucinating_captions = 0;
  std::size_t mentions = 0;
  std::size_t hallucinated_mentions = 0;
  std::vector<CaptionChair> per_caption;
};

struct CaptionInput {
  std::string image_id;
  std::string caption;
};

ChairResult chair(std::span<const CaptionInput> captions, const AnnotationSet& ann,
                  const PosLexicon& pos = PosLexicon::defaults());

// |mentioned ∩ objects| / |objects|.
double cover(const std::string& caption, const std::string& image_id, const AnnotationSet& ann,
             const PosLexicon& pos = PosLexicon::defaults());

// Entropy in nats of `row` renormalized to sum 1.
double attention_entropy(std::span<const double> row);

struct ProximityCount {
  std::size_t hits = 0;   // hallucinated tokens within the window of a sink
  std::size_t total = 0;  // hallucinated tokens
  std::size_t labeled = 0;
};

// Distance is measured to the most recent sink strictly before the token.
ProximityCount count_proximity(std::span<const std::string> tokens, std::span<const std::optional<bool>> hallucinated,
                               const SinkLexicon& sinks, std::size_t window = 5);
// hits / total; throws NoDataError without any hallucination-labeled token.
double sink_proximity(std::span<const std::string> tokens, std::span<const std::optional<bool>> hallucinated,
                      const SinkLexicon& sinks, std::size_t window = 5);

struct LayerAnalysisRow {
  std::size_t layer = 0;
  double mean_iou = 0.0;
  double mean_entropy = 0.0;
  std::size_t n_samples = 0;
};

struct LayerSample {
  std::size_t step = 0;
  std::string label;
  BinaryMask gt;
};

// Steps whose emitted noun canonicalizes to a boxed label of `image_id`.
// `unmatched` counts object mentions without a box.
std::vector<LayerSample> layer_samples(std::span<const std::string> tokens, const std::string& image_id,
                                       const AnnotationSet& ann, const PosLexicon& pos, std::size_t* unmatched);

class LayerAnalysis {
 public:
  LayerAnalysis(std::size_t layers, double rel_threshold);

  // Head-averaged post-modulation image slice at sample.step, per layer.
  void add(const DecodeState& state, const LayerSample& sample);
  void skip(std::size_t n = 1) { skipped_ += n; }

  std::vector<LayerAnalysisRow> rows() const;
  std::size_t samples() const { return samples_; }
  std::size_t skipped() const { return skipped_; }

 private:
  double rel_threshold_;
  std::vector<double> iou_sum_, entropy_sum_;
  std::size_t samples_ = 0;
  std::size_t skipped_ = 0;
};

// Head-averaged image slice of `step` for one layer, as a grid map.
SpatialMap layer_attention_map(const DecodeState& state, std::size_t step, std::size_t layer, std::size_t grid);

std::string layer_analysis_csv(std::span<const LayerAnalysisRow> rows);

}  // namespace sage
