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

#include "sage/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

#include "sage/error.hpp"

namespace sage {

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

bool is_word_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '\'' || c == '_'; }

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

// ---- AnnotationSet ---------------------------------------------------------

AnnotationSet AnnotationSet::from_json(const nlohmann::json& j) {
  AnnotationSet ann;
  try {
    ann.grid = j.value("grid", std::size_t{0});
    for (const auto& [id, entry] : j.at("images").items()) {
      ImageAnnotation img;
      for (const auto& o : entry.value("objects", std::vector<std::string>{})) img.objects.push_back(lower(o));
      if (entry.contains("boxes")) {
        for (const auto& [label, box] : entry.at("boxes").items()) {
          const auto v = box.get<std::vector<std::size_t>>();
          if (v.size() != 4) throw ParseError("box for '" + label + "' in image '" + id + "' needs 4 coordinates");
          img.boxes[lower(label)] = {v[0], v[1], v[2], v[3]};
        }
      }
      ann.images[id] = std::move(img);
    }
    if (j.contains("synonyms")) {
      for (const auto& [word, label] : j.at("synonyms").items()) ann.synonyms[lower(word)] = lower(label.get<std::string>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("annotations: ") + e.what());
  }
  ann.validate();
  return ann;
}

AnnotationSet AnnotationSet::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read annotations " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
  return from_json(j);
}

nlohmann::json AnnotationSet::to_json() const {
  nlohmann::json j;
  if (grid) j["grid"] = grid;
  nlohmann::json imgs = nlohmann::json::object();
  for (const auto& [id, img] : images) {
    nlohmann::json e;
    e["objects"] = img.objects;
    nlohmann::json boxes = nlohmann::json::object();
    for (const auto& [label, b] : img.boxes) boxes[label] = b;
    e["boxes"] = boxes;
    imgs[id] = e;
  }
  j["images"] = imgs;
  j["synonyms"] = synonyms;
  return j;
}

void AnnotationSet::validate() const {
  for (const auto& [id, img] : images) {
    std::set<std::string> seen;
    for (const auto& o : img.objects) {
      if (!seen.insert(o).second) throw ParseError("image '" + id + "' lists label '" + o + "' twice");
    }
    for (const auto& [label, b] : img.boxes) {
      if (!seen.count(label)) throw ParseError("image '" + id + "' has a box for unlisted label '" + label + "'");
      if (b[0] >= b[2] || b[1] >= b[3]) throw ParseError("image '" + id + "' has an empty box for '" + label + "'");
      if (grid == 0 || b[2] > grid || b[3] > grid) {
        throw ParseError("box for '" + label + "' in image '" + id + "' lies outside the " + std::to_string(grid) +
                         "x" + std::to_string(grid) + " grid");
      }
    }
  }
}

const ImageAnnotation& AnnotationSet::image(const std::string& id) const {
  auto it = images.find(id);
  if (it == images.end()) throw ArgumentError("no annotation for image '" + id + "'");
  return it->second;
}

bool AnnotationSet::has_boxes() const {
  return std::any_of(images.begin(), images.end(), [](const auto& kv) { return !kv.second.boxes.empty(); });
}

std::optional<std::string> AnnotationSet::canonical(std::string_view phrase) const {
  const std::string key = lower(phrase);
  if (auto it = synonyms.find(key); it != synonyms.end()) return it->second;
  for (const auto& [id, img] : images) {
    if (std::find(img.objects.begin(), img.objects.end(), key) != img.objects.end()) return key;
  }
  for (const auto& [word, label] : synonyms) {
    if (label == key) return key;
  }
  return std::nullopt;
}

BinaryMask AnnotationSet::box_mask(const GridBox& box) const { return BinaryMask::box(grid, box[0], box[1], box[2], box[3]); }

// ---- mentions and CHAIR ----------------------------------------------------

std::vector<std::string> caption_words(std::string_view caption) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < caption.size()) {
    while (i < caption.size() && std::isspace(static_cast<unsigned char>(caption[i]))) ++i;
    std::size_t j = i;
    while (j < caption.size() && !std::isspace(static_cast<unsigned char>(caption[j]))) ++j;
    if (j == i) break;
    std::string_view piece = caption.substr(i, j - i);
    std::size_t a = 0, b = piece.size();
    while (a < b && !is_word_char(piece[a])) ++a;
    while (b > a && !is_word_char(piece[b - 1])) --b;
    if (a > 0) out.push_back(std::string(piece.substr(0, a)));
    if (b > a) out.push_back(lower(piece.substr(a, b - a)));
    if (b < piece.size()) out.push_back(std::string(piece.substr(b)));
    i = j;
  }
  return out;
}

std::vector<std::string> object_mentions(std::span<const std::string> words, const AnnotationSet& ann,
                                         const PosLexicon& pos) {
  std::vector<std::string> out;
  std::vector<std::string> lowered;
  lowered.reserve(words.size());
  for (const auto& w : words) lowered.push_back(lower(w));
  for (const auto& c : extract_concepts(lowered, 0, pos)) {
    if (c.kind == ConceptKind::kAdjective) continue;
    // Greedy longest match left to right inside the chunk.
    std::size_t i = c.span.begin;
    while (i < c.span.end) {
      std::size_t matched = 0;
      std::optional<std::string> label;
      for (std::size_t e = c.span.end; e > i; --e) {
        std::string phrase;
        for (std::size_t k = i; k < e; ++k) phrase += (k > i ? " " : "") + lowered[k];
        if ((label = ann.canonical(phrase))) {
          matched = e - i;
          break;
        }
      }
      if (label) {
        if (std::find(out.begin(), out.end(), *label) == out.end()) out.push_back(*label);
        i += matched;
      } else {
        ++i;
      }
    }
  }
  return out;
}

ChairResult chair(std::span<const CaptionInput> captions, const AnnotationSet& ann, const PosLexicon& pos) {
  ChairResult r;
  for (const auto& cap : captions) {
    const ImageAnnotation& img = ann.image(cap.image_id);
    CaptionChair row;
    row.image_id = cap.image_id;
    row.mentioned = object_mentions(caption_words(cap.caption), ann, pos);
    for (const auto& m : row.mentioned) {
      if (std::find(img.objects.begin(), img.objects.end(), m) == img.objects.end()) row.hallucinated.push_back(m);
    }
    ++r.captions;
    r.mentions += row.mentioned.size();
    r.hallucinated_mentions += row.hallucinated.size();
    if (!row.hallucinated.empty()) ++r.hallucinating_captions;
    r.per_caption.push_back(std::move(row));
  }
  r.c_s = r.captions ? static_cast<double>(r.hallucinating_captions) / static_cast<double>(r.captions) : 0.0;
  r.c_i = r.mentions ? static_cast<double>(r.hallucinated_mentions) / static_cast<double>(r.mentions) : 0.0;
  return r;
}

double cover(const std::string& caption, const std::string& image_id, const AnnotationSet& ann, const PosLexicon& pos) {
  const ImageAnnotation& img = ann.image(image_id);
  if (img.objects.empty()) throw ArgumentError("cover is undefined for image '" + image_id + "' without objects");
  const auto mentioned = object_mentions(caption_words(caption), ann, pos);
  std::size_t hit = 0;
  for (const auto& o : img.objects) {
    if (std::find(mentioned.begin(), mentioned.end(), o) != mentioned.end()) ++hit;
  }
  return static_cast<double>(hit) / static_cast<double>(img.objects.size());
}

// ---- entropy and proximity -------------------------------------------------

double attention_entropy(std::span<const double> row) {
  double total = 0.0;
  for (double v : row) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw ArgumentError("attention_entropy: entries must be finite and >= 0");
    total += v;
  }
  if (total <= 0.0) throw ArgumentError("attention_entropy: row has no mass");
  double h = 0.0;
  for (double v : row) {
    if (v <= 0.0) continue;
    const double p = v / total;
    h -= p * std::log(p);
  }
  return std::max(h, 0.0);
}

ProximityCount count_proximity(std::span<const std::string> tokens, std::span<const std::optional<bool>> hallucinated,
                               const SinkLexicon& sinks, std::size_t window) {
  if (tokens.size() != hallucinated.size()) throw DimensionError("token and label counts differ");
  ProximityCount c;
  std::optional<std::size_t> last_sink;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (hallucinated[i]) {
      ++c.labeled;
      if (*hallucinated[i]) {
        ++c.total;
        if (last_sink && i - *last_sink <= window) ++c.hits;
      }
    }
    if (sinks.contains(tokens[i])) last_sink = i;
  }
  return c;
}

double sink_proximity(std::span<const std::string> tokens, std::span<const std::optional<bool>> hallucinated,
                      const SinkLexicon& sinks, std::size_t window) {
  const ProximityCount c = count_proximity(tokens, hallucinated, sinks, window);
  if (c.total == 0) throw NoDataError("sink_proximity: trace has no hallucination-labeled tokens");
  return static_cast<double>(c.hits) / static_cast<double>(c.total);
}

// ---- layer analysis --------------------------------------------------------

std::vector<LayerSample> layer_samples(std::span<const std::string> tokens, const std::string& image_id,
                                       const AnnotationSet& ann, const PosLexicon& pos, std::size_t* unmatched) {
  const ImageAnnotation& img = ann.image(image_id);
  std::vector<LayerSample> out;
  std::size_t missed = 0;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (pos.tag(tokens[i]) != PosTag::kNoun) continue;
    const auto label = ann.canonical(tokens[i]);
    if (!label) continue;
    auto it = img.boxes.find(*label);
    if (it == img.boxes.end()) {
      ++missed;
      continue;
    }
    out.push_back({i, *label, ann.box_mask(it->second)});
  }
  if (unmatched) *unmatched = missed;
  return out;
}

SpatialMap layer_attention_map(const DecodeState& state, std::size_t step, std::size_t layer, std::size_t grid) {
  if (step >= state.attention_log.size()) throw StateError("no attention logged for step " + std::to_string(step));
  const auto& rows = state.attention_log[step].post;
  if (layer >= rows.size() || rows[layer].empty()) throw StateError("layer " + std::to_string(layer) + " not logged");
  const std::size_t cells = grid * grid;
  if (cells != state.image_tokens) throw DimensionError("grid does not match the image-token count");
  std::vector<double> avg(cells, 0.0);
  for (const auto& row : rows[layer]) {
    for (std::size_t i = 0; i < cells; ++i) avg[i] += row[i];
  }
  for (double& v : avg) v /= static_cast<double>(rows[layer].size());
  return SpatialMap::normalized(grid, std::move(avg), MapProvenance::kAttention);
}

LayerAnalysis::LayerAnalysis(std::size_t layers, double rel_threshold)
    : rel_threshold_(rel_threshold), iou_sum_(layers, 0.0), entropy_sum_(layers, 0.0) {
  if (layers == 0) throw ArgumentError("layer analysis needs at least one layer");
}

void LayerAnalysis::add(const DecodeState& state, const LayerSample& sample) {
  std::vector<double> ious(iou_sum_.size()), entropies(iou_sum_.size());
  for (std::size_t l = 0; l < iou_sum_.size(); ++l) {
    const SpatialMap map = layer_attention_map(state, sample.step, l, sample.gt.grid);
    ious[l] = iou(binarize(map, rel_threshold_), sample.gt);
    entropies[l] = attention_entropy(map.values);
  }
  for (std::size_t l = 0; l < iou_sum_.size(); ++l) {
    iou_sum_[l] += ious[l];
    entropy_sum_[l] += entropies[l];
  }
  ++samples_;
}

std::vector<LayerAnalysisRow> LayerAnalysis::rows() const {
  std::vector<LayerAnalysisRow> out;
  for (std::size_t l = 0; l < iou_sum_.size(); ++l) {
    LayerAnalysisRow r;
    r.layer = l;
    r.n_samples = samples_;
    if (samples_) {
      r.mean_iou = iou_sum_[l] / static_cast<double>(samples_);
      r.mean_entropy = entropy_sum_[l] / static_cast<double>(samples_);
    }
    out.push_back(r);
  }
  return out;
}

std::string layer_analysis_csv(std::span<const LayerAnalysisRow> rows) {
  std::string out = "layer,mean_iou,mean_entropy,n_samples\n";
  for (const auto& r : rows) {
    out += std::to_string(r.layer) + "," + fmt(r.mean_iou) + "," + fmt(r.mean_entropy) + "," +
           std::to_string(r.n_samples) + "\n";
  }
  return out;
}

}  // namespace sage
