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

// Seeded synthetic scenes: colored shapes in patch-grid quadrants, their
// rendered pixels, annotations and oracle scripts, and the on-disk corpus
// layout shared by every command.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "sage/metrics.hpp"
#include "sage/model.hpp"
#include "sage/oracle_vlm.hpp"

namespace sage {

enum class CorpusProfile { kStandard, kAdversarial };

std::string_view to_string(CorpusProfile p);
CorpusProfile parse_corpus_profile(const std::string& s);

struct SceneObject {
  std::string shape;
  std::string color;
  GridBox box;
};

// Caption templates used for scripted scenes.
enum class ScriptTemplate {
  kGrounded,       // every sink aligned, no hallucination
  kEarlyMisalign,  // misaligned first sink, hallucination two steps later
  kLateMisalign,   // aligned first sink, misaligned sink at step 10, hallucination after it
  kDoubleSink,     // consecutive sinks leave an empty segment
};

std::string_view to_string(ScriptTemplate t);

struct Scenario {
  std::string id;
  std::vector<SceneObject> objects;
  Image image;
  ImageAnnotation annotation;
  std::optional<ScriptTemplate> script_template;
  std::optional<OracleScript> script;
};

struct CorpusSpec {
  std::size_t size = 20;
  std::uint64_t seed = 0;
  std::size_t grid = 4;   // patch grid side, even
  std::size_t patch = 8;  // pixels per patch side
  CorpusProfile profile = CorpusProfile::kStandard;
  std::optional<std::size_t> scripted;  // how many scenes get scripts; all when unset

  void validate() const;
  nlohmann::json to_json() const;
  static CorpusSpec from_json(const nlohmann::json& j);
};

// Oracle geometry for generated scripts.
inline constexpr std::size_t kOracleLayers = 4;
inline constexpr std::size_t kOracleHeads = 2;

Image render_scene(std::size_t grid, std::size_t patch, const std::vector<SceneObject>& objects);
OracleScript build_script(const Scenario& scene, ScriptTemplate t, std::size_t grid);
std::vector<Scenario> generate_corpus(const CorpusSpec& spec);

// Synonyms shipped with every generated corpus.
std::map<std::string, std::string> corpus_synonyms();

// Writes corpus.json, annotations.json, images/manifest.json + images/<id>.f64
// and scripts/<id>.json under `dir`.
void write_corpus(const std::string& dir, const CorpusSpec& spec, const std::vector<Scenario>& scenes);

class Corpus {
 public:
  static Corpus open(const std::string& dir);

  const std::string& dir() const { return dir_; }
  const CorpusSpec& spec() const { return spec_; }
  const AnnotationSet& annotations() const { return annotations_; }
  const std::vector<std::string>& ids() const { return ids_; }

  Image load_image(const std::string& id) const;
  std::optional<std::string> script_path(const std::string& id) const;

 private:
  std::string dir_;
  CorpusSpec spec_;
  AnnotationSet annotations_;
  std::vector<std::string> ids_;
  std::size_t height_ = 0, width_ = 0, channels_ = 0;
};

// Raw little-endian float64 I/O.
void write_f64(const std::string& path, const std::vector<double>& values);
std::vector<double> read_f64(const std::string& path);
void write_text(const std::string& path, const std::string& text);
std::string read_text(const std::string& path);

}  // namespace sage
