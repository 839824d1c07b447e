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

#include "sage/scenario.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "sage/error.hpp"
#include "sage/rng.hpp"

namespace sage {

namespace fs = std::filesystem;

namespace {

constexpr std::array<const char*, 4> kShapes = {"circle", "square", "triangle", "rectangle"};
constexpr std::array<const char*, 4> kColors = {"red", "green", "blue", "yellow"};
constexpr double kBackground = 0.5;
constexpr double kSinkMass = 0.6;
constexpr double kNounMass = 0.8;

std::array<double, 3> rgb(const std::string& color) {
  if (color == "red") return {0.9, 0.1, 0.1};
  if (color == "green") return {0.1, 0.8, 0.2};
  if (color == "blue") return {0.1, 0.2, 0.9};
  return {0.9, 0.9, 0.1};
}

GridBox quadrant(std::size_t grid, std::size_t q) {
  const std::size_t h = grid / 2;
  const std::size_t r0 = (q / 2) * h, c0 = (q % 2) * h;
  return {r0, c0, r0 + h, c0 + h};
}

std::vector<double> box_row(std::size_t grid, const GridBox& b, double mass) {
  std::vector<double> row(grid * grid, 0.0);
  const double per = mass / static_cast<double>((b[2] - b[0]) * (b[3] - b[1]));
  for (std::size_t r = b[0]; r < b[2]; ++r)
    for (std::size_t c = b[1]; c < b[3]; ++c) row[r * grid + c] = per;
  return row;
}

// True when pixel (y, x) of a box spanning [top, top+h) x [left, left+w) is
// covered by `shape`.
bool covers(const std::string& shape, double y, double x, double h, double w) {
  const double cy = h / 2.0, cx = w / 2.0;
  if (shape == "circle") {
    const double r = 0.4 * std::min(h, w);
    return (y - cy) * (y - cy) + (x - cx) * (x - cx) <= r * r;
  }
  if (shape == "square") return y >= 0.15 * h && y < 0.85 * h && x >= 0.15 * w && x < 0.85 * w;
  if (shape == "triangle") {
    const double top = 0.1 * h, bottom = 0.9 * h;
    if (y < top || y >= bottom) return false;
    const double half = 0.4 * w * (y - top) / (bottom - top);
    return std::abs(x - cx) <= half;
  }
  return y >= 0.3 * h && y < 0.7 * h && x >= 0.05 * w && x < 0.95 * w;  // rectangle
}

void ensure_dir(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec || !fs::is_directory(p)) throw IoError("cannot create directory " + p.string());
}

std::string dump(const nlohmann::json& j) { return j.dump(2) + "\n"; }

}  // namespace

std::string_view to_string(CorpusProfile p) { return p == CorpusProfile::kStandard ? "standard" : "adversarial"; }

CorpusProfile parse_corpus_profile(const std::string& s) {
  if (s == "standard") return CorpusProfile::kStandard;
  if (s == "adversarial") return CorpusProfile::kAdversarial;
  throw ArgumentError("profile must be standard or adversarial, got '" + s + "'");
}

std::string_view to_string(ScriptTemplate t) {
  switch (t) {
    case ScriptTemplate::kGrounded:
      return "grounded";
    case ScriptTemplate::kEarlyMisalign:
      return "early-misalign";
    case ScriptTemplate::kLateMisalign:
      return "late-misalign";
    case ScriptTemplate::kDoubleSink:
      return "double-sink";
  }
  return "grounded";
}

// ---- CorpusSpec ------------------------------------------------------------

void CorpusSpec::validate() const {
  if (grid < 2 || grid % 2 != 0) throw ArgumentError("corpus grid must be even and >= 2");
  if (patch == 0) throw ArgumentError("patch size must be positive");
  if (scripted && *scripted > size) throw ArgumentError("more scripted scenes than corpus entries");
}

nlohmann::json CorpusSpec::to_json() const {
  nlohmann::json j;
  j["format"] = "sage-corpus/1";
  j["size"] = size;
  j["seed"] = seed;
  j["grid"] = grid;
  j["patch"] = patch;
  j["profile"] = std::string(to_string(profile));
  j["scripted"] = scripted.value_or(size);
  return j;
}

CorpusSpec CorpusSpec::from_json(const nlohmann::json& j) {
  CorpusSpec s;
  try {
    if (j.value("format", std::string{}) != "sage-corpus/1") throw ParseError("corpus.json: unknown format");
    s.size = j.at("size").get<std::size_t>();
    s.seed = j.at("seed").get<std::uint64_t>();
    s.grid = j.at("grid").get<std::size_t>();
    s.patch = j.at("patch").get<std::size_t>();
    s.profile = parse_corpus_profile(j.at("profile").get<std::string>());
    s.scripted = j.at("scripted").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("corpus.json: ") + e.what());
  }
  s.validate();
  return s;
}

// ---- scenes ----------------------------------------------------------------

std::map<std::string, std::string> corpus_synonyms() {
  return {{"ball", "circle"}, {"circle", "circle"}, {"square", "square"}, {"triangle", "triangle"},
          {"rectangle", "rectangle"}};
}

Image render_scene(std::size_t grid, std::size_t patch, const std::vector<SceneObject>& objects) {
  Image img;
  img.height = img.width = grid * patch;
  img.channels = 3;
  img.pixels.assign(img.height * img.width * img.channels, kBackground);
  for (const auto& o : objects) {
    const auto color = rgb(o.color);
    const std::size_t top = o.box[0] * patch, left = o.box[1] * patch;
    const double h = static_cast<double>((o.box[2] - o.box[0]) * patch);
    const double w = static_cast<double>((o.box[3] - o.box[1]) * patch);
    for (std::size_t y = top; y < o.box[2] * patch; ++y) {
      for (std::size_t x = left; x < o.box[3] * patch; ++x) {
        if (!covers(o.shape, static_cast<double>(y - top) + 0.5, static_cast<double>(x - left) + 0.5, h, w)) continue;
        for (std::size_t c = 0; c < 3; ++c) img.pixels[(y * img.width + x) * 3 + c] = color[c];
      }
    }
  }
  return img;
}

OracleScript build_script(const Scenario& scene, ScriptTemplate t, std::size_t grid) {
  if (scene.objects.size() < 2) throw ArgumentError("scripted scenes need two objects");
  const SceneObject& o1 = scene.objects[0];
  const SceneObject& o2 = scene.objects[1];

  std::vector<std::string> present;
  for (const auto& o : scene.objects) present.push_back(o.shape);
  std::string halluc;
  for (const char* s : kShapes) {
    if (std::find(present.begin(), present.end(), s) == present.end()) {
      halluc = s;
      break;
    }
  }
  GridBox empty{};
  for (std::size_t q = 0; q < 4; ++q) {
    const GridBox b = quadrant(grid, q);
    if (std::none_of(scene.objects.begin(), scene.objects.end(), [&](const SceneObject& o) { return o.box == b; })) {
      empty = b;
      break;
    }
  }

  OracleScript s;
  s.image_id = scene.id;
  s.grid = grid;
  s.layers = kOracleLayers;
  s.heads = kOracleHeads;

  auto sink_at = [&](std::size_t step, const GridBox& box) {
    for (std::size_t l = 0; l < kOracleLayers; ++l)
      for (std::size_t h = 0; h < kOracleHeads; ++h) s.attention[step][{l, h}] = box_row(grid, box, kSinkMass);
  };
  auto noun_at = [&](std::size_t step, const GridBox& box) {
    for (std::size_t l = 1; l + 1 < kOracleLayers; ++l)
      for (std::size_t h = 0; h < kOracleHeads; ++h) s.attention[step][{l, h}] = box_row(grid, box, kNounMass);
  };

  switch (t) {
    case ScriptTemplate::kGrounded:
      s.tokens = {"a", o1.color, o1.shape, "and", "a", o2.color, o2.shape, "."};
      noun_at(2, o1.box);
      sink_at(3, o1.box);
      noun_at(6, o2.box);
      sink_at(7, o2.box);
      break;
    case ScriptTemplate::kEarlyMisalign:
      s.tokens = {"a", o1.color, o1.shape, ",", "a", halluc, "and", "a", o2.color, o2.shape, "."};
      noun_at(2, o1.box);
      sink_at(3, empty);
      noun_at(9, o2.box);
      sink_at(10, o2.box);
      s.reroutes[5] = {OracleReroute::When::kDiffuse, o2.shape, false};
      break;
    case ScriptTemplate::kLateMisalign:
      s.tokens = {"a", o1.color, o1.shape, ",", "a", o2.color, o2.shape, "near", "the", "center", ",", "a", halluc, "."};
      noun_at(2, o1.box);
      sink_at(3, o1.box);
      noun_at(6, o2.box);
      sink_at(10, empty);
      s.reroutes[12] = {OracleReroute::When::kDiffuse, o1.shape, false};
      break;
    case ScriptTemplate::kDoubleSink:
      s.tokens = {"a", o1.color, o1.shape, ".", ".", "the", "image", "shows", "a", o2.color, o2.shape, "."};
      noun_at(2, o1.box);
      sink_at(3, o1.box);
      noun_at(10, o2.box);
      sink_at(11, o2.box);
      break;
  }
  s.halluc_labels.assign(s.tokens.size(), false);
  for (std::size_t i = 0; i < s.tokens.size(); ++i) {
    if (s.tokens[i] == halluc) s.halluc_labels[i] = true;
  }
  for (const auto& o : scene.objects) {
    const auto map = box_row(grid, o.box, static_cast<double>((o.box[2] - o.box[0]) * (o.box[3] - o.box[1])));
    s.gradcam[o.shape] = map;
    s.gradcam[o.color + " " + o.shape] = map;
  }
  s.gt_objects = present;
  std::sort(s.gt_objects.begin(), s.gt_objects.end());
  return s;
}

std::vector<Scenario> generate_corpus(const CorpusSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  const std::size_t scripted = spec.scripted.value_or(spec.size);
  std::vector<Scenario> out;
  for (std::size_t i = 0; i < spec.size; ++i) {
    Scenario sc;
    char id[32];
    std::snprintf(id, sizeof id, "img%04zu", i);
    sc.id = id;
    const bool with_script = i < scripted;
    const std::size_t n = with_script ? 2 : 1 + rng.below(3);

    std::vector<std::size_t> quads = {0, 1, 2, 3};
    std::vector<std::size_t> shapes = {0, 1, 2, 3};
    for (std::size_t k = 0; k < n; ++k) {
      const std::size_t qi = k + rng.below(4 - k);
      std::swap(quads[k], quads[qi]);
      const std::size_t si = k + rng.below(4 - k);
      std::swap(shapes[k], shapes[si]);
      sc.objects.push_back({kShapes[shapes[k]], kColors[rng.below(kColors.size())], quadrant(spec.grid, quads[k])});
    }
    sc.image = render_scene(spec.grid, spec.patch, sc.objects);
    for (const auto& o : sc.objects) {
      sc.annotation.objects.push_back(o.shape);
      sc.annotation.boxes[o.shape] = o.box;
    }
    std::sort(sc.annotation.objects.begin(), sc.annotation.objects.end());
    if (with_script) {
      ScriptTemplate t;
      if (spec.profile == CorpusProfile::kAdversarial) {
        t = i % 2 == 0 ? ScriptTemplate::kEarlyMisalign : ScriptTemplate::kLateMisalign;
      } else {
        t = static_cast<ScriptTemplate>(rng.below(4));
      }
      sc.script_template = t;
      sc.script = build_script(sc, t, spec.grid);
    }
    out.push_back(std::move(sc));
  }
  return out;
}

// ---- corpus on disk --------------------------------------------------------

void write_f64(const std::string& path, const std::vector<double>& values) {
  static_assert(std::endian::native == std::endian::little, "float64 files are little-endian");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(double)));
  if (!out) throw IoError("short write to " + path);
}

std::vector<double> read_f64(const std::string& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw IoError("cannot read " + path);
  const auto bytes = static_cast<std::size_t>(in.tellg());
  if (bytes % sizeof(double) != 0) throw ParseError(path + ": size is not a multiple of 8 bytes");
  std::vector<double> values(bytes / sizeof(double));
  in.seekg(0);
  in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(bytes));
  if (!in) throw IoError("short read from " + path);
  return values;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out << text;
  if (!out) throw IoError("short write to " + path);
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_corpus(const std::string& dir, const CorpusSpec& spec, const std::vector<Scenario>& scenes) {
  const fs::path root(dir);
  ensure_dir(root);
  ensure_dir(root / "images");
  ensure_dir(root / "scripts");

  nlohmann::json corpus = spec.to_json();
  corpus["ids"] = nlohmann::json::array();
  for (const auto& sc : scenes) corpus["ids"].push_back(sc.id);
  write_text((root / "corpus.json").string(), dump(corpus));

  AnnotationSet ann;
  ann.grid = spec.grid;
  ann.synonyms = corpus_synonyms();
  for (const auto& sc : scenes) ann.images[sc.id] = sc.annotation;
  write_text((root / "annotations.json").string(), dump(ann.to_json()));

  nlohmann::json manifest;
  manifest["format"] = "f64-hwc-le";
  manifest["height"] = spec.grid * spec.patch;
  manifest["width"] = spec.grid * spec.patch;
  manifest["channels"] = 3;
  manifest["images"] = nlohmann::json::array();
  for (const auto& sc : scenes) {
    const std::string file = sc.id + ".f64";
    write_f64((root / "images" / file).string(), sc.image.pixels);
    nlohmann::json entry{{"id", sc.id}, {"file", file}};
    if (sc.script_template) entry["template"] = std::string(to_string(*sc.script_template));
    manifest["images"].push_back(entry);
    if (sc.script) write_text((root / "scripts" / (sc.id + ".json")).string(), dump(sc.script->to_json()));
  }
  write_text((root / "images" / "manifest.json").string(), dump(manifest));
}

Corpus Corpus::open(const std::string& dir) {
  Corpus c;
  c.dir_ = dir;
  const fs::path root(dir);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text((root / "corpus.json").string()));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("corpus.json: " + std::string(e.what()));
  }
  c.spec_ = CorpusSpec::from_json(j);
  c.ids_ = j.value("ids", std::vector<std::string>{});
  c.annotations_ = AnnotationSet::load((root / "annotations.json").string());
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(read_text((root / "images" / "manifest.json").string()));
    c.height_ = m.at("height").get<std::size_t>();
    c.width_ = m.at("width").get<std::size_t>();
    c.channels_ = m.at("channels").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("images/manifest.json: " + std::string(e.what()));
  }
  return c;
}

Image Corpus::load_image(const std::string& id) const {
  Image img;
  img.height = height_;
  img.width = width_;
  img.channels = channels_;
  img.pixels = read_f64((fs::path(dir_) / "images" / (id + ".f64")).string());
  if (img.pixels.size() != height_ * width_ * channels_) throw ParseError("image " + id + " has the wrong size");
  return img;
}

std::optional<std::string> Corpus::script_path(const std::string& id) const {
  const fs::path p = fs::path(dir_) / "scripts" / (id + ".json");
  if (!fs::exists(p)) return std::nullopt;
  return p.string();
}

}  // namespace sage
