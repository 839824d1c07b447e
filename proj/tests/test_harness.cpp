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

#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "sage/error.hpp"
#include "sage/harness.hpp"
#include "test_support.hpp"

using namespace sage;
namespace fs = std::filesystem;

namespace {

fs::path make_corpus(const std::string& name, CorpusSpec spec) {
  const auto dir = testing::scratch(name);
  GenerateOptions g;
  g.spec = spec;
  g.out_dir = dir.string();
  REQUIRE(cmd_generate(g).exit_code == 0);
  return dir;
}

CommandResult decode_into(const fs::path& corpus, const fs::path& out, DecodeMode mode, SageConfig cfg = {},
                          std::size_t jobs = 1) {
  DecodeOptions o;
  o.corpus_dir = corpus.string();
  o.out_dir = out.string();
  o.mode = mode;
  o.config = cfg;
  o.jobs = jobs;
  return cmd_decode(o);
}

std::vector<nlohmann::json> trace_lines(const fs::path& file) {
  std::vector<nlohmann::json> out;
  std::istringstream in(read_text(file.string()));
  std::string line;
  while (std::getline(in, line)) out.push_back(nlohmann::json::parse(line));
  return out;
}

std::vector<std::string> token_texts(const fs::path& file) {
  std::vector<std::string> out;
  for (const auto& j : trace_lines(file))
    if (j["kind"] == "token") out.push_back(j["token"].get<std::string>());
  return out;
}

}  // namespace

TEST_SUITE("harness") {

TEST_CASE("size 0 gives a valid empty corpus") {
  CorpusSpec spec;
  spec.size = 0;
  const auto dir = make_corpus("empty", spec);
  for (const char* f : {"corpus.json", "annotations.json", "images/manifest.json"}) CHECK(fs::exists(dir / f));
  const auto c = Corpus::open(dir.string());
  CHECK(c.ids().empty());
  CHECK(c.annotations().images.empty());
}

TEST_CASE("size 50: every scene annotated, every box inside the grid") {
  CorpusSpec spec;
  spec.size = 50;
  spec.seed = 3;
  const auto dir = make_corpus("fifty", spec);
  const auto c = Corpus::open(dir.string());
  CHECK(c.ids().size() == 50);
  CHECK(c.annotations().images.size() == 50);
  CHECK_NOTHROW(c.annotations().validate());
  for (const auto& [id, img] : c.annotations().images) {
    CHECK(!img.objects.empty());
    for (const auto& [label, box] : img.boxes) {
      CHECK(box[2] <= spec.grid);
      CHECK(box[3] <= spec.grid);
      CHECK(box[0] < box[2]);
      CHECK(box[1] < box[3]);
    }
    const auto pixels = c.load_image(id);
    CHECK(pixels.pixels.size() == spec.grid * spec.patch * spec.grid * spec.patch * 3);
  }
}

TEST_CASE("generation is byte-identical for a seed") {
  CorpusSpec spec;
  spec.size = 12;
  spec.seed = 9;
  const auto a = make_corpus("gen_a", spec), b = make_corpus("gen_b", spec);
  CHECK(testing::tree_bytes(a) == testing::tree_bytes(b));
  spec.seed = 10;
  const auto c = make_corpus("gen_c", spec);
  CHECK(testing::tree_bytes(a) != testing::tree_bytes(c));
}

TEST_CASE("rendered objects agree with their boxes") {
  CorpusSpec spec;
  spec.size = 8;
  for (const auto& sc : generate_corpus(spec)) {
    for (const auto& o : sc.objects) {
      REQUIRE(sc.annotation.boxes.count(o.shape));
      CHECK(sc.annotation.boxes.at(o.shape) == o.box);
      // The box center pixel differs from the 0.5 background.
      const std::size_t r = (o.box[0] + o.box[2]) * spec.patch / 2, col = (o.box[1] + o.box[3]) * spec.patch / 2;
      const std::size_t w = spec.grid * spec.patch;
      bool differs = false;
      for (std::size_t ch = 0; ch < 3; ++ch) differs |= sc.image.pixels[(r * w + col) * 3 + ch] != 0.5;
      CHECK(differs);
    }
  }
}

TEST_CASE("oracle corpus traces equal the checked-in goldens") {
  CorpusSpec spec;  // 20 scenes, seed 0, all scripted
  const auto corpus = make_corpus("golden_corpus", spec);
  const auto out = testing::scratch("golden_run");
  REQUIRE(decode_into(corpus, out, DecodeMode::kSage).exit_code == 0);
  const auto bad = testing::golden_mismatches(out / "traces", SAGE_TEST_GOLDEN_DIR);
  INFO("mismatched: " << nlohmann::json(bad).dump());
  CHECK(bad.empty());
}

TEST_CASE("decode is deterministic across repeats and job counts") {
  CorpusSpec spec;
  spec.size = 10;
  const auto corpus = make_corpus("det_corpus", spec);
  const auto a = testing::scratch("det_a"), b = testing::scratch("det_b");
  REQUIRE(decode_into(corpus, a, DecodeMode::kSage, {}, 1).exit_code == 0);
  REQUIRE(decode_into(corpus, b, DecodeMode::kSage, {}, 3).exit_code == 0);
  CHECK(testing::tree_bytes(a / "traces") == testing::tree_bytes(b / "traces"));
  CHECK(read_text((a / "manifest.json").string()).size() > 0);
}

TEST_CASE("baseline and unit-scale SAGE emit the same tokens") {
  CorpusSpec spec;
  spec.size = 20;
  const auto corpus = make_corpus("unit_corpus", spec);
  const auto base = testing::scratch("unit_base"), unit = testing::scratch("unit_sage");
  REQUIRE(decode_into(corpus, base, DecodeMode::kBaseline).exit_code == 0);
  SageConfig cfg;
  cfg.scale_reinforce = 1.0;
  cfg.scale_diffuse = 1.0;
  REQUIRE(decode_into(corpus, unit, DecodeMode::kSage, cfg).exit_code == 0);
  const auto opened = Corpus::open(corpus.string());
  for (const auto& id : opened.ids()) {
    CHECK(token_texts(base / "traces" / (id + ".jsonl")) == token_texts(unit / "traces" / (id + ".jsonl")));
  }
}

TEST_CASE("periodic(10) grounding events land on multiples of 10") {
  CorpusSpec spec;
  spec.size = 8;
  const auto corpus = make_corpus("periodic_corpus", spec);
  const auto out = testing::scratch("periodic_run");
  SageConfig cfg;
  cfg.trigger = TriggerPolicy::parse("periodic:10");
  REQUIRE(decode_into(corpus, out, DecodeMode::kSage, cfg).exit_code == 0);
  std::size_t events = 0;
  const auto opened = Corpus::open(corpus.string());
  for (const auto& id : opened.ids()) {
    const auto lines = trace_lines(out / "traces" / (id + ".jsonl"));
    std::size_t tokens = 0;
    std::vector<std::size_t> steps;
    for (const auto& j : lines) {
      if (j["kind"] == "token") ++tokens;
      if (j["kind"] == "grounding") steps.push_back(j["step"].get<std::size_t>());
    }
    std::vector<std::size_t> expected;
    // The end marker is the last token and never triggers.
    for (std::size_t s = 10; s + 1 < tokens; s += 10) expected.push_back(s);
    CHECK(steps == expected);
    events += steps.size();
  }
  CHECK(events > 0);
}

TEST_CASE("report reproduces the hand count on the standard corpus") {
  CorpusSpec spec;
  spec.size = 20;
  const auto corpus = make_corpus("report_corpus", spec);
  const auto base = testing::scratch("report_base");
  REQUIRE(decode_into(corpus, base, DecodeMode::kBaseline).exit_code == 0);
  ReportOptions r;
  r.traces_dir = base.string();
  REQUIRE(cmd_report(r).exit_code == 0);

  // Unmodulated, the early and late templates keep their hallucinated shape:
  // three mentions with one hallucination. The other two templates mention
  // two grounded shapes.
  std::size_t halluc = 0, mentions = 0;
  for (const auto& sc : generate_corpus(spec)) {
    REQUIRE(sc.script_template);
    const bool bad = *sc.script_template == ScriptTemplate::kEarlyMisalign ||
                     *sc.script_template == ScriptTemplate::kLateMisalign;
    halluc += bad;
    mentions += bad ? 3 : 2;
  }
  const auto summary = nlohmann::json::parse(read_text((base / "summary.json").string()));
  CHECK(summary["captions"] == 20);
  CHECK(summary["chair_s"].get<double>() == static_cast<double>(halluc) / 20.0);
  CHECK(summary["chair_i"].get<double>() == static_cast<double>(halluc) / static_cast<double>(mentions));
  CHECK(summary["sink_proximity"]["hallucinated"] == halluc);
  CHECK(fs::exists(base / "report.csv"));
  CHECK(read_text((base / "report.csv").string()).rfind("image_id,tokens,mentions,hallucinated,chair_s,cover,", 0) == 0);
}

TEST_CASE("report exit codes: missing traces and empty sets") {
  CorpusSpec spec;
  spec.size = 4;
  const auto corpus = make_corpus("missing_corpus", spec);
  const auto out = testing::scratch("missing_run");
  REQUIRE(decode_into(corpus, out, DecodeMode::kSage).exit_code == 0);
  fs::remove(out / "traces" / "img0002.jsonl");
  ReportOptions r;
  r.traces_dir = out.string();
  const auto res = cmd_report(r);
  CHECK(res.exit_code == static_cast<int>(ErrorCode::kMissing));
  CHECK(res.message.find("img0002") != std::string::npos);

  const auto empty = testing::scratch("empty_traces");
  ReportOptions e;
  e.traces_dir = empty.string();
  e.annotations = (corpus / "annotations.json").string();
  e.out_dir = (empty / "out").string();
  // No manifest: every annotated image is expected, so all are missing.
  CHECK(cmd_report(e).exit_code == static_cast<int>(ErrorCode::kMissing));

  CorpusSpec none;
  none.size = 0;
  const auto empty_corpus = make_corpus("empty_report_corpus", none);
  const auto empty_run = testing::scratch("empty_report_run");
  REQUIRE(decode_into(empty_corpus, empty_run, DecodeMode::kSage).exit_code == 0);
  ReportOptions z;
  z.traces_dir = empty_run.string();
  CHECK(cmd_report(z).exit_code == static_cast<int>(ErrorCode::kNoData));
  const auto summary = nlohmann::json::parse(read_text((empty_run / "summary.json").string()));
  CHECK(summary["captions"] == 0);
}

TEST_CASE("manifest replay reproduces the trace directory") {
  CorpusSpec spec;
  spec.size = 6;
  const auto corpus = make_corpus("replay_corpus", spec);
  const auto a = testing::scratch("replay_a"), b = testing::scratch("replay_b");
  SageConfig cfg;
  cfg.tau = 0.3;
  cfg.scope = ModulationScope::kAtSinkOnly;
  REQUIRE(decode_into(corpus, a, DecodeMode::kSage, cfg).exit_code == 0);
  REQUIRE(cmd_decode_from_manifest((a / "manifest.json").string(), b.string()).exit_code == 0);
  CHECK(testing::tree_bytes(a / "traces") == testing::tree_bytes(b / "traces"));
  const auto m = nlohmann::json::parse(read_text((b / "manifest.json").string()));
  CHECK(m["effective_config"]["tau"] == 0.3);
}

TEST_CASE("wall timing partitions the added time") {
  CorpusSpec spec;
  spec.size = 4;
  const auto corpus = make_corpus("timing_corpus", spec);
  const auto out = testing::scratch("timing_run");
  SageConfig cfg;
  cfg.timing = TimingMode::kWall;
  REQUIRE(decode_into(corpus, out, DecodeMode::kSage, cfg).exit_code == 0);
  const auto t = nlohmann::json::parse(read_text((out / "manifest.json").string()))["timing"];
  REQUIRE(t.is_object());
  const std::int64_t parts = t["concept_extraction_ns"].get<std::int64_t>() + t["attention_iou_ns"].get<std::int64_t>() +
                             t["gradcam_ns"].get<std::int64_t>() + t["modulation_ns"].get<std::int64_t>() +
                             t["other_ns"].get<std::int64_t>();
  CHECK(parts == t["added_ns"].get<std::int64_t>());
  CHECK(t["added_ns"].get<std::int64_t>() == t["sage_decode_ns"].get<std::int64_t>() - t["baseline_decode_ns"].get<std::int64_t>());
}

TEST_CASE("oracle backend without scripts is rejected") {
  CorpusSpec spec;
  spec.size = 3;
  spec.scripted = 0;
  const auto corpus = make_corpus("unscripted", spec);
  CHECK_THROWS_AS(decode_into(corpus, testing::scratch("unscripted_run"), DecodeMode::kSage), ArgumentError);
}

TEST_CASE("toy backend decodes a corpus") {
  CorpusSpec spec;
  spec.size = 3;
  const auto corpus = make_corpus("toy_corpus", spec);
  const auto out = testing::scratch("toy_run");
  DecodeOptions o;
  o.corpus_dir = corpus.string();
  o.out_dir = out.string();
  o.backend = Backend::kToy;
  o.config.max_new_tokens = 12;
  REQUIRE(cmd_decode(o).exit_code == 0);
  CHECK(token_texts(out / "traces" / "img0000.jsonl").size() <= 12);
}

TEST_CASE("layer analysis: empty, boxless and scripted corpora") {
  CorpusSpec none;
  none.size = 0;
  const auto empty = make_corpus("layer_empty", none);
  LayerAnalysisOptions lo;
  lo.corpus_dir = empty.string();
  lo.out_csv = (empty / "layers.csv").string();
  lo.config.trigger = TriggerPolicy::parse("off");
  CHECK(cmd_layer_analysis(lo).exit_code == static_cast<int>(ErrorCode::kNoData));
  CHECK(read_text(lo.out_csv) == "layer,mean_iou,mean_entropy,n_samples\n");

  CorpusSpec spec;
  spec.size = 20;
  const auto corpus = make_corpus("layer_corpus", spec);
  lo.corpus_dir = corpus.string();
  lo.out_csv = (corpus / "layers.csv").string();
  REQUIRE(cmd_layer_analysis(lo).exit_code == 0);
  std::istringstream in(read_text(lo.out_csv));
  std::string line;
  std::getline(in, line);
  std::vector<double> ious, ents;
  while (std::getline(in, line)) {
    std::istringstream row(line);
    std::string cell;
    std::vector<std::string> cols;
    while (std::getline(row, cell, ',')) cols.push_back(cell);
    REQUIRE(cols.size() == 4);
    ious.push_back(std::stod(cols[1]));
    ents.push_back(std::stod(cols[2]));
  }
  REQUIRE(ious.size() == kOracleLayers);
  // Scripts put noun-step mass inside the box at layers 1 and 2 only.
  CHECK(ious[1] > ious[0]);
  CHECK(ious[2] > ious[3]);
  CHECK(ents[1] < ents[0]);
  CHECK(ents[2] < ents[3]);
  CHECK(std::abs(ents[0] - std::log(16.0)) <= 1e-6);

  auto j = nlohmann::json::parse(read_text((corpus / "annotations.json").string()));
  for (auto& [id, img] : j["images"].items()) img.erase("boxes");
  write_text((corpus / "annotations.json").string(), j.dump(2) + "\n");
  CHECK_THROWS_AS(cmd_layer_analysis(lo), ArgumentError);
}

TEST_CASE("output root comes from the environment") {
  ::setenv(kOutputRootEnv, "/tmp/sage-root", 1);
  CHECK(default_output_root() == "/tmp/sage-root");
  ::unsetenv(kOutputRootEnv);
  CHECK(default_output_root() == "sage-out");
}

TEST_CASE("mode presets") {
  const SageConfig base;
  CHECK(apply_mode(base, DecodeMode::kBaseline).trigger.kind == TriggerKind::kOff);
  CHECK(apply_mode(base, DecodeMode::kReinforceOnly).scale_diffuse == 1.0);
  CHECK(apply_mode(base, DecodeMode::kDiffuseOnly).scale_reinforce == 1.0);
  CHECK_THROWS_AS(parse_decode_mode("fast"), ArgumentError);
  CHECK_THROWS_AS(parse_backend("gpu"), ArgumentError);
}

}  // TEST_SUITE
