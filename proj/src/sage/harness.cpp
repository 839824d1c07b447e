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

#include "sage/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <mutex>
#include <thread>

#include "sage/error.hpp"
#include "sage/metrics.hpp"
#include "sage/oracle_vlm.hpp"

namespace sage {

namespace fs = std::filesystem;

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

void ensure_dir(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec || !fs::is_directory(p)) throw IoError("cannot create directory " + p.string());
}

nlohmann::json parse_file(const std::string& path) {
  try {
    return nlohmann::json::parse(read_text(path));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
}

// Runs fn(i) for i in [0, n) on up to `jobs` threads. The first failure, in
// index order, is rethrown after all workers finish.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t jobs, Fn fn) {
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t threads = std::max<std::size_t>(1, std::min(jobs, n));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

std::vector<std::string> decodable_ids(const Corpus& corpus, Backend backend) {
  if (backend == Backend::kToy) return corpus.ids();
  std::vector<std::string> ids;
  for (const auto& id : corpus.ids())
    if (corpus.script_path(id)) ids.push_back(id);
  if (ids.empty() && !corpus.ids().empty()) {
    throw ArgumentError("oracle backend needs scripts, but corpus " + corpus.dir() + " has none");
  }
  return ids;
}

DecodeRun decode_image(const VlmModel& model, const Image& image, const SageConfig& config) {
  const auto prompt = model.vocab().tokenize(config.prompt);
  return run_decode(model, image, prompt, config);
}

void write_maps(const fs::path& dir, const DecodeTrace& trace) {
  for (const auto& r : trace.reports) {
    if (!r.i1_map) continue;
    ensure_dir(dir);
    const std::string stem = "s" + std::to_string(r.step);
    write_text((dir / (stem + "_i1.pgm")).string(), to_pgm(*r.i1_map));
    write_text((dir / (stem + "_i1_mask.pgm")).string(), to_pgm(*r.i1_mask));
    if (r.i2_mask) write_text((dir / (stem + "_i2_mask.pgm")).string(), to_pgm(*r.i2_mask));
  }
}

}  // namespace

std::string default_output_root() {
  const char* env = std::getenv(kOutputRootEnv);
  return env && *env ? std::string(env) : std::string("sage-out");
}

std::string_view to_string(Backend b) { return b == Backend::kOracle ? "oracle" : "toy"; }

Backend parse_backend(const std::string& s) {
  if (s == "oracle") return Backend::kOracle;
  if (s == "toy") return Backend::kToy;
  throw ArgumentError("--backend must be oracle or toy, got '" + s + "'");
}

std::string_view to_string(DecodeMode m) {
  switch (m) {
    case DecodeMode::kSage:
      return "sage";
    case DecodeMode::kBaseline:
      return "baseline";
    case DecodeMode::kReinforceOnly:
      return "reinforce-only";
    case DecodeMode::kDiffuseOnly:
      return "diffuse-only";
  }
  return "sage";
}

DecodeMode parse_decode_mode(const std::string& s) {
  if (s == "sage") return DecodeMode::kSage;
  if (s == "baseline") return DecodeMode::kBaseline;
  if (s == "reinforce-only") return DecodeMode::kReinforceOnly;
  if (s == "diffuse-only") return DecodeMode::kDiffuseOnly;
  throw ArgumentError("--mode must be sage, baseline, reinforce-only or diffuse-only, got '" + s + "'");
}

SageConfig apply_mode(SageConfig config, DecodeMode mode) {
  switch (mode) {
    case DecodeMode::kSage:
      break;
    case DecodeMode::kBaseline:
      config.trigger = {TriggerKind::kOff, 0};
      break;
    case DecodeMode::kReinforceOnly:
      config.scale_diffuse = 1.0;
      break;
    case DecodeMode::kDiffuseOnly:
      config.scale_reinforce = 1.0;
      break;
  }
  return config;
}

// ---- generate --------------------------------------------------------------

CommandResult cmd_generate(const GenerateOptions& opt) {
  if (opt.out_dir.empty()) throw ArgumentError("generate needs an output directory");
  const auto scenes = generate_corpus(opt.spec);
  write_corpus(opt.out_dir, opt.spec, scenes);
  const std::size_t scripted =
      static_cast<std::size_t>(std::count_if(scenes.begin(), scenes.end(), [](const Scenario& s) { return s.script; }));
  return {0, "wrote " + std::to_string(scenes.size()) + " scenes (" + std::to_string(scripted) + " scripted) to " +
                 opt.out_dir};
}

// ---- decode ----------------------------------------------------------------

nlohmann::json DecodeOptions::to_json() const {
  nlohmann::json j;
  j["corpus_dir"] = corpus_dir;
  j["backend"] = std::string(to_string(backend));
  j["checkpoint"] = checkpoint ? nlohmann::json(*checkpoint) : nlohmann::json(nullptr);
  j["mode"] = std::string(to_string(mode));
  j["config"] = config.to_json();
  j["emit_maps"] = emit_maps;
  return j;
}

DecodeOptions DecodeOptions::from_manifest(const nlohmann::json& manifest) {
  DecodeOptions o;
  try {
    if (manifest.value("format", std::string{}) != "sage-run/1") throw ParseError("not a run manifest");
    const auto& j = manifest.at("options");
    o.corpus_dir = j.at("corpus_dir").get<std::string>();
    o.backend = parse_backend(j.at("backend").get<std::string>());
    if (!j.at("checkpoint").is_null()) o.checkpoint = j.at("checkpoint").get<std::string>();
    o.mode = parse_decode_mode(j.at("mode").get<std::string>());
    o.config = SageConfig::from_json(j.at("config"));
    o.emit_maps = j.value("emit_maps", false);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("run manifest: ") + e.what());
  }
  return o;
}

ModelFactory::ModelFactory(const Corpus& corpus, Backend backend, const std::optional<std::string>& checkpoint,
                           const SageConfig& config)
    : corpus_(corpus), backend_(backend) {
  if (backend == Backend::kOracle) {
    if (checkpoint) throw ArgumentError("--checkpoint applies to the toy backend only");
    return;
  }
  if (checkpoint) {
    toy_ = std::make_shared<ToyVlm>(ToyVlm::load_checkpoint(*checkpoint, default_vocabulary()));
    if (toy_->grid() != corpus.spec().grid || toy_->config().patch_size != corpus.spec().patch) {
      throw ArgumentError("checkpoint image geometry does not match the corpus");
    }
    return;
  }
  VlmConfig vc;
  vc.image_size = corpus.spec().grid * corpus.spec().patch;
  vc.patch_size = corpus.spec().patch;
  vc.seed = config.seed;
  if (config.max_new_tokens) vc.max_new_tokens = *config.max_new_tokens;
  toy_ = std::make_shared<ToyVlm>(vc, default_vocabulary());
}

std::shared_ptr<const VlmModel> ModelFactory::model_for(const std::string& id) const {
  if (backend_ == Backend::kToy) return toy_;
  const auto path = corpus_.script_path(id);
  if (!path) return nullptr;
  return std::make_shared<OracleVlm>(OracleScript::load(*path), default_vocabulary());
}

CommandResult cmd_decode(const DecodeOptions& opt) {
  if (opt.out_dir.empty()) throw ArgumentError("decode needs an output directory");
  if (opt.jobs == 0) throw ArgumentError("--jobs must be at least 1");
  const Corpus corpus = Corpus::open(opt.corpus_dir);
  const SageConfig config = apply_mode(opt.config, opt.mode);
  config.validate();
  const ModelFactory factory(corpus, opt.backend, opt.checkpoint, config);
  const auto ids = decodable_ids(corpus, opt.backend);
  const bool wall = config.timing == TimingMode::kWall;

  const fs::path out(opt.out_dir);
  ensure_dir(out / "traces");

  struct PerImage {
    std::size_t tokens = 0, grounding = 0;
    std::array<std::int64_t, kTimingComponents> ns{};
    std::int64_t decode_ns = 0, baseline_ns = 0;
    std::optional<std::string> error;
  };
  std::vector<PerImage> results(ids.size());

  parallel_for(ids.size(), opt.jobs, [&](std::size_t i) {
    const std::string& id = ids[i];
    const auto model = factory.model_for(id);
    const Image image = corpus.load_image(id);
    const DecodeRun run = decode_image(*model, image, config);
    write_text((out / "traces" / (id + ".jsonl")).string(), run.trace.to_jsonl());
    if (opt.emit_maps) write_maps(out / "maps" / id, run.trace);
    PerImage& r = results[i];
    r.tokens = run.trace.tokens.size();
    r.grounding = run.trace.reports.size();
    r.error = run.error;
    if (wall && !run.trace.timings.empty()) {
      const TimingEvent& total = run.trace.timings.back();
      r.ns = total.ns;
      r.decode_ns = total.decode_ns;
      SageConfig base = apply_mode(config, DecodeMode::kBaseline);
      const DecodeRun b = decode_image(*model, image, base);
      if (!b.trace.timings.empty()) r.baseline_ns = b.trace.timings.back().decode_ns;
    }
  });

  nlohmann::ordered_json manifest;
  manifest["format"] = "sage-run/1";
  manifest["version"] = kVersion;
  manifest["command"] = "decode";
  manifest["options"] = opt.to_json();
  manifest["effective_config"] = config.to_json();
  manifest["corpus"] = corpus.spec().to_json();
  if (factory.toy()) {
    manifest["model"] = {{"backend", "toy"}, {"config", factory.toy()->config().to_json()}};
  } else {
    manifest["model"] = {{"backend", "oracle"}};
  }
  nlohmann::ordered_json images = nlohmann::ordered_json::array();
  std::vector<std::string> failed;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    nlohmann::ordered_json e;
    e["id"] = ids[i];
    e["trace"] = "traces/" + ids[i] + ".jsonl";
    e["tokens"] = results[i].tokens;
    e["grounding_events"] = results[i].grounding;
    if (results[i].error) {
      e["error"] = *results[i].error;
      failed.push_back(ids[i]);
    }
    images.push_back(e);
  }
  manifest["images"] = images;
  if (wall) {
    std::array<std::int64_t, kTimingComponents> comp{};
    std::int64_t sage_ns = 0, base_ns = 0;
    for (const auto& r : results) {
      for (std::size_t k = 0; k < kTimingComponents; ++k) comp[k] += r.ns[k];
      sage_ns += r.decode_ns;
      base_ns += r.baseline_ns;
    }
    const std::int64_t added = sage_ns - base_ns;
    std::int64_t accounted = 0;
    nlohmann::ordered_json t;
    for (std::size_t k = 0; k < kTimingComponents; ++k) {
      t[std::string(to_string(static_cast<TimingComponent>(k))) + "_ns"] = comp[k];
      accounted += comp[k];
    }
    t["other_ns"] = added - accounted;
    t["added_ns"] = added;
    t["sage_decode_ns"] = sage_ns;
    t["baseline_decode_ns"] = base_ns;
    t["overhead_pct"] = base_ns > 0 ? 100.0 * static_cast<double>(added) / static_cast<double>(base_ns) : 0.0;
    manifest["timing"] = t;
  } else {
    manifest["timing"] = nullptr;
  }
  write_text((out / "manifest.json").string(), manifest.dump(2) + "\n");

  if (!failed.empty()) {
    return {static_cast<int>(ErrorCode::kInternal),
            "decode failed for " + std::to_string(failed.size()) + " image(s), first: " + failed.front() +
                " (partial traces written)"};
  }
  return {0, "decoded " + std::to_string(ids.size()) + " images (" + std::string(to_string(opt.backend)) + ", " +
                 std::string(to_string(opt.mode)) + ") into " + opt.out_dir};
}

CommandResult cmd_decode_from_manifest(const std::string& manifest_path, const std::string& out_dir) {
  DecodeOptions opt = DecodeOptions::from_manifest(parse_file(manifest_path));
  opt.out_dir = out_dir;
  return cmd_decode(opt);
}

// ---- report ----------------------------------------------------------------

CommandResult cmd_report(const ReportOptions& opt) {
  const fs::path run_dir(opt.traces_dir);
  if (!fs::is_directory(run_dir)) throw IoError("trace directory " + opt.traces_dir + " does not exist");
  const fs::path traces = fs::is_directory(run_dir / "traces") ? run_dir / "traces" : run_dir;

  std::optional<nlohmann::json> manifest;
  if (fs::exists(run_dir / "manifest.json")) manifest = parse_file((run_dir / "manifest.json").string());

  std::string ann_path = opt.annotations;
  if (ann_path.empty() && manifest) {
    ann_path = (fs::path(manifest->at("options").at("corpus_dir").get<std::string>()) / "annotations.json").string();
  }
  if (ann_path.empty()) throw ArgumentError("report needs --annotations (no run manifest to infer it from)");
  const AnnotationSet ann = AnnotationSet::load(ann_path);

  std::vector<std::string> ids;
  if (manifest) {
    for (const auto& e : manifest->at("images")) ids.push_back(e.at("id").get<std::string>());
  } else {
    for (const auto& [id, img] : ann.images) ids.push_back(id);
  }
  std::sort(ids.begin(), ids.end());

  const PosLexicon pos = PosLexicon::defaults();
  const SinkLexicon sinks = SinkLexicon::defaults();
  std::vector<CaptionInput> captions;
  std::vector<std::string> missing;
  std::string csv = "image_id,tokens,mentions,hallucinated,chair_s,cover,halluc_labeled,halluc_near_sink,grounding_events\n";
  ProximityCount prox_total;
  double cover_sum = 0.0;
  std::size_t cover_n = 0;
  std::array<std::int64_t, kTimingComponents> timing{};
  std::int64_t decode_ns = 0;
  bool any_timing = false;

  for (const auto& id : ids) {
    const fs::path p = traces / (id + ".jsonl");
    if (!fs::exists(p)) {
      missing.push_back(id);
      continue;
    }
    const TraceTokens t = parse_trace_jsonl(read_text(p.string()));
    const std::string caption = t.caption();
    const CaptionInput in{id, caption};
    captions.push_back(in);
    const ChairResult one = chair(std::span<const CaptionInput>(&in, 1), ann, pos);
    const ImageAnnotation& img = ann.image(id);
    std::string cover_cell;
    if (!img.objects.empty()) {
      const double c = cover(caption, id, ann, pos);
      cover_sum += c;
      ++cover_n;
      cover_cell = fmt(c);
    }
    const ProximityCount pc = count_proximity(t.tokens, t.hallucinated, sinks, opt.window);
    prox_total.hits += pc.hits;
    prox_total.total += pc.total;
    prox_total.labeled += pc.labeled;
    for (const auto& te : t.timings) {
      if (!te.total) continue;
      any_timing = true;
      for (std::size_t k = 0; k < kTimingComponents; ++k) timing[k] += te.ns[k];
      decode_ns += te.decode_ns;
    }
    csv += id + "," + std::to_string(t.tokens.size()) + "," + std::to_string(one.mentions) + "," +
           std::to_string(one.hallucinated_mentions) + "," + fmt(one.c_s) + "," + cover_cell + "," +
           std::to_string(pc.total) + "," + std::to_string(pc.hits) + "," + std::to_string(t.grounding_events) + "\n";
  }

  const ChairResult all = chair(captions, ann, pos);
  nlohmann::ordered_json summary;
  summary["captions"] = all.captions;
  summary["chair_s"] = all.c_s;
  summary["chair_i"] = all.c_i;
  summary["mentions"] = all.mentions;
  summary["hallucinated_mentions"] = all.hallucinated_mentions;
  summary["cover"] = cover_n ? nlohmann::ordered_json(cover_sum / static_cast<double>(cover_n)) : nlohmann::ordered_json(nullptr);
  summary["sink_proximity"] = {
      {"window", opt.window},
      {"hits", prox_total.hits},
      {"hallucinated", prox_total.total},
      {"fraction", prox_total.total ? nlohmann::ordered_json(static_cast<double>(prox_total.hits) /
                                                             static_cast<double>(prox_total.total))
                                    : nlohmann::ordered_json(nullptr)}};
  if (any_timing) {
    nlohmann::ordered_json t;
    for (std::size_t k = 0; k < kTimingComponents; ++k) t[std::string(to_string(static_cast<TimingComponent>(k))) + "_ns"] = timing[k];
    t["decode_ns"] = decode_ns;
    summary["timing"] = t;
  } else {
    summary["timing"] = nullptr;
  }
  summary["missing"] = missing;

  const fs::path out = opt.out_dir.empty() ? run_dir : fs::path(opt.out_dir);
  ensure_dir(out);
  write_text((out / "report.csv").string(), csv);
  write_text((out / "summary.json").string(), summary.dump(2) + "\n");

  if (!missing.empty()) {
    std::string list;
    for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
    return {static_cast<int>(ErrorCode::kMissing), "missing traces: " + list};
  }
  if (captions.empty()) return {static_cast<int>(ErrorCode::kNoData), "no data: the trace set is empty"};
  return {0, "C_S=" + fmt(all.c_s) + " C_I=" + fmt(all.c_i) + " over " + std::to_string(all.captions) + " captions"};
}

// ---- layer analysis --------------------------------------------------------

CommandResult cmd_layer_analysis(const LayerAnalysisOptions& opt) {
  if (opt.out_csv.empty()) throw ArgumentError("layer-analysis needs an output path");
  const Corpus corpus = Corpus::open(opt.corpus_dir);
  const fs::path out_path(opt.out_csv);
  if (out_path.has_parent_path()) ensure_dir(out_path.parent_path());

  if (corpus.ids().empty()) {
    write_text(opt.out_csv, layer_analysis_csv({}));
    return {static_cast<int>(ErrorCode::kNoData), "no data: the corpus is empty"};
  }
  if (!corpus.annotations().has_boxes()) throw ArgumentError("layer analysis needs annotation boxes");
  opt.config.validate();
  const ModelFactory factory(corpus, opt.backend, opt.checkpoint, opt.config);
  const auto ids = decodable_ids(corpus, opt.backend);
  const PosLexicon pos = PosLexicon::defaults();

  std::optional<LayerAnalysis> analysis;
  std::size_t skipped = 0;
  for (const auto& id : ids) {
    const auto model = factory.model_for(id);
    if (!analysis) analysis.emplace(model->decoder_layers(), opt.config.rel_threshold);
    const DecodeRun run = decode_image(*model, corpus.load_image(id), opt.config);
    if (run.error) throw StateError("decode failed for " + id + ": " + *run.error);
    std::size_t unmatched = 0;
    const auto samples = layer_samples(run.trace.token_text, id, corpus.annotations(), pos, &unmatched);
    skipped += unmatched;
    for (const auto& s : samples) analysis->add(run.state, s);
  }
  if (!analysis || analysis->samples() == 0) {
    write_text(opt.out_csv, layer_analysis_csv({}));
    return {static_cast<int>(ErrorCode::kNoData), "no data: no generated noun matched a boxed label"};
  }
  const auto rows = analysis->rows();
  write_text(opt.out_csv, layer_analysis_csv(rows));
  return {0, "wrote " + std::to_string(rows.size()) + " layer rows from " + std::to_string(analysis->samples()) +
                 " samples (" + std::to_string(skipped) + " skipped) to " + opt.out_csv};
}

}  // namespace sage
