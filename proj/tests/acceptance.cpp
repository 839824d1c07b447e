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

// Acceptance suite. Prints one PASS/FAIL line per criterion and exits
// nonzero when any of them fails. Every tolerance used is pinned below.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "fd_oracle.hpp"
#include "sage/harness.hpp"
#include "test_support.hpp"

using namespace sage;
namespace fs = std::filesystem;

namespace {

// Pinned tolerances and budgets.
constexpr double kFdTol = 1e-4;
constexpr std::uint64_t kFdSeeds = 200;
constexpr double kFdBudgetSec = 120.0;
constexpr double kGoldenBudgetSec = 10.0;
constexpr double kRowSumTol = 1e-9;
constexpr double kClosedFormTol = 1e-9;
constexpr double kUnitScaleTol = 1e-12;
constexpr double kGradcamTol = 1e-3;
constexpr double kMetricTol = 1e-12;
constexpr double kCsvTol = 1e-6;  // the CSV carries six decimals

struct Outcome {
  bool pass = true;
  std::string detail;
};

// Collects failures; the first few are kept for the report line.
struct Checker {
  std::size_t checks = 0;
  std::vector<std::string> failures;

  void expect(bool ok, const std::string& what) {
    ++checks;
    if (!ok) failures.push_back(what);
  }
  Outcome outcome(const std::string& summary) const {
    if (failures.empty()) return {true, summary};
    std::string d = std::to_string(failures.size()) + " of " + std::to_string(checks) + " checks failed: ";
    for (std::size_t i = 0; i < std::min<std::size_t>(3, failures.size()); ++i) d += (i ? "; " : "") + failures[i];
    return {false, d};
  }
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

fs::path make_corpus(const std::string& name, CorpusSpec spec) {
  const auto dir = testing::scratch(name);
  GenerateOptions g;
  g.spec = spec;
  g.out_dir = dir.string();
  const auto r = cmd_generate(g);
  if (r.exit_code != 0) throw IoError("generate failed: " + r.message);
  return dir;
}

void decode_into(const fs::path& corpus, const fs::path& out, DecodeMode mode, SageConfig cfg = {},
                 std::size_t jobs = 1) {
  DecodeOptions o;
  o.corpus_dir = corpus.string();
  o.out_dir = out.string();
  o.mode = mode;
  o.config = cfg;
  o.jobs = jobs;
  const auto r = cmd_decode(o);
  if (r.exit_code != 0) throw IoError("decode failed: " + r.message);
}

nlohmann::json report_of(const fs::path& run) {
  ReportOptions r;
  r.traces_dir = run.string();
  const auto res = cmd_report(r);
  if (res.exit_code != 0) throw IoError("report failed: " + res.message);
  return nlohmann::json::parse(read_text((run / "summary.json").string()));
}

// In-process decode of every scene of a corpus with the oracle backend.
std::vector<std::pair<std::string, DecodeRun>> oracle_runs(const fs::path& dir, const SageConfig& cfg) {
  const auto corpus = Corpus::open(dir.string());
  ModelFactory factory(corpus, Backend::kOracle, std::nullopt, cfg);
  std::vector<std::pair<std::string, DecodeRun>> out;
  for (const auto& id : corpus.ids()) {
    const auto model = factory.model_for(id);
    const auto prompt = model->vocab().tokenize(cfg.prompt);
    out.emplace_back(id, run_decode(*model, corpus.load_image(id), prompt, cfg));
  }
  return out;
}

// ---- 1: gradients ----------------------------------------------------------

Outcome gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  Checker c;
  double worst_op = 0.0, worst_toy = 0.0;
  const auto& ops = testing::op_catalogue();
  for (std::uint64_t seed = 0; seed < kFdSeeds; ++seed) {
    for (const auto& op : ops) {
      const double e = testing::op_fd_error(op, seed);
      worst_op = std::max(worst_op, e);
      c.expect(e < kFdTol, op.name + " seed " + std::to_string(seed) + " rel " + fmt(e));
    }
    const auto t = testing::toy_concept_fd(seed);
    worst_toy = std::max(worst_toy, t.max_rel);
    c.expect(t.max_rel < kFdTol, "toy seed " + std::to_string(seed) + " rel " + fmt(t.max_rel));
    c.expect(t.max_abs_grad > 0.0, "toy seed " + std::to_string(seed) + " zero gradient");
  }
  const double secs = seconds_since(t0);
  c.expect(secs < kFdBudgetSec, "took " + fmt(secs) + "s");
  return c.outcome(std::to_string(ops.size()) + " ops + toy, " + std::to_string(kFdSeeds) + " seeds, max rel op " +
                   fmt(worst_op) + " toy " + fmt(worst_toy) + ", " + fmt(secs) + "s");
}

// ---- 2: oracle goldens and hand tables ---------------------------------------

struct Expected {
  std::size_t step;
  Decision decision;
  std::optional<double> overlap;
};

std::vector<Expected> hand_table(ScriptTemplate t) {
  using D = Decision;
  switch (t) {
    case ScriptTemplate::kGrounded:
      return {{3, D::kReinforce, std::nullopt}, {7, D::kReinforce, std::nullopt}};
    case ScriptTemplate::kEarlyMisalign:
      return {{3, D::kDiffuse, std::nullopt}, {6, D::kDiffuse, 0.25}, {10, D::kReinforce, std::nullopt}};
    case ScriptTemplate::kLateMisalign:
      return {{3, D::kReinforce, 1.0}, {10, D::kDiffuse, 0.0}, {13, D::kDiffuse, 0.25}};
    case ScriptTemplate::kDoubleSink:
      return {{3, D::kReinforce, std::nullopt}, {4, D::kSkip, std::nullopt}, {11, D::kReinforce, std::nullopt}};
  }
  return {};
}

Outcome oracle_goldens() {
  const auto t0 = std::chrono::steady_clock::now();
  Checker c;
  const CorpusSpec spec;  // standard profile, 20 scenes, seed 0
  const auto corpus = make_corpus("acc_golden_corpus", spec);
  const auto out = testing::scratch("acc_golden_run");
  decode_into(corpus, out, DecodeMode::kSage);
  const auto bad = testing::golden_mismatches(out / "traces", SAGE_TEST_GOLDEN_DIR);
  for (const auto& id : bad) c.expect(false, "golden mismatch " + id);

  const SageConfig cfg;
  const auto scenes = generate_corpus(spec);
  const auto runs = oracle_runs(corpus, cfg);
  c.expect(runs.size() == scenes.size(), "scene count");
  std::size_t reports = 0;
  for (std::size_t i = 0; i < std::min(runs.size(), scenes.size()); ++i) {
    const auto& [id, run] = runs[i];
    const auto& tr = run.trace;
    c.expect(!run.error, id + " decode error");
    // One grounding check per sink, at the sink step.
    std::vector<std::size_t> sink_steps, report_steps;
    for (const auto& s : tr.sinks) sink_steps.push_back(s.step);
    for (const auto& r : tr.reports) report_steps.push_back(r.step);
    c.expect(sink_steps == report_steps, id + " grounding steps differ from sink steps");

    const auto want = hand_table(*scenes[i].script_template);
    c.expect(tr.reports.size() == want.size(), id + " report count");
    for (std::size_t k = 0; k < std::min(want.size(), tr.reports.size()); ++k) {
      const auto& r = tr.reports[k];
      const std::string at = id + "@" + std::to_string(want[k].step);
      c.expect(r.step == want[k].step, at + " step " + std::to_string(r.step));
      c.expect(r.decision == want[k].decision, at + " decision " + std::string(to_string(r.decision)));
      if (want[k].overlap) c.expect(r.overlap == *want[k].overlap, at + " overlap " + fmt(r.overlap));
      if (r.decision != Decision::kSkip) c.expect(r.decision == (r.overlap > cfg.tau ? Decision::kReinforce : Decision::kDiffuse), at + " threshold");
      // The installed directive carries the configured scale and layer set.
      bool installed = false;
      for (const auto& d : tr.directives) {
        if (!d.install || d.step != r.step) continue;
        installed = true;
        const double scale = r.decision == Decision::kReinforce ? cfg.scale_reinforce : cfg.scale_diffuse;
        c.expect(d.directive.scale == scale, at + " directive scale");
        c.expect(d.directive.target_layers == cfg.layer_set(kOracleLayers), at + " directive layers");
        c.expect(d.directive.installed_at == r.step, at + " installed_at");
      }
      c.expect(installed == (r.decision != Decision::kSkip), at + " install presence");
      ++reports;
    }
  }
  const double secs = seconds_since(t0);
  c.expect(secs < kGoldenBudgetSec, "took " + fmt(secs) + "s");
  return c.outcome(std::to_string(runs.size()) + " traces byte-identical, " + std::to_string(reports) +
                   " decisions match, " + fmt(secs) + "s");
}

// ---- 3: modulation invariants --------------------------------------------------

void check_rows(Checker& c, const DecodeState& st, const std::string& tag, std::size_t& modulated) {
  for (std::size_t s = 0; s < st.attention_log.size(); ++s) {
    const auto& step = st.attention_log[s];
    const auto& d = st.applied.at(s);
    for (std::size_t l = 0; l < step.pre.size(); ++l) {
      for (std::size_t h = 0; h < step.pre[l].size(); ++h) {
        const auto& pre = step.pre[l][h];
        const auto& post = step.post[l][h];
        const std::string at = tag + " s" + std::to_string(s) + " l" + std::to_string(l) + " h" + std::to_string(h);
        c.expect(pre.size() == post.size(), at + " width");
        if (pre.size() != post.size()) continue;

        // Uniform weights are a no-op after renormalization.
        const auto unit = apply_directive(pre, 1.0, st.image_tokens);
        const auto flat = reweight_row(pre, std::vector<double>(pre.size(), 3.7));
        double du = 0.0;
        for (std::size_t k = 0; k < pre.size(); ++k) du = std::max({du, std::abs(unit[k] - pre[k]), std::abs(flat[k] - pre[k])});
        c.expect(du <= kUnitScaleTol, at + " uniform scaling moved a row by " + fmt(du));

        if (!d || !d->targets(l)) {
          c.expect(pre == post, at + " untargeted row changed");
          continue;
        }
        ++modulated;
        double sum = 0.0, m_pre = 0.0, m_post = 0.0, pre_total = 0.0;
        for (std::size_t k = 0; k < post.size(); ++k) {
          sum += post[k];
          pre_total += pre[k];
          if (k < st.image_tokens) {
            m_pre += pre[k];
            m_post += post[k];
          }
        }
        m_pre /= pre_total;
        const double want = d->scale * m_pre / (d->scale * m_pre + 1.0 - m_pre);
        c.expect(std::abs(sum - 1.0) <= kRowSumTol, at + " row sum " + fmt(sum));
        c.expect(std::abs(m_post - want) <= kClosedFormTol, at + " image mass " + fmt(m_post) + " vs " + fmt(want));
      }
    }
  }
}

Outcome modulation() {
  Checker c;
  std::size_t modulated = 0;

  CorpusSpec spec;
  const auto corpus = make_corpus("acc_mod_corpus", spec);
  SageConfig cfg;
  for (const auto& [id, run] : oracle_runs(corpus, cfg)) check_rows(c, run.state, "oracle " + id, modulated);
  SageConfig periodic;
  periodic.trigger = TriggerPolicy::parse("periodic:5");
  periodic.scope = ModulationScope::kAtSinkOnly;
  for (const auto& [id, run] : oracle_runs(corpus, periodic)) check_rows(c, run.state, "oracle-p " + id, modulated);

  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto r = testing::toy_run(seed);
    check_rows(c, r.state, "toy-forced " + std::to_string(seed), modulated);
    VlmConfig vc;
    vc.seed = seed;
    vc.max_new_tokens = 16;
    const ToyVlm toy(vc, default_vocabulary());
    SageConfig tc;
    tc.trigger = TriggerPolicy::parse("periodic:3");
    const auto run = run_decode(toy, testing::random_image(vc, seed), toy.vocab().tokenize(tc.prompt), tc);
    check_rows(c, run.state, "toy " + std::to_string(seed), modulated);
  }

  // Unit scales reproduce the unmodulated tokens.
  SageConfig unit;
  unit.scale_reinforce = unit.scale_diffuse = 1.0;
  const auto base_runs = oracle_runs(corpus, apply_mode(cfg, DecodeMode::kBaseline));
  const auto unit_runs = oracle_runs(corpus, unit);
  for (std::size_t i = 0; i < base_runs.size(); ++i)
    c.expect(base_runs[i].second.trace.tokens == unit_runs[i].second.trace.tokens, base_runs[i].first + " unit-scale tokens");

  c.expect(modulated > 0, "no modulated rows seen");
  return c.outcome(std::to_string(modulated) + " modulated rows, sum and mass within " + fmt(kRowSumTol));
}

// ---- 4: lexicon and config defaults --------------------------------------------

Outcome lexicon_and_defaults() {
  Checker c;
  const auto lex = SinkLexicon::defaults();
  const std::vector<std::string> punct{".", ",", ":", ";", "!", "?", "-", "--", "..."};
  const std::vector<std::string> conj{"and", "or", "but", "so", "yet"};
  c.expect(lex.punctuation() == punct, "punctuation set");
  c.expect(lex.conjunctions() == conj, "conjunction set");
  c.expect(lex.size() == 14, "lexicon size");
  for (const char* w : {"the", "with", "a", "near", "then", "(", "'s"}) c.expect(!lex.contains(w), std::string(w) + " is a sink");

  const SageConfig d;
  c.expect(d.tau == 0.5, "tau");
  c.expect(d.scale_diffuse == 0.6, "diffuse scale");
  c.expect(d.scale_reinforce == 1.8, "reinforce scale");
  c.expect(d.trigger.kind == TriggerKind::kSink, "trigger");
  c.expect(d.layer_set(4) == std::vector<std::size_t>{1}, "layer set");
  auto valid = [](auto mutate) {
    SageConfig x;
    mutate(x);
    try {
      x.validate();
      return true;
    } catch (const ArgumentError&) {
      return false;
    }
  };
  for (double v : {0.0, 0.3, 0.5, 0.7, 1.0}) c.expect(valid([&](SageConfig& x) { x.tau = v; }), "tau " + fmt(v));
  for (double v : {0.3, 0.5, 0.6, 0.8, 1.0}) c.expect(valid([&](SageConfig& x) { x.scale_diffuse = v; }), "diffuse " + fmt(v));
  for (double v : {1.0, 1.2, 1.5, 1.8, 2.0}) c.expect(valid([&](SageConfig& x) { x.scale_reinforce = v; }), "reinforce " + fmt(v));
  for (double v : {-0.1, 1.5}) c.expect(!valid([&](SageConfig& x) { x.tau = v; }), "tau " + fmt(v) + " accepted");
  for (double v : {0.0, 1.2}) c.expect(!valid([&](SageConfig& x) { x.scale_diffuse = v; }), "diffuse " + fmt(v) + " accepted");
  c.expect(!valid([](SageConfig& x) { x.scale_reinforce = 0.9; }), "reinforce 0.9 accepted");
  return c.outcome("9 punctuation + 5 conjunctions, defaults 0.5/0.6/1.8, grids validate");
}

// ---- 5: metrics on hand cases ---------------------------------------------------

Outcome metrics() {
  Checker c;
  const auto ann = AnnotationSet::from_json(nlohmann::json::parse(R"({
    "grid": 4,
    "images": {
      "park":  {"objects": ["dog", "frisbee"]},
      "street": {"objects": ["car", "dog"]},
      "room":  {"objects": ["table", "cup"]},
      "board": {"objects": ["circle", "square", "triangle", "rectangle"]}
    },
    "synonyms": {"puppy": "dog", "dining table": "table", "ball": "circle"}
  })"));
  const auto lex = SinkLexicon::defaults();
  auto near = [&](double got, double want, const std::string& what) {
    c.expect(std::abs(got - want) <= kMetricTol, what + ": " + fmt(got) + " vs " + fmt(want));
  };
  auto chair_of = [&](std::vector<CaptionInput> in) { return chair(in, ann); };
  auto words = [](std::initializer_list<const char*> v) { return std::vector<std::string>(v.begin(), v.end()); };
  auto labels = [](std::initializer_list<int> v) {
    std::vector<std::optional<bool>> out;
    for (int x : v) out.push_back(x < 0 ? std::nullopt : std::optional<bool>(x == 1));
    return out;
  };

  std::size_t cases = 0;
  auto r = chair_of({{"park", "a dog with a frisbee near a car ."}});
  near(r.c_i, 1.0 / 3.0, "chair_i one of three"), near(r.c_s, 1.0, "chair_s one caption"), ++cases;
  r = chair_of({{"park", "a puppy and a frisbee ."}});
  near(r.c_i, 0.0, "synonym grounded"), ++cases;
  r = chair_of({{"park", "a dog ."}, {"park", "a dog near a cup ."}});
  near(r.c_s, 0.5, "chair_s half"), near(r.c_i, 1.0 / 3.0, "chair_i pooled"), ++cases;
  r = chair_of({{"room", "a cup , a cup , a car , a car ."}});
  near(r.c_i, 0.5, "repeats once"), ++cases;
  r = chair_of({{"room", "a wooden dining table ."}});
  near(r.c_i, 0.0, "multi-word synonym"), c.expect(r.mentions == 1, "multi-word mention count"), ++cases;
  r = chair_of({{"board", "a red ball , a blue dog and a green cup ."}});
  near(r.c_i, 2.0 / 3.0, "two of three"), ++cases;
  near(cover("a circle and a square", "board", ann), 0.5, "cover half"), ++cases;
  near(cover("a dog with a frisbee", "park", ann), 1.0, "cover full"), ++cases;
  near(attention_entropy(std::vector<double>(16, 1.0 / 16)), std::log(16.0), "entropy uniform"), ++cases;
  near(attention_entropy(std::vector<double>{0.5, 0.25, 0.25}), 1.5 * std::log(2.0), "entropy 1.5 ln 2"), ++cases;
  near(attention_entropy(std::vector<double>{0.0, 0.0, 3.0}), 0.0, "entropy one-hot"), ++cases;
  near(sink_proximity(words({"a", ".", "dog", ",", "car"}), labels({0, 0, 1, 0, 1}), lex), 1.0, "proximity all"), ++cases;
  near(sink_proximity(words({"a", "dog", "car"}), labels({0, 1, 1}), lex), 0.0, "proximity none"), ++cases;
  const auto t = words({".", "a", "dog", "red", "car", "the", "big", "red", "cup", "near", "cat"});
  const auto l = labels({0, 0, 1, 0, 1, 0, 0, 0, 0, 1, -1});
  near(sink_proximity(t, l, lex, 5), 2.0 / 3.0, "proximity two of three"), ++cases;
  near(sink_proximity(t, l, lex, 1), 0.0, "proximity window 1"), ++cases;
  const auto cnt = count_proximity(t, l, lex, 5);
  c.expect(cnt.hits == 2 && cnt.total == 3 && cnt.labeled == 10, "proximity counts"), ++cases;

  c.expect(cases >= 12, "fewer than 12 cases");
  return c.outcome(std::to_string(cases) + " hand cases within " + fmt(kMetricTol));
}

// ---- 6: Grad-CAM against brute force, mask union --------------------------------

Outcome gradcam_and_union() {
  Checker c;
  double worst = 0.0;
  std::size_t pairs = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    for (const TokenSpan span : {TokenSpan{1, 3}, TokenSpan{0, 2}}) {
      auto r = testing::toy_run(seed);
      c.expect(r.config.decoder_layers == 4, "toy depth");
      r.cpt.span = span;
      const auto m = gradcam_for_concept(*r.model, r.state, r.cpt);
      const auto brute = testing::brute_force_gradcam(r);
      double d = 0.0;
      for (std::size_t i = 0; i < brute.size(); ++i) d = std::max(d, std::abs(m.values.at(i) - brute[i]));
      worst = std::max(worst, d);
      c.expect(d <= kGradcamTol, "seed " + std::to_string(seed) + " span " + std::to_string(span.begin) + " diff " + fmt(d));
      ++pairs;
    }
  }
  auto from_bits = [](unsigned bits) {
    auto m = BinaryMask::filled(2, false);
    for (std::size_t i = 0; i < 4; ++i) m.cells[i] = (bits >> i) & 1u;
    return m;
  };
  for (unsigned a = 0; a < 16; ++a)
    for (unsigned b = 0; b < 16; ++b) {
      const std::vector<BinaryMask> pair{from_bits(a), from_bits(b)};
      c.expect(union_masks(pair) == from_bits(a | b), "union " + std::to_string(a) + "|" + std::to_string(b));
    }
  return c.outcome(std::to_string(pairs) + " pairs, max abs diff " + fmt(worst) + "; 256 mask unions exact");
}

// ---- 7: adversarial corpus ----------------------------------------------------

Outcome adversarial() {
  Checker c;
  CorpusSpec spec;
  spec.profile = CorpusProfile::kAdversarial;
  const auto corpus = make_corpus("acc_adv_corpus", spec);
  const auto base = testing::scratch("acc_adv_base"), sage_run = testing::scratch("acc_adv_sage"),
             per = testing::scratch("acc_adv_periodic");
  decode_into(corpus, base, DecodeMode::kBaseline);
  decode_into(corpus, sage_run, DecodeMode::kSage);
  SageConfig p;
  p.trigger = TriggerPolicy::parse("periodic:10");
  decode_into(corpus, per, DecodeMode::kSage, p);
  const auto b = report_of(base), s = report_of(sage_run), q = report_of(per);
  const double bi = b["chair_i"].get<double>(), bs = b["chair_s"].get<double>();
  const double si = s["chair_i"].get<double>(), ss = s["chair_s"].get<double>();
  const double qi = q["chair_i"].get<double>();
  c.expect(si < bi, "sage C_I " + fmt(si) + " not below baseline " + fmt(bi));
  c.expect(ss < bs, "sage C_S " + fmt(ss) + " not below baseline " + fmt(bs));
  c.expect(si <= qi && qi <= bi, "periodic C_I " + fmt(qi) + " outside [" + fmt(si) + ", " + fmt(bi) + "]");
  return c.outcome("C_I base " + fmt(bi) + " periodic " + fmt(qi) + " sage " + fmt(si) + "; C_S base " + fmt(bs) +
                   " sage " + fmt(ss));
}

// ---- 8: layer analysis ----------------------------------------------------------

Outcome layer_analysis() {
  Checker c;
  const auto corpus = make_corpus("acc_layer_corpus", CorpusSpec{});
  LayerAnalysisOptions lo;
  lo.corpus_dir = corpus.string();
  lo.out_csv = (corpus / "layers.csv").string();
  lo.config.trigger = TriggerPolicy::parse("off");
  const auto res = cmd_layer_analysis(lo);
  c.expect(res.exit_code == 0, "layer analysis exit " + std::to_string(res.exit_code));
  std::istringstream in(read_text(lo.out_csv));
  std::string line;
  std::getline(in, line);
  std::vector<double> ious, ents;
  while (std::getline(in, line)) {
    std::istringstream row(line);
    std::string cell;
    std::vector<std::string> cols;
    while (std::getline(row, cell, ',')) cols.push_back(cell);
    if (cols.size() != 4) {
      c.expect(false, "bad CSV row " + line);
      continue;
    }
    ious.push_back(std::stod(cols[1]));
    ents.push_back(std::stod(cols[2]));
  }
  c.expect(ious.size() == kOracleLayers, "row count");
  if (ious.size() == kOracleLayers) {
    const double top = *std::max_element(ious.begin(), ious.end());
    const double low = *std::min_element(ents.begin(), ents.end());
    for (std::size_t l : {1u, 2u}) {
      c.expect(std::abs(ious[l] - top) <= kCsvTol, "IoU not maximal at layer " + std::to_string(l));
      c.expect(std::abs(ents[l] - low) <= kCsvTol, "entropy not minimal at layer " + std::to_string(l));
    }
    for (std::size_t l : {0u, 3u}) {
      c.expect(ious[l] < top - kCsvTol, "layer " + std::to_string(l) + " ties the peak IoU");
      c.expect(ents[l] > low + kCsvTol, "layer " + std::to_string(l) + " ties the lowest entropy");
    }
  }
  std::string shape;
  for (std::size_t l = 0; l < ious.size(); ++l) shape += (l ? " " : "") + fmt(ious[l]) + "/" + fmt(ents[l]);
  return c.outcome("IoU/entropy by layer " + shape);
}

// ---- 9: determinism ----------------------------------------------------------

Outcome determinism() {
  Checker c;
  CorpusSpec spec;
  spec.size = 12;
  spec.seed = 5;
  const auto a = make_corpus("acc_det_a", spec), b = make_corpus("acc_det_b", spec);
  c.expect(testing::tree_bytes(a) == testing::tree_bytes(b), "generate differs");
  const auto ra = testing::scratch("acc_det_run_a"), rb = testing::scratch("acc_det_run_b");
  decode_into(a, ra, DecodeMode::kSage, {}, 1);
  decode_into(a, rb, DecodeMode::kSage, {}, 4);
  c.expect(testing::tree_bytes(ra / "traces") == testing::tree_bytes(rb / "traces"), "decode differs");
  report_of(ra);
  report_of(rb);
  for (const char* f : {"summary.json", "report.csv"})
    c.expect(read_text((ra / f).string()) == read_text((rb / f).string()), std::string(f) + " differs");
  LayerAnalysisOptions lo;
  lo.corpus_dir = a.string();
  lo.config.trigger = TriggerPolicy::parse("off");
  lo.out_csv = (ra / "layers.csv").string();
  cmd_layer_analysis(lo);
  lo.out_csv = (rb / "layers.csv").string();
  cmd_layer_analysis(lo);
  c.expect(read_text((ra / "layers.csv").string()) == read_text((rb / "layers.csv").string()), "layer CSV differs");
  return c.outcome("generate, decode (1 vs 4 jobs), report and layer analysis byte-identical");
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"gradients match finite differences", gradients},
      {"oracle traces match goldens and hand tables", oracle_goldens},
      {"modulated rows are stochastic and closed-form", modulation},
      {"sink lexicon and config defaults", lexicon_and_defaults},
      {"metrics reproduce hand cases", metrics},
      {"grad-cam and mask union", gradcam_and_union},
      {"adversarial corpus ordering", adversarial},
      {"layer analysis peaks at the middle layers", layer_analysis},
      {"end-to-end determinism", determinism},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("[%s] %zu. %s: %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria failed\n", failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
