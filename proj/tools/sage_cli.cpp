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

// sage: command-line front end. Talks to the engine through the C API only.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "sage/sage.h"

namespace {

struct ConfigFlags {
  std::optional<std::string> file;
  std::vector<std::pair<std::string, std::optional<std::string>>> values = {
      {"tau", {}},         {"scale-reinforce", {}}, {"scale-diffuse", {}}, {"trigger", {}},
      {"reliability", {}}, {"scope", {}},           {"layers", {}},        {"rel-threshold", {}},
      {"seed", {}},        {"max-new-tokens", {}},  {"prompt", {}},        {"timing", {}},
  };

  void attach(CLI::App* app) {
    app->add_option("--config", file, "JSON config file; flags override its fields");
    static const char* help[] = {
        "overlap threshold for reinforcing",
        "image-attention scale when grounded",
        "image-attention scale when ungrounded",
        "sink | periodic:N | off",
        "gradcam | attention-area",
        "until-next-sink | at-sink-only",
        "half-open decoder layer range a..b",
        "binarization level relative to the map maximum",
        "seed for the toy model",
        "generation budget",
        "prompt text",
        "off | wall",
    };
    for (std::size_t i = 0; i < values.size(); ++i) {
      app->add_option("--" + values[i].first, values[i].second, help[i]);
    }
  }
};

class Config {
 public:
  Config() { check(sage_config_create(&handle_)); }
  ~Config() { sage_config_destroy(handle_); }
  Config(const Config&) = delete;
  Config& operator=(const Config&) = delete;

  void apply(const ConfigFlags& flags) {
    if (flags.file) check(sage_config_load(handle_, flags.file->c_str()));
    for (const auto& [key, value] : flags.values) {
      if (value) check(sage_config_set(handle_, key.c_str(), value->c_str()));
    }
    check(sage_config_validate(handle_));
  }
  void set(const char* key, const char* value) { check(sage_config_set(handle_, key, value)); }
  const sage_config* get() const { return handle_; }

  static void check(sage_status s) {
    if (s != SAGE_OK) throw s;
  }

 private:
  sage_config* handle_ = nullptr;
};

std::string output_root() {
  char* root = nullptr;
  if (sage_default_output_root(&root) != SAGE_OK) return "sage-out";
  std::string out(root);
  sage_string_free(root);
  return out;
}

int report(sage_status status, char* message) {
  if (status == SAGE_OK) {
    if (message) std::printf("%s\n", message);
  } else {
    std::fprintf(stderr, "sage: %s: %s\n", sage_status_name(status), sage_last_error());
  }
  sage_string_free(message);
  return static_cast<int>(status);
}

const char* opt_c_str(const std::optional<std::string>& s) { return s ? s->c_str() : nullptr; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sink-aware grounded decoding: corpus generation, decoding, reports and layer analysis"};
  app.set_version_flag("--version", std::string(sage_version()));
  app.require_subcommand(1);
  const std::string root = output_root();

  // generate
  auto* gen = app.add_subcommand("generate", "Write a seeded synthetic corpus");
  std::string gen_out = (std::filesystem::path(root) / "corpus").string();
  std::size_t gen_size = 20, gen_grid = 4;
  std::uint64_t gen_seed = 0;
  std::string gen_profile = "standard";
  std::int64_t gen_scripted = -1;
  gen->add_option("--out", gen_out, "corpus directory")->capture_default_str();
  gen->add_option("--size", gen_size, "number of scenes")->capture_default_str();
  gen->add_option("--seed", gen_seed, "scene seed")->capture_default_str();
  gen->add_option("--grid", gen_grid, "patch grid side (even)")->capture_default_str();
  gen->add_option("--profile", gen_profile, "standard | adversarial")->capture_default_str();
  gen->add_option("--scripted", gen_scripted, "scenes with oracle scripts (-1 for all)")->capture_default_str();

  // decode
  auto* dec = app.add_subcommand("decode", "Decode every corpus image and write traces plus a run manifest");
  std::string dec_corpus = (std::filesystem::path(root) / "corpus").string();
  std::optional<std::string> dec_out, dec_checkpoint, dec_manifest;
  std::string dec_backend = "oracle", dec_mode = "sage";
  std::size_t dec_jobs = 1;
  bool dec_maps = false;
  ConfigFlags dec_flags;
  dec->add_option("--corpus", dec_corpus, "corpus directory")->capture_default_str();
  dec->add_option("--out", dec_out, "run directory (default <root>/runs/<mode>)");
  dec->add_option("--backend", dec_backend, "oracle | toy")->capture_default_str();
  dec->add_option("--checkpoint", dec_checkpoint, "toy checkpoint prefix");
  dec->add_option("--mode", dec_mode, "sage | baseline | reinforce-only | diffuse-only")->capture_default_str();
  dec->add_option("--jobs", dec_jobs, "worker threads")->capture_default_str();
  dec->add_flag("--emit-maps", dec_maps, "write grounding maps as PGM images");
  dec->add_option("--from-manifest", dec_manifest, "re-run the experiment recorded in a run manifest");
  dec_flags.attach(dec);

  // report
  auto* rep = app.add_subcommand("report", "Score a run directory: CHAIR, Cover, sink proximity, timing");
  std::string rep_traces = (std::filesystem::path(root) / "runs" / "sage").string();
  std::optional<std::string> rep_ann, rep_out;
  std::size_t rep_window = 5;
  rep->add_option("--traces", rep_traces, "run directory or trace directory")->capture_default_str();
  rep->add_option("--annotations", rep_ann, "annotation file (default: from the run manifest)");
  rep->add_option("--out", rep_out, "report directory (default: the run directory)");
  rep->add_option("--window", rep_window, "sink-proximity window in steps")->capture_default_str();

  // layer-analysis
  auto* lay = app.add_subcommand("layer-analysis", "Per-layer IoU and entropy against ground-truth boxes");
  std::string lay_corpus = (std::filesystem::path(root) / "corpus").string();
  std::string lay_out = (std::filesystem::path(root) / "layer_analysis.csv").string();
  std::string lay_backend = "oracle";
  std::optional<std::string> lay_checkpoint;
  ConfigFlags lay_flags;
  lay->add_option("--corpus", lay_corpus, "corpus directory")->capture_default_str();
  lay->add_option("--out", lay_out, "CSV path")->capture_default_str();
  lay->add_option("--backend", lay_backend, "oracle | toy")->capture_default_str();
  lay->add_option("--checkpoint", lay_checkpoint, "toy checkpoint prefix");
  lay_flags.attach(lay);

  CLI11_PARSE(app, argc, argv);

  char* message = nullptr;
  sage_status status = SAGE_OK;
  try {
    if (gen->parsed()) {
      status = sage_cmd_generate(gen_out.c_str(), gen_size, gen_seed, gen_grid, gen_profile.c_str(), gen_scripted,
                                 &message);
    } else if (dec->parsed()) {
      const std::string out = dec_out ? *dec_out : (std::filesystem::path(root) / "runs" / dec_mode).string();
      if (dec_manifest) {
        status = sage_cmd_decode_from_manifest(dec_manifest->c_str(), out.c_str(), &message);
      } else {
        Config config;
        config.apply(dec_flags);
        status = sage_cmd_decode(dec_corpus.c_str(), out.c_str(), dec_backend.c_str(), opt_c_str(dec_checkpoint),
                                 dec_mode.c_str(), config.get(), dec_jobs, dec_maps ? 1 : 0, &message);
      }
    } else if (rep->parsed()) {
      status = sage_cmd_report(rep_traces.c_str(), opt_c_str(rep_ann), opt_c_str(rep_out), rep_window, &message);
    } else if (lay->parsed()) {
      Config config;
      config.set("trigger", "off");
      config.apply(lay_flags);
      status = sage_cmd_layer_analysis(lay_corpus.c_str(), lay_out.c_str(), lay_backend.c_str(),
                                       opt_c_str(lay_checkpoint), config.get(), &message);
    }
  } catch (sage_status s) {
    status = s;
  }
  return report(status, message);
}
