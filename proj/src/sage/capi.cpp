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

#include "sage/sage.h"

#include <cstdlib>
#include <cstring>
#include <memory>
#include <new>
#include <string>

#include "sage/decoder.hpp"
#include "sage/error.hpp"
#include "sage/harness.hpp"
#include "sage/oracle_vlm.hpp"
#include "sage/toy_vlm.hpp"

struct sage_config {
  sage::SageConfig value;
};

struct sage_model {
  std::shared_ptr<const sage::VlmModel> model;
};

struct sage_trace {
  sage::DecodeTrace trace;
};

namespace {

thread_local std::string g_last_error;

sage_status fail(sage_status s, const std::string& what) {
  g_last_error = what;
  return s;
}

template <typename Fn>
sage_status guarded(Fn&& fn) {
  g_last_error.clear();
  try {
    return fn();
  } catch (const sage::Error& e) {
    return fail(static_cast<sage_status>(e.code()), e.what());
  } catch (const std::bad_alloc&) {
    return fail(SAGE_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(SAGE_ERR_INTERNAL, e.what());
  } catch (...) {
    return fail(SAGE_ERR_INTERNAL, "unknown exception");
  }
}

char* dup(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

void require(const void* p, const char* what) {
  if (!p) throw sage::ArgumentError(std::string(what) + " must not be NULL");
}

sage_status finish(const sage::CommandResult& r, char** message) {
  if (message) *message = dup(r.message);
  if (r.exit_code != 0) return fail(static_cast<sage_status>(r.exit_code), r.message);
  return SAGE_OK;
}

}  // namespace

extern "C" {

const char* sage_version(void) { return sage::kVersion; }

const char* sage_status_name(sage_status status) {
  switch (status) {
    case SAGE_OK:
      return "ok";
    case SAGE_ERR_INVALID_ARGUMENT:
      return "invalid argument";
    case SAGE_ERR_DIMENSION:
      return "dimension error";
    case SAGE_ERR_DEGENERATE_MASK:
      return "degenerate mask";
    case SAGE_ERR_STATE:
      return "state error";
    case SAGE_ERR_IO:
      return "i/o error";
    case SAGE_ERR_PARSE:
      return "parse error";
    case SAGE_ERR_NO_DATA:
      return "no data";
    case SAGE_ERR_MISSING:
      return "missing data";
    case SAGE_ERR_INTERNAL:
      return "internal error";
  }
  return "unknown status";
}

const char* sage_last_error(void) { return g_last_error.c_str(); }

void sage_string_free(char* s) { std::free(s); }

sage_status sage_default_output_root(char** out) {
  return guarded([&] {
    require(out, "out");
    *out = dup(sage::default_output_root());
    return SAGE_OK;
  });
}

// ---- configuration ----

sage_status sage_config_create(sage_config** out) {
  return guarded([&] {
    require(out, "out");
    *out = new sage_config{};
    return SAGE_OK;
  });
}

void sage_config_destroy(sage_config* config) { delete config; }

sage_status sage_config_set(sage_config* config, const char* key, const char* value) {
  return guarded([&] {
    require(config, "config");
    require(key, "key");
    require(value, "value");
    sage::SageConfig next = config->value;
    next.set(key, value);
    config->value = std::move(next);
    return SAGE_OK;
  });
}

sage_status sage_config_load(sage_config* config, const char* path) {
  return guarded([&] {
    require(config, "config");
    require(path, "path");
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(sage::read_text(path));
    } catch (const nlohmann::json::exception& e) {
      throw sage::ParseError(std::string(path) + ": " + e.what());
    }
    sage::SageConfig next = config->value;
    next.merge_json(j);
    config->value = std::move(next);
    return SAGE_OK;
  });
}

sage_status sage_config_validate(const sage_config* config) {
  return guarded([&] {
    require(config, "config");
    config->value.validate();
    return SAGE_OK;
  });
}

sage_status sage_config_to_json(const sage_config* config, char** out) {
  return guarded([&] {
    require(config, "config");
    require(out, "out");
    *out = dup(config->value.to_json().dump());
    return SAGE_OK;
  });
}

// ---- models ----

sage_status sage_model_create_toy(const char* vlm_config_json, sage_model** out) {
  return guarded([&] {
    require(out, "out");
    sage::VlmConfig vc;
    if (vlm_config_json) {
      try {
        vc = sage::VlmConfig::from_json(nlohmann::json::parse(vlm_config_json));
      } catch (const nlohmann::json::exception& e) {
        throw sage::ParseError(std::string("toy config: ") + e.what());
      }
    }
    *out = new sage_model{std::make_shared<sage::ToyVlm>(vc, sage::default_vocabulary())};
    return SAGE_OK;
  });
}

sage_status sage_model_load_checkpoint(const char* prefix, sage_model** out) {
  return guarded([&] {
    require(prefix, "prefix");
    require(out, "out");
    *out = new sage_model{
        std::make_shared<sage::ToyVlm>(sage::ToyVlm::load_checkpoint(prefix, sage::default_vocabulary()))};
    return SAGE_OK;
  });
}

sage_status sage_model_save_checkpoint(const sage_model* model, const char* prefix) {
  return guarded([&] {
    require(model, "model");
    require(prefix, "prefix");
    const auto* toy = dynamic_cast<const sage::ToyVlm*>(model->model.get());
    if (!toy) throw sage::ArgumentError("only toy models have checkpoints");
    toy->save_checkpoint(prefix);
    return SAGE_OK;
  });
}

sage_status sage_model_create_oracle(const char* script_path, sage_model** out) {
  return guarded([&] {
    require(script_path, "script_path");
    require(out, "out");
    *out = new sage_model{
        std::make_shared<sage::OracleVlm>(sage::OracleScript::load(script_path), sage::default_vocabulary())};
    return SAGE_OK;
  });
}

void sage_model_destroy(sage_model* model) { delete model; }

sage_status sage_model_info(const sage_model* model, size_t* grid, size_t* layers, size_t* heads) {
  return guarded([&] {
    require(model, "model");
    if (grid) *grid = model->model->grid();
    if (layers) *layers = model->model->decoder_layers();
    if (heads) *heads = model->model->heads();
    return SAGE_OK;
  });
}

// ---- decoding ----

sage_status sage_decode(const sage_model* model, const double* pixels, size_t height, size_t width, size_t channels,
                        const sage_config* config, sage_trace** out) {
  return guarded([&] {
    require(model, "model");
    require(config, "config");
    require(out, "out");
    *out = nullptr;
    const std::size_t n = height * width * channels;
    if (n > 0) require(pixels, "pixels");
    sage::Image image{height, width, channels, std::vector<double>(pixels, pixels + n)};
    const auto prompt = model->model->vocab().tokenize(config->value.prompt);
    sage::DecodeRun run = sage::run_decode(*model->model, image, prompt, config->value);
    *out = new sage_trace{std::move(run.trace)};
    if (run.error) return fail(SAGE_ERR_STATE, *run.error);
    return SAGE_OK;
  });
}

void sage_trace_destroy(sage_trace* trace) { delete trace; }

sage_status sage_trace_jsonl(const sage_trace* trace, char** out) {
  return guarded([&] {
    require(trace, "trace");
    require(out, "out");
    *out = dup(trace->trace.to_jsonl());
    return SAGE_OK;
  });
}

sage_status sage_trace_caption(const sage_trace* trace, char** out) {
  return guarded([&] {
    require(trace, "trace");
    require(out, "out");
    *out = dup(trace->trace.caption());
    return SAGE_OK;
  });
}

size_t sage_trace_token_count(const sage_trace* trace) { return trace ? trace->trace.tokens.size() : 0; }

size_t sage_trace_grounding_count(const sage_trace* trace) { return trace ? trace->trace.reports.size() : 0; }

// ---- commands ----

sage_status sage_cmd_generate(const char* out_dir, size_t size, uint64_t seed, size_t grid, const char* profile,
                              int64_t scripted, char** message) {
  return guarded([&] {
    require(out_dir, "out_dir");
    sage::GenerateOptions opt;
    opt.out_dir = out_dir;
    opt.spec.size = size;
    opt.spec.seed = seed;
    opt.spec.grid = grid;
    if (profile) opt.spec.profile = sage::parse_corpus_profile(profile);
    if (scripted >= 0) opt.spec.scripted = static_cast<std::size_t>(scripted);
    return finish(sage::cmd_generate(opt), message);
  });
}

sage_status sage_cmd_decode(const char* corpus_dir, const char* out_dir, const char* backend, const char* checkpoint,
                            const char* mode, const sage_config* config, size_t jobs, int emit_maps, char** message) {
  return guarded([&] {
    require(corpus_dir, "corpus_dir");
    require(out_dir, "out_dir");
    require(config, "config");
    sage::DecodeOptions opt;
    opt.corpus_dir = corpus_dir;
    opt.out_dir = out_dir;
    if (backend) opt.backend = sage::parse_backend(backend);
    if (checkpoint) opt.checkpoint = checkpoint;
    if (mode) opt.mode = sage::parse_decode_mode(mode);
    opt.config = config->value;
    opt.jobs = jobs;
    opt.emit_maps = emit_maps != 0;
    return finish(sage::cmd_decode(opt), message);
  });
}

sage_status sage_cmd_decode_from_manifest(const char* manifest_path, const char* out_dir, char** message) {
  return guarded([&] {
    require(manifest_path, "manifest_path");
    require(out_dir, "out_dir");
    return finish(sage::cmd_decode_from_manifest(manifest_path, out_dir), message);
  });
}

sage_status sage_cmd_report(const char* traces_dir, const char* annotations, const char* out_dir, size_t window,
                            char** message) {
  return guarded([&] {
    require(traces_dir, "traces_dir");
    sage::ReportOptions opt;
    opt.traces_dir = traces_dir;
    if (annotations) opt.annotations = annotations;
    if (out_dir) opt.out_dir = out_dir;
    opt.window = window;
    return finish(sage::cmd_report(opt), message);
  });
}

sage_status sage_cmd_layer_analysis(const char* corpus_dir, const char* out_csv, const char* backend,
                                    const char* checkpoint, const sage_config* config, char** message) {
  return guarded([&] {
    require(corpus_dir, "corpus_dir");
    require(out_csv, "out_csv");
    require(config, "config");
    sage::LayerAnalysisOptions opt;
    opt.corpus_dir = corpus_dir;
    opt.out_csv = out_csv;
    if (backend) opt.backend = sage::parse_backend(backend);
    if (checkpoint) opt.checkpoint = checkpoint;
    opt.config = config->value;
    return finish(sage::cmd_layer_analysis(opt), message);
  });
}

}  // extern "C"
