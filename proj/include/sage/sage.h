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

#ifndef SAGE_SAGE_H
#define SAGE_SAGE_H

/* C interface to the sink-aware grounded decoding engine.
 *
 * Handles are opaque. Every fallible call returns a sage_status; on failure
 * sage_last_error() describes the most recent error on the calling thread.
 * Strings returned through char** must be released with sage_string_free. */

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define SAGE_API __declspec(dllexport)
#else
#define SAGE_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum sage_status {
  SAGE_OK = 0,
  SAGE_ERR_INVALID_ARGUMENT = 1,
  SAGE_ERR_DIMENSION = 2,
  SAGE_ERR_DEGENERATE_MASK = 3,
  SAGE_ERR_STATE = 4,
  SAGE_ERR_IO = 5,
  SAGE_ERR_PARSE = 6,
  SAGE_ERR_NO_DATA = 7,
  SAGE_ERR_MISSING = 8,
  SAGE_ERR_INTERNAL = 9
} sage_status;

typedef struct sage_config sage_config;
typedef struct sage_model sage_model;
typedef struct sage_trace sage_trace;

SAGE_API const char* sage_version(void);
SAGE_API const char* sage_status_name(sage_status status);
/* Thread-local; empty when the last call succeeded. */
SAGE_API const char* sage_last_error(void);
SAGE_API void sage_string_free(char* s);

/* Directory named by SAGE_OUTPUT_ROOT, or "sage-out". */
SAGE_API sage_status sage_default_output_root(char** out);

/* ---- configuration ---- */

SAGE_API sage_status sage_config_create(sage_config** out);
SAGE_API void sage_config_destroy(sage_config* config);
/* Keys use the CLI spelling: "tau", "scale-reinforce", "trigger", "layers", ... */
SAGE_API sage_status sage_config_set(sage_config* config, const char* key, const char* value);
/* Overlays the fields of a JSON file. */
SAGE_API sage_status sage_config_load(sage_config* config, const char* path);
SAGE_API sage_status sage_config_validate(const sage_config* config);
SAGE_API sage_status sage_config_to_json(const sage_config* config, char** out);

/* ---- models ---- */

/* vlm_config_json may be NULL for the default toy geometry. */
SAGE_API sage_status sage_model_create_toy(const char* vlm_config_json, sage_model** out);
SAGE_API sage_status sage_model_load_checkpoint(const char* prefix, sage_model** out);
SAGE_API sage_status sage_model_save_checkpoint(const sage_model* model, const char* prefix);
SAGE_API sage_status sage_model_create_oracle(const char* script_path, sage_model** out);
SAGE_API void sage_model_destroy(sage_model* model);
SAGE_API sage_status sage_model_info(const sage_model* model, size_t* grid, size_t* layers, size_t* heads);

/* ---- decoding ---- */

/* pixels: height x width x channels, row-major. The prompt comes from the
 * config. A model failure mid-decode still yields a trace holding the
 * completed steps together with SAGE_ERR_STATE. */
SAGE_API sage_status sage_decode(const sage_model* model, const double* pixels, size_t height, size_t width,
                                 size_t channels, const sage_config* config, sage_trace** out);
SAGE_API void sage_trace_destroy(sage_trace* trace);
SAGE_API sage_status sage_trace_jsonl(const sage_trace* trace, char** out);
SAGE_API sage_status sage_trace_caption(const sage_trace* trace, char** out);
SAGE_API size_t sage_trace_token_count(const sage_trace* trace);
SAGE_API size_t sage_trace_grounding_count(const sage_trace* trace);

/* ---- commands ----
 * Each writes a one-line summary to *message when message is non-NULL. */

/* scripted < 0 scripts every scene. profile: "standard" or "adversarial". */
SAGE_API sage_status sage_cmd_generate(const char* out_dir, size_t size, uint64_t seed, size_t grid, const char* profile,
                                       int64_t scripted, char** message);

/* backend: "oracle" or "toy"; checkpoint may be NULL; mode: "sage",
 * "baseline", "reinforce-only" or "diffuse-only". */
SAGE_API sage_status sage_cmd_decode(const char* corpus_dir, const char* out_dir, const char* backend,
                                     const char* checkpoint, const char* mode, const sage_config* config, size_t jobs,
                                     int emit_maps, char** message);
SAGE_API sage_status sage_cmd_decode_from_manifest(const char* manifest_path, const char* out_dir, char** message);

/* annotations and out_dir may be NULL. */
SAGE_API sage_status sage_cmd_report(const char* traces_dir, const char* annotations, const char* out_dir,
                                     size_t window, char** message);

SAGE_API sage_status sage_cmd_layer_analysis(const char* corpus_dir, const char* out_csv, const char* backend,
                                             const char* checkpoint, const sage_config* config, char** message);

#ifdef __cplusplus
}
#endif

#endif /* SAGE_SAGE_H */
