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

// Command implementations behind the CLI: corpus generation, batch decoding
// with run manifests, metric reports and layer analysis.

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "sage/decoder.hpp"
#include "sage/scenario.hpp"
#include "sage/toy_vlm.hpp"

namespace sage {

inline constexpr const char* kVersion = "0.1.0";
inline constexpr const char* kOutputRootEnv = "SAGE_OUTPUT_ROOT";

// $SAGE_OUTPUT_ROOT, or "sage-out" when unset or empty.
std::string default_output_root();

enum class Backend { kOracle, kToy };
std::string_view to_string(Backend b);
Backend parse_backend(const std::string& s);

// Preset overrides on top of a SageConfig.
enum class DecodeMode { kSage, kBaseline, kReinforceOnly, kDiffuseOnly };
std::string_view to_string(DecodeMode m);
DecodeMode parse_decode_mode(const std::string& s);
SageConfig apply_mode(SageConfig config, DecodeMode mode);

struct CommandResult {
  int exit_code = 0;  // 0 or an ErrorCode value
  std::string message;
};

struct GenerateOptions {
  CorpusSpec spec;
  std::string out_dir;
};

CommandResult cmd_generate(const GenerateOptions& opt);

struct DecodeOptions {
  std::string corpus_dir;
  std::string out_dir;
  Backend backend = Backend::kOracle;
  std::optional<std::string> checkpoint;  // toy backend only
  DecodeMode mode = DecodeMode::kSage;
  SageConfig config;
  std::size_t jobs = 1;
  bool emit_maps = false;

  nlohmann::json to_json() const;
  // Rebuilds the options recorded in a run manifest; `out_dir` is left empty.
  static DecodeOptions from_manifest(const nlohmann::json& manifest);
};

// Builds the model for one image. Toy models are shared across images.
class ModelFactory {
 public:
  ModelFactory(const Corpus& corpus, Backend backend, const std::optional<std::string>& checkpoint,
               const SageConfig& config);
  // Nullptr when the oracle backend has no script for `id`.
  std::shared_ptr<const VlmModel> model_for(const std::string& id) const;
  const ToyVlm* toy() const { return toy_.get(); }

 private:
  const Corpus& corpus_;
  Backend backend_;
  std::shared_ptr<const ToyVlm> toy_;
};

CommandResult cmd_decode(const DecodeOptions& opt);
CommandResult cmd_decode_from_manifest(const std::string& manifest_path, const std::string& out_dir);

struct ReportOptions {
  std::string traces_dir;
  std::string annotations;
  std::string out_dir;  // defaults to traces_dir
  std::size_t window = 5;
};

// Writes report.csv and summary.json. Exit code kNoData for an empty trace
// set and kMissing when an expected trace is absent.
CommandResult cmd_report(const ReportOptions& opt);

struct LayerAnalysisOptions {
  std::string corpus_dir;
  std::string out_csv;
  Backend backend = Backend::kOracle;
  std::optional<std::string> checkpoint;
  SageConfig config;  // trigger defaults to off in the CLI
};

CommandResult cmd_layer_analysis(const LayerAnalysisOptions& opt);

}  // namespace sage
