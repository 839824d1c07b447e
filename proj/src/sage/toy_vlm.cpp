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

#include "sage/toy_vlm.hpp"

#include <bit>
#include <chrono>
#include <cmath>
#include <fstream>

#include "sage/error.hpp"
#include "sage/rng.hpp"

namespace sage {

namespace {

struct ToyCache {
  std::vector<DiffTensor> keys;    // per layer, [context, D]
  std::vector<DiffTensor> values;  // per layer, [context, D]
};

std::string concept_mode_name(ConceptLogitMode m) { return m == ConceptLogitMode::kSum ? "sum" : "first"; }

ConceptLogitMode parse_concept_mode(const std::string& s) {
  if (s == "sum") return ConceptLogitMode::kSum;
  if (s == "first") return ConceptLogitMode::kFirstToken;
  throw ParseError("concept_logit must be 'sum' or 'first', got '" + s + "'");
}

// Multi-head attention of all rows of `h` over themselves.
DiffTensor full_attention(const DiffTensor& h, const DiffTensor& wq, const DiffTensor& wk, const DiffTensor& wv,
                          const DiffTensor& wo, std::size_t heads, const std::optional<RowMask>& mask,
                          DiffTensor* keys_out, DiffTensor* values_out) {
  const DiffTensor q = matmul(h, wq);
  const DiffTensor k = matmul(h, wk);
  const DiffTensor v = matmul(h, wv);
  if (keys_out) *keys_out = k;
  if (values_out) *values_out = v;
  const std::size_t dim = q.cols(), dk = dim / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dk));
  std::vector<DiffTensor> outs;
  outs.reserve(heads);
  for (std::size_t hd = 0; hd < heads; ++hd) {
    const DiffTensor qh = slice_cols(q, hd * dk, (hd + 1) * dk);
    const DiffTensor kh = slice_cols(k, hd * dk, (hd + 1) * dk);
    const DiffTensor vh = slice_cols(v, hd * dk, (hd + 1) * dk);
    const DiffTensor a = softmax_rows(scale(matmul(qh, transpose(kh)), inv_sqrt), mask);
    outs.push_back(matmul(a, vh));
  }
  return matmul(concat_cols(outs), wo);
}

DiffTensor mlp(const DiffTensor& x, const DiffTensor& w1, const DiffTensor& w2) {
  return matmul(gelu(matmul(layer_norm(x), w1)), w2);
}

}  // namespace

// ---- VlmConfig -------------------------------------------------------------

void VlmConfig::validate() const {
  if (patch_size == 0 || image_size == 0 || image_size % patch_size != 0) {
    throw ArgumentError("image_size " + std::to_string(image_size) + " must be a positive multiple of patch_size " +
                        std::to_string(patch_size));
  }
  if (channels == 0) throw ArgumentError("channels must be positive");
  if (heads == 0 || embed_dim == 0 || embed_dim % heads != 0) {
    throw ArgumentError("embed_dim " + std::to_string(embed_dim) + " must be divisible by heads " +
                        std::to_string(heads));
  }
  if (decoder_layers == 0) throw ArgumentError("decoder_layers must be positive");
  if (mlp_ratio == 0) throw ArgumentError("mlp_ratio must be positive");
  if (max_new_tokens == 0) throw ArgumentError("max_new_tokens must be positive");
  if (!(init_std > 0.0)) throw ArgumentError("init_std must be positive");
}

nlohmann::json VlmConfig::to_json() const {
  return {{"image_size", image_size},
          {"patch_size", patch_size},
          {"channels", channels},
          {"vision_layers", vision_layers},
          {"decoder_layers", decoder_layers},
          {"heads", heads},
          {"embed_dim", embed_dim},
          {"mlp_ratio", mlp_ratio},
          {"seed", seed},
          {"max_new_tokens", max_new_tokens},
          {"max_prompt_tokens", max_prompt_tokens},
          {"init_std", init_std},
          {"concept_logit", concept_mode_name(concept_logit)}};
}

VlmConfig VlmConfig::from_json(const nlohmann::json& j) {
  VlmConfig c;
  try {
    c.image_size = j.value("image_size", c.image_size);
    c.patch_size = j.value("patch_size", c.patch_size);
    c.channels = j.value("channels", c.channels);
    c.vision_layers = j.value("vision_layers", c.vision_layers);
    c.decoder_layers = j.value("decoder_layers", c.decoder_layers);
    c.heads = j.value("heads", c.heads);
    c.embed_dim = j.value("embed_dim", c.embed_dim);
    c.mlp_ratio = j.value("mlp_ratio", c.mlp_ratio);
    c.seed = j.value("seed", c.seed);
    c.max_new_tokens = j.value("max_new_tokens", c.max_new_tokens);
    c.max_prompt_tokens = j.value("max_prompt_tokens", c.max_prompt_tokens);
    c.init_std = j.value("init_std", c.init_std);
    c.concept_logit = parse_concept_mode(j.value("concept_logit", std::string("sum")));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

// ---- construction ----------------------------------------------------------

ToyVlm::ToyVlm(VlmConfig config, Vocabulary vocab) : config_(std::move(config)), vocab_(std::move(vocab)) {
  config_.validate();
  Rng rng(config_.seed);
  const std::size_t d = config_.embed_dim, hidden = d * config_.mlp_ratio;
  auto init = [&](const std::string& name, Shape shape) {
    std::vector<double> v(shape_numel(shape));
    for (double& x : v) x = rng.normal(0.0, config_.init_std);
    weights_.emplace_back(name, DiffTensor::constant(std::move(shape), std::move(v)));
  };
  const std::size_t patch_in = config_.patch_size * config_.patch_size * config_.channels;
  init("vision.patch", {patch_in, d});
  init("vision.pos", {config_.image_tokens(), d});
  auto init_layer = [&](const std::string& prefix) {
    init(prefix + ".wq", {d, d});
    init(prefix + ".wk", {d, d});
    init(prefix + ".wv", {d, d});
    init(prefix + ".wo", {d, d});
    init(prefix + ".w1", {d, hidden});
    init(prefix + ".w2", {hidden, d});
  };
  for (std::size_t l = 0; l < config_.vision_layers; ++l) init_layer("vision." + std::to_string(l));
  init("proj", {d, d});
  init("text.tok", {vocab_.size(), d});
  init("text.pos", {config_.max_context(), d});
  for (std::size_t l = 0; l < config_.decoder_layers; ++l) init_layer("decoder." + std::to_string(l));
  init("lm_head", {d, vocab_.size()});
  bind();
}

ToyVlm::ToyVlm(VlmConfig config, Vocabulary vocab, std::vector<std::pair<std::string, DiffTensor>> weights)
    : config_(std::move(config)), vocab_(std::move(vocab)), weights_(std::move(weights)) {
  config_.validate();
  bind();
}

const DiffTensor& ToyVlm::weight(const std::string& name) const {
  for (const auto& [n, t] : weights_)
    if (n == name) return t;
  throw ArgumentError("missing weight '" + name + "'");
}

void ToyVlm::bind() {
  const std::size_t d = config_.embed_dim, hidden = d * config_.mlp_ratio;
  auto expect = [&](const std::string& name, Shape shape) {
    const DiffTensor& t = weight(name);
    if (t.shape() != shape) {
      throw DimensionError("weight '" + name + "' has shape " + shape_to_string(t.shape()) + ", expected " +
                           shape_to_string(shape));
    }
    return t;
  };
  auto layer = [&](const std::string& p) {
    return Layer{expect(p + ".wq", {d, d}),      expect(p + ".wk", {d, d}),      expect(p + ".wv", {d, d}),
                 expect(p + ".wo", {d, d}),      expect(p + ".w1", {d, hidden}), expect(p + ".w2", {hidden, d})};
  };
  patch_w_ = expect("vision.patch", {config_.patch_size * config_.patch_size * config_.channels, d});
  vision_pos_ = expect("vision.pos", {config_.image_tokens(), d});
  proj_ = expect("proj", {d, d});
  tok_emb_ = expect("text.tok", {vocab_.size(), d});
  text_pos_ = expect("text.pos", {config_.max_context(), d});
  lm_head_ = expect("lm_head", {d, vocab_.size()});
  vision_layers_.clear();
  decoder_layers_.clear();
  for (std::size_t l = 0; l < config_.vision_layers; ++l) vision_layers_.push_back(layer("vision." + std::to_string(l)));
  for (std::size_t l = 0; l < config_.decoder_layers; ++l)
    decoder_layers_.push_back(layer("decoder." + std::to_string(l)));
}

// ---- checkpoint ------------------------------------------------------------

void ToyVlm::save_checkpoint(const std::string& prefix) const {
  static_assert(std::endian::native == std::endian::little, "checkpoint format is little-endian float64");
  nlohmann::json manifest;
  manifest["format"] = "sage-toy-checkpoint/1";
  manifest["config"] = config_.to_json();
  manifest["vocab"] = vocab_.to_json();
  manifest["tensors"] = nlohmann::json::array();
  std::ofstream bin(prefix + ".bin", std::ios::binary);
  if (!bin) throw IoError("cannot write " + prefix + ".bin");
  std::size_t offset = 0;
  for (const auto& [name, t] : weights_) {
    manifest["tensors"].push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}});
    bin.write(reinterpret_cast<const char*>(t.values().data()), static_cast<std::streamsize>(t.numel() * sizeof(double)));
    offset += t.numel();
  }
  if (!bin) throw IoError("short write to " + prefix + ".bin");
  std::ofstream js(prefix + ".json");
  if (!js) throw IoError("cannot write " + prefix + ".json");
  js << manifest.dump(2) << '\n';
}

ToyVlm ToyVlm::load_checkpoint(const std::string& prefix, Vocabulary vocab) {
  std::ifstream js(prefix + ".json");
  if (!js) throw IoError("cannot read " + prefix + ".json");
  nlohmann::json manifest;
  try {
    js >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(prefix + ".json: " + e.what());
  }
  if (manifest.value("format", "") != "sage-toy-checkpoint/1") throw ParseError(prefix + ".json: unknown format");
  VlmConfig config = VlmConfig::from_json(manifest.at("config"));
  if (manifest.contains("vocab")) vocab = Vocabulary::from_json(manifest.at("vocab"));

  std::ifstream bin(prefix + ".bin", std::ios::binary | std::ios::ate);
  if (!bin) throw IoError("cannot read " + prefix + ".bin");
  const auto bytes = static_cast<std::size_t>(bin.tellg());
  if (bytes % sizeof(double) != 0) throw ParseError(prefix + ".bin: size is not a multiple of 8 bytes");
  std::vector<double> flat(bytes / sizeof(double));
  bin.seekg(0);
  bin.read(reinterpret_cast<char*>(flat.data()), static_cast<std::streamsize>(bytes));

  std::vector<std::pair<std::string, DiffTensor>> weights;
  for (const auto& entry : manifest.at("tensors")) {
    Shape shape = entry.at("shape").get<Shape>();
    const std::size_t offset = entry.at("offset").get<std::size_t>();
    const std::size_t n = shape_numel(shape);
    if (offset + n > flat.size()) throw ParseError(prefix + ".bin: tensor '" + entry.at("name").get<std::string>() + "' out of range");
    std::vector<double> v(flat.begin() + static_cast<std::ptrdiff_t>(offset),
                          flat.begin() + static_cast<std::ptrdiff_t>(offset + n));
    weights.emplace_back(entry.at("name").get<std::string>(), DiffTensor::constant(std::move(shape), std::move(v)));
  }
  return ToyVlm(std::move(config), std::move(vocab), std::move(weights));
}

// ---- vision encoder --------------------------------------------------------

DiffTensor ToyVlm::patch_embed(const Image& image) const {
  const std::size_t s = config_.image_size, p = config_.patch_size, ch = config_.channels, g = config_.grid();
  if (image.height != s || image.width != s || image.channels != ch || image.pixels.size() != s * s * ch) {
    throw DimensionError("image is " + std::to_string(image.height) + "x" + std::to_string(image.width) + "x" +
                         std::to_string(image.channels) + ", model expects " + std::to_string(s) + "x" +
                         std::to_string(s) + "x" + std::to_string(ch));
  }
  const std::size_t patch_in = p * p * ch;
  std::vector<double> patches(g * g * patch_in);
  for (std::size_t pr = 0; pr < g; ++pr)
    for (std::size_t pc = 0; pc < g; ++pc) {
      double* out = &patches[(pr * g + pc) * patch_in];
      for (std::size_t y = 0; y < p; ++y)
        for (std::size_t x = 0; x < p; ++x)
          for (std::size_t c = 0; c < ch; ++c)
            *out++ = image.pixels[((pr * p + y) * s + (pc * p + x)) * ch + c];
    }
  return add(matmul(DiffTensor::constant({g * g, patch_in}, std::move(patches)), patch_w_), vision_pos_);
}

DiffTensor ToyVlm::encoder_block(const DiffTensor& x, const Layer& layer) const {
  const DiffTensor attn =
      full_attention(layer_norm(x), layer.wq, layer.wk, layer.wv, layer.wo, config_.heads, std::nullopt, nullptr, nullptr);
  const DiffTensor y = add(x, attn);
  return add(y, mlp(y, layer.w1, layer.w2));
}

DiffTensor ToyVlm::encode_image(const Image& image) const {
  DiffTensor x = patch_embed(image);
  for (const auto& layer : vision_layers_) x = encoder_block(x, layer);
  return x;
}

// ---- decoding --------------------------------------------------------------

DecodeState ToyVlm::begin(const Image& image, std::span<const TokenId> prompt) const {
  const DiffTensor acts = encode_image(image);
  return begin_from_activations(acts.values(), prompt);
}

DecodeState ToyVlm::begin_from_activations(std::span<const double> activations,
                                           std::span<const TokenId> prompt) const {
  const std::size_t n_img = config_.image_tokens(), d = config_.embed_dim;
  if (activations.size() != n_img * d) {
    throw DimensionError("activations hold " + std::to_string(activations.size()) + " values, expected " +
                         std::to_string(n_img * d));
  }
  if (prompt.size() > config_.max_prompt_tokens) {
    throw ArgumentError("prompt has " + std::to_string(prompt.size()) + " tokens; limit is " +
                        std::to_string(config_.max_prompt_tokens));
  }
  for (TokenId t : prompt) (void)vocab_.text(t);

  DecodeState state;
  state.tape = Tape::create();
  state.vision_activations = state.tape->leaf({n_img, d}, std::vector<double>(activations.begin(), activations.end()));
  state.image_tokens = n_img;
  state.prompt.push_back(Vocabulary::kBegin);
  state.prompt.insert(state.prompt.end(), prompt.begin(), prompt.end());

  // Prefill everything except the newest prompt token; decode_step feeds it.
  DiffTensor x = matmul(state.vision_activations, proj_);
  if (state.prompt.size() > 1) {
    std::vector<std::size_t> ids(state.prompt.begin(), state.prompt.end() - 1);
    x = concat_rows(x, embedding_lookup(tok_emb_, ids));
  }
  const std::size_t n = x.rows();
  x = add(x, slice_rows(text_pos_, 0, n));
  const RowMask mask = RowMask::causal(n, n, 0);
  auto cache = std::make_shared<ToyCache>();
  for (const auto& layer : decoder_layers_) {
    DiffTensor k, v;
    const DiffTensor attn =
        full_attention(layer_norm(x), layer.wq, layer.wk, layer.wv, layer.wo, config_.heads, mask, &k, &v);
    cache->keys.push_back(k);
    cache->values.push_back(v);
    x = add(x, attn);
    x = add(x, mlp(x, layer.w1, layer.w2));
  }
  state.cache = cache;
  return state;
}

TokenId ToyVlm::decode_step(DecodeState& state, const ModulationDirective* directive) const {
  return step_impl(state, directive, std::nullopt);
}

TokenId ToyVlm::forced_step(DecodeState& state, const ModulationDirective* directive, TokenId forced) const {
  (void)vocab_.text(forced);
  return step_impl(state, directive, forced);
}

TokenId ToyVlm::step_impl(DecodeState& state, const ModulationDirective* directive,
                          std::optional<TokenId> forced) const {
  if (state.finished) throw StateError("decode already finished");
  if (state.step() >= config_.max_new_tokens) {
    throw StateError("exceeded max_new_tokens (" + std::to_string(config_.max_new_tokens) + ")");
  }
  auto cache = std::static_pointer_cast<ToyCache>(state.cache);
  const std::size_t ctx = state.context_length();
  if (!cache || cache->keys.size() != decoder_layers_.size() || cache->keys[0].rows() + 1 != ctx) {
    throw StateError("kv cache length does not match decode state");
  }
  if (ctx > config_.max_context()) throw StateError("context exceeds positional table");

  const TokenId query = state.generated.empty() ? state.prompt.back() : state.generated.back();
  const std::size_t qid = query;
  DiffTensor x = add(embedding_lookup(tok_emb_, std::span<const std::size_t>(&qid, 1)),
                     slice_rows(text_pos_, ctx - 1, ctx));

  const std::size_t dk = config_.head_dim();
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dk));
  StepAttention rows;
  rows.pre.resize(decoder_layers_.size());
  rows.post.resize(decoder_layers_.size());
  std::vector<double> weights;
  if (directive) weights = image_weights(directive->scale, state.image_tokens, ctx);

  for (std::size_t l = 0; l < decoder_layers_.size(); ++l) {
    const Layer& layer = decoder_layers_[l];
    const DiffTensor h = layer_norm(x);
    const DiffTensor q = matmul(h, layer.wq);
    cache->keys[l] = concat_rows(cache->keys[l], matmul(h, layer.wk));
    cache->values[l] = concat_rows(cache->values[l], matmul(h, layer.wv));
    const bool modulate = directive && directive->targets(l);
    std::vector<DiffTensor> outs;
    for (std::size_t hd = 0; hd < config_.heads; ++hd) {
      const DiffTensor qh = slice_cols(q, hd * dk, (hd + 1) * dk);
      const DiffTensor kh = slice_cols(cache->keys[l], hd * dk, (hd + 1) * dk);
      DiffTensor a = softmax_rows(scale(matmul(qh, transpose(kh)), inv_sqrt));
      rows.pre[l].emplace_back(a.values().begin(), a.values().end());
      if (modulate) {
        const auto t0 = std::chrono::steady_clock::now();
        a = reweight_rows(a, weights);
        state.modulation_ns +=
            std::chrono::duration_cast<std::chrono::nanoseconds>(std::chrono::steady_clock::now() - t0).count();
      }
      rows.post[l].emplace_back(a.values().begin(), a.values().end());
      outs.push_back(matmul(a, slice_cols(cache->values[l], hd * dk, (hd + 1) * dk)));
    }
    x = add(x, matmul(concat_cols(outs), layer.wo));
    x = add(x, mlp(x, layer.w1, layer.w2));
  }
  const DiffTensor logits = reshape(matmul(layer_norm(x), lm_head_), {vocab_.size()});
  const TokenId token = forced ? *forced : argmax_token(logits.values());

  state.generated.push_back(token);
  state.hallucinated.push_back(std::nullopt);
  state.logits.push_back(logits);
  state.attention_log.push_back(std::move(rows));
  state.applied.push_back(directive ? std::optional<ModulationDirective>(*directive) : std::nullopt);
  if (token == Vocabulary::kEnd) state.finished = true;
  return token;
}

DiffTensor ToyVlm::concept_logit(DecodeState& state, const Concept& cpt) const {
  check_concept_span(state, cpt);
  const std::size_t last =
      config_.concept_logit == ConceptLogitMode::kSum ? cpt.span.end : cpt.span.begin + 1;
  DiffTensor total = pick(state.logits[cpt.span.begin], state.generated[cpt.span.begin]);
  for (std::size_t s = cpt.span.begin + 1; s < last; ++s) total = add(total, pick(state.logits[s], state.generated[s]));
  return total;
}

double ToyVlm::replay_concept_logit(std::span<const double> activations, const DecodeState& reference,
                                    const Concept& cpt) const {
  const std::vector<TokenId> prompt(reference.prompt.begin() + 1, reference.prompt.end());
  DecodeState st = begin_from_activations(activations, prompt);
  for (std::size_t s = 0; s < cpt.span.end; ++s) {
    const auto& d = reference.applied.at(s);
    forced_step(st, d ? &*d : nullptr, reference.generated.at(s));
  }
  return concept_logit(st, cpt).item();
}

}  // namespace sage
