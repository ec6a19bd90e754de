#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "sdetr/attention.hpp"
#include "sdetr/config.hpp"
#include "sdetr/tensor.hpp"

namespace sdetr {

/// Ordered collection of named trainable leaves.
class ParameterStore {
 public:
  Tensor add(std::string name, Shape shape, std::vector<double> values);
  const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
  std::vector<Tensor> tensors() const;
  std::size_t parameter_count() const;
  Tensor find(const std::string& name) const;  // throws when absent
  void zero_grad();

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
};

/// Per-forward state: dropout on/off and the generator that drives it.
struct ForwardContext {
  bool training = false;
  double dropout = 0.0;
  std::mt19937_64* rng = nullptr;

  Tensor drop(const Tensor& x) const;
  AttentionOptions attention() const;
};

struct Linear {
  Tensor weight;  // in × out
  Tensor bias;    // out; unused when has_bias is false
  bool has_bias = true;

  static Linear create(ParameterStore& store, const std::string& name, std::size_t in,
                       std::size_t out, std::mt19937_64& rng, bool with_bias = true);
  Tensor operator()(const Tensor& x) const;
};

struct LayerNorm {
  Tensor gamma;
  Tensor beta;

  static LayerNorm create(ParameterStore& store, const std::string& name, std::size_t width);
  Tensor operator()(const Tensor& x) const;
};

/// Input projections, per-head scaled dot-product attention, output projection.
/// The key projection has no bias: it would shift each score row by a constant,
/// which the softmax cancels.
struct MultiHeadAttention {
  Linear q_proj, k_proj, v_proj, out_proj;
  std::size_t heads = 1;

  static MultiHeadAttention create(ParameterStore& store, const std::string& name,
                                   std::size_t width, std::size_t heads, std::mt19937_64& rng);
  Tensor operator()(const Tensor& query, const Tensor& key, const Tensor& value,
                    const ForwardContext& ctx, CostCounters* counters = nullptr) const;
};

/// Post-norm encoder layer: positions are added to queries and keys only.
struct EncoderLayer {
  MultiHeadAttention self_attn;
  Linear ffn_in, ffn_out;
  LayerNorm norm1, norm2;

  static EncoderLayer create(ParameterStore& store, const std::string& name, std::size_t width,
                             std::size_t ffn_width, std::size_t heads, std::mt19937_64& rng);
  Tensor operator()(const Tensor& tokens, const Tensor& pos, const ForwardContext& ctx) const;
};

/// Post-norm decoder layer: query self-attention, cross-attention into memory, FFN.
struct DecoderLayer {
  MultiHeadAttention self_attn, cross_attn;
  Linear ffn_in, ffn_out;
  LayerNorm norm1, norm2, norm3;

  static DecoderLayer create(ParameterStore& store, const std::string& name, std::size_t width,
                             std::size_t ffn_width, std::size_t heads, std::mt19937_64& rng);
  Tensor operator()(const Tensor& queries, const Tensor& query_pos, const Tensor& memory,
                    const Tensor& memory_pos, const ForwardContext& ctx) const;
};

struct ConvLayer {
  Tensor weight;  // out × in × 3 × 3
  Tensor bias;
  static ConvLayer create(ParameterStore& store, const std::string& name, std::size_t in,
                          std::size_t out, std::mt19937_64& rng);
};

struct BackboneFeatures {
  Tensor feat3;  // C × H/16 × W/16
  Tensor feat4;  // C × H/32 × W/32
};

/// Stride-2 3×3 conv stack 3→16→32→64→C→C. The fourth conv is the
/// stride-16 tap, the fifth (a further downsampling of it) the stride-32 tap.
struct Backbone {
  std::vector<ConvLayer> stages;

  static Backbone create(ParameterStore& store, std::size_t channels, std::mt19937_64& rng);
  BackboneFeatures operator()(const Tensor& image) const;
};

/// 2D sine/cosine encoding for an h×w token grid, rows in row-major token order.
/// The first d/2 channels encode the row index, the rest the column index, as
/// interleaved (sin, cos) pairs with frequencies 10000^(-2i/(d/2)).
Tensor positional_encoding(std::size_t h_tokens, std::size_t w_tokens, std::size_t d);

/// [C×h×w] feature map -> [h·w × C] token rows.
Tensor flatten_tokens(const Tensor& feature_map);

struct Predictions {
  Tensor class_logits;  // n_queries × (n_classes + 1); last column is "no object"
  Tensor boxes;         // n_queries × 4, (cx, cy, w, h) in (0, 1)
};

/// One Predictions per decoder layer, in execution order; the last is the model output.
struct ModelOutput {
  std::vector<Predictions> per_layer;
  const Predictions& final() const { return per_layer.back(); }
};

/// Two-level stacked detector.
///
/// The stride-32 features run through M1 encoders (h1 heads) and the stride-16
/// features through M2 encoders (h3 heads); the two encoder lines are
/// independent. One query stream, zero at the start, passes N1 decoders (h2
/// heads) reading the level-4 memory and then N2 decoders (h4 heads) reading
/// the level-3 memory. With M2 = 0 the level-3 decoders read the projected,
/// position-encoded stride-16 tokens directly.
class SdetrModel {
 public:
  SdetrModel(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  ParameterStore& parameters() { return store_; }
  const ParameterStore& parameters() const { return store_; }

  /// image is 3×H×W with H, W multiples of 32.
  ModelOutput forward(const Tensor& image, const ForwardContext& ctx) const;

  void save(const std::filesystem::path& path) const;
  static SdetrModel load(const std::filesystem::path& path);

 private:
  Predictions predict(const Tensor& decoded) const;

  ModelConfig config_;
  ParameterStore store_;
  Backbone backbone_;
  Linear proj4_, proj3_;
  std::vector<EncoderLayer> enc4_, enc3_;
  std::vector<DecoderLayer> dec4_, dec3_;
  Tensor query_pos4_, query_pos3_;
  LayerNorm decoder_norm_;
  Linear class_head_;
  Linear box_mlp1_, box_mlp2_, box_mlp3_;
};

nlohmann::json to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::json& j);

}  // namespace sdetr
