#include "sdetr/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "sdetr/ops.hpp"

namespace sdetr {

namespace {

std::vector<double> uniform_values(std::size_t n, double bound, std::mt19937_64& rng) {
  std::vector<double> v(n);
  for (auto& x : v) x = bound * (2.0 * uniform01(rng) - 1.0);
  return v;
}

}  // namespace

// ---------------------------------------------------------------------------
// Parameters

Tensor ParameterStore::add(std::string name, Shape shape, std::vector<double> values) {
  for (const auto& [existing, _] : entries_) {
    if (existing == name) throw ValidationError("duplicate parameter name " + name);
  }
  Tensor t = Tensor::parameter(std::move(shape), std::move(values));
  entries_.emplace_back(std::move(name), t);
  return t;
}

std::vector<Tensor> ParameterStore::tensors() const {
  std::vector<Tensor> out;
  out.reserve(entries_.size());
  for (const auto& [_, t] : entries_) out.push_back(t);
  return out;
}

std::size_t ParameterStore::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [_, t] : entries_) n += t.numel();
  return n;
}

Tensor ParameterStore::find(const std::string& name) const {
  for (const auto& [existing, t] : entries_) {
    if (existing == name) return t;
  }
  throw ValidationError("no parameter named " + name);
}

void ParameterStore::zero_grad() {
  for (auto& [_, t] : entries_) t.zero_grad();
}

Tensor ForwardContext::drop(const Tensor& x) const {
  if (!training || dropout <= 0.0) return x;
  return sdetr::dropout(x, dropout, *rng);
}

AttentionOptions ForwardContext::attention() const {
  if (!training || dropout <= 0.0) return {};
  return {dropout, rng};
}

// ---------------------------------------------------------------------------
// Building blocks

Linear Linear::create(ParameterStore& store, const std::string& name, std::size_t in,
                      std::size_t out, std::mt19937_64& rng, bool with_bias) {
  const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
  Linear l;
  l.weight = store.add(name + ".weight", {in, out}, uniform_values(in * out, bound, rng));
  l.has_bias = with_bias;
  if (with_bias) l.bias = store.add(name + ".bias", {out}, std::vector<double>(out, 0.0));
  return l;
}

Tensor Linear::operator()(const Tensor& x) const {
  Tensor y = matmul(x, weight);
  return has_bias ? add_row(y, bias) : y;
}

LayerNorm LayerNorm::create(ParameterStore& store, const std::string& name, std::size_t width) {
  LayerNorm n;
  n.gamma = store.add(name + ".gamma", {width}, std::vector<double>(width, 1.0));
  n.beta = store.add(name + ".beta", {width}, std::vector<double>(width, 0.0));
  return n;
}

Tensor LayerNorm::operator()(const Tensor& x) const { return layer_norm(x, gamma, beta, 1e-5); }

MultiHeadAttention MultiHeadAttention::create(ParameterStore& store, const std::string& name,
                                              std::size_t width, std::size_t heads,
                                              std::mt19937_64& rng) {
  MultiHeadAttention m;
  m.q_proj = Linear::create(store, name + ".q_proj", width, width, rng);
  m.k_proj = Linear::create(store, name + ".k_proj", width, width, rng, false);
  m.v_proj = Linear::create(store, name + ".v_proj", width, width, rng);
  m.out_proj = Linear::create(store, name + ".out_proj", width, width, rng);
  m.heads = heads;
  return m;
}

Tensor MultiHeadAttention::operator()(const Tensor& query, const Tensor& key, const Tensor& value,
                                      const ForwardContext& ctx, CostCounters* counters) const {
  Tensor a = attention_forward(q_proj(query), k_proj(key), v_proj(value), heads, counters,
                               ctx.attention());
  return out_proj(a);
}

EncoderLayer EncoderLayer::create(ParameterStore& store, const std::string& name,
                                  std::size_t width, std::size_t ffn_width, std::size_t heads,
                                  std::mt19937_64& rng) {
  EncoderLayer e;
  e.self_attn = MultiHeadAttention::create(store, name + ".self_attn", width, heads, rng);
  e.ffn_in = Linear::create(store, name + ".ffn_in", width, ffn_width, rng);
  e.ffn_out = Linear::create(store, name + ".ffn_out", ffn_width, width, rng);
  e.norm1 = LayerNorm::create(store, name + ".norm1", width);
  e.norm2 = LayerNorm::create(store, name + ".norm2", width);
  return e;
}

Tensor EncoderLayer::operator()(const Tensor& tokens, const Tensor& pos,
                                const ForwardContext& ctx) const {
  if (tokens.shape() != pos.shape()) {
    throw ShapeError("encoder layer: tokens " + to_string(tokens.shape()) + " vs positions " +
                     to_string(pos.shape()));
  }
  const Tensor qk = add(tokens, pos);
  Tensor x = norm1(add(tokens, ctx.drop(self_attn(qk, qk, tokens, ctx))));
  const Tensor hidden = ctx.drop(relu(ffn_in(x)));
  return norm2(add(x, ctx.drop(ffn_out(hidden))));
}

DecoderLayer DecoderLayer::create(ParameterStore& store, const std::string& name,
                                  std::size_t width, std::size_t ffn_width, std::size_t heads,
                                  std::mt19937_64& rng) {
  DecoderLayer d;
  d.self_attn = MultiHeadAttention::create(store, name + ".self_attn", width, heads, rng);
  d.cross_attn = MultiHeadAttention::create(store, name + ".cross_attn", width, heads, rng);
  d.ffn_in = Linear::create(store, name + ".ffn_in", width, ffn_width, rng);
  d.ffn_out = Linear::create(store, name + ".ffn_out", ffn_width, width, rng);
  d.norm1 = LayerNorm::create(store, name + ".norm1", width);
  d.norm2 = LayerNorm::create(store, name + ".norm2", width);
  d.norm3 = LayerNorm::create(store, name + ".norm3", width);
  return d;
}

Tensor DecoderLayer::operator()(const Tensor& queries, const Tensor& query_pos,
                                const Tensor& memory, const Tensor& memory_pos,
                                const ForwardContext& ctx) const {
  if (queries.shape() != query_pos.shape() || memory.shape() != memory_pos.shape()) {
    throw ShapeError("decoder layer: content and position shapes differ");
  }
  const Tensor qk = add(queries, query_pos);
  Tensor x = norm1(add(queries, ctx.drop(self_attn(qk, qk, queries, ctx))));
  const Tensor cross = cross_attn(add(x, query_pos), add(memory, memory_pos), memory, ctx);
  x = norm2(add(x, ctx.drop(cross)));
  const Tensor hidden = ctx.drop(relu(ffn_in(x)));
  return norm3(add(x, ctx.drop(ffn_out(hidden))));
}

ConvLayer ConvLayer::create(ParameterStore& store, const std::string& name, std::size_t in,
                            std::size_t out, std::mt19937_64& rng) {
  const std::size_t fan_in = in * 9;
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  ConvLayer c;
  c.weight = store.add(name + ".weight", {out, in, 3, 3}, uniform_values(out * fan_in, bound, rng));
  c.bias = store.add(name + ".bias", {out}, std::vector<double>(out, 0.0));
  return c;
}

Backbone Backbone::create(ParameterStore& store, std::size_t channels, std::mt19937_64& rng) {
  const std::size_t widths[] = {3, 16, 32, 64, channels, channels};
  Backbone b;
  for (std::size_t i = 0; i + 1 < std::size(widths); ++i) {
    b.stages.push_back(ConvLayer::create(store, "backbone.stage" + std::to_string(i), widths[i],
                                         widths[i + 1], rng));
  }
  return b;
}

BackboneFeatures Backbone::operator()(const Tensor& image) const {
  if (image.rank() != 3 || image.dim(0) != 3) {
    throw ShapeError("backbone expects a 3xHxW image, got " + to_string(image.shape()));
  }
  if (image.dim(1) % 32 != 0 || image.dim(2) % 32 != 0) {
    throw ValidationError("image " + std::to_string(image.dim(1)) + "x" +
                          std::to_string(image.dim(2)) + " is not divisible by 32");
  }
  Tensor x = image;
  BackboneFeatures out;
  for (std::size_t i = 0; i < stages.size(); ++i) {
    x = relu(conv2d(x, stages[i].weight, stages[i].bias, 2, 1));
    if (i == 3) out.feat3 = x;
  }
  out.feat4 = x;
  return out;
}

Tensor positional_encoding(std::size_t h_tokens, std::size_t w_tokens, std::size_t d) {
  if (d == 0 || d % 4 != 0) {
    throw ValidationError("positional encoding width " + std::to_string(d) +
                          " is not divisible by 4");
  }
  if (h_tokens == 0 || w_tokens == 0) throw ValidationError("empty token grid");
  const std::size_t half = d / 2;
  std::vector<double> freq(half);
  for (std::size_t k = 0; k < half; ++k) {
    freq[k] = std::pow(10000.0, -static_cast<double>(2 * (k / 2)) / static_cast<double>(half));
  }
  std::vector<double> out(h_tokens * w_tokens * d);
  for (std::size_t y = 0; y < h_tokens; ++y) {
    for (std::size_t x = 0; x < w_tokens; ++x) {
      double* row = out.data() + (y * w_tokens + x) * d;
      for (std::size_t k = 0; k < half; ++k) {
        const double ay = static_cast<double>(y) * freq[k];
        const double ax = static_cast<double>(x) * freq[k];
        row[k] = (k % 2 == 0) ? std::sin(ay) : std::cos(ay);
        row[half + k] = (k % 2 == 0) ? std::sin(ax) : std::cos(ax);
      }
    }
  }
  return Tensor({h_tokens * w_tokens, d}, std::move(out));
}

Tensor flatten_tokens(const Tensor& feature_map) {
  if (feature_map.rank() != 3) throw ShapeError("flatten_tokens expects C×h×w");
  const std::size_t c = feature_map.dim(0);
  const std::size_t hw = feature_map.dim(1) * feature_map.dim(2);
  return transpose(reshape(feature_map, {c, hw}));
}

// ---------------------------------------------------------------------------
// Stacked model

SdetrModel::SdetrModel(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  std::mt19937_64 rng(seed);
  const std::size_t d = config_.d_model;
  const std::size_t ffn = config_.ffn_width();
  backbone_ = Backbone::create(store_, config_.backbone_channels, rng);
  if (config_.n1 > 0) {
    proj4_ = Linear::create(store_, "input_proj4", config_.backbone_channels, d, rng);
    for (std::size_t i = 0; i < config_.m1; ++i) {
      enc4_.push_back(EncoderLayer::create(store_, "encoder4." + std::to_string(i), d, ffn, config_.h1, rng));
    }
    for (std::size_t i = 0; i < config_.n1; ++i) {
      dec4_.push_back(DecoderLayer::create(store_, "decoder4." + std::to_string(i), d, ffn, config_.h2, rng));
    }
  }
  if (config_.n2 > 0) {
    proj3_ = Linear::create(store_, "input_proj3", config_.backbone_channels, d, rng);
    for (std::size_t i = 0; i < config_.m2; ++i) {
      enc3_.push_back(EncoderLayer::create(store_, "encoder3." + std::to_string(i), d, ffn, config_.h3, rng));
    }
    for (std::size_t i = 0; i < config_.n2; ++i) {
      dec3_.push_back(DecoderLayer::create(store_, "decoder3." + std::to_string(i), d, ffn, config_.h4, rng));
    }
  }
  std::vector<double> qpos(config_.n_queries * d);
  for (auto& v : qpos) v = standard_normal(rng);
  query_pos4_ = store_.add("query_pos", {config_.n_queries, d}, qpos);
  if (!config_.share_query_pos && config_.n1 > 0 && config_.n2 > 0) {
    for (auto& v : qpos) v = standard_normal(rng);
    query_pos3_ = store_.add("query_pos3", {config_.n_queries, d}, std::move(qpos));
  } else {
    query_pos3_ = query_pos4_;
  }
  decoder_norm_ = LayerNorm::create(store_, "decoder_norm", d);
  class_head_ = Linear::create(store_, "class_head", d, config_.n_classes + 1, rng);
  box_mlp1_ = Linear::create(store_, "box_head.0", d, d, rng);
  box_mlp2_ = Linear::create(store_, "box_head.1", d, d, rng);
  box_mlp3_ = Linear::create(store_, "box_head.2", d, 4, rng);
}

Predictions SdetrModel::predict(const Tensor& decoded) const {
  const Tensor x = decoder_norm_(decoded);
  Predictions p;
  p.class_logits = class_head_(x);
  p.boxes = sigmoid(box_mlp3_(relu(box_mlp2_(relu(box_mlp1_(x))))));
  return p;
}

ModelOutput SdetrModel::forward(const Tensor& image, const ForwardContext& ctx) const {
  if (ctx.training && ctx.dropout > 0.0 && ctx.rng == nullptr) {
    throw ValidationError("training forward with dropout needs a random generator");
  }
  const BackboneFeatures feats = backbone_(image);
  const std::size_t d = config_.d_model;

  auto encode = [&](const Tensor& feat, const Linear& proj, const std::vector<EncoderLayer>& layers,
                    Tensor& pos) {
    pos = positional_encoding(feat.dim(1), feat.dim(2), d);
    Tensor tokens = proj(flatten_tokens(feat));
    for (const auto& layer : layers) tokens = layer(tokens, pos, ctx);
    return tokens;
  };

  ModelOutput out;
  Tensor queries = Tensor::zeros({config_.n_queries, d});
  if (config_.n1 > 0) {
    Tensor pos4;
    const Tensor memory4 = encode(feats.feat4, proj4_, enc4_, pos4);
    for (const auto& layer : dec4_) {
      queries = layer(queries, query_pos4_, memory4, pos4, ctx);
      out.per_layer.push_back(predict(queries));
    }
  }
  if (config_.n2 > 0) {
    Tensor pos3;
    const Tensor memory3 = encode(feats.feat3, proj3_, enc3_, pos3);
    for (const auto& layer : dec3_) {
      queries = layer(queries, query_pos3_, memory3, pos3, ctx);
      out.per_layer.push_back(predict(queries));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoint container:
//   8 bytes  magic "SDETRCK1"
//   8 bytes  manifest length L, little-endian u64
//   L bytes  JSON manifest {format, version, config, tensors:[{name, shape, offset, count}]}
//   rest     float64 little-endian values; offset/count are in elements

namespace {

constexpr char kMagic[8] = {'S', 'D', 'E', 'T', 'R', 'C', 'K', '1'};

void put_u64(std::ostream& os, std::uint64_t v) {
  unsigned char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(bytes), 8);
}

std::uint64_t get_u64(std::istream& is) {
  unsigned char bytes[8];
  if (!is.read(reinterpret_cast<char*>(bytes), 8)) throw std::runtime_error("checkpoint truncated");
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | bytes[i];
  return v;
}

}  // namespace

nlohmann::json to_json(const ModelConfig& c) {
  return {{"layers", {c.m1, c.n1, c.m2, c.n2}},
          {"heads", {c.h1, c.h2, c.h3, c.h4}},
          {"d_model", c.d_model},
          {"n_queries", c.n_queries},
          {"n_classes", c.n_classes},
          {"ffn_dim", c.ffn_width()},
          {"backbone_channels", c.backbone_channels},
          {"dropout", c.dropout},
          {"share_query_pos", c.share_query_pos}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  const auto layers = j.at("layers").get<std::vector<std::size_t>>();
  const auto heads = j.at("heads").get<std::vector<std::size_t>>();
  if (layers.size() != 4 || heads.size() != 4) throw ValidationError("config needs 4 layers and 4 heads");
  c.m1 = layers[0], c.n1 = layers[1], c.m2 = layers[2], c.n2 = layers[3];
  c.h1 = heads[0], c.h2 = heads[1], c.h3 = heads[2], c.h4 = heads[3];
  c.d_model = j.at("d_model").get<std::size_t>();
  c.n_queries = j.at("n_queries").get<std::size_t>();
  c.n_classes = j.at("n_classes").get<std::size_t>();
  c.ffn_dim = j.at("ffn_dim").get<std::size_t>();
  c.backbone_channels = j.at("backbone_channels").get<std::size_t>();
  c.dropout = j.at("dropout").get<double>();
  c.share_query_pos = j.at("share_query_pos").get<bool>();
  c.validate();
  return c;
}

void SdetrModel::save(const std::filesystem::path& path) const {
  nlohmann::json tensors = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : store_.entries()) {
    tensors.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}, {"count", t.numel()}});
    offset += t.numel();
  }
  const nlohmann::json manifest{{"format", "sdetr-checkpoint"},
                                {"version", 1},
                                {"dtype", "float64-le"},
                                {"config", to_json(config_)},
                                {"tensors", tensors}};
  const std::string text = manifest.dump();

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write checkpoint " + path.string());
  os.write(kMagic, sizeof kMagic);
  put_u64(os, text.size());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [_, t] : store_.entries()) {
    for (double v : t.data()) put_u64(os, std::bit_cast<std::uint64_t>(v));
  }
  if (!os) throw std::runtime_error("failed writing checkpoint " + path.string());
}

SdetrModel SdetrModel::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint " + path.string());
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0) {
    throw std::runtime_error(path.string() + " is not an sdetr checkpoint");
  }
  const std::uint64_t length = get_u64(is);
  std::string text(length, '\0');
  if (!is.read(text.data(), static_cast<std::streamsize>(length))) {
    throw std::runtime_error("checkpoint manifest truncated");
  }
  const auto manifest = nlohmann::json::parse(text);
  SdetrModel model(model_config_from_json(manifest.at("config")), 0);

  std::vector<double> blob;
  for (const auto& entry : manifest.at("tensors")) {
    const auto count = entry.at("count").get<std::uint64_t>();
    blob.resize(count);
    for (auto& v : blob) v = std::bit_cast<double>(get_u64(is));
    Tensor target = model.store_.find(entry.at("name").get<std::string>());
    if (target.shape() != entry.at("shape").get<Shape>()) {
      throw std::runtime_error("checkpoint shape mismatch for " + entry.at("name").get<std::string>());
    }
    std::copy(blob.begin(), blob.end(), target.mutable_data().begin());
  }
  if (manifest.at("tensors").size() != model.store_.entries().size()) {
    throw std::runtime_error("checkpoint tensor count does not match the configuration");
  }
  return model;
}

}  // namespace sdetr
