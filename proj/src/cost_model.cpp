#include "sdetr/cost_model.hpp"

namespace sdetr {

AttnCost attn_cost(const AttentionDims& d) {
  d.validate();
  AttnCost c;
  c.macs = static_cast<std::uint64_t>(d.h) * d.h_prime * (d.w + d.w_prime);
  c.p_units = static_cast<std::uint64_t>(d.n_heads) * d.h * d.h_prime;
  c.a_units = static_cast<std::uint64_t>(d.h) * d.w_prime;
  c.mem_units = c.p_units + c.a_units;
  return c;
}

std::string to_string(BlockKind kind) {
  switch (kind) {
    case BlockKind::EncoderSelf: return "enc-self";
    case BlockKind::DecoderSelf: return "dec-self";
    case BlockKind::DecoderCross: return "dec-cross";
  }
  return "unknown";
}

namespace {

void add_level(CostReport& report, int level, std::size_t tokens, std::size_t encoders,
               std::size_t enc_heads, std::size_t decoders, std::size_t dec_heads,
               const ModelConfig& cfg) {
  const std::size_t d = cfg.d_model;
  const std::size_t q = cfg.n_queries;
  const std::string prefix = "L" + std::to_string(level) + ".";
  auto push = [&](std::string id, BlockKind kind, AttentionDims dims) {
    LayerCost row{std::move(id), level, kind, dims, attn_cost(dims)};
    report.total_macs += row.cost.macs;
    report.total_mem_units += row.cost.mem_units;
    report.per_layer.push_back(std::move(row));
  };
  for (std::size_t i = 0; i < encoders; ++i) {
    push(prefix + "enc" + std::to_string(i) + ".self", BlockKind::EncoderSelf,
         {tokens, tokens, d, d, enc_heads});
  }
  for (std::size_t i = 0; i < decoders; ++i) {
    push(prefix + "dec" + std::to_string(i) + ".self", BlockKind::DecoderSelf, {q, q, d, d, dec_heads});
    push(prefix + "dec" + std::to_string(i) + ".cross", BlockKind::DecoderCross,
         {q, tokens, d, d, dec_heads});
  }
}

}  // namespace

CostReport model_cost(const ModelConfig& config, std::size_t input_h, std::size_t input_w) {
  config.validate();
  if (input_h == 0 || input_w == 0 || input_h % 32 != 0 || input_w % 32 != 0) {
    throw ValidationError("input " + std::to_string(input_h) + "x" + std::to_string(input_w) +
                          " is not divisible by 32");
  }
  CostReport report;
  report.config = format_config(config);
  report.input_h = input_h;
  report.input_w = input_w;
  const std::size_t tokens4 = (input_h / 32) * (input_w / 32);
  const std::size_t tokens3 = (input_h / 16) * (input_w / 16);
  if (config.n1 > 0) add_level(report, 4, tokens4, config.m1, config.h1, config.n1, config.h2, config);
  if (config.n2 > 0) add_level(report, 3, tokens3, config.m2, config.h3, config.n2, config.h4, config);
  return report;
}

nlohmann::json to_json(const CostReport& report) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& row : report.per_layer) {
    layers.push_back({
        {"id", row.id},
        {"level", row.level},
        {"kind", to_string(row.kind)},
        {"dims",
         {{"h", row.dims.h},
          {"h_prime", row.dims.h_prime},
          {"w", row.dims.w},
          {"w_prime", row.dims.w_prime},
          {"n_heads", row.dims.n_heads}}},
        {"macs", row.cost.macs},
        {"mem_units", row.cost.mem_units},
        {"p_units", row.cost.p_units},
        {"a_units", row.cost.a_units},
    });
  }
  return {
      {"config", report.config},
      {"input_hw", {report.input_h, report.input_w}},
      {"layers", std::move(layers)},
      {"total_macs", report.total_macs},
      {"total_mem_units", report.total_mem_units},
      {"excluded", report.excluded},
  };
}

}  // namespace sdetr
