#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "sdetr/attention.hpp"
#include "sdetr/config.hpp"

namespace sdetr {

/// Closed-form cost of one attention call over the QKVA grid.
///   macs      = h·h'·(w + w')      (Q·Kᵀ then P·V)
///   p_units   = n_heads·h·h'       (one score matrix per head)
///   a_units   = h·w'
///   mem_units = p_units + a_units
struct AttnCost {
  std::uint64_t macs = 0;
  std::uint64_t p_units = 0;
  std::uint64_t a_units = 0;
  std::uint64_t mem_units = 0;
};

AttnCost attn_cost(const AttentionDims& dims);

enum class BlockKind { EncoderSelf, DecoderSelf, DecoderCross };
std::string to_string(BlockKind kind);

struct LayerCost {
  std::string id;  // e.g. "L3.enc0.self"
  int level = 4;
  BlockKind kind = BlockKind::EncoderSelf;
  AttentionDims dims;
  AttnCost cost;
};

/// Attention-only cost of a whole configuration. FFN, projection and
/// backbone products are deliberately outside the model (`excluded`).
struct CostReport {
  std::string config;
  std::size_t input_h = 0;
  std::size_t input_w = 0;
  std::vector<LayerCost> per_layer;
  std::uint64_t total_macs = 0;
  std::uint64_t total_mem_units = 0;
  std::vector<std::string> excluded{"ffn", "projections", "backbone"};
};

/// Token counts follow the backbone strides: level 4 has (H/32)·(W/32) tokens,
/// level 3 has (H/16)·(W/16). Decoder cross-attention has h = n_queries and
/// h' = the level's token count. Throws ValidationError unless H and W are
/// positive multiples of 32.
CostReport model_cost(const ModelConfig& config, std::size_t input_h, std::size_t input_w);

nlohmann::json to_json(const CostReport& report);

}  // namespace sdetr
