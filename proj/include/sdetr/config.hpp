#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "sdetr/tensor.hpp"

namespace sdetr {

/// Layer and head layout of a two-level stacked detector plus the width knobs.
///
/// Layer counts follow "M1-N1-M2-N2": level-4 (stride 32) encoders, level-4
/// decoders, level-3 (stride 16) encoders, level-3 decoders. Head counts
/// follow the same order: h1 level-4 encoder, h2 level-4 decoder, h3 level-3
/// encoder, h4 level-3 decoder.
struct ModelConfig {
  std::size_t m1 = 6;
  std::size_t n1 = 6;
  std::size_t m2 = 0;
  std::size_t n2 = 0;
  std::size_t h1 = 8;
  std::size_t h2 = 8;
  std::size_t h3 = 8;
  std::size_t h4 = 8;

  std::size_t d_model = 64;
  std::size_t n_queries = 100;
  std::size_t n_classes = 3;
  std::size_t ffn_dim = 0;  // 0 means 4·d_model
  std::size_t backbone_channels = 64;
  double dropout = 0.1;
  bool share_query_pos = true;

  std::size_t ffn_width() const { return ffn_dim == 0 ? 4 * d_model : ffn_dim; }
  bool uses_level3() const { return m2 > 0 || n2 > 0; }

  /// Throws ValidationError naming the offending field.
  void validate() const;
};

/// Parse failure; `field` is the 1-based position in "M1-N1-M2-N2 + h1-h2-h3-h4"
/// (1..4 layers, 5..8 heads), 0 when the overall layout is wrong.
class ConfigParseError : public ValidationError {
 public:
  ConfigParseError(std::size_t field, const std::string& what)
      : ValidationError(what), field_(field) {}
  std::size_t field() const { return field_; }

 private:
  std::size_t field_;
};

/// Parses "M1-N1-M2-N2" with an optional " + h1-h2-h3-h4" head part (default 8-8-8-8).
/// Whitespace is ignored. Other fields keep the values of `base`.
ModelConfig parse_config(std::string_view text, const ModelConfig& base = {});

/// Canonical "M1-N1-M2-N2 + h1-h2-h3-h4".
std::string format_config(const ModelConfig& config);

/// Memory-budget advice: a level-3 encoder with more than one head holds
/// h3 full (hw)² score matrices.
std::vector<std::string> budget_warnings(const ModelConfig& config);

}  // namespace sdetr
