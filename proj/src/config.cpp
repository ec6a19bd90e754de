#include "sdetr/config.hpp"

#include <array>
#include <cctype>
#include <charconv>

namespace sdetr {

namespace {

constexpr std::array<const char*, 8> kFieldNames{"M1", "N1", "M2", "N2", "h1", "h2", "h3", "h4"};

std::string field_label(std::size_t field) {
  return "field " + std::to_string(field) + " (" + kFieldNames[field - 1] + ")";
}

std::vector<std::string_view> split(std::string_view text, char sep) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  while (true) {
    const auto pos = text.find(sep, start);
    parts.push_back(text.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return parts;
}

std::array<std::size_t, 4> parse_group(std::string_view group, std::size_t first_field) {
  const auto parts = split(group, '-');
  if (parts.size() != 4) {
    throw ConfigParseError(0, "expected four '-'-separated numbers, got \"" + std::string(group) + "\"");
  }
  std::array<std::size_t, 4> out{};
  for (std::size_t i = 0; i < 4; ++i) {
    const std::size_t field = first_field + i;
    const auto part = parts[i];
    std::size_t value = 0;
    const auto [ptr, ec] = std::from_chars(part.data(), part.data() + part.size(), value);
    if (part.empty() || ec != std::errc{} || ptr != part.data() + part.size()) {
      throw ConfigParseError(field, "malformed " + field_label(field) + ": \"" + std::string(part) + "\"");
    }
    out[i] = value;
  }
  return out;
}

}  // namespace

void ModelConfig::validate() const {
  const std::array<std::size_t, 4> heads{h1, h2, h3, h4};
  for (std::size_t i = 0; i < 4; ++i) {
    if (heads[i] == 0) throw ConfigParseError(5 + i, field_label(5 + i) + " must be positive");
    if (d_model % heads[i] != 0) {
      throw ConfigParseError(5 + i, field_label(5 + i) + "=" + std::to_string(heads[i]) +
                                        " does not divide d_model=" + std::to_string(d_model));
    }
  }
  if (n1 + n2 == 0) throw ConfigParseError(2, "at least one decoder layer (N1 or N2) is required");
  // An encoder line is only read through its own decoder pack.
  if (m1 > 0 && n1 == 0) throw ConfigParseError(2, "M1 > 0 needs N1 > 0 to consume the level-4 memory");
  if (m2 > 0 && n2 == 0) throw ConfigParseError(4, "M2 > 0 needs N2 > 0 to consume the level-3 memory");
  if (d_model == 0 || d_model % 4 != 0) throw ValidationError("d_model must be a positive multiple of 4");
  if (n_queries == 0) throw ValidationError("n_queries must be positive");
  if (n_classes == 0) throw ValidationError("n_classes must be positive");
  if (backbone_channels == 0) throw ValidationError("backbone_channels must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ValidationError("dropout must lie in [0, 1)");
}

ModelConfig parse_config(std::string_view text, const ModelConfig& base) {
  std::string compact;
  for (char c : text) {
    if (!std::isspace(static_cast<unsigned char>(c))) compact.push_back(c);
  }
  if (compact.empty()) throw ConfigParseError(0, "empty config string");
  const auto halves = split(compact, '+');
  if (halves.size() > 2) throw ConfigParseError(0, "at most one '+' separates layers from heads");

  ModelConfig cfg = base;
  const auto layers = parse_group(halves[0], 1);
  cfg.m1 = layers[0];
  cfg.n1 = layers[1];
  cfg.m2 = layers[2];
  cfg.n2 = layers[3];
  std::array<std::size_t, 4> heads{8, 8, 8, 8};
  if (halves.size() == 2) heads = parse_group(halves[1], 5);
  cfg.h1 = heads[0];
  cfg.h2 = heads[1];
  cfg.h3 = heads[2];
  cfg.h4 = heads[3];
  cfg.validate();
  return cfg;
}

std::string format_config(const ModelConfig& c) {
  auto s = [](std::size_t v) { return std::to_string(v); };
  return s(c.m1) + "-" + s(c.n1) + "-" + s(c.m2) + "-" + s(c.n2) + " + " + s(c.h1) + "-" + s(c.h2) +
         "-" + s(c.h3) + "-" + s(c.h4);
}

std::vector<std::string> budget_warnings(const ModelConfig& c) {
  std::vector<std::string> out;
  if (c.m2 > 0 && c.h3 != 1) {
    out.push_back("level-3 encoders use h3=" + std::to_string(c.h3) +
                  " heads; each keeps its own (hw)^2 score matrix, so score memory is " +
                  std::to_string(c.h3) + "x that of a single-head encoder (consider h3=1)");
  }
  return out;
}

}  // namespace sdetr
