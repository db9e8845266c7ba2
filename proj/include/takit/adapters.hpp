#pragma once

#include <json.hpp>

#include <array>
#include <charconv>
#include <cstdio>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "takit/bench.hpp"
#include "takit/geometry.hpp"
#include "takit/textnorm.hpp"

namespace takit::adapters {

enum class PromptStyle { NaturalLanguage, GroundingTags };
enum class ParseGrammar { JsonBoxes, GroundingTags, RawText };

inline const char* to_string(PromptStyle s) {
  return s == PromptStyle::NaturalLanguage ? "natural_language" : "grounding_tags";
}
inline const char* to_string(ParseGrammar g) {
  switch (g) {
    case ParseGrammar::JsonBoxes: return "json_boxes";
    case ParseGrammar::GroundingTags: return "grounding_tags";
    case ParseGrammar::RawText: return "raw_text";
  }
  return "?";
}

/// Delimiters of the grounding-tag output grammar. The input prompt tags are
/// fixed by the model family; the output grammar is configurable because it
/// varies across checkpoints.
struct GroundingTagSet {
  std::string box_open = "<|det|>";
  std::string box_close = "<|/det|>";
  std::string ref_open = "<|ref|>";
  std::string ref_close = "<|/ref|>";
};

struct InterfaceProfile {
  std::string name;
  CoordConvention coord = CoordConvention::XyxyAbs;
  PromptStyle t2r_prompt_style = PromptStyle::NaturalLanguage;
  ParseGrammar parse_grammar = ParseGrammar::JsonBoxes;
  GroundingTagSet tags;

  void validate() const {
    if (t2r_prompt_style == PromptStyle::GroundingTags &&
        parse_grammar != ParseGrammar::GroundingTags) {
      throw SchemaError("profile " + name +
                        ": grounding-tag prompts imply the grounding-tag parse grammar");
    }
  }
};

/// The five built-in profiles, one per interface family of the benchmark.
inline std::vector<InterfaceProfile> builtin_profiles() {
  std::vector<InterfaceProfile> out;
  out.push_back({"standard_xyxy_abs", CoordConvention::XyxyAbs, PromptStyle::NaturalLanguage,
                 ParseGrammar::JsonBoxes, {}});
  out.push_back({"standard_xyxy_rel1000", CoordConvention::XyxyRel1000,
                 PromptStyle::NaturalLanguage, ParseGrammar::JsonBoxes, {}});
  out.push_back({"yxyx_abs", CoordConvention::YxyxAbs, PromptStyle::NaturalLanguage,
                 ParseGrammar::JsonBoxes, {}});
  out.push_back({"norm01", CoordConvention::XyxyNorm01, PromptStyle::NaturalLanguage,
                 ParseGrammar::JsonBoxes, {}});
  out.push_back({"grounding_tags", CoordConvention::XyxyRel1000, PromptStyle::GroundingTags,
                 ParseGrammar::GroundingTags, {}});
  return out;
}

inline InterfaceProfile profile_from_json(const nlohmann::json& j) {
  InterfaceProfile p;
  p.name = j.at("name").get<std::string>();
  p.coord = coord_convention_from_string(j.at("coord").get<std::string>());
  const std::string style = j.value("t2r_prompt_style", "natural_language");
  if (style == "natural_language") {
    p.t2r_prompt_style = PromptStyle::NaturalLanguage;
  } else if (style == "grounding_tags") {
    p.t2r_prompt_style = PromptStyle::GroundingTags;
  } else {
    throw SchemaError("unknown prompt style: " + style);
  }
  const std::string grammar = j.value("parse_grammar", "json_boxes");
  if (grammar == "json_boxes") {
    p.parse_grammar = ParseGrammar::JsonBoxes;
  } else if (grammar == "grounding_tags") {
    p.parse_grammar = ParseGrammar::GroundingTags;
  } else if (grammar == "raw_text") {
    p.parse_grammar = ParseGrammar::RawText;
  } else {
    throw SchemaError("unknown parse grammar: " + grammar);
  }
  if (j.contains("tags")) {
    const nlohmann::json& t = j.at("tags");
    p.tags.box_open = t.value("box_open", p.tags.box_open);
    p.tags.box_close = t.value("box_close", p.tags.box_close);
    p.tags.ref_open = t.value("ref_open", p.tags.ref_open);
    p.tags.ref_close = t.value("ref_close", p.tags.ref_close);
  }
  p.validate();
  return p;
}

/// Either a built-in profile by name or one defined in a config document
/// (JSON array of profile objects).
inline InterfaceProfile find_profile(const std::string& name,
                                     const std::vector<InterfaceProfile>& extra = {}) {
  for (const InterfaceProfile& p : extra) {
    if (p.name == name) return p;
  }
  for (const InterfaceProfile& p : builtin_profiles()) {
    if (p.name == name) return p;
  }
  throw SchemaError("unknown interface profile: " + name);
}

enum class FailReason { None, InvalidJson, MissingBoxes, MalformedNumeric, DegenerateBox };

inline const char* to_string(FailReason r) {
  switch (r) {
    case FailReason::None: return "none";
    case FailReason::InvalidJson: return "InvalidJson";
    case FailReason::MissingBoxes: return "MissingBoxes";
    case FailReason::MalformedNumeric: return "MalformedNumeric";
    case FailReason::DegenerateBox: return "DegenerateBox";
  }
  return "?";
}

struct ParsedPrediction {
  std::string query_id;
  std::vector<Box> boxes;            // canonical absolute XYXY
  std::optional<std::string> text;
  bool parse_ok = true;
  FailReason reason = FailReason::None;

  static ParsedPrediction failed(FailReason why) {
    ParsedPrediction p;
    p.parse_ok = false;
    p.reason = why;
    return p;
  }
};

namespace detail {

inline std::string format_coords(const std::array<double, 4>& c, CoordConvention conv) {
  char buf[160];
  // normalized coordinates need more digits than the 1-decimal pixel format
  const char* fmt = conv == CoordConvention::XyxyNorm01 ? "[%.4f, %.4f, %.4f, %.4f]"
                                                        : "[%.1f, %.1f, %.1f, %.1f]";
  std::snprintf(buf, sizeof(buf), fmt, c[0], c[1], c[2], c[3]);
  return buf;
}

/// Locates the first syntactically complete JSON value in free-form text, so
/// prose or code fences around the payload are tolerated.
inline std::optional<nlohmann::json> first_json_value(std::string_view raw) {
  for (size_t start = 0; start < raw.size(); ++start) {
    const char open = raw[start];
    if (open != '[' && open != '{') continue;
    const char close = open == '[' ? ']' : '}';
    int depth = 0;
    bool in_str = false;
    bool esc = false;
    for (size_t i = start; i < raw.size(); ++i) {
      const char ch = raw[i];
      if (in_str) {
        if (esc) {
          esc = false;
        } else if (ch == '\\') {
          esc = true;
        } else if (ch == '"') {
          in_str = false;
        }
        continue;
      }
      if (ch == '"') {
        in_str = true;
      } else if (ch == '[' || ch == '{') {
        ++depth;
      } else if (ch == ']' || ch == '}') {
        --depth;
        if (depth == 0) {
          if (ch != close && raw[start] == open) {
            break;  // mismatched nesting; try the next start
          }
          nlohmann::json v = nlohmann::json::parse(raw.substr(start, i - start + 1),
                                                   nullptr, /*allow_exceptions=*/false);
          if (!v.is_discarded()) return v;
          break;
        }
      }
    }
  }
  return std::nullopt;
}

/// Extracts '.'-decimal numbers from text; returns false on any token that
/// looks numeric but does not parse cleanly (e.g. comma decimals split into
/// stray fragments are simply separate tokens and are fine).
inline std::vector<double> scan_numbers(std::string_view s) {
  std::vector<double> out;
  size_t i = 0;
  while (i < s.size()) {
    const char c = s[i];
    if ((c >= '0' && c <= '9') || (c == '-' && i + 1 < s.size() && s[i + 1] >= '0' &&
                                   s[i + 1] <= '9')) {
      size_t j = i + 1;
      while (j < s.size() && ((s[j] >= '0' && s[j] <= '9') || s[j] == '.')) ++j;
      double v = 0.0;
      const auto [ptr, ec] = std::from_chars(s.data() + i, s.data() + j, v);
      if (ec == std::errc() && ptr == s.data() + j) out.push_back(v);
      i = j;
    } else {
      ++i;
    }
  }
  return out;
}

inline ParsedPrediction boxes_from_quads(const std::vector<std::array<double, 4>>& quads,
                                         const InterfaceProfile& p, const ImageSize& image) {
  ParsedPrediction out;
  for (const auto& q : quads) {
    try {
      out.boxes.push_back(to_canonical(q, p.coord, image));
    } catch (const OutOfRangeError&) {
      return ParsedPrediction::failed(FailReason::MalformedNumeric);
    } catch (const DegenerateBoxError&) {
      return ParsedPrediction::failed(FailReason::DegenerateBox);
    }
  }
  return out;
}

inline ParsedPrediction parse_json_boxes(std::string_view raw, const InterfaceProfile& p,
                                         const ImageSize& image) {
  const auto doc = first_json_value(raw);
  if (!doc) return ParsedPrediction::failed(FailReason::InvalidJson);

  std::vector<const nlohmann::json*> elems;
  if (doc->is_array()) {
    for (const auto& e : *doc) elems.push_back(&e);
  } else {
    elems.push_back(&*doc);
  }
  std::vector<std::array<double, 4>> quads;
  for (const nlohmann::json* e : elems) {
    if (!e->is_object() || !e->contains("bbox_2d")) continue;
    const nlohmann::json& bb = (*e)["bbox_2d"];
    if (!bb.is_array() || bb.size() != 4) {
      return ParsedPrediction::failed(FailReason::MalformedNumeric);
    }
    std::array<double, 4> q{};
    for (size_t i = 0; i < 4; ++i) {
      if (!bb[i].is_number()) return ParsedPrediction::failed(FailReason::MalformedNumeric);
      q[i] = bb[i].get<double>();
    }
    quads.push_back(q);
  }
  if (quads.empty() && !(doc->is_array() && doc->empty())) {
    return ParsedPrediction::failed(FailReason::MissingBoxes);
  }
  return boxes_from_quads(quads, p, image);
}

inline ParsedPrediction parse_grounding_tags(std::string_view raw, const InterfaceProfile& p,
                                             const ImageSize& image) {
  std::vector<std::array<double, 4>> quads;
  size_t pos = 0;
  bool saw_tag = false;
  while (true) {
    const size_t open = raw.find(p.tags.box_open, pos);
    if (open == std::string_view::npos) break;
    const size_t body = open + p.tags.box_open.size();
    const size_t close = raw.find(p.tags.box_close, body);
    if (close == std::string_view::npos) break;
    saw_tag = true;
    const std::vector<double> nums = scan_numbers(raw.substr(body, close - body));
    if (nums.empty() || nums.size() % 4 != 0) {
      return ParsedPrediction::failed(FailReason::MalformedNumeric);
    }
    for (size_t i = 0; i + 3 < nums.size(); i += 4) {
      quads.push_back({nums[i], nums[i + 1], nums[i + 2], nums[i + 3]});
    }
    pos = close + p.tags.box_close.size();
  }
  if (!saw_tag) return ParsedPrediction::failed(FailReason::MissingBoxes);
  return boxes_from_quads(quads, p, image);
}

inline std::optional<std::string> between_tags(std::string_view raw, const std::string& open,
                                               const std::string& close) {
  const size_t a = raw.find(open);
  if (a == std::string_view::npos) return std::nullopt;
  const size_t b = raw.find(close, a + open.size());
  if (b == std::string_view::npos) return std::nullopt;
  return std::string(raw.substr(a + open.size(), b - a - open.size()));
}

}  // namespace detail

/// Rewrites the canonical query into the profile's native interface: R2T
/// coordinates are re-rendered in the profile's convention; T2R prompts for
/// grounding-tag models become `Locate <|ref|>{Text}<|/ref|> in the image.`
inline std::string render_prompt(const bench::BenchQuery& q, const InterfaceProfile& p) {
  if (q.direction == bench::Direction::R2T) {
    if (!q.r2t_box) return q.prompt;
    const auto coords = from_canonical(*q.r2t_box, p.coord, q.image);
    return "What is the text at location " + detail::format_coords(coords, p.coord) + "?";
  }
  if (p.t2r_prompt_style == PromptStyle::GroundingTags && q.t2r_text) {
    return "Locate " + p.tags.ref_open + *q.t2r_text + p.tags.ref_close + " in the image.";
  }
  return q.prompt;
}

/// Total function from raw model output to a canonical prediction; every
/// failure maps to parse_ok = false with a categorized reason and is scored
/// as an empty prediction.
inline ParsedPrediction parse_prediction(std::string_view raw, const InterfaceProfile& p,
                                         bench::Direction direction, const ImageSize& image) {
  if (direction == bench::Direction::R2T) {
    ParsedPrediction out;
    switch (p.parse_grammar) {
      case ParseGrammar::JsonBoxes: {
        // extract textual content when possible, otherwise fall back to the
        // raw decoded string
        const auto doc = detail::first_json_value(raw);
        if (doc) {
          const nlohmann::json* obj = nullptr;
          if (doc->is_object()) obj = &*doc;
          if (doc->is_array() && !doc->empty() && (*doc)[0].is_object()) obj = &(*doc)[0];
          if (obj != nullptr) {
            for (const char* key : {"label", "text"}) {
              if (obj->contains(key) && (*obj)[key].is_string()) {
                out.text = (*obj)[key].get<std::string>();
                return out;
              }
            }
          }
        }
        out.text = std::string(raw);
        return out;
      }
      case ParseGrammar::GroundingTags: {
        const auto ref = detail::between_tags(raw, p.tags.ref_open, p.tags.ref_close);
        out.text = ref ? *ref : std::string(raw);
        return out;
      }
      case ParseGrammar::RawText:
        out.text = textnorm::normalize_r2t(raw);
        return out;
    }
    out.text = std::string(raw);
    return out;
  }

  ParsedPrediction out;
  switch (p.parse_grammar) {
    case ParseGrammar::JsonBoxes:
      out = detail::parse_json_boxes(raw, p, image);
      break;
    case ParseGrammar::GroundingTags:
      out = detail::parse_grounding_tags(raw, p, image);
      break;
    case ParseGrammar::RawText:
      out = ParsedPrediction::failed(FailReason::MissingBoxes);
      break;
  }
  return out;
}

}  // namespace takit::adapters
