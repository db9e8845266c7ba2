#pragma once

#include <json.hpp>

#include <functional>
#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "takit/bench.hpp"
#include "takit/consensus.hpp"
#include "takit/error.hpp"
#include "takit/geometry.hpp"
#include "takit/instance.hpp"
#include "takit/spi.hpp"

namespace takit::io {

using nlohmann::json;

/// Streams a JSONL file line by line; `fn(lineno, doc)` sees 1-based line
/// numbers. Blank lines are skipped. Parse failures raise SchemaError with
/// the line number.
inline void for_each_jsonl(std::istream& in,
                           const std::function<void(size_t, const json&)>& fn) {
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json doc = json::parse(line, nullptr, false);
    if (doc.is_discarded()) {
      throw SchemaError("line " + std::to_string(lineno) + ": invalid JSON");
    }
    fn(lineno, doc);
  }
}

namespace detail {

inline std::string ctx(size_t lineno, const char* field) {
  return "line " + std::to_string(lineno) + ": field '" + field + "'";
}

inline double need_number(const json& j, const char* field, size_t lineno) {
  if (!j.contains(field) || !j.at(field).is_number()) {
    throw SchemaError(ctx(lineno, field) + " must be a number");
  }
  return j.at(field).get<double>();
}

inline std::string need_string(const json& j, const char* field, size_t lineno) {
  if (!j.contains(field) || !j.at(field).is_string()) {
    throw SchemaError(ctx(lineno, field) + " must be a string");
  }
  return j.at(field).get<std::string>();
}

inline std::array<double, 4> need_bbox(const json& j, const char* field, size_t lineno) {
  if (!j.contains(field) || !j.at(field).is_array() || j.at(field).size() != 4) {
    throw SchemaError(ctx(lineno, field) + " must be a 4-number array");
  }
  std::array<double, 4> out{};
  for (size_t i = 0; i < 4; ++i) {
    if (!j.at(field)[i].is_number()) {
      throw SchemaError(ctx(lineno, field) + " must be a 4-number array");
    }
    out[i] = j.at(field)[i].get<double>();
  }
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Annotation pool records (gen-bench input):
//   {image, width, height, category, source, items: [{bbox: [4], text}]}
// ---------------------------------------------------------------------------

struct PoolRecord {
  std::string image_id;
  ImageSize image;
  std::string category;
  std::string source;
  std::vector<bench::Annotation> annotations;  // valid ones
  std::vector<std::string> warnings;           // dropped items
};

inline PoolRecord parse_pool_record(const json& j, size_t lineno) {
  PoolRecord rec;
  rec.image_id = detail::need_string(j, "image", lineno);
  rec.image = ImageSize(static_cast<int>(detail::need_number(j, "width", lineno)),
                        static_cast<int>(detail::need_number(j, "height", lineno)));
  rec.category = detail::need_string(j, "category", lineno);
  rec.source = j.value("source", "");
  if (!bench::is_known_category(rec.category)) {
    throw SchemaError(detail::ctx(lineno, "category") + ": unknown category '" + rec.category +
                      "'");
  }
  if (!j.contains("items") || !j.at("items").is_array()) {
    throw SchemaError(detail::ctx(lineno, "items") + " must be an array");
  }
  size_t idx = 0;
  for (const json& item : j.at("items")) {
    const auto bb = detail::need_bbox(item, "bbox", lineno);
    const std::string text = detail::need_string(item, "text", lineno);
    ++idx;
    bench::Annotation ann;
    ann.image_id = rec.image_id;
    ann.image = rec.image;
    ann.category = rec.category;
    ann.source = rec.source;
    ann.transcript = text;
    if (textnorm::normalize_ws(text).empty()) {
      rec.warnings.push_back("line " + std::to_string(lineno) + " item " +
                             std::to_string(idx) + ": empty transcript, dropped");
      continue;
    }
    try {
      ann.box = Box(bb[0], bb[1], bb[2], bb[3]);
    } catch (const DegenerateBoxError&) {
      rec.warnings.push_back("line " + std::to_string(lineno) + " item " +
                             std::to_string(idx) + ": degenerate box, dropped");
      continue;
    }
    rec.annotations.push_back(std::move(ann));
  }
  return rec;
}

// ---------------------------------------------------------------------------
// Benchmark file: JSON array of query records.
// ---------------------------------------------------------------------------

inline json query_to_json(const bench::BenchQuery& q) {
  json j;
  j["query_id"] = q.query_id;
  j["image"] = q.image_id;
  j["width"] = q.image.width;
  j["height"] = q.image.height;
  j["direction"] = bench::to_string(q.direction);
  j["prompt"] = q.prompt;
  j["category"] = q.category;
  if (q.direction == bench::Direction::R2T) {
    j["r2t_target"] = *q.r2t_target;
    const Box& b = *q.r2t_box;
    j["r2t_bbox"] = {b.x_min, b.y_min, b.x_max, b.y_max};
  } else {
    j["t2r_text"] = *q.t2r_text;
    json targets = json::array();
    for (const Box& b : q.t2r_targets) targets.push_back({b.x_min, b.y_min, b.x_max, b.y_max});
    j["t2r_targets"] = targets;
  }
  return j;
}

inline bench::BenchQuery query_from_json(const json& j, size_t lineno = 0) {
  bench::BenchQuery q;
  q.query_id = detail::need_string(j, "query_id", lineno);
  q.image_id = detail::need_string(j, "image", lineno);
  q.image = ImageSize(static_cast<int>(detail::need_number(j, "width", lineno)),
                      static_cast<int>(detail::need_number(j, "height", lineno)));
  q.direction = bench::direction_from_string(detail::need_string(j, "direction", lineno));
  q.prompt = detail::need_string(j, "prompt", lineno);
  q.category = detail::need_string(j, "category", lineno);
  if (q.direction == bench::Direction::R2T) {
    q.r2t_target = detail::need_string(j, "r2t_target", lineno);
    const auto bb = detail::need_bbox(j, "r2t_bbox", lineno);
    q.r2t_box = Box(bb[0], bb[1], bb[2], bb[3]);
  } else {
    q.t2r_text = detail::need_string(j, "t2r_text", lineno);
    if (!j.contains("t2r_targets") || !j.at("t2r_targets").is_array() ||
        j.at("t2r_targets").empty()) {
      throw SchemaError(detail::ctx(lineno, "t2r_targets") + " must be a non-empty array");
    }
    for (const json& t : j.at("t2r_targets")) {
      if (!t.is_array() || t.size() != 4) {
        throw SchemaError(detail::ctx(lineno, "t2r_targets") + ": bad box");
      }
      q.t2r_targets.push_back(Box(t[0].get<double>(), t[1].get<double>(), t[2].get<double>(),
                                  t[3].get<double>()));
    }
  }
  return q;
}

// ---------------------------------------------------------------------------
// Instance records (spi / render-masks):
//   {image, width, height, bbox: [4], text, source,
//    mask_rle?: [runs], priors?: [{bbox, text}], raw_priors?: [{bbox, text}]}
// ---------------------------------------------------------------------------

struct InstanceRecord {
  TextInstance instance;
  std::optional<std::vector<Prior>> raw_priors;
};

inline std::vector<Prior> priors_from_json(const json& arr, const char* field, size_t lineno) {
  std::vector<Prior> out;
  for (const json& p : arr) {
    const auto bb = detail::need_bbox(p, "bbox", lineno);
    out.push_back({Box(bb[0], bb[1], bb[2], bb[3]), detail::need_string(p, "text", lineno)});
  }
  (void)field;
  return out;
}

inline InstanceRecord parse_instance_record(const json& j, size_t lineno) {
  InstanceRecord rec;
  TextInstance& inst = rec.instance;
  inst.image_id = detail::need_string(j, "image", lineno);
  inst.image = ImageSize(static_cast<int>(detail::need_number(j, "width", lineno)),
                         static_cast<int>(detail::need_number(j, "height", lineno)));
  const auto bb = detail::need_bbox(j, "bbox", lineno);
  try {
    inst.box = Box(bb[0], bb[1], bb[2], bb[3]);
  } catch (const DegenerateBoxError& e) {
    throw SchemaError(detail::ctx(lineno, "bbox") + ": " + e.what());
  }
  inst.transcript = detail::need_string(j, "text", lineno);
  inst.source = j.value("source", "");
  if (j.contains("mask_rle")) {
    inst.mask_rle = j.at("mask_rle").get<std::vector<uint32_t>>();
  }
  if (j.contains("priors")) {
    inst.priors = priors_from_json(j.at("priors"), "priors", lineno);
  }
  if (j.contains("raw_priors")) {
    rec.raw_priors = priors_from_json(j.at("raw_priors"), "raw_priors", lineno);
  }
  return rec;
}

inline json instance_to_json(const InstanceRecord& rec) {
  const TextInstance& inst = rec.instance;
  json j;
  j["image"] = inst.image_id;
  j["width"] = inst.image.width;
  j["height"] = inst.image.height;
  j["bbox"] = {inst.box.x_min, inst.box.y_min, inst.box.x_max, inst.box.y_max};
  j["text"] = inst.transcript;
  j["source"] = inst.source;
  if (inst.mask_rle) j["mask_rle"] = *inst.mask_rle;
  if (inst.priors) {
    json arr = json::array();
    for (const Prior& p : *inst.priors) {
      arr.push_back({{"bbox", {p.box.x_min, p.box.y_min, p.box.x_max, p.box.y_max}},
                     {"text", p.text}});
    }
    j["priors"] = arr;
  }
  if (rec.raw_priors) {
    json arr = json::array();
    for (const Prior& p : *rec.raw_priors) {
      arr.push_back({{"bbox", {p.box.x_min, p.box.y_min, p.box.x_max, p.box.y_max}},
                     {"text", p.text}});
    }
    j["raw_priors"] = arr;
  }
  return j;
}

// ---------------------------------------------------------------------------
// Engine output records (consensus input):
//   {image, width, height, items: [{bbox: [4], text}]}
// ---------------------------------------------------------------------------

inline consensus::EngineOutput parse_engine_record(const json& j, size_t lineno,
                                                   const std::string& engine_id) {
  consensus::EngineOutput out;
  out.engine_id = engine_id;
  out.image_id = detail::need_string(j, "image", lineno);
  out.image = ImageSize(static_cast<int>(detail::need_number(j, "width", lineno)),
                        static_cast<int>(detail::need_number(j, "height", lineno)));
  if (!j.contains("items") || !j.at("items").is_array()) {
    throw SchemaError(detail::ctx(lineno, "items") + " must be an array");
  }
  for (const json& item : j.at("items")) {
    const auto bb = detail::need_bbox(item, "bbox", lineno);
    try {
      out.instances.push_back(
          {Box(bb[0], bb[1], bb[2], bb[3]), detail::need_string(item, "text", lineno)});
    } catch (const DegenerateBoxError& e) {
      throw SchemaError(detail::ctx(lineno, "bbox") + ": " + e.what());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Prediction records (eval input): {query_id, raw_output}
// ---------------------------------------------------------------------------

struct PredictionRecord {
  std::string query_id;
  std::string raw_output;
};

inline PredictionRecord parse_prediction_record(const json& j, size_t lineno) {
  return {detail::need_string(j, "query_id", lineno),
          detail::need_string(j, "raw_output", lineno)};
}

// NoiseProfile config: {recall, precision, cer, e_del_hat, e_ins_hat}
inline spi::NoiseProfile noise_profile_from_json(const json& j) {
  spi::NoiseProfile np;
  np.recall = j.at("recall").get<double>();
  np.precision = j.at("precision").get<double>();
  np.cer = j.at("cer").get<double>();
  np.e_del_hat = j.at("e_del_hat").get<double>();
  np.e_ins_hat = j.at("e_ins_hat").get<double>();
  np.validate();
  return np;
}

// Quota config: flat {category: count} object, counts per direction.
inline bench::QuotaSpec quota_from_json(const json& j) {
  bench::QuotaSpec q;
  if (!j.is_object()) throw SchemaError("quota file must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!bench::is_known_category(key)) {
      throw SchemaError("quota: unknown category '" + key + "'");
    }
    if (!value.is_number_integer() || value.get<long>() < 0) {
      throw SchemaError("quota: count for '" + key + "' must be a non-negative integer");
    }
    q.per_category[key] = value.get<long>();
  }
  return q;
}

}  // namespace takit::io
