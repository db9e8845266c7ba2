#pragma once

#include <json.hpp>

#include <string>
#include <vector>

#include "takit/cqmd.hpp"
#include "takit/error.hpp"

namespace takit::cqmd {

namespace detail {

inline std::vector<size_t> param_shape(const CqmdParams& p, const std::string& name) {
  if (name == "w_query" || name == "w_key" || name == "w_value") return {p.d, p.d};
  if (name == "w1") return {p.d, p.d_ff};
  if (name == "b1") return {p.d_ff};
  if (name == "w2") return {p.d_ff, p.d};
  if (name == "b2") return {p.d};
  if (name == "deconv1_weight") return {p.d, p.d / 2, 4, 4};
  if (name == "deconv1_bias") return {p.d / 2};
  if (name == "deconv2_weight") return {p.d / 2, 1, 4, 4};
  if (name == "deconv2_bias") return {1};
  throw SchemaError("unknown parameter " + name);
}

}  // namespace detail

/// Flat JSON document of named real arrays with shape headers, exchangeable
/// across implementations. nlohmann emits shortest-round-trip doubles, so the
/// encoding is bit-exact.
inline nlohmann::json params_to_json(const CqmdParams& params) {
  nlohmann::json doc;
  doc["d"] = params.d;
  doc["d_ff"] = params.d_ff;
  CqmdParams& p = const_cast<CqmdParams&>(params);
  for_each_param(p, [&](const char* name, std::vector<double>& v) {
    nlohmann::json entry;
    entry["shape"] = detail::param_shape(params, name);
    entry["data"] = v;
    doc[name] = entry;
  });
  return doc;
}

inline CqmdParams params_from_json(const nlohmann::json& doc) {
  if (!doc.is_object() || !doc.contains("d") || !doc.contains("d_ff")) {
    throw SchemaError("parameter document must carry d and d_ff");
  }
  CqmdParams p = make_params(doc.at("d").get<size_t>(), doc.at("d_ff").get<size_t>());
  for_each_param(p, [&](const char* name, std::vector<double>& v) {
    if (!doc.contains(name)) throw SchemaError(std::string("missing parameter ") + name);
    const nlohmann::json& entry = doc.at(name);
    const auto shape = entry.at("shape").get<std::vector<size_t>>();
    const auto expect = detail::param_shape(p, name);
    if (shape != expect) throw SchemaError(std::string("bad shape for ") + name);
    const auto data = entry.at("data").get<std::vector<double>>();
    if (data.size() != v.size()) throw SchemaError(std::string("bad length for ") + name);
    v = data;
  });
  return p;
}

}  // namespace takit::cqmd
