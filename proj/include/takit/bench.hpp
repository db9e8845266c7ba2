#pragma once

#include <algorithm>
#include <array>
#include <cstdio>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "takit/geometry.hpp"
#include "takit/rng.hpp"
#include "takit/textnorm.hpp"

namespace takit::bench {

enum class Direction { R2T, T2R };

inline const char* to_string(Direction d) { return d == Direction::R2T ? "R2T" : "T2R"; }

inline Direction direction_from_string(const std::string& s) {
  if (s == "R2T") return Direction::R2T;
  if (s == "T2R") return Direction::T2R;
  throw SchemaError("unknown direction: " + s);
}

/// The closed category set of the benchmark.
inline constexpr std::array<const char*, 12> kCategories = {
    "SceneText", "Receipt", "Ticket",   "WarehouseSlip", "Report",  "ChineseDocument",
    "Book",      "Poster",  "Notice",   "PriceTag",      "Invoice", "Certificate"};

inline bool is_known_category(std::string_view c) {
  return std::any_of(kCategories.begin(), kCategories.end(),
                     [&](const char* k) { return c == k; });
}

/// One grounded text annotation of one image.
struct Annotation {
  std::string image_id;
  ImageSize image;
  Box box;
  std::string transcript;
  std::string category;
  std::string source;
};

struct BenchQuery {
  std::string query_id;
  std::string image_id;
  ImageSize image;
  Direction direction = Direction::R2T;
  std::string prompt;
  std::string category;
  // exactly one of the target groups is populated
  std::optional<std::string> r2t_target;
  std::optional<Box> r2t_box;            // box behind the R2T prompt
  std::vector<Box> t2r_targets;          // non-empty iff T2R
  std::optional<std::string> t2r_text;   // raw surface form used in the prompt
};

/// Per-category query count, applied to both directions (strict 1:1 parity).
struct QuotaSpec {
  std::map<std::string, long> per_category;
};

/// Absolute pixel coordinates print with one fractional digit, matching the
/// benchmark's canonical query strings.
inline std::string format_box_coords(const Box& b) {
  char buf[128];
  std::snprintf(buf, sizeof(buf), "[%.1f, %.1f, %.1f, %.1f]", b.x_min, b.y_min, b.x_max,
                b.y_max);
  return buf;
}

inline std::string r2t_prompt(const Box& b) {
  return "What is the text at location " + format_box_coords(b) + "?";
}

inline std::string t2r_prompt(const std::string& text) {
  return "Where is \"" + text + "\" located in the image?";
}

namespace detail {

// zero-padded so lexicographic query_id order equals numeric index order
inline std::string ordinal4(size_t v) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%04zu", v);
  return buf;
}

}  // namespace detail

/// One R2T query per annotation; the target is the raw transcript
/// (normalization happens at scoring time). `ann_index` is the annotation's
/// position within its image and keys the query id.
inline BenchQuery make_r2t_query(const Annotation& ann, size_t ann_index = 0) {
  BenchQuery q;
  q.query_id = ann.image_id + "#r2t#" + detail::ordinal4(ann_index);
  q.image_id = ann.image_id;
  q.image = ann.image;
  q.direction = Direction::R2T;
  q.prompt = r2t_prompt(ann.box);
  q.category = ann.category;
  q.r2t_target = ann.transcript;
  q.r2t_box = ann.box;
  return q;
}

/// Merges all annotations of one image by canonical transcript: one T2R query
/// per group, targeting every box of the group. The prompt carries the
/// group's first-seen raw transcript. Groups whose canonical key is empty are
/// dropped.
inline std::vector<BenchQuery> make_t2r_queries(const std::vector<Annotation>& anns) {
  std::vector<BenchQuery> out;
  std::map<std::string, size_t> group_of;  // canonical key -> index into out
  size_t group_ord = 0;
  for (const Annotation& ann : anns) {
    const std::string key = textnorm::canonicalize_t2r(ann.transcript);
    if (key.empty()) continue;
    auto it = group_of.find(key);
    if (it == group_of.end()) {
      BenchQuery q;
      q.query_id = ann.image_id + "#t2r#" + detail::ordinal4(group_ord++);
      q.image_id = ann.image_id;
      q.image = ann.image;
      q.direction = Direction::T2R;
      q.prompt = t2r_prompt(ann.transcript);
      q.category = ann.category;
      q.t2r_text = ann.transcript;
      q.t2r_targets.push_back(ann.box);
      group_of.emplace(key, out.size());
      out.push_back(std::move(q));
    } else {
      std::vector<Box>& targets = out[it->second].t2r_targets;
      // duplicate boxes collapse; targets stay pairwise distinct
      if (std::find(targets.begin(), targets.end(), ann.box) == targets.end()) {
        targets.push_back(ann.box);
      }
    }
  }
  return out;
}

struct CategoryCount {
  long r2t = 0;
  long t2r = 0;
};

struct BenchResult {
  std::vector<BenchQuery> queries;
  std::map<std::string, CategoryCount> emitted;
  std::vector<std::string> warnings;
};

namespace detail {

inline long floor_to_multiple_of_5(long v) { return v - v % 5; }

/// Stream seed for one (category, direction) bucket. All randomness flows
/// from the user seed; buckets get independent PCG32 streams so a category's
/// draw does not depend on which other categories exist.
inline uint64_t bucket_seed(uint64_t seed, const std::string& category, Direction dir) {
  uint64_t h = 1469598103934665603ULL;  // FNV-1a 64
  auto mix = [&h](std::string_view s) {
    for (unsigned char c : s) {
      h ^= c;
      h *= 1099511628211ULL;
    }
  };
  mix(category);
  mix("/");
  mix(to_string(dir));
  return rng::splitmix64(seed ^ h);
}

}  // namespace detail

/// Deterministic benchmark construction: per (category, direction) the
/// effective quota is min(quota, pool sizes) floored to a multiple of 5, with
/// R2T and T2R lowered together so the emitted counts keep strict parity.
/// Sampling is a partial Fisher-Yates over candidates sorted by
/// (image_id, query_id).
inline BenchResult sample_benchmark(const std::vector<Annotation>& pool, const QuotaSpec& quota,
                                    uint64_t seed) {
  BenchResult res;

  // bucket candidates; annotations keep their per-image ingestion order
  std::map<std::string, std::vector<size_t>> by_image_order;
  std::vector<std::string> image_order;
  for (size_t i = 0; i < pool.size(); ++i) {
    auto [it, fresh] = by_image_order.try_emplace(pool[i].image_id);
    if (fresh) image_order.push_back(pool[i].image_id);
    it->second.push_back(i);
  }

  std::map<std::string, std::vector<BenchQuery>> r2t_cands, t2r_cands;
  for (const std::string& img : image_order) {
    std::vector<Annotation> anns;
    const std::vector<size_t>& idxs = by_image_order[img];
    for (size_t k = 0; k < idxs.size(); ++k) {
      const Annotation& ann = pool[idxs[k]];
      r2t_cands[ann.category].push_back(make_r2t_query(ann, k));
      anns.push_back(ann);
    }
    for (BenchQuery& q : make_t2r_queries(anns)) {
      t2r_cands[q.category].push_back(std::move(q));
    }
  }

  auto by_image_then_id = [](const BenchQuery& a, const BenchQuery& b) {
    if (a.image_id != b.image_id) return a.image_id < b.image_id;
    return a.query_id < b.query_id;
  };

  for (const char* cat : kCategories) {
    const auto qit = quota.per_category.find(cat);
    if (qit == quota.per_category.end() || qit->second <= 0) continue;
    std::vector<BenchQuery>& r2t = r2t_cands[cat];
    std::vector<BenchQuery>& t2r = t2r_cands[cat];
    if (r2t.empty() && t2r.empty()) {
      res.warnings.push_back(std::string("EmptyCategory: no candidates for ") + cat);
      res.emitted[cat] = {0, 0};
      continue;
    }
    std::sort(r2t.begin(), r2t.end(), by_image_then_id);
    std::sort(t2r.begin(), t2r.end(), by_image_then_id);

    const long per_dir = std::min<long>(
        {qit->second, static_cast<long>(r2t.size()), static_cast<long>(t2r.size())});
    const long eff = detail::floor_to_multiple_of_5(per_dir);
    res.emitted[cat] = {eff, eff};
    if (eff == 0) {
      res.warnings.push_back(std::string("EmptyCategory: effective quota 0 for ") + cat);
      continue;
    }

    for (Direction dir : {Direction::R2T, Direction::T2R}) {
      std::vector<BenchQuery>& cands = dir == Direction::R2T ? r2t : t2r;
      rng::Pcg32 prng(detail::bucket_seed(seed, cat, dir));
      for (size_t i : rng::sample_without_replacement(cands.size(), eff, prng)) {
        res.queries.push_back(cands[i]);
      }
    }
  }
  return res;
}

}  // namespace takit::bench
