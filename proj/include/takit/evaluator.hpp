#pragma once

#include <algorithm>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "takit/adapters.hpp"
#include "takit/geometry.hpp"
#include "takit/textnorm.hpp"

namespace takit::eval {

struct T2RCounts {
  long tp = 0;
  long fp = 0;
  long fn = 0;
};

/// Exact-match reading accuracy after normalize_r2t on both sides. A failed
/// parse scores as a non-match.
inline bool score_r2t(const adapters::ParsedPrediction& pred, const std::string& gt) {
  if (!pred.parse_ok || !pred.text.has_value()) return false;
  return textnorm::normalize_r2t(*pred.text) == textnorm::normalize_r2t(gt);
}

/// Matching outcome with the accepted pairs; indices refer to the canonically
/// sorted box lists carried alongside.
struct T2RMatch {
  T2RCounts counts;
  std::vector<Box> pred_sorted;
  std::vector<Box> gt_sorted;
  std::vector<std::pair<size_t, size_t>> pairs;
};

/// Greedy bipartite matching at IoU >= thr. Candidate pairs are ordered by
/// IoU descending, ties by ascending (pred index, gt index) where indices
/// refer to the canonically sorted box lists, making the result invariant to
/// input permutation.
inline T2RMatch match_t2r_full(std::vector<Box> pred, std::vector<Box> gt, double thr = 0.5) {
  std::sort(pred.begin(), pred.end());
  std::sort(gt.begin(), gt.end());

  struct Cand {
    double iou;
    size_t pi;
    size_t gi;
  };
  std::vector<Cand> cands;
  for (size_t pi = 0; pi < pred.size(); ++pi) {
    for (size_t gi = 0; gi < gt.size(); ++gi) {
      const double v = iou(pred[pi], gt[gi]);
      if (v >= thr) cands.push_back({v, pi, gi});
    }
  }
  std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
    if (a.iou != b.iou) return a.iou > b.iou;
    if (a.pi != b.pi) return a.pi < b.pi;
    return a.gi < b.gi;
  });

  T2RMatch out;
  std::vector<char> pred_used(pred.size(), 0), gt_used(gt.size(), 0);
  for (const Cand& c : cands) {
    if (pred_used[c.pi] || gt_used[c.gi]) continue;
    pred_used[c.pi] = 1;
    gt_used[c.gi] = 1;
    out.pairs.emplace_back(c.pi, c.gi);
  }
  out.counts.tp = static_cast<long>(out.pairs.size());
  out.counts.fp = static_cast<long>(pred.size()) - out.counts.tp;
  out.counts.fn = static_cast<long>(gt.size()) - out.counts.tp;
  out.pred_sorted = std::move(pred);
  out.gt_sorted = std::move(gt);
  return out;
}

inline T2RCounts match_t2r(std::vector<Box> pred, std::vector<Box> gt, double thr = 0.5) {
  return match_t2r_full(std::move(pred), std::move(gt), thr).counts;
}

/// One scored query, fed into aggregate().
struct QueryResult {
  std::string query_id;
  std::string category;
  bench::Direction direction = bench::Direction::R2T;
  bool r2t_match = false;  // R2T only
  T2RCounts counts;        // T2R only
};

struct DirectionStats {
  long r2t_queries = 0;
  long r2t_matches = 0;
  long t2r_queries = 0;
  long tp = 0, fp = 0, fn = 0;
};

/// All percentages in [0, 100].
struct Scores {
  double acc_r2t = 0.0;
  double precision_t2r = 0.0;
  double recall_t2r = 0.0;
  double f1_t2r = 0.0;
  double overall = 0.0;
  bool r2t_missing = false;  // no queries in that direction
  bool t2r_missing = false;
};

struct EvalReport {
  Scores total;
  DirectionStats counts;
  std::map<std::string, Scores> per_category;
  std::map<std::string, DirectionStats> per_category_counts;
};

namespace detail {

inline double pct(double num, double den) { return den == 0.0 ? 0.0 : 100.0 * num / den; }

inline Scores scores_from(const DirectionStats& st) {
  Scores s;
  s.r2t_missing = st.r2t_queries == 0;
  s.t2r_missing = st.t2r_queries == 0;
  s.acc_r2t = pct(static_cast<double>(st.r2t_matches), static_cast<double>(st.r2t_queries));
  const double p = pct(static_cast<double>(st.tp), static_cast<double>(st.tp + st.fp));
  const double r = pct(static_cast<double>(st.tp), static_cast<double>(st.tp + st.fn));
  s.precision_t2r = p;
  s.recall_t2r = r;
  s.f1_t2r = (p + r) == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
  // a missing direction enters the mean as 0
  s.overall = (s.acc_r2t + s.f1_t2r) / 2.0;
  return s;
}

}  // namespace detail

/// Pools R2T matches and T2R tp/fp/fn over all queries (dataset-level F1),
/// then derives the Overall mean; identical arithmetic per category.
/// Throws DuplicateQueryIdError on a repeated query_id.
inline EvalReport aggregate(const std::vector<QueryResult>& records) {
  std::set<std::string> seen;
  EvalReport rep;
  for (const QueryResult& r : records) {
    if (!seen.insert(r.query_id).second) {
      throw DuplicateQueryIdError("duplicate query_id: " + r.query_id);
    }
    auto tally = [&](DirectionStats& st) {
      if (r.direction == bench::Direction::R2T) {
        ++st.r2t_queries;
        st.r2t_matches += r.r2t_match ? 1 : 0;
      } else {
        ++st.t2r_queries;
        st.tp += r.counts.tp;
        st.fp += r.counts.fp;
        st.fn += r.counts.fn;
      }
    };
    tally(rep.counts);
    tally(rep.per_category_counts[r.category]);
  }
  rep.total = detail::scores_from(rep.counts);
  for (const auto& [cat, st] : rep.per_category_counts) {
    rep.per_category[cat] = detail::scores_from(st);
  }
  return rep;
}

}  // namespace takit::eval
