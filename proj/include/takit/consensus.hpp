#pragma once

#include <json.hpp>

#include <istream>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "takit/error.hpp"
#include "takit/geometry.hpp"
#include "takit/instance.hpp"
#include "takit/textnorm.hpp"

namespace takit::consensus {

/// One OCR engine's candidates for a single image.
struct EngineOutput {
  std::string engine_id;
  std::string image_id;
  ImageSize image;
  std::vector<Prior> instances;
};

enum class DiscardReason { NoMutualMatch, LowIoU };

struct DiscardCounts {
  long no_mutual_match = 0;
  long low_iou = 0;
  long total() const { return no_mutual_match + low_iou; }
};

struct DisputedPair {
  std::string image_id;
  ImageSize image;
  Box box_a;
  Box box_b;
  std::string text_a;
  std::string text_b;
  double iou = 0.0;
};

struct ConsensusResult {
  std::vector<TextInstance> agreed;
  std::vector<DisputedPair> disputed;
  DiscardCounts discarded_a;
  DiscardCounts discarded_b;
};

/// Which geometry an agreed pair carries.
enum class BoxPolicy { EngineA, Union, Intersection };

inline constexpr double kMutualIouThr = 0.7;

/// Pairs (i, j) where a_i and b_j are each other's IoU argmax and the IoU
/// clears the threshold. Argmax ties break towards the lowest index.
inline std::vector<std::pair<size_t, size_t>> mutual_best_match(const EngineOutput& a,
                                                                const EngineOutput& b,
                                                                double thr = kMutualIouThr) {
  const size_t na = a.instances.size(), nb = b.instances.size();
  std::vector<std::pair<size_t, size_t>> pairs;
  if (na == 0 || nb == 0) return pairs;

  std::vector<size_t> best_b(na, 0);
  std::vector<size_t> best_a(nb, 0);
  std::vector<double> best_b_iou(na, -1.0), best_a_iou(nb, -1.0);
  for (size_t i = 0; i < na; ++i) {
    for (size_t j = 0; j < nb; ++j) {
      const double v = iou(a.instances[i].box, b.instances[j].box);
      if (v > best_b_iou[i]) {
        best_b_iou[i] = v;
        best_b[i] = j;
      }
      if (v > best_a_iou[j]) {
        best_a_iou[j] = v;
        best_a[j] = i;
      }
    }
  }
  for (size_t i = 0; i < na; ++i) {
    const size_t j = best_b[i];
    if (best_a[j] == i && best_b_iou[i] >= thr) pairs.emplace_back(i, j);
  }
  return pairs;
}

/// Two-engine agreement: mutually best-matched pairs whose transcripts are
/// normalize_ws-equal (no case conversion) are accepted; matched pairs with
/// differing transcripts go to the adjudication queue; everything else is
/// discarded with a reason.
inline ConsensusResult consensus(const EngineOutput& a, const EngineOutput& b,
                                 double thr = kMutualIouThr,
                                 BoxPolicy policy = BoxPolicy::EngineA) {
  ConsensusResult res;
  const auto pairs = mutual_best_match(a, b, thr);

  std::vector<char> a_used(a.instances.size(), 0), b_used(b.instances.size(), 0);
  for (const auto& [i, j] : pairs) {
    a_used[i] = 1;
    b_used[j] = 1;
    const Prior& pa = a.instances[i];
    const Prior& pb = b.instances[j];
    if (textnorm::normalize_ws(pa.text) == textnorm::normalize_ws(pb.text)) {
      TextInstance inst;
      inst.image_id = a.image_id;
      inst.image = a.image;
      switch (policy) {
        case BoxPolicy::EngineA:
          inst.box = pa.box;
          break;
        case BoxPolicy::Union:
          inst.box = Box(std::min(pa.box.x_min, pb.box.x_min), std::min(pa.box.y_min, pb.box.y_min),
                         std::max(pa.box.x_max, pb.box.x_max), std::max(pa.box.y_max, pb.box.y_max));
          break;
        case BoxPolicy::Intersection:
          inst.box = Box(std::max(pa.box.x_min, pb.box.x_min), std::max(pa.box.y_min, pb.box.y_min),
                         std::min(pa.box.x_max, pb.box.x_max), std::min(pa.box.y_max, pb.box.y_max));
          break;
      }
      inst.transcript = pa.text;
      inst.source = a.engine_id + "+" + b.engine_id;
      res.agreed.push_back(std::move(inst));
    } else {
      DisputedPair d;
      d.image_id = a.image_id;
      d.image = a.image;
      d.box_a = pa.box;
      d.box_b = pb.box;
      d.text_a = pa.text;
      d.text_b = pb.text;
      d.iou = iou(pa.box, pb.box);
      res.disputed.push_back(std::move(d));
    }
  }

  // classify the leftovers: a mutual pairing that exists but fails the
  // threshold is LowIoU, anything else NoMutualMatch
  const auto all_pairs = mutual_best_match(a, b, 0.0);
  std::vector<char> a_mutual(a.instances.size(), 0), b_mutual(b.instances.size(), 0);
  std::vector<double> a_pair_iou(a.instances.size(), 0.0), b_pair_iou(b.instances.size(), 0.0);
  for (const auto& [i, j] : all_pairs) {
    const double v = iou(a.instances[i].box, b.instances[j].box);
    if (v > 0.0) {
      a_mutual[i] = b_mutual[j] = 1;
      a_pair_iou[i] = b_pair_iou[j] = v;
    }
  }
  for (size_t i = 0; i < a.instances.size(); ++i) {
    if (a_used[i]) continue;
    if (a_mutual[i] && a_pair_iou[i] < thr) {
      ++res.discarded_a.low_iou;
    } else {
      ++res.discarded_a.no_mutual_match;
    }
  }
  for (size_t j = 0; j < b.instances.size(); ++j) {
    if (b_used[j]) continue;
    if (b_mutual[j] && b_pair_iou[j] < thr) {
      ++res.discarded_b.low_iou;
    } else {
      ++res.discarded_b.no_mutual_match;
    }
  }
  return res;
}

// ---------------------------------------------------------------------------
// Adjudication queue files (JSONL). The judge is an external system; this
// module only reads and writes files.
// ---------------------------------------------------------------------------

inline void export_adjudication_queue(const std::vector<DisputedPair>& disputed,
                                      std::ostream& out) {
  for (const DisputedPair& d : disputed) {
    nlohmann::json j;
    j["image"] = d.image_id;
    j["width"] = d.image.width;
    j["height"] = d.image.height;
    j["bbox_a"] = {d.box_a.x_min, d.box_a.y_min, d.box_a.x_max, d.box_a.y_max};
    j["bbox_b"] = {d.box_b.x_min, d.box_b.y_min, d.box_b.x_max, d.box_b.y_max};
    j["text_a"] = d.text_a;
    j["text_b"] = d.text_b;
    j["iou"] = d.iou;
    j["verdict"] = "";
    out << j.dump() << "\n";
  }
}

/// Reads verdicts {accept_a | accept_b | reject | corrected:<text>} and
/// resolves the disputed records. Corrected verdicts keep engine A's box.
/// Unknown verdicts raise MalformedVerdictError with the line number.
inline std::vector<TextInstance> import_adjudications(std::istream& in) {
  std::vector<TextInstance> out;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) {
      throw MalformedVerdictError("line " + std::to_string(lineno) + ": invalid JSON");
    }
    const std::string verdict = j.value("verdict", "");
    if (verdict == "reject") continue;

    TextInstance inst;
    inst.image_id = j.at("image").get<std::string>();
    inst.image = ImageSize(j.at("width").get<int>(), j.at("height").get<int>());
    auto box_of = [&](const char* key) {
      const auto v = j.at(key).get<std::vector<double>>();
      if (v.size() != 4) {
        throw MalformedVerdictError("line " + std::to_string(lineno) + ": bad " + key);
      }
      return Box(v[0], v[1], v[2], v[3]);
    };
    if (verdict == "accept_a") {
      inst.box = box_of("bbox_a");
      inst.transcript = j.at("text_a").get<std::string>();
    } else if (verdict == "accept_b") {
      inst.box = box_of("bbox_b");
      inst.transcript = j.at("text_b").get<std::string>();
    } else if (verdict.rfind("corrected:", 0) == 0) {
      inst.box = box_of("bbox_a");
      inst.transcript = verdict.substr(10);
    } else {
      throw MalformedVerdictError("line " + std::to_string(lineno) + ": unknown verdict '" +
                                  verdict + "'");
    }
    inst.source = "adjudicated";
    out.push_back(std::move(inst));
  }
  return out;
}

}  // namespace takit::consensus
