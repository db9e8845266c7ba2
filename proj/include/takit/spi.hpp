#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "takit/consensus.hpp"
#include "takit/error.hpp"
#include "takit/geometry.hpp"
#include "takit/instance.hpp"
#include "takit/rng.hpp"
#include "takit/utf8.hpp"

namespace takit::spi {

/// Empirical OCR error statistics the noise model is calibrated from.
struct NoiseProfile {
  double recall = 0.0;     // box recall R
  double precision = 0.0;  // box precision P
  double cer = 0.0;        // character error rate
  double e_del_hat = 0.0;  // normalized deletion share of character errors
  double e_ins_hat = 0.0;  // normalized insertion share of character errors

  void validate() const {
    for (double v : {recall, precision, cer, e_del_hat, e_ins_hat}) {
      if (!(v >= 0.0 && v <= 1.0)) throw SchemaError("noise profile values must be in [0, 1]");
    }
    if (e_del_hat + e_ins_hat > 1.0 + 1e-12) {
      throw SchemaError("deletion + insertion shares exceed 1");
    }
  }
};

struct ModeWeights {
  double w_del = 0.0;
  double w_jit = 0.0;
  double w_txt = 0.0;
};

struct ModeProbs {
  double p_del = 0.0;
  double p_jit = 0.0;
  double p_txt = 0.0;
};

/// w_del = 1 - R,  w_jit = 1 - P,  w_txt = R * CER * (E_del + E_ins).
inline ModeWeights derive_weights(const NoiseProfile& np) {
  np.validate();
  ModeWeights w;
  w.w_del = 1.0 - np.recall;
  w.w_jit = 1.0 - np.precision;
  w.w_txt = np.recall * np.cer * (np.e_del_hat + np.e_ins_hat);
  return w;
}

inline ModeProbs normalize_weights(const ModeWeights& w) {
  if (w.w_del < 0.0 || w.w_jit < 0.0 || w.w_txt < 0.0) {
    throw SchemaError("corruption-mode weights must be non-negative");
  }
  const double sum = w.w_del + w.w_jit + w.w_txt;
  if (sum <= 0.0) throw ZeroWeightSumError("all corruption-mode weights are zero");
  return {w.w_del / sum, w.w_jit / sum, w.w_txt / sum};
}

enum class CorruptMode { Del, Jit, Txt };

inline CorruptMode draw_mode(const ModeProbs& p, rng::Pcg32& rng) {
  const double u = rng.next_double();
  if (u < p.p_del) return CorruptMode::Del;
  if (u < p.p_del + p.p_jit) return CorruptMode::Jit;
  return CorruptMode::Txt;
}

inline constexpr double kJitterRatioLo = 0.12;
inline constexpr double kJitterRatioHi = 0.17;
inline constexpr int kJitterMaxAttempts = 10;

/// Box jitter at a fixed ratio: each edge moves by an independent offset
/// u ~ U[-rho, rho] scaled by the box width (x edges) or height (y edges).
/// The result is clamped to the image; degenerate outcomes are redrawn up to
/// 10 times, after which the original box comes back with `degenerate_flag`
/// set.
inline Box jitter_box_with_ratio(const Box& b, const ImageSize& image, double rho,
                                 rng::Pcg32& rng, bool* degenerate_flag = nullptr) {
  if (degenerate_flag != nullptr) *degenerate_flag = false;
  const double w = b.width(), h = b.height();
  for (int attempt = 0; attempt < kJitterMaxAttempts; ++attempt) {
    const double x0 = std::clamp(b.x_min + rng.uniform(-rho, rho) * w, 0.0,
                                 static_cast<double>(image.width));
    const double x1 = std::clamp(b.x_max + rng.uniform(-rho, rho) * w, 0.0,
                                 static_cast<double>(image.width));
    const double y0 = std::clamp(b.y_min + rng.uniform(-rho, rho) * h, 0.0,
                                 static_cast<double>(image.height));
    const double y1 = std::clamp(b.y_max + rng.uniform(-rho, rho) * h, 0.0,
                                 static_cast<double>(image.height));
    if (x0 < x1 && y0 < y1) return Box(x0, y0, x1, y1);
  }
  if (degenerate_flag != nullptr) *degenerate_flag = true;
  return b;
}

/// Box jitter with rho ~ U[0.12, 0.17], drawn once per box.
inline Box jitter_box(const Box& b, const ImageSize& image, rng::Pcg32& rng,
                      bool* degenerate_flag = nullptr) {
  const double rho = rng.uniform(kJitterRatioLo, kJitterRatioHi);
  return jitter_box_with_ratio(b, image, rho, rng, degenerate_flag);
}

inline constexpr double kCorruptRatioLo = 0.2;
inline constexpr double kCorruptRatioHi = 0.6;
inline constexpr double kDeletionShare = 0.7256;  // insertion share is 1 - this

/// Splits an error budget e = max(1, round(r*n)) into deletion and insertion
/// counts using the fixed shares.
inline std::pair<long, long> split_budget(double r, size_t n) {
  const long e = std::max<long>(1, std::lround(r * static_cast<double>(n)));
  const long n_del = std::lround(kDeletionShare * static_cast<double>(e));
  return {n_del, e - n_del};
}

/// Transcript corruption at a fixed total ratio. Deletions hit uniform random
/// positions; insertions draw characters from the transcript's own multiset.
/// Operates on code points. A fully deleted string is a legal output.
inline std::string perturb_text_with_ratio(const std::string& t, double r, rng::Pcg32& rng) {
  std::u32string cps = utf8::decode(t);
  const size_t n = cps.size();
  if (n == 0) return t;
  const std::u32string alphabet = cps;

  const auto [n_del, n_ins] = split_budget(r, n);
  for (long k = 0; k < n_del && !cps.empty(); ++k) {
    cps.erase(cps.begin() + rng.bounded(static_cast<uint32_t>(cps.size())));
  }
  for (long k = 0; k < n_ins; ++k) {
    const char32_t c = alphabet[rng.bounded(static_cast<uint32_t>(alphabet.size()))];
    cps.insert(cps.begin() + rng.bounded(static_cast<uint32_t>(cps.size() + 1)), c);
  }
  return utf8::encode(cps);
}

/// Transcript corruption with r ~ U[0.2, 0.6].
inline std::string perturb_text(const std::string& t, rng::Pcg32& rng) {
  const double r = rng.uniform(kCorruptRatioLo, kCorruptRatioHi);
  return perturb_text_with_ratio(t, r, rng);
}

/// The corruption function F: one mode drawn categorically.
///   Del -> instance removed; Jit -> box jittered, text kept;
///   Txt -> box kept, text perturbed.
inline std::optional<Prior> corrupt_instance(const Prior& inst, const ModeProbs& probs,
                                             const ImageSize& image, rng::Pcg32& rng) {
  switch (draw_mode(probs, rng)) {
    case CorruptMode::Del:
      return std::nullopt;
    case CorruptMode::Jit:
      return Prior{jitter_box(inst.box, image, rng), inst.text};
    case CorruptMode::Txt:
      return Prior{inst.box, perturb_text(inst.text, rng)};
  }
  return std::nullopt;
}

enum class SourceKind { Scene, Synthetic };

struct PriorSet {
  double gamma = 0.0;
  std::vector<Prior> priors;
};

inline constexpr double kSceneAlignIouThr = 0.5;

/// Materializes the three-state prior schedule.
///   gamma 1.0: raw OCR priors (scene) or ground truth (synthetic), verbatim.
///   gamma 0.5: per-instance Bernoulli(1/2) keep-or-corrupt. Scene sources
///              corrupt only the raw priors mutually aligned to a GT box at
///              IoU >= align_thr and preserve unmatched raw items.
///   gamma 0.0: empty set.
inline PriorSet materialize_gamma(const std::vector<Prior>& instances, double gamma,
                                  const std::optional<std::vector<Prior>>& raw_priors,
                                  SourceKind source, const ModeProbs& probs,
                                  const ImageSize& image, rng::Pcg32& rng,
                                  double align_thr = kSceneAlignIouThr) {
  if (gamma != 1.0 && gamma != 0.5 && gamma != 0.0) {
    throw SchemaError("gamma must be one of 1.0, 0.5, 0.0");
  }
  PriorSet out;
  out.gamma = gamma;
  if (gamma == 0.0) return out;

  if (source == SourceKind::Scene && !raw_priors.has_value()) {
    throw MissingRawPriorsError("scene-source instances need raw OCR priors");
  }
  const std::vector<Prior>& base =
      source == SourceKind::Scene ? *raw_priors : instances;

  if (gamma == 1.0) {
    out.priors = base;
    return out;
  }

  // gamma == 0.5
  std::vector<char> eligible(base.size(), 1);
  if (source == SourceKind::Scene) {
    consensus::EngineOutput raw_eng, gt_eng;
    raw_eng.instances = base;
    gt_eng.instances = instances;
    std::fill(eligible.begin(), eligible.end(), 0);
    for (const auto& [i, j] : consensus::mutual_best_match(raw_eng, gt_eng, align_thr)) {
      eligible[i] = 1;
    }
  }
  for (size_t i = 0; i < base.size(); ++i) {
    if (!eligible[i] || rng.bounded(2) == 0) {
      out.priors.push_back(base[i]);  // kept verbatim
      continue;
    }
    if (auto corrupted = corrupt_instance(base[i], probs, image, rng)) {
      out.priors.push_back(std::move(*corrupted));
    }
  }
  return out;
}

}  // namespace takit::spi
