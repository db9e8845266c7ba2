#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <string>
#include <tuple>
#include <vector>

#include "takit/error.hpp"
#include "takit/rng.hpp"

namespace takit::cqmd {

// ---------------------------------------------------------------------------
// Dense double-precision matrices. Row-major, no views; this module is a
// desk-scale numerics reference, not a linear-algebra library.
// ---------------------------------------------------------------------------

struct Matrix {
  size_t rows = 0;
  size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(size_t r, size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

  double& operator()(size_t i, size_t j) { return data[i * cols + j]; }
  double operator()(size_t i, size_t j) const { return data[i * cols + j]; }

  bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }

  bool bit_equal(const Matrix& o) const {
    return same_shape(o) &&
           std::memcmp(data.data(), o.data.data(), data.size() * sizeof(double)) == 0;
  }
};

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols != b.rows) {
    throw ShapeMismatchError("matmul: " + std::to_string(a.cols) + " vs " +
                             std::to_string(b.rows));
  }
  Matrix out(a.rows, b.cols);
  for (size_t i = 0; i < a.rows; ++i) {
    for (size_t k = 0; k < a.cols; ++k) {
      const double v = a(i, k);
      if (v == 0.0) continue;
      for (size_t j = 0; j < b.cols; ++j) out(i, j) += v * b(k, j);
    }
  }
  return out;
}

inline Matrix transpose(const Matrix& a) {
  Matrix out(a.cols, a.rows);
  for (size_t i = 0; i < a.rows; ++i)
    for (size_t j = 0; j < a.cols; ++j) out(j, i) = a(i, j);
  return out;
}

// ---------------------------------------------------------------------------
// Hidden states and parameters
// ---------------------------------------------------------------------------

/// Final-layer hidden states plus the index sets locating image, query and
/// answer tokens inside the concatenated sequence.
struct HiddenStates {
  Matrix h_out;  // (n + l + m) x d
  std::vector<size_t> idx_img;
  std::vector<size_t> idx_q;
  std::vector<size_t> idx_a;
};

/// Validates disjointness and coverage of the three index sets.
inline void validate_hidden(const HiddenStates& hs) {
  std::vector<int> seen(hs.h_out.rows, 0);
  auto mark = [&](const std::vector<size_t>& idx) {
    for (size_t i : idx) {
      if (i >= hs.h_out.rows) {
        throw IndexOutOfRangeError("token index " + std::to_string(i) + " out of range");
      }
      if (seen[i]++) {
        throw IndexOutOfRangeError("token index " + std::to_string(i) + " appears twice");
      }
    }
  };
  mark(hs.idx_img);
  mark(hs.idx_q);
  mark(hs.idx_a);
  if (hs.idx_img.size() + hs.idx_q.size() + hs.idx_a.size() != hs.h_out.rows) {
    throw IndexOutOfRangeError("index sets do not cover all rows");
  }
}

/// Transposed-convolution parameters; weights laid out [in_ch][out_ch][ky][kx].
struct DeconvKernel {
  size_t in_ch = 0;
  size_t out_ch = 0;
  size_t ksize = 4;
  std::vector<double> weight;
  std::vector<double> bias;

  DeconvKernel() = default;
  DeconvKernel(size_t ic, size_t oc, size_t k)
      : in_ch(ic), out_ch(oc), ksize(k), weight(ic * oc * k * k, 0.0), bias(oc, 0.0) {}

  double& w(size_t ic, size_t oc, size_t ky, size_t kx) {
    return weight[((ic * out_ch + oc) * ksize + ky) * ksize + kx];
  }
  double w(size_t ic, size_t oc, size_t ky, size_t kx) const {
    return weight[((ic * out_ch + oc) * ksize + ky) * ksize + kx];
  }
};

struct CqmdParams {
  size_t d = 0;
  size_t d_ff = 0;
  Matrix w_query, w_key, w_value;  // d x d
  Matrix w1;                       // d x d_ff
  std::vector<double> b1;          // d_ff
  Matrix w2;                       // d_ff x d
  std::vector<double> b2;          // d
  DeconvKernel deconv1;            // d -> d/2, stride 2, kernel 4, pad 1
  DeconvKernel deconv2;            // d/2 -> 1, stride 2, kernel 4, pad 1
};

/// Applies `fn(name, values)` to every parameter array, in a fixed order that
/// doubles as the serialization order.
template <typename Fn>
void for_each_param(CqmdParams& p, Fn&& fn) {
  fn("w_query", p.w_query.data);
  fn("w_key", p.w_key.data);
  fn("w_value", p.w_value.data);
  fn("w1", p.w1.data);
  fn("b1", p.b1);
  fn("w2", p.w2.data);
  fn("b2", p.b2);
  fn("deconv1_weight", p.deconv1.weight);
  fn("deconv1_bias", p.deconv1.bias);
  fn("deconv2_weight", p.deconv2.weight);
  fn("deconv2_bias", p.deconv2.bias);
}

inline CqmdParams make_params(size_t d, size_t d_ff) {
  if (d % 2 != 0) throw ShapeMismatchError("d must be even (decoder halves channels)");
  CqmdParams p;
  p.d = d;
  p.d_ff = d_ff;
  p.w_query = Matrix(d, d);
  p.w_key = Matrix(d, d);
  p.w_value = Matrix(d, d);
  p.w1 = Matrix(d, d_ff);
  p.b1.assign(d_ff, 0.0);
  p.w2 = Matrix(d_ff, d);
  p.b2.assign(d, 0.0);
  p.deconv1 = DeconvKernel(d, d / 2, 4);
  p.deconv2 = DeconvKernel(d / 2, 1, 4);
  return p;
}

inline CqmdParams random_params(size_t d, size_t d_ff, rng::Pcg32& rng) {
  CqmdParams p = make_params(d, d_ff);
  for_each_param(p, [&](const char*, std::vector<double>& v) {
    for (double& x : v) x = rng.uniform(-0.5, 0.5);
  });
  return p;
}

/// Random hidden states with shuffled (interleaved) index sets.
inline HiddenStates random_hidden(size_t n, size_t l, size_t m, size_t d, rng::Pcg32& rng) {
  HiddenStates hs;
  hs.h_out = Matrix(n + l + m, d);
  for (double& x : hs.h_out.data) x = rng.uniform(-1.0, 1.0);
  std::vector<size_t> order(n + l + m);
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (size_t i = 0; i + 1 < order.size(); ++i) {
    const size_t j = i + rng.bounded(static_cast<uint32_t>(order.size() - i));
    std::swap(order[i], order[j]);
  }
  hs.idx_img.assign(order.begin(), order.begin() + n);
  hs.idx_q.assign(order.begin() + n, order.begin() + n + l);
  hs.idx_a.assign(order.begin() + n + l, order.end());
  return hs;
}

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

/// Row gathers preserving within-set order: (H_img, H_q, H_a).
inline std::tuple<Matrix, Matrix, Matrix> split_hidden(const HiddenStates& hs) {
  validate_hidden(hs);
  auto gather = [&](const std::vector<size_t>& idx) {
    Matrix out(idx.size(), hs.h_out.cols);
    for (size_t r = 0; r < idx.size(); ++r)
      for (size_t c = 0; c < hs.h_out.cols; ++c) out(r, c) = hs.h_out(idx[r], c);
    return out;
  };
  return {gather(hs.idx_img), gather(hs.idx_q), gather(hs.idx_a)};
}

inline Matrix softmax_rows(const Matrix& z) {
  Matrix out(z.rows, z.cols);
  for (size_t i = 0; i < z.rows; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (size_t j = 0; j < z.cols; ++j) mx = std::max(mx, z(i, j));
    double sum = 0.0;
    for (size_t j = 0; j < z.cols; ++j) {
      out(i, j) = std::exp(z(i, j) - mx);
      sum += out(i, j);
    }
    for (size_t j = 0; j < z.cols; ++j) out(i, j) /= sum;
  }
  return out;
}

namespace detail {

/// Intermediates of the attention + MLP path, kept for backprop.
struct SpatialTrace {
  Matrix p_img;   // H_img * W_query, n x d
  Matrix p_key;   // H_q * W_key,    l x d
  Matrix p_val;   // H_q * W_value,  l x d
  Matrix logits;  // n x l (scaled)
  Matrix attn_w;  // softmax rows, n x l
  Matrix attn;    // attn_w * p_val, n x d
  Matrix pre1;    // attn * w1 + b1, n x d_ff
  Matrix hid;     // ReLU(pre1)
  Matrix s;       // hid * w2 + b2, n x d
};

inline SpatialTrace spatial_forward(const Matrix& h_img, const Matrix& h_q,
                                    const CqmdParams& p) {
  if (h_img.cols != p.d || h_q.cols != p.d) {
    throw ShapeMismatchError("hidden width does not match parameter d");
  }
  SpatialTrace t;
  t.p_img = matmul(h_img, p.w_query);
  t.p_key = matmul(h_q, p.w_key);
  t.p_val = matmul(h_q, p.w_value);
  t.logits = matmul(t.p_img, transpose(t.p_key));
  const double scale = 1.0 / std::sqrt(static_cast<double>(p.d));
  for (double& v : t.logits.data) v *= scale;
  t.attn_w = softmax_rows(t.logits);
  t.attn = matmul(t.attn_w, t.p_val);
  t.pre1 = matmul(t.attn, p.w1);
  for (size_t i = 0; i < t.pre1.rows; ++i)
    for (size_t j = 0; j < t.pre1.cols; ++j) t.pre1(i, j) += p.b1[j];
  t.hid = t.pre1;
  for (double& v : t.hid.data) v = std::max(0.0, v);
  t.s = matmul(t.hid, p.w2);
  for (size_t i = 0; i < t.s.rows; ++i)
    for (size_t j = 0; j < t.s.cols; ++j) t.s(i, j) += p.b2[j];
  return t;
}

/// Channel-major feature map, [c][y][x] flattened.
struct FeatureMap {
  size_t ch = 0, h = 0, w = 0;
  std::vector<double> data;
  FeatureMap() = default;
  FeatureMap(size_t c, size_t hh, size_t ww) : ch(c), h(hh), w(ww), data(c * hh * ww, 0.0) {}
  double& at(size_t c, size_t y, size_t x) { return data[(c * h + y) * w + x]; }
  double at(size_t c, size_t y, size_t x) const { return data[(c * h + y) * w + x]; }
};

// Stride-2, padding-1 transposed convolution (scatter-add form):
// out[oc][iy*2-1+ky][ix*2-1+kx] += in[ic][iy][ix] * w[ic][oc][ky][kx].
// Output is exactly (2h x 2w) for kernel 4.
inline FeatureMap deconv_forward(const FeatureMap& in, const DeconvKernel& k) {
  if (in.ch != k.in_ch) throw ShapeMismatchError("deconv input channels");
  FeatureMap out(k.out_ch, in.h * 2, in.w * 2);
  for (size_t oc = 0; oc < k.out_ch; ++oc) {
    for (size_t y = 0; y < out.h; ++y)
      for (size_t x = 0; x < out.w; ++x) out.at(oc, y, x) = k.bias[oc];
  }
  for (size_t ic = 0; ic < in.ch; ++ic) {
    for (size_t iy = 0; iy < in.h; ++iy) {
      for (size_t ix = 0; ix < in.w; ++ix) {
        const double v = in.at(ic, iy, ix);
        for (size_t oc = 0; oc < k.out_ch; ++oc) {
          for (size_t ky = 0; ky < k.ksize; ++ky) {
            const long oy = static_cast<long>(iy) * 2 - 1 + static_cast<long>(ky);
            if (oy < 0 || oy >= static_cast<long>(out.h)) continue;
            for (size_t kx = 0; kx < k.ksize; ++kx) {
              const long ox = static_cast<long>(ix) * 2 - 1 + static_cast<long>(kx);
              if (ox < 0 || ox >= static_cast<long>(out.w)) continue;
              out.at(oc, oy, ox) += v * k.w(ic, oc, ky, kx);
            }
          }
        }
      }
    }
  }
  return out;
}

inline void deconv_backward(const FeatureMap& in, const DeconvKernel& k,
                            const FeatureMap& d_out, FeatureMap& d_in, DeconvKernel& d_k) {
  d_in = FeatureMap(in.ch, in.h, in.w);
  d_k = DeconvKernel(k.in_ch, k.out_ch, k.ksize);
  for (size_t oc = 0; oc < k.out_ch; ++oc) {
    double s = 0.0;
    for (size_t y = 0; y < d_out.h; ++y)
      for (size_t x = 0; x < d_out.w; ++x) s += d_out.at(oc, y, x);
    d_k.bias[oc] = s;
  }
  for (size_t ic = 0; ic < in.ch; ++ic) {
    for (size_t iy = 0; iy < in.h; ++iy) {
      for (size_t ix = 0; ix < in.w; ++ix) {
        const double v = in.at(ic, iy, ix);
        double acc = 0.0;
        for (size_t oc = 0; oc < k.out_ch; ++oc) {
          for (size_t ky = 0; ky < k.ksize; ++ky) {
            const long oy = static_cast<long>(iy) * 2 - 1 + static_cast<long>(ky);
            if (oy < 0 || oy >= static_cast<long>(d_out.h)) continue;
            for (size_t kx = 0; kx < k.ksize; ++kx) {
              const long ox = static_cast<long>(ix) * 2 - 1 + static_cast<long>(kx);
              if (ox < 0 || ox >= static_cast<long>(d_out.w)) continue;
              const double g = d_out.at(oc, oy, ox);
              acc += g * k.w(ic, oc, ky, kx);
              d_k.w(ic, oc, ky, kx) += v * g;
            }
          }
        }
        d_in.at(ic, iy, ix) = acc;
      }
    }
  }
}

struct DecodeTrace {
  FeatureMap f0;    // reshaped S, d x h x w
  FeatureMap x1;    // deconv1 output (pre-ReLU)
  FeatureMap y1;    // ReLU(x1)
  FeatureMap x2;    // deconv2 output (logits), 1 x 4h x 4w
  Matrix mask;      // sigmoid(x2)
};

inline DecodeTrace decode_forward(const Matrix& s, size_t h, size_t w, const CqmdParams& p) {
  if (s.rows != h * w) {
    throw GridMismatchError("n = " + std::to_string(s.rows) + " does not equal h*w = " +
                            std::to_string(h * w));
  }
  if (s.cols != p.d) throw ShapeMismatchError("feature width does not match d");
  DecodeTrace t;
  t.f0 = FeatureMap(p.d, h, w);
  for (size_t y = 0; y < h; ++y)
    for (size_t x = 0; x < w; ++x)
      for (size_t c = 0; c < p.d; ++c) t.f0.at(c, y, x) = s(y * w + x, c);
  t.x1 = deconv_forward(t.f0, p.deconv1);
  t.y1 = t.x1;
  for (double& v : t.y1.data) v = std::max(0.0, v);
  t.x2 = deconv_forward(t.y1, p.deconv2);
  t.mask = Matrix(4 * h, 4 * w);
  for (size_t i = 0; i < t.mask.data.size(); ++i) {
    t.mask.data[i] = 1.0 / (1.0 + std::exp(-t.x2.data[i]));
  }
  return t;
}

}  // namespace detail

/// Eq.-style cross-attention from visual tokens to query tokens:
/// softmax((H_img Wq)(H_q Wk)^T / sqrt(d)) (H_q Wv).
inline Matrix cross_attention(const Matrix& h_img, const Matrix& h_q, const CqmdParams& p) {
  return detail::spatial_forward(h_img, h_q, p).attn;
}

/// Two-layer MLP with ReLU: S = ReLU(Attn W1 + b1) W2 + b2.
inline Matrix spatial_features(const Matrix& attn, const CqmdParams& p) {
  if (attn.cols != p.d) throw ShapeMismatchError("attn width does not match d");
  Matrix pre = matmul(attn, p.w1);
  for (size_t i = 0; i < pre.rows; ++i)
    for (size_t j = 0; j < pre.cols; ++j) pre(i, j) += p.b1[j];
  for (double& v : pre.data) v = std::max(0.0, v);
  Matrix s = matmul(pre, p.w2);
  for (size_t i = 0; i < s.rows; ++i)
    for (size_t j = 0; j < s.cols; ++j) s(i, j) += p.b2[j];
  return s;
}

/// Convenience: S directly from hidden states.
inline Matrix spatial_support(const Matrix& h_img, const Matrix& h_q, const CqmdParams& p) {
  return detail::spatial_forward(h_img, h_q, p).s;
}

/// Upsampling decoder phi: reshape S to the (h, w) grid, two stride-2
/// transposed convolutions with ReLU between and sigmoid at the end.
/// Output is (4h x 4w) probabilities.
inline Matrix decode_mask(const Matrix& s, size_t h, size_t w, const CqmdParams& p) {
  return detail::decode_forward(s, h, w, p).mask;
}

inline constexpr double kDiceEps = 1e-6;
inline constexpr double kCeClamp = 1e-7;

inline double dice_loss(const Matrix& pred, const Matrix& gt) {
  if (!pred.same_shape(gt)) throw ShapeMismatchError("dice_loss shapes differ");
  double inter = 0.0, psum = 0.0, gsum = 0.0;
  for (size_t i = 0; i < pred.data.size(); ++i) {
    inter += pred.data[i] * gt.data[i];
    psum += pred.data[i];
    gsum += gt.data[i];
  }
  return 1.0 - (2.0 * inter + kDiceEps) / (psum + gsum + kDiceEps);
}

inline double ce_loss(const Matrix& pred, const Matrix& gt) {
  if (!pred.same_shape(gt)) throw ShapeMismatchError("ce_loss shapes differ");
  double sum = 0.0;
  for (size_t i = 0; i < pred.data.size(); ++i) {
    const double p = std::clamp(pred.data[i], kCeClamp, 1.0 - kCeClamp);
    const double g = gt.data[i];
    sum += g * std::log(p) + (1.0 - g) * std::log(1.0 - p);
  }
  return -sum / static_cast<double>(pred.data.size());
}

struct LossTerms {
  double l_ntp = 0.0;   // supplied externally
  double l_dice = 0.0;
  double l_ce = 0.0;
  double lambda_txt = 1.0;
  double lambda_seg = 1.0;
};

inline double mask_loss(const LossTerms& t) { return t.l_dice + t.l_ce; }

/// Joint objective: lambda_txt * L_ntp + lambda_seg * (L_dice + L_ce).
/// Samples without masks use lambda_seg = 0 and reduce to the text term.
inline double ssa_loss(const LossTerms& t) {
  return t.lambda_txt * t.l_ntp + t.lambda_seg * mask_loss(t);
}

// ---------------------------------------------------------------------------
// Checks
// ---------------------------------------------------------------------------

/// True iff overwriting the answer-token rows of h_out with arbitrary values
/// leaves S and the decoded mask bit-identical. This is structural: the
/// spatial path consumes only image and query rows.
inline bool causal_independence_check(const HiddenStates& hs, const CqmdParams& p,
                                      uint64_t perturb_seed = 1) {
  validate_hidden(hs);
  const size_t n = hs.idx_img.size();
  size_t h = 0, w = 0;
  // largest near-square grid factorization of n
  for (size_t cand = static_cast<size_t>(std::sqrt(static_cast<double>(n))); cand >= 1; --cand) {
    if (n % cand == 0) {
      h = cand;
      w = n / cand;
      break;
    }
  }
  auto [h_img, h_q, h_a] = split_hidden(hs);
  const Matrix s_before = spatial_support(h_img, h_q, p);
  const Matrix m_before = decode_mask(s_before, h, w, p);

  HiddenStates mutated = hs;
  rng::Pcg32 rng(perturb_seed);
  for (size_t r : mutated.idx_a) {
    for (size_t c = 0; c < mutated.h_out.cols; ++c) {
      mutated.h_out(r, c) = rng.uniform(-1e6, 1e6);
    }
  }
  auto [h_img2, h_q2, h_a2] = split_hidden(mutated);
  const Matrix s_after = spatial_support(h_img2, h_q2, p);
  const Matrix m_after = decode_mask(s_after, h, w, p);
  return s_before.bit_equal(s_after) && m_before.bit_equal(m_after);
}

namespace detail {

/// Full forward to L_mask with all intermediates retained.
struct FullTrace {
  SpatialTrace sp;
  DecodeTrace dec;
  double l_dice = 0.0;
  double l_ce = 0.0;
  double l_mask = 0.0;
};

inline FullTrace mask_loss_forward(const Matrix& h_img, const Matrix& h_q, size_t h, size_t w,
                                   const CqmdParams& p, const Matrix& gt) {
  FullTrace t;
  t.sp = spatial_forward(h_img, h_q, p);
  t.dec = decode_forward(t.sp.s, h, w, p);
  t.l_dice = dice_loss(t.dec.mask, gt);
  t.l_ce = ce_loss(t.dec.mask, gt);
  t.l_mask = t.l_dice + t.l_ce;
  return t;
}

/// Analytic gradients of L_mask with respect to every parameter array.
inline CqmdParams mask_loss_backward(const Matrix& h_img, const Matrix& h_q,
                                     const CqmdParams& p, const Matrix& gt,
                                     const FullTrace& t) {
  CqmdParams g = make_params(p.d, p.d_ff);

  const Matrix& pred = t.dec.mask;
  const size_t npix = pred.data.size();

  // d L / d pred:   dice' + ce'
  double inter = 0.0, psum = 0.0, gsum = 0.0;
  for (size_t i = 0; i < npix; ++i) {
    inter += pred.data[i] * gt.data[i];
    psum += pred.data[i];
    gsum += gt.data[i];
  }
  const double num = 2.0 * inter + kDiceEps;
  const double den = psum + gsum + kDiceEps;
  Matrix d_pred(pred.rows, pred.cols);
  for (size_t i = 0; i < npix; ++i) {
    const double gv = gt.data[i];
    double grad = -2.0 * gv / den + num / (den * den);  // dice
    const double pv = pred.data[i];
    if (pv > kCeClamp && pv < 1.0 - kCeClamp) {         // ce (clamp saturates)
      grad += (-gv / pv + (1.0 - gv) / (1.0 - pv)) / static_cast<double>(npix);
    }
    d_pred.data[i] = grad;
  }

  // through sigmoid
  FeatureMap d_x2(1, pred.rows, pred.cols);
  for (size_t i = 0; i < npix; ++i) {
    const double pv = pred.data[i];
    d_x2.data[i] = d_pred.data[i] * pv * (1.0 - pv);
  }

  // deconv2 <- ReLU <- deconv1
  FeatureMap d_y1;
  deconv_backward(t.dec.y1, p.deconv2, d_x2, d_y1, g.deconv2);
  for (size_t i = 0; i < d_y1.data.size(); ++i) {
    if (t.dec.x1.data[i] <= 0.0) d_y1.data[i] = 0.0;
  }
  FeatureMap d_f0;
  deconv_backward(t.dec.f0, p.deconv1, d_y1, d_f0, g.deconv1);

  // back to S layout (n x d)
  const size_t h = t.dec.f0.h, w = t.dec.f0.w;
  Matrix d_s(h * w, p.d);
  for (size_t y = 0; y < h; ++y)
    for (size_t x = 0; x < w; ++x)
      for (size_t c = 0; c < p.d; ++c) d_s(y * w + x, c) = d_f0.at(c, y, x);

  // MLP backward
  g.w2 = matmul(transpose(t.sp.hid), d_s);
  for (size_t j = 0; j < p.d; ++j) {
    double s = 0.0;
    for (size_t i = 0; i < d_s.rows; ++i) s += d_s(i, j);
    g.b2[j] = s;
  }
  Matrix d_hid = matmul(d_s, transpose(p.w2));
  for (size_t i = 0; i < d_hid.data.size(); ++i) {
    if (t.sp.pre1.data[i] <= 0.0) d_hid.data[i] = 0.0;
  }
  g.w1 = matmul(transpose(t.sp.attn), d_hid);
  for (size_t j = 0; j < p.d_ff; ++j) {
    double s = 0.0;
    for (size_t i = 0; i < d_hid.rows; ++i) s += d_hid(i, j);
    g.b1[j] = s;
  }
  Matrix d_attn = matmul(d_hid, transpose(p.w1));

  // attention backward
  Matrix d_pval = matmul(transpose(t.sp.attn_w), d_attn);
  Matrix d_attnw = matmul(d_attn, transpose(t.sp.p_val));
  Matrix d_logits(d_attnw.rows, d_attnw.cols);
  for (size_t i = 0; i < d_attnw.rows; ++i) {
    double dot = 0.0;
    for (size_t j = 0; j < d_attnw.cols; ++j) dot += d_attnw(i, j) * t.sp.attn_w(i, j);
    for (size_t j = 0; j < d_attnw.cols; ++j) {
      d_logits(i, j) = t.sp.attn_w(i, j) * (d_attnw(i, j) - dot);
    }
  }
  const double scale = 1.0 / std::sqrt(static_cast<double>(p.d));
  for (double& v : d_logits.data) v *= scale;
  Matrix d_pimg = matmul(d_logits, t.sp.p_key);
  Matrix d_pkey = matmul(transpose(d_logits), t.sp.p_img);
  g.w_query = matmul(transpose(h_img), d_pimg);
  g.w_key = matmul(transpose(h_q), d_pkey);
  g.w_value = matmul(transpose(h_q), d_pval);
  return g;
}

}  // namespace detail

/// Max relative error between analytic parameter gradients of L_mask and
/// central finite differences with relative step 1e-6. The denominator is
/// floored at 1e-3: below that scale the comparison is effectively absolute,
/// since central differences at step 1e-6 carry ~1e-9 of roundoff noise.
inline double grad_check(const CqmdParams& params, const Matrix& h_img, const Matrix& h_q,
                         size_t h, size_t w, const Matrix& gt) {
  const detail::FullTrace trace = detail::mask_loss_forward(h_img, h_q, h, w, params, gt);
  CqmdParams analytic = detail::mask_loss_backward(h_img, h_q, params, gt, trace);

  CqmdParams probe = params;
  double max_rel = 0.0;

  std::vector<std::vector<double>*> probe_arrays;
  std::vector<std::vector<double>*> grad_arrays;
  for_each_param(probe, [&](const char*, std::vector<double>& v) { probe_arrays.push_back(&v); });
  for_each_param(analytic,
                 [&](const char*, std::vector<double>& v) { grad_arrays.push_back(&v); });

  for (size_t a = 0; a < probe_arrays.size(); ++a) {
    std::vector<double>& vals = *probe_arrays[a];
    const std::vector<double>& grads = *grad_arrays[a];
    for (size_t i = 0; i < vals.size(); ++i) {
      const double orig = vals[i];
      const double step = 1e-6 * std::max(1.0, std::abs(orig));
      vals[i] = orig + step;
      const double up = detail::mask_loss_forward(h_img, h_q, h, w, probe, gt).l_mask;
      vals[i] = orig - step;
      const double down = detail::mask_loss_forward(h_img, h_q, h, w, probe, gt).l_mask;
      vals[i] = orig;
      const double numeric = (up - down) / (2.0 * step);
      const double anal = grads[i];
      if (!std::isfinite(numeric) || !std::isfinite(anal)) {
        throw NonFiniteGradientError("non-finite gradient encountered");
      }
      const double rel =
          std::abs(anal - numeric) / std::max({std::abs(anal), std::abs(numeric), 1e-3});
      max_rel = std::max(max_rel, rel);
    }
  }
  return max_rel;
}

}  // namespace takit::cqmd
