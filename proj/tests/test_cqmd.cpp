#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "takit/cqmd.hpp"
#include "takit/cqmd_io.hpp"
#include "takit/rng.hpp"

using namespace takit::cqmd;
using takit::rng::Pcg32;

namespace {

Matrix binary_mask(size_t r, size_t c, Pcg32& rng) {
  Matrix m(r, c);
  for (double& v : m.data) v = rng.bounded(2) ? 1.0 : 0.0;
  return m;
}

// Independent gather-form transposed convolution: for each output pixel,
// enumerate the input pixels that could have scattered into it.
detail::FeatureMap deconv_gather_oracle(const detail::FeatureMap& in, const DeconvKernel& k) {
  detail::FeatureMap out(k.out_ch, in.h * 2, in.w * 2);
  for (size_t oc = 0; oc < k.out_ch; ++oc) {
    for (size_t oy = 0; oy < out.h; ++oy) {
      for (size_t ox = 0; ox < out.w; ++ox) {
        double acc = k.bias[oc];
        for (size_t ic = 0; ic < in.ch; ++ic) {
          for (size_t iy = 0; iy < in.h; ++iy) {
            for (size_t ix = 0; ix < in.w; ++ix) {
              const long ky = static_cast<long>(oy) - (static_cast<long>(iy) * 2 - 1);
              const long kx = static_cast<long>(ox) - (static_cast<long>(ix) * 2 - 1);
              if (ky < 0 || ky >= static_cast<long>(k.ksize)) continue;
              if (kx < 0 || kx >= static_cast<long>(k.ksize)) continue;
              acc += in.at(ic, iy, ix) * k.w(ic, oc, ky, kx);
            }
          }
        }
        out.at(oc, oy, ox) = acc;
      }
    }
  }
  return out;
}

}  // namespace

TEST_CASE("split_hidden gathers rows") {
  Pcg32 rng(5);
  HiddenStates hs = random_hidden(4, 2, 3, 8, rng);
  auto [img, q, a] = split_hidden(hs);
  REQUIRE(img.rows == 4);
  REQUIRE(q.rows == 2);
  REQUIRE(a.rows == 3);
  for (size_t r = 0; r < hs.idx_img.size(); ++r)
    for (size_t c = 0; c < 8; ++c) CHECK(img(r, c) == hs.h_out(hs.idx_img[r], c));
  for (size_t r = 0; r < hs.idx_q.size(); ++r)
    for (size_t c = 0; c < 8; ++c) CHECK(q(r, c) == hs.h_out(hs.idx_q[r], c));

  SECTION("contiguous identity layout is a slice") {
    HiddenStates plain;
    plain.h_out = hs.h_out;
    for (size_t i = 0; i < 4; ++i) plain.idx_img.push_back(i);
    for (size_t i = 4; i < 6; ++i) plain.idx_q.push_back(i);
    for (size_t i = 6; i < 9; ++i) plain.idx_a.push_back(i);
    auto [pi, pq, pa] = split_hidden(plain);
    for (size_t r = 0; r < 4; ++r)
      for (size_t c = 0; c < 8; ++c) CHECK(pi(r, c) == plain.h_out(r, c));
  }

  SECTION("bad index sets are rejected") {
    HiddenStates bad = hs;
    bad.idx_a[0] = bad.idx_img[0];  // duplicate
    CHECK_THROWS_AS(split_hidden(bad), takit::IndexOutOfRangeError);
    HiddenStates oob = hs;
    oob.idx_q[0] = 999;
    CHECK_THROWS_AS(split_hidden(oob), takit::IndexOutOfRangeError);
  }
}

TEST_CASE("cross_attention degenerate and hand cases") {
  SECTION("single query token makes softmax trivially 1") {
    Pcg32 rng(11);
    CqmdParams p = random_params(8, 16, rng);
    Matrix h_img(5, 8), h_q(1, 8);
    for (double& v : h_img.data) v = rng.uniform(-1, 1);
    for (double& v : h_q.data) v = rng.uniform(-1, 1);
    const Matrix attn = cross_attention(h_img, h_q, p);
    const Matrix pv = matmul(h_q, p.w_value);
    for (size_t i = 0; i < attn.rows; ++i)
      for (size_t j = 0; j < attn.cols; ++j)
        CHECK_THAT(attn(i, j), Catch::Matchers::WithinAbs(pv(0, j), 1e-12));
  }

  SECTION("softmax rows sum to 1 and shift invariance") {
    Pcg32 rng(12);
    Matrix z(6, 4);
    for (double& v : z.data) v = rng.uniform(-8, 8);
    const Matrix sm = softmax_rows(z);
    for (size_t i = 0; i < sm.rows; ++i) {
      double s = 0.0;
      for (size_t j = 0; j < sm.cols; ++j) s += sm(i, j);
      CHECK_THAT(s, Catch::Matchers::WithinAbs(1.0, 1e-12));
    }
    Matrix shifted = z;
    for (size_t j = 0; j < z.cols; ++j) shifted(2, j) += 123.5;
    const Matrix sm2 = softmax_rows(shifted);
    for (size_t j = 0; j < z.cols; ++j)
      CHECK_THAT(sm2(2, j), Catch::Matchers::WithinAbs(sm(2, j), 1e-12));
  }

  SECTION("2x2 identity-projection hand computation") {
    // d = 2, Wq = Wk = Wv = I. h_img row = (1, 0); queries (1, 0), (0, 1).
    // logits = (1, 0)/sqrt(2); softmax = (e^s, 1)/(e^s + 1), s = 1/sqrt(2).
    CqmdParams p = make_params(2, 2);
    p.w_query(0, 0) = p.w_query(1, 1) = 1.0;
    p.w_key(0, 0) = p.w_key(1, 1) = 1.0;
    p.w_value(0, 0) = p.w_value(1, 1) = 1.0;
    Matrix h_img(1, 2), h_q(2, 2);
    h_img(0, 0) = 1.0;
    h_q(0, 0) = 1.0;
    h_q(1, 1) = 1.0;
    const double s = 1.0 / std::sqrt(2.0);
    const double w0 = std::exp(s) / (std::exp(s) + 1.0);
    const Matrix attn = cross_attention(h_img, h_q, p);
    CHECK_THAT(attn(0, 0), Catch::Matchers::WithinAbs(w0, 1e-15));
    CHECK_THAT(attn(0, 1), Catch::Matchers::WithinAbs(1.0 - w0, 1e-15));
  }
}

TEST_CASE("spatial_features MLP") {
  SECTION("identity weights pass non-negative input through") {
    CqmdParams p = make_params(2, 2);
    p.w1(0, 0) = p.w1(1, 1) = 1.0;
    p.w2(0, 0) = p.w2(1, 1) = 1.0;
    Matrix attn(3, 2);
    Pcg32 rng(3);
    for (double& v : attn.data) v = rng.uniform(0.0, 2.0);
    const Matrix s = spatial_features(attn, p);
    for (size_t i = 0; i < s.data.size(); ++i)
      CHECK_THAT(s.data[i], Catch::Matchers::WithinAbs(attn.data[i], 1e-15));
  }
  SECTION("all-negative pre-activation yields b2 broadcast") {
    CqmdParams p = make_params(2, 3);
    for (double& v : p.w1.data) v = 1.0;
    p.b1.assign(3, -100.0);  // forces ReLU to zero
    for (double& v : p.w2.data) v = 0.7;
    p.b2 = {1.5, -2.5};
    Matrix attn(4, 2);
    for (double& v : attn.data) v = 0.1;
    const Matrix s = spatial_features(attn, p);
    for (size_t i = 0; i < s.rows; ++i) {
      CHECK(s(i, 0) == 1.5);
      CHECK(s(i, 1) == -2.5);
    }
  }
}

TEST_CASE("decode_mask shape, zero case, and gather oracle") {
  Pcg32 rng(21);
  SECTION("output shape is 4h x 4w") {
    for (auto [h, w] : {std::pair<size_t, size_t>{4, 4}, {2, 8}, {1, 1}, {3, 5}}) {
      CqmdParams p = random_params(8, 16, rng);
      Matrix s(h * w, 8);
      for (double& v : s.data) v = rng.uniform(-1, 1);
      const Matrix m = decode_mask(s, h, w, p);
      CHECK(m.rows == 4 * h);
      CHECK(m.cols == 4 * w);
      for (double v : m.data) {
        CHECK(v > 0.0);
        CHECK(v < 1.0);
      }
    }
  }
  SECTION("grid mismatch is rejected") {
    CqmdParams p = random_params(8, 16, rng);
    Matrix s(15, 8);
    CHECK_THROWS_AS(decode_mask(s, 4, 4, p), takit::GridMismatchError);
  }
  SECTION("zero kernels and biases give uniform 0.5") {
    CqmdParams p = make_params(8, 16);
    Matrix s(16, 8);
    for (double& v : s.data) v = rng.uniform(-1, 1);
    const Matrix m = decode_mask(s, 4, 4, p);
    for (double v : m.data) CHECK(v == 0.5);
  }
  SECTION("scatter forward matches independent gather oracle") {
    for (int rep = 0; rep < 5; ++rep) {
      DeconvKernel k(3, 2, 4);
      for (double& v : k.weight) v = rng.uniform(-1, 1);
      for (double& v : k.bias) v = rng.uniform(-1, 1);
      detail::FeatureMap in(3, 2 + rep % 2, 3);
      for (double& v : in.data) v = rng.uniform(-1, 1);
      const auto got = detail::deconv_forward(in, k);
      const auto want = deconv_gather_oracle(in, k);
      REQUIRE(got.data.size() == want.data.size());
      for (size_t i = 0; i < got.data.size(); ++i)
        CHECK_THAT(got.data[i], Catch::Matchers::WithinAbs(want.data[i], 1e-12));
    }
  }
  SECTION("1x1 grid hand-unrolled") {
    // a single input cell scatters onto kernel taps (ky, kx) in {1, 2} of its 2x2 output
    DeconvKernel k(1, 1, 4);
    for (size_t ky = 0; ky < 4; ++ky)
      for (size_t kx = 0; kx < 4; ++kx) k.w(0, 0, ky, kx) = 10.0 * ky + kx;
    k.bias[0] = 0.25;
    detail::FeatureMap in(1, 1, 1);
    in.at(0, 0, 0) = 2.0;
    const auto out = detail::deconv_forward(in, k);
    REQUIRE(out.h == 2);
    REQUIRE(out.w == 2);
    CHECK(out.at(0, 0, 0) == 0.25 + 2.0 * 11.0);
    CHECK(out.at(0, 0, 1) == 0.25 + 2.0 * 12.0);
    CHECK(out.at(0, 1, 0) == 0.25 + 2.0 * 21.0);
    CHECK(out.at(0, 1, 1) == 0.25 + 2.0 * 22.0);
  }
}

TEST_CASE("loss functions") {
  SECTION("dice basics") {
    Matrix gt(2, 2);
    gt.data = {1, 1, 0, 0};
    CHECK(dice_loss(gt, gt) < 1e-6);
    Matrix inv(2, 2);
    inv.data = {0, 0, 1, 1};
    CHECK(dice_loss(inv, gt) > 1.0 - 1e-5);
    Matrix half(2, 2);
    half.data = {0.5, 0.5, 0.5, 0.5};
    CHECK_THAT(dice_loss(half, gt),
               Catch::Matchers::WithinAbs(1.0 - (2.0 * 1.0 + 1e-6) / (2.0 + 2.0 + 1e-6), 1e-15));
    // empty-vs-empty is 0 by the epsilon convention
    Matrix zero(2, 2);
    CHECK(dice_loss(zero, zero) == 0.0);
  }
  SECTION("ce basics") {
    Matrix gt(1, 2);
    gt.data = {1, 0};
    Matrix half(1, 2);
    half.data = {0.5, 0.5};
    CHECK_THAT(ce_loss(half, gt), Catch::Matchers::WithinAbs(std::log(2.0), 1e-12));
    Matrix good(1, 2);
    good.data = {0.9, 0.2};
    CHECK_THAT(ce_loss(good, gt),
               Catch::Matchers::WithinAbs(-(std::log(0.9) + std::log(0.8)) / 2.0, 1e-12));
    Matrix perfect(1, 2);
    perfect.data = {1.0 - 1e-9, 1e-9};
    CHECK(ce_loss(perfect, gt) < 1e-6);
  }
  SECTION("ssa combination") {
    LossTerms t;
    t.l_ntp = 2.0;
    t.l_dice = 1.0;
    t.l_ce = 2.0;
    CHECK(ssa_loss(t) == 5.0);  // default lambdas are 1
    t.lambda_seg = 0.0;         // no-mask sample
    CHECK(ssa_loss(t) == t.lambda_txt * 2.0);
    t.lambda_seg = 0.5;
    t.lambda_txt = 2.0;
    CHECK(ssa_loss(t) == 2.0 * 2.0 + 0.5 * 3.0);
  }
  SECTION("shape mismatch") {
    Matrix a(2, 2), b(2, 3);
    CHECK_THROWS_AS(dice_loss(a, b), takit::ShapeMismatchError);
    CHECK_THROWS_AS(ce_loss(a, b), takit::ShapeMismatchError);
  }
  SECTION("ranges: dice in [0, 1], ce >= 0") {
    Pcg32 rng(64);
    for (int rep = 0; rep < 500; ++rep) {
      Matrix pred(4, 4), gt(4, 4);
      for (double& v : pred.data) v = 1e-6 + (1.0 - 2e-6) * rng.next_double();
      for (double& v : gt.data) v = rng.bounded(2) ? 1.0 : 0.0;
      const double d = dice_loss(pred, gt);
      CHECK(d >= 0.0);
      CHECK(d <= 1.0);
      CHECK(ce_loss(pred, gt) >= 0.0);
    }
  }
}

TEST_CASE("causal independence") {
  Pcg32 rng(77);
  SECTION("answer rows never matter") {
    for (int rep = 0; rep < 20; ++rep) {
      CqmdParams p = random_params(8, 16, rng);
      HiddenStates hs = random_hidden(16, 3, 4, 8, rng);
      CHECK(causal_independence_check(hs, p, rng.next_u64()));
    }
  }
  SECTION("query and image rows do matter for generic parameters") {
    CqmdParams p = random_params(8, 16, rng);
    HiddenStates hs = random_hidden(16, 3, 4, 8, rng);
    auto [h_img, h_q, h_a] = split_hidden(hs);
    const Matrix s0 = spatial_support(h_img, h_q, p);

    Matrix h_q2 = h_q;
    h_q2(0, 0) += 0.1;
    CHECK_FALSE(s0.bit_equal(spatial_support(h_img, h_q2, p)));

    Matrix h_img2 = h_img;
    h_img2(0, 0) += 0.1;
    CHECK_FALSE(s0.bit_equal(spatial_support(h_img2, h_q, p)));
  }
}

TEST_CASE("gradient check at the reference configuration", "[slow]") {
  // n = 16 (4x4), l = 3, d = 8, d_ff = 16
  Pcg32 rng(2024);
  for (int rep = 0; rep < 3; ++rep) {
    CqmdParams p = random_params(8, 16, rng);
    HiddenStates hs = random_hidden(16, 3, 4, 8, rng);
    auto [h_img, h_q, h_a] = split_hidden(hs);
    Matrix gt = binary_mask(16, 16, rng);
    const double err = grad_check(p, h_img, h_q, 4, 4, gt);
    CHECK(err < 1e-5);
  }
}

TEST_CASE("gradient check negative control: mutated dice epsilon", "[slow]") {
  // Recompute finite differences against a deliberately wrong dice epsilon;
  // the analytic gradients must no longer match.
  Pcg32 rng(31337);
  CqmdParams p = random_params(8, 16, rng);
  HiddenStates hs = random_hidden(16, 3, 4, 8, rng);
  auto [h_img, h_q, h_a] = split_hidden(hs);
  Matrix gt = binary_mask(16, 16, rng);

  auto mutated_loss = [&](const CqmdParams& q) {
    const Matrix s = spatial_support(h_img, h_q, q);
    const Matrix pred = decode_mask(s, 4, 4, q);
    double inter = 0, psum = 0, gsum = 0;
    for (size_t i = 0; i < pred.data.size(); ++i) {
      inter += pred.data[i] * gt.data[i];
      psum += pred.data[i];
      gsum += gt.data[i];
    }
    const double bad_eps = 0.5;  // correct value is 1e-6
    return 1.0 - (2 * inter + bad_eps) / (psum + gsum + bad_eps) + ce_loss(pred, gt);
  };

  const auto trace = detail::mask_loss_forward(h_img, h_q, 4, 4, p, gt);
  CqmdParams analytic = detail::mask_loss_backward(h_img, h_q, p, gt, trace);

  CqmdParams probe = p;
  double max_rel = 0.0;
  std::vector<std::vector<double>*> arrays, grads;
  for_each_param(probe, [&](const char*, std::vector<double>& v) { arrays.push_back(&v); });
  for_each_param(analytic, [&](const char*, std::vector<double>& v) { grads.push_back(&v); });
  for (size_t a = 0; a < arrays.size(); ++a) {
    for (size_t i = 0; i < arrays[a]->size(); ++i) {
      double& slot = (*arrays[a])[i];
      const double orig = slot;
      const double step = 1e-6 * std::max(1.0, std::abs(orig));
      slot = orig + step;
      const double up = mutated_loss(probe);
      slot = orig - step;
      const double down = mutated_loss(probe);
      slot = orig;
      const double numeric = (up - down) / (2 * step);
      const double anal = (*grads[a])[i];
      max_rel = std::max(max_rel, std::abs(anal - numeric) /
                                      std::max({std::abs(anal), std::abs(numeric), 1e-4}));
    }
  }
  CHECK(max_rel > 1e-4);
}

TEST_CASE("zero-loss configuration has near-zero gradients") {
  // Saturate the decoder towards an all-ones target: loss collapses to the
  // epsilon scale and every parameter gradient vanishes through the flat
  // sigmoid tail and the zeroed activations.
  Pcg32 rng(4242);
  CqmdParams p = make_params(8, 16);
  p.deconv2.bias[0] = 40.0;
  HiddenStates hs = random_hidden(16, 3, 4, 8, rng);
  auto [h_img, h_q, h_a] = split_hidden(hs);
  Matrix gt(16, 16);
  for (double& v : gt.data) v = 1.0;
  const auto trace = detail::mask_loss_forward(h_img, h_q, 4, 4, p, gt);
  CHECK(trace.l_mask < 1e-6);
  CqmdParams g = detail::mask_loss_backward(h_img, h_q, p, gt, trace);
  double max_abs = 0.0;
  for_each_param(g, [&](const char*, std::vector<double>& v) {
    for (double x : v) max_abs = std::max(max_abs, std::abs(x));
  });
  CHECK(max_abs < 1e-9);
}

TEST_CASE("params JSON round trip is exact") {
  Pcg32 rng(9);
  CqmdParams p = random_params(8, 16, rng);
  const nlohmann::json doc = params_to_json(p);
  const std::string text = doc.dump();
  CqmdParams q = params_from_json(nlohmann::json::parse(text));
  bool equal = true;
  std::vector<std::vector<double>*> pa, qa;
  for_each_param(p, [&](const char*, std::vector<double>& v) { pa.push_back(&v); });
  for_each_param(q, [&](const char*, std::vector<double>& v) { qa.push_back(&v); });
  for (size_t i = 0; i < pa.size(); ++i) equal = equal && (*pa[i] == *qa[i]);
  CHECK(equal);

  SECTION("shape violations are rejected") {
    nlohmann::json bad = doc;
    bad["w1"]["shape"] = {3, 3};
    CHECK_THROWS_AS(params_from_json(bad), takit::SchemaError);
    nlohmann::json missing = doc;
    missing.erase("b2");
    CHECK_THROWS_AS(params_from_json(missing), takit::SchemaError);
  }
}
