#include <catch2/catch_amalgamated.hpp>
#include <sstream>

#include "takit/maskrender.hpp"
#include "takit/rng.hpp"

using namespace takit;
using namespace takit::maskrender;
using takit::rng::Pcg32;

namespace {

const BlockGlyphRasterizer kRaster;

std::string random_word(Pcg32& rng, size_t min_len = 1, size_t max_len = 10) {
  const size_t len = min_len + rng.bounded(static_cast<uint32_t>(max_len - min_len + 1));
  std::string s;
  for (size_t i = 0; i < len; ++i) s += static_cast<char>('A' + rng.bounded(26));
  return s;
}

}  // namespace

TEST_CASE("select_font") {
  CHECK(select_font("hello") == FontId::Latin);
  CHECK(select_font("入库") == FontId::Cjk);
  CHECK(select_font("abc入") == FontId::Cjk);  // any-CJK rule
  CHECK(select_font("。") == FontId::Cjk);     // CJK punctuation block
  CHECK(select_font("STOP 123!") == FontId::Latin);
  CHECK(select_font("АБ") == FontId::Latin);  // Cyrillic maps to the Latin font
}

TEST_CASE("block rasterizer is deterministic and monotone") {
  Pcg32 rng(17);
  for (int rep = 0; rep < 60; ++rep) {
    const std::string word =
        rep % 3 == 2 ? std::string("入库产品") : random_word(rng, 1, 8);
    const FontId font = select_font(word);

    const GlyphBitmap a = kRaster.rasterize(word, font, 23);
    const GlyphBitmap b = kRaster.rasterize(word, font, 23);
    CHECK(a.coverage == b.coverage);
    REQUIRE(a.has_foreground());
    // tight crop: returned bounds hug the bitmap
    CHECK(a.fg_width() == a.width);
    CHECK(a.fg_height() == a.height);

    int prev_w = 0, prev_h = 0;
    for (int size = 1; size <= 96; size += 1 + rng.bounded(3)) {
      const GlyphBitmap g = kRaster.rasterize(word, font, size);
      REQUIRE(g.has_foreground());
      CHECK(g.fg_width() >= prev_w);
      CHECK(g.fg_height() >= prev_h);
      prev_w = g.fg_width();
      prev_h = g.fg_height();
    }
  }
}

TEST_CASE("fit_font_size") {
  SECTION("fitted size fills the box maximally") {
    Pcg32 rng(31);
    for (int rep = 0; rep < 40; ++rep) {
      const std::string word = random_word(rng, 1, 12);
      const Box box(0, 0, 5 + rng.uniform(0, 400), 5 + rng.uniform(0, 60));
      const int size = fit_font_size(word, box, kRaster);
      const FontId font = select_font(word);
      const GlyphBitmap at = kRaster.rasterize(word, font, size);
      CHECK(at.fg_width() <= box.width());
      CHECK(at.fg_height() <= box.height());
      if (size < kMaxFontSize) {
        const GlyphBitmap next = kRaster.rasterize(word, font, size + 1);
        const bool overflows =
            next.fg_width() > box.width() || next.fg_height() > box.height();
        CHECK(overflows);
      }
    }
  }
  SECTION("doubling the box never shrinks the fitted size") {
    Pcg32 rng(32);
    for (int rep = 0; rep < 30; ++rep) {
      const std::string word = random_word(rng, 2, 10);
      const double w = 10 + rng.uniform(0, 200), h = 5 + rng.uniform(0, 40);
      const int s1 = fit_font_size(word, Box(0, 0, w, h), kRaster);
      const int s2 = fit_font_size(word, Box(0, 0, 2 * w, 2 * h), kRaster);
      CHECK(s2 >= s1);
    }
  }
  SECTION("a single character in a huge box caps at 512") {
    CHECK(fit_font_size("X", Box(0, 0, 5000, 5000), kRaster) == kMaxFontSize);
  }
  SECTION("overflow flag on impossibly small boxes") {
    bool flag = false;
    const int size = fit_font_size("WWWWWWWW", Box(0, 0, 2, 1.5), kRaster, &flag);
    CHECK(size == 1);
    CHECK(flag);
  }
  SECTION("empty text is an error") {
    CHECK_THROWS_AS(fit_font_size("", Box(0, 0, 10, 10), kRaster), takit::EmptyTextError);
  }
}

TEST_CASE("render_destylized") {
  const ImageSize img(320, 200);
  SECTION("foreground exists and is confined to the box (1 px slack)") {
    Pcg32 rng(41);
    for (int rep = 0; rep < 50; ++rep) {
      const std::string word = random_word(rng, 1, 8);
      const double x = rng.uniform(0, 220), y = rng.uniform(0, 150);
      const Box box(x, y, x + rng.uniform(4, 90), y + rng.uniform(4, 40));
      const BinaryMask mask = render_destylized(word, box, img, kRaster);
      REQUIRE(mask.width == img.width);
      REQUIRE(mask.height == img.height);
      long fg = 0;
      for (int py = 0; py < mask.height; ++py) {
        for (int px = 0; px < mask.width; ++px) {
          if (!mask.at(px, py)) continue;
          ++fg;
          CHECK(px >= box.x_min - 1.0);
          CHECK(px <= box.x_max + 1.0);
          CHECK(py >= box.y_min - 1.0);
          CHECK(py <= box.y_max + 1.0);
        }
      }
      CHECK(fg >= 1);
    }
  }
  SECTION("bit-identical across repeated renders") {
    const Box box(30.5, 40.25, 120.75, 80);
    const BinaryMask a = render_destylized("EXIT", box, img, kRaster);
    const BinaryMask b = render_destylized("EXIT", box, img, kRaster);
    CHECK(a.data == b.data);
  }
  SECTION("pixels outside the box stay zero") {
    const Box box(100, 100, 150, 130);
    const BinaryMask mask = render_destylized("ab", box, img, kRaster);
    for (int py = 0; py < mask.height; ++py) {
      for (int px = 0; px < mask.width; ++px) {
        if (px < 98 || px > 152 || py < 98 || py > 132) {
          CHECK(mask.at(px, py) == 0);
        }
      }
    }
  }
  SECTION("empty and whitespace-only transcripts are errors") {
    CHECK_THROWS_AS(render_destylized("", Box(0, 0, 10, 10), img, kRaster),
                    takit::EmptyTextError);
    CHECK_THROWS_AS(render_destylized("   ", Box(0, 0, 10, 10), img, kRaster),
                    takit::EmptyTextError);
  }
}

TEST_CASE("RLE round trip") {
  Pcg32 rng(51);
  for (int rep = 0; rep < 300; ++rep) {
    const int w = 1 + rng.bounded(64), h = 1 + rng.bounded(48);
    BinaryMask mask(w, h);
    for (auto& v : mask.data) v = rng.bounded(4) == 0 ? 1 : 0;
    const auto runs = rle_encode(mask);
    // alternating runs starting with a zero-run
    const BinaryMask back = rle_decode(runs, w, h);
    CHECK(back.data == mask.data);
    if (!mask.data.empty() && mask.data[0] == 1) {
      CHECK(runs[0] == 0);  // leading zero-run is explicit
    }
  }
  SECTION("corrupt RLE is rejected") {
    CHECK_THROWS_AS(rle_decode({3, 1}, 2, 1), takit::SchemaError);
    CHECK_THROWS_AS(rle_decode({1}, 2, 1), takit::SchemaError);
  }
}

TEST_CASE("PGM export") {
  BinaryMask mask(3, 2);
  mask.at(1, 0) = 1;
  std::ostringstream out;
  write_pgm(mask, out);
  const std::string s = out.str();
  CHECK(s.rfind("P5\n3 2\n255\n", 0) == 0);
  CHECK(s.size() == 11 + 6);
  CHECK(static_cast<unsigned char>(s[11 + 1]) == 255);
  CHECK(static_cast<unsigned char>(s[11 + 0]) == 0);
}
