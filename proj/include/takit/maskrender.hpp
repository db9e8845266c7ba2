#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "takit/error.hpp"
#include "takit/geometry.hpp"
#include "takit/rng.hpp"
#include "takit/utf8.hpp"

namespace takit::maskrender {

enum class FontId { Latin, Cjk };

/// Image-frame binary raster; data is row-major 0/1.
struct BinaryMask {
  int width = 0;
  int height = 0;
  std::vector<uint8_t> data;

  BinaryMask() = default;
  BinaryMask(int w, int h) : width(w), height(h), data(static_cast<size_t>(w) * h, 0) {}
  uint8_t& at(int x, int y) { return data[static_cast<size_t>(y) * width + x]; }
  uint8_t at(int x, int y) const { return data[static_cast<size_t>(y) * width + x]; }
};

/// Grayscale coverage bitmap plus the tight bounds of its foreground
/// ([x0, x1) x [y0, y1)); all-zero bitmaps carry empty bounds.
struct GlyphBitmap {
  int width = 0;
  int height = 0;
  std::vector<uint8_t> coverage;  // 0..255, row-major
  int fg_x0 = 0, fg_y0 = 0, fg_x1 = 0, fg_y1 = 0;

  bool has_foreground() const { return fg_x1 > fg_x0 && fg_y1 > fg_y0; }
  int fg_width() const { return fg_x1 - fg_x0; }
  int fg_height() const { return fg_y1 - fg_y0; }
};

/// Rasterization capability. Backends must be monotone: a larger point size
/// never yields smaller tight bounds in either dimension.
class GlyphRasterizer {
 public:
  virtual ~GlyphRasterizer() = default;
  virtual GlyphBitmap rasterize(const std::string& text, FontId font, int size_pts) const = 0;
};

/// CJK font when any code point falls in CJK Unified Ideographs (incl.
/// extension A) or the CJK punctuation block; Latin font otherwise.
inline FontId select_font(const std::string& text) {
  for (char32_t c : utf8::decode(text)) {
    if ((c >= 0x4E00 && c <= 0x9FFF) || (c >= 0x3400 && c <= 0x4DBF) ||
        (c >= 0x3000 && c <= 0x303F)) {
      return FontId::Cjk;
    }
  }
  return FontId::Latin;
}

/// Embedded default backend: deterministic de-stylized block glyphs on a 7-row
/// cell grid, scaled to the requested point size. Each non-space code point
/// maps to a fixed pseudo-glyph pattern derived from the code point value, so
/// rendering needs no font files and is bit-stable across runs. Real font
/// backends plug in through the GlyphRasterizer interface.
class BlockGlyphRasterizer : public GlyphRasterizer {
 public:
  GlyphBitmap rasterize(const std::string& text, FontId font, int size_pts) const override {
    if (size_pts < 1) size_pts = 1;
    const std::u32string cps = utf8::decode(text);

    // compose the cell-grid pattern: kRows rows, glyphs separated by one cell
    const int cols_per_glyph = font == FontId::Cjk ? 7 : 5;
    std::vector<std::vector<uint8_t>> grid(kRows);
    bool first = true;
    for (char32_t c : cps) {
      if (is_space(c)) {
        for (int r = 0; r < kRows; ++r) {
          grid[r].insert(grid[r].end(), cols_per_glyph / 2 + 1, 0);
        }
        first = false;
        continue;
      }
      if (!first) {
        for (int r = 0; r < kRows; ++r) grid[r].push_back(0);
      }
      first = false;
      const uint64_t bits = glyph_bits(c, font);
      for (int r = 0; r < kRows; ++r) {
        for (int col = 0; col < cols_per_glyph; ++col) {
          grid[r].push_back((bits >> (r * cols_per_glyph + col)) & 1u);
        }
      }
    }

    // crop the pattern to its lit cells so scaled tight bounds stay monotone
    const int total_cols = grid[0].empty() ? 0 : static_cast<int>(grid[0].size());
    int c0 = total_cols, c1 = 0, r0 = kRows, r1 = 0;
    for (int r = 0; r < kRows; ++r) {
      for (int c = 0; c < total_cols; ++c) {
        if (grid[r][c]) {
          c0 = std::min(c0, c);
          c1 = std::max(c1, c + 1);
          r0 = std::min(r0, r);
          r1 = std::max(r1, r + 1);
        }
      }
    }
    GlyphBitmap out;
    if (c1 <= c0 || r1 <= r0) return out;  // nothing to draw

    // cell (r, c) fills pixel rect [cell_px(c), cell_px(c+1)) x [...]
    auto cell_px = [&](int cell) {
      return static_cast<int>(static_cast<int64_t>(cell) * size_pts / kRows);
    };
    const int w = std::max(cell_px(c1 - c0) , cell_px(c1 - c0 - 1) + 1);
    const int h = std::max(cell_px(r1 - r0), cell_px(r1 - r0 - 1) + 1);
    out.width = w;
    out.height = h;
    out.coverage.assign(static_cast<size_t>(w) * h, 0);
    for (int r = r0; r < r1; ++r) {
      for (int c = c0; c < c1; ++c) {
        if (!grid[r][c]) continue;
        const int px0 = cell_px(c - c0), py0 = cell_px(r - r0);
        const int px1 = std::max(cell_px(c - c0 + 1), px0 + 1);
        const int py1 = std::max(cell_px(r - r0 + 1), py0 + 1);
        for (int y = py0; y < std::min(py1, h); ++y) {
          for (int x = px0; x < std::min(px1, w); ++x) {
            out.coverage[static_cast<size_t>(y) * w + x] = 255;
          }
        }
      }
    }
    out.fg_x0 = 0;
    out.fg_y0 = 0;
    out.fg_x1 = w;
    out.fg_y1 = h;
    return out;
  }

 private:
  static constexpr int kRows = 7;

  static bool is_space(char32_t c) {
    return c == U' ' || c == U'\t' || c == U'\n' || c == U'\r' || c == 0x3000 || c == 0x00A0;
  }

  /// Fixed pseudo-glyph pattern: one bit per cell, derived from the code
  /// point. Always lights the full perimeter row/column extent so every glyph
  /// occupies its whole cell footprint.
  static uint64_t glyph_bits(char32_t c, FontId font) {
    const int cols = font == FontId::Cjk ? 7 : 5;
    uint64_t h = rng::splitmix64(static_cast<uint64_t>(c) * 2654435761u + (cols == 7 ? 7 : 5));
    uint64_t bits = 0;
    for (int r = 0; r < kRows; ++r) {
      for (int col = 0; col < cols; ++col) {
        const int idx = r * cols + col;
        if (idx % 53 == 0) h = rng::splitmix64(h);
        const bool edge = r == 0 || r == kRows - 1 || col == 0 || col == cols - 1;
        const bool lit = edge || ((h >> (idx % 53)) & 1u);
        if (lit) bits |= 1ull << idx;
      }
    }
    return bits;
  }
};

inline constexpr int kMaxFontSize = 512;

/// Largest integer point size in [1, 512] whose tight render bounds fit the
/// box, found by binary search (the rasterizer is monotone). Returns 1 with
/// `overflow_flag` set when even size 1 does not fit.
inline int fit_font_size(const std::string& text, const Box& box, const GlyphRasterizer& r,
                         bool* overflow_flag = nullptr) {
  if (text.empty()) throw EmptyTextError("cannot fit an empty transcript");
  if (overflow_flag != nullptr) *overflow_flag = false;
  const FontId font = select_font(text);
  auto fits = [&](int size) {
    const GlyphBitmap bmp = r.rasterize(text, font, size);
    if (!bmp.has_foreground()) return true;  // nothing to draw always fits
    return bmp.fg_width() <= box.width() && bmp.fg_height() <= box.height();
  };
  if (!fits(1)) {
    if (overflow_flag != nullptr) *overflow_flag = true;
    return 1;
  }
  int lo = 1, hi = kMaxFontSize;  // invariant: fits(lo), and hi+1 is never probed
  while (lo < hi) {
    const int mid = lo + (hi - lo + 1) / 2;
    if (fits(mid)) {
      lo = mid;
    } else {
      hi = mid - 1;
    }
  }
  return lo;
}

/// De-stylized mask: text rendered at the fitted size, cropped to its tight
/// foreground, nearest-neighbor resized to exactly the box extent (aspect
/// distortion is intended), binarized at half the peak coverage, and placed
/// at the box position in an otherwise-zero image-sized mask.
inline BinaryMask render_destylized(const std::string& text, const Box& box,
                                    const ImageSize& image, const GlyphRasterizer& r) {
  if (text.empty()) throw EmptyTextError("cannot render an empty transcript");
  const FontId font = select_font(text);
  const int size = fit_font_size(text, box, r);
  const GlyphBitmap bmp = r.rasterize(text, font, size);
  if (!bmp.has_foreground()) {
    throw EmptyTextError("transcript has no renderable foreground");
  }

  uint8_t peak = 0;
  for (uint8_t v : bmp.coverage) peak = std::max(peak, v);
  const int thr = (peak + 1) / 2;

  const int tw = std::max(1, static_cast<int>(std::lround(box.width())));
  const int th = std::max(1, static_cast<int>(std::lround(box.height())));
  const int ox = static_cast<int>(std::lround(box.x_min));
  const int oy = static_cast<int>(std::lround(box.y_min));

  BinaryMask mask(image.width, image.height);
  for (int y = 0; y < th; ++y) {
    const int iy = oy + y;
    if (iy < 0 || iy >= image.height) continue;
    // nearest-neighbor source row within the tight crop
    const int sy = bmp.fg_y0 + static_cast<int>((static_cast<int64_t>(y) * bmp.fg_height()) / th);
    for (int x = 0; x < tw; ++x) {
      const int ix = ox + x;
      if (ix < 0 || ix >= image.width) continue;
      const int sx =
          bmp.fg_x0 + static_cast<int>((static_cast<int64_t>(x) * bmp.fg_width()) / tw);
      const uint8_t cov = bmp.coverage[static_cast<size_t>(sy) * bmp.width + sx];
      if (cov >= thr && cov > 0) mask.at(ix, iy) = 1;
    }
  }
  return mask;
}

// ---------------------------------------------------------------------------
// Serialization: row-major RLE (alternating run lengths, zero-run first) and
// PGM export for visual inspection.
// ---------------------------------------------------------------------------

inline std::vector<uint32_t> rle_encode(const BinaryMask& mask) {
  std::vector<uint32_t> runs;
  uint8_t current = 0;
  uint32_t len = 0;
  for (uint8_t v : mask.data) {
    if (v == current) {
      ++len;
    } else {
      runs.push_back(len);
      current = v;
      len = 1;
    }
  }
  runs.push_back(len);
  return runs;
}

inline BinaryMask rle_decode(const std::vector<uint32_t>& runs, int width, int height) {
  BinaryMask mask(width, height);
  size_t pos = 0;
  uint8_t value = 0;
  for (uint32_t run : runs) {
    if (pos + run > mask.data.size()) throw SchemaError("RLE overruns the mask");
    std::fill(mask.data.begin() + pos, mask.data.begin() + pos + run, value);
    pos += run;
    value = value ? 0 : 1;
  }
  if (pos != mask.data.size()) throw SchemaError("RLE does not cover the mask");
  return mask;
}

inline void write_pgm(const BinaryMask& mask, std::ostream& out) {
  out << "P5\n" << mask.width << " " << mask.height << "\n255\n";
  for (uint8_t v : mask.data) out.put(v ? static_cast<char>(255) : 0);
}

}  // namespace takit::maskrender
