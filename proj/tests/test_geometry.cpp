#include <catch2/catch_amalgamated.hpp>

#include "takit/geometry.hpp"
#include "takit/rng.hpp"

using takit::Box;
using takit::CoordConvention;
using takit::ImageSize;

namespace {

Box random_box(takit::rng::Pcg32& rng, double extent) {
  for (;;) {
    const double x0 = rng.uniform(0.0, extent);
    const double y0 = rng.uniform(0.0, extent);
    const double w = rng.uniform(0.0, extent / 2);
    const double h = rng.uniform(0.0, extent / 2);
    if (w > 1e-6 && h > 1e-6) return Box(x0, y0, x0 + w, y0 + h);
  }
}

}  // namespace

TEST_CASE("iou basics") {
  CHECK(takit::iou(Box(0, 0, 10, 10), Box(0, 0, 10, 10)) == 1.0);
  CHECK(takit::iou(Box(0, 0, 10, 10), Box(20, 20, 30, 30)) == 0.0);
  // inter 50, union 150
  CHECK_THAT(takit::iou(Box(0, 0, 10, 10), Box(5, 0, 15, 10)),
             Catch::Matchers::WithinAbs(1.0 / 3.0, 1e-12));
  // boxes touching along an edge are disjoint
  CHECK(takit::iou(Box(0, 0, 10, 10), Box(10, 0, 20, 10)) == 0.0);
}

TEST_CASE("iou properties") {
  takit::rng::Pcg32 rng(7);
  for (int i = 0; i < 1000; ++i) {
    const Box a = random_box(rng, 100.0);
    const Box b = random_box(rng, 100.0);
    const double v = takit::iou(a, b);
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
    CHECK(takit::iou(b, a) == v);
    CHECK(takit::iou(a, a) == 1.0);
    // translation invariance
    const double tx = rng.uniform(-50.0, 50.0);
    const double ty = rng.uniform(-50.0, 50.0);
    const Box at(a.x_min + tx, a.y_min + ty, a.x_max + tx, a.y_max + ty);
    const Box bt(b.x_min + tx, b.y_min + ty, b.x_max + tx, b.y_max + ty);
    CHECK_THAT(takit::iou(at, bt), Catch::Matchers::WithinAbs(v, 1e-12));
  }
}

TEST_CASE("box construction rejects degenerate input") {
  CHECK_THROWS_AS(Box(0, 0, 0, 10), takit::DegenerateBoxError);
  CHECK_THROWS_AS(Box(0, 0, 10, 0), takit::DegenerateBoxError);
  CHECK_THROWS_AS(Box(5, 5, 4, 6), takit::DegenerateBoxError);
  const double inf = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(Box(0, 0, inf, 10), takit::DegenerateBoxError);
  const double nan = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(Box(0, nan, 10, 10), takit::DegenerateBoxError);
}

TEST_CASE("to_canonical conversions") {
  const ImageSize img(200, 100);
  SECTION("yxyx reorder") {
    const Box b = takit::to_canonical({10, 20, 30, 40}, CoordConvention::YxyxAbs, img);
    CHECK(b == Box(20, 10, 40, 30));
  }
  SECTION("norm01 scales by dims") {
    const Box b = takit::to_canonical({0.5, 0.5, 1.0, 1.0}, CoordConvention::XyxyNorm01, img);
    CHECK(b == Box(100, 50, 200, 100));
  }
  SECTION("rel1000 scales by dims/1000") {
    const Box b =
        takit::to_canonical({500, 500, 1000, 1000}, CoordConvention::XyxyRel1000, img);
    CHECK(b == Box(100, 50, 200, 100));
  }
  SECTION("range errors") {
    CHECK_THROWS_AS(takit::to_canonical({-0.1, 0, 1, 1}, CoordConvention::XyxyNorm01, img),
                    takit::OutOfRangeError);
    CHECK_THROWS_AS(takit::to_canonical({0, 0, 1.5, 1}, CoordConvention::XyxyNorm01, img),
                    takit::OutOfRangeError);
    CHECK_THROWS_AS(takit::to_canonical({0, 0, 1200, 500}, CoordConvention::XyxyRel1000, img),
                    takit::OutOfRangeError);
    // within 1e-6 tolerance is accepted
    CHECK_NOTHROW(takit::to_canonical({0, 0, 1.0000005, 1}, CoordConvention::XyxyNorm01, img));
  }
  SECTION("degenerate result") {
    CHECK_THROWS_AS(takit::to_canonical({10, 10, 10, 20}, CoordConvention::XyxyAbs, img),
                    takit::DegenerateBoxError);
  }
}

TEST_CASE("from_canonical inverts to_canonical") {
  const ImageSize img(200, 100);
  const auto out = takit::from_canonical(Box(20, 10, 40, 30), CoordConvention::YxyxAbs, img);
  CHECK(out == std::array<double, 4>{10, 20, 30, 40});
  const auto norm = takit::from_canonical(Box(100, 50, 200, 100), CoordConvention::XyxyNorm01, img);
  CHECK(norm == std::array<double, 4>{0.5, 0.5, 1.0, 1.0});
}

TEST_CASE("round trip through every convention") {
  takit::rng::Pcg32 rng(42);
  const ImageSize img(640, 480);
  const CoordConvention convs[] = {CoordConvention::XyxyAbs, CoordConvention::YxyxAbs,
                                   CoordConvention::XyxyNorm01, CoordConvention::XyxyRel1000};
  for (int i = 0; i < 1000; ++i) {
    // from_canonical clamps to image bounds, so stay inside them
    Box b = random_box(rng, 320.0);
    for (CoordConvention conv : convs) {
      const auto coords = takit::from_canonical(b, conv, img);
      const Box back = takit::to_canonical(coords, conv, img);
      CHECK_THAT(back.x_min, Catch::Matchers::WithinAbs(b.x_min, 1e-9));
      CHECK_THAT(back.y_min, Catch::Matchers::WithinAbs(b.y_min, 1e-9));
      CHECK_THAT(back.x_max, Catch::Matchers::WithinAbs(b.x_max, 1e-9));
      CHECK_THAT(back.y_max, Catch::Matchers::WithinAbs(b.y_max, 1e-9));
    }
  }
}
