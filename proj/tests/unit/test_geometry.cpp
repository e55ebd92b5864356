// Copyright 2026 The facevl Authors
// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <numbers>

#include "facevl/errors.hpp"
#include "facevl/geometry.hpp"
#include "facevl/synthetic.hpp"
#include "facevl_test/support.hpp"

using namespace facevl;

namespace {

Landmarks random_points(std::size_t n, double lo, double hi, Rng& rng) {
  std::uniform_real_distribution<double> u(lo, hi);
  Landmarks pts(n);
  for (auto& p : pts) p = {u(rng), u(rng)};
  return pts;
}

Image random_image(std::size_t size, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Image image(size, size);
  for (double& v : image.pixels()) v = u(rng);
  return image;
}

double normalised(std::size_t q, std::size_t size) {
  return (2.0 * static_cast<double>(q) + 1.0) / static_cast<double>(size) - 1.0;
}

}  // namespace

TEST_SUITE("geometry") {
  TEST_CASE("similarity estimation closed forms") {
    Rng rng(1);
    const Landmarks src = random_points(5, 0.0, 100.0, rng);
    const SimilarityTransform same = estimate_similarity(src, src);
    CHECK(same.distance(SimilarityTransform()) < 1e-9);

    Landmarks shifted = src;
    for (auto& p : shifted) p = {p.x + 10.0, p.y - 3.0};
    const auto m = estimate_similarity(src, shifted).matrix();
    CHECK(m[2] == doctest::Approx(10.0).epsilon(1e-12));
    CHECK(m[5] == doctest::Approx(-3.0).epsilon(1e-12));
    CHECK(m[0] == doctest::Approx(1.0).epsilon(1e-12));

    Landmarks rotated = src;
    for (auto& p : rotated) p = {-2.0 * p.y, 2.0 * p.x};
    const SimilarityTransform r = estimate_similarity(src, rotated);
    CHECK(std::abs(r.scale() - 2.0) < 1e-6);
    CHECK(std::abs(r.rotation() - std::numbers::pi / 2.0) < 1e-6);
  }

  TEST_CASE("similarity recovery over 1,000 random transforms") {
    Rng rng(2);
    std::uniform_real_distribution<double> scale(0.2, 5.0);
    std::uniform_real_distribution<double> angle(-std::numbers::pi, std::numbers::pi);
    std::uniform_real_distribution<double> shift(-200.0, 200.0);
    double worst = 0.0;
    for (int i = 0; i < 1000; ++i) {
      const auto truth = SimilarityTransform::from_params(scale(rng), angle(rng), shift(rng), shift(rng));
      const Landmarks src = random_points(5, -50.0, 150.0, rng);
      Landmarks dst;
      for (const auto& p : src) dst.push_back(truth.apply(p));
      worst = std::max(worst, estimate_similarity(src, dst).distance(truth));
    }
    CHECK(worst < 1e-6);
  }

  TEST_CASE("degenerate sources and inverses are singular") {
    const Landmarks same(5, Point2{3.0, 4.0});
    CHECK_THROWS_AS(estimate_similarity(same, same), SingularityError);
    CHECK_THROWS_AS(SimilarityTransform({0, 0, 1, 0, 0, 1}).inverse(), SingularityError);
    const auto t = SimilarityTransform::from_params(1.7, 0.3, 4.0, -2.0);
    CHECK(t.after(t.inverse()).distance(SimilarityTransform()) < 1e-12);
  }

  TEST_CASE("augmentation ranges and reproducibility") {
    Rng rng(3);
    const auto base = SimilarityTransform::from_params(1.3, 0.2, 5.0, 7.0);
    CHECK(augment_transform(base, rng, AugmentRanges::none(), 224).distance(base) < 1e-12);
    const AugmentRanges ranges = AugmentRanges::parsing();
    for (int i = 0; i < 10000; ++i) {
      AugmentSample s;
      augment_transform(base, rng, ranges, 224, &s);
      REQUIRE(std::abs(s.rotation_deg) <= 18.0);
      REQUIRE(s.scale >= 0.9);
      REQUIRE(s.scale <= 1.1);
      REQUIRE(std::abs(s.tx) <= 0.01 * 224);
      REQUIRE(std::abs(s.ty) <= 0.01 * 224);
    }
    Rng a(9), b(9);
    CHECK(augment_transform(base, a, ranges, 224).matrix() == augment_transform(base, b, ranges, 224).matrix());
  }

  TEST_CASE("tanh_alpha suite") {
    Rng rng(4);
    std::uniform_real_distribution<double> wide(-4.0, 4.0);
    for (int i = 0; i < 1000; ++i) {
      const double x = wide(rng);
      REQUIRE(std::abs(tanh_alpha(x, 1.0) - std::tanh(x)) <= 1e-12);
    }
    for (double alpha : {0.2, 0.5, 0.8}) {
      std::uniform_real_distribution<double> inner(-1.0 + alpha, 1.0 - alpha);
      for (int i = 0; i < 1000; ++i) {
        const double x = inner(rng);
        REQUIRE(tanh_alpha(x, alpha) == x);
      }
      const double b = 1.0 - alpha;
      REQUIRE(tanh_alpha(b, alpha) == b);
      REQUIRE(tanh_alpha(-b, alpha) == -b);
      const double h = 1e-7;
      for (double edge : {b, -b}) {
        const double right = (tanh_alpha(edge + h, alpha) - tanh_alpha(edge, alpha)) / h;
        const double left = (tanh_alpha(edge, alpha) - tanh_alpha(edge - h, alpha)) / h;
        CHECK(std::abs(right - left) < 1e-6);
        CHECK(std::abs(tanh_alpha(edge + 1e-12, alpha) - tanh_alpha(edge - 1e-12, alpha)) < 1e-6);
      }
      for (int i = 0; i < 1000; ++i) {
        const double x = wide(rng);
        REQUIRE(tanh_alpha(-x, alpha) == -tanh_alpha(x, alpha));
        REQUIRE(std::abs(tanh_alpha(x, alpha)) < 1.0);
      }
    }
    CHECK(std::abs(tanh_alpha(0.1, 0.8) - 0.1) == 0.0);
    CHECK(std::abs(tanh_alpha(1.0, 0.5) - 0.880797) < 1e-6);
    CHECK(std::abs(tanh_alpha(1.0, 0.5) - (0.5 * std::tanh(1.0) + 0.5)) < 1e-15);
  }

  TEST_CASE("tanh_alpha inverse") {
    for (double alpha : {0.3, 0.8, 1.0}) {
      for (double x = -3.0; x <= 3.0; x += 0.01) {
        CHECK(tanh_alpha_inverse(tanh_alpha(x, alpha), alpha) == doctest::Approx(x).epsilon(1e-9));
      }
      CHECK(std::isinf(tanh_alpha_inverse(1.0, alpha)));
    }
    CHECK_THROWS(tanh_alpha(0.5, 0.0));
  }

  TEST_CASE("warping disabled with identity reproduces the input") {
    const Image image = random_image(24, 5);
    const WarpConfig off{.alpha = 0.8, .target_size = 24, .enabled = false};
    CHECK(warp_image(image, SimilarityTransform(), off) == image);
    const WarpConfig half{.alpha = 0.8, .target_size = 12, .enabled = false};
    const Image small = warp_image(image, resize_transform(24, 24, 12), half);
    CHECK(small.height() == 12);
    const double expected = sample_bilinear(image, 2 * 3 + 0.5, 2 * 5 + 0.5, 1);
    CHECK(small.at(5, 3, 1) == doctest::Approx(expected).epsilon(1e-12));
  }

  TEST_CASE("identity region of the warp matches the plain affine warp") {
    const Image image = random_image(48, 6);
    const auto t = SimilarityTransform::from_params(0.9, 0.1, 2.0, 3.0);
    for (double alpha : {0.8, 1e-3}) {
      const WarpConfig on{.alpha = alpha, .target_size = 40, .enabled = true};
      const WarpConfig off{.alpha = alpha, .target_size = 40, .enabled = false};
      const Image warped = warp_image(image, t, on);
      const Image plain = warp_image(image, t, off);
      std::size_t compared = 0;
      for (std::size_t y = 0; y < 40; ++y) {
        for (std::size_t x = 0; x < 40; ++x) {
          if (std::abs(normalised(x, 40)) > 1.0 - alpha || std::abs(normalised(y, 40)) > 1.0 - alpha) continue;
          for (std::size_t c = 0; c < 3; ++c) CHECK(warped.at(y, x, c) == doctest::Approx(plain.at(y, x, c)).epsilon(1e-12));
          ++compared;
        }
      }
      CHECK(compared > 0);
      if (alpha < 0.01) CHECK(compared == 40 * 40);
    }
  }

  TEST_CASE("point transforms") {
    Rng rng(7);
    const Landmarks pts = random_points(20, 0.0, 63.0, rng);
    const WarpConfig off{.alpha = 0.8, .target_size = 64, .enabled = false};
    CHECK(transform_points(pts, SimilarityTransform(), off) == pts);
    const auto shift = SimilarityTransform::from_params(1.0, 0.0, 5.0, -2.0);
    const Landmarks moved = transform_points(pts, shift, off);
    for (std::size_t i = 0; i < pts.size(); ++i) {
      CHECK(moved[i].x - pts[i].x == doctest::Approx(5.0));
      CHECK(moved[i].y - pts[i].y == doctest::Approx(-2.0));
    }
    const WarpConfig on{.alpha = 0.8, .target_size = 64, .enabled = true};
    const auto t = SimilarityTransform::from_params(0.8, -0.2, 10.0, 4.0);
    const Landmarks back = inverse_transform_points(transform_points(pts, t, on), t, on);
    for (std::size_t i = 0; i < pts.size(); ++i) {
      CHECK(std::abs(back[i].x - pts[i].x) < 1e-6);
      CHECK(std::abs(back[i].y - pts[i].y) < 1e-6);
    }
  }

  TEST_CASE("heatmap rendering") {
    const Landmarks pts{{64.0, 64.0}, {10.0, 20.0}, {5000.0, -4000.0}};
    const Heatmap h = render_heatmap(pts);
    CHECK(h.channels == 3);
    CHECK(h.size == 128);
    CHECK(h.at(0, 64, 64) == 1.0);
    CHECK(h.at(0, 64, 65) == doctest::Approx(std::exp(-0.5)).epsilon(1e-12));
    CHECK(h.at(1, 21, 10) == doctest::Approx(std::exp(-0.5)).epsilon(1e-12));
    for (std::size_t y = 0; y < 128; ++y)
      for (std::size_t x = 0; x < 128; ++x) REQUIRE(std::abs(h.at(2, y, x)) <= 1e-12);
  }

  TEST_CASE("heatmap decode recovers rendered landmarks") {
    Rng rng(8);
    std::uniform_int_distribution<int> pixel(0, 127);
    for (int i = 0; i < 200; ++i) {
      const Point2 p{static_cast<double>(pixel(rng)), static_cast<double>(pixel(rng))};
      const Landmarks one{p};
      const auto d = decode_heatmap(render_heatmap(one));
      CHECK(std::abs(d[0].point.x - p.x) < 1e-6);
      CHECK(std::abs(d[0].point.y - p.y) < 1e-6);
    }
    const Landmarks frac = random_points(1000, 0.0, 127.0, rng);
    const auto decoded = decode_heatmap(render_heatmap(frac));
    double worst = 0.0;
    for (std::size_t i = 0; i < frac.size(); ++i) {
      worst = std::max(worst, std::hypot(decoded[i].point.x - frac[i].x, decoded[i].point.y - frac[i].y));
      CHECK_FALSE(decoded[i].degenerate);
    }
    CHECK(worst < 0.5);
  }

  TEST_CASE("uniform heatmap decodes to the origin, flagged") {
    Heatmap h(2, 16);
    std::fill(h.values.begin(), h.values.end(), 0.25);
    for (const auto& d : decode_heatmap(h)) {
      CHECK(d.degenerate);
      CHECK(d.point == Point2{0.0, 0.0});
    }
  }

  TEST_CASE("landmark and transform files round-trip") {
    const auto dir = facevl::testing::scratch_dir("geometry-files");
    Rng rng(9);
    const std::vector<Landmarks> faces{random_points(5, 0, 100, rng), random_points(5, 0, 100, rng)};
    write_landmarks_file(dir / "pts.txt", faces);
    const auto back = read_landmarks_file(dir / "pts.txt");
    REQUIRE(back.size() == 2);
    for (std::size_t f = 0; f < 2; ++f)
      for (std::size_t i = 0; i < 5; ++i) CHECK(back[f][i] == faces[f][i]);
    const auto t = SimilarityTransform::from_params(1.25, 0.4, -3.5, 8.0);
    write_transform_file(dir / "t.txt", t);
    CHECK(read_transform_file(dir / "t.txt").matrix() == t.matrix());
    CHECK_THROWS_AS(read_transform_file(dir / "missing.txt"), IoError);
  }

  TEST_CASE("mean face template") {
    const Landmarks& unit = mean_face_unit();
    REQUIRE(unit.size() == 5);
    for (const auto& p : unit) {
      CHECK(p.x > 0.0);
      CHECK(p.x < 1.0);
      CHECK(p.y > 0.0);
      CHECK(p.y < 1.0);
    }
    CHECK(unit[0].x < unit[1].x);
    CHECK(unit[2].y > unit[0].y);
    CHECK(unit[3].y > unit[2].y);
    CHECK(mean_face(224)[2].x == doctest::Approx(unit[2].x * 224).epsilon(0.01));
  }
}
