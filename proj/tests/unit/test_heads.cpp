// Copyright 2026 The facevl Authors
// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "facevl/errors.hpp"
#include "facevl/heads.hpp"
#include "facevl/synthetic.hpp"
#include "facevl_test/support.hpp"

using namespace facevl;
using facevl::testing::check_gradients;

namespace {

MultiLevelFeatures random_features(std::size_t levels, std::size_t grid, std::size_t width, Rng& rng) {
  MultiLevelFeatures f;
  f.grid = grid;
  for (std::size_t k = 0; k < levels; ++k) {
    f.cls.push_back(ag::Var::parameter(normal_tensor(1, width, 1.0, rng)));
    f.tokens.push_back(ag::Var::parameter(normal_tensor(grid * grid, width, 1.0, rng)));
  }
  return f;
}

std::vector<ag::Var> gradient_inputs(const ParamList& params, const MultiLevelFeatures& f) {
  std::vector<ag::Var> inputs;
  for (const auto& p : params.entries()) inputs.push_back(p.var);
  for (const auto& v : f.tokens) inputs.push_back(v);
  for (const auto& v : f.cls) inputs.push_back(v);
  return inputs;
}

void check_rows_sum_to_one(const ag::RowMap& map) {
  for (const auto& taps : map.taps) {
    double total = 0.0;
    for (const auto& t : taps) {
      REQUIRE(t.source < map.source_rows);
      total += t.weight;
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
  }
}

}  // namespace

TEST_SUITE("heads") {
  TEST_CASE("parsing logits cover the output frame") {
    Rng rng(1);
    HeadConfig config;
    config.trunk_width = 8;
    config.output_size = 224;
    const ParsingHead head(768, 14, config);
    const Tensor logits = head.forward(random_features(4, 14, 768, rng)).value();
    CHECK(logits.rows() == 224 * 224);
    CHECK(logits.cols() == 11);
    CHECK(logits_to_labels(logits, 224).labels.size() == 224 * 224);
  }

  TEST_CASE("98-landmark alignment head gives 98 x 128 x 128 logits") {
    Rng rng(2);
    HeadConfig config;
    config.trunk_width = 8;
    config.landmarks = 98;
    const AlignmentHead head(768, 14, config);
    const Tensor logits = head.forward(random_features(4, 14, 768, rng)).value();
    CHECK(logits.rows() == 128 * 128);
    CHECK(logits.cols() == 98);
    const Heatmap h = logits_to_heatmap(logits, 128);
    CHECK(h.channels == 98);
    CHECK(h.at(5, 3, 7) == logits(3 * 128 + 7, 5));
  }

  TEST_CASE("parsing head gradients match finite differences") {
    Rng rng(3);
    const HeadConfig config = facevl::testing::miniature_head_config();
    const ParsingHead head(64, 2, config);
    const MultiLevelFeatures f = random_features(4, 2, 64, rng);
    const GridParsingSample target = grid_parsing_sample(32, 16, 4, rng);
    const auto r = check_gradients([&] { return parsing_loss(head.forward(f), target.labels); },
                                   gradient_inputs(head.parameters(), f), 6, 4);
    INFO("relative error " << r.relative_error << " over " << r.probes << " probes");
    CHECK(r.relative_error < 1e-3);
  }

  TEST_CASE("alignment head gradients match finite differences") {
    Rng rng(5);
    const HeadConfig config = facevl::testing::miniature_head_config();
    const AlignmentHead head(64, 2, config);
    const MultiLevelFeatures f = random_features(4, 2, 64, rng);
    const SyntheticFace face = random_face(rng, 32);
    const Heatmap target = render_heatmap(to_heatmap_frame(face.five, 32, config.heatmap_size), config.heatmap_size);
    const auto r = check_gradients([&] { return soft_label_ce(head.forward(f), target).loss; },
                                   gradient_inputs(head.parameters(), f), 6, 6);
    INFO("relative error " << r.relative_error << " over " << r.probes << " probes");
    CHECK(r.relative_error < 1e-3);
  }

  TEST_CASE("attribute head gradients match finite differences") {
    Rng rng(7);
    const HeadConfig config = facevl::testing::miniature_head_config();
    const AttributeHead head(64, config);
    const MultiLevelFeatures f = random_features(4, 2, 64, rng);
    const Tensor targets = attribute_targets(random_face(rng, 32).attributes());
    const auto r = check_gradients([&] { return ag::bce_with_logits(head.forward(f), targets); },
                                   gradient_inputs(head.parameters(), f), 10, 8);
    INFO("relative error " << r.relative_error << " over " << r.probes << " probes");
    CHECK(r.relative_error < 1e-3);
  }

  TEST_CASE("soft-label cross-entropy properties") {
    SUBCASE("logits at the log target give the target entropy") {
      const Landmarks pts{{3.2, 4.6}, {1.0, 6.5}};
      const Heatmap target = render_heatmap(pts, 8);
      Tensor logits(64, 2);
      double entropy = 0.0;
      for (std::size_t l = 0; l < 2; ++l) {
        double total = 0.0;
        for (std::size_t p = 0; p < 64; ++p) total += target.values[l * 64 + p];
        for (std::size_t p = 0; p < 64; ++p) {
          const double q = target.values[l * 64 + p] / total;
          logits(p, l) = std::log(q) + 3.0;
          entropy -= q * std::log(q) / 2.0;
        }
      }
      const double at_target = soft_label_ce(ag::Var::constant(logits), target).loss.item();
      CHECK(at_target == doctest::Approx(entropy).epsilon(1e-10));
      Rng rng(9);
      for (int i = 0; i < 20; ++i) {
        Tensor other = logits;
        for (double& v : other.values()) v += 0.1 * normal_tensor(1, 1, 1.0, rng)[0];
        CHECK(soft_label_ce(ag::Var::constant(other), target).loss.item() >= at_target);
      }
    }
    SUBCASE("uniform logits give ln(128^2)") {
      const Heatmap target = render_heatmap(Landmarks{{30.5, 70.25}, {100.0, 2.0}});
      const double loss = soft_label_ce(ag::Var::constant(Tensor(128 * 128, 2, -1.5)), target).loss.item();
      CHECK(loss == doctest::Approx(std::log(128.0 * 128.0)).epsilon(1e-12));
      CHECK(std::abs(loss - 9.704) < 1e-3);
    }
    SUBCASE("2x2 toy grid by hand") {
      Heatmap target(1, 2);
      target.values = {1.0, 2.0, 3.0, 4.0};
      const std::vector<double> z{0.1, 0.2, -0.3, 0.5};
      double norm = 0.0;
      for (double v : z) norm += std::exp(v);
      double expected = 0.0;
      for (std::size_t p = 0; p < 4; ++p) expected -= target.values[p] / 10.0 * (z[p] - std::log(norm));
      const ag::Var logits = ag::Var::constant(Tensor(4, 1, std::vector<double>(z)));
      CHECK(soft_label_ce(logits, target).loss.item() == doctest::Approx(expected).epsilon(1e-14));
    }
    SUBCASE("all-zero channels are left out of the mean") {
      Heatmap target(2, 2);
      target.values = {1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0};
      const SoftLabelLoss l = soft_label_ce(ag::Var::constant(Tensor(4, 2, 0.0)), target);
      CHECK(l.excluded_channels == 1);
      CHECK(l.loss.item() == doctest::Approx(std::log(4.0)));
      Heatmap empty(1, 2);
      CHECK_THROWS_AS(soft_label_ce(ag::Var::constant(Tensor(4, 1, 0.0)), empty), InputError);
    }
    SUBCASE("gradient w.r.t. logits") {
      Rng rng(10);
      const ag::Var logits = ag::Var::parameter(normal_tensor(64, 3, 1.0, rng));
      const Heatmap target = render_heatmap(Landmarks{{1, 2}, {5.5, 5.5}, {7, 0}}, 8);
      const auto r = check_gradients([&] { return soft_label_ce(logits, target).loss; }, {logits}, 64, 1);
      CHECK(r.relative_error < 1e-6);
    }
  }

  TEST_CASE("attribute pooling: 3|K| vectors, identical tokens pool to themselves") {
    Rng rng(11);
    HeadConfig config;
    config.layers = {4, 6, 8, 12};
    const AttributeHead head(16, config);
    MultiLevelFeatures f = random_features(4, 3, 16, rng);
    CHECK(head.pooled(f).rows() == 12);
    const Tensor token = normal_tensor(1, 16, 1.0, rng);
    Tensor same(9, 16);
    for (std::size_t r = 0; r < 9; ++r)
      for (std::size_t c = 0; c < 16; ++c) same(r, c) = token(0, c);
    for (auto& t : f.tokens) t = ag::Var::constant(same);
    f.cls[0] = ag::Var::constant(token);
    const Tensor pooled = head.pooled(f).value();
    for (std::size_t c = 0; c < 16; ++c) {
      CHECK(pooled(1, c) == doctest::Approx(pooled(0, c)).epsilon(1e-12));
      CHECK(pooled(2, c) == doctest::Approx(pooled(0, c)).epsilon(1e-12));
    }
    CHECK(head.forward(f).value().cols() == 40);
  }

  TEST_CASE("resampling and pooling maps are partitions of unity") {
    check_rows_sum_to_one(bilinear_resize_map(3, 3, 7, 7));
    check_rows_sum_to_one(bilinear_resize_map(8, 8, 2, 2));
    check_rows_sum_to_one(adaptive_pool_map(6, 6, 4, 4));
    check_rows_sum_to_one(adaptive_pool_map(2, 2, 6, 6));
    CHECK(adaptive_pool_map(6, 6, 1, 1).taps.front().size() == 36);
  }

  TEST_CASE("head config validation") {
    HeadConfig config;
    CHECK_NOTHROW(config.validate(12));
    CHECK_THROWS_AS(config.validate(2), ConfigError);
    config.layers = {1, 2};
    CHECK_THROWS_AS(config.validate(12), ConfigError);
    config.layers = {1, 2, 3, 13};
    CHECK_THROWS_AS(config.validate(12), ConfigError);
    HeadTrainConfig train = HeadTrainConfig::attributes();
    CHECK(train.lr_at(0.0) == doctest::Approx(0.3));
    CHECK(train.lr_at(50.0) == doctest::Approx(0.15));
    CHECK(train.lr_at(100.0) == doctest::Approx(0.0));
    CHECK(HeadTrainConfig::parsing().lr_at(70.0) == doctest::Approx(1e-3));
    train.lr = -1.0;
    CHECK_THROWS_AS(train.validate(), ConfigError);
  }

  TEST_CASE("inference is deterministic on fixed weights") {
    const EncoderConfig encoder = EncoderConfig::miniature();
    const DownstreamModel model(DualEncoder(encoder), Task::kAlignment, facevl::testing::miniature_head_config(), false);
    Rng rng(12);
    const SyntheticFace face = random_face(rng, 32);
    DownstreamSample s;
    s.image = render_face(face, 32).image;
    const Prediction a = model.predict(s);
    const Prediction b = model.predict(s);
    CHECK(*a.landmarks == *b.landmarks);
  }

  TEST_CASE("parsing head overfits 4 image/mask pairs in 100 steps") {
    const auto r = facevl::testing::overfit_parsing(4, 100);
    INFO("pixel accuracy " << r.pixel_accuracy);
    CHECK(r.pixel_accuracy > 95.0);
  }

  TEST_CASE("alignment head overfits 4 faces to sub-pixel error") {
    const auto r = facevl::testing::overfit_alignment(4, 300);
    INFO("mean error " << r.error_image_px << " image px, " << r.error_heatmap_px << " heatmap px");
    CHECK(r.error_heatmap_px < 1.0);
  }

  TEST_CASE("attribute head overfits 8 faces to 100%") {
    const auto r = facevl::testing::overfit_attributes(8, 100);
    CHECK(r.mean_accuracy == 100.0);
  }
}
