// Copyright 2026 The facevl Authors
// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "facevl/errors.hpp"
#include "facevl/metrics.hpp"
#include "facevl_test/support.hpp"

using namespace facevl;
namespace oracle = facevl::testing;

namespace {

LabelMap random_labels(std::size_t h, std::size_t w, std::size_t classes, Rng& rng) {
  std::uniform_int_distribution<int> c(0, static_cast<int>(classes) - 1);
  LabelMap m{h, w, std::vector<std::int32_t>(h * w)};
  for (auto& v : m.labels) v = c(rng);
  return m;
}

Landmarks random_landmarks(std::size_t n, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 100.0);
  Landmarks p(n);
  for (auto& q : p) q = {u(rng), u(rng)};
  return p;
}

std::vector<std::vector<bool>> random_bits(std::size_t b, std::size_t a, Rng& rng) {
  std::bernoulli_distribution coin(0.5);
  std::vector<std::vector<bool>> out(b, std::vector<bool>(a));
  for (auto& row : out)
    for (std::size_t i = 0; i < a; ++i) row[i] = coin(rng);
  return out;
}

}  // namespace

TEST_SUITE("metrics") {
  TEST_CASE("F1 equals the brute-force counting oracle on 1,000 instances") {
    Rng rng(1);
    std::uniform_int_distribution<std::size_t> side(1, 8);
    std::uniform_int_distribution<std::size_t> classes(2, 5);
    for (int trial = 0; trial < 1000; ++trial) {
      const std::size_t h = side(rng), w = side(rng), c = classes(rng);
      const LabelMap pred = random_labels(h, w, c, rng);
      const LabelMap gt = random_labels(h, w, c, rng);
      ConfusionAccumulator acc(c);
      acc.add(pred, gt);
      const auto expect = oracle::f1_oracle(pred, gt, c);
      const F1Report got = f1_scores(acc);
      for (std::size_t k = 0; k < c; ++k) {
        REQUIRE(acc.true_positives(k) == expect.tp[k]);
        REQUIRE(acc.false_positives(k) == expect.fp[k]);
        REQUIRE(acc.false_negatives(k) == expect.fn[k]);
        REQUIRE(got.per_class[k].has_value() == expect.per_class[k].has_value());
        if (expect.per_class[k]) REQUIRE(std::abs(*got.per_class[k] - *expect.per_class[k]) <= 1e-9);
      }
      REQUIRE(got.mean.has_value() == expect.mean.has_value());
      if (expect.mean) REQUIRE(std::abs(*got.mean - *expect.mean) <= 1e-9);
    }
  }

  TEST_CASE("F1 examples and accumulator merging") {
    Rng rng(2);
    const LabelMap gt = random_labels(8, 8, 3, rng);
    const F1Report perfect = f1_scores(gt, gt, 3);
    for (const auto& v : perfect.per_class)
      if (v) CHECK(*v == 100.0);
    LabelMap binary = random_labels(6, 6, 2, rng);
    LabelMap complement = binary;
    for (auto& v : complement.labels) v = 1 - v;
    const F1Report zero = f1_scores(complement, binary, 2);
    CHECK(*zero.per_class[1] == 0.0);
    CHECK(*zero.mean == 0.0);

    const LabelMap p1 = random_labels(5, 5, 4, rng), g1 = random_labels(5, 5, 4, rng);
    const LabelMap p2 = random_labels(3, 7, 4, rng), g2 = random_labels(3, 7, 4, rng);
    ConfusionAccumulator a(4), b(4), both(4);
    a.add(p1, g1);
    b.add(p2, g2);
    both.add(p1, g1);
    both.add(p2, g2);
    a.merge(b);
    for (std::size_t k = 0; k < 4; ++k) CHECK(a.true_positives(k) == both.true_positives(k));
    CHECK(a.pixels() == both.pixels());
    CHECK_THROWS_AS(a.add(p1, g2), DimensionError);
  }

  TEST_CASE("NME equals the oracle for all normalisers on 1,000 instances") {
    Rng rng(3);
    std::uniform_int_distribution<std::size_t> count(2, 20);
    std::uniform_real_distribution<double> extent(1.0, 200.0);
    for (int trial = 0; trial < 1000; ++trial) {
      const std::size_t n = count(rng);
      const Landmarks pred = random_landmarks(n, rng);
      const Landmarks gt = random_landmarks(n, rng);
      NmeReference ref;
      ref.box = {extent(rng), extent(rng)};
      ref.left_eye = 0;
      ref.right_eye = n - 1;
      for (NmeNormalizer norm : {NmeNormalizer::kDiagonal, NmeNormalizer::kBox, NmeNormalizer::kInterOcular}) {
        REQUIRE(std::abs(nme(pred, gt, norm, ref) - oracle::nme_oracle(pred, gt, norm, ref)) <= 1e-9);
      }
    }
  }

  TEST_CASE("NME examples") {
    NmeReference ref;
    ref.box = {60.0, 80.0};
    const Landmarks gt{{10.0, 10.0}};
    const Landmarks pred{{13.0, 14.0}};
    CHECK(nme(gt, gt, NmeNormalizer::kDiagonal, ref) == 0.0);
    CHECK(nme(pred, gt, NmeNormalizer::kDiagonal, ref) == doctest::Approx(0.05).epsilon(1e-12));
    CHECK(nme(pred, gt, NmeNormalizer::kBox, ref) == doctest::Approx(5.0 / std::sqrt(4800.0)).epsilon(1e-12));
    NmeReference twice = ref;
    twice.box = {120.0, 160.0};
    const Landmarks gt2{{20.0, 20.0}};
    const Landmarks pred2{{26.0, 28.0}};
    CHECK(nme(pred2, gt2, NmeNormalizer::kDiagonal, twice) == doctest::Approx(0.05).epsilon(1e-12));
    CHECK_THROWS_AS(nme(pred, gt, NmeNormalizer::kInterOcular, ref), InputError);
    CHECK_THROWS_AS(nme(pred, Landmarks{}, NmeNormalizer::kDiagonal, ref), DimensionError);
  }

  TEST_CASE("FR and AUC equal the oracles on 1,000 instances") {
    Rng rng(4);
    std::uniform_int_distribution<std::size_t> count(1, 30);
    std::uniform_real_distribution<double> value(0.0, 0.2);
    std::bernoulli_distribution exact_zero(0.1);
    for (int trial = 0; trial < 1000; ++trial) {
      std::vector<double> nmes(count(rng));
      for (double& v : nmes) v = exact_zero(rng) ? 0.0 : value(rng);
      const double tau = trial % 2 == 0 ? 0.1 : 0.08;
      REQUIRE(std::abs(failure_rate(nmes, tau) - oracle::failure_rate_oracle(nmes, tau)) <= 1e-9);
      REQUIRE(std::abs(auc_ced(nmes, tau) - oracle::auc_oracle(nmes, tau)) <= 1e-9);
    }
  }

  TEST_CASE("FR and AUC examples") {
    const std::vector<double> zeros(5, 0.0);
    const std::vector<double> above{0.2, 0.3, 0.15};
    CHECK(failure_rate(zeros, 0.1) == 0.0);
    CHECK(failure_rate(above, 0.1) == 100.0);
    CHECK(auc_ced(zeros, 0.1) == doctest::Approx(100.0));
    CHECK(auc_ced(above, 0.1) == 0.0);
    const std::vector<double> ten{0.01, 0.2, 0.05, 0.11, 0.09, 0.1, 0.0, 0.3, 0.07, 0.12};
    CHECK(failure_rate(ten, 0.1) == doctest::Approx(40.0));
    // CED steps to 1/4 at 0.02, 2/4 at 0.04, 3/4 at 0.06; the fourth image fails.
    const std::vector<double> four{0.02, 0.04, 0.06, 0.5};
    const double by_hand = 100.0 * (0.02 * 0.0 + 0.02 * 0.25 + 0.02 * 0.5 + 0.04 * 0.75) / 0.1;
    CHECK(auc_ced(four, 0.1) == doctest::Approx(by_hand).epsilon(1e-12));
    CHECK_THROWS_AS(auc_ced({}, 0.1), InputError);
  }

  TEST_CASE("mean accuracy equals the nested-loop oracle") {
    Rng rng(5);
    for (int trial = 0; trial < 1000; ++trial) {
      const std::size_t b = 1 + trial % 16;
      const auto pred = random_bits(b, 40, rng);
      const auto gt = random_bits(b, 40, rng);
      REQUIRE(std::abs(mean_accuracy(pred, gt) - oracle::mean_accuracy_oracle(pred, gt)) <= 1e-9);
    }
    const auto gt = random_bits(16, 40, rng);
    auto inverted = gt;
    for (auto& row : inverted) row.flip();
    CHECK(mean_accuracy(gt, gt) == 100.0);
    CHECK(mean_accuracy(inverted, gt) == 0.0);
  }

  TEST_CASE("group discrepancy equals the oracle on 1,000 instances") {
    Rng rng(6);
    std::uniform_real_distribution<double> acc(50.0, 100.0);
    std::uniform_int_distribution<std::size_t> samples(1, 500);
    for (int trial = 0; trial < 1000; ++trial) {
      std::map<std::string, GroupAccuracy> groups;
      std::vector<std::string> pooled;
      const int count = 2 + trial % 6;
      for (int g = 0; g < count; ++g) {
        groups["g" + std::to_string(g)] = {acc(rng), samples(rng)};
        if (g > 0) pooled.push_back("g" + std::to_string(g));
      }
      const GroupDiscrepancy d = group_discrepancy(groups, "g0", pooled);
      const double expect = oracle::pooled_accuracy_oracle(groups, pooled);
      REQUIRE(std::abs(d.pooled_accuracy - expect) <= 1e-9);
      REQUIRE(std::abs(d.discrepancy - (expect - groups["g0"].accuracy)) <= 1e-9);
    }
  }

  TEST_CASE("group discrepancy examples") {
    const std::map<std::string, GroupAccuracy> table{{"White", {94.15, 1}}, {"Non-White", {94.41, 1}}};
    CHECK(group_discrepancy(table, "White", {"Non-White"}).discrepancy == doctest::Approx(0.26).epsilon(1e-9));
    const std::map<std::string, GroupAccuracy> two{{"a", {80.0, 10}}, {"b", {90.0, 30}}, {"ref", {87.5, 5}}};
    const GroupDiscrepancy d = group_discrepancy(two, "ref", {"a", "b"});
    CHECK(d.pooled_accuracy == doctest::Approx(87.5).epsilon(1e-12));
    CHECK(d.discrepancy == doctest::Approx(0.0));
    const std::map<std::string, GroupAccuracy> equal{{"x", {91.0, 3}}, {"y", {91.0, 9}}};
    CHECK(group_discrepancy(equal, "x", {"y"}).discrepancy == 0.0);
    const std::map<std::string, GroupAccuracy> empty{{"x", {91.0, 3}}, {"y", {91.0, 0}}};
    CHECK_THROWS_AS(group_discrepancy(empty, "x", {"y"}), InputError);
    CHECK_THROWS_AS(group_discrepancy(equal, "x", {"missing"}), InputError);
  }

  TEST_CASE("metric report renders present sections only") {
    MetricReport report;
    report.mean_accuracy_pct = 91.39;
    const std::string json = report.to_json();
    CHECK(json.find("91.39") != std::string::npos);
    CHECK(json.find("nme") == std::string::npos);
    report.nme_normalizer = "diag";
    report.nme_mean = 0.00991;
    report.failure_rate_pct = 0.0;
    report.auc_pct = 85.0;
    report.tau = 0.07;
    CHECK(report.to_table().find("NME") != std::string::npos);
  }
}
