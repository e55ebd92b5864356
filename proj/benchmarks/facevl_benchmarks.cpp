// Copyright 2026 The facevl Authors
// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include <sstream>

#include "facevl/data.hpp"
#include "facevl/encoders.hpp"
#include "facevl/geometry.hpp"
#include "facevl/pretraining.hpp"
#include "facevl/synthetic.hpp"

using namespace facevl;

static void BM_ImageEncoderMiniature(benchmark::State& state) {
  EncoderConfig config = EncoderConfig::miniature();
  config.image.image_size = static_cast<std::size_t>(state.range(0));
  Rng rng(1);
  const ImageEncoder encoder(config.image, rng);
  const Image image = render_face(random_face(rng, config.image.image_size), config.image.image_size).image;
  ag::NoGradGuard no_grad;
  for (auto _ : state) benchmark::DoNotOptimize(encoder.encode(image));
}
BENCHMARK(BM_ImageEncoderMiniature)->Arg(32)->Arg(224)->Unit(benchmark::kMillisecond);

static void BM_ItcLoss(benchmark::State& state) {
  const auto batch = static_cast<std::size_t>(state.range(0));
  Rng rng(2);
  Tensor a = normal_tensor(batch, 512, 1.0, rng), b = normal_tensor(batch, 512, 1.0, rng);
  const ag::Var x = ag::l2_normalize_rows(ag::Var::constant(std::move(a)));
  const ag::Var y = ag::l2_normalize_rows(ag::Var::constant(std::move(b)));
  const TemperatureParam temperature;
  for (auto _ : state) benchmark::DoNotOptimize(itc_loss(x, y, temperature).total().item());
}
BENCHMARK(BM_ItcLoss)->Arg(32)->Arg(256);

static void BM_WarpImage(benchmark::State& state) {
  Rng rng(3);
  const SyntheticFace face = random_face(rng, 256);
  const Image image = render_face(face, 256).image;
  const auto t = estimate_similarity(face.five, mean_face(448));
  const WarpConfig config{.alpha = state.range(0) / 100.0, .target_size = 448, .enabled = true};
  for (auto _ : state) benchmark::DoNotOptimize(warp_image(image, t, config));
}
BENCHMARK(BM_WarpImage)->Arg(80)->Arg(100)->Unit(benchmark::kMillisecond);

static void BM_HeatmapRoundTrip(benchmark::State& state) {
  Rng rng(4);
  std::uniform_real_distribution<double> coord(0.0, kHeatmapSize - 1.0);
  Landmarks points(static_cast<std::size_t>(state.range(0)));
  for (auto& p : points) p = {coord(rng), coord(rng)};
  for (auto _ : state) benchmark::DoNotOptimize(decode_heatmap(render_heatmap(points)));
}
BENCHMARK(BM_HeatmapRoundTrip)->Arg(5)->Arg(98)->Unit(benchmark::kMillisecond);

static void BM_Curation(benchmark::State& state) {
  std::string input;
  for (const auto& r : synthetic_manifest(static_cast<std::size_t>(state.range(0)), 5)) input += r.to_json_line() + "\n";
  for (auto _ : state) {
    std::istringstream in(input);
    benchmark::DoNotOptimize(curate_manifest(in, {.threshold = 0.9, .target_size = 100, .seed = 1}));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Curation)->Arg(10000)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
