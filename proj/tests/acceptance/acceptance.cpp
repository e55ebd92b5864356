// Copyright 2026 The facevl Authors
// SPDX-License-Identifier: Apache-2.0
//
// Acceptance checks 1-10. Prints one PASS/FAIL line per criterion and exits
// non-zero when any criterion fails.
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <new>
#include <numbers>
#include <set>
#include <sstream>
#include <streambuf>

#include <json.hpp>

#include "facevl/checkpoint.hpp"
#include "facevl/cli/cli.hpp"
#include "facevl/cli/dataset.hpp"
#include "facevl/data.hpp"
#include "facevl/gradcam.hpp"
#include "facevl/heads.hpp"
#include "facevl/log.hpp"
#include "facevl/runtime.hpp"
#include "facevl/synthetic.hpp"
#include "facevl/tokenizer.hpp"
#include "facevl_test/support.hpp"

// ---- allocation counter ----------------------------------------------------------

namespace {

std::atomic<std::int64_t> g_live_bytes{0};
std::atomic<std::int64_t> g_peak_bytes{0};
constexpr std::size_t kHeader = alignof(std::max_align_t);

void* counted_alloc(std::size_t size) {
  auto* base = static_cast<unsigned char*>(std::malloc(size + kHeader));
  if (base == nullptr) throw std::bad_alloc();
  *reinterpret_cast<std::size_t*>(base) = size;
  const std::int64_t live = g_live_bytes.fetch_add(static_cast<std::int64_t>(size)) + static_cast<std::int64_t>(size);
  std::int64_t peak = g_peak_bytes.load();
  while (live > peak && !g_peak_bytes.compare_exchange_weak(peak, live)) {
  }
  return base + kHeader;
}

void counted_free(void* p) noexcept {
  if (p == nullptr) return;
  auto* base = static_cast<unsigned char*>(p) - kHeader;
  g_live_bytes.fetch_sub(static_cast<std::int64_t>(*reinterpret_cast<std::size_t*>(base)));
  std::free(base);
}

}  // namespace

void* operator new(std::size_t size) { return counted_alloc(size); }
void* operator new[](std::size_t size) { return counted_alloc(size); }
void operator delete(void* p) noexcept { counted_free(p); }
void operator delete[](void* p) noexcept { counted_free(p); }
void operator delete(void* p, std::size_t) noexcept { counted_free(p); }
void operator delete[](void* p, std::size_t) noexcept { counted_free(p); }

using namespace facevl;
namespace fs = std::filesystem;
using Json = nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << "[failed: " << what << "] ";
    }
  }
};

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.3g", v);
  return buf;
}

int report(int id, const std::string& title, const std::function<void(Outcome&)>& body,
           double limit_seconds = 0.0) {
  Outcome o;
  const auto start = Clock::now();
  try {
    body(o);
  } catch (const std::exception& e) {
    o.pass = false;
    o.detail << "[exception: " << e.what() << "] ";
  }
  const double seconds = std::chrono::duration<double>(Clock::now() - start).count();
  if (limit_seconds > 0.0) o.require(seconds < limit_seconds, "runtime " + fmt(seconds) + " s over " + fmt(limit_seconds) + " s");
  std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << id << ": " << title << " -- " << o.detail.str() << "("
            << fmt(seconds) << " s)" << std::endl;
  return o.pass ? 0 : 1;
}

ag::Var unit_rows(std::size_t rows, std::size_t cols, Rng& rng) {
  Tensor t = normal_tensor(rows, cols, 1.0, rng);
  for (std::size_t r = 0; r < rows; ++r) {
    double n = 0.0;
    for (double v : t.row_span(r)) n += v * v;
    for (double& v : t.row_span(r)) v /= std::sqrt(n);
  }
  return ag::Var::parameter(std::move(t));
}

ag::Var constant_rows(const std::vector<std::vector<double>>& rows) {
  Tensor t(rows.size(), rows.front().size());
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < rows[r].size(); ++c) t(r, c) = rows[r][c];
  return ag::Var::constant(std::move(t));
}

MultiLevelFeatures random_features(std::size_t grid, std::size_t width, Rng& rng) {
  MultiLevelFeatures f;
  f.grid = grid;
  for (int k = 0; k < 4; ++k) {
    f.cls.push_back(ag::Var::parameter(normal_tensor(1, width, 1.0, rng)));
    f.tokens.push_back(ag::Var::parameter(normal_tensor(grid * grid, width, 1.0, rng)));
  }
  return f;
}

std::vector<ag::Var> with_features(const ParamList& params, const MultiLevelFeatures& f) {
  std::vector<ag::Var> out;
  for (const auto& p : params.entries()) out.push_back(p.var);
  out.insert(out.end(), f.tokens.begin(), f.tokens.end());
  out.insert(out.end(), f.cls.begin(), f.cls.end());
  return out;
}

// ---- criteria --------------------------------------------------------------------

void itc_closed_forms(Outcome& o) {
  const ag::Var one = constant_rows({{0.6, 0.8}});
  const ItcLoss single = itc_loss(one, one, TemperatureParam());
  o.require(single.image_to_text.item() == 0.0 && single.text_to_image.item() == 0.0, "B=1 gives 0");
  double worst = 0.0;
  for (std::size_t b : {2, 4, 8, 16}) {
    const ag::Var e = constant_rows(std::vector<std::vector<double>>(b, {0.0, 0.6, 0.8}));
    const ItcLoss l = itc_loss(e, e, TemperatureParam());
    worst = std::max({worst, std::abs(l.image_to_text.item() - std::log(static_cast<double>(b))),
                      std::abs(l.text_to_image.item() - std::log(static_cast<double>(b)))});
  }
  o.require(worst < 1e-9, "identical pairs give ln B");
  const ag::Var ortho = constant_rows({{1.0, 0.0}, {0.0, 1.0}});
  const ItcLoss two = itc_loss(ortho, ortho, TemperatureParam(1.0));
  const double closed = std::log1p(std::exp(-1.0));
  const double err = std::max(std::abs(two.image_to_text.item() - closed), std::abs(two.text_to_image.item() - closed));
  o.require(err < 1e-6, "B=2 orthogonal case matches ln(1 + 1/e)");
  o.require(std::round(two.image_to_text.item() * 1e5) == 31326.0, "B=2 orthogonal case rounds to 0.31326");
  o.detail << "B=1 -> " << single.image_to_text.item() + 0.0 << ", max |L - ln B| = " << fmt(worst)
           << ", B=2 L_I = " << two.image_to_text.item() << " ";
}

void gradient_suite(Outcome& o) {
  using facevl::testing::check_gradients;
  const EncoderConfig mini = EncoderConfig::miniature();
  const HeadConfig heads = facevl::testing::miniature_head_config();
  Rng rng(2024);
  auto record = [&](const std::string& name, const facevl::testing::GradCheckResult& r) {
    o.detail << name << " " << fmt(r.relative_error) << "; ";
    o.require(r.probes > 0 && r.relative_error < 1e-3, name);
  };

  const ag::Var image = unit_rows(6, mini.embed_dim, rng);
  const ag::Var text = unit_rows(6, mini.embed_dim, rng);
  const TemperatureParam temperature(0.07);
  record("ITC", check_gradients([&] { return itc_loss(image, text, temperature).total(); },
                                {image, text, temperature.log_sigma()}, 64, 1, 1e-7));

  const std::size_t patches = mini.image.patch_count();
  const MimHead mim(mini.image.width, mini.image.heads, 1, 512, rng);
  const ag::Var masked = ag::Var::parameter(normal_tensor(patches + 1, mini.image.width, 1.0, rng));
  const MaskSet mask = sample_mask(patches, patches, rng);
  std::vector<std::size_t> targets(patches);
  for (std::size_t i = 0; i < patches; ++i) targets[i] = (97 * i + 13) % 512;
  ParamList mim_params;
  mim.collect(mim_params, "mim");
  std::vector<ag::Var> mim_inputs{masked};
  for (const auto& p : mim_params.entries()) mim_inputs.push_back(p.var);
  record("MIM", check_gradients([&] { return mim_forward_loss(mim, masked, mask, targets); }, mim_inputs, 8, 2));

  const ag::Var logits = ag::Var::parameter(normal_tensor(kHeatmapSize * kHeatmapSize, 5, 1.0, rng));
  const SyntheticFace face = random_face(rng, 32);
  const Heatmap target = render_heatmap(to_heatmap_frame(face.five, 32, kHeatmapSize));
  record("soft_label_ce", check_gradients([&] { return soft_label_ce(logits, target).loss; }, {logits}, 256, 3));

  const MultiLevelFeatures features = random_features(mini.image.grid(), mini.image.width, rng);
  const ParsingHead parsing(mini.image.width, mini.image.grid(), heads);
  const GridParsingSample labels = grid_parsing_sample(32, 16, heads.parsing_classes, rng);
  record("parsing head", check_gradients([&] { return parsing_loss(parsing.forward(features), labels.labels); },
                                         with_features(parsing.parameters(), features), 6, 4));
  const AlignmentHead alignment(mini.image.width, mini.image.grid(), heads);
  record("alignment head", check_gradients([&] { return soft_label_ce(alignment.forward(features), target).loss; },
                                           with_features(alignment.parameters(), features), 6, 5));

  const DualEncoder model(mini);
  const Image picture = render_face(face, 32).image;
  const TextTokens tokens = Vocabulary::builtin().tokenize(face.caption());
  const GradCamTrace trace = trace_similarity(model, picture, tokens);
  double diff_sq = 0.0, norm_sq = 0.0;
  const double h = 1e-5;
  for (std::size_t i = 0; i < trace.activation.size(); ++i) {
    Tensor up = trace.activation, down = trace.activation;
    up[i] += h;
    down[i] -= h;
    const double numeric =
        (trace_similarity(model, picture, tokens, up).score - trace_similarity(model, picture, tokens, down).score) / (2 * h);
    diff_sq += (numeric - trace.gradient[i]) * (numeric - trace.gradient[i]);
    norm_sq += std::max(numeric * numeric, trace.gradient[i] * trace.gradient[i]);
  }
  facevl::testing::GradCheckResult cam;
  cam.relative_error = std::sqrt(diff_sq / norm_sq);
  cam.probes = trace.activation.size();
  record("Grad-CAM hook", cam);
}

void tanh_suite(Outcome& o) {
  Rng rng(3);
  std::uniform_real_distribution<double> wide(-5.0, 5.0);
  double vanilla = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const double x = wide(rng);
    vanilla = std::max(vanilla, std::abs(tanh_alpha(x, 1.0) - std::tanh(x)));
  }
  o.require(vanilla <= 1e-12, "alpha=1 equals tanh");
  bool identity = true, odd = true;
  double kink = 0.0;
  for (double alpha : {0.1, 0.3, 0.5, 0.8, 0.95}) {
    std::uniform_real_distribution<double> inner(-1.0 + alpha, 1.0 - alpha);
    for (int i = 0; i < 1000; ++i) {
      const double x = inner(rng);
      identity = identity && tanh_alpha(x, alpha) == x;
      const double y = wide(rng);
      odd = odd && tanh_alpha(-y, alpha) == -tanh_alpha(y, alpha);
    }
    const double d = 1e-7;
    for (double b : {1.0 - alpha, -(1.0 - alpha)}) {
      identity = identity && tanh_alpha(b, alpha) == b;
      const double right = (tanh_alpha(b + d, alpha) - tanh_alpha(b, alpha)) / d;
      const double left = (tanh_alpha(b, alpha) - tanh_alpha(b - d, alpha)) / d;
      kink = std::max({kink, std::abs(right - left), std::abs(tanh_alpha(b + 1e-13, alpha) - tanh_alpha(b - 1e-13, alpha))});
    }
  }
  o.require(identity, "exact identity on [-1+alpha, 1-alpha]");
  o.require(kink < 1e-6, "C1 continuity at +-(1-alpha)");
  o.require(odd, "odd symmetry");
  const double half = tanh_alpha(1.0, 0.5);
  o.require(std::abs(half - 0.880797) < 1e-6, "alpha=0.5, x=1 gives 0.880797");
  o.detail << "max |tanh_1 - tanh| = " << fmt(vanilla) << ", max C1 gap = " << fmt(kink) << ", tanh_0.5(1) = " << half
           << " ";
}

void geometry_round_trips(Outcome& o) {
  Rng rng(4);
  std::uniform_real_distribution<double> scale(0.1, 10.0), angle(-std::numbers::pi, std::numbers::pi),
      shift(-500.0, 500.0), point(-100.0, 300.0);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const auto truth = SimilarityTransform::from_params(scale(rng), angle(rng), shift(rng), shift(rng));
    Landmarks src(5), dst;
    for (auto& p : src) p = {point(rng), point(rng)};
    for (const auto& p : src) dst.push_back(truth.apply(p));
    worst = std::max(worst, estimate_similarity(src, dst).distance(truth));
  }
  o.require(worst < 1e-6, "similarity recovery within 1e-6");
  std::uniform_real_distribution<double> in_frame(0.0, static_cast<double>(kHeatmapSize - 1));
  Landmarks pts(1000);
  for (auto& p : pts) p = {in_frame(rng), in_frame(rng)};
  const auto decoded = decode_heatmap(render_heatmap(pts));
  double decode_worst = 0.0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    decode_worst = std::max(decode_worst, std::hypot(decoded[i].point.x - pts[i].x, decoded[i].point.y - pts[i].y));
  }
  o.require(decode_worst < 0.5, "heatmap decode within 0.5 px");
  o.detail << "max Frobenius error " << fmt(worst) << ", max decode error " << fmt(decode_worst) << " px ";
}

void metric_oracles(Outcome& o) {
  namespace t = facevl::testing;
  Rng rng(5);
  std::uniform_int_distribution<std::size_t> side(1, 8), classes(2, 6), count(1, 20);
  std::uniform_real_distribution<double> coord(0.0, 100.0), extent(1.0, 200.0), err(0.0, 0.25), acc(40.0, 100.0);
  std::bernoulli_distribution coin(0.5);
  std::size_t mismatches = 0;
  double worst = 0.0;
  auto real = [&](double a, double b) { worst = std::max(worst, std::abs(a - b)); };
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t h = side(rng), w = side(rng), c = classes(rng);
    LabelMap pred{h, w, std::vector<std::int32_t>(h * w)}, gt = pred;
    for (std::size_t i = 0; i < h * w; ++i) {
      pred.labels[i] = static_cast<std::int32_t>(rng() % c);
      gt.labels[i] = static_cast<std::int32_t>(rng() % c);
    }
    ConfusionAccumulator a(c);
    a.add(pred, gt);
    const auto expect = t::f1_oracle(pred, gt, c);
    const F1Report got = f1_scores(a);
    for (std::size_t k = 0; k < c; ++k) {
      mismatches += a.true_positives(k) != expect.tp[k] || a.false_positives(k) != expect.fp[k] ||
                    a.false_negatives(k) != expect.fn[k] || got.per_class[k].has_value() != expect.per_class[k].has_value();
      if (expect.per_class[k] && got.per_class[k]) real(*got.per_class[k], *expect.per_class[k]);
    }
    mismatches += got.mean.has_value() != expect.mean.has_value();
    if (got.mean && expect.mean) real(*got.mean, *expect.mean);

    const std::size_t n = 2 + count(rng);
    Landmarks p(n), g(n);
    for (std::size_t i = 0; i < n; ++i) {
      p[i] = {coord(rng), coord(rng)};
      g[i] = {coord(rng), coord(rng)};
    }
    NmeReference ref;
    ref.box = {extent(rng), extent(rng)};
    ref.left_eye = rng() % n;
    ref.right_eye = (ref.left_eye + 1) % n;
    for (auto norm : {NmeNormalizer::kDiagonal, NmeNormalizer::kBox, NmeNormalizer::kInterOcular}) {
      real(nme(p, g, norm, ref), t::nme_oracle(p, g, norm, ref));
    }

    std::vector<double> nmes(count(rng));
    for (double& v : nmes) v = coin(rng) && coin(rng) ? 0.0 : err(rng);
    const double tau = trial % 3 == 0 ? 0.08 : 0.1;
    real(failure_rate(nmes, tau), t::failure_rate_oracle(nmes, tau));
    real(auc_ced(nmes, tau), t::auc_oracle(nmes, tau));

    const std::size_t b = count(rng);
    std::vector<std::vector<bool>> pb(b, std::vector<bool>(40)), gb = pb;
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t k = 0; k < 40; ++k) {
        pb[i][k] = coin(rng);
        gb[i][k] = coin(rng);
      }
    real(mean_accuracy(pb, gb), t::mean_accuracy_oracle(pb, gb));

    std::map<std::string, GroupAccuracy> groups;
    std::vector<std::string> pooled;
    const std::size_t ng = 2 + rng() % 5;
    for (std::size_t k = 0; k < ng; ++k) {
      groups["g" + std::to_string(k)] = {acc(rng), 1 + rng() % 300};
      if (k > 0) pooled.push_back("g" + std::to_string(k));
    }
    const GroupDiscrepancy d = group_discrepancy(groups, "g0", pooled);
    real(d.discrepancy, t::pooled_accuracy_oracle(groups, pooled) - groups["g0"].accuracy);
  }
  o.require(mismatches == 0, "exact counts");
  o.require(worst <= 1e-9, "reals within 1e-9");
  const std::map<std::string, GroupAccuracy> fairface{{"White", {94.15, 1}}, {"Non-White", {94.41, 1}}};
  const double fair = group_discrepancy(fairface, "White", {"Non-White"}).discrepancy;
  o.require(std::abs(fair - 0.26) < 1e-9, "+0.26 discrepancy");
  o.detail << "count mismatches " << mismatches << ", max real error " << fmt(worst) << ", White/Non-White discrepancy "
           << (fair >= 0 ? "+" : "") << fmt(fair) << " ";
}

void masking_contract(Outcome& o) {
  Rng rng(6);
  const MaskToken token(32, rng);
  const ag::Var seq = ag::Var::constant(normal_tensor(197, 32, 1.0, rng));
  std::size_t smallest = 1000, largest = 0, cls_masked = 0, altered = 0, wrong_token = 0;
  for (int i = 0; i < 10000; ++i) {
    const MaskSet m = sample_mask(196, 75, rng);
    smallest = std::min(smallest, m.size());
    largest = std::max(largest, m.size());
    cls_masked += m.contains(0);
    const Tensor out = apply_mask(seq, m, token).value();
    for (std::size_t r = 0; r < 197; ++r) {
      const bool masked = m.contains(r);
      for (std::size_t c = 0; c < 32; ++c) {
        if (!masked && out(r, c) != seq.value()(r, c)) ++altered;
        if (masked && out(r, c) != token.value().value()(0, c)) ++wrong_token;
      }
    }
  }
  o.require(smallest >= 1 && largest <= 75, "1 <= |M| <= 75");
  o.require(cls_masked == 0, "cls never masked");
  o.require(altered == 0, "unmasked rows bit-identical");
  o.require(wrong_token == 0, "masked rows hold the mask token");
  o.detail << "|M| in [" << smallest << ", " << largest << "], cls masked " << cls_masked << ", altered entries "
           << altered << " ";
}

void schedule(Outcome& o) {
  const ScheduleConfig cfg;
  const std::size_t spe = 5000;
  const double start = lr_at_step(0, spe, cfg);
  const double peak = lr_at_step(spe, spe, cfg);
  const double end = lr_at_step(16 * spe, spe, cfg);
  o.require(std::abs(start - 1e-6) < 1e-9, "lr(0) = 1e-6");
  o.require(std::abs(peak - 1e-3) < 1e-9, "lr(end of warmup) = 1e-3");
  o.require(std::abs(end - 9e-4) < 1e-9, "lr(final) = 9e-4");
  const double slope = (cfg.lr_peak - cfg.lr_init) / static_cast<double>(spe);
  const double before = std::abs(lr_at_step(spe - 1, spe, cfg) - peak);
  const double after = std::abs(lr_at_step(spe + 1, spe, cfg) - peak);
  o.require(before <= slope * (1.0 + 1e-9) && after <= slope, "continuity at the warmup boundary");
  o.detail << "lr(0) = " << start << ", lr(warmup) = " << peak << ", lr(final) = " << end << ", boundary steps "
           << fmt(before) << " / " << fmt(after) << " ";
}

void training_sanity(Outcome& o) {
  const auto pre = facevl::testing::overfit_pretraining("ITC,MIM1", 8, 300);
  const double first = pre.records.front().total;
  double last = 0.0;
  for (std::size_t i = pre.records.size() - 10; i < pre.records.size(); ++i) last += pre.records[i].total / 10.0;
  const double drop = 1.0 - last / first;
  o.require(drop >= 0.5, "ITC+MIM loss decreases by at least 50%");
  o.detail << "ITC+MIM1 " << fmt(first) << " -> " << fmt(last) << " (" << fmt(100 * drop) << "% drop, "
           << fmt(pre.seconds) << " s); ";

  const auto parsing = facevl::testing::overfit_parsing(4, 100);
  o.require(parsing.pixel_accuracy > 95.0, "parsing pixel accuracy > 95%");
  o.detail << "parsing " << fmt(parsing.pixel_accuracy) << "% pixels; ";
  const auto alignment = facevl::testing::overfit_alignment(4, 300);
  o.require(alignment.error_heatmap_px < 1.0, "alignment error < 1 px");
  o.detail << "alignment " << fmt(alignment.error_heatmap_px) << " heatmap px (" << fmt(alignment.error_image_px)
           << " image px); ";
  const auto attributes = facevl::testing::overfit_attributes(8, 100);
  o.require(attributes.mean_accuracy == 100.0, "attribute accuracy 100%");
  o.detail << "attributes " << fmt(attributes.mean_accuracy) << "% ";
}

/// Streams `count` synthetic records without holding them in memory.
class GeneratedManifest : public std::streambuf {
 public:
  GeneratedManifest(std::size_t count, double score) : count_(count), score_(score) {}

 protected:
  int_type underflow() override {
    if (gptr() < egptr()) return traits_type::to_int_type(*gptr());
    if (next_ == count_) return traits_type::eof();
    ManifestRecord r = synthetic_manifest(1, next_++, 1.0).front();
    r.face_score = score_;
    line_ = r.to_json_line() + "\n";
    setg(line_.data(), line_.data(), line_.data() + line_.size());
    return traits_type::to_int_type(*gptr());
  }

 private:
  std::size_t count_;
  double score_;
  std::size_t next_ = 0;
  std::string line_;
};

struct CurationFootprint {
  std::int64_t peak_extra_bytes = 0;
  std::size_t peak_retained = 0;
  std::size_t retained = 0;
};

CurationFootprint measure_curation(std::size_t records, std::size_t target) {
  GeneratedManifest source(records, 0.95);
  std::istream in(&source);
  const std::int64_t baseline = g_live_bytes.load();
  g_peak_bytes.store(baseline);
  CurationReservoir reservoir({.threshold = 0.9, .target_size = target, .seed = 1});
  std::string line;
  while (std::getline(in, line)) reservoir.offer_line(line);
  CurationFootprint f;
  f.peak_extra_bytes = g_peak_bytes.load() - baseline;
  f.peak_retained = reservoir.stats().peak_retained;
  f.retained = reservoir.finish().records.size();
  return f;
}

std::string curate_bytes(const std::string& input, std::uint64_t seed) {
  std::istringstream in(input);
  std::ostringstream out;
  write_manifest(out, curate_manifest(in, {.threshold = 0.9, .target_size = 20, .seed = seed}));
  return out.str();
}

void pipeline_determinism(Outcome& o) {
  std::string input;
  const auto raw = synthetic_manifest(500, 9);
  for (const auto& r : raw) input += r.to_json_line() + "\n";
  const std::string a = curate_bytes(input, 3), b = curate_bytes(input, 3);
  o.require(a == b, "curate byte-identical");
  std::istringstream curated_in(a);
  const auto curated = read_manifest(curated_in);
  bool above = !curated.empty();
  for (const auto& r : curated) above = above && r.face_score > 0.9;
  std::istringstream all_in(input);
  const CurateResult everything = curate_manifest(all_in, {.threshold = 0.9});
  std::size_t expected = 0;
  for (const auto& r : raw) expected += r.face_score > 0.9;
  for (const auto& r : everything.records) above = above && r.face_score > 0.9;
  o.require(above && everything.records.size() == expected, "curate keeps exactly the scores > 0.9");

  const auto f1 = fewshot_indices(162770, 0.002, 7), f2 = fewshot_indices(162770, 0.002, 7);
  o.require(f1 == f2, "fewshot reproducible");
  o.require(f1.size() == 325, "0.002 of 162,770 gives 325");
  std::vector<ManifestRecord> faces, scenes;
  for (const auto& r : synthetic_manifest(400, 10, 0.5)) (r.face_count > 0 ? faces : scenes).push_back(r);
  const auto m1 = mix_face_ratio(faces, scenes, 0.125, 80, 4), m2 = mix_face_ratio(faces, scenes, 0.125, 80, 4);
  std::size_t mixed_faces = 0;
  for (const auto& r : m1) mixed_faces += r.face_count > 0;
  o.require(m1 == m2, "mix reproducible");
  o.require(mixed_faces == 10 && m1.size() == 80, "ratio 0.125 of 80 gives 10 + 70");

  const CurationFootprint small = measure_curation(2000, 16);
  const CurationFootprint large = measure_curation(8000, 16);
  const CurationFootprint unbounded = measure_curation(2000, 0);
  o.require(small.peak_retained <= 16 && large.peak_retained <= 16, "reservoir never exceeds target_size");
  o.require(large.retained == 16, "reservoir fills to target_size");
  o.require(static_cast<double>(large.peak_extra_bytes) <= 1.1 * static_cast<double>(small.peak_extra_bytes),
            "peak heap does not grow with input length");
  o.require(unbounded.peak_extra_bytes > 10 * small.peak_extra_bytes, "counter detects unbounded retention");
  o.detail << "curated " << everything.records.size() << "/" << raw.size() << " above 0.9, fewshot " << f1.size()
           << ", mix " << mixed_faces << "+" << m1.size() - mixed_faces << ", peak heap " << small.peak_extra_bytes
           << " B (2k records) vs " << large.peak_extra_bytes << " B (8k) vs " << unbounded.peak_extra_bytes
           << " B (2k, unbounded) ";
}

int cli_run(const std::vector<std::string>& args, std::string* out = nullptr) {
  std::ostringstream o, e;
  const int code = cli::run_command(args, o, e);
  if (out != nullptr) *out = o.str();
  if (code != 0) std::cerr << e.str();
  return code;
}

void end_to_end(Outcome& o) {
  const fs::path dir = facevl::testing::scratch_dir("acceptance-e2e");
  const std::string config = (dir / "miniature.json").string();
  std::ofstream(config) << R"({
    "encoder": {"preset": "miniature"},
    "heads": {"layers": [1, 2, 2, 2], "trunk_width": 16, "parsing_classes": 6, "landmarks": 5},
    "pretrain": {"schedule": {"batch_size": 8}},
    "warp": {"target_size": 32}
  })";
  {
    std::ofstream raw(dir / "raw.ndjson");
    for (const auto& r : synthetic_manifest(64, 1)) raw << r.to_json_line() << '\n';
  }
  std::vector<cli::DatasetEntry> probe_set;
  for (std::size_t i = 0; i < 32; ++i) {
    const SyntheticFace face = indexed_face(i, 32);
    const std::string name = "probe" + std::to_string(i) + ".png";
    write_png(dir / name, render_face(face, 32).image);
    cli::DatasetEntry e;
    e.id = "p" + std::to_string(i);
    e.image = name;
    e.attributes = face.attributes();
    probe_set.push_back(e);
  }
  cli::write_dataset(dir / "probe.ndjson", probe_set);
  const std::string curated = (dir / "curated.ndjson").string();
  const std::string backbone = (dir / "backbone.ckpt").string();
  const std::string head = (dir / "head.ckpt").string();
  const std::string dataset = (dir / "probe.ndjson").string();

  std::string stats;
  o.require(cli_run({"curate", "--config", config, "--input", (dir / "raw.ndjson").string(), "--output", curated,
                     "--threshold", "0.9"}, &stats) == 0, "curate");
  o.detail << "curated " << Json::parse(stats).value("written", 0) << "/64 records; ";
  o.require(cli_run({"pretrain", "--config", config, "--input", curated, "--output", backbone, "--steps", "50"}) == 0,
            "pretrain 50 steps");
  std::ifstream log(dir / "backbone.ckpt.log.ndjson");
  std::string line, first_line, last_line;
  while (std::getline(log, line)) {
    if (first_line.empty()) first_line = line;
    last_line = line;
  }
  if (!first_line.empty()) {
    o.detail << "pretrain loss " << fmt(Json::parse(first_line)["total"].get<double>()) << " -> "
             << fmt(Json::parse(last_line)["total"].get<double>()) << "; ";
  }
  const std::string before = file_sha256(backbone);
  o.require(cli_run({"probe", "--config", config, "--checkpoint", backbone, "--dataset", dataset, "--task",
                     "attributes", "--output", head, "--steps", "1000"}) == 0, "probe attributes");
  const std::string after = file_sha256(backbone);
  o.require(before == after, "backbone file hash unchanged");
  const Json meta = Json::parse(read_checkpoint(head).metadata);
  o.require(meta["backbone"]["sha256"] == before, "head records the backbone hash");
  std::string metrics;
  o.require(cli_run({"eval", "--config", config, "--checkpoint", backbone, "--head", head, "--dataset", dataset,
                     "--task", "attributes"}, &metrics) == 0, "eval");
  const double macc = Json::parse(metrics)["attributes"]["mean_accuracy"].get<double>();
  o.require(macc > 90.0, "mAcc > 90%");
  o.detail << "probe-set mAcc " << fmt(macc) << "%, backbone sha256 " << before.substr(0, 12)
           << (before == after ? " unchanged " : " CHANGED ");
}

}  // namespace

int main() {
  tune_allocator();
  set_warning_sink([](const std::string&) {});
  int failures = 0;
  failures += report(1, "ITC closed forms", itc_closed_forms, 1.0);
  failures += report(2, "gradient suite vs central differences", gradient_suite, 300.0);
  failures += report(3, "tanh_alpha suite", tanh_suite);
  failures += report(4, "geometry round-trips", geometry_round_trips);
  failures += report(5, "metric oracle equivalence", metric_oracles);
  failures += report(6, "masking contract", masking_contract);
  failures += report(7, "learning-rate schedule", schedule);
  failures += report(8, "training sanity", training_sanity, 600.0);
  failures += report(9, "pipeline determinism", pipeline_determinism);
  failures += report(10, "end-to-end smoke", end_to_end, 600.0);
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
