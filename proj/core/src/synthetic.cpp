// Copyright 2026 The facevl Authors
// SPDX-License-Identifier: Apache-2.0
#include "facevl/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "facevl/errors.hpp"

namespace facevl {
namespace {

using Rgb = std::array<double, 3>;

constexpr std::array<Rgb, 5> kHair{{{0.08, 0.07, 0.06}, {0.40, 0.25, 0.12}, {0.92, 0.80, 0.45},
                                    {0.75, 0.28, 0.12}, {0.62, 0.62, 0.64}}};
constexpr std::array<Rgb, 3> kSkin{{{0.96, 0.86, 0.78}, {0.82, 0.62, 0.48}, {0.45, 0.30, 0.20}}};
constexpr std::array<Rgb, 4> kBackground{{{0.12, 0.12, 0.16}, {0.90, 0.90, 0.86}, {0.30, 0.60, 0.30},
                                          {0.25, 0.40, 0.80}}};
constexpr Rgb kEye{0.05, 0.05, 0.10};
constexpr Rgb kMouth{0.70, 0.15, 0.20};
constexpr Rgb kGlasses{0.20, 0.20, 0.22};

constexpr std::array<const char*, 5> kHairNames{"black", "brown", "blond", "red", "gray"};
constexpr std::array<const char*, 4> kBackgroundNames{"dark", "light", "green", "blue"};

Landmarks place_template(Rng& rng, std::size_t size, Point2 centre, double extent) {
  std::uniform_real_distribution<double> rot(-10.0, 10.0);
  std::uniform_real_distribution<double> scl(0.9, 1.1);
  const double angle = rot(rng) * std::numbers::pi / 180.0;
  const double s = scl(rng) * extent * static_cast<double>(size);
  const double c = std::cos(angle);
  const double n = std::sin(angle);
  Landmarks out;
  for (const Point2& u : mean_face_unit()) {
    const double dx = (u.x - 0.5) * s;
    const double dy = (u.y - 0.5) * s;
    out.push_back({centre.x + c * dx - n * dy, centre.y + n * dx + c * dy});
  }
  return out;
}

void draw_face(const SyntheticFace& face, Image& image, LabelMap& labels) {
  const Point2 le = face.five[0];
  const Point2 re = face.five[1];
  const Point2 nose = face.five[2];
  const Point2 lm = face.five[3];
  const Point2 rm = face.five[4];
  const double ex = re.x - le.x;
  const double ey = re.y - le.y;
  const double d = std::hypot(ex, ey);
  if (!(d > 0.0)) return;
  // Face frame: u along the eye line, v downwards; origin between eyes and mouth.
  const double ux = ex / d;
  const double uy = ey / d;
  const double vx = -uy;
  const double vy = ux;
  const Point2 eye_mid{(le.x + re.x) / 2, (le.y + re.y) / 2};
  const Point2 mouth_mid{(lm.x + rm.x) / 2, (lm.y + rm.y) / 2};
  const Point2 origin{(eye_mid.x + mouth_mid.x) / 2, (eye_mid.y + mouth_mid.y) / 2};
  auto local = [&](double x, double y) {
    const double px = x - origin.x;
    const double py = y - origin.y;
    return Point2{(px * ux + py * uy) / d, (px * vx + py * vy) / d};
  };
  const Point2 le_l = local(le.x, le.y);
  const Point2 re_l = local(re.x, re.y);
  const Point2 nose_l = local(nose.x, nose.y);
  const Point2 lm_l = local(lm.x, lm.y);
  const Point2 rm_l = local(rm.x, rm.y);
  const double eye_v = (le_l.y + re_l.y) / 2;

  auto paint = [&](std::size_t y, std::size_t x, const Rgb& c, std::int32_t label) {
    for (std::size_t k = 0; k < 3; ++k) image.at(y, x, k) = c[k];
    labels.at(y, x) = label;
  };
  const double radius_u = 0.95;
  const double radius_v = 1.30;
  for (std::size_t y = 0; y < image.height(); ++y) {
    for (std::size_t x = 0; x < image.width(); ++x) {
      const Point2 p = local(static_cast<double>(x), static_cast<double>(y));
      const double face_r = (p.x / radius_u) * (p.x / radius_u) + (p.y / radius_v) * (p.y / radius_v);
      const double hair_r = (p.x / (radius_u * 1.18)) * (p.x / (radius_u * 1.18)) +
                            ((p.y + 0.12) / (radius_v * 1.12)) * ((p.y + 0.12) / (radius_v * 1.12));
      if (face_r > 1.0) {
        if (hair_r <= 1.0 && p.y < 0.25) paint(y, x, kHair[face.hair], 2);
        continue;
      }
      if (p.y < eye_v - 0.42) {
        paint(y, x, kHair[face.hair], 2);
        continue;
      }
      paint(y, x, kSkin[face.skin], 1);
      const double eye_r = 0.16;
      const bool in_eye = std::hypot(p.x - le_l.x, p.y - le_l.y) < eye_r || std::hypot(p.x - re_l.x, p.y - re_l.y) < eye_r;
      if (face.glasses && std::abs(p.y - eye_v) < 0.24 && std::abs(p.x) < 0.85 && !in_eye) {
        paint(y, x, kGlasses, 5);
        continue;
      }
      if (in_eye) {
        paint(y, x, kEye, 3);
        continue;
      }
      if (std::hypot(p.x - nose_l.x, p.y - nose_l.y) < 0.08) {
        const Rgb& s = kSkin[face.skin];
        paint(y, x, {s[0] * 0.8, s[1] * 0.8, s[2] * 0.8}, 1);
        continue;
      }
      const double span = rm_l.x - lm_l.x;
      if (span > 0 && p.x >= lm_l.x - 0.05 && p.x <= rm_l.x + 0.05) {
        const double t = std::clamp((p.x - lm_l.x) / span, 0.0, 1.0);
        double mouth_v = lm_l.y + t * (rm_l.y - lm_l.y);
        if (face.smiling) mouth_v += 0.18 * (1.0 - (2 * t - 1) * (2 * t - 1));
        if (std::abs(p.y - mouth_v) < 0.09) paint(y, x, kMouth, 4);
      }
    }
  }
}

SyntheticFace appearance(Rng& rng) {
  SyntheticFace f;
  f.hair = std::uniform_int_distribution<std::size_t>(0, kHair.size() - 1)(rng);
  f.skin = std::uniform_int_distribution<std::size_t>(0, kSkin.size() - 1)(rng);
  f.background = std::uniform_int_distribution<std::size_t>(0, kBackground.size() - 1)(rng);
  std::bernoulli_distribution coin(0.5);
  f.glasses = coin(rng);
  f.smiling = coin(rng);
  f.woman = coin(rng);
  return f;
}

std::uint64_t ref_seed(const std::string& ref, const std::string& prefix) {
  try {
    std::size_t used = 0;
    const std::string digits = ref.substr(prefix.size());
    const std::uint64_t seed = std::stoull(digits, &used);
    if (used != digits.size()) throw InputError("trailing characters");
    return seed;
  } catch (const std::exception&) {
    throw IoError("malformed synthetic reference '" + ref + "'");
  }
}

std::vector<SyntheticFace> faces_for_seed(std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t n = std::uniform_int_distribution<std::size_t>(0, 9)(rng) < 8 ? 1 : 2;
  const double size = static_cast<double>(kSyntheticNativeSize);
  std::vector<SyntheticFace> faces;
  for (std::size_t i = 0; i < n; ++i) {
    SyntheticFace f = appearance(rng);
    if (n == 1) {
      f.five = place_template(rng, kSyntheticNativeSize, {size / 2 - 0.5, size / 2 - 0.5}, 0.75);
    } else {
      const double cx = (i == 0 ? 0.28 : 0.72) * size - 0.5;
      f.five = place_template(rng, kSyntheticNativeSize, {cx, size / 2 - 0.5}, 0.42);
    }
    faces.push_back(std::move(f));
  }
  return faces;
}

}  // namespace

std::array<bool, kSyntheticFactors> SyntheticFace::factors() const {
  return {glasses, smiling, hair == 0 || hair == 1, background == 1, skin == 0};
}

std::vector<bool> SyntheticFace::attributes() const {
  const auto f = factors();
  std::vector<bool> bits(kSyntheticAttributes);
  for (std::size_t k = 0; k < bits.size(); ++k) {
    const bool v = f[k % kSyntheticFactors];
    bits[k] = (k / kSyntheticFactors) % 2 == 0 ? v : !v;
  }
  return bits;
}

std::string SyntheticFace::caption() const {
  std::string s = "a photo of a ";
  s += smiling ? "smiling " : "serious ";
  s += woman ? "woman" : "man";
  s += " with ";
  s += kHairNames[hair];
  s += " hair";
  if (glasses) s += " wearing glasses";
  s += " on a ";
  s += kBackgroundNames[background];
  s += " background";
  return s;
}

SyntheticFace random_face(Rng& rng, std::size_t size) {
  SyntheticFace f = appearance(rng);
  const double c = static_cast<double>(size) / 2 - 0.5;
  f.five = place_template(rng, size, {c, c}, 0.75);
  return f;
}

SyntheticFace indexed_face(std::size_t index, std::size_t size) {
  SyntheticFace f;
  f.glasses = (index & 1) != 0;
  f.smiling = (index & 2) != 0;
  f.hair = (index >> 2) % kHair.size();
  f.background = (index / 3) % kBackground.size();
  f.skin = (index / 5) % kSkin.size();
  f.woman = (index / 7) % 2 == 1;
  Rng rng(0x5eed0000 + index);
  const double c = static_cast<double>(size) / 2 - 0.5;
  f.five = place_template(rng, size, {c, c}, 0.75);
  return f;
}

RenderedFace render_face(const SyntheticFace& face, std::size_t size) {
  if (face.five.size() != 5) throw InputError("render_face: needs five landmarks");
  RenderedFace out{Image(size, size), LabelMap{size, size, std::vector<std::int32_t>(size * size, 0)}};
  const Rgb& bg = kBackground[face.background % kBackground.size()];
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x)
      for (std::size_t k = 0; k < 3; ++k) out.image.at(y, x, k) = bg[k];
  draw_face(face, out.image, out.labels);
  return out;
}

Image render_scene(std::uint64_t seed, std::size_t size) {
  Rng rng(seed);
  std::uniform_real_distribution<double> colour(0.0, 1.0);
  Image img(size, size);
  const Rgb base{colour(rng), colour(rng), colour(rng)};
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x)
      for (std::size_t k = 0; k < 3; ++k) img.at(y, x, k) = base[k];
  std::uniform_int_distribution<std::size_t> coord(0, size - 1);
  for (int r = 0; r < 6; ++r) {
    std::size_t x0 = coord(rng), x1 = coord(rng), y0 = coord(rng), y1 = coord(rng);
    if (x0 > x1) std::swap(x0, x1);
    if (y0 > y1) std::swap(y0, y1);
    const Rgb c{colour(rng), colour(rng), colour(rng)};
    for (std::size_t y = y0; y <= y1; ++y)
      for (std::size_t x = x0; x <= x1; ++x)
        for (std::size_t k = 0; k < 3; ++k) img.at(y, x, k) = c[k];
  }
  return img;
}

std::string synthetic_ref(bool face, std::uint64_t seed) {
  return std::string(face ? "synthetic:face:" : "synthetic:scene:") + std::to_string(seed);
}

bool is_synthetic_ref(const std::string& ref) { return ref.rfind("synthetic:", 0) == 0; }

Image render_synthetic_ref(const std::string& ref) {
  static const std::string kFace = "synthetic:face:";
  static const std::string kScene = "synthetic:scene:";
  if (ref.rfind(kScene, 0) == 0) return render_scene(ref_seed(ref, kScene), kSyntheticNativeSize);
  if (ref.rfind(kFace, 0) != 0) throw IoError("unknown synthetic reference '" + ref + "'");
  const auto faces = faces_for_seed(ref_seed(ref, kFace));
  RenderedFace canvas = render_face(faces.front(), kSyntheticNativeSize);
  for (std::size_t i = 1; i < faces.size(); ++i) draw_face(faces[i], canvas.image, canvas.labels);
  return canvas.image;
}

std::vector<ManifestRecord> synthetic_manifest(std::size_t count, std::uint64_t seed, double face_fraction) {
  Rng rng(seed);
  std::bernoulli_distribution is_face(face_fraction);
  std::uniform_real_distribution<double> face_score(0.5, 1.0);
  std::uniform_real_distribution<double> scene_score(0.0, 0.5);
  std::vector<ManifestRecord> out;
  for (std::size_t i = 0; i < count; ++i) {
    const std::uint64_t image_seed = rng();
    ManifestRecord r;
    if (is_face(rng)) {
      const auto faces = faces_for_seed(image_seed);
      r.image_ref = synthetic_ref(true, image_seed);
      r.caption = faces.front().caption();
      r.face_score = std::floor(face_score(rng) * 1e4) / 1e4;
      for (const auto& f : faces) r.faces.push_back(f.five);
    } else {
      r.image_ref = synthetic_ref(false, image_seed);
      r.caption = "a picture of a street at night";
      r.face_score = std::floor(scene_score(rng) * 1e4) / 1e4;
    }
    r.face_count = r.faces.size();
    out.push_back(std::move(r));
  }
  return out;
}

GridParsingSample grid_parsing_sample(std::size_t size, std::size_t patch, std::size_t classes, Rng& rng) {
  if (patch == 0 || size % patch != 0) throw DimensionError("grid_parsing_sample: size not a multiple of patch");
  if (classes < 2) throw InputError("grid_parsing_sample: need at least two classes");
  GridParsingSample s{Image(size, size), LabelMap{size, size, std::vector<std::int32_t>(size * size, 0)}};
  std::uniform_int_distribution<std::size_t> pick(0, classes - 1);
  std::uniform_real_distribution<double> noise(-0.03, 0.03);
  const std::size_t grid = size / patch;
  for (std::size_t gy = 0; gy < grid; ++gy) {
    for (std::size_t gx = 0; gx < grid; ++gx) {
      const std::size_t c = pick(rng);
      const double h = static_cast<double>(c) / static_cast<double>(classes);
      const Rgb colour{0.5 + 0.45 * std::cos(2 * std::numbers::pi * h),
                       0.5 + 0.45 * std::cos(2 * std::numbers::pi * (h + 1.0 / 3)),
                       0.5 + 0.45 * std::cos(2 * std::numbers::pi * (h + 2.0 / 3))};
      for (std::size_t y = gy * patch; y < (gy + 1) * patch; ++y) {
        for (std::size_t x = gx * patch; x < (gx + 1) * patch; ++x) {
          for (std::size_t k = 0; k < 3; ++k) s.image.at(y, x, k) = std::clamp(colour[k] + noise(rng), 0.0, 1.0);
          s.labels.at(y, x) = static_cast<std::int32_t>(c);
        }
      }
    }
  }
  return s;
}

Landmarks to_heatmap_frame(const Landmarks& points, std::size_t image_size, std::size_t heatmap_size) {
  const double s = static_cast<double>(heatmap_size) / static_cast<double>(image_size);
  Landmarks out;
  for (const auto& p : points) out.push_back({(p.x + 0.5) * s - 0.5, (p.y + 0.5) * s - 0.5});
  return out;
}

Landmarks from_heatmap_frame(const Landmarks& points, std::size_t image_size, std::size_t heatmap_size) {
  const double s = static_cast<double>(image_size) / static_cast<double>(heatmap_size);
  Landmarks out;
  for (const auto& p : points) out.push_back({(p.x + 0.5) * s - 0.5, (p.y + 0.5) * s - 0.5});
  return out;
}

}  // namespace facevl
