// Copyright 2026 The facevl Authors
// SPDX-License-Identifier: Apache-2.0
#include "facevl/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>
#include <string>

#include "facevl/errors.hpp"

namespace facevl {

extern const char* const kBuiltinMeanFace;

// ---- SimilarityTransform ---------------------------------------------------------

SimilarityTransform SimilarityTransform::from_params(double scale, double rotation_rad, double tx,
                                                     double ty) {
  const double c = scale * std::cos(rotation_rad);
  const double s = scale * std::sin(rotation_rad);
  return SimilarityTransform({c, -s, tx, s, c, ty});
}

Point2 SimilarityTransform::apply(Point2 p) const noexcept {
  return {m_[0] * p.x + m_[1] * p.y + m_[2], m_[3] * p.x + m_[4] * p.y + m_[5]};
}

SimilarityTransform SimilarityTransform::inverse() const {
  const double det = m_[0] * m_[4] - m_[1] * m_[3];
  const double norm = std::abs(m_[0]) + std::abs(m_[1]) + std::abs(m_[3]) + std::abs(m_[4]);
  if (!std::isfinite(det) || std::abs(det) <= 1e-12 * std::max(1.0, norm * norm)) {
    throw SingularityError("transform is not invertible");
  }
  const double a = m_[4] / det;
  const double b = -m_[1] / det;
  const double c = -m_[3] / det;
  const double d = m_[0] / det;
  return SimilarityTransform({a, b, -(a * m_[2] + b * m_[5]), c, d, -(c * m_[2] + d * m_[5])});
}

SimilarityTransform SimilarityTransform::after(const SimilarityTransform& o) const noexcept {
  const auto& a = m_;
  const auto& b = o.m_;
  return SimilarityTransform({a[0] * b[0] + a[1] * b[3], a[0] * b[1] + a[1] * b[4],
                              a[0] * b[2] + a[1] * b[5] + a[2], a[3] * b[0] + a[4] * b[3],
                              a[3] * b[1] + a[4] * b[4], a[3] * b[2] + a[4] * b[5] + a[5]});
}

double SimilarityTransform::scale() const noexcept { return std::hypot(m_[0], m_[3]); }
double SimilarityTransform::rotation() const noexcept { return std::atan2(m_[3], m_[0]); }

double SimilarityTransform::distance(const SimilarityTransform& other) const noexcept {
  double sq = 0.0;
  for (std::size_t i = 0; i < 6; ++i) sq += (m_[i] - other.m_[i]) * (m_[i] - other.m_[i]);
  return std::sqrt(sq);
}

SimilarityTransform estimate_similarity(std::span<const Point2> src, std::span<const Point2> dst) {
  if (src.size() != dst.size()) throw InputError("estimate_similarity: point count mismatch");
  if (src.size() < 2) throw InputError("estimate_similarity: need at least two points");
  const double n = static_cast<double>(src.size());
  Point2 cs;
  Point2 cd;
  for (std::size_t i = 0; i < src.size(); ++i) {
    cs.x += src[i].x / n;
    cs.y += src[i].y / n;
    cd.x += dst[i].x / n;
    cd.y += dst[i].y / n;
  }
  double spread = 0.0;
  double dot = 0.0;
  double cross = 0.0;
  double magnitude = 0.0;
  for (std::size_t i = 0; i < src.size(); ++i) {
    const double sx = src[i].x - cs.x;
    const double sy = src[i].y - cs.y;
    const double dx = dst[i].x - cd.x;
    const double dy = dst[i].y - cd.y;
    spread += sx * sx + sy * sy;
    dot += sx * dx + sy * dy;
    cross += sx * dy - sy * dx;
    magnitude += src[i].x * src[i].x + src[i].y * src[i].y;
  }
  if (!(spread > 1e-12 * std::max(1.0, magnitude))) {
    throw SingularityError("estimate_similarity: source points are coincident");
  }
  const double a = dot / spread;
  const double b = cross / spread;
  return SimilarityTransform({a, -b, cd.x - (a * cs.x - b * cs.y), b, a, cd.y - (b * cs.x + a * cs.y)});
}

SimilarityTransform resize_transform(std::size_t height, std::size_t width, std::size_t size) {
  if (height == 0 || width == 0 || size == 0) throw InputError("resize_transform: empty extent");
  // Maps pixel edges onto pixel edges: (x + 0.5) * size / width - 0.5.
  const double sx = static_cast<double>(size) / static_cast<double>(width);
  const double sy = static_cast<double>(size) / static_cast<double>(height);
  return SimilarityTransform({sx, 0.0, 0.5 * sx - 0.5, 0.0, sy, 0.5 * sy - 0.5});
}

SimilarityTransform augment_transform(const SimilarityTransform& t, Rng& rng,
                                      const AugmentRanges& ranges, std::size_t target_size,
                                      AugmentSample* sample) {
  if (ranges.rotation_deg < 0 || ranges.scale_delta < 0 || ranges.scale_delta >= 1 ||
      ranges.translation_frac < 0) {
    throw InputError("augment_transform: invalid ranges");
  }
  auto uniform = [&rng](double lo, double hi) {
    return lo == hi ? lo : std::uniform_real_distribution<double>(lo, hi)(rng);
  };
  AugmentSample s;
  s.rotation_deg = uniform(-ranges.rotation_deg, ranges.rotation_deg);
  s.scale = uniform(1.0 - ranges.scale_delta, 1.0 + ranges.scale_delta);
  const double shift = ranges.translation_frac * static_cast<double>(target_size);
  s.tx = uniform(-shift, shift);
  s.ty = uniform(-shift, shift);
  if (sample) *sample = s;

  const double centre = (static_cast<double>(target_size) - 1.0) / 2.0;
  const auto about = SimilarityTransform::from_params(s.scale, s.rotation_deg * std::numbers::pi / 180.0, 0, 0);
  const auto& m = about.matrix();
  const SimilarityTransform jitter({m[0], m[1], centre - (m[0] * centre + m[1] * centre) + s.tx, m[3], m[4],
                                    centre - (m[3] * centre + m[4] * centre) + s.ty});
  return jitter.after(t);
}

// ---- tanh_alpha ---------------------------------------------------------------------

namespace {

void check_alpha(double alpha) {
  if (!(alpha > 0.0 && alpha <= 1.0)) throw InputError("tanh_alpha: alpha must lie in (0, 1]");
}

double normalise(double v, std::size_t size) { return (2.0 * v + 1.0) / static_cast<double>(size) - 1.0; }
double denormalise(double n, std::size_t size) { return ((n + 1.0) * static_cast<double>(size) - 1.0) / 2.0; }

}  // namespace

double tanh_alpha(double x, double alpha) {
  check_alpha(alpha);
  const double knee = 1.0 - alpha;
  if (x > knee) return alpha * std::tanh((x - knee) / alpha) + knee;
  if (x < -knee) return alpha * std::tanh((x + knee) / alpha) - knee;
  return x;
}

double tanh_alpha_inverse(double y, double alpha) {
  check_alpha(alpha);
  const double knee = 1.0 - alpha;
  if (y >= 1.0) return std::numeric_limits<double>::infinity();
  if (y <= -1.0) return -std::numeric_limits<double>::infinity();
  if (y > knee) return alpha * std::atanh((y - knee) / alpha) + knee;
  if (y < -knee) return alpha * std::atanh((y + knee) / alpha) - knee;
  return y;
}

void WarpConfig::validate() const {
  check_alpha(alpha);
  if (target_size == 0) throw InputError("warp target size must be positive");
}

namespace {

// Output pixel -> source pixel coordinate.
struct InverseMap {
  SimilarityTransform inv;
  WarpConfig cfg;

  Point2 operator()(double x, double y) const {
    if (cfg.enabled) {
      x = denormalise(tanh_alpha_inverse(normalise(x, cfg.target_size), cfg.alpha), cfg.target_size);
      y = denormalise(tanh_alpha_inverse(normalise(y, cfg.target_size), cfg.alpha), cfg.target_size);
    }
    return inv.apply({x, y});
  }
};

}  // namespace

Image warp_image(const Image& image, const SimilarityTransform& t, const WarpConfig& cfg) {
  cfg.validate();
  const InverseMap map{t.inverse(), cfg};
  const std::size_t s = cfg.target_size;
  Image out(s, s);
  for (std::size_t y = 0; y < s; ++y) {
    for (std::size_t x = 0; x < s; ++x) {
      const Point2 src = map(static_cast<double>(x), static_cast<double>(y));
      if (!std::isfinite(src.x) || !std::isfinite(src.y)) continue;
      for (std::size_t c = 0; c < 3; ++c) out.at(y, x, c) = sample_bilinear(image, src.x, src.y, c);
    }
  }
  return out;
}

LabelMap warp_labels(const LabelMap& labels, const SimilarityTransform& t, const WarpConfig& cfg,
                     std::int32_t fill) {
  cfg.validate();
  const InverseMap map{t.inverse(), cfg};
  const std::size_t s = cfg.target_size;
  LabelMap out{s, s, std::vector<std::int32_t>(s * s, fill)};
  for (std::size_t y = 0; y < s; ++y) {
    for (std::size_t x = 0; x < s; ++x) {
      const Point2 src = map(static_cast<double>(x), static_cast<double>(y));
      const double rx = std::round(src.x);
      const double ry = std::round(src.y);
      if (!(rx >= 0 && ry >= 0 && rx < static_cast<double>(labels.width) &&
            ry < static_cast<double>(labels.height))) {
        continue;
      }
      out.at(y, x) = labels.at(static_cast<std::size_t>(ry), static_cast<std::size_t>(rx));
    }
  }
  return out;
}

Landmarks transform_points(std::span<const Point2> points, const SimilarityTransform& t,
                           const WarpConfig& cfg) {
  cfg.validate();
  t.inverse();  // same singularity contract as warp_image
  Landmarks out;
  out.reserve(points.size());
  for (const auto& p : points) {
    if (!std::isfinite(p.x) || !std::isfinite(p.y)) throw InputError("non-finite landmark");
    Point2 q = t.apply(p);
    if (cfg.enabled) {
      q.x = denormalise(tanh_alpha(normalise(q.x, cfg.target_size), cfg.alpha), cfg.target_size);
      q.y = denormalise(tanh_alpha(normalise(q.y, cfg.target_size), cfg.alpha), cfg.target_size);
    }
    out.push_back(q);
  }
  return out;
}

Landmarks inverse_transform_points(std::span<const Point2> points, const SimilarityTransform& t,
                                   const WarpConfig& cfg) {
  cfg.validate();
  const InverseMap map{t.inverse(), cfg};
  Landmarks out;
  out.reserve(points.size());
  for (const auto& p : points) out.push_back(map(p.x, p.y));
  return out;
}

// ---- heatmaps ------------------------------------------------------------------------

Heatmap render_heatmap(std::span<const Point2> points, std::size_t size) {
  Heatmap out(points.size(), size);
  for (std::size_t l = 0; l < points.size(); ++l) {
    const Point2 p = points[l];
    if (!std::isfinite(p.x) || !std::isfinite(p.y)) throw InputError("non-finite landmark");
    for (std::size_t y = 0; y < size; ++y) {
      const double dy = static_cast<double>(y) - p.y;
      for (std::size_t x = 0; x < size; ++x) {
        const double dx = static_cast<double>(x) - p.x;
        out.at(l, y, x) = std::clamp(std::exp(-0.5 * (dx * dx + dy * dy)), 0.0, 1.0);
      }
    }
  }
  return out;
}

std::vector<DecodedLandmark> decode_heatmap(const Heatmap& heatmap, HeatmapScale scale) {
  const std::size_t s = heatmap.size;
  if (s == 0 || heatmap.values.size() != heatmap.channels * s * s) {
    throw DimensionError("decode_heatmap: inconsistent heatmap shape");
  }
  std::vector<DecodedLandmark> out(heatmap.channels);
  for (std::size_t l = 0; l < heatmap.channels; ++l) {
    const double* ch = heatmap.values.data() + l * s * s;
    const double* lo = std::min_element(ch, ch + s * s);
    const double* hi = std::max_element(ch, ch + s * s);  // first maximum
    const auto best = static_cast<std::size_t>(hi - ch);
    const long by = static_cast<long>(best / s);
    const long bx = static_cast<long>(best % s);
    if (*lo == *hi) {
      out[l] = {{static_cast<double>(bx), static_cast<double>(by)}, true};
      continue;
    }
    auto logit = [scale](double v) {
      if (scale == HeatmapScale::kLogit) return v;
      return v > 0.0 ? std::log(v) : -std::numeric_limits<double>::infinity();
    };
    const double peak = logit(*hi);
    double total = 0.0;
    double mx = 0.0;
    double my = 0.0;
    const long last = static_cast<long>(s) - 1;
    const long rx = std::min({2L, bx, last - bx});
    const long ry = std::min({2L, by, last - by});
    for (long y = by - ry; y <= by + ry; ++y) {
      for (long x = bx - rx; x <= bx + rx; ++x) {
        const double w = std::exp(logit(ch[static_cast<std::size_t>(y) * s + static_cast<std::size_t>(x)]) - peak);
        total += w;
        mx += w * static_cast<double>(x);
        my += w * static_cast<double>(y);
      }
    }
    out[l] = {{mx / total, my / total}, false};
  }
  return out;
}

// ---- files ------------------------------------------------------------------------------

namespace {

std::vector<double> parse_reals(const std::string& line, const std::string& where) {
  std::vector<double> values;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    try {
      std::size_t used = 0;
      values.push_back(std::stod(cell, &used));
      if (cell.find_first_not_of(" \t\r", used) != std::string::npos) throw std::invalid_argument(cell);
    } catch (const std::exception&) {
      throw IoError(where + ": not a number '" + cell + "'");
    }
  }
  return values;
}

Landmarks to_points(const std::vector<double>& values, const std::string& where) {
  if (values.size() % 2 != 0) throw IoError(where + ": odd number of coordinates");
  Landmarks pts;
  for (std::size_t i = 0; i < values.size(); i += 2) pts.push_back({values[i], values[i + 1]});
  return pts;
}

std::string format_real(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

std::vector<Landmarks> read_landmarks_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open landmark file " + path.string());
  std::vector<Landmarks> faces;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(number);
    faces.push_back(to_points(parse_reals(line, where), where));
  }
  return faces;
}

void write_landmarks_file(const std::filesystem::path& path, std::span<const Landmarks> faces) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& face : faces) {
    for (std::size_t i = 0; i < face.size(); ++i) {
      out << (i ? "," : "") << format_real(face[i].x) << ',' << format_real(face[i].y);
    }
    out << '\n';
  }
}

SimilarityTransform read_transform_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open transform file " + path.string());
  std::array<double, 6> m{};
  for (auto& v : m) {
    if (!(in >> v)) throw IoError(path.string() + ": expected six reals");
  }
  return SimilarityTransform(m);
}

void write_transform_file(const std::filesystem::path& path, const SimilarityTransform& t) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  const auto& m = t.matrix();
  out << format_real(m[0]) << ' ' << format_real(m[1]) << ' ' << format_real(m[2]) << '\n'
      << format_real(m[3]) << ' ' << format_real(m[4]) << ' ' << format_real(m[5]) << '\n';
}

const Landmarks& mean_face_unit() {
  static const Landmarks face = [] {
    std::string text(kBuiltinMeanFace);
    const auto end = text.find('\n');
    auto pts = to_points(parse_reals(text.substr(0, end), "mean face template"), "mean face template");
    if (pts.size() != 5) throw IoError("mean face template must hold five points");
    return pts;
  }();
  return face;
}

Landmarks mean_face(std::size_t size) {
  Landmarks out = mean_face_unit();
  const double s = static_cast<double>(size);
  for (auto& p : out) p = {p.x * s - 0.5, p.y * s - 0.5};
  return out;
}

}  // namespace facevl
