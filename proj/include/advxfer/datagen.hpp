#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "advxfer/dataset.hpp"
#include "advxfer/rng.hpp"

namespace advxfer {

// One container type: a piecewise-linear radius profile r(t) over normalized
// height t in [0,1] (bottom to top), radii in units of the rendered height.
// Interior (fillable) space exists for t >= bowl_start.
struct ContainerSpec {
  std::string id;
  std::string family;
  Transparency transparency = Transparency::Transparent;
  std::vector<std::pair<double, double>> profile;
  double bowl_start = 0.0;
  double height_scale = 1.0;
};

// Nine containers: three stemmed glasses, three open cups, one flute, two
// opaque vessels. Families are fine-grained (one per container type) so the
// shape-held-out splits hold out whole containers.
inline const std::vector<ContainerSpec>& container_catalog() {
  static const std::vector<ContainerSpec> catalog = {
      {"wine_glass", "wine", Transparency::Transparent,
       {{0.0, 0.16}, {0.04, 0.16}, {0.08, 0.035}, {0.34, 0.035}, {0.38, 0.10}, {0.52, 0.27},
        {0.78, 0.29}, {1.0, 0.24}},
       0.36, 1.0},
      {"cocktail_glass", "cocktail", Transparency::Transparent,
       {{0.0, 0.17}, {0.04, 0.17}, {0.08, 0.035}, {0.46, 0.035}, {0.50, 0.05}, {1.0, 0.44}},
       0.48, 0.95},
      {"goblet", "goblet", Transparency::Translucent,
       {{0.0, 0.18}, {0.05, 0.18}, {0.09, 0.05}, {0.24, 0.05}, {0.28, 0.14}, {0.52, 0.31},
        {1.0, 0.30}},
       0.26, 0.9},
      {"tumbler", "tumbler", Transparency::Transparent,
       {{0.0, 0.27}, {1.0, 0.31}},
       0.0, 0.85},
      {"beer_cup", "beer_cup", Transparency::Transparent,
       {{0.0, 0.21}, {1.0, 0.36}},
       0.0, 1.0},
      {"small_cup", "small_cup", Transparency::Translucent,
       {{0.0, 0.26}, {1.0, 0.30}},
       0.0, 0.65},
      {"champagne_flute", "flute", Transparency::Transparent,
       {{0.0, 0.15}, {0.04, 0.15}, {0.07, 0.03}, {0.20, 0.03}, {0.24, 0.08}, {0.42, 0.145},
        {0.86, 0.15}, {1.0, 0.125}},
       0.22, 1.1},
      {"red_cup", "red_cup", Transparency::Opaque,
       {{0.0, 0.23}, {1.0, 0.33}},
       0.0, 0.9},
      {"coffee_mug", "mug", Transparency::Opaque,
       {{0.0, 0.30}, {1.0, 0.30}},
       0.0, 0.7},
  };
  return catalog;
}

inline const ContainerSpec& container_by_id(const std::string& id) {
  for (const auto& c : container_catalog())
    if (c.id == id) return c;
  throw ConfigError("unknown container id '" + id + "'");
}

namespace detail {

inline double radius_at(const std::vector<std::pair<double, double>>& profile, double t) {
  t = std::clamp(t, 0.0, 1.0);
  if (t <= profile.front().first) return profile.front().second;
  for (size_t i = 1; i < profile.size(); ++i) {
    if (t <= profile[i].first) {
      double t0 = profile[i - 1].first, r0 = profile[i - 1].second;
      double t1 = profile[i].first, r1 = profile[i].second;
      double a = t1 > t0 ? (t - t0) / (t1 - t0) : 1.0;
      return r0 + a * (r1 - r0);
    }
  }
  return profile.back().second;
}

struct Color {
  float r, g, b;
};

inline void put(std::vector<float>& chw, int y, int x, Color c) {
  chw[(0 * kImageH + y) * kImageW + x] = c.r;
  chw[(1 * kImageH + y) * kImageW + x] = c.g;
  chw[(2 * kImageH + y) * kImageW + x] = c.b;
}

inline Color get(const std::vector<float>& chw, int y, int x) {
  return {chw[(0 * kImageH + y) * kImageW + x], chw[(1 * kImageH + y) * kImageW + x],
          chw[(2 * kImageH + y) * kImageW + x]};
}

inline Color blend(Color bg, Color fg, float a) {
  return {bg.r * (1 - a) + fg.r * a, bg.g * (1 - a) + fg.g * a, bg.b * (1 - a) + fg.b * a};
}

inline Color random_color(Rng& rng, double lo, double hi) {
  return {static_cast<float>(rng.uniform(lo, hi)), static_cast<float>(rng.uniform(lo, hi)),
          static_cast<float>(rng.uniform(lo, hi))};
}

// Eight procedural background styles keyed by background_id, colors jittered
// from the sample rng.
inline void draw_background(std::vector<float>& chw, int background_id, Rng& rng) {
  Color c1 = random_color(rng, 0.15, 0.9);
  Color c2 = random_color(rng, 0.15, 0.9);
  int style = ((background_id % 8) + 8) % 8;
  int cell = 8 + 8 * static_cast<int>(rng.uniform() < 0.5);
  int split = static_cast<int>(rng.uniform(20, 44));
  std::array<std::array<Color, 8>, 8> grid{};
  if (style == 7)
    for (auto& row : grid)
      for (auto& g : row) g = random_color(rng, 0.15, 0.9);
  for (int y = 0; y < kImageH; ++y)
    for (int x = 0; x < kImageW; ++x) {
      Color c{};
      switch (style) {
        case 0: c = c1; break;
        case 1: c = blend(c1, c2, static_cast<float>(y) / (kImageH - 1)); break;
        case 2: c = blend(c1, c2, static_cast<float>(x) / (kImageW - 1)); break;
        case 3: c = y < split ? c1 : c2; break;
        case 4: c = ((x / cell + y / cell) % 2) ? c1 : c2; break;
        case 5: c = ((y / 6) % 2) ? c1 : c2; break;
        case 6: c = ((x / 6) % 2) ? c1 : c2; break;
        case 7: c = grid[y / 8][x / 8]; break;
      }
      put(chw, y, x, c);
    }
}

}  // namespace detail

// Pixel masks for the fill-level oracle, captured before occlusion is drawn.
struct RenderMasks {
  std::vector<uint8_t> interior;  // HxW
  std::vector<uint8_t> liquid;    // HxW
  int interior_count = 0;
  int liquid_count = 0;
};

// Deterministic render of one container image. Opaque containers show no
// interior and are labeled unknown regardless of the requested fill.
inline ImageSample render_container(const ContainerSpec& spec, FillClass fill,
                                    Transparency transparency, bool occluded, int background_id,
                                    uint64_t seed, RenderMasks* masks = nullptr) {
  Rng rng(seed);
  ImageSample s;
  s.pixels.assign(kImagePixels, 0.0f);
  s.meta.container_id = spec.id;
  s.meta.shape_family = spec.family;
  s.meta.transparency = transparency;
  s.meta.occluded = occluded;
  s.meta.background_id = background_id;
  const bool opaque = transparency == Transparency::Opaque;
  s.label = opaque ? static_cast<int>(FillClass::Unknown) : static_cast<int>(fill);

  detail::draw_background(s.pixels, background_id, rng);

  // Geometry jitter around a centered, bottom-anchored pose.
  double cx = 31.5 + rng.uniform(-5.0, 5.0);
  double base_y = 57.0 + rng.uniform(-3.0, 1.0);
  double h_px = (40.0 + rng.uniform(-5.0, 5.0)) * spec.height_scale;
  double wall_px = std::max(1.1, 0.035 * h_px);

  detail::Color glass_wall{0.72f, 0.78f, 0.82f};
  glass_wall = detail::blend(glass_wall, detail::random_color(rng, 0.4, 0.95), 0.25f);
  detail::Color interior_tint{0.80f, 0.85f, 0.88f};
  static const detail::Color liquid_choices[3] = {
      {0.22f, 0.45f, 0.80f}, {0.90f, 0.56f, 0.12f}, {0.48f, 0.28f, 0.10f}};
  detail::Color liquid_color = liquid_choices[rng.uniform_int(0, 2)];
  liquid_color = detail::blend(liquid_color, detail::random_color(rng, 0.0, 1.0), 0.12f);
  detail::Color body_color =
      spec.id == "red_cup"
          ? detail::Color{static_cast<float>(rng.uniform(0.6, 0.9)),
                          static_cast<float>(rng.uniform(0.05, 0.2)),
                          static_cast<float>(rng.uniform(0.05, 0.2))}
          : detail::random_color(rng, 0.1, 0.7);

  const int y_top = std::max(0, static_cast<int>(std::ceil(base_y - h_px)));
  const int y_bot = std::min(kImageH - 1, static_cast<int>(std::floor(base_y)));

  // Row geometry, bottom to top.
  struct Row {
    int y;
    double r_px, in_px;
    int interior_pixels;
  };
  std::vector<Row> rows;
  double r_max = 0.0;
  for (int y = y_bot; y >= y_top; --y) {
    double t = (base_y - y) / h_px;
    if (t > 1.0) break;
    double r = detail::radius_at(spec.profile, t) * h_px;
    double in = (!opaque && t >= spec.bowl_start) ? std::max(0.0, r - wall_px) : 0.0;
    int in_count = 0;
    for (int x = 0; x < kImageW; ++x)
      if (std::abs(x + 0.5 - cx) <= in) ++in_count;
    rows.push_back({y, r, in, in_count});
    r_max = std::max(r_max, r);
  }
  if (!opaque) {
    int total_interior = 0;
    for (const auto& r : rows) total_interior += r.interior_pixels;
    if (total_interior == 0)
      throw DataError("container '" + spec.id + "' renders with zero interior");
  }

  // Liquid surface: the row count whose cumulative interior area best matches
  // the nominal fill fraction.
  int liquid_rows = 0;
  if (!opaque && fill != FillClass::Unknown) {
    double f = fill_fraction(fill);
    int total = 0;
    for (const auto& r : rows) total += r.interior_pixels;
    int best_k = 0, cum = 0;
    double best_err = std::abs(0.0 - f);
    for (size_t k = 1; k <= rows.size(); ++k) {
      cum += rows[k - 1].interior_pixels;
      double err = std::abs(static_cast<double>(cum) / total - f);
      if (err < best_err) {
        best_err = err;
        best_k = static_cast<int>(k);
      }
    }
    liquid_rows = best_k;
  }

  if (masks) {
    masks->interior.assign(static_cast<size_t>(kImageH) * kImageW, 0);
    masks->liquid.assign(static_cast<size_t>(kImageH) * kImageW, 0);
    masks->interior_count = 0;
    masks->liquid_count = 0;
  }

  const float wall_alpha = 0.62f;
  const float interior_alpha = transparency == Transparency::Translucent ? 0.52f : 0.14f;
  const float liquid_alpha = transparency == Transparency::Translucent ? 0.60f : 0.78f;

  for (size_t ri = 0; ri < rows.size(); ++ri) {
    const Row& row = rows[ri];
    bool is_liquid_row = static_cast<int>(ri) < liquid_rows;
    bool is_surface_row = liquid_rows > 0 && static_cast<int>(ri) == liquid_rows - 1;
    for (int x = 0; x < kImageW; ++x) {
      double d = std::abs(x + 0.5 - cx);
      if (d > row.r_px) continue;
      detail::Color bg = detail::get(s.pixels, row.y, x);
      if (opaque) {
        float shade = 1.0f - 0.25f * static_cast<float>(d / (row.r_px + 0.5));
        detail::Color c{body_color.r * shade, body_color.g * shade, body_color.b * shade};
        detail::put(s.pixels, row.y, x, c);
        continue;
      }
      if (d <= row.in_px) {
        detail::Color c;
        if (is_liquid_row) {
          c = detail::blend(bg, liquid_color, liquid_alpha);
          if (is_surface_row) c = {c.r * 0.78f, c.g * 0.78f, c.b * 0.78f};
        } else {
          c = detail::blend(bg, interior_tint, interior_alpha);
        }
        detail::put(s.pixels, row.y, x, c);
        if (masks) {
          masks->interior[static_cast<size_t>(row.y) * kImageW + x] = 1;
          ++masks->interior_count;
          if (is_liquid_row) {
            masks->liquid[static_cast<size_t>(row.y) * kImageW + x] = 1;
            ++masks->liquid_count;
          }
        }
      } else {
        detail::put(s.pixels, row.y, x, detail::blend(bg, glass_wall, wall_alpha));
      }
    }
  }

  if (occluded) {
    double q = rng.uniform(0.2, 0.4);  // fraction of the container height covered
    double bh = q * h_px;
    double by = rng.uniform(static_cast<double>(y_top) + 2.0, base_y - bh - 1.0);
    detail::Color hand{static_cast<float>(rng.uniform(0.65, 0.9)),
                       static_cast<float>(rng.uniform(0.45, 0.65)),
                       static_cast<float>(rng.uniform(0.32, 0.5))};
    int x0 = std::max(0, static_cast<int>(cx - r_max - 4));
    int x1 = std::min(kImageW - 1, static_cast<int>(cx + r_max + 4));
    for (int y = std::max(0, static_cast<int>(by));
         y <= std::min(kImageH - 1, static_cast<int>(by + bh)); ++y)
      for (int x = x0; x <= x1; ++x) {
        float shade = 1.0f - 0.1f * static_cast<float>((y + x) % 3);
        detail::put(s.pixels, y, x, {hand.r * shade, hand.g * shade, hand.b * shade});
      }
  }

  // Sensor-ish noise keeps samples distinct across seeds.
  for (auto& v : s.pixels)
    v = std::clamp(v + static_cast<float>(rng.normal(0.0, 0.012)), 0.0f, 1.0f);
  return s;
}

// Shape-held-out split: families listed here appear only in target-test.
struct SplitConfig {
  std::string split_id;
  std::set<std::string> held_out_families;
  int samples_per_container = 400;
  int test_samples_per_container = 100;
};

// Analogs of the paper-style container splits: s1 holds out the flute plus a
// cup and a stemmed glass, s2 swaps the beer cup for the wine glass, s3 keeps
// every stemmed glass in training and tests on stemless cups only.
inline SplitConfig builtin_split(const std::string& id) {
  SplitConfig c;
  c.split_id = id;
  if (id == "s1")
    c.held_out_families = {"flute", "beer_cup", "cocktail"};
  else if (id == "s2")
    c.held_out_families = {"flute", "wine", "cocktail"};
  else if (id == "s3")
    c.held_out_families = {"red_cup", "tumbler", "beer_cup"};
  else
    throw ConfigError("unknown split '" + id + "' (expected s1, s2 or s3)");
  return c;
}

// Uneven fill-class weights for transparent/translucent containers; opaque
// containers always contribute the unknown class.
inline FillClass draw_fill_class(Rng& rng) {
  double u = rng.uniform();
  if (u < 40.0 / 90.0) return FillClass::Empty0;
  if (u < 65.0 / 90.0) return FillClass::Half50;
  return FillClass::Full90;
}

inline std::pair<Dataset, Dataset> generate_target_dataset(const SplitConfig& split,
                                                           uint64_t seed) {
  const auto& catalog = container_catalog();
  std::set<std::string> families;
  for (const auto& c : catalog) families.insert(c.family);
  for (const auto& f : split.held_out_families)
    if (!families.count(f))
      throw ConfigError("held-out family '" + f + "' is not in the container catalog");
  int held = static_cast<int>(split.held_out_families.size());
  if (held < 2 || static_cast<int>(families.size()) - held < 2)
    throw ConfigError("split needs at least 2 shape families on each side");
  if (split.samples_per_container < 1 || split.test_samples_per_container < 1)
    throw ConfigError("samples_per_container must be >= 1");

  Dataset train, test;
  train.role = "target-train";
  test.role = "target-test";
  train.split_id = test.split_id = split.split_id;
  train.num_classes = test.num_classes = kTargetClasses;

  for (size_t ci = 0; ci < catalog.size(); ++ci) {
    const ContainerSpec& spec = catalog[ci];
    bool held_out = split.held_out_families.count(spec.family) > 0;
    Dataset& dst = held_out ? test : train;
    int count = held_out ? split.test_samples_per_container : split.samples_per_container;
    for (int si = 0; si < count; ++si) {
      Rng meta_rng(mix_seed(seed, stream_tag("meta"), ci, static_cast<uint64_t>(si)));
      FillClass fill = spec.transparency == Transparency::Opaque ? FillClass::Unknown
                                                                 : draw_fill_class(meta_rng);
      bool occluded = meta_rng.bernoulli(0.4);
      int background_id = static_cast<int>(meta_rng.uniform_int(0, 7));
      uint64_t rseed = mix_seed(seed, stream_tag("render"), ci, static_cast<uint64_t>(si));
      dst.samples.push_back(
          render_container(spec, fill, spec.transparency, occluded, background_id, rseed));
    }
  }
  return {std::move(train), std::move(test)};
}

inline const std::vector<std::string>& source_shape_families() {
  static const std::vector<std::string> fams = {"circle", "ring",  "square",  "frame", "triangle",
                                                "star",   "cross", "diamond", "ellipse", "stripes"};
  return fams;
}

namespace detail {

inline bool in_source_shape(int shape, double u, double v, double s) {
  switch (shape) {
    case 0: return u * u + v * v <= s * s;                                      // circle
    case 1: {                                                                   // ring
      double d2 = u * u + v * v;
      return d2 <= s * s && d2 >= 0.55 * 0.55 * s * s;
    }
    case 2: return std::abs(u) <= s && std::abs(v) <= s;                        // square
    case 3:                                                                     // frame
      return std::abs(u) <= s && std::abs(v) <= s &&
             !(std::abs(u) <= 0.55 * s && std::abs(v) <= 0.55 * s);
    case 4: {                                                                   // triangle
      double h = s * 1.5;
      double vv = v + s * 0.5;
      if (vv < 0 || vv > h) return false;
      double half = s * (1.0 - vv / h);
      return std::abs(u) <= half;
    }
    case 5: {                                                                   // five-point star
      double ang = std::atan2(v, u);
      double sector = std::fmod(ang + 2 * 3.14159265358979323846, 2 * 3.14159265358979323846 / 5);
      double half_sector = 3.14159265358979323846 / 5;
      double frac = std::abs(sector - half_sector) / half_sector;  // 0 at valley, 1 at spike
      double r_allow = s * (0.45 + 0.55 * frac);
      return u * u + v * v <= r_allow * r_allow;
    }
    case 6:                                                                     // cross
      return (std::abs(u) <= s && std::abs(v) <= 0.34 * s) ||
             (std::abs(v) <= s && std::abs(u) <= 0.34 * s);
    case 7: return std::abs(u) + std::abs(v) <= s;                              // diamond
    case 8: {                                                                   // ellipse
      double a = s, b = 0.55 * s;
      return (u * u) / (a * a) + (v * v) / (b * b) <= 1.0;
    }
    case 9: {                                                                   // stripes
      if (std::abs(u) > s || std::abs(v) > s) return false;
      double band = std::fmod(std::abs(v / s) * 3.0, 1.0);
      return band <= 0.55;
    }
  }
  return false;
}

}  // namespace detail

// Generic geometric-figure classification set standing in for the big source
// domain. Labels are assigned round-robin so class counts stay uniform.
inline Dataset generate_source_dataset(int num_classes, int size, uint64_t seed,
                                       int target_train_size = 0) {
  if (num_classes < 2 || num_classes > static_cast<int>(source_shape_families().size()))
    throw ConfigError("source num_classes must be in [2," +
                      std::to_string(source_shape_families().size()) + "]");
  if (size < 1) throw ConfigError("source size must be >= 1");
  if (target_train_size > 0 && size < 10 * target_train_size)
    throw ConfigError("source size " + std::to_string(size) + " violates the 10:1 ratio vs " +
                      "target-train size " + std::to_string(target_train_size));

  Dataset ds;
  ds.role = "source";
  ds.num_classes = num_classes;
  ds.samples.reserve(static_cast<size_t>(size));
  for (int i = 0; i < size; ++i) {
    int shape = i % num_classes;
    Rng rng(mix_seed(seed, stream_tag("source"), static_cast<uint64_t>(i)));
    ImageSample s;
    s.pixels.assign(kImagePixels, 0.0f);
    s.label = shape;
    s.meta.container_id = source_shape_families()[shape];
    s.meta.shape_family = source_shape_families()[shape];
    s.meta.transparency = Transparency::Transparent;
    s.meta.occluded = false;
    s.meta.background_id = static_cast<int>(rng.uniform_int(0, 7));

    detail::draw_background(s.pixels, s.meta.background_id, rng);
    double cx = 31.5 + rng.uniform(-8.0, 8.0);
    double cy = 31.5 + rng.uniform(-8.0, 8.0);
    double sz = rng.uniform(10.0, 22.0);
    double theta = rng.uniform(0.0, 2 * 3.14159265358979323846);
    double ct = std::cos(theta), st = std::sin(theta);
    detail::Color fg = detail::random_color(rng, 0.0, 1.0);
    for (int y = 0; y < kImageH; ++y)
      for (int x = 0; x < kImageW; ++x) {
        double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
        double u = ct * dx + st * dy, v = -st * dx + ct * dy;
        if (detail::in_source_shape(shape, u, v, sz)) detail::put(s.pixels, y, x, fg);
      }
    for (auto& v : s.pixels)
      v = std::clamp(v + static_cast<float>(rng.normal(0.0, 0.012)), 0.0f, 1.0f);
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

}  // namespace advxfer
