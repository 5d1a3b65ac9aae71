#pragma once

// Synthetic detection + depth fixtures with known ground truth. Used by the
// stub adapter and by tests; never by the evaluation path itself.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <string>

#include "spatialprobe/geometry.hpp"
#include "spatialprobe/types.hpp"

namespace spatialprobe::synthetic {

struct Scene {
  DetectionRecord record;
  DepthMap depth;
};

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

/// Paints `value` over the pixels mean_depth() would read for `box`.
inline void paint(DepthMap& depth, const BoundingBox& box, float value) {
  auto lo = [](double v, std::size_t limit) {
    return static_cast<std::size_t>(std::clamp(std::ceil(v), 0.0, static_cast<double>(limit)));
  };
  for (auto y = lo(box.y_min, depth.height()); y < lo(box.y_max, depth.height()); ++y)
    for (auto x = lo(box.x_min, depth.width()); x < lo(box.x_max, depth.width()); ++x) depth.at(x, y) = value;
}

/// Two objects side by side at different depths. Their true extents differ by at
/// least 25% in the requested dimension; image extents shrink with depth so only
/// the depth-compensated score recovers the truth. A lower-confidence decoy box of
/// each label sits in the bottom band with the opposite size ordering.
inline Scene make_scale_scene(const std::string& label_a, const std::string& label_b, ScaleGold truth,
                              Dimension dimension, std::mt19937_64& rng, std::size_t side = 512) {
  double small_w = uniform(rng, 1.0, 3.0), small_h = uniform(rng, 1.0, 3.0);
  double factor = uniform(rng, 1.25, 3.0);
  double big_w = dimension == Dimension::size ? small_w * std::sqrt(factor) : small_w * uniform(rng, 0.5, 1.0);
  double big_h = small_h * (dimension == Dimension::size ? std::sqrt(factor) : factor);
  bool a_big = truth == ScaleGold::a_greater;
  double wa = a_big ? big_w : small_w, ha = a_big ? big_h : small_h;
  double wb = a_big ? small_w : big_w, hb = a_big ? small_h : big_h;
  double da = uniform(rng, 1.0, 4.0), db = uniform(rng, 1.0, 4.0);

  // Image extents are true extents / depth, scaled to fit the top band.
  double ia_w = wa / da, ia_h = ha / da, ib_w = wb / db, ib_h = hb / db;
  double band = static_cast<double>(side) * 0.55;
  double k = std::min({(static_cast<double>(side) - 30.0) / (ia_w + ib_w), band / std::max(ia_h, ib_h)});
  k *= uniform(rng, 0.5, 1.0);

  Scene s{{"synthetic", side, side, {}}, DepthMap(side, side, 20.0f)};
  double top = 10.0;
  BoundingBox a{10.0, top, 10.0 + k * ia_w, top + k * ia_h, label_a, uniform(rng, 0.6, 0.99)};
  double bx = a.x_max + 10.0;
  BoundingBox b{bx, top, bx + k * ib_w, top + k * ib_h, label_b, uniform(rng, 0.6, 0.99)};
  paint(s.depth, a, static_cast<float>(da));
  paint(s.depth, b, static_cast<float>(db));

  double bottom = static_cast<double>(side) * 0.7;
  BoundingBox decoy_a{10.0, bottom, 20.0, bottom + (a_big ? 5.0 : 60.0), label_a, a.confidence * 0.5};
  BoundingBox decoy_b{40.0, bottom, 50.0, bottom + (a_big ? 60.0 : 5.0), label_b, b.confidence * 0.5};
  s.record.boxes = {decoy_a, a, decoy_b, b};
  return s;
}

/// Person and object boxes arranged so the relation holds with margin: inside is
/// full containment; other relations use non-overlapping boxes whose centroid
/// direction lies at least 10 degrees inside the relation's angle window.
inline Scene make_relation_scene(const std::string& person_label, const std::string& object_label, Relation truth,
                                 std::mt19937_64& rng, std::size_t side = 512) {
  Scene s{{"synthetic", side, side, {}}, DepthMap(side, side, 5.0f)};
  double c = static_cast<double>(side) / 2.0;
  double ow = uniform(rng, 40.0, 120.0), oh = uniform(rng, 40.0, 120.0);
  BoundingBox obj{c - ow / 2, c - oh / 2, c + ow / 2, c + oh / 2, object_label, uniform(rng, 0.5, 0.99)};
  double pw = uniform(rng, 10.0, 35.0), ph = uniform(rng, 10.0, 35.0);
  BoundingBox person{0, 0, pw, ph, person_label, uniform(rng, 0.5, 0.99)};
  double px, py;
  if (truth == Relation::inside) {
    px = uniform(rng, obj.x_min + pw / 2 + 1, obj.x_max - pw / 2 - 1);
    py = uniform(rng, obj.y_min + ph / 2 + 1, obj.y_max - ph / 2 - 1);
  } else {
    double deg;
    switch (truth) {
      case Relation::above: deg = uniform(rng, 235.0, 305.0); break;
      case Relation::below: deg = uniform(rng, 55.0, 125.0); break;
      default: deg = uniform(rng, 0.0, 1.0) < 0.5 ? uniform(rng, -35.0, 35.0) : uniform(rng, 145.0, 215.0);
    }
    double rad = deg * std::numbers::pi / 180.0;
    // Far enough that the boxes cannot overlap.
    double dist = std::hypot(ow, oh) / 2 + std::hypot(pw, ph) / 2 + uniform(rng, 2.0, 40.0);
    px = c + dist * std::cos(rad);
    py = c + dist * std::sin(rad);
  }
  person.x_min = px - pw / 2;
  person.x_max = px + pw / 2;
  person.y_min = py - ph / 2;
  person.y_max = py + ph / 2;
  s.record.boxes = {obj, person};
  return s;
}

}  // namespace spatialprobe::synthetic
