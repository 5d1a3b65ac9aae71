#pragma once

// Geometric evaluation of generated images: top-confidence box selection,
// depth-compensated scale scores and the visual-dependency relation rules.
//
// Coordinates are pixels with the origin at the top-left and y growing
// downward. Depth values grow with distance from the camera.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <map>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "spatialprobe/error.hpp"
#include "spatialprobe/text.hpp"
#include "spatialprobe/types.hpp"

namespace spatialprobe {

struct BoundingBox {
  double x_min = 0, y_min = 0, x_max = 0, y_max = 0;
  std::string label;
  double confidence = 0.0;

  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }
  double area() const { return width() * height(); }
  double cx() const { return 0.5 * (x_min + x_max); }
  double cy() const { return 0.5 * (y_min + y_max); }
  bool valid() const { return x_min < x_max && y_min < y_max; }

  BoundingBox clipped(double w, double h) const {
    BoundingBox b = *this;
    b.x_min = std::clamp(x_min, 0.0, w);
    b.x_max = std::clamp(x_max, 0.0, w);
    b.y_min = std::clamp(y_min, 0.0, h);
    b.y_max = std::clamp(y_max, 0.0, h);
    return b;
  }
};

inline double intersection_area(const BoundingBox& a, const BoundingBox& b) {
  double w = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
  double h = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
  return w > 0 && h > 0 ? w * h : 0.0;
}

class DepthMap {
 public:
  DepthMap() = default;
  DepthMap(std::size_t width, std::size_t height, std::vector<float> values)
      : width_(width), height_(height), values_(std::move(values)) {
    if (values_.size() != width_ * height_)
      throw ValidationError("depth map has " + std::to_string(values_.size()) + " values, expected " +
                            std::to_string(width_ * height_));
    for (float v : values_)
      if (!std::isfinite(v) || v < 0.0f) throw ValidationError("depth map values must be finite and >= 0");
  }
  DepthMap(std::size_t width, std::size_t height, float fill)
      : DepthMap(width, height, std::vector<float>(width * height, fill)) {}

  std::size_t width() const { return width_; }
  std::size_t height() const { return height_; }
  float at(std::size_t x, std::size_t y) const { return values_[y * width_ + x]; }
  float& at(std::size_t x, std::size_t y) { return values_[y * width_ + x]; }
  std::span<const float> values() const { return values_; }

 private:
  std::size_t width_ = 0, height_ = 0;
  std::vector<float> values_;
};

// Raw little-endian float32 row-major values plus a JSON sidecar {width, height}.

inline DepthMap load_depth_map(const std::filesystem::path& raw_path, const std::filesystem::path& sidecar_path) {
  nlohmann::json side;
  try {
    side = nlohmann::json::parse(text::read_file(sidecar_path));
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed depth sidecar '" + sidecar_path.string() + "': " + e.what());
  }
  if (!side.contains("width") || !side.contains("height") || !side["width"].is_number_unsigned() ||
      !side["height"].is_number_unsigned())
    throw IoError("depth sidecar '" + sidecar_path.string() + "' needs unsigned width and height");
  auto w = side["width"].get<std::size_t>(), h = side["height"].get<std::size_t>();
  auto bytes = text::read_file(raw_path);
  if (bytes.size() != w * h * 4)
    throw IoError("depth file '" + raw_path.string() + "' has " + std::to_string(bytes.size()) +
                  " bytes, expected " + std::to_string(w * h * 4) + " for " + std::to_string(w) + "x" +
                  std::to_string(h));
  std::vector<float> values(w * h);
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::uint32_t u = 0;
    for (int b = 3; b >= 0; --b) u = (u << 8) | static_cast<unsigned char>(bytes[i * 4 + static_cast<std::size_t>(b)]);
    values[i] = std::bit_cast<float>(u);
  }
  try {
    return DepthMap(w, h, std::move(values));
  } catch (const ValidationError& e) {
    throw IoError("depth file '" + raw_path.string() + "': " + e.what());
  }
}

inline void save_depth_map(const DepthMap& map, const std::filesystem::path& raw_path,
                           const std::filesystem::path& sidecar_path) {
  std::string bytes;
  bytes.reserve(map.values().size() * 4);
  for (float v : map.values()) {
    auto u = std::bit_cast<std::uint32_t>(v);
    for (int b = 0; b < 4; ++b) bytes.push_back(static_cast<char>((u >> (8 * b)) & 0xFF));
  }
  text::write_file(raw_path, bytes);
  text::write_file(sidecar_path, nlohmann::json{{"width", map.width()}, {"height", map.height()}}.dump() + "\n");
}

/// Maps prompt nouns and detector class names to one canonical label:
/// lowercase, then the plural table, then the synonym table.
class LabelNormalizer {
 public:
  LabelNormalizer() = default;

  static LabelNormalizer from_rows(const std::vector<text::TsvRow>& rows, const std::string& source = "labels") {
    LabelNormalizer n;
    for (const auto& row : rows) {
      if (row.fields.size() != 3)
        throw ValidationError(source + ":" + std::to_string(row.line) + ": expected 3 fields (kind, from, to)");
      auto from = text::to_lower(row.fields[1]), to = text::to_lower(row.fields[2]);
      if (row.fields[0] == "synonym") n.synonyms_[from] = to;
      else if (row.fields[0] == "plural") n.plurals_[from] = to;
      else throw ValidationError(source + ":" + std::to_string(row.line) + ": unknown kind '" + row.fields[0] + "'");
    }
    return n;
  }
  static LabelNormalizer from_file(const std::filesystem::path& path) {
    return from_rows(text::read_tsv(path), path.string());
  }

  std::string operator()(std::string_view label) const {
    auto s = text::trim(text::to_lower(label));
    if (auto it = plurals_.find(s); it != plurals_.end()) s = it->second;
    if (auto it = synonyms_.find(s); it != synonyms_.end()) s = it->second;
    return s;
  }

 private:
  std::map<std::string, std::string> synonyms_, plurals_;
};

struct DetectionRecord {
  std::string image_id;
  std::size_t image_width = 0, image_height = 0;
  std::vector<BoundingBox> boxes;

  /// Normalizes box labels and clips boxes to the image; boxes that become empty are dropped.
  void normalize(const LabelNormalizer& norm) {
    std::vector<BoundingBox> kept;
    for (auto b : boxes) {
      b.label = norm(b.label);
      b = b.clipped(static_cast<double>(image_width), static_cast<double>(image_height));
      if (b.valid()) kept.push_back(std::move(b));
    }
    boxes = std::move(kept);
  }
};

inline nlohmann::json to_json(const BoundingBox& b) {
  return {{"x_min", b.x_min}, {"y_min", b.y_min}, {"x_max", b.x_max},
          {"y_max", b.y_max}, {"label", b.label}, {"confidence", b.confidence}};
}

inline nlohmann::json to_json(const DetectionRecord& r) {
  nlohmann::json boxes = nlohmann::json::array();
  for (const auto& b : r.boxes) boxes.push_back(to_json(b));
  return {{"image_id", r.image_id}, {"image_width", r.image_width}, {"image_height", r.image_height}, {"boxes", boxes}};
}

inline DetectionRecord detection_from_json(const nlohmann::json& j) {
  DetectionRecord r;
  r.image_id = j.at("image_id").get<std::string>();
  r.image_width = j.at("image_width").get<std::size_t>();
  r.image_height = j.at("image_height").get<std::size_t>();
  for (const auto& jb : j.at("boxes")) {
    BoundingBox b{jb.at("x_min").get<double>(), jb.at("y_min").get<double>(), jb.at("x_max").get<double>(),
                  jb.at("y_max").get<double>(), jb.at("label").get<std::string>(), jb.at("confidence").get<double>()};
    if (!b.valid()) throw ValidationError("degenerate box for label '" + b.label + "'");
    if (!(b.confidence >= 0.0 && b.confidence <= 1.0))
      throw ValidationError("confidence outside [0,1] for label '" + b.label + "'");
    r.boxes.push_back(std::move(b));
  }
  return r;
}

inline DetectionRecord load_detection_record(const std::filesystem::path& path) {
  try {
    return detection_from_json(nlohmann::json::parse(text::read_file(path)));
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed detection file '" + path.string() + "': " + e.what());
  } catch (const ValidationError& e) {
    throw IoError("malformed detection file '" + path.string() + "': " + e.what());
  }
}

// --- box selection and scale scores -------------------------------------------

/// Highest-confidence box whose (already normalized) label equals `label`.
/// Ties: larger area, then smaller y_min.
inline std::optional<BoundingBox> select_box(const DetectionRecord& record, const std::string& label) {
  const BoundingBox* best = nullptr;
  for (const auto& b : record.boxes) {
    if (b.label != label) continue;
    if (!best || b.confidence > best->confidence ||
        (b.confidence == best->confidence &&
         (b.area() > best->area() || (b.area() == best->area() && b.y_min < best->y_min))))
      best = &b;
  }
  if (!best) return std::nullopt;
  return *best;
}

/// Mean depth over integer pixels p with x_min <= p.x < x_max and y_min <= p.y < y_max,
/// after clipping to the map.
inline double mean_depth(const BoundingBox& box, const DepthMap& depth) {
  auto lo = [](double v, std::size_t limit) {
    return static_cast<std::size_t>(std::clamp(std::ceil(v), 0.0, static_cast<double>(limit)));
  };
  std::size_t x0 = lo(box.x_min, depth.width()), x1 = lo(box.x_max, depth.width());
  std::size_t y0 = lo(box.y_min, depth.height()), y1 = lo(box.y_max, depth.height());
  if (x0 >= x1 || y0 >= y1) throw GeometryError("box covers no depth pixel after clipping");
  double sum = 0.0;
  for (std::size_t y = y0; y < y1; ++y)
    for (std::size_t x = x0; x < x1; ++x) sum += depth.at(x, y);
  return sum / static_cast<double>((x1 - x0) * (y1 - y0));
}

/// area x depth^2: image area shrinks with the square of distance.
inline double size_score(const BoundingBox& box, double depth) {
  if (!(depth > 0.0)) throw GeometryError("nonpositive mean depth " + std::to_string(depth));
  return box.area() * depth * depth;
}

/// pixel height x depth.
inline double height_score(const BoundingBox& box, double depth) {
  if (!(depth > 0.0)) throw GeometryError("nonpositive mean depth " + std::to_string(depth));
  return box.height() * depth;
}

enum class ScaleResult { a_greater, b_greater, indeterminate };

inline std::string to_string(ScaleResult r) {
  switch (r) {
    case ScaleResult::a_greater: return "a_greater";
    case ScaleResult::b_greater: return "b_greater";
    case ScaleResult::indeterminate: return "indeterminate";
  }
  return "?";
}

struct ScaleJudgment {
  ScaleResult result = ScaleResult::indeterminate;
  double score_a = 0.0, score_b = 0.0;
  bool recognized = false;  // both objects detected
};

/// Labels are normalized by the caller. A miss on either object gives an
/// unrecognized indeterminate judgment; equal scores are indeterminate as well.
inline ScaleJudgment compare_scale(const DetectionRecord& record, const DepthMap& depth, const std::string& label_a,
                                   const std::string& label_b, Dimension dimension) {
  ScaleJudgment j;
  auto a = select_box(record, label_a);
  auto b = select_box(record, label_b);
  if (!a || !b) return j;
  j.recognized = true;
  auto score = dimension == Dimension::size ? size_score : height_score;
  j.score_a = score(*a, mean_depth(*a, depth));
  j.score_b = score(*b, mean_depth(*b, depth));
  if (j.score_a > j.score_b) j.result = ScaleResult::a_greater;
  else if (j.score_b > j.score_a) j.result = ScaleResult::b_greater;
  return j;
}

// --- relations ---------------------------------------------------------------

/// Screen-space direction from Y's centroid to X's centroid in degrees, [0, 360).
/// Straight up on screen is 270. Axis-aligned and exact-diagonal offsets return
/// exact multiples of 45 so window boundaries are decided without rounding noise.
inline double centroid_angle(const BoundingBox& x, const BoundingBox& y) {
  double dx = x.cx() - y.cx();
  double dy = x.cy() - y.cy();
  if (dx == 0.0 && dy == 0.0) throw GeometryError("coincident centroids");
  if (dy == 0.0) return dx > 0 ? 0.0 : 180.0;
  if (dx == 0.0) return dy > 0 ? 90.0 : 270.0;
  if (std::abs(dx) == std::abs(dy)) {
    if (dx > 0) return dy > 0 ? 45.0 : 315.0;
    return dy > 0 ? 135.0 : 225.0;
  }
  double deg = std::atan2(dy, dx) * 180.0 / std::numbers::pi;
  if (deg < 0.0) deg += 360.0;
  if (deg >= 360.0) deg -= 360.0;
  return deg;
}

/// Angle windows: above (225, 315), below (45, 135), beside everything else,
/// boundaries included.
inline Relation classify_angle(double degrees) {
  if (degrees > 225.0 && degrees < 315.0) return Relation::above;
  if (degrees > 45.0 && degrees < 135.0) return Relation::below;
  return Relation::beside;
}

inline constexpr double kDefaultCoverage = 1.0;

/// inside when the share of the person's box covered by the object's box reaches
/// `coverage` (1.0 means the whole box); otherwise decided by the centroid angle.
/// Coincident centroids without enough coverage also count as inside.
inline Relation classify_relation(const BoundingBox& person, const BoundingBox& object,
                                  double coverage = kDefaultCoverage) {
  if (!person.valid() || !object.valid()) throw GeometryError("degenerate box");
  if (!(coverage > 0.0 && coverage <= 1.0)) throw GeometryError("coverage threshold must be in (0, 1]");
  if (intersection_area(person, object) / person.area() >= coverage) return Relation::inside;
  if (person.cx() == object.cx() && person.cy() == object.cy()) return Relation::inside;
  return classify_angle(centroid_angle(person, object));
}

}  // namespace spatialprobe
