#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "spatialprobe/error.hpp"

namespace spatialprobe {

enum class Dimension { size, height };
enum class ScaleGold { a_greater, b_greater };
enum class Relation { above, below, inside, beside };
enum class YesNo { yes, no };

// Canonical orders. Index order is the tie-breaking order everywhere.
inline constexpr std::array<Relation, 4> kRelations = {Relation::above, Relation::below,
                                                       Relation::inside, Relation::beside};

inline std::string to_string(Dimension d) { return d == Dimension::size ? "size" : "height"; }
inline std::string to_string(ScaleGold g) {
  return g == ScaleGold::a_greater ? "a_greater" : "b_greater";
}
inline std::string to_string(YesNo y) { return y == YesNo::yes ? "yes" : "no"; }
inline std::string to_string(Relation r) {
  switch (r) {
    case Relation::above: return "above";
    case Relation::below: return "below";
    case Relation::inside: return "inside";
    case Relation::beside: return "beside";
  }
  return "?";
}

inline Dimension parse_dimension(std::string_view s) {
  if (s == "size") return Dimension::size;
  if (s == "height") return Dimension::height;
  throw ValidationError("unknown dimension '" + std::string(s) + "'");
}
inline ScaleGold parse_scale_gold(std::string_view s) {
  if (s == "a_greater") return ScaleGold::a_greater;
  if (s == "b_greater") return ScaleGold::b_greater;
  throw ValidationError("unknown scale gold '" + std::string(s) + "'");
}
inline YesNo parse_yes_no(std::string_view s) {
  if (s == "yes") return YesNo::yes;
  if (s == "no") return YesNo::no;
  throw ValidationError("unknown yes/no answer '" + std::string(s) + "'");
}
inline std::optional<Relation> try_parse_relation(std::string_view s) {
  for (auto r : kRelations)
    if (to_string(r) == s) return r;
  return std::nullopt;
}
inline Relation parse_relation(std::string_view s) {
  if (auto r = try_parse_relation(s)) return *r;
  throw ValidationError("unknown relation '" + std::string(s) + "'");
}

/// Canonical class labels of each task's answer universe. The class at index 0
/// of a scale task means "a is greater than b".
inline std::vector<std::string> scale_classes(Dimension d) {
  if (d == Dimension::size) return {"larger", "smaller"};
  return {"taller", "shorter"};
}
inline std::vector<std::string> relation_classes() {
  return {"above", "below", "inside", "beside"};
}
inline std::vector<std::string> yes_no_classes() { return {"yes", "no"}; }

inline std::string gold_label(ScaleGold g, Dimension d) {
  return scale_classes(d)[g == ScaleGold::a_greater ? 0 : 1];
}

enum class Provenance { model, human, imputed };

inline std::string to_string(Provenance p) {
  switch (p) {
    case Provenance::model: return "model";
    case Provenance::human: return "human";
    case Provenance::imputed: return "imputed";
  }
  return "?";
}
inline Provenance parse_provenance(std::string_view s) {
  if (s == "model") return Provenance::model;
  if (s == "human") return Provenance::human;
  if (s == "imputed") return Provenance::imputed;
  throw ValidationError("unknown provenance '" + std::string(s) + "'");
}

/// One model (or human) answer for one instance. `label` is in the task's
/// canonical class space; `answer` keeps the raw string the model chose.
struct Prediction {
  std::string instance_id;
  std::string label;
  std::string answer;
  Provenance provenance = Provenance::model;
  bool recognized = false;
  bool tie = false;
};

}  // namespace spatialprobe
