#pragma once

// Accuracy / macro-F1 with random-guess imputation, symmetric and transitive
// consistency, per-object ratio tables and human-annotation aggregation.

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "spatialprobe/error.hpp"
#include "spatialprobe/types.hpp"

namespace spatialprobe {

/// Square confusion matrix over an ordered class list; rows are gold, columns
/// predicted. Cells hold fractional mass so imputed guesses can be spread.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::vector<std::string> classes)
      : classes_(std::move(classes)), cells_(classes_.size() * classes_.size(), 0.0),
        missing_(classes_.size(), 0.0) {}

  std::size_t index_of(const std::string& label) const {
    auto it = std::find(classes_.begin(), classes_.end(), label);
    if (it == classes_.end()) throw ValidationError("label '" + label + "' is not in the class list");
    return static_cast<std::size_t>(it - classes_.begin());
  }

  void add(std::size_t gold, std::size_t pred, double mass = 1.0) { cells_[gold * k() + pred] += mass; }
  void add(const std::string& gold, const std::string& pred, double mass = 1.0) {
    add(index_of(gold), index_of(pred), mass);
  }
  /// Gold mass with no prediction at all (counts as a miss for its class).
  void add_missing(const std::string& gold, double mass = 1.0) { missing_[index_of(gold)] += mass; }

  double cell(std::size_t gold, std::size_t pred) const { return cells_[gold * k() + pred]; }
  std::size_t k() const { return classes_.size(); }
  const std::vector<std::string>& classes() const { return classes_; }

  double total() const {
    double t = 0.0;
    for (double c : cells_) t += c;
    for (double m : missing_) t += m;
    return t;
  }

  double accuracy() const {
    double t = total();
    if (t == 0.0) return 0.0;
    double diag = 0.0;
    for (std::size_t c = 0; c < k(); ++c) diag += cell(c, c);
    return diag / t;
  }

  /// Per-class F1; a zero denominator yields 0.
  double f1(std::size_t c) const {
    double tp = cell(c, c), fp = 0.0, fn = missing_[c];
    for (std::size_t o = 0; o < k(); ++o) {
      if (o == c) continue;
      fp += cell(o, c);
      fn += cell(c, o);
    }
    double denom = 2.0 * tp + fp + fn;
    return denom == 0.0 ? 0.0 : 2.0 * tp / denom;
  }

  /// Unweighted mean over the full declared class list.
  double macro_f1() const {
    if (k() == 0) return 0.0;
    double s = 0.0;
    for (std::size_t c = 0; c < k(); ++c) s += f1(c);
    return s / static_cast<double>(k());
  }

 private:
  std::vector<std::string> classes_;
  std::vector<double> cells_;
  std::vector<double> missing_;
};

struct EvalReport {
  std::size_t n = 0;
  std::size_t recognized = 0;
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  double positive_f1 = 0.0;  // F1 of class 0; reported for two-class tasks
  double recognized_ratio = 0.0;
  double subset_accuracy = 0.0;
  double subset_macro_f1 = 0.0;
  bool imputed = false;
};

namespace detail {

inline void check_aligned(std::span<const Prediction> preds, std::span<const std::string> golds) {
  if (preds.size() != golds.size())
    throw ValidationError("prediction/gold count mismatch: " + std::to_string(preds.size()) + " vs " +
                          std::to_string(golds.size()));
}

inline ConfusionMatrix recognized_matrix(std::span<const Prediction> preds, std::span<const std::string> golds,
                                         const std::vector<std::string>& classes) {
  ConfusionMatrix m(classes);
  for (std::size_t i = 0; i < preds.size(); ++i)
    if (preds[i].recognized) m.add(golds[i], preds[i].label);
  return m;
}

inline void fill_subset(EvalReport& r, std::span<const Prediction> preds, std::span<const std::string> golds,
                        const std::vector<std::string>& classes) {
  auto sub = recognized_matrix(preds, golds, classes);
  r.n = preds.size();
  r.recognized = 0;
  for (const auto& p : preds) r.recognized += p.recognized ? 1 : 0;
  r.recognized_ratio = r.n ? static_cast<double>(r.recognized) / static_cast<double>(r.n) : 0.0;
  r.subset_accuracy = sub.accuracy();
  r.subset_macro_f1 = sub.macro_f1();
}

}  // namespace detail

/// Fraction of aligned predictions whose label equals the gold; unrecognized count as wrong.
inline double plain_accuracy(std::span<const Prediction> preds, std::span<const std::string> golds) {
  detail::check_aligned(preds, golds);
  if (preds.empty()) return 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) correct += preds[i].recognized && preds[i].label == golds[i];
  return static_cast<double>(correct) / static_cast<double>(preds.size());
}

/// accuracy = correct / N with unrecognized predictions counted wrong (and as misses
/// for F1); subset metrics use recognized predictions only.
inline EvalReport score_predictions(std::span<const Prediction> preds, std::span<const std::string> golds,
                                    const std::vector<std::string>& classes) {
  detail::check_aligned(preds, golds);
  ConfusionMatrix m(classes);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (preds[i].recognized) m.add(golds[i], preds[i].label);
    else m.add_missing(golds[i]);
  }
  EvalReport r;
  detail::fill_subset(r, preds, golds, classes);
  r.accuracy = m.accuracy();
  r.macro_f1 = m.macro_f1();
  r.positive_f1 = classes.empty() ? 0.0 : m.f1(0);
  return r;
}

/// Aligns predictions to golds by instance id first.
inline EvalReport score_predictions(std::span<const Prediction> preds,
                                    const std::map<std::string, std::string>& golds_by_id,
                                    const std::vector<std::string>& classes) {
  if (preds.size() != golds_by_id.size())
    throw ValidationError("prediction/gold id sets differ in size");
  std::vector<std::string> golds;
  golds.reserve(preds.size());
  for (const auto& p : preds) {
    auto it = golds_by_id.find(p.instance_id);
    if (it == golds_by_id.end()) throw ValidationError("no gold for instance '" + p.instance_id + "'");
    golds.push_back(it->second);
  }
  return score_predictions(preds, golds, classes);
}

/// Expected-value random-guess imputation: every unrecognized instance adds 1/k
/// mass to each (gold, answer) cell.
inline EvalReport impute_unrecognized(std::span<const Prediction> preds, std::span<const std::string> golds,
                                      const std::vector<std::string>& classes) {
  detail::check_aligned(preds, golds);
  if (classes.size() < 2) throw ValidationError("imputation needs an answer universe of size >= 2");
  ConfusionMatrix m(classes);
  double share = 1.0 / static_cast<double>(classes.size());
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (preds[i].recognized) {
      m.add(golds[i], preds[i].label);
    } else {
      auto g = m.index_of(golds[i]);
      for (std::size_t c = 0; c < classes.size(); ++c) m.add(g, c, share);
    }
  }
  EvalReport r;
  detail::fill_subset(r, preds, golds, classes);
  r.accuracy = m.accuracy();
  r.macro_f1 = m.macro_f1();
  r.positive_f1 = m.f1(0);
  r.imputed = true;
  return r;
}

/// Literal random guessing for unrecognized instances, for fidelity experiments.
/// Guesses come from mt19937_64 reduced modulo k, so results are reproducible
/// across standard libraries.
inline EvalReport impute_sampled(std::span<const Prediction> preds, std::span<const std::string> golds,
                                 const std::vector<std::string>& classes, std::uint64_t seed) {
  detail::check_aligned(preds, golds);
  if (classes.size() < 2) throw ValidationError("imputation needs an answer universe of size >= 2");
  std::mt19937_64 rng(seed);
  ConfusionMatrix m(classes);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (preds[i].recognized) m.add(golds[i], preds[i].label);
    else m.add(m.index_of(golds[i]), static_cast<std::size_t>(rng() % classes.size()));
  }
  EvalReport r;
  detail::fill_subset(r, preds, golds, classes);
  r.accuracy = m.accuracy();
  r.macro_f1 = m.macro_f1();
  r.positive_f1 = m.f1(0);
  r.imputed = true;
  return r;
}

inline nlohmann::json to_json(const EvalReport& r) {
  return {{"n", r.n},
          {"recognized", r.recognized},
          {"accuracy", r.accuracy},
          {"macro_f1", r.macro_f1},
          {"positive_f1", r.positive_f1},
          {"recognized_ratio", r.recognized_ratio},
          {"subset_accuracy", r.subset_accuracy},
          {"subset_macro_f1", r.subset_macro_f1},
          {"imputed", r.imputed}};
}

// --- consistency ----------------------------------------------------------------

enum class Comparison { greater, smaller };

inline Comparison opposite(Comparison c) {
  return c == Comparison::greater ? Comparison::smaller : Comparison::greater;
}

/// Predicted comparison for each ordered pair (a, b); nullopt means unrecognized.
using PairTable = std::map<std::pair<std::string, std::string>, std::optional<Comparison>>;

struct ConsistencyReport {
  double symmetry_pct = 0.0;
  double transitivity_pct = 0.0;
  std::size_t pairs_evaluated = 0;
  std::size_t pairs_consistent = 0;
  std::size_t triples_evaluated = 0;
  std::size_t triples_consistent = 0;
  std::size_t pairs_missing_reverse = 0;
};

namespace detail {

inline std::optional<Comparison> lookup(const PairTable& t, const std::string& a, const std::string& b) {
  auto it = t.find({a, b});
  return it == t.end() ? std::nullopt : it->second;
}

inline std::vector<std::string> table_objects(const PairTable& t) {
  std::set<std::string> names;
  for (const auto& [key, _] : t) {
    names.insert(key.first);
    names.insert(key.second);
  }
  return {names.begin(), names.end()};
}

}  // namespace detail

/// Over unordered pairs whose two ordered predictions are both recognized, the
/// fraction with pred(a,b) = opposite(pred(b,a)).
inline ConsistencyReport symmetry_consistency(const PairTable& table) {
  ConsistencyReport r;
  for (const auto& [key, value] : table) {
    const auto& [a, b] = key;
    if (a == b || a > b) {
      if (a > b && !table.count({b, a})) ++r.pairs_missing_reverse;
      continue;
    }
    auto rev = table.find({b, a});
    if (rev == table.end()) {
      ++r.pairs_missing_reverse;
      continue;
    }
    if (!value || !rev->second) continue;
    ++r.pairs_evaluated;
    if (*value == opposite(*rev->second)) ++r.pairs_consistent;
  }
  r.symmetry_pct = r.pairs_evaluated ? static_cast<double>(r.pairs_consistent) / r.pairs_evaluated : 0.0;
  return r;
}

/// Ordered triples (a, b, c) of distinct objects with pred(a,b) = pred(b,c) = r and a
/// recognized pred(a,c); consistent iff pred(a,c) = r.
inline ConsistencyReport transitivity_consistency(const PairTable& table) {
  auto objects = detail::table_objects(table);
  auto n = objects.size();
  // Dense lookup: 0 = none/unrecognized, 1 = greater, 2 = smaller.
  std::vector<std::uint8_t> grid(n * n, 0);
  for (const auto& [key, value] : table) {
    if (!value) continue;
    auto ia = static_cast<std::size_t>(std::lower_bound(objects.begin(), objects.end(), key.first) - objects.begin());
    auto ib = static_cast<std::size_t>(std::lower_bound(objects.begin(), objects.end(), key.second) - objects.begin());
    grid[ia * n + ib] = *value == Comparison::greater ? 1 : 2;
  }
  ConsistencyReport r;
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = 0; b < n; ++b) {
      if (b == a) continue;
      auto ab = grid[a * n + b];
      if (!ab) continue;
      for (std::size_t c = 0; c < n; ++c) {
        if (c == a || c == b) continue;
        if (grid[b * n + c] != ab) continue;
        auto ac = grid[a * n + c];
        if (!ac) continue;
        ++r.triples_evaluated;
        if (ac == ab) ++r.triples_consistent;
      }
    }
  }
  r.transitivity_pct = r.triples_evaluated ? static_cast<double>(r.triples_consistent) / r.triples_evaluated : 0.0;
  return r;
}

inline ConsistencyReport consistency_report(const PairTable& table) {
  auto sym = symmetry_consistency(table);
  auto tr = transitivity_consistency(table);
  sym.transitivity_pct = tr.transitivity_pct;
  sym.triples_evaluated = tr.triples_evaluated;
  sym.triples_consistent = tr.triples_consistent;
  return sym;
}

inline nlohmann::json to_json(const ConsistencyReport& r) {
  return {{"symmetry_pct", r.symmetry_pct},
          {"transitivity_pct", r.transitivity_pct},
          {"pairs_evaluated", r.pairs_evaluated},
          {"pairs_consistent", r.pairs_consistent},
          {"pairs_missing_reverse", r.pairs_missing_reverse},
          {"triples_evaluated", r.triples_evaluated},
          {"triples_consistent", r.triples_consistent}};
}

struct ObjectRatio {
  std::string object;
  std::size_t comparable = 0;
  double forward_ratio = 0.0;  // #(c > a) / |A|, from prompts (c, a)
  double reverse_ratio = 0.0;  // #(a > c) / |A|, from prompts (a, c)
};

struct ObjectRatioTable {
  std::vector<ObjectRatio> rows;
  std::vector<std::string> notes;
};

/// Comparable set A of c: objects a with both pred(c,a) and pred(a,c) recognized.
/// Rows follow `objects` order.
inline ObjectRatioTable per_object_ratios(const PairTable& table, std::span<const std::string> objects) {
  ObjectRatioTable out;
  for (const auto& c : objects) {
    std::size_t comparable = 0, forward = 0, reverse = 0;
    for (const auto& a : objects) {
      if (a == c) continue;
      auto ca = detail::lookup(table, c, a);
      auto ac = detail::lookup(table, a, c);
      if (!ca || !ac) continue;
      ++comparable;
      forward += *ca == Comparison::greater;
      reverse += *ac == Comparison::greater;
    }
    if (comparable == 0) {
      out.notes.push_back("object '" + c + "' has no comparable objects; skipped");
      continue;
    }
    auto d = static_cast<double>(comparable);
    out.rows.push_back({c, comparable, forward / d, reverse / d});
  }
  return out;
}

inline nlohmann::json to_json(const ObjectRatioTable& t) {
  nlohmann::json j;
  j["rows"] = nlohmann::json::array();
  for (const auto& r : t.rows)
    j["rows"].push_back({{"object", r.object},
                         {"comparable", r.comparable},
                         {"forward_ratio", r.forward_ratio},
                         {"reverse_ratio", r.reverse_ratio}});
  j["notes"] = t.notes;
  return j;
}

// --- human evaluation -----------------------------------------------------------

/// (image id, annotator id) -> label; nullopt when the annotator could not recognize the objects.
struct HumanAnnotationSet {
  std::map<std::pair<std::string, std::string>, std::optional<std::string>> judgments;

  std::set<std::string> annotators() const {
    std::set<std::string> out;
    for (const auto& [key, _] : judgments) out.insert(key.second);
    return out;
  }
};

struct HumanEvalResult {
  EvalReport mean;
  std::map<std::string, EvalReport> per_annotator;
  double agreement = 0.0;
  std::size_t doubly_annotated = 0;
  double recognized_any_ratio = 0.0;
};

/// Per-annotator imputed reports averaged arithmetically. Agreement is the fraction
/// of doubly annotated images whose two labels are identical (unrecognized counts
/// as a label of its own).
inline HumanEvalResult aggregate_human_eval(const HumanAnnotationSet& annotations,
                                            const std::map<std::string, std::string>& golds,
                                            const std::vector<std::string>& classes) {
  std::map<std::string, std::vector<std::optional<std::string>>> by_image;
  for (const auto& [key, label] : annotations.judgments) {
    if (!golds.count(key.first)) throw ValidationError("annotation for unknown image '" + key.first + "'");
    if (label && std::find(classes.begin(), classes.end(), *label) == classes.end())
      throw ValidationError("annotation label '" + *label + "' for image '" + key.first +
                            "' is outside the answer universe");
    by_image[key.first].push_back(label);
  }
  for (const auto& [image, labels] : by_image)
    if (labels.size() > 2) throw ValidationError("image '" + image + "' has more than two annotators");

  HumanEvalResult res;
  auto annotators = annotations.annotators();
  std::vector<std::string> gold_list;
  for (const auto& [id, g] : golds) gold_list.push_back(g);

  for (const auto& who : annotators) {
    std::vector<Prediction> preds;
    for (const auto& [id, g] : golds) {
      Prediction p{id, "", "", Provenance::human, false, false};
      auto it = annotations.judgments.find({id, who});
      if (it != annotations.judgments.end() && it->second) {
        p.label = p.answer = *it->second;
        p.recognized = true;
      }
      preds.push_back(std::move(p));
    }
    res.per_annotator[who] = impute_unrecognized(preds, gold_list, classes);
  }
  if (!res.per_annotator.empty()) {
    auto m = static_cast<double>(res.per_annotator.size());
    EvalReport mean;
    mean.imputed = true;
    mean.n = golds.size();
    for (const auto& [_, r] : res.per_annotator) {
      mean.accuracy += r.accuracy / m;
      mean.macro_f1 += r.macro_f1 / m;
      mean.positive_f1 += r.positive_f1 / m;
      mean.recognized_ratio += r.recognized_ratio / m;
      mean.subset_accuracy += r.subset_accuracy / m;
      mean.subset_macro_f1 += r.subset_macro_f1 / m;
    }
    mean.recognized = static_cast<std::size_t>(mean.recognized_ratio * static_cast<double>(mean.n) + 0.5);
    res.mean = mean;
  }
  std::size_t agree = 0, any = 0;
  for (const auto& [image, labels] : by_image) {
    bool recognized = std::any_of(labels.begin(), labels.end(), [](const auto& l) { return l.has_value(); });
    any += recognized;
    if (labels.size() == 2) {
      ++res.doubly_annotated;
      agree += labels[0] == labels[1];
    }
  }
  res.agreement = res.doubly_annotated ? static_cast<double>(agree) / res.doubly_annotated : 0.0;
  res.recognized_any_ratio = golds.empty() ? 0.0 : static_cast<double>(any) / golds.size();
  return res;
}

inline nlohmann::json to_json(const HumanEvalResult& r) {
  nlohmann::json per = nlohmann::json::object();
  for (const auto& [who, rep] : r.per_annotator) per[who] = to_json(rep);
  return {{"mean", to_json(r.mean)},
          {"per_annotator", per},
          {"agreement", r.agreement},
          {"doubly_annotated", r.doubly_annotated},
          {"recognized_any_ratio", r.recognized_any_ratio}};
}

}  // namespace spatialprobe
