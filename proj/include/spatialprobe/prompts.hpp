#pragma once

// Prompt rendering, candidate pools, object-disjoint folds and the
// cross-validated prompt/answer selection protocol.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "spatialprobe/benchmark.hpp"
#include "spatialprobe/error.hpp"
#include "spatialprobe/metrics.hpp"
#include "spatialprobe/text.hpp"
#include "spatialprobe/types.hpp"

namespace spatialprobe {

inline constexpr std::string_view kMask = "[MASK]";

enum class PromptKind { masked_scale, masked_position, ism_scale, ism_scenario, qa };

inline bool is_masked(PromptKind k) {
  return k == PromptKind::masked_scale || k == PromptKind::masked_position;
}
inline bool is_ism(PromptKind k) { return k == PromptKind::ism_scale || k == PromptKind::ism_scenario; }

inline std::size_t count_masks(std::string_view s) {
  std::size_t n = 0;
  for (auto pos = s.find(kMask); pos != std::string_view::npos; pos = s.find(kMask, pos + kMask.size()))
    ++n;
  return n;
}

/// Slot names referenced by a pattern, in order of appearance. A slot is
/// `{NAME}`, or `{Art:NAME}` / `{art:NAME}` for an article-prefixed noun.
inline std::vector<std::string> template_slots(std::string_view pattern) {
  std::vector<std::string> slots;
  std::size_t pos = 0;
  while ((pos = pattern.find('{', pos)) != std::string_view::npos) {
    auto end = pattern.find('}', pos);
    if (end == std::string_view::npos) throw ValidationError("unterminated slot in '" + std::string(pattern) + "'");
    slots.emplace_back(pattern.substr(pos + 1, end - pos - 1));
    pos = end + 1;
  }
  return slots;
}

struct PromptTemplate {
  std::string pattern;
  PromptKind kind = PromptKind::masked_scale;

  /// Throws unless the mask arity matches the kind.
  void validate() const {
    auto masks = count_masks(pattern);
    if (is_masked(kind) && masks != 1)
      throw ValidationError("masked template needs exactly one [MASK], found " + std::to_string(masks) +
                            ": '" + pattern + "'");
    if (!is_masked(kind) && masks != 0)
      throw ValidationError("template of this kind must not contain [MASK]: '" + pattern + "'");
    template_slots(pattern);
  }
};

struct AnswerSet {
  std::vector<std::string> answers;

  void validate() const {
    std::set<std::string> distinct(answers.begin(), answers.end());
    if (answers.size() < 2 || distinct.size() != answers.size())
      throw ValidationError("answer set needs at least 2 distinct answers");
  }
  std::size_t size() const { return answers.size(); }
  const std::string& operator[](std::size_t i) const { return answers[i]; }
};

// --- default templates -------------------------------------------------------

inline PromptTemplate default_masked_scale_template() { return {"{A} is [MASK] than {B}", PromptKind::masked_scale}; }
inline PromptTemplate default_masked_position_template() {
  return {"{Art:PERSON} {ACTION}. {Pronoun} is [MASK] the {OBJECT}.", PromptKind::masked_position};
}
inline PromptTemplate default_ism_scale_template() { return {"{A} and {B}", PromptKind::ism_scale}; }
inline PromptTemplate default_ism_scenario_template() {
  return {"{Art:PERSON} {ACTION}.", PromptKind::ism_scenario};
}
inline AnswerSet default_answers(Dimension d) { return {scale_classes(d)}; }
inline AnswerSet default_relation_answers() { return {relation_classes()}; }

// --- rendering ---------------------------------------------------------------

/// Subject pronoun for known person nouns; otherwise a definite noun phrase.
inline std::string subject_reference(const std::string& person) {
  static const std::set<std::string> kHe = {"man", "boy", "king", "prince", "monk", "wizard",
                                            "fisherman", "cowboy", "schoolboy", "choirboy", "gentleman"};
  static const std::set<std::string> kShe = {"woman", "girl", "queen", "princess", "nun", "bride",
                                             "enchantress", "schoolgirl", "cheerleader", "lady", "actress"};
  if (kHe.count(person)) return "He";
  if (kShe.count(person)) return "She";
  return "The " + person;
}

using SlotValues = std::map<std::string, std::string>;

inline SlotValues slot_values(const ScaleInstance& s) { return {{"A", s.obj_a.name}, {"B", s.obj_b.name}}; }
inline SlotValues slot_values(const PositionScenario& s) {
  return {{"PERSON", s.person}, {"OBJECT", s.object}, {"ACTION", s.action}, {"Pronoun", subject_reference(s.person)}};
}
inline SlotValues slot_values(const GeneralizedScenario& g) { return slot_values(g.rendered()); }

/// Substitutes every slot. Unknown slots and templates that reference none of
/// the instance fields are errors; [MASK] is preserved verbatim.
inline std::string render(const std::string& pattern, const SlotValues& values) {
  std::string out;
  std::size_t pos = 0, used = 0;
  while (true) {
    auto open = pattern.find('{', pos);
    out.append(pattern, pos, open == std::string::npos ? std::string::npos : open - pos);
    if (open == std::string::npos) break;
    auto close = pattern.find('}', open);
    if (close == std::string::npos) throw ValidationError("unterminated slot in '" + pattern + "'");
    std::string slot = pattern.substr(open + 1, close - open - 1);
    std::string name = slot;
    std::optional<bool> article_upper;
    if (slot.rfind("Art:", 0) == 0) article_upper = true;
    if (slot.rfind("art:", 0) == 0) article_upper = false;
    if (article_upper) name = slot.substr(4);
    auto it = values.find(name);
    if (it == values.end()) throw ValidationError("unresolved slot '{" + slot + "}' in '" + pattern + "'");
    if (article_upper) {
      auto art = text::indefinite_article(it->second);
      out += (*article_upper ? text::capitalize(art) : art) + " " + it->second;
    } else {
      out += it->second;
    }
    ++used;
    pos = close + 1;
  }
  if (used == 0) throw ValidationError("template '" + pattern + "' references no instance field");
  return out;
}

template <class Instance>
std::string render_masked_prompt(const PromptTemplate& tmpl, const Instance& instance) {
  if (!is_masked(tmpl.kind)) throw ValidationError("template is not a masked-probe template");
  constexpr bool scale = std::is_same_v<Instance, ScaleInstance>;
  if ((tmpl.kind == PromptKind::masked_scale) != scale)
    throw ValidationError("template kind does not match instance kind");
  tmpl.validate();
  return render(tmpl.pattern, slot_values(instance));
}

inline std::string render_ism_prompt(const ScaleInstance& s) {
  return render(default_ism_scale_template().pattern, slot_values(s));
}
inline std::string render_ism_prompt(const PositionScenario& s) {
  return render(default_ism_scenario_template().pattern, slot_values(s));
}
inline std::string render_ism_prompt(const GeneralizedScenario& g) { return render_ism_prompt(g.rendered()); }

// --- candidate pools ---------------------------------------------------------

inline constexpr std::size_t kMaxGeneratedCandidates = 10;

struct CandidatePool {
  std::vector<PromptTemplate> prompts;   // [0] is the manually designed original
  std::vector<AnswerSet> answer_sets;    // [0] is the original
};

struct IngestLog {
  std::vector<std::string> entries;
};

/// Deduplicates raw prompt candidates (first occurrence wins, the original counts
/// as already seen), drops candidates with the wrong [MASK] arity or a different
/// slot set than the original, and keeps at most 10 generated entries.
inline std::vector<PromptTemplate> ingest_prompt_candidates(const PromptTemplate& original,
                                                            std::span<const std::string> raw,
                                                            IngestLog* log = nullptr) {
  original.validate();
  auto note = [&](std::string msg) {
    if (log) log->entries.push_back(std::move(msg));
  };
  auto slots_of = [](const std::string& p) {
    auto v = template_slots(p);
    return std::multiset<std::string>(v.begin(), v.end());
  };
  auto original_slots = slots_of(original.pattern);
  std::vector<PromptTemplate> out{original};
  std::set<std::string> seen{original.pattern};
  for (const auto& cand : raw) {
    if (!seen.insert(cand).second) continue;
    PromptTemplate t{cand, original.kind};
    try {
      t.validate();
    } catch (const ValidationError& e) {
      note(std::string("dropped prompt candidate: ") + e.what());
      continue;
    }
    if (slots_of(cand) != original_slots) {
      note("dropped prompt candidate with mismatched slots: '" + cand + "'");
      continue;
    }
    if (out.size() - 1 == kMaxGeneratedCandidates) {
      note("dropped prompt candidate beyond cap: '" + cand + "'");
      continue;
    }
    out.push_back(std::move(t));
  }
  return out;
}

/// Answer candidates are positional: entry i of a candidate set stands for class i
/// of the original set.
inline std::vector<AnswerSet> ingest_answer_candidates(const AnswerSet& original,
                                                       std::span<const std::vector<std::string>> raw,
                                                       IngestLog* log = nullptr) {
  original.validate();
  std::vector<AnswerSet> out{original};
  std::set<std::vector<std::string>> seen{original.answers};
  for (const auto& cand : raw) {
    if (!seen.insert(cand).second) continue;
    AnswerSet a{cand};
    bool ok = cand.size() == original.size();
    if (ok) {
      try {
        a.validate();
      } catch (const ValidationError&) {
        ok = false;
      }
    }
    if (!ok) {
      if (log) log->entries.push_back("dropped answer candidate '" + text::join(cand, ",") + "'");
      continue;
    }
    if (out.size() - 1 == kMaxGeneratedCandidates) {
      if (log) log->entries.push_back("dropped answer candidate beyond cap '" + text::join(cand, ",") + "'");
      continue;
    }
    out.push_back(std::move(a));
  }
  return out;
}

/// Reads `{"prompts": [...], "answers": [[...], ...]}`; both keys optional.
inline CandidatePool load_candidate_pool(const nlohmann::json& j, const PromptTemplate& original_prompt,
                                         const AnswerSet& original_answers, IngestLog* log = nullptr) {
  std::vector<std::string> prompts;
  std::vector<std::vector<std::string>> answers;
  if (j.contains("prompts")) prompts = j.at("prompts").get<std::vector<std::string>>();
  if (j.contains("answers")) answers = j.at("answers").get<std::vector<std::vector<std::string>>>();
  return {ingest_prompt_candidates(original_prompt, prompts, log),
          ingest_answer_candidates(original_answers, answers, log)};
}

inline nlohmann::json to_json(const CandidatePool& pool) {
  nlohmann::json j;
  j["prompts"] = nlohmann::json::array();
  for (const auto& p : pool.prompts) j["prompts"].push_back(p.pattern);
  j["answers"] = nlohmann::json::array();
  for (const auto& a : pool.answer_sets) j["answers"].push_back(a.answers);
  return j;
}

// --- folds -------------------------------------------------------------------

struct FoldAssignment {
  int k = 5;
  std::map<std::string, int> fold_of;

  std::vector<std::vector<std::string>> folds() const {
    std::vector<std::vector<std::string>> out(static_cast<std::size_t>(k));
    for (const auto& [name, f] : fold_of) out[static_cast<std::size_t>(f)].push_back(name);
    return out;
  }
};

/// Leveled objects: the j-th listed object of every group goes to fold j mod k,
/// so with k objects per group each fold holds one object per level.
inline FoldAssignment split_object_folds(std::span<const ObjectEntity> objects, int k = 5) {
  if (k < 2) throw ValidationError("fold count k must be >= 2, got " + std::to_string(k));
  FoldAssignment fa{k, {}};
  std::map<int, int> seen_in_group;
  for (const auto& o : objects) {
    int j = seen_in_group[o.group_level]++;
    if (!fa.fold_of.emplace(o.name, j % k).second)
      throw ValidationError("duplicate object name '" + o.name + "'");
  }
  return fa;
}

/// Unleveled objects: round-robin over names in sorted order.
inline FoldAssignment split_object_folds(std::span<const std::string> names, int k = 5) {
  if (k < 2) throw ValidationError("fold count k must be >= 2, got " + std::to_string(k));
  std::set<std::string> sorted(names.begin(), names.end());
  FoldAssignment fa{k, {}};
  int i = 0;
  for (const auto& n : sorted) fa.fold_of[n] = i++ % k;
  return fa;
}

// --- cross-validated selection ----------------------------------------------

/// What the selection protocol needs to know about one instance.
struct CVItem {
  std::vector<std::string> objects;  // both objects of a pair, or the scenario object
  std::string gold;                  // canonical class label
  std::string instance_id;
};

inline CVItem cv_item(const ScaleInstance& s) {
  return {{s.obj_a.name, s.obj_b.name}, gold_label(s.gold, s.dimension), s.id()};
}
inline CVItem cv_item(const PositionScenario& s) { return {{s.object}, to_string(s.gold), s.id()}; }
inline CVItem cv_item(const GeneralizedScenario& g) {
  // Folds are keyed by the base object so variants of one scenario share a fold.
  return {{g.base.object}, to_string(g.gold), g.id()};
}

struct CVRun {
  int run = 0;
  bool skipped = false;
  std::string note;
  std::size_t prompt_index = 0;
  std::size_t answer_index = 0;
  double dev_accuracy = 0.0;
  std::size_t dev_size = 0;
  std::size_t test_size = 0;
  double test_accuracy = 0.0;
  double test_macro_f1 = 0.0;
};

struct CVRunResult {
  std::vector<CVRun> per_run;
  double mean_acc = 0.0, std_acc = 0.0, mean_f1 = 0.0, std_f1 = 0.0;
  std::size_t runs_used = 0;
};

/// eval_fn(prompt_index, answer_index, subset) returns one prediction per subset
/// index, in subset order, with labels in canonical class space.
using CVEvalFn = std::function<std::vector<Prediction>(std::size_t, std::size_t, std::span<const std::size_t>)>;

inline std::pair<double, double> mean_and_population_std(const std::vector<double>& xs) {
  if (xs.empty()) return {0.0, 0.0};
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  double var = 0.0;
  for (double x : xs) var += (x - mean) * (x - mean);
  var /= static_cast<double>(xs.size());
  return {mean, std::sqrt(var)};
}

/// For run r the dev set holds instances whose objects all lie in fold r and the
/// test set those with no object in fold r; straddling instances are excluded from
/// both. The (prompt, answer set) pair with the best dev accuracy wins; ties go to
/// the lowest (prompt, answer) index.
inline CVRunResult run_cross_validated_selection(const CandidatePool& pool, const FoldAssignment& folds,
                                                 std::span<const CVItem> items,
                                                 const std::vector<std::string>& classes,
                                                 const CVEvalFn& eval_fn) {
  if (pool.prompts.empty() || pool.answer_sets.empty()) throw ValidationError("empty candidate pool");
  auto fold_of = [&](const std::string& name) {
    auto it = folds.fold_of.find(name);
    if (it == folds.fold_of.end()) throw ValidationError("object '" + name + "' has no fold");
    return it->second;
  };

  CVRunResult result;
  std::vector<double> accs, f1s;
  for (int r = 0; r < folds.k; ++r) {
    CVRun run;
    run.run = r;
    std::vector<std::size_t> dev, test;
    for (std::size_t i = 0; i < items.size(); ++i) {
      std::size_t in_fold = 0;
      for (const auto& o : items[i].objects) in_fold += fold_of(o) == r ? 1 : 0;
      if (in_fold == items[i].objects.size()) dev.push_back(i);
      else if (in_fold == 0) test.push_back(i);
    }
    run.dev_size = dev.size();
    run.test_size = test.size();
    if (dev.empty() || test.empty()) {
      run.skipped = true;
      run.note = dev.empty() ? "empty dev set" : "empty test set";
      result.per_run.push_back(run);
      continue;
    }

    auto golds_for = [&](std::span<const std::size_t> subset) {
      std::vector<std::string> g;
      for (auto i : subset) g.push_back(items[i].gold);
      return g;
    };
    auto dev_golds = golds_for(dev);
    double best = -1.0;
    for (std::size_t p = 0; p < pool.prompts.size(); ++p) {
      for (std::size_t a = 0; a < pool.answer_sets.size(); ++a) {
        auto preds = eval_fn(p, a, dev);
        double acc = plain_accuracy(preds, dev_golds);
        if (acc > best) {
          best = acc;
          run.prompt_index = p;
          run.answer_index = a;
        }
      }
    }
    run.dev_accuracy = best;
    auto test_preds = eval_fn(run.prompt_index, run.answer_index, test);
    auto report = score_predictions(test_preds, golds_for(test), classes);
    run.test_accuracy = report.accuracy;
    run.test_macro_f1 = report.macro_f1;
    accs.push_back(run.test_accuracy);
    f1s.push_back(run.test_macro_f1);
    result.per_run.push_back(run);
  }
  result.runs_used = accs.size();
  std::tie(result.mean_acc, result.std_acc) = mean_and_population_std(accs);
  std::tie(result.mean_f1, result.std_f1) = mean_and_population_std(f1s);
  return result;
}

inline nlohmann::json to_json(const CVRunResult& r) {
  nlohmann::json j;
  j["runs"] = nlohmann::json::array();
  for (const auto& run : r.per_run) {
    nlohmann::json e{{"run", run.run},
                     {"skipped", run.skipped},
                     {"dev_size", run.dev_size},
                     {"test_size", run.test_size}};
    if (run.skipped) {
      e["note"] = run.note;
    } else {
      e["prompt_index"] = run.prompt_index;
      e["answer_index"] = run.answer_index;
      e["dev_accuracy"] = run.dev_accuracy;
      e["test_accuracy"] = run.test_accuracy;
      e["test_macro_f1"] = run.test_macro_f1;
    }
    j["runs"].push_back(e);
  }
  j["runs_used"] = r.runs_used;
  j["mean_acc"] = r.mean_acc;
  j["std_acc"] = r.std_acc;
  j["mean_f1"] = r.mean_f1;
  j["std_f1"] = r.std_f1;
  return j;
}

}  // namespace spatialprobe
