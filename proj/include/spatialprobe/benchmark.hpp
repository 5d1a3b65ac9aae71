#pragma once

// Procedural construction of the probing datasets: scale comparisons,
// positional scenarios, generalized scenarios and yes/no questions.
// Builders validate the bundled data files; they never invent content.

#include <algorithm>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "spatialprobe/error.hpp"
#include "spatialprobe/text.hpp"
#include "spatialprobe/types.hpp"

namespace spatialprobe {

using json = nlohmann::json;

struct ObjectEntity {
  std::string name;
  int group_level = 0;
  Dimension dimension = Dimension::size;

  friend bool operator==(const ObjectEntity&, const ObjectEntity&) = default;
};

struct ScaleInstance {
  ObjectEntity obj_a;
  ObjectEntity obj_b;
  Dimension dimension = Dimension::size;
  ScaleGold gold = ScaleGold::a_greater;

  std::string id() const { return to_string(dimension) + "/" + obj_a.name + "|" + obj_b.name; }
};

struct PositionScenario {
  std::string person;
  std::string object;
  std::string action;  // verb phrase mentioning the object, e.g. "washes the car"
  Relation gold = Relation::beside;

  std::string id() const { return "position/" + person + "|" + object + "|" + action; }
};

struct GeneralizedScenario {
  PositionScenario base;
  std::string new_person;
  std::string new_object;
  Relation gold = Relation::beside;

  /// The scenario with person and object substituted, including inside the action phrase.
  PositionScenario rendered() const {
    PositionScenario s{new_person, new_object, base.action, gold};
    text::replace_phrase(s.action, base.object, new_object);
    return s;
  }
  std::string id() const {
    auto r = rendered();
    return "position_generalized/" + r.person + "|" + r.object + "|" + r.action;
  }
};

struct SubtermLexicon {
  std::map<std::string, std::vector<std::string>> entries;

  const std::vector<std::string>* find(const std::string& base) const {
    auto it = entries.find(base);
    return it == entries.end() || it->second.empty() ? nullptr : &it->second;
  }
};

enum class QaSubtask { size, height, position };

inline std::string to_string(QaSubtask t) {
  switch (t) {
    case QaSubtask::size: return "size";
    case QaSubtask::height: return "height";
    case QaSubtask::position: return "position";
  }
  return "?";
}

struct QAInstance {
  QaSubtask subtask = QaSubtask::size;
  std::optional<std::string> context;
  std::string question;
  YesNo gold = YesNo::yes;
  std::string source_id;
  std::string id;
};

// Tokens an action phrase must not contain.
inline const std::set<std::string>& preposition_stop_list() {
  static const std::set<std::string> kStop = {"on",    "in",     "under",  "above",
                                              "below", "beside", "inside", "over"};
  return kStop;
}

// --- scale ----------------------------------------------------------------

/// Number of ordered cross-group pairs, 2 * (C(n,2) - sum_g C(n_g,2)).
inline std::size_t expected_scale_count(const std::vector<std::size_t>& group_sizes) {
  std::size_t n = 0, same = 0;
  for (auto g : group_sizes) {
    n += g;
    same += g * (g - (g ? 1 : 0)) / 2;
  }
  return 2 * (n * (n - (n ? 1 : 0)) / 2 - same);
}

/// Every ordered cross-group pair, ordered by (group, listed order) of the first
/// object and then of the second.
inline std::vector<ScaleInstance> build_scale_dataset(std::span<const ObjectEntity> objects,
                                                      Dimension dimension) {
  std::set<std::string> names;
  std::set<int> groups;
  for (const auto& o : objects) {
    if (o.name.empty()) throw ValidationError("object with empty name");
    if (o.group_level < 1 || o.group_level > 5)
      throw ValidationError("object '" + o.name + "' has group level " +
                            std::to_string(o.group_level) + " outside 1..5");
    if (o.dimension != dimension)
      throw ValidationError("object '" + o.name + "' has dimension " + to_string(o.dimension) +
                            ", expected " + to_string(dimension));
    if (!names.insert(o.name).second) throw ValidationError("duplicate object name '" + o.name + "'");
    groups.insert(o.group_level);
  }
  if (groups.size() < 2)
    throw ValidationError("scale dataset needs at least 2 groups, got " +
                          std::to_string(groups.size()));

  std::vector<ObjectEntity> ordered(objects.begin(), objects.end());
  std::stable_sort(ordered.begin(), ordered.end(),
                   [](const auto& x, const auto& y) { return x.group_level < y.group_level; });

  std::vector<ScaleInstance> out;
  for (const auto& a : ordered) {
    for (const auto& b : ordered) {
      if (a.group_level == b.group_level) continue;
      out.push_back({a, b, dimension,
                     a.group_level < b.group_level ? ScaleGold::b_greater : ScaleGold::a_greater});
    }
  }
  return out;
}

inline std::vector<ObjectEntity> parse_objects(const std::vector<text::TsvRow>& rows,
                                               const std::string& source = "objects") {
  std::vector<ObjectEntity> out;
  for (const auto& row : rows) {
    auto where = source + ":" + std::to_string(row.line);
    if (row.fields.size() != 3) throw ValidationError(where + ": expected 3 fields (name, group, dimension)");
    ObjectEntity o;
    o.name = text::to_lower(row.fields[0]);
    try {
      std::size_t used = 0;
      o.group_level = std::stoi(row.fields[1], &used);
      if (used != row.fields[1].size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw ValidationError(where + ": bad group '" + row.fields[1] + "'");
    }
    try {
      o.dimension = parse_dimension(row.fields[2]);
    } catch (const ValidationError& e) {
      throw ValidationError(where + ": " + e.what());
    }
    out.push_back(std::move(o));
  }
  return out;
}

inline std::vector<ObjectEntity> load_objects(const std::filesystem::path& path) {
  return parse_objects(text::read_tsv(path), path.string());
}

// --- positional ---------------------------------------------------------------

struct ScenarioRow {
  std::string person, object, action, relation;
  std::string where;  // "file:line" for error messages
};

inline std::vector<ScenarioRow> parse_scenario_rows(const std::vector<text::TsvRow>& rows,
                                                    const std::string& source = "scenarios") {
  std::vector<ScenarioRow> out;
  for (const auto& row : rows) {
    auto where = source + ":" + std::to_string(row.line);
    if (row.fields.size() != 4)
      throw ValidationError(where + ": expected 4 fields (person, object, action, relation)");
    out.push_back({text::to_lower(row.fields[0]), text::to_lower(row.fields[1]),
                   text::to_lower(row.fields[2]), text::to_lower(row.fields[3]), where});
  }
  return out;
}

inline std::vector<ScenarioRow> load_scenario_rows(const std::filesystem::path& path) {
  return parse_scenario_rows(text::read_tsv(path), path.string());
}

inline std::vector<PositionScenario> build_position_dataset(std::span<const ScenarioRow> rows) {
  std::vector<PositionScenario> out;
  std::map<std::string, std::vector<std::size_t>> by_object;
  std::set<std::string> seen;
  for (const auto& row : rows) {
    auto where = row.where.empty() ? std::string("row") : row.where;
    if (row.person.empty() || row.object.empty() || row.action.empty())
      throw ValidationError(where + ": empty field");
    for (const auto& tok : text::tokenize(row.action))
      if (preposition_stop_list().count(tok))
        throw ValidationError(where + ": action '" + row.action + "' contains preposition '" + tok + "'");
    auto action_tokens = text::tokenize(row.action);
    auto object_tokens = text::tokenize(row.object);
    if (std::search(action_tokens.begin(), action_tokens.end(), object_tokens.begin(),
                    object_tokens.end()) == action_tokens.end())
      throw ValidationError(where + ": action '" + row.action + "' does not mention object '" +
                            row.object + "'");
    Relation rel;
    try {
      rel = parse_relation(row.relation);
    } catch (const ValidationError& e) {
      throw ValidationError(where + ": " + e.what());
    }
    PositionScenario s{row.person, row.object, row.action, rel};
    if (!seen.insert(s.id()).second) throw ValidationError(where + ": duplicate scenario " + s.id());
    by_object[s.object].push_back(out.size());
    out.push_back(std::move(s));
  }
  for (const auto& [object, idx] : by_object) {
    if (idx.size() != 2)
      throw ValidationError("object '" + object + "' has " + std::to_string(idx.size()) +
                            " actions, expected exactly 2");
    if (out[idx[0]].gold == out[idx[1]].gold)
      throw ValidationError("object '" + object + "' has two actions with the same relation '" +
                            to_string(out[idx[0]].gold) + "'");
  }
  return out;
}

/// The other scenario sharing this scenario's object.
inline const PositionScenario& sibling_scenario(std::span<const PositionScenario> all,
                                                const PositionScenario& s) {
  for (const auto& other : all)
    if (other.object == s.object && other.id() != s.id()) return other;
  throw ValidationError("scenario " + s.id() + " has no sibling");
}

// --- generalized ------------------------------------------------------------

inline SubtermLexicon parse_lexicon(const std::vector<text::TsvRow>& rows,
                                    const std::string& source = "lexicon") {
  SubtermLexicon lex;
  for (const auto& row : rows) {
    if (row.fields.size() != 2)
      throw ValidationError(source + ":" + std::to_string(row.line) + ": expected 2 fields (base, subterm)");
    auto base = text::to_lower(row.fields[0]);
    auto sub = text::to_lower(row.fields[1]);
    if (base == sub) continue;  // identity substitution is not a subterm
    auto& list = lex.entries[base];
    if (std::find(list.begin(), list.end(), sub) == list.end()) list.push_back(sub);
  }
  return lex;
}

inline SubtermLexicon load_lexicon(const std::filesystem::path& path) {
  return parse_lexicon(text::read_tsv(path), path.string());
}

/// Answers whether a phrase occurs in the reference corpus.
using OccurrenceOracle = std::function<bool(const std::string& phrase)>;

struct GeneralizationSkip {
  std::string scenario_id;
  std::string reason;
};

struct GeneralizationResult {
  std::vector<GeneralizedScenario> scenarios;
  std::vector<GeneralizationSkip> skipped;
  std::map<std::string, std::size_t> variants_per_base;  // surviving variants
  std::size_t filtered_by_oracle = 0;
};

/// Phrase searched in the reference corpus: "<person> <action>".
inline std::string occurrence_phrase(const PositionScenario& s) { return s.person + " " + s.action; }

/// Substitutes person and object with lexicon subterms (the base noun also counts as
/// an option for each slot, but the identity pair is excluded). Variants whose phrase
/// the oracle reports as present are dropped. Order: person options outer, object inner,
/// base noun first then lexicon order.
inline GeneralizationResult build_generalized_dataset(std::span<const PositionScenario> scenarios,
                                                      const SubtermLexicon& lexicon,
                                                      const OccurrenceOracle& occurs) {
  GeneralizationResult result;
  for (const auto& s : scenarios) {
    const auto* persons = lexicon.find(s.person);
    const auto* objects = lexicon.find(s.object);
    if (!persons || !objects) {
      result.skipped.push_back({s.id(), std::string("no lexicon entry for '") +
                                            (!persons ? s.person : s.object) + "'"});
      continue;
    }
    std::vector<std::string> person_opts{s.person}, object_opts{s.object};
    for (const auto& p : *persons)
      if (p != s.person) person_opts.push_back(p);
    for (const auto& o : *objects)
      if (o != s.object) object_opts.push_back(o);

    std::size_t kept = 0;
    for (const auto& p : person_opts) {
      for (const auto& o : object_opts) {
        if (p == s.person && o == s.object) continue;
        GeneralizedScenario g{s, p, o, s.gold};
        bool present = false;
        try {
          present = occurs(occurrence_phrase(g.rendered()));
        } catch (const std::exception& e) {
          throw Error("occurrence oracle failed on scenario " + s.id() + ": " + e.what());
        }
        if (present) {
          ++result.filtered_by_oracle;
          continue;
        }
        result.scenarios.push_back(std::move(g));
        ++kept;
      }
    }
    result.variants_per_base[s.id()] = kept;
  }
  return result;
}

// --- question answering -----------------------------------------------------

inline std::string sentence_with_article(const std::string& person, const std::string& action) {
  return text::capitalize(text::indefinite_article(person)) + " " + person + " " + action + ".";
}

/// One yes/no question per instance. Target golds alternate yes, no, yes, ... by
/// instance index and the comparative is chosen to realize the target.
inline std::vector<QAInstance> build_scale_qa(std::span<const ScaleInstance> instances) {
  if (instances.size() % 2 != 0)
    throw ValidationError("cannot balance yes/no over an odd number of scale instances (" +
                          std::to_string(instances.size()) + ")");
  std::vector<QAInstance> out;
  out.reserve(instances.size());
  for (std::size_t i = 0; i < instances.size(); ++i) {
    const auto& inst = instances[i];
    auto classes = scale_classes(inst.dimension);
    YesNo target = i % 2 == 0 ? YesNo::yes : YesNo::no;
    bool a_greater = inst.gold == ScaleGold::a_greater;
    bool ask_greater = (target == YesNo::yes) == a_greater;
    QAInstance q;
    q.subtask = inst.dimension == Dimension::size ? QaSubtask::size : QaSubtask::height;
    q.question = "Is " + inst.obj_a.name + " " + classes[ask_greater ? 0 : 1] + " than " +
                 inst.obj_b.name + "?";
    q.gold = target;
    q.source_id = inst.id();
    q.id = "qa/" + inst.id();
    out.push_back(std::move(q));
  }
  return out;
}

/// Two questions per scenario: its gold relation (yes) and its sibling's gold (no).
inline std::vector<QAInstance> build_position_qa(std::span<const PositionScenario> scenarios) {
  std::vector<QAInstance> out;
  out.reserve(scenarios.size() * 2);
  for (const auto& s : scenarios) {
    const auto& sib = sibling_scenario(scenarios, s);
    auto context = sentence_with_article(s.person, s.action);
    for (auto [rel, gold] : {std::pair{s.gold, YesNo::yes}, std::pair{sib.gold, YesNo::no}}) {
      QAInstance q;
      q.subtask = QaSubtask::position;
      q.context = context;
      q.question = "Is the " + s.person + " " + to_string(rel) + " the " + s.object + "?";
      q.gold = gold;
      q.source_id = s.id();
      q.id = "qa/" + s.id() + "#" + to_string(gold);
      out.push_back(std::move(q));
    }
  }
  return out;
}

struct QaDataset {
  std::vector<QAInstance> size, height, position;
};

inline QaDataset build_qa_dataset(std::span<const ScaleInstance> scale,
                                  std::span<const PositionScenario> positions) {
  std::vector<ScaleInstance> sizes, heights;
  for (const auto& s : scale) (s.dimension == Dimension::size ? sizes : heights).push_back(s);
  return {build_scale_qa(sizes), build_scale_qa(heights), build_position_qa(positions)};
}

// --- JSON Lines ---------------------------------------------------------------

inline json to_json(const ScaleInstance& s) {
  return {{"id", s.id()},
          {"obj_a", s.obj_a.name},
          {"obj_b", s.obj_b.name},
          {"group_a", s.obj_a.group_level},
          {"group_b", s.obj_b.group_level},
          {"dimension", to_string(s.dimension)},
          {"gold", to_string(s.gold)}};
}

inline json to_json(const PositionScenario& s) {
  return {{"id", s.id()},
          {"person", s.person},
          {"object", s.object},
          {"action", s.action},
          {"relation", to_string(s.gold)}};
}

inline json to_json(const GeneralizedScenario& g) {
  auto j = to_json(g.rendered());
  j["id"] = g.id();
  j["base_id"] = g.base.id();
  j["base_person"] = g.base.person;
  j["base_object"] = g.base.object;
  j["base_action"] = g.base.action;
  return j;
}

inline json to_json(const QAInstance& q) {
  return {{"id", q.id},
          {"subtask", to_string(q.subtask)},
          {"context", q.context ? json(*q.context) : json(nullptr)},
          {"question", q.question},
          {"gold", to_string(q.gold)},
          {"source", q.source_id}};
}

inline ScaleInstance scale_from_json(const json& j) {
  auto dim = parse_dimension(j.at("dimension").get<std::string>());
  return {{j.at("obj_a").get<std::string>(), j.at("group_a").get<int>(), dim},
          {j.at("obj_b").get<std::string>(), j.at("group_b").get<int>(), dim},
          dim,
          parse_scale_gold(j.at("gold").get<std::string>())};
}

inline PositionScenario position_from_json(const json& j) {
  return {j.at("person").get<std::string>(), j.at("object").get<std::string>(),
          j.at("action").get<std::string>(), parse_relation(j.at("relation").get<std::string>())};
}

inline GeneralizedScenario generalized_from_json(const json& j) {
  auto gold = parse_relation(j.at("relation").get<std::string>());
  PositionScenario base{j.at("base_person").get<std::string>(), j.at("base_object").get<std::string>(),
                        j.at("base_action").get<std::string>(), gold};
  return {base, j.at("person").get<std::string>(), j.at("object").get<std::string>(), gold};
}

inline QAInstance qa_from_json(const json& j) {
  QAInstance q;
  auto sub = j.at("subtask").get<std::string>();
  q.subtask = sub == "size" ? QaSubtask::size : sub == "height" ? QaSubtask::height : QaSubtask::position;
  if (!j.at("context").is_null()) q.context = j.at("context").get<std::string>();
  q.question = j.at("question").get<std::string>();
  q.gold = parse_yes_no(j.at("gold").get<std::string>());
  q.source_id = j.at("source").get<std::string>();
  q.id = j.at("id").get<std::string>();
  return q;
}

template <class T>
std::string to_jsonl(std::span<const T> items) {
  std::string out;
  for (const auto& item : items) {
    out += to_json(item).dump();
    out += '\n';
  }
  return out;
}

template <class T>
std::string to_jsonl(const std::vector<T>& items) {
  return to_jsonl(std::span<const T>(items));
}

inline std::vector<json> parse_jsonl(std::string_view content, const std::string& source = "jsonl") {
  std::vector<json> out;
  std::size_t line_no = 0;
  for (const auto& line : text::split(content, '\n')) {
    ++line_no;
    if (text::trim(line).empty()) continue;
    try {
      out.push_back(json::parse(line));
    } catch (const json::parse_error& e) {
      throw IoError(source + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

inline std::vector<json> read_jsonl(const std::filesystem::path& path) {
  return parse_jsonl(text::read_file(path), path.string());
}

}  // namespace spatialprobe
