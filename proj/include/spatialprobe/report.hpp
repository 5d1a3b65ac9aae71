#pragma once

// Plain-text tables in the layout of the probing tables: one row per model,
// "full (subset)" cells for evaluation reports, "avg / sigma" for fold runs and
// Sym./Trans. columns for consistency.

#include <algorithm>
#include <cstdio>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

namespace spatialprobe::report {

inline std::string pct(double v, int decimals = 1) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, 100.0 * v);
  return buf;
}

/// Three significant digits, the way the fold standard deviations are printed.
inline std::string sig3(double v) {
  char buf[32];
  double p = 100.0 * v;
  int decimals = p >= 10.0 ? 1 : 2;
  std::snprintf(buf, sizeof buf, "%.*f", decimals, p);
  return buf;
}

class Table {
 public:
  explicit Table(std::vector<std::string> header) : header_(std::move(header)) {}
  void add(std::vector<std::string> row) { rows_.push_back(std::move(row)); }

  std::string render() const {
    std::vector<std::size_t> width(header_.size(), 0);
    auto widen = [&](const std::vector<std::string>& r) {
      for (std::size_t i = 0; i < r.size() && i < width.size(); ++i) width[i] = std::max(width[i], r[i].size());
    };
    widen(header_);
    for (const auto& r : rows_) widen(r);
    std::size_t total = 0;
    for (auto w : width) total += w + 2;
    auto line = [&](const std::vector<std::string>& r) {
      std::string s;
      for (std::size_t i = 0; i < width.size(); ++i) {
        std::string cell = i < r.size() ? r[i] : "";
        if (i == 0) s += cell + std::string(width[i] - cell.size() + 2, ' ');
        else s += std::string(width[i] - cell.size() + 2, ' ') + cell;
      }
      while (!s.empty() && s.back() == ' ') s.pop_back();
      return s + "\n";
    };
    std::string rule(total, '-');
    std::string out = rule + "\n" + line(header_) + rule + "\n";
    for (const auto& r : rows_) out += line(r);
    return out + rule + "\n";
  }

 private:
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

/// Rows of (model, EvalReport JSON): "Acc" and "F1" as full (subset).
inline std::string eval_table(const std::vector<std::pair<std::string, nlohmann::json>>& rows) {
  Table t({"Model", "Acc", "F1", "Recog."});
  for (const auto& [name, r] : rows)
    t.add({name, pct(r.at("accuracy")) + " (" + pct(r.at("subset_accuracy")) + ")",
           pct(r.at("macro_f1")) + " (" + pct(r.at("subset_macro_f1")) + ")", pct(r.at("recognized_ratio"), 0) + "%"});
  return t.render();
}

/// Rows of (model, CV report JSON): "avg / sigma".
inline std::string cv_table(const std::vector<std::pair<std::string, nlohmann::json>>& rows) {
  Table t({"Model", "Acc (avg. / s)", "F1 (avg. / s)", "Runs"});
  for (const auto& [name, r] : rows)
    t.add({name, pct(r.at("mean_acc")) + " / " + sig3(r.at("std_acc")),
           pct(r.at("mean_f1")) + " / " + sig3(r.at("std_f1")), std::to_string(r.at("runs_used").get<int>())});
  return t.render();
}

/// Rows of (model, ConsistencyReport JSON).
inline std::string consistency_table(const std::vector<std::pair<std::string, nlohmann::json>>& rows) {
  Table t({"Model", "Sym.", "Trans.", "Pairs", "Triples"});
  for (const auto& [name, r] : rows)
    t.add({name, pct(r.at("symmetry_pct")), pct(r.at("transitivity_pct")),
           std::to_string(r.at("pairs_evaluated").get<long>()), std::to_string(r.at("triples_evaluated").get<long>())});
  return t.render();
}

inline std::string ratio_table(const nlohmann::json& ratios) {
  Table t({"Object", "#(c>a)/|A|", "#(a>c)/|A|", "|A|"});
  for (const auto& r : ratios.at("rows"))
    t.add({r.at("object").get<std::string>(), pct(r.at("forward_ratio")), pct(r.at("reverse_ratio")),
           std::to_string(r.at("comparable").get<long>())});
  return t.render();
}

/// Picks the table layout from the shape of the report.
inline std::string render_any(const std::vector<std::pair<std::string, nlohmann::json>>& rows) {
  std::vector<std::pair<std::string, nlohmann::json>> evals, cvs, cons;
  std::string extra;
  for (const auto& [name, j] : rows) {
    if (j.contains("mean_acc")) cvs.emplace_back(name, j);
    else if (j.contains("symmetry_pct")) cons.emplace_back(name, j);
    else if (j.contains("subset_accuracy")) evals.emplace_back(name, j);
    else if (j.contains("mean") && j["mean"].contains("subset_accuracy")) evals.emplace_back(name, j["mean"]);
    else if (j.contains("rows")) extra += name + "\n" + ratio_table(j);
  }
  std::string out;
  if (!cvs.empty()) out += cv_table(cvs);
  if (!evals.empty()) out += eval_table(evals);
  if (!cons.empty()) out += consistency_table(cons);
  return out + extra;
}

}  // namespace spatialprobe::report
