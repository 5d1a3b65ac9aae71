// spatialprobe: builds the benchmark datasets, drives model adapters, evaluates
// image evidence and renders result tables.
//
//   spatialprobe build        --out-dir D [--task all|size|height|position|position_generalized|qa]
//   spatialprobe probe        --dataset F --kind masked|ism|qa --adapter CMD --out-dir D
//   spatialprobe eval-images  --dataset F --manifest M --mode box|human --out-dir D
//   spatialprobe analyze      --predictions [name=]F ... --out-dir D
//   spatialprobe report       --input [name=]F ... [--out F]
//
// Every command writes <command>.manifest.json next to its outputs (report: <out>.manifest.json).

#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "spatialprobe/benchmark.hpp"
#include "spatialprobe/geometry.hpp"
#include "spatialprobe/metrics.hpp"
#include "spatialprobe/occurrence.hpp"
#include "spatialprobe/probing.hpp"
#include "spatialprobe/prompts.hpp"
#include "spatialprobe/report.hpp"
#include "spatialprobe/run.hpp"

namespace sp = spatialprobe;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string dump(const json& j) { return j.dump(2) + "\n"; }

// --- datasets ------------------------------------------------------------------

enum class DatasetKind { scale, position, generalized, qa };

struct Dataset {
  DatasetKind kind = DatasetKind::scale;
  std::string ref;   // "<stem>@<content hash>"
  std::string hash;  // sha256 of the file
  std::vector<sp::ScaleInstance> scale;
  std::vector<sp::PositionScenario> position;
  std::vector<sp::GeneralizedScenario> generalized;
  std::vector<sp::QAInstance> qa;
  std::vector<std::string> classes;
  std::vector<std::string> ids;    // instance ids in file order
  std::vector<std::string> golds;  // canonical gold labels, aligned with ids

  std::size_t size() const { return ids.size(); }
};

Dataset load_dataset(const fs::path& path) {
  auto content = sp::text::read_file(path);
  auto rows = sp::parse_jsonl(content, path.string());
  if (rows.empty()) throw sp::ValidationError("dataset '" + path.string() + "' is empty");
  Dataset d;
  d.hash = sp::sha256_hex(content);
  d.ref = path.stem().string() + "@" + d.hash.substr(0, 16);
  const auto& first = rows.front();
  if (first.contains("question")) d.kind = DatasetKind::qa;
  else if (first.contains("base_id")) d.kind = DatasetKind::generalized;
  else if (first.contains("relation")) d.kind = DatasetKind::position;
  try {
    for (const auto& j : rows) {
      switch (d.kind) {
        case DatasetKind::scale: {
          auto s = sp::scale_from_json(j);
          if (!d.scale.empty() && s.dimension != d.scale.front().dimension)
            throw sp::ValidationError("dataset mixes size and height instances");
          d.ids.push_back(s.id());
          d.golds.push_back(sp::gold_label(s.gold, s.dimension));
          d.scale.push_back(std::move(s));
          break;
        }
        case DatasetKind::position: {
          auto s = sp::position_from_json(j);
          d.ids.push_back(s.id());
          d.golds.push_back(sp::to_string(s.gold));
          d.position.push_back(std::move(s));
          break;
        }
        case DatasetKind::generalized: {
          auto g = sp::generalized_from_json(j);
          d.ids.push_back(g.id());
          d.golds.push_back(sp::to_string(g.gold));
          d.generalized.push_back(std::move(g));
          break;
        }
        case DatasetKind::qa: {
          auto q = sp::qa_from_json(j);
          d.ids.push_back(q.id);
          d.golds.push_back(sp::to_string(q.gold));
          d.qa.push_back(std::move(q));
          break;
        }
      }
    }
  } catch (const json::exception& e) {
    throw sp::IoError("malformed dataset '" + path.string() + "': " + e.what());
  }
  switch (d.kind) {
    case DatasetKind::scale: d.classes = sp::scale_classes(d.scale.front().dimension); break;
    case DatasetKind::qa: d.classes = sp::yes_no_classes(); break;
    default: d.classes = sp::relation_classes();
  }
  std::set<std::string> unique(d.ids.begin(), d.ids.end());
  if (unique.size() != d.ids.size()) throw sp::ValidationError("dataset '" + path.string() + "' has duplicate ids");
  return d;
}

/// Prediction rows carry the gold label and, for pair tasks, both objects so that
/// analyze can rebuild the comparison table.
json prediction_row(const Dataset& d, std::size_t i, const sp::Prediction& p) {
  auto j = sp::to_json(p);
  j["gold"] = d.golds[i];
  if (d.kind == DatasetKind::scale) {
    j["obj_a"] = d.scale[i].obj_a.name;
    j["obj_b"] = d.scale[i].obj_b.name;
    j["dimension"] = sp::to_string(d.scale[i].dimension);
  }
  return j;
}

std::string predictions_jsonl(const Dataset& d, const std::vector<sp::Prediction>& preds) {
  std::string out;
  for (std::size_t i = 0; i < preds.size(); ++i) out += prediction_row(d, i, preds[i]).dump() + "\n";
  return out;
}

// --- adapters ------------------------------------------------------------------

fs::path default_cache_root() {
  if (const char* env = std::getenv(sp::kCacheEnv); env && *env) return env;
  if (const char* home = std::getenv("HOME"); home && *home) return fs::path(home) / ".cache" / "spatialprobe";
  return fs::temp_directory_path() / "spatialprobe-cache";
}

/// Scratch directory for request/response files, removed on exit.
class ScratchDir {
 public:
  ScratchDir() : path_(fs::temp_directory_path() / ("spatialprobe-" + std::to_string(::getpid()))) {
    fs::create_directories(path_);
  }
  ~ScratchDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

struct AdapterOptions {
  std::string command;
  std::string cache_dir;
  std::string adapter_id;
  bool no_cache = false;
};

sp::Adapter make_adapter(const AdapterOptions& o, const ScratchDir& scratch) {
  fs::path cache = o.no_cache ? fs::path() : (o.cache_dir.empty() ? default_cache_root() : fs::path(o.cache_dir));
  if (o.command.empty() && o.adapter_id.empty())
    throw sp::ValidationError("--adapter or --adapter-id is required to probe or replay");
  sp::ProcessAdapter pa(o.command, scratch.path(), cache, o.adapter_id);
  return [pa](const sp::ProbeManifest& m) {
    auto ex = pa(m);
    std::cerr << "adapter: manifest " << m.hash().substr(0, 16) << ", " << m.requests.size() << " requests"
              << (ex.replayed ? " (replayed from cache)" : "") << "\n";
    return ex;
  };
}

json adapter_config(const AdapterOptions& o) {
  return {{"adapter", o.command}, {"adapter_id", o.adapter_id}, {"no_cache", o.no_cache}};
}

// --- build ---------------------------------------------------------------------

struct BuildOptions {
  std::string data_dir = "data";
  std::string out_dir;
  std::string task = "all";
  std::string corpus;
  std::string lexicon;
};

json gold_counts(const std::vector<std::string>& golds) {
  std::map<std::string, std::size_t> c;
  for (const auto& g : golds) ++c[g];
  return c;
}

int cmd_build(const BuildOptions& o) {
  fs::path data(o.data_dir), out(o.out_dir);
  sp::DirectoryLock lock(out);
  sp::RunManifestRecord rec;
  rec.command = "build";
  rec.started_at = sp::timestamp_now();
  auto corpus = o.corpus.empty() ? data / "reference_corpus.txt" : fs::path(o.corpus);
  auto lexicon = o.lexicon.empty() ? data / "subterms.tsv" : fs::path(o.lexicon);
  rec.config = {{"data_dir", o.data_dir}, {"task", o.task}, {"corpus", corpus.string()}, {"lexicon", lexicon.string()}};

  bool all = o.task == "all";
  bool want_scale = all || o.task == "size" || o.task == "height" || o.task == "qa";
  bool want_pos = all || o.task == "position" || o.task == "position_generalized" || o.task == "qa";

  std::string input_digest;
  std::vector<sp::ScaleInstance> sizes, heights;
  std::vector<sp::PositionScenario> positions;
  json summary = json::object();
  auto note_dataset = [&](const std::string& name, const std::vector<std::string>& golds) {
    summary[name] = {{"count", golds.size()}, {"gold", gold_counts(golds)}};
  };

  if (want_scale) {
    for (auto [file, dim] : {std::pair{"objects_size.tsv", sp::Dimension::size},
                             std::pair{"objects_height.tsv", sp::Dimension::height}}) {
      auto path = data / file;
      input_digest += sp::hash_file(path);
      auto objects = sp::load_objects(path);
      auto ds = sp::build_scale_dataset(objects, dim);
      (dim == sp::Dimension::size ? sizes : heights) = ds;
    }
  }
  if (want_pos) {
    auto path = data / "scenarios.tsv";
    input_digest += sp::hash_file(path);
    auto rows = sp::load_scenario_rows(path);
    positions = sp::build_position_dataset(rows);
  }

  auto emit_scale = [&](const std::string& name, const std::vector<sp::ScaleInstance>& ds) {
    sp::emit(rec, out, name + ".jsonl", sp::to_jsonl(ds));
    std::vector<std::string> golds;
    for (const auto& s : ds) golds.push_back(sp::to_string(s.gold));
    note_dataset(name, golds);
  };
  if (all || o.task == "size") emit_scale("size", sizes);
  if (all || o.task == "height") emit_scale("height", heights);
  if (all || o.task == "position") {
    sp::emit(rec, out, "position.jsonl", sp::to_jsonl(positions));
    std::vector<std::string> golds;
    for (const auto& s : positions) golds.push_back(sp::to_string(s.gold));
    note_dataset("position", golds);
  }
  if (all || o.task == "position_generalized") {
    input_digest += sp::hash_file(corpus) + sp::hash_file(lexicon);
    auto index = sp::CorpusIndex::from_file(corpus);
    auto lex = sp::load_lexicon(lexicon);
    auto gen = sp::build_generalized_dataset(positions, lex, index);
    sp::emit(rec, out, "position_generalized.jsonl", sp::to_jsonl(gen.scenarios));
    json skipped = json::array();
    for (const auto& s : gen.skipped) skipped.push_back({{"scenario", s.scenario_id}, {"reason", s.reason}});
    json report{{"variants", gen.scenarios.size()},
                {"filtered_by_oracle", gen.filtered_by_oracle},
                {"skipped", skipped},
                {"variants_per_base", gen.variants_per_base}};
    sp::emit(rec, out, "position_generalized_report.json", dump(report));
    std::vector<std::string> golds;
    for (const auto& g : gen.scenarios) golds.push_back(sp::to_string(g.gold));
    note_dataset("position_generalized", golds);
    summary["position_generalized"]["skipped_bases"] = gen.skipped.size();
  }
  if (all || o.task == "qa") {
    std::vector<sp::ScaleInstance> scale(sizes);
    scale.insert(scale.end(), heights.begin(), heights.end());
    auto qa = sp::build_qa_dataset(scale, positions);
    for (auto [name, set] : {std::pair{"qa_size", &qa.size}, std::pair{"qa_height", &qa.height},
                             std::pair{"qa_position", &qa.position}}) {
      sp::emit(rec, out, std::string(name) + ".jsonl", sp::to_jsonl(*set));
      std::vector<std::string> golds;
      for (const auto& q : *set) golds.push_back(sp::to_string(q.gold));
      note_dataset(name, golds);
    }
  }

  sp::emit(rec, out, "build_summary.json", dump(summary));
  sp::report::Table t({"Dataset", "Count", "Gold distribution"});
  for (const auto& [name, s] : summary.items()) {
    std::string dist;
    for (const auto& [g, c] : s["gold"].items()) dist += (dist.empty() ? "" : ", ") + g + "=" + std::to_string(c.get<int>());
    t.add({name, std::to_string(s["count"].get<int>()), dist});
  }
  auto table = t.render();
  sp::emit(rec, out, "build_summary.txt", table);
  std::cout << table;

  rec.dataset_hash = sp::sha256_hex(input_digest);
  rec.finished_at = sp::timestamp_now();
  sp::text::write_file(out / "build.manifest.json", dump(rec.to_json()));
  return 0;
}

// --- image evaluation ----------------------------------------------------------

struct ImageEvalOptions {
  std::string dataset;
  std::string manifest;
  std::string out_dir;
  std::string mode = "box";
  std::string detections;
  std::string depth;
  std::string annotations;
  std::string labels;
  double tau = sp::kDefaultCoverage;
  std::string impute = "expected";
  std::uint64_t seed = 0;
};

std::map<std::string, std::size_t> index_by_id(const Dataset& d) {
  std::map<std::string, std::size_t> out;
  for (std::size_t i = 0; i < d.ids.size(); ++i) out[d.ids[i]] = i;
  return out;
}

sp::Prediction judge_box(const Dataset& d, std::size_t i, const sp::EvidenceBundle& e, const sp::LabelNormalizer& norm,
                         double tau) {
  sp::Prediction p{d.ids[i], "", "", sp::Provenance::model, false, false};
  if (!e.recognized) return p;
  if (d.kind == DatasetKind::scale) {
    const auto& s = d.scale[i];
    auto j = sp::compare_scale(*e.detection, *e.depth, norm(s.obj_a.name), norm(s.obj_b.name), s.dimension);
    if (j.result == sp::ScaleResult::indeterminate) return p;
    p.label = p.answer = d.classes[j.result == sp::ScaleResult::a_greater ? 0 : 1];
    p.recognized = true;
    return p;
  }
  sp::PositionScenario s = d.kind == DatasetKind::position ? d.position[i] : d.generalized[i].rendered();
  auto person = sp::select_box(*e.detection, norm(s.person));
  auto object = sp::select_box(*e.detection, norm(s.object));
  if (!person || !object) return p;
  p.label = p.answer = sp::to_string(sp::classify_relation(*person, *object, tau));
  p.recognized = true;
  return p;
}

/// Scores the images of an ISM manifest. Writes predictions and reports to `out`.
json evaluate_images(const Dataset& d, const sp::ProbeManifest& manifest, const ImageEvalOptions& o,
                     sp::RunManifestRecord& rec, const fs::path& out) {
  if (d.kind == DatasetKind::qa) throw sp::ValidationError("image evaluation needs a scale or position dataset");
  auto norm = o.labels.empty() ? sp::LabelNormalizer{} : sp::LabelNormalizer::from_file(o.labels);
  auto by_id = index_by_id(d);
  auto instance_index = [&](const std::string& iid) {
    auto it = by_id.find(iid);
    if (it == by_id.end()) throw sp::ValidationError("manifest instance '" + iid + "' is not in the dataset");
    return it->second;
  };

  if (o.mode == "human") {
    if (o.annotations.empty()) throw sp::ValidationError("--annotations is required in human mode");
    auto ann = sp::load_annotations(o.annotations);
    std::map<std::string, std::string> golds;  // image id -> gold
    std::map<std::string, std::size_t> image_instance;
    for (const auto& r : manifest.requests) {
      auto i = instance_index(r.instance_id);
      golds[r.id] = d.golds[i];
      image_instance[r.id] = i;
    }
    auto res = sp::aggregate_human_eval(ann, golds, d.classes);
    for (const auto& who : ann.annotators()) {
      std::string rows;
      for (const auto& r : manifest.requests) {
        auto i = image_instance[r.id];
        sp::Prediction p{d.ids[i], "", "", sp::Provenance::human, false, false};
        if (auto it = ann.judgments.find({r.id, who}); it != ann.judgments.end() && it->second) {
          p.label = p.answer = *it->second;
          p.recognized = true;
        }
        rows += prediction_row(d, i, p).dump() + "\n";
      }
      sp::emit(rec, out, "predictions_" + who + ".jsonl", rows);
    }
    auto j = sp::to_json(res);
    sp::emit(rec, out, "eval_report.json", dump(j));
    return j;
  }

  auto evidence = sp::ingest_image_artifacts(manifest, o.detections, o.depth, std::nullopt, norm);
  std::vector<sp::Prediction> preds;
  std::vector<std::string> golds;
  std::vector<std::size_t> rows;
  for (const auto& e : evidence) {
    auto i = instance_index(e.instance_id);
    preds.push_back(judge_box(d, i, e, norm, o.tau));
    golds.push_back(d.golds[i]);
    rows.push_back(i);
  }
  std::string lines;
  for (std::size_t k = 0; k < preds.size(); ++k) lines += prediction_row(d, rows[k], preds[k]).dump() + "\n";
  sp::emit(rec, out, "predictions.jsonl", lines);

  auto raw = sp::score_predictions(preds, golds, d.classes);
  json report;
  if (o.impute == "none") report = sp::to_json(raw);
  else if (o.impute == "sampled") report = sp::to_json(sp::impute_sampled(preds, golds, d.classes, o.seed));
  else report = sp::to_json(sp::impute_unrecognized(preds, golds, d.classes));
  report["raw"] = sp::to_json(raw);
  report["impute"] = o.impute;
  report["classes"] = d.classes;
  sp::emit(rec, out, "eval_report.json", dump(report));
  return report;
}

int cmd_eval_images(const ImageEvalOptions& o) {
  fs::path out(o.out_dir);
  sp::DirectoryLock lock(out);
  sp::RunManifestRecord rec;
  rec.command = "eval-images";
  rec.started_at = sp::timestamp_now();
  rec.config = {{"dataset", o.dataset},      {"manifest", o.manifest}, {"mode", o.mode},
                {"detections", o.detections}, {"depth", o.depth},      {"annotations", o.annotations},
                {"labels", o.labels},         {"tau", o.tau},          {"impute", o.impute},
                {"seed", o.seed}};
  auto d = load_dataset(o.dataset);
  rec.dataset_hash = d.hash;
  auto manifest = sp::manifest_from_jsonl(sp::text::read_file(o.manifest), d.ref, "ism", o.manifest);
  auto report = evaluate_images(d, manifest, o, rec, out);
  auto table = sp::report::render_any({{fs::path(o.dataset).stem().string() + " (" + o.mode + ")", report}});
  sp::emit(rec, out, "eval_summary.txt", table);
  std::cout << table;
  rec.finished_at = sp::timestamp_now();
  sp::text::write_file(out / "eval-images.manifest.json", dump(rec.to_json()));
  return 0;
}

// --- probe ---------------------------------------------------------------------

struct ProbeOptions {
  std::string dataset;
  std::string kind = "masked";
  std::string out_dir;
  AdapterOptions adapter;
  std::string candidates;
  std::string template_pattern;
  std::vector<std::string> answers;
  int k = 5;
  std::string images;
  ImageEvalOptions image_eval;
};

sp::FoldAssignment folds_for(const Dataset& d, int k) {
  if (d.kind == DatasetKind::scale) {
    std::vector<sp::ObjectEntity> objects;
    std::set<std::string> seen;
    for (const auto& s : d.scale)
      for (const auto* o : {&s.obj_a, &s.obj_b})
        if (seen.insert(o->name).second) objects.push_back(*o);
    // Listed order within each group is the order of first appearance as obj_a,
    // which the builder emits group by group.
    return sp::split_object_folds(objects, k);
  }
  std::vector<std::string> names;
  if (d.kind == DatasetKind::position)
    for (const auto& s : d.position) names.push_back(s.object);
  else
    for (const auto& g : d.generalized) names.push_back(g.base.object);
  return sp::split_object_folds(names, k);
}

template <class Instance>
json masked_probe(const Dataset& d, const std::vector<Instance>& instances, const ProbeOptions& o,
                  const sp::Adapter& adapter, sp::RunManifestRecord& rec, const fs::path& out) {
  sp::PromptTemplate tmpl = d.kind == DatasetKind::scale ? sp::default_masked_scale_template()
                                                         : sp::default_masked_position_template();
  if (!o.template_pattern.empty()) tmpl.pattern = o.template_pattern;
  sp::AnswerSet answers{d.classes};
  if (!o.answers.empty()) answers.answers = o.answers;
  sp::IngestLog ingest;
  json raw_pool = o.candidates.empty() ? json::object() : json::parse(sp::text::read_file(o.candidates));
  auto pool = sp::load_candidate_pool(raw_pool, tmpl, answers, &ingest);

  sp::ProbeLog log;
  auto grid = sp::probe_candidate_grid<Instance>(instances, pool, d.classes, adapter, d.ref, &log);

  std::vector<sp::CVItem> items;
  for (const auto& inst : instances) items.push_back(sp::cv_item(inst));
  auto folds = folds_for(d, o.k);
  sp::CVEvalFn eval = [&](std::size_t p, std::size_t a, std::span<const std::size_t> subset) {
    std::vector<sp::Prediction> preds;
    for (auto i : subset) preds.push_back(grid[p][a][i]);
    return preds;
  };
  auto cv = sp::run_cross_validated_selection(pool, folds, items, d.classes, eval);

  const auto& original = grid[0][0];
  sp::emit(rec, out, "predictions.jsonl", predictions_jsonl(d, original));
  auto eval_report = sp::to_json(sp::score_predictions(original, d.golds, d.classes));
  eval_report["classes"] = d.classes;
  sp::emit(rec, out, "eval_report.json", dump(eval_report));

  auto cv_json = sp::to_json(cv);
  cv_json["k"] = o.k;
  cv_json["pool"] = sp::to_json(pool);
  cv_json["ingest_log"] = ingest.entries;
  cv_json["folds"] = folds.folds();
  sp::emit(rec, out, "cv_report.json", dump(cv_json));

  rec.extra["manifest_hash"] = log.manifest_hash;
  rec.extra["scoring_mode"] = log.scoring_mode ? json(*log.scoring_mode) : json(nullptr);
  rec.extra["failed_requests"] = log.failed;
  return {{"cv", cv_json}, {"eval", eval_report}};
}

template <class Instance>
json ism_probe(const Dataset& d, const std::vector<Instance>& instances, const ProbeOptions& o,
               const sp::Adapter& adapter, sp::RunManifestRecord& rec, const fs::path& out) {
  auto manifest = sp::emit_ism_manifest<Instance>(instances, d.ref);
  sp::emit(rec, out, "ism_manifest.jsonl", manifest.to_jsonl());
  auto ex = adapter(manifest);
  auto responses = sp::collect_responses(manifest, ex.responses);
  json images = json::object();
  std::size_t produced = 0;
  for (const auto& r : manifest.requests) {
    auto it = responses.find(r.id);
    if (it != responses.end() && it->second.status == sp::ResponseStatus::ok && it->second.image_path) {
      images[r.instance_id] = {{"request_id", r.id}, {"image_path", *it->second.image_path}};
      ++produced;
    } else {
      images[r.instance_id] = {{"request_id", r.id}, {"image_path", nullptr}};
    }
  }
  sp::emit(rec, out, "images.json", dump(images));
  rec.extra["manifest_hash"] = manifest.hash();
  rec.extra["images_produced"] = produced;
  json result{{"images", produced}, {"requests", manifest.requests.size()}};
  if (!o.image_eval.detections.empty() || !o.image_eval.annotations.empty())
    result["eval"] = evaluate_images(d, manifest, o.image_eval, rec, out);
  return result;
}

json qa_probe(const Dataset& d, const ProbeOptions& o, const sp::Adapter& adapter, sp::RunManifestRecord& rec,
              const fs::path& out) {
  std::map<std::string, std::string> refs;
  if (!o.images.empty()) {
    for (const auto& [iid, entry] : json::parse(sp::text::read_file(o.images)).items()) {
      if (entry.is_string()) refs[iid] = entry.get<std::string>();
      else if (entry.is_object() && entry.contains("image_path") && entry["image_path"].is_string())
        refs[iid] = entry["image_path"].get<std::string>();
    }
  }
  sp::ProbeLog log;
  auto preds = sp::run_qa_probe(d.qa, adapter, d.ref, refs.empty() ? nullptr : &refs, &log);
  sp::emit(rec, out, "predictions.jsonl", predictions_jsonl(d, preds));
  auto report = sp::to_json(sp::score_predictions(preds, d.golds, d.classes));
  report["classes"] = d.classes;
  sp::emit(rec, out, "eval_report.json", dump(report));
  rec.extra["manifest_hash"] = log.manifest_hash;
  rec.extra["scoring_mode"] = log.scoring_mode ? json(*log.scoring_mode) : json(nullptr);
  rec.extra["failed_requests"] = log.failed;
  return {{"eval", report}};
}

int cmd_probe(const ProbeOptions& o) {
  fs::path out(o.out_dir);
  sp::DirectoryLock lock(out);
  ScratchDir scratch;
  sp::RunManifestRecord rec;
  rec.command = "probe";
  rec.started_at = sp::timestamp_now();
  auto d = load_dataset(o.dataset);
  rec.dataset_hash = d.hash;
  rec.config = adapter_config(o.adapter);
  rec.config.update({{"dataset", o.dataset},   {"kind", o.kind},         {"candidates", o.candidates},
                     {"template", o.template_pattern}, {"answers", o.answers}, {"k", o.k},
                     {"images", o.images}});
  auto adapter = make_adapter(o.adapter, scratch);

  json result;
  if (o.kind == "qa") {
    if (d.kind != DatasetKind::qa) throw sp::ValidationError("--kind qa needs a question dataset");
    result = qa_probe(d, o, adapter, rec, out);
  } else if (d.kind == DatasetKind::qa) {
    throw sp::ValidationError("question datasets only support --kind qa");
  } else if (o.kind == "masked") {
    if (d.kind == DatasetKind::scale) result = masked_probe(d, d.scale, o, adapter, rec, out);
    else if (d.kind == DatasetKind::position) result = masked_probe(d, d.position, o, adapter, rec, out);
    else result = masked_probe(d, d.generalized, o, adapter, rec, out);
  } else {
    if (d.kind == DatasetKind::scale) result = ism_probe(d, d.scale, o, adapter, rec, out);
    else if (d.kind == DatasetKind::position) result = ism_probe(d, d.position, o, adapter, rec, out);
    else result = ism_probe(d, d.generalized, o, adapter, rec, out);
    rec.config["image_eval"] = {{"detections", o.image_eval.detections}, {"depth", o.image_eval.depth},
                                {"annotations", o.image_eval.annotations}, {"labels", o.image_eval.labels},
                                {"mode", o.image_eval.mode}, {"tau", o.image_eval.tau},
                                {"impute", o.image_eval.impute}, {"seed", o.image_eval.seed}};
  }

  std::string name = fs::path(o.dataset).stem().string() + " (" + o.kind + ")";
  std::vector<std::pair<std::string, json>> rows;
  if (result.contains("cv")) rows.emplace_back(name, result["cv"]);
  if (result.contains("eval")) rows.emplace_back(name, result["eval"]);
  std::string table = sp::report::render_any(rows);
  if (o.kind == "ism")
    table += std::to_string(result["images"].get<std::size_t>()) + " of " +
             std::to_string(result["requests"].get<std::size_t>()) + " images produced\n";
  sp::emit(rec, out, "probe_summary.txt", table);
  std::cout << table;
  rec.finished_at = sp::timestamp_now();
  sp::text::write_file(out / "probe.manifest.json", dump(rec.to_json()));
  return 0;
}

// --- analyze -------------------------------------------------------------------

std::pair<std::string, fs::path> named_path(const std::string& arg) {
  auto eq = arg.find('=');
  if (eq == std::string::npos) return {fs::path(arg).parent_path().filename().string() + "/" + fs::path(arg).stem().string(), arg};
  return {arg.substr(0, eq), arg.substr(eq + 1)};
}

std::optional<sp::Comparison> comparison_of(const std::string& label) {
  if (label == "larger" || label == "taller") return sp::Comparison::greater;
  if (label == "smaller" || label == "shorter") return sp::Comparison::smaller;
  throw sp::ValidationError("label '" + label + "' is not a scale comparison");
}

int cmd_analyze(const std::vector<std::string>& inputs, const std::string& out_dir) {
  fs::path out(out_dir);
  sp::DirectoryLock lock(out);
  sp::RunManifestRecord rec;
  rec.command = "analyze";
  rec.started_at = sp::timestamp_now();
  rec.config = {{"predictions", inputs}};
  std::string digest;
  json consistency = json::object(), ratios = json::object();
  std::vector<std::pair<std::string, json>> rows;
  std::string ratio_text;
  for (const auto& arg : inputs) {
    auto [name, path] = named_path(arg);
    auto content = sp::text::read_file(path);
    digest += sp::sha256_hex(content);
    sp::PairTable table;
    std::vector<std::string> objects;
    std::set<std::string> seen;
    for (const auto& j : sp::parse_jsonl(content, path.string())) {
      if (!j.contains("obj_a") || !j.contains("obj_b"))
        throw sp::ValidationError("predictions '" + path.string() + "' carry no object pairs");
      auto a = j["obj_a"].get<std::string>(), b = j["obj_b"].get<std::string>();
      for (const auto& o : {a, b})
        if (seen.insert(o).second) objects.push_back(o);
      auto p = sp::prediction_from_json(j);
      table[{a, b}] = p.recognized ? comparison_of(p.label) : std::nullopt;
    }
    auto cr = sp::consistency_report(table);
    if (cr.pairs_missing_reverse)
      std::cerr << "warning: " << name << ": " << cr.pairs_missing_reverse
                << " pairs lack their reverse order and are left out of the symmetry denominator\n";
    auto report = sp::to_json(cr);
    consistency[name] = report;
    rows.emplace_back(name, report);
    auto rt = sp::to_json(sp::per_object_ratios(table, objects));
    ratios[name] = rt;
    ratio_text += "\n" + name + "\n" + sp::report::ratio_table(rt);
  }
  rec.dataset_hash = sp::sha256_hex(digest);
  sp::emit(rec, out, "consistency.json", dump(consistency));
  sp::emit(rec, out, "object_ratios.json", dump(ratios));
  auto text = sp::report::consistency_table(rows) + ratio_text;
  sp::emit(rec, out, "analyze_summary.txt", text);
  std::cout << text;
  rec.finished_at = sp::timestamp_now();
  sp::text::write_file(out / "analyze.manifest.json", dump(rec.to_json()));
  return 0;
}

// --- report --------------------------------------------------------------------

int cmd_report(const std::vector<std::string>& inputs, const std::string& out_file) {
  sp::RunManifestRecord rec;
  rec.command = "report";
  rec.started_at = sp::timestamp_now();
  rec.config = {{"inputs", inputs}, {"out", out_file}};
  std::string digest;
  std::vector<std::pair<std::string, json>> rows;
  for (const auto& arg : inputs) {
    auto [name, path] = named_path(arg);
    auto content = sp::text::read_file(path);
    digest += sp::sha256_hex(content);
    auto j = json::parse(content);
    bool keyed = j.is_object() && !j.empty();
    for (const auto& [_, v] : j.items()) keyed = keyed && v.is_object() && v.contains("symmetry_pct");
    if (keyed) {
      for (const auto& [k, v] : j.items()) rows.emplace_back(k, v);
    } else {
      rows.emplace_back(name, j);
    }
  }
  auto text = sp::report::render_any(rows);
  if (text.empty()) throw sp::ValidationError("no recognizable report among the inputs");
  std::cout << text;
  if (!out_file.empty()) {
    fs::path out(out_file);
    sp::emit(rec, out.parent_path().empty() ? fs::path(".") : out.parent_path(), out.filename().string(), text);
    rec.dataset_hash = sp::sha256_hex(digest);
    rec.finished_at = sp::timestamp_now();
    sp::text::write_file(fs::path(out_file + ".manifest.json"), dump(rec.to_json()));
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spatial commonsense probing toolkit"};
  app.set_version_flag("--version", std::string(sp::kToolVersion));
  app.set_config("--config", "", "read options from a TOML/INI file");
  app.require_subcommand(1);

  BuildOptions build;
  auto* b = app.add_subcommand("build", "build benchmark datasets from the data tables");
  b->add_option("--data-dir", build.data_dir, "directory with the object, scenario and lexicon tables")->capture_default_str();
  b->add_option("--out-dir", build.out_dir)->required();
  b->add_option("--task", build.task)
      ->check(CLI::IsMember({"all", "size", "height", "position", "position_generalized", "qa"}))
      ->capture_default_str();
  b->add_option("--corpus", build.corpus, "reference corpus for the occurrence filter");
  b->add_option("--lexicon", build.lexicon, "subterm lexicon");

  ProbeOptions probe;
  auto* p = app.add_subcommand("probe", "probe a model through an adapter");
  p->add_option("--dataset", probe.dataset)->required()->check(CLI::ExistingFile);
  p->add_option("--kind", probe.kind, "masked, ism (ism_box / ism_human pick the image evaluation mode) or qa")
      ->check(CLI::IsMember({"masked", "ism", "ism_box", "ism_human", "qa"}))
      ->capture_default_str();
  p->add_option("--out-dir", probe.out_dir)->required();
  p->add_option("--adapter", probe.adapter.command, "adapter command; invoked with --requests/--responses");
  p->add_option("--cache-dir", probe.adapter.cache_dir, std::string("response cache root (default $") + sp::kCacheEnv + ")");
  p->add_option("--adapter-id", probe.adapter.adapter_id,
                 "cache key naming the model (default: hash of the adapter command)");
  p->add_flag("--no-cache", probe.adapter.no_cache);
  p->add_option("--candidates", probe.candidates, "candidate pool JSON {prompts, answers}");
  p->add_option("--template", probe.template_pattern, "override the original prompt template");
  p->add_option("--answers", probe.answers, "override the original answer set")->delimiter(',');
  p->add_option("--k", probe.k, "object-disjoint folds")->check(CLI::Range(2, 1000))->capture_default_str();
  p->add_option("--images", probe.images, "images.json from an ism probe, for question answering with images");
  p->add_option("--detections", probe.image_eval.detections);
  p->add_option("--depth", probe.image_eval.depth);
  p->add_option("--annotations", probe.image_eval.annotations);
  p->add_option("--labels", probe.image_eval.labels, "label table (kind, from, to)");
  p->add_option("--mode", probe.image_eval.mode)->check(CLI::IsMember({"box", "human"}));
  p->add_option("--tau", probe.image_eval.tau)->check(CLI::Range(1e-9, 1.0));
  p->add_option("--impute", probe.image_eval.impute)->check(CLI::IsMember({"expected", "sampled", "none"}));
  p->add_option("--seed", probe.image_eval.seed);

  ImageEvalOptions ev;
  auto* e = app.add_subcommand("eval-images", "score generated images by box geometry or human labels");
  e->add_option("--dataset", ev.dataset)->required()->check(CLI::ExistingFile);
  e->add_option("--manifest", ev.manifest, "ism_manifest.jsonl from the probe run")->required()->check(CLI::ExistingFile);
  e->add_option("--out-dir", ev.out_dir)->required();
  e->add_option("--mode", ev.mode)->check(CLI::IsMember({"box", "human"}))->capture_default_str();
  e->add_option("--detections", ev.detections, "directory of <id>.json detection records");
  e->add_option("--depth", ev.depth, "directory of <id>.f32 depth maps with <id>.json sidecars");
  e->add_option("--annotations", ev.annotations, "human annotation JSONL");
  e->add_option("--labels", ev.labels, "label table (kind, from, to)");
  e->add_option("--tau", ev.tau, "coverage needed for inside")->check(CLI::Range(1e-9, 1.0))->capture_default_str();
  e->add_option("--impute", ev.impute)->check(CLI::IsMember({"expected", "sampled", "none"}))->capture_default_str();
  e->add_option("--seed", ev.seed, "seed for sampled imputation")->capture_default_str();

  std::vector<std::string> analyze_inputs;
  std::string analyze_out;
  auto* a = app.add_subcommand("analyze", "symmetry/transitivity consistency and per-object ratios");
  a->add_option("--predictions", analyze_inputs, "[name=]predictions.jsonl")->required();
  a->add_option("--out-dir", analyze_out)->required();

  std::vector<std::string> report_inputs;
  std::string report_out;
  auto* r = app.add_subcommand("report", "render result tables");
  r->add_option("--input", report_inputs, "[name=]report.json")->required();
  r->add_option("--out", report_out, "also write the table to this file");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*b) return cmd_build(build);
    if (*p) {
      if (probe.kind == "ism_box" || probe.kind == "ism_human") {
        probe.image_eval.mode = probe.kind == "ism_box" ? "box" : "human";
        probe.kind = "ism";
      }
      return cmd_probe(probe);
    }
    if (*e) return cmd_eval_images(ev);
    if (*a) return cmd_analyze(analyze_inputs, analyze_out);
    if (*r) return cmd_report(report_inputs, report_out);
  } catch (const sp::AdapterError& ex) {
    std::cerr << "spatialprobe: adapter error on request " << ex.id() << ": " << ex.what() << "\n";
    return 3;
  } catch (const std::exception& ex) {
    std::cerr << "spatialprobe: " << ex.what() << "\n";
    return 1;
  }
  return 2;
}
