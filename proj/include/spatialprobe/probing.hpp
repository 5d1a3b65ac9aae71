#pragma once

// Probe orchestration over the adapter file-exchange contract:
//   <adapter-cmd> --requests <requests.jsonl> --responses <responses.jsonl>
// Exit code 0 means the response file is complete. Responses are cached under
// <cache-root>/<manifest-hash>/ so runs replay without the adapter.

#include <sys/wait.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
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
#include "spatialprobe/geometry.hpp"
#include "spatialprobe/hash.hpp"
#include "spatialprobe/metrics.hpp"
#include "spatialprobe/prompts.hpp"
#include "spatialprobe/text.hpp"
#include "spatialprobe/types.hpp"

namespace spatialprobe {

enum class AdapterMode { masked_score, synthesize, vqa };

inline std::string to_string(AdapterMode m) {
  switch (m) {
    case AdapterMode::masked_score: return "masked_score";
    case AdapterMode::synthesize: return "synthesize";
    case AdapterMode::vqa: return "vqa";
  }
  return "?";
}
inline AdapterMode parse_adapter_mode(std::string_view s) {
  if (s == "masked_score") return AdapterMode::masked_score;
  if (s == "synthesize") return AdapterMode::synthesize;
  if (s == "vqa") return AdapterMode::vqa;
  throw ValidationError("unknown adapter mode '" + std::string(s) + "'");
}

struct AdapterRequest {
  std::string id;
  AdapterMode mode = AdapterMode::masked_score;
  std::string prompt;
  std::optional<AnswerSet> answers;
  std::optional<std::string> image_ref;    // vqa input image
  std::optional<std::string> output_path;  // where a synthesize adapter writes its image
  std::string instance_id;
};

enum class ResponseStatus { ok, failed };

struct AdapterResponse {
  std::string id;
  std::map<std::string, double> scores;
  std::optional<std::string> image_path;
  ResponseStatus status = ResponseStatus::ok;
};

inline nlohmann::json to_json(const AdapterRequest& r) {
  nlohmann::json j{{"id", r.id}, {"mode", to_string(r.mode)}, {"prompt", r.prompt}, {"instance_id", r.instance_id}};
  if (r.answers) j["answers"] = r.answers->answers;
  if (r.image_ref) j["image_ref"] = *r.image_ref;
  if (r.output_path) j["output_path"] = *r.output_path;
  return j;
}

inline AdapterRequest request_from_json(const nlohmann::json& j) {
  AdapterRequest r;
  r.id = j.at("id").get<std::string>();
  r.mode = parse_adapter_mode(j.at("mode").get<std::string>());
  r.prompt = j.at("prompt").get<std::string>();
  r.instance_id = j.value("instance_id", std::string());
  if (j.contains("answers")) r.answers = AnswerSet{j["answers"].get<std::vector<std::string>>()};
  if (j.contains("image_ref")) r.image_ref = j["image_ref"].get<std::string>();
  if (j.contains("output_path")) r.output_path = j["output_path"].get<std::string>();
  return r;
}

inline nlohmann::json to_json(const AdapterResponse& r) {
  nlohmann::json j{{"id", r.id}, {"status", r.status == ResponseStatus::ok ? "ok" : "failed"}};
  if (!r.scores.empty()) j["scores"] = r.scores;
  if (r.image_path) j["image_path"] = *r.image_path;
  return j;
}

inline AdapterResponse response_from_json(const nlohmann::json& j) {
  AdapterResponse r;
  r.id = j.at("id").get<std::string>();
  auto status = j.value("status", std::string("ok"));
  if (status != "ok" && status != "failed") throw AdapterError(r.id, "unknown status '" + status + "'");
  r.status = status == "ok" ? ResponseStatus::ok : ResponseStatus::failed;
  if (j.contains("scores")) {
    for (const auto& [answer, v] : j["scores"].items()) {
      if (!v.is_number()) throw AdapterError(r.id, "non-numeric score for '" + answer + "'");
      r.scores[answer] = v.get<double>();
    }
  }
  if (j.contains("image_path")) r.image_path = j["image_path"].get<std::string>();
  return r;
}

// --- manifests ---------------------------------------------------------------

struct ProbeManifest {
  std::string dataset_ref;
  std::string template_ref;
  std::vector<AdapterRequest> requests;

  /// One request per line, keys sorted; identical inputs give identical bytes.
  std::string to_jsonl() const {
    std::string out;
    for (const auto& r : requests) out += to_json(r).dump() + "\n";
    return out;
  }
  std::string hash() const { return sha256_hex(dataset_ref + "\n" + template_ref + "\n" + to_jsonl()); }

  void check_unique_ids() const {
    std::set<std::string> ids;
    for (const auto& r : requests)
      if (!ids.insert(r.id).second) throw ValidationError("duplicate request id '" + r.id + "' in manifest");
  }
};

inline std::string request_id(const std::string& dataset_ref, const std::string& instance_id,
                              const std::string& prompt = {}, const AnswerSet* answers = nullptr) {
  std::string key = dataset_ref + "\n" + instance_id;
  if (!prompt.empty()) key += "\n" + prompt;
  if (answers) key += "\n" + text::join(answers->answers, "\x1f");
  return short_hash(key);
}

// --- adapters ----------------------------------------------------------------

struct AdapterExchange {
  std::vector<AdapterResponse> responses;
  std::optional<std::string> scoring_mode;
  bool replayed = false;
};

/// Anything that turns a manifest into responses: a child process, a cache, or a test double.
using Adapter = std::function<AdapterExchange(const ProbeManifest&)>;

inline AdapterExchange parse_response_file(std::string_view content, const std::string& source) {
  AdapterExchange ex;
  for (const auto& j : parse_jsonl(content, source)) {
    if (!j.contains("id")) {
      // Header line: {"scoring_mode": ..., ...}
      if (j.contains("scoring_mode")) ex.scoring_mode = j["scoring_mode"].get<std::string>();
      continue;
    }
    ex.responses.push_back(response_from_json(j));
  }
  return ex;
}

inline std::string shell_quote(const std::string& s) {
  std::string out = "'";
  for (char c : s) {
    if (c == '\'') out += "'\\''";
    else out += c;
  }
  return out + "'";
}

/// Runs an adapter command as a child process, with an optional response cache at
/// <cache_root>/<manifest hash>/<adapter key>/responses.jsonl. The adapter key tells
/// models apart; it defaults to a hash of the command line. A failed invocation is
/// retried once before giving up.
class ProcessAdapter {
 public:
  ProcessAdapter(std::string command, std::filesystem::path work_dir, std::filesystem::path cache_root = {},
                 std::string adapter_key = {})
      : command_(std::move(command)),
        work_dir_(std::move(work_dir)),
        cache_root_(std::move(cache_root)),
        key_(adapter_key.empty() ? short_hash(command_) : std::move(adapter_key)) {}

  const std::string& adapter_key() const { return key_; }

  std::filesystem::path cache_file(const ProbeManifest& m) const {
    return cache_root_.empty() ? std::filesystem::path() : cache_root_ / m.hash() / key_ / "responses.jsonl";
  }

  AdapterExchange operator()(const ProbeManifest& manifest) const {
    auto cached = cache_file(manifest);
    if (!cached.empty() && std::filesystem::exists(cached)) {
      auto ex = parse_response_file(text::read_file(cached), cached.string());
      ex.replayed = true;
      return ex;
    }
    if (command_.empty())
      throw Error("no adapter command configured and no cached responses for manifest " + manifest.hash());

    auto key = manifest.hash().substr(0, 16);
    auto req_path = work_dir_ / ("requests-" + key + ".jsonl");
    auto resp_path = work_dir_ / ("responses-" + key + ".jsonl");
    text::write_file(req_path, manifest.to_jsonl());
    auto cmd = command_ + " --requests " + shell_quote(req_path.string()) + " --responses " +
               shell_quote(resp_path.string());
    int status = -1;
    for (int attempt = 0; attempt < 2; ++attempt) {
      std::filesystem::remove(resp_path);
      int rc = std::system(cmd.c_str());
      status = rc != -1 && WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
      if (status == 0 && std::filesystem::exists(resp_path)) break;
    }
    if (status != 0 || !std::filesystem::exists(resp_path))
      throw Error("adapter command failed (exit " + std::to_string(status) + "): " + command_);

    auto content = text::read_file(resp_path);
    auto ex = parse_response_file(content, resp_path.string());
    if (!cached.empty()) {
      text::write_file(cached.parent_path() / "requests.jsonl", manifest.to_jsonl());
      text::write_file(cached, content);
    }
    return ex;
  }

 private:
  std::string command_;
  std::filesystem::path work_dir_;
  std::filesystem::path cache_root_;
  std::string key_;
};

/// Validates responses against the manifest and indexes them by id. Unknown or
/// duplicate ids, non-finite scores and missing answer scores on ok responses are
/// protocol violations. Ids without a response are simply absent.
inline std::map<std::string, AdapterResponse> collect_responses(const ProbeManifest& manifest,
                                                                 const std::vector<AdapterResponse>& responses) {
  std::map<std::string, const AdapterRequest*> by_id;
  for (const auto& r : manifest.requests) by_id[r.id] = &r;
  std::map<std::string, AdapterResponse> out;
  for (const auto& resp : responses) {
    auto it = by_id.find(resp.id);
    if (it == by_id.end()) throw AdapterError(resp.id, "response for unknown request");
    if (out.count(resp.id)) throw AdapterError(resp.id, "duplicate response");
    for (const auto& [answer, v] : resp.scores)
      if (!std::isfinite(v)) throw AdapterError(resp.id, "non-finite score for '" + answer + "'");
    const auto& req = *it->second;
    if (resp.status == ResponseStatus::ok && req.answers) {
      for (const auto& a : req.answers->answers)
        if (!resp.scores.count(a)) throw AdapterError(resp.id, "missing score for answer '" + a + "'");
    }
    out.emplace(resp.id, resp);
  }
  return out;
}

// --- decisions ---------------------------------------------------------------

/// Argmax over answer scores; exact ties go to the lowest answer index and set
/// `tie`. `classes`, when given, maps the winning index to its canonical label.
inline Prediction decide_answer(const AdapterResponse& response, const AnswerSet& answers,
                                const std::vector<std::string>* classes = nullptr) {
  if (response.status != ResponseStatus::ok) throw AdapterError(response.id, "response not ok");
  std::size_t best = 0;
  double best_score = 0.0;
  bool tie = false;
  for (std::size_t i = 0; i < answers.size(); ++i) {
    auto it = response.scores.find(answers[i]);
    if (it == response.scores.end()) throw AdapterError(response.id, "missing score for answer '" + answers[i] + "'");
    if (i == 0 || it->second > best_score) {
      best = i;
      best_score = it->second;
      tie = false;
    } else if (it->second == best_score) {
      tie = true;
    }
  }
  Prediction p;
  p.instance_id = response.id;
  p.answer = answers[best];
  p.label = classes ? (*classes)[best] : p.answer;
  p.provenance = Provenance::model;
  p.recognized = true;
  p.tie = tie;
  return p;
}

inline Prediction unrecognized_prediction(const std::string& instance_id) {
  return Prediction{instance_id, "", "", Provenance::model, false, false};
}

struct ProbeLog {
  std::optional<std::string> scoring_mode;
  bool replayed = false;
  std::size_t failed = 0;
  std::string manifest_hash;
};

/// Turns the responses of one exchange into predictions, one per request, in
/// manifest order. `answers_of` and `classes_of` index by request position.
inline std::vector<Prediction> predictions_from_exchange(const ProbeManifest& manifest, const AdapterExchange& ex,
                                                         const std::vector<std::string>& classes,
                                                         ProbeLog* log = nullptr) {
  auto by_id = collect_responses(manifest, ex.responses);
  std::vector<Prediction> out;
  out.reserve(manifest.requests.size());
  for (const auto& req : manifest.requests) {
    auto it = by_id.find(req.id);
    if (it == by_id.end() || it->second.status != ResponseStatus::ok) {
      out.push_back(unrecognized_prediction(req.instance_id));
      if (log) ++log->failed;
      continue;
    }
    auto p = decide_answer(it->second, *req.answers, classes.empty() ? nullptr : &classes);
    p.instance_id = req.instance_id;
    out.push_back(std::move(p));
  }
  if (log) {
    log->scoring_mode = ex.scoring_mode;
    log->replayed = ex.replayed;
    log->manifest_hash = manifest.hash();
  }
  return out;
}

template <class Instance>
std::string instance_id_of(const Instance& inst) {
  if constexpr (std::is_same_v<Instance, QAInstance>) return inst.id;
  else return inst.id();
}

/// Masked-word probing of every instance with one template and answer set.
template <class Instance>
std::vector<Prediction> run_masked_probe(std::span<const Instance> instances, const PromptTemplate& tmpl,
                                         const AnswerSet& answers, const std::vector<std::string>& classes,
                                         const Adapter& adapter, const std::string& dataset_ref,
                                         ProbeLog* log = nullptr) {
  ProbeManifest m{dataset_ref, tmpl.pattern, {}};
  for (const auto& inst : instances) {
    auto prompt = render_masked_prompt(tmpl, inst);
    auto iid = instance_id_of(inst);
    m.requests.push_back({request_id(dataset_ref, iid, prompt, &answers), AdapterMode::masked_score, prompt, answers,
                          std::nullopt, std::nullopt, iid});
  }
  m.check_unique_ids();
  return predictions_from_exchange(m, adapter(m), classes, log);
}

/// Predictions for every (prompt, answer set) candidate of a pool, gathered with a
/// single adapter exchange. Indexed [prompt][answer][instance].
using CandidateGrid = std::vector<std::vector<std::vector<Prediction>>>;

template <class Instance>
CandidateGrid probe_candidate_grid(std::span<const Instance> instances, const CandidatePool& pool,
                                   const std::vector<std::string>& classes, const Adapter& adapter,
                                   const std::string& dataset_ref, ProbeLog* log = nullptr) {
  ProbeManifest m{dataset_ref, "candidate-pool:" + to_json(pool).dump(), {}};
  for (const auto& tmpl : pool.prompts) {
    for (const auto& answers : pool.answer_sets) {
      for (const auto& inst : instances) {
        auto prompt = render_masked_prompt(tmpl, inst);
        auto iid = instance_id_of(inst);
        m.requests.push_back({request_id(dataset_ref, iid, prompt, &answers), AdapterMode::masked_score, prompt,
                              answers, std::nullopt, std::nullopt, iid});
      }
    }
  }
  m.check_unique_ids();
  auto flat = predictions_from_exchange(m, adapter(m), classes, log);
  CandidateGrid grid(pool.prompts.size(), std::vector<std::vector<Prediction>>(pool.answer_sets.size()));
  std::size_t k = 0;
  for (auto& row : grid)
    for (auto& cell : row)
      for (std::size_t i = 0; i < instances.size(); ++i) cell.push_back(flat[k++]);
  return grid;
}

/// Synthesize requests, ids = hash(dataset id, instance id); images go to images/<id>.png.
template <class Instance>
ProbeManifest emit_ism_manifest(std::span<const Instance> instances, const std::string& dataset_ref) {
  ProbeManifest m{dataset_ref, "ism", {}};
  for (const auto& inst : instances) {
    auto iid = instance_id_of(inst);
    auto id = request_id(dataset_ref, iid);
    m.requests.push_back({id, AdapterMode::synthesize, render_ism_prompt(inst), std::nullopt, std::nullopt,
                          "images/" + id + ".png", iid});
  }
  m.check_unique_ids();
  return m;
}

inline ProbeManifest manifest_from_jsonl(std::string_view content, const std::string& dataset_ref,
                                         const std::string& template_ref, const std::string& source = "manifest") {
  ProbeManifest m{dataset_ref, template_ref, {}};
  for (const auto& j : parse_jsonl(content, source)) m.requests.push_back(request_from_json(j));
  m.check_unique_ids();
  return m;
}

// --- image evidence ------------------------------------------------------------

struct EvidenceBundle {
  std::string request_id;
  std::string instance_id;
  std::optional<DetectionRecord> detection;
  std::optional<DepthMap> depth;
  std::map<std::string, std::optional<std::string>> human;  // annotator -> label
  bool recognized = false;  // detection and depth both present
};

/// Reads `{"image_id", "annotator", "label"}` rows; a null label means the annotator
/// could not recognize the objects.
inline HumanAnnotationSet load_annotations(const std::filesystem::path& path) {
  HumanAnnotationSet set;
  for (const auto& j : read_jsonl(path)) {
    try {
      std::optional<std::string> label;
      if (!j.at("label").is_null()) label = j.at("label").get<std::string>();
      set.judgments[{j.at("image_id").get<std::string>(), j.at("annotator").get<std::string>()}] = label;
    } catch (const nlohmann::json::exception& e) {
      throw IoError("malformed annotation file '" + path.string() + "': " + e.what());
    }
  }
  return set;
}

/// Joins `<detection_dir>/<id>.json` and `<depth_dir>/<id>.f32` (+ `<id>.json` sidecar)
/// per request. Missing files leave the bundle unrecognized; malformed files abort.
inline std::vector<EvidenceBundle> ingest_image_artifacts(const ProbeManifest& manifest,
                                                          const std::filesystem::path& detection_dir,
                                                          const std::filesystem::path& depth_dir,
                                                          const std::optional<std::filesystem::path>& annotation_file = {},
                                                          const LabelNormalizer& norm = {}) {
  std::optional<HumanAnnotationSet> ann;
  if (annotation_file) ann = load_annotations(*annotation_file);
  std::vector<EvidenceBundle> out;
  for (const auto& req : manifest.requests) {
    EvidenceBundle e;
    e.request_id = req.id;
    e.instance_id = req.instance_id;
    auto det_path = detection_dir / (req.id + ".json");
    auto raw_path = depth_dir / (req.id + ".f32");
    auto side_path = depth_dir / (req.id + ".json");
    if (!detection_dir.empty() && std::filesystem::exists(det_path)) {
      e.detection = load_detection_record(det_path);
    }
    if (!depth_dir.empty() && std::filesystem::exists(raw_path) && std::filesystem::exists(side_path)) {
      e.depth = load_depth_map(raw_path, side_path);
    }
    if (e.detection && e.depth) {
      if (e.depth->width() != e.detection->image_width || e.depth->height() != e.detection->image_height)
        throw IoError("depth map '" + raw_path.string() + "' is " + std::to_string(e.depth->width()) + "x" +
                      std::to_string(e.depth->height()) + " but detection '" + det_path.string() + "' declares " +
                      std::to_string(e.detection->image_width) + "x" + std::to_string(e.detection->image_height));
      e.detection->normalize(norm);
      e.recognized = true;
    }
    if (ann) {
      for (const auto& [key, label] : ann->judgments)
        if (key.first == req.id) e.human[key.second] = label;
    }
    out.push_back(std::move(e));
  }
  return out;
}

// --- question answering --------------------------------------------------------

inline std::string qa_prompt(const QAInstance& q) { return q.context ? *q.context + " " + q.question : q.question; }

/// Yes/no probing; `image_refs` maps QA instance ids to images from a prior synthesize
/// pass. Scores for anything other than yes/no are an error.
inline std::vector<Prediction> run_qa_probe(std::span<const QAInstance> questions, const Adapter& adapter,
                                            const std::string& dataset_ref,
                                            const std::map<std::string, std::string>* image_refs = nullptr,
                                            ProbeLog* log = nullptr) {
  AnswerSet yn{yes_no_classes()};
  ProbeManifest m{dataset_ref, "qa", {}};
  for (const auto& q : questions) {
    AdapterRequest r{request_id(dataset_ref, q.id), AdapterMode::vqa, qa_prompt(q), yn, std::nullopt, std::nullopt, q.id};
    if (image_refs) {
      if (auto it = image_refs->find(q.id); it != image_refs->end()) r.image_ref = it->second;
    }
    m.requests.push_back(std::move(r));
  }
  m.check_unique_ids();
  auto ex = adapter(m);
  for (const auto& resp : ex.responses)
    for (const auto& [answer, _] : resp.scores)
      if (answer != "yes" && answer != "no") throw AdapterError(resp.id, "answer '" + answer + "' outside {yes, no}");
  auto classes = yes_no_classes();
  return predictions_from_exchange(m, ex, classes, log);
}

inline nlohmann::json to_json(const Prediction& p) {
  return {{"instance_id", p.instance_id}, {"label", p.recognized ? nlohmann::json(p.label) : nlohmann::json(nullptr)},
          {"answer", p.answer},           {"provenance", to_string(p.provenance)},
          {"recognized", p.recognized},   {"tie", p.tie}};
}

inline Prediction prediction_from_json(const nlohmann::json& j) {
  Prediction p;
  p.instance_id = j.at("instance_id").get<std::string>();
  p.recognized = j.at("recognized").get<bool>();
  if (p.recognized) p.label = j.at("label").get<std::string>();
  p.answer = j.value("answer", std::string());
  p.provenance = parse_provenance(j.value("provenance", std::string("model")));
  p.tie = j.value("tie", false);
  return p;
}

}  // namespace spatialprobe
