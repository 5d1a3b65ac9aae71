#include <gtest/gtest.h>

#include <unistd.h>

#include <filesystem>
#include <limits>
#include <random>

#include "spatialprobe/benchmark.hpp"
#include "spatialprobe/probing.hpp"
#include "spatialprobe/synthetic.hpp"

namespace sp = spatialprobe;
namespace fs = std::filesystem;

namespace {

const std::string kData = SPATIALPROBE_DATA_DIR;

fs::path temp_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("spatialprobe-probe-" + name + "-" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::vector<sp::ScaleInstance> size_dataset() {
  return sp::build_scale_dataset(sp::load_objects(kData + "/objects_size.tsv"), sp::Dimension::size);
}

sp::AdapterResponse response(std::string id, std::map<std::string, double> scores) {
  return {std::move(id), std::move(scores), std::nullopt, sp::ResponseStatus::ok};
}

// Scores the gold answer highest, looking instances up by id.
sp::Adapter oracle_adapter(const std::vector<sp::ScaleInstance>& ds, std::set<std::string> fail = {}) {
  std::map<std::string, std::size_t> gold_index;
  for (const auto& s : ds) gold_index[s.id()] = s.gold == sp::ScaleGold::a_greater ? 0 : 1;
  return [gold_index, fail](const sp::ProbeManifest& m) {
    sp::AdapterExchange ex;
    for (const auto& req : m.requests) {
      if (fail.count(req.instance_id)) {
        ex.responses.push_back({req.id, {}, std::nullopt, sp::ResponseStatus::failed});
        continue;
      }
      std::map<std::string, double> scores;
      for (std::size_t i = 0; i < req.answers->size(); ++i)
        scores[(*req.answers)[i]] = i == gold_index.at(req.instance_id) ? -0.5 : -3.0;
      ex.responses.push_back(response(req.id, scores));
    }
    return ex;
  };
}

sp::Adapter constant_adapter() {
  return [](const sp::ProbeManifest& m) {
    sp::AdapterExchange ex;
    for (const auto& req : m.requests) {
      std::map<std::string, double> scores;
      for (const auto& a : req.answers->answers) scores[a] = -1.0;
      ex.responses.push_back(response(req.id, scores));
    }
    return ex;
  };
}

sp::ProbeManifest two_request_manifest() {
  sp::AnswerSet yn{{"yes", "no"}};
  return {"ds", "t",
          {{"r1", sp::AdapterMode::vqa, "p1", yn, std::nullopt, std::nullopt, "i1"},
           {"r2", sp::AdapterMode::vqa, "p2", yn, std::nullopt, std::nullopt, "i2"}}};
}

}  // namespace

TEST(DecideAnswer, ArgmaxTiesAndScaleInvariance) {
  sp::AnswerSet answers{{"larger", "smaller"}};
  EXPECT_EQ(sp::decide_answer(response("x", {{"larger", -1.2}, {"smaller", -0.3}}), answers).answer, "smaller");
  auto tie = sp::decide_answer(response("x", {{"larger", -1.0}, {"smaller", -1.0}}), answers);
  EXPECT_EQ(tie.answer, "larger");
  EXPECT_TRUE(tie.tie);

  std::vector<std::string> classes{"greater", "less"};
  EXPECT_EQ(sp::decide_answer(response("x", {{"larger", 2.0}, {"smaller", 1.0}}), answers, &classes).label, "greater");

  std::mt19937_64 rng(1);
  sp::AnswerSet four{{"a", "b", "c", "d"}};
  for (int t = 0; t < 500; ++t) {
    std::map<std::string, double> s, scaled, shifted;
    for (const auto& a : four.answers) s[a] = sp::synthetic::uniform(rng, -10, 0);
    double k = sp::synthetic::uniform(rng, 0.1, 10), c = sp::synthetic::uniform(rng, -5, 5);
    for (const auto& [a, v] : s) {
      scaled[a] = v * k;
      shifted[a] = v + c;
    }
    auto base = sp::decide_answer(response("x", s), four).answer;
    EXPECT_EQ(sp::decide_answer(response("x", scaled), four).answer, base);
    EXPECT_EQ(sp::decide_answer(response("x", shifted), four).answer, base);
    auto best = std::max_element(s.begin(), s.end(), [](auto& x, auto& y) { return x.second < y.second; });
    EXPECT_EQ(base, best->first);
  }
}

TEST(DecideAnswer, RejectsFailedOrIncompleteResponses) {
  sp::AnswerSet answers{{"larger", "smaller"}};
  EXPECT_THROW(sp::decide_answer(response("x", {{"larger", -1.0}}), answers), sp::AdapterError);
  sp::AdapterResponse failed{"x", {}, std::nullopt, sp::ResponseStatus::failed};
  EXPECT_THROW(sp::decide_answer(failed, answers), sp::AdapterError);
}

TEST(MaskedProbe, OracleAdapterIsPerfectAndOneFailureIsUnrecognized) {
  auto ds = size_dataset();
  auto tmpl = sp::default_masked_scale_template();
  auto answers = sp::default_answers(sp::Dimension::size);
  auto classes = sp::scale_classes(sp::Dimension::size);
  std::vector<std::string> golds;
  for (const auto& s : ds) golds.push_back(sp::gold_label(s.gold, sp::Dimension::size));

  auto preds = sp::run_masked_probe<sp::ScaleInstance>(ds, tmpl, answers, classes, oracle_adapter(ds), "size");
  ASSERT_EQ(preds.size(), 500u);
  EXPECT_DOUBLE_EQ(sp::plain_accuracy(preds, golds), 1.0);

  sp::ProbeLog log;
  auto failing = oracle_adapter(ds, {ds[7].id()});
  preds = sp::run_masked_probe<sp::ScaleInstance>(ds, tmpl, answers, classes, failing, "size", &log);
  auto rep = sp::score_predictions(preds, golds, classes);
  EXPECT_EQ(rep.recognized, 499u);
  EXPECT_EQ(log.failed, 1u);
  EXPECT_FALSE(preds[7].recognized);
  EXPECT_EQ(preds[7].instance_id, ds[7].id());
}

TEST(MaskedProbe, ConstantAdapterAlwaysPicksTheFirstAnswer) {
  auto ds = size_dataset();
  auto classes = sp::scale_classes(sp::Dimension::size);
  auto preds = sp::run_masked_probe<sp::ScaleInstance>(ds, sp::default_masked_scale_template(),
                                                       sp::default_answers(sp::Dimension::size), classes,
                                                       constant_adapter(), "size");
  std::vector<std::string> golds;
  for (const auto& s : ds) golds.push_back(sp::gold_label(s.gold, sp::Dimension::size));
  for (const auto& p : preds) {
    EXPECT_EQ(p.label, classes[0]);
    EXPECT_TRUE(p.tie);
  }
  auto rep = sp::score_predictions(preds, golds, classes);
  EXPECT_DOUBLE_EQ(rep.accuracy, 0.5);
  EXPECT_DOUBLE_EQ(rep.macro_f1, 1.0 / 3.0);
}

TEST(Manifest, DeterministicAndEmpty) {
  auto ds = size_dataset();
  auto a = sp::emit_ism_manifest<sp::ScaleInstance>(ds, "size@abc");
  auto b = sp::emit_ism_manifest<sp::ScaleInstance>(ds, "size@abc");
  EXPECT_EQ(a.to_jsonl(), b.to_jsonl());
  EXPECT_EQ(a.hash(), b.hash());
  EXPECT_NE(a.hash(), sp::emit_ism_manifest<sp::ScaleInstance>(ds, "size@abd").hash());
  EXPECT_EQ(a.requests[0].output_path, "images/" + a.requests[0].id + ".png");
  EXPECT_EQ(a.requests[0].prompt, "ant and bird");

  std::vector<sp::ScaleInstance> none;
  auto empty = sp::emit_ism_manifest<sp::ScaleInstance>(none, "size");
  EXPECT_TRUE(empty.requests.empty());
  EXPECT_EQ(empty.to_jsonl(), "");

  auto back = sp::manifest_from_jsonl(a.to_jsonl(), a.dataset_ref, a.template_ref);
  EXPECT_EQ(back.hash(), a.hash());
  EXPECT_THROW(sp::manifest_from_jsonl(a.to_jsonl() + a.to_jsonl(), "x", "y"), sp::ValidationError);
}

TEST(Protocol, ViolationsAreRejected) {
  auto m = two_request_manifest();
  EXPECT_THROW(sp::collect_responses(m, {response("zz", {{"yes", 0}, {"no", 0}})}), sp::AdapterError);
  EXPECT_THROW(sp::collect_responses(m, {response("r1", {{"yes", 0}, {"no", 0}}), response("r1", {{"yes", 0}, {"no", 0}})}),
               sp::AdapterError);
  EXPECT_THROW(
      sp::collect_responses(m, {response("r1", {{"yes", std::numeric_limits<double>::quiet_NaN()}, {"no", 0}})}),
      sp::AdapterError);
  EXPECT_THROW(sp::collect_responses(m, {response("r1", {{"yes", 0}})}), sp::AdapterError);
  try {
    sp::collect_responses(m, {response("r2", {{"no", 0}})});
    FAIL();
  } catch (const sp::AdapterError& e) {
    EXPECT_NE(std::string(e.what()).find("r2"), std::string::npos) << e.what();
  }
  // A missing response is not a violation: the instance becomes unrecognized.
  auto got = sp::collect_responses(m, {response("r1", {{"yes", 0}, {"no", -1}})});
  EXPECT_EQ(got.size(), 1u);
}

TEST(Protocol, ResponseFileWithHeader) {
  auto ex = sp::parse_response_file(
      "{\"scoring_mode\":\"pll\",\"adapter\":\"x\"}\n{\"id\":\"r1\",\"scores\":{\"yes\":-1,\"no\":-2}}\n"
      "{\"id\":\"r2\",\"status\":\"failed\"}\n",
      "resp");
  EXPECT_EQ(ex.scoring_mode, "pll");
  ASSERT_EQ(ex.responses.size(), 2u);
  EXPECT_EQ(ex.responses[1].status, sp::ResponseStatus::failed);
  EXPECT_THROW(sp::parse_response_file("{\"id\":\"r\",\"status\":\"maybe\"}\n", "resp"), sp::AdapterError);
  EXPECT_THROW(sp::parse_response_file("{\"id\":\"r\",\"scores\":{\"yes\":\"high\"}}\n", "resp"), sp::AdapterError);
}

TEST(QaProbe, AnswersOutsideYesNoAreRejected) {
  std::vector<sp::PositionScenario> pos{{"man", "car", "washes the car", sp::Relation::beside},
                                        {"man", "car", "drives the car", sp::Relation::inside}};
  auto qa = sp::build_position_qa(pos);
  sp::Adapter bad = [](const sp::ProbeManifest& m) {
    sp::AdapterExchange ex;
    for (const auto& r : m.requests) ex.responses.push_back(response(r.id, {{"yes", 0}, {"no", -1}, {"maybe", 1}}));
    return ex;
  };
  EXPECT_THROW(sp::run_qa_probe(qa, bad, "qa"), sp::AdapterError);

  std::map<std::string, std::string> images{{qa[0].id, "images/a.png"}};
  sp::Adapter check = [&](const sp::ProbeManifest& m) {
    EXPECT_EQ(m.requests[0].image_ref, "images/a.png");
    EXPECT_FALSE(m.requests[1].image_ref);
    EXPECT_EQ(m.requests[0].prompt, "A man washes the car. Is the man beside the car?");
    sp::AdapterExchange ex;
    for (const auto& r : m.requests) ex.responses.push_back(response(r.id, {{"yes", 0}, {"no", -1}}));
    return ex;
  };
  auto preds = sp::run_qa_probe(qa, check, "qa", &images);
  for (const auto& p : preds) EXPECT_EQ(p.label, "yes");
}

TEST(ProcessAdapter, RetriesOnceThenCaches) {
  auto dir = temp_dir("proc");
  // Fails on the first call, answers "yes" afterwards; counts invocations.
  sp::text::write_file(dir / "adapter.sh", R"sh(#!/bin/sh
count_file="$(dirname "$0")/count"
n=$(cat "$count_file" 2>/dev/null || echo 0)
n=$((n + 1))
echo "$n" > "$count_file"
[ "$n" -eq 1 ] && exit 7
req="$2"; resp="$4"
: > "$resp"
sed -n 's/.*"id":"\([^"]*\)".*/\1/p' "$req" | while read -r id; do
  printf '{"id":"%s","scores":{"yes":0,"no":-1}}\n' "$id" >> "$resp"
done
)sh");
  auto cmd = "sh " + sp::shell_quote((dir / "adapter.sh").string());
  fs::create_directories(dir / "work");
  sp::ProcessAdapter adapter(cmd, dir / "work", dir / "cache");
  auto m = two_request_manifest();
  auto ex = adapter(m);
  EXPECT_FALSE(ex.replayed);
  ASSERT_EQ(ex.responses.size(), 2u);
  EXPECT_EQ(sp::text::trim(sp::text::read_file(dir / "count")), "2");
  EXPECT_TRUE(fs::exists(adapter.cache_file(m)));
  EXPECT_EQ(adapter.cache_file(m), dir / "cache" / m.hash() / adapter.adapter_key() / "responses.jsonl");

  auto again = adapter(m);
  EXPECT_TRUE(again.replayed);
  EXPECT_EQ(again.responses.size(), 2u);
  EXPECT_EQ(sp::text::trim(sp::text::read_file(dir / "count")), "2");

  // Replay needs no command, only the key.
  sp::ProcessAdapter replay("", dir / "work", dir / "cache", adapter.adapter_key());
  EXPECT_TRUE(replay(m).replayed);
  sp::ProcessAdapter other("", dir / "work", dir / "cache", "another-model");
  EXPECT_THROW(other(m), sp::Error);
  fs::remove_all(dir);
}

TEST(ProcessAdapter, PersistentFailureIsReported) {
  auto dir = temp_dir("fail");
  sp::ProcessAdapter adapter("false", dir);
  try {
    adapter(two_request_manifest());
    FAIL();
  } catch (const sp::Error& e) {
    EXPECT_NE(std::string(e.what()).find("exit 1"), std::string::npos) << e.what();
  }
  fs::remove_all(dir);
}

TEST(ImageArtifacts, MissingFilesAreUnrecognized) {
  auto dir = temp_dir("ingest");
  auto ds = size_dataset();
  auto m = sp::emit_ism_manifest<sp::ScaleInstance>(ds, "size");
  std::mt19937_64 rng(5);
  std::size_t written = 0;
  for (std::size_t i = 0; i < m.requests.size(); ++i) {
    if (i % 50 >= 43) continue;  // 70 of 500 missing
    const auto& id = m.requests[i].id;
    auto scene = sp::synthetic::make_scale_scene("ant", "bird", sp::ScaleGold::b_greater, sp::Dimension::size, rng, 32);
    scene.record.image_id = id;
    sp::text::write_file(dir / "det" / (id + ".json"), sp::to_json(scene.record).dump());
    sp::save_depth_map(scene.depth, dir / "depth" / (id + ".f32"), dir / "depth" / (id + ".json"));
    ++written;
  }
  ASSERT_EQ(written, 430u);
  auto bundles = sp::ingest_image_artifacts(m, dir / "det", dir / "depth");
  ASSERT_EQ(bundles.size(), 500u);
  auto recognized = std::count_if(bundles.begin(), bundles.end(), [](const auto& b) { return b.recognized; });
  EXPECT_EQ(recognized, 430);
  EXPECT_EQ(bundles[0].instance_id, ds[0].id());

  // Detection present, depth absent: unrecognized, not an error.
  fs::remove(dir / "depth" / (m.requests[0].id + ".f32"));
  EXPECT_FALSE(sp::ingest_image_artifacts(m, dir / "det", dir / "depth")[0].recognized);
  fs::remove_all(dir);
}

TEST(ImageArtifacts, DimensionMismatchAndMalformedFilesAbort) {
  auto dir = temp_dir("mismatch");
  sp::ProbeManifest m{"ds", "ism", {{"r1", sp::AdapterMode::synthesize, "a and b", std::nullopt, std::nullopt,
                                     "images/r1.png", "i1"}}};
  sp::DetectionRecord rec{"r1", 64, 64, {{1, 1, 5, 5, "a", 0.9}}};
  sp::text::write_file(dir / "det" / "r1.json", sp::to_json(rec).dump());
  sp::save_depth_map(sp::DepthMap(32, 32, 1.0f), dir / "depth" / "r1.f32", dir / "depth" / "r1.json");
  try {
    sp::ingest_image_artifacts(m, dir / "det", dir / "depth");
    FAIL();
  } catch (const sp::IoError& e) {
    EXPECT_NE(std::string(e.what()).find("32x32"), std::string::npos) << e.what();
  }
  sp::text::write_file(dir / "det" / "r1.json", "{not json");
  EXPECT_THROW(sp::ingest_image_artifacts(m, dir / "det", dir / "depth"), sp::IoError);
  fs::remove_all(dir);
}

TEST(ImageArtifacts, AnnotationsAndLabelNormalization) {
  auto dir = temp_dir("ann");
  sp::ProbeManifest m{"ds", "ism", {{"r1", sp::AdapterMode::synthesize, "p", std::nullopt, std::nullopt, "x", "i1"},
                                    {"r2", sp::AdapterMode::synthesize, "p", std::nullopt, std::nullopt, "y", "i2"}}};
  sp::text::write_file(dir / "ann.jsonl",
                       "{\"image_id\":\"r1\",\"annotator\":\"h1\",\"label\":\"above\"}\n"
                       "{\"image_id\":\"r1\",\"annotator\":\"h2\",\"label\":null}\n"
                       "{\"image_id\":\"r2\",\"annotator\":\"h1\",\"label\":\"inside\"}\n");
  sp::DetectionRecord rec{"r1", 8, 8, {{1, 1, 5, 5, "Horses", 0.9}}};
  sp::text::write_file(dir / "det" / "r1.json", sp::to_json(rec).dump());
  sp::save_depth_map(sp::DepthMap(8, 8, 1.0f), dir / "depth" / "r1.f32", dir / "depth" / "r1.json");
  auto norm = sp::LabelNormalizer::from_rows({{1, {"plural", "horses", "horse"}}});
  auto b = sp::ingest_image_artifacts(m, dir / "det", dir / "depth", dir / "ann.jsonl", norm);
  ASSERT_EQ(b.size(), 2u);
  EXPECT_EQ(b[0].human.size(), 2u);
  EXPECT_FALSE(b[0].human.at("h2"));
  EXPECT_EQ(b[1].human.at("h1"), "inside");
  EXPECT_EQ(b[0].detection->boxes[0].label, "horse");
  sp::text::write_file(dir / "bad.jsonl", "{\"image_id\":\"r1\"}\n");
  EXPECT_THROW(sp::load_annotations(dir / "bad.jsonl"), sp::IoError);
  fs::remove_all(dir);
}

TEST(Predictions, JsonRoundTrip) {
  sp::Prediction p{"size/ant|bird", "smaller", "smaller", sp::Provenance::human, true, true};
  auto back = sp::prediction_from_json(sp::to_json(p));
  EXPECT_EQ(back.instance_id, p.instance_id);
  EXPECT_EQ(back.label, p.label);
  EXPECT_EQ(back.provenance, sp::Provenance::human);
  EXPECT_TRUE(back.tie);
  auto u = sp::to_json(sp::unrecognized_prediction("x"));
  EXPECT_TRUE(u["label"].is_null());
  EXPECT_FALSE(sp::prediction_from_json(u).recognized);
}
