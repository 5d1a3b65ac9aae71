// Fixture-driven adapter implementing every mode of the file-exchange contract
// without model weights. Used by the test and acceptance suites.
//
//   stub_adapter --requests R --responses S [--behavior oracle|constant|yes|reverse]
//                [--dataset D.jsonl ...] [--fail-instance ID ...]
//                [--scene-dir DIR] [--drop-every N] [--seed N]

#include <filesystem>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "spatialprobe/benchmark.hpp"
#include "spatialprobe/geometry.hpp"
#include "spatialprobe/hash.hpp"
#include "spatialprobe/probing.hpp"
#include "spatialprobe/synthetic.hpp"

namespace sp = spatialprobe;
namespace fs = std::filesystem;

namespace {

// Index of the gold answer within a request's answer set, by dataset row type.
struct GoldInfo {
  std::size_t answer_index = 0;
  nlohmann::json row;
};

std::map<std::string, GoldInfo> load_golds(const std::vector<std::string>& paths) {
  std::map<std::string, GoldInfo> out;
  for (const auto& p : paths) {
    for (const auto& row : sp::read_jsonl(p)) {
      GoldInfo g{0, row};
      if (row.contains("question")) {
        g.answer_index = row.at("gold") == "yes" ? 0 : 1;
      } else if (row.contains("relation")) {
        auto rel = sp::parse_relation(row.at("relation").get<std::string>());
        for (std::size_t i = 0; i < sp::kRelations.size(); ++i)
          if (sp::kRelations[i] == rel) g.answer_index = i;
      } else {
        g.answer_index = row.at("gold") == "a_greater" ? 0 : 1;
      }
      out[row.at("id").get<std::string>()] = g;
    }
  }
  return out;
}

void write_scene(const fs::path& dir, const std::string& id, sp::synthetic::Scene scene) {
  scene.record.image_id = id;
  sp::text::write_file(dir / "detections" / (id + ".json"), sp::to_json(scene.record).dump(2) + "\n");
  sp::save_depth_map(scene.depth, dir / "depth" / (id + ".f32"), dir / "depth" / (id + ".json"));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"stub model adapter"};
  std::string requests_path, responses_path, behavior = "oracle", scene_dir;
  std::vector<std::string> datasets, fail_instances;
  std::size_t drop_every = 0;
  std::uint64_t seed = 7;
  app.add_option("--requests", requests_path)->required();
  app.add_option("--responses", responses_path)->required();
  app.add_option("--behavior", behavior)->check(CLI::IsMember({"oracle", "constant", "yes", "reverse"}));
  app.add_option("--dataset", datasets, "dataset JSONL files holding gold answers");
  app.add_option("--fail-instance", fail_instances, "instance ids answered with status failed");
  app.add_option("--scene-dir", scene_dir, "write synthetic detection/depth fixtures for synthesize requests");
  app.add_option("--drop-every", drop_every, "skip fixtures for every N-th synthesize request");
  app.add_option("--seed", seed);
  CLI11_PARSE(app, argc, argv);

  try {
    auto golds = load_golds(datasets);
    std::set<std::string> failing(fail_instances.begin(), fail_instances.end());
    std::string out = nlohmann::json{{"scoring_mode", "single_token"}, {"adapter", "stub"}}.dump() + "\n";
    std::size_t synth_index = 0;
    for (const auto& j : sp::read_jsonl(requests_path)) {
      auto req = sp::request_from_json(j);
      sp::AdapterResponse resp;
      resp.id = req.id;
      if (failing.count(req.instance_id)) {
        resp.status = sp::ResponseStatus::failed;
        out += sp::to_json(resp).dump() + "\n";
        continue;
      }
      if (req.mode == sp::AdapterMode::synthesize) {
        resp.image_path = req.output_path.value_or("images/" + req.id + ".png");
        bool drop = drop_every && (synth_index++ % drop_every == drop_every - 1);
        auto g = golds.find(req.instance_id);
        if (!scene_dir.empty() && !drop && g != golds.end()) {
          // Seed per request so fixtures do not depend on manifest order.
          std::mt19937_64 rng(seed ^ std::stoull(sp::short_hash(req.id), nullptr, 16));
          const auto& row = g->second.row;
          sp::synthetic::Scene scene;
          if (row.contains("relation")) {
            scene = sp::synthetic::make_relation_scene(row.at("person"), row.at("object"),
                                                       sp::parse_relation(row.at("relation").get<std::string>()), rng);
          } else {
            scene = sp::synthetic::make_scale_scene(row.at("obj_a"), row.at("obj_b"),
                                                    sp::parse_scale_gold(row.at("gold").get<std::string>()),
                                                    sp::parse_dimension(row.at("dimension").get<std::string>()), rng);
          }
          write_scene(scene_dir, req.id, std::move(scene));
        }
        out += sp::to_json(resp).dump() + "\n";
        continue;
      }
      if (!req.answers) throw sp::AdapterError(req.id, "request without answers");
      const auto& answers = req.answers->answers;
      std::size_t pick = 0;
      if (behavior == "oracle" || behavior == "reverse") {
        auto g = golds.find(req.instance_id);
        if (g == golds.end()) throw sp::AdapterError(req.id, "no gold for instance '" + req.instance_id + "'");
        pick = g->second.answer_index;
        if (behavior == "reverse") pick = (pick + 1) % answers.size();
      } else if (behavior == "yes") {
        pick = 0;
      }
      for (std::size_t i = 0; i < answers.size(); ++i)
        resp.scores[answers[i]] = behavior == "constant" ? -1.0 : (i == pick ? -0.1 : -2.5);
      out += sp::to_json(resp).dump() + "\n";
    }
    sp::text::write_file(responses_path, out);
  } catch (const std::exception& e) {
    std::cerr << "stub_adapter: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
