#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>

#include <unistd.h>

#include "oracles.hpp"
#include "spatialprobe/geometry.hpp"
#include "spatialprobe/synthetic.hpp"

namespace sp = spatialprobe;
namespace fs = std::filesystem;

namespace {

sp::BoundingBox box(double x0, double y0, double x1, double y1, std::string label = "x", double conf = 0.9) {
  return {x0, y0, x1, y1, std::move(label), conf};
}

// Centroid at (cx, cy) with half extents.
sp::BoundingBox centered(double cx, double cy, double hw = 1.0, double hh = 1.0) {
  return box(cx - hw, cy - hh, cx + hw, cy + hh);
}

sp::DepthMap random_map(std::mt19937_64& rng, std::size_t w, std::size_t h) {
  std::uniform_real_distribution<float> d(0.5f, 10.0f);
  std::vector<float> v(w * h);
  for (auto& x : v) x = d(rng);
  return sp::DepthMap(w, h, std::move(v));
}

sp::BoundingBox random_box(std::mt19937_64& rng, double limit, const std::string& label) {
  // Quarter-pixel grid exercises fractional edges.
  std::uniform_int_distribution<int> q(0, static_cast<int>(limit * 4));
  double a = q(rng) / 4.0, b = q(rng) / 4.0, c = q(rng) / 4.0, d = q(rng) / 4.0;
  if (std::abs(a - b) < 1.25) b = a + 1.25;
  if (std::abs(c - d) < 1.25) d = c + 1.25;
  std::uniform_int_distribution<int> conf(1, 4);
  return box(std::min(a, b), std::min(c, d), std::max(a, b), std::max(c, d), label, conf(rng) / 4.0);
}

fs::path temp_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("spatialprobe-geom-" + name + "-" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST(SelectBox, HighestConfidenceWins) {
  sp::DetectionRecord rec{"img", 100, 100, {box(0, 0, 10, 10, "dog", 0.9), box(0, 0, 50, 50, "dog", 0.7),
                                            box(0, 0, 10, 10, "cat", 0.95)}};
  auto b = sp::select_box(rec, "dog");
  ASSERT_TRUE(b);
  EXPECT_DOUBLE_EQ(b->confidence, 0.9);
  EXPECT_FALSE(sp::select_box(rec, "lion"));
}

TEST(SelectBox, TiesPreferLargerAreaThenHigherBox) {
  sp::DetectionRecord rec{"img", 100, 100, {box(0, 20, 10, 30, "dog", 0.5), box(0, 5, 20, 25, "dog", 0.5)}};
  EXPECT_DOUBLE_EQ(sp::select_box(rec, "dog")->area(), 400.0);
  rec.boxes = {box(0, 20, 10, 30, "dog", 0.5), box(0, 5, 10, 15, "dog", 0.5)};
  EXPECT_DOUBLE_EQ(sp::select_box(rec, "dog")->y_min, 5.0);
}

TEST(SelectBox, MatchesOracleOnRandomRecords) {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 500; ++t) {
    sp::DetectionRecord rec{"img", 64, 64, {}};
    int n = static_cast<int>(rng() % 8);
    for (int i = 0; i < n; ++i) rec.boxes.push_back(random_box(rng, 60, rng() % 2 ? "a" : "b"));
    for (std::string label : {"a", "b"}) {
      auto got = sp::select_box(rec, label);
      auto want = oracle::select_box(rec.boxes, label);
      ASSERT_EQ(got.has_value(), want.has_value());
      if (!got) continue;
      EXPECT_EQ(got->confidence, want->confidence);
      EXPECT_EQ(got->area(), want->area());
      EXPECT_EQ(got->y_min, want->y_min);
    }
  }
}

TEST(MeanDepth, ConstantMapAndSmallBox) {
  EXPECT_DOUBLE_EQ(sp::mean_depth(box(3, 3, 9, 7), sp::DepthMap(16, 16, 3.0f)), 3.0);
  sp::DepthMap m(4, 1, std::vector<float>{2.0f, 4.0f, 8.0f, 8.0f});
  EXPECT_DOUBLE_EQ(sp::mean_depth(box(0, 0, 2, 1), m), 3.0);
  // Fractional edges: pixels 1 and 2 satisfy 0.5 <= x < 2.5.
  EXPECT_DOUBLE_EQ(sp::mean_depth(box(0.5, 0, 2.5, 1), m), 6.0);
}

TEST(MeanDepth, MatchesPixelScanOracle) {
  std::mt19937_64 rng(8);
  for (int t = 0; t < 300; ++t) {
    auto m = random_map(rng, 20 + rng() % 20, 20 + rng() % 20);
    auto b = random_box(rng, 19, "x");
    EXPECT_NEAR(sp::mean_depth(b, m), oracle::mean_depth(b, m), 1e-9);
  }
}

TEST(MeanDepth, ClipsToMapAndRejectsEmptyCoverage) {
  sp::DepthMap m(4, 4, 2.0f);
  EXPECT_DOUBLE_EQ(sp::mean_depth(box(-5, -5, 100, 100), m), 2.0);
  EXPECT_THROW(sp::mean_depth(box(10, 10, 20, 20), m), sp::GeometryError);
  EXPECT_THROW(sp::mean_depth(box(1.2, 1.2, 1.8, 1.8), m), sp::GeometryError);
}

TEST(MeanDepth, TranslationWithTheMapLeavesItUnchanged) {
  std::mt19937_64 rng(12);
  auto m = random_map(rng, 30, 30);
  for (int t = 0; t < 100; ++t) {
    int sx = static_cast<int>(rng() % 10), sy = static_cast<int>(rng() % 10);
    auto b = random_box(rng, 19, "x");
    sp::DepthMap shifted(40, 40, 1.0f);
    for (std::size_t y = 0; y < 30; ++y)
      for (std::size_t x = 0; x < 30; ++x) shifted.at(x + sx, y + sy) = m.at(x, y);
    auto moved = box(b.x_min + sx, b.y_min + sy, b.x_max + sx, b.y_max + sy);
    EXPECT_NEAR(sp::mean_depth(b, m), sp::mean_depth(moved, shifted), 1e-9);
  }
}

TEST(ScaleScore, ClosedForms) {
  EXPECT_DOUBLE_EQ(sp::size_score(box(0, 0, 10, 10), 2.0), 400.0);
  EXPECT_DOUBLE_EQ(sp::size_score(box(0, 0, 20, 20), 1.0), sp::size_score(box(0, 0, 10, 10), 2.0));
  EXPECT_DOUBLE_EQ(sp::height_score(box(0, 0, 5, 50), 2.0), 100.0);
  EXPECT_THROW(sp::size_score(box(0, 0, 1, 1), 0.0), sp::GeometryError);
  EXPECT_THROW(sp::height_score(box(0, 0, 1, 1), -1.0), sp::GeometryError);
}

TEST(ScaleScore, InvariantUnderPerspectiveScaling) {
  std::mt19937_64 rng(21);
  for (int t = 0; t < 1000; ++t) {
    double w = sp::synthetic::uniform(rng, 1, 100), h = sp::synthetic::uniform(rng, 1, 100);
    double d = sp::synthetic::uniform(rng, 0.5, 10), s = sp::synthetic::uniform(rng, 0.1, 10);
    auto near = box(0, 0, w, h), far = box(0, 0, w / s, h / s);
    double a = sp::size_score(near, d), b = sp::size_score(far, d * s);
    EXPECT_LE(std::abs(a - b) / a, 1e-9);
    double c = sp::height_score(near, d), e = sp::height_score(far, d * s);
    EXPECT_LE(std::abs(c - e) / c, 1e-9);
  }
}

TEST(CompareScale, MissIsUnrecognized) {
  sp::DetectionRecord rec{"img", 10, 10, {box(0, 0, 5, 5, "ant")}};
  auto j = sp::compare_scale(rec, sp::DepthMap(10, 10, 1.0f), "ant", "bird", sp::Dimension::size);
  EXPECT_FALSE(j.recognized);
  EXPECT_EQ(j.result, sp::ScaleResult::indeterminate);
}

TEST(CompareScale, SwappingLabelsFlipsTheResult) {
  std::mt19937_64 rng(4);
  for (int t = 0; t < 300; ++t) {
    sp::DetectionRecord rec{"img", 40, 40, {random_box(rng, 35, "a"), random_box(rng, 35, "b")}};
    auto m = random_map(rng, 40, 40);
    for (auto dim : {sp::Dimension::size, sp::Dimension::height}) {
      auto ab = sp::compare_scale(rec, m, "a", "b", dim), ba = sp::compare_scale(rec, m, "b", "a", dim);
      auto flipped = ab.result == sp::ScaleResult::a_greater   ? sp::ScaleResult::b_greater
                     : ab.result == sp::ScaleResult::b_greater ? sp::ScaleResult::a_greater
                                                               : sp::ScaleResult::indeterminate;
      EXPECT_EQ(ba.result, flipped);
    }
  }
}

TEST(CompareScale, SyntheticScenesRecoverConstructedTruth) {
  std::mt19937_64 rng(99);
  for (int t = 0; t < 500; ++t) {
    auto dim = t % 2 ? sp::Dimension::size : sp::Dimension::height;
    auto truth = t % 3 ? sp::ScaleGold::a_greater : sp::ScaleGold::b_greater;
    auto scene = sp::synthetic::make_scale_scene("a", "b", truth, dim, rng);
    auto j = sp::compare_scale(scene.record, scene.depth, "a", "b", dim);
    ASSERT_TRUE(j.recognized);
    EXPECT_EQ(j.result, truth == sp::ScaleGold::a_greater ? sp::ScaleResult::a_greater : sp::ScaleResult::b_greater);
    auto o = oracle::compare_scale(scene.record, scene.depth, "a", "b", dim);
    EXPECT_EQ(o, truth == sp::ScaleGold::a_greater ? oracle::Scale::a : oracle::Scale::b);
  }
}

TEST(CentroidAngle, AxisAlignedCases) {
  EXPECT_DOUBLE_EQ(sp::centroid_angle(centered(5, 5), centered(5, 10)), 270.0);
  EXPECT_DOUBLE_EQ(sp::centroid_angle(centered(10, 5), centered(5, 5)), 0.0);
  EXPECT_DOUBLE_EQ(sp::centroid_angle(centered(5, 10), centered(5, 5)), 90.0);
  EXPECT_DOUBLE_EQ(sp::centroid_angle(centered(0, 5), centered(5, 5)), 180.0);
  EXPECT_DOUBLE_EQ(sp::centroid_angle(centered(0, 0), centered(5, 5)), 225.0);
  EXPECT_DOUBLE_EQ(sp::centroid_angle(centered(10, 0), centered(5, 5)), 315.0);
  EXPECT_THROW(sp::centroid_angle(centered(3, 3), centered(3, 3, 5, 5)), sp::GeometryError);
}

TEST(CentroidAngle, MatchesPolarConstruction) {
  std::mt19937_64 rng(17);
  for (int t = 0; t < 2000; ++t) {
    double deg = sp::synthetic::uniform(rng, 0.5, 359.5), r = sp::synthetic::uniform(rng, 1, 200);
    double rad = deg * std::numbers::pi / 180.0;
    auto got = sp::centroid_angle(centered(100 + r * std::cos(rad), 100 + r * std::sin(rad)), centered(100, 100));
    EXPECT_NEAR(got, deg, 1e-6);
    EXPECT_GE(got, 0.0);
    EXPECT_LT(got, 360.0);
  }
}

TEST(ClassifyAngle, WindowsAndBoundaries) {
  EXPECT_EQ(sp::classify_angle(270), sp::Relation::above);
  EXPECT_EQ(sp::classify_angle(90), sp::Relation::below);
  EXPECT_EQ(sp::classify_angle(0), sp::Relation::beside);
  EXPECT_EQ(sp::classify_angle(180), sp::Relation::beside);
  for (double b : {45.0, 135.0, 225.0, 315.0}) EXPECT_EQ(sp::classify_angle(b), sp::Relation::beside) << b;
}

TEST(ClassifyAngle, TenthDegreeSweepMatchesIntegerOracle) {
  std::map<sp::Relation, int> counts;
  for (int t = 0; t < 3600; ++t) {
    auto r = sp::classify_angle(t / 10.0);
    EXPECT_EQ(r, oracle::relation_of_tenths(t)) << t;
    ++counts[r];
  }
  EXPECT_EQ(counts[sp::Relation::above], 899);
  EXPECT_EQ(counts[sp::Relation::below], 899);
  EXPECT_EQ(counts[sp::Relation::beside], 3600 - 2 * 899);
}

TEST(ClassifyRelation, ContainmentIsInside) {
  EXPECT_EQ(sp::classify_relation(box(10, 10, 20, 20), box(0, 0, 50, 50)), sp::Relation::inside);
  EXPECT_EQ(sp::classify_relation(box(0, 0, 50, 50), box(0, 0, 50, 50)), sp::Relation::inside);
  // Half covered: inside only at a relaxed threshold.
  auto p = box(40, 10, 60, 20), o = box(0, 0, 50, 50);
  EXPECT_NE(sp::classify_relation(p, o), sp::Relation::inside);
  EXPECT_EQ(sp::classify_relation(p, o, 0.5), sp::Relation::inside);
  EXPECT_THROW(sp::classify_relation(p, o, 0.0), sp::GeometryError);
  EXPECT_THROW(sp::classify_relation(box(0, 0, 0, 5), o), sp::GeometryError);
}

TEST(ClassifyRelation, CoincidentCentroidsCountAsInside) {
  // A wide person box centred on a tall object box: neither contains the other.
  EXPECT_EQ(sp::classify_relation(box(0, 40, 100, 60), box(40, 0, 60, 100)), sp::Relation::inside);
}

TEST(ClassifyRelation, SwappingRolesSwapsAboveAndBelow) {
  std::mt19937_64 rng(31);
  for (int t = 0; t < 1000; ++t) {
    auto p = random_box(rng, 100, "p"), o = random_box(rng, 100, "o");
    auto pq = sp::classify_relation(p, o), qp = sp::classify_relation(o, p);
    if (pq == sp::Relation::inside || qp == sp::Relation::inside) continue;
    EXPECT_EQ(pq == sp::Relation::above, qp == sp::Relation::below);
    EXPECT_EQ(pq == sp::Relation::below, qp == sp::Relation::above);
  }
}

TEST(ClassifyRelation, MatchesPredicateOracleOnRandomBoxes) {
  std::mt19937_64 rng(57);
  for (int t = 0; t < 5000; ++t) {
    auto p = random_box(rng, 60, "p"), o = random_box(rng, 60, "o");
    EXPECT_EQ(sp::classify_relation(p, o), oracle::relation(p, o))
        << p.x_min << "," << p.y_min << "," << p.x_max << "," << p.y_max << " vs " << o.x_min << "," << o.y_min
        << "," << o.x_max << "," << o.y_max;
  }
}

TEST(ClassifyRelation, SyntheticScenesRecoverConstructedTruth) {
  std::mt19937_64 rng(64);
  const sp::Relation all[] = {sp::Relation::above, sp::Relation::below, sp::Relation::inside, sp::Relation::beside};
  for (int t = 0; t < 1000; ++t) {
    auto truth = all[t % 4];
    auto scene = sp::synthetic::make_relation_scene("person", "object", truth, rng);
    auto p = *sp::select_box(scene.record, "person"), o = *sp::select_box(scene.record, "object");
    EXPECT_EQ(sp::classify_relation(p, o), truth);
    EXPECT_EQ(oracle::relation(p, o), truth);
  }
}

TEST(DepthMapIo, RoundTripAndSizeMismatch) {
  auto dir = temp_dir("io");
  std::mt19937_64 rng(2);
  auto m = random_map(rng, 7, 5);
  sp::save_depth_map(m, dir / "d.f32", dir / "d.json");
  auto back = sp::load_depth_map(dir / "d.f32", dir / "d.json");
  ASSERT_EQ(back.width(), 7u);
  ASSERT_EQ(back.height(), 5u);
  for (std::size_t i = 0; i < m.values().size(); ++i) EXPECT_EQ(back.values()[i], m.values()[i]);
  EXPECT_EQ(fs::file_size(dir / "d.f32"), 7u * 5u * 4u);

  sp::text::write_file(dir / "d.json", R"({"width": 8, "height": 5})");
  try {
    sp::load_depth_map(dir / "d.f32", dir / "d.json");
    FAIL();
  } catch (const sp::IoError& e) {
    EXPECT_NE(std::string(e.what()).find("expected 160"), std::string::npos) << e.what();
  }
  sp::text::write_file(dir / "d.json", R"({"width": 7})");
  EXPECT_THROW(sp::load_depth_map(dir / "d.f32", dir / "d.json"), sp::IoError);
  fs::remove_all(dir);
}

TEST(DepthMap, RejectsBadValues) {
  EXPECT_THROW(sp::DepthMap(2, 2, std::vector<float>{1, 2, 3}), sp::ValidationError);
  EXPECT_THROW(sp::DepthMap(1, 1, std::vector<float>{-1}), sp::ValidationError);
  EXPECT_THROW(sp::DepthMap(1, 1, std::vector<float>{std::nanf("")}), sp::ValidationError);
}

TEST(LabelNormalizer, PluralThenSynonym) {
  auto n = sp::LabelNormalizer::from_rows({{1, {"plural", "Horses", "horse"}}, {2, {"synonym", "horse", "equine"}},
                                           {3, {"synonym", "sofa", "couch"}}});
  EXPECT_EQ(n(" HORSES "), "equine");
  EXPECT_EQ(n("Sofa"), "couch");
  EXPECT_EQ(n("Table"), "table");
  EXPECT_THROW(sp::LabelNormalizer::from_rows({{4, {"alias", "a", "b"}}}), sp::ValidationError);
}

TEST(DetectionRecord, NormalizeClipsAndDropsEmptyBoxes) {
  sp::DetectionRecord rec{"img", 100, 50, {box(-10, -10, 20, 20, "Dogs"), box(120, 0, 150, 10, "cat")}};
  auto n = sp::LabelNormalizer::from_rows({{1, {"plural", "dogs", "dog"}}});
  rec.normalize(n);
  ASSERT_EQ(rec.boxes.size(), 1u);
  EXPECT_EQ(rec.boxes[0].label, "dog");
  EXPECT_DOUBLE_EQ(rec.boxes[0].x_min, 0.0);
  EXPECT_DOUBLE_EQ(rec.boxes[0].y_min, 0.0);
}

TEST(DetectionRecord, JsonRoundTripAndValidation) {
  sp::DetectionRecord rec{"img-1", 64, 48, {box(1, 2, 3, 4, "cup", 0.25)}};
  auto back = sp::detection_from_json(sp::to_json(rec));
  EXPECT_EQ(back.image_id, "img-1");
  ASSERT_EQ(back.boxes.size(), 1u);
  EXPECT_EQ(back.boxes[0].label, "cup");
  auto bad = sp::to_json(rec);
  bad["boxes"][0]["confidence"] = 1.5;
  EXPECT_THROW(sp::detection_from_json(bad), sp::ValidationError);
  bad = sp::to_json(rec);
  bad["boxes"][0]["x_max"] = 0.5;
  EXPECT_THROW(sp::detection_from_json(bad), sp::ValidationError);
}
