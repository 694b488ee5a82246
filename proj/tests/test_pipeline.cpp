#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <iterator>

#include "marsail/io/dataset.hpp"
#include "marsail/io/image.hpp"
#include "marsail/pipeline.hpp"
#include "scene.hpp"
#include "support.hpp"

using namespace marsail::pipeline;
using marsail::Tensor;
using testing_support::Gen;
using testing_support::Rect;

namespace fs = std::filesystem;

namespace {

std::string data_path(const std::string& name) { return std::string(MARSAIL_DATA_DIR) + "/" + name; }

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / name;
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST(Features, IdentityExtractorCopiesChannels) {
  Gen g(131);
  const Tensor img = g.tensor({8, 8, 3}, 0, 1);
  EXPECT_EQ(extract_features(img, identity_extractor(3)).values(), img.values());
  const Tensor six = extract_features(img, identity_extractor(6));
  for (std::size_t y = 0; y < 8; ++y)
    for (std::size_t x = 0; x < 8; ++x)
      for (std::size_t c = 0; c < 6; ++c) EXPECT_EQ(six(y, x, c), img(y, x, c % 3));
}

TEST(Features, ConstantImageGivesConstantFeatures) {
  PipelineConfig cfg;
  const auto w = random_weights(cfg, 7);
  const Tensor f = extract_features(Tensor({16, 16, 3}, 0.4), w.extractor);
  for (std::size_t i = 0; i < f.size(); ++i) EXPECT_NEAR(f[i], f[i % cfg.channels], 1e-12);
}

TEST(Features, DeterministicForFixedSeed) {
  PipelineConfig cfg;
  Gen g(132);
  const Tensor img = g.tensor({16, 16, 3}, 0, 1);
  const auto a = extract_features(img, random_weights(cfg, 99).extractor);
  const auto b = extract_features(img, random_weights(cfg, 99).extractor);
  EXPECT_EQ(a.values(), b.values());
  EXPECT_NE(a.values(), extract_features(img, random_weights(cfg, 98).extractor).values());
}

TEST(Features, SizeViolations) {
  const auto e = identity_extractor(3);
  EXPECT_THROW(extract_features(Tensor({12, 16, 3}), e), marsail::InputError);
  EXPECT_THROW(extract_features(Tensor({512, 512, 3}), e), marsail::InputError);
  EXPECT_THROW(extract_features(Tensor({16, 16, 4}), e), marsail::ShapeError);
}

TEST(Pipeline, UniformBackgroundHasNoInstances) {
  const auto res = run_pipeline(testing_support::scene_image({}), testing_support::rigged_context());
  EXPECT_TRUE(res.instances.empty());
  EXPECT_TRUE(res.records.empty());
  EXPECT_EQ(res.sequence.size(), 1u);
}

TEST(Pipeline, OneRectangle) {
  const Rect r{10, 20, 24, 10};
  const auto res = run_pipeline(testing_support::scene_image({r}), testing_support::rigged_context());
  ASSERT_EQ(res.records.size(), 1u);
  EXPECT_EQ(res.records[0].code, "frontbumper:dent:S3:0");
  EXPECT_EQ(res.records[0].r, 1.0);
  const auto& inst = res.instances[0];
  EXPECT_EQ(inst.mask.area(), r.w * r.h);
  ASSERT_EQ(inst.polygon.vertices.size(), 4u);
  EXPECT_LE(testing_support::corner_distance(inst.polygon, r), 1.0);
  EXPECT_GT(inst.alpha_part, 0.99);
  EXPECT_GT(inst.alpha_damage, 0.99);
  EXPECT_GT(inst.alpha_mask, 0.5);
  EXPECT_EQ(inst.fake, std::vector<double>(marsail::kFakeClasses, 0.5));
}

TEST(Pipeline, TallRectangleOrientation) {
  const auto res = run_pipeline(testing_support::scene_image({{20, 8, 8, 30}}), testing_support::rigged_context());
  ASSERT_EQ(res.records.size(), 1u);
  EXPECT_EQ(res.records[0].code, "frontbumper:dent:S3:90");
  EXPECT_NEAR(res.records[0].s, 90.0, 1e-9);
}

TEST(Pipeline, TwoRectanglesInRowMajorOrder) {
  const auto& rects = testing_support::two_rectangles();
  const auto res = run_pipeline(testing_support::scene_image(rects), testing_support::rigged_context());
  ASSERT_EQ(res.records.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(res.instances[i].component, i);
    ASSERT_EQ(res.instances[i].polygon.vertices.size(), 4u);
    EXPECT_LE(testing_support::corner_distance(res.instances[i].polygon, rects[i]), 1.0);
    EXPECT_EQ(res.records[i].part, "frontbumper");
    EXPECT_EQ(res.records[i].damage, "dent");
  }
}

TEST(Pipeline, MatchesManualComposition) {
  const auto ctx = testing_support::rigged_context();
  const Tensor img = testing_support::scene_image(testing_support::two_rectangles());
  const auto res = run_pipeline(img, ctx);

  const Tensor feat = extract_features(img, ctx.weights.extractor);
  const auto seq = marsail::quadtree::serialize_sequence(feat, ctx.config.quadtree);
  const Tensor refined = marsail::nn::encoder_layer(seq.features, ctx.weights.attention, ctx.weights.ffn);
  const Tensor soft = marsail::geometry::reconstruct_mask(seq, refined, ctx.weights.mask_projection, ctx.weights.mask_bias);
  const auto comps = marsail::connected_components(marsail::BinaryMask::threshold(soft, ctx.config.threshold));
  EXPECT_EQ(res.features.values(), feat.values());
  EXPECT_EQ(res.refined.values(), refined.values());
  EXPECT_EQ(res.soft_mask.values(), soft.values());
  ASSERT_EQ(comps.size(), res.instances.size());
  for (std::size_t i = 0; i < comps.size(); ++i) {
    EXPECT_EQ(res.instances[i].mask, comps[i]);
    const auto poly = marsail::geometry::mask_polygon(comps[i], ctx.config.polygon);
    EXPECT_EQ(res.instances[i].polygon.vertices, poly.vertices);
    EXPECT_EQ(res.instances[i].s, marsail::geometry::polygon_orientation(poly));
  }
}

TEST(Pipeline, InvalidPairsAreSuppressed) {
  auto ctx = testing_support::rigged_context();
  ctx.weights.heads.part = Tensor({marsail::kPartClasses, 3});
  ctx.weights.heads.part(ctx.taxonomy.part_index("frontwindshield"), 0) = 10.0;
  const auto res = run_pipeline(testing_support::scene_image(testing_support::two_rectangles()), ctx);
  EXPECT_TRUE(res.records.empty());
  EXPECT_EQ(res.suppressed.size(), 2u);
}

TEST(Pipeline, EmittedPairsPassCompatibility) {
  Gen g(133);
  PipelineConfig cfg;
  cfg.quadtree.tau = 0.002;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto ctx = make_context(cfg, seed);
    const Tensor img = testing_support::scene_image({{g.index(0, 20), g.index(0, 20), g.index(8, 30), g.index(8, 30)}});
    try {
      const auto res = run_pipeline(img, ctx);
      for (const auto& rec : res.records) EXPECT_TRUE(ctx.compatibility.is_valid(rec.part, rec.damage));
    } catch (const marsail::DegenerateError&) {
      // random weights may produce sliver components without a polygon
    }
  }
}

TEST(Pipeline, StageNameOnError) {
  try {
    run_pipeline(Tensor({24, 24, 3}), testing_support::rigged_context());
    FAIL();
  } catch (const marsail::InputError& e) {
    EXPECT_EQ(std::string(e.what()).rfind("features: ", 0), 0u);
  }
}

TEST(Pipeline, ArtifactsByteIdenticalAcrossRuns) {
  const auto ctx = make_context(load_config(data_path("config.json")), 0);
  const Tensor img = marsail::io::load_ppm(data_path("synthetic_scene.ppm"));
  std::vector<std::string> names;
  std::vector<fs::path> dirs;
  for (int run = 0; run < 3; ++run) {
    dirs.push_back(fresh_dir("marsail_artifacts_" + std::to_string(run)));
    names = write_artifacts(dirs.back().string(), run_pipeline(img, ctx));
  }
  ASSERT_FALSE(names.empty());
  for (const auto& n : names) {
    const std::string first = slurp(dirs[0] / n);
    EXPECT_FALSE(first.empty());
    for (int run = 1; run < 3; ++run) EXPECT_EQ(slurp(dirs[run] / n), first) << n;
  }
  const auto vdc = nlohmann::json::parse(slurp(dirs[0] / "vdc.json"));
  ASSERT_EQ(vdc.size(), 2u);
  EXPECT_EQ(vdc[0]["code"], "frontbumper:dent:S3:0");
}

TEST(Config, BundledFilesLoad) {
  const auto cfg = load_config(data_path("config.json"));
  EXPECT_EQ(cfg.channels, 3u);
  const auto ctx = make_context(cfg, 0);
  const auto rigged = testing_support::rigged_weights();
  EXPECT_EQ(ctx.weights.attention.wq.values(), rigged.attention.wq.values());
  EXPECT_EQ(ctx.weights.heads.part.values(), rigged.heads.part.values());
}

TEST(Config, Errors) {
  const fs::path dir = fresh_dir("marsail_cfg");
  fs::create_directories(dir);
  EXPECT_THROW(config_from_json(nlohmann::json{{"weights", "missing.json"}}, dir), marsail::ConfigError);
  EXPECT_THROW(config_from_json(nlohmann::json{{"channels", "eight"}}, dir), marsail::ConfigError);
  EXPECT_THROW(config_from_json(nlohmann::json{{"channels", 6}, {"attention_heads", 4}}, dir), marsail::ConfigError);
  EXPECT_THROW(config_from_json(nlohmann::json{{"threshold", 1.0}}, dir), marsail::ConfigError);
  EXPECT_THROW(config_from_json(nlohmann::json::array(), dir), marsail::ConfigError);
  PipelineConfig cfg;
  cfg.channels = 4;
  cfg.attention_heads = 1;
  auto w = random_weights(cfg, 1);
  cfg.channels = 8;
  EXPECT_THROW(validate_weights(w, cfg), marsail::ConfigError);
}

TEST(Weights, SaveLoadRoundTrip) {
  const fs::path dir = fresh_dir("marsail_weights");
  const auto w = testing_support::rigged_weights();
  save_weights(dir.string(), w);
  const auto back = load_weights((dir / "weights.json").string());
  EXPECT_EQ(back.attention.heads, 1u);
  EXPECT_EQ(back.extractor.conv.weight.values(), w.extractor.conv.weight.values());
  EXPECT_EQ(back.mask_projection.values(), w.mask_projection.values());
  EXPECT_EQ(back.heads.damage.values(), w.heads.damage.values());
  fs::remove(dir / "wq.mten");
  EXPECT_THROW(load_weights((dir / "weights.json").string()), marsail::ConfigError);
}

TEST(Dataset, EvalFixturesMatchReference) {
  const auto p = marsail::io::load_detection_set(data_path("eval/micro_pred.json"), false);
  const auto t = marsail::io::load_detection_set(data_path("eval/micro_gt.json"), true);
  const auto report = marsail::metrics::coco_suite(p.detections, t.ground_truth);
  EXPECT_EQ(report, testing_support::ref::evaluate(p.detections, t.ground_truth));
  const auto golden = nlohmann::json::parse(slurp(data_path("eval/micro_golden.json")));
  EXPECT_EQ(marsail::metrics::report_to_json(report), golden);
}

TEST(Dataset, ParseErrorsNameTheFile) {
  const fs::path dir = fresh_dir("marsail_ds");
  fs::create_directories(dir);
  const fs::path bad = dir / "bad.json";
  std::ofstream(bad) << "{\"images\": [ {\"id\": 1,\n \"detections\": [ {\"class\": \"dent\" ]}]}";
  try {
    marsail::io::load_detection_set(bad.string(), true);
    FAIL();
  } catch (const marsail::InputError& e) {
    EXPECT_NE(std::string(e.what()).find("bad.json:2:"), std::string::npos);
  }
  std::ofstream(dir / "nobox.json") << R"({"images":[{"id":"a","detections":[{"class":"dent","conf":0.5}]}]})";
  EXPECT_THROW(marsail::io::load_detection_set((dir / "nobox.json").string(), false), marsail::InputError);
  std::ofstream(dir / "conf.json") << R"({"images":[{"id":"a","detections":[{"class":"dent","conf":2,"box":[0,0,1,1]}]}]})";
  EXPECT_THROW(marsail::io::load_detection_set((dir / "conf.json").string(), false), marsail::InputError);
}
