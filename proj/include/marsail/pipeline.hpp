#pragma once

// End-to-end inference: features -> quadtree sequence -> encoder layer ->
// reconstructed mask -> components -> polygons, heads, filtering -> codes.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "marsail/error.hpp"
#include "marsail/geometry.hpp"
#include "marsail/io/image.hpp"
#include "marsail/io/mten.hpp"
#include "marsail/labels.hpp"
#include "marsail/mask.hpp"
#include "marsail/nn/attention.hpp"
#include "marsail/nn/conv.hpp"
#include "marsail/nn/heads.hpp"
#include "marsail/quadtree.hpp"
#include "marsail/tensor.hpp"
#include "marsail/vdc.hpp"

namespace marsail::pipeline {

struct ExtractorWeights {
  nn::ConvKernel conv;            // 3 -> C, clamp padding
  std::vector<Tensor> laterals;   // two [C x C]: full and half resolution
};

struct PipelineWeights {
  ExtractorWeights extractor;
  nn::AttentionWeights attention;
  nn::FfnWeights ffn;
  Tensor mask_projection;  // [C]
  double mask_bias = 0.0;
  nn::ClassificationWeights heads;

  std::size_t channels() const { return mask_projection.size(); }
};

struct PipelineConfig {
  quadtree::QuadtreeConfig quadtree{};
  std::size_t channels = 8;
  std::size_t attention_heads = 2;
  std::size_t ffn_hidden = 16;
  std::optional<std::string> weights_manifest;
  std::optional<std::string> taxonomy_path;
  std::optional<std::string> compatibility_path;
  geometry::PolygonConfig polygon{};
  vdc::ConfidenceWeights confidence{};
  double threshold = 0.5;

  void validate() const {
    quadtree.validate();
    polygon.validate();
    confidence.validate();
    if (channels == 0 || attention_heads == 0 || channels % attention_heads != 0) {
      throw ConfigError("pipeline: channels must be a positive multiple of attention_heads");
    }
    if (ffn_hidden == 0) throw ConfigError("pipeline: ffn_hidden must be positive");
    if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("pipeline: threshold must be in (0, 1)");
  }
};

namespace detail {

template <typename T>
T json_get(const nlohmann::json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: bad value for '") + key + "': " + e.what());
  }
}

inline std::string resolve(const std::filesystem::path& base, const std::string& p) {
  const std::filesystem::path path(p);
  return (path.is_absolute() ? path : base / path).lexically_normal().string();
}

}  // namespace detail

/// Relative paths resolve against `base_dir`.
inline PipelineConfig config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir) {
  if (!j.is_object()) throw ConfigError("config: top level must be an object");
  PipelineConfig c;
  if (j.contains("quadtree")) {
    const auto& q = j["quadtree"];
    c.quadtree.tau = detail::json_get(q, "tau", c.quadtree.tau);
    c.quadtree.max_depth = detail::json_get(q, "max_depth", c.quadtree.max_depth);
    c.quadtree.min_side = detail::json_get(q, "min_side", c.quadtree.min_side);
  }
  c.channels = detail::json_get(j, "channels", c.channels);
  c.attention_heads = detail::json_get(j, "attention_heads", c.attention_heads);
  c.ffn_hidden = detail::json_get(j, "ffn_hidden", c.ffn_hidden);
  if (j.contains("weights")) c.weights_manifest = detail::resolve(base_dir, j["weights"].get<std::string>());
  if (j.contains("taxonomy")) c.taxonomy_path = detail::resolve(base_dir, j["taxonomy"].get<std::string>());
  if (j.contains("compatibility")) {
    c.compatibility_path = detail::resolve(base_dir, j["compatibility"].get<std::string>());
  }
  if (j.contains("polygon")) {
    c.polygon.rdp_epsilon = detail::json_get(j["polygon"], "rdp_epsilon", c.polygon.rdp_epsilon);
    c.polygon.area_tolerance = detail::json_get(j["polygon"], "area_tolerance", c.polygon.area_tolerance);
  }
  if (j.contains("confidence_weights")) {
    const auto& w = j["confidence_weights"];
    c.confidence.part = detail::json_get(w, "part", c.confidence.part);
    c.confidence.damage = detail::json_get(w, "damage", c.confidence.damage);
    c.confidence.mask = detail::json_get(w, "mask", c.confidence.mask);
  }
  c.threshold = detail::json_get(j, "threshold", c.threshold);
  c.validate();
  for (const auto& p : {c.weights_manifest, c.taxonomy_path, c.compatibility_path}) {
    if (p && !std::filesystem::exists(*p)) throw ConfigError("config: referenced file missing: " + *p);
  }
  return c;
}

inline PipelineConfig load_config(const std::string& path) {
  return config_from_json(vdc::detail::read_json_file(path, "config"),
                          std::filesystem::path(path).parent_path());
}

/// Deterministic uniform draws in [-a, a] independent of the standard
/// library's distribution implementations.
class WeightRng {
 public:
  explicit WeightRng(std::uint64_t seed) : engine_(seed) {}

  double uniform(double a) {
    const double u = static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    return (2.0 * u - 1.0) * a;
  }

  Tensor tensor(const Shape& shape, double a) {
    Tensor t(shape);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = uniform(a);
    return t;
  }

 private:
  std::mt19937_64 engine_;
};

/// Weights drawn from `seed` with scale 1/sqrt(fan_in).
inline PipelineWeights random_weights(const PipelineConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  WeightRng rng(seed);
  const std::size_t c = cfg.channels, f = cfg.ffn_hidden;
  auto s = [](std::size_t fan_in) { return 1.0 / std::sqrt(static_cast<double>(fan_in)); };
  PipelineWeights w;
  w.extractor.conv.weight = rng.tensor({3, 3, 3, c}, s(27));
  w.extractor.conv.bias = rng.tensor({c}, 0.1);
  w.extractor.laterals = {rng.tensor({c, c}, s(c)), rng.tensor({c, c}, s(c))};
  w.attention.heads = cfg.attention_heads;
  w.attention.wq = rng.tensor({c, c}, s(c));
  w.attention.wk = rng.tensor({c, c}, s(c));
  w.attention.wv = rng.tensor({c, c}, s(c));
  w.attention.wo = rng.tensor({c, c}, s(c));
  w.ffn.w1 = rng.tensor({c, f}, s(c));
  w.ffn.b1 = rng.tensor({f}, 0.1);
  w.ffn.w2 = rng.tensor({f, c}, s(f));
  w.ffn.b2 = rng.tensor({c}, 0.1);
  w.mask_projection = rng.tensor({c}, s(c));
  w.mask_bias = rng.uniform(0.5);
  w.heads.damage = rng.tensor({kDamageClasses, c}, s(c));
  w.heads.part = rng.tensor({kPartClasses, c}, s(c));
  w.heads.fake = rng.tensor({kFakeClasses, c}, s(c));
  return w;
}

inline constexpr const char* kManifestKeys[] = {
    "conv_weight", "conv_bias", "lateral_fine", "lateral_coarse", "wq", "wk", "wv", "wo",
    "ffn_w1", "ffn_b1", "ffn_w2", "ffn_b2", "mask_projection", "mask_bias",
    "head_damage", "head_part", "head_fake"};

/// Manifest: {"attention_heads": h, "<key>": "file.mten", ...} for every key
/// in kManifestKeys, paths relative to the manifest.
inline PipelineWeights load_weights(const std::string& manifest_path) {
  const auto j = vdc::detail::read_json_file(manifest_path, "weights");
  const auto base = std::filesystem::path(manifest_path).parent_path();
  std::map<std::string, Tensor> t;
  for (const char* key : kManifestKeys) {
    if (!j.contains(key) || !j[key].is_string()) {
      throw ConfigError(std::string("weights: manifest lacks '") + key + "'");
    }
    try {
      t[key] = io::load_mten(detail::resolve(base, j[key].get<std::string>()));
    } catch (const InputError& e) {
      throw ConfigError(std::string("weights: ") + key + ": " + e.what());
    }
  }
  PipelineWeights w;
  w.extractor.conv = {t["conv_weight"], t["conv_bias"]};
  w.extractor.laterals = {t["lateral_fine"], t["lateral_coarse"]};
  w.attention = {t["wq"], t["wk"], t["wv"], t["wo"], detail::json_get<std::size_t>(j, "attention_heads", 1)};
  w.ffn = {t["ffn_w1"], t["ffn_b1"], t["ffn_w2"], t["ffn_b2"]};
  w.mask_projection = t["mask_projection"];
  if (t["mask_bias"].size() != 1) throw ConfigError("weights: mask_bias must hold one value");
  w.mask_bias = t["mask_bias"][0];
  w.heads = {t["head_damage"], t["head_part"], t["head_fake"]};
  return w;
}

inline void save_weights(const std::string& dir, const PipelineWeights& w) {
  std::filesystem::create_directories(dir);
  const std::map<std::string, Tensor> t{
      {"conv_weight", w.extractor.conv.weight},
      {"conv_bias", w.extractor.conv.bias},
      {"lateral_fine", w.extractor.laterals.at(0)},
      {"lateral_coarse", w.extractor.laterals.at(1)},
      {"wq", w.attention.wq},
      {"wk", w.attention.wk},
      {"wv", w.attention.wv},
      {"wo", w.attention.wo},
      {"ffn_w1", w.ffn.w1},
      {"ffn_b1", w.ffn.b1},
      {"ffn_w2", w.ffn.w2},
      {"ffn_b2", w.ffn.b2},
      {"mask_projection", w.mask_projection},
      {"mask_bias", Tensor({1}, w.mask_bias)},
      {"head_damage", w.heads.damage},
      {"head_part", w.heads.part},
      {"head_fake", w.heads.fake}};
  nlohmann::json manifest{{"attention_heads", w.attention.heads}};
  for (const auto& [key, tensor] : t) {
    io::save_mten((std::filesystem::path(dir) / (key + ".mten")).string(), tensor);
    manifest[key] = key + ".mten";
  }
  std::ofstream os(std::filesystem::path(dir) / "weights.json");
  os << manifest.dump(2) << '\n';
}

/// Extractor whose feature channel c copies input channel c mod 3.
inline ExtractorWeights identity_extractor(std::size_t channels) {
  ExtractorWeights e;
  e.conv.weight = Tensor({3, 3, 3, channels});
  for (std::size_t c = 0; c < channels; ++c) e.conv.weight[((1 * 3 + 1) * 3 + c % 3) * channels + c] = 1.0;
  e.conv.bias = Tensor({channels});
  e.laterals = {Tensor::identity(channels), Tensor({channels, channels})};
  return e;
}

inline bool is_power_of_two(std::size_t v) { return v != 0 && (v & (v - 1)) == 0; }

inline constexpr std::size_t kMaxImageSide = 256;

/// relu(conv3x3(I)) at full resolution, its 2x2 average one level down,
/// fused top-down.
inline Tensor extract_features(const Tensor& image, const ExtractorWeights& w) {
  if (image.rank() != 3 || image.dim(2) != 3) {
    throw ShapeError("extract_features: expected [H x W x 3], got " + shape_string(image.shape()));
  }
  const std::size_t h = image.dim(0), wd = image.dim(1);
  if (!is_power_of_two(h) || !is_power_of_two(wd) || h < 2 || wd < 2 || h > kMaxImageSide ||
      wd > kMaxImageSide) {
    throw InputError("extract_features: image sides must be powers of two in [2, 256], got " +
                     std::to_string(h) + "x" + std::to_string(wd));
  }
  if (w.laterals.size() != 2) throw ShapeError("extract_features: two lateral maps required");
  const Tensor fine = relu(nn::conv2d_3x3(image, w.conv, nn::Padding::kClamp));
  const Tensor coarse = nn::avg_pool2x(fine);
  return nn::fpn_fuse({fine, coarse}, w.laterals);
}

struct InstancePrediction {
  std::size_t component = 0;  // row-major component index
  BinaryMask mask;
  geometry::Polygon polygon;
  std::string part;
  std::string damage;
  double alpha_part = 0.0;
  double alpha_damage = 0.0;
  double alpha_mask = 0.0;
  std::vector<double> fake;  // kFakeClasses sigmoid scores
  double r = 0.0;
  bool spills = false;
  double s = 0.0;
  double alpha = 0.0;
};

struct PipelineResult {
  Tensor features;
  quadtree::NodeSequence sequence;
  Tensor refined;
  Tensor soft_mask;
  BinaryMask binary;
  std::vector<InstancePrediction> instances;   // kept, component order
  std::vector<InstancePrediction> suppressed;  // failed the compatibility check
  std::vector<vdc::VdcRecord> records;
};

struct PipelineContext {
  PipelineConfig config;
  PipelineWeights weights;
  vdc::Taxonomy taxonomy;
  vdc::CompatibilityTable compatibility;
};

namespace detail {

/// Reruns `fn`, prefixing any library error with the stage name while
/// keeping its type.
template <typename Fn>
auto stage(const char* name, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const ShapeError& e) {
    throw ShapeError(std::string(name) + ": " + e.what());
  } catch (const InfeasibleError& e) {
    throw InfeasibleError(std::string(name) + ": " + e.what());
  } catch (const DegenerateError& e) {
    throw DegenerateError(std::string(name) + ": " + e.what());
  } catch (const SizeLimitError& e) {
    throw SizeLimitError(std::string(name) + ": " + e.what());
  } catch (const ConfigError& e) {
    throw ConfigError(std::string(name) + ": " + e.what());
  } catch (const InputError& e) {
    throw InputError(std::string(name) + ": " + e.what());
  } catch (const InvariantViolation& e) {
    throw InvariantViolation(std::string(name) + ": " + e.what());
  }
}

inline std::size_t argmax(const Tensor& v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

}  // namespace detail

inline void validate_weights(const PipelineWeights& w, const PipelineConfig& cfg) {
  const std::size_t c = cfg.channels;
  auto expect = [](const Tensor& t, const Shape& s, const char* name) {
    if (t.shape() != s) {
      throw ConfigError(std::string("weights: ") + name + " has shape " + shape_string(t.shape()) +
                        ", expected " + shape_string(s));
    }
  };
  expect(w.extractor.conv.weight, {3, 3, 3, c}, "conv_weight");
  expect(w.extractor.conv.bias, {c}, "conv_bias");
  if (w.extractor.laterals.size() != 2) throw ConfigError("weights: two laterals required");
  expect(w.extractor.laterals[0], {c, c}, "lateral_fine");
  expect(w.extractor.laterals[1], {c, c}, "lateral_coarse");
  if (w.attention.heads != cfg.attention_heads) {
    throw ConfigError("weights: attention head count differs from config");
  }
  for (const auto* t : {&w.attention.wq, &w.attention.wk, &w.attention.wv, &w.attention.wo}) {
    expect(*t, {c, c}, "attention projection");
  }
  expect(w.ffn.w1, {c, cfg.ffn_hidden}, "ffn_w1");
  expect(w.ffn.b1, {cfg.ffn_hidden}, "ffn_b1");
  expect(w.ffn.w2, {cfg.ffn_hidden, c}, "ffn_w2");
  expect(w.ffn.b2, {c}, "ffn_b2");
  expect(w.mask_projection, {c}, "mask_projection");
  expect(w.heads.damage, {kDamageClasses, c}, "head_damage");
  expect(w.heads.part, {kPartClasses, c}, "head_part");
  expect(w.heads.fake, {kFakeClasses, c}, "head_fake");
}

/// Loads weights (manifest or seed), taxonomy and compatibility table.
inline PipelineContext make_context(const PipelineConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  PipelineWeights w = cfg.weights_manifest ? load_weights(*cfg.weights_manifest) : random_weights(cfg, seed);
  validate_weights(w, cfg);
  vdc::Taxonomy tax = cfg.taxonomy_path ? vdc::load_taxonomy(*cfg.taxonomy_path) : vdc::default_taxonomy();
  vdc::CompatibilityTable compat = cfg.compatibility_path
                                       ? vdc::load_compatibility(*cfg.compatibility_path, tax)
                                       : vdc::default_compatibility(tax);
  return PipelineContext{cfg, std::move(w), std::move(tax), std::move(compat)};
}

/// Scores one connected component.
inline InstancePrediction describe_component(std::size_t index, const BinaryMask& comp,
                                             const PipelineResult& state, const PipelineContext& ctx) {
  const auto& leaves = state.sequence.leaves;
  const std::size_t w = comp.width(), c = state.refined.dim(1);
  InstancePrediction inst;
  inst.component = index;
  inst.mask = comp;
  inst.polygon = geometry::mask_polygon(comp, ctx.config.polygon);
  inst.s = geometry::polygon_orientation(inst.polygon);

  // Leaves touching the component: query = mean refined row, part extent = their union.
  BinaryMask support(comp.height(), comp.width());
  Tensor query({c});
  std::size_t touching = 0;
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    const quadtree::Region& r = leaves[i].region;
    bool hit = false;
    for (std::size_t y = r.y0; y < r.y0 + r.height && !hit; ++y)
      for (std::size_t x = r.x0; x < r.x0 + r.width && !hit; ++x) hit = comp[y * w + x];
    if (!hit) continue;
    ++touching;
    for (std::size_t k = 0; k < c; ++k) query[k] += state.refined(i, k);
    for (std::size_t y = r.y0; y < r.y0 + r.height; ++y)
      for (std::size_t x = r.x0; x < r.x0 + r.width; ++x) support.set(y, x, true);
  }
  marsail::detail::require(touching > 0, "component overlaps no quadtree leaf");
  query = scale(query, 1.0 / static_cast<double>(touching));

  const nn::HeadOutputs heads = nn::classification_heads(query, ctx.weights.heads);
  const std::size_t pi = detail::argmax(heads.part), di = detail::argmax(heads.damage);
  inst.part = ctx.taxonomy.part()[pi];
  inst.damage = ctx.taxonomy.damage()[di];
  inst.alpha_part = heads.part[pi];
  inst.alpha_damage = heads.damage[di];
  inst.fake.assign(heads.fake.data().begin(), heads.fake.data().end());

  double soft = 0.0;
  for (std::size_t i = 0; i < comp.size(); ++i)
    if (comp[i]) soft += state.soft_mask[i];
  inst.alpha_mask = soft / static_cast<double>(comp.area());

  const vdc::SeverityRatio sev = vdc::severity_ratio(comp, support);
  inst.r = sev.r;
  inst.spills = sev.spills;
  inst.alpha = vdc::aggregate_confidence(inst.alpha_part, inst.alpha_damage, inst.alpha_mask,
                                         ctx.config.confidence);
  return inst;
}

inline PipelineResult run_pipeline(const Tensor& image, const PipelineContext& ctx) {
  PipelineResult res;
  res.features = detail::stage("features", [&] { return extract_features(image, ctx.weights.extractor); });
  res.sequence = detail::stage("quadtree", [&] { return quadtree::serialize_sequence(res.features, ctx.config.quadtree); });
  res.refined = detail::stage("encoder", [&] {
    return nn::encoder_layer(res.sequence.features, ctx.weights.attention, ctx.weights.ffn);
  });
  res.soft_mask = detail::stage("reconstruct", [&] {
    return geometry::reconstruct_mask(res.sequence, res.refined, ctx.weights.mask_projection,
                                      ctx.weights.mask_bias);
  });
  res.binary = BinaryMask::threshold(res.soft_mask, ctx.config.threshold);
  const auto comps = connected_components(res.binary);
  std::vector<InstancePrediction> all;
  detail::stage("instances", [&] {
    for (std::size_t i = 0; i < comps.size(); ++i) all.push_back(describe_component(i, comps[i], res, ctx));
    return 0;
  });
  auto filtered = vdc::consistency_filter(all, ctx.compatibility);
  res.instances = std::move(filtered.kept);
  res.suppressed = std::move(filtered.suppressed);
  detail::stage("vdc", [&] {
    for (const auto& inst : res.instances) {
      res.records.push_back(vdc::encode_vdc(ctx.taxonomy, inst.part, inst.damage, inst.r, inst.s, inst.alpha));
    }
    return 0;
  });
  return res;
}

inline nlohmann::json polygon_to_json(const geometry::Polygon& p) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& v : p.vertices) arr.push_back({v.x, v.y});
  return arr;
}

inline nlohmann::json instance_to_json(const InstancePrediction& inst) {
  return nlohmann::json{{"component", inst.component},
                        {"area", inst.mask.area()},
                        {"part", inst.part},
                        {"damage", inst.damage},
                        {"alpha_part", inst.alpha_part},
                        {"alpha_damage", inst.alpha_damage},
                        {"alpha_mask", inst.alpha_mask},
                        {"fake", inst.fake},
                        {"r", inst.r},
                        {"spills", inst.spills},
                        {"s", inst.s},
                        {"alpha", inst.alpha},
                        {"polygon", polygon_to_json(inst.polygon)}};
}

/// Writes soft_mask.pgm, instance_<k>.pgm, polygons.json, instances.json
/// and vdc.json into `dir`. Returns the written file names in order.
inline std::vector<std::string> write_artifacts(const std::string& dir, const PipelineResult& res) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  std::vector<std::string> files;
  auto path = [&](const std::string& name) {
    files.push_back(name);
    return (fs::path(dir) / name).string();
  };
  io::save_pgm(path("soft_mask.pgm"), res.soft_mask);
  nlohmann::json polys = nlohmann::json::array();
  nlohmann::json insts = nlohmann::json::object();
  insts["kept"] = nlohmann::json::array();
  insts["suppressed"] = nlohmann::json::array();
  for (const auto& inst : res.instances) {
    io::save_mask_pgm(path("instance_" + std::to_string(inst.component) + ".pgm"), inst.mask);
    polys.push_back({{"component", inst.component}, {"polygon", polygon_to_json(inst.polygon)}});
    insts["kept"].push_back(instance_to_json(inst));
  }
  for (const auto& inst : res.suppressed) insts["suppressed"].push_back(instance_to_json(inst));
  auto dump = [&](const std::string& name, const nlohmann::json& j) {
    std::ofstream os(path(name), std::ios::binary);
    if (!os) throw InputError("cannot write " + name);
    os << j.dump(2) << '\n';
  };
  dump("polygons.json", polys);
  dump("instances.json", insts);
  dump("vdc.json", vdc::to_json(res.records));
  return files;
}

}  // namespace marsail::pipeline
