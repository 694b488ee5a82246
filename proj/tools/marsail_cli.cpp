// Command-line front end: decompose, segment, eval, ctc-loss, decode, vdc.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "marsail/decode.hpp"
#include "marsail/io/dataset.hpp"
#include "marsail/io/image.hpp"
#include "marsail/io/mten.hpp"
#include "marsail/losses.hpp"
#include "marsail/metrics.hpp"
#include "marsail/pipeline.hpp"
#include "marsail/quadtree.hpp"
#include "marsail/vdc.hpp"

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

enum ExitCode { kOk = 0, kConfig = 2, kInput = 3, kInternal = 4 };

struct Globals {
  std::string config;
  std::string out;
  std::uint64_t seed = 0;
};

/// Prints to stdout and, with --out, also writes <out>/<name>.
void emit(const Globals& g, const std::string& name, const json& j) {
  const std::string text = j.dump(2);
  std::cout << text << '\n';
  if (!g.out.empty()) {
    fs::create_directories(g.out);
    std::ofstream os(fs::path(g.out) / name, std::ios::binary);
    if (!os) throw marsail::InputError("cannot write " + (fs::path(g.out) / name).string());
    os << text << '\n';
  }
}

marsail::pipeline::PipelineConfig pipeline_config(const Globals& g) {
  return g.config.empty() ? marsail::pipeline::PipelineConfig{} : marsail::pipeline::load_config(g.config);
}

struct DecomposeArgs {
  std::string image;
  std::optional<double> tau;
  std::optional<int> max_depth;
  std::optional<std::size_t> min_side;
};

void run_decompose(const Globals& g, const DecomposeArgs& a) {
  auto cfg = pipeline_config(g).quadtree;
  if (a.tau) cfg.tau = *a.tau;
  if (a.max_depth) cfg.max_depth = *a.max_depth;
  if (a.min_side) cfg.min_side = *a.min_side;
  cfg.validate();
  const auto image = marsail::io::load_ppm(a.image);
  const auto leaves = marsail::quadtree::decompose(image, cfg);
  json arr = json::array();
  for (const auto& l : leaves) {
    arr.push_back({{"x0", l.region.x0},
                   {"y0", l.region.y0},
                   {"w", l.region.width},
                   {"h", l.region.height},
                   {"depth", l.depth},
                   {"variance", l.variance}});
  }
  emit(g, "decompose.json",
       {{"order", marsail::quadtree::kOrderTag}, {"regions", arr}});
}

void run_segment(const Globals& g, const std::string& image_path) {
  const auto ctx = marsail::pipeline::make_context(pipeline_config(g), g.seed);
  const auto image = marsail::io::load_ppm(image_path);
  const auto res = marsail::pipeline::run_pipeline(image, ctx);
  if (!g.out.empty()) marsail::pipeline::write_artifacts(g.out, res);
  std::cout << marsail::vdc::to_json(res.records).dump(2) << '\n';
}

void run_eval(const Globals& g, const std::string& pred, const std::string& gt) {
  const auto p = marsail::io::load_detection_set(pred, false);
  const auto t = marsail::io::load_detection_set(gt, true);
  const auto report = marsail::metrics::coco_suite(p.detections, t.ground_truth);
  emit(g, "eval.json", marsail::metrics::report_to_json(report));
}

struct CtcArgs {
  std::string log_probs;
  std::string target;
  double gamma = 0.0;
  std::string alphabet = "abcdefghijklmnopqrstuvwxyz";
};

void run_ctc(const Globals& g, const CtcArgs& a) {
  marsail::losses::CtcProblem p{marsail::io::load_mten(a.log_probs),
                                marsail::decode::text_to_labels(a.target, a.alphabet)};
  const auto r = marsail::losses::focal_ctc_loss(p, {a.gamma});
  emit(g, "ctc_loss.json",
       {{"loss", r.loss}, {"p_t", r.p_t}, {"ctc", marsail::losses::ctc_neg_log_likelihood(p)}});
}

struct DecodeArgs {
  std::string log_probs;
  std::string mode = "greedy";
  std::size_t beam_width = 8;
  std::string transitions;
  std::string alphabet = "abcdefghijklmnopqrstuvwxyz";
};

void run_decode(const Globals& g, const DecodeArgs& a) {
  const auto lp = marsail::io::load_mten(a.log_probs);
  json out;
  if (a.mode == "greedy") {
    const auto labels = marsail::decode::ctc_greedy_decode(lp);
    out = {{"text", marsail::decode::labels_to_text(labels, a.alphabet)}, {"log_prob", nullptr}};
  } else if (a.mode == "beam") {
    marsail::decode::BeamConfig cfg;
    cfg.beam_width = a.beam_width;
    const auto hyps = marsail::decode::ctc_beam_search(lp, cfg);
    json beams = json::array();
    for (const auto& h : hyps) {
      beams.push_back({{"text", marsail::decode::labels_to_text(h.labels, a.alphabet)}, {"log_prob", h.log_prob}});
    }
    out = {{"text", hyps.empty() ? json("") : beams[0]["text"]},
           {"log_prob", hyps.empty() ? json(nullptr) : beams[0]["log_prob"]},
           {"beams", beams}};
  } else if (a.mode == "crf") {
    if (a.transitions.empty()) throw marsail::ConfigError("decode --mode crf requires --transitions");
    const marsail::decode::CrfModel m{lp, marsail::io::load_mten(a.transitions)};
    const auto r = marsail::decode::crf_viterbi(m);
    std::string text;
    for (std::size_t l : r.labels) {
      if (l == 0) continue;
      text += marsail::decode::labels_to_text({l}, a.alphabet);
    }
    out = {{"text", text}, {"log_prob", r.score}, {"labels", r.labels}};
  } else {
    throw marsail::ConfigError("decode: unknown mode '" + a.mode + "'");
  }
  emit(g, "decode.json", out);
}

struct VdcArgs {
  std::string part, damage;
  double r = 0.0, s = 0.0;
  double alpha_part = 1.0, alpha_damage = 1.0, alpha_mask = 1.0;
  std::string taxonomy, compatibility;
};

void run_vdc(const Globals& g, const VdcArgs& a) {
  const auto tax = a.taxonomy.empty() ? marsail::vdc::default_taxonomy() : marsail::vdc::load_taxonomy(a.taxonomy);
  const auto compat = a.compatibility.empty() ? marsail::vdc::default_compatibility(tax)
                                              : marsail::vdc::load_compatibility(a.compatibility, tax);
  marsail::vdc::ConfidenceWeights w;
  if (!g.config.empty()) w = marsail::pipeline::load_config(g.config).confidence;
  const double alpha = marsail::vdc::aggregate_confidence(a.alpha_part, a.alpha_damage, a.alpha_mask, w);
  const auto rec = marsail::vdc::encode_vdc(tax, a.part, a.damage, a.r, a.s, alpha);
  json j = marsail::vdc::to_json(rec);
  j["valid"] = compat.is_valid(a.part, a.damage);
  emit(g, "vdc.json", j);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"marsail: quadtree mask refinement, damage coding, CTC and evaluation tools"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config, "Pipeline config JSON")->check(CLI::ExistingFile);
  app.add_option("--out", g.out, "Output directory");
  app.add_option("--seed", g.seed, "Seed for generated weights");

  DecomposeArgs dec;
  auto* c_dec = app.add_subcommand("decompose", "Quadtree leaves of a PPM image");
  c_dec->add_option("image", dec.image, "PPM image")->required();
  c_dec->add_option("--tau", dec.tau, "Variance threshold");
  c_dec->add_option("--max-depth", dec.max_depth, "Depth limit");
  c_dec->add_option("--min-side", dec.min_side, "Smallest splittable side");

  std::string seg_image;
  auto* c_seg = app.add_subcommand("segment", "Run the full pipeline on a PPM image");
  c_seg->add_option("image", seg_image, "PPM image")->required();

  std::string pred, gt;
  auto* c_eval = app.add_subcommand("eval", "COCO-style evaluation");
  c_eval->add_option("--pred", pred, "Predictions JSON")->required();
  c_eval->add_option("--gt", gt, "Ground-truth JSON")->required();

  CtcArgs ctc;
  auto* c_ctc = app.add_subcommand("ctc-loss", "Focal CTC loss of a target");
  c_ctc->add_option("--log-probs", ctc.log_probs, "MTEN [T x (A+1)], blank at index 0")->required();
  c_ctc->add_option("--target", ctc.target, "Target text")->required();
  c_ctc->add_option("--gamma", ctc.gamma, "Focal exponent");
  c_ctc->add_option("--alphabet", ctc.alphabet, "Characters for labels 1..A");

  DecodeArgs dcd;
  auto* c_dcd = app.add_subcommand("decode", "Decode a log-probability matrix");
  c_dcd->add_option("--log-probs", dcd.log_probs, "MTEN [T x (A+1)] (CRF: unary scores [T x L])")->required();
  c_dcd->add_option("--mode", dcd.mode, "greedy | beam | crf")->check(CLI::IsMember({"greedy", "beam", "crf"}));
  c_dcd->add_option("--beam-width", dcd.beam_width, "Beam width");
  c_dcd->add_option("--transitions", dcd.transitions, "MTEN [L x L] CRF transition scores");
  c_dcd->add_option("--alphabet", dcd.alphabet, "Characters for labels 1..A");

  VdcArgs v;
  auto* c_vdc = app.add_subcommand("vdc", "Encode one damage code");
  c_vdc->add_option("--part", v.part)->required();
  c_vdc->add_option("--damage", v.damage)->required();
  c_vdc->add_option("--r", v.r, "Severity ratio")->required();
  c_vdc->add_option("--s", v.s, "Orientation in degrees")->required();
  c_vdc->add_option("--alpha-part", v.alpha_part);
  c_vdc->add_option("--alpha-damage", v.alpha_damage);
  c_vdc->add_option("--alpha-mask", v.alpha_mask);
  c_vdc->add_option("--taxonomy", v.taxonomy)->check(CLI::ExistingFile);
  c_vdc->add_option("--compat", v.compatibility)->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }

  try {
    if (*c_dec) run_decompose(g, dec);
    if (*c_seg) run_segment(g, seg_image);
    if (*c_eval) run_eval(g, pred, gt);
    if (*c_ctc) run_ctc(g, ctc);
    if (*c_dcd) run_decode(g, dcd);
    if (*c_vdc) run_vdc(g, v);
  } catch (const marsail::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const marsail::InvariantViolation& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return kInternal;
  } catch (const marsail::Error& e) {
    std::cerr << "input error: " << e.what() << '\n';
    return kInput;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return kInternal;
  }
  return kOk;
}
