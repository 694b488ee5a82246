#pragma once

// Label taxonomy, part/damage compatibility, severity, confidence
// aggregation and the vehicle damage code (VDC) encoder.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "json.hpp"
#include "marsail/error.hpp"
#include "marsail/labels.hpp"
#include "marsail/mask.hpp"

namespace marsail::vdc {

class Taxonomy {
 public:
  Taxonomy(std::vector<std::string> damage, std::vector<std::string> fake,
           std::vector<std::string> part)
      : damage_(std::move(damage)), fake_(std::move(fake)), part_(std::move(part)) {
    check("damage", damage_, kDamageClasses, damage_index_);
    check("fake", fake_, kFakeClasses, fake_index_);
    check("part", part_, kPartClasses, part_index_);
  }

  const std::vector<std::string>& damage() const noexcept { return damage_; }
  const std::vector<std::string>& fake() const noexcept { return fake_; }
  const std::vector<std::string>& part() const noexcept { return part_; }

  std::size_t damage_index(std::string_view name) const { return lookup(damage_index_, name, "damage"); }
  std::size_t part_index(std::string_view name) const { return lookup(part_index_, name, "part"); }
  std::size_t fake_index(std::string_view name) const { return lookup(fake_index_, name, "fake"); }

  bool has_damage(std::string_view name) const { return damage_index_.contains(std::string(name)); }
  bool has_part(std::string_view name) const { return part_index_.contains(std::string(name)); }

 private:
  using Index = std::unordered_map<std::string, std::size_t>;

  static void check(const char* set, const std::vector<std::string>& names, std::size_t expected,
                    Index& index) {
    if (names.size() != expected) {
      throw ConfigError(std::string("taxonomy: ") + set + " set has " +
                        std::to_string(names.size()) + " names, expected " +
                        std::to_string(expected));
    }
    for (std::size_t i = 0; i < names.size(); ++i) {
      const std::string& n = names[i];
      if (n.empty() || n.find(':') != std::string::npos) {
        throw ConfigError(std::string("taxonomy: invalid ") + set + " name '" + n + "'");
      }
      if (!index.emplace(n, i).second) {
        throw ConfigError(std::string("taxonomy: duplicate ") + set + " name '" + n + "'");
      }
    }
  }

  static std::size_t lookup(const Index& index, std::string_view name, const char* set) {
    auto it = index.find(std::string(name));
    if (it == index.end()) {
      throw InputError(std::string("unknown ") + set + " label '" + std::string(name) + "'");
    }
    return it->second;
  }

  std::vector<std::string> damage_, fake_, part_;
  Index damage_index_, fake_index_, part_index_;
};

/// Category names of the damage and part datasets.
inline Taxonomy default_taxonomy() {
  std::vector<std::string> damage{
      "scrape",      "dent",           "loose",        "crackedpaint", "torn",
      "scratch",     "crack",          "brokenlight",  "crackedglass", "shatteredglass",
      "eartorn_1",   "eartorn_2",      "ruined",       "missing",      "sticker",
      "chip",        "fake",           "fakemud",      "fakeshadow",   "fakeshape",
      "fakebirddropping", "fakewaterdrip", "fakestain", "deform",      "crush",
      "ding"};
  std::vector<std::string> fake{"fake",      "fakemud",          "fakeshadow",
                                "fakeshape", "fakebirddropping", "fakewaterdrip",
                                "fakestain"};
  std::vector<std::string> part{
      "frontbumper",  "rearbumper",     "hood",           "frontfender",     "rearfender",
      "frontdoor",    "reardoor",       "trunklid",       "frontwindshield", "rearwindshield",
      "frontsidewindow", "rearsidewindow", "sidewindow",  "sidemirror",      "headlight",
      "grill",        "lowergrill",     "taillight",      "wheel",           "roof",
      "foglight",     "frontskirt",     "rearskirt",      "sideskirt",       "licenseplate",
      "doorhandle",   "gastank",        "frontpillar",    "rearpillar",      "rockerpanel",
      "backdoor",     "bumpercladding", "runningboard",   "bedsidepanel",    "tailgate",
      "cab",          "slidingdoor",    "sidepanel",      "headvan",         "batterybox",
      "sunroof",      "spoiler",        "brandlogo",      "carryboy",        "fenderflare",
      "roofrack",     "doorflare",      "sharkfin",       "grillflare",      "hoodflare",
      "trunklidflare", "panelundertailgate", "doorupperframefront", "doorupperframerear",
      "bumperflare",  "tailgatecover",  "storageroom",    "rollbar",         "tailgateflare",
      "backdoorflare", "cornerundertaillight"};
  return Taxonomy(std::move(damage), std::move(fake), std::move(part));
}

namespace detail {

inline nlohmann::json read_json_file(const std::string& path, const char* what) {
  std::ifstream is(path);
  if (!is) throw ConfigError(std::string(what) + ": cannot open " + path);
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string(what) + ": " + path + ": " + e.what());
  }
}

inline std::vector<std::string> string_list(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || !j[key].is_array()) {
    throw ConfigError(std::string("taxonomy: missing array '") + key + "'");
  }
  std::vector<std::string> out;
  for (const auto& v : j[key]) {
    if (!v.is_string()) throw ConfigError(std::string("taxonomy: non-string entry in '") + key + "'");
    out.push_back(v.get<std::string>());
  }
  return out;
}

}  // namespace detail

inline Taxonomy taxonomy_from_json(const nlohmann::json& j) {
  return Taxonomy(detail::string_list(j, "damage"), detail::string_list(j, "fake"),
                  detail::string_list(j, "part"));
}

/// {"damage": [...26], "fake": [...7], "part": [...61]}
inline Taxonomy load_taxonomy(const std::string& path) {
  return taxonomy_from_json(detail::read_json_file(path, "taxonomy"));
}

inline nlohmann::json taxonomy_to_json(const Taxonomy& t) {
  return nlohmann::json{{"damage", t.damage()}, {"fake", t.fake()}, {"part", t.part()}};
}

/// Pairs are valid unless listed as invalid. Optional priors give a soft
/// plausibility weight per pair.
class CompatibilityTable {
 public:
  explicit CompatibilityTable(Taxonomy taxonomy) : taxonomy_(std::move(taxonomy)) {}

  void mark_invalid(std::string_view part, std::string_view damage) {
    invalid_.insert({taxonomy_.part_index(part), taxonomy_.damage_index(damage)});
  }

  void set_prior(std::string_view part, std::string_view damage, double weight) {
    if (!(weight >= 0.0 && weight <= 1.0)) throw ConfigError("compatibility: prior outside [0, 1]");
    priors_[{taxonomy_.part_index(part), taxonomy_.damage_index(damage)}] = weight;
  }

  bool is_valid(std::string_view part, std::string_view damage) const {
    return !invalid_.contains({taxonomy_.part_index(part), taxonomy_.damage_index(damage)});
  }

  /// Soft S_i: table prior when present, otherwise 1 for valid and 0 for
  /// invalid pairs.
  double plausibility(std::string_view part, std::string_view damage) const {
    const std::pair key{taxonomy_.part_index(part), taxonomy_.damage_index(damage)};
    if (auto it = priors_.find(key); it != priors_.end()) return it->second;
    return invalid_.contains(key) ? 0.0 : 1.0;
  }

  std::size_t invalid_count() const noexcept { return invalid_.size(); }
  const Taxonomy& taxonomy() const noexcept { return taxonomy_; }

  nlohmann::json to_json() const {
    nlohmann::json pairs = nlohmann::json::array();
    for (const auto& [p, d] : invalid_) {
      pairs.push_back({taxonomy_.part()[p], taxonomy_.damage()[d]});
    }
    nlohmann::json j{{"invalid_pairs", pairs}};
    if (!priors_.empty()) {
      nlohmann::json pri = nlohmann::json::array();
      for (const auto& [k, w] : priors_) {
        pri.push_back({taxonomy_.part()[k.first], taxonomy_.damage()[k.second], w});
      }
      j["priors"] = pri;
    }
    return j;
  }

 private:
  Taxonomy taxonomy_;
  std::set<std::pair<std::size_t, std::size_t>> invalid_;
  std::map<std::pair<std::size_t, std::size_t>, double> priors_;
};

/// Glass parts cannot dent or crack paint; body panels cannot carry glass or
/// lamp damage.
inline CompatibilityTable default_compatibility(const Taxonomy& t) {
  CompatibilityTable table(t);
  const std::vector<std::string> glass{"frontwindshield", "rearwindshield", "frontsidewindow",
                                       "rearsidewindow", "sidewindow"};
  const std::vector<std::string> glass_invalid{"dent",   "ding",      "crackedpaint",
                                               "deform", "eartorn_1", "eartorn_2"};
  const std::vector<std::string> panels{"frontbumper", "rearbumper", "hood",    "frontfender",
                                        "rearfender",  "frontdoor",  "reardoor", "trunklid",
                                        "roof",        "tailgate"};
  const std::vector<std::string> panel_invalid{"crackedglass", "shatteredglass", "brokenlight"};
  for (const auto& p : glass)
    for (const auto& d : glass_invalid) table.mark_invalid(p, d);
  for (const auto& p : panels)
    for (const auto& d : panel_invalid) table.mark_invalid(p, d);
  return table;
}

/// {"invalid_pairs": [["part", "damage"], ...], "priors": [["part", "damage", w], ...]}
inline CompatibilityTable compatibility_from_json(const nlohmann::json& j, const Taxonomy& t) {
  CompatibilityTable table(t);
  if (!j.contains("invalid_pairs") || !j["invalid_pairs"].is_array()) {
    throw ConfigError("compatibility: missing array 'invalid_pairs'");
  }
  for (const auto& pair : j["invalid_pairs"]) {
    if (!pair.is_array() || pair.size() != 2 || !pair[0].is_string() || !pair[1].is_string()) {
      throw ConfigError("compatibility: each invalid pair must be [part, damage]");
    }
    try {
      table.mark_invalid(pair[0].get<std::string>(), pair[1].get<std::string>());
    } catch (const InputError& e) {
      throw ConfigError(std::string("compatibility: ") + e.what());
    }
  }
  if (j.contains("priors")) {
    for (const auto& p : j["priors"]) {
      if (!p.is_array() || p.size() != 3) {
        throw ConfigError("compatibility: each prior must be [part, damage, weight]");
      }
      try {
        table.set_prior(p[0].get<std::string>(), p[1].get<std::string>(), p[2].get<double>());
      } catch (const InputError& e) {
        throw ConfigError(std::string("compatibility: ") + e.what());
      }
    }
  }
  return table;
}

inline CompatibilityTable load_compatibility(const std::string& path, const Taxonomy& t) {
  return compatibility_from_json(detail::read_json_file(path, "compatibility"), t);
}

template <typename T>
concept PartDamageLabeled = requires(const T& v) {
  { v.part } -> std::convertible_to<std::string_view>;
  { v.damage } -> std::convertible_to<std::string_view>;
};

template <typename T>
struct FilterResult {
  std::vector<T> kept;
  std::vector<T> suppressed;
};

/// Splits instances by pair validity; relative order is preserved in both lists.
template <PartDamageLabeled T>
FilterResult<T> consistency_filter(const std::vector<T>& instances,
                                   const CompatibilityTable& compat) {
  FilterResult<T> out;
  for (const T& inst : instances) {
    (compat.is_valid(inst.part, inst.damage) ? out.kept : out.suppressed).push_back(inst);
  }
  return out;
}

struct SeverityRatio {
  double r = 0.0;
  bool spills = false;  // damage area exceeds the part area
};

/// r = Area(damage) / Area(part).
inline SeverityRatio severity_ratio(const BinaryMask& damage, const BinaryMask& part) {
  require_same_extent(damage, part, "severity_ratio");
  const std::size_t pa = part.area();
  if (pa == 0) throw DegenerateError("severity_ratio: empty part mask");
  const double r = static_cast<double>(damage.area()) / static_cast<double>(pa);
  return {r, r > 1.0};
}

struct ConfidenceWeights {
  double part = 1.0;
  double damage = 1.0;
  double mask = 1.0;

  void validate() const {
    if (part < 0.0 || damage < 0.0 || mask < 0.0 || !(part + damage + mask > 0.0)) {
      throw ConfigError("confidence weights must be nonnegative with a positive sum");
    }
  }
};

/// Convex combination of the three confidences (weights normalized to sum 1).
inline double aggregate_confidence(double alpha_part, double alpha_damage, double alpha_mask,
                                   const ConfidenceWeights& w = {}) {
  w.validate();
  for (double a : {alpha_part, alpha_damage, alpha_mask}) {
    if (!(a >= 0.0 && a <= 1.0)) throw InputError("aggregate_confidence: input outside [0, 1]");
  }
  const double total = w.part + w.damage + w.mask;
  const double alpha = (w.part * alpha_part + w.damage * alpha_damage + w.mask * alpha_mask) / total;
  return std::clamp(alpha, 0.0, 1.0);
}

enum class SeverityBand { kS1, kS2, kS3 };

/// S1: r < 0.1, S2: 0.1 <= r < 0.4, S3: r >= 0.4.
inline SeverityBand severity_band(double r) {
  if (r < 0.1) return SeverityBand::kS1;
  if (r < 0.4) return SeverityBand::kS2;
  return SeverityBand::kS3;
}

inline const char* band_name(SeverityBand b) {
  switch (b) {
    case SeverityBand::kS1: return "S1";
    case SeverityBand::kS2: return "S2";
    case SeverityBand::kS3: return "S3";
  }
  return "S?";
}

/// Orientation snapped to the nearest multiple of 45 degrees, modulo 180.
inline int orientation_bucket(double degrees) {
  const long q = std::lround(degrees / 45.0);
  const long b = ((q * 45) % 180 + 180) % 180;
  return static_cast<int>(b);
}

struct VdcRecord {
  std::string code;
  std::string part;
  std::string damage;
  double r = 0.0;
  double s = 0.0;
  double alpha = 0.0;

  friend bool operator==(const VdcRecord&, const VdcRecord&) = default;
};

/// "<part>:<damage>:<S1|S2|S3>:<0|45|90|135>"
inline std::string vdc_code(std::string_view part, std::string_view damage, double r, double s) {
  return std::string(part) + ':' + std::string(damage) + ':' + band_name(severity_band(r)) + ':' +
         std::to_string(orientation_bucket(s));
}

inline VdcRecord encode_vdc(const Taxonomy& taxonomy, std::string_view part,
                            std::string_view damage, double r, double s, double alpha) {
  taxonomy.part_index(part);
  taxonomy.damage_index(damage);
  if (!(r >= 0.0) || !std::isfinite(r)) throw InputError("encode_vdc: severity ratio must be >= 0");
  if (!std::isfinite(s)) throw InputError("encode_vdc: orientation must be finite");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw InputError("encode_vdc: confidence outside [0, 1]");
  return VdcRecord{vdc_code(part, damage, r, s), std::string(part), std::string(damage), r, s, alpha};
}

inline nlohmann::json to_json(const VdcRecord& rec) {
  return nlohmann::json{{"code", rec.code}, {"part", rec.part}, {"damage", rec.damage},
                        {"r", rec.r},       {"s", rec.s},       {"alpha", rec.alpha}};
}

inline nlohmann::json to_json(const std::vector<VdcRecord>& recs) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : recs) arr.push_back(to_json(r));
  return arr;
}

}  // namespace marsail::vdc
