#pragma once

// Detection / ground-truth sets as JSON:
// {"images": [{"id": "...", "detections": [{"class": "dent", "conf": 0.9,
//   "mask_pgm": "path.pgm" | "box": [x, y, w, h]}, ...]}, ...]}
// Ground-truth files use the same layout; "conf" is ignored there.

#include <cstddef>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "marsail/error.hpp"
#include "marsail/io/image.hpp"
#include "marsail/metrics.hpp"

namespace marsail::io {

/// Parses JSON text; syntax errors report the line number.
inline nlohmann::json parse_json_text(const std::string& text, const std::string& source) {
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    std::size_t line = 1;
    for (std::size_t i = 0; i < text.size() && i + 1 < e.byte; ++i) line += text[i] == '\n' ? 1 : 0;
    throw InputError(source + ":" + std::to_string(line) + ": " + e.what());
  }
}

inline nlohmann::json load_json(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InputError("cannot open " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_json_text(ss.str(), path);
}

struct DetectionSet {
  std::vector<metrics::Detection> detections;
  std::vector<metrics::GroundTruth> ground_truth;
};

namespace detail {

inline std::string image_id_string(const nlohmann::json& id) {
  if (id.is_string()) return id.get<std::string>();
  if (id.is_number_integer()) return std::to_string(id.get<long long>());
  throw InputError("image id must be a string or integer");
}

inline metrics::Footprint parse_footprint(const nlohmann::json& d, const std::filesystem::path& base) {
  if (d.contains("mask_pgm")) {
    const std::filesystem::path p(d["mask_pgm"].get<std::string>());
    return load_mask_pgm((p.is_absolute() ? p : base / p).string());
  }
  if (d.contains("box")) {
    const auto& b = d["box"];
    if (!b.is_array() || b.size() != 4) throw InputError("box must be [x, y, w, h]");
    metrics::Box box{b[0].get<double>(), b[1].get<double>(), b[2].get<double>(), b[3].get<double>()};
    if (box.w < 0.0 || box.h < 0.0) throw InputError("box extent must be nonnegative");
    return box;
  }
  throw InputError("entry needs \"mask_pgm\" or \"box\"");
}

}  // namespace detail

/// Reads one file; `ground_truth` selects which list is filled.
inline DetectionSet load_detection_set(const std::string& path, bool ground_truth) {
  const nlohmann::json j = load_json(path);
  const auto base = std::filesystem::path(path).parent_path();
  DetectionSet out;
  try {
    if (!j.contains("images") || !j["images"].is_array()) throw InputError("missing array \"images\"");
    for (const auto& img : j["images"]) {
      const std::string id = detail::image_id_string(img.at("id"));
      if (!img.contains("detections")) continue;
      for (const auto& d : img["detections"]) {
        const std::string label = d.at("class").get<std::string>();
        if (ground_truth) {
          out.ground_truth.push_back({id, label, detail::parse_footprint(d, base)});
        } else {
          const double conf = d.at("conf").get<double>();
          if (!(conf >= 0.0 && conf <= 1.0)) throw InputError("conf outside [0, 1]");
          out.detections.push_back({id, label, conf, detail::parse_footprint(d, base)});
        }
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw InputError(path + ": " + e.what());
  } catch (const InputError& e) {
    throw InputError(path + ": " + e.what());
  }
  return out;
}

}  // namespace marsail::io
