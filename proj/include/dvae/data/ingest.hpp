#pragma once

// Annotation adapters for external 21-keypoint datasets (see docs/ingestion.md).

#include <filesystem>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "dvae/data/dataset.hpp"

namespace dvae::data {

inline constexpr int kExternalJoints = 21;

enum class ExternalFormat { rhd_like, stb_like };

inline ExternalFormat external_format_from_string(const std::string& s) {
  if (s == "rhd_like") return ExternalFormat::rhd_like;
  if (s == "stb_like") return ExternalFormat::stb_like;
  throw ConfigError("unknown annotation format '" + s + "' (expected rhd_like or stb_like)");
}

namespace detail {

inline std::string checked_image_field(const std::string& v, const std::string& field) {
  if (v.empty() || v.find_first_of(" \t\r\n") != std::string::npos) {
    throw FormatError(field + ": image path must be non-empty and contain no whitespace");
  }
  return v;
}

inline ManifestRecord make_record(const std::string& image, const pose::Joints& j, const std::string& field) {
  ManifestRecord r;
  r.image = image;
  r.joints = j;
  try {
    r.viewpoint = pose::canonicalize(pose::Pose3D(j)).viewpoint.rotation;
  } catch (const Error& e) {
    throw FormatError(field + ": " + e.what());
  }
  return r;
}

inline Manifest parse_rhd_like(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("not valid JSON: ") + e.what());
  }
  if (!doc.is_object() || !doc.contains("records") || !doc["records"].is_array()) {
    throw FormatError("records: expected a top-level array field");
  }
  Manifest m;
  m.joints = kExternalJoints;
  const auto& recs = doc["records"];
  for (std::size_t i = 0; i < recs.size(); ++i) {
    const std::string at = "records[" + std::to_string(i) + "]";
    const auto& r = recs[i];
    if (!r.is_object()) throw FormatError(at + ": expected an object");
    if (!r.contains("image") || !r["image"].is_string()) throw FormatError(at + ".image: expected a string");
    const std::string image = checked_image_field(r["image"].get<std::string>(), at + ".image");
    if (!r.contains("keypoints_mm") || !r["keypoints_mm"].is_array()) {
      throw FormatError(at + ".keypoints_mm: expected an array");
    }
    const auto& kp = r["keypoints_mm"];
    if (kp.size() != kExternalJoints) {
      throw FormatError(at + ".keypoints_mm: expected " + std::to_string(kExternalJoints) + " joints, got " +
                        std::to_string(kp.size()));
    }
    pose::Joints j(kExternalJoints, 3);
    for (int k = 0; k < kExternalJoints; ++k) {
      const std::string f = at + ".keypoints_mm[" + std::to_string(k) + "]";
      if (!kp[k].is_array() || kp[k].size() != 3) throw FormatError(f + ": expected [x, y, z]");
      for (int c = 0; c < 3; ++c) {
        if (!kp[k][c].is_number()) throw FormatError(f + "[" + std::to_string(c) + "]: expected a number");
        j(k, c) = kp[k][c].get<double>();
        if (!std::isfinite(j(k, c))) throw FormatError(f + "[" + std::to_string(c) + "]: not finite");
      }
    }
    m.records.push_back(make_record(image, j, at));
  }
  return m;
}

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) {
    while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
    while (!cell.empty() && cell.front() == ' ') cell.erase(cell.begin());
    out.push_back(cell);
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline Manifest parse_stb_like(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw FormatError("header: file is empty");
  const auto header = split_csv(line);
  std::vector<std::string> expect{"image"};
  for (int k = 0; k < kExternalJoints; ++k)
    for (const char* c : {"_x", "_y", "_z"}) expect.push_back("j" + std::to_string(k) + c);
  for (std::size_t i = 0; i < expect.size(); ++i) {
    if (i >= header.size()) throw FormatError("header: missing column " + expect[i]);
    if (header[i] != expect[i]) {
      throw FormatError("header: column " + std::to_string(i) + " is '" + header[i] + "', expected " + expect[i]);
    }
  }
  if (header.size() > expect.size()) throw FormatError("header: unexpected column " + header[expect.size()]);
  Manifest m;
  m.joints = kExternalJoints;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto cells = split_csv(line);
    const std::string at = "line " + std::to_string(lineno);
    if (cells.size() != expect.size()) {
      const std::size_t k = std::min(cells.size(), expect.size());
      throw FormatError(at + "." + expect[k < expect.size() ? k : expect.size() - 1] + ": expected " +
                        std::to_string(expect.size()) + " fields, got " + std::to_string(cells.size()));
    }
    const std::string image = checked_image_field(cells[0], at + ".image");
    pose::Joints j(kExternalJoints, 3);
    for (int k = 0; k < 3 * kExternalJoints; ++k) {
      const std::string& cell = cells[1 + k];
      try {
        std::size_t used = 0;
        const double v = std::stod(cell, &used);
        if (used != cell.size() || !std::isfinite(v)) throw std::invalid_argument(cell);
        j(k / 3, k % 3) = v;
      } catch (const std::exception&) {
        throw FormatError(at + "." + expect[1 + k] + ": bad number '" + cell + "'");
      }
    }
    m.records.push_back(make_record(image, j, at));
  }
  return m;
}

}  // namespace detail

// Writes <out>/manifest.txt; image paths point at the original files.
inline Manifest ingest_external(const fs::path& annotation, ExternalFormat format, const fs::path& out) {
  const std::string text = read_file(annotation);
  Manifest m = format == ExternalFormat::rhd_like ? detail::parse_rhd_like(text) : detail::parse_stb_like(text);
  if (m.records.empty()) throw FormatError("records: no records found");
  std::error_code ec;
  fs::create_directories(out, ec);
  if (!fs::is_directory(out)) throw IoError("cannot create " + out.string());
  const fs::path base = fs::absolute(annotation).parent_path();
  const fs::path out_abs = fs::absolute(out);
  for (auto& r : m.records) {
    const fs::path img = fs::path(r.image).is_absolute() ? fs::path(r.image) : base / r.image;
    r.image = img.lexically_normal().lexically_relative(out_abs.lexically_normal()).generic_string();
  }
  write_text_atomic(out / "manifest.txt", format_manifest(m));
  return m;
}

}  // namespace dvae::data
