#pragma once

// On-disk datasets: manifest.txt + images/NNNNNN.png + tags/NNNNNN.png.
//
// Manifest: a header line "DVAE-MANIFEST 1 <J> <H> <W>", then one record per line:
//   <image> <tag or -> <3J pose floats, mm> <9 viewpoint floats, row-major>
//   <content id> <K> <K nuisance floats>
// Paths are relative to the manifest's directory unless absolute.

#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "dvae/data/render.hpp"
#include "dvae/data/sample.hpp"

namespace dvae::data {

namespace fs = std::filesystem;

inline constexpr const char* kManifestMagic = "DVAE-MANIFEST";
inline constexpr int kManifestVersion = 1;

struct ManifestRecord {
  std::string image;
  std::string tag;  // empty: none
  pose::Joints joints;
  pose::Matrix3d viewpoint = pose::Matrix3d::Identity();
  int content_id = -1;
  std::vector<double> nuisance;
};

struct Manifest {
  int joints = kSyntheticJoints;
  int height = 0, width = 0;  // 0: unknown (ingested data)
  std::vector<ManifestRecord> records;
};

inline std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 1469598103934665603ull) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, v);
  return buf;
}

inline std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string format_manifest(const Manifest& m) {
  std::ostringstream os;
  os << kManifestMagic << ' ' << kManifestVersion << ' ' << m.joints << ' ' << m.height << ' ' << m.width << '\n';
  for (const auto& r : m.records) {
    os << r.image << ' ' << (r.tag.empty() ? "-" : r.tag);
    for (int j = 0; j < r.joints.rows(); ++j)
      for (int k = 0; k < 3; ++k) os << ' ' << format_double(r.joints(j, k));
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b) os << ' ' << format_double(r.viewpoint(a, b));
    os << ' ' << r.content_id << ' ' << r.nuisance.size();
    for (double v : r.nuisance) os << ' ' << format_double(v);
    os << '\n';
  }
  return os.str();
}

inline void write_text_atomic(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out << text;
    if (!out) throw IoError("short write to " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

inline Manifest parse_manifest(const std::string& text, const std::string& source = "manifest.txt") {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  auto fail = [&](const std::string& what) -> ParseError {
    return ParseError(source + ":" + std::to_string(lineno) + ": " + what);
  };
  Manifest m;
  ++lineno;
  if (!std::getline(in, line)) throw fail("empty manifest");
  {
    std::istringstream h(line);
    std::string magic;
    int version = 0;
    if (!(h >> magic >> version >> m.joints >> m.height >> m.width) || magic != kManifestMagic) {
      throw fail("header must read '" + std::string(kManifestMagic) + " <version> <J> <H> <W>'");
    }
    if (version != kManifestVersion) throw fail("unsupported manifest version " + std::to_string(version));
    if (m.joints < 3) throw fail("joint count must be >= 3");
  }
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream r(line);
    ManifestRecord rec;
    std::string tag;
    if (!(r >> rec.image >> tag)) throw fail("record needs image and tag fields");
    if (tag != "-") rec.tag = tag;
    auto number = [&](const std::string& what) {
      std::string tok;
      if (!(r >> tok)) throw fail("record " + std::to_string(m.records.size()) + ": missing " + what);
      try {
        std::size_t used = 0;
        const double v = std::stod(tok, &used);
        if (used != tok.size() || !std::isfinite(v)) throw std::invalid_argument(tok);
        return v;
      } catch (const std::exception&) {
        throw fail("record " + std::to_string(m.records.size()) + ": bad number '" + tok + "' for " + what);
      }
    };
    rec.joints.resize(m.joints, 3);
    for (int j = 0; j < m.joints; ++j)
      for (int k = 0; k < 3; ++k) rec.joints(j, k) = number("joint " + std::to_string(j));
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b) rec.viewpoint(a, b) = number("viewpoint");
    rec.content_id = static_cast<int>(number("content id"));
    const double k = number("nuisance count");
    if (k < 0 || k != std::floor(k) || k > 64) throw fail("bad nuisance count");
    for (int i = 0; i < static_cast<int>(k); ++i) rec.nuisance.push_back(number("nuisance"));
    std::string extra;
    if (r >> extra) throw fail("record " + std::to_string(m.records.size()) + ": trailing field '" + extra + "'");
    m.records.push_back(std::move(rec));
  }
  return m;
}

inline Manifest read_manifest(const fs::path& dir) {
  const fs::path p = dir / "manifest.txt";
  if (!fs::exists(p)) throw IoError("no manifest at " + p.string());
  return parse_manifest(read_file(p), p.string());
}

inline std::string manifest_hash(const fs::path& dir) { return hex64(fnv1a(read_file(dir / "manifest.txt"))); }

// Per-record generator seed; train and test draw from disjoint streams.
inline std::uint64_t record_seed(std::uint64_t seed, const std::string& split, std::uint64_t index) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  };
  return mix(mix(fnv1a(split) ^ mix(seed)) ^ index);
}

inline std::string record_name(std::size_t i) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "%06zu", i);
  return buf;
}

struct GenerateResult {
  std::string manifest_hash;
  std::size_t records = 0;
};

inline GenerateResult generate_dataset(const fs::path& out, std::size_t n, std::uint64_t seed,
                                       const RenderPreset& preset, const std::string& split) {
  if (n < 1) throw ConfigError("dataset needs n >= 1");
  if (split != "train" && split != "test") throw ConfigError("split must be train or test");
  std::error_code ec;
  fs::create_directories(out / "images", ec);
  fs::create_directories(out / "tags", ec);
  if (ec || !fs::is_directory(out / "images")) throw IoError("cannot create dataset directory " + out.string());
  Manifest m;
  m.joints = kSyntheticJoints;
  m.height = m.width = preset.size;
  for (std::size_t i = 0; i < n; ++i) {
    std::mt19937_64 rng(record_seed(seed, split, i));
    const SceneParams params = sample_scene(rng);
    const Sample s = generate_sample(params, preset);
    const std::string name = record_name(i) + ".png";
    write_png(out / "images" / name, s.image);
    write_png(out / "tags" / name, *s.content_tag);
    m.records.push_back({"images/" + name, "tags/" + name, s.pose3d->joints, s.viewpoint->rotation,
                         params.content_id, std::vector<double>(params.nuisance.begin(), params.nuisance.end())});
  }
  write_text_atomic(out / "manifest.txt", format_manifest(m));
  return {manifest_hash(out), n};
}

struct LabelPolicy {
  enum class Kind { full, semi, weak_viewpoint } kind = Kind::full;
  double percent = 100;

  // Number of leading records that keep every label.
  std::size_t labelled_count(std::size_t n) const {
    if (kind == Kind::full) return n;
    return static_cast<std::size_t>(std::floor(static_cast<double>(n) * percent / 100.0 + 1e-9));
  }

  unsigned mask_for(std::size_t index, std::size_t n, unsigned available) const {
    if (index < labelled_count(n)) return available;
    return kind == Kind::weak_viewpoint ? (available & kViewpoint) : 0u;
  }

  std::string to_string() const {
    if (kind == Kind::full) return "full";
    std::ostringstream os;
    os << (kind == Kind::semi ? "semi:" : "weak_viewpoint:") << percent;
    return os.str();
  }

  // "full", "semi:<m>", "weak_viewpoint:<m>"; "semi(<m>%)" is accepted too.
  static LabelPolicy parse(std::string s) {
    for (char& c : s)
      if (c == '(' || c == ')' || c == '%') c = c == '(' ? ':' : ' ';
    while (!s.empty() && s.back() == ' ') s.pop_back();
    LabelPolicy p;
    if (s == "full") return p;
    const auto colon = s.find(':');
    const std::string kind = s.substr(0, colon);
    if (kind == "semi") {
      p.kind = Kind::semi;
    } else if (kind == "weak_viewpoint") {
      p.kind = Kind::weak_viewpoint;
    } else {
      throw ConfigError("unknown supervision policy '" + s + "' (expected full, semi:<m>, weak_viewpoint:<m>)");
    }
    if (colon == std::string::npos) throw ConfigError("supervision policy '" + s + "' needs a percentage");
    try {
      p.percent = std::stod(s.substr(colon + 1));
    } catch (const std::exception&) {
      throw ConfigError("bad percentage in supervision policy '" + s + "'");
    }
    if (!(p.percent >= 0 && p.percent <= 100)) throw ConfigError("supervision percentage must be in [0, 100]");
    return p;
  }
};

struct LoadOptions {
  bool images = true;
  bool tags = true;
};

inline fs::path resolve(const fs::path& dir, const std::string& p) {
  const fs::path q(p);
  return q.is_absolute() ? q : dir / q;
}

// Masked labels are dropped from the yielded Sample; stored data is untouched.
inline std::vector<Sample> load_dataset(const fs::path& dir, const LabelPolicy& policy = {},
                                        const LoadOptions& opt = {}) {
  const Manifest m = read_manifest(dir);
  std::vector<Sample> out;
  out.reserve(m.records.size());
  const std::size_t n = m.records.size();
  for (std::size_t i = 0; i < n; ++i) {
    const auto& r = m.records[i];
    Sample s;
    s.index = i;
    s.content_id = r.content_id;
    unsigned available = kPose3D | kCPose | kViewpoint | (r.tag.empty() ? 0u : kContentTag);
    s.label_mask = policy.mask_for(i, n, available);
    if (opt.images) {
      s.image = read_png(resolve(dir, r.image));
      if (m.height && (s.image.height != m.height || s.image.width != m.width)) {
        throw ParseError(dir.string() + "/manifest.txt: record " + std::to_string(i) + ": image " + r.image +
                         " is not " + std::to_string(m.height) + "x" + std::to_string(m.width));
      }
    }
    pose::Pose3D p3;
    pose::Canonicalization f;
    try {
      p3 = pose::Pose3D(r.joints);
      f = pose::canonicalize(p3);
    } catch (const Error& e) {
      throw ParseError(dir.string() + "/manifest.txt: record " + std::to_string(i) + ": " + e.what());
    }
    if (s.has(kPose3D)) {
      s.pose3d = p3;
      s.root = f.root;
      s.scale = f.scale;
    }
    if (s.has(kCPose)) s.cpose = f.cpose;
    if (s.has(kViewpoint)) {
      if (!pose::is_rotation(r.viewpoint, 1e-6)) {
        throw ParseError(dir.string() + "/manifest.txt: record " + std::to_string(i) + ": viewpoint is not a rotation");
      }
      s.viewpoint = pose::Viewpoint{r.viewpoint};
    }
    if (s.has(kContentTag)) {
      if (opt.tags) {
        s.content_tag = read_png(resolve(dir, r.tag));
      } else {
        s.label_mask &= ~kContentTag;
      }
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace dvae::data
