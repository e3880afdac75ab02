#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "dvae/data/dataset.hpp"
#include "dvae/data/ingest.hpp"
#include "dvae/data/render.hpp"

using namespace dvae;
using namespace dvae::data;

namespace {

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("dvae_test_data_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

fs::path fixture(const std::string& name) { return fs::path(DVAE_FIXTURE_DIR) / name; }

SceneParams scene(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return sample_scene(rng);
}

constexpr unsigned kPoseLabels = kPose3D | kCPose | kViewpoint;

// A manifest of n synthetic records without image or tag files.
fs::path manifest_only(const std::string& name, std::size_t n) {
  const auto dir = scratch(name);
  Manifest m;
  m.height = m.width = 32;
  for (std::size_t i = 0; i < n; ++i) {
    const auto p = scene(i);
    const auto s = generate_sample(p);
    m.records.push_back({"images/x.png", "", s.pose3d->joints, s.viewpoint->rotation, p.content_id, {}});
  }
  write_text_atomic(dir / "manifest.txt", format_manifest(m));
  return dir;
}

}  // namespace

TEST(GenerateSample, Deterministic) {
  const auto p = scene(3);
  const auto a = generate_sample(p), b = generate_sample(p);
  EXPECT_EQ(a.image, b.image);
  EXPECT_EQ(*a.content_tag, *b.content_tag);
  EXPECT_EQ(a.pose3d->joints, b.pose3d->joints);
}

TEST(GenerateSample, IdentityViewAnglesGiveIdentityViewpoint) {
  auto p = scene(4);
  p.view = {0, 0, 0};
  const auto s = generate_sample(p);
  EXPECT_EQ(s.viewpoint->rotation, pose::Matrix3d::Identity());
  EXPECT_LT((pose::canonicalize(*s.pose3d).viewpoint.rotation - pose::Matrix3d::Identity()).cwiseAbs().maxCoeff(),
            1e-12);
}

TEST(GenerateSample, LabelsAreSelfConsistent) {
  for (std::uint64_t seed = 0; seed < 500; ++seed) {
    const auto p = scene(seed);
    const auto s = generate_sample(p);
    const auto f = pose::canonicalize(*s.pose3d);
    const pose::Matrix3d r = pose::rotation_zyx(p.view[0], p.view[1], p.view[2]);
    EXPECT_LT((f.viewpoint.rotation - r).cwiseAbs().maxCoeff(), 1e-6);
    EXPECT_NEAR(f.scale, p.scale, 1e-9);
    EXPECT_NO_THROW(check_sample(s));
    EXPECT_LE(s.image.pixels.cwiseAbs().maxCoeff(), 1.0f);
  }
}

TEST(GenerateSample, TagIsTheBackgroundWithoutTheHand) {
  const auto s = generate_sample(scene(5));
  int differing = 0;
  for (Eigen::Index i = 0; i < s.image.pixels.size(); ++i) differing += s.image.pixels[i] != s.content_tag->pixels[i];
  EXPECT_GT(differing, 20);
  EXPECT_LT(differing, s.image.pixels.size() / 2);
}

TEST(GenerateSample, OutOfLimitAnglesThrow) {
  auto p = scene(6);
  p.articulation[1] = deg(120);
  EXPECT_THROW(generate_sample(p), GenerationError);
  p = scene(6);
  p.view[1] = deg(80);
  EXPECT_THROW(generate_sample(p), GenerationError);
  p = scene(6);
  p.content_id = 5;
  EXPECT_THROW(generate_sample(p), GenerationError);
}

TEST(GenerateSample, Desk64Preset) {
  const auto s = generate_sample(scene(7), render_preset("desk64"));
  EXPECT_EQ(s.image.height, 64);
  EXPECT_THROW(render_preset("huge"), ConfigError);
}

TEST(Png, RoundTripIsQuantization) {
  const auto s = generate_sample(scene(8));
  const auto dir = scratch("png");
  write_png(dir / "a.png", s.image);
  EXPECT_EQ(read_png(dir / "a.png"), quantize(s.image));
  EXPECT_THROW(read_png(dir / "missing.png"), IoError);
}

TEST(GenerateDataset, WritesLayoutAndIsReproducible) {
  const auto a = scratch("gen_a"), b = scratch("gen_b");
  const auto ra = generate_dataset(a, 20, 1, render_preset("desk32"), "train");
  const auto rb = generate_dataset(b, 20, 1, render_preset("desk32"), "train");
  EXPECT_EQ(ra.manifest_hash, rb.manifest_hash);
  EXPECT_TRUE(fs::exists(a / "images" / "000019.png"));
  EXPECT_TRUE(fs::exists(a / "tags" / "000000.png"));
  const auto samples = load_dataset(a);
  ASSERT_EQ(samples.size(), 20u);
  for (const auto& s : samples) {
    EXPECT_EQ(s.label_mask, kAllLabels);
    EXPECT_NO_THROW(check_sample(s));
    EXPECT_EQ(s.image.height, 32);
  }
  // Stored images match a fresh render after quantization.
  std::mt19937_64 rng(record_seed(1, "train", 3));
  EXPECT_EQ(samples[3].image, quantize(generate_sample(sample_scene(rng)).image));
  EXPECT_THROW(generate_dataset(a, 0, 1, render_preset("desk32"), "train"), ConfigError);
}

TEST(GenerateDataset, TrainAndTestStreamsAreDisjoint) {
  std::set<std::uint64_t> seen;
  for (const char* split : {"train", "test"}) {
    for (std::uint64_t i = 0; i < 2000; ++i) {
      std::mt19937_64 rng(record_seed(7, split, i));
      const auto p = sample_scene(rng);
      std::string key;
      for (double v : p.articulation) key += format_double(v);
      for (double v : p.view) key += format_double(v);
      EXPECT_TRUE(seen.insert(fnv1a(key)).second);
    }
  }
}

TEST(LoadDataset, SemiPolicyCountsLabelledRecords) {
  const auto dir = manifest_only("semi", 2000);
  const auto samples = load_dataset(dir, LabelPolicy::parse("semi:50"), {.images = false});
  int full = 0, none = 0;
  for (const auto& s : samples) {
    full += s.label_mask == kPoseLabels;
    none += s.label_mask == 0;
    EXPECT_NO_THROW(check_sample(s));
  }
  EXPECT_EQ(full, 1000);
  EXPECT_EQ(none, 1000);
  EXPECT_EQ(samples[999].label_mask, kPoseLabels);
  EXPECT_EQ(samples[1000].label_mask, 0u);
}

TEST(LoadDataset, WeakViewpointPolicy) {
  const auto dir = manifest_only("weak", 2000);
  const auto before = manifest_hash(dir);
  const auto samples = load_dataset(dir, LabelPolicy::parse("weak_viewpoint(5%)"), {.images = false});
  int full = 0, view_only = 0;
  for (const auto& s : samples) {
    full += s.label_mask == kPoseLabels;
    view_only += s.label_mask == kViewpoint;
    EXPECT_NO_THROW(check_sample(s));
  }
  EXPECT_EQ(full, 100);
  EXPECT_EQ(view_only, 1900);
  EXPECT_FALSE(samples[100].pose3d.has_value());
  EXPECT_TRUE(samples[100].viewpoint.has_value());
  EXPECT_EQ(manifest_hash(dir), before);
  const auto all = load_dataset(dir, LabelPolicy::parse("full"), {.images = false});
  EXPECT_EQ(all[100].viewpoint->rotation, samples[100].viewpoint->rotation);
}

TEST(LabelPolicy, ParseErrors) {
  EXPECT_THROW(LabelPolicy::parse("partial:5"), ConfigError);
  EXPECT_THROW(LabelPolicy::parse("semi"), ConfigError);
  EXPECT_THROW(LabelPolicy::parse("semi:150"), ConfigError);
  EXPECT_EQ(LabelPolicy::parse("semi:25").labelled_count(2000), 500u);
}

TEST(LoadDataset, CorruptManifestNamesTheLine) {
  const auto dir = manifest_only("corrupt", 3);
  std::string text = read_file(dir / "manifest.txt");
  const auto second = text.find('\n', text.find('\n') + 1);
  text.insert(text.find(' ', text.find(' ', second + 1) + 1) + 1, "abc");
  write_text_atomic(dir / "manifest.txt", text);
  try {
    load_dataset(dir, {}, {.images = false});
    FAIL() << "expected a parse error";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find(":3:"), std::string::npos) << e.what();
  }
  write_text_atomic(dir / "manifest.txt", "NOT-A-MANIFEST 1 5 32 32\n");
  EXPECT_THROW(load_dataset(dir, {}, {.images = false}), ParseError);
  EXPECT_THROW(load_dataset(scratch("empty")), IoError);
}

TEST(Ingest, RhdLikeFixture) {
  const auto out = scratch("rhd");
  const auto m = ingest_external(fixture("rhd_like.json"), ExternalFormat::rhd_like, out);
  ASSERT_EQ(m.records.size(), 2u);
  const auto samples = load_dataset(out, {}, {.images = false});
  ASSERT_EQ(samples.size(), 2u);
  EXPECT_EQ(samples[0].pose3d->joint_count(), 21);
  // Coordinates survive ingest -> load exactly.
  EXPECT_EQ(samples[1].pose3d->joints(0, 0), -20.0);
  EXPECT_EQ(samples[1].pose3d->joints(0, 1), 8.25);
  EXPECT_EQ(samples[1].pose3d->joints, m.records[1].joints);
  EXPECT_EQ(fs::path(out / m.records[0].image).lexically_normal(),
            (fs::absolute(fixture("rgb/00000.png"))).lexically_normal());
}

TEST(Ingest, StbLikeFixtureMatchesRhdLike) {
  const auto rhd = ingest_external(fixture("rhd_like.json"), ExternalFormat::rhd_like, scratch("rhd2"));
  const auto stb = ingest_external(fixture("stb_like.csv"), ExternalFormat::stb_like, scratch("stb"));
  ASSERT_EQ(stb.records.size(), 2u);
  EXPECT_EQ(stb.records[0].joints, rhd.records[0].joints);
}

TEST(Ingest, SchemaViolationsNameTheField) {
  const auto dir = scratch("bad");
  {
    std::ofstream f(dir / "twenty.json");
    f << R"({"records": [{"image": "a.png", "keypoints_mm": [)";
    for (int i = 0; i < 20; ++i) f << (i ? "," : "") << "[" << i << ", " << i * i << ", 1]";
    f << "]}]}";
  }
  try {
    ingest_external(dir / "twenty.json", ExternalFormat::rhd_like, dir / "out");
    FAIL() << "expected a format error";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("records[0].keypoints_mm"), std::string::npos) << e.what();
  }
  {
    std::ofstream f(dir / "bad.csv");
    f << "image,j0_x,j0_y\n";
  }
  try {
    ingest_external(dir / "bad.csv", ExternalFormat::stb_like, dir / "out");
    FAIL() << "expected a format error";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("j0_z"), std::string::npos) << e.what();
  }
  EXPECT_THROW(external_format_from_string("coco"), ConfigError);
}
