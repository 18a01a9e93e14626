#include <fstream>
#include <map>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "reenact/data.hpp"
#include "reenact/error.hpp"
#include "reenact/image.hpp"
#include "test_util.hpp"

using namespace reenact;
namespace fs = std::filesystem;

namespace {

std::map<std::string, std::string> read_tree(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    std::ifstream in(e.path(), std::ios::binary);
    files[fs::relative(e.path(), root).string()] =
        std::string(std::istreambuf_iterator<char>(in), {});
  }
  return files;
}

double mean_abs_shift(const Landmark& a, const Landmark& b, std::size_t first, std::size_t count) {
  double s = 0;
  for (std::size_t i = first; i < first + count; ++i) s += std::abs(a[i].x - b[i].x) + std::abs(a[i].y - b[i].y);
  return s / count;
}

void write_json(const fs::path& p, const nlohmann::json& j) {
  std::ofstream(p) << j.dump();
}

}  // namespace

TEST(Synthetic, RecordCountAndShape) {
  test::TempDir dir("synth");
  const auto ds = test::synthetic(dir.path(), 4, 8);
  EXPECT_EQ(ds.size(), 32u);
  EXPECT_EQ(ds.identities().size(), 4u);
  EXPECT_EQ(ds.expressions().size(), 8u);
  EXPECT_EQ(ds.reference_expression(), "neutral");
  const auto img = ds.image({"id00", "neutral", ds.poses()[0]});
  EXPECT_EQ(img.height(), 256);
  EXPECT_EQ(img.width(), 256);
  EXPECT_TRUE(fs::exists(dir / "id03/happy_p0.png"));
  EXPECT_TRUE(fs::exists(dir / "id03/happy_p0.json"));
}

TEST(Synthetic, ByteIdenticalAcrossRuns) {
  test::TempDir a("synth_a"), b("synth_b");
  generate_synthetic_dataset({2, 3, 1, 7}, a.path());
  generate_synthetic_dataset({2, 3, 1, 7}, b.path());
  EXPECT_EQ(read_tree(a.path()), read_tree(b.path()));
  test::TempDir c("synth_c");
  generate_synthetic_dataset({2, 3, 1, 8}, c.path());
  EXPECT_NE(read_tree(a.path()), read_tree(c.path()));
}

TEST(Synthetic, ExpressionsFollowDisplacementField) {
  test::TempDir dir("synth_expr");
  const auto ds = test::synthetic(dir.path(), 2, 4, 1, 3);
  const auto id = synth::identity_params(3, 0);
  const auto neutral = read_landmark_file(dir / "id00/neutral_p0.json");
  for (int e = 1; e < 4; ++e) {
    const auto moved = read_landmark_file(dir / ("id00/" + synth::expression_name(e) + "_p0.json"));
    EXPECT_NE(moved, neutral);
    const auto d = synth::expression_displacement(id, synth::expression_params(3, e));
    for (std::size_t i = 0; i < kLandmarkPoints; ++i) {
      EXPECT_NEAR(moved[i].x - neutral[i].x, d[i].x, 1e-12);
      EXPECT_NEAR(moved[i].y - neutral[i].y, d[i].y, 1e-12);
    }
    // jaw 0..32 against the outer and inner lips 84..103
    EXPECT_LT(mean_abs_shift(moved, neutral, 0, 33), mean_abs_shift(moved, neutral, 84, 20));
  }
}

TEST(Synthetic, IdentitiesDifferInProportions) {
  test::TempDir dir("synth_id");
  test::synthetic(dir.path(), 2, 1, 1, 5);
  const auto a = read_landmark_file(dir / "id00/neutral_p0.json");
  const auto b = read_landmark_file(dir / "id01/neutral_p0.json");
  auto interocular = [](const Landmark& l) { return std::abs(l[105].x - l[104].x); };
  EXPECT_NE(interocular(a), interocular(b));
  EXPECT_NEAR(std::abs(interocular(a) - interocular(b)),
              2 * std::abs(synth::identity_params(5, 0).eye_half_sep - synth::identity_params(5, 1).eye_half_sep),
              1e-12);
}

TEST(Synthetic, PosesSkewLandmarks) {
  test::TempDir dir("synth_pose");
  const auto ds = test::synthetic(dir.path(), 2, 2, 3);
  ASSERT_EQ(ds.poses().size(), 3u);
  EXPECT_NE(ds.landmark({"id00", "neutral", ds.poses()[0]}), ds.landmark({"id00", "neutral", ds.poses()[1]}));
  EXPECT_THROW(generate_synthetic_dataset({0, 1, 1, 0}, dir / "bad"), Error);
}

TEST(Dataset, ManifestRoundTripIsIdempotent) {
  test::TempDir dir("manifest");
  const auto ds = test::synthetic(dir.path(), 2, 3);
  const auto j = ds.manifest().to_json();
  EXPECT_EQ(DatasetManifest::from_json(j).to_json(), j);
}

TEST(Dataset, MissingReferenceExpressionNamesIdentity) {
  test::TempDir dir("noref");
  const auto manifest_path = generate_synthetic_dataset({2, 2, 1, 0}, dir.path());
  auto m = load_dataset(manifest_path).manifest();
  std::erase_if(m.records, [](const ManifestRecord& r) {
    return r.key.identity == "id01" && r.key.expression == "neutral";
  });
  write_json(manifest_path, m.to_json());
  try {
    load_dataset(manifest_path);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("id01"), std::string::npos) << e.what();
  }
}

TEST(Dataset, ShortLandmarkFileNamesFile) {
  test::TempDir dir("short");
  const auto manifest_path = generate_synthetic_dataset({2, 2, 1, 0}, dir.path());
  auto doc = landmark_to_json(read_landmark_file(dir / "id00/happy_p0.json"));
  doc["points"].erase(doc["points"].begin());
  write_json(dir / "id00/happy_p0.json", doc);
  try {
    load_dataset(manifest_path);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::structural);
    EXPECT_NE(std::string(e.what()).find("happy_p0.json"), std::string::npos) << e.what();
  }
}

TEST(Dataset, MissingFilesAreIoErrors) {
  test::TempDir dir("missing");
  const auto manifest_path = generate_synthetic_dataset({2, 2, 1, 0}, dir.path());
  fs::remove(dir / "id00/happy_p0.png");
  try {
    load_dataset(manifest_path);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::io);
  }
  try {
    load_dataset(dir / "nope.json");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::io);
  }
}

TEST(UlcPairs, RolesAndUniformity) {
  test::TempDir dir("pairs");
  const auto ds = test::synthetic(dir.path(), 3, 3);
  std::mt19937_64 rng(9);
  std::map<std::pair<std::string, std::string>, int> counts;
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) {
    const auto s = sample_ulc_pair(ds, rng);
    ASSERT_NE(s.target, s.source);
    EXPECT_EQ(s.target_truth, ds.landmark({s.target, s.expression, s.pose}));
    EXPECT_EQ(s.source_landmark, ds.landmark({s.source, s.expression, s.pose}));
    EXPECT_EQ(s.target_ref, ds.landmark({s.target, "neutral", s.pose}));
    EXPECT_EQ(s.source_ref, ds.landmark({s.source, "neutral", s.pose}));
    ++counts[{s.target, s.source}];
  }
  EXPECT_EQ(counts.size(), 6u);
  for (const auto& [k, n] : counts) EXPECT_NEAR(n, draws / 6.0, 0.05 * draws / 6.0);

  test::TempDir one("pairs_one");
  const auto single = test::synthetic(one.path(), 1, 3);
  EXPECT_THROW(sample_ulc_pair(single, rng), Error);
}

TEST(Image, PngAndBase64RoundTrip) {
  Rgb8Image img;
  img.width = 5;
  img.height = 3;
  img.data.resize(45);
  for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] = static_cast<std::uint8_t>(i * 5);
  const auto png = encode_png(img);
  const auto back = decode_png(png);
  EXPECT_EQ(back.width, 5);
  EXPECT_EQ(back.data, img.data);
  EXPECT_EQ(base64_decode(base64_encode(png)), png);
  EXPECT_EQ(base64_encode(std::vector<std::uint8_t>{'f', 'o', 'o', 'b'}), "Zm9vYg==");
  EXPECT_THROW(base64_decode("Zm9v*g=="), Error);
  EXPECT_THROW(decode_png(std::vector<std::uint8_t>{1, 2, 3}), Error);
  const auto face = FaceImage::from_rgb8(img);
  EXPECT_EQ(face.to_rgb8().data, img.data);
}
