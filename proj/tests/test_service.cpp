#include <future>
#include <random>
#include <thread>

#include <gtest/gtest.h>
#include <httplib.h>

#include "reenact/image.hpp"
#include "reenact/service.hpp"
#include "test_util.hpp"

using namespace reenact;
using nlohmann::json;

namespace {

GagConfig small_gag() {
  GagConfig c;
  c.base_channels = 4;
  c.groups = 1;
  c.blocks_per_group = 1;
  c.image_size = 32;
  c.disc_base_channels = 4;
  return c;
}

void install_small(InferenceService& svc) {
  torch::manual_seed(0);
  svc.install(Ulc(UlcConfig{0.125}), Generator(small_gag()), "ulchash", "gaghash");
}

std::string png_b64(int size) {
  Rgb8Image img;
  img.width = img.height = size;
  img.data.resize(static_cast<std::size_t>(size) * size * 3);
  for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] = static_cast<std::uint8_t>((i * 7) % 256);
  return base64_encode(encode_png(img));
}

json landmark_json(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return landmark_to_json(test::random_landmark(rng));
}

}  // namespace

TEST(Service, HealthIs503UntilLoaded) {
  InferenceService svc;
  EXPECT_FALSE(svc.ready());
  auto r = svc.handle("GET", "/v1/health", "");
  EXPECT_EQ(r.status, 503);
  EXPECT_EQ(r.body["status"], "loading");
  EXPECT_EQ(svc.handle("POST", "/v1/convert", "{}").status, 503);
  install_small(svc);
  r = svc.handle("GET", "/v1/health", "");
  EXPECT_EQ(r.status, 200);
  EXPECT_EQ(r.body, (json{{"status", "ok"}, {"ulc_hash", "ulchash"}, {"gag_hash", "gaghash"}}));
}

TEST(Service, LoadFailureIsReportedByHealth) {
  InferenceService svc;
  svc.load_async("/nonexistent/ulc.ckpt", "/nonexistent/gag.ckpt");
  for (int i = 0; i < 200; ++i) {
    if (svc.handle("GET", "/v1/health", "").body["status"] == "error") break;
    std::this_thread::sleep_for(std::chrono::milliseconds(10));
  }
  const auto r = svc.handle("GET", "/v1/health", "");
  EXPECT_EQ(r.status, 503);
  EXPECT_EQ(r.body["status"], "error");
}

TEST(Service, ConvertWithFreshConverterReturnsTargetReference) {
  InferenceService svc;
  install_small(svc);
  const auto ref = landmark_json(1);
  const auto r = svc.handle("POST", "/v1/convert",
                            json{{"target_ref_landmarks", ref}, {"source_landmarks", landmark_json(2)}}.dump());
  ASSERT_EQ(r.status, 200) << r.body.dump();
  EXPECT_LT(ace(landmark_from_json(r.body["converted_landmarks"]), landmark_from_json(ref)), 1e-7);
}

TEST(Service, ReenactReturnsDeterministicPng) {
  InferenceService svc;
  install_small(svc);
  const auto body = json{{"reference_image", png_b64(48)}, {"landmarks", landmark_json(3)}}.dump();
  const auto a = svc.handle("POST", "/v1/reenact", body);
  ASSERT_EQ(a.status, 200) << a.body.dump();
  EXPECT_GE(a.body["latency_ms"].get<double>(), 0.0);
  const auto img = decode_png(base64_decode(a.body["image"].get<std::string>()));
  EXPECT_EQ(img.width, 32);
  EXPECT_EQ(img.height, 32);
  EXPECT_EQ(svc.handle("POST", "/v1/reenact", body).body["image"], a.body["image"]);

  std::vector<std::future<ServiceResponse>> futures;
  for (int i = 0; i < 4; ++i) {
    futures.push_back(std::async(std::launch::async, [&] { return svc.handle("POST", "/v1/reenact", body); }));
  }
  for (auto& f : futures) EXPECT_EQ(f.get().body["image"], a.body["image"]);
}

TEST(Service, MalformedBodiesGiveFieldLevel400) {
  InferenceService svc;
  install_small(svc);
  auto check = [&](const std::string& path, const std::string& body, const std::string& field) {
    const auto r = svc.handle("POST", path, body);
    EXPECT_EQ(r.status, 400) << path << " " << body;
    EXPECT_EQ(r.body.value("field", ""), field) << r.body.dump();
    EXPECT_TRUE(r.body.contains("error"));
  };
  check("/v1/convert", "not json", "body");
  check("/v1/convert", "[1, 2]", "body");
  check("/v1/convert", json{{"source_landmarks", landmark_json(1)}}.dump(), "target_ref_landmarks");
  check("/v1/convert", json{{"target_ref_landmarks", landmark_json(1)}, {"source_landmarks", {{"points", {{0, 0}}}}}}.dump(),
        "source_landmarks");
  check("/v1/reenact", json{{"reference_image", "@@not base64@@"}, {"landmarks", landmark_json(1)}}.dump(),
        "reference_image");
  check("/v1/reenact", json{{"reference_image", base64_encode(std::vector<std::uint8_t>{1, 2, 3})},
                            {"landmarks", landmark_json(1)}}.dump(),
        "reference_image");
  check("/v1/reenact", json{{"reference_image", 5}, {"landmarks", landmark_json(1)}}.dump(), "reference_image");
  check("/v1/reenact", json{{"reference_image", png_b64(32)}}.dump(), "landmarks");
  check("/v1/interpolate", json{{"a", landmark_json(1)}, {"b", landmark_json(2)}, {"t", 1.5}}.dump(), "t");
  check("/v1/interpolate", json{{"a", landmark_json(1)}, {"b", landmark_json(2)}, {"t", "x"}}.dump(), "t");
  check("/v1/interpolate", json{{"b", landmark_json(2)}, {"t", 0.5}}.dump(), "a");
}

TEST(Service, InterpolateNeedsNoModelsAndHitsEndpoints) {
  InferenceService svc;
  const auto a = landmark_json(1), b = landmark_json(2);
  auto r = svc.handle("POST", "/v1/interpolate", json{{"a", a}, {"b", b}, {"t", 0}}.dump());
  ASSERT_EQ(r.status, 200);
  EXPECT_EQ(landmark_from_json(r.body["landmarks"]), landmark_from_json(a));
  r = svc.handle("POST", "/v1/interpolate", json{{"a", a}, {"b", b}, {"t", 1.0}}.dump());
  EXPECT_EQ(landmark_from_json(r.body["landmarks"]), landmark_from_json(b));
}

TEST(Service, RoutingErrors) {
  InferenceService svc;
  EXPECT_EQ(svc.handle("GET", "/v1/nope", "").status, 404);
  EXPECT_EQ(svc.handle("GET", "/v1/convert", "").status, 405);
  EXPECT_EQ(svc.handle("POST", "/v1/health", "").status, 405);
}

TEST(Service, HttpRoundTrip) {
  InferenceService svc;
  install_small(svc);
  const int port = svc.start("127.0.0.1", 0);
  ASSERT_GT(port, 0);
  httplib::Client cli("127.0.0.1", port);
  auto health = cli.Get("/v1/health");
  ASSERT_TRUE(health);
  EXPECT_EQ(health->status, 200);
  EXPECT_EQ(json::parse(health->body)["status"], "ok");
  EXPECT_EQ(health->get_header_value("Content-Type"), "application/json");

  const auto body = json{{"a", landmark_json(1)}, {"b", landmark_json(2)}, {"t", 0.25}}.dump();
  auto res = cli.Post("/v1/interpolate", body, "application/json");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 200);
  EXPECT_TRUE(json::parse(res->body).contains("landmarks"));

  auto bad = cli.Post("/v1/reenact", "{\"reference_image\": \"!!\"}", "application/json");
  ASSERT_TRUE(bad);
  EXPECT_EQ(bad->status, 400);
  svc.stop();
}
