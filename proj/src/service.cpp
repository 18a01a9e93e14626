#include "reenact/service.hpp"

#include <chrono>

#include <httplib.h>

#include "reenact/error.hpp"
#include "reenact/eval.hpp"
#include "reenact/image.hpp"
#include "reenact/train.hpp"

namespace reenact {

struct InferenceService::Snapshot {
  Ulc ulc{nullptr};
  Generator generator{nullptr};
  std::string ulc_hash;
  std::string gag_hash;
};

namespace {

struct BadRequest {
  std::string field;
  std::string message;
};

ServiceResponse error_response(int status, const std::string& message, const std::string& field = {}) {
  nlohmann::json body = {{"error", message}};
  if (!field.empty()) body["field"] = field;
  return {status, std::move(body)};
}

const nlohmann::json& field(const nlohmann::json& req, const std::string& name) {
  auto it = req.find(name);
  if (it == req.end()) throw BadRequest{name, "missing field '" + name + "'"};
  return *it;
}

Landmark landmark_field(const nlohmann::json& req, const std::string& name) {
  try {
    return landmark_from_json(field(req, name));
  } catch (const Error& e) {
    throw BadRequest{name, e.what()};
  }
}

}  // namespace

InferenceService::InferenceService(PartGrouping parts) : parts_(std::move(parts)) {
  validate_grouping(parts_);
}

InferenceService::~InferenceService() {
  stop();
  if (loader_.joinable()) loader_.join();
}

void InferenceService::install(Ulc ulc, Generator generator, std::string ulc_hash,
                               std::string gag_hash) {
  ulc->eval();
  generator->eval();
  auto snap = std::make_shared<Snapshot>(
      Snapshot{std::move(ulc), std::move(generator), std::move(ulc_hash), std::move(gag_hash)});
  std::lock_guard lock(mutex_);
  snapshot_ = std::move(snap);
  load_error_.clear();
}

void InferenceService::load(const std::filesystem::path& ulc_path,
                            const std::filesystem::path& gag_path) {
  install(load_ulc(ulc_path), load_generator(gag_path), file_hash(ulc_path), file_hash(gag_path));
}

void InferenceService::load_async(const std::filesystem::path& ulc_path,
                                  const std::filesystem::path& gag_path) {
  if (loader_.joinable()) loader_.join();
  loader_ = std::thread([this, ulc_path, gag_path] {
    try {
      load(ulc_path, gag_path);
    } catch (const std::exception& e) {
      std::lock_guard lock(mutex_);
      load_error_ = e.what();
    }
  });
}

bool InferenceService::ready() const { return snapshot() != nullptr; }

std::shared_ptr<const InferenceService::Snapshot> InferenceService::snapshot() const {
  std::lock_guard lock(mutex_);
  return snapshot_;
}

ServiceResponse InferenceService::handle(const std::string& method, const std::string& path,
                                         const std::string& body) const {
  if (path == "/v1/health") {
    if (method != "GET") return error_response(405, "use GET");
    return health();
  }
  using Handler = ServiceResponse (InferenceService::*)(const nlohmann::json&) const;
  Handler h = nullptr;
  if (path == "/v1/convert") h = &InferenceService::convert;
  if (path == "/v1/reenact") h = &InferenceService::reenact;
  if (path == "/v1/interpolate") h = &InferenceService::interpolate;
  if (!h) return error_response(404, "no such endpoint: " + path);
  if (method != "POST") return error_response(405, "use POST");

  const auto req = nlohmann::json::parse(body, nullptr, /*allow_exceptions=*/false);
  if (req.is_discarded() || !req.is_object()) {
    return error_response(400, "request body must be a JSON object", "body");
  }
  try {
    return (this->*h)(req);
  } catch (const BadRequest& e) {
    return error_response(400, e.message, e.field);
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::divergence) return error_response(500, e.what());
    return error_response(400, e.what());
  }
}

ServiceResponse InferenceService::health() const {
  const auto snap = snapshot();
  if (!snap) {
    std::lock_guard lock(mutex_);
    nlohmann::json body = {{"status", load_error_.empty() ? "loading" : "error"}};
    if (!load_error_.empty()) body["error"] = load_error_;
    return {503, body};
  }
  return {200, {{"status", "ok"}, {"ulc_hash", snap->ulc_hash}, {"gag_hash", snap->gag_hash}}};
}

ServiceResponse InferenceService::convert(const nlohmann::json& req) const {
  const auto snap = snapshot();
  if (!snap) return error_response(503, "models are not loaded yet");
  const auto target_ref = landmark_field(req, "target_ref_landmarks");
  const auto source = landmark_field(req, "source_landmarks");
  auto ulc = snap->ulc;
  return {200, {{"converted_landmarks", landmark_to_json(reenact::convert(target_ref, source, ulc))}}};
}

ServiceResponse InferenceService::reenact(const nlohmann::json& req) const {
  const auto snap = snapshot();
  if (!snap) return error_response(503, "models are not loaded yet");
  const auto t0 = std::chrono::steady_clock::now();
  const auto& img_field = field(req, "reference_image");
  if (!img_field.is_string()) throw BadRequest{"reference_image", "reference_image must be a base64 string"};
  Rgb8Image rgb;
  try {
    rgb = decode_png(base64_decode(img_field.get<std::string>()));
  } catch (const Error& e) {
    throw BadRequest{"reference_image", e.what()};
  }
  const auto landmarks = landmark_field(req, "landmarks");
  auto gen = snap->generator;
  const auto size = gen->config().image_size;
  auto reference = FaceImage::from_rgb8(rgb).tensor();
  if (reference.size(1) != size || reference.size(2) != size) {
    reference = torch::adaptive_avg_pool2d(reference.unsqueeze(0), {size, size}).squeeze(0);
  }
  const auto raster = rasterize(landmarks, parts_, static_cast<int>(gen->config().landmark_resolution()));
  const auto out = generate(FaceImage(reference), raster, gen);
  const auto png = encode_png(out.to_rgb8());
  const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return {200, {{"image", base64_encode(png)}, {"latency_ms", ms}}};
}

ServiceResponse InferenceService::interpolate(const nlohmann::json& req) const {
  const auto a = landmark_field(req, "a");
  const auto b = landmark_field(req, "b");
  const auto& t = field(req, "t");
  if (!t.is_number()) throw BadRequest{"t", "t must be a number"};
  try {
    return {200, {{"landmarks", landmark_to_json(reenact::interpolate(a, b, t.get<double>()))}}};
  } catch (const Error& e) {
    throw BadRequest{"t", e.what()};
  }
}

void InferenceService::bind(const std::string& host, int port) {
  server_ = std::make_unique<httplib::Server>();
  auto route = [this](const httplib::Request& req, httplib::Response& res) {
    const auto r = handle(req.method, req.path, req.body);
    res.status = r.status;
    res.set_header("Access-Control-Allow-Origin", "*");
    res.set_content(r.body.dump(), "application/json");
  };
  server_->Get(R"(/v1/.*)", route);
  server_->Post(R"(/v1/.*)", route);
  server_->Options(R"(/v1/.*)", [](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Origin", "*");
    res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    res.set_header("Access-Control-Allow-Headers", "Content-Type");
    res.status = 204;
  });
  if (port == 0) {
    port_ = server_->bind_to_any_port(host);
  } else {
    port_ = server_->bind_to_port(host, port) ? port : -1;
  }
  if (port_ < 0) fail(ErrorKind::io, "cannot bind " + host + ":" + std::to_string(port));
}

void InferenceService::listen(const std::string& host, int port) {
  bind(host, port);
  server_->listen_after_bind();
}

int InferenceService::start(const std::string& host, int port) {
  bind(host, port);
  server_thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
  return port_;
}

void InferenceService::stop() {
  if (server_) server_->stop();
  if (server_thread_.joinable()) server_thread_.join();
}

}  // namespace reenact
