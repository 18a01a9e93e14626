#pragma once

#include <filesystem>
#include <memory>
#include <mutex>
#include <string>
#include <thread>

#include <json.hpp>

#include "reenact/gag.hpp"
#include "reenact/landmark.hpp"
#include "reenact/ulc.hpp"

namespace httplib {
class Server;
}

namespace reenact {

struct ServiceResponse {
  int status = 200;
  nlohmann::json body;
};

/// HTTP front end over one immutable converter + generator snapshot.
///
///   GET  /v1/health       {"status": "ok", "ulc_hash", "gag_hash"}; 503 while loading
///   POST /v1/convert      {target_ref_landmarks, source_landmarks} -> {converted_landmarks}
///   POST /v1/reenact      {reference_image: base64 PNG, landmarks} -> {image, latency_ms}
///   POST /v1/interpolate  {a, b, t} -> {landmarks}
///
/// Malformed bodies get 400 with {"error", "field"}; model endpoints answer
/// 503 until a snapshot is installed.
class InferenceService {
 public:
  explicit InferenceService(PartGrouping parts = default_part_grouping());
  ~InferenceService();

  InferenceService(const InferenceService&) = delete;
  InferenceService& operator=(const InferenceService&) = delete;

  /// Loads both checkpoints and installs the snapshot.
  void load(const std::filesystem::path& ulc_path, const std::filesystem::path& gag_path);
  /// Same on a background thread; load errors are reported by /v1/health.
  void load_async(const std::filesystem::path& ulc_path, const std::filesystem::path& gag_path);
  /// Installs already constructed models.
  void install(Ulc ulc, Generator generator, std::string ulc_hash, std::string gag_hash);
  bool ready() const;

  /// Socket-free dispatch, used by the HTTP layer and by tests.
  ServiceResponse handle(const std::string& method, const std::string& path,
                         const std::string& body) const;

  /// Binds and serves until stop(). Port 0 picks a free port; see port().
  void listen(const std::string& host, int port);
  /// Binds, then serves on a background thread; returns the bound port.
  int start(const std::string& host, int port);
  void stop();
  int port() const noexcept { return port_; }

 private:
  struct Snapshot;

  std::shared_ptr<const Snapshot> snapshot() const;
  void bind(const std::string& host, int port);

  ServiceResponse health() const;
  ServiceResponse convert(const nlohmann::json& req) const;
  ServiceResponse reenact(const nlohmann::json& req) const;
  ServiceResponse interpolate(const nlohmann::json& req) const;

  PartGrouping parts_;
  mutable std::mutex mutex_;
  std::shared_ptr<const Snapshot> snapshot_;
  std::string load_error_;
  std::thread loader_;
  std::unique_ptr<httplib::Server> server_;
  std::thread server_thread_;
  int port_ = 0;
};

}  // namespace reenact
