#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "woodid/bundle.hpp"
#include "woodid/field_records.hpp"
#include "woodid/store.hpp"

namespace httplib {
class Server;
}

namespace woodid {

inline constexpr std::string_view kInterfaceVersion = "field-service/1";

using Clock = std::function<std::string()>;
/// Current UTC time as ISO-8601 with millisecond precision.
std::string utc_now();

/// Top entries of a probability vector: descending confidence, ties by
/// class index. Length min(3, n_classes).
std::vector<TopEntry> rank_top3(const nn::Vec<float>& proba, const ClassCatalog& catalog);

std::string archetype_ref(std::string_view class_label);

/// Transport-independent field service: classification against a read-only
/// bundle plus durable session/prediction/verdict state.
class FieldService {
 public:
  FieldService(DeploymentBundle bundle, std::unique_ptr<Store> store, Clock clock = utc_now);

  const DeploymentBundle& bundle() const { return bundle_; }
  Store& store() { return *store_; }

  nlohmann::json health() const;
  nlohmann::json classes() const;
  const Archetype* archetype(std::string_view class_label) const;

  Session create_session(const std::string& device_id, const std::string& site_id,
                         const std::string& operator_id);
  /// Session plus verdict tallies over its latest records. Throws UnknownSession.
  nlohmann::json session_status(const std::string& session_id) const;

  /// Durable before return. Throws UnknownSession, UndecodableImage, ImageTooSmall.
  Prediction classify(const std::string& session_id, std::span<const std::uint8_t> image_bytes);

  /// Correct verdicts store the top-1 as actual_class. A second verdict on
  /// one prediction throws VerdictExists unless `supersede` is set, in which
  /// case it is appended as the next revision. Throws UnknownSession,
  /// UnknownPrediction, MissingActualClass, InvalidRecord (actual class
  /// outside the catalog).
  FieldTrialRecord record_verdict(const std::string& session_id, const std::string& prediction_id,
                                  Verdict verdict, std::optional<std::string> actual_class,
                                  const std::string& notes = {}, bool supersede = false);

  /// Field-records text; an empty filter exports every session.
  std::string export_records(const std::string& session_filter = {}, bool history = false) const;

 private:
  DeploymentBundle bundle_;
  std::unique_ptr<Store> store_;
  Clock clock_;
};

struct ServiceOptions {
  std::filesystem::path bundle_path;
  std::filesystem::path store_dir;
  std::string listen = "127.0.0.1:8765";
  /// Console assets served under "/"; empty disables.
  std::filesystem::path static_dir;
  int snapshot_every = 100;

  /// WOODID_BUNDLE, WOODID_STORE, WOODID_LISTEN and WOODID_STATIC override
  /// the corresponding fields when set.
  ServiceOptions with_env_overrides() const;
};

struct ListenAddress {
  std::string host;
  int port = 0;
};

/// "host:port" or "[v6]:port"; throws BadConfig when malformed or when the
/// host is not a loopback address.
ListenAddress parse_listen_address(const std::string& text);

/// Loads and self-checks the bundle, opens the store. Throws CorruptBundle /
/// VersionMismatch / StorageUnavailable.
std::unique_ptr<FieldService> open_service(const ServiceOptions& options, Clock clock = utc_now);

/// HTTP binding of a FieldService.
class HttpServer {
 public:
  HttpServer(FieldService& service, std::filesystem::path static_dir = {});
  ~HttpServer();

  /// Throws AddressInUse or BadConfig. Port 0 picks a free port.
  void bind(const ListenAddress& address);
  int port() const { return port_; }
  /// Blocks until stop().
  void run();
  void stop();
  bool running() const;

 private:
  void routes();

  FieldService& service_;
  std::unique_ptr<httplib::Server> server_;
  int port_ = 0;
};

}  // namespace woodid
