#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "woodid/field_records.hpp"

namespace woodid {

struct TopEntry {
  std::string class_label;
  double confidence = 0.0;
  std::string archetype_ref;
  bool operator==(const TopEntry&) const = default;
};

struct Prediction {
  std::string prediction_id;
  std::string session_id;
  std::string image_digest;  // "sha256:<hex>"
  std::vector<TopEntry> top3;
  std::string eval_mode;
  std::string bundle_version;
  std::string timestamp;

  nlohmann::json to_json() const;
  static Prediction from_json(const nlohmann::json& doc);
  bool operator==(const Prediction&) const = default;
};

struct Session {
  std::string session_id;
  std::string device_id;
  std::string site_id;
  std::string operator_id;
  std::string created;
  std::vector<std::string> prediction_ids;

  nlohmann::json to_json() const;
  static Session from_json(const nlohmann::json& doc);
  bool operator==(const Session&) const = default;
};

/// Durable service state: an append-only event log (every append is
/// fsync'd before returning) plus a snapshot rewritten every
/// `snapshot_every` events. Opening loads the snapshot and replays the log
/// tail past the snapshot's offset; a torn final line from a crash is
/// discarded. All methods are thread-safe; appends are serialised.
class Store {
 public:
  /// Throws StorageUnavailable when the directory cannot be created or
  /// written, or the log is damaged before its final line.
  explicit Store(std::filesystem::path dir, int snapshot_every = 100);
  ~Store();
  Store(const Store&) = delete;
  Store& operator=(const Store&) = delete;

  const std::filesystem::path& dir() const { return dir_; }

  /// Assigns session_id and created.
  Session create_session(Session session, const std::string& now);
  /// Assigns prediction_id; durable on return. Throws UnknownSession.
  Prediction add_prediction(Prediction prediction);
  /// Assigns the revision; durable on return. Throws UnknownSession /
  /// UnknownPrediction, or InvalidRecord when the record fails validation.
  FieldTrialRecord add_verdict(const std::string& session_id, FieldTrialRecord record);

  std::optional<Session> session(const std::string& id) const;
  std::optional<Prediction> prediction(const std::string& id) const;
  /// Latest revision for a prediction, if any verdict was recorded.
  std::optional<FieldTrialRecord> latest_verdict(const std::string& prediction_id) const;
  /// Field records in prediction order; `history` keeps superseded
  /// revisions. An empty session filter selects every session.
  std::vector<FieldTrialRecord> records(const std::string& session_filter = {}, bool history = false) const;
  std::size_t session_count() const;
  std::uint64_t event_count() const;

  /// Writes a snapshot now.
  void snapshot();

 private:
  void apply(const nlohmann::json& event);
  void append(nlohmann::json event);
  void write_snapshot_locked();
  nlohmann::json state_json() const;

  std::filesystem::path dir_;
  int snapshot_every_;
  int fd_ = -1;
  std::uint64_t log_size_ = 0;
  std::uint64_t seq_ = 0;
  std::uint64_t since_snapshot_ = 0;
  mutable std::mutex mu_;

  std::map<std::string, Session> sessions_;
  std::map<std::string, Prediction> predictions_;
  std::map<std::string, std::vector<FieldTrialRecord>> verdicts_;
  std::vector<std::string> prediction_order_;
  std::uint64_t next_session_ = 1;
  std::uint64_t next_prediction_ = 1;
};

}  // namespace woodid
