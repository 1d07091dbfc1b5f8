#include "woodid/store.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <cstdio>
#include <cstring>
#include <fstream>

#include "woodid/digest.hpp"
#include "woodid/error.hpp"

namespace woodid {

using nlohmann::json;

namespace {

constexpr const char* kLogName = "events.log";
constexpr const char* kSnapshotName = "snapshot.json";
constexpr int kSnapshotFormat = 1;

std::string make_id(const char* prefix, std::uint64_t n) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s-%06llu", prefix, static_cast<unsigned long long>(n));
  return buf;
}

[[noreturn]] void unavailable(const std::string& what) {
  throw Error(ErrorKind::StorageUnavailable, what + (errno ? std::string(": ") + std::strerror(errno) : ""));
}

}  // namespace

json Prediction::to_json() const {
  json top = json::array();
  for (const auto& t : top3)
    top.push_back({{"class_label", t.class_label}, {"confidence", t.confidence}, {"archetype_ref", t.archetype_ref.empty() ? json(nullptr) : json(t.archetype_ref)}});
  return {{"prediction_id", prediction_id}, {"session_id", session_id}, {"image_digest", image_digest},
          {"top3", top},  {"eval_mode", eval_mode},   {"bundle_version", bundle_version},
          {"timestamp", timestamp}};
}

Prediction Prediction::from_json(const json& doc) {
  Prediction p;
  p.prediction_id = doc.at("prediction_id").get<std::string>();
  p.session_id = doc.at("session_id").get<std::string>();
  p.image_digest = doc.at("image_digest").get<std::string>();
  for (const auto& t : doc.at("top3"))
    p.top3.push_back({t.at("class_label").get<std::string>(), t.at("confidence").get<double>(),
                      t.value("archetype_ref", json()).is_string() ? t["archetype_ref"].get<std::string>() : ""});
  p.eval_mode = doc.at("eval_mode").get<std::string>();
  p.bundle_version = doc.at("bundle_version").get<std::string>();
  p.timestamp = doc.at("timestamp").get<std::string>();
  return p;
}

json Session::to_json() const {
  return {{"session_id", session_id}, {"device_id", device_id}, {"site_id", site_id},
          {"operator_id", operator_id}, {"created", created}, {"prediction_ids", prediction_ids}};
}

Session Session::from_json(const json& doc) {
  Session s;
  s.session_id = doc.at("session_id").get<std::string>();
  s.device_id = doc.value("device_id", "");
  s.site_id = doc.value("site_id", "");
  s.operator_id = doc.value("operator_id", "");
  s.created = doc.value("created", "");
  s.prediction_ids = doc.value("prediction_ids", std::vector<std::string>{});
  return s;
}

Store::Store(std::filesystem::path dir, int snapshot_every)
    : dir_(std::move(dir)), snapshot_every_(snapshot_every) {
  std::error_code ec;
  std::filesystem::create_directories(dir_, ec);
  if (ec) throw Error(ErrorKind::StorageUnavailable, "cannot create " + dir_.string() + ": " + ec.message());

  std::uint64_t offset = 0;
  const auto snap_path = dir_ / kSnapshotName;
  if (std::filesystem::exists(snap_path)) {
    try {
      const auto bytes = read_file_bytes(snap_path);
      const json snap = json::parse(bytes.begin(), bytes.end());
      if (snap.at("format").get<int>() != kSnapshotFormat)
        throw Error(ErrorKind::StorageUnavailable, "unsupported snapshot format");
      offset = snap.at("log_offset").get<std::uint64_t>();
      seq_ = snap.at("seq").get<std::uint64_t>();
      next_session_ = snap.at("next_session").get<std::uint64_t>();
      next_prediction_ = snap.at("next_prediction").get<std::uint64_t>();
      for (const auto& s : snap.at("sessions")) {
        Session session = Session::from_json(s);
        sessions_[session.session_id] = std::move(session);
      }
      for (const auto& p : snap.at("predictions")) {
        Prediction pred = Prediction::from_json(p);
        prediction_order_.push_back(pred.prediction_id);
        predictions_[pred.prediction_id] = std::move(pred);
      }
      for (const auto& v : snap.at("verdicts")) {
        FieldTrialRecord r = FieldTrialRecord::from_json(v);
        verdicts_[r.record_id].push_back(std::move(r));
      }
    } catch (const json::exception& e) {
      throw Error(ErrorKind::StorageUnavailable, std::string("damaged snapshot: ") + e.what());
    } catch (const Error& e) {
      throw Error(ErrorKind::StorageUnavailable, std::string("damaged snapshot: ") + e.what());
    }
  }

  const auto log_path = dir_ / kLogName;
  std::string text;
  if (std::filesystem::exists(log_path)) {
    const auto bytes = read_file_bytes(log_path);
    if (bytes.size() < offset) throw Error(ErrorKind::StorageUnavailable, "event log shorter than snapshot offset");
    text.assign(bytes.begin() + static_cast<std::ptrdiff_t>(offset), bytes.end());
  } else if (offset != 0) {
    throw Error(ErrorKind::StorageUnavailable, "event log missing but snapshot present");
  }

  // Replay; only the final line may be torn.
  std::uint64_t good = offset;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const std::size_t nl = text.find('\n', pos);
    if (nl == std::string::npos) break;  // torn tail
    const std::string line = text.substr(pos, nl - pos);
    try {
      apply(json::parse(line));
    } catch (const std::exception& e) {
      throw Error(ErrorKind::StorageUnavailable,
                  "event log damaged at byte " + std::to_string(offset + pos) + ": " + e.what());
    }
    pos = nl + 1;
    good = offset + pos;
  }

  errno = 0;
  fd_ = ::open(log_path.c_str(), O_WRONLY | O_CREAT, 0644);
  if (fd_ < 0) unavailable("cannot open " + log_path.string());
  if (::ftruncate(fd_, static_cast<off_t>(good)) != 0 || ::lseek(fd_, 0, SEEK_END) < 0) {
    ::close(fd_);
    fd_ = -1;
    unavailable("cannot prepare " + log_path.string());
  }
  log_size_ = good;
}

Store::~Store() {
  if (fd_ >= 0) ::close(fd_);
}

void Store::apply(const json& event) {
  const std::string type = event.at("type").get<std::string>();
  const json& data = event.at("data");
  seq_ = event.at("seq").get<std::uint64_t>();
  if (type == "session") {
    Session s = Session::from_json(data);
    sessions_[s.session_id] = std::move(s);
    ++next_session_;
  } else if (type == "prediction") {
    Prediction p = Prediction::from_json(data);
    sessions_.at(p.session_id).prediction_ids.push_back(p.prediction_id);
    prediction_order_.push_back(p.prediction_id);
    predictions_[p.prediction_id] = std::move(p);
    ++next_prediction_;
  } else if (type == "verdict") {
    FieldTrialRecord r = FieldTrialRecord::from_json(data);
    verdicts_[r.record_id].push_back(std::move(r));
  } else {
    throw Error(ErrorKind::StorageUnavailable, "unknown event type " + type);
  }
}

void Store::append(json event) {
  event["seq"] = seq_ + 1;
  const std::string line = event.dump() + "\n";
  std::size_t written = 0;
  errno = 0;
  while (written < line.size()) {
    const ssize_t n = ::write(fd_, line.data() + written, line.size() - written);
    if (n < 0) {
      if (errno == EINTR) continue;
      const int saved = errno;
      // Drop the partial line so it cannot end up mid-log.
      if (::ftruncate(fd_, static_cast<off_t>(log_size_)) == 0) ::lseek(fd_, 0, SEEK_END);
      errno = saved;
      unavailable("event log write failed");
    }
    written += static_cast<std::size_t>(n);
  }
  if (::fsync(fd_) != 0) unavailable("event log fsync failed");
  log_size_ += line.size();
  apply(event);
  if (snapshot_every_ > 0 && ++since_snapshot_ >= static_cast<std::uint64_t>(snapshot_every_)) {
    // The log is authoritative; a failed snapshot only lengthens the next replay.
    try {
      write_snapshot_locked();
    } catch (const std::exception&) {
    }
  }
}

json Store::state_json() const {
  json sessions = json::array(), predictions = json::array(), verdicts = json::array();
  for (const auto& [id, s] : sessions_) sessions.push_back(s.to_json());
  for (const auto& id : prediction_order_) predictions.push_back(predictions_.at(id).to_json());
  for (const auto& id : prediction_order_)
    if (auto it = verdicts_.find(id); it != verdicts_.end())
      for (const auto& r : it->second) verdicts.push_back(r.to_json());
  return {{"format", kSnapshotFormat},        {"log_offset", log_size_},
          {"seq", seq_},                      {"next_session", next_session_},
          {"next_prediction", next_prediction_}, {"sessions", sessions},
          {"predictions", predictions},       {"verdicts", verdicts}};
}

void Store::write_snapshot_locked() {
  const std::string text = state_json().dump();
  write_file_atomic(dir_ / kSnapshotName, std::vector<std::uint8_t>(text.begin(), text.end()));
  since_snapshot_ = 0;
}

void Store::snapshot() {
  std::lock_guard lock(mu_);
  write_snapshot_locked();
}

Session Store::create_session(Session session, const std::string& now) {
  std::lock_guard lock(mu_);
  session.session_id = make_id("ses", next_session_);
  session.created = now;
  session.prediction_ids.clear();
  append({{"type", "session"}, {"data", session.to_json()}});
  return sessions_.at(session.session_id);
}

Prediction Store::add_prediction(Prediction prediction) {
  std::lock_guard lock(mu_);
  if (!sessions_.contains(prediction.session_id))
    throw Error(ErrorKind::UnknownSession, "unknown session '" + prediction.session_id + "'");
  prediction.prediction_id = make_id("pred", next_prediction_);
  append({{"type", "prediction"}, {"data", prediction.to_json()}});
  return prediction;
}

FieldTrialRecord Store::add_verdict(const std::string& session_id, FieldTrialRecord record) {
  std::lock_guard lock(mu_);
  if (!sessions_.contains(session_id))
    throw Error(ErrorKind::UnknownSession, "unknown session '" + session_id + "'");
  auto p = predictions_.find(record.record_id);
  if (p == predictions_.end() || p->second.session_id != session_id)
    throw Error(ErrorKind::UnknownPrediction,
                "prediction '" + record.record_id + "' is not in session '" + session_id + "'");
  auto v = verdicts_.find(record.record_id);
  record.revision = v == verdicts_.end() ? 1 : static_cast<int>(v->second.size()) + 1;
  record.validate();
  append({{"type", "verdict"}, {"data", record.to_json()}});
  return record;
}

std::optional<Session> Store::session(const std::string& id) const {
  std::lock_guard lock(mu_);
  auto it = sessions_.find(id);
  if (it == sessions_.end()) return std::nullopt;
  return it->second;
}

std::optional<Prediction> Store::prediction(const std::string& id) const {
  std::lock_guard lock(mu_);
  auto it = predictions_.find(id);
  if (it == predictions_.end()) return std::nullopt;
  return it->second;
}

std::optional<FieldTrialRecord> Store::latest_verdict(const std::string& prediction_id) const {
  std::lock_guard lock(mu_);
  auto it = verdicts_.find(prediction_id);
  if (it == verdicts_.end() || it->second.empty()) return std::nullopt;
  return it->second.back();
}

std::vector<FieldTrialRecord> Store::records(const std::string& session_filter, bool history) const {
  std::lock_guard lock(mu_);
  std::vector<FieldTrialRecord> out;
  for (const auto& id : prediction_order_) {
    if (!session_filter.empty() && predictions_.at(id).session_id != session_filter) continue;
    auto it = verdicts_.find(id);
    if (it == verdicts_.end()) continue;
    if (history)
      out.insert(out.end(), it->second.begin(), it->second.end());
    else
      out.push_back(it->second.back());
  }
  return out;
}

std::size_t Store::session_count() const {
  std::lock_guard lock(mu_);
  return sessions_.size();
}

std::uint64_t Store::event_count() const {
  std::lock_guard lock(mu_);
  return seq_;
}

}  // namespace woodid
