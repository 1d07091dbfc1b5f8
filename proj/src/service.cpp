#include "woodid/service.hpp"

#include <arpa/inet.h>

#include <chrono>
#include <cstdlib>
#include <ctime>

#include "httplib.h"
#include "woodid/digest.hpp"
#include "woodid/evaluation.hpp"

namespace woodid {

using nlohmann::json;

std::string utc_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[64];
  std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d.%03dZ", tm.tm_year + 1900, tm.tm_mon + 1,
                tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec, static_cast<int>(ms));
  return buf;
}

std::string archetype_ref(std::string_view class_label) {
  static constexpr char kHex[] = "0123456789ABCDEF";
  std::string out = "/archetypes/";
  for (unsigned char c : class_label) {
    if (std::isalnum(c) || c == '-' || c == '_' || c == '.' || c == '~') {
      out += static_cast<char>(c);
    } else {
      out += '%';
      out += kHex[c >> 4];
      out += kHex[c & 15];
    }
  }
  return out;
}

std::vector<TopEntry> rank_top3(const nn::Vec<float>& proba, const ClassCatalog& catalog) {
  std::vector<int> order(static_cast<std::size_t>(proba.size()));
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return proba[a] > proba[b]; });
  std::vector<TopEntry> out;
  for (std::size_t i = 0; i < std::min<std::size_t>(3, order.size()); ++i) {
    const auto& label = catalog.at(static_cast<std::size_t>(order[i])).class_label;
    out.push_back({label, static_cast<double>(proba[order[i]]), archetype_ref(label)});
  }
  return out;
}

// FieldService ---------------------------------------------------------------

FieldService::FieldService(DeploymentBundle bundle, std::unique_ptr<Store> store, Clock clock)
    : bundle_(std::move(bundle)), store_(std::move(store)), clock_(std::move(clock)) {}

json FieldService::health() const {
  return {{"status", "ok"},
          {"interface_version", kInterfaceVersion},
          {"bundle_version", bundle_.version()},
          {"bundle_format_version", bundle_.format_version},
          {"class_count", bundle_.catalog.size()},
          {"eval_mode", to_string(bundle_.eval_mode)},
          {"manifest_digest", bundle_.manifest_digest}};
}

json FieldService::classes() const {
  json list = json::array();
  for (const auto& c : bundle_.catalog.classes())
    list.push_back({{"class_label", c.class_label},
                    {"species", c.species_members},
                    {"archetype_ref", bundle_.archetypes.contains(c.class_label) ? json(archetype_ref(c.class_label))
                                                                                 : json(nullptr)}});
  return {{"classes", list}};
}

const Archetype* FieldService::archetype(std::string_view class_label) const {
  auto it = bundle_.archetypes.find(std::string(class_label));
  return it == bundle_.archetypes.end() ? nullptr : &it->second;
}

Session FieldService::create_session(const std::string& device_id, const std::string& site_id,
                                     const std::string& operator_id) {
  return store_->create_session({"", device_id, site_id, operator_id, "", {}}, clock_());
}

json FieldService::session_status(const std::string& session_id) const {
  auto s = store_->session(session_id);
  if (!s) throw Error(ErrorKind::UnknownSession, "unknown session '" + session_id + "'");
  const auto records = store_->records(session_id);
  const FieldReport report = field_summary(records);
  json doc = s->to_json();
  doc["counts"] = {{"predictions", s->prediction_ids.size()},
                   {"correct", report.overall.correct},
                   {"incorrect", report.overall.incorrect},
                   {"unresolved", report.overall.unresolved},
                   {"accuracy", report.overall.accuracy() ? json(*report.overall.accuracy()) : json(nullptr)}};
  return doc;
}

Prediction FieldService::classify(const std::string& session_id, std::span<const std::uint8_t> image_bytes) {
  if (!store_->session(session_id)) throw Error(ErrorKind::UnknownSession, "unknown session '" + session_id + "'");
  const Image image = decode_image(image_bytes);
  Prediction p;
  p.session_id = session_id;
  p.image_digest = "sha256:" + sha256_hex(image_bytes);
  p.top3 = rank_top3(bundle_.predict(image), bundle_.catalog);
  for (auto& t : p.top3)
    if (!bundle_.archetypes.contains(t.class_label)) t.archetype_ref.clear();
  p.eval_mode = std::string(to_string(bundle_.eval_mode));
  p.bundle_version = bundle_.version();
  p.timestamp = clock_();
  return store_->add_prediction(std::move(p));
}

FieldTrialRecord FieldService::record_verdict(const std::string& session_id, const std::string& prediction_id,
                                              Verdict verdict, std::optional<std::string> actual_class,
                                              const std::string& notes, bool supersede) {
  const auto session = store_->session(session_id);
  if (!session) throw Error(ErrorKind::UnknownSession, "unknown session '" + session_id + "'");
  const auto prediction = store_->prediction(prediction_id);
  if (!prediction || prediction->session_id != session_id)
    throw Error(ErrorKind::UnknownPrediction,
                "prediction '" + prediction_id + "' is not in session '" + session_id + "'");
  if (store_->latest_verdict(prediction_id) && !supersede)
    throw Error(ErrorKind::VerdictExists, "prediction '" + prediction_id + "' already has a verdict");
  if (actual_class && actual_class->empty()) actual_class.reset();
  if (actual_class && !bundle_.catalog.index_of(*actual_class))
    throw Error(ErrorKind::InvalidRecord, "class '" + *actual_class + "' is not in the bundle catalog");

  FieldTrialRecord r;
  r.record_id = prediction_id;
  r.device_id = session->device_id;
  r.site_id = session->site_id;
  r.timestamp = clock_();
  for (const auto& t : prediction->top3) r.predicted_top3.push_back({t.class_label, t.confidence});
  r.operator_verdict = verdict;
  r.actual_class = verdict == Verdict::Correct ? std::optional<std::string>(r.top1()) : actual_class;
  r.image_digest = prediction->image_digest;
  r.bundle_version = prediction->bundle_version;
  r.notes = notes;
  return store_->add_verdict(session_id, std::move(r));
}

std::string FieldService::export_records(const std::string& session_filter, bool history) const {
  const auto records = store_->records(session_filter, history);
  return format_field_records(records);
}

// Options ----------------------------------------------------------------------

ServiceOptions ServiceOptions::with_env_overrides() const {
  ServiceOptions o = *this;
  if (const char* v = std::getenv("WOODID_BUNDLE"); v && *v) o.bundle_path = v;
  if (const char* v = std::getenv("WOODID_STORE"); v && *v) o.store_dir = v;
  if (const char* v = std::getenv("WOODID_LISTEN"); v && *v) o.listen = v;
  if (const char* v = std::getenv("WOODID_STATIC"); v && *v) o.static_dir = v;
  return o;
}

ListenAddress parse_listen_address(const std::string& text) {
  ListenAddress a;
  std::string port;
  if (!text.empty() && text[0] == '[') {
    const auto close = text.find(']');
    if (close == std::string::npos || close + 1 >= text.size() || text[close + 1] != ':')
      throw Error(ErrorKind::BadConfig, "bad listen address '" + text + "'");
    a.host = text.substr(1, close - 1);
    port = text.substr(close + 2);
  } else {
    const auto colon = text.rfind(':');
    if (colon == std::string::npos) throw Error(ErrorKind::BadConfig, "listen address needs host:port");
    a.host = text.substr(0, colon);
    port = text.substr(colon + 1);
  }
  try {
    std::size_t used = 0;
    a.port = std::stoi(port, &used);
    if (used != port.size() || a.port < 0 || a.port > 65535) throw std::out_of_range("port");
  } catch (const std::exception&) {
    throw Error(ErrorKind::BadConfig, "bad port in listen address '" + text + "'");
  }
  bool loopback = a.host == "localhost";
  in_addr v4{};
  in6_addr v6{};
  if (inet_pton(AF_INET, a.host.c_str(), &v4) == 1) loopback = (ntohl(v4.s_addr) >> 24) == 127;
  if (inet_pton(AF_INET6, a.host.c_str(), &v6) == 1) loopback = IN6_IS_ADDR_LOOPBACK(&v6);
  if (!loopback) throw Error(ErrorKind::BadConfig, "refusing to listen on non-loopback host '" + a.host + "'");
  return a;
}

std::unique_ptr<FieldService> open_service(const ServiceOptions& options, Clock clock) {
  DeploymentBundle bundle;
  try {
    bundle = load_bundle(options.bundle_path);
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::IoError) throw Error(ErrorKind::CorruptBundle, e.what());
    throw;
  }
  self_check(bundle);
  auto store = std::make_unique<Store>(options.store_dir, options.snapshot_every);
  return std::make_unique<FieldService>(std::move(bundle), std::move(store), std::move(clock));
}

// HTTP ---------------------------------------------------------------------------

namespace {

int status_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::UnknownSession:
    case ErrorKind::UnknownPrediction: return 404;
    case ErrorKind::VerdictExists: return 409;
    case ErrorKind::ImageTooSmall:
    case ErrorKind::UndecodableImage: return 422;
    case ErrorKind::MissingActualClass:
    case ErrorKind::InvalidRecord:
    case ErrorKind::BadConfig: return 400;
    case ErrorKind::StorageUnavailable: return 503;
    default: return 500;
  }
}

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, ErrorKind kind, const std::string& message) {
  send_json(res, status_for(kind), {{"error", {{"kind", to_string(kind)}, {"message", message}}}});
}

template <typename Fn>
void guarded(httplib::Response& res, Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    send_error(res, e.kind(), e.what());
  } catch (const json::exception& e) {
    send_error(res, ErrorKind::InvalidRecord, std::string("malformed request body: ") + e.what());
  }
}

json body_json(const httplib::Request& req) {
  if (req.body.empty()) return json::object();
  json doc = json::parse(req.body);
  if (!doc.is_object()) throw Error(ErrorKind::InvalidRecord, "request body must be an object");
  return doc;
}

std::string optional_string(const json& doc, const char* key) {
  if (!doc.contains(key) || doc[key].is_null()) return {};
  return doc[key].get<std::string>();
}

}  // namespace

HttpServer::HttpServer(FieldService& service, std::filesystem::path static_dir)
    : service_(service), server_(std::make_unique<httplib::Server>()) {
  server_->set_payload_max_length(64u << 20);
  // httplib defaults to SO_REUSEPORT, which lets a second service share a
  // live port. SO_REUSEADDR alone still allows quick restarts.
  server_->set_socket_options([](socket_t sock) {
    int yes = 1;
    ::setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof yes);
  });
  routes();
  if (!static_dir.empty()) server_->set_mount_point("/", static_dir.string());
}

HttpServer::~HttpServer() { stop(); }

void HttpServer::routes() {
  using httplib::Request;
  using httplib::Response;
  auto& s = *server_;

  s.Get("/health", [this](const Request&, Response& res) { send_json(res, 200, service_.health()); });

  s.Get("/classes", [this](const Request&, Response& res) { send_json(res, 200, service_.classes()); });

  s.Get(R"(/archetypes/([^/]+))", [this](const Request& req, Response& res) {
    const Archetype* a = service_.archetype(req.matches[1].str());
    if (!a) {
      send_json(res, 404, {{"error", {{"kind", "UnknownClass"}, {"message", "no archetype for this class"}}}});
      return;
    }
    res.set_content(reinterpret_cast<const char*>(a->bytes.data()), a->bytes.size(), a->media_type);
  });

  s.Post("/sessions", [this](const Request& req, Response& res) {
    guarded(res, [&] {
      const json body = body_json(req);
      const Session session = service_.create_session(optional_string(body, "device_id"),
                                                      optional_string(body, "site_id"),
                                                      optional_string(body, "operator_id"));
      send_json(res, 201, session.to_json());
    });
  });

  s.Get(R"(/sessions/([^/]+))", [this](const Request& req, Response& res) {
    guarded(res, [&] { send_json(res, 200, service_.session_status(req.matches[1].str())); });
  });

  s.Post(R"(/sessions/([^/]+)/classify)", [this](const Request& req, Response& res) {
    guarded(res, [&] {
      std::vector<std::uint8_t> bytes;
      if (req.get_header_value("Content-Type").rfind("application/json", 0) == 0) {
        const json body = body_json(req);
        bytes = base64_decode(body.at("image_base64").get<std::string>());
      } else {
        bytes.assign(req.body.begin(), req.body.end());
      }
      if (bytes.empty()) throw Error(ErrorKind::UndecodableImage, "empty image");
      send_json(res, 201, service_.classify(req.matches[1].str(), bytes).to_json());
    });
  });

  s.Post(R"(/sessions/([^/]+)/verdicts)", [this](const Request& req, Response& res) {
    guarded(res, [&] {
      const json body = body_json(req);
      const std::string actual = optional_string(body, "actual_class");
      const FieldTrialRecord r = service_.record_verdict(
          req.matches[1].str(), body.at("prediction_id").get<std::string>(),
          parse_verdict(body.at("verdict").get<std::string>()),
          actual.empty() ? std::nullopt : std::optional<std::string>(actual), optional_string(body, "notes"),
          body.value("supersede", false));
      send_json(res, 201, r.to_json());
    });
  });

  s.Get(R"(/sessions/([^/]+)/records)", [this](const Request& req, Response& res) {
    guarded(res, [&] {
      const std::string id = req.matches[1].str();
      if (!service_.store().session(id)) throw Error(ErrorKind::UnknownSession, "unknown session '" + id + "'");
      const bool history = req.has_param("history") && req.get_param_value("history") != "0";
      res.set_content(service_.export_records(id, history), "application/x-ndjson");
    });
  });

  s.Get("/records", [this](const Request& req, Response& res) {
    guarded(res, [&] {
      const bool history = req.has_param("history") && req.get_param_value("history") != "0";
      res.set_content(service_.export_records(req.get_param_value("session"), history), "application/x-ndjson");
    });
  });
}

void HttpServer::bind(const ListenAddress& address) {
  if (address.port == 0) {
    port_ = server_->bind_to_any_port(address.host);
  } else {
    port_ = server_->bind_to_port(address.host, address.port) ? address.port : -1;
  }
  if (port_ < 0) {
    port_ = 0;
    throw Error(ErrorKind::AddressInUse,
                "cannot bind " + address.host + ":" + std::to_string(address.port));
  }
}

void HttpServer::run() { server_->listen_after_bind(); }

void HttpServer::stop() {
  if (server_) server_->stop();
}

bool HttpServer::running() const { return server_->is_running(); }

}  // namespace woodid
