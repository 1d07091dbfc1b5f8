#include <doctest.h>

#include <fstream>
#include <set>
#include <sstream>
#include <thread>

#include "../service_fixture.hpp"
#include "httplib.h"
#include "woodid/digest.hpp"

using namespace woodid;
using namespace woodid::testing;
using nlohmann::json;

namespace {

const json& interface_doc() {
  static const json doc = [] {
    std::ifstream in(WOODID_INTERFACE_DOC);
    REQUIRE(in.good());
    return json::parse(in);
  }();
  return doc;
}

/// Checks `value` against a type expression from the interface document.
void check_type(const json& value, const std::string& type, const std::string& where);

void check_object(const json& value, const std::string& type_name, const std::string& where) {
  const json& types = interface_doc().at("types");
  REQUIRE_MESSAGE(types.contains(type_name), "undocumented type " << type_name);
  REQUIRE_MESSAGE(value.is_object(), where << " is not an object");
  const json& fields = types.at(type_name);
  std::set<std::string> known;
  for (const auto& [raw, ftype] : fields.items()) {
    const bool optional = raw.back() == '?';
    const std::string name = optional ? raw.substr(0, raw.size() - 1) : raw;
    known.insert(name);
    if (!value.contains(name)) {
      CHECK_MESSAGE(optional, where << " lacks required field " << name);
      continue;
    }
    check_type(value.at(name), ftype.get<std::string>(), where + "." + name);
  }
  for (const auto& [name, _] : value.items())
    CHECK_MESSAGE(known.contains(name), where << " has undocumented field " << name);
}

void check_type(const json& value, const std::string& type, const std::string& where) {
  if (const auto bar = type.find('|'); bar != std::string::npos) {
    REQUIRE(type.substr(bar + 1) == "null");
    if (value.is_null()) return;
    check_type(value, type.substr(0, bar), where);
    return;
  }
  if (type.rfind("array<", 0) == 0) {
    REQUIRE_MESSAGE(value.is_array(), where << " is not an array");
    const std::string inner = type.substr(6, type.size() - 7);
    for (std::size_t i = 0; i < value.size(); ++i) check_type(value[i], inner, where + "[" + std::to_string(i) + "]");
    return;
  }
  if (type == "string") {
    CHECK_MESSAGE(value.is_string(), where << " is not a string");
  } else if (type == "integer") {
    CHECK_MESSAGE(value.is_number_integer(), where << " is not an integer");
  } else if (type == "number") {
    CHECK_MESSAGE(value.is_number(), where << " is not a number");
  } else if (type == "boolean") {
    CHECK_MESSAGE(value.is_boolean(), where << " is not a boolean");
  } else {
    check_object(value, type, where);
  }
}

const json& endpoint(const std::string& name) {
  for (const auto& e : interface_doc().at("endpoints"))
    if (e.at("name") == name) return e;
  FAIL("endpoint " << name << " is not documented");
  static const json none;
  return none;
}

/// Asserts the response matches the documented status and body type.
json expect_documented(const httplib::Result& res, const std::string& name) {
  REQUIRE_MESSAGE(res, name << ": no response");
  const json& e = endpoint(name);
  CHECK_MESSAGE(res->status == e.at("response").at("status").get<int>(), name << " body: " << res->body);
  CHECK(res->get_header_value("Content-Type") == interface_doc()["transport"]["json_content_type"]);
  const json body = json::parse(res->body);
  check_type(body, e.at("response").at("body").get<std::string>(), name);
  return body;
}

/// Asserts a documented error response.
void expect_error(const httplib::Result& res, const std::string& kind) {
  REQUIRE(res);
  const json& doc = interface_doc().at("errors");
  const int want = doc.at("status_by_kind").value(kind, doc.at("other_kinds").get<int>());
  CHECK_MESSAGE(res->status == want, kind << " body: " << res->body);
  const json body = json::parse(res->body);
  check_type(body, doc.at("body").get<std::string>(), "error");
  CHECK(body["error"]["kind"] == kind);
}

std::string records_body(const httplib::Result& res) {
  REQUIRE(res);
  CHECK(res->status == 200);
  CHECK(res->get_header_value("Content-Type") == interface_doc()["transport"]["records_content_type"]);
  std::istringstream in(res->body);
  std::string line;
  REQUIRE(std::getline(in, line));
  CHECK(line == interface_doc()["records_format"]["header"]);
  while (std::getline(in, line)) check_type(json::parse(line), "FieldTrialRecord", "record");
  return res->body;
}

struct Running {
  TempDir dir{"http"};
  std::filesystem::path bundle = write_test_bundle(dir);
  std::unique_ptr<FieldService> service;
  std::unique_ptr<HttpServer> server;
  std::thread thread;

  Running() {
    std::filesystem::create_directories(dir / "static");
    std::ofstream(dir / "static" / "index.html") << "<!doctype html><title>console</title>";
    ServiceOptions o;
    o.bundle_path = bundle;
    o.store_dir = dir / "store";
    service = open_service(o, counting_clock());
    server = std::make_unique<HttpServer>(*service, dir / "static");
    server->bind(parse_listen_address("127.0.0.1:0"));
    thread = std::thread([this] { server->run(); });
    for (int i = 0; i < 200 && !server->running(); ++i) std::this_thread::sleep_for(std::chrono::milliseconds(5));
  }
  ~Running() {
    server->stop();
    thread.join();
  }
  httplib::Client client() const {
    httplib::Client c("127.0.0.1", server->port());
    c.set_read_timeout(60, 0);
    return c;
  }
};

std::string as_body(const std::vector<std::uint8_t>& b) { return std::string(b.begin(), b.end()); }

}  // namespace

TEST_CASE("interface document lists every route with a known type") {
  const json& doc = interface_doc();
  CHECK(doc["interface_version"] == kInterfaceVersion);
  std::set<std::string> paths;
  for (const auto& e : doc["endpoints"]) paths.insert(e["method"].get<std::string>() + " " + e["path"].get<std::string>());
  for (const char* p : {"GET /health", "GET /classes", "GET /archetypes/{class_label}", "POST /sessions",
                        "GET /sessions/{session_id}", "POST /sessions/{session_id}/classify",
                        "POST /sessions/{session_id}/verdicts", "GET /sessions/{session_id}/records", "GET /records"})
    CHECK_MESSAGE(paths.contains(p), p);
  for (const auto& [kind, status] : doc["errors"]["status_by_kind"].items()) {
    if (kind == "UnknownClass") continue;  // archetype route only
    bool found = false;
    for (int k = 0; k <= static_cast<int>(ErrorKind::IoError); ++k)
      found |= to_string(static_cast<ErrorKind>(k)) == kind;
    CHECK_MESSAGE(found, kind);
  }
}

TEST_CASE("HTTP contract walk-through") {
  Running r;
  auto c = r.client();

  const json health = expect_documented(c.Get("/health"), "health");
  CHECK(health["class_count"] == 15);
  CHECK(health["bundle_version"] == r.service->bundle().version());

  const json classes = expect_documented(c.Get("/classes"), "classes");
  CHECK(classes["classes"].size() == 15);
  const std::string ref = classes["classes"][0]["archetype_ref"];
  auto arch = c.Get(ref);
  REQUIRE(arch);
  CHECK(arch->status == 200);
  CHECK(arch->get_header_value("Content-Type") == "image/png");
  CHECK(arch->body == as_body(r.service->archetype(genera()[0])->bytes));
  expect_error(c.Get("/archetypes/Quercus"), "UnknownClass");

  const json session = expect_documented(
      c.Post("/sessions", R"({"device_id":"xt-1","site_id":"port-a","operator_id":"op-7"})", "application/json"),
      "create_session");
  const std::string sid = session["session_id"];
  CHECK(session["device_id"] == "xt-1");
  expect_error(c.Post("/sessions", "[1,2]", "application/json"), "InvalidRecord");
  expect_error(c.Post("/sessions", "{oops", "application/json"), "InvalidRecord");

  const auto img = png_bytes(600, 300, 31);
  const json p1 = expect_documented(c.Post("/sessions/" + sid + "/classify", as_body(img), "image/png"), "classify");
  const json p2 = expect_documented(
      c.Post("/sessions/" + sid + "/classify", json{{"image_base64", base64_encode(img)}}.dump(), "application/json"),
      "classify");
  CHECK(p1["top3"] == p2["top3"]);
  CHECK(p1["prediction_id"] != p2["prediction_id"]);
  CHECK(p1["image_digest"] == "sha256:" + sha256_hex(img));
  for (const auto& t : p1["top3"]) {
    CHECK(t["confidence"].get<double>() <= p1["top3"][0]["confidence"].get<double>());
    if (!t["archetype_ref"].is_null()) CHECK(c.Get(t["archetype_ref"].get<std::string>())->status == 200);
  }
  expect_error(c.Post("/sessions/" + sid + "/classify", as_body(png_bytes(100, 100, 1)), "image/png"),
               "ImageTooSmall");
  expect_error(c.Post("/sessions/" + sid + "/classify", "garbage", "application/octet-stream"), "UndecodableImage");
  expect_error(c.Post("/sessions/ses-404/classify", as_body(img), "image/png"), "UnknownSession");

  const std::string pid = p1["prediction_id"];
  const std::string verdicts = "/sessions/" + sid + "/verdicts";
  const json v1 = expect_documented(
      c.Post(verdicts, json{{"prediction_id", pid}, {"verdict", "correct"}}.dump(), "application/json"),
      "record_verdict");
  CHECK(v1["actual_class"] == p1["top3"][0]["class_label"]);
  expect_error(c.Post(verdicts, json{{"prediction_id", pid}, {"verdict", "unresolved"}}.dump(), "application/json"),
               "VerdictExists");
  const std::string actual = p1["top3"][1]["class_label"];
  const json v2 = expect_documented(
      c.Post(verdicts,
             json{{"prediction_id", pid}, {"verdict", "incorrect"}, {"actual_class", actual}, {"supersede", true},
                  {"notes", "recut"}}
                 .dump(),
             "application/json"),
      "record_verdict");
  CHECK(v2["revision"] == 2);
  const std::string pid2 = p2["prediction_id"];
  expect_error(c.Post(verdicts, json{{"prediction_id", pid2}, {"verdict", "incorrect"}}.dump(), "application/json"),
               "MissingActualClass");
  expect_error(c.Post(verdicts, json{{"prediction_id", "pred-404"}, {"verdict", "correct"}}.dump(), "application/json"),
               "UnknownPrediction");
  expect_error(c.Post(verdicts, json{{"prediction_id", pid2}, {"verdict", "perhaps"}}.dump(), "application/json"),
               "InvalidRecord");
  expect_error(c.Post(verdicts, json{{"verdict", "correct"}}.dump(), "application/json"), "InvalidRecord");

  const json status = expect_documented(c.Get("/sessions/" + sid), "session_status");
  CHECK(status["counts"]["predictions"] == 2);
  CHECK(status["counts"]["incorrect"] == 1);
  expect_error(c.Get("/sessions/ses-404"), "UnknownSession");

  const std::string latest = records_body(c.Get("/sessions/" + sid + "/records"));
  CHECK(parse_field_records(latest).size() == 1);
  const std::string history = records_body(c.Get("/sessions/" + sid + "/records?history=1"));
  CHECK(parse_field_records(history).size() == 2);
  CHECK(records_body(c.Get("/records")) == latest);
  CHECK(records_body(c.Get("/records?session=ses-999999")) == std::string(kFieldRecordsHeader) + "\n");
  expect_error(c.Get("/sessions/ses-404/records"), "UnknownSession");

  auto page = c.Get("/index.html");
  REQUIRE(page);
  CHECK(page->status == 200);
  CHECK(page->body.find("console") != std::string::npos);
}

TEST_CASE("a taken port is reported as AddressInUse") {
  Running r;
  HttpServer second(*r.service);
  try {
    second.bind(parse_listen_address("127.0.0.1:" + std::to_string(r.server->port())));
    FAIL("second bind succeeded");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::AddressInUse);
  }
}

TEST_CASE("serve refuses a corrupt bundle") {
  TempDir dir("serve-cli");
  write_file_bytes(dir / "bad.bundle", std::vector<std::uint8_t>(256, 0x5a));
  const std::string cmd = std::string(WOODID_CLI) + " serve --bundle " + (dir / "bad.bundle").string() +
                          " --store " + (dir / "store").string() + " --listen 127.0.0.1:0 2>" +
                          (dir / "err.txt").string();
  const int rc = std::system(cmd.c_str());
  CHECK(rc != 0);
  const auto err = read_file_bytes(dir / "err.txt");
  CHECK(as_body(err).find("CorruptBundle") != std::string::npos);

  const std::string public_cmd = std::string(WOODID_CLI) + " serve --bundle " + (dir / "bad.bundle").string() +
                                 " --store " + (dir / "store").string() + " --listen 0.0.0.0:8765 2>/dev/null";
  CHECK(std::system(public_cmd.c_str()) != 0);
}
