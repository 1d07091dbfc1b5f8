#include "woodid/field_records.hpp"

#include <sstream>

#include "woodid/digest.hpp"
#include "woodid/error.hpp"

namespace woodid {

using nlohmann::json;

std::string_view to_string(Verdict v) {
  switch (v) {
    case Verdict::Correct: return "correct";
    case Verdict::Incorrect: return "incorrect";
    case Verdict::Unresolved: return "unresolved";
  }
  return "unresolved";
}

Verdict parse_verdict(std::string_view text) {
  if (text == "correct") return Verdict::Correct;
  if (text == "incorrect") return Verdict::Incorrect;
  if (text == "unresolved") return Verdict::Unresolved;
  throw Error(ErrorKind::InvalidRecord, "unknown verdict '" + std::string(text) + "'");
}

std::optional<std::string> FieldTrialRecord::true_class() const {
  switch (operator_verdict) {
    case Verdict::Correct: return top1();
    case Verdict::Incorrect: return actual_class;
    case Verdict::Unresolved: return std::nullopt;
  }
  return std::nullopt;
}

void FieldTrialRecord::validate() const {
  auto fail = [&](const std::string& why) {
    throw Error(ErrorKind::InvalidRecord, "record '" + record_id + "': " + why);
  };
  if (record_id.empty()) fail("empty record_id");
  if (predicted_top3.empty() || predicted_top3.size() > 3) fail("predicted_top3 must hold 1 to 3 entries");
  for (std::size_t i = 0; i < predicted_top3.size(); ++i) {
    const auto& r = predicted_top3[i];
    if (r.class_label.empty()) fail("empty class label in predicted_top3");
    if (!(r.confidence >= 0.0 && r.confidence <= 1.0)) fail("confidence outside [0, 1]");
    if (i > 0 && r.confidence > predicted_top3[i - 1].confidence) fail("confidences not descending");
    for (std::size_t j = 0; j < i; ++j)
      if (predicted_top3[j].class_label == r.class_label) fail("class repeated in predicted_top3");
  }
  if (revision < 1) fail("revision must be >= 1");
  if (operator_verdict == Verdict::Incorrect && (!actual_class || *actual_class == top1()))
    throw Error(ErrorKind::MissingActualClass,
                "record '" + record_id + "': incorrect verdict needs an actual class other than the top-1");
  if (operator_verdict == Verdict::Correct && actual_class && *actual_class != top1())
    fail("correct verdict with an actual class other than the top-1");
}

json FieldTrialRecord::to_json() const {
  json top = json::array();
  for (const auto& r : predicted_top3) top.push_back({{"class", r.class_label}, {"confidence", r.confidence}});
  json doc = {{"schema_version", kSchemaVersion},
              {"record_id", record_id},
              {"revision", revision},
              {"device_id", device_id},
              {"site_id", site_id},
              {"timestamp", timestamp},
              {"predicted_top3", top},
              {"operator_verdict", to_string(operator_verdict)},
              {"actual_class", actual_class ? json(*actual_class) : json(nullptr)}};
  if (!image_digest.empty()) doc["image_digest"] = image_digest;
  if (!bundle_version.empty()) doc["bundle_version"] = bundle_version;
  if (!notes.empty()) doc["notes"] = notes;
  return doc;
}

FieldTrialRecord FieldTrialRecord::from_json(const json& doc) {
  FieldTrialRecord r;
  try {
    const int version = doc.value("schema_version", kSchemaVersion);
    if (version != kSchemaVersion)
      throw Error(ErrorKind::VersionMismatch, "field record schema version " + std::to_string(version));
    r.record_id = doc.at("record_id").get<std::string>();
    r.revision = doc.value("revision", 1);
    r.device_id = doc.value("device_id", "");
    r.site_id = doc.value("site_id", "");
    r.timestamp = doc.value("timestamp", "");
    for (const auto& t : doc.at("predicted_top3"))
      r.predicted_top3.push_back({t.at("class").get<std::string>(), t.at("confidence").get<double>()});
    r.operator_verdict = parse_verdict(doc.at("operator_verdict").get<std::string>());
    if (doc.contains("actual_class") && !doc["actual_class"].is_null())
      r.actual_class = doc["actual_class"].get<std::string>();
    r.image_digest = doc.value("image_digest", "");
    r.bundle_version = doc.value("bundle_version", "");
    r.notes = doc.value("notes", "");
  } catch (const json::exception& e) {
    throw Error(ErrorKind::InvalidRecord, std::string("field record: ") + e.what());
  }
  r.validate();
  return r;
}

std::string format_field_records(std::span<const FieldTrialRecord> records) {
  std::string out(kFieldRecordsHeader);
  out += '\n';
  for (const auto& r : records) {
    out += r.to_json().dump();
    out += '\n';
  }
  return out;
}

std::vector<FieldTrialRecord> parse_field_records(std::string_view text) {
  std::vector<FieldTrialRecord> out;
  std::istringstream in{std::string(text)};
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    if (line[0] == '#') {
      if (line.rfind("# woodid field-records ", 0) == 0 && line != kFieldRecordsHeader)
        throw Error(ErrorKind::VersionMismatch, "unsupported header: " + line);
      continue;
    }
    try {
      out.push_back(FieldTrialRecord::from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw Error(ErrorKind::InvalidRecord, "line " + std::to_string(line_no) + ": " + e.what());
    } catch (const Error& e) {
      throw Error(e.kind(), "line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

void write_field_records(const std::filesystem::path& path, std::span<const FieldTrialRecord> records) {
  const std::string text = format_field_records(records);
  write_file_atomic(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

std::vector<FieldTrialRecord> read_field_records(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  return parse_field_records(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

}  // namespace woodid
