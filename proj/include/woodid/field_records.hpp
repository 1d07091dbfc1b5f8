#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace woodid {

enum class Verdict { Correct, Incorrect, Unresolved };

std::string_view to_string(Verdict v);
/// Throws InvalidRecord.
Verdict parse_verdict(std::string_view text);

struct RankedClass {
  std::string class_label;
  double confidence = 0.0;

  bool operator==(const RankedClass&) const = default;
};

/// One specimen screened in the field. A record may be revised (an operator
/// amending a verdict); the highest revision of a record_id wins.
struct FieldTrialRecord {
  static constexpr int kSchemaVersion = 1;

  std::string record_id;
  std::string device_id;
  std::string site_id;
  std::string timestamp;  // ISO-8601 UTC
  std::vector<RankedClass> predicted_top3;
  Verdict operator_verdict = Verdict::Unresolved;
  std::optional<std::string> actual_class;
  int revision = 1;
  std::string image_digest;
  std::string bundle_version;
  std::string notes;

  const std::string& top1() const { return predicted_top3.front().class_label; }
  /// True class when adjudicated: top-1 for correct, actual_class for incorrect.
  std::optional<std::string> true_class() const;

  /// Throws InvalidRecord (MissingActualClass for an incorrect verdict
  /// without a distinct actual class).
  void validate() const;

  nlohmann::json to_json() const;
  /// Validates. Throws InvalidRecord / VersionMismatch.
  static FieldTrialRecord from_json(const nlohmann::json& doc);

  bool operator==(const FieldTrialRecord&) const = default;
};

inline constexpr std::string_view kFieldRecordsHeader = "# woodid field-records v1";

/// Newline-delimited records preceded by a version header comment.
std::string format_field_records(std::span<const FieldTrialRecord> records);
/// Blank lines and '#' comments are skipped; a header naming another
/// version raises VersionMismatch; bad lines raise InvalidRecord with the
/// line number.
std::vector<FieldTrialRecord> parse_field_records(std::string_view text);

void write_field_records(const std::filesystem::path& path, std::span<const FieldTrialRecord> records);
std::vector<FieldTrialRecord> read_field_records(const std::filesystem::path& path);

}  // namespace woodid
