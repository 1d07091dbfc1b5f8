#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "json.hpp"
#include "woodid/field_records.hpp"

namespace woodid {

using ProbabilityRows = std::vector<Eigen::VectorXf>;

/// Fraction of items whose label ranks among the k most probable classes.
/// Rank ties are broken by class index: an equal-probability class with a
/// lower index ranks ahead. Throws EmptyInput, BadDims on ragged input or
/// an out-of-range label, BadConfig for k < 1.
double top_k_accuracy(std::span<const Eigen::VectorXf> probabilities, std::span<const int> labels, int k);

/// Row = true class, column = argmax class (lowest index on ties).
struct ConfusionMatrix {
  std::vector<std::string> labels;
  std::vector<std::vector<std::int64_t>> counts;

  std::int64_t total() const;
  std::int64_t row_total(std::size_t i) const;
  nlohmann::json to_json() const;
  static ConfusionMatrix from_json(const nlohmann::json& doc);
};

/// Throws EmptyInput and BadDims as top_k_accuracy does.
ConfusionMatrix confusion(std::span<const Eigen::VectorXf> probabilities, std::span<const int> labels,
                          std::vector<std::string> class_labels);

struct ClassAccuracy {
  std::string label;
  std::int64_t evaluated = 0;
  std::int64_t correct = 0;
  std::optional<double> accuracy() const;
};

/// Image-level laboratory metrics on a held-out split.
struct LabReport {
  std::vector<std::string> labels;
  std::int64_t n_items = 0;
  double top1 = 0.0;
  double top3 = 0.0;
  std::vector<ClassAccuracy> per_class;
  ConfusionMatrix confusion;
  std::string manifest_digest;
  std::string bundle_version;

  nlohmann::json to_json() const;
  static LabReport from_json(const nlohmann::json& doc);
  std::string table() const;
};

LabReport lab_report(std::span<const Eigen::VectorXf> probabilities, std::span<const int> labels,
                     std::vector<std::string> class_labels);

/// Groups of anatomically similar classes. Confusions inside one group are
/// reported apart from the rest.
struct SimilarityTable {
  struct Group {
    std::string name;
    std::vector<std::string> classes;
  };
  std::vector<Group> groups;

  static SimilarityTable defaults();
  std::optional<std::string> group_of(std::string_view label) const;
  bool similar(std::string_view a, std::string_view b) const;
  nlohmann::json to_json() const;
  /// Throws BadConfig when a class sits in two groups.
  static SimilarityTable from_json(const nlohmann::json& doc);
};

struct Tally {
  std::int64_t correct = 0;
  std::int64_t incorrect = 0;
  std::int64_t unresolved = 0;

  std::int64_t resolved() const { return correct + incorrect; }
  /// Undefined when nothing was resolved.
  std::optional<double> accuracy() const;
  void add(Verdict v);
};

/// Specimen-level field-trial aggregation.
struct FieldReport {
  std::vector<std::string> labels;
  std::int64_t n_records = 0;
  /// Older revisions dropped in favour of a later one.
  std::int64_t superseded = 0;
  Tally overall;
  /// Keyed by true class; unresolved records are counted under their top-1.
  std::map<std::string, Tally> per_class;
  std::map<std::string, Tally> per_site;
  std::map<std::string, Tally> per_device;
  std::int64_t similar_confusions = 0;
  std::int64_t other_confusions = 0;
  /// (actual, predicted) -> count over incorrect records.
  std::map<std::pair<std::string, std::string>, std::int64_t> confusion_pairs;

  bool accuracy_defined() const { return overall.accuracy().has_value(); }
  nlohmann::json to_json() const;
  static FieldReport from_json(const nlohmann::json& doc);
  std::string table() const;
};

/// Keeps the highest revision per record_id (ties: later timestamp, then
/// the lexicographically greater serialisation, so input order never
/// matters) and aggregates. With `class_labels` empty the label
/// list is the sorted set of classes seen.
FieldReport field_summary(std::span<const FieldTrialRecord> records,
                          const SimilarityTable& similarity = SimilarityTable::defaults(),
                          std::vector<std::string> class_labels = {});

struct ClassGap {
  std::string label;
  std::optional<double> lab;
  std::optional<double> field;
  /// lab - field; undefined unless both are.
  std::optional<double> gap;
};

struct GapReport {
  double lab_overall = 0.0;
  std::optional<double> field_overall;
  std::optional<double> overall_gap;
  /// Ranked by degradation, largest first; undefined gaps last.
  std::vector<ClassGap> per_class;

  nlohmann::json to_json() const;
  std::string table() const;
};

/// Throws ClassListMismatch when the two reports cover different classes.
GapReport lab_field_gap(const LabReport& lab, const FieldReport& field);

}  // namespace woodid
