#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace woodid {

/// A genus-level label grouping one or more botanical species.
struct TaxonClass {
  std::string class_label;
  std::vector<std::string> species_members;
  std::string archetype_image;  // path or URI shown beside predictions
};

class ClassCatalog {
 public:
  ClassCatalog() = default;
  /// Throws BadConfig on duplicate labels, empty species lists, or a species
  /// listed under two classes.
  explicit ClassCatalog(std::vector<TaxonClass> classes);

  static ClassCatalog from_json(const nlohmann::json& doc);
  nlohmann::json to_json() const;
  static ClassCatalog load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  std::span<const TaxonClass> classes() const { return classes_; }
  std::size_t size() const { return classes_.size(); }
  std::vector<std::string> labels() const;

  std::optional<std::size_t> index_of(std::string_view class_label) const;
  std::optional<std::size_t> class_of_species(std::string_view species) const;
  const TaxonClass& at(std::size_t index) const { return classes_.at(index); }

 private:
  std::vector<TaxonClass> classes_;
  std::map<std::string, std::size_t, std::less<>> by_label_;
  std::map<std::string, std::size_t, std::less<>> by_species_;
};

enum class CurationStatus { Pending, Accepted, ExcludedAtypical, ExcludedMisidentified };
enum class RayOrientation { Vertical, Unknown };
enum class Split { Train = 0, Valid = 1, Test = 2 };

std::string_view to_string(CurationStatus status);
std::string_view to_string(RayOrientation orientation);
std::string_view to_string(Split split);
CurationStatus parse_curation_status(std::string_view text);
RayOrientation parse_ray_orientation(std::string_view text);
Split parse_split(std::string_view text);

inline bool is_excluded(CurationStatus s) {
  return s == CurationStatus::ExcludedAtypical || s == CurationStatus::ExcludedMisidentified;
}

struct ImageRecord {
  std::string image_id;
  std::string specimen_id;
  int width = 0;
  int height = 0;
  RayOrientation ray_orientation = RayOrientation::Vertical;
  std::string file_ref;
};

struct Specimen {
  std::string specimen_id;
  std::string species;
  std::string class_label;
  std::string source;
  CurationStatus curation_status = CurationStatus::Pending;
  std::vector<std::string> images;
};

/// One line of an ingest records file.
struct ImageDescriptor {
  std::string image_id;
  std::string file_ref;
  RayOrientation ray_orientation = RayOrientation::Vertical;
};

struct SpecimenDescriptor {
  std::string specimen_id;
  std::string species;
  std::string source;
  std::vector<ImageDescriptor> images;
};

struct PixelDims {
  int width = 0;
  int height = 0;
};

/// Resolves an image reference to its decoded dimensions; throws
/// Error(UnreadableImage) when the file is missing or does not decode.
using ImageProbe = std::function<PixelDims(const std::string& file_ref)>;

/// Probe that fully decodes files from disk, resolving relative references
/// against `base_dir`.
ImageProbe decoding_probe(std::filesystem::path base_dir = {});

class Registry {
 public:
  Registry() = default;
  explicit Registry(ClassCatalog catalog) : catalog_(std::move(catalog)) {}

  const ClassCatalog& catalog() const { return catalog_; }
  const std::map<std::string, Specimen, std::less<>>& specimens() const { return specimens_; }
  const std::map<std::string, ImageRecord, std::less<>>& images() const { return images_; }

  const Specimen& specimen(std::string_view id) const;
  const ImageRecord& image(std::string_view id) const;
  bool empty() const { return specimens_.empty(); }

  /// Throws DuplicateId / UnknownSpecies.
  void add(Specimen specimen, std::vector<ImageRecord> images);
  /// Throws UnknownSpecimen.
  void set_status(std::string_view specimen_id, CurationStatus status);

  /// Accepted specimen ids grouped by class label, each group sorted.
  std::map<std::string, std::vector<std::string>> accepted_by_class() const;

  /// Newline-delimited JSON persistence: catalog.json, specimens.jsonl,
  /// images.jsonl inside `dir`.
  void save(const std::filesystem::path& dir) const;
  static Registry load(const std::filesystem::path& dir);

  /// Content digest over catalog, specimens and images (order-independent).
  std::string digest() const;

 private:
  ClassCatalog catalog_;
  std::map<std::string, Specimen, std::less<>> specimens_;
  std::map<std::string, ImageRecord, std::less<>> images_;
};

Registry ingest(const ClassCatalog& catalog, std::span<const SpecimenDescriptor> records,
                const ImageProbe& probe);

std::vector<SpecimenDescriptor> load_specimen_records(const std::filesystem::path& path);

Registry set_curation(Registry registry, std::string_view specimen_id, CurationStatus status);

using SplitRatios = std::array<double, 3>;
using SplitCounts = std::array<int, 3>;

struct SplitManifest {
  SplitRatios ratios{0.70, 0.15, 0.15};
  std::uint64_t seed = 0;
  std::string rng = "mt19937_64";
  std::string registry_digest;
  /// Specimen ids per split, indexed by Split.
  std::array<std::vector<std::string>, 3> members;
  std::map<std::string, SplitCounts> per_class_counts;

  std::optional<Split> split_of(std::string_view specimen_id) const;

  nlohmann::json to_json() const;
  static SplitManifest from_json(const nlohmann::json& doc);
  void save(const std::filesystem::path& path) const;
  static SplitManifest load(const std::filesystem::path& path);
  std::string digest() const;
};

/// Per-class split sizes for `n` specimens: the two minor splits are
/// rounded half-up, the largest split takes the remainder, then every
/// split is floored at one specimen by borrowing from the largest.
SplitCounts allocate_split_counts(int n, const SplitRatios& ratios);

SplitManifest stratified_split(const Registry& registry,
                               const SplitRatios& ratios = {0.70, 0.15, 0.15},
                               std::uint64_t seed = 0);

enum class ViolationKind {
  Leakage,
  DuplicateAssignment,
  ExcludedPresent,
  UnknownSpecimen,
  MissingSpecimen,
  EmptyCell,
  CountMismatch,
};
std::string_view to_string(ViolationKind kind);

struct Violation {
  ViolationKind kind;
  std::string subject;  // specimen id or class label
  std::string detail;
};

struct ValidationReport {
  std::vector<Violation> violations;
  bool valid() const { return violations.empty(); }
  nlohmann::json to_json() const;
};

ValidationReport validate_manifest(const SplitManifest& manifest, const Registry& registry);

}  // namespace woodid
