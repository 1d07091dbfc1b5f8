#include "woodid/registry.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "woodid/digest.hpp"
#include "woodid/error.hpp"
#include "woodid/image.hpp"
#include "woodid/rng.hpp"

namespace woodid {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Catalog

ClassCatalog::ClassCatalog(std::vector<TaxonClass> classes) : classes_(std::move(classes)) {
  for (std::size_t i = 0; i < classes_.size(); ++i) {
    const auto& c = classes_[i];
    if (c.class_label.empty()) throw Error(ErrorKind::BadConfig, "empty class label");
    if (c.species_members.empty())
      throw Error(ErrorKind::BadConfig, "class " + c.class_label + " has no species");
    if (!by_label_.emplace(c.class_label, i).second)
      throw Error(ErrorKind::BadConfig, "duplicate class label " + c.class_label);
    for (const auto& s : c.species_members)
      if (!by_species_.emplace(s, i).second)
        throw Error(ErrorKind::BadConfig, "species " + s + " listed under two classes");
  }
}

ClassCatalog ClassCatalog::from_json(const json& doc) {
  std::vector<TaxonClass> classes;
  try {
    for (const auto& c : doc.at("classes")) {
      TaxonClass t;
      t.class_label = c.at("class_label").get<std::string>();
      t.species_members = c.at("species_members").get<std::vector<std::string>>();
      t.archetype_image = c.value("archetype_image", "");
      classes.push_back(std::move(t));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::BadConfig, std::string("catalog: ") + e.what());
  }
  return ClassCatalog(std::move(classes));
}

json ClassCatalog::to_json() const {
  json classes = json::array();
  for (const auto& c : classes_)
    classes.push_back({{"class_label", c.class_label},
                       {"species_members", c.species_members},
                       {"archetype_image", c.archetype_image}});
  return {{"classes", classes}};
}

namespace {

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::IoError, "cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::BadConfig, path.string() + ": " + e.what());
  }
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  write_file_atomic(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()),
                                    text.size()));
}

template <typename Fn>
void for_each_json_line(const std::filesystem::path& path, Fn&& fn) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::IoError, "cannot open " + path.string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    try {
      fn(json::parse(line));
    } catch (const json::exception& e) {
      throw Error(ErrorKind::InvalidRecord,
                  path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

}  // namespace

ClassCatalog ClassCatalog::load(const std::filesystem::path& path) {
  return from_json(read_json_file(path));
}

void ClassCatalog::save(const std::filesystem::path& path) const {
  write_text(path, to_json().dump(2) + "\n");
}

std::vector<std::string> ClassCatalog::labels() const {
  std::vector<std::string> out;
  out.reserve(classes_.size());
  for (const auto& c : classes_) out.push_back(c.class_label);
  return out;
}

std::optional<std::size_t> ClassCatalog::index_of(std::string_view class_label) const {
  auto it = by_label_.find(class_label);
  if (it == by_label_.end()) return std::nullopt;
  return it->second;
}

std::optional<std::size_t> ClassCatalog::class_of_species(std::string_view species) const {
  auto it = by_species_.find(species);
  if (it == by_species_.end()) return std::nullopt;
  return it->second;
}

// ---------------------------------------------------------------------------
// Enumerations

std::string_view to_string(CurationStatus status) {
  switch (status) {
    case CurationStatus::Pending: return "pending";
    case CurationStatus::Accepted: return "accepted";
    case CurationStatus::ExcludedAtypical: return "excluded_atypical";
    case CurationStatus::ExcludedMisidentified: return "excluded_misidentified";
  }
  return "pending";
}

std::string_view to_string(RayOrientation orientation) {
  return orientation == RayOrientation::Vertical ? "vertical" : "unknown";
}

std::string_view to_string(Split split) {
  switch (split) {
    case Split::Train: return "train";
    case Split::Valid: return "valid";
    case Split::Test: return "test";
  }
  return "train";
}

CurationStatus parse_curation_status(std::string_view text) {
  for (auto s : {CurationStatus::Pending, CurationStatus::Accepted,
                 CurationStatus::ExcludedAtypical, CurationStatus::ExcludedMisidentified})
    if (to_string(s) == text) return s;
  throw Error(ErrorKind::InvalidRecord, "unknown curation status '" + std::string(text) + "'");
}

RayOrientation parse_ray_orientation(std::string_view text) {
  if (text == "vertical") return RayOrientation::Vertical;
  if (text == "unknown") return RayOrientation::Unknown;
  throw Error(ErrorKind::InvalidRecord, "unknown ray orientation '" + std::string(text) + "'");
}

Split parse_split(std::string_view text) {
  for (auto s : {Split::Train, Split::Valid, Split::Test})
    if (to_string(s) == text) return s;
  throw Error(ErrorKind::InvalidRecord, "unknown split '" + std::string(text) + "'");
}

// ---------------------------------------------------------------------------
// Registry

ImageProbe decoding_probe(std::filesystem::path base_dir) {
  return [base = std::move(base_dir)](const std::string& file_ref) {
    std::filesystem::path p(file_ref);
    if (p.is_relative() && !base.empty()) p = base / p;
    try {
      const Image img = read_image(p);
      return PixelDims{img.width(), img.height()};
    } catch (const Error& e) {
      throw Error(ErrorKind::UnreadableImage, file_ref + ": " + e.what());
    }
  };
}

const Specimen& Registry::specimen(std::string_view id) const {
  auto it = specimens_.find(id);
  if (it == specimens_.end())
    throw Error(ErrorKind::UnknownSpecimen, std::string(id));
  return it->second;
}

const ImageRecord& Registry::image(std::string_view id) const {
  auto it = images_.find(id);
  if (it == images_.end()) throw Error(ErrorKind::InvalidRecord, "unknown image " + std::string(id));
  return it->second;
}

void Registry::add(Specimen specimen, std::vector<ImageRecord> images) {
  const auto cls = catalog_.class_of_species(specimen.species);
  if (!cls) throw Error(ErrorKind::UnknownSpecies, specimen.species);
  specimen.class_label = catalog_.at(*cls).class_label;
  if (specimens_.contains(specimen.specimen_id))
    throw Error(ErrorKind::DuplicateId, "specimen " + specimen.specimen_id);
  std::set<std::string> fresh;
  for (const auto& img : images)
    if (images_.contains(img.image_id) || !fresh.insert(img.image_id).second)
      throw Error(ErrorKind::DuplicateId, "image " + img.image_id);
  specimen.images.clear();
  for (auto& img : images) {
    img.specimen_id = specimen.specimen_id;
    specimen.images.push_back(img.image_id);
    images_.emplace(img.image_id, std::move(img));
  }
  specimens_.emplace(specimen.specimen_id, std::move(specimen));
}

void Registry::set_status(std::string_view specimen_id, CurationStatus status) {
  auto it = specimens_.find(specimen_id);
  if (it == specimens_.end()) throw Error(ErrorKind::UnknownSpecimen, std::string(specimen_id));
  it->second.curation_status = status;
}

std::map<std::string, std::vector<std::string>> Registry::accepted_by_class() const {
  std::map<std::string, std::vector<std::string>> out;
  for (const auto& [id, s] : specimens_)
    if (s.curation_status == CurationStatus::Accepted) out[s.class_label].push_back(id);
  return out;  // std::map iteration keeps each group sorted
}

namespace {

json specimen_json(const Specimen& s) {
  return {{"specimen_id", s.specimen_id},   {"species", s.species},
          {"class_label", s.class_label},   {"source", s.source},
          {"curation_status", to_string(s.curation_status)},
          {"images", s.images}};
}

json image_json(const ImageRecord& r) {
  return {{"image_id", r.image_id},
          {"specimen_id", r.specimen_id},
          {"pixel_dims", {r.width, r.height}},
          {"ray_orientation", to_string(r.ray_orientation)},
          {"file_ref", r.file_ref}};
}

}  // namespace

void Registry::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  catalog_.save(dir / "catalog.json");
  std::string specimens, images;
  for (const auto& [id, s] : specimens_) specimens += specimen_json(s).dump() + "\n";
  for (const auto& [id, r] : images_) images += image_json(r).dump() + "\n";
  write_text(dir / "specimens.jsonl", specimens);
  write_text(dir / "images.jsonl", images);
}

Registry Registry::load(const std::filesystem::path& dir) {
  Registry reg(ClassCatalog::load(dir / "catalog.json"));
  std::map<std::string, std::vector<ImageRecord>> images_by_specimen;
  for_each_json_line(dir / "images.jsonl", [&](const json& j) {
    ImageRecord r;
    r.image_id = j.at("image_id").get<std::string>();
    r.specimen_id = j.at("specimen_id").get<std::string>();
    r.width = j.at("pixel_dims").at(0).get<int>();
    r.height = j.at("pixel_dims").at(1).get<int>();
    r.ray_orientation = parse_ray_orientation(j.value("ray_orientation", "vertical"));
    r.file_ref = j.at("file_ref").get<std::string>();
    images_by_specimen[r.specimen_id].push_back(std::move(r));
  });
  for_each_json_line(dir / "specimens.jsonl", [&](const json& j) {
    Specimen s;
    s.specimen_id = j.at("specimen_id").get<std::string>();
    s.species = j.at("species").get<std::string>();
    s.source = j.value("source", "");
    s.curation_status = parse_curation_status(j.at("curation_status").get<std::string>());
    const auto order = j.value("images", std::vector<std::string>{});
    auto imgs = std::move(images_by_specimen[s.specimen_id]);
    images_by_specimen.erase(s.specimen_id);
    // Preserve the specimen's recorded image order.
    std::sort(imgs.begin(), imgs.end(), [&](const ImageRecord& a, const ImageRecord& b) {
      auto pa = std::find(order.begin(), order.end(), a.image_id);
      auto pb = std::find(order.begin(), order.end(), b.image_id);
      return pa < pb;
    });
    const auto status = s.curation_status;
    const auto id = s.specimen_id;
    reg.add(std::move(s), std::move(imgs));
    reg.set_status(id, status);
  });
  if (!images_by_specimen.empty())
    throw Error(ErrorKind::InvalidRecord,
                "image record owned by unknown specimen " + images_by_specimen.begin()->first);
  return reg;
}

std::string Registry::digest() const {
  std::string canonical = catalog_.to_json().dump();
  for (const auto& [id, s] : specimens_) canonical += specimen_json(s).dump();
  for (const auto& [id, r] : images_) canonical += image_json(r).dump();
  return sha256_hex(canonical);
}

Registry ingest(const ClassCatalog& catalog, std::span<const SpecimenDescriptor> records,
                const ImageProbe& probe) {
  Registry reg(catalog);
  for (const auto& rec : records) {
    if (!catalog.class_of_species(rec.species)) throw Error(ErrorKind::UnknownSpecies, rec.species);
    Specimen s;
    s.specimen_id = rec.specimen_id;
    s.species = rec.species;
    s.source = rec.source;
    s.curation_status = CurationStatus::Pending;
    std::vector<ImageRecord> images;
    for (const auto& d : rec.images) {
      const PixelDims dims = probe(d.file_ref);
      images.push_back(ImageRecord{d.image_id, rec.specimen_id, dims.width, dims.height,
                                   d.ray_orientation, d.file_ref});
    }
    reg.add(std::move(s), std::move(images));
  }
  return reg;
}

std::vector<SpecimenDescriptor> load_specimen_records(const std::filesystem::path& path) {
  std::vector<SpecimenDescriptor> out;
  for_each_json_line(path, [&](const json& j) {
    SpecimenDescriptor d;
    d.specimen_id = j.at("specimen_id").get<std::string>();
    d.species = j.at("species").get<std::string>();
    d.source = j.value("source", "");
    for (const auto& img : j.value("images", json::array())) {
      d.images.push_back(ImageDescriptor{
          img.at("image_id").get<std::string>(), img.at("file_ref").get<std::string>(),
          parse_ray_orientation(img.value("ray_orientation", "vertical"))});
    }
    out.push_back(std::move(d));
  });
  return out;
}

Registry set_curation(Registry registry, std::string_view specimen_id, CurationStatus status) {
  registry.set_status(specimen_id, status);
  return registry;
}

// ---------------------------------------------------------------------------
// Splits

std::optional<Split> SplitManifest::split_of(std::string_view specimen_id) const {
  for (int s = 0; s < 3; ++s)
    if (std::find(members[s].begin(), members[s].end(), specimen_id) != members[s].end())
      return static_cast<Split>(s);
  return std::nullopt;
}

json SplitManifest::to_json() const {
  json counts = json::object();
  for (const auto& [label, c] : per_class_counts) counts[label] = {c[0], c[1], c[2]};
  return {{"format_version", 1},
          {"ratios", {ratios[0], ratios[1], ratios[2]}},
          {"seed", seed},
          {"rng", rng},
          {"registry_digest", registry_digest},
          {"assignments",
           {{"train", members[0]}, {"valid", members[1]}, {"test", members[2]}}},
          {"per_class_counts", counts}};
}

SplitManifest SplitManifest::from_json(const json& doc) {
  SplitManifest m;
  try {
    const auto r = doc.at("ratios");
    m.ratios = {r.at(0).get<double>(), r.at(1).get<double>(), r.at(2).get<double>()};
    m.seed = doc.at("seed").get<std::uint64_t>();
    m.rng = doc.value("rng", "mt19937_64");
    m.registry_digest = doc.value("registry_digest", "");
    const auto& a = doc.at("assignments");
    for (int s = 0; s < 3; ++s)
      m.members[s] = a.value(std::string(to_string(static_cast<Split>(s))),
                             std::vector<std::string>{});
    const json counts = doc.value("per_class_counts", json::object());
    for (const auto& [label, c] : counts.items())
      m.per_class_counts[label] = {c.at(0).get<int>(), c.at(1).get<int>(), c.at(2).get<int>()};
  } catch (const json::exception& e) {
    throw Error(ErrorKind::InvalidRecord, std::string("manifest: ") + e.what());
  }
  return m;
}

void SplitManifest::save(const std::filesystem::path& path) const {
  write_text(path, to_json().dump(2) + "\n");
}

SplitManifest SplitManifest::load(const std::filesystem::path& path) {
  return from_json(read_json_file(path));
}

std::string SplitManifest::digest() const { return sha256_hex(to_json().dump()); }

SplitCounts allocate_split_counts(int n, const SplitRatios& ratios) {
  // Index of the largest ratio; earliest wins ties.
  const int major = static_cast<int>(std::max_element(ratios.begin(), ratios.end()) - ratios.begin());
  SplitCounts counts{};
  int assigned = 0;
  for (int s = 0; s < 3; ++s) {
    if (s == major) continue;
    // The epsilon keeps exact halves such as 0.15 * 10 rounding up.
    counts[s] = static_cast<int>(std::floor(ratios[s] * n + 0.5 + 1e-9));
    assigned += counts[s];
  }
  counts[major] = n - assigned;
  for (int s = 0; s < 3; ++s) {
    while (counts[s] < 1) {
      const int donor =
          static_cast<int>(std::max_element(counts.begin(), counts.end()) - counts.begin());
      --counts[donor];
      ++counts[s];
    }
  }
  return counts;
}

SplitManifest stratified_split(const Registry& registry, const SplitRatios& ratios,
                               std::uint64_t seed) {
  const double sum = ratios[0] + ratios[1] + ratios[2];
  if (std::any_of(ratios.begin(), ratios.end(), [](double r) { return !(r > 0.0); }) ||
      std::abs(sum - 1.0) > 1e-9)
    throw Error(ErrorKind::BadRatios, "ratios must be positive and sum to 1");

  auto groups = registry.accepted_by_class();
  for (const auto& label : registry.catalog().labels()) {
    const std::size_t n = groups.contains(label) ? groups.at(label).size() : 0;
    if (n < 3)
      throw Error(ErrorKind::InsufficientSpecimens,
                  label + " has " + std::to_string(n) + " accepted specimens (need 3)");
  }

  SplitManifest m;
  m.ratios = ratios;
  m.seed = seed;
  m.rng = std::string(Rng::kEngineName);
  m.registry_digest = registry.digest();
  // One stream for the whole registry, consumed class by class in label
  // order over id-sorted specimens, so the result depends only on content.
  Rng rng(seed);
  for (auto& [label, ids] : groups) {
    rng.shuffle(std::span<std::string>(ids));
    const SplitCounts counts = allocate_split_counts(static_cast<int>(ids.size()), ratios);
    std::size_t pos = 0;
    for (int s = 0; s < 3; ++s)
      for (int k = 0; k < counts[s]; ++k) m.members[s].push_back(ids[pos++]);
    m.per_class_counts[label] = counts;
  }
  for (auto& v : m.members) std::sort(v.begin(), v.end());
  return m;
}

std::string_view to_string(ViolationKind kind) {
  switch (kind) {
    case ViolationKind::Leakage: return "leakage";
    case ViolationKind::DuplicateAssignment: return "duplicate_assignment";
    case ViolationKind::ExcludedPresent: return "excluded_present";
    case ViolationKind::UnknownSpecimen: return "unknown_specimen";
    case ViolationKind::MissingSpecimen: return "missing_specimen";
    case ViolationKind::EmptyCell: return "empty_cell";
    case ViolationKind::CountMismatch: return "count_mismatch";
  }
  return "unknown";
}

json ValidationReport::to_json() const {
  json list = json::array();
  for (const auto& v : violations)
    list.push_back({{"kind", to_string(v.kind)}, {"subject", v.subject}, {"detail", v.detail}});
  return {{"valid", valid()}, {"violations", list}};
}

ValidationReport validate_manifest(const SplitManifest& manifest, const Registry& registry) {
  ValidationReport report;
  auto add = [&](ViolationKind k, std::string subject, std::string detail) {
    report.violations.push_back({k, std::move(subject), std::move(detail)});
  };

  std::map<std::string, std::set<int>> seen;  // specimen -> splits it appears in
  std::map<std::string, SplitCounts> recount;
  for (int s = 0; s < 3; ++s) {
    std::set<std::string> in_this_split;
    for (const auto& id : manifest.members[s]) {
      if (!in_this_split.insert(id).second)
        add(ViolationKind::DuplicateAssignment, id,
            "listed twice in " + std::string(to_string(static_cast<Split>(s))));
      seen[id].insert(s);
    }
  }
  for (const auto& [id, splits] : seen) {
    auto it = registry.specimens().find(id);
    if (it == registry.specimens().end()) {
      add(ViolationKind::UnknownSpecimen, id, "not in registry");
      continue;
    }
    if (splits.size() > 1) {
      std::string names;
      for (int s : splits) names += (names.empty() ? "" : ",") + std::string(to_string(static_cast<Split>(s)));
      add(ViolationKind::Leakage, id, "assigned to " + names);
    }
    if (it->second.curation_status != CurationStatus::Accepted)
      add(ViolationKind::ExcludedPresent, id,
          "status " + std::string(to_string(it->second.curation_status)));
    for (int s : splits) ++recount[it->second.class_label][s];
  }
  for (const auto& [id, sp] : registry.specimens())
    if (sp.curation_status == CurationStatus::Accepted && !seen.contains(id))
      add(ViolationKind::MissingSpecimen, id, "accepted specimen has no split");

  std::set<std::string> labels;
  for (const auto& l : registry.catalog().labels()) labels.insert(l);
  for (const auto& [l, c] : manifest.per_class_counts) labels.insert(l);
  for (const auto& label : labels) {
    const SplitCounts actual = recount.contains(label) ? recount.at(label) : SplitCounts{};
    for (int s = 0; s < 3; ++s)
      if (actual[s] == 0)
        add(ViolationKind::EmptyCell, label,
            "no specimens in " + std::string(to_string(static_cast<Split>(s))));
    auto it = manifest.per_class_counts.find(label);
    if (it != manifest.per_class_counts.end() && it->second != actual) {
      std::ostringstream os;
      os << "recorded (" << it->second[0] << "," << it->second[1] << "," << it->second[2]
         << ") but assignments give (" << actual[0] << "," << actual[1] << "," << actual[2] << ")";
      add(ViolationKind::CountMismatch, label, os.str());
    }
  }
  return report;
}

}  // namespace woodid
