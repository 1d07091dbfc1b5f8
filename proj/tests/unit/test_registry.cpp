#include "doctest.h"

#include "../support.hpp"
#include "woodid/registry.hpp"

using namespace woodid;

namespace {

PixelDims fixed_dims(const std::string&) { return {2048, 768}; }

ClassCatalog catalog_of(int n_classes) {
  std::vector<TaxonClass> classes;
  for (int k = 0; k < n_classes; ++k)
    classes.push_back({"Genus" + std::to_string(k), {"Genus" + std::to_string(k) + " sp."}, ""});
  return ClassCatalog(classes);
}

Registry registry_with(const std::vector<int>& per_class) {
  const ClassCatalog catalog = catalog_of(static_cast<int>(per_class.size()));
  std::vector<SpecimenDescriptor> records;
  for (std::size_t k = 0; k < per_class.size(); ++k)
    for (int i = 0; i < per_class[k]; ++i) {
      const std::string id = "G" + std::to_string(k) + "-" + std::to_string(i);
      records.push_back({id, catalog.at(k).species_members[0], "xylarium",
                         {{id + "-a", id + "-a.png"}, {id + "-b", id + "-b.png"}}});
    }
  Registry r = ingest(catalog, records, fixed_dims);
  std::vector<std::string> ids;
  for (const auto& [id, s] : r.specimens()) ids.push_back(id);
  for (const auto& id : ids) r.set_status(id, CurationStatus::Accepted);
  return r;
}

}  // namespace

TEST_CASE("catalog rejects duplicate labels and shared species") {
  CHECK_THROWS_AS(ClassCatalog({{"A", {"a"}, ""}, {"A", {"b"}, ""}}), Error);
  CHECK_THROWS_AS(ClassCatalog({{"A", {"a"}, ""}, {"B", {"a"}, ""}}), Error);
  const ClassCatalog c({{"Khaya", {"Khaya ivorensis", "Khaya grandifoliola"}, ""}});
  CHECK(c.class_of_species("Khaya grandifoliola") == 0u);
  CHECK_FALSE(c.class_of_species("Ceiba pentandra").has_value());
}

TEST_CASE("ingest maps species to classes and rejects bad records") {
  const ClassCatalog catalog({{"Khaya", {"Khaya ivorensis"}, ""}, {"Ceiba", {"Ceiba pentandra"}, ""}});
  std::vector<SpecimenDescriptor> recs{{"S1", "Khaya ivorensis", "lab", {{"i1", "i1.png"}}}};
  const Registry r = ingest(catalog, recs, fixed_dims);
  CHECK(r.specimen("S1").class_label == "Khaya");
  CHECK(r.specimen("S1").curation_status == CurationStatus::Pending);
  CHECK(r.image("i1").width == 2048);

  auto expect_kind = [](auto&& fn, ErrorKind kind) {
    try {
      fn();
      FAIL("no error");
    } catch (const Error& e) {
      CHECK(e.kind() == kind);
    }
  };
  std::vector<SpecimenDescriptor> unknown{{"S2", "Quercus robur", "lab", {{"i2", "i2.png"}}}};
  expect_kind([&] { ingest(catalog, unknown, fixed_dims); }, ErrorKind::UnknownSpecies);
  std::vector<SpecimenDescriptor> dup{recs[0], recs[0]};
  expect_kind([&] { ingest(catalog, dup, fixed_dims); }, ErrorKind::DuplicateId);
  ImageProbe broken = [](const std::string& f) -> PixelDims {
    throw Error(ErrorKind::UnreadableImage, f);
  };
  expect_kind([&] { ingest(catalog, recs, broken); }, ErrorKind::UnreadableImage);
  expect_kind([&] { set_curation(r, "nope", CurationStatus::Accepted); }, ErrorKind::UnknownSpecimen);
}

TEST_CASE("split count allocation") {
  const SplitRatios r{0.70, 0.15, 0.15};
  CHECK(allocate_split_counts(31, r) == SplitCounts{21, 5, 5});
  CHECK(allocate_split_counts(7, r) == SplitCounts{5, 1, 1});
  CHECK(allocate_split_counts(3, r) == SplitCounts{1, 1, 1});
  CHECK(allocate_split_counts(20, r) == SplitCounts{14, 3, 3});
  for (int n = 3; n <= 200; ++n) {
    const SplitCounts c = allocate_split_counts(n, r);
    CHECK(c[0] + c[1] + c[2] == n);
    // The one-specimen floor may pull a cell further than 1 from ratio * n.
    const bool floored = r[1] * n < 0.5 || r[2] * n < 0.5;
    for (int s = 0; s < 3; ++s) {
      CHECK(c[s] >= 1);
      if (!floored) CHECK(std::abs(c[s] - r[s] * n) <= 1.0 + 1e-9);
    }
  }
}

TEST_CASE("stratified split is specimen exclusive and covers accepted specimens") {
  Registry reg = registry_with({31, 7, 3, 12});
  reg.set_status("G0-4", CurationStatus::ExcludedAtypical);
  const SplitManifest m = stratified_split(reg, {0.7, 0.15, 0.15}, 11);
  CHECK(validate_manifest(m, reg).valid());
  CHECK(m.per_class_counts.at("Genus0") == SplitCounts{20, 5, 5});  // 30 accepted: 4.5 rounds up
  CHECK(m.per_class_counts.at("Genus1") == SplitCounts{5, 1, 1});
  CHECK(m.per_class_counts.at("Genus2") == SplitCounts{1, 1, 1});
  CHECK_FALSE(m.split_of("G0-4").has_value());
  std::size_t total = 0;
  for (const auto& v : m.members) total += v.size();
  CHECK(total == 31 + 7 + 3 + 12 - 1);

  // Same seed, same manifest; the digest covers content only.
  CHECK(stratified_split(reg, {0.7, 0.15, 0.15}, 11).digest() == m.digest());
  CHECK(stratified_split(reg, {0.7, 0.15, 0.15}, 12).digest() != m.digest());
}

TEST_CASE("split preconditions") {
  try {
    stratified_split(registry_with({5, 2}));
    FAIL("expected InsufficientSpecimens");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::InsufficientSpecimens);
  }
  try {
    stratified_split(registry_with({5, 5}), {0.5, 0.2, 0.2});
    FAIL("expected BadRatios");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::BadRatios);
  }
}

TEST_CASE("hand-edited leakage is reported with the specimen id") {
  const Registry reg = registry_with({10, 10});
  SplitManifest m = stratified_split(reg);
  const std::string moved = m.members[0].front();
  m.members[2].push_back(moved);
  const ValidationReport report = validate_manifest(m, reg);
  REQUIRE_FALSE(report.valid());
  bool found = false;
  for (const auto& v : report.violations) found |= v.kind == ViolationKind::Leakage && v.subject == moved;
  CHECK(found);
}

TEST_CASE("registry and manifest persist losslessly") {
  testing::TempDir dir("registry");
  Registry reg = registry_with({4, 6});
  reg.set_status("G1-2", CurationStatus::ExcludedMisidentified);
  reg.save(dir.path());
  const Registry back = Registry::load(dir.path());
  CHECK(back.digest() == reg.digest());
  CHECK(back.specimen("G1-2").curation_status == CurationStatus::ExcludedMisidentified);

  const SplitManifest m = stratified_split(reg, {0.7, 0.15, 0.15}, 3);
  m.save(dir / "manifest.json");
  const SplitManifest m2 = SplitManifest::load(dir / "manifest.json");
  CHECK(m2.digest() == m.digest());
  CHECK(m2.members == m.members);
  CHECK(m2.registry_digest == reg.digest());
}
