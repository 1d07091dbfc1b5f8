#include <doctest.h>

#include <algorithm>

#include "../fixtures.hpp"
#include "../oracles.hpp"
#include "../support.hpp"
#include "woodid/evaluation.hpp"

using namespace woodid;
using woodid::testing::field_records;
using woodid::testing::genera;

namespace {

Eigen::VectorXf vec(std::initializer_list<float> v) {
  Eigen::VectorXf out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (float x : v) out[i++] = x;
  return out;
}

Eigen::VectorXf one_hot(int n, int k) {
  Eigen::VectorXf v = Eigen::VectorXf::Zero(n);
  v[k] = 1.0f;
  return v;
}

template <typename Fn>
ErrorKind kind_of(Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("no error thrown");
  return ErrorKind::IoError;
}

FieldTrialRecord record(const std::string& id, const std::string& top1, Verdict v,
                        std::optional<std::string> actual = std::nullopt) {
  FieldTrialRecord r;
  r.record_id = id;
  r.device_id = "dev-a";
  r.site_id = "site-a";
  r.timestamp = "2026-05-01T10:00:00.000Z";
  r.predicted_top3 = {{top1, 0.8}, {top1 == "Khaya" ? "Milicia" : "Khaya", 0.15}, {"Lophira", 0.05}};
  r.operator_verdict = v;
  r.actual_class = std::move(actual);
  return r;
}

LabReport lab_with(std::vector<std::string> labels, double top1, std::vector<ClassAccuracy> per_class = {}) {
  LabReport r;
  r.labels = std::move(labels);
  r.top1 = top1;
  r.per_class = std::move(per_class);
  return r;
}

}  // namespace

TEST_CASE("top-k accuracy on hand-counted examples") {
  const std::vector<Eigen::VectorXf> p{vec({0.7f, 0.2f, 0.1f}), vec({0.1f, 0.6f, 0.3f}), vec({0.5f, 0.3f, 0.2f})};
  const std::vector<int> y{0, 1, 2};
  CHECK(top_k_accuracy(p, y, 1) == doctest::Approx(2.0 / 3.0));
  CHECK(top_k_accuracy(p, y, 2) == doctest::Approx(2.0 / 3.0));
  CHECK(top_k_accuracy(p, y, 3) == 1.0);
  CHECK(top_k_accuracy(p, y, 10) == 1.0);

  std::vector<Eigen::VectorXf> hot;
  std::vector<int> labels;
  for (int i = 0; i < 15; ++i) {
    hot.push_back(one_hot(15, i));
    labels.push_back(i);
  }
  for (int k : {1, 3, 15}) CHECK(top_k_accuracy(hot, labels, k) == 1.0);
}

TEST_CASE("ties at the cut-off are broken by class index") {
  const std::vector<Eigen::VectorXf> p{vec({0.25f, 0.25f, 0.25f, 0.25f})};
  CHECK(top_k_accuracy(p, std::vector<int>{0}, 1) == 1.0);
  CHECK(top_k_accuracy(p, std::vector<int>{1}, 1) == 0.0);
  CHECK(top_k_accuracy(p, std::vector<int>{2}, 3) == 1.0);
  CHECK(top_k_accuracy(p, std::vector<int>{3}, 3) == 0.0);
  const ConfusionMatrix m = confusion(p, std::vector<int>{3}, {"a", "b", "c", "d"});
  CHECK(m.counts[3][0] == 1);
}

TEST_CASE("metric errors") {
  const std::vector<Eigen::VectorXf> none;
  CHECK(kind_of([&] { top_k_accuracy(none, std::vector<int>{}, 1); }) == ErrorKind::EmptyInput);
  CHECK(kind_of([&] { confusion(none, std::vector<int>{}, {"a"}); }) == ErrorKind::EmptyInput);
  const std::vector<Eigen::VectorXf> ragged{vec({0.5f, 0.5f}), vec({1.0f, 0.0f, 0.0f})};
  CHECK(kind_of([&] { top_k_accuracy(ragged, std::vector<int>{0, 0}, 1); }) == ErrorKind::BadDims);
  const std::vector<Eigen::VectorXf> p{vec({0.5f, 0.5f})};
  CHECK(kind_of([&] { top_k_accuracy(p, std::vector<int>{2}, 1); }) == ErrorKind::BadDims);
  CHECK(kind_of([&] { top_k_accuracy(p, std::vector<int>{0}, 0); }) == ErrorKind::BadConfig);
  CHECK(kind_of([&] { confusion(p, std::vector<int>{0}, {"a", "b", "c"}); }) == ErrorKind::BadDims);
}

TEST_CASE("confusion counts Ceiba predicted as Triplochiton") {
  const std::vector<std::string> labels{"Ceiba", "Triplochiton", "Khaya"};
  std::vector<Eigen::VectorXf> p;
  std::vector<int> y;
  for (int i = 0; i < 100; ++i) {
    p.push_back(i < 3 ? vec({0.3f, 0.6f, 0.1f}) : vec({0.9f, 0.05f, 0.05f}));
    y.push_back(0);
  }
  const ConfusionMatrix m = confusion(p, y, labels);
  CHECK(m.counts[0][1] == 3);
  CHECK(m.counts[0][0] == 97);
  CHECK(m.total() == 100);
  CHECK(m.row_total(0) == 100);
  CHECK(m.row_total(1) == 0);
  CHECK(ConfusionMatrix::from_json(m.to_json()).counts == m.counts);

  const LabReport r = lab_report(p, y, labels);
  CHECK(r.n_items == 100);
  CHECK(r.top1 == doctest::Approx(0.97));
  CHECK(r.per_class[0].accuracy().value() == doctest::Approx(0.97));
  CHECK_FALSE(r.per_class[1].accuracy().has_value());
  CHECK(r.to_json()["granularity"] == "image");
  CHECK(LabReport::from_json(r.to_json()).to_json() == r.to_json());
  CHECK(r.table().find("Ceiba") != std::string::npos);
}

TEST_CASE("perfect predictions give a diagonal matrix") {
  std::vector<Eigen::VectorXf> p;
  std::vector<int> y;
  for (int i = 0; i < 20; ++i) {
    p.push_back(one_hot(4, i % 4));
    y.push_back(i % 4);
  }
  const ConfusionMatrix m = confusion(p, y, {"a", "b", "c", "d"});
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) CHECK(m.counts[i][j] == (i == j ? 5 : 0));
}

TEST_CASE("metrics agree with brute force on random sets") {
  Rng rng(2024);
  for (int trial = 0; trial < 100; ++trial) {
    const auto s = oracle::random_set(rng, 15, 120);
    double prev = 0.0;
    for (int k = 1; k <= s.n_classes; ++k) {
      const double got = top_k_accuracy(s.probabilities, s.labels, k);
      REQUIRE(got == oracle::top_k(s.probabilities, s.labels, k));
      REQUIRE(got >= prev);
      prev = got;
    }
    REQUIRE(prev == 1.0);
    std::vector<std::string> labels;
    for (int c = 0; c < s.n_classes; ++c) labels.push_back("c" + std::to_string(c));
    const ConfusionMatrix m = confusion(s.probabilities, s.labels, labels);
    REQUIRE(m.counts == oracle::confusion(s.probabilities, s.labels, s.n_classes));
    REQUIRE(m.total() == static_cast<std::int64_t>(s.labels.size()));
  }
}

TEST_CASE("field summary over 488 specimens") {
  const auto records = field_records(488, 351);
  const FieldReport r = field_summary(records);
  CHECK(r.n_records == 488);
  CHECK(r.overall.correct == 351);
  CHECK(r.overall.incorrect == 137);
  REQUIRE(r.overall.accuracy().has_value());
  CHECK(*r.overall.accuracy() == doctest::Approx(351.0 / 488.0));
  CHECK(std::round(*r.overall.accuracy() * 1000.0) / 10.0 == 71.9);
  CHECK(std::round(*r.overall.accuracy() * 100.0) == 72.0);
  CHECK(r.similar_confusions + r.other_confusions == 137);
  std::int64_t pairs = 0;
  for (const auto& [k, n] : r.confusion_pairs) pairs += n;
  CHECK(pairs == 137);
  std::int64_t by_class = 0;
  for (const auto& [k, t] : r.per_class) by_class += t.resolved();
  CHECK(by_class == 488);
  const auto doc = r.to_json();
  CHECK(doc["granularity"] == "specimen");
  CHECK(FieldReport::from_json(doc).to_json() == doc);
  CHECK(r.table().find("specimen") != std::string::npos);
}

TEST_CASE("empty field report flags undefined accuracy") {
  const FieldReport r = field_summary(std::span<const FieldTrialRecord>{});
  CHECK(r.n_records == 0);
  CHECK_FALSE(r.accuracy_defined());
  CHECK(r.to_json()["accuracy_defined"] == false);
  CHECK(r.to_json()["overall"]["accuracy"].is_null());
  CHECK(r.table().find("n/a") != std::string::npos);
}

TEST_CASE("one device gives one per-device row equal to overall") {
  auto records = field_records(40, 30, 4);
  for (auto& r : records) r.device_id = "tablet-1";
  const FieldReport rep = field_summary(records);
  REQUIRE(rep.per_device.size() == 1);
  const Tally& t = rep.per_device.at("tablet-1");
  CHECK(t.correct == rep.overall.correct);
  CHECK(t.incorrect == rep.overall.incorrect);
  CHECK(t.unresolved == rep.overall.unresolved);
  CHECK(rep.overall.unresolved == 4);
  CHECK(*rep.overall.accuracy() == doctest::Approx(30.0 / 36.0));
}

TEST_CASE("field summary ignores record order") {
  auto records = field_records(200, 140, 10, 9);
  const auto base = field_summary(records).to_json();
  Rng rng(5);
  for (int i = 0; i < 5; ++i) {
    rng.shuffle(std::span<FieldTrialRecord>(records));
    CHECK(field_summary(records).to_json() == base);
  }
}

TEST_CASE("later revisions supersede earlier ones") {
  FieldTrialRecord first = record("r1", "Khaya", Verdict::Unresolved);
  FieldTrialRecord second = record("r1", "Khaya", Verdict::Incorrect, "Entandrophragma");
  second.revision = 2;
  const FieldTrialRecord other = record("r2", "Ceiba", Verdict::Incorrect, "Triplochiton");
  const FieldTrialRecord unrelated = record("r3", "Milicia", Verdict::Incorrect, "Lophira");
  for (const auto& order : {std::vector{first, second, other, unrelated}, std::vector{unrelated, second, other, first}}) {
    const FieldReport r = field_summary(order);
    CHECK(r.n_records == 3);
    CHECK(r.superseded == 1);
    CHECK(r.overall.incorrect == 3);
    CHECK(r.overall.unresolved == 0);
    CHECK(r.similar_confusions == 2);
    CHECK(r.other_confusions == 1);
    CHECK(r.confusion_pairs.at({"Entandrophragma", "Khaya"}) == 1);
    CHECK(r.per_class.at("Entandrophragma").incorrect == 1);
  }
}

TEST_CASE("similarity table") {
  const SimilarityTable t = SimilarityTable::defaults();
  CHECK(t.similar("Khaya", "Entandrophragma"));
  CHECK(t.similar("Tieghemella", "Manilkara"));
  CHECK_FALSE(t.similar("Khaya", "Ceiba"));
  CHECK(t.group_of("Ceiba") == "Malvaceae");
  CHECK_FALSE(t.group_of("Lophira").has_value());
  CHECK(SimilarityTable::from_json(t.to_json()).to_json() == t.to_json());
  nlohmann::json bad = t.to_json();
  bad["Dup"] = {"Khaya"};
  CHECK_THROWS_AS(SimilarityTable::from_json(bad), Error);

  // A custom table reclassifies the same confusion.
  SimilarityTable custom;
  custom.groups.push_back({"All", {"Milicia", "Lophira"}});
  const std::vector<FieldTrialRecord> recs{record("x", "Milicia", Verdict::Incorrect, "Lophira")};
  CHECK(field_summary(recs, custom).similar_confusions == 1);
  CHECK(field_summary(recs).other_confusions == 1);
}

TEST_CASE("lab-field gap") {
  const std::vector<std::string> labels{"Ceiba", "Khaya"};
  const LabReport lab = lab_with(labels, 0.97, {{"Ceiba", 100, 97}, {"Khaya", 100, 97}});
  std::vector<FieldTrialRecord> recs;
  for (int i = 0; i < 100; ++i) {
    const bool ok = i < 72;
    recs.push_back(record("r" + std::to_string(i), i % 2 ? "Ceiba" : "Khaya",
                          ok ? Verdict::Correct : Verdict::Incorrect,
                          ok ? std::nullopt : std::optional<std::string>(i % 2 ? "Khaya" : "Ceiba")));
  }
  const FieldReport field = field_summary(recs, SimilarityTable::defaults(), labels);
  const GapReport g = lab_field_gap(lab, field);
  REQUIRE(g.overall_gap.has_value());
  CHECK(*g.overall_gap == doctest::Approx(0.25).epsilon(1e-12));
  REQUIRE(g.per_class.size() == 2);
  CHECK(g.per_class[0].gap >= g.per_class[1].gap);
  CHECK(g.to_json()["lab_granularity"] == "image");
  CHECK(g.table().find("0.25") != std::string::npos);

  // Identical accuracies on both sides give zero gaps.
  const LabReport same = lab_with(labels, 0.72, {{"Ceiba", 50, 36}, {"Khaya", 50, 36}});
  const GapReport z = lab_field_gap(same, field);
  CHECK(*z.overall_gap == doctest::Approx(0.0));
  for (const auto& c : z.per_class) CHECK(c.gap.value() == doctest::Approx(0.0).epsilon(1e-12));

  const LabReport extra = lab_with({"Ceiba", "Khaya", "Lophira"}, 0.9);
  CHECK(kind_of([&] { lab_field_gap(extra, field); }) == ErrorKind::ClassListMismatch);
}

TEST_CASE("field record validation") {
  FieldTrialRecord r = record("a", "Khaya", Verdict::Incorrect);
  CHECK(kind_of([&] { r.validate(); }) == ErrorKind::MissingActualClass);
  r.actual_class = "Khaya";
  CHECK(kind_of([&] { r.validate(); }) == ErrorKind::MissingActualClass);
  r.actual_class = "Milicia";
  r.validate();
  CHECK(r.true_class() == "Milicia");

  FieldTrialRecord c = record("b", "Khaya", Verdict::Correct);
  CHECK(c.true_class() == "Khaya");
  c.predicted_top3[1].confidence = 0.9;
  CHECK(kind_of([&] { c.validate(); }) == ErrorKind::InvalidRecord);

  CHECK_FALSE(record("u", "Khaya", Verdict::Unresolved).true_class().has_value());
  CHECK(parse_verdict("incorrect") == Verdict::Incorrect);
  CHECK_THROWS_AS(parse_verdict("maybe"), Error);
}

TEST_CASE("field records file round-trips losslessly") {
  woodid::testing::TempDir dir("records");
  auto records = field_records(60, 40, 5, 3);
  records[0].notes = "bark damaged; \"re-cut\" needed";
  records[1].revision = 3;
  records[2].image_digest.clear();
  write_field_records(dir / "records.jsonl", records);
  const auto back = read_field_records(dir / "records.jsonl");
  CHECK(back == records);
  CHECK(format_field_records(back) == format_field_records(records));

  const std::string text = format_field_records(records);
  CHECK(text.rfind(std::string(kFieldRecordsHeader) + "\n", 0) == 0);
  CHECK(parse_field_records("\n" + text + "\n\n") == records);
  CHECK(parse_field_records(std::string(kFieldRecordsHeader) + "\n").empty());
  CHECK(kind_of([] { parse_field_records("# woodid field-records v2\n"); }) == ErrorKind::VersionMismatch);

  nlohmann::json future = records[0].to_json();
  future["schema_version"] = 2;
  CHECK(kind_of([&] { FieldTrialRecord::from_json(future); }) == ErrorKind::VersionMismatch);
  CHECK(kind_of([] { parse_field_records("{not json\n"); }) == ErrorKind::InvalidRecord);
}
