#include "woodid/evaluation.hpp"

#include <algorithm>
#include <cstdio>
#include <set>

#include "woodid/error.hpp"

namespace woodid {

using nlohmann::json;

namespace {

void check_inputs(std::span<const Eigen::VectorXf> probabilities, std::span<const int> labels) {
  if (probabilities.empty()) throw Error(ErrorKind::EmptyInput, "no predictions");
  if (probabilities.size() != labels.size())
    throw Error(ErrorKind::BadDims, "prediction and label counts differ");
  const auto n = probabilities.front().size();
  for (std::size_t i = 0; i < probabilities.size(); ++i) {
    if (probabilities[i].size() != n) throw Error(ErrorKind::BadDims, "ragged probability vectors");
    if (labels[i] < 0 || labels[i] >= n) throw Error(ErrorKind::BadDims, "label out of range");
  }
}

int argmax_lowest(const Eigen::VectorXf& p) {
  int best = 0;
  for (int j = 1; j < p.size(); ++j)
    if (p[j] > p[best]) best = j;
  return best;
}

json opt(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::string pct(const std::optional<double>& v) {
  if (!v) return "n/a";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f%%", *v * 100.0);
  return buf;
}

json tally_json(const Tally& t) {
  return {{"correct", t.correct}, {"incorrect", t.incorrect}, {"unresolved", t.unresolved},
          {"accuracy", opt(t.accuracy())}};
}

Tally tally_from(const json& j) {
  return {j.at("correct").get<std::int64_t>(), j.at("incorrect").get<std::int64_t>(),
          j.at("unresolved").get<std::int64_t>()};
}

json tally_map_json(const std::map<std::string, Tally>& m) {
  json out = json::object();
  for (const auto& [k, t] : m) out[k] = tally_json(t);
  return out;
}

std::map<std::string, Tally> tally_map_from(const json& j) {
  std::map<std::string, Tally> out;
  for (const auto& [k, v] : j.items()) out[k] = tally_from(v);
  return out;
}

void tally_rows(std::string& out, const char* title, const std::map<std::string, Tally>& m) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "\n%-24s %8s %9s %10s %9s\n", title, "correct", "incorrect", "unresolved",
                "accuracy");
  out += buf;
  for (const auto& [k, t] : m) {
    std::snprintf(buf, sizeof buf, "%-24s %8lld %9lld %10lld %9s\n", k.c_str(),
                  static_cast<long long>(t.correct), static_cast<long long>(t.incorrect),
                  static_cast<long long>(t.unresolved), pct(t.accuracy()).c_str());
    out += buf;
  }
}

}  // namespace

double top_k_accuracy(std::span<const Eigen::VectorXf> probabilities, std::span<const int> labels, int k) {
  if (k < 1) throw Error(ErrorKind::BadConfig, "k must be >= 1");
  check_inputs(probabilities, labels);
  std::int64_t hits = 0;
  for (std::size_t i = 0; i < probabilities.size(); ++i) {
    const auto& p = probabilities[i];
    const int y = labels[i];
    int rank = 0;
    for (int j = 0; j < p.size(); ++j)
      if (p[j] > p[y] || (p[j] == p[y] && j < y)) ++rank;
    hits += rank < k;
  }
  return static_cast<double>(hits) / static_cast<double>(probabilities.size());
}

std::int64_t ConfusionMatrix::total() const {
  std::int64_t t = 0;
  for (std::size_t i = 0; i < counts.size(); ++i) t += row_total(i);
  return t;
}

std::int64_t ConfusionMatrix::row_total(std::size_t i) const {
  std::int64_t t = 0;
  for (auto c : counts.at(i)) t += c;
  return t;
}

json ConfusionMatrix::to_json() const { return {{"labels", labels}, {"counts", counts}}; }

ConfusionMatrix ConfusionMatrix::from_json(const json& doc) {
  return {doc.at("labels").get<std::vector<std::string>>(),
          doc.at("counts").get<std::vector<std::vector<std::int64_t>>>()};
}

ConfusionMatrix confusion(std::span<const Eigen::VectorXf> probabilities, std::span<const int> labels,
                          std::vector<std::string> class_labels) {
  check_inputs(probabilities, labels);
  const auto n = static_cast<std::size_t>(probabilities.front().size());
  if (class_labels.empty())
    for (std::size_t i = 0; i < n; ++i) class_labels.push_back(std::to_string(i));
  if (class_labels.size() != n) throw Error(ErrorKind::BadDims, "class list does not match vector length");
  ConfusionMatrix m{std::move(class_labels), std::vector<std::vector<std::int64_t>>(n, std::vector<std::int64_t>(n, 0))};
  for (std::size_t i = 0; i < probabilities.size(); ++i)
    ++m.counts[static_cast<std::size_t>(labels[i])][static_cast<std::size_t>(argmax_lowest(probabilities[i]))];
  return m;
}

std::optional<double> ClassAccuracy::accuracy() const {
  if (evaluated == 0) return std::nullopt;
  return static_cast<double>(correct) / static_cast<double>(evaluated);
}

LabReport lab_report(std::span<const Eigen::VectorXf> probabilities, std::span<const int> labels,
                     std::vector<std::string> class_labels) {
  LabReport r;
  r.confusion = confusion(probabilities, labels, std::move(class_labels));
  r.labels = r.confusion.labels;
  r.n_items = static_cast<std::int64_t>(probabilities.size());
  r.top1 = top_k_accuracy(probabilities, labels, 1);
  r.top3 = top_k_accuracy(probabilities, labels, std::min<int>(3, static_cast<int>(r.labels.size())));
  for (std::size_t i = 0; i < r.labels.size(); ++i)
    r.per_class.push_back({r.labels[i], r.confusion.row_total(i), r.confusion.counts[i][i]});
  return r;
}

json LabReport::to_json() const {
  json classes = json::array();
  for (const auto& c : per_class)
    classes.push_back({{"label", c.label}, {"evaluated", c.evaluated}, {"correct", c.correct},
                       {"accuracy", opt(c.accuracy())}});
  return {{"report", "lab"},
          {"granularity", "image"},
          {"labels", labels},
          {"n_items", n_items},
          {"top1", top1},
          {"top3", top3},
          {"per_class", classes},
          {"confusion", confusion.to_json()},
          {"manifest_digest", manifest_digest},
          {"bundle_version", bundle_version}};
}

LabReport LabReport::from_json(const json& doc) {
  LabReport r;
  try {
    if (doc.value("report", "") != "lab") throw Error(ErrorKind::InvalidRecord, "not a lab report");
    r.labels = doc.at("labels").get<std::vector<std::string>>();
    r.n_items = doc.at("n_items").get<std::int64_t>();
    r.top1 = doc.at("top1").get<double>();
    r.top3 = doc.value("top3", 0.0);
    for (const auto& c : doc.at("per_class"))
      r.per_class.push_back({c.at("label").get<std::string>(), c.at("evaluated").get<std::int64_t>(),
                             c.at("correct").get<std::int64_t>()});
    if (doc.contains("confusion")) r.confusion = ConfusionMatrix::from_json(doc["confusion"]);
    r.manifest_digest = doc.value("manifest_digest", "");
    r.bundle_version = doc.value("bundle_version", "");
  } catch (const json::exception& e) {
    throw Error(ErrorKind::InvalidRecord, std::string("lab report: ") + e.what());
  }
  return r;
}

std::string LabReport::table() const {
  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "Laboratory evaluation (image level): %lld images\ntop-1 %s   top-3 %s\n",
                static_cast<long long>(n_items), pct(top1).c_str(), pct(top3).c_str());
  out += buf;
  std::snprintf(buf, sizeof buf, "\n%-24s %9s %8s %9s\n", "class", "evaluated", "correct", "accuracy");
  out += buf;
  for (const auto& c : per_class) {
    std::snprintf(buf, sizeof buf, "%-24s %9lld %8lld %9s\n", c.label.c_str(), static_cast<long long>(c.evaluated),
                  static_cast<long long>(c.correct), pct(c.accuracy()).c_str());
    out += buf;
  }
  // Off-diagonal cells only; the full matrix is in the structured output.
  bool header = false;
  for (std::size_t i = 0; i < confusion.counts.size(); ++i) {
    for (std::size_t j = 0; j < confusion.counts[i].size(); ++j) {
      if (i == j || confusion.counts[i][j] == 0) continue;
      if (!header) {
        out += "\nconfusions (true -> predicted)\n";
        header = true;
      }
      std::snprintf(buf, sizeof buf, "  %s -> %s: %lld of %lld\n", labels[i].c_str(), labels[j].c_str(),
                    static_cast<long long>(confusion.counts[i][j]), static_cast<long long>(confusion.row_total(i)));
      out += buf;
    }
  }
  return out;
}

SimilarityTable SimilarityTable::defaults() {
  return {{{"Meliaceae", {"Khaya", "Entandrophragma"}},
           {"Malvaceae", {"Ceiba", "Triplochiton"}},
           {"Sapotaceae", {"Tieghemella", "Chrysophyllum", "Manilkara"}}}};
}

std::optional<std::string> SimilarityTable::group_of(std::string_view label) const {
  for (const auto& g : groups)
    if (std::find(g.classes.begin(), g.classes.end(), label) != g.classes.end()) return g.name;
  return std::nullopt;
}

bool SimilarityTable::similar(std::string_view a, std::string_view b) const {
  const auto ga = group_of(a);
  return ga && ga == group_of(b);
}

json SimilarityTable::to_json() const {
  json out = json::object();
  for (const auto& g : groups) out[g.name] = g.classes;
  return out;
}

SimilarityTable SimilarityTable::from_json(const json& doc) {
  SimilarityTable t;
  std::set<std::string> seen;
  try {
    for (const auto& [name, classes] : doc.items()) {
      Group g{name, classes.get<std::vector<std::string>>()};
      for (const auto& c : g.classes)
        if (!seen.insert(c).second) throw Error(ErrorKind::BadConfig, "class '" + c + "' is in two groups");
      t.groups.push_back(std::move(g));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::BadConfig, std::string("similarity table: ") + e.what());
  }
  return t;
}

std::optional<double> Tally::accuracy() const {
  if (resolved() == 0) return std::nullopt;
  return static_cast<double>(correct) / static_cast<double>(resolved());
}

void Tally::add(Verdict v) {
  switch (v) {
    case Verdict::Correct: ++correct; break;
    case Verdict::Incorrect: ++incorrect; break;
    case Verdict::Unresolved: ++unresolved; break;
  }
}

FieldReport field_summary(std::span<const FieldTrialRecord> records, const SimilarityTable& similarity,
                          std::vector<std::string> class_labels) {
  struct Latest {
    const FieldTrialRecord* record;
    std::string serialised;
  };
  std::map<std::string, Latest> latest;
  FieldReport r;
  for (const auto& rec : records) {
    auto [it, inserted] = latest.try_emplace(rec.record_id, Latest{&rec, rec.to_json().dump()});
    if (inserted) continue;
    ++r.superseded;
    const FieldTrialRecord& cur = *it->second.record;
    std::string s = rec.to_json().dump();
    const bool newer = rec.revision != cur.revision ? rec.revision > cur.revision
                       : rec.timestamp != cur.timestamp ? rec.timestamp > cur.timestamp
                                                        : s > it->second.serialised;
    if (newer) it->second = Latest{&rec, std::move(s)};
  }

  std::set<std::string> seen;
  for (const auto& [id, l] : latest) {
    const FieldTrialRecord& rec = *l.record;
    ++r.n_records;
    r.overall.add(rec.operator_verdict);
    const std::string cls = rec.true_class().value_or(rec.top1());
    r.per_class[cls].add(rec.operator_verdict);
    seen.insert(cls);
    r.per_site[rec.site_id].add(rec.operator_verdict);
    r.per_device[rec.device_id].add(rec.operator_verdict);
    if (rec.operator_verdict == Verdict::Incorrect) {
      ++r.confusion_pairs[{*rec.actual_class, rec.top1()}];
      if (similarity.similar(*rec.actual_class, rec.top1()))
        ++r.similar_confusions;
      else
        ++r.other_confusions;
    }
  }
  if (class_labels.empty()) {
    r.labels.assign(seen.begin(), seen.end());
  } else {
    r.labels = std::move(class_labels);
    for (const auto& l : r.labels) r.per_class.try_emplace(l);
  }
  return r;
}

json FieldReport::to_json() const {
  json pairs = json::array();
  for (const auto& [k, n] : confusion_pairs) pairs.push_back({{"actual", k.first}, {"predicted", k.second}, {"count", n}});
  return {{"report", "field"},
          {"granularity", "specimen"},
          {"labels", labels},
          {"n_records", n_records},
          {"superseded", superseded},
          {"accuracy_defined", accuracy_defined()},
          {"overall", tally_json(overall)},
          {"per_class", tally_map_json(per_class)},
          {"per_site", tally_map_json(per_site)},
          {"per_device", tally_map_json(per_device)},
          {"error_taxonomy", {{"similar", similar_confusions}, {"other", other_confusions}}},
          {"confusion_pairs", pairs}};
}

FieldReport FieldReport::from_json(const json& doc) {
  FieldReport r;
  try {
    if (doc.value("report", "") != "field") throw Error(ErrorKind::InvalidRecord, "not a field report");
    r.labels = doc.at("labels").get<std::vector<std::string>>();
    r.n_records = doc.at("n_records").get<std::int64_t>();
    r.superseded = doc.value("superseded", std::int64_t{0});
    r.overall = tally_from(doc.at("overall"));
    r.per_class = tally_map_from(doc.at("per_class"));
    r.per_site = tally_map_from(doc.at("per_site"));
    r.per_device = tally_map_from(doc.at("per_device"));
    r.similar_confusions = doc.at("error_taxonomy").at("similar").get<std::int64_t>();
    r.other_confusions = doc.at("error_taxonomy").at("other").get<std::int64_t>();
    for (const auto& p : doc.value("confusion_pairs", json::array()))
      r.confusion_pairs[{p.at("actual").get<std::string>(), p.at("predicted").get<std::string>()}] =
          p.at("count").get<std::int64_t>();
  } catch (const json::exception& e) {
    throw Error(ErrorKind::InvalidRecord, std::string("field report: ") + e.what());
  }
  return r;
}

std::string FieldReport::table() const {
  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "Field evaluation (specimen level): %lld records, %lld correct, %lld incorrect, %lld unresolved\n"
                "accuracy %s%s\n",
                static_cast<long long>(n_records), static_cast<long long>(overall.correct),
                static_cast<long long>(overall.incorrect), static_cast<long long>(overall.unresolved),
                pct(overall.accuracy()).c_str(), accuracy_defined() ? "" : " (no resolved records)");
  out += buf;
  if (superseded > 0) {
    std::snprintf(buf, sizeof buf, "%lld superseded revisions ignored\n", static_cast<long long>(superseded));
    out += buf;
  }
  tally_rows(out, "class", per_class);
  tally_rows(out, "site", per_site);
  tally_rows(out, "device", per_device);
  std::snprintf(buf, sizeof buf, "\nerrors between similar classes: %lld, other errors: %lld\n",
                static_cast<long long>(similar_confusions), static_cast<long long>(other_confusions));
  out += buf;
  return out;
}

GapReport lab_field_gap(const LabReport& lab, const FieldReport& field) {
  const std::set<std::string> a(lab.labels.begin(), lab.labels.end());
  const std::set<std::string> b(field.labels.begin(), field.labels.end());
  if (a != b) {
    std::string diff;
    for (const auto& l : a)
      if (!b.contains(l)) diff += " lab-only:" + l;
    for (const auto& l : b)
      if (!a.contains(l)) diff += " field-only:" + l;
    throw Error(ErrorKind::ClassListMismatch, "class lists differ:" + diff);
  }
  GapReport g;
  g.lab_overall = lab.top1;
  g.field_overall = field.overall.accuracy();
  if (g.field_overall) g.overall_gap = g.lab_overall - *g.field_overall;
  for (const auto& c : lab.per_class) {
    ClassGap cg{c.label, c.accuracy(), std::nullopt, std::nullopt};
    if (auto it = field.per_class.find(c.label); it != field.per_class.end()) cg.field = it->second.accuracy();
    if (cg.lab && cg.field) cg.gap = *cg.lab - *cg.field;
    g.per_class.push_back(std::move(cg));
  }
  std::stable_sort(g.per_class.begin(), g.per_class.end(), [](const ClassGap& x, const ClassGap& y) {
    if (x.gap.has_value() != y.gap.has_value()) return x.gap.has_value();
    return x.gap && *x.gap > *y.gap;
  });
  return g;
}

json GapReport::to_json() const {
  json classes = json::array();
  for (const auto& c : per_class)
    classes.push_back({{"label", c.label}, {"lab", opt(c.lab)}, {"field", opt(c.field)}, {"gap", opt(c.gap)}});
  return {{"report", "gap"},
          {"lab_granularity", "image"},
          {"field_granularity", "specimen"},
          {"lab_overall", lab_overall},
          {"field_overall", opt(field_overall)},
          {"overall_gap", opt(overall_gap)},
          {"per_class", classes}};
}

std::string GapReport::table() const {
  std::string out;
  char buf[256];
  char overall[32] = "n/a";
  if (overall_gap) std::snprintf(overall, sizeof overall, "%.2f", *overall_gap);
  std::snprintf(buf, sizeof buf, "lab (image level) %s   field (specimen level) %s   gap %s\n",
                pct(lab_overall).c_str(), pct(field_overall).c_str(), overall);
  out += buf;
  std::snprintf(buf, sizeof buf, "\n%-24s %9s %9s %9s\n", "class (by degradation)", "lab", "field", "gap");
  out += buf;
  for (const auto& c : per_class) {
    char gap[32] = "n/a";
    if (c.gap) std::snprintf(gap, sizeof gap, "%+.3f", *c.gap);
    std::snprintf(buf, sizeof buf, "%-24s %9s %9s %9s\n", c.label.c_str(), pct(c.lab).c_str(),
                  pct(c.field).c_str(), gap);
    out += buf;
  }
  return out;
}

}  // namespace woodid
