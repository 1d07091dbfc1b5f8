#pragma once

#include <cstdio>
#include <string>
#include <vector>

#include "woodid/field_records.hpp"
#include "woodid/rng.hpp"

namespace woodid::testing {

inline const std::vector<std::string>& genera() {
  static const std::vector<std::string> g{
      "Albizia",  "Canarium", "Ceiba",   "Celtis",       "Chrysophyllum",
      "Daniellia", "Entandrophragma", "Khaya", "Lophira", "Manilkara",
      "Milicia",  "Nesogordonia", "Terminalia", "Tieghemella", "Triplochiton"};
  return g;
}

/// `n` field records over the 15 genera; the first `n_correct` are
/// correct, the next `n_unresolved` unresolved and the rest incorrect.
/// Devices, sites and timestamps are drawn from `seed`.
inline std::vector<FieldTrialRecord> field_records(int n, int n_correct, int n_unresolved = 0,
                                                   std::uint64_t seed = 1) {
  Rng rng(seed);
  const auto& g = genera();
  std::vector<FieldTrialRecord> out;
  for (int i = 0; i < n; ++i) {
    FieldTrialRecord r;
    char id[32];
    std::snprintf(id, sizeof id, "rec-%05d", i);
    r.record_id = id;
    r.device_id = "dev-" + std::to_string(rng.uniform_index(3));
    r.site_id = "site-" + std::to_string(rng.uniform_index(5));
    char ts[32];
    std::snprintf(ts, sizeof ts, "2026-03-%02dT%02d:%02d:00.000Z", 1 + i % 28, (i / 28) % 24, i % 60);
    r.timestamp = ts;
    const std::size_t top = rng.uniform_index(g.size());
    const std::size_t second = (top + 1 + rng.uniform_index(g.size() - 1)) % g.size();
    std::size_t third = rng.uniform_index(g.size());
    while (third == second || third == top) third = (third + 1) % g.size();
    const double c1 = 0.5 + 0.4 * rng.uniform01();
    const double c2 = (1.0 - c1) * (0.5 + 0.4 * rng.uniform01());
    const double c3 = (1.0 - c1 - c2) * rng.uniform01();
    r.predicted_top3 = {{g[top], c1}, {g[second], c2}, {g[third], c3}};
    if (i < n_correct) {
      r.operator_verdict = Verdict::Correct;
      r.actual_class = g[top];
    } else if (i < n_correct + n_unresolved) {
      r.operator_verdict = Verdict::Unresolved;
    } else {
      r.operator_verdict = Verdict::Incorrect;
      r.actual_class = rng.bernoulli(0.5) ? g[second] : g[(top + 7) % g.size()];
    }
    r.image_digest = "sha256:" + std::string(64, "0123456789abcdef"[i % 16]);
    r.bundle_version = "1-0123456789ab";
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace woodid::testing
