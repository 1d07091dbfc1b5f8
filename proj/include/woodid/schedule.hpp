#pragma once

#include <string>

#include "json.hpp"

namespace woodid {

struct StageConfig {
  std::string name;
  int epochs = 0;
  double alpha_max = 0.0;
  bool frozen_backbone = true;
};

/// Two-stage transfer-learning recipe.
struct TrainingSchedule {
  StageConfig stage1{"stage1", 6, 2e-2, true};
  StageConfig stage2{"stage2", 8, 1e-5, false};
  /// alpha_min = alpha_max / div_factor.
  double div_factor = 10.0;
  /// End-of-cycle lr = alpha_max / final_div_factor; equal to div_factor
  /// for a symmetric return to alpha_min.
  double final_div_factor = 10.0;
  double beta_min = 0.85;
  double beta_max = 0.95;
  /// Adam second-moment decay (not annealed).
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int batch_size = 16;

  /// Throws BadConfig when 0 < alpha_min < alpha_max or
  /// 0 < beta_min < beta_max < 1 fails.
  void validate() const;

  nlohmann::json to_json() const;
  static TrainingSchedule from_json(const nlohmann::json& doc);
};

/// Endpoints of one annealing cycle.
struct CycleParams {
  double alpha_min = 2e-3;
  double alpha_max = 2e-2;
  double alpha_final = 2e-3;
  double beta_min = 0.85;
  double beta_max = 0.95;

  static CycleParams for_stage(const TrainingSchedule& schedule, const StageConfig& stage);
};

struct CycleValues {
  double learning_rate;
  double momentum;
};

/// Half-cosine interpolation: start + (end - start) * (1 - cos(pi p)) / 2.
double cosine_anneal(double start, double end, double progress);

/// One-cycle lr/momentum at `step` of `total_steps`. The first half raises
/// lr alpha_min -> alpha_max while momentum falls beta_max -> beta_min; the
/// second half mirrors both. Throws BadStep unless 0 <= step <= total_steps
/// and total_steps > 0.
CycleValues one_cycle(long step, long total_steps, const CycleParams& params);

}  // namespace woodid
