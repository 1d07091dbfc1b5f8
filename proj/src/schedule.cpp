#include "woodid/schedule.hpp"

#include <cmath>
#include <numbers>

#include "woodid/error.hpp"

namespace woodid {

using nlohmann::json;

void TrainingSchedule::validate() const {
  for (const auto* s : {&stage1, &stage2}) {
    const double alpha_min = s->alpha_max / div_factor;
    if (s->epochs < 0 || !(alpha_min > 0.0) || !(alpha_min < s->alpha_max))
      throw Error(ErrorKind::BadConfig, s->name + ": need 0 < alpha_min < alpha_max");
  }
  if (!(final_div_factor > 0.0))
    throw Error(ErrorKind::BadConfig, "final_div_factor must be positive");
  if (!(beta_min > 0.0 && beta_min < beta_max && beta_max < 1.0))
    throw Error(ErrorKind::BadConfig, "need 0 < beta_min < beta_max < 1");
  if (!(beta2 > 0.0 && beta2 < 1.0) || !(adam_eps > 0.0))
    throw Error(ErrorKind::BadConfig, "bad Adam constants");
  if (batch_size < 2) throw Error(ErrorKind::BadConfig, "batch_size must be >= 2");
}

namespace {

json stage_json(const StageConfig& s) {
  return {{"epochs", s.epochs}, {"alpha_max", s.alpha_max}, {"frozen_backbone", s.frozen_backbone}};
}

StageConfig stage_from(const json& j, StageConfig s) {
  s.epochs = j.value("epochs", s.epochs);
  s.alpha_max = j.value("alpha_max", s.alpha_max);
  s.frozen_backbone = j.value("frozen_backbone", s.frozen_backbone);
  return s;
}

}  // namespace

json TrainingSchedule::to_json() const {
  return {{"stage1", stage_json(stage1)},
          {"stage2", stage_json(stage2)},
          {"div_factor", div_factor},
          {"final_div_factor", final_div_factor},
          {"beta_min", beta_min},
          {"beta_max", beta_max},
          {"beta2", beta2},
          {"adam_eps", adam_eps},
          {"optimizer", "adam"},
          {"loss", "cross_entropy"},
          {"batch_size", batch_size}};
}

TrainingSchedule TrainingSchedule::from_json(const json& doc) {
  TrainingSchedule t;
  try {
    if (doc.contains("stage1")) t.stage1 = stage_from(doc["stage1"], t.stage1);
    if (doc.contains("stage2")) t.stage2 = stage_from(doc["stage2"], t.stage2);
    t.div_factor = doc.value("div_factor", t.div_factor);
    t.final_div_factor = doc.value("final_div_factor", t.div_factor);
    t.beta_min = doc.value("beta_min", t.beta_min);
    t.beta_max = doc.value("beta_max", t.beta_max);
    t.beta2 = doc.value("beta2", t.beta2);
    t.adam_eps = doc.value("adam_eps", t.adam_eps);
    t.batch_size = doc.value("batch_size", t.batch_size);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::BadConfig, std::string("schedule: ") + e.what());
  }
  t.validate();
  return t;
}

CycleParams CycleParams::for_stage(const TrainingSchedule& schedule, const StageConfig& stage) {
  CycleParams p;
  p.alpha_max = stage.alpha_max;
  p.alpha_min = stage.alpha_max / schedule.div_factor;
  p.alpha_final = stage.alpha_max / schedule.final_div_factor;
  p.beta_min = schedule.beta_min;
  p.beta_max = schedule.beta_max;
  return p;
}

double cosine_anneal(double start, double end, double progress) {
  return start + (end - start) * (1.0 - std::cos(std::numbers::pi * progress)) / 2.0;
}

CycleValues one_cycle(long step, long total_steps, const CycleParams& p) {
  if (total_steps <= 0 || step < 0 || step > total_steps)
    throw Error(ErrorKind::BadStep,
                "step " + std::to_string(step) + " outside [0, " + std::to_string(total_steps) + "]");
  const double mid = static_cast<double>(total_steps) / 2.0;
  const double s = static_cast<double>(step);
  if (s <= mid) {
    const double progress = s / mid;
    return {cosine_anneal(p.alpha_min, p.alpha_max, progress),
            cosine_anneal(p.beta_max, p.beta_min, progress)};
  }
  const double progress = (s - mid) / (static_cast<double>(total_steps) - mid);
  return {cosine_anneal(p.alpha_max, p.alpha_final, progress),
          cosine_anneal(p.beta_min, p.beta_max, progress)};
}

}  // namespace woodid
