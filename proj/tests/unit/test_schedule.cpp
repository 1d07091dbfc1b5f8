#include "doctest.h"

#include "woodid/error.hpp"
#include "woodid/schedule.hpp"

using namespace woodid;

TEST_CASE("stage-one cycle endpoints and midpoint") {
  const TrainingSchedule sched;
  const CycleParams p = CycleParams::for_stage(sched, sched.stage1);
  const long total = 54;
  auto close = [](double a, double b) { return std::abs(a - b) <= 1e-12; };
  CHECK(close(one_cycle(0, total, p).learning_rate, 2e-3));
  CHECK(close(one_cycle(0, total, p).momentum, 0.95));
  CHECK(close(one_cycle(total / 2, total, p).learning_rate, 2e-2));
  CHECK(close(one_cycle(total / 2, total, p).momentum, 0.85));
  CHECK(close(one_cycle(total, total, p).learning_rate, 2e-3));
  CHECK(close(one_cycle(total, total, p).momentum, 0.95));
}

TEST_CASE("stage-two peak and floor") {
  const TrainingSchedule sched;
  const CycleParams p = CycleParams::for_stage(sched, sched.stage2);
  CHECK(one_cycle(0, 100, p).learning_rate == doctest::Approx(1e-6).epsilon(1e-12));
  CHECK(one_cycle(50, 100, p).learning_rate == doctest::Approx(1e-5).epsilon(1e-12));
}

TEST_CASE("half-cosine interpolation") {
  CHECK(cosine_anneal(1.0, 3.0, 0.0) == 1.0);
  CHECK(cosine_anneal(1.0, 3.0, 1.0) == doctest::Approx(3.0));
  CHECK(cosine_anneal(1.0, 3.0, 0.5) == doctest::Approx(2.0));
}

TEST_CASE("lr rises then falls; momentum mirrors it") {
  const CycleParams p{1e-3, 1e-2, 1e-3, 0.8, 0.9};
  const long total = 37;
  for (long s = 1; s <= total; ++s) {
    const auto prev = one_cycle(s - 1, total, p);
    const auto cur = one_cycle(s, total, p);
    if (s <= total / 2) {
      CHECK(cur.learning_rate >= prev.learning_rate);
      CHECK(cur.momentum <= prev.momentum);
    } else if (s > total / 2 + 1) {
      CHECK(cur.learning_rate <= prev.learning_rate);
      CHECK(cur.momentum >= prev.momentum);
    }
  }
}

TEST_CASE("bad steps and configs are rejected") {
  const CycleParams p;
  auto kind = [](auto&& fn) {
    try {
      fn();
    } catch (const Error& e) {
      return e.kind();
    }
    return ErrorKind::IoError;
  };
  CHECK(kind([&] { one_cycle(-1, 10, p); }) == ErrorKind::BadStep);
  CHECK(kind([&] { one_cycle(11, 10, p); }) == ErrorKind::BadStep);
  CHECK(kind([&] { one_cycle(0, 0, p); }) == ErrorKind::BadStep);
  TrainingSchedule s;
  s.beta_min = 0.96;
  CHECK(kind([&] { s.validate(); }) == ErrorKind::BadConfig);
  s = TrainingSchedule{};
  s.div_factor = 0.5;
  CHECK(kind([&] { s.validate(); }) == ErrorKind::BadConfig);
}

TEST_CASE("schedule json round-trip keeps defaults") {
  const TrainingSchedule s;
  const TrainingSchedule back = TrainingSchedule::from_json(s.to_json());
  CHECK(back.stage1.epochs == 6);
  CHECK(back.stage2.epochs == 8);
  CHECK(back.stage1.alpha_max == 2e-2);
  CHECK(back.stage2.alpha_max == 1e-5);
  CHECK(back.batch_size == 16);
  CHECK(back.stage1.frozen_backbone);
  CHECK_FALSE(back.stage2.frozen_backbone);
}
