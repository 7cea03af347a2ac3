#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "fixtures.hpp"
#include "solodiff/error.hpp"
#include "solodiff/trainer.hpp"

using namespace solodiff;

namespace {

DenoiserConfig small_net() {
  DenoiserConfig c;
  c.depth = 2;
  c.width = 8;
  c.embed_dim = 8;
  return c;
}

TrainTask short_task(ModelRole role, long iterations) {
  TrainTask t = TrainTask::for_role(role);
  t.iterations = iterations;
  return t;
}

double median_loss(const std::vector<LossRecord>& trace, std::size_t from, std::size_t to) {
  std::vector<double> v;
  for (std::size_t i = from; i < to; ++i) v.push_back(trace[i].loss);
  std::nth_element(v.begin(), v.begin() + v.size() / 2, v.end());
  return v[v.size() / 2];
}

}  // namespace

TEST_CASE("role defaults") {
  CHECK(default_loss_mode(ModelRole::predictor) == PredictionTarget::epsilon);
  CHECK(default_loss_mode(ModelRole::projector) == PredictionTarget::x0);
  CHECK(default_loss_mode(ModelRole::interpolator) == PredictionTarget::x0);
  CHECK(conditioning_frames(ModelRole::interpolator) == 2);
  const DenoiserConfig p = config_for_role(small_net(), ModelRole::predictor, 3);
  CHECK(p.in_channels == 6);
  CHECK(p.uses_frame_gap);
  const DenoiserConfig i = config_for_role(small_net(), ModelRole::interpolator, 1);
  CHECK(i.in_channels == 3);
  CHECK(i.out_channels == 1);
  CHECK_FALSE(i.uses_frame_gap);
  CHECK(TrainTask::for_role(ModelRole::predictor).iterations == 200000);
  CHECK(TrainTask::for_role(ModelRole::projector).iterations == 100000);
  CHECK(TrainTask::for_role(ModelRole::image).k_range == 3);
  CHECK(model_role_from_string("interpolator") == ModelRole::interpolator);
  CHECK_THROWS_AS(model_role_from_string("critic"), ParameterError);
}

TEST_CASE("crop windows stay inside the source and cover every offset") {
  RandomSource rng(3);
  const Shape s{3, 20, 30};
  std::map<int, int> ys;
  for (int i = 0; i < 2000; ++i) {
    const CropWindow w = sample_crop_window(s, CropPolicy{0.75}, 6, rng);
    CHECK(w.height == 15);
    CHECK(w.width == 23);
    CHECK(w.y >= 0);
    CHECK(w.y + w.height <= 20);
    CHECK(w.x + w.width <= 30);
    ++ys[w.y];
  }
  CHECK(ys.size() == 6);
  CHECK_THROWS_AS(sample_crop_window(s, CropPolicy{0.2}, 6, rng), ParameterError);
  CHECK_THROWS_AS(sample_crop_window(s, CropPolicy{1.5}, 6, rng), ParameterError);

  const Tensor img = testing::landscape(20, 30);
  const auto [crop, w] = sample_crop(img, CropPolicy{0.5}, rng);
  CHECK(crop.at(2, 3, 4) == img.at(2, w.y + 3, w.x + 4));
}

TEST_CASE("frame-gap curriculum") {
  CurriculumState s{0, 3, 300, false};
  CHECK(s.support() == std::vector<int>{1});
  RandomSource rng(1);
  for (int i = 0; i < 200; ++i) CHECK(curriculum_k(s, rng) == 1);
  s.iteration = 100;
  CHECK(s.support() == std::vector<int>{-1, 1});
  s.iteration = 299;
  CHECK(s.magnitude_cap() == 2);
  s.iteration = 300;
  CHECK(s.support() == std::vector<int>{-3, -2, -1, 1, 2, 3});
  std::map<int, int> counts;
  for (int i = 0; i < 6000; ++i) ++counts[curriculum_k(s, rng)];
  CHECK(counts.size() == 6);
  for (auto [k, n] : counts) CHECK(std::abs(n - 1000) < 150);
  s.only_pm1 = true;
  CHECK(s.support() == std::vector<int>{-1, 1});
  CurriculumState none{0, 3, 0, false};
  CHECK(none.magnitude_cap() == 3);
}

TEST_CASE("learning-rate schedule and warmup default") {
  LearningRateSchedule lr;
  CHECK(lr.at(0) == 2e-4);
  CHECK(lr.at(99999) == 2e-4);
  CHECK(lr.at(100000) == 2e-5);
  TrainTask t;
  t.iterations = 1000;
  CHECK(t.warmup_iterations() == 200);
  t.curriculum_warmup = 7;
  CHECK(t.warmup_iterations() == 7);
}

TEST_CASE("Adam's first step moves every parameter by about lr") {
  Adam opt(3);
  std::vector<float> p{1.0f, -2.0f, 0.5f};
  const std::vector<float> g{0.3f, -4.0f, 1e-3f};
  opt.step(p, g, 0.01);
  CHECK(p[0] == doctest::Approx(0.99).epsilon(1e-5));
  CHECK(p[1] == doctest::Approx(-1.99).epsilon(1e-5));
  CHECK(p[2] == doctest::Approx(0.49).epsilon(1e-4));
  CHECK(opt.steps() == 1);
  std::vector<float> wrong(2);
  CHECK_THROWS_AS(opt.step(wrong, g, 0.01), ParameterError);
}

TEST_CASE("gradient clipping") {
  std::vector<float> g{3.0f, 4.0f};
  CHECK(clip_gradient_norm(g, 1.0) == doctest::Approx(5.0));
  CHECK(g[0] == doctest::Approx(0.6));
  CHECK(g[1] == doctest::Approx(0.8));
  std::vector<float> small{0.1f};
  clip_gradient_norm(small, 1.0);
  CHECK(small[0] == 0.1f);
}

TEST_CASE("single-image training lowers the loss and is reproducible") {
  const Tensor img = testing::landscape(16, 16);
  const auto sched = build_schedule(ScheduleKind::linear, 50);
  TrainTask task = short_task(ModelRole::image, 300);
  task.lr.initial = 2e-3;
  RandomSource a(4), b(4);
  const TrainResult ra = train_image_ddpm(img, task, sched, small_net(), a);
  const TrainResult rb = train_image_ddpm(img, task, sched, small_net(), b);
  REQUIRE(ra.trace.size() == 300);
  CHECK(median_loss(ra.trace, 270, 300) < median_loss(ra.trace, 0, 30));
  CHECK(ra.model.iterations == 300);
  CHECK(ra.model.mode == PredictionTarget::x0);
  for (std::size_t i = 0; i < ra.trace.size(); ++i) CHECK(ra.trace[i].loss == rb.trace[i].loss);
  CHECK(std::equal(ra.model.net.parameters().begin(), ra.model.net.parameters().end(),
                   rb.model.net.parameters().begin()));
}

TEST_CASE("video roles train on the right frames") {
  const VideoClip clip = testing::moving_square(6, 16, 6, 2, 4);
  const auto sched = build_schedule(ScheduleKind::cosine, 50);
  RandomSource rng(1);

  TrainTask pred = short_task(ModelRole::predictor, 40);
  pred.curriculum_warmup = 0;
  const TrainResult p = train_model(clip, pred, sched, small_net(), rng);
  CHECK(p.model.role == ModelRole::predictor);
  CHECK(p.model.net.config().in_channels == 6);
  for (const LossRecord& r : p.trace) {
    CHECK(r.k != 0);
    CHECK(std::abs(r.k) <= 3);
  }

  pred.k_only_pm1 = true;
  for (const LossRecord& r : train_model(clip, pred, sched, small_net(), rng).trace) {
    CHECK(std::abs(r.k) == 1);
  }

  const TrainResult i = train_model(clip, short_task(ModelRole::interpolator, 10), sched,
                                    small_net(), rng);
  CHECK(i.model.net.config().in_channels == 9);
  const TrainResult j = train_model(clip, short_task(ModelRole::projector, 10), sched,
                                    small_net(), rng);
  CHECK(j.model.net.config().in_channels == 3);

  const VideoClip short_clip = testing::moving_square(3, 16, 6, 2, 4);
  CHECK_THROWS_AS(train_model(short_clip, pred, sched, small_net(), rng), ParameterError);
}

TEST_CASE("a constant image is learned almost perfectly within 500 iterations") {
  const Tensor flat(3, 12, 12, 0.3f);
  RandomSource rng(2);
  const TrainResult r = train_image_ddpm(flat, short_task(ModelRole::image, 500),
                                         build_schedule(ScheduleKind::linear, 50), small_net(), rng);
  // Adam at lr 2e-4 moves a parameter at most ~0.1 in 500 steps, so "almost
  // perfectly" means the loss lost nearly all of its starting value
  const double first = median_loss(r.trace, 0, 50), last = median_loss(r.trace, 450, 500);
  MESSAGE("median loss first/last 50: " << first << " " << last);
  CHECK(last < 0.05 * first);
  CHECK(last < 0.02);
}

TEST_CASE("every role's median loss drops from the first to the last tenth") {
  const VideoClip clip = testing::moving_square(8, 16, 6, 2, 4);
  const auto sched = build_schedule(ScheduleKind::cosine, 50);
  for (ModelRole role :
       {ModelRole::image, ModelRole::projector, ModelRole::predictor, ModelRole::interpolator}) {
    CAPTURE(to_string(role));
    TrainTask task = short_task(role, 400);
    task.lr.initial = 1e-3;
    RandomSource rng(11);
    const TrainResult r = train_model(clip, task, sched, small_net(), rng);
    CHECK(median_loss(r.trace, 360, 400) < median_loss(r.trace, 0, 40));
  }
}

TEST_CASE("divergence is reported with its iteration") {
  Tensor img = testing::landscape(16, 16);
  img.at(0, 3, 3) = NAN;
  RandomSource rng(1);
  CHECK_THROWS_AS(train_image_ddpm(img, short_task(ModelRole::image, 5),
                                   build_schedule(ScheduleKind::linear, 50), small_net(), rng),
                  TrainingError);
}

TEST_CASE("denoise callback wires conditioning and gap") {
  const VideoClip clip = testing::moving_square(5, 16, 6, 2, 4);
  RandomSource rng(2);
  const TrainResult p = train_model(clip, short_task(ModelRole::predictor, 2),
                                    build_schedule(ScheduleKind::cosine, 50), small_net(), rng);
  const DenoiseFn fn = make_denoise_fn(p.model, {clip[0]}, 1);
  const Tensor out = fn(clip[1], 5);
  const Tensor cond[] = {clip[0]};
  CHECK(out == denoise_forward(p.model.net, clip[1], cond, 5, 1));
}
