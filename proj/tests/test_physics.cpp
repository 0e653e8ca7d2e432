#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "fptt/dataset.hpp"
#include "fptt/errors.hpp"
#include "fptt/physics.hpp"

using namespace fptt;
using namespace fptt::physics;

namespace {

std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("fptt_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

WorldState lone_ball(double friction) {
  WorldState s;
  s.bodies.push_back(Body::static_segment({-50, -1000}, {50, -1000}, Color::Gray));
  s.bodies.push_back(Body::dynamic_circle({0.0, 0.0}, 0.5, Color::Green, {}, 0.0, friction));
  return s;
}

// Room with a few random balls and segments.
WorldState random_world(Rng& rng) {
  WorldState s;
  s.bodies.push_back(Body::static_segment({0, 0.25}, {8, 0.25}, Color::Gray, rng.uniform()));
  s.bodies.push_back(Body::static_segment({0.25, 0}, {0.25, 8}, Color::Gray, rng.uniform()));
  s.bodies.push_back(Body::static_segment({7.75, 0}, {7.75, 8}, Color::Gray, rng.uniform()));
  s.bodies.push_back(Body::static_segment({1, rng.uniform(2, 4)}, {4, rng.uniform(1, 3)}, Color::Blue));
  s.bodies.push_back(Body::static_circle({rng.uniform(4, 7), rng.uniform(1, 3)}, 0.5, Color::Gray, rng.uniform()));
  const int n = static_cast<int>(rng.uniform_int(1, 4));
  for (int i = 0; i < n; ++i) {
    const double r = rng.uniform(0.2, 0.6);
    s.bodies.push_back(Body::dynamic_circle({1.0 + 1.6 * i, rng.uniform(4.5, 7.5)}, r, i == 0 ? Color::Green : Color::Red,
                                            {rng.uniform(-4, 4), rng.uniform(-4, 4)}, rng.uniform(), rng.uniform(0, 0.99)));
  }
  return s;
}

}  // namespace

TEST(Simulator, FreeFallMatchesClosedForm) {
  const double dt = 0.01, g = -10.0;
  for (double friction : {0.0, 0.3, 0.9}) {
    auto s = lone_ball(friction);
    const auto segment_before = s.bodies[0];
    for (int n = 0; n < 100; ++n) s = simulate_step(s, dt);
    const double c = 1.0 - friction * dt;
    const int n = 100;
    double v_expected, sum_v;
    if (friction == 0.0) {
      v_expected = g * dt * n;
      sum_v = g * dt * n * (n + 1) / 2.0;
    } else {
      v_expected = g * dt * c * (1.0 - std::pow(c, n)) / (1.0 - c);
      sum_v = g * dt * c / (1.0 - c) * (n - c * (1.0 - std::pow(c, n)) / (1.0 - c));
    }
    const auto& ball = s.bodies[1];
    EXPECT_NEAR(ball.velocity.y, v_expected, 1e-9) << "friction " << friction;
    EXPECT_NEAR(ball.position.y, sum_v * dt, 1e-9) << "friction " << friction;
    EXPECT_EQ(ball.velocity.x, 0.0);
    if (friction == 0.0) EXPECT_NEAR(ball.velocity.y, -10.0, 1e-9);
    EXPECT_EQ(s.bodies[0].a.y, segment_before.a.y);
    EXPECT_EQ(s.bodies[0].b.x, segment_before.b.x);
  }
}

TEST(Simulator, StaticBodiesNeverMove) {
  Rng rng(3);
  auto s = random_world(rng);
  const auto initial = s.bodies;
  for (int i = 0; i < 500; ++i) s = simulate_step(s, 0.01);
  for (std::size_t i = 0; i < s.bodies.size(); ++i) {
    if (!initial[i].is_static()) continue;
    EXPECT_EQ(s.bodies[i].position.x, initial[i].position.x);
    EXPECT_EQ(s.bodies[i].position.y, initial[i].position.y);
    EXPECT_EQ(s.bodies[i].velocity.x, 0.0);
    EXPECT_EQ(s.bodies[i].velocity.y, 0.0);
  }
}

TEST(Simulator, ElasticHeadOnCollisionExchangesVelocities) {
  WorldState s;
  s.gravity = {0.0, 0.0};
  s.bodies.push_back(Body::dynamic_circle({0.0, 0.0}, 0.5, Color::Green, {1.0, 0.0}, 1.0, 0.0));
  s.bodies.push_back(Body::dynamic_circle({1.5, 0.0}, 0.5, Color::Blue, {-1.0, 0.0}, 1.0, 0.0));
  bool collided = false;
  for (int i = 0; i < 100; ++i) {
    s = simulate_step(s, 0.01);
    collided = collided || s.last_step_contacts > 0;
  }
  ASSERT_TRUE(collided);
  EXPECT_NEAR(s.bodies[0].velocity.x, -1.0, 1e-12);
  EXPECT_NEAR(s.bodies[1].velocity.x, 1.0, 1e-12);
  EXPECT_NEAR(s.bodies[0].velocity.y, 0.0, 1e-12);
}

TEST(Simulator, EnergyNonIncreasingBetweenCollisionFreeSteps) {
  Rng rng(11);
  int checked = 0;
  for (int world = 0; world < 20; ++world) {
    auto s = random_world(rng);
    for (int step = 0; step < 500; ++step) {
      const double before = mechanical_energy(s);
      s = simulate_step(s, 0.01);
      if (s.last_step_contacts > 0) continue;
      const double after = mechanical_energy(s);
      ASSERT_LE(after, before + 1e-12 * std::max(1.0, std::abs(before))) << "world " << world << " step " << step;
      ++checked;
    }
  }
  EXPECT_GT(checked, 1000);
}

TEST(Simulator, SegmentPenetrationStaysWithinTolerance) {
  Rng rng(5);
  double worst = 0.0;
  for (int world = 0; world < 30; ++world) {
    auto s = random_world(rng);
    for (int step = 0; step < 300; ++step) {
      s = simulate_step(s, 0.01);
      worst = std::max(worst, max_segment_penetration(s));
    }
  }
  EXPECT_LE(worst, kResolutionTolerance);
}

TEST(Simulator, RejectsNonPositiveStep) {
  WorldState s;
  EXPECT_THROW(simulate_step(s, 0.0), InputError);
}

TEST(Labels, TouchingIsSuccessApartIsFailure) {
  WorldState s;
  s.bodies.push_back(Body::static_circle({0, 0}, 1.0, Color::Green));
  s.bodies.push_back(Body::static_circle({2, 0}, 1.0, Color::Blue));
  EXPECT_EQ(label_task({s}, 0.08), Label::Success);
  s.bodies[1].position.x = 5.0;
  std::vector<WorldState> traj{s};
  for (int i = 0; i < 50; ++i) traj.push_back(simulate_step(traj.back(), 0.01));
  EXPECT_EQ(label_task(traj, 0.08), Label::Failure);
}

TEST(Labels, BoundaryIsInclusive) {
  WorldState s;
  s.bodies.push_back(Body::static_circle({0, 0}, 0.5, Color::Green));
  s.bodies.push_back(Body::static_circle({1.25, 0}, 0.75, Color::Blue));
  EXPECT_EQ(label_task({s}, 0.0), Label::Success);
  s.bodies[1].position.x = 1.25 + 0.25;
  EXPECT_EQ(label_task({s}, 0.25), Label::Success);
  EXPECT_EQ(label_task({s}, 0.2499), Label::Failure);
}

TEST(Labels, UsesFinalStateOnly) {
  WorldState touching;
  touching.bodies.push_back(Body::static_circle({0, 0}, 0.5, Color::Green));
  touching.bodies.push_back(Body::static_circle({1, 0}, 0.5, Color::Blue));
  WorldState apart = touching;
  apart.bodies[1].position.x = 3.0;
  EXPECT_EQ(label_task({touching, apart}, 0.08), Label::Failure);
  EXPECT_EQ(label_task({apart, touching}, 0.08), Label::Success);
}

TEST(Labels, MissingGoalBodyIsTemplateError) {
  WorldState s;
  s.bodies.push_back(Body::static_circle({0, 0}, 0.5, Color::Green));
  EXPECT_THROW(label_task({s}, 0.08), TemplateError);
  EXPECT_THROW(label_task({}, 0.08), InputError);
}

TEST(Render, EmptyWorldIsBackground) {
  WorldState s;
  auto img = render_frame(s, 16, 12, View{});
  ASSERT_EQ(img.shape(), (Shape{3, 12, 16}));
  for (float v : img.data()) EXPECT_EQ(v, 1.0f);
}

TEST(Render, CircleCentreHasBodyColourAndDynamicDrawnOverStatic) {
  WorldState s;
  s.bodies.push_back(Body::dynamic_circle({4.25, 4.25}, 0.6, Color::Green));
  s.bodies.push_back(Body::static_circle({4.25, 4.25}, 1.5, Color::Blue));
  auto img = render_frame(s, 16, 16, View{});
  // Pixel (row 7, col 8) has centre (4.25, 4.25) in world units.
  const auto green = color_rgb(Color::Green);
  for (std::size_t ch = 0; ch < 3; ++ch) EXPECT_EQ(img[ch * 256 + 7 * 16 + 8], green[ch]);
  const auto blue = color_rgb(Color::Blue);
  for (std::size_t ch = 0; ch < 3; ++ch) EXPECT_EQ(img[ch * 256 + 7 * 16 + 10], blue[ch]);
  for (float v : img.data()) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
  EXPECT_THROW(render_frame(s, 0, 16, View{}), InputError);
}

TEST(Tasks, DeterministicPerTemplateAndSeed) {
  for (const auto& t : builtin_templates()) {
    auto a = make_video(t, 42, 16, 16);
    auto b = make_video(t, 42, 16, 16);
    EXPECT_EQ(a.pixels, b.pixels) << t.name;
    EXPECT_EQ(a.label, b.label);
    EXPECT_EQ(a.frames, b.frames);
    const auto ra = run_task(t, 42), rb = run_task(t, 42);
    ASSERT_EQ(ra.trajectory.size(), rb.trajectory.size());
    for (std::size_t k = 0; k < ra.trajectory.size(); ++k)
      for (std::size_t i = 0; i < ra.trajectory[k].bodies.size(); ++i) {
        EXPECT_EQ(ra.trajectory[k].bodies[i].position.x, rb.trajectory[k].bodies[i].position.x);
        EXPECT_EQ(ra.trajectory[k].bodies[i].position.y, rb.trajectory[k].bodies[i].position.y);
      }
  }
}

TEST(Tasks, FrameCountsWithinBoundsAndBothLabelsOccur) {
  auto templates = builtin_templates();
  templates.push_back(adjacency_template());
  for (const auto& t : templates) {
    int successes = 0;
    for (std::uint64_t seed = 0; seed < 60; ++seed) {
      const auto run = run_task(t, seed);
      EXPECT_GE(run.frame_steps.size(), 7u);
      EXPECT_LE(run.frame_steps.size(), 12u);
      EXPECT_EQ(run.trajectory.size(), (run.frame_steps.size() - 1) * 10 + 1);
      successes += run.label == Label::Success;
    }
    EXPECT_GT(successes, 0) << t.name;
    EXPECT_LT(successes, 60) << t.name;
  }
}

TEST(Tasks, LabelIndependentOfRendering) {
  const auto t = find_template("ramp");
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    EXPECT_EQ(make_video(t, seed, 16, 16).label, make_video(t, seed, 64, 48).label);
    EXPECT_EQ(make_video(t, seed, 16, 16).label, run_task(t, seed).label);
  }
}

TEST(Tasks, AdjacencyLabelVisibleInFirstState) {
  const auto t = adjacency_template();
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    const auto run = run_task(t, seed);
    const auto first = label_task({run.trajectory.front()}, contact_epsilon(t.view));
    EXPECT_EQ(first, run.label) << seed;
  }
  EXPECT_THROW(find_template("nope"), TemplateError);
}

TEST(Fpv1, RoundTripIsBitwise) {
  const auto dir = scratch_dir("fpv1");
  const auto video = make_video(find_template("drop"), 9, 16, 16);
  write_fpv1(video, dir / "a.fpv");
  const auto back = read_fpv1(dir / "a.fpv");
  EXPECT_EQ(back.frames, video.frames);
  EXPECT_EQ(back.width, 16u);
  EXPECT_EQ(back.height, 16u);
  EXPECT_EQ(back.label, video.label);
  EXPECT_EQ(back.pixels, video.pixels);
}

TEST(Fpv1, CorruptionIsFormatError) {
  const auto dir = scratch_dir("fpv1_bad");
  VideoSample v;
  v.frames = 7;
  v.width = 16;
  v.height = 16;
  v.pixels.assign(7 * 16 * 16 * 3, 200);
  write_fpv1(v, dir / "ok.fpv");
  EXPECT_EQ(std::filesystem::file_size(dir / "ok.fpv"), 17u + 7 * 16 * 16 * 3);

  auto bytes = [&] {
    std::ifstream in(dir / "ok.fpv", std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  }();
  auto write_raw = [&](const std::string& name, const std::string& data) {
    std::ofstream out(dir / name, std::ios::binary);
    out << data;
  };
  std::string magic = bytes;
  magic.replace(0, 4, "XXXX");
  write_raw("magic.fpv", magic);
  write_raw("short.fpv", bytes.substr(0, bytes.size() - 1));
  write_raw("long.fpv", bytes + "x");
  write_raw("header.fpv", bytes.substr(0, 10));
  EXPECT_THROW(read_fpv1(dir / "magic.fpv"), FormatError);
  EXPECT_THROW(read_fpv1(dir / "short.fpv"), FormatError);
  EXPECT_THROW(read_fpv1(dir / "long.fpv"), FormatError);
  EXPECT_THROW(read_fpv1(dir / "header.fpv"), FormatError);
  EXPECT_THROW(read_fpv1(dir / "missing.fpv"), FileError);
}

TEST(Fpv1, FrameTensorsDecodePixels) {
  VideoSample v;
  v.frames = 1;
  v.width = 2;
  v.height = 1;
  v.pixels = {255, 0, 51, 0, 255, 102};
  auto f = v.frame(0);
  ASSERT_EQ(f.shape(), (Shape{3, 1, 2}));
  EXPECT_FLOAT_EQ(f[0], 1.0f);  // R of pixel 0
  EXPECT_FLOAT_EQ(f[1], 0.0f);  // R of pixel 1
  EXPECT_FLOAT_EQ(f[4], 0.2f);  // B of pixel 0
  EXPECT_FLOAT_EQ(f[5], 0.4f);
  EXPECT_THROW(v.frame(1), IndexError);
}

TEST(Ppm, HeaderAndPayload) {
  const auto dir = scratch_dir("ppm");
  const auto video = make_video(find_template("blocked"), 1, 16, 16);
  write_ppm(video, 0, dir / "f.ppm");
  std::ifstream in(dir / "f.ppm", std::ios::binary);
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string header = "P6\n16 16\n255\n";
  ASSERT_EQ(data.size(), header.size() + 16 * 16 * 3);
  EXPECT_EQ(data.substr(0, header.size()), header);
  EXPECT_EQ(static_cast<std::uint8_t>(data[header.size()]), video.pixels[0]);
}

TEST(Dataset, SplitBalanceAndDeterminism) {
  GenerationOptions opts;
  opts.count = 1000;
  opts.seed = 77;
  opts.width = 4;
  opts.height = 4;
  const auto a = generate_dataset(builtin_templates(), opts);
  std::size_t eval = 0, success = 0;
  for (const auto& e : a.manifest) {
    eval += e.split == Split::Eval;
    success += e.label == Label::Success;
  }
  EXPECT_EQ(eval, 50u);
  EXPECT_EQ(a.manifest.size() - eval, 950u);
  EXPECT_GE(success, 300u);
  EXPECT_LE(success, 700u);

  opts.count = 60;
  const auto b = generate_dataset(builtin_templates(), opts);
  const auto c = generate_dataset(builtin_templates(), opts);
  ASSERT_EQ(b.manifest.size(), c.manifest.size());
  for (std::size_t i = 0; i < b.manifest.size(); ++i) {
    EXPECT_EQ(b.manifest[i].seed, c.manifest[i].seed);
    EXPECT_EQ(b.manifest[i].split, c.manifest[i].split);
    EXPECT_EQ(b.videos[i].pixels, c.videos[i].pixels);
  }
}

TEST(Dataset, SingleOutcomeTemplateFails) {
  TaskTemplate always_apart;
  always_apart.name = "apart";
  always_apart.layout = [](Rng&) {
    WorldState s;
    s.bodies.push_back(Body::static_circle({1, 1}, 0.5, Color::Green));
    s.bodies.push_back(Body::static_circle({5, 1}, 0.5, Color::Blue));
    return s;
  };
  GenerationOptions opts;
  opts.count = 20;
  opts.width = 4;
  opts.height = 4;
  EXPECT_THROW(generate_dataset({always_apart}, opts), GenerationError);
  opts.count = 19;
  EXPECT_THROW(generate_dataset(builtin_templates(), opts), InputError);
}

TEST(Dataset, SaveLoadAndManifestRoundTrip) {
  const auto dir = scratch_dir("dataset");
  GenerationOptions opts;
  opts.count = 40;
  opts.seed = 5;
  const auto data = generate_dataset(builtin_templates(), opts);
  save_dataset(data, dir);
  const auto manifest = read_manifest(dir / "manifest.csv");
  ASSERT_EQ(manifest.size(), data.manifest.size());
  for (std::size_t i = 0; i < manifest.size(); ++i) {
    EXPECT_EQ(manifest[i].path, data.manifest[i].path);
    EXPECT_EQ(manifest[i].split, data.manifest[i].split);
    EXPECT_EQ(manifest[i].label, data.manifest[i].label);
    EXPECT_EQ(manifest[i].template_name, data.manifest[i].template_name);
    EXPECT_EQ(manifest[i].seed, data.manifest[i].seed);
  }
  const auto loaded = load_dataset(dir);
  EXPECT_EQ(loaded.train.size() + loaded.eval.size(), 40u);
  EXPECT_EQ(loaded.eval.size(), 2u);

  {
    std::ofstream out(dir / "manifest.csv", std::ios::app);
    out << "videos/x.fpv,test,success,drop,1\n";
  }
  EXPECT_THROW(read_manifest(dir / "manifest.csv"), FormatError);
}
