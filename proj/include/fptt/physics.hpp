#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "fptt/rng.hpp"
#include "fptt/tensor.hpp"

// Deterministic 2D circle/segment physics, rasterizer and task templates used
// to produce labelled success/failure videos.

namespace fptt::physics {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
};

inline Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
inline Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
inline Vec2 operator*(Vec2 a, double s) { return {a.x * s, a.y * s}; }
inline Vec2 operator*(double s, Vec2 a) { return a * s; }
inline double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
inline double norm(Vec2 a) { return std::sqrt(dot(a, a)); }

enum class BodyKind : std::uint8_t { DynamicCircle, StaticCircle, StaticSegment };
enum class Color : std::uint8_t { Green, Blue, Red, Gray };

struct Body {
  BodyKind kind = BodyKind::DynamicCircle;
  Vec2 position;  // circle centre
  Vec2 velocity;  // dynamic bodies only
  double radius = 0.0;
  Vec2 a, b;  // segment endpoints
  Color color = Color::Gray;
  double restitution = 0.0;
  double friction = 0.0;  // linear velocity damping rate, 1/s

  bool is_static() const { return kind != BodyKind::DynamicCircle; }
  bool is_circle() const { return kind != BodyKind::StaticSegment; }
  // Mass of a uniform-density disc, up to the constant factor π.
  double mass() const { return radius * radius; }

  static Body dynamic_circle(Vec2 pos, double r, Color c, Vec2 vel = {}, double restitution = 0.0,
                             double friction = 0.0);
  static Body static_circle(Vec2 pos, double r, Color c, double restitution = 0.0);
  static Body static_segment(Vec2 a, Vec2 b, Color c, double restitution = 0.0);
};

struct WorldState {
  std::vector<Body> bodies;
  double time = 0.0;
  Vec2 gravity{0.0, -10.0};
  // Overlapping pairs found by the most recent simulate_step.
  int last_step_contacts = 0;
};

// Below this approach speed contacts are resolved inelastically, so resting
// bodies settle instead of jittering.
inline constexpr double kRestingSpeed = 0.5;

// Residual overlap allowed after contact resolution, metres.
inline constexpr double kResolutionTolerance = 1e-3;

// Semi-implicit Euler (v += g·dt; v *= 1 − friction·dt; x += v·dt), then
// iterative contact resolution with positional correction and restitution.
WorldState simulate_step(WorldState state, double dt);

// Distance between the surfaces of two bodies (negative when overlapping).
double surface_gap(const Body& a, const Body& b);

// Σ m (½|v|² − g·x) over dynamic bodies.
double mechanical_energy(const WorldState& state);

// Largest depth by which any dynamic circle overlaps a static segment.
double max_segment_penetration(const WorldState& state);

enum class Label : std::uint8_t { Failure = 0, Success = 1 };

const char* label_name(Label l);

// Success iff the green and blue bodies touch (gap ≤ eps_contact) in the final
// state of the trajectory.
Label label_task(const std::vector<WorldState>& trajectory, double eps_contact);

// World-to-pixel mapping: the world rectangle [0,width]×[0,height] (y up) is
// stretched over the image.
struct View {
  double world_width = 8.0;
  double world_height = 8.0;
  double line_half_width = 0.3;  // drawn thickness of segments, world units
};

std::array<float, 3> color_rgb(Color c);
inline constexpr std::array<float, 3> kBackground{1.0f, 1.0f, 1.0f};

// Painter's rasterization sampled at pixel centres: background, static bodies,
// then dynamic bodies, each in list order.
Tensor<float> render_frame(const WorldState& state, std::size_t width, std::size_t height, const View& view);

}  // namespace fptt::physics
