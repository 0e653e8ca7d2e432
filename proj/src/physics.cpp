#include "fptt/physics.hpp"

#include <algorithm>
#include <limits>

#include "fptt/errors.hpp"

namespace fptt::physics {

namespace {

constexpr int kSolverIterations = 4;
constexpr int kProjectionIterations = 32;

Vec2 closest_on_segment(Vec2 p, Vec2 a, Vec2 b) {
  const Vec2 ab = b - a;
  const double len2 = dot(ab, ab);
  if (len2 == 0.0) return a;
  const double t = std::clamp(dot(p - a, ab) / len2, 0.0, 1.0);
  return a + ab * t;
}

double point_segment_distance(Vec2 p, Vec2 a, Vec2 b) { return norm(p - closest_on_segment(p, a, b)); }

double cross(Vec2 a, Vec2 b) { return a.x * b.y - a.y * b.x; }

bool segments_intersect(Vec2 p1, Vec2 p2, Vec2 q1, Vec2 q2) {
  const double d1 = cross(q2 - q1, p1 - q1), d2 = cross(q2 - q1, p2 - q1);
  const double d3 = cross(p2 - p1, q1 - p1), d4 = cross(p2 - p1, q2 - p1);
  return ((d1 > 0) != (d2 > 0)) && ((d3 > 0) != (d4 > 0)) && d1 != 0 && d2 != 0 && d3 != 0 && d4 != 0;
}

double mixed_restitution(const Body& a, const Body& b, double approach_speed) {
  if (approach_speed < kRestingSpeed) return 0.0;
  return std::max(a.restitution, b.restitution);
}

// Contact normal pointing from `other` towards the dynamic circle, and depth.
struct Contact {
  Vec2 normal;
  double depth = 0.0;
};

bool circle_contact(const Body& circle, const Body& other, Contact& out) {
  Vec2 anchor;
  double reach = circle.radius;
  if (other.kind == BodyKind::StaticSegment) {
    anchor = closest_on_segment(circle.position, other.a, other.b);
  } else {
    anchor = other.position;
    reach += other.radius;
  }
  const Vec2 d = circle.position - anchor;
  const double dist = norm(d);
  if (dist >= reach) return false;
  if (dist > 0.0) {
    out.normal = d * (1.0 / dist);
  } else if (other.kind == BodyKind::StaticSegment) {
    const Vec2 ab = other.b - other.a;
    const double len = norm(ab);
    out.normal = len > 0 ? Vec2{-ab.y / len, ab.x / len} : Vec2{0.0, 1.0};
  } else {
    out.normal = {0.0, 1.0};
  }
  out.depth = reach - dist;
  return true;
}

void resolve_static(Body& dyn, const Body& fixed, const Contact& c) {
  dyn.position = dyn.position + c.normal * c.depth;
  const double vn = dot(dyn.velocity, c.normal);
  if (vn < 0.0) {
    const double e = mixed_restitution(dyn, fixed, -vn);
    dyn.velocity = dyn.velocity - c.normal * ((1.0 + e) * vn);
  }
}

void resolve_dynamic(Body& a, Body& b, const Contact& c) {
  const double inv_a = 1.0 / a.mass(), inv_b = 1.0 / b.mass();
  const double inv_sum = inv_a + inv_b;
  a.position = a.position + c.normal * (c.depth * inv_a / inv_sum);
  b.position = b.position - c.normal * (c.depth * inv_b / inv_sum);
  const double vn = dot(a.velocity - b.velocity, c.normal);
  if (vn < 0.0) {
    const double e = mixed_restitution(a, b, -vn);
    const double j = -(1.0 + e) * vn / inv_sum;
    a.velocity = a.velocity + c.normal * (j * inv_a);
    b.velocity = b.velocity - c.normal * (j * inv_b);
  }
}

}  // namespace

Body Body::dynamic_circle(Vec2 pos, double r, Color c, Vec2 vel, double restitution, double friction) {
  if (!(r > 0.0)) throw TemplateError("dynamic circle needs a positive radius");
  Body b;
  b.kind = BodyKind::DynamicCircle;
  b.position = pos;
  b.velocity = vel;
  b.radius = r;
  b.color = c;
  b.restitution = restitution;
  b.friction = friction;
  return b;
}

Body Body::static_circle(Vec2 pos, double r, Color c, double restitution) {
  if (!(r > 0.0)) throw TemplateError("static circle needs a positive radius");
  Body b;
  b.kind = BodyKind::StaticCircle;
  b.position = pos;
  b.radius = r;
  b.color = c;
  b.restitution = restitution;
  return b;
}

Body Body::static_segment(Vec2 a, Vec2 b, Color c, double restitution) {
  Body s;
  s.kind = BodyKind::StaticSegment;
  s.a = a;
  s.b = b;
  s.position = (a + b) * 0.5;
  s.color = c;
  s.restitution = restitution;
  return s;
}

WorldState simulate_step(WorldState state, double dt) {
  if (!(dt > 0.0)) throw InputError("simulate_step: dt must be positive");
  auto& bodies = state.bodies;
  for (auto& b : bodies) {
    if (b.is_static()) continue;
    b.velocity = b.velocity + state.gravity * dt;
    b.velocity = b.velocity * std::max(0.0, 1.0 - b.friction * dt);
    b.position = b.position + b.velocity * dt;
  }

  int contacts = 0;
  for (int iter = 0; iter < kSolverIterations; ++iter) {
    for (std::size_t i = 0; i < bodies.size(); ++i) {
      if (bodies[i].is_static()) continue;
      for (std::size_t j = 0; j < bodies.size(); ++j) {
        if (j == i) continue;
        const bool other_dynamic = !bodies[j].is_static();
        if (other_dynamic && j < i) continue;
        Contact c;
        if (!circle_contact(bodies[i], bodies[j], c)) continue;
        if (iter == 0) ++contacts;
        if (other_dynamic)
          resolve_dynamic(bodies[i], bodies[j], c);
        else
          resolve_static(bodies[i], bodies[j], c);
      }
    }
  }
  // Static geometry wins: a final position-only pass removes overlap that
  // dynamic-dynamic pushes may have reintroduced.
  for (int iter = 0; iter < kProjectionIterations; ++iter) {
    bool moved = false;
    for (auto& body : bodies) {
      if (body.is_static()) continue;
      for (const auto& other : bodies) {
        if (!other.is_static()) continue;
        Contact c;
        if (!circle_contact(body, other, c)) continue;
        body.position = body.position + c.normal * c.depth;
        moved = true;
      }
    }
    if (!moved) break;
  }
  state.last_step_contacts = contacts;
  state.time += dt;
  return state;
}

double surface_gap(const Body& a, const Body& b) {
  if (a.is_circle() && b.is_circle()) return norm(a.position - b.position) - a.radius - b.radius;
  if (a.is_circle()) return point_segment_distance(a.position, b.a, b.b) - a.radius;
  if (b.is_circle()) return point_segment_distance(b.position, a.a, a.b) - b.radius;
  if (segments_intersect(a.a, a.b, b.a, b.b)) return 0.0;
  return std::min({point_segment_distance(a.a, b.a, b.b), point_segment_distance(a.b, b.a, b.b),
                   point_segment_distance(b.a, a.a, a.b), point_segment_distance(b.b, a.a, a.b)});
}

double mechanical_energy(const WorldState& state) {
  double e = 0.0;
  for (const auto& b : state.bodies) {
    if (b.is_static()) continue;
    e += b.mass() * (0.5 * dot(b.velocity, b.velocity) - dot(state.gravity, b.position));
  }
  return e;
}

double max_segment_penetration(const WorldState& state) {
  double worst = 0.0;
  for (const auto& c : state.bodies) {
    if (c.is_static()) continue;
    for (const auto& s : state.bodies) {
      if (s.kind != BodyKind::StaticSegment) continue;
      worst = std::max(worst, -surface_gap(c, s));
    }
  }
  return worst;
}

const char* label_name(Label l) { return l == Label::Success ? "success" : "failure"; }

Label label_task(const std::vector<WorldState>& trajectory, double eps_contact) {
  if (trajectory.empty()) throw InputError("label_task: empty trajectory");
  const auto& final_state = trajectory.back();
  const Body* green = nullptr;
  const Body* blue = nullptr;
  int n_green = 0, n_blue = 0;
  for (const auto& b : final_state.bodies) {
    if (b.color == Color::Green) green = &b, ++n_green;
    if (b.color == Color::Blue) blue = &b, ++n_blue;
  }
  if (n_green != 1 || n_blue != 1)
    throw TemplateError("task must contain exactly one green and one blue body (found " + std::to_string(n_green) +
                        " green, " + std::to_string(n_blue) + " blue)");
  return surface_gap(*green, *blue) <= eps_contact ? Label::Success : Label::Failure;
}

std::array<float, 3> color_rgb(Color c) {
  switch (c) {
    case Color::Green:
      return {0.0f, 0.75f, 0.0f};
    case Color::Blue:
      return {0.0f, 0.0f, 1.0f};
    case Color::Red:
      return {1.0f, 0.0f, 0.0f};
    case Color::Gray:
      break;
  }
  return {0.5f, 0.5f, 0.5f};
}

Tensor<float> render_frame(const WorldState& state, std::size_t width, std::size_t height, const View& view) {
  if (width == 0 || height == 0) throw InputError("render_frame: empty image");
  Tensor<float> img({3, height, width});
  auto px = img.data();
  const std::size_t plane = width * height;
  for (std::size_t ch = 0; ch < 3; ++ch) std::fill(px.begin() + ch * plane, px.begin() + (ch + 1) * plane, kBackground[ch]);

  std::vector<const Body*> order;
  for (const auto& b : state.bodies)
    if (b.is_static()) order.push_back(&b);
  for (const auto& b : state.bodies)
    if (!b.is_static()) order.push_back(&b);

  const double sx = view.world_width / static_cast<double>(width);
  const double sy = view.world_height / static_cast<double>(height);
  for (std::size_t r = 0; r < height; ++r) {
    for (std::size_t c = 0; c < width; ++c) {
      const Vec2 p{(static_cast<double>(c) + 0.5) * sx, view.world_height - (static_cast<double>(r) + 0.5) * sy};
      const Body* top = nullptr;
      for (const Body* b : order) {
        const bool inside = b->is_circle() ? norm(p - b->position) <= b->radius
                                           : point_segment_distance(p, b->a, b->b) <= view.line_half_width;
        if (inside) top = b;
      }
      if (!top) continue;
      const auto rgb = color_rgb(top->color);
      for (std::size_t ch = 0; ch < 3; ++ch) px[ch * plane + r * width + c] = rgb[ch];
    }
  }
  return img;
}

}  // namespace fptt::physics
