#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "dvs/fields.hpp"
#include "dvs/geometry.hpp"

namespace dvs {

// ---------------------------------------------------------------------------
// Scene description
// ---------------------------------------------------------------------------

/// Thin textured slab standing in for the static background. The slab spans
/// z in [z, z + thickness] and |x|, |y| <= half_extent; the camera rig sits
/// on the z < 0 side looking toward +z.
struct PlaneBackground {
  double z = 2.0;
  double thickness = 0.15;
  double half_extent = 8.0;
  bool textured = true;
};

enum class MoverShape { kSphere, kBox };

/// The dynamic foreground primitive. Its center follows the polynomial
/// c(t) = sum_k trajectory[k] * t^k; a sphere may additionally scale its
/// radius by the polynomial radius_scale(t) (non-rigid motion, used to
/// demonstrate the surface constraint's documented failure mode).
struct Mover {
  MoverShape shape = MoverShape::kSphere;
  std::vector<Eigen::Vector3d> trajectory = {Eigen::Vector3d(-1.2, 0, 0),
                                             Eigen::Vector3d(2.4, 0, 0)};
  double radius = 0.5;
  Eigen::Vector3d half_extents = Eigen::Vector3d(0.4, 0.4, 0.4);
  std::vector<double> radius_scale = {1.0};
  bool textured = true;

  Eigen::Vector3d center(double t) const {
    Eigen::Vector3d c = Eigen::Vector3d::Zero();
    double tk = 1.0;
    for (const Eigen::Vector3d& coef : trajectory) {
      c += coef * tk;
      tk *= t;
    }
    return c;
  }

  double scale_at(double t) const {
    double s = 0.0, tk = 1.0;
    for (double coef : radius_scale) {
      s += coef * tk;
      tk *= t;
    }
    return s;
  }

  bool is_rigid() const { return radius_scale.size() == 1; }
};

struct SyntheticScene {
  PlaneBackground background;
  Mover mover;
  double sigma_solid = 200.0;
  double s_near = 2.0;  // quadrature bounds shared by oracle and training
  double s_far = 9.0;
  double frame_step = 1.0 / 11.0;  // normalized-time spacing between frames

  void validate() const {
    if (!(sigma_solid > 0) || !(background.thickness > 0) || !(background.half_extent > 0))
      throw std::invalid_argument("SyntheticScene: non-positive geometry");
    if (!(s_near > 0) || !(s_near < s_far))
      throw std::invalid_argument("SyntheticScene: need 0 < s_near < s_far");
    if (!(frame_step > 0) || mover.trajectory.empty() || mover.radius_scale.empty())
      throw std::invalid_argument("SyntheticScene: empty trajectory or scale");
    double min_scale = std::numeric_limits<double>::max();
    for (int i = 0; i <= 100; ++i) min_scale = std::min(min_scale, mover.scale_at(i / 100.0));
    if (!(min_scale > 0)) throw std::invalid_argument("SyntheticScene: radius scale must stay > 0");
    const double chord = mover.shape == MoverShape::kSphere
                             ? 2.0 * mover.radius * min_scale
                             : 2.0 * mover.half_extents.minCoeff();
    if (sigma_solid * std::min(background.thickness, chord) < 5.0)
      throw std::invalid_argument("SyntheticScene: bodies are not effectively opaque");
    if (mover.shape == MoverShape::kBox && !mover.is_rigid())
      throw std::invalid_argument("SyntheticScene: scaling is supported for spheres only");
  }
};

// ---------------------------------------------------------------------------
// Procedural textures and occupancy
// ---------------------------------------------------------------------------

namespace detail {

inline int checker_parity(double a, double b, double period) {
  const long ia = static_cast<long>(std::floor(a / period));
  const long ib = static_cast<long>(std::floor(b / period));
  return static_cast<int>(((ia + ib) % 2 + 2) % 2);
}

inline Eigen::Vector3d plane_color(const PlaneBackground& bg, double x, double y) {
  if (!bg.textured) return Eigen::Vector3d(0.78, 0.78, 0.78);
  const Eigen::Vector3d base = checker_parity(x, y, 0.5) ? Eigen::Vector3d(0.20, 0.45, 0.80)
                                                         : Eigen::Vector3d(0.85, 0.35, 0.25);
  // Smooth within-cell gradient so photometric losses see signal everywhere.
  const double g = 0.75 + 0.25 * std::sin(1.9 * x) * std::cos(1.3 * y);
  return base * g;
}

/// Texture in mover-local normalized coordinates, so the pattern travels (and
/// scales) with the body and colors are photometrically consistent over time.
inline Eigen::Vector3d mover_color(const Mover& mover, const Eigen::Vector3d& local_norm) {
  if (!mover.textured) return Eigen::Vector3d(0.85, 0.25, 0.25);
  const int par = (static_cast<int>(std::floor((local_norm.x() + 1.0) * 2.0)) +
                   static_cast<int>(std::floor((local_norm.y() + 1.0) * 2.0)) +
                   static_cast<int>(std::floor((local_norm.z() + 1.0) * 2.0))) &
                  1;
  const Eigen::Vector3d base =
      par ? Eigen::Vector3d(0.25, 0.20, 0.80) : Eigen::Vector3d(0.95, 0.75, 0.20);
  return base * (0.8 + 0.2 * local_norm.y());
}

}  // namespace detail

inline bool inside_mover(const SyntheticScene& scene, const Eigen::Vector3d& x, double t) {
  const Eigen::Vector3d local = x - scene.mover.center(t);
  if (scene.mover.shape == MoverShape::kSphere)
    return local.norm() <= scene.mover.radius * scene.mover.scale_at(t);
  return (local.cwiseAbs().array() <= scene.mover.half_extents.array()).all();
}

inline bool inside_background(const SyntheticScene& scene, const Eigen::Vector3d& x) {
  const PlaneBackground& bg = scene.background;
  return x.z() >= bg.z && x.z() <= bg.z + bg.thickness && std::abs(x.x()) <= bg.half_extent &&
         std::abs(x.y()) <= bg.half_extent;
}

struct ScenePoint {
  double sigma = 0.0;
  Eigen::Vector3d color = Eigen::Vector3d::Zero();
};

/// Closed-form density/color oracle. The mover owns overlapping regions (the
/// calibrated scenes keep the bodies disjoint, so this is a tie-break only).
inline ScenePoint scene_fields(const SyntheticScene& scene, const Eigen::Vector3d& x, double t) {
  if (inside_mover(scene, x, t)) {
    const double r_eff = scene.mover.shape == MoverShape::kSphere
                             ? scene.mover.radius * scene.mover.scale_at(t)
                             : 1.0;
    const Eigen::Vector3d local = x - scene.mover.center(t);
    const Eigen::Vector3d n = scene.mover.shape == MoverShape::kSphere
                                  ? Eigen::Vector3d(local / r_eff)
                                  : Eigen::Vector3d(local.cwiseQuotient(scene.mover.half_extents));
    return {scene.sigma_solid, detail::mover_color(scene.mover, n)};
  }
  if (inside_background(scene, x))
    return {scene.sigma_solid, detail::plane_color(scene.background, x.x(), x.y())};
  return {};
}

/// The mover's motion field (rigid translation plus the radial component for
/// scaling spheres), defined everywhere; callers gate it on membership.
inline Eigen::Vector3d mover_flow(const SyntheticScene& scene, const Eigen::Vector3d& x,
                                  double t, FlowDirection direction) {
  const double t2 =
      direction == FlowDirection::kForward ? t + scene.frame_step : t - scene.frame_step;
  Eigen::Vector3d flow = scene.mover.center(t2) - scene.mover.center(t);
  if (!scene.mover.is_rigid()) {
    const double ratio = scene.mover.scale_at(t2) / scene.mover.scale_at(t);
    flow += (x - scene.mover.center(t)) * (ratio - 1.0);
  }
  return flow;
}

/// Exact 3D scene flow to the adjacent frame: the mover's motion field inside
/// the mover, zero elsewhere.
inline Eigen::Vector3d scene_flow_gt(const SyntheticScene& scene, const Eigen::Vector3d& x,
                                     double t, FlowDirection direction) {
  if (!inside_mover(scene, x, t)) return Eigen::Vector3d::Zero();
  return mover_flow(scene, x, t, direction);
}

// ---------------------------------------------------------------------------
// Analytic ray intersections (for masks and ground-truth surface points)
// ---------------------------------------------------------------------------

namespace detail {

inline std::optional<double> intersect_sphere(const Eigen::Vector3d& origin,
                                              const Eigen::Vector3d& dir,
                                              const Eigen::Vector3d& center, double radius) {
  const Eigen::Vector3d oc = origin - center;
  const double b = oc.dot(dir);
  const double disc = b * b - (oc.squaredNorm() - radius * radius);
  if (disc < 0) return std::nullopt;
  const double root = std::sqrt(disc);
  double s = -b - root;
  if (s <= 0) s = -b + root;
  if (s <= 0) return std::nullopt;
  return s;
}

inline std::optional<double> intersect_box(const Eigen::Vector3d& origin,
                                           const Eigen::Vector3d& dir,
                                           const Eigen::Vector3d& center,
                                           const Eigen::Vector3d& half) {
  double s_enter = -std::numeric_limits<double>::infinity();
  double s_exit = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    if (std::abs(dir(a)) < 1e-15) {
      if (std::abs(origin(a) - center(a)) > half(a)) return std::nullopt;
      continue;
    }
    double lo = (center(a) - half(a) - origin(a)) / dir(a);
    double hi = (center(a) + half(a) - origin(a)) / dir(a);
    if (lo > hi) std::swap(lo, hi);
    s_enter = std::max(s_enter, lo);
    s_exit = std::min(s_exit, hi);
  }
  if (s_enter > s_exit || s_exit <= 0 || s_enter <= 0) return std::nullopt;
  return s_enter;
}

/// Distance to the slab's front face (cameras sit on the z < 0 side).
inline std::optional<double> intersect_background(const PlaneBackground& bg,
                                                  const Eigen::Vector3d& origin,
                                                  const Eigen::Vector3d& dir) {
  if (std::abs(dir.z()) < 1e-15) return std::nullopt;
  const double s = (bg.z - origin.z()) / dir.z();
  if (s <= 0) return std::nullopt;
  const Eigen::Vector3d hit = origin + s * dir;
  if (std::abs(hit.x()) > bg.half_extent || std::abs(hit.y()) > bg.half_extent)
    return std::nullopt;
  return s;
}

inline std::optional<double> intersect_mover(const SyntheticScene& scene,
                                             const Eigen::Vector3d& origin,
                                             const Eigen::Vector3d& dir, double t) {
  const Eigen::Vector3d c = scene.mover.center(t);
  if (scene.mover.shape == MoverShape::kSphere)
    return intersect_sphere(origin, dir, c, scene.mover.radius * scene.mover.scale_at(t));
  return intersect_box(origin, dir, c, scene.mover.half_extents);
}

/// A ray's traversal of one body: [enter, exit] along s plus the body color
/// anchored at the entry surface point (so colors cannot depend on where the
/// quadrature lands its nodes).
struct RaySegment {
  double enter = 0, exit = 0;
  Eigen::Vector3d color = Eigen::Vector3d::Zero();
};

/// Full [enter, exit] interval through the mover (empty optional if missed).
inline std::optional<std::pair<double, double>> mover_interval(const SyntheticScene& scene,
                                                               const Eigen::Vector3d& o,
                                                               const Eigen::Vector3d& d,
                                                               double t) {
  const Eigen::Vector3d c = scene.mover.center(t);
  if (scene.mover.shape == MoverShape::kSphere) {
    const double r = scene.mover.radius * scene.mover.scale_at(t);
    const Eigen::Vector3d oc = o - c;
    const double b = oc.dot(d);
    const double disc = b * b - (oc.squaredNorm() - r * r);
    if (disc < 0) return std::nullopt;
    const double root = std::sqrt(disc);
    return std::make_pair(-b - root, -b + root);
  }
  double s_enter = -std::numeric_limits<double>::infinity();
  double s_exit = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    if (std::abs(d(a)) < 1e-15) {
      if (std::abs(o(a) - c(a)) > scene.mover.half_extents(a)) return std::nullopt;
      continue;
    }
    double lo = (c(a) - scene.mover.half_extents(a) - o(a)) / d(a);
    double hi = (c(a) + scene.mover.half_extents(a) - o(a)) / d(a);
    if (lo > hi) std::swap(lo, hi);
    s_enter = std::max(s_enter, lo);
    s_exit = std::min(s_exit, hi);
  }
  if (s_enter > s_exit) return std::nullopt;
  return std::make_pair(s_enter, s_exit);
}

/// Collects the body segments a ray traverses inside [s_near, s_far], sorted
/// by entry. The calibrated scenes keep the bodies disjoint along every ray.
inline std::vector<RaySegment> ray_segments(const SyntheticScene& scene,
                                            const Eigen::Vector3d& o, const Eigen::Vector3d& d,
                                            double t) {
  std::vector<RaySegment> segments;

  if (auto mv = mover_interval(scene, o, d, t)) {
    RaySegment seg;
    seg.enter = std::max(mv->first, scene.s_near);
    seg.exit = std::min(mv->second, scene.s_far);
    if (seg.exit > seg.enter) {
      const Eigen::Vector3d entry = o + seg.enter * d;
      const double r_eff = scene.mover.shape == MoverShape::kSphere
                               ? scene.mover.radius * scene.mover.scale_at(t)
                               : 1.0;
      const Eigen::Vector3d local = entry - scene.mover.center(t);
      const Eigen::Vector3d n =
          scene.mover.shape == MoverShape::kSphere
              ? Eigen::Vector3d(local / r_eff)
              : Eigen::Vector3d(local.cwiseQuotient(scene.mover.half_extents));
      seg.color = mover_color(scene.mover, n);
      segments.push_back(seg);
    }
  }

  const PlaneBackground& bg = scene.background;
  if (std::abs(d.z()) > 1e-15) {
    double lo = (bg.z - o.z()) / d.z();
    double hi = (bg.z + bg.thickness - o.z()) / d.z();
    if (lo > hi) std::swap(lo, hi);
    RaySegment seg;
    seg.enter = std::max(lo, scene.s_near);
    seg.exit = std::min(hi, scene.s_far);
    if (seg.exit > seg.enter) {
      const Eigen::Vector3d entry = o + seg.enter * d;
      if (std::abs(entry.x()) <= bg.half_extent && std::abs(entry.y()) <= bg.half_extent) {
        seg.color = plane_color(bg, entry.x(), entry.y());
        segments.push_back(seg);
      }
    }
  }

  std::sort(segments.begin(), segments.end(),
            [](const RaySegment& a, const RaySegment& b) { return a.enter < b.enter; });
  return segments;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Oracle rendering
// ---------------------------------------------------------------------------

/// Images/maps are stored column-per-pixel with row-major pixel index
/// (pix = v * width + u), matching the renderer's patch convention.
struct OracleFrame {
  Eigen::MatrixXd image;      // 3 x W*H
  Eigen::RowVectorXd depth;   // 1 x W*H expected ray distance
  Eigen::RowVectorXd mask;    // 1 x W*H, 1 where the mover is the nearest hit
};

/// Quadrature render of the analytic fields over K uniform bins. Each bin's
/// optical depth integrates the exact ray/body overlap (rather than sampling
/// the density at the bin midpoint), and a body's color is anchored at its
/// entry surface point: hard silhouettes would otherwise alias the bin grid
/// and doubling K could flip rim pixels by far more than the 0.5/255
/// convergence bound this oracle guarantees. The dynamic mask comes from
/// exact ray intersections.
inline OracleFrame oracle_render(const SyntheticScene& scene, const Camera& camera,
                                 const Pose& pose, double t, int K = 512) {
  if (K < 2) throw std::invalid_argument("oracle_render: K must be >= 2");
  const long pixels = static_cast<long>(camera.width) * camera.height;
  OracleFrame frame;
  frame.image = Eigen::MatrixXd::Zero(3, pixels);
  frame.depth = Eigen::RowVectorXd::Zero(pixels);
  frame.mask = Eigen::RowVectorXd::Zero(pixels);

  const double h = (scene.s_far - scene.s_near) / K;
  for (int v = 0; v < camera.height; ++v) {
    for (int u = 0; u < camera.width; ++u) {
      const long pix = static_cast<long>(v) * camera.width + u;
      const Ray ray = camera_ray(camera, pose, u, v);

      double transmittance = 1.0;
      Eigen::Vector3d color = Eigen::Vector3d::Zero();
      double depth = 0.0;
      for (const detail::RaySegment& seg :
           detail::ray_segments(scene, ray.origin, ray.direction, t)) {
        const int first_bin =
            std::clamp(static_cast<int>((seg.enter - scene.s_near) / h), 0, K - 1);
        const int last_bin =
            std::clamp(static_cast<int>((seg.exit - scene.s_near) / h), 0, K - 1);
        for (int i = first_bin; i <= last_bin && transmittance > 1e-15; ++i) {
          const double lo = std::max(seg.enter, scene.s_near + i * h);
          const double hi = std::min(seg.exit, scene.s_near + (i + 1) * h);
          if (hi <= lo) continue;
          const double alpha = 1.0 - std::exp(-scene.sigma_solid * (hi - lo));
          const double w = transmittance * alpha;
          color += w * seg.color;
          depth += w * 0.5 * (lo + hi);
          transmittance *= 1.0 - alpha;
        }
      }
      frame.image.col(pix) = color;
      frame.depth(pix) = depth;

      const auto s_mover = detail::intersect_mover(scene, ray.origin, ray.direction, t);
      const auto s_bg = detail::intersect_background(scene.background, ray.origin, ray.direction);
      frame.mask(pix) = (s_mover && (!s_bg || *s_mover < *s_bg)) ? 1.0 : 0.0;
    }
  }
  return frame;
}

// ---------------------------------------------------------------------------
// Camera rigs and dataset assembly
// ---------------------------------------------------------------------------

struct TrajectoryConfig {
  enum class Rig { kOrbit, kLinear };

  int frame_count = 12;
  int width = 64, height = 64;
  double focal = 64.0;
  Rig rig = Rig::kOrbit;
  double rig_distance = 4.0;         // camera distance from the scene origin
  double orbit_degrees = 24.0;       // total azimuth sweep (orbit rig)
  double azimuth_offset_degrees = 0; // shifts the whole sweep (held-out views)
  double linear_baseline = 1.5;      // total sideways travel (linear rig)

  void validate() const {
    if (frame_count < 3)
      throw std::invalid_argument("TrajectoryConfig: the triple loss needs >= 3 frames");
    if (width < 2 || height < 2 || !(focal > 0) || !(rig_distance > 0))
      throw std::invalid_argument("TrajectoryConfig: bad camera parameters");
  }

  Camera camera() const {
    return Camera{focal, focal, (width - 1) / 2.0, (height - 1) / 2.0, width, height};
  }

  Pose pose_for_frame(int n) const {
    const double u = static_cast<double>(n) / (frame_count - 1);
    if (rig == Rig::kOrbit) {
      const double theta =
          ((u - 0.5) * orbit_degrees + azimuth_offset_degrees) * M_PI / 180.0;
      const Eigen::Vector3d eye(rig_distance * std::sin(theta), 0.0,
                                -rig_distance * std::cos(theta));
      return look_at(eye, Eigen::Vector3d::Zero());
    }
    const Eigen::Vector3d eye((u - 0.5) * linear_baseline, 0.0, -rig_distance);
    return look_at(eye, Eigen::Vector3d::Zero());
  }
};

/// One training/evaluation view: rendered image plus per-pixel ground truth.
/// Flow ground truth is the 3D scene flow at the analytic surface point of
/// each pixel (zero off the mover); boundary frames extrapolate the
/// trajectory polynomial for the missing neighbor.
struct Frame {
  Eigen::MatrixXd image;        // 3 x W*H
  Pose pose;
  double timestamp = 0.0;
  Eigen::RowVectorXd mask;      // 1 x W*H
  Eigen::RowVectorXd depth_gt;  // 1 x W*H (metrics only)
  Eigen::MatrixXd flow_fwd_gt;  // 3 x W*H (metrics only)
  Eigen::MatrixXd flow_bwd_gt;  // 3 x W*H (metrics only)
};

struct Dataset {
  Camera camera;
  double near = 2.0, far = 9.0;
  double frame_step = 1.0 / 11.0;
  double scene_radius = 2.0;  // translation scale for novel-view sampling
  std::vector<Frame> frames;
};

namespace detail {

/// The mover must stay inside every camera's frustum at every sampled time.
/// Spheres use the exact test (center at least one radius inside each
/// frustum plane); boxes project their eight corners.
inline void check_mover_in_frusta(const SyntheticScene& scene, const TrajectoryConfig& traj) {
  const Camera camera = traj.camera();
  // Inward-pointing frustum plane normals in camera coordinates (x right,
  // y down, z forward), bounded by the outermost pixel rays.
  std::vector<Eigen::Vector3d> planes = {
      Eigen::Vector3d(camera.fx, 0, camera.cx).normalized(),
      Eigen::Vector3d(-camera.fx, 0, camera.width - 1 - camera.cx).normalized(),
      Eigen::Vector3d(0, camera.fy, camera.cy).normalized(),
      Eigen::Vector3d(0, -camera.fy, camera.height - 1 - camera.cy).normalized(),
      Eigen::Vector3d(0, 0, 1)};

  for (int n = 0; n < traj.frame_count; ++n) {
    const Pose pose = traj.pose_for_frame(n);
    for (int i = 0; i <= 100; ++i) {
      const double t = i / 100.0;
      const Eigen::Vector3d c = scene.mover.center(t);
      if (scene.mover.shape == MoverShape::kSphere) {
        const double r = scene.mover.radius * scene.mover.scale_at(t);
        const Eigen::Vector3d c_cam = pose.to_camera(c);
        for (const Eigen::Vector3d& plane : planes)
          if (plane.dot(c_cam) < r)
            throw std::invalid_argument("make_dataset: mover leaves the camera frustum");
      } else {
        for (int corner = 0; corner < 8; ++corner) {
          const Eigen::Vector3d p =
              c + scene.mover.half_extents.cwiseProduct(Eigen::Vector3d(
                      corner & 1 ? 1 : -1, corner & 2 ? 1 : -1, corner & 4 ? 1 : -1));
          const Projection proj = project(camera, pose, p);
          if (proj.u < 0 || proj.u > camera.width - 1 || proj.v < 0 ||
              proj.v > camera.height - 1)
            throw std::invalid_argument("make_dataset: mover leaves the camera frustum");
        }
      }
    }
  }
}

}  // namespace detail

/// Ground truth for a single view: oracle image/depth/mask plus the analytic
/// scene flow at every masked pixel's surface point. The scene's frame_step
/// must already be the trajectory's timestamp spacing.
inline Frame render_gt_frame(const SyntheticScene& scene, const Camera& camera, const Pose& pose,
                             double t, int oracle_k = 512) {
  const long pixels = static_cast<long>(camera.width) * camera.height;
  Frame frame;
  frame.pose = pose;
  frame.timestamp = t;
  OracleFrame oracle = oracle_render(scene, camera, pose, t, oracle_k);
  frame.image = std::move(oracle.image);
  frame.depth_gt = std::move(oracle.depth);
  frame.mask = std::move(oracle.mask);

  frame.flow_fwd_gt = Eigen::MatrixXd::Zero(3, pixels);
  frame.flow_bwd_gt = Eigen::MatrixXd::Zero(3, pixels);
  for (int v = 0; v < camera.height; ++v) {
    for (int u = 0; u < camera.width; ++u) {
      const long pix = static_cast<long>(v) * camera.width + u;
      if (frame.mask(pix) == 0.0) continue;
      const Ray ray = camera_ray(camera, pose, u, v);
      const auto s_hit = detail::intersect_mover(scene, ray.origin, ray.direction, t);
      const Eigen::Vector3d x = ray.origin + *s_hit * ray.direction;
      // The hit point sits exactly on the surface, so apply the mover's
      // motion field directly instead of re-testing membership there.
      frame.flow_fwd_gt.col(pix) = mover_flow(scene, x, t, FlowDirection::kForward);
      frame.flow_bwd_gt.col(pix) = mover_flow(scene, x, t, FlowDirection::kBackward);
    }
  }
  return frame;
}

/// Renders the N-frame monocular sequence (one view per timestamp) with its
/// ground-truth bundle. Purely deterministic for a fixed scene/trajectory.
inline Dataset make_dataset(SyntheticScene scene, const TrajectoryConfig& traj,
                            int oracle_k = 512) {
  traj.validate();
  scene.frame_step = 1.0 / (traj.frame_count - 1);
  scene.validate();
  detail::check_mover_in_frusta(scene, traj);

  Dataset dataset;
  dataset.camera = traj.camera();
  dataset.near = scene.s_near;
  dataset.far = scene.s_far;
  dataset.frame_step = scene.frame_step;
  double radius = 0.0;
  for (int i = 0; i <= 100; ++i) {
    const double t = i / 100.0;
    radius = std::max(radius,
                      scene.mover.center(t).norm() + scene.mover.radius * scene.mover.scale_at(t));
  }
  dataset.scene_radius = std::max(2.0, radius);

  for (int n = 0; n < traj.frame_count; ++n)
    dataset.frames.push_back(render_gt_frame(scene, dataset.camera, traj.pose_for_frame(n),
                                             static_cast<double>(n) / (traj.frame_count - 1),
                                             oracle_k));
  return dataset;
}

// ---------------------------------------------------------------------------
// Calibrated presets (shared by tests and the CLI defaults)
// ---------------------------------------------------------------------------

/// Rigid textured sphere sweeping left to right in front of the slab (about
/// 3.6 pixels of image motion per frame under default_trajectory(), and the
/// sphere stays inside every rig camera's frustum at every time).
inline SyntheticScene default_scene() { return SyntheticScene{}; }

/// Solid-color mover: reproduces the textureless-region failure mode.
inline SyntheticScene textureless_scene() {
  SyntheticScene scene;
  scene.mover.textured = false;
  return scene;
}

/// Pulsating (scaling) sphere: non-rigid motion the surface constraint does
/// not model.
inline SyntheticScene nonrigid_scene() {
  SyntheticScene scene;
  scene.mover.radius_scale = {0.9, 0.2};  // scale 0.9 -> 1.1 over t in [0,1]
  return scene;
}

inline SyntheticScene box_scene() {
  SyntheticScene scene;
  scene.mover.shape = MoverShape::kBox;
  return scene;
}

inline TrajectoryConfig default_trajectory() { return TrajectoryConfig{}; }

}  // namespace dvs
