#include "dvs/synthscene.hpp"

#include <gtest/gtest.h>

#include <Eigen/Dense>

#include <cmath>
#include <optional>

#include "dvs/renderer.hpp"

using namespace dvs;
using Mat = Eigen::MatrixXd;
using Eigen::RowVectorXd;
using Eigen::Vector3d;

namespace {

/// Small oracle resolution for tests that only need structure, not accuracy.
constexpr int kFastK = 256;

long pixel_index(const Camera& camera, int u, int v) {
  return static_cast<long>(v) * camera.width + u;
}

/// Independent ray-sphere hit used to cross-check masks: solves the quadratic
/// |o + s d - c|^2 = r^2 directly.
std::optional<double> reference_sphere_hit(const Vector3d& o, const Vector3d& d,
                                           const Vector3d& c, double r) {
  const Vector3d oc = o - c;
  const double a = d.squaredNorm();
  const double b = 2.0 * oc.dot(d);
  const double k = oc.squaredNorm() - r * r;
  const double disc = b * b - 4 * a * k;
  if (disc < 0) return std::nullopt;
  const double s0 = (-b - std::sqrt(disc)) / (2 * a);
  const double s1 = (-b + std::sqrt(disc)) / (2 * a);
  if (s0 > 0) return s0;
  if (s1 > 0) return s1;
  return std::nullopt;
}

}  // namespace

// ---------------------------------------------------------------------------
// Analytic fields
// ---------------------------------------------------------------------------

TEST(SceneFields, EmptySpaceHasZeroDensity) {
  const SyntheticScene scene = default_scene();
  const ScenePoint sp = scene_fields(scene, Vector3d(0, 0, -1.0), 0.5);
  EXPECT_EQ(sp.sigma, 0.0);
  EXPECT_EQ(sp.color, Vector3d::Zero());
}

TEST(SceneFields, MoverCenterIsSolid) {
  const SyntheticScene scene = default_scene();
  for (double t : {0.0, 0.25, 1.0}) {
    const ScenePoint sp = scene_fields(scene, scene.mover.center(t), t);
    EXPECT_EQ(sp.sigma, scene.sigma_solid);
  }
}

TEST(SceneFields, MoverVacatesItsOldPosition) {
  const SyntheticScene scene = default_scene();
  const Vector3d x = scene.mover.center(0.5);
  // The linear sweep displaces the center by and the displacement must clear
  // the radius for the point to be empty at the later time.
  const double displacement = (scene.mover.center(1.0) - scene.mover.center(0.5)).norm();
  ASSERT_GT(displacement, scene.mover.radius);
  EXPECT_EQ(scene_fields(scene, x, 0.5).sigma, scene.sigma_solid);
  EXPECT_EQ(scene_fields(scene, x, 1.0).sigma, 0.0);
}

TEST(SceneFields, BackgroundSlabOwnsItsBand) {
  const SyntheticScene scene = default_scene();
  const double z = scene.background.z;
  EXPECT_EQ(scene_fields(scene, Vector3d(3.0, -2.0, z + 0.01), 0.0).sigma, scene.sigma_solid);
  EXPECT_EQ(scene_fields(scene, Vector3d(3.0, -2.0, z - 0.01), 0.0).sigma, 0.0);
  EXPECT_EQ(scene_fields(scene, Vector3d(3.0, -2.0, z + scene.background.thickness + 0.01), 0.0)
                .sigma,
            0.0);
  // Outside the finite extent the slab is empty.
  EXPECT_EQ(scene_fields(scene, Vector3d(scene.background.half_extent + 1.0, 0.0, z + 0.01), 0.0)
                .sigma,
            0.0);
}

TEST(SceneFields, MoverTextureTravelsWithTheBody) {
  const SyntheticScene scene = default_scene();
  const Vector3d offset(0.2, 0.1, -0.3);
  const ScenePoint early = scene_fields(scene, scene.mover.center(0.2) + offset, 0.2);
  const ScenePoint late = scene_fields(scene, scene.mover.center(0.8) + offset, 0.8);
  EXPECT_EQ(early.color, late.color);
}

// ---------------------------------------------------------------------------
// Ground-truth flow
// ---------------------------------------------------------------------------

TEST(SceneFlow, ZeroOffTheMover) {
  const SyntheticScene scene = default_scene();
  EXPECT_EQ(scene_flow_gt(scene, Vector3d(3.0, 0.0, 2.05), 0.5, FlowDirection::kForward),
            Vector3d::Zero());
  EXPECT_EQ(scene_flow_gt(scene, Vector3d(0, 0, -1), 0.5, FlowDirection::kBackward),
            Vector3d::Zero());
}

TEST(SceneFlow, LinearTrajectoryGivesPerFrameVelocity) {
  const SyntheticScene scene = default_scene();  // c(t) = (-1.2 + 2.4 t, 0, 0)
  const Vector3d x = scene.mover.center(0.5);
  const Vector3d fwd = scene_flow_gt(scene, x, 0.5, FlowDirection::kForward);
  const Vector3d bwd = scene_flow_gt(scene, x, 0.5, FlowDirection::kBackward);
  EXPECT_NEAR(fwd.x(), 2.4 / 11.0, 1e-15);
  EXPECT_NEAR(bwd.x(), -2.4 / 11.0, 1e-15);
  EXPECT_EQ(fwd.y(), 0.0);
  EXPECT_EQ(fwd.z(), 0.0);
}

TEST(SceneFlow, QuadraticTrajectoryHandValue) {
  SyntheticScene scene = default_scene();
  // c(t) = (t + 0.5 t^2, 0, 0), frame step 0.1:
  // c(0.5) - c(0.4) = (0.625 - 0.48) = 0.145.
  scene.mover.trajectory = {Vector3d::Zero(), Vector3d(1, 0, 0), Vector3d(0.5, 0, 0)};
  scene.frame_step = 0.1;
  const Vector3d x = scene.mover.center(0.4);
  EXPECT_NEAR(scene_flow_gt(scene, x, 0.4, FlowDirection::kForward).x(), 0.145, 1e-15);
  // Backward: c(0.3) - c(0.4) = (0.345 - 0.48) = -0.135.
  EXPECT_NEAR(scene_flow_gt(scene, x, 0.4, FlowDirection::kBackward).x(), -0.135, 1e-15);
}

TEST(SceneFlow, ScalingSphereAddsRadialComponent) {
  SyntheticScene scene = nonrigid_scene();  // scale(t) = 0.9 + 0.2 t
  scene.frame_step = 1.0 / 11.0;
  const double t = 0.5;                      // scale = 1.0
  const double ratio = 0.9 + 0.2 * (t + scene.frame_step);  // ratio / 1.0 = 1 + 0.2/11
  const Vector3d offset(0.0, 0.2, 0.0);
  const Vector3d x = scene.mover.center(t) + offset;
  const Vector3d flow = scene_flow_gt(scene, x, t, FlowDirection::kForward);
  EXPECT_NEAR(flow.x(), 2.4 / 11.0, 1e-12);             // translation part
  EXPECT_NEAR(flow.y(), 0.2 * (ratio - 1.0), 1e-12);    // radial part: 0.2 * 0.2/11
  EXPECT_NEAR(flow.z(), 0.0, 1e-15);
}

// ---------------------------------------------------------------------------
// Oracle rendering
// ---------------------------------------------------------------------------

TEST(OracleRender, BackgroundDepthMatchesRayPlaneDistance) {
  const SyntheticScene scene = default_scene();
  const TrajectoryConfig traj = default_trajectory();
  const Camera camera = traj.camera();
  const Pose pose = traj.pose_for_frame(0);
  const int K = 512;
  const OracleFrame frame = oracle_render(scene, camera, pose, 0.0, K);

  // At t=0 the mover sits far left; probe background pixels on the right.
  const double tol = 2.0 * (scene.s_far - scene.s_near) / K;
  for (int u : {40, 48, 56}) {
    for (int v : {16, 32, 48}) {
      const long pix = pixel_index(camera, u, v);
      ASSERT_EQ(frame.mask(pix), 0.0);
      const Ray ray = camera_ray(camera, pose, u, v);
      const double expect = (scene.background.z - ray.origin.z()) / ray.direction.z();
      EXPECT_NEAR(frame.depth(pix), expect, tol) << "pixel " << u << "," << v;
    }
  }
}

TEST(OracleRender, MaskEqualsAnalyticNearestHit) {
  const SyntheticScene scene = default_scene();
  const TrajectoryConfig traj = default_trajectory();
  const Camera camera = traj.camera();
  const Pose pose = traj.pose_for_frame(5);
  const double t = 5.0 / 11.0;
  const OracleFrame frame = oracle_render(scene, camera, pose, t, kFastK);

  int mover_pixels = 0;
  for (int v = 0; v < camera.height; ++v) {
    for (int u = 0; u < camera.width; ++u) {
      const Ray ray = camera_ray(camera, pose, u, v);
      const auto hit = reference_sphere_hit(ray.origin, ray.direction,
                                            scene.mover.center(t),
                                            scene.mover.radius * scene.mover.scale_at(t));
      // Every sphere hit occludes the farther background plane here.
      const double expect = hit ? 1.0 : 0.0;
      ASSERT_EQ(frame.mask(pixel_index(camera, u, v)), expect) << "pixel " << u << "," << v;
      mover_pixels += hit ? 1 : 0;
    }
  }
  EXPECT_GT(mover_pixels, 50);  // the sphere is actually in view
}

TEST(OracleRender, RaysMissingAllGeometryAreBlack) {
  SyntheticScene scene = default_scene();
  scene.background.half_extent = 0.4;  // shrink the slab so corner rays miss
  scene.mover.trajectory = {Vector3d(0.0, 0.0, 0.0)};
  const TrajectoryConfig traj = default_trajectory();
  const Camera camera = traj.camera();
  const OracleFrame frame = oracle_render(scene, camera, traj.pose_for_frame(0), 0.0, kFastK);
  const long corner = pixel_index(camera, 0, 0);
  EXPECT_EQ(frame.image.col(corner), Vector3d::Zero());
  EXPECT_EQ(frame.depth(corner), 0.0);
  EXPECT_EQ(frame.mask(corner), 0.0);
}

TEST(OracleRender, DoublingKChangesImagesBelowHalfLsb) {
  const SyntheticScene scene = default_scene();
  const TrajectoryConfig traj = default_trajectory();
  const Camera camera = traj.camera();
  for (int n : {0, 5, 11}) {
    const double t = n / 11.0;
    const Pose pose = traj.pose_for_frame(n);
    const OracleFrame coarse = oracle_render(scene, camera, pose, t, 512);
    const OracleFrame fine = oracle_render(scene, camera, pose, t, 1024);
    const double max_diff = (coarse.image - fine.image).cwiseAbs().maxCoeff();
    EXPECT_LT(max_diff, 0.5 / 255.0) << "frame " << n;
  }
}

TEST(OracleRender, AgreesWithMidpointInjectedRenderer) {
  // Convention check: feeding the renderer's quadrature the analytic
  // densities/colors at its own midpoint samples reproduces the oracle to
  // within the sampling scheme difference (the oracle integrates bin overlap
  // exactly). A camera/pixel/range mismatch would show up as O(0.1) errors.
  const SyntheticScene scene = default_scene();
  const TrajectoryConfig traj = default_trajectory();
  const Camera camera = traj.camera();
  const Pose pose = traj.pose_for_frame(3);
  const double t = 3.0 / 11.0;
  const int K = 512;
  const OracleFrame frame = oracle_render(scene, camera, pose, t, K);

  // Fixed probes away from the silhouette: three background pixels on the
  // half opposite the mover, plus the mover center's own pixel.
  const Projection center = project(camera, pose, scene.mover.center(t));
  std::vector<std::pair<int, int>> probes = {
      {40, 16}, {48, 32}, {56, 48},
      {static_cast<int>(std::lround(center.u)), static_cast<int>(std::lround(center.v))}};

  for (auto [u, v] : probes) {
    Ray ray = camera_ray(camera, pose, u, v);
    ray.near = scene.s_near;
    ray.far = scene.s_far;
    Rng unused(0);
    const RaySamples samples = sample_ray(ray, K, /*stratified=*/false, unused);

    Mat sigma(1, K), color(3, K);
    for (int i = 0; i < K; ++i) {
      const ScenePoint sp = scene_fields(scene, samples.x.col(i), t);
      sigma(0, i) = sp.sigma;
      color.col(i) = sp.color;
    }
    const RenderVars vars =
        render_from(ad::Var::constant(sigma), ad::Var::constant(color),
                    ad::Var::constant(samples.x), ad::Var::constant(Mat(samples.s.transpose())),
                    ad::Var::constant(Mat(samples.delta.transpose())), K);
    const long pix = pixel_index(camera, u, v);
    EXPECT_LT((vars.color.val() - frame.image.col(pix)).cwiseAbs().maxCoeff(), 0.02)
        << "pixel " << u << "," << v;
    EXPECT_NEAR(vars.depth.val()(0, 0), frame.depth(pix), 0.03);
  }
}

TEST(OracleRender, TexturelessMoverIsSolidColor) {
  const SyntheticScene scene = textureless_scene();
  const TrajectoryConfig traj = default_trajectory();
  const Camera camera = traj.camera();
  const Pose pose = traj.pose_for_frame(5);
  const double t = 5.0 / 11.0;
  const OracleFrame frame = oracle_render(scene, camera, pose, t, kFastK);

  int interior = 0;
  for (int v = 1; v < camera.height - 1; ++v) {
    for (int u = 1; u < camera.width - 1; ++u) {
      // Erode the mask by one pixel to skip silhouette blends.
      bool all = true;
      for (int dv = -1; dv <= 1; ++dv)
        for (int du = -1; du <= 1; ++du)
          all = all && frame.mask(pixel_index(camera, u + du, v + dv)) == 1.0;
      if (!all) continue;
      ++interior;
      EXPECT_TRUE(frame.image.col(pixel_index(camera, u, v))
                      .isApprox(Vector3d(0.85, 0.25, 0.25), 1e-6));
    }
  }
  EXPECT_GT(interior, 20);
}

// ---------------------------------------------------------------------------
// Dataset assembly
// ---------------------------------------------------------------------------

TEST(MakeDataset, EmitsDistinctPosesAndEvenTimestamps) {
  TrajectoryConfig traj = default_trajectory();
  traj.width = traj.height = 16;  // keep the oracle cheap; geometry unchanged
  traj.focal = 16.0;
  const Dataset dataset = make_dataset(default_scene(), traj, kFastK);

  ASSERT_EQ(dataset.frames.size(), 12u);
  for (int n = 0; n < 12; ++n) {
    EXPECT_NEAR(dataset.frames[n].timestamp, n / 11.0, 1e-15);
    for (int m = n + 1; m < 12; ++m)
      EXPECT_GT((dataset.frames[n].pose.translation - dataset.frames[m].pose.translation).norm(),
                1e-6);
  }
  EXPECT_DOUBLE_EQ(dataset.frame_step, 1.0 / 11.0);
  EXPECT_EQ(dataset.camera.width, 16);
}

TEST(MakeDataset, RegenerationIsBitIdentical) {
  TrajectoryConfig traj = default_trajectory();
  traj.width = traj.height = 16;
  traj.focal = 16.0;
  const Dataset a = make_dataset(default_scene(), traj, kFastK);
  const Dataset b = make_dataset(default_scene(), traj, kFastK);
  for (size_t n = 0; n < a.frames.size(); ++n) {
    EXPECT_EQ(a.frames[n].image, b.frames[n].image);
    EXPECT_EQ(a.frames[n].depth_gt, b.frames[n].depth_gt);
    EXPECT_EQ(a.frames[n].mask, b.frames[n].mask);
    EXPECT_EQ(a.frames[n].flow_fwd_gt, b.frames[n].flow_fwd_gt);
  }
}

TEST(MakeDataset, EveryFrameSeesTheMover) {
  TrajectoryConfig traj = default_trajectory();
  traj.width = traj.height = 32;
  traj.focal = 32.0;
  const Dataset dataset = make_dataset(default_scene(), traj, kFastK);
  for (const Frame& frame : dataset.frames) {
    EXPECT_GT(frame.mask.sum(), 8.0);
    // Flow ground truth is present exactly on the mask.
    for (long pix = 0; pix < frame.mask.cols(); ++pix) {
      if (frame.mask(pix) == 0.0) {
        EXPECT_EQ(frame.flow_fwd_gt.col(pix), Vector3d::Zero());
      }
    }
  }
}

TEST(MakeDataset, MaskDepthFlowAreMutuallyConsistent) {
  // Warping an interior mover pixel's surface point by the ground-truth flow
  // and projecting into the next frame lands inside the next frame's mask.
  const TrajectoryConfig traj = default_trajectory();
  const Dataset dataset = make_dataset(default_scene(), traj, 512);
  const Camera& camera = dataset.camera;

  for (int n : {2, 6, 9}) {
    const Frame& frame = dataset.frames[n];
    const Frame& next = dataset.frames[n + 1];
    int checked = 0;
    for (int v = 2; v < camera.height - 2; ++v) {
      for (int u = 2; u < camera.width - 2; ++u) {
        // Erode by two pixels: silhouette-adjacent surface points legitimately
        // land within rounding distance of the next frame's silhouette.
        bool interior = true;
        for (int dv = -2; dv <= 2 && interior; ++dv)
          for (int du = -2; du <= 2; ++du)
            interior = interior && frame.mask(pixel_index(camera, u + du, v + dv)) == 1.0;
        if (!interior) continue;
        const long pix = pixel_index(camera, u, v);
        const Ray ray = camera_ray(camera, frame.pose, u, v);
        const Vector3d x = ray.origin + frame.depth_gt(pix) * ray.direction;
        const Vector3d warped = x + frame.flow_fwd_gt.col(pix);
        const Projection proj = project(camera, next.pose, warped);
        const int pu = static_cast<int>(std::lround(proj.u));
        const int pv = static_cast<int>(std::lround(proj.v));
        ASSERT_GE(pu, 0);
        ASSERT_LT(pu, camera.width);
        EXPECT_EQ(next.mask(pixel_index(camera, pu, pv)), 1.0)
            << "frame " << n << " pixel " << u << "," << v;
        ++checked;
      }
    }
    EXPECT_GT(checked, 20) << "frame " << n;
  }
}

TEST(MakeDataset, RejectsFrustumEscapes) {
  SyntheticScene scene = default_scene();
  scene.mover.trajectory = {Vector3d(-4.0, 0, 0), Vector3d(8.0, 0, 0)};  // sweeps too wide
  TrajectoryConfig traj = default_trajectory();
  traj.width = traj.height = 16;
  traj.focal = 16.0;
  EXPECT_THROW(make_dataset(scene, traj, kFastK), std::invalid_argument);
}

TEST(SceneValidation, RejectsTranslucentBodies) {
  SyntheticScene scene = default_scene();
  scene.sigma_solid = 10.0;  // 10 * 0.15 slab = 1.5 < 5
  EXPECT_THROW(scene.validate(), std::invalid_argument);
  scene = default_scene();
  EXPECT_NO_THROW(scene.validate());
}

TEST(SceneValidation, RejectsScalingBoxes) {
  SyntheticScene scene = box_scene();
  scene.mover.radius_scale = {1.0, 0.5};
  EXPECT_THROW(scene.validate(), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// Box mover
// ---------------------------------------------------------------------------

TEST(BoxScene, AnalyticBoxIntersectionsDriveTheMask) {
  SyntheticScene scene = box_scene();
  scene.mover.trajectory = {Vector3d::Zero()};
  const TrajectoryConfig traj = default_trajectory();
  const Camera camera = traj.camera();
  const Pose pose = traj.pose_for_frame(5);
  const OracleFrame frame = oracle_render(scene, camera, pose, 0.5, kFastK);

  // The box straddles the optical center: the central pixel is mover, a pixel
  // far outside the projected footprint is background.
  const int cu = camera.width / 2, cv = camera.height / 2;
  EXPECT_EQ(frame.mask(pixel_index(camera, cu, cv)), 1.0);
  EXPECT_EQ(frame.mask(pixel_index(camera, 2, 2)), 0.0);
  // Its silhouette colors come from the box texture, not the plane.
  const Vector3d center_color = frame.image.col(pixel_index(camera, cu, cv));
  EXPECT_GT(center_color.maxCoeff(), 0.1);
}
