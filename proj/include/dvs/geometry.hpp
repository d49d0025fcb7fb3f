#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <string>

#include "dvs/autodiff.hpp"

namespace dvs {

/// Pinhole intrinsics. Pixel coordinates run u in [0, width-1], v in
/// [0, height-1]; rays pass through integer pixel coordinates (no half-pixel
/// offset).
struct Camera {
  double fx = 0, fy = 0, cx = 0, cy = 0;
  int width = 0, height = 0;

  void validate() const {
    if (fx <= 0 || fy <= 0) throw std::invalid_argument("Camera: focal lengths must be > 0");
    if (cx < 0 || cx >= width || cy < 0 || cy >= height)
      throw std::invalid_argument("Camera: principal point outside image");
  }
};

/// Camera-to-world rigid transform: X_world = rotation * X_cam + translation.
/// The camera center in world coordinates is `translation`. Camera axes:
/// x right, y down (image v direction), z forward (viewing direction).
struct Pose {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  static Pose identity() { return {}; }

  void validate(double tol = 1e-6) const {
    if (((rotation.transpose() * rotation) - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() >
        tol)
      throw std::invalid_argument("Pose: rotation not orthonormal");
    if (std::abs(rotation.determinant() - 1.0) > tol)
      throw std::invalid_argument("Pose: rotation determinant != 1");
  }

  Eigen::Vector3d to_world(const Eigen::Vector3d& x_cam) const {
    return rotation * x_cam + translation;
  }
  Eigen::Vector3d to_camera(const Eigen::Vector3d& x_world) const {
    return rotation.transpose() * (x_world - translation);
  }
  Pose inverse() const { return {rotation.transpose(), -(rotation.transpose() * translation)}; }
};

/// Builds the pose of a camera at `eye` looking toward `target`; `up` fixes
/// the roll (world direction that should point toward the top of the image).
inline Pose look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target,
                    const Eigen::Vector3d& up = Eigen::Vector3d(0, 1, 0)) {
  const Eigen::Vector3d forward = (target - eye).normalized();
  Eigen::Vector3d right = up.cross(forward);
  if (right.norm() < 1e-9)
    throw std::invalid_argument("look_at: view direction parallel to up");
  right.normalize();
  const Eigen::Vector3d down = forward.cross(right);  // camera y (image v grows down)
  Pose pose;
  pose.rotation.col(0) = right;
  pose.rotation.col(1) = down;
  pose.rotation.col(2) = forward;
  pose.translation = eye;
  return pose;
}

struct Ray {
  Eigen::Vector3d origin = Eigen::Vector3d::Zero();
  Eigen::Vector3d direction = Eigen::Vector3d::UnitZ();
  double near = 0, far = 1;

  void validate() const {
    if (std::abs(direction.norm() - 1.0) > 1e-6)
      throw std::invalid_argument("Ray: direction not unit-norm");
    if (near < 0 || near >= far) throw std::invalid_argument("Ray: need 0 <= near < far");
  }
};

/// A square pixel window: rows/cols at u0 + i*stride, v0 + j*stride.
struct PixelPatch {
  int u0 = 0, v0 = 0;
  int size = 1;    // P: patch is P x P pixels
  int stride = 1;  // image pixels between adjacent patch pixels

  int pixel_count() const { return size * size; }
  int u_at(int idx) const { return u0 + (idx % size) * stride; }
  int v_at(int idx) const { return v0 + (idx / size) * stride; }

  void validate(const Camera& cam) const {
    if (size < 1 || stride < 1) throw std::invalid_argument("PixelPatch: size/stride must be >= 1");
    const int u_max = u0 + (size - 1) * stride, v_max = v0 + (size - 1) * stride;
    if (u0 < 0 || v0 < 0 || u_max >= cam.width || v_max >= cam.height)
      throw std::invalid_argument("PixelPatch: outside image bounds");
  }
};

class behind_camera_error : public std::domain_error {
 public:
  explicit behind_camera_error(double z)
      : std::domain_error("point behind camera (z = " + std::to_string(z) + ")") {}
};

/// World-frame ray through pixel (u, v). near/far are left at the Ray
/// defaults; callers set scene bounds.
inline Ray camera_ray(const Camera& cam, const Pose& pose, double u, double v) {
  if (u < 0 || u > cam.width - 1 || v < 0 || v > cam.height - 1)
    throw std::domain_error("camera_ray: pixel outside image bounds");
  const Eigen::Vector3d dir_cam((u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, 1.0);
  Ray ray;
  ray.origin = pose.translation;
  ray.direction = (pose.rotation * dir_cam).normalized();
  return ray;
}

struct Projection {
  double u = 0, v = 0;
  double z = 0;  // camera-frame depth, for visibility tests
};

/// Projects a world point into the camera; throws when it lies behind the
/// image plane.
inline Projection project(const Camera& cam, const Pose& pose, const Eigen::Vector3d& x_world) {
  const Eigen::Vector3d x_cam = pose.to_camera(x_world);
  if (x_cam.z() <= 0) throw behind_camera_error(x_cam.z());
  return {cam.fx * x_cam.x() / x_cam.z() + cam.cx, cam.fy * x_cam.y() / x_cam.z() + cam.cy,
          x_cam.z()};
}

/// Result of inverse-warping a rendered patch: colors zeroed outside the
/// validity mask, plus the mask itself (1 = reprojection landed inside the
/// rendered patch with positive depth).
struct WarpResult {
  ad::Var colors;            // 3 x P^2
  Eigen::RowVectorXd mask;   // 1 x P^2, entries in {0, 1}
};

/// Inverse warp for the patch-based multi-view constraint: every pixel of the
/// source-view patch is lifted to 3D along its own ray by `depth_patch` (ray
/// distances, matching the renderer's expected depth), reprojected into
/// `render_pose`, and `rendered_patch` (a patch rendered over the same pixel
/// window at that pose) is bilinearly sampled there. Gradients flow through
/// both the sampled colors and the depth; pass a detached depth to cut the
/// geometry path.
inline WarpResult inverse_warp(const ad::Var& rendered_patch, const ad::Var& depth_patch,
                               const Pose& render_pose, const Pose& source_pose,
                               const Camera& camera, const PixelPatch& patch) {
  const int m = patch.pixel_count();
  if (rendered_patch.rows() != 3 || rendered_patch.cols() != m)
    throw std::invalid_argument("inverse_warp: rendered_patch must be 3 x P^2");
  if (depth_patch.rows() != 1 || depth_patch.cols() != m)
    throw std::invalid_argument("inverse_warp: depth_patch must be 1 x P^2");

  // Unit ray directions through the source patch pixels (world frame).
  Eigen::MatrixXd dirs(3, m);
  for (int j = 0; j < m; ++j)
    dirs.col(j) = camera_ray(camera, source_pose, patch.u_at(j), patch.v_at(j)).direction;

  // Lift: X = o_source + D * dir. Then into the render camera's frame.
  const ad::Var points = ad::add_bias(ad::mul_rows(ad::Var::constant(dirs), depth_patch),
                                      ad::Var::constant(source_pose.translation));
  const Eigen::Matrix3d r_t = render_pose.rotation.transpose();
  const ad::Var x_cam = ad::add_bias(ad::matmul(ad::Var::constant(Eigen::MatrixXd(r_t)), points),
                                     ad::Var::constant(-(r_t * render_pose.translation)));

  const ad::Var x = ad::rows(x_cam, 0, 1);
  const ad::Var y = ad::rows(x_cam, 1, 1);
  const ad::Var z = ad::rows(x_cam, 2, 1);
  const ad::Var z_safe = ad::clamp_min(z, 1e-9);
  const ad::Var u_img = ad::add_scalar(ad::scale(ad::div(x, z_safe), camera.fx), camera.cx);
  const ad::Var v_img = ad::add_scalar(ad::scale(ad::div(y, z_safe), camera.fy), camera.cy);

  // Patch-local sampling coordinates into the rendered patch grid.
  const double inv_stride = 1.0 / patch.stride;
  const ad::Var u_loc = ad::scale(ad::add_scalar(u_img, -patch.u0), inv_stride);
  const ad::Var v_loc = ad::scale(ad::add_scalar(v_img, -patch.v0), inv_stride);

  // A hair of slack keeps border pixels valid under the identity warp, where
  // roundoff can put an exact-border coordinate at -1e-16.
  constexpr double kBoundsEps = 1e-9;
  Eigen::RowVectorXd mask(m);
  for (int j = 0; j < m; ++j) {
    const bool in_front = z.val()(0, j) > 0;
    const double ul = u_loc.val()(0, j), vl = v_loc.val()(0, j);
    const bool inside = ul >= -kBoundsEps && ul <= patch.size - 1 + kBoundsEps &&
                        vl >= -kBoundsEps && vl <= patch.size - 1 + kBoundsEps;
    mask(j) = (in_front && inside) ? 1.0 : 0.0;
  }

  const ad::Var sampled = ad::bilinear_sample(rendered_patch, ad::vcat({u_loc, v_loc}),
                                              patch.size, patch.size);
  WarpResult out;
  out.colors = ad::mul_rows(sampled, ad::Var::constant(Eigen::MatrixXd(mask)));
  out.mask = mask;
  return out;
}

}  // namespace dvs
