#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dvs/geometry.hpp"
#include "dvs/rng.hpp"
#include "dvs/synthscene.hpp"

namespace dvs {

constexpr double kPsnrCap = 99.0;

namespace detail {

inline void check_same_shape(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument("metrics: image shape mismatch");
}

inline double mse_to_psnr(double mse) {
  if (mse <= 0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

}  // namespace detail

/// 10 log10(1 / MSE) over all channels of [0,1] images, capped at 99 dB.
inline double psnr(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  detail::check_same_shape(a, b);
  return detail::mse_to_psnr((a - b).squaredNorm() / static_cast<double>(a.size()));
}

/// PSNR restricted to mask = 1 pixels (all channels of those pixels).
inline double psnr_masked(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                          const Eigen::RowVectorXd& mask) {
  detail::check_same_shape(a, b);
  if (mask.cols() != a.cols()) throw std::invalid_argument("psnr_masked: mask size mismatch");
  double sum = 0.0;
  long count = 0;
  for (long pix = 0; pix < mask.cols(); ++pix) {
    if (mask(pix) == 0.0) continue;
    sum += (a.col(pix) - b.col(pix)).squaredNorm();
    count += a.rows();
  }
  if (count == 0) return kPsnrCap;
  return detail::mse_to_psnr(sum / static_cast<double>(count));
}

namespace detail {

inline Eigen::VectorXd ssim_gaussian_kernel() {
  Eigen::VectorXd g(11);
  const double sigma = 1.5;
  for (int i = 0; i < 11; ++i) {
    const double d = i - 5.0;
    g(i) = std::exp(-d * d / (2.0 * sigma * sigma));
  }
  return g / g.sum();
}

using ImageGrid = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Separable 11x11 "valid" convolution: output is (H-10) x (W-10).
inline ImageGrid conv_valid(const ImageGrid& img, const Eigen::VectorXd& g) {
  const long h = img.rows(), w = img.cols();
  ImageGrid horiz(h, w - 10);
  horiz.setZero();
  for (int k = 0; k < 11; ++k) horiz += g(k) * img.middleCols(k, w - 10);
  ImageGrid out(h - 10, w - 10);
  out.setZero();
  for (int k = 0; k < 11; ++k) out += g(k) * horiz.middleRows(k, h - 10);
  return out;
}

/// Per-pixel SSIM map for one channel over the valid (fully-windowed) region.
inline ImageGrid ssim_map(const ImageGrid& a, const ImageGrid& b) {
  constexpr double kC1 = 0.01 * 0.01;
  constexpr double kC2 = 0.03 * 0.03;
  const Eigen::VectorXd g = ssim_gaussian_kernel();
  const ImageGrid mu_a = conv_valid(a, g);
  const ImageGrid mu_b = conv_valid(b, g);
  const ImageGrid var_a = conv_valid(a.cwiseProduct(a), g) - mu_a.cwiseProduct(mu_a);
  const ImageGrid var_b = conv_valid(b.cwiseProduct(b), g) - mu_b.cwiseProduct(mu_b);
  const ImageGrid cov = conv_valid(a.cwiseProduct(b), g) - mu_a.cwiseProduct(mu_b);
  const ImageGrid numer = (2.0 * mu_a.cwiseProduct(mu_b).array() + kC1).matrix().cwiseProduct(
      (2.0 * cov.array() + kC2).matrix());
  const ImageGrid denom =
      (mu_a.cwiseProduct(mu_a).array() + mu_b.cwiseProduct(mu_b).array() + kC1)
          .matrix()
          .cwiseProduct((var_a.array() + var_b.array() + kC2).matrix());
  return numer.cwiseQuotient(denom);
}

inline ImageGrid to_grid(const Eigen::MatrixXd& img, int channel, int width, int height) {
  ImageGrid grid(height, width);
  for (int v = 0; v < height; ++v)
    for (int u = 0; u < width; ++u) grid(v, u) = img(channel, static_cast<long>(v) * width + u);
  return grid;
}

/// Channel-averaged mean of the SSIM map over an optional pixel predicate on
/// valid window centers; returns 1 when no window qualifies.
inline double ssim_mean(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, int width,
                        int height, const Eigen::RowVectorXd* mask) {
  check_same_shape(a, b);
  if (static_cast<long>(width) * height != a.cols())
    throw std::invalid_argument("ssim: image size does not match width*height");
  if (width < 11 || height < 11)
    throw std::invalid_argument("ssim: images must be at least 11x11");
  double total = 0.0;
  for (int c = 0; c < 3; ++c) {
    const ImageGrid map = ssim_map(to_grid(a, c, width, height), to_grid(b, c, width, height));
    double sum = 0.0;
    long count = 0;
    for (long r = 0; r < map.rows(); ++r) {
      for (long col = 0; col < map.cols(); ++col) {
        // Window center in image coordinates.
        const long pix = (r + 5) * width + (col + 5);
        if (mask && (*mask)(pix) == 0.0) continue;
        sum += map(r, col);
        ++count;
      }
    }
    total += count ? sum / static_cast<double>(count) : 1.0;
  }
  return total / 3.0;
}

}  // namespace detail

/// Mean local SSIM: 11x11 Gaussian window (sigma 1.5), C1 = 0.01^2,
/// C2 = 0.03^2, averaged over the three channels. Windows that would leave
/// the image are skipped ("valid" convolution).
inline double ssim(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, int width, int height) {
  return detail::ssim_mean(a, b, width, height, nullptr);
}

/// SSIM with windows centered on mask = 1 pixels only.
inline double ssim_masked(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, int width,
                          int height, const Eigen::RowVectorXd& mask) {
  if (mask.cols() != a.cols()) throw std::invalid_argument("ssim_masked: mask size mismatch");
  return detail::ssim_mean(a, b, width, height, &mask);
}

struct MaskedMetrics {
  double psnr = 0.0;
  double ssim = 0.0;
};

/// PSNR/SSIM over the dynamic region only.
inline MaskedMetrics masked_metrics(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                                    int width, int height, const Eigen::RowVectorXd& mask) {
  return {psnr_masked(a, b, mask), ssim_masked(a, b, width, height, mask)};
}

/// Mean Euclidean norm of the per-pixel 3D flow error over mask = 1 pixels.
inline double flow_epe(const Eigen::MatrixXd& predicted, const Eigen::MatrixXd& gt,
                       const Eigen::RowVectorXd& mask) {
  detail::check_same_shape(predicted, gt);
  if (mask.cols() != predicted.cols()) throw std::invalid_argument("flow_epe: mask mismatch");
  double sum = 0.0;
  long count = 0;
  for (long pix = 0; pix < mask.cols(); ++pix) {
    if (mask(pix) == 0.0) continue;
    sum += (predicted.col(pix) - gt.col(pix)).norm();
    ++count;
  }
  return count ? sum / static_cast<double>(count) : 0.0;
}

/// Root-mean-square depth error (world units) over mask = 1 pixels.
inline double depth_rmse(const Eigen::RowVectorXd& predicted, const Eigen::RowVectorXd& gt,
                         const Eigen::RowVectorXd& mask) {
  if (predicted.cols() != gt.cols() || predicted.cols() != mask.cols())
    throw std::invalid_argument("depth_rmse: size mismatch");
  double sum = 0.0;
  long count = 0;
  for (long pix = 0; pix < mask.cols(); ++pix) {
    if (mask(pix) == 0.0) continue;
    const double e = predicted(pix) - gt(pix);
    sum += e * e;
    ++count;
  }
  return count ? std::sqrt(sum / static_cast<double>(count)) : 0.0;
}

// ---------------------------------------------------------------------------
// PCK-T keypoint transfer
// ---------------------------------------------------------------------------

/// Seeded sample of up to `max_keypoints` distinct mask = 1 pixels
/// (partial Fisher-Yates over the mask's pixel list).
inline std::vector<std::pair<int, int>> sample_mask_keypoints(const Eigen::RowVectorXd& mask,
                                                              int width, int height,
                                                              int max_keypoints,
                                                              std::uint64_t seed) {
  std::vector<long> candidates;
  for (long pix = 0; pix < static_cast<long>(width) * height; ++pix)
    if (mask(pix) == 1.0) candidates.push_back(pix);
  Rng rng = derive_rng(seed, {0x706b63u});  // stream tag: "pck"
  const int take = std::min<int>(max_keypoints, static_cast<int>(candidates.size()));
  for (int i = 0; i < take; ++i) {
    const long j = i + static_cast<long>(rng.uniform_index(candidates.size() - i));
    std::swap(candidates[i], candidates[j]);
  }
  std::vector<std::pair<int, int>> keypoints;
  keypoints.reserve(take);
  for (int i = 0; i < take; ++i)
    keypoints.emplace_back(static_cast<int>(candidates[i] % width),
                           static_cast<int>(candidates[i] / width));
  return keypoints;
}

/// Maps a frame-t pixel to its predicted warped 3D surface point (the
/// model's surface point plus its predicted scene flow to t + dt).
using WarpPredictor = std::function<Eigen::Vector3d(int u, int v)>;

/// Fraction of sampled dynamic-mask keypoints whose predicted transfer into
/// the next frame lands within alpha * max(W, H) pixels of the ground-truth
/// correspondence (surface from gt depth, warped by gt flow).
inline double pck_t(const WarpPredictor& predictor, const Camera& camera, const Frame& frame,
                    const Frame& next_frame, double alpha = 0.05, int max_keypoints = 200,
                    std::uint64_t seed = 0) {
  if (!(alpha > 0)) throw std::invalid_argument("pck_t: alpha must be positive");
  const auto keypoints =
      sample_mask_keypoints(frame.mask, camera.width, camera.height, max_keypoints, seed);
  if (keypoints.empty()) return 0.0;
  const double threshold = alpha * std::max(camera.width, camera.height);

  int correct = 0;
  for (const auto& [u, v] : keypoints) {
    const long pix = static_cast<long>(v) * camera.width + u;
    const Ray ray = camera_ray(camera, frame.pose, u, v);
    const Eigen::Vector3d surface = ray.origin + frame.depth_gt(pix) * ray.direction;
    const Eigen::Vector3d gt_warped = surface + frame.flow_fwd_gt.col(pix);
    const Projection gt_px = project(camera, next_frame.pose, gt_warped);
    try {
      const Projection pred_px = project(camera, next_frame.pose, predictor(u, v));
      const double du = pred_px.u - gt_px.u;
      const double dv = pred_px.v - gt_px.v;
      if (std::sqrt(du * du + dv * dv) <= threshold) ++correct;
    } catch (const behind_camera_error&) {
      // A transfer behind the camera counts as incorrect.
    }
  }
  return static_cast<double>(correct) / static_cast<double>(keypoints.size());
}

// ---------------------------------------------------------------------------
// Evaluation report
// ---------------------------------------------------------------------------

/// Per-frame metric row; NaN marks metrics that do not apply to the frame
/// (e.g. PCK-T on the last frame, which has no forward neighbor).
struct FrameMetrics {
  int frame = 0;
  double psnr = 0, ssim = 0;
  double masked_psnr = 0, masked_ssim = 0;
  double pck_t = std::numeric_limits<double>::quiet_NaN();
  double flow_epe = std::numeric_limits<double>::quiet_NaN();
  double depth_rmse = 0;
};

struct EvalReport {
  std::vector<FrameMetrics> frames;
  double mean_psnr = 0, mean_ssim = 0;
  double mean_masked_psnr = 0, mean_masked_ssim = 0;
  double mean_pck_t = std::numeric_limits<double>::quiet_NaN();
  double mean_flow_epe = std::numeric_limits<double>::quiet_NaN();
  double mean_depth_rmse = 0;

  /// Means over the frames where each metric is defined.
  void compute_means() {
    const auto mean_of = [this](double FrameMetrics::* field) {
      double sum = 0;
      int count = 0;
      for (const FrameMetrics& fm : frames) {
        if (std::isnan(fm.*field)) continue;
        sum += fm.*field;
        ++count;
      }
      return count ? sum / count : std::numeric_limits<double>::quiet_NaN();
    };
    mean_psnr = mean_of(&FrameMetrics::psnr);
    mean_ssim = mean_of(&FrameMetrics::ssim);
    mean_masked_psnr = mean_of(&FrameMetrics::masked_psnr);
    mean_masked_ssim = mean_of(&FrameMetrics::masked_ssim);
    mean_pck_t = mean_of(&FrameMetrics::pck_t);
    mean_flow_epe = mean_of(&FrameMetrics::flow_epe);
    mean_depth_rmse = mean_of(&FrameMetrics::depth_rmse);
  }

  void validate() const {
    for (const FrameMetrics& fm : frames) {
      if (fm.psnr > kPsnrCap + 1e-9 || fm.masked_psnr > kPsnrCap + 1e-9)
        throw std::logic_error("EvalReport: PSNR above cap");
      if (fm.ssim < -1 - 1e-9 || fm.ssim > 1 + 1e-9 || fm.masked_ssim < -1 - 1e-9 ||
          fm.masked_ssim > 1 + 1e-9)
        throw std::logic_error("EvalReport: SSIM out of [-1,1]");
      if (!std::isnan(fm.pck_t) && (fm.pck_t < 0 || fm.pck_t > 1))
        throw std::logic_error("EvalReport: PCK-T out of [0,1]");
    }
  }
};

namespace detail {

inline std::string metric_str(double v) {
  if (std::isnan(v)) return "n/a";
  std::ostringstream out;
  out.precision(6);
  out << v;
  return out.str();
}

}  // namespace detail

/// One block per frame plus a summary block.
inline std::string report_to_text(const EvalReport& report) {
  std::ostringstream out;
  for (const FrameMetrics& fm : report.frames) {
    out << "frame " << fm.frame << "\n"
        << "  psnr         " << detail::metric_str(fm.psnr) << "\n"
        << "  ssim         " << detail::metric_str(fm.ssim) << "\n"
        << "  masked_psnr  " << detail::metric_str(fm.masked_psnr) << "\n"
        << "  masked_ssim  " << detail::metric_str(fm.masked_ssim) << "\n"
        << "  pck_t        " << detail::metric_str(fm.pck_t) << "\n"
        << "  flow_epe     " << detail::metric_str(fm.flow_epe) << "\n"
        << "  depth_rmse   " << detail::metric_str(fm.depth_rmse) << "\n";
  }
  out << "summary\n"
      << "  mean_psnr         " << detail::metric_str(report.mean_psnr) << "\n"
      << "  mean_ssim         " << detail::metric_str(report.mean_ssim) << "\n"
      << "  mean_masked_psnr  " << detail::metric_str(report.mean_masked_psnr) << "\n"
      << "  mean_masked_ssim  " << detail::metric_str(report.mean_masked_ssim) << "\n"
      << "  mean_pck_t        " << detail::metric_str(report.mean_pck_t) << "\n"
      << "  mean_flow_epe     " << detail::metric_str(report.mean_flow_epe) << "\n"
      << "  mean_depth_rmse   " << detail::metric_str(report.mean_depth_rmse) << "\n";
  return out.str();
}

/// Machine-readable table: one CSV row per frame plus a "mean" row.
inline std::string report_to_csv(const EvalReport& report) {
  std::ostringstream out;
  out << "frame,psnr,ssim,masked_psnr,masked_ssim,pck_t,flow_epe,depth_rmse\n";
  const auto row = [&out](const std::string& label, double p, double s, double mp, double ms,
                          double pck, double epe, double rmse) {
    out << label << ',' << detail::metric_str(p) << ',' << detail::metric_str(s) << ','
        << detail::metric_str(mp) << ',' << detail::metric_str(ms) << ','
        << detail::metric_str(pck) << ',' << detail::metric_str(epe) << ','
        << detail::metric_str(rmse) << "\n";
  };
  for (const FrameMetrics& fm : report.frames)
    row(std::to_string(fm.frame), fm.psnr, fm.ssim, fm.masked_psnr, fm.masked_ssim, fm.pck_t,
        fm.flow_epe, fm.depth_rmse);
  row("mean", report.mean_psnr, report.mean_ssim, report.mean_masked_psnr,
      report.mean_masked_ssim, report.mean_pck_t, report.mean_flow_epe,
      report.mean_depth_rmse);
  return out.str();
}

}  // namespace dvs
