#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dvs/config.hpp"
#include "dvs/dataset_io.hpp"
#include "dvs/image.hpp"
#include "dvs/metrics.hpp"
#include "dvs/synthscene.hpp"
#include "dvs/trainer.hpp"

namespace dvs {

// ---------------------------------------------------------------------------
// Full-frame inference rendering (chunked so peak memory stays bounded)
// ---------------------------------------------------------------------------

struct FrameRender {
  Eigen::MatrixXd color;       // 3 x WH
  Eigen::RowVectorXd depth;    // 1 x WH expected termination distance
  Eigen::RowVectorXd opacity;  // 1 x WH
  Eigen::RowVectorXd p_hat;    // 1 x WH blending weight (zero in static mode)
  Eigen::MatrixXd flow_fwd;    // 3 x WH forward scene flow at the termination point
};

/// Deterministic (midpoint-sampled) render of every pixel. Freeze the field
/// parameters first so the forward passes skip graph construction.
inline FrameRender render_frame(const StaticField& sfield, const DynamicField& dfield,
                                const Camera& camera, const Pose& pose, double t,
                                RenderMode mode, int K, double near, double far,
                                int chunk_rays = 256) {
  constexpr double kEps = 1e-9;
  const long pixels = static_cast<long>(camera.width) * camera.height;
  FrameRender out;
  out.color = Eigen::MatrixXd::Zero(3, pixels);
  out.depth = Eigen::RowVectorXd::Zero(pixels);
  out.opacity = Eigen::RowVectorXd::Zero(pixels);
  out.p_hat = Eigen::RowVectorXd::Zero(pixels);
  out.flow_fwd = Eigen::MatrixXd::Zero(3, pixels);
  const auto midpoint_rng = [](long) { return Rng(0); };

  for (long start = 0; start < pixels; start += chunk_rays) {
    const long count = std::min<long>(chunk_rays, pixels - start);
    std::vector<Ray> rays;
    std::vector<double> ts(count, t);
    for (long i = 0; i < count; ++i) {
      const long pix = start + i;
      Ray ray = camera_ray(camera, pose, static_cast<int>(pix % camera.width),
                           static_cast<int>(pix / camera.width));
      ray.near = near;
      ray.far = far;
      rays.push_back(ray);
    }
    const SampleBatch batch = make_sample_batch(rays, ts, K, /*stratified=*/false, midpoint_rng);

    if (mode == RenderMode::kStatic) {
      const RenderVars rv = render_static_batch(sfield, batch);
      out.color.middleCols(start, count) = rv.color.val();
      out.depth.segment(start, count) = rv.depth.val().row(0);
      out.opacity.segment(start, count) = rv.opacity.val().row(0);
    } else if (mode == RenderMode::kDynamic) {
      const DynamicOutput at_d =
          dfield.query(ad::Var::constant(batch.x), ad::Var::constant(batch.dirs),
                       ad::Var::constant(Eigen::MatrixXd(batch.t)));
      const RenderVars rv =
          render_from(at_d.sigma, at_d.color, ad::Var::constant(batch.x),
                      ad::Var::constant(Eigen::MatrixXd(batch.s)),
                      ad::Var::constant(Eigen::MatrixXd(batch.delta)), batch.K);
      out.color.middleCols(start, count) = rv.color.val();
      out.depth.segment(start, count) = rv.depth.val().row(0);
      out.opacity.segment(start, count) = rv.opacity.val().row(0);
      const ad::Var p_ray = ad::div(ad::sum_segments(ad::mul(rv.weights, at_d.p), batch.K),
                                    ad::add_scalar(rv.opacity, kEps));
      out.p_hat.segment(start, count) = p_ray.val().row(0);
    } else {
      const CompositeRender comp = render_composite_batch(sfield, dfield, batch);
      out.color.middleCols(start, count) = comp.full.color.val();
      out.depth.segment(start, count) = comp.full.depth.val().row(0);
      out.opacity.segment(start, count) = comp.full.opacity.val().row(0);
      out.p_hat.segment(start, count) = comp.p_hat.val().row(0);
    }

    if (mode != RenderMode::kStatic) {
      // Forward scene flow queried at each ray's expected termination point.
      Eigen::MatrixXd surface(3, count), dirs(3, count);
      Eigen::MatrixXd ts_row(1, count);
      for (long i = 0; i < count; ++i) {
        surface.col(i) = rays[i].origin + out.depth(start + i) * rays[i].direction;
        dirs.col(i) = rays[i].direction;
        ts_row(0, i) = t;
      }
      const DynamicOutput at_surface =
          dfield.query(ad::Var::constant(surface), ad::Var::constant(dirs),
                       ad::Var::constant(ts_row));
      out.flow_fwd.middleCols(start, count) = at_surface.flow_fwd.val();
    }
  }
  return out;
}

namespace detail {

inline void freeze(TrainState& state) {
  state.static_field.params().set_requires_grad(false);
  state.dynamic_field.params().set_requires_grad(false);
}

inline TrainState state_from_checkpoint_file(const std::string& path) {
  if (path.empty())
    throw std::invalid_argument("command: io.checkpoint is required for this command");
  return from_checkpoint(load_checkpoint(path));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// gen-scene
// ---------------------------------------------------------------------------

inline void cmd_gen_scene(const RunConfig& cfg) {
  cfg.validate();
  const Dataset data = make_dataset(cfg.scene, cfg.trajectory, cfg.oracle_k);
  write_dataset(data, cfg.io.dataset_dir);
  std::cout << "gen-scene: wrote " << data.frames.size() << " frames to " << cfg.io.dataset_dir
            << "\n";
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

inline TrainState cmd_train(const RunConfig& cfg) {
  cfg.validate();
  const Dataset data = load_dataset(cfg.io.dataset_dir);
  std::filesystem::create_directories(cfg.io.out_dir);
  TrainConfig tcfg = cfg.train;
  tcfg.seed = cfg.seed;

  const bool resuming = !cfg.io.checkpoint.empty();
  std::ofstream log(cfg.io.out_dir + "/train.log",
                    resuming ? std::ios::app : std::ios::trunc);
  if (!log) throw std::runtime_error("train: cannot write " + cfg.io.out_dir + "/train.log");

  TrainHooks hooks;
  hooks.on_log = [&log](const TrainState& state, const LossReport& rep) {
    log << log_line(state, rep) << "\n";
    log.flush();
  };
  hooks.on_checkpoint = [&cfg](const TrainState& state) {
    const Checkpoint ckpt = to_checkpoint(state);
    save_checkpoint(cfg.io.out_dir + "/checkpoint_s" + std::to_string(state.stage) + "_i" +
                        std::to_string(state.iteration) + ".ckpt",
                    ckpt);
    save_checkpoint(cfg.io.out_dir + "/checkpoint_latest.ckpt", ckpt);
  };

  TrainState state = resuming ? detail::state_from_checkpoint_file(cfg.io.checkpoint)
                              : TrainState(cfg.field, cfg.seed);
  if (resuming && state.seed != cfg.seed)
    throw std::invalid_argument("train: checkpoint seed does not match the config seed");
  if (state.stage == 1) {
    run_static_stage(state, data, tcfg, cfg.weights, hooks);
    state.begin_dynamic_stage();
  }
  run_dynamic_stage(state, data, tcfg, cfg.weights, hooks);
  save_checkpoint(cfg.io.out_dir + "/checkpoint_final.ckpt", to_checkpoint(state));
  std::cout << "train: finished stage 2 iteration " << state.iteration << ", final loss "
            << state.last_report.total << "\n";
  return state;
}

// ---------------------------------------------------------------------------
// render
// ---------------------------------------------------------------------------

/// Projects per-pixel 3D scene flow into 2D pixel displacements at the given
/// view; pixels outside the blending mask (or behind the camera) are zeroed.
inline Eigen::MatrixXd project_flow_2d(const Camera& camera, const Pose& pose,
                                       const FrameRender& fr, Eigen::RowVectorXd* mask_out) {
  const long pixels = fr.flow_fwd.cols();
  Eigen::MatrixXd flow2d = Eigen::MatrixXd::Zero(2, pixels);
  Eigen::RowVectorXd mask = Eigen::RowVectorXd::Zero(pixels);
  for (long pix = 0; pix < pixels; ++pix) {
    if (fr.p_hat(pix) <= 0.5) continue;
    const Ray ray = camera_ray(camera, pose, static_cast<int>(pix % camera.width),
                               static_cast<int>(pix / camera.width));
    const Eigen::Vector3d x = ray.origin + fr.depth(pix) * ray.direction;
    try {
      const Projection from = project(camera, pose, x);
      const Projection to = project(camera, pose, x + fr.flow_fwd.col(pix));
      flow2d(0, pix) = to.u - from.u;
      flow2d(1, pix) = to.v - from.v;
      mask(pix) = 1.0;
    } catch (const behind_camera_error&) {
      // Unprojectable flow stays masked out.
    }
  }
  if (mask_out) *mask_out = mask;
  return flow2d;
}

inline void cmd_render(const RunConfig& cfg) {
  cfg.validate();
  TrainState state = detail::state_from_checkpoint_file(cfg.io.checkpoint);
  detail::freeze(state);

  const Camera camera = cfg.trajectory.camera();
  const Pose pose = cfg.trajectory.pose_for_frame(cfg.render.pose_frame);
  const double t =
      static_cast<double>(cfg.render.time_frame) / (cfg.trajectory.frame_count - 1);
  const FrameRender fr =
      render_frame(state.static_field, state.dynamic_field, camera, pose, t, cfg.render.mode,
                   cfg.train.samples_per_ray, cfg.scene.s_near, cfg.scene.s_far);

  std::filesystem::create_directories(cfg.io.out_dir);
  write_png(cfg.io.out_dir + "/render_color.png",
            quantize_image(fr.color, camera.width, camera.height));
  write_png(cfg.io.out_dir + "/" + depth_png_name("render", cfg.scene.s_near, cfg.scene.s_far),
            depth_to_u8(fr.depth, camera.width, camera.height, cfg.scene.s_near,
                        cfg.scene.s_far));
  Eigen::RowVectorXd flow_mask;
  const Eigen::MatrixXd flow2d = project_flow_2d(camera, pose, fr, &flow_mask);
  write_png(cfg.io.out_dir + "/render_flow.png",
            flow_to_u8(flow2d, flow_mask, camera.width, camera.height));
  std::cout << "render: pose " << cfg.render.pose_frame << " time " << cfg.render.time_frame
            << " mode " << render_mode_to_string(cfg.render.mode) << " -> " << cfg.io.out_dir
            << "\n";
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

/// Image-similarity block of one report row (shared with tests: feeding the
/// ground-truth image back in must produce the PSNR cap and SSIM 1).
inline FrameMetrics frame_image_metrics(const Eigen::MatrixXd& model_color, const Frame& gt,
                                        int width, int height) {
  FrameMetrics fm;
  fm.psnr = psnr(model_color, gt.image);
  fm.ssim = ssim(model_color, gt.image, width, height);
  const MaskedMetrics masked = masked_metrics(model_color, gt.image, width, height, gt.mask);
  fm.masked_psnr = masked.psnr;
  fm.masked_ssim = masked.ssim;
  return fm;
}

/// Held-out protocol: fix one camera pose and sweep every timestamp,
/// comparing against freshly rendered ground truth.
inline EvalReport cmd_eval(const RunConfig& cfg) {
  cfg.validate();
  TrainState state = detail::state_from_checkpoint_file(cfg.io.checkpoint);
  detail::freeze(state);
  const DynamicField& dfield = state.dynamic_field;

  const Camera camera = cfg.trajectory.camera();
  const Pose pose = cfg.trajectory.pose_for_frame(cfg.eval.pose_frame);
  const int frame_count = cfg.trajectory.frame_count;
  SyntheticScene scene = cfg.scene;
  scene.frame_step = 1.0 / (frame_count - 1);
  scene.validate();
  const long pixels = static_cast<long>(camera.width) * camera.height;

  std::vector<Frame> gt;
  std::vector<FrameRender> model;
  for (int n = 0; n < frame_count; ++n) {
    const double t = static_cast<double>(n) / (frame_count - 1);
    gt.push_back(render_gt_frame(scene, camera, pose, t, cfg.oracle_k));
    model.push_back(render_frame(state.static_field, dfield, camera, pose, t,
                                 RenderMode::kComposite, cfg.train.samples_per_ray,
                                 scene.s_near, scene.s_far));
  }

  EvalReport report;
  for (int n = 0; n < frame_count; ++n) {
    const double t = static_cast<double>(n) / (frame_count - 1);
    FrameMetrics fm = frame_image_metrics(model[n].color, gt[n], camera.width, camera.height);
    fm.frame = n;

    const Eigen::RowVectorXd hits =
        (gt[n].depth_gt.array() > 0.0).cast<double>().matrix();
    fm.depth_rmse = depth_rmse(model[n].depth, gt[n].depth_gt, hits);

    // Predicted scene flow sampled at the ground-truth surface points.
    std::vector<long> masked;
    for (long pix = 0; pix < pixels; ++pix)
      if (gt[n].mask(pix) != 0.0) masked.push_back(pix);
    if (!masked.empty()) {
      Eigen::MatrixXd x(3, masked.size()), dirs(3, masked.size());
      Eigen::MatrixXd ts(1, masked.size());
      for (size_t i = 0; i < masked.size(); ++i) {
        const long pix = masked[i];
        const Ray ray = camera_ray(camera, pose, static_cast<int>(pix % camera.width),
                                   static_cast<int>(pix / camera.width));
        x.col(i) = ray.origin + gt[n].depth_gt(pix) * ray.direction;
        dirs.col(i) = ray.direction;
        ts(0, i) = t;
      }
      const DynamicOutput at_surface = dfield.query(
          ad::Var::constant(x), ad::Var::constant(dirs), ad::Var::constant(ts));
      Eigen::MatrixXd predicted = Eigen::MatrixXd::Zero(3, pixels);
      for (size_t i = 0; i < masked.size(); ++i)
        predicted.col(masked[i]) = at_surface.flow_fwd.val().col(i);
      fm.flow_epe = flow_epe(predicted, gt[n].flow_fwd_gt, gt[n].mask);
    }

    if (n + 1 < frame_count) {
      // Keypoint transfer through the model: surface from rendered depth,
      // displaced by the queried forward flow.
      const FrameRender& fr = model[n];
      const WarpPredictor predictor = [&](int u, int v) {
        const long pix = static_cast<long>(v) * camera.width + u;
        const Ray ray = camera_ray(camera, pose, u, v);
        const Eigen::Vector3d x = ray.origin + fr.depth(pix) * ray.direction;
        Eigen::MatrixXd ts(1, 1);
        ts(0, 0) = t;
        const DynamicOutput at_x =
            dfield.query(ad::Var::constant(x), ad::Var::constant(ray.direction),
                         ad::Var::constant(ts));
        return Eigen::Vector3d(x + at_x.flow_fwd.val().col(0));
      };
      fm.pck_t = pck_t(predictor, camera, gt[n], gt[n + 1], cfg.eval.pck_alpha,
                       cfg.eval.max_keypoints, cfg.seed);
    }
    report.frames.push_back(fm);
  }
  report.compute_means();

  std::filesystem::create_directories(cfg.io.out_dir);
  std::ofstream text(cfg.io.out_dir + "/eval_report.txt");
  text << report_to_text(report);
  std::ofstream csv(cfg.io.out_dir + "/eval_report.csv");
  csv << report_to_csv(report);
  std::cout << "eval: mean psnr " << report.mean_psnr << " masked " << report.mean_masked_psnr
            << " pck_t " << report.mean_pck_t << " -> " << cfg.io.out_dir << "\n";
  return report;
}

}  // namespace dvs
