#pragma once

#include <Eigen/Dense>
#include <Eigen/Geometry>

#include <cmath>
#include <cstdint>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dvs/checkpoint.hpp"
#include "dvs/fields.hpp"
#include "dvs/geometry.hpp"
#include "dvs/losses.hpp"
#include "dvs/renderer.hpp"
#include "dvs/rng.hpp"
#include "dvs/synthscene.hpp"

namespace dvs {

struct TrainConfig {
  long static_iters = 20000;
  long dynamic_iters = 40000;
  int batch_rays = 128;
  int samples_per_ray = 32;  // K
  double lr = 5e-4;
  double lr_final = 5e-5;
  int patch_size = 8;   // P: patch constraint renders P x P pixels
  int patch_every = 4;  // cadence m: patch loss on every m-th iteration
  double view_rotation_degrees = 5.0;
  double view_translation_fraction = 0.1;  // of the dataset's scene radius
  bool patch_use_composite = true;  // false: supervise the dynamic-only render
  bool detach_warp_depth = false;   // cut the geometry path through the warp
  long enc_anneal_iters = 0;  // coarse-to-fine ramp length per stage; 0 = off
  long log_every = 100;
  long checkpoint_every = 1000;
  std::uint64_t seed = 0;

  void validate() const {
    if (static_iters < 1 || dynamic_iters < 1)
      throw std::invalid_argument("TrainConfig: stage lengths must be >= 1");
    if (batch_rays < 1) throw std::invalid_argument("TrainConfig: batch_rays must be >= 1");
    if (samples_per_ray < 2)
      throw std::invalid_argument("TrainConfig: samples_per_ray must be >= 2");
    if (!(lr > 0) || !(lr_final > 0) || lr_final > lr)
      throw std::invalid_argument("TrainConfig: need lr >= lr_final > 0");
    if (patch_size < 2 || patch_every < 1)
      throw std::invalid_argument("TrainConfig: bad patch settings");
    if (patch_size * patch_size > batch_rays)
      throw std::invalid_argument("TrainConfig: patch exceeds the ray batch budget");
    if (view_rotation_degrees < 0 || view_translation_fraction < 0)
      throw std::invalid_argument("TrainConfig: perturbation scales must be >= 0");
    if (enc_anneal_iters < 0)
      throw std::invalid_argument("TrainConfig: enc_anneal_iters must be >= 0");
    if (log_every < 1 || checkpoint_every < 1)
      throw std::invalid_argument("TrainConfig: log/checkpoint intervals must be >= 1");
  }
};

/// Exponential interpolation from lr to lr_final; the last iteration of the
/// stage uses exactly lr_final.
inline double lr_at(double lr0, double lr1, long iter, long total_iters) {
  if (total_iters <= 1) return lr0;
  const double f = static_cast<double>(iter) / static_cast<double>(total_iters - 1);
  return lr0 * std::pow(lr1 / lr0, f);
}

/// Coarse-to-fine position-encoding schedule: linear ramp from 0 to 1 over
/// anneal_iters, then 1 (0 disables the ramp). Derived purely from the
/// iteration counter, so a resumed run recomputes the same value.
inline double enc_alpha_at(long iter, long anneal_iters) {
  if (anneal_iters <= 0) return 1.0;
  return std::min(1.0, static_cast<double>(iter) / static_cast<double>(anneal_iters));
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

/// Adaptive-moment state, entry-aligned with a ParamSet.
struct AdamState {
  NamedArrays m, v;
  long step = 0;

  void reset(const ParamSet& params) {
    m.clear();
    v.clear();
    step = 0;
    for (const auto& e : params.entries()) {
      m.emplace_back(e.name, Eigen::MatrixXd::Zero(e.var.rows(), e.var.cols()));
      v.emplace_back(e.name, Eigen::MatrixXd::Zero(e.var.rows(), e.var.cols()));
    }
  }
};

/// One Adam update from the gradients currently held by the params. Params
/// are replaced with fresh leaves, so no gradient zeroing is needed between
/// iterations. Never-touched gradients count as zero.
inline void adam_step(ParamSet& params, AdamState& state, double lr, double beta1 = 0.9,
                      double beta2 = 0.999, double eps = 1e-8) {
  const auto& entries = params.entries();
  if (state.m.size() != entries.size())
    throw std::logic_error("adam_step: state not initialized for this ParamSet");
  ++state.step;
  const double bias1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
  const double bias2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
  for (size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    if (state.m[i].first != e.name) throw std::logic_error("adam_step: entry order mismatch");
    Eigen::MatrixXd g = e.var.grad();
    if (g.size() == 0) g = Eigen::MatrixXd::Zero(e.var.rows(), e.var.cols());
    Eigen::MatrixXd& m = state.m[i].second;
    Eigen::MatrixXd& v = state.v[i].second;
    m = beta1 * m + (1.0 - beta1) * g;
    v = beta2 * v + (1.0 - beta2) * g.cwiseProduct(g);
    const Eigen::MatrixXd update =
        (m / bias1).array() / ((v / bias2).array().sqrt() + eps);
    params.set(e.name, ad::Var::param(e.var.val() - lr * update));
  }
}

// ---------------------------------------------------------------------------
// Sampling
// ---------------------------------------------------------------------------

namespace tags {
constexpr std::uint64_t kInitStatic = 0x10;
constexpr std::uint64_t kInitDynamic = 0x11;
constexpr std::uint64_t kBatch = 0x20;
constexpr std::uint64_t kStratify = 0x21;
constexpr std::uint64_t kPatch = 0x22;
constexpr std::uint64_t kPatchSrc = 0x23;
constexpr std::uint64_t kPatchNovel = 0x24;
}  // namespace tags

struct RayBatch {
  std::vector<Ray> rays;
  std::vector<double> ts;
  Eigen::MatrixXd gt;       // 3 x R ground-truth colors
  Eigen::RowVectorXd mask;  // 1 x R dynamic-mask values
  std::vector<int> frame_index;
  std::vector<long> pixel_index;
};

/// Uniform over (frame, pixel); fully determined by the rng handed in.
inline RayBatch sample_ray_batch(const Dataset& data, int batch_rays, Rng& rng) {
  if (data.frames.empty()) throw std::invalid_argument("sample_ray_batch: empty dataset");
  const long pixels = static_cast<long>(data.camera.width) * data.camera.height;
  RayBatch batch;
  batch.gt.resize(3, batch_rays);
  batch.mask.resize(batch_rays);
  for (int i = 0; i < batch_rays; ++i) {
    const int f = static_cast<int>(rng.uniform_index(data.frames.size()));
    const long pix = static_cast<long>(rng.uniform_index(pixels));
    const Frame& frame = data.frames[f];
    Ray ray = camera_ray(data.camera, frame.pose, static_cast<int>(pix % data.camera.width),
                         static_cast<int>(pix / data.camera.width));
    ray.near = data.near;
    ray.far = data.far;
    batch.rays.push_back(ray);
    batch.ts.push_back(frame.timestamp);
    batch.gt.col(i) = frame.image.col(pix);
    batch.mask(i) = frame.mask(pix);
    batch.frame_index.push_back(f);
    batch.pixel_index.push_back(pix);
  }
  return batch;
}

/// Random rotation (angle uniform in [0, max] about a uniform axis) and
/// translation (uniform direction, magnitude uniform in [0, max]) applied to
/// a camera pose. Zero scales return the pose unchanged.
inline Pose sample_novel_view(const Pose& pose, double max_rotation_degrees,
                              double max_translation, Rng& rng) {
  if (max_rotation_degrees == 0.0 && max_translation == 0.0) return pose;
  Eigen::Vector3d axis(rng.normal(), rng.normal(), rng.normal());
  axis = axis.norm() > 1e-12 ? axis.normalized() : Eigen::Vector3d::UnitX();
  const double angle = max_rotation_degrees * M_PI / 180.0 * rng.uniform();
  Eigen::Vector3d dir(rng.normal(), rng.normal(), rng.normal());
  dir = dir.norm() > 1e-12 ? dir.normalized() : Eigen::Vector3d::UnitY();
  const double dist = max_translation * rng.uniform();

  Pose out;
  out.rotation = Eigen::AngleAxisd(angle, axis).toRotationMatrix() * pose.rotation;
  out.translation = pose.translation + dist * dir;
  return out;
}

// ---------------------------------------------------------------------------
// Patch constraint
// ---------------------------------------------------------------------------

/// Deterministic core of the patch constraint (Eqs. 15-16): render the patch
/// at the source pose and at the novel pose, inverse-warp the novel render
/// through the source depth, and compare under the validity mask.
inline ad::Var patch_loss_for_poses(const StaticField& sfield, const DynamicField& dfield,
                                    const Camera& camera, const Pose& source_pose,
                                    const Pose& novel_pose, const PixelPatch& patch, double t,
                                    const TrainConfig& cfg, double near, double far,
                                    const std::function<Rng(long)>& rng_source,
                                    const std::function<Rng(long)>& rng_novel) {
  const RenderMode mode =
      cfg.patch_use_composite ? RenderMode::kComposite : RenderMode::kDynamic;
  const PatchRender source = render_patch(&sfield, &dfield, camera, source_pose, patch, t, mode,
                                          cfg.samples_per_ray, near, far,
                                          /*stratified=*/true, rng_source);
  const PatchRender novel = render_patch(&sfield, &dfield, camera, novel_pose, patch, t, mode,
                                         cfg.samples_per_ray, near, far,
                                         /*stratified=*/true, rng_novel);
  const ad::Var depth = cfg.detach_warp_depth ? ad::detach(source.depth) : source.depth;
  const WarpResult warp = inverse_warp(novel.color, depth, novel_pose, source_pose, camera, patch);
  return loss_patch(source.color, warp.colors, warp.mask);
}

/// Samples the patch window, frame, and novel pose, then evaluates the patch
/// loss. `iteration` keys the per-ray stratification streams.
inline ad::Var patch_constraint_step(const StaticField& sfield, const DynamicField& dfield,
                                     const Dataset& data, const TrainConfig& cfg,
                                     long iteration, Rng& rng) {
  if (cfg.patch_size > data.camera.width || cfg.patch_size > data.camera.height)
    throw std::invalid_argument("patch_constraint_step: patch larger than the image");
  const int f = static_cast<int>(rng.uniform_index(data.frames.size()));
  const Frame& frame = data.frames[f];
  PixelPatch patch;
  patch.u0 = static_cast<int>(rng.uniform_index(data.camera.width - cfg.patch_size + 1));
  patch.v0 = static_cast<int>(rng.uniform_index(data.camera.height - cfg.patch_size + 1));
  patch.size = cfg.patch_size;
  const Pose novel = sample_novel_view(frame.pose, cfg.view_rotation_degrees,
                                       cfg.view_translation_fraction * data.scene_radius, rng);
  const std::uint64_t iter_tag = static_cast<std::uint64_t>(iteration);
  const auto rng_source = [&cfg, iter_tag](long j) {
    return derive_rng(cfg.seed, {tags::kPatchSrc, iter_tag, static_cast<std::uint64_t>(j)});
  };
  const auto rng_novel = [&cfg, iter_tag](long j) {
    return derive_rng(cfg.seed, {tags::kPatchNovel, iter_tag, static_cast<std::uint64_t>(j)});
  };
  return patch_loss_for_poses(sfield, dfield, data.camera, frame.pose, novel, patch,
                              frame.timestamp, cfg, data.near, data.far, rng_source, rng_novel);
}

// ---------------------------------------------------------------------------
// Training state and stages
// ---------------------------------------------------------------------------

namespace detail {

inline StaticField make_static_field(const FieldConfig& cfg, std::uint64_t seed) {
  Rng rng = derive_rng(seed, {tags::kInitStatic});
  return StaticField(cfg, rng);
}

inline DynamicField make_dynamic_field(const FieldConfig& cfg, std::uint64_t seed) {
  Rng rng = derive_rng(seed, {tags::kInitDynamic});
  return DynamicField(cfg, rng);
}

}  // namespace detail

/// Everything the optimization loop mutates. Stage 1 trains the static
/// field; begin_dynamic_stage() freezes it (bit-for-bit) and stage 2 trains
/// the dynamic field.
struct TrainState {
  FieldConfig field_config;
  std::uint64_t seed = 0;
  int stage = 1;
  long iteration = 0;  // within the current stage
  AdamState adam;
  StaticField static_field;
  DynamicField dynamic_field;
  LossReport last_report;

  TrainState(const FieldConfig& cfg, std::uint64_t seed_)
      : field_config(cfg),
        seed(seed_),
        static_field(detail::make_static_field(cfg, seed_)),
        dynamic_field(detail::make_dynamic_field(cfg, seed_)) {}

  void begin_dynamic_stage() {
    if (stage != 1) throw std::logic_error("begin_dynamic_stage: already in stage 2");
    stage = 2;
    iteration = 0;
    static_field.params().set_requires_grad(false);
    adam.reset(dynamic_field.params());
  }
};

struct TrainHooks {
  std::function<void(const TrainState&, const LossReport&)> on_log;
  std::function<void(const TrainState&)> on_checkpoint;
};

namespace detail {

inline void fire_hooks(const TrainState& state, const LossReport& report, long total_iters,
                       const TrainConfig& cfg, const TrainHooks& hooks) {
  if (hooks.on_log &&
      (state.iteration % cfg.log_every == 0 || state.iteration == total_iters))
    hooks.on_log(state, report);
  if (hooks.on_checkpoint &&
      (state.iteration % cfg.checkpoint_every == 0 || state.iteration == total_iters))
    hooks.on_checkpoint(state);
}

}  // namespace detail

/// Stage 1: masked static photometric loss only (Eq. 2).
inline void run_static_stage(TrainState& state, const Dataset& data, const TrainConfig& cfg,
                             const LossWeights& weights, const TrainHooks& hooks = {}) {
  cfg.validate();
  weights.validate();
  if (state.stage != 1) throw std::logic_error("run_static_stage: state is past stage 1");
  if (state.adam.m.empty()) state.adam.reset(state.static_field.params());

  for (long iter = state.iteration; iter < cfg.static_iters; ++iter) {
    state.static_field.set_enc_alpha(enc_alpha_at(iter, cfg.enc_anneal_iters));
    Rng rng = derive_rng(state.seed, {tags::kBatch, 1, static_cast<std::uint64_t>(iter)});
    const RayBatch rays = sample_ray_batch(data, cfg.batch_rays, rng);
    const SampleBatch batch = make_sample_batch(
        rays.rays, rays.ts, cfg.samples_per_ray, /*stratified=*/true, [&](long j) {
          return derive_rng(state.seed,
                            {tags::kStratify, 1, static_cast<std::uint64_t>(iter),
                             static_cast<std::uint64_t>(j)});
        });
    const RenderVars render = render_static_batch(state.static_field, batch);

    LossTerms terms;
    terms.static_photo = loss_static(render.color, rays.gt, rays.mask);
    LossReport report;
    const ad::Var total = total_loss(terms, weights, &report);
    ad::backward(total);
    adam_step(state.static_field.params(), state.adam,
              lr_at(cfg.lr, cfg.lr_final, iter, cfg.static_iters));

    state.iteration = iter + 1;
    state.last_report = report;
    detail::fire_hooks(state, report, cfg.static_iters, cfg, hooks);
  }
}

/// Stage 2: all dynamic-side terms of the full objective. The static field
/// is frozen; zero-weight surface/patch terms are skipped entirely (the
/// ablation switch).
inline void run_dynamic_stage(TrainState& state, const Dataset& data, const TrainConfig& cfg,
                              const LossWeights& weights, const TrainHooks& hooks = {}) {
  cfg.validate();
  weights.validate();
  if (state.stage != 2)
    throw std::logic_error("run_dynamic_stage: call begin_dynamic_stage first");
  if (state.adam.m.empty()) state.adam.reset(state.dynamic_field.params());
  state.static_field.params().set_requires_grad(false);

  for (long iter = state.iteration; iter < cfg.dynamic_iters; ++iter) {
    Rng rng = derive_rng(state.seed, {tags::kBatch, 2, static_cast<std::uint64_t>(iter)});
    const RayBatch rays = sample_ray_batch(data, cfg.batch_rays, rng);
    const SampleBatch batch = make_sample_batch(
        rays.rays, rays.ts, cfg.samples_per_ray, /*stratified=*/true, [&](long j) {
          return derive_rng(state.seed,
                            {tags::kStratify, 2, static_cast<std::uint64_t>(iter),
                             static_cast<std::uint64_t>(j)});
        });

    // One shared dynamic query feeds the triple photometric render and the
    // composite blend; one shared static query feeds the composite.
    const DynamicOutput at_d = state.dynamic_field.query(
        ad::Var::constant(batch.x), ad::Var::constant(batch.dirs),
        ad::Var::constant(Eigen::MatrixXd(batch.t)));
    const StaticOutput at_s =
        state.static_field.query(ad::Var::constant(batch.x), ad::Var::constant(batch.dirs));
    const TripleRender triple =
        render_dynamic_triple_from(state.dynamic_field, at_d, batch, data.frame_step);
    const CompositeRender comp = render_composite_from(at_s, at_d, batch);

    LossTerms terms;
    terms.dynamic_photo = loss_dynamic(triple, rays.gt);
    terms.full_photo = loss_full(comp.full.color, rays.gt);
    terms.flow_slow = loss_flow_slow(at_d.flow_fwd, at_d.flow_bwd);
    ad::Var fwd_gathered, bwd_gathered, fwd_back, bwd_fwd;
    if (!triple.fwd.rays.empty()) {
      fwd_gathered = ad::gather_blocks(at_d.flow_fwd, batch.K, triple.fwd.rays);
      fwd_back = triple.fwd.at_warped.flow_bwd;
    }
    if (!triple.bwd.rays.empty()) {
      bwd_gathered = ad::gather_blocks(at_d.flow_bwd, batch.K, triple.bwd.rays);
      bwd_fwd = triple.bwd.at_warped.flow_fwd;
    }
    terms.flow_cycle = loss_flow_cycle(fwd_gathered, fwd_back, bwd_gathered, bwd_fwd);
    terms.entropy = loss_entropy(triple.center.weights, batch.K);
    terms.mask_bce = loss_mask(comp.p_hat, rays.mask);
    if (weights.lambda_surface > 0) {
      const ad::Var fwd =
          loss_surface_batch(state.dynamic_field, triple, batch, FlowDirection::kForward);
      const ad::Var bwd =
          loss_surface_batch(state.dynamic_field, triple, batch, FlowDirection::kBackward);
      terms.surface = ad::scale(ad::add(fwd, bwd), 0.5);
    }
    terms.depth_cons =
        loss_depth_consistency(comp.full.depth, comp.static_only.depth, rays.mask);
    if (weights.lambda_patch > 0 && iter % cfg.patch_every == 0) {
      Rng patch_rng = derive_rng(state.seed, {tags::kPatch, static_cast<std::uint64_t>(iter)});
      terms.patch = patch_constraint_step(state.static_field, state.dynamic_field, data, cfg,
                                          iter, patch_rng);
    }

    LossReport report;
    const ad::Var total = total_loss(terms, weights, &report);
    ad::backward(total);
    adam_step(state.dynamic_field.params(), state.adam,
              lr_at(cfg.lr, cfg.lr_final, iter, cfg.dynamic_iters));

    state.iteration = iter + 1;
    state.last_report = report;
    detail::fire_hooks(state, report, cfg.dynamic_iters, cfg, hooks);
  }
}

inline TrainState train_full(const Dataset& data, const FieldConfig& field_cfg,
                             const TrainConfig& cfg, const LossWeights& weights,
                             const TrainHooks& hooks = {}) {
  TrainState state(field_cfg, cfg.seed);
  run_static_stage(state, data, cfg, weights, hooks);
  state.begin_dynamic_stage();
  run_dynamic_stage(state, data, cfg, weights, hooks);
  return state;
}

// ---------------------------------------------------------------------------
// Checkpoint bridge and log lines
// ---------------------------------------------------------------------------

inline Checkpoint to_checkpoint(const TrainState& state) {
  Checkpoint ckpt;
  ckpt.field = state.field_config;
  ckpt.stage = state.stage;
  ckpt.iteration = state.iteration;
  ckpt.seed = state.seed;
  ckpt.rng_state = derive_rng(state.seed, {tags::kBatch, static_cast<std::uint64_t>(state.stage),
                                           static_cast<std::uint64_t>(state.iteration)})
                       .state();
  ckpt.adam_step = state.adam.step;
  ckpt.static_params = snapshot_params(state.static_field.params());
  ckpt.dynamic_params = snapshot_params(state.dynamic_field.params());
  ckpt.adam_m = state.adam.m;
  ckpt.adam_v = state.adam.v;
  return ckpt;
}

inline TrainState from_checkpoint(const Checkpoint& ckpt) {
  TrainState state(ckpt.field, ckpt.seed);
  state.stage = ckpt.stage;
  state.iteration = ckpt.iteration;
  restore_params(state.static_field.params(), ckpt.static_params);
  restore_params(state.dynamic_field.params(), ckpt.dynamic_params);
  state.adam.m = ckpt.adam_m;
  state.adam.v = ckpt.adam_v;
  state.adam.step = ckpt.adam_step;
  if (state.stage == 2) state.static_field.params().set_requires_grad(false);
  return state;
}

/// One metrics-log line: iteration plus every LossReport field.
inline std::string log_line(const TrainState& state, const LossReport& rep) {
  std::ostringstream out;
  out.precision(12);
  out << "stage " << state.stage << " iter " << state.iteration << " static "
      << rep.static_photo << " dynamic " << rep.dynamic_photo << " full " << rep.full_photo
      << " flow_slow " << rep.flow_slow << " flow_cycle " << rep.flow_cycle << " entropy "
      << rep.entropy << " mask " << rep.mask_bce << " surface " << rep.surface << " patch "
      << rep.patch << " depth_cons " << rep.depth_cons << " total " << rep.total;
  return out.str();
}

}  // namespace dvs
