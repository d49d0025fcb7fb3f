#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <fstream>
#include <initializer_list>
#include <sstream>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

#include "dvs/checkpoint.hpp"
#include "dvs/renderer.hpp"
#include "dvs/synthscene.hpp"
#include "dvs/trainer.hpp"

namespace dvs {

// ---------------------------------------------------------------------------
// Run configuration: one JSON document drives every CLI command. Parsing is
// strict (unknown keys rejected at every level) but sparse: omitted keys keep
// their defaults, so a config file only states what it changes.
// ---------------------------------------------------------------------------

struct IoConfig {
  std::string dataset_dir = "dataset";
  std::string out_dir = "out";
  std::string checkpoint;  // input checkpoint (render/eval) or resume point (train)
};

struct RenderSettings {
  int pose_frame = 0;  // trajectory pose to render from
  int time_frame = 0;  // timestamp index to render at
  RenderMode mode = RenderMode::kComposite;
};

struct EvalSettings {
  int pose_frame = 0;  // held-out protocol: fixed view, varying timestamps
  double pck_alpha = 0.05;
  int max_keypoints = 200;
};

struct RunConfig {
  std::uint64_t seed = 0;
  FieldConfig field;
  TrainConfig train;  // train.seed mirrors the top-level seed after parsing
  LossWeights weights;
  SyntheticScene scene;
  TrajectoryConfig trajectory;
  int oracle_k = 512;  // quadrature resolution for gt rendering
  IoConfig io;
  RenderSettings render;
  EvalSettings eval;

  void validate() const {
    field.validate();
    train.validate();
    weights.validate();
    scene.validate();
    trajectory.validate();
    if (oracle_k < 2) throw std::invalid_argument("RunConfig: oracle_k must be >= 2");
    if (render.pose_frame < 0 || render.pose_frame >= trajectory.frame_count ||
        render.time_frame < 0 || render.time_frame >= trajectory.frame_count)
      throw std::invalid_argument("RunConfig: render frame index out of range");
    if (eval.pose_frame < 0 || eval.pose_frame >= trajectory.frame_count)
      throw std::invalid_argument("RunConfig: eval pose frame out of range");
    if (!(eval.pck_alpha > 0) || eval.max_keypoints < 1)
      throw std::invalid_argument("RunConfig: bad eval settings");
    if (io.dataset_dir.empty() || io.out_dir.empty())
      throw std::invalid_argument("RunConfig: io paths must be non-empty");
  }
};

namespace detail {

inline void check_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                       const char* context) {
  if (!j.is_object())
    throw std::invalid_argument(std::string("config: ") + context + " must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* key : allowed)
      if (it.key() == key) {
        known = true;
        break;
      }
    if (!known)
      throw std::invalid_argument("config: unknown key \"" + it.key() + "\" in " + context);
  }
}

template <typename T>
void maybe_get(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

inline Eigen::Vector3d vec3_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 3)
    throw std::invalid_argument("config: expected a 3-element array");
  return Eigen::Vector3d(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

inline nlohmann::json vec3_to_json(const Eigen::Vector3d& v) {
  return nlohmann::json::array({v.x(), v.y(), v.z()});
}

}  // namespace detail

// --- FieldConfig (sparse counterpart of the checkpoint-header parser) -------

inline void field_config_update(FieldConfig& cfg, const nlohmann::json& j) {
  detail::check_keys(
      j, {"width", "hidden_layers", "skip_layer", "max_flow", "density_shift", "enc"}, "field");
  detail::maybe_get(j, "width", cfg.width);
  detail::maybe_get(j, "hidden_layers", cfg.hidden_layers);
  detail::maybe_get(j, "skip_layer", cfg.skip_layer);
  detail::maybe_get(j, "max_flow", cfg.max_flow);
  detail::maybe_get(j, "density_shift", cfg.density_shift);
  if (j.contains("enc")) {
    const auto& enc = j.at("enc");
    detail::check_keys(enc, {"l_pos", "l_dir", "l_time"}, "field.enc");
    detail::maybe_get(enc, "l_pos", cfg.enc.l_pos);
    detail::maybe_get(enc, "l_dir", cfg.enc.l_dir);
    detail::maybe_get(enc, "l_time", cfg.enc.l_time);
  }
}

// --- TrainConfig (seed lives at the top level of the run config) ------------

inline void train_config_update(TrainConfig& cfg, const nlohmann::json& j) {
  detail::check_keys(j,
                     {"static_iters", "dynamic_iters", "batch_rays", "samples_per_ray", "lr",
                      "lr_final", "patch_size", "patch_every", "view_rotation_degrees",
                      "view_translation_fraction", "patch_use_composite", "detach_warp_depth",
                      "log_every", "checkpoint_every"},
                     "train");
  detail::maybe_get(j, "static_iters", cfg.static_iters);
  detail::maybe_get(j, "dynamic_iters", cfg.dynamic_iters);
  detail::maybe_get(j, "batch_rays", cfg.batch_rays);
  detail::maybe_get(j, "samples_per_ray", cfg.samples_per_ray);
  detail::maybe_get(j, "lr", cfg.lr);
  detail::maybe_get(j, "lr_final", cfg.lr_final);
  detail::maybe_get(j, "patch_size", cfg.patch_size);
  detail::maybe_get(j, "patch_every", cfg.patch_every);
  detail::maybe_get(j, "view_rotation_degrees", cfg.view_rotation_degrees);
  detail::maybe_get(j, "view_translation_fraction", cfg.view_translation_fraction);
  detail::maybe_get(j, "patch_use_composite", cfg.patch_use_composite);
  detail::maybe_get(j, "detach_warp_depth", cfg.detach_warp_depth);
  detail::maybe_get(j, "log_every", cfg.log_every);
  detail::maybe_get(j, "checkpoint_every", cfg.checkpoint_every);
}

inline nlohmann::json train_config_to_json(const TrainConfig& cfg) {
  return {{"static_iters", cfg.static_iters},
          {"dynamic_iters", cfg.dynamic_iters},
          {"batch_rays", cfg.batch_rays},
          {"samples_per_ray", cfg.samples_per_ray},
          {"lr", cfg.lr},
          {"lr_final", cfg.lr_final},
          {"patch_size", cfg.patch_size},
          {"patch_every", cfg.patch_every},
          {"view_rotation_degrees", cfg.view_rotation_degrees},
          {"view_translation_fraction", cfg.view_translation_fraction},
          {"patch_use_composite", cfg.patch_use_composite},
          {"detach_warp_depth", cfg.detach_warp_depth},
          {"log_every", cfg.log_every},
          {"checkpoint_every", cfg.checkpoint_every}};
}

// --- LossWeights -------------------------------------------------------------

inline void loss_weights_update(LossWeights& w, const nlohmann::json& j) {
  detail::check_keys(j,
                     {"static", "dynamic", "full", "slow", "cycle", "entropy", "mask", "surface",
                      "patch", "depth_cons"},
                     "weights");
  detail::maybe_get(j, "static", w.lambda_static);
  detail::maybe_get(j, "dynamic", w.lambda_dynamic);
  detail::maybe_get(j, "full", w.lambda_full);
  detail::maybe_get(j, "slow", w.lambda_slow);
  detail::maybe_get(j, "cycle", w.lambda_cycle);
  detail::maybe_get(j, "entropy", w.lambda_entropy);
  detail::maybe_get(j, "mask", w.lambda_mask);
  detail::maybe_get(j, "surface", w.lambda_surface);
  detail::maybe_get(j, "patch", w.lambda_patch);
  detail::maybe_get(j, "depth_cons", w.lambda_depth_cons);
}

inline nlohmann::json loss_weights_to_json(const LossWeights& w) {
  return {{"static", w.lambda_static}, {"dynamic", w.lambda_dynamic},
          {"full", w.lambda_full},     {"slow", w.lambda_slow},
          {"cycle", w.lambda_cycle},   {"entropy", w.lambda_entropy},
          {"mask", w.lambda_mask},     {"surface", w.lambda_surface},
          {"patch", w.lambda_patch},   {"depth_cons", w.lambda_depth_cons}};
}

// --- Scene (optional preset applied first, then field-level overrides) ------

inline SyntheticScene scene_preset(const std::string& name) {
  if (name == "default") return default_scene();
  if (name == "textureless") return textureless_scene();
  if (name == "nonrigid") return nonrigid_scene();
  if (name == "box") return box_scene();
  throw std::invalid_argument("config: unknown scene preset \"" + name + "\"");
}

inline void scene_update(SyntheticScene& scene, const nlohmann::json& j) {
  detail::check_keys(
      j, {"preset", "background", "mover", "sigma_solid", "s_near", "s_far", "frame_step"},
      "scene");
  if (j.contains("preset")) scene = scene_preset(j.at("preset").get<std::string>());
  if (j.contains("background")) {
    const auto& bg = j.at("background");
    detail::check_keys(bg, {"z", "thickness", "half_extent", "textured"}, "scene.background");
    detail::maybe_get(bg, "z", scene.background.z);
    detail::maybe_get(bg, "thickness", scene.background.thickness);
    detail::maybe_get(bg, "half_extent", scene.background.half_extent);
    detail::maybe_get(bg, "textured", scene.background.textured);
  }
  if (j.contains("mover")) {
    const auto& mv = j.at("mover");
    detail::check_keys(
        mv, {"shape", "trajectory", "radius", "half_extents", "radius_scale", "textured"},
        "scene.mover");
    if (mv.contains("shape")) {
      const std::string shape = mv.at("shape").get<std::string>();
      if (shape == "sphere")
        scene.mover.shape = MoverShape::kSphere;
      else if (shape == "box")
        scene.mover.shape = MoverShape::kBox;
      else
        throw std::invalid_argument("config: unknown mover shape \"" + shape + "\"");
    }
    if (mv.contains("trajectory")) {
      scene.mover.trajectory.clear();
      for (const auto& coef : mv.at("trajectory"))
        scene.mover.trajectory.push_back(detail::vec3_from_json(coef));
    }
    detail::maybe_get(mv, "radius", scene.mover.radius);
    if (mv.contains("half_extents"))
      scene.mover.half_extents = detail::vec3_from_json(mv.at("half_extents"));
    if (mv.contains("radius_scale"))
      scene.mover.radius_scale = mv.at("radius_scale").get<std::vector<double>>();
    detail::maybe_get(mv, "textured", scene.mover.textured);
  }
  detail::maybe_get(j, "sigma_solid", scene.sigma_solid);
  detail::maybe_get(j, "s_near", scene.s_near);
  detail::maybe_get(j, "s_far", scene.s_far);
  detail::maybe_get(j, "frame_step", scene.frame_step);
}

inline nlohmann::json scene_to_json(const SyntheticScene& scene) {
  nlohmann::json traj = nlohmann::json::array();
  for (const Eigen::Vector3d& coef : scene.mover.trajectory)
    traj.push_back(detail::vec3_to_json(coef));
  return {{"background",
           {{"z", scene.background.z},
            {"thickness", scene.background.thickness},
            {"half_extent", scene.background.half_extent},
            {"textured", scene.background.textured}}},
          {"mover",
           {{"shape", scene.mover.shape == MoverShape::kSphere ? "sphere" : "box"},
            {"trajectory", traj},
            {"radius", scene.mover.radius},
            {"half_extents", detail::vec3_to_json(scene.mover.half_extents)},
            {"radius_scale", scene.mover.radius_scale},
            {"textured", scene.mover.textured}}},
          {"sigma_solid", scene.sigma_solid},
          {"s_near", scene.s_near},
          {"s_far", scene.s_far},
          {"frame_step", scene.frame_step}};
}

// --- Trajectory --------------------------------------------------------------

inline void trajectory_update(TrajectoryConfig& traj, const nlohmann::json& j) {
  detail::check_keys(j,
                     {"frame_count", "width", "height", "focal", "rig", "rig_distance",
                      "orbit_degrees", "azimuth_offset_degrees", "linear_baseline"},
                     "trajectory");
  detail::maybe_get(j, "frame_count", traj.frame_count);
  detail::maybe_get(j, "width", traj.width);
  detail::maybe_get(j, "height", traj.height);
  detail::maybe_get(j, "focal", traj.focal);
  if (j.contains("rig")) {
    const std::string rig = j.at("rig").get<std::string>();
    if (rig == "orbit")
      traj.rig = TrajectoryConfig::Rig::kOrbit;
    else if (rig == "linear")
      traj.rig = TrajectoryConfig::Rig::kLinear;
    else
      throw std::invalid_argument("config: unknown rig \"" + rig + "\"");
  }
  detail::maybe_get(j, "rig_distance", traj.rig_distance);
  detail::maybe_get(j, "orbit_degrees", traj.orbit_degrees);
  detail::maybe_get(j, "azimuth_offset_degrees", traj.azimuth_offset_degrees);
  detail::maybe_get(j, "linear_baseline", traj.linear_baseline);
}

inline nlohmann::json trajectory_to_json(const TrajectoryConfig& traj) {
  return {{"frame_count", traj.frame_count},
          {"width", traj.width},
          {"height", traj.height},
          {"focal", traj.focal},
          {"rig", traj.rig == TrajectoryConfig::Rig::kOrbit ? "orbit" : "linear"},
          {"rig_distance", traj.rig_distance},
          {"orbit_degrees", traj.orbit_degrees},
          {"azimuth_offset_degrees", traj.azimuth_offset_degrees},
          {"linear_baseline", traj.linear_baseline}};
}

// --- Render / eval / io sections ---------------------------------------------

inline RenderMode render_mode_from_string(const std::string& mode) {
  if (mode == "static") return RenderMode::kStatic;
  if (mode == "dynamic") return RenderMode::kDynamic;
  if (mode == "composite") return RenderMode::kComposite;
  throw std::invalid_argument("config: unknown render mode \"" + mode + "\"");
}

inline std::string render_mode_to_string(RenderMode mode) {
  switch (mode) {
    case RenderMode::kStatic: return "static";
    case RenderMode::kDynamic: return "dynamic";
    default: return "composite";
  }
}

// --- Whole run config ----------------------------------------------------------

inline RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig cfg;
  detail::check_keys(j,
                     {"seed", "field", "train", "weights", "scene", "trajectory", "oracle_k",
                      "io", "render", "eval"},
                     "run config");
  detail::maybe_get(j, "seed", cfg.seed);
  if (j.contains("field")) field_config_update(cfg.field, j.at("field"));
  if (j.contains("train")) train_config_update(cfg.train, j.at("train"));
  if (j.contains("weights")) loss_weights_update(cfg.weights, j.at("weights"));
  if (j.contains("scene")) scene_update(cfg.scene, j.at("scene"));
  if (j.contains("trajectory")) trajectory_update(cfg.trajectory, j.at("trajectory"));
  detail::maybe_get(j, "oracle_k", cfg.oracle_k);
  if (j.contains("io")) {
    const auto& io = j.at("io");
    detail::check_keys(io, {"dataset_dir", "out_dir", "checkpoint"}, "io");
    detail::maybe_get(io, "dataset_dir", cfg.io.dataset_dir);
    detail::maybe_get(io, "out_dir", cfg.io.out_dir);
    detail::maybe_get(io, "checkpoint", cfg.io.checkpoint);
  }
  if (j.contains("render")) {
    const auto& r = j.at("render");
    detail::check_keys(r, {"pose_frame", "time_frame", "mode"}, "render");
    detail::maybe_get(r, "pose_frame", cfg.render.pose_frame);
    detail::maybe_get(r, "time_frame", cfg.render.time_frame);
    if (r.contains("mode"))
      cfg.render.mode = render_mode_from_string(r.at("mode").get<std::string>());
  }
  if (j.contains("eval")) {
    const auto& e = j.at("eval");
    detail::check_keys(e, {"pose_frame", "pck_alpha", "max_keypoints"}, "eval");
    detail::maybe_get(e, "pose_frame", cfg.eval.pose_frame);
    detail::maybe_get(e, "pck_alpha", cfg.eval.pck_alpha);
    detail::maybe_get(e, "max_keypoints", cfg.eval.max_keypoints);
  }
  cfg.train.seed = cfg.seed;
  cfg.validate();
  return cfg;
}

inline nlohmann::json run_config_to_json(const RunConfig& cfg) {
  return {{"seed", cfg.seed},
          {"field", field_config_to_json(cfg.field)},
          {"train", train_config_to_json(cfg.train)},
          {"weights", loss_weights_to_json(cfg.weights)},
          {"scene", scene_to_json(cfg.scene)},
          {"trajectory", trajectory_to_json(cfg.trajectory)},
          {"oracle_k", cfg.oracle_k},
          {"io",
           {{"dataset_dir", cfg.io.dataset_dir},
            {"out_dir", cfg.io.out_dir},
            {"checkpoint", cfg.io.checkpoint}}},
          {"render",
           {{"pose_frame", cfg.render.pose_frame},
            {"time_frame", cfg.render.time_frame},
            {"mode", render_mode_to_string(cfg.render.mode)}}},
          {"eval",
           {{"pose_frame", cfg.eval.pose_frame},
            {"pck_alpha", cfg.eval.pck_alpha},
            {"max_keypoints", cfg.eval.max_keypoints}}}};
}

inline std::string serialize_run_config(const RunConfig& cfg) {
  return run_config_to_json(cfg).dump(2) + "\n";
}

inline RunConfig parse_run_config(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("config: JSON parse error: ") + e.what());
  }
  return run_config_from_json(j);
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open " + path);
  std::ostringstream text;
  text << in.rdbuf();
  return parse_run_config(text.str());
}

inline void save_run_config(const RunConfig& cfg, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("config: cannot write " + path);
  out << serialize_run_config(cfg);
}

}  // namespace dvs
