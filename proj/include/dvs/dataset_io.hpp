#pragma once

#include <Eigen/Dense>

#include <filesystem>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

#include "dvs/geometry.hpp"
#include "dvs/image.hpp"
#include "dvs/rawio.hpp"
#include "dvs/synthscene.hpp"

namespace dvs {

namespace detail {

inline std::string frame_stem(int index) {
  std::ostringstream s;
  s << std::setw(3) << std::setfill('0') << index;
  return s.str();
}

inline nlohmann::json pose_rows_json(const Pose& pose) {
  nlohmann::json rows = nlohmann::json::array();
  for (int r = 0; r < 3; ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (int c = 0; c < 3; ++c) row.push_back(pose.rotation(r, c));
    row.push_back(pose.translation(r));
    rows.push_back(row);
  }
  return rows;
}

inline Pose pose_from_rows_json(const nlohmann::json& rows) {
  if (!rows.is_array() || rows.size() != 3)
    throw std::runtime_error("manifest: pose must have 3 rows");
  Pose pose;
  for (int r = 0; r < 3; ++r) {
    const auto& row = rows[r];
    if (!row.is_array() || row.size() != 4)
      throw std::runtime_error("manifest: pose rows must have 4 entries");
    for (int c = 0; c < 3; ++c) pose.rotation(r, c) = row[c].get<double>();
    pose.translation(r) = row[3].get<double>();
  }
  pose.validate();
  return pose;
}

}  // namespace detail

/// Writes a dataset directory: manifest.json (intrinsics, bounds, one row
/// per frame with pose rows and timestamp), 8-bit PNG frames and masks, and
/// the ground-truth depth/flow as raw arrays. Regeneration from the same
/// dataset is byte-identical.
inline void write_dataset(const Dataset& data, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);

  nlohmann::json manifest;
  manifest["camera"] = {{"width", data.camera.width}, {"height", data.camera.height},
                        {"fx", data.camera.fx},       {"fy", data.camera.fy},
                        {"cx", data.camera.cx},       {"cy", data.camera.cy}};
  manifest["near"] = data.near;
  manifest["far"] = data.far;
  manifest["frame_step"] = data.frame_step;
  manifest["scene_radius"] = data.scene_radius;
  manifest["frame_count"] = data.frames.size();

  nlohmann::json rows = nlohmann::json::array();
  for (size_t i = 0; i < data.frames.size(); ++i) {
    const Frame& frame = data.frames[i];
    const std::string stem = detail::frame_stem(static_cast<int>(i));
    const std::string image_name = "frame_" + stem + ".png";
    const std::string mask_name = "mask_" + stem + ".png";
    const std::string depth_name = "depth_" + stem + ".raw";
    const std::string fwd_name = "flow_fwd_" + stem + ".raw";
    const std::string bwd_name = "flow_bwd_" + stem + ".raw";

    write_png(dir + "/" + image_name,
              quantize_image(frame.image, data.camera.width, data.camera.height));
    write_png(dir + "/" + mask_name,
              mask_to_u8(frame.mask, data.camera.width, data.camera.height));
    write_vector(dir + "/" + depth_name, frame.depth_gt);
    write_array(dir + "/" + fwd_name, frame.flow_fwd_gt);
    write_array(dir + "/" + bwd_name, frame.flow_bwd_gt);

    nlohmann::json row;
    row["index"] = i;
    row["timestamp"] = frame.timestamp;
    row["pose"] = detail::pose_rows_json(frame.pose);
    row["image"] = image_name;
    row["mask"] = mask_name;
    row["depth"] = depth_name;
    row["flow_fwd"] = fwd_name;
    row["flow_bwd"] = bwd_name;
    rows.push_back(row);
  }
  manifest["frames"] = rows;
  write_file(dir + "/manifest.json", manifest.dump(2) + "\n");
}

/// Loads a dataset directory. Images come back PNG-quantized (within 1/255
/// of the oracle values); masks, poses, and ground-truth arrays are exact.
inline Dataset load_dataset(const std::string& dir) {
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(read_file(dir + "/manifest.json"));
  } catch (const nlohmann::json::parse_error& e) {
    throw std::runtime_error("manifest: invalid JSON: " + std::string(e.what()));
  }

  Dataset data;
  const auto& cam = manifest.at("camera");
  data.camera.width = cam.at("width").get<int>();
  data.camera.height = cam.at("height").get<int>();
  data.camera.fx = cam.at("fx").get<double>();
  data.camera.fy = cam.at("fy").get<double>();
  data.camera.cx = cam.at("cx").get<double>();
  data.camera.cy = cam.at("cy").get<double>();
  data.camera.validate();
  data.near = manifest.at("near").get<double>();
  data.far = manifest.at("far").get<double>();
  data.frame_step = manifest.at("frame_step").get<double>();
  data.scene_radius = manifest.at("scene_radius").get<double>();

  const auto& rows = manifest.at("frames");
  if (!rows.is_array()) throw std::runtime_error("manifest: frames must be an array");
  if (manifest.at("frame_count").get<size_t>() != rows.size())
    throw std::runtime_error("manifest: frame_count does not match frame rows");

  const long pixels = static_cast<long>(data.camera.width) * data.camera.height;
  for (const auto& row : rows) {
    Frame frame;
    frame.timestamp = row.at("timestamp").get<double>();
    frame.pose = detail::pose_from_rows_json(row.at("pose"));

    const ImageU8 image = read_png(dir + "/" + row.at("image").get<std::string>());
    if (image.width != data.camera.width || image.height != data.camera.height)
      throw std::runtime_error("dataset: frame size does not match manifest camera");
    frame.image = image_to_matrix(image);
    frame.mask = mask_from_u8(read_png(dir + "/" + row.at("mask").get<std::string>()));
    frame.depth_gt = read_vector(dir + "/" + row.at("depth").get<std::string>());
    frame.flow_fwd_gt = read_array(dir + "/" + row.at("flow_fwd").get<std::string>());
    frame.flow_bwd_gt = read_array(dir + "/" + row.at("flow_bwd").get<std::string>());
    if (frame.mask.cols() != pixels || frame.depth_gt.cols() != pixels ||
        frame.flow_fwd_gt.cols() != pixels || frame.flow_bwd_gt.cols() != pixels)
      throw std::runtime_error("dataset: ground-truth array size mismatch");
    data.frames.push_back(std::move(frame));
  }
  return data;
}

}  // namespace dvs
