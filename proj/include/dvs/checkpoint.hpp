#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "dvs/fields.hpp"
#include "dvs/rawio.hpp"

namespace dvs {

inline nlohmann::json field_config_to_json(const FieldConfig& cfg) {
  return {{"width", cfg.width},
          {"hidden_layers", cfg.hidden_layers},
          {"skip_layer", cfg.skip_layer},
          {"max_flow", cfg.max_flow},
          {"density_shift", cfg.density_shift},
          {"enc",
           {{"l_pos", cfg.enc.l_pos}, {"l_dir", cfg.enc.l_dir}, {"l_time", cfg.enc.l_time}}}};
}

inline FieldConfig field_config_from_json(const nlohmann::json& j) {
  FieldConfig cfg;
  cfg.width = j.at("width").get<int>();
  cfg.hidden_layers = j.at("hidden_layers").get<int>();
  cfg.skip_layer = j.at("skip_layer").get<int>();
  cfg.max_flow = j.at("max_flow").get<double>();
  cfg.density_shift = j.at("density_shift").get<double>();
  const auto& enc = j.at("enc");
  cfg.enc.l_pos = enc.at("l_pos").get<int>();
  cfg.enc.l_dir = enc.at("l_dir").get<int>();
  cfg.enc.l_time = enc.at("l_time").get<int>();
  cfg.validate();
  return cfg;
}

using NamedArrays = std::vector<std::pair<std::string, Eigen::MatrixXd>>;

inline NamedArrays snapshot_params(const ParamSet& params) {
  NamedArrays out;
  out.reserve(params.entries().size());
  for (const auto& e : params.entries()) out.emplace_back(e.name, e.var.val());
  return out;
}

/// Writes saved values back into an existing ParamSet; every entry must be
/// present with a matching shape.
inline void restore_params(ParamSet& params, const NamedArrays& saved) {
  if (saved.size() != params.entries().size())
    throw std::runtime_error("restore_params: entry count mismatch");
  for (const auto& [name, value] : saved) params.set(name, ad::Var::param(value));
}

/// Everything needed to resume training bit-identically: architecture,
/// stage/iteration counters, the rng state driving the next step, both
/// parameter sets, and the active optimizer moments.
struct Checkpoint {
  FieldConfig field;
  int stage = 1;
  long iteration = 0;
  std::uint64_t seed = 0;
  std::array<std::uint64_t, 4> rng_state{};
  long adam_step = 0;
  NamedArrays static_params;
  NamedArrays dynamic_params;
  NamedArrays adam_m;
  NamedArrays adam_v;
};

constexpr char kCheckpointMagic[] = "DVSCKPT1";

namespace detail {

inline nlohmann::json array_names_json(const NamedArrays& arrays) {
  nlohmann::json names = nlohmann::json::array();
  for (const auto& [name, value] : arrays) names.push_back(name);
  return names;
}

inline void append_group(std::string& out, const NamedArrays& arrays) {
  for (const auto& [name, value] : arrays) out += serialize_array(value);
}

}  // namespace detail

inline std::string serialize_checkpoint(const Checkpoint& ckpt) {
  nlohmann::json header;
  header["field"] = field_config_to_json(ckpt.field);
  header["stage"] = ckpt.stage;
  header["iteration"] = ckpt.iteration;
  header["seed"] = ckpt.seed;
  header["rng_state"] = ckpt.rng_state;
  header["adam_step"] = ckpt.adam_step;
  header["arrays"] = {{"static", detail::array_names_json(ckpt.static_params)},
                      {"dynamic", detail::array_names_json(ckpt.dynamic_params)},
                      {"adam_m", detail::array_names_json(ckpt.adam_m)},
                      {"adam_v", detail::array_names_json(ckpt.adam_v)}};
  const std::string header_bytes = header.dump();

  std::string out;
  out.append(kCheckpointMagic, 8);
  detail::append_u64(out, header_bytes.size());
  out += header_bytes;
  detail::append_group(out, ckpt.static_params);
  detail::append_group(out, ckpt.dynamic_params);
  detail::append_group(out, ckpt.adam_m);
  detail::append_group(out, ckpt.adam_v);
  return out;
}

namespace detail {

inline NamedArrays read_group(ByteReader& reader, const nlohmann::json& names) {
  NamedArrays out;
  for (const auto& name : names) {
    const size_t start = reader.pos;
    // serialize_array output is self-describing; find its length by parsing
    // the header fields: magic(8) + dtype(4) + ndim(4) + dims.
    reader.pos = start + 8 + 4;
    const std::uint32_t ndim = reader.read_u32();
    if (ndim != 1 && ndim != 2) throw std::runtime_error("checkpoint: bad array rank");
    std::uint64_t count = 1;
    for (std::uint32_t d = 0; d < ndim; ++d) count *= reader.read_u64();
    const size_t end = reader.pos + count * 8;
    reader.require(count * 8);
    const Eigen::MatrixXd value =
        deserialize_array(reader.bytes.substr(start, end - start));
    reader.pos = end;
    out.emplace_back(name.get<std::string>(), value);
  }
  return out;
}

}  // namespace detail

inline Checkpoint deserialize_checkpoint(const std::string& bytes) {
  detail::ByteReader reader{bytes};
  if (reader.read_bytes(8) != std::string(kCheckpointMagic, 8))
    throw std::runtime_error("checkpoint: bad magic");
  const std::uint64_t header_len = reader.read_u64();
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(reader.read_bytes(header_len));
  } catch (const nlohmann::json::parse_error& e) {
    throw std::runtime_error("checkpoint: invalid header: " + std::string(e.what()));
  }

  Checkpoint ckpt;
  ckpt.field = field_config_from_json(header.at("field"));
  ckpt.stage = header.at("stage").get<int>();
  ckpt.iteration = header.at("iteration").get<long>();
  ckpt.seed = header.at("seed").get<std::uint64_t>();
  const auto& rng_state = header.at("rng_state");
  if (!rng_state.is_array() || rng_state.size() != 4)
    throw std::runtime_error("checkpoint: rng_state must have 4 words");
  for (int i = 0; i < 4; ++i) ckpt.rng_state[i] = rng_state[i].get<std::uint64_t>();
  ckpt.adam_step = header.at("adam_step").get<long>();

  const auto& arrays = header.at("arrays");
  ckpt.static_params = detail::read_group(reader, arrays.at("static"));
  ckpt.dynamic_params = detail::read_group(reader, arrays.at("dynamic"));
  ckpt.adam_m = detail::read_group(reader, arrays.at("adam_m"));
  ckpt.adam_v = detail::read_group(reader, arrays.at("adam_v"));
  if (reader.pos != bytes.size()) throw std::runtime_error("checkpoint: trailing bytes");
  return ckpt;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  write_file(path, serialize_checkpoint(ckpt));
}

inline Checkpoint load_checkpoint(const std::string& path) {
  return deserialize_checkpoint(read_file(path));
}

}  // namespace dvs
