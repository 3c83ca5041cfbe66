#pragma once

// JSON checkpoint: run config echo, model layout, iteration, parameters and
// optimizer velocity. Floats pass through double and the shortest
// round-trip decimal form, so save/load is bit-exact.

#include <filesystem>
#include <string>
#include <vector>

#include "posekit/config.hpp"
#include "posekit/json_io.hpp"
#include "posekit/model.hpp"

namespace posekit {

inline constexpr const char* kCheckpointFormat = "posekit-checkpoint";
inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  RunConfig run;
  ModelConfig model;
  std::vector<std::string> class_names;
  OptimizerState<float> state;
  Params<float> params;
};

inline json model_config_json(const ModelConfig& m) {
  return {{"input_size", m.input_size},
          {"backbone_channels", m.backbone_channels},
          {"stage_channels", m.stage_channels},
          {"num_stages", m.num_stages},
          {"viewpoint_hidden", m.viewpoint_hidden},
          {"keypoints_per_class", m.keypoints_per_class},
          {"seed", m.seed}};
}

inline json params_json(const Params<float>& p) {
  json out = json::array();
  for (const auto& t : p.tensors) {
    std::vector<double> v(t.values.begin(), t.values.end());
    out.push_back({{"name", t.name}, {"group", to_string(t.group)}, {"shape", t.shape}, {"values", v}});
  }
  return out;
}

inline json checkpoint_json(const Checkpoint& c) {
  json j{{"format", kCheckpointFormat},
         {"version", kCheckpointVersion},
         {"run_config", to_json(c.run)},
         {"model", model_config_json(c.model)},
         {"classes", c.class_names},
         {"iteration", c.state.iteration},
         {"params", params_json(c.params)},
         {"velocity", nullptr}};
  if (!c.state.velocity.tensors.empty()) j["velocity"] = params_json(c.state.velocity);
  return j;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  write_json(path, checkpoint_json(c), -1);
}

namespace detail {

// Values into a parameter set of known layout, checking names and sizes.
inline void fill_params(const json& arr, Params<float>& into, const std::string& where) {
  if (!arr.is_array() || arr.size() != into.tensors.size())
    throw Error(ErrorCode::shape_mismatch, where + ": parameter list does not match the model layout");
  for (size_t i = 0; i < arr.size(); ++i) {
    auto& t = into.tensors[i];
    const std::string name = field<std::string>(arr[i], "name", where);
    if (name != t.name) throw Error(ErrorCode::shape_mismatch, where + ": expected tensor '" + t.name + "', found '" + name + "'");
    const auto v = field<std::vector<double>>(arr[i], "values", where);
    if (v.size() != t.values.size() || field<std::vector<int>>(arr[i], "shape", where) != t.shape)
      throw Error(ErrorCode::shape_mismatch, where + ": tensor '" + name + "' has the wrong shape");
    for (size_t k = 0; k < v.size(); ++k) t.values[k] = static_cast<float>(v[k]);
  }
}

}  // namespace detail

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const std::string where = path.string();
  const json j = read_json(path);
  if (field<std::string>(j, "format", where) != kCheckpointFormat)
    throw Error(ErrorCode::parse, where + ": not a posekit checkpoint");
  if (field<int>(j, "version", where) != kCheckpointVersion)
    throw Error(ErrorCode::parse, where + ": unsupported checkpoint version");
  Checkpoint c;
  c.run = run_config_from_json(field<json>(j, "run_config", where));
  const json m = field<json>(j, "model", where);
  c.model.input_size = field<int>(m, "input_size", where);
  c.model.backbone_channels = field<std::vector<int>>(m, "backbone_channels", where);
  c.model.stage_channels = field<int>(m, "stage_channels", where);
  c.model.num_stages = field<int>(m, "num_stages", where);
  c.model.viewpoint_hidden = field<int>(m, "viewpoint_hidden", where);
  c.model.keypoints_per_class = field<std::vector<int>>(m, "keypoints_per_class", where);
  c.model.seed = field<std::uint64_t>(m, "seed", where);
  c.model.validate();
  c.class_names = field<std::vector<std::string>>(j, "classes", where);
  if (static_cast<int>(c.class_names.size()) != c.model.num_classes())
    throw Error(ErrorCode::shape_mismatch, where + ": class list does not match the model");
  c.state.iteration = field<int>(j, "iteration", where);
  c.params = init_params<float>(c.model, false);
  detail::fill_params(field<json>(j, "params", where), c.params, where);
  if (!j.contains("velocity")) throw Error(ErrorCode::parse, where + ": missing field 'velocity'");
  if (!j["velocity"].is_null()) {
    c.state.velocity = c.params.zeros_like();
    detail::fill_params(j["velocity"], c.state.velocity, where);
  }
  return c;
}

}  // namespace posekit
