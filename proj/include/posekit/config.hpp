#pragma once

// RunConfig: every knob of a CLI run in one JSON document. Unknown keys
// are rejected with their dotted path; `to_json` emits every default.

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "posekit/data.hpp"
#include "posekit/json_io.hpp"
#include "posekit/model.hpp"
#include "posekit/synthgen.hpp"

namespace posekit {

struct SourceConfig {
  std::string path;
  SourceTag tag = SourceTag::M;
};

struct RunConfig {
  std::uint64_t seed = 1;

  struct ModelSection {
    int input_size = 64;
    std::vector<int> backbone_channels{16, 16, 32, 32};
    int stage_channels = 32;
    int num_stages = 3;
    int viewpoint_hidden = 64;
  } model;

  struct DataSection {
    std::vector<SourceConfig> train;
    std::string test;
    double crop_fill = 0.5;
    double heatmap_sigma = 1.5;  // heatmap cells
  } data;

  struct AugmentSection {
    bool enabled = true;
    AugmentRanges ranges;
  } augment;

  struct TrainSection {
    int iterations = 3000;
    int batch_size = 20;
    int checkpoint_every = 500;
    // Desk-scale rate; the keypoint weight balances the heatmap sums
    // against the nine cross-entropies.
    OptimizerSettings optimizer{0.003, 0.9, 0.0005, 2000, 0.1, {3.0, 1.0}};
  } train;

  struct GenerateSection {
    std::vector<std::string> classes{"car"};
    int n = 100;
    GeneratorOptions options;
  } generate;

  struct EvalSection {
    bool multi_scale = false;
    std::vector<double> scales = default_inference_scales();
    double alpha = 0.1;
  } eval;

  void validate() const;
};

// Model layout for a set of dataset classes.
inline ModelConfig model_config_for(const RunConfig& rc, const std::vector<int>& keypoints_per_class) {
  ModelConfig m;
  m.input_size = rc.model.input_size;
  m.backbone_channels = rc.model.backbone_channels;
  m.stage_channels = rc.model.stage_channels;
  m.num_stages = rc.model.num_stages;
  m.viewpoint_hidden = rc.model.viewpoint_hidden;
  m.keypoints_per_class = keypoints_per_class;
  m.seed = rc.seed;
  m.validate();
  return m;
}

inline void RunConfig::validate() const {
  auto fail = [](const std::string& m) { throw Error(ErrorCode::config, m); };
  model_config_for(*this, {1});
  if (!(data.crop_fill >= 0 && data.crop_fill <= 1)) fail("data.crop_fill must be in [0, 1]");
  if (!(data.heatmap_sigma > 0)) fail("data.heatmap_sigma must be positive");
  const AugmentRanges& a = augment.ranges;
  if (!(a.max_rotation >= 0 && a.max_rotation <= 45)) fail("augment.max_rotation must be in [0, 45]");
  if (!(a.min_scale >= 0.4 && a.min_scale <= a.max_scale && a.max_scale <= 1.0))
    fail("augment scale range must satisfy 0.4 <= min_scale <= max_scale <= 1");
  if (!(a.max_translation >= 0)) fail("augment.max_translation must be non-negative");
  if (!(a.component_probability >= 0 && a.component_probability <= 1))
    fail("augment.component_probability must be in [0, 1]");
  if (train.iterations < 0) fail("train.iterations must be non-negative");
  if (train.batch_size <= 0) fail("train.batch_size must be positive");
  if (train.checkpoint_every <= 0) fail("train.checkpoint_every must be positive");
  const OptimizerSettings& o = train.optimizer;
  if (!(o.learning_rate > 0)) fail("train.learning_rate must be positive");
  if (!(o.momentum >= 0 && o.momentum < 1)) fail("train.momentum must be in [0, 1)");
  if (!(o.weight_decay >= 0)) fail("train.weight_decay must be non-negative");
  if (o.decay_every < 0) fail("train.decay_every must be non-negative");
  if (!(o.decay_factor > 0 && o.decay_factor <= 1)) fail("train.decay_factor must be in (0, 1]");
  if (!(o.weights.keypoint >= 0) || !(o.weights.viewpoint >= 0)) fail("loss weights must be non-negative");
  if (generate.classes.empty()) fail("generate.classes must name at least one class");
  for (const auto& c : generate.classes) builtin_class(c);
  if (generate.n <= 0) fail("generate.n must be positive");
  generate.options.validate();
  if (eval.scales.empty()) fail("eval.scales must not be empty");
  for (double s : eval.scales)
    if (!(s > 0)) fail("eval.scales must be positive");
  if (!(eval.alpha > 0)) fail("eval.alpha must be positive");
}

inline json to_json(const RunConfig& c) {
  json train_sources = json::array();
  for (const auto& s : c.data.train) train_sources.push_back({{"path", s.path}, {"source", to_string(s.tag)}});
  const auto& a = c.augment.ranges;
  const auto& o = c.train.optimizer;
  const auto& g = c.generate.options;
  return {
      {"seed", c.seed},
      {"model",
       {{"input_size", c.model.input_size},
        {"backbone_channels", c.model.backbone_channels},
        {"stage_channels", c.model.stage_channels},
        {"num_stages", c.model.num_stages},
        {"viewpoint_hidden", c.model.viewpoint_hidden}}},
      {"data",
       {{"train", train_sources},
        {"test", c.data.test},
        {"crop_fill", c.data.crop_fill},
        {"heatmap_sigma", c.data.heatmap_sigma}}},
      {"augment",
       {{"enabled", c.augment.enabled},
        {"flip", a.flip},
        {"max_rotation", a.max_rotation},
        {"min_scale", a.min_scale},
        {"max_scale", a.max_scale},
        {"max_translation", a.max_translation},
        {"component_probability", a.component_probability}}},
      {"train",
       {{"iterations", c.train.iterations},
        {"batch_size", c.train.batch_size},
        {"checkpoint_every", c.train.checkpoint_every},
        {"learning_rate", o.learning_rate},
        {"momentum", o.momentum},
        {"weight_decay", o.weight_decay},
        {"decay_every", o.decay_every},
        {"decay_factor", o.decay_factor},
        {"keypoint_weight", o.weights.keypoint},
        {"viewpoint_weight", o.weights.viewpoint}}},
      {"generate",
       {{"classes", c.generate.classes},
        {"n", c.generate.n},
        {"image_size", g.image_size},
        {"focal", g.focal},
        {"distance_min", g.distance_min},
        {"distance_max", g.distance_max},
        {"max_offset", g.max_offset},
        {"azimuth_min", g.ranges.azimuth_min},
        {"azimuth_max", g.ranges.azimuth_max},
        {"elevation_min", g.ranges.elevation_min},
        {"elevation_max", g.ranges.elevation_max},
        {"tilt_min", g.ranges.tilt_min},
        {"tilt_max", g.ranges.tilt_max}}},
      {"eval", {{"multi_scale", c.eval.multi_scale}, {"scales", c.eval.scales}, {"alpha", c.eval.alpha}}},
  };
}

namespace detail {

// Reads known keys from one JSON object and rejects whatever is left.
class KeyReader {
 public:
  KeyReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw Error(ErrorCode::config, "config: '" + display() + "' must be an object");
  }

  template <typename T>
  void read(const std::string& key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw Error(ErrorCode::config, "config: key '" + child(key) + "' has the wrong type");
    }
  }

  const json* section(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  std::string child(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) throw Error(ErrorCode::config, "config: unknown key '" + child(k) + "'");
  }

 private:
  std::string display() const { return path_.empty() ? "<root>" : path_; }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace detail

inline RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  detail::KeyReader root(j, "");
  root.read("seed", c.seed);
  if (const json* s = root.section("model")) {
    detail::KeyReader r(*s, "model");
    r.read("input_size", c.model.input_size);
    r.read("backbone_channels", c.model.backbone_channels);
    r.read("stage_channels", c.model.stage_channels);
    r.read("num_stages", c.model.num_stages);
    r.read("viewpoint_hidden", c.model.viewpoint_hidden);
    r.finish();
  }
  if (const json* s = root.section("data")) {
    detail::KeyReader r(*s, "data");
    if (const json* t = r.section("train")) {
      if (!t->is_array()) throw Error(ErrorCode::config, "config: 'data.train' must be a list");
      c.data.train.clear();
      for (size_t i = 0; i < t->size(); ++i) {
        detail::KeyReader e((*t)[i], "data.train[" + std::to_string(i) + "]");
        SourceConfig sc;
        std::string tag = "M";
        e.read("path", sc.path);
        e.read("source", tag);
        e.finish();
        if (sc.path.empty()) throw Error(ErrorCode::config, "config: '" + e.child("path") + "' is required");
        sc.tag = parse_source_tag(tag);
        c.data.train.push_back(sc);
      }
    }
    r.read("test", c.data.test);
    r.read("crop_fill", c.data.crop_fill);
    r.read("heatmap_sigma", c.data.heatmap_sigma);
    r.finish();
  }
  if (const json* s = root.section("augment")) {
    detail::KeyReader r(*s, "augment");
    auto& a = c.augment.ranges;
    r.read("enabled", c.augment.enabled);
    r.read("flip", a.flip);
    r.read("max_rotation", a.max_rotation);
    r.read("min_scale", a.min_scale);
    r.read("max_scale", a.max_scale);
    r.read("max_translation", a.max_translation);
    r.read("component_probability", a.component_probability);
    r.finish();
  }
  if (const json* s = root.section("train")) {
    detail::KeyReader r(*s, "train");
    auto& o = c.train.optimizer;
    r.read("iterations", c.train.iterations);
    r.read("batch_size", c.train.batch_size);
    r.read("checkpoint_every", c.train.checkpoint_every);
    r.read("learning_rate", o.learning_rate);
    r.read("momentum", o.momentum);
    r.read("weight_decay", o.weight_decay);
    r.read("decay_every", o.decay_every);
    r.read("decay_factor", o.decay_factor);
    r.read("keypoint_weight", o.weights.keypoint);
    r.read("viewpoint_weight", o.weights.viewpoint);
    r.finish();
  }
  if (const json* s = root.section("generate")) {
    detail::KeyReader r(*s, "generate");
    auto& g = c.generate.options;
    r.read("classes", c.generate.classes);
    r.read("n", c.generate.n);
    r.read("image_size", g.image_size);
    r.read("focal", g.focal);
    r.read("distance_min", g.distance_min);
    r.read("distance_max", g.distance_max);
    r.read("max_offset", g.max_offset);
    r.read("azimuth_min", g.ranges.azimuth_min);
    r.read("azimuth_max", g.ranges.azimuth_max);
    r.read("elevation_min", g.ranges.elevation_min);
    r.read("elevation_max", g.ranges.elevation_max);
    r.read("tilt_min", g.ranges.tilt_min);
    r.read("tilt_max", g.ranges.tilt_max);
    r.finish();
  }
  if (const json* s = root.section("eval")) {
    detail::KeyReader r(*s, "eval");
    r.read("multi_scale", c.eval.multi_scale);
    r.read("scales", c.eval.scales);
    r.read("alpha", c.eval.alpha);
    r.finish();
  }
  root.finish();
  c.validate();
  return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  json j;
  try {
    j = read_json(path);
  } catch (const Error& e) {
    throw Error(e.code() == ErrorCode::parse ? ErrorCode::config : e.code(), e.what());
  }
  return run_config_from_json(j);
}

}  // namespace posekit
