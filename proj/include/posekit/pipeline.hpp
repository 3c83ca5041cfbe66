#pragma once

// Glue between datasets and the model: cropped training sources, the
// augmented batch stream, prediction and evaluation.

#include <functional>
#include <random>
#include <string>
#include <vector>

#include "posekit/config.hpp"
#include "posekit/data.hpp"
#include "posekit/eval.hpp"
#include "posekit/model.hpp"
#include "posekit/parallel.hpp"
#include "posekit/upsample.hpp"

namespace posekit {

struct TrainingSource {
  SourceTag tag = SourceTag::M;
  std::string origin;  // manifest path, for messages
  std::vector<TrainingSample> samples;
};

inline TrainingSource prepare_source(const Dataset& d, SourceTag tag, int crop_size, float fill) {
  TrainingSource src{tag, (d.root / "manifest.json").string(), std::vector<TrainingSample>(d.size())};
  const std::vector<int> k = d.keypoint_counts();
  parallel_for(static_cast<int>(d.size()), [&](int i) {
    const Annotation a = d.annotation(i);
    src.samples[i] = make_training_sample(d.image(i), a, tag, crop_size, fill, k[a.class_id]);
  });
  return src;
}

// Classes of every training dataset must agree with the first.
inline void check_same_classes(const std::vector<ClassInfo>& a, const std::vector<ClassInfo>& b, const std::string& where) {
  bool same = a.size() == b.size();
  for (size_t i = 0; same && i < a.size(); ++i) same = a[i].name == b[i].name && a[i].num_keypoints == b[i].num_keypoints;
  if (!same) throw Error(ErrorCode::validation, where + ": class list differs from the first training dataset");
}

struct BatchSettings {
  int batch_size = 20;
  bool augment = true;
  AugmentRanges ranges;
  float fill = 0.5f;
  double heatmap_sigma = 1.5;
  std::uint64_t seed = 1;
};

// Batch i is a pure function of (seed, i): the sampler picks sources,
// then each slot draws its augmentation from its own stream.
inline BatchProvider<float> make_batch_provider(const std::vector<TrainingSource>& sources,
                                                const std::vector<ClassInfo>& classes, const ModelConfig& cfg,
                                                const BatchSettings& bs) {
  std::vector<size_t> sizes;
  for (const auto& s : sources) {
    if (s.samples.empty()) throw Error(ErrorCode::empty_source, "training source '" + s.origin + "' has no samples");
    sizes.push_back(s.samples.size());
  }
  const MixSampler sampler(sizes, bs.seed);
  return [&sources, &classes, cfg, bs, sampler](int iteration) {
    const std::vector<Draw> draws = sampler.batch(static_cast<std::uint64_t>(iteration), bs.batch_size);
    std::vector<ModelSample<float>> batch(draws.size());
    parallel_for(static_cast<int>(draws.size()), [&](int i) {
      const TrainingSample& s = sources[draws[i].source].samples[draws[i].index];
      TrainingSample t = s;
      if (bs.augment) {
        std::seed_seq seq{static_cast<std::uint32_t>(bs.seed), static_cast<std::uint32_t>(bs.seed >> 32),
                          static_cast<std::uint32_t>(iteration), static_cast<std::uint32_t>(i), 0x617567u};
        std::mt19937_64 rng(seq);
        t = augment_or_keep(s, bs.ranges.draw(rng), classes[s.class_id].flip_pairs, bs.fill);
      }
      batch[i] = to_model_sample<float>(t, cfg.stride(), cfg.heatmap_size(), bs.heatmap_sigma);
    });
    return batch;
  };
}

struct Prediction {
  Viewpoint viewpoint;
  std::vector<Keypoint2D> keypoints;  // image pixels
};

// Heatmap argmax nudged a quarter cell toward the larger neighbour.
inline Vec2 refined_peak(const Heatmap<double>& h) {
  const DecodedKeypoint d = decode(h);
  double x = d.x, y = d.y;
  if (d.x > 0 && d.x + 1 < h.width) x += 0.25 * ((h.at(d.x + 1, d.y) > h.at(d.x - 1, d.y)) - (h.at(d.x + 1, d.y) < h.at(d.x - 1, d.y)));
  if (d.y > 0 && d.y + 1 < h.height) y += 0.25 * ((h.at(d.x, d.y + 1) > h.at(d.x, d.y - 1)) - (h.at(d.x, d.y + 1) < h.at(d.x, d.y - 1)));
  return {x, y};
}

// Viewpoint from the finest heads, upsampled to 1 degree; keypoints mapped
// from the crop back into the image.
inline Prediction predict(const ModelOutput& out, int class_id, const ClassLayout& layout, int stride,
                          const CropTransform& t) {
  Prediction p;
  const GranularityProbs& g = out.viewpoint.at(class_id);
  p.viewpoint = Viewpoint(predict_angle(g[0][0]), predict_angle(g[0][1]), predict_angle(g[0][2]));
  const auto& maps = out.final_heatmaps();
  for (int k = 0; k < layout.num_keypoints(class_id); ++k) {
    const Heatmap<double>& h = maps[layout.offset(class_id) + k];
    const Vec2 cell = refined_peak(h);
    const Vec2 q = t.to_image(Vec2(from_heatmap_coord(cell.x(), stride), from_heatmap_coord(cell.y(), stride)));
    p.keypoints.push_back({q.x(), q.y(), decode(h).visible()});
  }
  return p;
}

using Predictor = std::function<Prediction(const Image& image, const Annotation& gt)>;

struct InferenceSettings {
  bool multi_scale = false;
  std::vector<double> scales = default_inference_scales();
  float fill = 0.5f;
};

// Crops from the ground-truth box, as the evaluation assumes detection.
inline Predictor model_predictor(const Model<float>& model, const Params<float>& params, const InferenceSettings& s) {
  return [&model, &params, s](const Image& img, const Annotation& a) {
    const int size = model.config().input_size;
    auto [crop, t] = crop_image(img, a.bbox, size, s.fill);
    const ModelOutput out = s.multi_scale ? multi_scale_inference(model, params, crop, a.class_id, s.scales, s.fill)
                                          : model.forward(params, crop, a.class_id);
    return predict(out, a.class_id, model.layout(), model.config().stride(), t);
  };
}

// Ground truth as prediction; scores 1 / 1 / 0 by construction.
inline Prediction oracle_prediction(const Annotation& a) {
  Prediction p;
  if (a.viewpoint) p.viewpoint = *a.viewpoint;
  if (a.keypoints) p.keypoints = *a.keypoints;
  return p;
}

// Scores whichever annotations each sample carries and its source grants.
inline MetricsReport evaluate_dataset(const Dataset& d, const Predictor& predictor, double alpha = 0.1) {
  const int n = static_cast<int>(d.size());
  std::vector<Annotation> gts(n);
  std::vector<Prediction> preds(n);
  parallel_for(n, [&](int i) {
    gts[i] = d.annotation(i);
    preds[i] = predictor(d.image(i), gts[i]);
  });
  std::vector<ClassResults> results;
  for (const auto& c : d.classes) results.push_back({c.name, 0, {}, {}});
  for (int i = 0; i < n; ++i) {
    const Annotation& a = gts[i];
    const AnnotationMask m = mask_for(d.entries[i].source);
    ClassResults& r = results[a.class_id];
    ++r.n_samples;
    if (m.has_keypoints && a.keypoints) r.add_keypoints(preds[i].keypoints, *a.keypoints, a.bbox, alpha);
    if (m.has_viewpoint && a.viewpoint) r.add_viewpoint(preds[i].viewpoint, *a.viewpoint);
  }
  return build_report(results);
}

}  // namespace posekit
