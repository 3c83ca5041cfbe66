#pragma once

// Multi-stage heatmap network with a multi-granularity viewpoint head.
//
//   image -> backbone (conv+ReLU blocks, stride 2 except the last) -> F
//   stage 1: F -> conv3x3+ReLU -> h1 -> conv1x1 -> heatmaps H1
//   stage s: [F, H_{s-1} of the sample's class] -> conv3x3+ReLU -> h_s -> conv1x1 -> H_s
//   viewpoint: flatten(h_S) -> FC+ReLU -> FC -> per class 9 softmax vectors
//              (granularities 15/30/60 x azimuth/elevation/tilt)
//
// Gradients are computed by an explicit reverse pass; the scalar type is a
// template parameter so the same code runs in double for gradient checks
// and in float for training.

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "posekit/binning.hpp"
#include "posekit/error.hpp"
#include "posekit/heatmap.hpp"
#include "posekit/image.hpp"
#include "posekit/loss.hpp"
#include "posekit/parallel.hpp"
#include "posekit/upsample.hpp"

namespace posekit {

struct ModelConfig {
  int input_size = 64;
  std::vector<int> backbone_channels{16, 16, 32, 32};
  int stage_channels = 32;
  int num_stages = 3;
  int viewpoint_hidden = 64;
  std::vector<int> keypoints_per_class{8};
  std::uint64_t seed = 1;

  int num_blocks() const { return static_cast<int>(backbone_channels.size()); }
  int stride() const { return 1 << (num_blocks() - 1); }
  int heatmap_size() const { return input_size / stride(); }
  int num_classes() const { return static_cast<int>(keypoints_per_class.size()); }
  ClassLayout layout() const { return ClassLayout(keypoints_per_class); }

  void validate() const {
    auto fail = [](const std::string& m) { throw Error(ErrorCode::config, "model config: " + m); };
    if (num_stages < 2 || num_stages > 6) fail("num_stages must be in [2, 6]");
    if (backbone_channels.size() < 2 || backbone_channels.size() > 6) fail("backbone needs 2 to 6 blocks");
    for (int c : backbone_channels)
      if (c <= 0) fail("backbone channels must be positive");
    if (stage_channels <= 0 || viewpoint_hidden <= 0) fail("channel counts must be positive");
    if (input_size <= 0 || input_size % stride() != 0)
      fail("input size " + std::to_string(input_size) + " not divisible by stride " + std::to_string(stride()));
    if (keypoints_per_class.empty()) fail("at least one class required");
    for (int k : keypoints_per_class)
      if (k <= 0) fail("every class needs at least one keypoint");
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Schemes of the viewpoint head, [granularity][angle].
inline const std::array<std::array<BinningScheme, 3>, 3>& viewpoint_schemes() {
  static const auto schemes = [] {
    std::array<std::array<BinningScheme, 3>, 3> s;
    for (size_t g = 0; g < kBinSizes.size(); ++g)
      for (size_t a = 0; a < 3; ++a) s[g][a] = make_scheme(kAngleKinds[a], kBinSizes[g]);
    return s;
  }();
  return schemes;
}

// Logit offset of (granularity, angle) inside one class block.
inline int viewpoint_offset(int g, int a) {
  int off = 0;
  for (int gi = 0; gi < 3; ++gi)
    for (int ai = 0; ai < 3; ++ai) {
      if (gi == g && ai == a) return off;
      off += viewpoint_schemes()[gi][ai].count();
    }
  return off;
}

inline int viewpoint_logits_per_class() { return viewpoint_offset(3, 0); }

enum class ParamGroup { shared, keypoint, viewpoint };

constexpr const char* to_string(ParamGroup g) {
  switch (g) {
    case ParamGroup::shared: return "shared";
    case ParamGroup::keypoint: return "keypoint";
    case ParamGroup::viewpoint: return "viewpoint";
  }
  return "?";
}

template <typename S>
struct ParamTensor {
  std::string name;
  std::vector<int> shape;
  ParamGroup group = ParamGroup::shared;
  std::vector<S> values;

  size_t size() const { return values.size(); }
  friend bool operator==(const ParamTensor&, const ParamTensor&) = default;
};

template <typename S>
struct Params {
  std::vector<ParamTensor<S>> tensors;

  const ParamTensor<S>& get(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return t;
    throw Error(ErrorCode::invalid_argument, "no parameter named '" + name + "'");
  }
  ParamTensor<S>& get(const std::string& name) {
    return const_cast<ParamTensor<S>&>(std::as_const(*this).get(name));
  }

  size_t total_size() const {
    size_t n = 0;
    for (const auto& t : tensors) n += t.size();
    return n;
  }

  Params zeros_like() const {
    Params z = *this;
    for (auto& t : z.tensors) std::fill(t.values.begin(), t.values.end(), S(0));
    return z;
  }

  template <typename T>
  Params<T> cast() const {
    Params<T> out;
    for (const auto& t : tensors)
      out.tensors.push_back({t.name, t.shape, t.group, std::vector<T>(t.values.begin(), t.values.end())});
    return out;
  }

  friend bool operator==(const Params&, const Params&) = default;
};

namespace detail {

template <typename S>
using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using MapMat = Eigen::Map<RowMat<S>>;
template <typename S>
using ConstMapMat = Eigen::Map<const RowMat<S>>;
template <typename S>
using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

struct ConvShape {
  int cin = 0, cout = 0, k = 3, stride = 1, hin = 0, win = 0;
  int pad() const { return k / 2; }
  int hout() const { return (hin + 2 * pad() - k) / stride + 1; }
  int wout() const { return (win + 2 * pad() - k) / stride + 1; }
  int patch() const { return cin * k * k; }
  int pixels_out() const { return hout() * wout(); }
};

template <typename S>
void im2col(std::span<const S> in, const ConvShape& sh, RowMat<S>& cols) {
  const int ho = sh.hout(), wo = sh.wout(), k = sh.k, pad = sh.pad();
  cols.resize(sh.patch(), ho * wo);
  for (int ci = 0; ci < sh.cin; ++ci)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        S* row = cols.data() + static_cast<size_t>((ci * k + ky) * k + kx) * ho * wo;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * sh.stride + ky - pad;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * sh.stride + kx - pad;
            row[oy * wo + ox] = (iy < 0 || iy >= sh.hin || ix < 0 || ix >= sh.win)
                                    ? S(0)
                                    : in[(static_cast<size_t>(ci) * sh.hin + iy) * sh.win + ix];
          }
        }
      }
}

template <typename S>
void col2im_add(const RowMat<S>& cols, const ConvShape& sh, std::span<S> out) {
  const int ho = sh.hout(), wo = sh.wout(), k = sh.k, pad = sh.pad();
  for (int ci = 0; ci < sh.cin; ++ci)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        const S* row = cols.data() + static_cast<size_t>((ci * k + ky) * k + kx) * ho * wo;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * sh.stride + ky - pad;
          if (iy < 0 || iy >= sh.hin) continue;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * sh.stride + kx - pad;
            if (ix < 0 || ix >= sh.win) continue;
            out[(static_cast<size_t>(ci) * sh.hin + iy) * sh.win + ix] += row[oy * wo + ox];
          }
        }
      }
}

template <typename S>
void conv_forward(const ConvShape& sh, const ParamTensor<S>& w, const ParamTensor<S>& b,
                  std::span<const S> in, RowMat<S>& cols, std::vector<S>& out) {
  im2col(in, sh, cols);
  out.assign(static_cast<size_t>(sh.cout) * sh.pixels_out(), S(0));
  ConstMapMat<S> wm(w.values.data(), sh.cout, sh.patch());
  MapMat<S> om(out.data(), sh.cout, sh.pixels_out());
  om.noalias() = wm * cols;
  for (int co = 0; co < sh.cout; ++co) om.row(co).array() += b.values[co];
}

// Accumulates dW, db and (optionally) adds dInput.
template <typename S>
void conv_backward(const ConvShape& sh, const ParamTensor<S>& w, const RowMat<S>& cols,
                   std::span<const S> dout, ParamTensor<S>& dw, ParamTensor<S>& db, std::span<S> din) {
  ConstMapMat<S> dom(dout.data(), sh.cout, sh.pixels_out());
  MapMat<S> dwm(dw.values.data(), sh.cout, sh.patch());
  dwm.noalias() += dom * cols.transpose();
  for (int co = 0; co < sh.cout; ++co) db.values[co] += dom.row(co).sum();
  if (din.empty()) return;
  ConstMapMat<S> wm(w.values.data(), sh.cout, sh.patch());
  RowMat<S> dcols = wm.transpose() * dom;
  col2im_add(dcols, sh, din);
}

template <typename S>
void relu_inplace(std::vector<S>& v) {
  for (S& x : v) x = x > S(0) ? x : S(0);
}

// Zeroes gradient entries whose forward pre-activation was not positive.
template <typename S>
void relu_backward(std::span<const S> pre, std::span<S> grad) {
  for (size_t i = 0; i < grad.size(); ++i)
    if (!(pre[i] > S(0))) grad[i] = S(0);
}

template <typename S>
void softmax(std::span<const S> logits, std::span<S> out) {
  S m = logits[0];
  for (S v : logits) m = std::max(m, v);
  S sum = 0;
  for (size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - m);
    sum += out[i];
  }
  for (auto& p : out) p /= sum;
}

}  // namespace detail

// Index of each parameter tensor inside Params::tensors.
struct ParamIndex {
  std::vector<int> backbone_w, backbone_b;
  std::vector<int> stage_w, stage_b, head_w, head_b;
  int fc1_w = -1, fc1_b = -1, fc2_w = -1, fc2_b = -1;

  explicit ParamIndex(const ModelConfig& cfg) {
    int i = 0;
    for (int b = 0; b < cfg.num_blocks(); ++b) {
      backbone_w.push_back(i++);
      backbone_b.push_back(i++);
    }
    for (int s = 0; s < cfg.num_stages; ++s) {
      stage_w.push_back(i++);
      stage_b.push_back(i++);
      head_w.push_back(i++);
      head_b.push_back(i++);
    }
    fc1_w = i++;
    fc1_b = i++;
    fc2_w = i++;
    fc2_b = i++;
  }
};

// Seeded fan-in initialization, zero biases: gain 2 (He) for layers
// followed by a ReLU, gain 1 for the linear outputs (heatmap heads and the
// logit layer). With `randomize` false every tensor is zero (shape
// template only).
template <typename S>
Params<S> init_params(const ModelConfig& cfg, bool randomize = true) {
  cfg.validate();
  std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32), 0x5eedu};
  std::mt19937_64 rng(seq);
  Params<S> p;
  auto add = [&](std::string name, std::vector<int> shape, ParamGroup group, int fan_in, double gain = 2.0) {
    size_t n = 1;
    for (int d : shape) n *= static_cast<size_t>(d);
    ParamTensor<S> t{std::move(name), std::move(shape), group, std::vector<S>(n, S(0))};
    if (randomize && fan_in > 0) {
      std::normal_distribution<double> dist(0.0, std::sqrt(gain / fan_in));
      for (auto& v : t.values) v = static_cast<S>(dist(rng));
    }
    p.tensors.push_back(std::move(t));
  };
  const int total_k = cfg.layout().total();
  int cin = 3;
  for (int b = 0; b < cfg.num_blocks(); ++b) {
    const int cout = cfg.backbone_channels[b];
    const std::string pre = "backbone." + std::to_string(b);
    add(pre + ".weight", {cout, cin, 3, 3}, ParamGroup::shared, cin * 9);
    add(pre + ".bias", {cout}, ParamGroup::shared, 0);
    cin = cout;
  }
  const int feat = cin;
  for (int s = 0; s < cfg.num_stages; ++s) {
    const std::string pre = "stage." + std::to_string(s + 1);
    const int sin = s == 0 ? feat : feat + total_k;
    add(pre + ".conv.weight", {cfg.stage_channels, sin, 3, 3}, ParamGroup::shared, sin * 9);
    add(pre + ".conv.bias", {cfg.stage_channels}, ParamGroup::shared, 0);
    // Only the last head is off the viewpoint path.
    const ParamGroup hg = s + 1 == cfg.num_stages ? ParamGroup::keypoint : ParamGroup::shared;
    add(pre + ".head.weight", {total_k, cfg.stage_channels, 1, 1}, hg, cfg.stage_channels, 1.0);
    add(pre + ".head.bias", {total_k}, hg, 0);
  }
  const int flat = cfg.stage_channels * cfg.heatmap_size() * cfg.heatmap_size();
  add("viewpoint.fc1.weight", {cfg.viewpoint_hidden, flat}, ParamGroup::viewpoint, flat);
  add("viewpoint.fc1.bias", {cfg.viewpoint_hidden}, ParamGroup::viewpoint, 0);
  const int logits = cfg.num_classes() * viewpoint_logits_per_class();
  add("viewpoint.fc2.weight", {logits, cfg.viewpoint_hidden}, ParamGroup::viewpoint, cfg.viewpoint_hidden, 1.0);
  add("viewpoint.fc2.bias", {logits}, ParamGroup::viewpoint, 0);
  return p;
}

// Training example as the network consumes it.
template <typename S>
struct ModelSample {
  Image image;  // input_size x input_size crop
  int class_id = 0;
  AnnotationMask mask;
  std::vector<Heatmap<S>> gt_heatmaps;  // K_c maps, used when mask.has_keypoints
  std::array<AngleBins, 3> gt_bins{};   // per granularity, used when mask.has_viewpoint
};

struct ModelOutput {
  // [stage][stacked map], all classes.
  std::vector<std::vector<Heatmap<double>>> stage_heatmaps;
  // [class] distributions per granularity and angle.
  std::vector<GranularityProbs> viewpoint;

  const std::vector<Heatmap<double>>& final_heatmaps() const { return stage_heatmaps.back(); }
};

// Intermediate values of one forward pass, kept for the reverse pass.
template <typename S>
struct ForwardCache {
  int class_id = 0;
  std::vector<detail::RowMat<S>> backbone_cols;
  std::vector<std::vector<S>> backbone_pre;  // pre-activation
  std::vector<std::vector<S>> backbone_act;
  std::vector<detail::RowMat<S>> stage_cols;
  std::vector<std::vector<S>> stage_pre;
  std::vector<std::vector<S>> stage_act;
  std::vector<detail::RowMat<S>> head_cols;
  std::vector<std::vector<S>> heatmaps;  // [stage] total_k x hs x hs
  std::vector<S> fc1_pre;
  std::vector<S> fc1_act;
  std::vector<S> logits;
  std::vector<S> probs;  // softmax per vector
};

template <typename S>
class Model {
 public:
  explicit Model(ModelConfig config) : cfg_(std::move(config)), index_(cfg_), layout_(cfg_.layout()) {
    cfg_.validate();
    int cin = 3, size = cfg_.input_size;
    for (int b = 0; b < cfg_.num_blocks(); ++b) {
      detail::ConvShape sh{cin, cfg_.backbone_channels[b], 3, b + 1 < cfg_.num_blocks() ? 2 : 1, size, size};
      backbone_.push_back(sh);
      cin = sh.cout;
      size = sh.hout();
    }
    feat_channels_ = cin;
    hs_ = size;
    for (int s = 0; s < cfg_.num_stages; ++s) {
      const int sin = s == 0 ? feat_channels_ : feat_channels_ + layout_.total();
      stages_.push_back({sin, cfg_.stage_channels, 3, 1, hs_, hs_});
      heads_.push_back({cfg_.stage_channels, layout_.total(), 1, 1, hs_, hs_});
    }
  }

  const ModelConfig& config() const { return cfg_; }
  const ClassLayout& layout() const { return layout_; }
  int heatmap_size() const { return hs_; }

  void check_params(const Params<S>& p) const {
    const Params<S> ref = init_shapes();
    if (p.tensors.size() != ref.tensors.size())
      throw Error(ErrorCode::shape_mismatch, "parameter set does not match the model config");
    for (size_t i = 0; i < ref.tensors.size(); ++i)
      if (p.tensors[i].name != ref.tensors[i].name || p.tensors[i].shape != ref.tensors[i].shape ||
          p.tensors[i].size() != ref.tensors[i].size())
        throw Error(ErrorCode::shape_mismatch, "parameter '" + ref.tensors[i].name + "' has the wrong shape");
  }

  ForwardCache<S> forward_cache(const Params<S>& p, const Image& image, int class_id) const {
    if (image.width != cfg_.input_size || image.height != cfg_.input_size) {
      throw Error(ErrorCode::shape_mismatch, "input crop is " + std::to_string(image.width) + "x" +
                                                 std::to_string(image.height) + ", model expects " +
                                                 std::to_string(cfg_.input_size));
    }
    if (class_id < 0 || class_id >= layout_.num_classes())
      throw Error(ErrorCode::out_of_range, "class id " + std::to_string(class_id) + " out of range");
    const auto& T = p.tensors;
    ForwardCache<S> c;
    c.class_id = class_id;
    // Pixels centered on mid-gray.
    std::vector<S> x(image.data.size());
    for (size_t i = 0; i < x.size(); ++i) x[i] = static_cast<S>(image.data[i]) - S(0.5);
    const int nb = cfg_.num_blocks();
    c.backbone_cols.resize(nb);
    c.backbone_pre.resize(nb);
    c.backbone_act.resize(nb);
    for (int b = 0; b < nb; ++b) {
      std::span<const S> in = b == 0 ? std::span<const S>(x) : std::span<const S>(c.backbone_act[b - 1]);
      detail::conv_forward(backbone_[b], T[index_.backbone_w[b]], T[index_.backbone_b[b]], in,
                           c.backbone_cols[b], c.backbone_pre[b]);
      c.backbone_act[b] = c.backbone_pre[b];
      detail::relu_inplace(c.backbone_act[b]);
    }
    const std::vector<S>& feat = c.backbone_act.back();
    const int ns = cfg_.num_stages;
    const size_t plane = static_cast<size_t>(hs_) * hs_;
    c.stage_cols.resize(ns);
    c.stage_pre.resize(ns);
    c.stage_act.resize(ns);
    c.head_cols.resize(ns);
    c.heatmaps.resize(ns);
    std::vector<S> stage_in;
    for (int s = 0; s < ns; ++s) {
      if (s == 0) {
        stage_in = feat;
      } else {
        stage_in.assign(feat.begin(), feat.end());
        stage_in.resize(feat.size() + static_cast<size_t>(layout_.total()) * plane, S(0));
        const size_t off = static_cast<size_t>(layout_.offset(class_id)) * plane;
        const size_t len = static_cast<size_t>(layout_.num_keypoints(class_id)) * plane;
        std::copy_n(c.heatmaps[s - 1].begin() + off, len, stage_in.begin() + feat.size() + off);
      }
      detail::conv_forward(stages_[s], T[index_.stage_w[s]], T[index_.stage_b[s]], std::span<const S>(stage_in),
                           c.stage_cols[s], c.stage_pre[s]);
      c.stage_act[s] = c.stage_pre[s];
      detail::relu_inplace(c.stage_act[s]);
      detail::conv_forward(heads_[s], T[index_.head_w[s]], T[index_.head_b[s]], std::span<const S>(c.stage_act[s]),
                           c.head_cols[s], c.heatmaps[s]);
    }
    // Viewpoint head on the final stage features.
    const auto& w1 = T[index_.fc1_w];
    const auto& b1 = T[index_.fc1_b];
    const auto& w2 = T[index_.fc2_w];
    const auto& b2 = T[index_.fc2_b];
    const int flat = static_cast<int>(c.stage_act.back().size());
    const int hidden = cfg_.viewpoint_hidden;
    const int nlog = static_cast<int>(b2.size());
    Eigen::Map<const detail::Vec<S>> v(c.stage_act.back().data(), flat);
    c.fc1_pre.resize(hidden);
    Eigen::Map<detail::Vec<S>>(c.fc1_pre.data(), hidden) =
        detail::ConstMapMat<S>(w1.values.data(), hidden, flat) * v +
        Eigen::Map<const detail::Vec<S>>(b1.values.data(), hidden);
    c.fc1_act = c.fc1_pre;
    detail::relu_inplace(c.fc1_act);
    c.logits.resize(nlog);
    Eigen::Map<detail::Vec<S>>(c.logits.data(), nlog) =
        detail::ConstMapMat<S>(w2.values.data(), nlog, hidden) *
            Eigen::Map<const detail::Vec<S>>(c.fc1_act.data(), hidden) +
        Eigen::Map<const detail::Vec<S>>(b2.values.data(), nlog);
    c.probs.resize(nlog);
    const int per_class = viewpoint_logits_per_class();
    for (int cls = 0; cls < layout_.num_classes(); ++cls)
      for (int g = 0; g < 3; ++g)
        for (int a = 0; a < 3; ++a) {
          const size_t off = static_cast<size_t>(cls) * per_class + viewpoint_offset(g, a);
          const size_t n = viewpoint_schemes()[g][a].count();
          detail::softmax(std::span<const S>(c.logits).subspan(off, n), std::span<S>(c.probs).subspan(off, n));
        }
    return c;
  }

  ModelOutput to_output(const ForwardCache<S>& c) const {
    ModelOutput out;
    const size_t plane = static_cast<size_t>(hs_) * hs_;
    for (const auto& h : c.heatmaps) {
      std::vector<Heatmap<double>> maps;
      for (int k = 0; k < layout_.total(); ++k) {
        Heatmap<double> m(hs_, hs_);
        for (size_t i = 0; i < plane; ++i) m.values[i] = static_cast<double>(h[k * plane + i]);
        maps.push_back(std::move(m));
      }
      out.stage_heatmaps.push_back(std::move(maps));
    }
    const int per_class = viewpoint_logits_per_class();
    for (int cls = 0; cls < layout_.num_classes(); ++cls) {
      GranularityProbs gp;
      for (int g = 0; g < 3; ++g)
        for (int a = 0; a < 3; ++a) {
          const BinningScheme& sch = viewpoint_schemes()[g][a];
          const size_t off = static_cast<size_t>(cls) * per_class + viewpoint_offset(g, a);
          std::vector<double> pr(sch.count());
          double sum = 0.0;
          for (int i = 0; i < sch.count(); ++i) sum += pr[i] = static_cast<double>(c.probs[off + i]);
          for (double& v : pr) v /= sum;
          gp[g][a] = ProbVector(sch, std::move(pr));
        }
      out.viewpoint.push_back(std::move(gp));
    }
    return out;
  }

  ModelOutput forward(const Params<S>& p, const Image& image, int class_id) const {
    return to_output(forward_cache(p, image, class_id));
  }

  // Loss of one sample plus its parameter gradient, accumulated into `grad`.
  LossBreakdown accumulate_gradient(const Params<S>& p, const ModelSample<S>& sample, const LossWeights& weights,
                                    Params<S>& grad) const {
    validate(sample.mask);
    const ForwardCache<S> c = forward_cache(p, sample.image, sample.class_id);
    const auto& T = p.tensors;
    auto& G = grad.tensors;
    const int ns = cfg_.num_stages;
    const int cls = sample.class_id;
    const size_t plane = static_cast<size_t>(hs_) * hs_;
    const int kc = layout_.num_keypoints(cls);
    const size_t hoff = static_cast<size_t>(layout_.offset(cls)) * plane;
    LossBreakdown loss;

    // d loss / d heatmaps per stage.
    std::vector<std::vector<S>> dheat(ns, std::vector<S>(static_cast<size_t>(layout_.total()) * plane, S(0)));
    if (sample.mask.has_keypoints) {
      if (static_cast<int>(sample.gt_heatmaps.size()) != kc)
        throw Error(ErrorCode::shape_mismatch, "sample has " + std::to_string(sample.gt_heatmaps.size()) +
                                                   " target maps, class expects " + std::to_string(kc));
      for (int s = 0; s < ns; ++s) {
        double stage_sum = 0.0;
        for (int k = 0; k < kc; ++k) {
          const auto& gt = sample.gt_heatmaps[k];
          if (gt.width != hs_ || gt.height != hs_) throw Error(ErrorCode::shape_mismatch, "target map size mismatch");
          for (size_t i = 0; i < plane; ++i) {
            const S diff = c.heatmaps[s][hoff + k * plane + i] - gt.values[i];
            stage_sum += static_cast<double>(diff) * static_cast<double>(diff);
            dheat[s][hoff + k * plane + i] = static_cast<S>(weights.keypoint * 2.0 / kc) * diff;
          }
        }
        loss.keypoint += stage_sum / kc;
      }
    }

    // Viewpoint head.
    const auto& w1 = T[index_.fc1_w];
    const auto& w2 = T[index_.fc2_w];
    const int flat = static_cast<int>(c.stage_act.back().size());
    const int hidden = cfg_.viewpoint_hidden;
    const int nlog = static_cast<int>(c.logits.size());
    std::vector<S> dfinal_act(flat, S(0));
    if (sample.mask.has_viewpoint) {
      std::vector<S> dlogits(nlog, S(0));
      const int per_class = viewpoint_logits_per_class();
      for (int g = 0; g < 3; ++g)
        for (int a = 0; a < 3; ++a) {
          const size_t off = static_cast<size_t>(cls) * per_class + viewpoint_offset(g, a);
          const int n = viewpoint_schemes()[g][a].count();
          const int t = sample.gt_bins[g][a];
          if (t < 0 || t >= n) throw Error(ErrorCode::out_of_range, "ground-truth bin out of range");
          const double pt = static_cast<double>(c.probs[off + t]);
          loss.viewpoint -= std::log(std::max(pt, kLogFloor));
          if (pt >= kLogFloor) {
            for (int i = 0; i < n; ++i) {
              const S target = i == t ? S(1) : S(0);
              dlogits[off + i] = static_cast<S>(weights.viewpoint) * (c.probs[off + i] - target);
            }
          }
        }
      Eigen::Map<const detail::Vec<S>> dl(dlogits.data(), nlog);
      Eigen::Map<const detail::Vec<S>> a1(c.fc1_act.data(), hidden);
      detail::MapMat<S>(G[index_.fc2_w].values.data(), nlog, hidden).noalias() += dl * a1.transpose();
      Eigen::Map<detail::Vec<S>>(G[index_.fc2_b].values.data(), nlog) += dl;
      std::vector<S> dz1(hidden);
      Eigen::Map<detail::Vec<S>>(dz1.data(), hidden) =
          detail::ConstMapMat<S>(w2.values.data(), nlog, hidden).transpose() * dl;
      detail::relu_backward<S>(c.fc1_pre, dz1);
      Eigen::Map<const detail::Vec<S>> dz(dz1.data(), hidden);
      Eigen::Map<const detail::Vec<S>> v(c.stage_act.back().data(), flat);
      detail::MapMat<S>(G[index_.fc1_w].values.data(), hidden, flat).noalias() += dz * v.transpose();
      Eigen::Map<detail::Vec<S>>(G[index_.fc1_b].values.data(), hidden) += dz;
      Eigen::Map<detail::Vec<S>>(dfinal_act.data(), flat) =
          detail::ConstMapMat<S>(w1.values.data(), hidden, flat).transpose() * dz;
    }
    loss.total = weights.keypoint * loss.keypoint + weights.viewpoint * loss.viewpoint;

    // Stages, last to first.
    const size_t feat_size = static_cast<size_t>(feat_channels_) * plane;
    std::vector<S> dfeat(feat_size, S(0));
    std::vector<S> dact;
    for (int s = ns - 1; s >= 0; --s) {
      dact.assign(c.stage_act[s].size(), S(0));
      if (s == ns - 1) dact = dfinal_act;
      detail::conv_backward(heads_[s], T[index_.head_w[s]], c.head_cols[s], std::span<const S>(dheat[s]),
                            G[index_.head_w[s]], G[index_.head_b[s]], std::span<S>(dact));
      detail::relu_backward<S>(c.stage_pre[s], dact);
      std::vector<S> din(s == 0 ? feat_size : feat_size + dheat[s].size(), S(0));
      detail::conv_backward(stages_[s], T[index_.stage_w[s]], c.stage_cols[s], std::span<const S>(dact),
                            G[index_.stage_w[s]], G[index_.stage_b[s]], std::span<S>(din));
      for (size_t i = 0; i < feat_size; ++i) dfeat[i] += din[i];
      if (s > 0) {
        // Only the sample's class maps were forwarded.
        const size_t len = static_cast<size_t>(kc) * plane;
        for (size_t i = 0; i < len; ++i) dheat[s - 1][hoff + i] += din[feat_size + hoff + i];
      }
    }

    // Backbone.
    std::vector<S> dcur = std::move(dfeat);
    for (int b = cfg_.num_blocks() - 1; b >= 0; --b) {
      detail::relu_backward<S>(c.backbone_pre[b], dcur);
      std::vector<S> din;
      if (b > 0) din.assign(c.backbone_act[b - 1].size(), S(0));
      detail::conv_backward(backbone_[b], T[index_.backbone_w[b]], c.backbone_cols[b], std::span<const S>(dcur),
                            G[index_.backbone_w[b]], G[index_.backbone_b[b]], std::span<S>(din));
      dcur = std::move(din);
    }
    return loss;
  }

 private:
  Params<S> init_shapes() const { return init_params<S>(cfg_, false); }

  ModelConfig cfg_;
  ParamIndex index_;
  ClassLayout layout_;
  std::vector<detail::ConvShape> backbone_, stages_, heads_;
  int feat_channels_ = 0;
  int hs_ = 0;
};

template <typename S>
struct GradientResult {
  Params<S> gradient;
  LossBreakdown loss;  // summed over the batch
  bool has_keypoint_signal = false;
  bool has_viewpoint_signal = false;
};

// Exact gradient of the summed batch loss. Per-sample gradients are reduced
// in batch order, so the result does not depend on the worker count.
template <typename S>
GradientResult<S> gradients(const Model<S>& model, const Params<S>& params, std::span<const ModelSample<S>> batch,
                            const LossWeights& weights = {}) {
  if (batch.empty()) throw Error(ErrorCode::empty_batch, "gradient of an empty batch");
  model.check_params(params);
  const int n = static_cast<int>(batch.size());
  std::vector<Params<S>> per(n);
  std::vector<LossBreakdown> losses(n);
  parallel_for(n, [&](int i) {
    per[i] = params.zeros_like();
    losses[i] = model.accumulate_gradient(params, batch[i], weights, per[i]);
  });
  GradientResult<S> r;
  r.gradient = std::move(per[0]);
  for (int i = 1; i < n; ++i)
    for (size_t t = 0; t < r.gradient.tensors.size(); ++t) {
      auto& dst = r.gradient.tensors[t].values;
      const auto& src = per[i].tensors[t].values;
      for (size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
    }
  for (int i = 0; i < n; ++i) {
    r.loss.keypoint += losses[i].keypoint;
    r.loss.viewpoint += losses[i].viewpoint;
    r.loss.total += losses[i].total;
    r.has_keypoint_signal |= batch[i].mask.has_keypoints;
    r.has_viewpoint_signal |= batch[i].mask.has_viewpoint;
  }
  return r;
}

struct OptimizerSettings {
  double learning_rate = 0.01;
  double momentum = 0.9;
  double weight_decay = 0.0005;
  int decay_every = 2000;
  double decay_factor = 0.1;
  LossWeights weights;

  double rate_at(int iteration) const {
    return learning_rate * std::pow(decay_factor, decay_every > 0 ? iteration / decay_every : 0);
  }
};

template <typename S>
struct OptimizerState {
  int iteration = 0;  // completed iterations
  Params<S> velocity;
};

struct TraceEntry {
  int iteration = 0;
  double learning_rate = 0.0;
  // Batch means.
  double total = 0.0;
  double keypoint = 0.0;
  double viewpoint = 0.0;
};

template <typename S>
using BatchProvider = std::function<std::vector<ModelSample<S>>(int iteration)>;

// One SGD step on the batch mean. A parameter group that no sample in the
// batch reaches (keypoint-only or viewpoint-only layers) is left untouched,
// including its weight decay.
template <typename S>
TraceEntry sgd_step(const Model<S>& model, Params<S>& params, OptimizerState<S>& state,
                    std::span<const ModelSample<S>> batch, const OptimizerSettings& opt) {
  if (state.velocity.tensors.empty()) state.velocity = params.zeros_like();
  GradientResult<S> g = gradients(model, params, batch, opt.weights);
  const double n = static_cast<double>(batch.size());
  if (!std::isfinite(g.loss.total)) {
    throw Error(ErrorCode::divergence, "loss became non-finite at iteration " + std::to_string(state.iteration));
  }
  const double lr = opt.rate_at(state.iteration);
  for (size_t t = 0; t < params.tensors.size(); ++t) {
    auto& p = params.tensors[t];
    if (p.group == ParamGroup::keypoint && !g.has_keypoint_signal) continue;
    if (p.group == ParamGroup::viewpoint && !g.has_viewpoint_signal) continue;
    auto& v = state.velocity.tensors[t].values;
    const auto& gr = g.gradient.tensors[t].values;
    const bool decay = p.name.ends_with(".weight");
    for (size_t j = 0; j < p.values.size(); ++j) {
      S step = static_cast<S>(gr[j] / n);
      if (decay) step += static_cast<S>(opt.weight_decay) * p.values[j];
      v[j] = static_cast<S>(opt.momentum) * v[j] + step;
      p.values[j] -= static_cast<S>(lr) * v[j];
    }
  }
  TraceEntry e{state.iteration, lr, g.loss.total / n, g.loss.keypoint / n, g.loss.viewpoint / n};
  ++state.iteration;
  return e;
}

// Runs until `state.iteration` reaches `iterations`; resumable from any state.
template <typename S>
std::vector<TraceEntry> train(const Model<S>& model, Params<S>& params, OptimizerState<S>& state,
                              const BatchProvider<S>& provider, int iterations, const OptimizerSettings& opt,
                              const std::function<void(const TraceEntry&)>& on_step = {}) {
  std::vector<TraceEntry> trace;
  while (state.iteration < iterations) {
    const std::vector<ModelSample<S>> batch = provider(state.iteration);
    if (batch.empty()) throw Error(ErrorCode::empty_batch, "batch provider returned no samples");
    trace.push_back(sgd_step(model, params, state, std::span<const ModelSample<S>>(batch), opt));
    if (on_step) on_step(trace.back());
  }
  return trace;
}

inline const std::vector<double>& default_inference_scales() {
  static const std::vector<double> s{0.8, 0.9, 1.0, 1.1, 1.2};
  return s;
}

// Content zoom about the crop center by `scale` (>1 magnifies).
inline Image zoom_image(const Image& img, double scale, float fill) {
  Image out(img.width, img.height);
  const double cx = img.width / 2.0, cy = img.height / 2.0;
  for (int c = 0; c < Image::kChannels; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) {
        const double sx = cx + (x + 0.5 - cx) / scale;
        const double sy = cy + (y + 0.5 - cy) / scale;
        out.at(c, x, y) = sample_bilinear(img, c, sx, sy, fill);
      }
  return out;
}

// Brings a heatmap predicted on a zoomed input back onto the unzoomed grid.
inline Heatmap<double> unzoom_heatmap(const Heatmap<double>& h, double scale, int stride, int input_size) {
  Heatmap<double> out(h.width, h.height);
  const double c = input_size / 2.0;
  auto val = [&](int x, int y) {
    if (x < 0 || y < 0 || x >= h.width || y >= h.height) return 0.0;
    return h.at(x, y);
  };
  for (int y = 0; y < h.height; ++y)
    for (int x = 0; x < h.width; ++x) {
      const double px = c + scale * (from_heatmap_coord(x, stride) - c);
      const double py = c + scale * (from_heatmap_coord(y, stride) - c);
      const double hx = to_heatmap_coord(px, stride), hy = to_heatmap_coord(py, stride);
      const int x0 = static_cast<int>(std::floor(hx)), y0 = static_cast<int>(std::floor(hy));
      const double ax = hx - x0, ay = hy - y0;
      double v = (1 - ay) * (1 - ax) * val(x0, y0);
      if (ax != 0.0) v += (1 - ay) * ax * val(x0 + 1, y0);
      if (ay != 0.0) v += ay * (1 - ax) * val(x0, y0 + 1);
      if (ax != 0.0 && ay != 0.0) v += ay * ax * val(x0 + 1, y0 + 1);
      out.at(x, y) = v;
    }
  return out;
}

// Averages forward passes over zoomed copies of the crop. Heatmaps are mapped
// back to the common grid; probabilities are renormalized after averaging.
template <typename S>
ModelOutput multi_scale_inference(const Model<S>& model, const Params<S>& params, const Image& crop, int class_id,
                                  std::span<const double> scales, float fill = 0.5f) {
  if (scales.empty()) throw Error(ErrorCode::invalid_argument, "at least one inference scale required");
  const int stride = model.config().stride();
  std::vector<ModelOutput> outs;
  for (double s : scales) {
    if (!(s > 0.0)) throw Error(ErrorCode::invalid_argument, "inference scales must be positive");
    outs.push_back(model.forward(params, s == 1.0 ? crop : zoom_image(crop, s, fill), class_id));
    if (s != 1.0)
      for (auto& stage : outs.back().stage_heatmaps)
        for (auto& h : stage) h = unzoom_heatmap(h, s, stride, model.config().input_size);
  }
  ModelOutput avg = outs.front();
  const double n = static_cast<double>(outs.size());
  for (size_t st = 0; st < avg.stage_heatmaps.size(); ++st)
    for (size_t k = 0; k < avg.stage_heatmaps[st].size(); ++k) {
      auto& dst = avg.stage_heatmaps[st][k].values;
      for (size_t i = 0; i < dst.size(); ++i) {
        double sum = 0.0;
        for (const auto& o : outs) sum += o.stage_heatmaps[st][k].values[i];
        dst[i] = sum / n;
      }
    }
  for (size_t c = 0; c < avg.viewpoint.size(); ++c)
    for (int g = 0; g < 3; ++g)
      for (int a = 0; a < 3; ++a) {
        const BinningScheme& sch = avg.viewpoint[c][g][a].scheme();
        std::vector<double> p(sch.count(), 0.0);
        double total = 0.0;
        for (int i = 0; i < sch.count(); ++i) {
          for (const auto& o : outs) p[i] += o.viewpoint[c][g][a][i];
          total += p[i];
        }
        for (double& v : p) v /= total;
        avg.viewpoint[c][g][a] = ProbVector(sch, std::move(p));
      }
  return avg;
}

}  // namespace posekit
