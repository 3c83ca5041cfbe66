// Acceptance run: one PASS/FAIL line per criterion. Pass criterion numbers
// as arguments to run a subset. Exit status 0 iff every selected one passed.

#include <sys/wait.h>
#include <unistd.h>

#include <array>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "gradcheck.hpp"
#include "model_fixtures.hpp"
#include "oracles.hpp"
#include "posekit/checkpoint.hpp"
#include "posekit/eval.hpp"
#include "posekit/pipeline.hpp"
#include "posekit/synthgen.hpp"
#include "posekit/upsample.hpp"
#include "scene_checks.hpp"

using namespace posekit;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  std::array<char, 512> buf{};
  std::snprintf(buf.data(), buf.size(), f, args...);
  return buf.data();
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("posekit_accept_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

int run_cli(const std::string& args, std::string* output = nullptr) {
  const std::string cmd = std::string(POSEKIT_BIN) + " " + args + " 2>&1";
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) return -1;
  std::array<char, 4096> buf{};
  std::string out;
  while (fgets(buf.data(), buf.size(), p)) out += buf.data();
  const int raw = pclose(p);
  if (output) *output = out;
  return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
}

// Every parameter of the two-class toy model against central differences.
Verdict gradient_check() {
  const auto t0 = Clock::now();
  const auto cfg = fixtures::toy_config();
  const Model<double> model(cfg);
  const auto p = init_params<double>(cfg);
  std::mt19937_64 rng(573);
  const auto batch = fixtures::mixed_batch<double>(rng, cfg);
  const std::span<const ModelSample<double>> b(batch);
  const auto g = gradients(model, p, b);
  const auto r = gradcheck::check_all(model, p, b, g.gradient, 1e-4, 1e-4, 1e-6);
  const double s = seconds_since(t0);
  return {r.failures.empty() && r.checked == p.total_size() && s < 60,
          fmt("%zu parameters, max rel error %.2e, %zu mismatches, %zu kink stencils, %.1f s", r.checked, r.max_rel,
              r.failures.size(), r.kink_stencils, s)};
}

Verdict geodesic_and_metrics() {
  std::mt19937_64 rng(13);
  double worst = 0;
  for (int i = 0; i < 1000; ++i) {
    const Mat3 a = testing_oracles::random_rotation(rng);
    const Mat3 b = testing_oracles::random_rotation(rng);
    worst = std::max(worst, std::abs(geodesic_distance(RotationMatrix(a), RotationMatrix(b)) -
                                     testing_oracles::log_geodesic(a, b)));
  }
  // Metrics over random predictions, including exact 30 degree offsets.
  std::uniform_real_distribution<double> az(0, 360), el(-90, 90), ti(-180, 180), noise(-25, 25);
  std::vector<Viewpoint> gt, pred;
  for (int i = 0; i < 1001; ++i) {
    gt.emplace_back(az(rng), el(rng), ti(rng));
    if (i % 7 == 0)
      pred.emplace_back(gt.back().azimuth() + 30, gt.back().elevation(), gt.back().tilt());
    else
      pred.emplace_back(gt.back().azimuth() + noise(rng), std::clamp(gt.back().elevation() + noise(rng), -90.0, 90.0),
                        gt.back().tilt() + noise(rng));
  }
  std::vector<double> deg;
  int ok = 0;
  for (size_t i = 0; i < gt.size(); ++i) {
    const double e = testing_oracles::log_geodesic(rotation_from_viewpoint(gt[i]).matrix(),
                                                   rotation_from_viewpoint(pred[i]).matrix());
    const double e_lib = viewpoint_error(pred[i], gt[i]);
    if (e_lib < kAccThreshold) ++ok;
    deg.push_back(e_lib * 180.0 / kPi);
    worst = std::max(worst, std::abs(e - e_lib));
  }
  std::sort(deg.begin(), deg.end());
  const double naive_acc = double(ok) / double(gt.size());
  const double naive_med = deg[deg.size() / 2];
  const double acc = acc_pi6(pred, gt), med = med_error(pred, gt);
  return {worst <= 1e-9 && acc == naive_acc && med == naive_med,
          fmt("max |trace - log| %.2e rad, Acc %.4f vs %.4f, MedErr %.6f vs %.6f deg", worst, acc, naive_acc, med,
              naive_med)};
}

Verdict upsampling_gain() {
  const auto t0 = Clock::now();
  const auto az = make_scheme(AngleKind::azimuth, 15);
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> truth(0.0, 360.0);
  auto err = [](double a, double b) {
    const double d = std::abs(wrap_360(a) - wrap_360(b));
    return std::min(d, 360.0 - d);
  };
  double up = 0, bin = 0;
  const int trials = 10000;
  for (int t = 0; t < trials; ++t) {
    const double a = truth(rng);
    std::vector<double> p(az.count());
    double sum = 0;
    for (int i = 0; i < az.count(); ++i) {
      const double d = err(a, az.centers()[i]);
      sum += p[i] = std::exp(-d * d / 200.0);
    }
    for (double& x : p) x /= sum;
    const ProbVector pv(az, p);
    up += err(predict_angle(pv), a);
    bin += err(predict_angle_bin_center(pv), a);
  }
  up /= trials;
  bin /= trials;
  const double s = seconds_since(t0);
  return {bin - up > 1.0 && s < 10,
          fmt("mean error upsampled %.3f deg, bin centre %.3f deg, gap %.3f deg, %.2f s", up, bin, bin - up, s)};
}

Verdict binning_layout() {
  const auto az = make_scheme(AngleKind::azimuth, 15), el = make_scheme(AngleKind::elevation, 15),
             ti = make_scheme(AngleKind::tilt, 15);
  bool ok = az.count() == 24 && el.count() == 13 && ti.count() == 24;
  ok = ok && center_of(el, 6) == 0.0 && bin_width(el, 0) == 7.5 && bin_width(el, 12) == 7.5;
  long swept = 0, bad = 0;
  for (const auto* s : {&az, &el, &ti}) {
    const int lo = s == &az ? 0 : (s == &el ? -900 : -1800), hi = s == &az ? 3599 : (s == &el ? 900 : 1799);
    for (int t = lo; t <= hi; ++t) {
      const double a = t / 10.0;
      const int i = bin_of(*s, a);
      double d = std::abs(a - center_of(*s, i));
      if (s->circular()) d = std::min(d, 360.0 - d);
      ++swept;
      if (bin_of(*s, center_of(*s, i)) != i || d > s->bin_size() / 2.0 + 1e-9) ++bad;
    }
  }
  return {ok && bad == 0, fmt("counts %d/%d/%d, elevation bin 6 centre %.1f, outer widths %.1f/%.1f, %ld of %ld swept angles off",
                              az.count(), el.count(), ti.count(), center_of(el, 6), bin_width(el, 0), bin_width(el, 12),
                              bad, swept)};
}

// Chance level: viewpoints drawn uniformly over the generator ranges.
double random_baseline_acc(const Dataset& test, const ViewpointRanges& ranges) {
  std::mt19937_64 rng(99);
  std::vector<Viewpoint> gt, guess;
  for (size_t i = 0; i < test.size(); ++i) {
    const Annotation a = test.annotation(i);
    if (!a.viewpoint) continue;
    for (int r = 0; r < 50; ++r) {
      gt.push_back(*a.viewpoint);
      guess.push_back(sample_viewpoint(rng, ranges));
    }
  }
  return acc_pi6(guess, gt);
}

Verdict smoke_training() {
  const auto t0 = Clock::now();
  const fs::path dir = scratch("smoke");
  std::string out;
  if (run_cli(fmt("generate --n 500 --seed 101 --out %s", (dir / "train").c_str()), &out) != 0 ||
      run_cli(fmt("generate --n 200 --seed 202 --out %s", (dir / "test").c_str()), &out) != 0)
    return {false, "generate failed: " + out};
  json cfg = to_json(RunConfig{});
  cfg["data"]["train"] = {{{"path", (dir / "train").string()}, {"source", "M"}}};
  cfg["data"]["test"] = (dir / "test").string();
  write_json(dir / "run.json", cfg);
  if (run_cli(fmt("train --config %s --out %s", (dir / "run.json").c_str(), (dir / "run").c_str()), &out) != 0)
    return {false, "train failed: " + out};
  if (run_cli(fmt("eval --checkpoint %s --out %s", (dir / "run/checkpoint.json").c_str(), (dir / "eval").c_str()),
              &out) != 0)
    return {false, "eval failed: " + out};
  const MetricsReport r = read_report_csv(dir / "eval/metrics.csv");
  const double baseline = random_baseline_acc(load_dataset(dir / "test"), GeneratorOptions{}.ranges);
  const int iterations = load_checkpoint(dir / "run/checkpoint.json").state.iteration;
  const double s = seconds_since(t0);
  const double acc = r.average.acc_pi6.value_or(0), pck_v = r.average.pck.value_or(0);
  fs::remove_all(dir);
  return {acc >= 3 * baseline && pck_v >= 0.5 && iterations <= 3000 && s < 1800,
          fmt("%d iterations, Acc %.4f (random %.4f, need >= %.4f), PCK %.4f, MedErr %.2f deg, %.0f s", iterations, acc,
              baseline, 3 * baseline, pck_v, r.average.med_error_deg.value_or(-1), s)};
}

// A small real training run per tag; the head it must not touch is compared
// between the initial and the reloaded final checkpoint.
Verdict single_annotation_heads() {
  const fs::path dir = scratch("heads");
  generate_dataset({car_spec(), chair_spec()}, 6, 5, dir / "data");
  const Dataset d = load_dataset(dir / "data");
  RunConfig rc;
  rc.model = {32, {4, 4, 8, 8}, 8, 2, 8};
  const ModelConfig mc = model_config_for(rc, d.keypoint_counts());
  const Model<float> model(mc);
  std::string detail;
  bool ok = true;
  for (SourceTag tag : {SourceTag::N, SourceTag::O}) {
    const std::vector<TrainingSource> src{prepare_source(d, tag, mc.input_size, 0.5f)};
    const BatchSettings bs{8, true, rc.augment.ranges, 0.5f, rc.data.heatmap_sigma, 3};
    Checkpoint ck{rc, mc, {}, {}, init_params<float>(mc)};
    for (const auto& c : d.classes) ck.class_names.push_back(c.name);
    const fs::path init = dir / (std::string("init_") + to_string(tag) + ".json"), done = dir / (std::string("done_") + to_string(tag) + ".json");
    save_checkpoint(init, ck);
    train(model, ck.params, ck.state, make_batch_provider(src, d.classes, mc, bs), 25, rc.train.optimizer);
    save_checkpoint(done, ck);
    const Checkpoint a = load_checkpoint(init), b = load_checkpoint(done);
    const ParamGroup frozen = tag == SourceTag::N ? ParamGroup::keypoint : ParamGroup::viewpoint;
    size_t same = 0, moved = 0, frozen_total = 0, other_total = 0;
    for (size_t t = 0; t < a.params.tensors.size(); ++t) {
      const bool eq = a.params.tensors[t].values == b.params.tensors[t].values;
      if (a.params.tensors[t].group == frozen) {
        ++frozen_total;
        same += eq;
      } else {
        ++other_total;
        moved += !eq;
      }
    }
    ok = ok && same == frozen_total && moved > 0;
    detail += fmt("%s-only: %zu/%zu %s tensors identical, %zu/%zu others changed; ", to_string(tag), same,
                  frozen_total, to_string(frozen), moved, other_total);
  }
  fs::remove_all(dir);
  detail.resize(detail.size() - 2);
  return {ok, detail};
}

Verdict scene_consistency() {
  int bad_occ = 0, bad_proj = 0, visible = 0, hidden = 0;
  const std::vector<ClassSpec> specs{car_spec(), chair_spec()};
  for (int i = 0; i < 50; ++i) {
    const ClassSpec& spec = specs[i % 2];
    auto rng = sample_rng(2024, i);
    const SynthSample s = synthesize(spec, GeneratorOptions{}, rng);
    const auto v = scene_checks::check_sample(spec, spec.mesh, s.camera.camera(), s.keypoints);
    bad_occ += v.unexplained_invisible;
    bad_proj += v.bad_reprojection;
    visible += v.visible;
    hidden += v.invisible;
  }
  return {bad_occ == 0 && bad_proj == 0,
          fmt("50 scenes, %d visible / %d hidden keypoints, %d occlusion and %d reprojection violations", visible, hidden,
              bad_occ, bad_proj)};
}

Verdict augmentation_iou() {
  std::mt19937_64 rng(8);
  const AugmentRanges ranges{true, 45, 0.4, 1.0, 12, 0.5};
  std::uniform_real_distribution<double> u(0, 1);
  int accepted = 0, disagree = 0, draws = 3000;
  double worst = 0;
  for (int i = 0; i < draws; ++i) {
    TrainingSample s;
    s.crop = Image(64, 64, 0.5f);
    s.mask = AnnotationMask::both();
    s.viewpoint = snapped_viewpoint(0, 0, 0);
    s.keypoints = {{32, 32, true}};
    const double w = 10 + 50 * u(rng), h = 10 + 50 * u(rng);
    s.bbox = {32 - w / 2, 32 - h / 2, 32 + w / 2, 32 + h / 2};
    const AugmentParams p = ranges.draw(rng);
    const AugmentTransform t{Vec2(32, 32), p};
    testing_oracles::Polygon orig, moved;
    for (const auto& c : box_corners(s.bbox)) {
      orig.push_back(c);
      moved.push_back(t.apply(c));
    }
    const double oracle = testing_oracles::polygon_iou(moved, orig);
    worst = std::max(worst, std::abs(oracle - augment_iou(s.bbox, t)));
    const bool took = augment(s, p, {}, 0.5f).has_value();
    accepted += took;
    disagree += took != (oracle > kMinAugmentIou);
  }
  return {disagree == 0 && worst < 1e-9 && accepted > 0 && accepted < draws,
          fmt("%d draws, %d accepted, %d disagree with the clipping oracle, max IoU difference %.1e", draws, accepted,
              disagree, worst)};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria{
      {"finite-difference gradients on the toy model", gradient_check},
      {"trace geodesic and viewpoint metrics", geodesic_and_metrics},
      {"upsampled prediction beats bin centres", upsampling_gain},
      {"bin layout", binning_layout},
      {"single-class training smoke run", smoke_training},
      {"single-annotation training leaves the other head bit-identical", single_annotation_heads},
      {"synthetic scene consistency", scene_consistency},
      {"augmentation IoU gate", augmentation_iou},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  int failed = 0;
  for (size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(id)) continue;
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    failed += !v.pass;
    std::printf("%s %d %s: %s\n", v.pass ? "PASS" : "FAIL", id, criteria[i].first.c_str(), v.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
