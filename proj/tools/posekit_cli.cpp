// posekit: generate / train / eval / upsample-demo / config.
//
// Errors go to stderr as one line `posekit-error: <CODE>: <message>` and
// the process exits with status 1; success exits 0.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "posekit/checkpoint.hpp"
#include "posekit/config.hpp"
#include "posekit/eval.hpp"
#include "posekit/pipeline.hpp"
#include "posekit/synthgen.hpp"
#include "posekit/upsample.hpp"

namespace fs = std::filesystem;
using namespace posekit;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

RunConfig effective_config(const Common& c) {
  RunConfig rc = c.config.empty() ? RunConfig{} : load_run_config(c.config);
  if (c.seed) rc.seed = *c.seed;
  rc.validate();
  return rc;
}

fs::path out_dir(const Common& c) {
  if (c.out.empty()) throw Error(ErrorCode::usage, "--out DIR is required");
  std::error_code ec;
  fs::create_directories(c.out, ec);
  if (ec) throw Error(ErrorCode::io, "cannot create output directory '" + c.out + "': " + ec.message());
  return c.out;
}

void echo_config(const fs::path& dir, const RunConfig& rc, const std::string& command) {
  json j = to_json(rc);
  j["command"] = command;
  write_json(dir / "config.json", j);
}

int cmd_generate(const Common& c, std::optional<int> n) {
  RunConfig rc = effective_config(c);
  if (n) {
    if (*n <= 0) throw Error(ErrorCode::usage, "--n must be a positive sample count");
    rc.generate.n = *n;
  }
  const fs::path dir = out_dir(c);
  std::vector<ClassSpec> specs;
  for (const auto& name : rc.generate.classes) specs.push_back(builtin_class(name));
  const DatasetSummary s = generate_dataset(specs, rc.generate.n, rc.seed, dir, rc.generate.options);
  echo_config(dir, rc, "generate");
  std::printf("manifest: %s\nsamples: %d\nvisible keypoints: %d / %d\n", s.manifest.string().c_str(), s.samples,
              s.visible_keypoints, s.total_keypoints);
  return 0;
}

void write_trace(const fs::path& path, const std::vector<TraceEntry>& trace, bool append) {
  std::ostringstream os;
  if (!append) os << "iteration,learning_rate,total,keypoint,viewpoint\n";
  os.precision(10);
  for (const auto& e : trace)
    os << e.iteration << "," << e.learning_rate << "," << e.total << "," << e.keypoint << "," << e.viewpoint << "\n";
  std::ofstream f(path, append ? std::ios::app : std::ios::trunc);
  if (!f || !(f << os.str())) throw Error(ErrorCode::io, "cannot write '" + path.string() + "'");
}

int cmd_train(const Common& c, const std::string& resume) {
  const RunConfig rc = effective_config(c);
  if (rc.data.train.empty()) throw Error(ErrorCode::config, "config: data.train lists no training sources");
  const fs::path dir = out_dir(c);
  std::vector<Dataset> datasets;
  for (const auto& s : rc.data.train) {
    datasets.push_back(load_dataset(s.path));
    check_same_classes(datasets.front().classes, datasets.back().classes, s.path);
  }
  const std::vector<ClassInfo>& classes = datasets.front().classes;
  const ModelConfig mc = model_config_for(rc, datasets.front().keypoint_counts());
  std::vector<TrainingSource> sources;
  for (size_t i = 0; i < datasets.size(); ++i)
    sources.push_back(prepare_source(datasets[i], rc.data.train[i].tag, mc.input_size, float(rc.data.crop_fill)));

  Checkpoint ck{rc, mc, {}, {}, {}};
  for (const auto& ci : classes) ck.class_names.push_back(ci.name);
  if (!resume.empty()) {
    Checkpoint prev = load_checkpoint(resume);
    if (!(prev.model == mc) || prev.class_names != ck.class_names)
      throw Error(ErrorCode::config, "checkpoint '" + resume + "' was trained with a different model or class list");
    ck.params = std::move(prev.params);
    ck.state = std::move(prev.state);
  } else {
    ck.params = init_params<float>(mc);
    save_checkpoint(dir / "checkpoint_init.json", ck);
  }
  echo_config(dir, rc, "train");

  BatchSettings bs{rc.train.batch_size, rc.augment.enabled, rc.augment.ranges, float(rc.data.crop_fill),
                   rc.data.heatmap_sigma, rc.seed};
  const BatchProvider<float> provider = make_batch_provider(sources, classes, mc, bs);
  const Model<float> model(mc);
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<TraceEntry> pending;
  bool appended = !resume.empty() && fs::exists(dir / "loss_trace.csv");
  auto flush = [&] {
    save_checkpoint(dir / "checkpoint.json", ck);
    write_trace(dir / "loss_trace.csv", pending, appended);
    appended = true;
    pending.clear();
  };
  train(model, ck.params, ck.state, provider, rc.train.iterations, rc.train.optimizer, [&](const TraceEntry& e) {
    pending.push_back(e);
    const int done = e.iteration + 1;
    if (done % 100 == 0 || done == rc.train.iterations) {
      const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      std::printf("iter %d/%d loss %.4f (kp %.4f, vp %.4f) lr %.3g %.1fs\n", done, rc.train.iterations, e.total,
                  e.keypoint, e.viewpoint, e.learning_rate, s);
      std::fflush(stdout);
    }
    if (done % rc.train.checkpoint_every == 0) flush();
  });
  flush();
  std::printf("checkpoint: %s\n", (dir / "checkpoint.json").string().c_str());
  return 0;
}

int cmd_eval(const Common& c, const std::string& checkpoint, std::string data, bool multi_scale, bool oracle_gt) {
  const fs::path dir = out_dir(c);
  std::optional<Checkpoint> ck;
  if (!oracle_gt) {
    if (checkpoint.empty()) throw Error(ErrorCode::usage, "eval needs --checkpoint PATH (or --oracle-gt)");
    ck = load_checkpoint(checkpoint);
  }
  RunConfig rc = c.config.empty() && ck ? ck->run : effective_config(c);
  if (c.seed) rc.seed = *c.seed;
  if (multi_scale) rc.eval.multi_scale = true;
  if (data.empty()) data = rc.data.test;
  if (data.empty()) throw Error(ErrorCode::usage, "eval needs --data DIR or data.test in the config");
  const Dataset d = load_dataset(data);
  MetricsReport report;
  if (oracle_gt) {
    report = evaluate_dataset(d, [](const Image&, const Annotation& a) { return oracle_prediction(a); }, rc.eval.alpha);
  } else {
    std::vector<ClassInfo> expected;
    for (size_t i = 0; i < ck->class_names.size(); ++i)
      expected.push_back({ck->class_names[i], ck->model.keypoints_per_class[i], {}, {}});
    check_same_classes(expected, d.classes, (fs::path(data) / "manifest.json").string());
    const Model<float> model(ck->model);
    const InferenceSettings is{rc.eval.multi_scale, rc.eval.scales, float(rc.data.crop_fill)};
    report = evaluate_dataset(d, model_predictor(model, ck->params, is), rc.eval.alpha);
  }
  write_report_csv(dir / "metrics.csv", report);
  echo_config(dir, rc, oracle_gt ? "eval --oracle-gt" : "eval");
  std::printf("%s", report_csv(report).c_str());
  return 0;
}

// probs file: {"angle": "azimuth", "bin_size": 15, "probs": [...]}
int cmd_upsample_demo(const Common& c, const std::string& probs_path) {
  if (probs_path.empty()) throw Error(ErrorCode::usage, "upsample-demo needs --probs FILE");
  const RunConfig rc = effective_config(c);
  const json j = read_json(probs_path);
  const std::string where = probs_path;
  const AngleKind kind = parse_angle_kind(j.contains("angle") ? field<std::string>(j, "angle", where) : "azimuth");
  const int bin = j.contains("bin_size") ? field<int>(j, "bin_size", where) : 15;
  const ProbVector pv(make_scheme(kind, bin), field<std::vector<double>>(j, "probs", where));
  const FineCurve curve = upsample(pv);
  const fs::path dir = out_dir(c);
  std::ostringstream os;
  os << "degree,value\n";
  os.precision(10);
  for (int i = 0; i < curve.size(); ++i) os << curve.degree_at(i) << "," << curve.values[i] << "\n";
  write_text(dir / "upsampled.csv", os.str());
  echo_config(dir, rc, "upsample-demo");
  std::printf("curve: %s\npeak: %.0f deg\n", (dir / "upsampled.csv").string().c_str(), predict_angle(pv));
  return 0;
}

int cmd_config(const Common& c, bool dump) {
  if (!dump) throw Error(ErrorCode::usage, "config needs --dump");
  const RunConfig rc = effective_config(c);
  const std::string text = to_json(rc).dump(2) + "\n";
  if (c.out.empty()) {
    std::cout << text;
  } else {
    const fs::path dir = out_dir(c);
    write_text(dir / "config.json", text);
  }
  return 0;
}

int fail(const std::string& code, const std::string& message) {
  std::cerr << "posekit-error: " << code << ": " << message << std::endl;
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"posekit: joint viewpoint and keypoint estimation at desk scale"};
  app.require_subcommand(1);
  Common common;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config, "RunConfig JSON file");
    sub->add_option("--seed", common.seed, "overrides the config seed");
    sub->add_option("--out", common.out, "output directory");
  };

  std::optional<int> n;
  auto* gen = app.add_subcommand("generate", "render a synthetic dataset");
  add_common(gen);
  gen->add_option("--n", n, "samples per class");

  std::string resume;
  auto* tr = app.add_subcommand("train", "train on the configured sources");
  add_common(tr);
  tr->add_option("--resume", resume, "checkpoint to continue from");

  std::string checkpoint, data;
  bool multi_scale = false, oracle_gt = false;
  auto* ev = app.add_subcommand("eval", "score a checkpoint on a dataset");
  add_common(ev);
  ev->add_option("--checkpoint", checkpoint, "checkpoint JSON");
  ev->add_option("--data", data, "dataset directory (default: data.test)");
  ev->add_flag("--multi-scale", multi_scale, "average passes over the configured scales");
  ev->add_flag("--oracle-gt", oracle_gt, "score ground truth as predictions");

  std::string probs;
  auto* up = app.add_subcommand("upsample-demo", "write the 1-degree upsampled curve of a probability vector");
  add_common(up);
  up->add_option("--probs", probs, "JSON file with angle, bin_size and probs");

  bool dump = false;
  auto* cf = app.add_subcommand("config", "print the effective configuration");
  add_common(cf);
  cf->add_flag("--dump", dump, "emit every setting including defaults");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail(to_string(ErrorCode::usage), e.what());
  }

  try {
    if (gen->parsed()) return cmd_generate(common, n);
    if (tr->parsed()) return cmd_train(common, resume);
    if (ev->parsed()) return cmd_eval(common, checkpoint, data, multi_scale, oracle_gt);
    if (up->parsed()) return cmd_upsample_demo(common, probs);
    if (cf->parsed()) return cmd_config(common, dump);
  } catch (const Error& e) {
    return fail(to_string(e.code()), e.what());
  } catch (const std::exception& e) {
    return fail("E_INTERNAL", e.what());
  }
  return fail(to_string(ErrorCode::usage), "no subcommand");
}
