/* Copyright 2026 The tlnp Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

// Command-line front end: analyze, synth, train, infer, eval, quantize.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "tlnp/checkpoint.hpp"
#include "tlnp/costmodel.hpp"
#include "tlnp/io.hpp"
#include "tlnp/quant.hpp"
#include "tlnp/trainer.hpp"

namespace fs = std::filesystem;
using namespace tlnp;

namespace {

// Files written by a command. Unless committed, they are deleted on scope
// exit, along with any directories the command created.
class Outputs {
 public:
  ~Outputs() {
    if (committed_) return;
    std::error_code ec;
    for (auto it = files_.rbegin(); it != files_.rend(); ++it) fs::remove(*it, ec);
    for (auto it = dirs_.rbegin(); it != dirs_.rend(); ++it) fs::remove_all(*it, ec);
  }

  fs::path file(const fs::path& p) {
    files_.push_back(p);
    return p;
  }

  void directory(const fs::path& dir) {
    if (dir.empty() || fs::exists(dir)) return;
    directory(dir.parent_path());
    fs::create_directory(dir);
    dirs_.push_back(dir);
  }

  void commit() { committed_ = true; }

 private:
  std::vector<fs::path> files_;
  std::vector<fs::path> dirs_;
  bool committed_ = false;
};

void write_text(const std::string& text, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::int64_t drivable_classes(const Model& model) { return model.config().heads.at(0).classes; }

void print_scores(const SegmentationScores& s, std::int64_t classes) {
  std::cout << "miou_drivable " << fmt("%.10f", s.miou_drivable()) << "\n";
  std::cout << "acc_lane " << fmt("%.10f", s.acc_lane()) << "\n";
  std::cout << "iou_lane " << fmt("%.10f", s.iou_lane()) << "\n";
  if (classes == 3) {
    std::cout << "pa_drivable " << fmt("%.10f", s.pa_drivable()) << "\n";
    std::cout << "mpa_drivable " << fmt("%.10f", s.mpa_drivable()) << "\n";
  }
}

// ---- analyze ---------------------------------------------------------------

struct AnalyzeArgs {
  std::string config;
  std::string hw = "384x640";
  std::string convention = "mac";
  std::string variant = "standard";
  std::string csv;
};

int run_analyze(const AnalyzeArgs& a) {
  const auto [h, w] = parse_hw(a.hw);
  const ModelConfig cfg = ModelConfig::preset(a.config, parse_variant(a.variant));
  const CostReport report = count_flops(cfg, h, w, CostConvention::parse(a.convention));
  std::cout << render_text(report);
  if (!a.csv.empty()) {
    Outputs out;
    write_text(render_csv(report), out.file(a.csv));
    out.commit();
  }
  return 0;
}

// ---- synth -----------------------------------------------------------------

struct SynthArgs {
  std::string out;
  std::int64_t count = 20;
  std::uint64_t seed = 0;
  std::string hw = "384x640";
  std::string variant = "standard";
  std::int64_t val = 0;
};

int run_synth(const SynthArgs& a) {
  const auto [h, w] = parse_hw(a.hw);
  if (a.val < 0 || a.val >= a.count) {
    throw std::invalid_argument("--val must be in [0, count)");
  }
  SynthOptions opts{h, w, parse_variant(a.variant) == TaskVariant::kStandard ? 2 : 3};
  const auto samples = synth_dataset(a.count, a.seed, opts);
  Outputs out;
  out.directory(a.out);
  for (std::int64_t i = 0; i < a.count; ++i) {
    char stem[32];
    std::snprintf(stem, sizeof stem, "%04lld", static_cast<long long>(i));
    for (const char* suffix : {".ppm", "_drivable.pgm", "_lane.pgm"})
      out.file(fs::path(a.out) / (std::string(stem) + suffix));
  }
  const fs::path manifest = write_dataset(samples, a.out, a.val);
  out.file(manifest);
  out.commit();
  std::cout << manifest.string() << "\n";
  return 0;
}

// ---- train -----------------------------------------------------------------

struct TrainArgs {
  std::string spec;
  bool quiet = false;
  std::int64_t epochs = 0, batch_size = 0;
  double lr = 0, weight_decay = 0, ema_decay = 0;
  std::uint64_t seed = 0;
};

int run_train(const TrainArgs& a, const CLI::App& cmd) {
  RunSpec spec = load_run_spec(a.spec);
  if (cmd.count("--epochs")) spec.train.epochs = a.epochs;
  if (cmd.count("--batch-size")) spec.train.batch_size = a.batch_size;
  if (cmd.count("--lr")) spec.train.learning_rate = a.lr;
  if (cmd.count("--weight-decay")) spec.train.weight_decay = a.weight_decay;
  if (cmd.count("--ema-decay")) spec.train.ema_decay = a.ema_decay;
  if (cmd.count("--seed")) spec.train.seed = a.seed;
  spec.train.validate();

  Model model = Model::build(spec.model_config(), spec.train.seed);
  const Dataset data = load_dataset(read_manifest(spec.manifest), drivable_classes(model),
                                    spec.height, spec.width);

  Outputs out;
  out.directory(spec.output);
  const fs::path raw_path = out.file(spec.output / "model.tlnp");
  const fs::path ema_path = out.file(spec.output / "model_ema.tlnp");
  const fs::path csv_path = out.file(spec.output / "metrics.csv");
  const fs::path ema_csv_path = out.file(spec.output / "metrics_ema.csv");

  TrainResult result;
  if (spec.train.epochs == 0) {
    result.raw = snapshot(model);
    result.ema = result.raw;
  } else {
    result = train(model, data, spec.train, [&](const EpochMetrics& m, const EpochMetrics& e) {
      if (a.quiet) return;
      std::printf("epoch %lld  loss %.5f  miou %.4f  acc_lane %.4f  iou_lane %.4f  ema_miou %.4f\n",
                  static_cast<long long>(m.epoch), m.train_loss, m.miou_drivable, m.acc_lane,
                  m.iou_lane, e.miou_drivable);
      std::fflush(stdout);
    });
  }
  write_checkpoint(result.raw, raw_path);
  write_checkpoint(result.ema, ema_path);
  write_metrics_csv(result.log, csv_path);
  write_metrics_csv(result.ema_log, ema_csv_path);
  out.commit();
  if (!a.quiet) std::cout << "wrote " << spec.output.string() << "\n";
  return 0;
}

// ---- infer -----------------------------------------------------------------

struct InferArgs {
  std::string ckpt, image, out, overlay;
  std::string hw = "384x640";
};

int run_infer(const InferArgs& a) {
  const auto [h, w] = parse_hw(a.hw);
  const Model model = load_model(a.ckpt);
  const Tensor image = load_image(a.image, h, w);
  const Prediction p = predict(model, image);
  Outputs out;
  out.directory(a.out);
  save_mask(p.drivable, out.file(fs::path(a.out) / "drivable.pgm"));
  save_mask(p.lane, out.file(fs::path(a.out) / "lane.pgm"));
  if (!a.overlay.empty()) save_image(overlay(image, p), out.file(a.overlay));
  out.commit();
  return 0;
}

// ---- eval ------------------------------------------------------------------

struct EvalArgs {
  std::string ckpt, manifest;
  std::string hw = "384x640";
  std::int64_t batch_size = 8;
};

int run_eval(const EvalArgs& a) {
  const auto [h, w] = parse_hw(a.hw);
  const Model model = load_model(a.ckpt);
  const std::int64_t classes = drivable_classes(model);
  Dataset data = load_dataset(read_manifest(a.manifest), classes, h, w);
  std::vector<Sample> all = std::move(data.train);
  for (auto& s : data.val) all.push_back(std::move(s));
  print_scores(evaluate(model, all, a.batch_size), classes);
  return 0;
}

// ---- quantize --------------------------------------------------------------

struct QuantizeArgs {
  std::string ckpt, manifest;
  std::string out = "scheme.tlnq";
  std::string hw = "384x640";
  std::string calibration = "minmax";
  double percentile = 99.9;
  int bits = 8;
  std::int64_t batch_size = 8;
};

int run_quantize(const QuantizeArgs& a) {
  const auto [h, w] = parse_hw(a.hw);
  const Model model = load_model(a.ckpt);
  const Dataset data = load_dataset(read_manifest(a.manifest), drivable_classes(model), h, w);
  // Calibrate on the train split, report on val when there is one.
  const std::vector<Sample>& cal_set = data.train.empty() ? data.val : data.train;
  const std::vector<Sample>& eval_set = data.val.empty() ? data.train : data.val;

  CalibrationConfig cc;
  if (a.calibration == "percentile") {
    cc.method = CalibrationMethod::kPercentile;
  } else if (a.calibration != "minmax") {
    throw std::invalid_argument("--calibration must be minmax or percentile");
  }
  cc.percentile = a.percentile;

  std::vector<Tensor> batches;
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < cal_set.size(); ++i) {
    idx.push_back(i);
    if (std::int64_t(idx.size()) == a.batch_size || i + 1 == cal_set.size()) {
      batches.push_back(make_batch(cal_set, idx, model.dtype()).image);
      idx.clear();
    }
  }
  const QuantScheme scheme = build_scheme(model, calibrate(model, batches, cc), a.bits);
  const QuantReport report = quant_report(model, scheme, eval_set, a.batch_size);
  Outputs out;
  write_scheme(scheme, out.file(a.out));
  out.commit();
  std::cout << render_quant_report(report);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"TwinLiteNet+ reference implementation and cost analyzer", "tlnp"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "tlnp 0.1.0");

  const std::vector<std::string> configs = ModelConfig::preset_names();
  const TrainConfig td;

  AnalyzeArgs an;
  auto* analyze = app.add_subcommand("analyze", "Per-layer parameter and FLOP table");
  analyze->add_option("--config", an.config, "Model configuration")
      ->required()
      ->check(CLI::IsMember(configs, CLI::ignore_case));
  analyze->add_option("--hw", an.hw, "Input size HxW")->capture_default_str();
  analyze->add_option("--convention", an.convention, "FLOPs per MAC: mac or 2mac")
      ->capture_default_str()
      ->check(CLI::IsMember({"mac", "2mac"}));
  analyze->add_option("--variant", an.variant, "standard or d_and_a")->capture_default_str();
  analyze->add_option("--csv", an.csv, "Also write the table as CSV");

  SynthArgs sy;
  auto* synth = app.add_subcommand("synth", "Write a synthetic dataset and manifest");
  synth->add_option("--out", sy.out, "Output directory")->required();
  synth->add_option("--count", sy.count, "Number of samples")->capture_default_str();
  synth->add_option("--seed", sy.seed, "Generator seed")->capture_default_str();
  synth->add_option("--hw", sy.hw, "Image size HxW")->capture_default_str();
  synth->add_option("--variant", sy.variant, "standard or d_and_a")->capture_default_str();
  synth->add_option("--val", sy.val, "Samples tagged val (taken from the end)")
      ->capture_default_str();

  TrainArgs tr;
  auto* trainc = app.add_subcommand("train", "Train from a run spec");
  trainc->add_option("--spec", tr.spec, "Run spec file (key = value)")->required();
  trainc->add_flag("--quiet", tr.quiet, "No per-epoch output");
  trainc->add_option("--epochs", tr.epochs, "Override epochs")->default_val(td.epochs);
  trainc->add_option("--batch-size", tr.batch_size, "Override batch size")
      ->default_val(td.batch_size);
  trainc->add_option("--lr", tr.lr, "Override AdamW learning rate")->default_val(td.learning_rate);
  trainc->add_option("--weight-decay", tr.weight_decay, "Override AdamW weight decay")
      ->default_val(td.weight_decay);
  trainc->add_option("--ema-decay", tr.ema_decay, "Override EMA decay")->default_val(td.ema_decay);
  trainc->add_option("--seed", tr.seed, "Override seed")->default_val(td.seed);

  InferArgs in;
  auto* infer = app.add_subcommand("infer", "Predict masks for one image");
  infer->add_option("--ckpt", in.ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  infer->add_option("--image", in.image, "PPM or PGM image")->required()->check(CLI::ExistingFile);
  infer->add_option("--out", in.out, "Directory for drivable.pgm and lane.pgm")->required();
  infer->add_option("--overlay", in.overlay, "Also write a colour overlay PPM");
  infer->add_option("--hw", in.hw, "Network input size HxW")->capture_default_str();

  EvalArgs ev;
  auto* evalc = app.add_subcommand("eval", "Segmentation metrics over a manifest");
  evalc->add_option("--ckpt", ev.ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  evalc->add_option("--manifest", ev.manifest, "Dataset manifest")
      ->required()
      ->check(CLI::ExistingFile);
  evalc->add_option("--hw", ev.hw, "Network input size HxW")->capture_default_str();
  evalc->add_option("--batch-size", ev.batch_size, "Evaluation batch size")->capture_default_str();

  QuantizeArgs qa;
  auto* quant = app.add_subcommand("quantize", "Post-training static quantization report");
  quant->add_option("--ckpt", qa.ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  quant->add_option("--manifest", qa.manifest, "Dataset manifest")
      ->required()
      ->check(CLI::ExistingFile);
  quant->add_option("--out", qa.out, "Scheme sidecar path")->capture_default_str();
  quant->add_option("--bits", qa.bits, "Quantization bit width")
      ->capture_default_str()
      ->check(CLI::Range(2, 16));
  quant->add_option("--calibration", qa.calibration, "minmax or percentile")
      ->capture_default_str()
      ->check(CLI::IsMember({"minmax", "percentile"}));
  quant->add_option("--percentile", qa.percentile, "Percentile for percentile calibration")
      ->capture_default_str();
  quant->add_option("--hw", qa.hw, "Network input size HxW")->capture_default_str();
  quant->add_option("--batch-size", qa.batch_size, "Calibration and evaluation batch size")
      ->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help, --version
    std::cerr << "tlnp: error: " << e.what() << "\n";
    return 2;
  }

  try {
    if (*analyze) return run_analyze(an);
    if (*synth) return run_synth(sy);
    if (*trainc) return run_train(tr, *trainc);
    if (*infer) return run_infer(in);
    if (*evalc) return run_eval(ev);
    if (*quant) return run_quantize(qa);
  } catch (const std::exception& e) {
    std::string msg = e.what();
    for (char& c : msg)
      if (c == '\n') c = ' ';
    std::cerr << "tlnp: error: " << msg << "\n";
    return 1;
  }
  return 1;
}
