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

#include <gtest/gtest.h>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "tlnp/checkpoint.hpp"
#include "tlnp/io.hpp"
#include "tlnp/quant.hpp"

namespace tlnp {
namespace {

namespace fs = std::filesystem;

struct CliRun {
  int code;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("tlnp_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  CliRun run(const std::string& args) {
    const fs::path out = dir_ / "stdout.txt", err = dir_ / "stderr.txt";
    const std::string cmd = std::string(TLNP_CLI_PATH) + " " + args + " >" + out.string() +
                            " 2>" + err.string();
    const int status = std::system(cmd.c_str());
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out), slurp(err)};
  }

  fs::path write_spec(const std::string& body) {
    const fs::path p = dir_ / "run.spec";
    std::ofstream(p) << body;
    return p;
  }

  fs::path dir_;
};

TEST_F(CliTest, AnalyzeShowsPublishedTotals) {
  const CliRun r = run("analyze --config large");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("1.94M"), std::string::npos);
  EXPECT_NE(r.out.find("17.58G"), std::string::npos);
  EXPECT_NE(r.out.find("deviation"), std::string::npos);
}

TEST_F(CliTest, AnalyzeWritesCsv) {
  const CliRun r = run("analyze --config nano --hw 64x128 --convention 2mac --csv " +
                    (dir_ / "n.csv").string());
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(slurp(dir_ / "n.csv").rfind("layer,params,macs,elementwise,flops", 0), 0u);
}

TEST_F(CliTest, ZeroEpochTrainWritesInitialCheckpoint) {
  ASSERT_EQ(run("synth --out " + (dir_ / "data").string() + " --count 2 --hw 32x64").code, 0);
  const auto spec = write_spec("manifest = data/manifest.tsv\noutput = out\nhw = 32x64\n"
                               "epochs = 0\nseed = 9\n");
  const CliRun r = run("train --spec " + spec.string());
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(slurp(dir_ / "out/metrics.csv"), "epoch,train_loss,miou_drivable,acc_lane,iou_lane\n");
  EXPECT_EQ(slurp(dir_ / "out/metrics_ema.csv"), slurp(dir_ / "out/metrics.csv"));
  Model fresh = Model::build(ModelConfig::preset("nano"), 9);
  const auto bytes = encode_checkpoint(snapshot(fresh));
  EXPECT_EQ(slurp(dir_ / "out/model.tlnp"), std::string(bytes.begin(), bytes.end()));
  EXPECT_EQ(slurp(dir_ / "out/model_ema.tlnp"), slurp(dir_ / "out/model.tlnp"));
}

TEST_F(CliTest, SeededTrainRunsAreByteIdentical) {
  ASSERT_EQ(run("synth --out " + (dir_ / "data").string() + " --count 4 --hw 32x64 --val 1").code, 0);
  const auto spec = write_spec("manifest = data/manifest.tsv\noutput = a\nhw = 32x64\n"
                               "epochs = 2\nbatch_size = 2\nseed = 4\n");
  ASSERT_EQ(run("train --quiet --spec " + spec.string()).code, 0);
  fs::rename(dir_ / "a", dir_ / "b");
  ASSERT_EQ(run("train --quiet --spec " + spec.string()).code, 0);
  for (const char* f : {"model.tlnp", "model_ema.tlnp", "metrics.csv", "metrics_ema.csv"}) {
    EXPECT_EQ(slurp(dir_ / "a" / f), slurp(dir_ / "b" / f)) << f;
  }
  // A different seed changes the weights.
  ASSERT_EQ(run("train --quiet --seed 5 --spec " + spec.string()).code, 0);
  EXPECT_NE(slurp(dir_ / "a/model.tlnp"), slurp(dir_ / "b/model.tlnp"));
}

TEST_F(CliTest, InferThenEvalMatchesInProcess) {
  const fs::path data = dir_ / "data";
  ASSERT_EQ(run("synth --out " + data.string() + " --count 3 --hw 32x64 --variant d_and_a --seed 2").code, 0);
  const auto spec = write_spec("manifest = data/manifest.tsv\noutput = out\nhw = 32x64\n"
                               "variant = d_and_a\nepochs = 3\nbatch_size = 3\nseed = 1\n");
  ASSERT_EQ(run("train --quiet --spec " + spec.string()).code, 0);
  const fs::path ckpt = dir_ / "out/model.tlnp";

  // Single-image manifest.
  const fs::path one = dir_ / "one.tsv";
  write_manifest({{data / "0001.ppm", data / "0001_drivable.pgm", data / "0001_lane.pgm"}}, one);
  const CliRun ev = run("eval --ckpt " + ckpt.string() + " --manifest " + one.string() + " --hw 32x64");
  ASSERT_EQ(ev.code, 0) << ev.err;

  const Model model = load_model(ckpt);
  const Dataset d = load_dataset(read_manifest(one), 3, 32, 64);
  const SegmentationScores s = evaluate(model, d.train);
  char expected[512];
  std::snprintf(expected, sizeof expected,
                "miou_drivable %.10f\nacc_lane %.10f\niou_lane %.10f\npa_drivable %.10f\n"
                "mpa_drivable %.10f\n",
                s.miou_drivable(), s.acc_lane(), s.iou_lane(), s.pa_drivable(), s.mpa_drivable());
  EXPECT_EQ(ev.out, expected);

  // The inferred masks agree with the in-process prediction and, used as
  // labels, score perfectly on the same image.
  const fs::path pred = dir_ / "pred";
  const CliRun in = run("infer --ckpt " + ckpt.string() + " --image " + (data / "0001.ppm").string() +
                     " --out " + pred.string() + " --overlay " + (pred / "ov.ppm").string() +
                     " --hw 32x64");
  ASSERT_EQ(in.code, 0) << in.err;
  const Prediction p = predict(model, d.train[0].image);
  EXPECT_EQ(load_mask(pred / "drivable.pgm", 3).data, p.drivable.data);
  EXPECT_EQ(load_mask(pred / "lane.pgm", 2).data, p.lane.data);
  EXPECT_TRUE(fs::exists(pred / "ov.ppm"));
  write_manifest({{data / "0001.ppm", pred / "drivable.pgm", pred / "lane.pgm"}}, one);
  const CliRun self = run("eval --ckpt " + ckpt.string() + " --manifest " + one.string() + " --hw 32x64");
  ASSERT_EQ(self.code, 0) << self.err;
  EXPECT_NE(self.out.find("pa_drivable 1.0000000000"), std::string::npos) << self.out;
}

TEST_F(CliTest, QuantizeWritesSidecarAndTable) {
  ASSERT_EQ(run("synth --out " + (dir_ / "data").string() + " --count 3 --hw 32x64 --val 1").code, 0);
  const auto spec = write_spec("manifest = data/manifest.tsv\noutput = out\nhw = 32x64\nepochs = 0\n");
  ASSERT_EQ(run("train --spec " + spec.string()).code, 0);
  const CliRun r = run("quantize --ckpt " + (dir_ / "out/model.tlnp").string() + " --manifest " +
                    (dir_ / "data/manifest.tsv").string() + " --hw 32x64 --calibration percentile --out " +
                    (dir_ / "s.tlnq").string());
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("INT8-PTSQ"), std::string::npos);
  EXPECT_EQ(read_scheme(dir_ / "s.tlnq").bits, 8);
}

TEST_F(CliTest, FailuresAreOneLineAndLeaveNoPartialOutput) {
  ASSERT_EQ(run("synth --out " + (dir_ / "data").string() + " --count 2 --hw 32x64").code, 0);
  const auto spec = write_spec("manifest = data/manifest.tsv\noutput = out\nhw = 32x64\nepochs = 0\n");
  ASSERT_EQ(run("train --spec " + spec.string()).code, 0);

  // Masks are written before the overlay fails; both they and the new
  // directory must be gone afterwards.
  const fs::path pred = dir_ / "pred";
  const CliRun r = run("infer --ckpt " + (dir_ / "out/model.tlnp").string() + " --image " +
                    (dir_ / "data/0000.ppm").string() + " --out " + pred.string() +
                    " --overlay " + (dir_ / "missing/ov.ppm").string() + " --hw 32x64");
  EXPECT_NE(r.code, 0);
  EXPECT_EQ(r.err.rfind("tlnp: error: ", 0), 0u) << r.err;
  EXPECT_EQ(std::count(r.err.begin(), r.err.end(), '\n'), 1);
  EXPECT_FALSE(fs::exists(pred));

  for (const std::string args :
       {"train --spec " + write_spec("manifest = data/manifest.tsv\nouput = x\n").string(),
        std::string("analyze --config huge"), std::string("eval --ckpt nope --manifest nope")}) {
    const CliRun bad = run(args);
    EXPECT_NE(bad.code, 0) << args;
    EXPECT_EQ(bad.err.rfind("tlnp: error: ", 0), 0u) << bad.err;
    EXPECT_EQ(std::count(bad.err.begin(), bad.err.end(), '\n'), 1) << bad.err;
  }
}

}  // namespace
}  // namespace tlnp
