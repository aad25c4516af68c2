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

#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "tlnp/dataset.hpp"
#include "tlnp/trainer.hpp"

namespace tlnp {

class IoError : public std::runtime_error {
 public:
  enum class Kind { kUnreadable, kFormat, kLabel, kManifest, kSpec };
  IoError(Kind kind, const std::string& message) : std::runtime_error(message), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

// 8-bit interleaved raster as stored in binary PPM (3 channels) or PGM (1).
struct Raster {
  std::int64_t height = 0, width = 0, channels = 0;
  std::vector<std::uint8_t> data;
};

// Reads P5 or P6 with maxval <= 255; '#' comments in the header are skipped.
Raster read_pnm(const std::filesystem::path& path);
void write_pnm(const Raster& raster, const std::filesystem::path& path);

inline constexpr std::int64_t kDefaultHeight = 384;
inline constexpr std::int64_t kDefaultWidth = 640;

// (1, 3, height, width) float image in [0, 1], bilinearly resized. A PGM is
// replicated across the three channels.
Tensor load_image(const std::filesystem::path& path, std::int64_t height = kDefaultHeight,
                  std::int64_t width = kDefaultWidth);
// Byte values of a PGM are labels; any value >= num_classes is rejected
// before the nearest-neighbour resize.
LabelMap load_mask(const std::filesystem::path& path, std::int64_t num_classes,
                   std::int64_t height, std::int64_t width);
// Native-size variant with no resize.
LabelMap load_mask(const std::filesystem::path& path, std::int64_t num_classes);

void save_image(const Tensor& image, const std::filesystem::path& path);
void save_mask(const LabelMap& mask, const std::filesystem::path& path);

// Image blended with the prediction: drivable red, alternative lane blue,
// lane lines green.
Tensor overlay(const Tensor& image, const Prediction& prediction);

enum class Split { kTrain, kVal };

struct SampleRecord {
  std::filesystem::path image;
  std::filesystem::path drivable;
  std::filesystem::path lane;
  Split split = Split::kTrain;
};

// Tab-separated: image, drivable mask, lane mask, split (train or val).
// Relative paths resolve against the manifest's directory; blank lines and
// lines starting with '#' are skipped. Every missing file is reported.
std::vector<SampleRecord> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::vector<SampleRecord>& records, const std::filesystem::path& path);

Dataset load_dataset(const std::vector<SampleRecord>& records, std::int64_t drivable_classes,
                     std::int64_t height = kDefaultHeight, std::int64_t width = kDefaultWidth);

// Writes samples as PPM/PGM files plus manifest.tsv under `dir`; the last
// `val_count` samples are tagged val. Returns the manifest path.
std::filesystem::path write_dataset(const std::vector<Sample>& samples,
                                    const std::filesystem::path& dir, std::int64_t val_count = 0);

// Flat key = value run description; '#' starts a comment, string values may
// be quoted. Unknown keys are rejected.
struct RunSpec {
  std::string config = "nano";
  TaskVariant variant = TaskVariant::kStandard;
  std::filesystem::path manifest;
  std::filesystem::path output;
  std::int64_t height = kDefaultHeight;
  std::int64_t width = kDefaultWidth;
  TrainConfig train;

  ModelConfig model_config() const { return ModelConfig::preset(config, variant); }
};

// Relative paths resolve against `base`.
RunSpec parse_run_spec(const std::string& text, const std::filesystem::path& base = {});
RunSpec load_run_spec(const std::filesystem::path& path);
std::vector<std::string> run_spec_keys();

// "384x640" -> {384, 640}.
std::pair<std::int64_t, std::int64_t> parse_hw(const std::string& text);

}  // namespace tlnp
