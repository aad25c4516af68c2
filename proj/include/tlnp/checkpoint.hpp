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
#include <utility>
#include <vector>

#include "tlnp/model.hpp"

namespace tlnp {

class CheckpointError : public std::runtime_error {
 public:
  enum class Kind { kIo, kBadMagic, kVersion, kTruncated, kFingerprint, kUnknownName,
                    kMissingName, kShape };
  CheckpointError(Kind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::uint64_t fingerprint = 0;
  std::vector<std::pair<std::string, Tensor>> tensors;
};

// Deep copy of every parameter and running statistic.
Checkpoint snapshot(Model& model);
// Copies values into the model. Names must match exactly; values are
// converted to the model's dtype.
void restore(Model& model, const Checkpoint& ckpt);

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint read_checkpoint(const std::filesystem::path& path);

void save_model(Model& model, const std::filesystem::path& path);
// Builds the preset matching the stored fingerprint and restores into it.
Model load_model(const std::filesystem::path& path, DType dtype = DType::kF32);
// Restores into an existing model; the fingerprints must match.
void load_into(Model& model, const std::filesystem::path& path);

// Exact encoded size for a model's state stored with `dtype` elements.
std::uint64_t encoded_size(Model& model, DType dtype);

}  // namespace tlnp
