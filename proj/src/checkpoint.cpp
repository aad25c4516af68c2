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

#include "tlnp/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

namespace tlnp {
namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint data is written as raw little-endian buffers");

constexpr char kMagic[4] = {'T', 'L', 'N', 'P'};

class Writer {
 public:
  template <class T>
  void put(T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      bytes.push_back(static_cast<std::uint8_t>(static_cast<std::uint64_t>(v) >> (8 * i)));
    }
  }
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    bytes.insert(bytes.end(), b, b + n);
  }
  std::vector<std::uint8_t> bytes;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& b) : bytes_(b) {}
  template <class T>
  T get(const char* what) {
    need(sizeof(T), what);
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    }
    pos_ += sizeof(T);
    return static_cast<T>(v);
  }
  void raw(void* out, std::size_t n, const char* what) {
    need(n, what);
    std::memcpy(out, bytes_.data() + pos_, n);
    pos_ += n;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) {
      throw CheckpointError(CheckpointError::Kind::kTruncated,
                            std::string("checkpoint truncated while reading ") + what +
                                " at byte " + std::to_string(pos_));
    }
  }
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

std::string hex(std::uint64_t v) {
  std::ostringstream os;
  os << "0x" << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

std::string describe(std::uint64_t fp) {
  if (auto c = config_for_fingerprint(fp)) return c->display_name() + " [" + hex(fp) + "]";
  return "unknown config [" + hex(fp) + "]";
}

std::uint64_t header_size() { return 4 + 4 + 8 + 4; }

std::uint64_t entry_overhead(const std::string& name) { return 2 + name.size() + 1 + 1 + 4 * 4; }

}  // namespace

Checkpoint snapshot(Model& model) {
  Checkpoint c;
  c.fingerprint = model.config().fingerprint();
  for (const auto& e : model.state()) c.tensors.emplace_back(e.name, e.tensor->detach());
  return c;
}

void restore(Model& model, const Checkpoint& ckpt) {
  if (ckpt.fingerprint != model.config().fingerprint()) {
    throw CheckpointError(CheckpointError::Kind::kFingerprint,
                          "checkpoint is for " + describe(ckpt.fingerprint) +
                              " but the model is " + describe(model.config().fingerprint()));
  }
  TensorList state = model.state();
  std::map<std::string, Tensor*> slots;
  for (auto& e : state) slots[e.name] = e.tensor;
  std::map<std::string, bool> seen;
  for (const auto& [name, t] : ckpt.tensors) {
    auto it = slots.find(name);
    if (it == slots.end()) {
      throw CheckpointError(CheckpointError::Kind::kUnknownName,
                            "checkpoint tensor '" + name + "' does not exist in the model");
    }
    Tensor& dst = *it->second;
    if (t.shape() != dst.shape()) {
      throw CheckpointError(CheckpointError::Kind::kShape,
                            "checkpoint tensor '" + name + "' has shape " + t.shape().str() +
                                ", model expects " + dst.shape().str());
    }
    const Tensor src = t.to(dst.dtype());
    dispatch(dst.dtype(), [&]<class T>() {
      auto out = dst.mutable_data<T>();
      auto in = src.data<T>();
      std::copy(in.begin(), in.end(), out.begin());
    });
    seen[name] = true;
  }
  for (const auto& e : state) {
    if (!seen.count(e.name)) {
      throw CheckpointError(CheckpointError::Kind::kMissingName,
                            "checkpoint has no tensor '" + e.name + "'");
    }
  }
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  w.raw(kMagic, 4);
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put<std::uint64_t>(ckpt.fingerprint);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, t] : ckpt.tensors) {
    if (name.size() > 0xffff) throw std::invalid_argument("tensor name too long: " + name);
    w.put<std::uint16_t>(static_cast<std::uint16_t>(name.size()));
    w.raw(name.data(), name.size());
    w.put<std::uint8_t>(static_cast<std::uint8_t>(t.dtype()));
    w.put<std::uint8_t>(4);
    const Shape s = t.shape();
    for (auto d : {s.n, s.c, s.h, s.w}) w.put<std::uint32_t>(static_cast<std::uint32_t>(d));
    dispatch(t.dtype(), [&]<class T>() {
      auto v = t.data<T>();
      w.raw(v.data(), v.size_bytes());
    });
  }
  return std::move(w.bytes);
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  char magic[4];
  r.raw(magic, 4, "magic");
  if (std::memcmp(magic, kMagic, 4) != 0) {
    throw CheckpointError(CheckpointError::Kind::kBadMagic, "not a checkpoint (bad magic)");
  }
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw CheckpointError(CheckpointError::Kind::kVersion,
                          "unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint c;
  c.fingerprint = r.get<std::uint64_t>("fingerprint");
  const auto count = r.get<std::uint32_t>("tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = r.get<std::uint16_t>("name length");
    std::string name(len, '\0');
    r.raw(name.data(), len, "name");
    const auto tag = r.get<std::uint8_t>("dtype");
    if (tag > 1) {
      throw CheckpointError(CheckpointError::Kind::kShape,
                            "tensor '" + name + "' has unknown dtype tag " + std::to_string(tag));
    }
    const auto rank = r.get<std::uint8_t>("rank");
    if (rank < 1 || rank > 4) {
      throw CheckpointError(CheckpointError::Kind::kShape,
                            "tensor '" + name + "' has unsupported rank " + std::to_string(rank));
    }
    std::int64_t dims[4] = {1, 1, 1, 1};
    for (int k = 4 - rank; k < 4; ++k) dims[k] = r.get<std::uint32_t>("dims");
    const Shape s{dims[0], dims[1], dims[2], dims[3]};
    if (s.n < 1 || s.c < 1 || s.h < 1 || s.w < 1) {
      throw CheckpointError(CheckpointError::Kind::kShape,
                            "tensor '" + name + "' has a zero dimension");
    }
    const auto dtype = static_cast<DType>(tag);
    Tensor t = Tensor::zeros(s, dtype);
    dispatch(dtype, [&]<class T>() {
      auto v = t.mutable_data<T>();
      r.raw(v.data(), v.size_bytes(), "tensor data");
    });
    c.tensors.emplace_back(std::move(name), std::move(t));
  }
  if (!r.done()) {
    throw CheckpointError(CheckpointError::Kind::kTruncated, "trailing bytes after checkpoint");
  }
  return c;
}

void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError(CheckpointError::Kind::kIo, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError(CheckpointError::Kind::kIo, "write failed: " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(CheckpointError::Kind::kIo, "cannot read " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

void save_model(Model& model, const std::filesystem::path& path) {
  write_checkpoint(snapshot(model), path);
}

Model load_model(const std::filesystem::path& path, DType dtype) {
  const Checkpoint c = read_checkpoint(path);
  auto cfg = config_for_fingerprint(c.fingerprint);
  if (!cfg) {
    throw CheckpointError(CheckpointError::Kind::kFingerprint,
                          path.string() + ": " + describe(c.fingerprint));
  }
  Model m = Model::build(*cfg, 0, dtype);
  restore(m, c);
  return m;
}

void load_into(Model& model, const std::filesystem::path& path) {
  restore(model, read_checkpoint(path));
}

std::uint64_t encoded_size(Model& model, DType dtype) {
  std::uint64_t total = header_size();
  for (const auto& e : model.state()) {
    total += entry_overhead(e.name) +
             static_cast<std::uint64_t>(e.tensor->numel()) * dtype_size(dtype);
  }
  return total;
}

}  // namespace tlnp
