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

#include "tlnp/io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "tlnp/image.hpp"

namespace tlnp {
namespace {

namespace fs = std::filesystem;

[[noreturn]] void fail(IoError::Kind kind, const std::string& message) {
  throw IoError(kind, message);
}

// Next whitespace-delimited header token, skipping '#' comments.
std::string header_token(std::istream& in, const fs::path& path) {
  std::string tok;
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (std::isspace(c)) {
      if (!tok.empty()) return tok;
      continue;
    }
    tok.push_back(static_cast<char>(c));
  }
  if (tok.empty()) fail(IoError::Kind::kFormat, path.string() + ": truncated PNM header");
  return tok;
}

std::int64_t header_int(std::istream& in, const fs::path& path) {
  const std::string tok = header_token(in, path);
  std::int64_t v = 0;
  const auto [end, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || end != tok.data() + tok.size() || v < 1) {
    fail(IoError::Kind::kFormat, path.string() + ": bad PNM header field '" + tok + "'");
  }
  return v;
}

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(line);
  while (std::getline(in, cur, '\t')) out.push_back(trim(cur));
  return out;
}

fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

template <class T>
T parse_number(const std::string& key, const std::string& value, int line) {
  T v{};
  const auto [end, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
  if (ec != std::errc() || end != value.data() + value.size()) {
    fail(IoError::Kind::kSpec, "line " + std::to_string(line) + ": " + key +
                                   " expects a number, got '" + value + "'");
  }
  return v;
}

bool parse_bool(const std::string& key, const std::string& value, int line) {
  if (value == "true") return true;
  if (value == "false") return false;
  fail(IoError::Kind::kSpec,
       "line " + std::to_string(line) + ": " + key + " expects true or false, got '" + value + "'");
}

}  // namespace

Raster read_pnm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(IoError::Kind::kUnreadable, "cannot read " + path.string());
  const std::string magic = header_token(in, path);
  Raster r;
  if (magic == "P6") {
    r.channels = 3;
  } else if (magic == "P5") {
    r.channels = 1;
  } else {
    fail(IoError::Kind::kFormat, path.string() + ": unsupported format '" + magic +
                                     "' (binary PPM P6 or PGM P5 expected)");
  }
  r.width = header_int(in, path);
  r.height = header_int(in, path);
  const std::int64_t maxval = header_int(in, path);
  if (maxval > 255) {
    fail(IoError::Kind::kFormat, path.string() + ": maxval " + std::to_string(maxval) +
                                     " needs 16-bit samples, which are not supported");
  }
  r.data.resize(static_cast<std::size_t>(r.height * r.width * r.channels));
  in.read(reinterpret_cast<char*>(r.data.data()), static_cast<std::streamsize>(r.data.size()));
  if (in.gcount() != static_cast<std::streamsize>(r.data.size())) {
    fail(IoError::Kind::kFormat, path.string() + ": pixel data truncated");
  }
  return r;
}

void write_pnm(const Raster& r, const fs::path& path) {
  if (r.channels != 1 && r.channels != 3) {
    throw std::invalid_argument("PNM rasters have 1 or 3 channels");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(IoError::Kind::kUnreadable, "cannot write " + path.string());
  out << (r.channels == 3 ? "P6" : "P5") << "\n" << r.width << " " << r.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(r.data.data()), static_cast<std::streamsize>(r.data.size()));
  if (!out) fail(IoError::Kind::kUnreadable, "failed writing " + path.string());
}

Tensor load_image(const fs::path& path, std::int64_t height, std::int64_t width) {
  const Raster r = read_pnm(path);
  Tensor t(Shape{1, 3, r.height, r.width}, DType::kF32);
  auto d = t.mutable_data<float>();
  const std::int64_t plane = r.height * r.width;
  for (std::int64_t i = 0; i < plane; ++i)
    for (std::int64_t c = 0; c < 3; ++c) {
      const std::uint8_t v = r.data[std::size_t(i * r.channels + (r.channels == 3 ? c : 0))];
      d[std::size_t(c * plane + i)] = static_cast<float>(v) / 255.0f;
    }
  return resize_bilinear(t, height, width);
}

LabelMap load_mask(const fs::path& path, std::int64_t num_classes) {
  const Raster r = read_pnm(path);
  if (r.channels != 1) fail(IoError::Kind::kFormat, path.string() + ": masks must be PGM (P5)");
  LabelMap m(1, r.height, r.width);
  for (std::size_t i = 0; i < r.data.size(); ++i) {
    if (r.data[i] >= num_classes) {
      const std::int64_t px = static_cast<std::int64_t>(i);
      fail(IoError::Kind::kLabel, path.string() + ": label value " + std::to_string(r.data[i]) +
                                      " at (" + std::to_string(px / r.width) + ", " +
                                      std::to_string(px % r.width) + ") is not below " +
                                      std::to_string(num_classes) + " classes");
    }
    m.data[i] = r.data[i];
  }
  return m;
}

LabelMap load_mask(const fs::path& path, std::int64_t num_classes, std::int64_t height,
                   std::int64_t width) {
  return resize_nearest(load_mask(path, num_classes), height, width);
}

void save_image(const Tensor& image, const fs::path& path) {
  const Shape s = image.shape();
  if (s.n != 1 || s.c != 3) throw ShapeError("save_image expects (1, 3, H, W), got " + s.str());
  Raster r{s.h, s.w, 3, std::vector<std::uint8_t>(std::size_t(3 * s.plane()))};
  const std::vector<double> v = image.to_vector();
  for (std::int64_t i = 0; i < s.plane(); ++i)
    for (std::int64_t c = 0; c < 3; ++c)
      r.data[std::size_t(3 * i + c)] = to_byte(v[std::size_t(c * s.plane() + i)]);
  write_pnm(r, path);
}

void save_mask(const LabelMap& mask, const fs::path& path) {
  if (mask.n != 1) throw ShapeError("save_mask expects a single label map");
  Raster r{mask.h, mask.w, 1, std::vector<std::uint8_t>(mask.data.size())};
  for (std::size_t i = 0; i < mask.data.size(); ++i) {
    if (mask.data[i] < 0 || mask.data[i] > 255) {
      throw std::out_of_range("label " + std::to_string(mask.data[i]) + " does not fit a byte");
    }
    r.data[i] = static_cast<std::uint8_t>(mask.data[i]);
  }
  write_pnm(r, path);
}

Tensor overlay(const Tensor& image, const Prediction& p) {
  const Shape s = image.shape();
  if (s.n != 1 || s.c != 3 || p.drivable.h != s.h || p.drivable.w != s.w || p.lane.h != s.h ||
      p.lane.w != s.w) {
    throw ShapeError("overlay needs a (1, 3, H, W) image and H x W predictions");
  }
  constexpr double kAlpha = 0.5;
  constexpr double kColors[3][3] = {{1, 0, 0}, {0, 0, 1}, {0, 1, 0}};  // drivable, alt, lane
  std::vector<double> v = image.to_vector();
  const std::int64_t plane = s.plane();
  for (std::int64_t i = 0; i < plane; ++i) {
    const double* color = nullptr;
    if (p.drivable.data[std::size_t(i)] == 1) color = kColors[0];
    if (p.drivable.data[std::size_t(i)] == 2) color = kColors[1];
    if (p.lane.data[std::size_t(i)] == 1) color = kColors[2];
    if (!color) continue;
    for (std::int64_t c = 0; c < 3; ++c) {
      double& x = v[std::size_t(c * plane + i)];
      x = (1 - kAlpha) * x + kAlpha * color[c];
    }
  }
  return Tensor::from_vector(s, v, DType::kF32);
}

std::vector<SampleRecord> read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(IoError::Kind::kUnreadable, "cannot read manifest " + path.string());
  const fs::path base = path.parent_path();
  std::vector<SampleRecord> out;
  std::vector<std::string> missing;
  std::string line;
  for (int no = 1; std::getline(in, line); ++no) {
    if (trim(line).empty() || trim(line)[0] == '#') continue;
    const auto f = split_tabs(line);
    if (f.size() != 4) {
      fail(IoError::Kind::kManifest, path.string() + ":" + std::to_string(no) + ": expected 4 " +
                                         "tab-separated fields, got " + std::to_string(f.size()));
    }
    SampleRecord r{resolve(base, f[0]), resolve(base, f[1]), resolve(base, f[2]), Split::kTrain};
    if (f[3] == "val") {
      r.split = Split::kVal;
    } else if (f[3] != "train") {
      fail(IoError::Kind::kManifest,
           path.string() + ":" + std::to_string(no) + ": split must be train or val, got '" + f[3] + "'");
    }
    for (const fs::path* p : {&r.image, &r.drivable, &r.lane}) {
      if (!fs::is_regular_file(*p)) missing.push_back(p->string());
    }
    out.push_back(std::move(r));
  }
  if (!missing.empty()) {
    std::string msg = path.string() + ": " + std::to_string(missing.size()) + " missing file" +
                      (missing.size() == 1 ? "" : "s") + ":";
    for (const auto& m : missing) msg += " " + m;
    fail(IoError::Kind::kManifest, msg);
  }
  if (out.empty()) fail(IoError::Kind::kManifest, path.string() + ": no samples");
  return out;
}

void write_manifest(const std::vector<SampleRecord>& records, const fs::path& path) {
  std::ofstream out(path);
  if (!out) fail(IoError::Kind::kUnreadable, "cannot write " + path.string());
  for (const auto& r : records) {
    out << r.image.generic_string() << '\t' << r.drivable.generic_string() << '\t'
        << r.lane.generic_string() << '\t' << (r.split == Split::kVal ? "val" : "train") << '\n';
  }
}

Dataset load_dataset(const std::vector<SampleRecord>& records, std::int64_t drivable_classes,
                     std::int64_t height, std::int64_t width) {
  Dataset d;
  for (const auto& r : records) {
    Sample s{load_image(r.image, height, width), load_mask(r.drivable, drivable_classes, height, width),
             load_mask(r.lane, 2, height, width)};
    (r.split == Split::kVal ? d.val : d.train).push_back(std::move(s));
  }
  return d;
}

fs::path write_dataset(const std::vector<Sample>& samples, const fs::path& dir,
                       std::int64_t val_count) {
  fs::create_directories(dir);
  std::vector<SampleRecord> records;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    char stem[32];
    std::snprintf(stem, sizeof stem, "%04zu", i);
    SampleRecord r{std::string(stem) + ".ppm", std::string(stem) + "_drivable.pgm",
                   std::string(stem) + "_lane.pgm",
                   std::int64_t(i) >= std::int64_t(samples.size()) - val_count ? Split::kVal
                                                                               : Split::kTrain};
    save_image(samples[i].image, dir / r.image);
    save_mask(samples[i].drivable, dir / r.drivable);
    save_mask(samples[i].lane, dir / r.lane);
    records.push_back(std::move(r));
  }
  const fs::path manifest = dir / "manifest.tsv";
  write_manifest(records, manifest);
  return manifest;
}

std::pair<std::int64_t, std::int64_t> parse_hw(const std::string& text) {
  const auto x = text.find('x');
  std::int64_t h = 0, w = 0;
  if (x != std::string::npos) {
    const auto a = std::from_chars(text.data(), text.data() + x, h);
    const auto b = std::from_chars(text.data() + x + 1, text.data() + text.size(), w);
    if (a.ec == std::errc() && a.ptr == text.data() + x && b.ec == std::errc() &&
        b.ptr == text.data() + text.size() && h > 0 && w > 0) {
      return {h, w};
    }
  }
  throw std::invalid_argument("size '" + text + "' is not of the form HxW");
}

namespace {

using Setter = std::function<void(RunSpec&, const std::string&, int, const fs::path&)>;

const std::map<std::string, Setter>& spec_setters() {
  static const std::map<std::string, Setter> setters = [] {
    std::map<std::string, Setter> m;
    auto dbl = [&](const char* key, double TrainConfig::*f) {
      m[key] = [key, f](RunSpec& s, const std::string& v, int l, const fs::path&) {
        s.train.*f = parse_number<double>(key, v, l);
      };
    };
    auto aug_dbl = [&](const char* key, double AugmentConfig::*f) {
      m[key] = [key, f](RunSpec& s, const std::string& v, int l, const fs::path&) {
        s.train.augment.*f = parse_number<double>(key, v, l);
      };
    };
    auto aug_bool = [&](const char* key, bool AugmentConfig::*f) {
      m[key] = [key, f](RunSpec& s, const std::string& v, int l, const fs::path&) {
        s.train.augment.*f = parse_bool(key, v, l);
      };
    };
    m["config"] = [](RunSpec& s, const std::string& v, int, const fs::path&) {
      ModelConfig::preset(v);
      s.config = v;
    };
    m["variant"] = [](RunSpec& s, const std::string& v, int, const fs::path&) {
      s.variant = parse_variant(v);
    };
    m["manifest"] = [](RunSpec& s, const std::string& v, int, const fs::path& b) {
      s.manifest = resolve(b, v);
    };
    m["output"] = [](RunSpec& s, const std::string& v, int, const fs::path& b) {
      s.output = resolve(b, v);
    };
    m["hw"] = [](RunSpec& s, const std::string& v, int, const fs::path&) {
      std::tie(s.height, s.width) = parse_hw(v);
    };
    m["epochs"] = [](RunSpec& s, const std::string& v, int l, const fs::path&) {
      s.train.epochs = parse_number<std::int64_t>("epochs", v, l);
    };
    m["batch_size"] = [](RunSpec& s, const std::string& v, int l, const fs::path&) {
      s.train.batch_size = parse_number<std::int64_t>("batch_size", v, l);
    };
    m["ema_ramp_steps"] = [](RunSpec& s, const std::string& v, int l, const fs::path&) {
      s.train.ema_ramp_steps = parse_number<std::int64_t>("ema_ramp_steps", v, l);
    };
    m["seed"] = [](RunSpec& s, const std::string& v, int l, const fs::path&) {
      s.train.seed = parse_number<std::uint64_t>("seed", v, l);
    };
    dbl("learning_rate", &TrainConfig::learning_rate);
    dbl("weight_decay", &TrainConfig::weight_decay);
    dbl("beta1", &TrainConfig::beta1);
    dbl("beta2", &TrainConfig::beta2);
    dbl("adam_epsilon", &TrainConfig::adam_epsilon);
    dbl("ema_decay", &TrainConfig::ema_decay);
    aug_bool("hflip", &AugmentConfig::hflip);
    aug_bool("translate", &AugmentConfig::translate);
    aug_bool("crop", &AugmentConfig::crop);
    aug_bool("hsv", &AugmentConfig::hsv);
    aug_dbl("flip_probability", &AugmentConfig::flip_probability);
    aug_dbl("max_shift", &AugmentConfig::max_shift);
    aug_dbl("min_crop_scale", &AugmentConfig::min_crop_scale);
    aug_dbl("hue", &AugmentConfig::hue);
    aug_dbl("saturation", &AugmentConfig::saturation);
    aug_dbl("value", &AugmentConfig::value);
    return m;
  }();
  return setters;
}

}  // namespace

std::vector<std::string> run_spec_keys() {
  std::vector<std::string> keys;
  for (const auto& [k, _] : spec_setters()) keys.push_back(k);
  return keys;
}

RunSpec parse_run_spec(const std::string& text, const fs::path& base) {
  RunSpec spec;
  std::istringstream in(text);
  std::string raw;
  for (int no = 1; std::getline(in, raw); ++no) {
    // Strip comments outside quotes.
    std::string line;
    bool quoted = false;
    for (char c : raw) {
      if (c == '"') quoted = !quoted;
      if (c == '#' && !quoted) break;
      line.push_back(c);
    }
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      fail(IoError::Kind::kSpec, "line " + std::to_string(no) + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') {
      value = value.substr(1, value.size() - 2);
    }
    const auto it = spec_setters().find(key);
    if (it == spec_setters().end()) {
      fail(IoError::Kind::kSpec, "line " + std::to_string(no) + ": unknown key '" + key + "'");
    }
    try {
      it->second(spec, value, no, base);
    } catch (const IoError&) {
      throw;
    } catch (const std::exception& e) {
      fail(IoError::Kind::kSpec, "line " + std::to_string(no) + ": " + key + ": " + e.what());
    }
  }
  if (spec.manifest.empty()) fail(IoError::Kind::kSpec, "run spec needs a manifest");
  if (spec.output.empty()) fail(IoError::Kind::kSpec, "run spec needs an output directory");
  try {
    spec.train.validate();
  } catch (const std::invalid_argument& e) {
    fail(IoError::Kind::kSpec, e.what());
  }
  return spec;
}

RunSpec load_run_spec(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(IoError::Kind::kUnreadable, "cannot read run spec " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  try {
    return parse_run_spec(buf.str(), path.parent_path());
  } catch (const IoError& e) {
    throw IoError(e.kind(), path.string() + ": " + e.what());
  }
}

}  // namespace tlnp
