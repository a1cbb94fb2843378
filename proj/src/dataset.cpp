#include "dud/dataset.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "dud/image_io.hpp"

namespace dud {

using nlohmann::json;

void DatasetSpec::validate() const {
  if (height < 1) throw ConfigError("dataset.image_size.height", "must be positive");
  if (width < 1) throw ConfigError("dataset.image_size.width", "must be positive");
  if (count_train < 1) throw ConfigError("dataset.count_train", "must be positive");
  if (count_val < 1) throw ConfigError("dataset.count_val", "must be positive");
  if (count_test < 1) throw ConfigError("dataset.count_test", "must be positive");
  if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) {
    throw ConfigError("dataset.noise_sigma", "must be finite and >= 0");
  }
  if (kind == SignalKind::conjugate) {
    if (!(conjugate.std > 0.0)) throw ConfigError("dataset.signal_params.std", "must be > 0");
    if (!std::isfinite(conjugate.mean)) throw ConfigError("dataset.signal_params.mean", "must be finite");
  } else {
    if (blobs.count_min < 0 || blobs.count_max < blobs.count_min) {
      throw ConfigError("dataset.signal_params.count", "need 0 <= count_min <= count_max");
    }
    if (!(blobs.radius_min > 0.0) || blobs.radius_max < blobs.radius_min) {
      throw ConfigError("dataset.signal_params.radius", "need 0 < radius_min <= radius_max");
    }
    if (blobs.amplitude_max < blobs.amplitude_min) {
      throw ConfigError("dataset.signal_params.amplitude", "need amplitude_min <= amplitude_max");
    }
  }
}

void to_json(json& j, const DatasetSpec& s) {
  j = json{{"kind", s.kind == SignalKind::conjugate ? "conjugate" : "blobs"},
           {"image_size", {s.height, s.width}},
           {"count_train", s.count_train},
           {"count_val", s.count_val},
           {"count_test", s.count_test},
           {"noise_sigma", s.noise_sigma},
           {"seed", s.seed}};
  if (s.kind == SignalKind::conjugate) {
    j["signal_params"] = {{"mean", s.conjugate.mean}, {"std", s.conjugate.std}};
  } else {
    j["signal_params"] = {{"count", {s.blobs.count_min, s.blobs.count_max}},
                          {"radius", {s.blobs.radius_min, s.blobs.radius_max}},
                          {"amplitude", {s.blobs.amplitude_min, s.blobs.amplitude_max}},
                          {"background", s.blobs.background}};
  }
}

namespace {

template <class T>
void read_field(const json& j, const char* key, T& out, const std::string& prefix) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(prefix + key, e.what());
  }
}

template <class T>
void read_pair(const json& j, const char* key, T& first, T& second, const std::string& prefix) {
  if (!j.contains(key)) return;
  const auto& v = j.at(key);
  if (!v.is_array() || v.size() != 2) throw ConfigError(prefix + key, "expected a two-element array");
  try {
    first = v[0].get<T>();
    second = v[1].get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(prefix + key, e.what());
  }
}

}  // namespace

void from_json(const json& j, DatasetSpec& s) {
  const std::string p = "dataset.";
  if (j.contains("kind")) {
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "conjugate") {
      s.kind = SignalKind::conjugate;
    } else if (kind == "blobs") {
      s.kind = SignalKind::blobs;
    } else {
      throw ConfigError("dataset.kind", "unknown kind '" + kind + "'");
    }
  }
  read_pair(j, "image_size", s.height, s.width, p);
  read_field(j, "count_train", s.count_train, p);
  read_field(j, "count_val", s.count_val, p);
  read_field(j, "count_test", s.count_test, p);
  read_field(j, "noise_sigma", s.noise_sigma, p);
  read_field(j, "seed", s.seed, p);
  if (j.contains("signal_params")) {
    const auto& sp = j.at("signal_params");
    const std::string q = p + "signal_params.";
    if (s.kind == SignalKind::conjugate) {
      read_field(sp, "mean", s.conjugate.mean, q);
      read_field(sp, "std", s.conjugate.std, q);
    } else {
      read_pair(sp, "count", s.blobs.count_min, s.blobs.count_max, q);
      read_pair(sp, "radius", s.blobs.radius_min, s.blobs.radius_max, q);
      read_pair(sp, "amplitude", s.blobs.amplitude_min, s.blobs.amplitude_max, q);
      read_field(sp, "background", s.blobs.background, q);
    }
  }
}

namespace {

ImagePlane draw_clean(const DatasetSpec& spec, Rng& rng) {
  ImagePlane img(spec.height, spec.width);
  if (spec.kind == SignalKind::conjugate) {
    for (float& v : img.pixels()) {
      v = static_cast<float>(spec.conjugate.mean + spec.conjugate.std * rng.normal());
    }
    return img;
  }
  const auto& b = spec.blobs;
  std::vector<double> acc(img.size(), b.background);
  const int count = rng.uniform_int(b.count_min, b.count_max);
  for (int k = 0; k < count; ++k) {
    const double cy = rng.uniform() * spec.height;
    const double cx = rng.uniform() * spec.width;
    const double radius = b.radius_min + rng.uniform() * (b.radius_max - b.radius_min);
    const double amplitude = b.amplitude_min + rng.uniform() * (b.amplitude_max - b.amplitude_min);
    const double inv = 1.0 / (2.0 * radius * radius);
    for (int r = 0; r < spec.height; ++r) {
      for (int c = 0; c < spec.width; ++c) {
        const double dy = r + 0.5 - cy;
        const double dx = c + 0.5 - cx;
        acc[static_cast<std::size_t>(r) * spec.width + c] += amplitude * std::exp(-(dy * dy + dx * dx) * inv);
      }
    }
  }
  auto px = img.pixels();
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = static_cast<float>(acc[i]);
  return img;
}

ImagePair draw_pair(const DatasetSpec& spec, Rng& rng) {
  ImagePair pair{draw_clean(spec, rng), {}};
  pair.noisy = pair.clean;
  if (spec.noise_sigma > 0.0) {
    const auto sigma = static_cast<float>(spec.noise_sigma);
    for (float& v : pair.noisy.pixels()) v += sigma * rng.normal();
  }
  return pair;
}

std::filesystem::path numbered(const std::filesystem::path& dir, int index) {
  char name[32];
  std::snprintf(name, sizeof(name), "%04d.dud", index);
  return dir / name;
}

}  // namespace

Dataset generate_dataset(const DatasetSpec& spec) {
  spec.validate();
  Dataset ds{spec, {}, {}, {}};
  Rng rng(spec.seed);
  for (int i = 0; i < spec.count_train; ++i) ds.train.push_back(draw_pair(spec, rng));
  for (int i = 0; i < spec.count_val; ++i) ds.val.push_back(draw_pair(spec, rng));
  for (int i = 0; i < spec.count_test; ++i) ds.test.push_back(draw_pair(spec, rng));
  return ds;
}

void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir / "clean", ec);
  fs::create_directories(dir / "noisy", ec);
  if (ec) throw IoError("cannot create dataset directory " + dir.string() + ": " + ec.message());
  int index = 0;
  for (const auto* split : {&ds.train, &ds.val, &ds.test}) {
    for (const auto& pair : *split) {
      write_image(numbered(dir / "clean", index), pair.clean);
      write_image(numbered(dir / "noisy", index), pair.noisy);
      ++index;
    }
  }
  std::ofstream os(dir / "spec.json");
  if (!os) throw IoError("cannot write " + (dir / "spec.json").string());
  os << json(ds.spec).dump(2) << '\n';
}

Dataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream is(dir / "spec.json");
  if (!is) throw IoError("missing dataset spec: " + (dir / "spec.json").string());
  Dataset ds;
  try {
    ds.spec = json::parse(is).get<DatasetSpec>();
  } catch (const json::exception& e) {
    throw FormatError("dataset spec.json: " + std::string(e.what()));
  }
  ds.spec.validate();
  int index = 0;
  auto load_split = [&](std::vector<ImagePair>& out, int count) {
    for (int i = 0; i < count; ++i, ++index) {
      out.push_back({read_image(numbered(dir / "clean", index)), read_image(numbered(dir / "noisy", index))});
    }
  };
  load_split(ds.train, ds.spec.count_train);
  load_split(ds.val, ds.spec.count_val);
  load_split(ds.test, ds.spec.count_test);
  return ds;
}

std::vector<ImagePlane> noisy_images(const std::vector<ImagePair>& pairs) {
  std::vector<ImagePlane> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back(p.noisy);
  return out;
}

std::vector<ImagePlane> clean_images(const std::vector<ImagePair>& pairs) {
  std::vector<ImagePlane> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back(p.clean);
  return out;
}

PatchBatch sample_patch_batch(const std::vector<ImagePlane>& images, int batch_size, int patch_size, Rng& rng) {
  if (images.empty()) throw ShapeError("sample_patch_batch: no images");
  if (batch_size < 1 || patch_size < 1) throw ShapeError("sample_patch_batch: batch and patch size must be positive");
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i].height() < patch_size || images[i].width() < patch_size) {
      throw ShapeError("sample_patch_batch: image " + std::to_string(i) + " (" +
                       std::to_string(images[i].height()) + "x" + std::to_string(images[i].width()) +
                       ") is smaller than patch size " + std::to_string(patch_size));
    }
  }
  PatchBatch batch;
  batch.patch_size = patch_size;
  for (int b = 0; b < batch_size; ++b) {
    PatchCorner corner;
    corner.image = rng.uniform_int(0, static_cast<int>(images.size()) - 1);
    const auto& img = images[corner.image];
    corner.row = rng.uniform_int(0, img.height() - patch_size);
    corner.col = rng.uniform_int(0, img.width() - patch_size);
    batch.patches.push_back(crop(img, corner.row, corner.col, patch_size, patch_size));
    batch.corners.push_back(corner);
  }
  return batch;
}

}  // namespace dud
