#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>

#include "dud/training.hpp"

// Checkpoint container:
//   "DUDC" | u32 version | u64 header bytes | JSON header | f32 payload
// The header lists every payload tensor (name, element count) in order. Integers and
// floats are little-endian.

namespace dud {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

using nlohmann::json;

namespace {

constexpr char kMagic[4] = {'D', 'U', 'D', 'C'};

struct PayloadWriter {
  json index = json::array();
  std::vector<char> bytes;

  void add(const std::string& name, const std::vector<float>& values) {
    index.push_back({{"name", name}, {"size", values.size()}});
    const auto* p = reinterpret_cast<const char*>(values.data());
    bytes.insert(bytes.end(), p, p + values.size() * sizeof(float));
  }
};

struct PayloadReader {
  const json& index;
  const char* data;
  std::size_t size;
  std::size_t entry = 0;
  std::size_t offset = 0;

  void read(const std::string& name, std::vector<float>& out) {
    if (entry >= index.size()) throw FormatError("checkpoint: payload index too short at " + name);
    const auto& e = index[entry++];
    if (e.at("name").get<std::string>() != name || e.at("size").get<std::size_t>() != out.size()) {
      throw SpecMismatchError("checkpoint: tensor " + e.at("name").get<std::string>() + " (" +
                              std::to_string(e.at("size").get<std::size_t>()) + ") does not match " + name + " (" +
                              std::to_string(out.size()) + ")");
    }
    const std::size_t n = out.size() * sizeof(float);
    if (offset + n > size) throw FormatError("checkpoint: truncated payload at " + name);
    std::memcpy(out.data(), data + offset, n);
    offset += n;
  }
};

void add_store(PayloadWriter& w, const std::string& prefix, const nn::ParameterStore& store, const nn::OptimizerState& opt) {
  for (const auto& p : store) w.add(prefix + p.name, p.value.data);
  for (std::size_t k = 0; k < store.size(); ++k) w.add(prefix + store[k].name + ".m", opt.first_moment[k]);
  for (std::size_t k = 0; k < store.size(); ++k) w.add(prefix + store[k].name + ".u", opt.inf_norm[k]);
}

void read_store(PayloadReader& r, const std::string& prefix, nn::ParameterStore& store, nn::OptimizerState& opt) {
  for (auto& p : store) r.read(prefix + p.name, p.value.data);
  for (std::size_t k = 0; k < store.size(); ++k) r.read(prefix + store[k].name + ".m", opt.first_moment[k]);
  for (std::size_t k = 0; k < store.size(); ++k) r.read(prefix + store[k].name + ".u", opt.inf_norm[k]);
}

json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

double read_best(const json& j) {
  return j.is_null() ? std::numeric_limits<double>::infinity() : j.get<double>();
}

nn::OptimizerState optimizer_from_json(const json& j, const nn::ParameterStore& store) {
  nn::OptimizerState s = nn::OptimizerState::for_store(store, j.at("lr").get<double>());
  s.step = j.at("step").get<std::int64_t>();
  s.beta1 = j.at("beta1").get<double>();
  s.beta2 = j.at("beta2").get<double>();
  s.eps = j.at("eps").get<double>();
  const auto& sc = j.at("schedule");
  s.schedule = {sc.at("factor").get<double>(), sc.at("patience").get<int>(), sc.at("threshold").get<double>(),
                sc.at("min_lr").get<double>()};
  s.best_val = j.at("best_val").get<double>();
  s.has_best = j.at("has_best").get<bool>();
  s.bad_validations = j.at("bad_validations").get<int>();
  s.seen = j.at("seen").get<std::size_t>();
  return s;
}

}  // namespace

void save_checkpoint(const TrainState& state, const std::filesystem::path& path) {
  PayloadWriter payload;
  add_store(payload, "", state.vae.params(), state.vae_opt);
  json heads = json::array();
  for (std::size_t k = 0; k < state.heads.size(); ++k) {
    const auto& h = state.heads[k];
    add_store(payload, "head" + std::to_string(k) + ".", h.dd.net.params(), h.opt);
    heads.push_back({{"unet", h.dd.net.spec()},
                     {"loss_kind", to_string(h.dd.loss_kind)},
                     {"optimizer", h.opt},
                     {"val_history", h.val_history},
                     {"best_val", finite_or_null(h.best_val)}});
  }
  const json header = {{"format", "dud-checkpoint"},
                       {"vae", state.vae.spec()},
                       {"vae_optimizer", state.vae_opt},
                       {"heads", heads},
                       {"step", state.step},
                       {"rng", state.rng.serialize()},
                       {"normalization", {{"mean", state.normalization.mean}, {"std", state.normalization.std}}},
                       {"noise_sigma", state.noise_sigma},
                       {"vae_val_history", state.vae_val_history},
                       {"best_vae_val", finite_or_null(state.best_vae_val)},
                       {"tensors", payload.index}};
  const std::string text = header.dump();

  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write checkpoint " + tmp.string());
    const std::uint32_t version = kCheckpointVersion;
    const std::uint64_t header_len = text.size();
    os.write(kMagic, 4);
    os.write(reinterpret_cast<const char*>(&version), sizeof(version));
    os.write(reinterpret_cast<const char*>(&header_len), sizeof(header_len));
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    os.write(payload.bytes.data(), static_cast<std::streamsize>(payload.bytes.size()));
    if (!os) throw IoError("checkpoint write failed: " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place: " + ec.message());
}

TrainState load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint " + path.string());
  const std::vector<char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  const std::size_t fixed = 4 + sizeof(std::uint32_t) + sizeof(std::uint64_t);
  if (bytes.size() < fixed || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw FormatError(path.string() + ": not a checkpoint (bad magic)");
  }
  std::uint32_t version = 0;
  std::uint64_t header_len = 0;
  std::memcpy(&version, bytes.data() + 4, sizeof(version));
  std::memcpy(&header_len, bytes.data() + 8, sizeof(header_len));
  if (version != kCheckpointVersion) {
    throw FormatError(path.string() + ": checkpoint version " + std::to_string(version) + ", expected " +
                      std::to_string(kCheckpointVersion));
  }
  if (header_len > bytes.size() - fixed) throw FormatError(path.string() + ": truncated checkpoint header");

  json header;
  try {
    header = json::parse(bytes.begin() + fixed, bytes.begin() + static_cast<std::ptrdiff_t>(fixed + header_len));
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": corrupt checkpoint header: " + e.what());
  }

  TrainState s;
  try {
    s.vae = DenoisingVAE(header.at("vae").get<VaeSpec>(), 0);
    s.vae_opt = optimizer_from_json(header.at("vae_optimizer"), s.vae.params());
    for (const auto& hj : header.at("heads")) {
      DirectHead h;
      h.dd = DirectDenoiser{UNet(hj.at("unet").get<UNetSpec>(), 0), loss_kind_from_string(hj.at("loss_kind").get<std::string>())};
      h.opt = optimizer_from_json(hj.at("optimizer"), h.dd.net.params());
      h.val_history = hj.at("val_history").get<std::vector<double>>();
      h.best_val = read_best(hj.at("best_val"));
      s.heads.push_back(std::move(h));
    }
    s.step = header.at("step").get<std::int64_t>();
    s.rng = Rng::deserialize(header.at("rng").get<std::string>());
    s.normalization = {header.at("normalization").at("mean").get<double>(), header.at("normalization").at("std").get<double>()};
    s.noise_sigma = header.at("noise_sigma").get<double>();
    s.vae_val_history = header.at("vae_val_history").get<std::vector<double>>();
    s.best_vae_val = read_best(header.at("best_vae_val"));

    PayloadReader reader{header.at("tensors"), bytes.data() + fixed + header_len, bytes.size() - fixed - header_len};
    read_store(reader, "", s.vae.params(), s.vae_opt);
    for (std::size_t k = 0; k < s.heads.size(); ++k) {
      read_store(reader, "head" + std::to_string(k) + ".", s.heads[k].dd.net.params(), s.heads[k].opt);
    }
    if (reader.offset != reader.size) throw FormatError(path.string() + ": trailing bytes after checkpoint payload");
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": malformed checkpoint header: " + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(path.string() + ": invalid architecture in checkpoint: " + e.what());
  }
  return s;
}

void check_compatible(const TrainState& state, const RunConfig& cfg) {
  if (!(state.vae.spec() == cfg.vae)) {
    throw SpecMismatchError("checkpoint VAE spec " + json(state.vae.spec()).dump() + " does not match config " + json(cfg.vae).dump());
  }
  if (state.heads.size() != cfg.loss_kinds.size()) {
    throw SpecMismatchError("checkpoint has " + std::to_string(state.heads.size()) + " direct heads, config expects " +
                            std::to_string(cfg.loss_kinds.size()));
  }
  for (std::size_t k = 0; k < state.heads.size(); ++k) {
    const auto& h = state.heads[k];
    if (!(h.dd.net.spec() == cfg.unet)) {
      throw SpecMismatchError("checkpoint UNet spec " + json(h.dd.net.spec()).dump() + " does not match config " + json(cfg.unet).dump());
    }
    if (h.dd.loss_kind != cfg.loss_kinds[k]) {
      throw SpecMismatchError("checkpoint head " + std::to_string(k) + " is " + to_string(h.dd.loss_kind) + ", config expects " +
                              to_string(cfg.loss_kinds[k]));
    }
  }
}

}  // namespace dud
