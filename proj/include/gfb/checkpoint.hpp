#pragma once

// Binary checkpoint format (all integers little-endian):
//
//   offset  size  field
//   0       8     magic "GFBCKPT\0"
//   8       4     format version (uint32, currently 1)
//   12      4     header length H in bytes (uint32)
//   16      H     header, UTF-8 JSON object:
//                   model      : model hyperparameters
//                   parameters : parameter count P
//                   optimizer  : {present, step, lr, beta1, beta2, eps}
//                   training   : echo of the training configuration
//                   seed       : RNG seed (uint64)
//   16+H    8     payload length L in 32-bit values (uint64)
//   24+H    4L    IEEE-754 binary32 values: P parameters in layout order,
//                 then P first moments and P second moments when the
//                 optimizer is present (L = 3P), otherwise L = P.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "gfb/nn.hpp"

namespace gfb::nn {

struct CheckpointError : FormatError {
  using FormatError::FormatError;
};
struct VersionError : CheckpointError {
  using CheckpointError::CheckpointError;
};
struct LengthError : CheckpointError {
  using CheckpointError::CheckpointError;
};

inline constexpr std::array<char, 8> kCheckpointMagic = {'G', 'F', 'B', 'C', 'K', 'P', 'T', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline const char* to_string(Backbone b) { return b == Backbone::mlp ? "mlp" : "conv1d"; }
inline const char* to_string(Activation a) { return a == Activation::silu ? "silu" : "relu"; }

inline Backbone backbone_from_string(const std::string& s) {
  if (s == "mlp") return Backbone::mlp;
  if (s == "conv1d") return Backbone::conv1d;
  throw ValidationError("model.backbone: unknown value '" + s + "'");
}
inline Activation activation_from_string(const std::string& s) {
  if (s == "silu") return Activation::silu;
  if (s == "relu") return Activation::relu;
  throw ValidationError("model.activation: unknown value '" + s + "'");
}

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"backbone", to_string(c.backbone)},
                     {"data_dim", c.data_dim},
                     {"hidden", c.hidden},
                     {"depth", c.depth},
                     {"kernel", c.kernel},
                     {"time_freqs", c.time_freqs},
                     {"max_freq", c.max_freq},
                     {"cond_dim", c.cond_dim},
                     {"cond_width", c.cond_width},
                     {"activation", to_string(c.activation)},
                     {"cond_offset", c.cond_offset},
                     {"cond_scale", c.cond_scale}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  ModelConfig d;
  c.backbone = backbone_from_string(j.value("backbone", std::string(to_string(d.backbone))));
  c.data_dim = j.value("data_dim", d.data_dim);
  c.hidden = j.value("hidden", d.hidden);
  c.depth = j.value("depth", d.depth);
  c.kernel = j.value("kernel", d.kernel);
  c.time_freqs = j.value("time_freqs", d.time_freqs);
  c.max_freq = j.value("max_freq", d.max_freq);
  c.cond_dim = j.value("cond_dim", d.cond_dim);
  c.cond_width = j.value("cond_width", d.cond_width);
  c.activation =
      activation_from_string(j.value("activation", std::string(to_string(d.activation))));
  c.cond_offset = j.value("cond_offset", std::vector<double>{});
  c.cond_scale = j.value("cond_scale", std::vector<double>{});
}

template <typename T>
struct Checkpoint {
  VectorFieldModel<T> model;
  std::optional<OptimizerState<T>> optimizer;
  nlohmann::json training = nlohmann::json::object();
  std::uint64_t seed = 0;
};

namespace detail {

template <typename U>
void put_le(std::string& out, U value) {
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    out.push_back(static_cast<char>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xFFu));
  }
}

template <typename U>
U get_le(const std::string& in, std::size_t at) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
  }
  return static_cast<U>(v);
}

template <typename T>
void put_values(std::string& out, std::span<const T> values) {
  for (T v : values) put_le(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
}

}  // namespace detail

template <typename T>
std::string encode_checkpoint(const VectorFieldModel<T>& model,
                              const OptimizerState<T>* optimizer,
                              const nlohmann::json& training, std::uint64_t seed) {
  nlohmann::json header;
  header["model"] = model.config();
  header["parameters"] = model.parameter_count();
  nlohmann::json opt{{"present", optimizer != nullptr}};
  if (optimizer) {
    opt["step"] = optimizer->step;
    opt["lr"] = optimizer->hyper.lr;
    opt["beta1"] = optimizer->hyper.beta1;
    opt["beta2"] = optimizer->hyper.beta2;
    opt["eps"] = optimizer->hyper.eps;
  }
  header["optimizer"] = opt;
  header["training"] = training;
  header["seed"] = seed;
  const std::string text = header.dump();

  std::string out(kCheckpointMagic.begin(), kCheckpointMagic.end());
  detail::put_le(out, kCheckpointVersion);
  detail::put_le(out, static_cast<std::uint32_t>(text.size()));
  out += text;
  const std::size_t n = model.parameter_count();
  detail::put_le(out, static_cast<std::uint64_t>(optimizer ? 3 * n : n));
  detail::put_values<T>(out, model.parameters());
  if (optimizer) {
    detail::put_values<T>(out, optimizer->m);
    detail::put_values<T>(out, optimizer->v);
  }
  return out;
}

template <typename T>
Checkpoint<T> decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < 16 ||
      !std::equal(kCheckpointMagic.begin(), kCheckpointMagic.end(), bytes.begin())) {
    throw CheckpointError("checkpoint: bad magic");
  }
  const auto version = detail::get_le<std::uint32_t>(bytes, 8);
  if (version != kCheckpointVersion) {
    throw VersionError("checkpoint: unsupported format version " + std::to_string(version));
  }
  const auto header_len = detail::get_le<std::uint32_t>(bytes, 12);
  if (bytes.size() < 16 + static_cast<std::size_t>(header_len) + 8) {
    throw LengthError("checkpoint: truncated header");
  }
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(16, header_len));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint: corrupt header: ") + e.what());
  }

  Checkpoint<T> ck;
  try {
    ck.model = VectorFieldModel<T>(header.at("model").get<ModelConfig>());
    ck.training = header.value("training", nlohmann::json::object());
    ck.seed = header.value("seed", std::uint64_t{0});
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint: corrupt header: ") + e.what());
  }
  const std::size_t n = ck.model.parameter_count();
  if (header.value("parameters", std::size_t{0}) != n) {
    throw LengthError("checkpoint: header parameter count disagrees with model layout");
  }
  const auto& opt = header.at("optimizer");
  const bool has_opt = opt.value("present", false);
  const std::size_t at = 16 + header_len;
  const auto count = detail::get_le<std::uint64_t>(bytes, at);
  const std::size_t expected = has_opt ? 3 * n : n;
  if (count != expected) {
    throw LengthError("checkpoint: payload declares " + std::to_string(count) +
                      " values, layout implies " + std::to_string(expected));
  }
  if (bytes.size() != at + 8 + 4 * expected) {
    throw LengthError("checkpoint: payload is " + std::to_string(bytes.size() - at - 8) +
                      " bytes, expected " + std::to_string(4 * expected));
  }
  std::size_t cursor = at + 8;
  auto read_into = [&](std::span<T> dst) {
    for (T& v : dst) {
      v = static_cast<T>(std::bit_cast<float>(detail::get_le<std::uint32_t>(bytes, cursor)));
      cursor += 4;
    }
  };
  read_into(ck.model.parameters());
  if (has_opt) {
    AdamConfig hyper;
    hyper.lr = opt.value("lr", hyper.lr);
    hyper.beta1 = opt.value("beta1", hyper.beta1);
    hyper.beta2 = opt.value("beta2", hyper.beta2);
    hyper.eps = opt.value("eps", hyper.eps);
    OptimizerState<T> state(n, hyper);
    state.step = opt.value("step", std::uint64_t{0});
    read_into(state.m);
    read_into(state.v);
    ck.optimizer = std::move(state);
  }
  for (T v : ck.model.parameters()) {
    if (!std::isfinite(v)) throw CheckpointError("checkpoint: non-finite parameter");
  }
  return ck;
}

template <typename T>
void save_checkpoint(const std::string& path, const VectorFieldModel<T>& model,
                     const OptimizerState<T>* optimizer = nullptr,
                     const nlohmann::json& training = nlohmann::json::object(),
                     std::uint64_t seed = 0) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot open checkpoint for writing: " + path);
  const std::string bytes = encode_checkpoint(model, optimizer, training, seed);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw Error("failed writing checkpoint: " + path);
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open checkpoint: " + path);
  const std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_checkpoint<T>(bytes);
}

}  // namespace gfb::nn
