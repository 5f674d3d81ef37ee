// SPDX-License-Identifier: Apache-2.0
//
// File formats: metrics CSV, binary checkpoints, attention-map CSV/PGM.

#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "lwt/autodiff.hpp"
#include "lwt/layers.hpp"
#include "lwt/toytrain.hpp"

namespace lwt {

struct IoError : Error {
  using Error::Error;
};

/// Shortest round-trip decimal representation.
inline std::string format_double(double v) {
  std::array<char, 32> buf{};
  auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), end);
}

inline std::ofstream open_out(const std::filesystem::path& path, bool binary = false) {
  std::ofstream out(path, binary ? std::ios::binary : std::ios::out);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  return out;
}

inline std::string metrics_csv(const std::vector<TrainRecord>& history) {
  std::string s = "step,loss,token_accuracy\n";
  for (const auto& r : history) {
    s += std::to_string(r.step) + ',' + format_double(r.loss) + ',' + format_double(r.token_accuracy) + '\n';
  }
  return s;
}

inline void write_metrics_csv(const std::filesystem::path& path, const std::vector<TrainRecord>& history) {
  auto out = open_out(path);
  out << metrics_csv(history);
  if (!out) throw IoError("failed writing " + path.string());
}

// ---------------------------------------------------------------------------
// Checkpoints: "LWTCKPT1", then per parameter
//   u32 name length, name bytes, u32 rank, u32 dims[rank], f64 values
// all little-endian. Shared storages appear once.

inline constexpr std::string_view kCheckpointMagic = "LWTCKPT1";

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

inline void put_f64(std::string& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xffu));
}

class Reader {
 public:
  explicit Reader(std::string_view data) : data_(data) {}
  bool done() const { return pos_ == data_.size(); }

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  double f64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return std::bit_cast<double>(v);
  }
  std::string_view bytes(std::size_t n) {
    need(n);
    auto s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) throw IoError("checkpoint truncated");
  }
  std::string_view data_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string encode_checkpoint(const std::vector<Param>& params) {
  std::string out(kCheckpointMagic);
  for (const Param& p : params) {
    detail::put_u32(out, static_cast<std::uint32_t>(p->name.size()));
    out += p->name;
    detail::put_u32(out, static_cast<std::uint32_t>(p->value.rank()));
    for (auto dim : p->value.shape()) detail::put_u32(out, static_cast<std::uint32_t>(dim));
    for (double v : p->value.data()) detail::put_f64(out, v);
  }
  return out;
}

/// Loads values into the model's existing storages. Names and shapes must
/// match the model exactly.
inline void decode_checkpoint(std::string_view bytes, const std::vector<Param>& params) {
  if (bytes.substr(0, kCheckpointMagic.size()) != kCheckpointMagic) throw IoError("not a checkpoint (bad magic)");
  detail::Reader in(bytes.substr(kCheckpointMagic.size()));
  std::map<std::string, Tensor, std::less<>> entries;
  while (!in.done()) {
    std::string name(in.bytes(in.u32()));
    Shape shape(in.u32());
    for (auto& dim : shape) dim = in.u32();
    Tensor t(shape);
    for (auto& v : t.data()) v = in.f64();
    if (!entries.emplace(name, std::move(t)).second) throw IoError("duplicate parameter " + name + " in checkpoint");
  }
  if (entries.size() != params.size()) {
    throw ConfigError("checkpoint has " + std::to_string(entries.size()) + " parameters, model expects " +
                      std::to_string(params.size()));
  }
  for (const Param& p : params) {
    auto it = entries.find(p->name);
    if (it == entries.end()) throw ConfigError("checkpoint is missing parameter " + p->name);
    if (it->second.shape() != p->value.shape()) {
      throw ConfigError("checkpoint parameter " + p->name + " has shape " + shape_str(it->second.shape()) +
                        ", model expects " + shape_str(p->value.shape()));
    }
  }
  for (const Param& p : params) p->value = entries.find(p->name)->second;
}

inline void save_checkpoint(const std::filesystem::path& path, const Model& model) {
  auto out = open_out(path, true);
  const std::string bytes = encode_checkpoint(model.parameters());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

inline void load_checkpoint(const std::filesystem::path& path, const Model& model) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  decode_checkpoint(bytes, model.parameters());
}

// ---------------------------------------------------------------------------
// Attention maps

inline std::string attention_map_name(const AttentionMap& m) {
  return "layer" + std::to_string(m.layer) + "_" + m.kind + "_g" + std::to_string(m.group) + "_h" +
         std::to_string(m.head);
}

inline std::string attention_csv(const Tensor& probs) {
  std::string s;
  for (std::size_t i = 0; i < probs.rows(); ++i) {
    for (std::size_t j = 0; j < probs.cols(); ++j) {
      if (j) s += ',';
      s += format_double(probs(i, j));
    }
    s += '\n';
  }
  return s;
}

/// Binary 8-bit PGM, pixel = round(255 p).
inline std::string attention_pgm(const Tensor& probs) {
  std::string s = "P5\n" + std::to_string(probs.cols()) + " " + std::to_string(probs.rows()) + "\n255\n";
  for (double p : probs.data()) {
    const double v = std::round(255.0 * std::clamp(p, 0.0, 1.0));
    s.push_back(static_cast<char>(static_cast<unsigned char>(v)));
  }
  return s;
}

/// Writes one CSV and one PGM per map; returns the number of maps written.
inline std::size_t write_attention_maps(const std::filesystem::path& dir, const std::vector<AttentionMap>& maps) {
  for (const auto& m : maps) {
    const std::string base = attention_map_name(m);
    {
      auto out = open_out(dir / (base + ".csv"));
      out << attention_csv(m.probs);
      if (!out) throw IoError("failed writing " + base + ".csv");
    }
    {
      auto out = open_out(dir / (base + ".pgm"), true);
      const std::string pgm = attention_pgm(m.probs);
      out.write(pgm.data(), static_cast<std::streamsize>(pgm.size()));
      if (!out) throw IoError("failed writing " + base + ".pgm");
    }
  }
  return maps.size();
}

}  // namespace lwt
