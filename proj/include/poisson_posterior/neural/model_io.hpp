#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "../io.hpp"
#include "network.hpp"

namespace poisson_posterior::neural {

// File layout:
//   8 bytes   magic "PPDMODEL"
//   u32 LE    format version
//   u32 LE    header length H
//   H bytes   JSON header: arch, target_domain, normalization, floor, parameter_count
//   8*N bytes weights as little-endian IEEE-754 float64
inline constexpr char kModelMagic[8] = {'P', 'P', 'D', 'M', 'O', 'D', 'E', 'L'};
inline constexpr std::uint32_t kModelFormatVersion = 1;

inline nlohmann::json arch_to_json(const ArchSpec& a) {
  nlohmann::json j;
  if (a.kind == ArchSpec::Kind::mlp) {
    j["kind"] = "mlp";
    j["widths"] = a.widths;
  } else {
    j["kind"] = "conv1d";
    j["layers"] = a.conv_layers;
    j["kernel"] = a.kernel;
    j["channels"] = a.channels;
  }
  j["activation"] = std::string(to_string(a.activation));
  return j;
}

inline ArchSpec arch_from_json(const nlohmann::json& j) {
  const auto kind = j.at("kind").get<std::string>();
  const auto act = parse_activation(j.at("activation").get<std::string>());
  if (kind == "mlp") return ArchSpec::mlp(j.at("widths").get<std::vector<std::size_t>>(), act);
  if (kind == "conv1d")
    return ArchSpec::conv1d(j.at("channels").get<std::size_t>(), act, j.at("layers").get<std::size_t>(),
                            j.at("kernel").get<std::size_t>());
  throw std::invalid_argument("unknown architecture kind '" + kind + "'");
}

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

inline void put_f64(std::string& out, double d) {
  const auto v = std::bit_cast<std::uint64_t>(d);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

inline std::uint64_t get_le(const std::string& in, std::size_t pos, int bytes) {
  if (pos + static_cast<std::size_t>(bytes) > in.size()) throw std::runtime_error("model file truncated");
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i)
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + static_cast<std::size_t>(i)])) << (8 * i);
  return v;
}

}  // namespace detail

inline std::string serialize_model(const DenoiserModel& m) {
  m.validate();
  nlohmann::json header;
  header["arch"] = arch_to_json(m.arch);
  header["target_domain"] = std::string(to_string(m.target));
  header["normalization"] = {{"input_shift", m.norm.input_shift},
                             {"input_scale", m.norm.input_scale},
                             {"output_shift", m.norm.output_shift},
                             {"output_scale", m.norm.output_scale}};
  header["floor"] = m.floor;
  header["parameter_count"] = m.weights.size();
  const std::string h = header.dump();

  std::string out(kModelMagic, sizeof(kModelMagic));
  detail::put_u32(out, kModelFormatVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(h.size()));
  out += h;
  for (double w : m.weights) detail::put_f64(out, w);
  return out;
}

inline DenoiserModel deserialize_model(const std::string& bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kModelMagic, sizeof(kModelMagic)) != 0)
    throw std::runtime_error("not a model file (bad magic)");
  const auto version = static_cast<std::uint32_t>(detail::get_le(bytes, 8, 4));
  if (version != kModelFormatVersion)
    throw std::runtime_error("unsupported model format version " + std::to_string(version));
  const auto hlen = static_cast<std::size_t>(detail::get_le(bytes, 12, 4));
  if (16 + hlen > bytes.size()) throw std::runtime_error("model file truncated");
  const auto header = nlohmann::json::parse(bytes.substr(16, hlen));

  DenoiserModel m;
  m.arch = arch_from_json(header.at("arch"));
  m.target = parse_target_domain(header.at("target_domain").get<std::string>());
  const auto& n = header.at("normalization");
  m.norm = {n.at("input_shift").get<double>(), n.at("input_scale").get<double>(), n.at("output_shift").get<double>(),
            n.at("output_scale").get<double>()};
  m.floor = header.at("floor").get<double>();
  const auto count = header.at("parameter_count").get<std::size_t>();
  const std::size_t base = 16 + hlen;
  if (bytes.size() != base + 8 * count) throw std::runtime_error("model file size does not match parameter_count");
  m.weights.resize(count);
  for (std::size_t i = 0; i < count; ++i)
    m.weights[i] = std::bit_cast<double>(detail::get_le(bytes, base + 8 * i, 8));
  m.validate();
  return m;
}

inline void save_model(const DenoiserModel& m, const std::filesystem::path& path) {
  write_file_atomic(path, serialize_model(m));
}

inline DenoiserModel load_model(const std::filesystem::path& path) { return deserialize_model(read_file(path)); }

}  // namespace poisson_posterior::neural
