#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "transnet/numkit/adam.hpp"
#include "transnet/numkit/tensor.hpp"

namespace transnet::numkit {

// Binary layout: "TNCK", u32 version, then per tensor
//   u32 name length, name bytes, u32 rank, u64 extents..., f64 payload.
// All integers and floats little-endian. Records run to end of file.
inline constexpr std::array<char, 4> kCheckpointMagic{'T', 'N', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <class T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& is, const std::string& path) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw FormatError("truncated checkpoint: " + path);
  return v;
}

}  // namespace detail

inline void write_checkpoint(const std::filesystem::path& path, const NamedTensors& tensors) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IngestError("cannot open checkpoint for writing: " + path.string());
  os.write(kCheckpointMagic.data(), kCheckpointMagic.size());
  detail::put<std::uint32_t>(os, kCheckpointVersion);
  for (const auto& [name, t] : tensors) {
    detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
    for (auto e : t.shape()) detail::put<std::uint64_t>(os, e);
    os.write(reinterpret_cast<const char*>(t.values().data()),
             static_cast<std::streamsize>(t.size() * sizeof(double)));
  }
  if (!os) throw IngestError("failed writing checkpoint: " + path.string());
}

inline NamedTensors read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IngestError("cannot open checkpoint: " + path.string());
  std::array<char, 4> magic{};
  if (!is.read(magic.data(), magic.size()) || magic != kCheckpointMagic) {
    throw FormatError("not a checkpoint (bad magic): " + path.string());
  }
  const auto version = detail::get<std::uint32_t>(is, path.string());
  if (version != kCheckpointVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version));
  NamedTensors out;
  while (is.peek() != std::char_traits<char>::eof()) {
    const auto len = detail::get<std::uint32_t>(is, path.string());
    std::string name(len, '\0');
    if (!is.read(name.data(), len)) throw FormatError("truncated checkpoint: " + path.string());
    const auto rank = detail::get<std::uint32_t>(is, path.string());
    Shape shape(rank);
    for (auto& e : shape) e = static_cast<std::size_t>(detail::get<std::uint64_t>(is, path.string()));
    std::vector<double> values(numel(shape));
    if (!is.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(double)))) {
      throw FormatError("truncated checkpoint payload for '" + name + "'");
    }
    out.emplace_back(std::move(name), Tensor(std::move(shape), std::move(values)));
  }
  return out;
}

// Appends Adam moments as "<name>-m" / "<name>-v" plus the step counter.
inline void append_adam_state(NamedTensors& out, const NamedTensors& params, const AdamState& state) {
  for (std::size_t k = 0; k < params.size(); ++k) {
    const auto& [name, p] = params[k];
    const bool fresh = state.m.empty();
    out.emplace_back(name + "-m", Tensor(p.shape(), fresh ? std::vector<double>(p.size(), 0.0) : state.m[k]));
    out.emplace_back(name + "-v", Tensor(p.shape(), fresh ? std::vector<double>(p.size(), 0.0) : state.v[k]));
  }
  out.emplace_back("adam-step", Tensor::scalar(static_cast<double>(state.step)));
}

inline const Tensor* find_tensor(const NamedTensors& tensors, const std::string& name) {
  for (const auto& [n, t] : tensors)
    if (n == name) return &t;
  return nullptr;
}

// Restores Adam moments written by append_adam_state.
inline AdamState restore_adam_state(const NamedTensors& saved, const NamedTensors& params, double lr) {
  AdamState state(lr);
  const Tensor* step = find_tensor(saved, "adam-step");
  if (step == nullptr) throw FormatError("checkpoint has no optimizer state");
  state.step = static_cast<std::uint64_t>(step->item());
  for (const auto& [name, p] : params) {
    const Tensor* m = find_tensor(saved, name + "-m");
    const Tensor* v = find_tensor(saved, name + "-v");
    if (m == nullptr || v == nullptr || m->shape() != p.shape() || v->shape() != p.shape()) {
      throw FormatError("optimizer state missing or mis-shaped for '" + name + "'");
    }
    state.m.push_back(m->values());
    state.v.push_back(v->values());
  }
  return state;
}

}  // namespace transnet::numkit
