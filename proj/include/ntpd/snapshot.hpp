// Copyright 2026 The ntpd-cascade Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Binary snapshots of states and density matrices. Byte layout (all integers
// and doubles little-endian):
//
//   0   char[8]  magic "NTPDSNAP"
//   8   u32      format version (1)
//   12  u32      kind: 0 state vector, 1 density matrix (row-major)
//   16  u32      number of modes M
//   20  u32[M]   per-mode dimensions, mode 0 first
//   ..  u64      number of complex entries
//   ..  f64[2N]  interleaved (re, im)

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <variant>

#include "ntpd/fock.hpp"

namespace ntpd {

namespace io {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <class T>
T byteswap_if_big(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    std::reverse(b, b + sizeof(T));
    std::memcpy(&v, b, sizeof(T));
  }
  return v;
}

template <class T>
void put(std::ostream& os, T v) {
  v = byteswap_if_big(v);
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw IoError("unexpected end of binary stream");
  return byteswap_if_big(v);
}

inline void put_complex(std::ostream& os, Complex z) {
  put<double>(os, z.real());
  put<double>(os, z.imag());
}
inline Complex get_complex(std::istream& is) {
  const double re = get<double>(is);
  const double im = get<double>(is);
  return {re, im};
}

}  // namespace io

inline constexpr char kSnapshotMagic[8] = {'N', 'T', 'P', 'D', 'S', 'N', 'A', 'P'};
inline constexpr std::uint32_t kSnapshotVersion = 1;

enum class SnapshotKind : std::uint32_t { state_vector = 0, density_matrix = 1 };

namespace detail {

inline void write_snapshot_header(std::ostream& os, const ModeLayout& layout, SnapshotKind kind, std::uint64_t count) {
  os.write(kSnapshotMagic, 8);
  io::put<std::uint32_t>(os, kSnapshotVersion);
  io::put<std::uint32_t>(os, static_cast<std::uint32_t>(kind));
  io::put<std::uint32_t>(os, static_cast<std::uint32_t>(layout.num_modes()));
  for (int d : layout.dims()) io::put<std::uint32_t>(os, static_cast<std::uint32_t>(d));
  io::put<std::uint64_t>(os, count);
}

}  // namespace detail

inline void write_snapshot(std::ostream& os, const StateVector& psi) {
  detail::write_snapshot_header(os, psi.layout, SnapshotKind::state_vector, static_cast<std::uint64_t>(psi.amplitudes.size()));
  for (Eigen::Index i = 0; i < psi.amplitudes.size(); ++i) io::put_complex(os, psi.amplitudes[i]);
}

inline void write_snapshot(std::ostream& os, const DensityOperator& rho) {
  const Matrix& m = rho.matrix();
  detail::write_snapshot_header(os, rho.layout(), SnapshotKind::density_matrix, static_cast<std::uint64_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) io::put_complex(os, m(r, c));
}

using Snapshot = std::variant<StateVector, DensityOperator>;

inline Snapshot read_snapshot(std::istream& is) {
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kSnapshotMagic, 8) != 0) throw IoError("not a state snapshot (bad magic)");
  const auto version = io::get<std::uint32_t>(is);
  if (version != kSnapshotVersion) throw IoError("unsupported snapshot version " + std::to_string(version));
  const auto kind = io::get<std::uint32_t>(is);
  const auto modes = io::get<std::uint32_t>(is);
  if (modes == 0 || modes > 64) throw IoError("snapshot: implausible mode count");
  std::vector<int> dims(modes);
  for (auto& d : dims) d = static_cast<int>(io::get<std::uint32_t>(is));
  const ModeLayout layout(dims);
  const auto count = io::get<std::uint64_t>(is);
  const auto n = static_cast<Eigen::Index>(layout.total_dim());
  if (kind == static_cast<std::uint32_t>(SnapshotKind::state_vector)) {
    if (count != static_cast<std::uint64_t>(n)) throw IoError("snapshot: entry count does not match dims");
    Vector a(n);
    for (Eigen::Index i = 0; i < n; ++i) a[i] = io::get_complex(is);
    return StateVector(layout, std::move(a));
  }
  if (kind == static_cast<std::uint32_t>(SnapshotKind::density_matrix)) {
    if (count != static_cast<std::uint64_t>(n) * static_cast<std::uint64_t>(n)) throw IoError("snapshot: entry count does not match dims");
    Matrix m(n, n);
    for (Eigen::Index r = 0; r < n; ++r)
      for (Eigen::Index c = 0; c < n; ++c) m(r, c) = io::get_complex(is);
    return DensityOperator::unchecked(layout, std::move(m));
  }
  throw IoError("snapshot: unknown kind " + std::to_string(kind));
}

template <class T>
void save_snapshot(const std::string& path, const T& value) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + path + " for writing");
  write_snapshot(os, value);
  if (!os) throw IoError("write failed for " + path);
}

inline Snapshot load_snapshot(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);
  return read_snapshot(is);
}

}  // namespace ntpd
