#pragma once

// Paired sample sets and their binary container.
//
// Container layout:
//   8 bytes   magic "PAIRDS1\n"
//   1 line    UTF-8 JSON header terminated by '\n':
//             {count, n, q, shapes, normalization, provenance}
//   count*n   little-endian float64, X sample-major
//   count*q   little-endian float64, Y sample-major

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "pairlab/error.hpp"
#include "pairlab/linalg.hpp"

namespace pairlab {

/// Global scalar shift/scale per space; x_norm = (x - x_mean) / x_std.
struct Normalization {
  double x_mean = 0.0;
  double x_std = 1.0;
  double y_mean = 0.0;
  double y_std = 1.0;

  Vector normalize_x(const Vector& x) const { return (x.array() - x_mean) / x_std; }
  Vector normalize_y(const Vector& y) const { return (y.array() - y_mean) / y_std; }
  Vector denormalize_x(const Vector& x) const { return x.array() * x_std + x_mean; }
  Vector denormalize_y(const Vector& y) const { return y.array() * y_std + y_mean; }
  Matrix normalize_x(const Matrix& x) const { return (x.array() - x_mean) / x_std; }
  Matrix normalize_y(const Matrix& y) const { return (y.array() - y_mean) / y_std; }

  bool operator==(const Normalization&) const = default;
};

struct Provenance {
  std::uint64_t seed = 0;
  double noise_fraction = 0.0;
  std::string generator;
  bool operator==(const Provenance&) const = default;
};

/// Paired samples, one per column: X is n x count, Y is q x count.
struct Dataset {
  Matrix X;
  Matrix Y;
  std::vector<Index> x_shape;  // e.g. {side, side}
  std::vector<Index> y_shape;  // e.g. {detectors, angles}
  Normalization normalization;
  Provenance provenance;

  Index count() const { return X.cols(); }
  Index n() const { return X.rows(); }
  Index q() const { return Y.rows(); }
};

/// Global mean/std of all entries. A zero spread is replaced by 1.
inline Normalization compute_normalization(const Matrix& x, const Matrix& y) {
  auto stats = [](const Matrix& m, double& mean, double& stdev) {
    if (m.size() == 0) throw ArgumentError("compute_normalization: empty sample set");
    mean = m.mean();
    const double var = (m.array() - mean).square().mean();
    stdev = var > 0.0 ? std::sqrt(var) : 1.0;
  };
  Normalization n;
  stats(x, n.x_mean, n.x_std);
  stats(y, n.y_mean, n.y_std);
  return n;
}

inline void to_json(nlohmann::json& j, const Normalization& n) {
  j = {{"x_mean", n.x_mean}, {"x_std", n.x_std}, {"y_mean", n.y_mean}, {"y_std", n.y_std}};
}
inline void from_json(const nlohmann::json& j, Normalization& n) {
  n.x_mean = j.at("x_mean").get<double>();
  n.x_std = j.at("x_std").get<double>();
  n.y_mean = j.at("y_mean").get<double>();
  n.y_std = j.at("y_std").get<double>();
  if (!(n.x_std > 0.0) || !(n.y_std > 0.0)) throw ParseError("normalization: standard deviations must be positive");
}

inline constexpr char kDatasetMagic[8] = {'P', 'A', 'I', 'R', 'D', 'S', '1', '\n'};

namespace detail {

inline void write_f64_le(std::ostream& os, const double* data, std::size_t count) {
  if constexpr (std::endian::native == std::endian::little) {
    os.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(count * sizeof(double)));
  } else {
    for (std::size_t i = 0; i < count; ++i) {
      auto bits = std::bit_cast<std::uint64_t>(data[i]);
      unsigned char buf[8];
      for (int b = 0; b < 8; ++b) buf[b] = static_cast<unsigned char>(bits >> (8 * b));
      os.write(reinterpret_cast<const char*>(buf), 8);
    }
  }
}

inline bool read_f64_le(std::istream& is, double* data, std::size_t count) {
  is.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(count * sizeof(double)));
  if (static_cast<std::size_t>(is.gcount()) != count * sizeof(double)) return false;
  if constexpr (std::endian::native != std::endian::little) {
    for (std::size_t i = 0; i < count; ++i) {
      unsigned char buf[8];
      std::memcpy(buf, &data[i], 8);
      std::uint64_t bits = 0;
      for (int b = 0; b < 8; ++b) bits |= std::uint64_t{buf[b]} << (8 * b);
      data[i] = std::bit_cast<double>(bits);
    }
  }
  return true;
}

}  // namespace detail

inline nlohmann::json dataset_header(const Dataset& ds) {
  return {{"count", ds.count()},
          {"n", ds.n()},
          {"q", ds.q()},
          {"shapes", {{"x", ds.x_shape}, {"y", ds.y_shape}}},
          {"normalization", ds.normalization},
          {"provenance",
           {{"seed", ds.provenance.seed},
            {"noise_fraction", ds.provenance.noise_fraction},
            {"generator", ds.provenance.generator}}}};
}

inline void write_dataset(const std::string& path, const Dataset& ds) {
  if (ds.X.cols() != ds.Y.cols()) throw ArgumentError("write_dataset: X and Y sample counts differ");
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  os.write(kDatasetMagic, sizeof kDatasetMagic);
  const std::string header = dataset_header(ds).dump();
  os << header << '\n';
  detail::write_f64_le(os, ds.X.data(), static_cast<std::size_t>(ds.X.size()));
  detail::write_f64_le(os, ds.Y.data(), static_cast<std::size_t>(ds.Y.size()));
  if (!os) throw IoError("write failed for '" + path + "'");
}

inline Dataset read_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open dataset '" + path + "'");
  char magic[8] = {};
  is.read(magic, sizeof magic);
  if (is.gcount() != 8 || std::memcmp(magic, kDatasetMagic, 8) != 0) {
    throw ParseError(path + ": not a dataset container (bad magic at byte 0)");
  }
  std::string line;
  if (!std::getline(is, line)) throw ParseError(path + ": missing header line at byte 8");
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path + ": header: " + e.what());
  }
  Dataset ds;
  try {
    const auto count = h.at("count").get<Index>();
    const auto n = h.at("n").get<Index>();
    const auto q = h.at("q").get<Index>();
    if (count < 0 || n < 0 || q < 0) throw ParseError(path + ": negative dimension in header");
    ds.x_shape = h.at("shapes").at("x").get<std::vector<Index>>();
    ds.y_shape = h.at("shapes").at("y").get<std::vector<Index>>();
    ds.normalization = h.at("normalization").get<Normalization>();
    const auto& p = h.at("provenance");
    ds.provenance.seed = p.at("seed").get<std::uint64_t>();
    ds.provenance.noise_fraction = p.at("noise_fraction").get<double>();
    ds.provenance.generator = p.at("generator").get<std::string>();
    ds.X.resize(n, count);
    ds.Y.resize(q, count);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": header: " + e.what());
  }
  const std::size_t offset = 8 + line.size() + 1;
  if (!detail::read_f64_le(is, ds.X.data(), static_cast<std::size_t>(ds.X.size()))) {
    throw ParseError(path + ": truncated X block (starts at byte " + std::to_string(offset) + ")");
  }
  if (!detail::read_f64_le(is, ds.Y.data(), static_cast<std::size_t>(ds.Y.size()))) {
    throw ParseError(path + ": truncated Y block");
  }
  if (is.peek() != std::char_traits<char>::eof()) throw ParseError(path + ": trailing bytes after Y block");
  return ds;
}

}  // namespace pairlab
