#pragma once

// Nonlinear paired autoencoders: four dense networks (e_x, d_x, e_y, d_y)
// and two affine latent maps (m_fwd: Z_x -> Z_y, m_bwd: Z_y -> Z_x).
// Networks act in normalized coordinates; the end_to_end and
// surrogate_forward roles convert from/to physical units at the boundary.

#include <array>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "pairlab/dataset.hpp"
#include "pairlab/error.hpp"
#include "pairlab/linalg.hpp"
#include "pairlab/random.hpp"
#include "pairlab/tape.hpp"

namespace pairlab {

/// Dense network: widths input -> hidden... -> output. The activation follows
/// every layer except the last, which is affine.
struct MlpSpec {
  std::vector<int> widths;
  Activation activation = Activation::tanh;

  int input() const { return widths.front(); }
  int output() const { return widths.back(); }
  int layers() const { return static_cast<int>(widths.size()) - 1; }
  bool operator==(const MlpSpec&) const = default;
};

struct PairSpec {
  MlpSpec ex, dx, ey, dy;
};

/// Default desk-scale architecture: e_x n->128->64->lx, e_y q->256->128->ly,
/// decoders mirrored.
inline PairSpec desk_pair_spec(int n, int q, int lx = 64, int ly = 64,
                               std::vector<int> hidden_x = {128, 64},
                               std::vector<int> hidden_y = {256, 128},
                               Activation act = Activation::tanh) {
  auto chain = [act](int in, const std::vector<int>& hidden, int out, bool reverse) {
    MlpSpec s;
    s.activation = act;
    s.widths.push_back(in);
    if (reverse) s.widths.insert(s.widths.end(), hidden.rbegin(), hidden.rend());
    else s.widths.insert(s.widths.end(), hidden.begin(), hidden.end());
    s.widths.push_back(out);
    return s;
  };
  return {chain(n, hidden_x, lx, false), chain(lx, hidden_x, n, true),
          chain(q, hidden_y, ly, false), chain(ly, hidden_y, q, true)};
}

enum class Net { encode_x = 0, decode_x = 1, encode_y = 2, decode_y = 3, map_fwd = 4, map_bwd = 5 };

enum class Role { encode_x, decode_x, encode_y, decode_y, map_fwd, map_bwd, end_to_end, surrogate_forward };

/// Weights of the four loss terms: x autoencoder, y autoencoder,
/// inverse surrogate d_x(m_bwd(e_y(y))) vs x, forward surrogate d_y(m_fwd(e_x(x))) vs y.
using LossWeights = std::array<double, 4>;

class PairModel {
 public:
  PairModel() = default;

  const PairSpec& spec() const { return spec_; }
  int x_dim() const { return spec_.ex.input(); }
  int y_dim() const { return spec_.ey.input(); }
  int x_latent() const { return spec_.ex.output(); }
  int y_latent() const { return spec_.ey.output(); }

  const Normalization& normalization() const { return norm_; }
  void set_normalization(const Normalization& n) { norm_ = n; }

  ParameterSet& parameters() { return params_; }
  const ParameterSet& parameters() const { return params_; }
  const std::vector<std::string>& parameter_names() const { return names_; }

  /// Builds the model with Glorot-uniform weights and zero offsets.
  static PairModel init(const PairSpec& spec, std::uint64_t seed) {
    PairModel m;
    m.spec_ = spec;
    m.validate();
    m.allocate();
    for (std::size_t t = 0; t < m.params_.size(); ++t) {
      Matrix& w = m.params_.tensors[t];
      if (m.is_bias_[t]) continue;
      Stream rng(seed, t);
      const double limit = std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
      for (Index j = 0; j < w.cols(); ++j)
        for (Index i = 0; i < w.rows(); ++i) w(i, j) = rng.uniform(-limit, limit);
    }
    return m;
  }

  /// Same shapes with every parameter zero (test hook).
  static PairModel zeros(const PairSpec& spec) {
    PairModel m;
    m.spec_ = spec;
    m.validate();
    m.allocate();
    return m;
  }

  // -- evaluation in normalized coordinates ---------------------------------

  Matrix forward(Net net, const Matrix& in) const {
    const auto& layers = slots_[static_cast<std::size_t>(net)];
    const Activation act = activation_of(net);
    Matrix h = in;
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const Matrix& w = params_.tensors[static_cast<std::size_t>(layers[l].first)];
      const Matrix& b = params_.tensors[static_cast<std::size_t>(layers[l].second)];
      if (h.rows() != w.cols()) throw ArgumentError("pair model: input length does not match network");
      Matrix next = w * h;
      next.colwise() += b.col(0);
      if (l + 1 < layers.size()) next = detail::activate(next, act);
      h = std::move(next);
    }
    return h;
  }

  Vector encode_x(const Vector& x) const { return forward(Net::encode_x, x); }
  Vector decode_x(const Vector& z) const { return forward(Net::decode_x, z); }
  Vector encode_y(const Vector& y) const { return forward(Net::encode_y, y); }
  Vector decode_y(const Vector& z) const { return forward(Net::decode_y, z); }
  Vector map_fwd(const Vector& z) const { return forward(Net::map_fwd, z); }
  Vector map_bwd(const Vector& z) const { return forward(Net::map_bwd, z); }

  /// Records `net` applied to node `in` on the tape and returns the output node.
  GradientTape::NodeId record(GradientTape& tape, Net net, GradientTape::NodeId in) const {
    const auto& layers = slots_[static_cast<std::size_t>(net)];
    const Activation act = activation_of(net);
    auto h = in;
    for (std::size_t l = 0; l < layers.size(); ++l) {
      h = tape.affine(h, layers[l].first, layers[l].second);
      if (l + 1 < layers.size() && act != Activation::identity) h = tape.activation(h, act);
    }
    return h;
  }

  /// Transposed Jacobian of `net` at `in` applied to `cotangent`.
  Vector vjp(Net net, const Vector& in, const Vector& cotangent) const {
    GradientTape tape(&params_);
    const auto x = tape.input(in);
    const auto y = record(tape, net, x);
    tape.backward(y, cotangent);
    return tape.input_gradient(x);
  }

  Vector decode_x_vjp(const Vector& z, const Vector& c) const { return vjp(Net::decode_x, z, c); }
  Vector decode_y_vjp(const Vector& z, const Vector& c) const { return vjp(Net::decode_y, z, c); }
  Vector map_fwd_vjp(const Vector& z, const Vector& c) const { return vjp(Net::map_fwd, z, c); }

  /// Role dispatch; end_to_end takes and returns physical units.
  Vector apply(Role role, const Vector& v) const {
    switch (role) {
      case Role::encode_x: return check_len(v, x_dim()), encode_x(v);
      case Role::decode_x: return check_len(v, x_latent()), decode_x(v);
      case Role::encode_y: return check_len(v, y_dim()), encode_y(v);
      case Role::decode_y: return check_len(v, y_latent()), decode_y(v);
      case Role::map_fwd: return check_len(v, x_latent()), map_fwd(v);
      case Role::map_bwd: return check_len(v, y_latent()), map_bwd(v);
      case Role::end_to_end:
        check_len(v, y_dim());
        return norm_.denormalize_x(decode_x(map_bwd(encode_y(norm_.normalize_y(v)))));
      case Role::surrogate_forward:
        check_len(v, x_dim());
        return norm_.denormalize_y(decode_y(map_fwd(encode_x(norm_.normalize_x(v)))));
    }
    throw ArgumentError("pair model: unknown role");
  }

  // -- serialization --------------------------------------------------------

  static constexpr int kFormatVersion = 1;

  nlohmann::json to_json() const;
  static PairModel from_json(const nlohmann::json& j);

 private:
  static void check_len(const Vector& v, int expected) {
    if (v.size() != expected) {
      std::ostringstream msg;
      msg << "pair model: input length " << v.size() << " but role expects " << expected;
      throw ArgumentError(msg.str());
    }
  }

  Activation activation_of(Net net) const {
    switch (net) {
      case Net::encode_x: return spec_.ex.activation;
      case Net::decode_x: return spec_.dx.activation;
      case Net::encode_y: return spec_.ey.activation;
      case Net::decode_y: return spec_.dy.activation;
      default: return Activation::identity;
    }
  }

  void validate() const {
    auto ok = [](const MlpSpec& s) {
      if (s.widths.size() < 2) return false;
      for (int w : s.widths)
        if (w < 1) return false;
      return true;
    };
    if (!ok(spec_.ex) || !ok(spec_.dx) || !ok(spec_.ey) || !ok(spec_.dy)) {
      throw ArgumentError("pair model: every network needs >= 1 layer with positive widths");
    }
    if (spec_.ex.input() != spec_.dx.output() || spec_.ex.output() != spec_.dx.input() ||
        spec_.ey.input() != spec_.dy.output() || spec_.ey.output() != spec_.dy.input()) {
      throw ArgumentError("pair model: encoder/decoder shapes are inconsistent");
    }
  }

  void allocate() {
    params_.tensors.clear();
    names_.clear();
    is_bias_.clear();
    auto add = [&](const std::string& name, Index rows, Index cols, bool bias) {
      params_.tensors.push_back(Matrix::Zero(rows, cols));
      names_.push_back(name);
      is_bias_.push_back(bias);
      return static_cast<int>(params_.tensors.size() - 1);
    };
    const std::array<std::pair<const char*, const MlpSpec*>, 4> nets = {
        {{"e_x", &spec_.ex}, {"d_x", &spec_.dx}, {"e_y", &spec_.ey}, {"d_y", &spec_.dy}}};
    for (std::size_t k = 0; k < 4; ++k) {
      slots_[k].clear();
      const MlpSpec& s = *nets[k].second;
      for (int l = 0; l < s.layers(); ++l) {
        const std::string base = std::string(nets[k].first) + "." + std::to_string(l);
        const int w = add(base + ".weight", s.widths[static_cast<std::size_t>(l + 1)], s.widths[static_cast<std::size_t>(l)], false);
        const int b = add(base + ".offset", s.widths[static_cast<std::size_t>(l + 1)], 1, true);
        slots_[k].emplace_back(w, b);
      }
    }
    const int lx = x_latent(), ly = y_latent();
    slots_[4] = {{add("m_fwd.weight", ly, lx, false), add("m_fwd.offset", ly, 1, true)}};
    slots_[5] = {{add("m_bwd.weight", lx, ly, false), add("m_bwd.offset", lx, 1, true)}};
  }

  PairSpec spec_;
  Normalization norm_;
  ParameterSet params_;
  std::vector<std::string> names_;
  std::vector<bool> is_bias_;
  std::array<std::vector<std::pair<int, int>>, 6> slots_;
};

// ---------------------------------------------------------------------------
// Loss

struct LossTerms {
  double x_autoencoder = 0.0;
  double y_autoencoder = 0.0;
  double inverse = 0.0;
  double forward = 0.0;
  double total = 0.0;
};

namespace detail {

struct LossGraph {
  GradientTape::NodeId total;
  std::array<GradientTape::NodeId, 4> terms;
};

inline LossGraph record_pair_loss(const PairModel& m, GradientTape& tape, const Matrix& xn,
                                  const Matrix& yn, const LossWeights& w) {
  if (xn.rows() != m.x_dim() || yn.rows() != m.y_dim() || xn.cols() != yn.cols() || xn.cols() == 0) {
    throw ArgumentError("pair_loss: batch shapes do not match the model");
  }
  const auto x = tape.input(xn);
  const auto y = tape.input(yn);
  const auto zx = m.record(tape, Net::encode_x, x);
  const auto zy = m.record(tape, Net::encode_y, y);
  const auto ax = m.record(tape, Net::decode_x, zx);
  const auto ay = m.record(tape, Net::decode_y, zy);
  const auto inv = m.record(tape, Net::decode_x, m.record(tape, Net::map_bwd, zy));
  const auto fwd = m.record(tape, Net::decode_y, m.record(tape, Net::map_fwd, zx));
  LossGraph g;
  g.terms = {tape.squared_norm(tape.sub(ax, x)), tape.squared_norm(tape.sub(ay, y)),
             tape.squared_norm(tape.sub(inv, x)), tape.squared_norm(tape.sub(fwd, y))};
  auto total = tape.scale(g.terms[0], w[0]);
  for (std::size_t k = 1; k < 4; ++k) total = tape.add(total, tape.scale(g.terms[k], w[k]));
  g.total = total;
  return g;
}

}  // namespace detail

/// Weighted sum over the batch (normalized coordinates, one sample per column) of
/// ||a_x(x)-x||^2 + ||a_y(y)-y||^2 + ||d_x(m_bwd(e_y(y)))-x||^2 + ||d_y(m_fwd(e_x(x)))-y||^2.
inline LossTerms pair_loss_terms(const PairModel& m, const Matrix& xn, const Matrix& yn,
                                 const LossWeights& w = {1, 1, 1, 1}) {
  GradientTape tape(&m.parameters());
  const auto g = detail::record_pair_loss(m, tape, xn, yn, w);
  return {tape.scalar(g.terms[0]), tape.scalar(g.terms[1]), tape.scalar(g.terms[2]),
          tape.scalar(g.terms[3]), tape.scalar(g.total)};
}

inline double pair_loss(const PairModel& m, const Matrix& xn, const Matrix& yn,
                        const LossWeights& w = {1, 1, 1, 1}) {
  return pair_loss_terms(m, xn, yn, w).total;
}

struct LossAndGradient {
  double loss = 0.0;
  ParameterSet gradient;
};

inline LossAndGradient pair_loss_grad(const PairModel& m, const Matrix& xn, const Matrix& yn,
                                      const LossWeights& w = {1, 1, 1, 1}) {
  GradientTape tape(&m.parameters());
  const auto g = detail::record_pair_loss(m, tape, xn, yn, w);
  tape.backward(g.total);
  return {tape.scalar(g.total), tape.parameter_gradient()};
}

// ---------------------------------------------------------------------------
// Serialization: float64 values are C99 hexadecimal literals ("%a"), which
// round-trip bitwise.

namespace detail {

inline std::string hexfloat(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%a", v);
  return buf;
}

inline double parse_hexfloat(const std::string& s) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0') throw ParseError("pair model: bad float literal '" + s + "'");
  return v;
}

inline nlohmann::json mlp_to_json(const MlpSpec& s) {
  return {{"widths", s.widths}, {"activation", to_string(s.activation)}};
}

inline MlpSpec mlp_from_json(const nlohmann::json& j) {
  MlpSpec s;
  s.widths = j.at("widths").get<std::vector<int>>();
  s.activation = parse_activation(j.at("activation").get<std::string>());
  return s;
}

}  // namespace detail

inline nlohmann::json PairModel::to_json() const {
  nlohmann::json params = nlohmann::json::array();
  for (std::size_t t = 0; t < params_.size(); ++t) {
    const Matrix& m = params_.tensors[t];
    std::vector<std::string> data;
    data.reserve(static_cast<std::size_t>(m.size()));
    for (Index i = 0; i < m.rows(); ++i)
      for (Index j = 0; j < m.cols(); ++j) data.push_back(detail::hexfloat(m(i, j)));
    params.push_back({{"name", names_[t]}, {"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(data)}});
  }
  return {{"format", "pairlab-pair-model"},
          {"format_version", kFormatVersion},
          {"float_encoding", "C99 hexadecimal floating literal (printf %a), lossless float64"},
          {"specs",
           {{"e_x", detail::mlp_to_json(spec_.ex)},
            {"d_x", detail::mlp_to_json(spec_.dx)},
            {"e_y", detail::mlp_to_json(spec_.ey)},
            {"d_y", detail::mlp_to_json(spec_.dy)}}},
          {"normalization",
           {{"x_mean", detail::hexfloat(norm_.x_mean)},
            {"x_std", detail::hexfloat(norm_.x_std)},
            {"y_mean", detail::hexfloat(norm_.y_mean)},
            {"y_std", detail::hexfloat(norm_.y_std)}}},
          {"parameters", std::move(params)}};
}

inline PairModel PairModel::from_json(const nlohmann::json& j) {
  try {
    if (!j.is_object() || j.value("format", "") != "pairlab-pair-model") {
      throw ParseError("pair model: missing or wrong 'format' tag");
    }
    const int version = j.at("format_version").get<int>();
    if (version != kFormatVersion) {
      throw UnsupportedVersion("pair model: unsupported format_version " + std::to_string(version) +
                               " (this build reads " + std::to_string(kFormatVersion) + ")");
    }
    PairSpec spec;
    const auto& s = j.at("specs");
    spec.ex = detail::mlp_from_json(s.at("e_x"));
    spec.dx = detail::mlp_from_json(s.at("d_x"));
    spec.ey = detail::mlp_from_json(s.at("e_y"));
    spec.dy = detail::mlp_from_json(s.at("d_y"));
    PairModel m = zeros(spec);
    const auto& n = j.at("normalization");
    m.norm_.x_mean = detail::parse_hexfloat(n.at("x_mean").get<std::string>());
    m.norm_.x_std = detail::parse_hexfloat(n.at("x_std").get<std::string>());
    m.norm_.y_mean = detail::parse_hexfloat(n.at("y_mean").get<std::string>());
    m.norm_.y_std = detail::parse_hexfloat(n.at("y_std").get<std::string>());
    const auto& params = j.at("parameters");
    if (!params.is_array() || params.size() != m.params_.size()) {
      throw ParseError("pair model: parameter list does not match the declared specs");
    }
    for (std::size_t t = 0; t < m.params_.size(); ++t) {
      const auto& p = params[t];
      Matrix& dst = m.params_.tensors[t];
      if (p.at("name").get<std::string>() != m.names_[t] || p.at("rows").get<Index>() != dst.rows() ||
          p.at("cols").get<Index>() != dst.cols()) {
        throw ParseError("pair model: parameter " + std::to_string(t) + " ('" + m.names_[t] +
                         "') has unexpected name or shape");
      }
      const auto& data = p.at("data");
      if (!data.is_array() || static_cast<Index>(data.size()) != dst.size()) {
        throw ParseError("pair model: parameter '" + m.names_[t] + "' has wrong length");
      }
      std::size_t k = 0;
      for (Index i = 0; i < dst.rows(); ++i)
        for (Index c = 0; c < dst.cols(); ++c) dst(i, c) = detail::parse_hexfloat(data[k++].get<std::string>());
    }
    if (!m.params_.all_finite()) throw ParseError("pair model: non-finite parameter");
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("pair model: ") + e.what());
  }
}

inline void save_model(const PairModel& m, const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  os << m.to_json().dump(1) << '\n';
  if (!os) throw IoError("write failed for '" + path + "'");
}

inline PairModel load_model(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open model '" + path + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path + ": " + e.what());
  }
  return PairModel::from_json(j);
}

}  // namespace pairlab
