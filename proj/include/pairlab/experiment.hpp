#pragma once

// Desk-scale experiment recipes behind the command-line tool: configuration,
// dataset generation, training, inversion, sweeps, OOD scatter data and
// certificates. Every command is a pure function of (config, input files).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "json.hpp"
#include "pairlab/dataset.hpp"
#include "pairlab/diagnostics.hpp"
#include "pairlab/error.hpp"
#include "pairlab/forward_models.hpp"
#include "pairlab/linear_pair.hpp"
#include "pairlab/lsi.hpp"
#include "pairlab/pair_model.hpp"
#include "pairlab/train.hpp"

namespace pairlab {

// ---------------------------------------------------------------------------
// Configuration

struct GeometryConfig {
  int grid_side = 32;
  int angles = 60;
  int detectors = 47;
  double detector_spacing = 1.0;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(GeometryConfig, grid_side, angles, detectors, detector_spacing)

struct DataConfig {
  int train = 2000;
  int test = 100;
  int ood = 100;
  double noise_fraction = 0.1;
  bool ood_enabled = true;
  std::uint64_t train_seed = 101;
  std::uint64_t test_seed = 102;
  std::uint64_t ood_seed = 103;
  std::uint64_t noise_seed = 104;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(DataConfig, train, test, ood, noise_fraction, ood_enabled,
                                                train_seed, test_seed, ood_seed, noise_seed)

struct MaskConfig {
  std::string kind = "identity";
  double fraction = 0.0;
  std::uint64_t seed = 0;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(MaskConfig, kind, fraction, seed)

/// Named masks; "*_alt" use a different seed (a different fixed pattern).
struct MasksConfig {
  MaskConfig rand{"random-columns", 0.25, 201};
  MaskConfig rect{"block-columns", 0.25, 202};
  MaskConfig rand_alt{"random-columns", 0.25, 203};
  MaskConfig rect_alt{"block-columns", 0.25, 204};
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(MasksConfig, rand, rect, rand_alt, rect_alt)

struct ModelConfig {
  int latent_x = 64;
  int latent_y = 64;
  std::vector<int> hidden_x{128, 64};
  std::vector<int> hidden_y{256, 128};
  std::string activation = "tanh";
  std::uint64_t init_seed = 301;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ModelConfig, latent_x, latent_y, hidden_x, hidden_y, activation, init_seed)

struct TrainSection {
  int epochs = 40;
  int batch_size = 32;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t shuffle_seed = 302;
  std::array<double, 4> loss_weights{1.0, 1.0, 1.0, 1.0};
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(TrainSection, epochs, batch_size, learning_rate, beta1, beta2, epsilon,
                                                shuffle_seed, loss_weights)

struct LsiSection {
  int zy_iterations = 10;
  int zx_iterations = 10;
  int mlsi_iterations = 100;
  int mlsi_ensemble = 1;
  double mlsi_perturbation = 0.1;
  std::uint64_t mlsi_seed = 401;
  double latent_penalty = 0.0;
  int memory = 10;
  double c1 = 1e-4;
  double c2 = 0.9;
  double gradient_tolerance = 1e-8;
  int max_line_search = 25;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(LsiSection, zy_iterations, zx_iterations, mlsi_iterations, mlsi_ensemble,
                                                mlsi_perturbation, mlsi_seed, latent_penalty, memory, c1, c2,
                                                gradient_tolerance, max_line_search)

struct InvertSection {
  std::string method = "pair";
  std::string mask = "full";
  std::string split = "test";
  std::vector<double> tikhonov_lambdas{0.1, 1.0, 10.0};
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(InvertSection, method, mask, split, tikhonov_lambdas)

struct SweepSection {
  std::vector<double> fractions{0.0, 0.3, 0.6, 0.9};
  std::string kind = "random-entries";
  std::uint64_t seed = 501;
  int zy_iterations = 25;
  int samples = 100;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(SweepSection, fractions, kind, seed, zy_iterations, samples)

struct OodSection {
  std::string mask = "rect";
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(OodSection, mask)

/// Linear-Gaussian problem for the spectral certificate: a small tomography
/// operator, a Gaussian prior with squared-exponential covariance and white noise.
struct LinearProblemConfig {
  int grid_side = 8;
  int angles = 12;
  int detectors = 11;
  int latent_x = 32;
  int latent_y = 48;
  double prior_mean = 0.3;
  double prior_std = 0.2;
  double correlation_length = 2.0;
  double nugget = 1e-3;
  double noise_std = 0.1;
  int calibration = 200;
  int test = 50;
  MaskConfig mask{"random-columns", 0.25, 601};
  std::uint64_t seed = 602;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(LinearProblemConfig, grid_side, angles, detectors, latent_x, latent_y,
                                                prior_mean, prior_std, correlation_length, nugget, noise_std, calibration,
                                                test, mask, seed)

struct CertifySection {
  std::string mode = "model";  // model | linear
  std::string mask = "rand";
  int calibration_count = 200;
  int test_count = 100;
  int pair_count = 200;
  double perturbation = 0.01;
  std::uint64_t seed = 701;
  LinearProblemConfig linear{};
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(CertifySection, mode, mask, calibration_count, test_count, pair_count,
                                                perturbation, seed, linear)

struct ExperimentConfig {
  GeometryConfig geometry{};
  DataConfig data{};
  MasksConfig masks{};
  ModelConfig model{};
  TrainSection train{};
  LsiSection lsi{};
  InvertSection invert{};
  SweepSection sweep{};
  OodSection ood{};
  CertifySection certify{};
  std::string output_dir = "runs/default";
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ExperimentConfig, geometry, data, masks, model, train, lsi, invert, sweep,
                                                ood, certify, output_dir)

namespace detail {

inline nlohmann::json parse_override_value(const std::string& text) {
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error&) {
    return text;  // bare strings need no quotes
  }
}

}  // namespace detail

/// Applies "a.b.c=value" overrides. Keys must already exist in the config.
inline void apply_overrides(nlohmann::json& j, const std::vector<std::string>& overrides) {
  for (const auto& item : overrides) {
    const auto eq = item.find('=');
    if (eq == std::string::npos || eq == 0) throw ArgumentError("override '" + item + "' is not key=value");
    std::string key = item.substr(0, eq);
    std::string pointer;
    std::stringstream ss(key);
    for (std::string part; std::getline(ss, part, '.');) pointer += "/" + part;
    const nlohmann::json::json_pointer ptr(pointer);
    if (!j.contains(ptr)) throw ArgumentError("unknown config key '" + key + "'");
    j[ptr] = detail::parse_override_value(item.substr(eq + 1));
  }
}

/// Defaults, then the file (merge patch), then overrides.
inline ExperimentConfig load_config(const std::optional<std::string>& path,
                                    const std::vector<std::string>& overrides = {}) {
  nlohmann::json j = ExperimentConfig{};
  if (path) {
    std::ifstream is(*path);
    if (!is) throw IoError("cannot open config '" + *path + "'");
    try {
      j.merge_patch(nlohmann::json::parse(is));
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(*path + ": " + e.what());
    }
  }
  apply_overrides(j, overrides);
  try {
    return j.get<ExperimentConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw ArgumentError(std::string("invalid config: ") + e.what());
  }
}

/// FNV-1a of the canonical dump, excluding the output directory.
inline std::string config_hash(const ExperimentConfig& cfg) {
  nlohmann::json j = cfg;
  j.erase("output_dir");
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : j.dump()) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// ---------------------------------------------------------------------------
// Shared helpers

inline ForwardOperator build_operator(const GeometryConfig& g) {
  return build_radon(g.grid_side, g.angles, g.detectors, g.detector_spacing);
}

inline ObservationShape observation_shape(const GeometryConfig& g) {
  return {Index{g.detectors}, Index{g.angles}};
}

inline MaskOperator build_mask(const MaskConfig& m, ObservationShape shape) {
  return make_mask(parse_mask_kind(m.kind), shape, m.fraction, m.seed);
}

/// Named mask: full | rand | rect | rand_alt | rect_alt.
inline MaskOperator named_mask(const ExperimentConfig& cfg, const std::string& name) {
  const auto shape = observation_shape(cfg.geometry);
  if (name == "full") return identity_mask(shape);
  if (name == "rand") return build_mask(cfg.masks.rand, shape);
  if (name == "rect") return build_mask(cfg.masks.rect, shape);
  if (name == "rand_alt") return build_mask(cfg.masks.rand_alt, shape);
  if (name == "rect_alt") return build_mask(cfg.masks.rect_alt, shape);
  throw ArgumentError("unknown mask '" + name + "' (full, rand, rect, rand_alt, rect_alt)");
}

inline LbfgsConfig lbfgs_config(const LsiSection& s, int iterations) {
  LbfgsConfig c;
  c.memory = s.memory;
  c.max_iterations = iterations;
  c.c1 = s.c1;
  c.c2 = s.c2;
  c.gradient_tolerance = s.gradient_tolerance;
  c.max_line_search = s.max_line_search;
  return c;
}

inline LsiConfig lsi_config(const LsiSection& s, int iterations) {
  return {lbfgs_config(s, iterations), s.latent_penalty};
}

inline TrainConfig train_config(const TrainSection& s) {
  TrainConfig t;
  t.epochs = s.epochs;
  t.batch_size = s.batch_size;
  t.learning_rate = s.learning_rate;
  t.beta1 = s.beta1;
  t.beta2 = s.beta2;
  t.epsilon = s.epsilon;
  t.seed = s.shuffle_seed;
  t.loss_weights = s.loss_weights;
  return t;
}

inline PairSpec model_spec(const ExperimentConfig& cfg) {
  const int n = cfg.geometry.grid_side * cfg.geometry.grid_side;
  const int q = cfg.geometry.angles * cfg.geometry.detectors;
  return desk_pair_spec(n, q, cfg.model.latent_x, cfg.model.latent_y, cfg.model.hidden_x, cfg.model.hidden_y,
                        parse_activation(cfg.model.activation));
}

struct RunPaths {
  std::filesystem::path dir;
  std::filesystem::path train() const { return dir / "train.pairds"; }
  std::filesystem::path test() const { return dir / "test.pairds"; }
  std::filesystem::path ood() const { return dir / "ood.pairds"; }
  std::filesystem::path model() const { return dir / "model.json"; }
  std::filesystem::path split(const std::string& name) const {
    if (name == "train") return train();
    if (name == "test") return test();
    if (name == "ood") return ood();
    throw ArgumentError("unknown split '" + name + "' (train, test, ood)");
  }
};

inline RunPaths run_paths(const ExperimentConfig& cfg) { return {cfg.output_dir}; }

inline std::string format_number(double v) {
  if (std::isnan(v)) return "";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// CSV with a '#' provenance line and a header row.
inline void write_csv(const std::filesystem::path& path, const std::string& command, const ExperimentConfig& cfg,
                      const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
  os << "# pairlab " << command << " config_hash=" << config_hash(cfg) << " data_seeds=" << cfg.data.train_seed << ","
     << cfg.data.test_seed << "," << cfg.data.ood_seed << "," << cfg.data.noise_seed
     << " init_seed=" << cfg.model.init_seed << " shuffle_seed=" << cfg.train.shuffle_seed
     << " mlsi_seed=" << cfg.lsi.mlsi_seed << "\n";
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) os << (i ? "," : "") << cells[i];
    os << "\n";
  };
  line(header);
  for (const auto& r : rows) line(r);
  if (!os) throw IoError("write failed for '" + path.string() + "'");
}

inline Dataset load_split(const ExperimentConfig& cfg, const std::string& split) {
  const auto path = run_paths(cfg).split(split);
  if (!std::filesystem::exists(path)) throw IoError("missing dataset '" + path.string() + "' (run gen first)");
  return read_dataset(path.string());
}

inline PairModel load_run_model(const ExperimentConfig& cfg) {
  const auto path = run_paths(cfg).model();
  if (!std::filesystem::exists(path)) throw IoError("missing model '" + path.string() + "' (run train first)");
  return load_model(path.string());
}

// ---------------------------------------------------------------------------
// gen

struct GenResult {
  Dataset train, test;
  std::optional<Dataset> ood;
};

inline GenResult generate_data(const ExperimentConfig& cfg) {
  const auto& g = cfg.geometry;
  const auto& d = cfg.data;
  if (d.train < 1 || d.test < 1 || (d.ood_enabled && d.ood < 1)) throw ArgumentError("gen: sample counts must be >= 1");
  const ForwardOperator op = build_operator(g);
  const std::vector<Index> x_shape{g.grid_side, g.grid_side};
  const std::vector<Index> y_shape{g.detectors, g.angles};
  auto make = [&](int count, std::uint64_t seed, std::uint64_t noise_seed, const PhantomSpec& spec, const char* gen) {
    Dataset ds;
    ds.X = generate_phantoms(g.grid_side, count, seed, spec);
    ds.Y = simulate_observations(op, ds.X, d.noise_fraction, noise_seed);
    ds.x_shape = x_shape;
    ds.y_shape = y_shape;
    ds.provenance = {seed, d.noise_fraction, gen};
    return ds;
  };
  GenResult r;
  r.train = make(d.train, d.train_seed, mix64(d.noise_seed ^ 1), PhantomSpec{}, "ellipse-phantoms");
  r.test = make(d.test, d.test_seed, mix64(d.noise_seed ^ 2), PhantomSpec{}, "ellipse-phantoms");
  const Normalization norm = compute_normalization(r.train.X, r.train.Y);
  r.train.normalization = r.test.normalization = norm;
  if (d.ood_enabled) {
    r.ood = make(d.ood, d.ood_seed, mix64(d.noise_seed ^ 3), PhantomSpec::shifted(), "ellipse-phantoms-shifted");
    r.ood->normalization = norm;
  }
  return r;
}

inline GenResult cmd_gen(const ExperimentConfig& cfg) {
  GenResult r = generate_data(cfg);
  const RunPaths p = run_paths(cfg);
  std::filesystem::create_directories(p.dir);
  write_dataset(p.train().string(), r.train);
  write_dataset(p.test().string(), r.test);
  if (r.ood) {
    write_dataset(p.ood().string(), *r.ood);
  } else {
    std::filesystem::remove(p.ood());
  }
  return r;
}

// ---------------------------------------------------------------------------
// train

inline TrainResult cmd_train(const ExperimentConfig& cfg) {
  const Dataset train_set = load_split(cfg, "train");
  PairModel model = PairModel::init(model_spec(cfg), cfg.model.init_seed);
  TrainResult r = train(std::move(model), train_set, train_config(cfg.train));
  const RunPaths p = run_paths(cfg);
  save_model(r.model, p.model().string());
  std::vector<std::vector<std::string>> rows;
  for (std::size_t e = 0; e < r.trace.size(); ++e) rows.push_back({std::to_string(e), format_number(r.trace[e])});
  write_csv(p.dir / "train_trace.csv", "train", cfg, {"epoch", "loss"}, rows);
  return r;
}

// ---------------------------------------------------------------------------
// invert

/// One reconstruction with the latent/data quantities the metrics need.
struct Reconstruction {
  Vector x;              // physical
  Vector z_y;            // observation latent used by the OOD metric
  Vector y_hat;          // data reconstruction, physical
  double lambda = NAN;   // tikhonov only
  std::optional<LsiResult> lsi;
};

struct InversionRecord {
  MetricsRecord metrics;
  Vector x;
  double lambda = NAN;
  double lsi_initial = NAN;
  double lsi_final = NAN;
};

/// Methods: pair, lsi-zy, lsi-zx, mlsi, tikhonov.
class Inverter {
 public:
  Inverter(const ExperimentConfig& cfg, const PairModel& model, const ForwardOperator& op, Vector mean_x)
      : cfg_(cfg), model_(model), op_(op), mean_x_(std::move(mean_x)) {}

  std::vector<Reconstruction> run(const std::string& method, const MaskOperator& mask, const Vector& y_sub,
                                  int zy_iterations = -1) {
    const Normalization& norm = model_.normalization();
    std::vector<Reconstruction> out;
    if (method == "pair") {
      Reconstruction r;
      r.z_y = model_.encode_y(norm.normalize_y(y_sub));
      r.x = norm.denormalize_x(model_.decode_x(model_.map_bwd(r.z_y)));
      r.y_hat = norm.denormalize_y(model_.decode_y(r.z_y));
      out.push_back(std::move(r));
    } else if (method == "lsi-zy") {
      const int its = zy_iterations >= 0 ? zy_iterations : cfg_.lsi.zy_iterations;
      LsiResult res = lsi_observation_space(model_, mask, y_sub, lsi_config(cfg_.lsi, its));
      Reconstruction r;
      r.z_y = res.z;
      r.x = res.x;
      r.y_hat = norm.denormalize_y(model_.decode_y(res.z));
      r.lsi = std::move(res);
      out.push_back(std::move(r));
    } else if (method == "lsi-zx") {
      LsiResult res = lsi_parameter_space(model_, mask, y_sub, lsi_config(cfg_.lsi, cfg_.lsi.zx_iterations));
      Reconstruction r;
      r.z_y = model_.map_fwd(res.z);
      r.x = res.x;
      r.y_hat = norm.denormalize_y(model_.decode_y(r.z_y));
      r.lsi = std::move(res);
      out.push_back(std::move(r));
    } else if (method == "mlsi") {
      ModelSpaceOptions opts{cfg_.lsi.mlsi_ensemble, cfg_.lsi.mlsi_seed, cfg_.lsi.mlsi_perturbation};
      auto runs = model_space_lsi(model_, op_.matrix, mask, y_sub, mean_x_,
                                  lsi_config(cfg_.lsi, cfg_.lsi.mlsi_iterations), opts);
      // Ensemble reconstruction: the member with the smallest data residual.
      std::size_t best = 0;
      for (std::size_t k = 1; k < runs.size(); ++k)
        if (runs[k].final_residual < runs[best].final_residual) best = k;
      Reconstruction r;
      r.x = runs[best].x;
      r.z_y = model_.encode_y(norm.normalize_y(y_sub));
      r.y_hat = op_.apply(r.x);
      r.lsi = std::move(runs[best]);
      out.push_back(std::move(r));
    } else if (method == "tikhonov") {
      const Matrix a_obs = mask.apply_rows(op_.matrix);
      for (double lambda : cfg_.invert.tikhonov_lambdas) {
        const auto key = std::make_pair(mask.zeroed(), lambda);
        auto it = tikhonov_.find(key);
        if (it == tikhonov_.end()) it = tikhonov_.emplace(key, TikhonovSolver(a_obs, lambda)).first;
        Reconstruction r;
        r.x = it->second.solve(y_sub);
        r.z_y = model_.encode_y(norm.normalize_y(y_sub));
        r.y_hat = op_.apply(r.x);
        r.lambda = lambda;
        out.push_back(std::move(r));
      }
    } else {
      throw ArgumentError("unknown method '" + method + "' (pair, lsi-zy, lsi-zx, mlsi, tikhonov)");
    }
    return out;
  }

 private:
  const ExperimentConfig& cfg_;
  const PairModel& model_;
  const ForwardOperator& op_;
  Vector mean_x_;
  std::map<std::pair<std::vector<Index>, double>, TikhonovSolver> tikhonov_;
};

/// Pixel-wise mean of the training parameters (the M-LSI starting model).
inline Vector training_mean(const ExperimentConfig& cfg) {
  return load_split(cfg, "train").X.rowwise().mean();
}

inline std::vector<InversionRecord> invert_dataset(const ExperimentConfig& cfg, const PairModel& model,
                                                   const ForwardOperator& op, const Vector& mean_x,
                                                   const Dataset& data, const std::string& method,
                                                   const std::string& mask_name) {
  const MaskOperator mask = named_mask(cfg, mask_name);
  Inverter inv(cfg, model, op, mean_x);
  std::vector<InversionRecord> out;
  const double missing = mask.size() > 0 ? static_cast<double>(mask.zeroed().size()) / static_cast<double>(mask.size()) : 0.0;
  for (Index i = 0; i < data.count(); ++i) {
    const Vector x = data.X.col(i), y = data.Y.col(i);
    const Vector y_sub = mask.apply(y);
    for (auto& r : inv.run(method, mask, y_sub)) {
      InversionRecord rec;
      rec.metrics.sample_id = i;
      rec.metrics.method = std::isnan(r.lambda) ? method : method + ":" + format_number(r.lambda);
      rec.metrics.mask_kind = mask_name;
      rec.metrics.missing_fraction = missing;
      rec.metrics.rre = rre(r.x, x);
      rec.metrics.ssim = ssim_image(r.x, x, cfg.geometry.grid_side);
      const auto ood = ood_metrics(model, r.x, r.z_y, y);
      rec.metrics.residual_estimate = ood.residual_estimate;
      rec.metrics.autoencode_diff = ood.autoencode_diff;
      rec.lambda = r.lambda;
      if (r.lsi) {
        rec.lsi_initial = r.lsi->initial_residual;
        rec.lsi_final = r.lsi->final_residual;
      }
      rec.x = std::move(r.x);
      out.push_back(std::move(rec));
    }
  }
  std::stable_sort(out.begin(), out.end(), [](const InversionRecord& a, const InversionRecord& b) {
    return std::tie(a.metrics.sample_id, a.metrics.method) < std::tie(b.metrics.sample_id, b.metrics.method);
  });
  return out;
}

inline const std::vector<std::string>& metrics_header() {
  static const std::vector<std::string> h{"sample_id", "method", "mask_kind", "missing_fraction", "rre", "ssim",
                                          "residual_estimate", "autoencode_diff", "bound_predicted", "bound_actual",
                                          "bound_ok"};
  return h;
}

inline std::vector<std::string> metrics_cells(const MetricsRecord& m) {
  return {std::to_string(m.sample_id), m.method, m.mask_kind, format_number(m.missing_fraction), format_number(m.rre),
          format_number(m.ssim), format_number(m.residual_estimate), format_number(m.autoencode_diff), "", "", ""};
}

inline double mean_rre(const std::vector<InversionRecord>& recs) {
  double s = 0.0;
  for (const auto& r : recs) s += r.metrics.rre;
  return recs.empty() ? NAN : s / static_cast<double>(recs.size());
}

inline std::vector<InversionRecord> cmd_invert(const ExperimentConfig& cfg) {
  const auto& iv = cfg.invert;
  const PairModel model = load_run_model(cfg);
  const Dataset data = load_split(cfg, iv.split);
  const ForwardOperator op = build_operator(cfg.geometry);
  const Vector mean_x = iv.method == "mlsi" ? training_mean(cfg) : Vector::Zero(data.n());
  auto recs = invert_dataset(cfg, model, op, mean_x, data, iv.method, iv.mask);

  const RunPaths p = run_paths(cfg);
  const std::string tag = iv.method + "_" + iv.mask;
  Dataset recon;
  recon.X.resize(data.n(), static_cast<Index>(recs.size()));
  recon.Y.resize(data.q(), static_cast<Index>(recs.size()));
  const MaskOperator mask = named_mask(cfg, iv.mask);
  for (std::size_t k = 0; k < recs.size(); ++k) {
    recon.X.col(static_cast<Index>(k)) = recs[k].x;
    recon.Y.col(static_cast<Index>(k)) = mask.apply(Vector(data.Y.col(recs[k].metrics.sample_id)));
  }
  recon.x_shape = data.x_shape;
  recon.y_shape = data.y_shape;
  recon.normalization = data.normalization;
  recon.provenance = {data.provenance.seed, data.provenance.noise_fraction, "reconstruction:" + tag};
  write_dataset((p.dir / ("recon_" + tag + ".pairds")).string(), recon);

  std::vector<std::vector<std::string>> rows;
  for (const auto& r : recs) rows.push_back(metrics_cells(r.metrics));
  write_csv(p.dir / ("metrics_" + tag + ".csv"), "invert", cfg, metrics_header(), rows);
  return recs;
}

// ---------------------------------------------------------------------------
// sweep

struct SweepRow {
  double fraction = 0.0;
  std::string method;
  double data_error_mean = NAN, data_error_std = NAN;
  double rre_mean = NAN, rre_std = NAN;
  Index count = 0;
};

namespace detail {

inline std::pair<double, double> mean_std(const std::vector<double>& v) {
  if (v.empty()) return {NAN, NAN};
  double m = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return {m, std::sqrt(s / static_cast<double>(v.size()))};
}

}  // namespace detail

struct SweepResult {
  std::vector<SweepRow> rows;
  std::vector<InversionRecord> lsi_runs;  // residual bookkeeping of every LSI run
};

/// Data error ||y_hat - y_full|| / ||y_full|| and model RRE per missing fraction,
/// for pair, lsi-zy and mlsi, plus the masked-vs-full data baseline.
inline SweepResult run_sweep(const ExperimentConfig& cfg, const PairModel& model, const ForwardOperator& op,
                             const Vector& mean_x, const Dataset& data) {
  const auto& sw = cfg.sweep;
  const Index count = std::min<Index>(data.count(), sw.samples);
  const auto kind = parse_mask_kind(sw.kind);
  Inverter inv(cfg, model, op, mean_x);
  SweepResult out;
  for (double f : sw.fractions) {
    const MaskOperator mask = make_mask(kind, observation_shape(cfg.geometry), f, sw.seed);
    std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> acc;
    for (Index i = 0; i < count; ++i) {
      const Vector x = data.X.col(i), y = data.Y.col(i);
      const Vector y_sub = mask.apply(y);
      const double yn = y.norm();
      acc["baseline"].first.push_back((y_sub - y).norm() / yn);
      for (const char* m : {"pair", "lsi-zy", "mlsi"}) {
        auto recs = inv.run(m, mask, y_sub, sw.zy_iterations);
        auto& r = recs.front();
        acc[m].first.push_back((r.y_hat - y).norm() / yn);
        acc[m].second.push_back(rre(r.x, x));
        if (r.lsi) {
          InversionRecord rec;
          rec.metrics.sample_id = i;
          rec.metrics.method = m;
          rec.metrics.missing_fraction = f;
          rec.lsi_initial = r.lsi->initial_residual;
          rec.lsi_final = r.lsi->final_residual;
          out.lsi_runs.push_back(std::move(rec));
        }
      }
    }
    for (const char* m : {"baseline", "lsi-zy", "mlsi", "pair"}) {
      SweepRow row;
      row.fraction = f;
      row.method = m;
      std::tie(row.data_error_mean, row.data_error_std) = detail::mean_std(acc[m].first);
      std::tie(row.rre_mean, row.rre_std) = detail::mean_std(acc[m].second);
      row.count = count;
      out.rows.push_back(row);
    }
  }
  return out;
}

inline SweepResult cmd_sweep(const ExperimentConfig& cfg) {
  const PairModel model = load_run_model(cfg);
  const Dataset data = load_split(cfg, "test");
  const ForwardOperator op = build_operator(cfg.geometry);
  SweepResult res = run_sweep(cfg, model, op, training_mean(cfg), data);
  std::vector<std::vector<std::string>> rows;
  for (const auto& r : res.rows) {
    rows.push_back({format_number(r.fraction), r.method, format_number(r.data_error_mean), format_number(r.data_error_std),
                    format_number(r.rre_mean), format_number(r.rre_std), std::to_string(r.count)});
  }
  write_csv(run_paths(cfg).dir / "sweep.csv", "sweep", cfg,
            {"missing_fraction", "method", "data_error_mean", "data_error_std", "rre_mean", "rre_std", "count"}, rows);
  return res;
}

// ---------------------------------------------------------------------------
// ood

struct OodRow {
  Index sample_id = 0;
  std::string population;  // full | masked | masked+lsi
  double residual_estimate = 0.0;
  double autoencode_diff = 0.0;
  double rre = 0.0;
  double lsi_initial = NAN;
  double lsi_final = NAN;
};

inline std::vector<OodRow> run_ood(const ExperimentConfig& cfg, const PairModel& model, const Dataset& data) {
  const MaskOperator mask = named_mask(cfg, cfg.ood.mask);
  const Normalization& norm = model.normalization();
  std::vector<OodRow> rows;
  for (Index i = 0; i < data.count(); ++i) {
    const Vector x = data.X.col(i), y = data.Y.col(i);
    const Vector y_sub = mask.apply(y);
    auto add = [&](const char* pop, const Vector& x_pred, const Vector& z_y, const LsiResult* lsi) {
      const auto m = ood_metrics(model, x_pred, z_y, y);
      OodRow r{i, pop, m.residual_estimate, m.autoencode_diff, rre(x_pred, x)};
      if (lsi) {
        r.lsi_initial = lsi->initial_residual;
        r.lsi_final = lsi->final_residual;
      }
      rows.push_back(r);
    };
    const Vector z_full = model.encode_y(norm.normalize_y(y));
    add("full", norm.denormalize_x(model.decode_x(model.map_bwd(z_full))), z_full, nullptr);
    const Vector z_sub = model.encode_y(norm.normalize_y(y_sub));
    add("masked", norm.denormalize_x(model.decode_x(model.map_bwd(z_sub))), z_sub, nullptr);
    const LsiResult res = lsi_observation_space(model, mask, y_sub, lsi_config(cfg.lsi, cfg.lsi.zy_iterations));
    add("masked+lsi", res.x, res.z, &res);
  }
  std::stable_sort(rows.begin(), rows.end(), [](const OodRow& a, const OodRow& b) {
    return std::tie(a.sample_id, a.population) < std::tie(b.sample_id, b.population);
  });
  return rows;
}

inline std::vector<OodRow> cmd_ood(const ExperimentConfig& cfg) {
  const PairModel model = load_run_model(cfg);
  const Dataset data = load_split(cfg, "test");
  auto rows = run_ood(cfg, model, data);
  std::vector<std::vector<std::string>> cells;
  for (const auto& r : rows) {
    cells.push_back({std::to_string(r.sample_id), r.population, format_number(r.residual_estimate),
                     format_number(r.autoencode_diff), format_number(r.rre)});
  }
  write_csv(run_paths(cfg).dir / "ood_scatter.csv", "ood", cfg,
            {"sample_id", "population", "residual_estimate", "autoencode_diff", "rre"}, cells);
  return rows;
}

// ---------------------------------------------------------------------------
// certify

struct LinearProblem {
  ForwardOperator op;
  GaussianModelSpec prior;
  LinearPair pair;
  MaskOperator mask;
  Matrix calib_x, calib_y, test_x, test_y;
};

/// Squared-exponential prior covariance over the pixel centres plus a nugget.
inline Matrix squared_exponential_covariance(int side, double stdev, double length, double nugget) {
  const Index n = Index{side} * side;
  Matrix c(n, n);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < n; ++j) {
      const double dr = static_cast<double>(i / side - j / side);
      const double dc = static_cast<double>(i % side - j % side);
      c(i, j) = stdev * stdev * std::exp(-(dr * dr + dc * dc) / (2.0 * length * length));
    }
  }
  c.diagonal().array() += nugget;
  return c;
}

inline LinearProblem make_linear_problem(const LinearProblemConfig& lc) {
  LinearProblem p;
  p.op = build_radon(lc.grid_side, lc.angles, lc.detectors);
  const Index n = p.op.cols(), q = p.op.rows();
  p.prior.mean = Vector::Constant(n, lc.prior_mean);
  p.prior.covariance = squared_exponential_covariance(lc.grid_side, lc.prior_std, lc.correlation_length, lc.nugget);
  p.prior.noise_covariance = Matrix::Identity(q, q) * (lc.noise_std * lc.noise_std);
  p.pair = optimal_linear_pair(p.op.matrix, p.prior.second_moment(), p.prior.noise_covariance, lc.latent_x, lc.latent_y);
  p.mask = build_mask(lc.mask, {Index{lc.detectors}, Index{lc.angles}});
  auto draw = [&](int count, std::uint64_t salt, Matrix& xs, Matrix& ys) {
    xs = sample_gaussian_models(p.prior, count, mix64(lc.seed ^ salt));
    ys = p.op.matrix * xs + sample_gaussian_noise(p.prior.noise_covariance, count, mix64(lc.seed ^ (salt + 100)));
  };
  draw(lc.calibration, 1, p.calib_x, p.calib_y);
  draw(lc.test, 2, p.test_x, p.test_y);
  return p;
}

struct CertifyResult {
  BoundReport report;
  std::string mode;
  std::string mask_kind;
  double missing_fraction = 0.0;
};

inline CertifyResult run_certify(const ExperimentConfig& cfg) {
  const auto& cs = cfg.certify;
  CertifyResult out;
  out.mode = cs.mode;
  if (cs.mode == "linear") {
    const LinearProblem lp = make_linear_problem(cs.linear);
    BoundConstants c = spectral_constants(lp.pair, lp.op.matrix, lp.mask);
    cover_samples(c, lp.pair, lp.calib_x, lp.calib_y);
    c.sample_set = "spectral operator norms; error terms over " + std::to_string(lp.calib_x.cols()) +
                   " calibration samples and the test sample; alpha_P on {y, d_y(z_hat)}";
    ReportOptions opt;
    opt.lsi = lsi_config(cfg.lsi, 50);
    opt.per_sample_alpha = true;
    opt.cover_test_sample = true;
    out.report = bound_report(c, lp.pair, lp.op.matrix, lp.mask, lp.test_x, lp.test_y, opt);
    out.mask_kind = cs.linear.mask.kind;
    out.missing_fraction = static_cast<double>(lp.mask.zeroed().size()) / static_cast<double>(lp.mask.size());
    return out;
  }
  if (cs.mode != "model") throw ArgumentError("certify.mode must be 'model' or 'linear'");
  const PairModel model = load_run_model(cfg);
  const Dataset train_set = load_split(cfg, "train");
  const Dataset test_set = load_split(cfg, "test");
  const ForwardOperator op = build_operator(cfg.geometry);
  const MaskOperator mask = named_mask(cfg, cs.mask);
  const Index nc = std::min<Index>(cs.calibration_count, train_set.count());
  const Index nt = std::min<Index>(cs.test_count, test_set.count());
  EstimateOptions eo{cs.pair_count, cs.seed, cs.perturbation};
  const BoundConstants c = estimate_constants(model, op.matrix, mask, train_set.X.leftCols(nc), train_set.Y.leftCols(nc), eo);
  ReportOptions opt;
  opt.lsi = lsi_config(cfg.lsi, cfg.lsi.zy_iterations);
  out.report = bound_report(c, model, op.matrix, mask, test_set.X.leftCols(nt), test_set.Y.leftCols(nt), opt);
  out.mask_kind = cs.mask;
  out.missing_fraction = static_cast<double>(mask.zeroed().size()) / static_cast<double>(mask.size());
  return out;
}

inline CertifyResult cmd_certify(const ExperimentConfig& cfg) {
  CertifyResult res = run_certify(cfg);
  const auto& c = res.report.constants;
  std::vector<std::vector<std::string>> rows;
  auto flag = [](bool b) { return std::string(b ? "true" : "false"); };
  for (const auto& r : res.report.rows) {
    rows.push_back({std::to_string(r.sample_id), "lsi-zy", res.mask_kind, format_number(res.missing_fraction),
                    format_number(r.rre), "", "", "", format_number(r.error_predicted), format_number(r.error_actual),
                    flag(r.error_ok), format_number(r.alpha_P), format_number(r.residual_predicted),
                    format_number(r.residual_actual), flag(r.residual_ok), format_number(r.statement1_initial),
                    format_number(r.statement1_final), flag(r.statement1_ok), flag(r.vacuous)});
  }
  std::vector<std::string> header = metrics_header();
  for (const char* h : {"alpha_p", "residual_predicted", "residual_actual", "residual_ok", "statement1_initial",
                        "statement1_final", "statement1_ok", "vacuous"})
    header.push_back(h);
  const auto dir = run_paths(cfg).dir;
  std::filesystem::create_directories(dir);
  write_csv(dir / "certificate.csv", "certify", cfg, header, rows);

  // Constants and rates alongside the rows.
  nlohmann::json summary = {{"mode", res.mode},
                            {"sample_set", c.sample_set},
                            {"constants_are_lower_bounds", res.mode != "linear"},
                            {"eps_x", c.eps_x},
                            {"eps_y", c.eps_y},
                            {"gamma_m", c.gamma_m},
                            {"delta", c.delta},
                            {"L_dx", c.L_dx},
                            {"L_mbwd", c.L_mbwd},
                            {"L_ey", c.L_ey},
                            {"L_A", c.L_A},
                            {"alpha_P", c.alpha_P},
                            {"beta_P", c.beta_P},
                            {"error_bound_rate", res.report.error_rate()},
                            {"residual_bound_rate", res.report.residual_rate()},
                            {"statement1_rate", res.report.statement1_rate()}};
  std::ofstream os(dir / "certificate_summary.json", std::ios::trunc);
  if (!os) throw IoError("cannot write certificate summary");
  os << summary.dump(2) << "\n";
  return res;
}

}  // namespace pairlab
