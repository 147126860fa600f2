// acceptance <work-dir>
//
// Runs the seeded desk-scale experiment plus the analytic checks and prints
// one PASS/FAIL line per acceptance criterion. Exit status is nonzero when
// any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "pairlab/pairlab.hpp"

using namespace pairlab;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

Matrix gaussian_matrix(std::mt19937_64& gen, Index r, Index c) {
  std::normal_distribution<double> nd;
  Matrix m(r, c);
  for (Index j = 0; j < c; ++j)
    for (Index i = 0; i < r; ++i) m(i, j) = nd(gen);
  return m;
}

Matrix random_spd(std::mt19937_64& gen, Index n, double shift) {
  const Matrix b = gaussian_matrix(gen, n, n);
  return b.transpose() * b / static_cast<double>(n) + shift * Matrix::Identity(n, n);
}

double rel(const Vector& a, const Vector& b) { return (a - b).norm() / b.norm(); }

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

// ---------------------------------------------------------------------------
// Seeded experiment: every step is (command, overrides, output subdirectory).

struct Step {
  std::string command;
  std::vector<std::string> overrides;
  std::string subdir;
};

std::vector<Step> experiment_steps() {
  std::vector<Step> s;
  s.push_back({"gen", {}, "run"});
  s.push_back({"train", {}, "run"});
  for (const char* mask : {"full", "rand", "rect"}) {
    for (const char* method : {"pair", "lsi-zy", "lsi-zx", "mlsi", "tikhonov"}) {
      s.push_back({"invert", {std::string("invert.method=") + method, std::string("invert.mask=") + mask}, "run"});
    }
  }
  s.push_back({"sweep", {}, "run"});
  s.push_back({"ood", {}, "run"});
  s.push_back({"certify", {}, "run"});
  s.push_back({"certify", {"certify.mode=linear"}, "linear"});
  return s;
}

struct ExperimentState {
  std::map<std::string, std::vector<InversionRecord>> invert;  // "<method>/<mask>"
  SweepResult sweep;
  std::vector<OodRow> ood;
  CertifyResult certify_model, certify_linear;
  double seconds = 0.0;
};

void run_step(const Step& st, const fs::path& root, ExperimentState& out) {
  ExperimentConfig cfg = load_config(std::nullopt, st.overrides);
  cfg.output_dir = (root / st.subdir).string();
  fs::create_directories(cfg.output_dir);
  if (st.command == "gen") {
    cmd_gen(cfg);
  } else if (st.command == "train") {
    cmd_train(cfg);
  } else if (st.command == "invert") {
    out.invert[cfg.invert.method + "/" + cfg.invert.mask] = cmd_invert(cfg);
  } else if (st.command == "sweep") {
    out.sweep = cmd_sweep(cfg);
  } else if (st.command == "ood") {
    out.ood = cmd_ood(cfg);
  } else if (st.command == "certify") {
    (cfg.certify.mode == "linear" ? out.certify_linear : out.certify_model) = cmd_certify(cfg);
  }
}

int run_cli_step(const Step& st, const fs::path& root) {
  std::string cmd = std::string(PAIRLAB_CLI_PATH) + " " + st.command + " --out " + (root / st.subdir).string();
  for (const auto& o : st.overrides) cmd += " --" + o;
  cmd += " >/dev/null";
  fs::create_directories(root / st.subdir);
  return std::system(cmd.c_str());
}

// ---------------------------------------------------------------------------
// Criteria

Outcome criterion1() {
  const auto t0 = Clock::now();
  std::mt19937_64 gen(1001);
  double worst = 0.0;
  for (int k = 0; k < 20; ++k) {
    const Index n = 10, q = 14;
    const Matrix a = gaussian_matrix(gen, q, n);
    const Matrix gx = random_spd(gen, n, 0.1);
    const Matrix ge = 0.05 * random_spd(gen, q, 0.1);
    const Vector y = gaussian_matrix(gen, q, 1).col(0);
    const LinearPair p = optimal_linear_pair(a, gx, ge, n, q);
    const Vector x_hat = closed_form_lsi_zy(p, identity_mask({q, 1}), y).x;
    const Matrix gy = a * gx * a.transpose() + ge;
    const Vector oracle = gx * (a.transpose() * gy.partialPivLu().solve(y));
    worst = std::max(worst, rel(x_hat, oracle));
  }
  const double t = seconds_since(t0);
  return {worst < 1e-8 && t < 1.0, "max rel err " + fmt("%.3g", worst) + " (< 1e-8), " + fmt("%.3f", t) + " s (< 1 s)"};
}

Outcome criterion2(std::vector<std::pair<double, double>>& lsi_runs) {
  const auto t0 = Clock::now();
  std::mt19937_64 gen(2002);
  std::uniform_real_distribution<double> frac(0.1, 0.5);
  double worst = 0.0, worst_fraction = 0.0;
  int max_its = 0;
  for (int k = 0; k < 20; ++k) {
    const Index n = 10, q = 14;
    const Matrix a = gaussian_matrix(gen, q, n);
    const Matrix gx = random_spd(gen, n, 0.1);
    const Matrix ge = 0.05 * random_spd(gen, q, 0.1);
    const LinearPair p = optimal_linear_pair(a, gx, ge, 6, 7);
    const double f = frac(gen);
    const MaskOperator mask = make_mask(MaskKind::random_entries, {q, 1}, f, 2002 + k);
    const Vector y = mask.apply(a * gaussian_matrix(gen, n, 1).col(0) + 0.1 * gaussian_matrix(gen, q, 1).col(0));
    LsiConfig cfg;
    cfg.lbfgs.max_iterations = 50;
    cfg.lbfgs.gradient_tolerance = 1e-13;
    const LsiResult r = lsi_observation_space(p, mask, y, cfg);
    lsi_runs.emplace_back(r.initial_residual, r.final_residual);
    const Vector ref = closed_form_lsi_zy(p, mask, y).x;
    worst = std::max(worst, rel(r.x, ref));
    worst_fraction = std::max(worst_fraction, static_cast<double>(mask.zeroed().size()) / q);
    max_its = std::max(max_its, r.iterations);
  }
  const double t = seconds_since(t0);
  return {worst < 1e-6 && t < 5.0 && worst_fraction <= 0.5,
          "max rel err " + fmt("%.3g", worst) + " (< 1e-6), max missing " + fmt("%.2f", worst_fraction) +
              ", max iterations " + std::to_string(max_its) + " (<= 50), " + fmt("%.3f", t) + " s (< 5 s)"};
}

Outcome criterion3(const fs::path& run_dir) {
  const auto t0 = Clock::now();
  ExperimentConfig cfg = load_config(std::nullopt);
  cfg.output_dir = run_dir.string();
  PairModel m = PairModel::init(model_spec(cfg), 3003);
  const Dataset d = load_split(cfg, "train");
  const Matrix xn = d.normalization.normalize_x(Matrix(d.X.leftCols(1)));
  const Matrix yn = d.normalization.normalize_y(Matrix(d.Y.leftCols(1)));
  const LossWeights w{1.0, 1.0, 1.0, 1.0};
  const auto lg = pair_loss_grad(m, xn, yn, w);
  Stream rng(3003, 0);
  double worst = 0.0;
  const int coords = 120;
  for (int k = 0; k < coords; ++k) {
    const auto t = static_cast<std::size_t>(rng.below(m.parameters().size()));
    Matrix& tensor = m.parameters().tensors[t];
    const auto i = static_cast<Index>(rng.below(static_cast<std::uint64_t>(tensor.size())));
    double& p = tensor.data()[i];
    const double saved = p, h = 1e-5;
    p = saved + h;
    const double up = pair_loss(m, xn, yn, w);
    p = saved - h;
    const double down = pair_loss(m, xn, yn, w);
    p = saved;
    const double fd = (up - down) / (2 * h);
    const double g = lg.gradient.tensors[t].data()[i];
    const double den = std::max(std::abs(g), std::abs(fd));
    worst = std::max(worst, den > 0.0 ? std::abs(g - fd) / den : 0.0);
  }
  const double t = seconds_since(t0);
  return {worst < 1e-5 && t < 10.0, std::to_string(coords) + " coordinates of the desk model, max rel err " +
                                        fmt("%.3g", worst) + " (< 1e-5), " + fmt("%.2f", t) + " s (< 10 s)"};
}

Outcome criterion4() {
  std::mt19937_64 gen(4004);
  const Matrix q = gaussian_matrix(gen, 10, 10).householderQr().householderQ();
  const Vector d = Vector::LinSpaced(10, 1.0, 100.0);
  const Matrix h = q * d.asDiagonal() * q.transpose();
  const Vector c = gaussian_matrix(gen, 10, 1).col(0);
  auto quad = [&](const Vector& z, Vector& g) {
    g = h * (z - c);
    return 0.5 * (z - c).dot(g);
  };
  LbfgsConfig qc;
  qc.max_iterations = 30;
  qc.gradient_tolerance = 1e-10;
  const auto qr = lbfgs_minimize(quad, Vector::Zero(10), qc);
  const double gnorm = qr.gradient.norm();

  auto rosen = [](const Vector& z, Vector& g) {
    const double a = 1 - z(0), b = z(1) - z(0) * z(0);
    g.resize(2);
    g(0) = -2 * a - 400 * z(0) * b;
    g(1) = 200 * b;
    return a * a + 100 * b * b;
  };
  LbfgsConfig rc;
  rc.max_iterations = 100;
  rc.gradient_tolerance = 1e-10;
  Vector z0(2);
  z0 << -1.2, 1.0;
  const auto rr = lbfgs_minimize(rosen, z0, rc);
  const double dist = (rr.z - Vector::Ones(2)).norm();
  return {gnorm < 1e-10 && qr.iterations <= 30 && dist < 1e-6 && rr.iterations <= 100,
          "quadratic |g| " + fmt("%.3g", gnorm) + " after " + std::to_string(qr.iterations) +
              " iterations; Rosenbrock distance " + fmt("%.3g", dist) + " after " + std::to_string(rr.iterations) +
              " iterations"};
}

Outcome criterion5(const ExperimentState& st, const std::vector<std::pair<double, double>>& extra) {
  long total = 0, ok = 0;
  auto tally = [&](double initial, double final_) {
    if (std::isnan(initial)) return;
    ++total;
    if (final_ <= initial) ++ok;
  };
  for (const auto& [key, recs] : st.invert)
    for (const auto& r : recs) tally(r.lsi_initial, r.lsi_final);
  for (const auto& r : st.sweep.lsi_runs) tally(r.lsi_initial, r.lsi_final);
  for (const auto& r : st.ood) tally(r.lsi_initial, r.lsi_final);
  for (const auto* c : {&st.certify_model, &st.certify_linear})
    for (const auto& r : c->report.rows) tally(r.statement1_initial, r.statement1_final);
  for (const auto& [i, f] : extra) tally(i, f);
  return {total > 0 && ok == total,
          std::to_string(ok) + "/" + std::to_string(total) + " LSI runs with final residual <= residual at z0"};
}

Outcome criterion6(const ExperimentState& st) {
  const auto& lin = st.certify_linear.report;
  const auto& mod = st.certify_model.report;
  const bool ok = lin.rows.size() == 50 && lin.error_rate() == 1.0;
  return {ok, "linear (spectral constants): error bound on " + fmt("%.1f", 100 * lin.error_rate()) + "% of " +
                  std::to_string(lin.rows.size()) + " samples; nonlinear (sampled constants): error bound " +
                  fmt("%.1f", 100 * mod.error_rate()) + "%, residual bound " + fmt("%.1f", 100 * mod.residual_rate()) +
                  "% of " + std::to_string(mod.rows.size()) + " (reported)"};
}

Outcome criterion7(const ExperimentState& st) {
  auto m = [&](const char* method, const char* mask) { return mean_rre(st.invert.at(std::string(method) + "/" + mask)); };
  const double pf = m("pair", "full"), lf = m("lsi-zy", "full");
  const double pr = m("pair", "rand"), lr = m("lsi-zy", "rand");
  const double pb = m("pair", "rect"), lb = m("lsi-zy", "rect");
  const bool a = pf <= lf, b = lr < pr, c = lb < pb, t = st.seconds < 900.0;
  return {a && b && c && t, std::string("(a) full pair ") + fmt("%.4f", pf) + (a ? " <= " : " > ") + "lsi-zy " +
                                fmt("%.4f", lf) + "; (b) rand lsi-zy " + fmt("%.4f", lr) + (b ? " < " : " >= ") +
                                "pair " + fmt("%.4f", pr) + "; (c) rect lsi-zy " + fmt("%.4f", lb) +
                                (c ? " < " : " >= ") + "pair " + fmt("%.4f", pb) + "; end-to-end " +
                                fmt("%.0f", st.seconds) + " s (< 900 s)"};
}

Outcome criterion8(const ExperimentState& st) {
  auto row = [&](double f, const char* method) -> const SweepRow& {
    for (const auto& r : st.sweep.rows)
      if (std::abs(r.fraction - f) < 1e-12 && r.method == method) return r;
    throw Error("sweep row missing");
  };
  const double d0 = row(0.0, "lsi-zy").data_error_mean, d3 = row(0.3, "lsi-zy").data_error_mean;
  const double rz = row(0.9, "lsi-zy").rre_mean, rp = row(0.9, "pair").rre_mean, rm = row(0.9, "mlsi").rre_mean;
  const bool trend = d3 <= 1.5 * d0, beats = rz < rp && rz < rm;
  return {trend && beats, "lsi-zy data error " + fmt("%.4f", d3) + " at 0.3 vs " + fmt("%.4f", d0) + " at 0 (ratio " +
                              fmt("%.3f", d3 / d0) + ", <= 1.5); RRE at 0.9: lsi-zy " + fmt("%.4f", rz) + ", pair " +
                              fmt("%.4f", rp) + ", mlsi " + fmt("%.4f", rm)};
}

Outcome criterion9(const ExperimentState& st) {
  std::map<std::string, std::pair<double, int>> acc;
  for (const auto& r : st.ood) {
    acc[r.population].first += r.autoencode_diff;
    ++acc[r.population].second;
  }
  auto mean = [&](const char* p) { return acc[p].first / std::max(1, acc[p].second); };
  const double full = mean("full"), masked = mean("masked"), lsi = mean("masked+lsi");
  const bool ok = masked >= 1.5 * full && lsi > full && lsi < masked;
  return {ok, "mean autoencode_diff full " + fmt("%.4f", full) + ", masked " + fmt("%.4f", masked) + " (ratio " +
                  fmt("%.2f", masked / full) + ", >= 1.5), masked+lsi " + fmt("%.4f", lsi)};
}

Outcome criterion10(const fs::path& root, const std::vector<Step>& steps) {
  std::vector<std::string> problems;
  const fs::path run = root / "run";
  // Dataset and model reload.
  const Dataset ds = read_dataset((run / "train.pairds").string());
  write_dataset((root / "copy.pairds").string(), ds);
  const Dataset back = read_dataset((root / "copy.pairds").string());
  if (!(back.X == ds.X) || !(back.Y == ds.Y) || !(back.normalization == ds.normalization))
    problems.push_back("dataset values");
  if (slurp(root / "copy.pairds") != slurp(run / "train.pairds")) problems.push_back("dataset bytes");
  const PairModel m = load_model((run / "model.json").string());
  save_model(m, (root / "copy.json").string());
  const PairModel m2 = load_model((root / "copy.json").string());
  if (!(m2.parameters() == m.parameters()) || !(m2.normalization() == m.normalization())) problems.push_back("model values");
  if (slurp(root / "copy.json") != slurp(run / "model.json")) problems.push_back("model bytes");

  // Rerun every command through the CLI into a fresh tree and compare files.
  const fs::path rerun = root / "rerun";
  fs::remove_all(rerun);
  for (const auto& st : steps) {
    if (run_cli_step(st, rerun) != 0) problems.push_back("cli " + st.command + " failed");
  }
  int compared = 0;
  for (const char* sub : {"run", "linear"}) {
    for (const auto& e : fs::directory_iterator(root / sub)) {
      const fs::path other = rerun / sub / e.path().filename();
      ++compared;
      if (!fs::exists(other) || slurp(e.path()) != slurp(other)) problems.push_back(e.path().filename().string());
    }
  }
  std::string detail = "dataset and model reload bitwise; " + std::to_string(compared) + " output files compared after CLI rerun";
  if (!problems.empty()) {
    detail += "; mismatches:";
    for (const auto& p : problems) detail += " " + p;
  }
  return {problems.empty(), detail};
}

}  // namespace

int main(int argc, char** argv) {
  if (argc != 2) {
    std::cerr << "usage: acceptance <work-dir>\n";
    return 2;
  }
  const fs::path root = argv[1];
  fs::remove_all(root);
  fs::create_directories(root);

  std::map<int, Outcome> results;
  auto guarded = [&](int id, const std::function<Outcome()>& f) {
    try {
      results[id] = f();
    } catch (const std::exception& e) {
      results[id] = {false, std::string("exception: ") + e.what()};
    }
  };

  std::vector<std::pair<double, double>> analytic_lsi;
  guarded(1, criterion1);
  guarded(2, [&] { return criterion2(analytic_lsi); });
  guarded(4, criterion4);

  ExperimentState state;
  const auto steps = experiment_steps();
  bool experiment_ok = true;
  std::string experiment_error;
  try {
    const auto t0 = Clock::now();
    for (const auto& st : steps) {
      std::cerr << "[acceptance] " << st.command;
      for (const auto& o : st.overrides) std::cerr << " " << o;
      std::cerr << std::endl;
      run_step(st, root, state);
    }
    state.seconds = seconds_since(t0);
  } catch (const std::exception& e) {
    experiment_ok = false;
    experiment_error = e.what();
  }

  if (experiment_ok) {
    guarded(3, [&] { return criterion3(root / "run"); });
    guarded(5, [&] { return criterion5(state, analytic_lsi); });
    guarded(6, [&] { return criterion6(state); });
    guarded(7, [&] { return criterion7(state); });
    guarded(8, [&] { return criterion8(state); });
    guarded(9, [&] { return criterion9(state); });
    guarded(10, [&] { return criterion10(root, steps); });
  } else {
    for (int id : {3, 5, 6, 7, 8, 9, 10}) results[id] = {false, "experiment failed: " + experiment_error};
  }

  bool all = true;
  for (int id = 1; id <= 10; ++id) {
    const auto& r = results[id];
    all = all && r.pass;
    std::printf("criterion %2d: %s  %s\n", id, r.pass ? "PASS" : "FAIL", r.detail.c_str());
  }
  return all ? 0 : 1;
}
