// pairlab <gen|train|invert|sweep|ood|certify> --config <path> [--key=value ...] [--out <dir>]
//
// Exit codes: 0 success, 2 usage error, 3 input-file error, 4 numerical failure.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "pairlab/pairlab.hpp"

namespace {

constexpr int kUsage = 2;
constexpr int kInput = 3;
constexpr int kNumerical = 4;

void report_invert(const std::vector<pairlab::InversionRecord>& recs) {
  std::map<std::string, std::pair<double, int>> by_method;
  for (const auto& r : recs) {
    auto& e = by_method[r.metrics.method];
    e.first += r.metrics.rre;
    ++e.second;
  }
  for (const auto& [m, e] : by_method) std::printf("%-16s mean RRE %.4f over %d samples\n", m.c_str(), e.first / e.second, e.second);
}

int run(const std::string& command, const pairlab::ExperimentConfig& cfg) {
  using namespace pairlab;
  if (command == "gen") {
    const auto r = cmd_gen(cfg);
    std::printf("wrote %lld train, %lld test%s samples to %s\n", static_cast<long long>(r.train.count()),
                static_cast<long long>(r.test.count()), r.ood ? " and OOD" : "", cfg.output_dir.c_str());
  } else if (command == "train") {
    const auto r = cmd_train(cfg);
    if (!r.trace.empty()) std::printf("loss %.6g -> %.6g over %zu epochs\n", r.trace.front(), r.trace.back(), r.trace.size());
  } else if (command == "invert") {
    report_invert(cmd_invert(cfg));
  } else if (command == "sweep") {
    for (const auto& row : cmd_sweep(cfg).rows) {
      std::printf("fraction %.2f %-9s data error %.4f  RRE %.4f\n", row.fraction, row.method.c_str(), row.data_error_mean,
                  row.rre_mean);
    }
  } else if (command == "ood") {
    std::printf("%zu rows\n", cmd_ood(cfg).size());
  } else if (command == "certify") {
    const auto r = cmd_certify(cfg);
    std::printf("mode %s: error bound holds on %.1f%%, residual bound on %.1f%%, Statement-1 inequality on %.1f%% of %zu samples\n",
                r.mode.c_str(), 100 * r.report.error_rate(), 100 * r.report.residual_rate(),
                100 * r.report.statement1_rate(), r.report.rows.size());
    if (r.mode != "linear") std::printf("(sampled constants are lower bounds; rates are reported, not guaranteed)\n");
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Paired-autoencoder inversion with latent-space inference"};
  app.require_subcommand(1, 1);
  std::optional<std::string> config_path;
  std::optional<std::string> out_dir;
  app.add_option("--config", config_path, "JSON experiment config");
  app.add_option("--out", out_dir, "output directory (overrides output_dir)");
  app.allow_extras();
  for (const char* name : {"gen", "train", "invert", "sweep", "ood", "certify"}) {
    auto* sub = app.add_subcommand(name);
    sub->allow_extras();
    sub->fallthrough();
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kUsage;
  }

  // Extras of the form --key=value (or --key value) are config overrides.
  std::vector<std::string> overrides;
  std::vector<std::string> extras = app.remaining();
  for (auto* sub : app.get_subcommands()) {
    for (auto& e : sub->remaining()) extras.push_back(e);
  }
  for (std::size_t i = 0; i < extras.size(); ++i) {
    std::string item = extras[i];
    if (item.rfind("--", 0) != 0) {
      std::cerr << "error: unexpected argument '" << item << "'\n";
      return kUsage;
    }
    item = item.substr(2);
    if (item.find('=') == std::string::npos) {
      if (i + 1 >= extras.size()) {
        std::cerr << "error: override '--" << item << "' has no value\n";
        return kUsage;
      }
      item += "=" + extras[++i];
    }
    overrides.push_back(item);
  }

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    pairlab::ExperimentConfig cfg = pairlab::load_config(config_path, overrides);
    if (out_dir) cfg.output_dir = *out_dir;
    return run(command, cfg);
  } catch (const pairlab::IoError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return kInput;
  } catch (const pairlab::ParseError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return kInput;
  } catch (const pairlab::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kNumerical;
  } catch (const pairlab::ArgumentError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
