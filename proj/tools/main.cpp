#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cli.hpp"

using namespace fbm_infoflow;
using cli::Json;

namespace {

struct VerifyFlags {
  std::string suite;
  std::string channel = "multiplicative";
  std::string sigma = "sqrt1p";
  double c = 1.0;
  double x0 = 0.0;
  std::optional<double> y0;
  std::string initial = "gaussian";
  double mean = 0.0;
  double variance = 1.0;
  double a = -1.0, b = 1.0;
  std::vector<double> t_grid{0.5, 1.0, 2.0};
  std::vector<double> hurst_grid{0.3, 0.5, 0.75};
  std::optional<double> tolerance;
  std::optional<double> fd_step;
  double t_min = 0.05;
  std::string output;
  std::string oracle;
  std::uint64_t samples = 1000000;
  std::uint64_t seed = 1;
};

// The verify subcommand assembles the same JSON document a config file
// would hold, so both paths share validation.
Json verify_document(const VerifyFlags& f) {
  Json doc;
  doc["suites"] = Json::array({f.suite});
  if (f.channel == "multiplicative") {
    Json sigma{{"kind", f.sigma}};
    if (f.sigma == "constant") sigma["c"] = f.c;
    doc["channel"] = {{"type", "multiplicative"}, {"sigma", sigma}, {"x0", f.x0}};
    if (f.y0) doc["channel"]["y0"] = *f.y0;
  } else {
    Json init{{"kind", f.initial}};
    if (f.initial == "uniform") {
      init["a"] = f.a;
      init["b"] = f.b;
    } else {
      init["mean"] = f.mean;
      init["variance"] = f.variance;
    }
    doc["channel"] = {{"type", f.channel}, {"initial", init}};
  }
  doc["t_grid"] = f.t_grid;
  doc["hurst_grid"] = f.hurst_grid;
  doc["t_min"] = f.t_min;
  if (f.tolerance) doc["tolerances"] = {{f.suite, *f.tolerance}};
  if (f.fd_step) doc["overrides"] = {{f.suite, {{"fd_step", *f.fd_step}}}};
  if (!f.output.empty()) doc["output"] = f.output;
  if (!f.oracle.empty()) doc["oracle"] = {{"kind", f.oracle}, {"samples", f.samples}, {"seed", f.seed}};
  return doc;
}

int sample_fbm(double h, std::size_t n, double dt, const std::string& method, std::uint64_t seed,
               const std::string& out_path) {
  const FbmMethod m = method == "cholesky" ? FbmMethod::Cholesky : FbmMethod::Circulant;
  const auto grid = uniform_grid(n, dt);
  const FbmPath path = sample_path(grid, HurstParameter(h), m, seed);
  std::ofstream file;
  if (!out_path.empty()) {
    file.open(out_path);
    if (!file) {
      std::cerr << "cannot write " << out_path << "\n";
      return cli::kExitConfig;
    }
  }
  std::ostream& out = out_path.empty() ? std::cout : file;
  out << "time,value\n";
  for (std::size_t i = 0; i < path.times.size(); ++i)
    out << cli::detail::fmt_num(path.times[i]) << ',' << cli::detail::fmt_num(path.values[i]) << "\n";
  if (path.fell_back_to_cholesky) std::cerr << "circulant embedding indefinite; used cholesky\n";
  return cli::kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Entropy and KL flows of fBm-driven channels: numerical identity checks"};
  app.require_subcommand(1);

  std::string config_path;
  auto* run = app.add_subcommand("run", "Run the suites listed in a JSON config");
  run->add_option("--config", config_path, "Config file")->required();

  VerifyFlags vf;
  auto* verify = app.add_subcommand("verify", "Run one suite from command-line flags");
  verify->add_option("suite", vf.suite, "Suite name")
      ->required()
      ->check(CLI::IsMember({"debruijn-mult", "debruijn-additive", "kl-flow", "fokker-planck",
                             "stein", "entropy-power", "fbm-stats"}));
  verify->add_option("--channel", vf.channel, "multiplicative | additive")
      ->check(CLI::IsMember({"multiplicative", "additive"}));
  verify->add_option("--sigma", vf.sigma, "constant | sqrt1p | identity");
  verify->add_option("--c", vf.c, "Constant sigma value");
  verify->add_option("--x0", vf.x0, "Start of the multiplicative channel");
  verify->add_option("--y0", vf.y0, "Start of the kl-flow reference channel (default x0 + 1)");
  verify->add_option("--initial", vf.initial, "gaussian | uniform | sampled-gaussian");
  verify->add_option("--mean", vf.mean);
  verify->add_option("--variance", vf.variance);
  verify->add_option("--a", vf.a, "Uniform initial law lower end");
  verify->add_option("--b", vf.b, "Uniform initial law upper end");
  verify->add_option("--t", vf.t_grid, "Time grid")->delimiter(',');
  verify->add_option("--hurst", vf.hurst_grid, "Hurst grid")->delimiter(',');
  verify->add_option("--tolerance", vf.tolerance);
  verify->add_option("--fd-step", vf.fd_step);
  verify->add_option("--t-min", vf.t_min);
  verify->add_option("--output", vf.output, "CSV path (JSON written alongside); stdout if omitted");
  verify->add_option("--oracle", vf.oracle, "Add Monte Carlo columns")->check(CLI::IsMember({"mc"}));
  verify->add_option("--samples", vf.samples);
  verify->add_option("--seed", vf.seed);

  auto* fbm = app.add_subcommand("fbm", "Fractional Brownian motion utilities");
  fbm->require_subcommand(1);
  auto* sample = fbm->add_subcommand("sample", "Sample one path on a uniform grid");
  sample->set_help_flag("--help", "Print this help message and exit");  // frees -h for --h
  double h = 0.5, dt = 0.01;
  std::size_t n = 100;
  std::string method = "circulant", out_path;
  std::uint64_t fbm_seed = 1;
  sample->add_option("--h", h, "Hurst parameter")->required();
  sample->add_option("--n", n, "Number of grid points")->required();
  sample->add_option("--dt", dt, "Grid spacing");
  sample->add_option("--method", method)->check(CLI::IsMember({"cholesky", "circulant"}));
  sample->add_option("--seed", fbm_seed);
  sample->add_option("--out", out_path, "CSV path; stdout if omitted");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : cli::kExitConfig;
  }

  try {
    if (*run) return cli::run_and_report(cli::load_config(config_path), std::cout, std::cerr);
    if (*verify) return cli::run_and_report(cli::parse_config(verify_document(vf)), std::cout, std::cerr);
    if (*sample) return sample_fbm(h, n, dt, method, fbm_seed, out_path);
  } catch (const cli::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return cli::kExitConfig;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return cli::kExitNumerical;
  }
  return cli::kExitOk;
}
