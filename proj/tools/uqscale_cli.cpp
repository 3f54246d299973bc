// uqscale command-line front end: run experiments, re-fit curves, dump data.

#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "uqscale.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

int cmd_run(const std::string& config_path, const std::string& out_dir, const std::string& seed,
            bool full_grid, std::vector<std::string> overrides) {
  const auto user = uqscale::load_config_file(config_path);
  if (!out_dir.empty()) overrides.push_back("output_dir=\"" + out_dir + "\"");
  if (!seed.empty()) overrides.push_back("seed=" + seed);
  if (full_grid) overrides.push_back("full_grid=true");
  const auto cfg = uqscale::parse_config(user, overrides);
  std::cerr << "running " << cfg.experiment << " (config " << cfg.hash() << ") -> " << cfg.output_dir << "\n";
  const auto rec = uqscale::run_experiment(cfg);
  std::cout << uqscale::fits_table(rec.fits);
  std::cerr << rec.rows.size() << " rows in " << rec.wall_clock_seconds << " s\n";
  return 0;
}

int cmd_report(const std::string& curves, const std::string& out_dir, double n_min) {
  const auto res = uqscale::report(curves, out_dir, n_min);
  std::cout << res.table;
  return 0;
}

int cmd_dataset(const std::string& kind, int n, std::uint64_t seed, double noise, const std::string& out) {
  uqscale::RngStream stream(seed, uqscale::streams::train(0));
  uqscale::LabeledDataset ds;
  if (kind == "two_moons") {
    ds = uqscale::gen_two_moons(n, {noise, 0.0, 0.0}, stream);
  } else if (kind == "linear_gaussian") {
    const int d = 5;
    ds = uqscale::gen_linear_gaussian(n, uqscale::Vector::Ones(d), noise, uqscale::SymMatrix::identity(d), stream);
  } else {
    uqscale::fail(uqscale::ErrorCode::ConfigError, "dataset: unknown kind '" + kind + "'");
  }
  if (out.empty() || out == "-")
    uqscale::write_csv(std::cout, ds);
  else
    uqscale::write_csv(out, ds);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  uqscale::tune_allocator();
  CLI::App app{"uqscale: uncertainty scaling experiments"};
  app.require_subcommand(1);

  std::string config_path, out_dir, seed;
  bool full_grid = false;
  std::vector<std::string> overrides;
  auto* run = app.add_subcommand("run", "run an experiment from a JSON config");
  run->add_option("config", config_path, "config file")->required();
  run->add_option("--out", out_dir, "output directory (overrides output_dir)");
  run->add_option("--seed", seed, "64-bit seed (overrides seed)");
  run->add_flag("--full-grid", full_grid, "use the 12-point 1e2..1e6 grid for hmc_twomoons");
  run->add_option("--set", overrides, "override a config field, key=value (value parsed as JSON)");

  std::string curves_path, report_out = ".";
  double n_min = 0.0;
  auto* rep = app.add_subcommand("report", "re-fit an existing curves.csv");
  rep->add_option("curves", curves_path, "curves.csv")->required();
  rep->add_option("--out", report_out, "directory for fits.json");
  rep->add_option("--n-min", n_min, "also fit on N >= n_min");

  std::string kind = "two_moons", ds_out;
  int ds_n = 200;
  std::uint64_t ds_seed = 0;
  double ds_noise = 0.1;
  auto* ds = app.add_subcommand("dataset", "write a synthetic dataset as CSV");
  ds->add_option("kind", kind, "two_moons | linear_gaussian");
  ds->add_option("-n", ds_n, "number of points");
  ds->add_option("--seed", ds_seed, "seed");
  ds->add_option("--noise", ds_noise, "noise standard deviation");
  ds->add_option("--out", ds_out, "output file (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }

  try {
    if (*run) return cmd_run(config_path, out_dir, seed, full_grid, overrides);
    if (*rep) return cmd_report(curves_path, report_out, n_min);
    if (*ds) return cmd_dataset(kind, ds_n, ds_seed, ds_noise, ds_out);
  } catch (const uqscale::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.code() == uqscale::ErrorCode::ConfigError ? kExitConfig : kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return 0;
}
