// Command-line front end: simulate heavy-tailed recursions, extract extreme
// windows, build adjoint measures and back-and-forth tail chains, and run the
// full comparison experiment described in the README.
#include <cstdio>
#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tailchain/admissible.hpp"
#include "tailchain/diagnostics.hpp"
#include "tailchain/errors.hpp"
#include "tailchain/experiment.hpp"
#include "tailchain/io.hpp"
#include "tailchain/kernels.hpp"
#include "tailchain/markov.hpp"
#include "tailchain/measures.hpp"
#include "tailchain/models.hpp"
#include "tailchain/rng.hpp"

namespace {

using namespace tailchain;

// Built-in model presets; --model-file overrides with a JSON file of the same
// schema.
const char* kAr1Preset = R"({
  "type": "ar1", "d": 1, "alpha": 1.0, "a": 0.5,
  "lambda": {"kind": "atomic",
             "atoms": [{"s": [1.0], "w": 0.5}, {"s": [-1.0], "w": 0.5}]},
  "innovation": {"name": "pareto-symmetric", "scale": 1.0}
})";

const char* kKestenPreset = R"({
  "type": "kesten", "d": 2, "alpha": 1.0,
  "radial": {"name": "lognormal", "sigma": 0.5},
  "additive_scale": 0.1
})";

ModelFile model_from_flags(const std::string& preset, const std::string& file) {
  if (preset.empty() == file.empty())
    throw DomainError("provide exactly one of --model and --model-file");
  if (!file.empty()) return model_from_json_text(read_text_file(file));
  if (preset == "ar1-d1") return model_from_json_text(kAr1Preset);
  if (preset == "kesten-lognormal") return model_from_json_text(kKestenPreset);
  throw DomainError("unknown preset \"" + preset +
                    "\"; available: ar1-d1, kesten-lognormal");
}

std::vector<std::string> window_header(int s, int t, int d) {
  std::vector<std::string> header;
  header.reserve(static_cast<std::size_t>(s + 1 + t) * d);
  for (int j = -s; j <= t; ++j)
    for (int c = 0; c < d; ++c)
      header.push_back("m" + std::to_string(j) + "_" + std::to_string(c));
  return header;
}

int cmd_simulate(const std::string& preset, const std::string& file, long n, long burn_in,
                 std::uint64_t seed, const std::string& out) {
  const ModelFile mf = model_from_flags(preset, file);
  const ModelSpec model = mf.model();
  const long burn = burn_in < 0 ? model.default_burn_in : burn_in;
  const Trajectory traj = simulate(model, n, burn, seed);
  write_matrix_le(out, traj.data, traj.n, traj.d);
  Sidecar side;
  side.d = traj.d;
  side.n = traj.n;
  side.seed = seed;
  side.model = mf.type;
  write_sidecar(sidecar_path(out), side);
  std::cout << "wrote " << traj.n << " states of dimension " << traj.d << " to " << out << "\n";
  return 0;
}

int cmd_windows(const std::string& in, double percentile, int s, int t, const std::string& out) {
  const Sidecar side = read_sidecar(sidecar_path(in));
  Trajectory traj;
  traj.d = side.d;
  traj.n = side.n;
  traj.data = read_matrix_le(in, side.n, side.d);
  const double x = threshold_at_percentile(trajectory_norms(traj), percentile);
  try {
    const std::vector<ExtremeWindow> windows = extract_windows(traj, x, s, t);
    write_windows_csv(out, windows);
    std::cout << "threshold " << format_double(x) << " (p" << format_double(percentile) << "), "
              << windows.size() << " windows -> " << out << "\n";
    return 0;
  } catch (const NoExceedances& e) {
    std::cerr << "no exceedances: " << e.what() << "\n";
    return 1;
  }
}

int cmd_adjoint(const std::string& in, double alpha, const std::string& out) {
  const AtomMeasure p = measure_from_json(read_text_file(in));
  // JSON inputs carry decimal rounding noise, hence the looser tolerance.
  const AtomMeasure a = adjoint(p, TailIndex(alpha), 1e-9);
  const std::string text = measure_to_json(a);  // ends with a newline
  if (out.empty())
    std::cout << text;
  else
    write_text_file(out, text);
  return 0;
}

int cmd_bftc(const std::string& preset, const std::string& file, int s, int t, long n,
             std::uint64_t seed, int functional, const std::string& out,
             const std::string& paths_out, bool check_timechange) {
  const ModelFile mf = model_from_flags(preset, file);
  RngStream root(seed);
  RngStream gate = root.child(1);
  const BftcSpec chain = mf.bftc(gate);
  std::cout << "adjointness gate passed for " << mf.type << " (d=" << chain.dim()
            << ", alpha=" << format_double(chain.alpha()) << ")\n";

  const std::vector<TestFunctional> battery = standard_functionals();
  if (functional < 0 || functional >= static_cast<int>(battery.size()))
    throw DomainError("--functional must index the battery of " +
                      std::to_string(battery.size()) + " test functionals");

  bool all_ok = true;
  RngStream fam_root = root.child(2);
  for (std::size_t f = 0; f < battery.size(); ++f) {
    const bool wanted = static_cast<int>(f) == functional;
    if (!wanted && !check_timechange) continue;
    RngStream fam_stream = fam_root.child(f);
    const std::vector<GapEstimate> family =
        timechange_family(battery[f], chain, s, t, n, fam_stream);
    if (wanted && !out.empty()) write_family_csv(out, family);
    if (check_timechange) {
      bool ok = true;
      bool first = true;
      double worst_gap = 0.0, worst_allow = 0.0;
      for (std::size_t i = 0; i < family.size(); ++i)
        for (std::size_t j = i + 1; j < family.size(); ++j) {
          const double gap = std::abs(family[i].estimate - family[j].estimate);
          const double allow = family[i].ci_halfwidth + family[j].ci_halfwidth;
          if (first || gap - allow > worst_gap - worst_allow) {
            worst_gap = gap;
            worst_allow = allow;
            first = false;
          }
          if (gap > allow) ok = false;
        }
      all_ok = all_ok && ok;
      std::cout << (ok ? "[PASS] " : "[FAIL] ") << "timechange-" << battery[f].name()
                << ": worst gap " << format_double(worst_gap) << " vs allowance "
                << format_double(worst_allow) << "\n";
    }
  }

  if (!paths_out.empty()) {
    RngStream path_stream = root.child(3);
    const Vec rows = sample_bftc_rows(chain, s, t, n, path_stream);
    write_rows_csv(paths_out, rows, static_cast<std::size_t>(n), (s + 1 + t) * chain.dim(),
                   window_header(s, t, chain.dim()));
    std::cout << "wrote " << n << " tail-chain windows to " << paths_out << "\n";
  }
  return all_ok ? 0 : 1;
}

// Drops leading CSV columns, e.g. the window magnitude in front of the values.
CsvMatrix drop_leading_cols(CsvMatrix m, int skip, const std::string& which) {
  if (skip == 0) return m;
  if (skip < 0 || skip >= m.cols)
    throw DomainError(which + ": cannot skip " + std::to_string(skip) + " of " +
                      std::to_string(m.cols) + " columns");
  const std::size_t kept = static_cast<std::size_t>(m.cols - skip);
  Vec out(m.rows * kept);
  for (std::size_t r = 0; r < m.rows; ++r)
    for (std::size_t c = 0; c < kept; ++c) out[r * kept + c] = m.data[r * m.cols + skip + c];
  m.data = std::move(out);
  m.cols -= skip;
  return m;
}

int cmd_compare(const std::string& a_path, const std::string& b_path, int a_skip, int b_skip,
                int n_perm, std::size_t max_points, double level, std::uint64_t seed) {
  const CsvMatrix a = drop_leading_cols(read_csv_matrix(a_path), a_skip, "--a-skip-cols");
  const CsvMatrix b = drop_leading_cols(read_csv_matrix(b_path), b_skip, "--b-skip-cols");
  if (a.cols != b.cols)
    throw DimensionMismatch("row widths differ: " + std::to_string(a.cols) + " vs " +
                            std::to_string(b.cols) +
                            " (windows CSVs carry a leading magnitude column; drop it with "
                            "--a-skip-cols or --b-skip-cols)");
  RngStream stream(seed);
  TwoSampleResult res = energy_permutation_test(a.data, a.rows, b.data, b.rows, a.cols, n_perm,
                                                stream, max_points, level);
  res.test = "energy-permutation";
  std::cout << two_sample_to_json(res) << "\n";
  return res.p_value > level ? 0 : 1;
}

int cmd_run(const std::string& config_path, const std::string& out_override) {
  ExperimentConfig config = load_config(config_path);
  if (!out_override.empty()) config.out_dir = out_override;
  const ExperimentReport rep = run_experiment(config);
  for (const std::string& line : rep.gate_lines) std::cout << line << "\n";
  for (const std::string& line : rep.info_lines) std::cout << "[info] " << line << "\n";
  std::cout << "result: " << (rep.passed ? "PASS" : "FAIL") << " (" << config.out_dir << ")\n";
  return rep.passed ? 0 : 1;
}

int cmd_validate(const std::string& config_path) {
  const std::vector<std::string> problems = validate_config(config_path);
  for (const std::string& p : problems) std::cout << p << "\n";
  if (problems.empty()) {
    std::cout << "ok\n";
    return 0;
  }
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"tail chains of heavy-tailed Markov recursions"};
  app.require_subcommand(1);

  std::string preset, model_file, in, out, paths_out, a_path, b_path, config_path;
  long n = 1000000, burn_in = -1;
  std::uint64_t seed = 1;
  double percentile = 99.9, alpha = 1.0, level = 0.01;
  int s = 2, t = 2, functional = 0, n_perm = 499;
  std::size_t max_points = 2000;
  bool check_timechange = false;

  auto* sim = app.add_subcommand("simulate", "simulate a recursion and store the trajectory");
  sim->add_option("--model", preset, "preset: ar1-d1 or kesten-lognormal");
  sim->add_option("--model-file", model_file, "model JSON file");
  sim->add_option("--n", n, "states to keep after burn-in")->capture_default_str();
  sim->add_option("--burn-in", burn_in, "burn-in steps (-1: model default)")
      ->capture_default_str();
  sim->add_option("--seed", seed, "RNG seed")->capture_default_str();
  sim->add_option("--out", out, "output matrix path (sidecar at <out>.json)")->required();

  auto* win = app.add_subcommand("windows", "extract normalized windows around exceedances");
  win->add_option("--in", in, "trajectory written by simulate")->required();
  win->add_option("--threshold-percentile", percentile, "norm percentile in (0, 100)")
      ->capture_default_str();
  win->add_option("-s", s, "backward horizon")->capture_default_str();
  win->add_option("-t", t, "forward horizon")->capture_default_str();
  win->add_option("--out", out, "output CSV")->required();

  auto* adj = app.add_subcommand("adjoint", "adjoint of an atomic measure on sphere x space");
  adj->add_option("--in", in, "measure JSON file")->required();
  adj->add_option("--alpha", alpha, "tail index")->capture_default_str();
  adj->add_option("--out", out, "output JSON (stdout if omitted)");

  auto* bf = app.add_subcommand("bftc", "build a checked back-and-forth tail chain");
  bf->add_option("--model", preset, "preset: ar1-d1 or kesten-lognormal");
  bf->add_option("--model-file", model_file, "model JSON file");
  bf->add_option("-s", s, "backward horizon")->capture_default_str();
  bf->add_option("-t", t, "forward horizon")->capture_default_str();
  bf->add_option("--n", n, "Monte Carlo paths")->capture_default_str();
  bf->add_option("--seed", seed, "RNG seed")->capture_default_str();
  bf->add_option("--functional", functional, "battery index written to --out")
      ->capture_default_str();
  bf->add_option("--out", out, "family CSV for the chosen functional");
  bf->add_option("--paths-out", paths_out, "CSV of sampled tail-chain windows");
  bf->add_flag("--check-timechange", check_timechange,
               "check the shift family of weighted expectations for the whole battery");

  auto* cmp = app.add_subcommand("compare", "energy permutation test between two CSV samples");
  int a_skip = 0, b_skip = 0;
  cmp->add_option("--a", a_path, "first sample CSV")->required();
  cmp->add_option("--b", b_path, "second sample CSV")->required();
  cmp->add_option("--a-skip-cols", a_skip, "leading columns of --a to ignore")
      ->capture_default_str();
  cmp->add_option("--b-skip-cols", b_skip, "leading columns of --b to ignore")
      ->capture_default_str();
  cmp->add_option("--n-perm", n_perm, "permutation replicates")->capture_default_str();
  cmp->add_option("--max-points", max_points, "per-sample cap for d > 1")->capture_default_str();
  cmp->add_option("--level", level, "rejection level for the exit code")->capture_default_str();
  cmp->add_option("--seed", seed, "RNG seed")->capture_default_str();

  auto* run = app.add_subcommand("run", "run a full experiment from a JSON config");
  run->add_option("--config", config_path, "experiment config JSON")->required();
  run->add_option("--out", out, "override the config's out_dir");

  auto* val = app.add_subcommand("validate", "validate an experiment config");
  val->add_option("--config", config_path, "experiment config JSON")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (sim->parsed()) return cmd_simulate(preset, model_file, n, burn_in, seed, out);
    if (win->parsed()) return cmd_windows(in, percentile, s, t, out);
    if (adj->parsed()) return cmd_adjoint(in, alpha, out);
    if (bf->parsed())
      return cmd_bftc(preset, model_file, s, t, n, seed, functional, out, paths_out,
                      check_timechange);
    if (cmp->parsed())
      return cmd_compare(a_path, b_path, a_skip, b_skip, n_perm, max_points, level, seed);
    if (run->parsed()) return cmd_run(config_path, out);
    if (val->parsed()) return cmd_validate(config_path);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
