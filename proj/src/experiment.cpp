#include "tailchain/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <set>
#include <sstream>
#include <string>
#include <utility>

#include <nlohmann/json.hpp>

#include "tailchain/diagnostics.hpp"
#include "tailchain/errors.hpp"
#include "tailchain/io.hpp"
#include "tailchain/kernels.hpp"
#include "tailchain/markov.hpp"
#include "tailchain/rng.hpp"
#include "tailchain/vecmath.hpp"

namespace tailchain {

namespace {

using nlohmann::json;

std::string resolve_path(const std::string& base_dir, const std::string& path) {
  std::filesystem::path p(path);
  if (p.is_absolute() || base_dir.empty()) return path;
  return (std::filesystem::path(base_dir) / p).string();
}

bool is_integer(const json& v) {
  return v.is_number_integer() || v.is_number_unsigned();
}

void check_unknown_keys(const json& obj, const std::set<std::string>& allowed,
                        const std::string& prefix, std::vector<std::string>& out) {
  for (const auto& item : obj.items())
    if (!allowed.count(item.key())) out.push_back(prefix + "/" + item.key() + ": unknown key");
}

std::string pct_tag(double pct) {
  std::string s = format_double(pct);
  for (char& c : s)
    if (c == '.') c = '_';
  return s;
}

std::string utc_stamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

struct ReportSink {
  ExperimentReport& rep;
  json gates = json::array();
  json infos = json::array();

  void gate(const std::string& name, bool ok, const std::string& detail) {
    rep.passed = rep.passed && ok;
    rep.gate_lines.push_back(std::string(ok ? "[PASS] " : "[FAIL] ") + name + ": " + detail);
    gates.push_back({{"detail", detail}, {"name", name}, {"passed", ok}});
  }
  void info(const std::string& line) {
    rep.info_lines.push_back(line);
    infos.push_back(line);
  }
};

}  // namespace

std::vector<std::string> validate_config_text(const std::string& text,
                                              const std::string& base_dir) {
  std::vector<std::string> out;
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded()) {
    out.push_back(": not valid JSON");
    return out;
  }
  if (!j.is_object()) {
    out.push_back(": top level must be an object");
    return out;
  }

  check_unknown_keys(j,
                     {"seed", "model", "model_file", "simulate", "thresholds", "horizons", "bftc",
                      "diagnostics", "out_dir"},
                     "", out);

  if (!j.contains("seed"))
    out.push_back("/seed: required");
  else if (!j["seed"].is_number_unsigned() && !(is_integer(j["seed"]) && j["seed"].get<long long>() >= 0))
    out.push_back("/seed: must be a nonnegative integer");

  const bool has_inline = j.contains("model");
  const bool has_file = j.contains("model_file");
  if (has_inline == has_file) {
    out.push_back("/model: provide exactly one of model and model_file");
  } else if (has_inline) {
    if (!j["model"].is_object()) {
      out.push_back("/model: must be an object");
    } else {
      for (const auto& line : model_json_diagnostics(j["model"].dump(), "/model"))
        out.push_back(line);
    }
  } else {
    if (!j["model_file"].is_string()) {
      out.push_back("/model_file: must be a string path");
    } else {
      const std::string path = resolve_path(base_dir, j["model_file"].get<std::string>());
      try {
        const std::string mtext = read_text_file(path);
        for (const auto& line : model_json_diagnostics(mtext, "/model_file"))
          out.push_back(line);
      } catch (const IoError& e) {
        out.push_back(std::string("/model_file: ") + e.what());
      }
    }
  }

  if (j.contains("simulate")) {
    const json& s = j["simulate"];
    if (!s.is_object()) {
      out.push_back("/simulate: must be an object");
    } else {
      check_unknown_keys(s, {"n", "burn_in"}, "/simulate", out);
      if (s.contains("n") && !(is_integer(s["n"]) && s["n"].get<long long>() > 0))
        out.push_back("/simulate/n: must be a positive integer");
      if (s.contains("burn_in") && !(is_integer(s["burn_in"]) && s["burn_in"].get<long long>() >= -1))
        out.push_back("/simulate/burn_in: must be an integer >= -1");
    }
  }

  if (j.contains("thresholds")) {
    const json& t = j["thresholds"];
    if (!t.is_array() || t.empty()) {
      out.push_back("/thresholds: must be a non-empty array");
    } else {
      double prev = 0.0;
      for (std::size_t i = 0; i < t.size(); ++i) {
        const std::string ptr = "/thresholds/" + std::to_string(i);
        if (!t[i].is_number()) {
          out.push_back(ptr + ": must be a number");
          break;
        }
        const double v = t[i].get<double>();
        if (!(v > 0.0 && v < 100.0)) out.push_back(ptr + ": percentile must lie in (0, 100)");
        if (i > 0 && !(v > prev)) out.push_back(ptr + ": thresholds must be strictly increasing");
        prev = v;
      }
    }
  }

  int hs = 2, ht = 2;
  if (j.contains("horizons")) {
    const json& h = j["horizons"];
    if (!h.is_object()) {
      out.push_back("/horizons: must be an object");
    } else {
      check_unknown_keys(h, {"s", "t"}, "/horizons", out);
      if (h.contains("s")) {
        if (!(is_integer(h["s"]) && h["s"].get<long long>() >= 0))
          out.push_back("/horizons/s: must be a nonnegative integer");
        else
          hs = h["s"].get<int>();
      }
      if (h.contains("t")) {
        if (!(is_integer(h["t"]) && h["t"].get<long long>() >= 0))
          out.push_back("/horizons/t: must be a nonnegative integer");
        else
          ht = h["t"].get<int>();
      }
      if (hs + ht < 1) out.push_back("/horizons: s + t must be at least 1");
    }
  }

  if (j.contains("bftc")) {
    const json& b = j["bftc"];
    if (!b.is_object()) {
      out.push_back("/bftc: must be an object");
    } else {
      check_unknown_keys(b, {"paths", "check_timechange"}, "/bftc", out);
      if (b.contains("paths") && !(is_integer(b["paths"]) && b["paths"].get<long long>() > 0))
        out.push_back("/bftc/paths: must be a positive integer");
      if (b.contains("check_timechange") && !b["check_timechange"].is_boolean())
        out.push_back("/bftc/check_timechange: must be a boolean");
    }
  }

  if (j.contains("diagnostics")) {
    const json& d = j["diagnostics"];
    if (!d.is_object()) {
      out.push_back("/diagnostics: must be an object");
    } else {
      check_unknown_keys(d, {"level", "n_perm", "max_points"}, "/diagnostics", out);
      double level = 0.001;
      long long n_perm = 999;
      bool fields_ok = true;
      if (d.contains("level")) {
        const bool ok = d["level"].is_number() && d["level"].get<double>() > 0.0 &&
                        d["level"].get<double>() <= 0.5;
        if (!ok) {
          out.push_back("/diagnostics/level: must lie in (0, 0.5]");
          fields_ok = false;
        } else {
          level = d["level"].get<double>();
        }
      }
      if (d.contains("n_perm")) {
        if (!(is_integer(d["n_perm"]) && d["n_perm"].get<long long>() >= 19)) {
          out.push_back("/diagnostics/n_perm: must be an integer >= 19");
          fields_ok = false;
        } else {
          n_perm = d["n_perm"].get<long long>();
        }
      }
      // Gated tests fail at p <= level and the smallest attainable p is
      // 1/(n_perm + 1), so fewer replicates would make the gates vacuous.
      if (fields_ok && static_cast<double>(n_perm + 1) * level < 1.0)
        out.push_back("/diagnostics/n_perm: " + std::to_string(n_perm) +
                      " replicates cannot resolve level " + format_double(level) +
                      " (need n_perm >= 1/level - 1)");
      if (d.contains("max_points") &&
          !(is_integer(d["max_points"]) && d["max_points"].get<long long>() >= 100))
        out.push_back("/diagnostics/max_points: must be an integer >= 100");
    }
  }

  if (j.contains("out_dir") &&
      !(j["out_dir"].is_string() && !j["out_dir"].get<std::string>().empty()))
    out.push_back("/out_dir: must be a non-empty string");

  return out;
}

ExperimentConfig config_from_json_text(const std::string& text, const std::string& base_dir) {
  const std::vector<std::string> problems = validate_config_text(text, base_dir);
  if (!problems.empty()) {
    std::string joined = "invalid experiment config:";
    for (const auto& p : problems) joined += "\n  " + p;
    throw DomainError(joined);
  }

  const json j = json::parse(text);
  ExperimentConfig c;
  c.seed = j["seed"].get<std::uint64_t>();
  if (j.contains("model")) {
    c.model = model_from_json_text(j["model"].dump());
  } else {
    const std::string path = resolve_path(base_dir, j["model_file"].get<std::string>());
    c.model = model_from_json_text(read_text_file(path));
  }
  if (j.contains("simulate")) {
    const json& s = j["simulate"];
    if (s.contains("n")) c.sim_n = s["n"].get<long>();
    if (s.contains("burn_in")) c.burn_in = s["burn_in"].get<long>();
  }
  if (j.contains("thresholds")) c.thresholds = j["thresholds"].get<std::vector<double>>();
  if (j.contains("horizons")) {
    const json& h = j["horizons"];
    if (h.contains("s")) c.s = h["s"].get<int>();
    if (h.contains("t")) c.t = h["t"].get<int>();
  }
  if (j.contains("bftc")) {
    const json& b = j["bftc"];
    if (b.contains("paths")) c.bftc_paths = b["paths"].get<long>();
    if (b.contains("check_timechange")) c.check_timechange = b["check_timechange"].get<bool>();
  }
  if (j.contains("diagnostics")) {
    const json& d = j["diagnostics"];
    if (d.contains("level")) c.level = d["level"].get<double>();
    if (d.contains("n_perm")) c.n_perm = d["n_perm"].get<int>();
    if (d.contains("max_points")) c.max_points = d["max_points"].get<std::size_t>();
  }
  if (j.contains("out_dir")) c.out_dir = j["out_dir"].get<std::string>();
  return c;
}

std::vector<std::string> validate_config(const std::string& path) {
  const std::string dir = std::filesystem::path(path).parent_path().string();
  return validate_config_text(read_text_file(path), dir);
}

ExperimentConfig load_config(const std::string& path) {
  const std::string dir = std::filesystem::path(path).parent_path().string();
  return config_from_json_text(read_text_file(path), dir);
}

ExperimentReport run_experiment(const ExperimentConfig& config) {
  ExperimentReport rep;
  ReportSink sink{rep};
  json diag;

  std::filesystem::create_directories(config.out_dir);
  const auto path_of = [&config](const std::string& name) { return config.out_dir + "/" + name; };

  RngStream root(config.seed);

  // Adjointness gate: BftcSpec::checked runs inside the model's bftc factory
  // and throws KernelMismatch on failure, so reaching the next line is a pass.
  RngStream gate_stream = root.child(1);
  BftcSpec chain = config.model.bftc(gate_stream);
  sink.gate("adjointness", true, "forward and backward kernels are mutually adjoint");

  // Simulation.
  ModelSpec model = config.model.model();
  const long burn = config.burn_in < 0 ? model.default_burn_in : config.burn_in;
  RngStream sim_stream = root.child(2);
  Trajectory traj = simulate_with(model, config.sim_n, burn, sim_stream);
  write_matrix_le(path_of("traj.bin"), traj.data, traj.n, traj.d);
  rep.files.push_back("traj.bin");
  Sidecar side;
  side.d = traj.d;
  side.n = traj.n;
  side.seed = config.seed;
  side.model = config.model.type;
  write_sidecar(sidecar_path(path_of("traj.bin")), side);
  rep.files.push_back("traj.bin.json");

  // Marginal diagnostics (information only).
  const StationarityReport st = stationarity_diagnostic(traj);
  diag["stationarity"] = {{"first_half", st.first_half},
                          {"levels", st.levels},
                          {"max_rel_gap", st.max_rel_gap},
                          {"second_half", st.second_half}};
  sink.info("stationarity: max relative half-sample quantile gap " +
            format_double(st.max_rel_gap));

  std::vector<double> norms = trajectory_norms(traj);
  const std::size_t hill_k =
      std::min<std::size_t>(std::max<long>(200, traj.n / 1000), norms.size() / 2);
  try {
    const double alpha_hat = hill_alpha(norms, hill_k);
    diag["hill"] = {{"alpha_hat", alpha_hat}, {"k", hill_k}, {"model_alpha", model.alpha}};
    sink.info("tail index: hill estimate " + format_double(alpha_hat) + " at k=" +
              std::to_string(hill_k) + " (model alpha " + format_double(model.alpha) + ")");
  } catch (const DegenerateSample& e) {
    diag["hill"] = nullptr;
    sink.info(std::string("tail index: hill estimator degenerate (") + e.what() + ")");
  }

  // Window laws against the tail chain, one comparison per threshold; only the
  // highest threshold is close enough to the limit to gate on.
  const int width = (config.s + 1 + config.t) * traj.d;
  json thr_records = json::array();
  RngStream thr_root = root.child(3);
  for (std::size_t k = 0; k < config.thresholds.size(); ++k) {
    const double pct = config.thresholds[k];
    const bool top = k + 1 == config.thresholds.size();
    const double x = threshold_at_percentile(norms, pct);
    std::vector<ExtremeWindow> windows = extract_windows(traj, x, config.s, config.t);

    const std::string wname = "windows_p" + pct_tag(pct) + ".csv";
    write_windows_csv(path_of(wname), windows);
    rep.files.push_back(wname);

    Vec window_rows;
    window_rows.reserve(windows.size() * width);
    for (const ExtremeWindow& w : windows)
      window_rows.insert(window_rows.end(), w.normalized.begin(), w.normalized.end());

    RngStream ts = thr_root.child(k);
    RngStream draw_stream = ts.child(1);
    const Vec chain_rows = sample_bftc_rows(chain, config.s, config.t, config.bftc_paths,
                                            draw_stream);
    RngStream perm_stream = ts.child(2);
    TwoSampleResult res = energy_permutation_test(
        window_rows, windows.size(), chain_rows, static_cast<std::size_t>(config.bftc_paths),
        width, config.n_perm, perm_stream, config.max_points, config.level);
    res.test = "windows-vs-tail-chain-p" + format_double(pct);
    const std::string detail = "p=" + format_double(res.p_value) + " (statistic " +
                               format_double(res.statistic) + ", " +
                               std::to_string(windows.size()) + " windows)";
    if (top)
      sink.gate(res.test, res.p_value > config.level, detail);
    else
      sink.info(res.test + ": " + detail);
    thr_records.push_back({{"gated", top},
                           {"percentile", pct},
                           {"test", json::parse(two_sample_to_json(res))},
                           {"value", x},
                           {"windows", windows.size()}});

    if (top && config.t >= 1) {
      // One-step forward law: X_1 / ||X_0|| over exceedances against M_1.
      Vec x1;
      x1.reserve(windows.size() * traj.d);
      for (const ExtremeWindow& w : windows) {
        const auto b = w.at(1);
        x1.insert(x1.end(), b.begin(), b.end());
      }
      RngStream fwd_stream = ts.child(3);
      Vec y1;
      y1.reserve(static_cast<std::size_t>(config.bftc_paths) * traj.d);
      for (long i = 0; i < config.bftc_paths; ++i) {
        const Vec m0 = chain.m0_law().sample(fwd_stream);
        const Vec m1 = chain.forward().sample(m0, fwd_stream);
        y1.insert(y1.end(), m1.begin(), m1.end());
      }
      RngStream perm1_stream = ts.child(4);
      TwoSampleResult r1 = energy_permutation_test(
          x1, windows.size(), y1, static_cast<std::size_t>(config.bftc_paths), traj.d,
          config.n_perm, perm1_stream, config.max_points, config.level);
      r1.test = "one-step-forward";
      sink.gate(r1.test, r1.p_value > config.level,
                "p=" + format_double(r1.p_value) + " (statistic " + format_double(r1.statistic) +
                    ")");
      diag["one_step_test"] = json::parse(two_sample_to_json(r1));
    }
  }
  diag["thresholds"] = thr_records;

  // Model-specific closed-form checks.
  json model_checks;
  if (config.model.type == "ar1") {
    const Ar1Spec& spec = *config.model.ar1;
    const Ar1TailDecomposition dec = ar1_tail_decomposition(spec);
    const double p0 = 1.0 / dec.c_sum;
    const long n_ext = 100000;
    RngStream ext_stream = root.child(4);
    std::uint64_t extinct = 0;
    for (long i = 0; i < n_ext; ++i) {
      const Vec m0 = chain.m0_law().sample(ext_stream);
      const Vec back = chain.backward().sample(m0, ext_stream);
      if (is_zero(back)) ++extinct;
    }
    const double observed = static_cast<double>(extinct) / static_cast<double>(n_ext);
    const bool ok = binomial_ci_contains(p0, extinct, static_cast<std::uint64_t>(n_ext), 0.999);
    sink.gate("backward-extinction", ok,
              "observed " + format_double(observed) + " vs analytic " + format_double(p0) +
                  " over " + std::to_string(n_ext) + " draws");
    model_checks["backward_extinction"] = {{"analytic_p0", p0},
                                           {"draws", n_ext},
                                           {"extinct", extinct},
                                           {"passed", ok}};
    sink.info("age mixture: " + std::to_string(dec.n_max + 1) + " retained terms, weight sum " +
              format_double(dec.c_sum) + ", relative remainder " +
              format_double(dec.remainder));
    model_checks["age_mixture"] = {{"c_sum", dec.c_sum},
                                   {"n_terms", dec.n_max + 1},
                                   {"remainder", dec.remainder}};
  } else {
    const KestenOrthogonalSpec& spec = *config.model.kesten;
    const KestenBackwardLaw law = kesten_backward_increment(spec);
    if (!law.degenerate) {
      const long n_ks = 100000;
      RngStream ks_stream = root.child(5);
      std::vector<double> radii(n_ks);
      for (double& r : radii) r = law.sample_radius(ks_stream);
      const KsResult kr = ks_test_one_sample(std::move(radii), law.cdf);
      const bool ok = kr.p_value > config.level;
      sink.gate("backward-radius-ks", ok,
                "p=" + format_double(kr.p_value) + " (statistic " + format_double(kr.statistic) +
                    ", density integral " + format_double(law.integral) + ")");
      model_checks["backward_radius_ks"] = {{"density_integral", law.integral},
                                            {"n", n_ks},
                                            {"p_value", kr.p_value},
                                            {"statistic", kr.statistic}};
    } else {
      sink.info("backward radius: degenerate (R* == 1), nothing to test");
    }
    RngStream fp_stream = root.child(6);
    std::vector<GapEstimate> detail;
    const double gap = kesten_spectral_fixedpoint_gap(spec, 200000, fp_stream, &detail);
    sink.info("uniform-angle fixed point: max battery gap " + format_double(gap));
    json fp = json::array();
    for (const GapEstimate& g : detail)
      fp.push_back({{"ci", g.ci_halfwidth}, {"estimate", g.estimate}});
    model_checks["fixedpoint"] = {{"battery", fp}, {"max_gap", gap}};
  }
  diag["model_checks"] = model_checks;

  // Reference sample of full tail-chain windows.
  {
    RngStream path_stream = root.child(7);
    const Vec rows = sample_bftc_rows(chain, config.s, config.t, config.bftc_paths, path_stream);
    std::vector<std::string> header;
    header.reserve(width);
    for (int j = -config.s; j <= config.t; ++j)
      for (int c = 0; c < traj.d; ++c)
        header.push_back("m" + std::to_string(j) + "_" + std::to_string(c));
    write_rows_csv(path_of("bftc_paths.csv"), rows, static_cast<std::size_t>(config.bftc_paths),
                   width, header);
    rep.files.push_back("bftc_paths.csv");
  }

  // Shift family of weighted window expectations: all members must agree.
  json families;
  RngStream fam_root = root.child(8);
  const std::vector<TestFunctional> battery = standard_functionals();
  const long n_fam = std::max<long>(config.bftc_paths, 20000);
  for (std::size_t f = 0; f < battery.size(); ++f) {
    RngStream fam_stream = fam_root.child(f);
    const std::vector<GapEstimate> family =
        timechange_family(battery[f], chain, config.s, config.t, n_fam, fam_stream);
    const std::string fname = "family_" + battery[f].name() + ".csv";
    write_family_csv(path_of(fname), family);
    rep.files.push_back(fname);

    json members = json::array();
    for (const GapEstimate& g : family)
      members.push_back({{"ci", g.ci_halfwidth}, {"estimate", g.estimate}});
    families[battery[f].name()] = members;

    bool ok = true;
    bool first = true;
    double worst_gap = 0.0, worst_allow = 0.0;
    for (std::size_t i = 0; i < family.size(); ++i)
      for (std::size_t j = i + 1; j < family.size(); ++j) {
        const double gap = std::fabs(family[i].estimate - family[j].estimate);
        const double allow = family[i].ci_halfwidth + family[j].ci_halfwidth;
        if (first || gap - allow > worst_gap - worst_allow) {
          worst_gap = gap;
          worst_allow = allow;
          first = false;
        }
        if (gap > allow) ok = false;
      }
    const std::string detail = "max pairwise gap " + format_double(worst_gap) +
                               " vs allowance " + format_double(worst_allow) + " at n=" +
                               std::to_string(n_fam);
    if (config.check_timechange)
      sink.gate("timechange-" + battery[f].name(), ok, detail);
    else
      sink.info("timechange-" + battery[f].name() + ": " + detail);
  }
  diag["families"] = families;

  diag["config"] = {{"bftc_paths", config.bftc_paths},
                    {"burn_in_used", burn},
                    {"check_timechange", config.check_timechange},
                    {"level", config.level},
                    {"max_points", config.max_points},
                    {"model_type", config.model.type},
                    {"n_perm", config.n_perm},
                    {"s", config.s},
                    {"seed", config.seed},
                    {"sim_n", config.sim_n},
                    {"t", config.t},
                    {"thresholds", config.thresholds}};
  diag["gates"] = sink.gates;
  diag["info"] = sink.infos;
  diag["passed"] = rep.passed;
  write_text_file(path_of("diagnostics.json"), diag.dump(2) + "\n");
  rep.files.push_back("diagnostics.json");

  std::ostringstream sum;
  sum << "tailchain experiment summary (" << utc_stamp() << ")\n";
  sum << "model: " << config.model.type << ", d=" << config.model.dim()
      << ", alpha=" << format_double(config.model.alpha()) << ", seed=" << config.seed << "\n\n";
  sum << "gated checks:\n";
  for (const std::string& line : rep.gate_lines) sum << "  " << line << "\n";
  sum << "\nnotes:\n";
  for (const std::string& line : rep.info_lines) sum << "  " << line << "\n";
  sum << "\nfiles:\n";
  for (const std::string& f : rep.files) sum << "  " << f << "\n";
  sum << "  summary.txt\n";
  sum << "\nresult: " << (rep.passed ? "PASS" : "FAIL") << "\n";
  write_text_file(path_of("summary.txt"), sum.str());
  rep.files.push_back("summary.txt");

  return rep;
}

}  // namespace tailchain
