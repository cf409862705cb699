#include "rkb/cli.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "rkb/error.hpp"
#include "rkb/gexp.hpp"
#include "rkb/io.hpp"
#include "rkb/kalman.hpp"
#include "rkb/mmse.hpp"
#include "rkb/robust.hpp"
#include "rkb/sde.hpp"

namespace rkb {

std::string bundled_config_path() { return std::string(RKB_DATA_DIR) + "/scalar.json"; }

namespace {

// Raised by subcommands whose numerical self-check failed; carries the exit code 2.
struct NumericalFailure {
  std::string what;
};

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  int threads = 0;
  std::string out_dir;
};

struct Context {
  const Globals& g;
  std::ostream& out;
  std::ostream& err;

  Config config(bool fallback_to_bundled) const {
    if (!g.config.empty()) return load_config_file(g.config);
    if (fallback_to_bundled) return load_config_file(bundled_config_path());
    throw Error(ErrorCode::missing_key, "--config is required for this subcommand");
  }

  std::uint64_t seed(const Config* cfg) const {
    if (g.seed) return *g.seed;
    if (cfg && cfg->settings.seed) return *cfg->settings.seed;
    throw Error(ErrorCode::missing_key, "a seed is required (--seed or 'seed' in the config)");
  }

  void apply_threads(const Config* cfg) const {
    const int t = g.threads > 0 ? g.threads : (cfg ? cfg->settings.threads : 1);
    omp_set_num_threads(std::max(t, 1));
  }

  std::string out_dir(const Config* cfg) const {
    if (!g.out_dir.empty()) return g.out_dir;
    if (const char* env = std::getenv("RKB_OUT_DIR"); env && *env) return env;
    return cfg ? cfg->settings.out_dir : std::string();
  }

  // Relative output paths land in the output directory when one is set.
  std::string resolve(const std::string& path, const Config* cfg) const {
    const std::string dir = out_dir(cfg);
    std::filesystem::path p(path);
    if (dir.empty() || p.is_absolute()) return path;
    std::filesystem::create_directories(dir);
    return (std::filesystem::path(dir) / p).string();
  }

  void emit_csv(const std::string& path, const CsvTable& table, const Config* cfg) const {
    if (path.empty()) {
      write_csv(out, table);
    } else {
      write_csv_file(resolve(path, cfg), table);
    }
  }

  void emit_json(const std::string& path, const Report& report, const Config* cfg) const {
    if (path.empty()) {
      out << emit_report(report);
    } else {
      write_text_file(resolve(path, cfg), emit_report(report));
    }
  }
};

std::vector<std::string> indexed(const std::string& stem, std::size_t count) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < count; ++i) out.push_back(stem + std::to_string(i + 1));
  return out;
}

void append(std::vector<std::string>& a, const std::vector<std::string>& b) { a.insert(a.end(), b.begin(), b.end()); }

CsvTable filter_table(const FilterOutput& f, const TimeGrid& grid, const ThetaPath* theta) {
  const auto n = f.x_hat.rows();
  CsvTable t;
  t.header = {"t"};
  append(t.header, indexed("x_hat", static_cast<std::size_t>(n)));
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) t.header.push_back("P" + std::to_string(i + 1) + std::to_string(j + 1));
  }
  if (theta) {
    append(t.header, indexed("theta1_", theta->n()));
    append(t.header, indexed("theta2_", theta->m()));
  }
  for (std::size_t k = 0; k < grid.points(); ++k) {
    std::vector<double> row{grid.time(k)};
    for (Eigen::Index i = 0; i < n; ++i) row.push_back(f.x_hat(i, static_cast<Eigen::Index>(k)));
    const Mat& P = f.riccati.P[k];
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < n; ++j) row.push_back(P(i, j));
    }
    if (theta) {
      for (double v : theta->theta1()[k]) row.push_back(v);
      for (double v : theta->theta2()[k]) row.push_back(v);
    }
    t.rows.push_back(std::move(row));
  }
  return t;
}

Mat read_observations(const std::string& path, const Config& cfg) {
  if (path.empty()) throw Error(ErrorCode::missing_key, "--obs is required");
  return observations_from_csv(read_csv_file(path), cfg.grid, cfg.model.m);
}

int cmd_simulate(const Context& ctx, const std::string& theta_spec, std::optional<std::size_t> paths,
                 const std::string& out_path) {
  const Config cfg = ctx.config(false);
  ctx.apply_threads(&cfg);
  const std::uint64_t seed = ctx.seed(&cfg);
  const ThetaPath theta = parse_theta_spec(theta_spec, cfg.model.n, cfg.model.m, cfg.grid);
  SimulationOptions opt;
  opt.mu = cfg.ambiguity.mu;
  const std::size_t n_paths = paths.value_or(cfg.settings.n_paths);
  const PathBatch batch = simulate_paths(cfg.model, cfg.grid, theta, n_paths, seed, opt);

  CsvTable t;
  t.header = {"path_id", "t"};
  append(t.header, indexed("x", cfg.model.n));
  append(t.header, indexed("m", cfg.model.m));
  t.header.push_back("f_theta");
  for (std::size_t p = 0; p < batch.paths.size(); ++p) {
    const SamplePath& path = batch.paths[p];
    for (std::size_t k = 0; k < cfg.grid.points(); ++k) {
      const auto kk = static_cast<Eigen::Index>(k);
      std::vector<double> row{static_cast<double>(p), cfg.grid.time(k)};
      for (Eigen::Index i = 0; i < path.x.rows(); ++i) row.push_back(path.x(i, kk));
      for (Eigen::Index j = 0; j < path.m_obs.rows(); ++j) row.push_back(path.m_obs(j, kk));
      row.push_back(path.f_theta(kk));
      t.rows.push_back(std::move(row));
    }
  }
  ctx.emit_csv(out_path, t, &cfg);
  return exit_ok;
}

int cmd_filter(const Context& ctx, const std::string& obs_path, const std::string& out_path) {
  const Config cfg = ctx.config(false);
  ctx.apply_threads(&cfg);
  const Mat obs = read_observations(obs_path, cfg);
  const FilterOutput f = classical_filter(cfg.model, cfg.grid, obs);
  ctx.emit_csv(out_path, filter_table(f, cfg.grid, nullptr), &cfg);
  return exit_ok;
}

int cmd_robust_filter(const Context& ctx, std::string generator, std::optional<double> mu,
                      std::optional<double> t_star, const std::string& obs_path, const std::string& out_path,
                      const std::string& report_path) {
  const Config cfg = ctx.config(false);
  ctx.apply_threads(&cfg);
  if (generator.empty()) generator = cfg.settings.generator;
  const Mat obs = read_observations(obs_path, cfg);
  const ConcaveDual G = concave_dual(parse_generator(generator), cfg.model.n, cfg.model.m);
  const RobustProblem problem =
      make_problem(cfg.model, cfg.grid, G, mu.value_or(cfg.ambiguity.mu), t_star.value_or(cfg.grid.horizon()));
  const SaddleReport rep = certify_saddle(problem, &obs);
  const FilterOutput classical = classical_filter(cfg.model, cfg.grid, obs);
  const double diff = (rep.estimator->x_hat - classical.x_hat).cwiseAbs().maxCoeff();

  ctx.emit_csv(out_path, filter_table(*rep.estimator, cfg.grid, &rep.theta_star), &cfg);

  bool constant = true;
  for (std::size_t k = 1; k < rep.theta_star.theta1().size(); ++k) {
    constant = constant && rep.theta_star.theta1()[k] == rep.theta_star.theta1()[0] &&
               rep.theta_star.theta2()[k] == rep.theta_star.theta2()[0];
  }
  const bool ok = rep.gap >= -cfg.settings.gap_tol;
  Report r;
  r["subcommand"] = "robust-filter";
  r["generator"] = generator;
  r["mu"] = problem.mu;
  r["t_star"] = problem.t_star;
  r["theta_star"] = {{"theta1", to_json(rep.theta_star.theta1()[0])},
                     {"theta2", to_json(rep.theta_star.theta2()[0])},
                     {"constant", constant}};
  r["lower_value"] = rep.lower_value;
  r["upper_value"] = rep.upper_value;
  r["gap"] = rep.gap;
  r["variance"] = rep.variance;
  r["penalty"] = rep.penalty;
  r["classical_max_abs_diff"] = diff;
  r["tolerances"] = {{"gap_tol", cfg.settings.gap_tol}};
  r["status"] = ok ? "ok" : "gap below tolerance";
  ctx.emit_json(report_path, r, &cfg);
  if (!ok) throw NumericalFailure{"saddle gap " + format_number(rep.gap) + " below -" + format_number(cfg.settings.gap_tol)};
  return exit_ok;
}

int cmd_dual_check(const Context& ctx, std::string generator, std::optional<std::size_t> paths,
                   std::optional<double> radius, std::optional<double> spacing, const std::string& out_path) {
  const Config cfg = ctx.config(false);
  ctx.apply_threads(&cfg);
  const std::uint64_t seed = ctx.seed(&cfg);
  if (cfg.model.n != 1 || cfg.model.m != 1) throw Error(ErrorCode::dimension_mismatch, "dual-check needs a scalar model");
  if (generator.empty()) generator = cfg.settings.generator;
  const Generator g = parse_generator(generator);
  const ConcaveDual G = concave_dual(g, 1, 1);
  const std::size_t n_paths = paths.value_or(cfg.settings.n_paths);
  const double r = radius.value_or(g.kappa);
  const double h = spacing.value_or(r > 0.0 ? r / 4.0 : 1.0);
  const Terminal xi = [](double x, double) { return x; };

  const BsdeResult y = bsde_solve(g, xi, cfg.model, cfg.grid, n_paths, seed);
  const DualValue d = dual_value(xi, G, cfg.model, cfg.grid, constant_theta_family(G, cfg.grid, r, h), n_paths, seed);
  const double gap = y.y0 - d.value;
  const double gap_se = std::hypot(y.std_error, d.std_error);

  CsvTable t;
  t.header = {"bsde_value", "bsde_se", "dual_value", "dual_se", "gap", "gap_se"};
  t.rows.push_back({y.y0, y.std_error, d.value, d.std_error, gap, gap_se});
  write_csv(ctx.out, t);
  if (!out_path.empty()) write_csv_file(ctx.resolve(out_path, &cfg), t);
  if (gap < -4.0 * gap_se) throw NumericalFailure{"dual value exceeds the BSDE value by more than 4 standard errors"};
  return exit_ok;
}

Report saddle_json(const SaddleCheck& s) {
  Report r;
  r["max_violation"] = s.max_violation;
  r["vertex_violation"] = s.vertex_violation;
  r["estimator_violation"] = s.estimator_violation;
  r["conditional_mean_error"] = s.conditional_mean_error;
  return r;
}

int cmd_mmse_finite(const Context& ctx, const std::string& space_path, const std::string& xi_path,
                    const std::string& out_path) {
  std::optional<Config> cfg;
  if (!ctx.g.config.empty()) cfg = ctx.config(false);
  ctx.apply_threads(cfg ? &*cfg : nullptr);
  const std::uint64_t seed = ctx.seed(cfg ? &*cfg : nullptr);
  const double gap_tol = cfg ? cfg->settings.gap_tol : 1e-8;
  if (space_path.empty()) throw Error(ErrorCode::missing_key, "--space is required");
  FiniteSpace space = load_finite_space(space_path);
  if (!xi_path.empty()) space.xi = read_vector_csv(xi_path);
  if (space.xi.size() == 0) throw Error(ErrorCode::missing_key, "xi must come from --xi or the space document");

  MmseOptions opt;
  opt.seed = seed;
  opt.gap_tol = gap_tol;
  const MmseResult res = conditional_mmse(space.op, space.xi, space.C, opt);
  const SaddleCheck sc = saddle_check(space.op, space.xi, space.C, res, 100, seed);
  const StabilityReport st = check_stability(space.op, space.C);
  const PropertyReport pr = property_suite(space.op, space.C, seed);

  Report r;
  r["subcommand"] = "mmse-finite";
  r["seed"] = seed;
  r["eta_hat"] = to_json(res.eta_hat);
  r["value"] = res.value;
  r["lambda_star"] = to_json(res.lambda_star);
  r["gap"] = res.saddle_gap;
  r["start_index"] = res.start_index;
  r["saddle_check"] = saddle_json(sc);
  r["stable"] = st.stable;
  r["properties"] = {{"bounds", pr.bounds},
                     {"symmetry", pr.symmetry},
                     {"translation", pr.translation},
                     {"independence", pr.independence},
                     {"bounds_error", pr.bounds_error},
                     {"symmetry_error", pr.symmetry_error},
                     {"translation_error", pr.translation_error},
                     {"independence_error", pr.independence_error}};
  r["tolerances"] = {{"gap_tol", gap_tol}, {"property_tol", 1e-8}};
  ctx.emit_json(out_path, r, cfg ? &*cfg : nullptr);
  if (sc.max_violation > gap_tol) throw NumericalFailure{"saddle check violation " + format_number(sc.max_violation)};
  if (!pr.all()) throw NumericalFailure{"property suite failed"};
  return exit_ok;
}

int cmd_selfcheck(const Context& ctx) {
  const Config cfg = ctx.config(true);
  ctx.apply_threads(&cfg);
  const std::uint64_t seed = ctx.seed(&cfg);
  bool all_ok = true;
  auto line = [&](const std::string& name, bool ok, const std::string& detail) {
    ctx.out << (ok ? "ok   " : "FAIL ") << name << "  " << detail << '\n';
    all_ok = all_ok && ok;
  };

  line("config round trip", load_config(serialize_config(cfg)) == cfg, "serialize then load");

  const RiccatiSolution ric = riccati_solve(cfg.model, cfg.grid);
  double asym = 0.0, min_eig = 0.0;
  for (const Mat& P : ric.P) {
    asym = std::max(asym, asymmetry(P));
    min_eig = std::min(min_eig, min_eigenvalue(P));
  }
  line("riccati symmetric psd", asym == 0.0 && min_eig >= -1e-12,
       "asymmetry " + format_number(asym) + ", min eigenvalue " + format_number(min_eig));

  const PathBatch batch = simulate_paths(cfg.model, cfg.grid, ThetaPath::zero(cfg.model.n, cfg.model.m, cfg.grid.points()),
                                         1, seed);
  const Mat& obs = batch.paths[0].m_obs;
  const FilterOutput classical = classical_filter(cfg.model, cfg.grid, obs, ric);
  const FilterOutput robust0 =
      robust_filter(cfg.model, cfg.grid, ThetaPath::zero(cfg.model.n, cfg.model.m, cfg.grid.points()), obs, ric);
  line("zero theta reduces to classical", robust0.x_hat == classical.x_hat, "bitwise comparison");

  const Generator g = parse_generator(cfg.settings.generator);
  const ConcaveDual G = concave_dual(g, cfg.model.n, cfg.model.m);
  const Vec z1 = Vec::Zero(static_cast<Eigen::Index>(cfg.model.n)), z2 = Vec::Zero(static_cast<Eigen::Index>(cfg.model.m));
  const GeneratorCheck gc = spot_check(g, cfg.model.n, cfg.model.m, 200, seed);
  line("generator normalized, lipschitz, convex",
       gc.normalization == 0.0 && gc.lipschitz_excess <= 1e-12 && gc.convexity_excess <= 1e-12 && G(0.0, z1, z2) == 0.0,
       "lipschitz excess " + format_number(gc.lipschitz_excess) + ", convexity excess " +
           format_number(gc.convexity_excess));

  const RobustProblem problem = make_problem(cfg.model, cfg.grid, G, cfg.ambiguity.mu, cfg.grid.horizon());
  const SaddleReport rep = certify_saddle(problem);
  line("saddle gap nonnegative", rep.gap >= -cfg.settings.gap_tol,
       "lower " + format_number(rep.lower_value) + ", upper " + format_number(rep.upper_value) + ", gap " +
           format_number(rep.gap));

  auto rng = stream_rng(seed, 1);
  const Instance inst = random_instance(rng);
  MmseOptions opt;
  opt.seed = seed;
  const MmseResult res = conditional_mmse(inst.op, inst.xi, inst.C, opt);
  const SaddleCheck sc = saddle_check(inst.op, inst.xi, inst.C, res, 100, seed);
  line("finite mmse saddle", sc.max_violation <= cfg.settings.gap_tol, "max violation " + format_number(sc.max_violation));

  ctx.out << (all_ok ? "selfcheck passed" : "selfcheck FAILED") << '\n';
  if (!all_ok) throw NumericalFailure{"selfcheck failed"};
  return exit_ok;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Robust Kalman-Bucy filtering under drift uncertainty", "rkb"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "Model configuration (JSON)");
  app.add_option("--seed", g.seed, "Random seed");
  app.add_option("--threads", g.threads, "Worker threads (default 1)");
  app.add_option("--out-dir", g.out_dir, "Directory for relative output paths (env RKB_OUT_DIR)");

  std::function<int()> action;
  Context ctx{g, out, err};

  std::string theta_spec = "zero", out_path, obs_path, report_path, generator, space_path, xi_path;
  std::optional<std::size_t> paths;
  std::optional<double> mu, t_star, radius, spacing;

  auto* sim = app.add_subcommand("simulate", "Simulate signal/observation paths under a prior");
  sim->add_option("--theta", theta_spec, "zero | const:a1,..,a_{n+m} | file:PATH");
  sim->add_option("--paths", paths, "Number of paths");
  sim->add_option("--out", out_path, "Output CSV (stdout when omitted)");
  sim->callback([&] { action = [&] { return cmd_simulate(ctx, theta_spec, paths, out_path); }; });

  auto* fil = app.add_subcommand("filter", "Classical Kalman-Bucy filter on observed data");
  fil->add_option("--obs", obs_path, "Observation CSV (t, m...)");
  fil->add_option("--out", out_path, "Output CSV");
  fil->callback([&] { action = [&] { return cmd_filter(ctx, obs_path, out_path); }; });

  auto* rob = app.add_subcommand("robust-filter", "Minimax robust filter with saddle certification");
  rob->add_option("--generator", generator, "zero | norm:k | hyperbolic:k");
  rob->add_option("--mu", mu, "Ambiguity bound");
  rob->add_option("--t-star", t_star, "Evaluation time");
  rob->add_option("--obs", obs_path, "Observation CSV");
  rob->add_option("--out", out_path, "Output CSV");
  rob->add_option("--report", report_path, "Report JSON");
  rob->callback([&] {
    action = [&] { return cmd_robust_filter(ctx, generator, mu, t_star, obs_path, out_path, report_path); };
  });

  auto* dual = app.add_subcommand("dual-check", "BSDE value against the dual lower bound for xi = x(T)");
  dual->add_option("--generator", generator, "zero | norm:k | hyperbolic:k");
  dual->add_option("--paths", paths, "Monte Carlo paths");
  dual->add_option("--radius", radius, "Half-width of the constant theta family");
  dual->add_option("--spacing", spacing, "Lattice spacing of the theta family");
  dual->add_option("--out", out_path, "Also write the CSV row here");
  dual->callback([&] { action = [&] { return cmd_dual_check(ctx, generator, paths, radius, spacing, out_path); }; });

  auto* mm = app.add_subcommand("mmse-finite", "Conditional MMSE under a finite convex operator");
  mm->add_option("--space", space_path, "Finite space JSON");
  mm->add_option("--xi", xi_path, "Values of xi, one per state");
  mm->add_option("--out", out_path, "Output JSON");
  mm->callback([&] { action = [&] { return cmd_mmse_finite(ctx, space_path, xi_path, out_path); }; });

  auto* sc = app.add_subcommand("selfcheck", "Invariant suite on the bundled scalar configuration");
  sc->callback([&] { action = [&] { return cmd_selfcheck(ctx); }; });

  for (auto* sub : {sim, fil, rob, dual, mm, sc}) sub->fallthrough();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    if (dynamic_cast<const CLI::ExtrasError*>(&e) || dynamic_cast<const CLI::RequiredError*>(&e)) {
      err << "error: " << to_string(ErrorCode::unknown_subcommand)
          << ": expected one of simulate, filter, robust-filter, dual-check, mmse-finite, selfcheck\n";
    }
    app.exit(e, out, err);
    return exit_validation;
  }

  try {
    return action();
  } catch (const NumericalFailure& f) {
    err << "numerical check failed: " << f.what << '\n';
    return exit_numerical;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return exit_validation;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return exit_validation;
  }
}

int run(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace rkb
