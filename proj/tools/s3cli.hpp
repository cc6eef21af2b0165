#ifndef S3_TOOLS_S3CLI_HPP
#define S3_TOOLS_S3CLI_HPP

// Command implementations behind the s3 executable. Kept in a header so the
// test suite can drive them in-process.

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <iomanip>
#include <map>
#include <mutex>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "s3/s3.hpp"
#ifdef S3_WITH_ORACLE
#include "s3/oracle.hpp"
#endif

namespace s3::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

enum ExitCode : int { kOk = 0, kIo = 1, kPrecondition = 2, kNonConvergence = 3 };

struct Streams {
  std::ostream& out;
  std::ostream& err;
};

inline std::string fixed6(double v) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(6) << v;
  return s.str();
}

inline void emit(const Streams& io, bool as_json, const json& j,
                 const std::vector<std::pair<std::string, std::string>>& lines) {
  if (as_json) {
    io.out << j.dump(2) << '\n';
    return;
  }
  for (const auto& [k, v] : lines) io.out << k << ' ' << v << '\n';
}

// ---- divergence -----------------------------------------------------------

struct DivergenceArgs {
  std::string kind = "semibalanced";
  std::string source, target;
  double epsilon = 0.01;
  std::string cost = "sqeuclid";
  double tol = 1e-9;
  int max_iter = 500;
  bool json = false;
};

inline CostKind parse_cost(const std::string& s) {
  if (s == "sqeuclid") return CostKind::squared_euclidean;
  if (s == "euclid") return CostKind::euclidean;
  throw PreconditionError("unknown cost '" + s + "' (expected sqeuclid or euclid)");
}

inline int cmd_divergence(const DivergenceArgs& a, const Streams& io) {
  const GridMeasure alpha = read_grid(a.source);
  const PointMeasure beta = read_points(a.target);
  SolverConfig cfg;
  cfg.epsilon = a.epsilon;
  cfg.tolerance = a.tol;
  cfg.max_iterations = a.max_iter;
  cfg.validate();
  GridLossOptions opt;
  opt.cost_kind = parse_cost(a.cost);

  double value = 0.0, residual = 0.0;
  int iterations = 0;
  bool converged = true;
  const std::span<const double> w(alpha.values());
  const std::span<const double> b(beta.weights());

  if (a.kind == "semibalanced") {
    if (beta.empty() || !(mass(beta) > 0.0)) {
      value = semibalanced_loss(alpha, beta, cfg, opt).value;
    } else {
      detail::require_prediction_mass(w);
      const CostMatrix cross_cost = detail::grid_point_cost(alpha, beta, opt);
      DualPotentials cross = solve_semibalanced(w, b, DenseCost(cross_cost), cfg);
      DualPotentials self = detail::with_self_cost(
          alpha, opt, [&](const auto& c) { return symmetric_potential(w, c, cfg); });
      iterations = cross.iterations_used + self.iterations_used;
      residual = std::max(cross.final_residual, self.final_residual);
      converged = cross.converged && self.converged;
      cross.converged = self.converged = true;
      value = semibalanced_value(cross, w, b, self, cfg);
    }
  } else if (a.kind == "wasserstein" || a.kind == "sinkhorn") {
    detail::require_equal_mass(mass(w), mass(b));
    const CostMatrix cross_cost = detail::grid_point_cost(alpha, beta, opt);
    if (a.kind == "wasserstein") {
      DualPotentials pot = solve_balanced(w, b, DenseCost(cross_cost), cfg);
      iterations = pot.iterations_used;
      residual = pot.final_residual;
      converged = pot.converged;
      pot.converged = true;
      value = balanced_value(pot, w, b);
    } else {
      const double norm = default_normalization(alpha);
      const CostMatrix bb = build_cost(beta.points(), beta.points(), opt.cost_kind, norm);
      const DivergenceResult d = detail::with_self_cost(alpha, opt, [&](const auto& aa) {
        return sinkhorn_divergence(w, b, DenseCost(cross_cost), aa, DenseCost(bb), cfg);
      });
      value = d.value;
      iterations = d.iterations();
      residual = std::max({d.cross.final_residual, d.self_source.final_residual,
                           d.self_target.final_residual});
      converged = d.converged();
    }
  } else {
    throw PreconditionError("unknown kind '" + a.kind +
                            "' (expected wasserstein, sinkhorn or semibalanced)");
  }

  json j{{"command", "divergence"}, {"kind", a.kind},         {"value", value},
         {"iterations", iterations}, {"residual", residual}, {"converged", converged},
         {"epsilon", a.epsilon}};
  emit(io, a.json, j,
       {{"value", fixed6(value)},
        {"iterations", std::to_string(iterations)},
        {"residual", fixed6(residual)},
        {"converged", converged ? "true" : "false"}});
  if (!converged) {
    io.err << "warning: solver did not converge within " << a.max_iter << " iterations\n";
    return kNonConvergence;
  }
  return kOk;
}

// ---- fit ------------------------------------------------------------------

struct FitArgs {
  std::string points;
  std::vector<std::size_t> grid_size{32, 32};
  double cell_size = 1.0;
  std::string loss = "s3";
  double epsilon = 0.01;
  double lambda = 1.0;
  int epochs = 300;
  std::uint64_t seed = 0;
  double lr = 0.05;
  double sigma = 2.0;
  double tol = 1e-6;
  int max_iter = 500;
  bool randomize_scale = false;
  std::string out;
  bool json = false;
};

inline std::pair<FitConfig, LossConfig> make_configs(const FitArgs& a) {
  if (a.grid_size.size() != 2) throw PreconditionError("--grid-size takes two values: R C");
  FitConfig fc;
  fc.rows = a.grid_size[0];
  fc.cols = a.grid_size[1];
  fc.cell_size = a.cell_size;
  fc.epochs = a.epochs;
  fc.seed = a.seed;
  fc.adam.learning_rate = a.lr;
  fc.solver_tolerance = a.tol;
  fc.solver_max_iterations = a.max_iter;
  LossConfig lc;
  lc.kind = parse_loss_kind(a.loss);
  lc.epsilon = a.epsilon;
  lc.lambda = a.lambda;
  lc.gaussian_sigma = a.sigma;
  lc.randomize_scale = a.randomize_scale;
  fc.validate();
  lc.validate();
  return {fc, lc};
}

inline void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create output directory " + dir.string());
}

inline void write_fit_artifacts(const fs::path& dir, const FitResult& r) {
  write_file_atomic(dir / "density.csv", [&](std::ostream& os) { write_grid(os, r.grid); });
  write_file_atomic(dir / "density.pgm", [&](std::ostream& os) { write_pgm(os, r.grid); });
  write_file_atomic(dir / "trace.csv", [&](std::ostream& os) { write_trace(os, r.trace); });
}

inline int cmd_fit(const FitArgs& a, const Streams& io) {
  const PointMeasure points = read_points(a.points);
  const auto [fc, lc] = make_configs(a);
  const fs::path out(a.out);
  ensure_dir(out);
  FitResult r;
  try {
    r = fit_density_grid(points, fc, lc);
  } catch (const FitError& e) {
    write_file_atomic(out / "trace.csv", [&](std::ostream& os) { write_trace(os, e.trace()); });
    io.err << "error: " << e.what() << " (trace up to epoch " << e.epoch() - 1 << " written)\n";
    return kNonConvergence;
  }
  write_fit_artifacts(out, r);
  const double m = count_from_grid(r.grid), target = mass(points);
  const int nonconv = static_cast<int>(
      std::count_if(r.trace.begin(), r.trace.end(), [](const FitRecord& x) { return !x.converged; }));
  json j{{"command", "fit"},     {"loss", std::string(short_name(lc.kind))},
         {"final_mass", m},      {"count_error", std::abs(m - target)},
         {"target_count", target}, {"epochs", fc.epochs},
         {"nonconverged_epochs", nonconv}, {"out", out.string()}};
  emit(io, a.json, j,
       {{"final_mass", fixed6(m)},
        {"count_error", fixed6(std::abs(m - target))},
        {"nonconverged_epochs", std::to_string(nonconv)}});
  return kOk;
}

// ---- eval -----------------------------------------------------------------

struct EvalArgs {
  std::string pred, gt;
  bool json = false;
};

inline std::map<std::string, fs::path> csv_by_stem(const fs::path& dir) {
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) throw IoError("not a directory: " + dir.string());
  std::map<std::string, fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".csv") files[e.path().stem().string()] = e.path();
  }
  return files;
}

inline int cmd_eval(const EvalArgs& a, const Streams& io) {
  const auto preds = csv_by_stem(a.pred);
  const auto gts = csv_by_stem(a.gt);
  std::vector<double> p, t;
  std::vector<std::string> stems, unpaired;
  for (const auto& [stem, path] : preds) {
    const auto it = gts.find(stem);
    if (it == gts.end()) {
      unpaired.push_back(stem);
      continue;
    }
    stems.push_back(stem);
    p.push_back(count_from_grid(read_grid(path)));
    t.push_back(mass(read_points(it->second)));
  }
  for (const auto& [stem, path] : gts)
    if (!preds.contains(stem)) unpaired.push_back(stem);
  std::sort(unpaired.begin(), unpaired.end());
  for (const auto& s : unpaired) io.err << "warning: unpaired stem '" << s << "'\n";
  if (p.empty()) throw PreconditionError("eval: no prediction/ground-truth pairs");
  const CountMetrics cm = count_metrics(p, t);
  json j{{"command", "eval"}, {"pairs", p.size()}, {"mae", cm.mae}, {"mse", cm.mse},
         {"unpaired", unpaired}};
  emit(io, a.json, j,
       {{"pairs", std::to_string(p.size())}, {"MAE", fixed6(cm.mae)}, {"MSE", fixed6(cm.mse)}});
  return kOk;
}

// ---- sweep-epsilon --------------------------------------------------------

struct SweepArgs {
  FitArgs fit;
  std::vector<std::string> losses{"wd", "s3"};
  std::vector<double> epsilons{0.01, 0.05, 0.1, 0.5, 1.0};
};

struct SweepRow {
  std::string loss;
  double epsilon = 0.0;
  double count_err = 0.0;
  double mass = 0.0;
};

/// Worker count from S3_NUM_WORKERS, else the hardware concurrency.
inline unsigned worker_count(std::size_t jobs) {
  unsigned n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("S3_NUM_WORKERS")) {
    try {
      const long v = std::stol(env);
      if (v < 1) throw PreconditionError("S3_NUM_WORKERS must be >= 1");
      n = static_cast<unsigned>(v);
    } catch (const std::logic_error&) {
      throw PreconditionError(std::string("S3_NUM_WORKERS is not an integer: ") + env);
    }
  }
  return static_cast<unsigned>(std::min<std::size_t>(n, std::max<std::size_t>(jobs, 1)));
}

inline std::string run_dir_name(const std::string& loss, double eps) {
  std::ostringstream s;
  s << loss << "_eps" << eps;
  return s.str();
}

inline int cmd_sweep(const SweepArgs& a, const Streams& io) {
  const PointMeasure points = read_points(a.fit.points);
  if (a.losses.empty() || a.epsilons.empty()) {
    throw PreconditionError("sweep-epsilon: need at least one loss and one epsilon");
  }
  std::vector<std::pair<FitArgs, std::string>> jobs;
  for (const auto& loss : a.losses) {
    for (double eps : a.epsilons) {
      FitArgs f = a.fit;
      f.loss = loss;
      f.epsilon = eps;
      make_configs(f);  // validate everything before any fit runs
      jobs.emplace_back(f, std::string(short_name(parse_loss_kind(loss))));
    }
  }
  const fs::path out(a.fit.out);
  ensure_dir(out);

  std::vector<SweepRow> rows(jobs.size());
  std::vector<std::exception_ptr> errors(jobs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t k = next++; k < jobs.size(); k = next++) {
      try {
        const auto& [f, name] = jobs[k];
        const auto [fc, lc] = make_configs(f);
        const FitResult r = fit_density_grid(points, fc, lc);
        const fs::path dir = out / run_dir_name(name, f.epsilon);
        ensure_dir(dir);
        write_fit_artifacts(dir, r);
        const double m = count_from_grid(r.grid);
        rows[k] = {name, f.epsilon, std::abs(m - mass(points)), m};
      } catch (...) {
        errors[k] = std::current_exception();
      }
    }
  };
  {
    std::vector<std::jthread> pool;
    const unsigned nw = worker_count(jobs.size());
    for (unsigned w = 0; w < nw; ++w) pool.emplace_back(worker);
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  write_file_atomic(out / "sweep.csv", [&](std::ostream& os) {
    os << "loss,epsilon,count_err,mass\n" << std::setprecision(17);
    for (const auto& r : rows) os << r.loss << ',' << r.epsilon << ',' << r.count_err << ',' << r.mass << '\n';
  });

  std::vector<std::string> order;
  std::map<std::string, std::pair<double, double>> range;
  for (const auto& r : rows) {
    auto [it, fresh] = range.try_emplace(r.loss, r.count_err, r.count_err);
    if (fresh) order.push_back(r.loss);
    it->second.first = std::min(it->second.first, r.count_err);
    it->second.second = std::max(it->second.second, r.count_err);
  }
  json runs = json::array();
  for (const auto& r : rows) {
    runs.push_back({{"loss", r.loss}, {"epsilon", r.epsilon}, {"count_err", r.count_err}, {"mass", r.mass}});
  }
  json spread = json::object();
  std::vector<std::pair<std::string, std::string>> lines;
  for (const auto& name : order) {
    const double s = range[name].second - range[name].first;
    spread[name] = s;
    lines.emplace_back("spread_" + name, fixed6(s));
  }
  emit(io, a.fit.json, {{"command", "sweep-epsilon"}, {"runs", runs}, {"spread", spread}}, lines);
  return kOk;
}

// ---- oracle ---------------------------------------------------------------

struct OracleArgs {
  std::string mode;  // lp | entropic
  std::string source, target;
  std::string cost = "sqeuclid";
  double normalization = 1.0;
  double epsilon = 0.1;
  std::string convention = "simplified";
  bool semibalanced = false;
  bool json = false;
};

inline int cmd_oracle([[maybe_unused]] const OracleArgs& a, [[maybe_unused]] const Streams& io) {
#ifdef S3_WITH_ORACLE
  const PointMeasure src = read_points(a.source);
  const PointMeasure tgt = read_points(a.target);
  if (src.empty() || tgt.empty()) throw PreconditionError("empty support");
  const CostMatrix c = build_cost(src.points(), tgt.points(), parse_cost(a.cost), a.normalization);
  if (a.mode == "lp") {
    const auto r = oracle::exact_ot_lp(src.weights(), tgt.weights(), c);
    json j{{"command", "oracle"}, {"mode", "lp"}, {"value", r.value}, {"plan", r.plan},
           {"n_source", c.n_source}, {"n_target", c.n_target}};
    emit(io, a.json, j, {{"value", fixed6(r.value)}});
    return kOk;
  }
  if (a.convention != "simplified" && a.convention != "full_kl") {
    throw PreconditionError("unknown convention '" + a.convention + "' (expected simplified or full_kl)");
  }
  const auto r = oracle::entropic_primal_bruteforce(src.weights(), tgt.weights(), c, a.epsilon,
                                                    a.semibalanced);
  const double v = a.convention == "full_kl" ? r.full_kl : r.simplified;
  json j{{"command", "oracle"}, {"mode", "entropic"}, {"convention", a.convention},
         {"value", v}, {"simplified", r.simplified}, {"full_kl", r.full_kl},
         {"semibalanced", a.semibalanced}, {"iterations", r.iterations}};
  emit(io, a.json, j,
       {{"value", fixed6(v)}, {"simplified", fixed6(r.simplified)}, {"full_kl", fixed6(r.full_kl)}});
  return kOk;
#else
  throw PreconditionError("this build has no oracle (configure with -DS3_WITH_ORACLE=ON)");
#endif
}

// ---- entry point ----------------------------------------------------------

inline int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  const Streams io{out, err};
  CLI::App app{"Measure matching between density grids and point annotations"};
  app.name("s3");
  app.require_subcommand(1);

  DivergenceArgs div;
  auto* c_div = app.add_subcommand("divergence", "Divergence between a grid and a point set");
  c_div->add_option("--kind", div.kind, "wasserstein | sinkhorn | semibalanced")
      ->check(CLI::IsMember({"wasserstein", "sinkhorn", "semibalanced"}));
  c_div->add_option("--source", div.source, "Grid file")->required();
  c_div->add_option("--target", div.target, "Points file")->required();
  c_div->add_option("--epsilon", div.epsilon)->required();
  c_div->add_option("--cost", div.cost)->check(CLI::IsMember({"sqeuclid", "euclid"}));
  c_div->add_option("--tol", div.tol);
  c_div->add_option("--max-iter", div.max_iter);
  c_div->add_flag("--json", div.json);

  auto add_fit_options = [](CLI::App* c, FitArgs& f, bool single_loss) {
    c->add_option("--points", f.points, "Points file")->required();
    c->add_option("--grid-size", f.grid_size, "Rows and columns")->expected(2);
    c->add_option("--cell-size", f.cell_size);
    if (single_loss) {
      c->add_option("--loss", f.loss, "l2 | wd | smb | s3");
      c->add_option("--epsilon", f.epsilon);
    }
    c->add_option("--lambda", f.lambda);
    c->add_option("--epochs", f.epochs);
    c->add_option("--seed", f.seed);
    c->add_option("--lr", f.lr);
    c->add_option("--sigma", f.sigma, "Kernel width for the l2 baseline");
    c->add_option("--tol", f.tol);
    c->add_option("--max-iter", f.max_iter);
    c->add_flag("--randomize-scale", f.randomize_scale, "Draw the scale factor from {1/2, 1/3}");
    c->add_option("--out", f.out, "Output directory")->required();
    c->add_flag("--json", f.json);
  };

  FitArgs fit;
  auto* c_fit = app.add_subcommand("fit", "Fit a density grid to annotations");
  add_fit_options(c_fit, fit, true);

  EvalArgs ev;
  auto* c_eval = app.add_subcommand("eval", "MAE / MSE of predicted counts");
  c_eval->add_option("--pred", ev.pred, "Directory of grid files")->required();
  c_eval->add_option("--gt", ev.gt, "Directory of point files")->required();
  c_eval->add_flag("--json", ev.json);

  SweepArgs sw;
  auto* c_sweep = app.add_subcommand("sweep-epsilon", "Fit every loss at every epsilon");
  add_fit_options(c_sweep, sw.fit, false);
  c_sweep->add_option("--losses", sw.losses)->delimiter(',');
  c_sweep->add_option("--epsilons", sw.epsilons)->delimiter(',');

  OracleArgs orc;
  auto* c_orc = app.add_subcommand("oracle", "Brute-force references on tiny problems");
  c_orc->require_subcommand(1);
  auto add_oracle_io = [&](CLI::App* c) {
    c->add_option("--source", orc.source, "Points file")->required();
    c->add_option("--target", orc.target, "Points file")->required();
    c->add_option("--cost", orc.cost)->check(CLI::IsMember({"sqeuclid", "euclid"}));
    c->add_option("--normalization", orc.normalization);
    c->add_flag("--json", orc.json);
  };
  auto* c_lp = c_orc->add_subcommand("lp", "Exact unregularised transport");
  add_oracle_io(c_lp);
  auto* c_ent = c_orc->add_subcommand("entropic", "Entropic primal by direct minimisation");
  add_oracle_io(c_ent);
  c_ent->add_option("--epsilon", orc.epsilon)->required();
  c_ent->add_option("--convention", orc.convention)
      ->check(CLI::IsMember({"simplified", "full_kl"}));
  c_ent->add_flag("--semibalanced", orc.semibalanced);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kPrecondition;
  }

  try {
    if (*c_div) return cmd_divergence(div, io);
    if (*c_fit) return cmd_fit(fit, io);
    if (*c_eval) return cmd_eval(ev, io);
    if (*c_sweep) return cmd_sweep(sw, io);
    if (*c_orc) {
      orc.mode = *c_lp ? "lp" : "entropic";
      return cmd_oracle(orc, io);
    }
  } catch (const IoError& e) {
    err << "error: " << e.what() << '\n';
    return kIo;
  } catch (const PreconditionError& e) {
    err << "error: " << e.what() << '\n';
    return kPrecondition;
  } catch (const DomainError& e) {
    err << "error: " << e.what() << '\n';
    return kPrecondition;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kNonConvergence;
  }
  return kPrecondition;
}

}  // namespace s3::cli

#endif  // S3_TOOLS_S3CLI_HPP
