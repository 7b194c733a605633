// covshift: inject covariate shift, estimate importance weights, evaluate
// importance-weighted CV and rank estimator variants.
//
// Exit codes: 0 success, 1 usage, 2 data error, 3 solver failure.

#include "covshift/covshift.hpp"

#include "CLI11.hpp"

#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace {

using namespace covshift;

struct ConfigOverrides {
  std::string config;
  std::string output;
  std::vector<std::uint64_t> seeds;
  int variants = 0;
  int workers = 0;
  std::vector<std::string> methods;
  std::vector<std::string> phis;
  bool no_standardize = false;

  void add_to(CLI::App* cmd, bool with_workers) {
    cmd->add_option("-c,--config", config, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
    cmd->add_option("-o,--output", output, "output directory (overrides config)");
    cmd->add_option("--seeds", seeds, "seeds (overrides config)");
    cmd->add_option("--variants", variants, "test variants per seed (overrides config)");
    cmd->add_option("--methods", methods, "estimators: LR KMM EKMM KDE KLIEP (overrides config)");
    cmd->add_option("--phi", phis, "phi modes: C P CP (overrides config)");
    cmd->add_flag("--no-standardize", no_standardize, "skip z-scoring of phi features");
    if (with_workers)
      cmd->add_option("-j,--workers", workers, "worker threads (default: COVSHIFT_WORKERS or config)");
  }

  ExperimentConfig load() const {
    ExperimentConfig c = load_config(config);
    if (!output.empty()) c.output = output;
    if (!seeds.empty()) c.seeds = seeds;
    if (variants > 0) c.variants = variants;
    if (!methods.empty() || !phis.empty()) {
      std::vector<Method> ms;
      std::vector<PhiMode> ps;
      for (const auto& m : methods) ms.push_back(parse_method(m));
      for (const auto& p : phis) ps.push_back(parse_phi_mode(p));
      std::vector<EstimatorSpec> kept;
      for (const auto& s : c.estimators) {
        const bool m_ok = ms.empty() || std::find(ms.begin(), ms.end(), s.method) != ms.end();
        const bool p_ok = ps.empty() || std::find(ps.begin(), ps.end(), s.phi_mode) != ps.end();
        if (m_ok && p_ok) kept.push_back(s);
      }
      c.estimators = kept;
    }
    if (no_standardize) c.standardize = false;
    c.workers = workers > 0 ? workers : resolve_workers(c.workers);
    c.validate();
    return c;
  }
};

int exit_code_for(const Error& e) { return is_solver_error(e.code()) ? 3 : 2; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Importance weighting under covariate shift"};
  app.require_subcommand(1);

  ConfigOverrides inject_opts, run_opts;
  auto* inject_cmd = app.add_subcommand("inject", "write shifted train/test splits for every dataset and seed");
  inject_opts.add_to(inject_cmd, false);

  auto* run_cmd = app.add_subcommand("run", "evaluate every estimator on every split (resumable)");
  run_opts.add_to(run_cmd, true);

  std::string report_path, rank_out;
  double alpha = 0.05;
  auto* rank_cmd = app.add_subcommand("rank", "Friedman ranks of phi variants per method with Nemenyi CD");
  rank_cmd->add_option("-r,--report", report_path, "report CSV written by `run`")->required();
  rank_cmd->add_option("-o,--output", rank_out, "directory for rank.csv, rank_summary.csv, rank.txt");
  rank_cmd->add_option("--alpha", alpha, "significance level (0.05 or 0.10)");

  ToyConfig toy;
  std::string toy_out = "toy.csv", toy_method = "KLIEP";
  auto* toy_cmd = app.add_subcommand("toy", "one relevant covariate out of five, shifted test mean");
  toy_cmd->add_option("--seed", toy.seed, "seed");
  toy_cmd->add_option("--shift", toy.shift, "test mean of the relevant covariate");
  toy_cmd->add_option("--method", toy_method, "estimator for the w columns");
  toy_cmd->add_option("-o,--output", toy_out, "output CSV");

  std::string est_train, est_test, est_out = "weights.csv", est_spec, est_method = "KLIEP", est_phi = "C";
  std::uint64_t est_seed = 2032;
  std::optional<double> est_sigma;
  bool est_no_std = false;
  auto* est_cmd = app.add_subcommand("estimate", "importance of each training row, written as a one-column CSV");
  est_cmd->add_option("--train", est_train, "training CSV (needs a manifest sidecar or a split manifest.json)")->required();
  est_cmd->add_option("--test", est_test, "test CSV (covariates, optionally followed by a target)")->required();
  est_cmd->add_option("--spec", est_spec, "estimator spec JSON (overrides --method/--phi)");
  est_cmd->add_option("--method", est_method, "LR KMM EKMM KDE KLIEP");
  est_cmd->add_option("--phi", est_phi, "C P CP");
  est_cmd->add_option("--sigma", est_sigma, "kernel bandwidth");
  est_cmd->add_option("--seed", est_seed, "seed");
  est_cmd->add_flag("--no-standardize", est_no_std, "skip z-scoring of phi features");
  est_cmd->add_option("-o,--output", est_out, "output CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (inject_cmd->parsed()) {
      const auto c = inject_opts.load();
      const auto s = cmd_inject(c);
      std::cout << "wrote " << s.train_files << " train and " << s.test_files << " test files under "
                << (c.output / "splits").string() << "\n";
    } else if (run_cmd->parsed()) {
      const auto c = run_opts.load();
      const auto s = cmd_run(c);
      std::cout << "computed " << s.computed << " rows (" << s.failed << " failed), skipped " << s.skipped
                << " existing; report " << s.report.string() << "\n";
    } else if (rank_cmd->parsed()) {
      const fs::path out = rank_out.empty() ? fs::path(report_path).parent_path() : fs::path(rank_out);
      const auto rep = cmd_rank(report_path, out, alpha);
      std::cout << rank_text(rep);
    } else if (toy_cmd->parsed()) {
      toy.method = parse_method(toy_method);
      const auto r = cmd_toy(toy, toy_out);
      std::cout << "msle phi=x " << r.msle_covariates << ", phi=f(x) " << r.msle_predictions << "; wrote "
                << toy_out << "\n";
    } else if (est_cmd->parsed()) {
      EstimatorSpec spec = est_spec.empty()
                               ? EstimatorSpec::defaults(parse_method(est_method), parse_phi_mode(est_phi))
                               : spec_from_json(Json::parse(read_file(est_spec)));
      if (est_sigma) spec.kernel.bandwidth = *est_sigma;
      if (est_no_std) spec.standardize = false;
      const auto w = cmd_estimate(est_train, est_test, spec, est_seed, est_out);
      std::cout << "wrote " << w.size() << " weights (mean " << w.mean() << ") to " << est_out << "\n";
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e);
  } catch (const Json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
