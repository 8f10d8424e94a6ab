#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>

#include "spingqe/error.hpp"
#include "spingqe/experiments.hpp"

using namespace spingqe;

namespace {

struct Common {
  std::string config;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> output_dir;
  int jobs = 1;
};

void add_common(CLI::App* cmd, Common& c, bool with_jobs) {
  cmd->add_option("--config", c.config, "YAML config file (defaults when omitted)")->check(CLI::ExistingFile);
  cmd->add_option("--set", c.overrides, "override a config key, key=value (repeatable)");
  cmd->add_option("--seed", c.seed, "seed for initialization and sampling");
  cmd->add_option("--output-dir", c.output_dir, "output directory");
  if (with_jobs) cmd->add_option("--jobs", c.jobs, "parallel jobs")->check(CLI::PositiveNumber);
}

ExperimentConfig resolve(const Common& c) {
  ExperimentConfig cfg = c.config.empty() ? ExperimentConfig{} : load_config(c.config);
  for (const auto& o : c.overrides) apply_override(cfg, o);
  if (c.seed) cfg.train.seed = *c.seed;
  if (c.output_dir) cfg.output_dir = *c.output_dir;
  validate(cfg);
  return cfg;
}

void print_stages(const WireSwapResult& r) {
  std::printf("base              %.6f\n", r.base_energy);
  std::printf("angle_refinement  %.6f\n", r.refined_energy);
  std::printf("wire_swap         %.6f\n", r.final_energy);
  if (!r.all_converged) std::fprintf(stderr, "warning: some refinements stopped at max_iters; their best iterates were kept\n");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Generative circuit search for Heisenberg chain ground states"};
  app.require_subcommand(1);

  HeisenbergSpec spec{10, 10, 4};
  std::string exact_dir = ".";
  auto* exact = app.add_subcommand("exact", "exact ground energy by dense diagonalization");
  exact->set_help_flag("--help", "print this help and exit");
  exact->add_option("--J", spec.J, "exchange coupling")->required();
  exact->add_option("--h", spec.h, "magnetic field")->required();
  exact->add_option("--N", spec.N, "number of spins")->required();
  exact->add_option("--output-dir", exact_dir, "where ground_state.json goes");

  Common train_opts, post_opts, scan_opts, grid_opts, stats_opts;
  auto* train = app.add_subcommand("train", "train a model; writes convergence.csv, checkpoints, final_model.bin");
  add_common(train, train_opts, false);

  std::string circuit_path, model_path;
  auto* post = app.add_subcommand("postprocess", "angle refinement and wire reassignment");
  add_common(post, post_opts, false);
  auto* circuit_opt = post->add_option("--circuit", circuit_path, "circuit JSON to refine")->check(CLI::ExistingFile);
  post->add_option("--model", model_path, "model checkpoint to sample from")
      ->check(CLI::ExistingFile)
      ->excludes(circuit_opt);

  std::vector<double> ratios{0.01, 0.1, 0.5, 1.0, 2.0, 5.0, 10.0};
  bool no_post = false;
  auto* scan = app.add_subcommand("scan", "energies over a grid of h/J");
  add_common(scan, scan_opts, true);
  scan->add_option("--ratios", ratios, "h/J values")->delimiter(',');
  scan->add_flag("--no-postprocess", no_post, "skip post-processing");

  std::vector<double> betas{0.1, 0.3, 0.7, 1.0, 2.0};
  std::vector<int> Ms{10, 25, 40};
  auto* grid = app.add_subcommand("gridsearch", "best sampled energy over a (beta, M) grid");
  add_common(grid, grid_opts, true);
  grid->add_option("--betas", betas, "beta values")->delimiter(',');
  grid->add_option("--Ms", Ms, "circuits per epoch")->delimiter(',');

  std::string stats_model;
  auto* stats = app.add_subcommand("stats", "gate-pair counts and angle histograms of sampled circuits");
  add_common(stats, stats_opts, false);
  stats->add_option("--model", stats_model, "model checkpoint")->required()->check(CLI::ExistingFile);

  app.add_subcommand("defaults", "print the documented default config");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*exact) {
      const auto r = run_exact(spec, exact_dir);
      std::printf("%.6f\n", r.energy);
    } else if (*train) {
      const auto r = run_train(resolve(train_opts));
      std::printf("best sampled energy %.6f\n", r.best_energy);
      std::printf("averaged %d checkpoint(s) into %s\n", r.models_averaged, r.final_model.c_str());
    } else if (*post) {
      const ExperimentConfig cfg = resolve(post_opts);
      if (circuit_path.empty() == model_path.empty()) {
        std::cerr << "postprocess needs exactly one of --circuit or --model\n";
        return 2;
      }
      const auto r = circuit_path.empty() ? run_postprocess_model(cfg, model_path)
                                          : run_postprocess_circuit(cfg, read_circuit(circuit_path));
      print_stages(r.best);
    } else if (*scan) {
      for (const auto& r : run_scan(resolve(scan_opts), ratios, !no_post, scan_opts.jobs)) {
        std::printf("h/J=%g model=%.6f post=%s exact=%.6f\n", r.h_over_J, r.e_model,
                    r.e_postprocessed ? format_number(*r.e_postprocessed).c_str() : "-", r.e_exact);
      }
    } else if (*grid) {
      for (const auto& c : run_gridsearch(resolve(grid_opts), betas, Ms, grid_opts.jobs))
        std::printf("beta=%g M=%d best=%.6f\n", c.beta, c.M, c.best_energy);
    } else if (*stats) {
      const auto r = run_stats(resolve(stats_opts), stats_model);
      std::printf("%ld gates written to %s and %s\n", r.stats.total, r.pairs_csv.c_str(), r.angles_csv.c_str());
    } else {
      std::cout << default_config_yaml();
    }
  } catch (const Error& e) {
    std::cerr << "error (" << to_string(e.kind()) << "): " << e.what() << "\n";
    return 1;
  }
  return 0;
}
