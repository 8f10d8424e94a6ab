#pragma once

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "spingqe/hamiltonian.hpp"
#include "spingqe/operator_pool.hpp"
#include "spingqe/postprocess.hpp"
#include "spingqe/trainer.hpp"
#include "spingqe/transformer.hpp"

namespace spingqe {

namespace fs = std::filesystem;

// Everything one experiment needs. The pool qubit count follows the
// Hamiltonian and the model vocabulary follows the pool.
struct ExperimentConfig {
  HeisenbergSpec hamiltonian{10.0, 10.0, 4};
  PoolVariant pool = PoolVariant::Standard;
  ModelConfig model;  // vocab_size is derived
  TrainConfig train;
  RefineConfig refine;
  int samples = 20;  // circuits drawn for post-processing and scans
  fs::path output_dir = "out";

  PoolConfig pool_config() const;
  ModelConfig model_config() const;
};

// Checks every field, including cross-field consistency, and reports all
// violations in one Schema error.
void validate(const ExperimentConfig& cfg);

// Flat YAML mapping of key: scalar. Unknown keys are errors.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const fs::path& path);
// Applies key=value overrides with the same keys as the file.
void apply_override(ExperimentConfig& cfg, const std::string& assignment);
// One-line key=value rendering of every key except output_dir.
std::string describe(const ExperimentConfig& cfg);
// Documented key list with defaults, as a YAML file.
std::string default_config_yaml();

struct CircuitFile {
  int n_qubits = 0;
  std::vector<Gate> gates;
  std::optional<double> energy;

  bool operator==(const CircuitFile&) const = default;
};

std::string to_json(const CircuitFile& c);
CircuitFile circuit_from_json(const std::string& text);
void write_circuit(const CircuitFile& c, const fs::path& path);
CircuitFile read_circuit(const fs::path& path);

// Shortest decimal that round-trips.
std::string format_number(double x);

// CSV with a "# config: ..." line and a header.
class CsvWriter {
 public:
  CsvWriter(std::ostream& out, const std::string& config_line, const std::vector<std::string>& header);
  void row(const std::vector<std::string>& cells);

 private:
  std::ostream& out_;
  std::size_t columns_;
};

struct ExactResult {
  double energy = 0.0;
  fs::path summary;
};
ExactResult run_exact(const HeisenbergSpec& spec, const fs::path& output_dir);

struct TrainRunResult {
  fs::path convergence_csv;
  fs::path final_model;
  std::vector<fs::path> checkpoints;
  int models_averaged = 0;
  double best_energy = 0.0;  // over every circuit sampled during training
};
TrainRunResult run_train(const ExperimentConfig& cfg);

struct PostprocessRunResult {
  fs::path circuit;
  fs::path stages_csv;
  WireSwapResult best;
};
// Refines a given circuit, or samples cfg.samples circuits from a model and
// keeps the best after post-processing.
PostprocessRunResult run_postprocess_circuit(const ExperimentConfig& cfg, const CircuitFile& input);
PostprocessRunResult run_postprocess_model(const ExperimentConfig& cfg, const fs::path& model);

struct ScanRow {
  double h_over_J = 0.0;
  double e_model = 0.0;
  std::optional<double> e_postprocessed;
  double e_exact = 0.0;
};
// Trains one model per ratio for cfg.train.epochs epochs (0 keeps the
// random initialization), samples cfg.samples circuits, optionally
// post-processes them.
std::vector<ScanRow> run_scan(const ExperimentConfig& cfg, const std::vector<double>& h_over_J,
                              bool postprocess, int jobs);

struct GridCell {
  double beta = 0.0;
  int M = 0;
  double best_energy = 0.0;
};
std::vector<GridCell> run_gridsearch(const ExperimentConfig& cfg, const std::vector<double>& betas,
                                     const std::vector<int>& Ms, int jobs);

struct StatsRunResult {
  fs::path pairs_csv;
  fs::path angles_csv;
  GateStatistics stats;
};
StatsRunResult run_stats(const ExperimentConfig& cfg, const fs::path& model);

// Runs fn(i) for i in [0, n) on up to jobs threads; rethrows the first
// failure after all workers stop.
void parallel_for(int n, int jobs, const std::function<void(int)>& fn);

}  // namespace spingqe
