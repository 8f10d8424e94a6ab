#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <utility>
#include <vector>

#include "spingqe/operator_pool.hpp"
#include "spingqe/pauli_sim.hpp"
#include "spingqe/transformer.hpp"

namespace spingqe {

struct TrainConfig {
  double beta = 0.3;
  int M = 10;
  int T = 12;
  double tau = 0.5;
  double lr = 4e-4;
  double weight_decay = 0.01;
  int epochs = 700;
  int checkpoint_every = 50;
  int n_best_checkpoints = 3;
  int eval_samples = 100;
  std::uint64_t seed = 0;
  // Where checkpoints go; empty disables checkpointing.
  std::filesystem::path checkpoint_dir;
};

void validate(const TrainConfig& cfg);

struct EpochRecord {
  int epoch = 0;
  std::vector<double> energies_final;
  double loss = 0.0;
  double min_energy = 0.0;
  double mean_energy = 0.0;
  double max_energy = 0.0;
  std::vector<std::vector<int>> sequences;
};

// 1 / (1 + exp(beta E)), clamped to exactly 0 or 1 when |beta E| > 700.
double energy_weight(double energy, double beta);

struct SequenceTargets {
  std::vector<double> cumulative_logits;
  std::vector<double> prefix_energies;
};

// (1/M) sum_i w(E_T^(i)) sum_t (l_t - E_t)^2, weights and energies constant.
double weighted_mse_loss(std::span<const SequenceTargets> batch, double beta);

// d(loss)/d(l_t) for every sequence in the batch.
std::vector<std::vector<double>> weighted_mse_gradient(std::span<const SequenceTargets> batch,
                                                       double beta);

// Decoupled-weight-decay Adam.
class AdamW {
 public:
  AdamW(std::size_t n_params, double lr, double weight_decay, double beta1 = 0.9,
        double beta2 = 0.999, double eps = 1e-8);

  void step(std::span<double> params, std::span<const double> grad);
  long steps_taken() const { return t_; }

 private:
  double lr_, weight_decay_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<double> m_, v_;
};

// Prefix energies of a token sequence from |0...0>.
std::vector<double> sequence_energies(std::span<const int> tokens, const Vocabulary& vocab,
                                      const Hamiltonian& h);

struct TrainResult {
  TransformerModel model;
  std::vector<EpochRecord> records;
  std::vector<std::filesystem::path> checkpoints;
};

// Online loop: sample, evaluate prefix energies, regress cumulative logits,
// one AdamW step per epoch. The model argument is the initial state.
TrainResult train(TransformerModel model, const Hamiltonian& h, const Vocabulary& vocab,
                  const TrainConfig& cfg);

struct CheckpointScore {
  std::filesystem::path path;
  double min_energy = 0.0;
};

struct SelectionResult {
  TransformerModel model;
  std::vector<CheckpointScore> ranking;  // ascending by min_energy
};

SelectionResult select_and_average_best(std::span<const std::filesystem::path> checkpoints,
                                        const Hamiltonian& h, const Vocabulary& vocab,
                                        const TrainConfig& cfg);

// In-memory variant over already loaded models (same ranking rule).
SelectionResult select_and_average_best(std::span<const TransformerModel> models,
                                        const Hamiltonian& h, const Vocabulary& vocab,
                                        const TrainConfig& cfg);

using GateSlot = std::pair<GateTemplate, std::vector<int>>;

struct GateStatistics {
  std::map<GateSlot, long> slot_counts;
  std::map<GateSlot, std::map<double, long>> angle_counts;
  long total = 0;
};

GateStatistics gate_statistics(const TransformerModel& model, const Vocabulary& vocab,
                               int n_samples, int T, double tau, Rng& rng);

}  // namespace spingqe
