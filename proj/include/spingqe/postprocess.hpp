#pragma once

// Post-processing of generated circuits: continuous angle refinement of a
// fixed gate sequence, then a greedy pass that moves each gate to every
// other qubit assignment, re-refines, and keeps strict improvements.

#include <vector>

#include "spingqe/operator_pool.hpp"
#include "spingqe/pauli_sim.hpp"
#include "spingqe/transformer.hpp"

namespace spingqe {

// Gates with unconstrained real angles; energy is from the last evaluation.
struct RefinableCircuit {
  std::vector<Gate> gates;
  double energy = 0.0;
};

enum class RefineMethod { QuasiNewton, DerivativeFree };

struct RefineConfig {
  RefineMethod method = RefineMethod::QuasiNewton;
  int max_iters = 500;
  double gradient_tolerance = 1e-7;
  double energy_tolerance = 1e-9;
  // Repeat the wire-swap pass until a full pass accepts nothing.
  bool repeat_until_converged = false;
};

void validate(const RefineConfig& cfg);

// Energy of the circuit from |0...0>.
double evaluate(const std::vector<Gate>& gates, const Hamiltonian& h);
RefinableCircuit make_refinable(std::vector<Gate> gates, const Hamiltonian& h);

struct RefineResult {
  RefinableCircuit circuit;
  // False when max_iters ran out before a convergence test passed; the
  // best iterate is still returned.
  bool converged = true;
  int iterations = 0;
  double gradient_norm = 0.0;
};

RefineResult angle_refinement(const RefinableCircuit& circuit, const Hamiltonian& h,
                              const RefineConfig& cfg);

struct WireSwapResult {
  RefinableCircuit circuit;
  double base_energy = 0.0;     // as given
  double refined_energy = 0.0;  // after the initial angle refinement
  double final_energy = 0.0;    // after wire reassignment
  std::vector<double> accepted_energies;  // energy after each accepted move
  int passes = 0;
  bool all_converged = true;
};

// Qubit tuples tried for a gate of the given arity, in order:
// (0), (1), ... or (0,1), (0,2), ..., (n-2,n-1).
std::vector<std::vector<int>> qubit_combinations(int n_qubits, int arity);

WireSwapResult wire_swap_loop(const RefinableCircuit& circuit, const Hamiltonian& h,
                              const RefineConfig& cfg);

struct BestOfResult {
  WireSwapResult best;
  std::vector<WireSwapResult> all;  // one per sample, in sampling order
  std::vector<std::vector<int>> sampled_tokens;
};

// Samples n_samples circuits of length T and post-processes each.
BestOfResult postprocess_best_of(const TransformerModel& model, const Vocabulary& vocab,
                                 const Hamiltonian& h, int n_samples, int T, double tau,
                                 const RefineConfig& cfg, Rng& rng);

}  // namespace spingqe
