#pragma once

// Dense statevector simulation of Pauli-rotation circuits.
//
// Basis convention: qubit q is bit q of the basis index, so |b> with
// b = sum_q b_q 2^q. Z|0> = +|0>, and the all-zero state is index 0.

#include <complex>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace spingqe {

using Complex = std::complex<double>;

// Largest system the dense routines (exact diagonalization, dense
// matrices) accept.
inline constexpr int kMaxDenseQubits = 12;

enum class PauliAxis { X, Y, Z };

char axis_char(PauliAxis axis);

// Tensor product of single-qubit Paulis; absent qubits act as identity.
class PauliString {
 public:
  PauliString() = default;
  explicit PauliString(std::map<int, PauliAxis> factors);

  static PauliString single(PauliAxis axis, int qubit);
  static PauliString pair(PauliAxis axis, int q0, int q1);

  const std::map<int, PauliAxis>& factors() const { return factors_; }
  bool is_identity() const { return factors_.empty(); }
  // Largest qubit index used, or -1 for the identity.
  int max_qubit() const;

  // e.g. "X0 X1", or "I" for the identity.
  std::string str() const;

  bool operator==(const PauliString&) const = default;

 private:
  std::map<int, PauliAxis> factors_;
};

// Bit-mask form used by the kernels:
//   P|b> = i^{n_y} (-1)^{popcount(b & z_mask)} |b ^ x_mask>
// where Y qubits are in both masks.
struct PauliMasks {
  std::uint64_t x_mask = 0;
  std::uint64_t z_mask = 0;
  int y_count = 0;
};

PauliMasks masks_of(const PauliString& p);

class StateVector {
 public:
  // |0...0> on n_qubits.
  explicit StateVector(int n_qubits);
  StateVector(int n_qubits, std::vector<Complex> amplitudes);

  static StateVector basis(int n_qubits, std::uint64_t index);

  int n_qubits() const { return n_qubits_; }
  std::size_t dim() const { return amps_.size(); }
  std::span<const Complex> amplitudes() const { return amps_; }
  std::span<Complex> amplitudes() { return amps_; }
  const Complex& operator[](std::size_t i) const { return amps_[i]; }

  double norm_squared() const;

 private:
  int n_qubits_;
  std::vector<Complex> amps_;
};

struct HamiltonianTerm {
  double coefficient = 0.0;
  PauliString op;
};

class Hamiltonian {
 public:
  explicit Hamiltonian(int n_qubits, std::vector<HamiltonianTerm> terms = {});

  int n_qubits() const { return n_qubits_; }
  const std::vector<HamiltonianTerm>& terms() const { return terms_; }

  void add(double coefficient, PauliString op);

 private:
  int n_qubits_;
  std::vector<HamiltonianTerm> terms_;
};

// One executable gate exp(-i angle/2 P).
struct Rotation {
  PauliString op;
  double angle = 0.0;
};

using Circuit = std::vector<Rotation>;

// In-place exp(-i theta/2 P)|psi> = cos(theta/2)|psi> - i sin(theta/2) P|psi>.
void apply_pauli_rotation_inplace(StateVector& state, const PauliString& p, double theta);

StateVector apply_pauli_rotation(StateVector state, const PauliString& p, double theta);

// Applies every gate of circuit in order, in place.
void apply_circuit_inplace(StateVector& state, std::span<const Rotation> circuit);

// <psi|P|psi>, complex in general.
Complex pauli_expectation(const StateVector& state, const PauliString& p);

// sum_k c_k <psi|P_k|psi>. Throws if the imaginary residue exceeds 1e-10.
double expectation(const StateVector& state, const Hamiltonian& h);

// Energy of circuit applied to initial.
double circuit_energy(std::span<const Rotation> circuit, const Hamiltonian& h,
                      const StateVector& initial);

// E_1..E_T, one gate application per step.
std::vector<double> prefix_energies(std::span<const Rotation> circuit, const Hamiltonian& h,
                                    const StateVector& initial);

// dE_T/dtheta_j by the parameter-shift rule.
std::vector<double> energy_gradient(std::span<const Rotation> circuit, const Hamiltonian& h,
                                    const StateVector& initial);

// Dense row-major 2^N x 2^N matrix of h; N <= kMaxDenseQubits.
std::vector<Complex> dense_matrix(const Hamiltonian& h);

struct GroundState {
  double energy = 0.0;
  StateVector state;
};

// Minimum eigenpair by dense Hermitian diagonalization.
GroundState exact_ground_energy(const Hamiltonian& h);

}  // namespace spingqe
