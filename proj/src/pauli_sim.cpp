#include "spingqe/pauli_sim.hpp"

#include <Eigen/Dense>

#include <bit>
#include <cmath>
#include <sstream>

#include "spingqe/error.hpp"

namespace spingqe {

namespace {

Complex i_power(int n) {
  switch (((n % 4) + 4) % 4) {
    case 0: return {1.0, 0.0};
    case 1: return {0.0, 1.0};
    case 2: return {-1.0, 0.0};
    default: return {0.0, -1.0};
  }
}

double parity_sign(std::uint64_t b, std::uint64_t z_mask) {
  return (std::popcount(b & z_mask) & 1) ? -1.0 : 1.0;
}

void check_fits(const PauliString& p, int n_qubits) {
  const int q = p.max_qubit();
  if (q >= n_qubits) {
    throw Error(ErrorKind::QubitOutOfRange,
                "qubit index " + std::to_string(q) + " out of range for " +
                    std::to_string(n_qubits) + "-qubit state");
  }
}

}  // namespace

char axis_char(PauliAxis axis) {
  switch (axis) {
    case PauliAxis::X: return 'X';
    case PauliAxis::Y: return 'Y';
    case PauliAxis::Z: return 'Z';
  }
  return '?';
}

PauliString::PauliString(std::map<int, PauliAxis> factors) : factors_(std::move(factors)) {
  for (const auto& [q, axis] : factors_) {
    if (q < 0 || q >= 64) {
      throw Error(ErrorKind::QubitOutOfRange, "qubit index " + std::to_string(q) + " is invalid");
    }
  }
}

PauliString PauliString::single(PauliAxis axis, int qubit) {
  return PauliString({{qubit, axis}});
}

PauliString PauliString::pair(PauliAxis axis, int q0, int q1) {
  if (q0 == q1) {
    throw Error(ErrorKind::InvalidArgument,
                "two-qubit Pauli needs distinct qubits, got " + std::to_string(q0) + " twice");
  }
  return PauliString({{q0, axis}, {q1, axis}});
}

int PauliString::max_qubit() const {
  return factors_.empty() ? -1 : factors_.rbegin()->first;
}

std::string PauliString::str() const {
  if (factors_.empty()) return "I";
  std::ostringstream out;
  bool first = true;
  for (const auto& [q, axis] : factors_) {
    if (!first) out << ' ';
    out << axis_char(axis) << q;
    first = false;
  }
  return out.str();
}

PauliMasks masks_of(const PauliString& p) {
  PauliMasks m;
  for (const auto& [q, axis] : p.factors()) {
    const std::uint64_t bit = std::uint64_t{1} << q;
    switch (axis) {
      case PauliAxis::X: m.x_mask |= bit; break;
      case PauliAxis::Z: m.z_mask |= bit; break;
      case PauliAxis::Y:
        m.x_mask |= bit;
        m.z_mask |= bit;
        ++m.y_count;
        break;
    }
  }
  return m;
}

StateVector::StateVector(int n_qubits) : n_qubits_(n_qubits) {
  if (n_qubits < 1 || n_qubits > 30) {
    throw Error(ErrorKind::InvalidArgument,
                "state needs 1..30 qubits, got " + std::to_string(n_qubits));
  }
  amps_.assign(std::size_t{1} << n_qubits, Complex{0.0, 0.0});
  amps_[0] = 1.0;
}

StateVector::StateVector(int n_qubits, std::vector<Complex> amplitudes)
    : n_qubits_(n_qubits), amps_(std::move(amplitudes)) {
  if (n_qubits < 1 || n_qubits > 30 || amps_.size() != (std::size_t{1} << n_qubits)) {
    throw Error(ErrorKind::DimensionMismatch,
                "amplitude vector of length " + std::to_string(amps_.size()) +
                    " does not describe " + std::to_string(n_qubits) + " qubits");
  }
}

StateVector StateVector::basis(int n_qubits, std::uint64_t index) {
  StateVector s(n_qubits);
  if (index >= s.dim()) {
    throw Error(ErrorKind::InvalidArgument, "basis index out of range");
  }
  s.amps_[0] = 0.0;
  s.amps_[index] = 1.0;
  return s;
}

double StateVector::norm_squared() const {
  double acc = 0.0;
  for (const auto& a : amps_) acc += std::norm(a);
  return acc;
}

Hamiltonian::Hamiltonian(int n_qubits, std::vector<HamiltonianTerm> terms) : n_qubits_(n_qubits) {
  if (n_qubits < 1) {
    throw Error(ErrorKind::InvalidArgument, "Hamiltonian needs at least one qubit");
  }
  for (auto& t : terms) add(t.coefficient, std::move(t.op));
}

void Hamiltonian::add(double coefficient, PauliString op) {
  if (!std::isfinite(coefficient)) {
    throw Error(ErrorKind::NonFinite, "Hamiltonian coefficient must be finite");
  }
  check_fits(op, n_qubits_);
  terms_.push_back({coefficient, std::move(op)});
}

void apply_pauli_rotation_inplace(StateVector& state, const PauliString& p, double theta) {
  check_fits(p, state.n_qubits());
  if (!std::isfinite(theta)) {
    throw Error(ErrorKind::NonFinite, "rotation angle must be finite");
  }
  const PauliMasks m = masks_of(p);
  const double c = std::cos(0.5 * theta);
  const double s = std::sin(0.5 * theta);
  // -i sin(theta/2) * i^{n_y}
  const Complex k = Complex{0.0, -s} * i_power(m.y_count);
  auto amps = state.amplitudes();
  const std::uint64_t dim = amps.size();

  if (m.x_mask == 0) {
    for (std::uint64_t b = 0; b < dim; ++b) {
      amps[b] *= c + k * parity_sign(b, m.z_mask);
    }
    return;
  }
  const std::uint64_t top = std::uint64_t{1} << (63 - std::countl_zero(m.x_mask));
  for (std::uint64_t b = 0; b < dim; ++b) {
    if (b & top) continue;
    const std::uint64_t b2 = b ^ m.x_mask;
    const Complex a = amps[b];
    const Complex a2 = amps[b2];
    amps[b] = c * a + k * parity_sign(b2, m.z_mask) * a2;
    amps[b2] = c * a2 + k * parity_sign(b, m.z_mask) * a;
  }
}

StateVector apply_pauli_rotation(StateVector state, const PauliString& p, double theta) {
  apply_pauli_rotation_inplace(state, p, theta);
  return state;
}

void apply_circuit_inplace(StateVector& state, std::span<const Rotation> circuit) {
  for (std::size_t t = 0; t < circuit.size(); ++t) {
    try {
      apply_pauli_rotation_inplace(state, circuit[t].op, circuit[t].angle);
    } catch (const Error& e) {
      throw Error(e.kind(), "gate " + std::to_string(t) + ": " + e.what());
    }
  }
}

Complex pauli_expectation(const StateVector& state, const PauliString& p) {
  check_fits(p, state.n_qubits());
  const PauliMasks m = masks_of(p);
  auto amps = state.amplitudes();
  Complex acc{0.0, 0.0};
  for (std::uint64_t b = 0; b < amps.size(); ++b) {
    acc += std::conj(amps[b ^ m.x_mask]) * parity_sign(b, m.z_mask) * amps[b];
  }
  return acc * i_power(m.y_count);
}

double expectation(const StateVector& state, const Hamiltonian& h) {
  if (state.n_qubits() != h.n_qubits()) {
    throw Error(ErrorKind::DimensionMismatch,
                "state has " + std::to_string(state.n_qubits()) + " qubits, Hamiltonian has " +
                    std::to_string(h.n_qubits()));
  }
  Complex acc{0.0, 0.0};
  for (const auto& term : h.terms()) {
    acc += term.coefficient * pauli_expectation(state, term.op);
  }
  if (std::abs(acc.imag()) > 1e-10 * std::max(1.0, std::abs(acc.real()))) {
    throw Error(ErrorKind::NonFinite, "expectation has imaginary residue " +
                                          std::to_string(acc.imag()));
  }
  return acc.real();
}

double circuit_energy(std::span<const Rotation> circuit, const Hamiltonian& h,
                      const StateVector& initial) {
  StateVector s = initial;
  apply_circuit_inplace(s, circuit);
  return expectation(s, h);
}

std::vector<double> prefix_energies(std::span<const Rotation> circuit, const Hamiltonian& h,
                                    const StateVector& initial) {
  if (circuit.empty()) {
    throw Error(ErrorKind::InvalidArgument, "prefix_energies needs at least one gate");
  }
  StateVector s = initial;
  std::vector<double> out;
  out.reserve(circuit.size());
  for (std::size_t t = 0; t < circuit.size(); ++t) {
    try {
      apply_pauli_rotation_inplace(s, circuit[t].op, circuit[t].angle);
    } catch (const Error& e) {
      throw Error(e.kind(), "step " + std::to_string(t + 1) + ": " + e.what());
    }
    out.push_back(expectation(s, h));
  }
  return out;
}

std::vector<double> energy_gradient(std::span<const Rotation> circuit, const Hamiltonian& h,
                                    const StateVector& initial) {
  if (circuit.empty()) {
    throw Error(ErrorKind::InvalidArgument, "energy_gradient needs at least one gate");
  }
  constexpr double kShift = 1.5707963267948966;  // pi/2
  std::vector<double> grad(circuit.size());

  // Prefix states are shared by the + and - evaluations at position j.
  StateVector prefix = initial;
  for (std::size_t j = 0; j < circuit.size(); ++j) {
    const double theta = circuit[j].angle;
    const auto suffix = circuit.subspan(j + 1);

    StateVector plus = apply_pauli_rotation(prefix, circuit[j].op, theta + kShift);
    apply_circuit_inplace(plus, suffix);
    StateVector minus = apply_pauli_rotation(prefix, circuit[j].op, theta - kShift);
    apply_circuit_inplace(minus, suffix);

    grad[j] = 0.5 * (expectation(plus, h) - expectation(minus, h));
    apply_pauli_rotation_inplace(prefix, circuit[j].op, theta);
  }
  return grad;
}

std::vector<Complex> dense_matrix(const Hamiltonian& h) {
  const int n = h.n_qubits();
  if (n > kMaxDenseQubits) {
    throw Error(ErrorKind::SystemTooLarge, std::to_string(n) + " qubits exceeds the dense limit of " +
                                               std::to_string(kMaxDenseQubits));
  }
  const std::uint64_t dim = std::uint64_t{1} << n;
  std::vector<Complex> mat(dim * dim, Complex{0.0, 0.0});
  for (const auto& term : h.terms()) {
    const PauliMasks m = masks_of(term.op);
    const Complex phase = term.coefficient * i_power(m.y_count);
    // Column b maps to row b ^ x_mask.
    for (std::uint64_t b = 0; b < dim; ++b) {
      mat[(b ^ m.x_mask) * dim + b] += phase * parity_sign(b, m.z_mask);
    }
  }
  return mat;
}

GroundState exact_ground_energy(const Hamiltonian& h) {
  const std::vector<Complex> flat = dense_matrix(h);
  const Eigen::Index dim = Eigen::Index{1} << h.n_qubits();
  Eigen::Map<const Eigen::Matrix<Complex, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> mat(
      flat.data(), dim, dim);

  std::vector<Complex> vec(static_cast<std::size_t>(dim));
  double energy = 0.0;
  if (mat.imag().cwiseAbs().maxCoeff() == 0.0) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(mat.real());
    energy = solver.eigenvalues()(0);
    for (Eigen::Index i = 0; i < dim; ++i) vec[i] = solver.eigenvectors()(i, 0);
  } else {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> solver(mat);
    energy = solver.eigenvalues()(0);
    for (Eigen::Index i = 0; i < dim; ++i) vec[i] = solver.eigenvectors()(i, 0);
  }
  return {energy, StateVector(h.n_qubits(), std::move(vec))};
}

}  // namespace spingqe
