#include "spingqe/hamiltonian.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>

#include "spingqe/error.hpp"

namespace spingqe {

void validate(const HeisenbergSpec& spec) {
  if (spec.N < 2) {
    throw Error(ErrorKind::InvalidArgument,
                "Heisenberg chain needs N >= 2, got " + std::to_string(spec.N));
  }
  if (!std::isfinite(spec.J) || !std::isfinite(spec.h)) {
    throw Error(ErrorKind::NonFinite, "Heisenberg couplings must be finite");
  }
}

Hamiltonian build_exchange(const HeisenbergSpec& spec) {
  validate(spec);
  Hamiltonian h(spec.N);
  for (int n = 0; n + 1 < spec.N; ++n) {
    for (PauliAxis axis : {PauliAxis::X, PauliAxis::Y, PauliAxis::Z}) {
      h.add(spec.J, PauliString::pair(axis, n, n + 1));
    }
  }
  return h;
}

Hamiltonian build_heisenberg(const HeisenbergSpec& spec) {
  Hamiltonian h = build_exchange(spec);
  for (int n = 0; n < spec.N; ++n) {
    h.add(spec.h, PauliString::single(PauliAxis::Z, n));
  }
  return h;
}

Hamiltonian total_sz(int n_qubits) {
  Hamiltonian h(n_qubits);
  for (int n = 0; n < n_qubits; ++n) h.add(0.5, PauliString::single(PauliAxis::Z, n));
  return h;
}

bool commutes_with_total_sz(const Hamiltonian& h) {
  using Dense = Eigen::Matrix<Complex, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const std::vector<Complex> a_flat = dense_matrix(h);
  const std::vector<Complex> b_flat = dense_matrix(total_sz(h.n_qubits()));
  const Eigen::Index dim = Eigen::Index{1} << h.n_qubits();
  Eigen::Map<const Dense> a(a_flat.data(), dim, dim);
  Eigen::Map<const Dense> b(b_flat.data(), dim, dim);
  const Dense commutator = a * b - b * a;
  return commutator.cwiseAbs().maxCoeff() < 1e-10;
}

bool commutes_with_exchange(const HeisenbergSpec& spec) {
  return commutes_with_total_sz(build_exchange(spec));
}

std::vector<FieldScanPoint> critical_field_scan(double J, int N, const std::vector<double>& h_grid) {
  if (N % 2 != 0) {
    throw Error(ErrorKind::InvalidArgument, "field scan needs an even chain length");
  }
  std::vector<FieldScanPoint> out;
  out.reserve(h_grid.size());
  for (double field : h_grid) {
    if (!(field >= 0.0)) {
      throw Error(ErrorKind::InvalidArgument, "field scan needs h >= 0");
    }
    out.push_back({field, exact_ground_energy(build_heisenberg({J, field, N})).energy});
  }
  return out;
}

double detect_level_crossing(double J, int N, const std::vector<FieldScanPoint>& scan) {
  const double e_zero = exact_ground_energy(build_heisenberg({J, 0.0, N})).energy;
  const double tol = 1e-9 * std::abs(e_zero);
  for (const auto& p : scan) {
    if (std::abs(p.ground_energy - e_zero) > tol) return p.h;
  }
  return -1.0;
}

}  // namespace spingqe
