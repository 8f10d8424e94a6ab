#pragma once

// Open-boundary Heisenberg chain in a longitudinal field:
//   H = J sum_{n=0}^{N-2} (X_n X_{n+1} + Y_n Y_{n+1} + Z_n Z_{n+1}) + h sum_{n=0}^{N-1} Z_n
// Sites are 0-based; site n of the 1-based textbook form is qubit n-1.

#include <vector>

#include "spingqe/pauli_sim.hpp"

namespace spingqe {

struct HeisenbergSpec {
  double J = 1.0;
  double h = 0.0;
  int N = 4;
};

void validate(const HeisenbergSpec& spec);

// 3(N-1) exchange terms followed by N field terms, always; zero
// coefficients are kept so the term layout is fixed.
Hamiltonian build_heisenberg(const HeisenbergSpec& spec);

// Exchange part only (the h = 0 Hamiltonian with unit coupling scaled by J).
Hamiltonian build_exchange(const HeisenbergSpec& spec);

// (1/2) sum_n Z_n.
Hamiltonian total_sz(int n_qubits);

// Dense check that [H_exchange, S_z^total] vanishes (max-abs entry < 1e-10).
bool commutes_with_total_sz(const Hamiltonian& h);
bool commutes_with_exchange(const HeisenbergSpec& spec);

struct FieldScanPoint {
  double h = 0.0;
  double ground_energy = 0.0;
};

std::vector<FieldScanPoint> critical_field_scan(double J, int N, const std::vector<double>& h_grid);

// First scanned field whose ground energy departs from the h = 0 value by
// more than 1e-9 |E0(h=0)|; negative when no departure occurs in the grid.
double detect_level_crossing(double J, int N, const std::vector<FieldScanPoint>& scan);

}  // namespace spingqe
