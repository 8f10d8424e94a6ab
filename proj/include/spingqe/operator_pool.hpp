#pragma once

#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "spingqe/pauli_sim.hpp"

namespace spingqe {

// Declaration order is the vocabulary sort order.
enum class GateTemplate { X, Y, Z, XX, YY, ZZ };

std::string_view template_name(GateTemplate t);
std::optional<GateTemplate> parse_template(std::string_view name);
int template_arity(GateTemplate t);

// A Pauli rotation on concrete qubits. Pool tokens carry discrete angles;
// post-processing lifts the angle to any real.
struct Gate {
  GateTemplate tmpl = GateTemplate::Z;
  std::vector<int> qubits;
  double angle = 0.0;

  bool operator==(const Gate&) const = default;
};

// Checks arity, distinctness and range against n_qubits.
void validate_gate(const Gate& g, int n_qubits);
Rotation to_rotation(const Gate& g);
Circuit to_circuit(const std::vector<Gate>& gates);
std::string describe(const Gate& g);

enum class PoolVariant { Standard, Enlarged };

struct PoolConfig {
  int n_qubits = 4;
  PoolVariant variant = PoolVariant::Standard;
  std::vector<int> angle_exponents{1, 2, 3, 4, 5};
};

// Sorted {+-pi/2^k}.
std::vector<double> pool_angles(const std::vector<int>& exponents);

inline constexpr int kBosToken = 0;

// Token 0 is BOS; tokens 1..size()-1 are gates sorted by
// (template, qubits, angle).
class Vocabulary {
 public:
  explicit Vocabulary(const PoolConfig& cfg);

  const PoolConfig& config() const { return cfg_; }
  int n_qubits() const { return cfg_.n_qubits; }
  // Including BOS.
  int size() const { return static_cast<int>(gates_.size()) + 1; }

  const Gate& gate(int id) const;
  // Id of an exact pool gate, or nullopt.
  std::optional<int> find(const Gate& g) const;
  int encode(const Gate& g) const;

  // Tokens 1..size()-1 in id order.
  const std::vector<Gate>& gates() const { return gates_; }

  // Tab-separated id, template, qubits, angle.
  void dump(std::ostream& out) const;

 private:
  using Key = std::tuple<GateTemplate, std::vector<int>, double>;

  PoolConfig cfg_;
  std::vector<Gate> gates_;
  std::map<Key, int> index_;
};

Vocabulary build_vocabulary(const PoolConfig& cfg);

// (PauliString, angle) for a non-BOS token.
Rotation token_to_gate(const Vocabulary& v, int id);

}  // namespace spingqe
