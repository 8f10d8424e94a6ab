#include "spingqe/operator_pool.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numbers>
#include <set>
#include <sstream>

#include "spingqe/error.hpp"

namespace spingqe {

std::string_view template_name(GateTemplate t) {
  switch (t) {
    case GateTemplate::X: return "X";
    case GateTemplate::Y: return "Y";
    case GateTemplate::Z: return "Z";
    case GateTemplate::XX: return "XX";
    case GateTemplate::YY: return "YY";
    case GateTemplate::ZZ: return "ZZ";
  }
  return "?";
}

std::optional<GateTemplate> parse_template(std::string_view name) {
  for (GateTemplate t : {GateTemplate::X, GateTemplate::Y, GateTemplate::Z, GateTemplate::XX,
                         GateTemplate::YY, GateTemplate::ZZ}) {
    if (template_name(t) == name) return t;
  }
  return std::nullopt;
}

int template_arity(GateTemplate t) {
  switch (t) {
    case GateTemplate::X:
    case GateTemplate::Y:
    case GateTemplate::Z: return 1;
    default: return 2;
  }
}

namespace {

PauliAxis axis_of(GateTemplate t) {
  switch (t) {
    case GateTemplate::X:
    case GateTemplate::XX: return PauliAxis::X;
    case GateTemplate::Y:
    case GateTemplate::YY: return PauliAxis::Y;
    default: return PauliAxis::Z;
  }
}

}  // namespace

void validate_gate(const Gate& g, int n_qubits) {
  if (static_cast<int>(g.qubits.size()) != template_arity(g.tmpl)) {
    throw Error(ErrorKind::InvalidArgument, std::string(template_name(g.tmpl)) + " gate needs " +
                                                std::to_string(template_arity(g.tmpl)) +
                                                " qubits, got " + std::to_string(g.qubits.size()));
  }
  for (int q : g.qubits) {
    if (q < 0 || q >= n_qubits) {
      throw Error(ErrorKind::QubitOutOfRange, "qubit index " + std::to_string(q) +
                                                  " out of range for " + std::to_string(n_qubits) +
                                                  " qubits");
    }
  }
  if (g.qubits.size() == 2 && g.qubits[0] == g.qubits[1]) {
    throw Error(ErrorKind::InvalidArgument, "two-qubit gate on repeated qubit " +
                                                std::to_string(g.qubits[0]));
  }
  if (!std::isfinite(g.angle)) {
    throw Error(ErrorKind::NonFinite, "gate angle must be finite");
  }
}

Rotation to_rotation(const Gate& g) {
  const PauliAxis axis = axis_of(g.tmpl);
  if (g.qubits.size() == 1) return {PauliString::single(axis, g.qubits[0]), g.angle};
  if (g.qubits.size() == 2) return {PauliString::pair(axis, g.qubits[0], g.qubits[1]), g.angle};
  throw Error(ErrorKind::InvalidArgument, "gate has no qubits");
}

Circuit to_circuit(const std::vector<Gate>& gates) {
  Circuit c;
  c.reserve(gates.size());
  for (const auto& g : gates) c.push_back(to_rotation(g));
  return c;
}

std::string describe(const Gate& g) {
  std::ostringstream out;
  out << template_name(g.tmpl) << '(';
  for (std::size_t i = 0; i < g.qubits.size(); ++i) out << (i ? "," : "") << g.qubits[i];
  out << "; " << std::setprecision(6) << g.angle << ')';
  return out.str();
}

std::vector<double> pool_angles(const std::vector<int>& exponents) {
  std::set<int> unique(exponents.begin(), exponents.end());
  std::vector<double> out;
  for (int k : unique) {
    if (k < 1) throw Error(ErrorKind::InvalidArgument, "angle exponent must be >= 1");
    const double a = std::numbers::pi / std::ldexp(1.0, k);
    out.push_back(a);
    out.push_back(-a);
  }
  std::sort(out.begin(), out.end());
  return out;
}

Vocabulary::Vocabulary(const PoolConfig& cfg) : cfg_(cfg) {
  if (cfg.n_qubits < 2) {
    throw Error(ErrorKind::InvalidArgument,
                "operator pool needs n_qubits >= 2, got " + std::to_string(cfg.n_qubits));
  }
  if (cfg.angle_exponents.empty()) {
    throw Error(ErrorKind::InvalidArgument, "operator pool needs a non-empty angle set");
  }
  const std::vector<double> angles = pool_angles(cfg.angle_exponents);
  const bool enlarged = cfg.variant == PoolVariant::Enlarged;

  std::vector<GateTemplate> singles;
  if (enlarged) singles = {GateTemplate::X, GateTemplate::Y};
  singles.push_back(GateTemplate::Z);

  std::vector<std::vector<int>> pairs;
  for (int i = 0; i + 1 < cfg.n_qubits; ++i) pairs.push_back({i, i + 1});
  if (enlarged) {
    for (int i = 0; i + 2 < cfg.n_qubits; ++i) pairs.push_back({i, i + 2});
  }
  std::sort(pairs.begin(), pairs.end());

  for (GateTemplate t : singles) {
    for (int q = 0; q < cfg.n_qubits; ++q) {
      for (double a : angles) gates_.push_back({t, {q}, a});
    }
  }
  for (GateTemplate t : {GateTemplate::XX, GateTemplate::YY, GateTemplate::ZZ}) {
    for (const auto& p : pairs) {
      for (double a : angles) gates_.push_back({t, p, a});
    }
  }
  for (std::size_t i = 0; i < gates_.size(); ++i) {
    index_.emplace(Key{gates_[i].tmpl, gates_[i].qubits, gates_[i].angle}, static_cast<int>(i) + 1);
  }
}

const Gate& Vocabulary::gate(int id) const {
  if (id == kBosToken) throw Error(ErrorKind::UnknownToken, "BOS has no gate");
  if (id < 0 || id >= size()) {
    throw Error(ErrorKind::UnknownToken, "token id " + std::to_string(id) +
                                             " outside vocabulary of size " +
                                             std::to_string(size()));
  }
  return gates_[static_cast<std::size_t>(id) - 1];
}

std::optional<int> Vocabulary::find(const Gate& g) const {
  auto it = index_.find(Key{g.tmpl, g.qubits, g.angle});
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

int Vocabulary::encode(const Gate& g) const {
  if (auto id = find(g)) return *id;
  throw Error(ErrorKind::UnknownToken, describe(g) + " is not in the operator pool");
}

void Vocabulary::dump(std::ostream& out) const {
  out << "id\ttemplate\tqubits\tangle\n";
  out << kBosToken << "\tBOS\t-\t-\n";
  out << std::setprecision(17);
  for (int id = 1; id < size(); ++id) {
    const Gate& g = gate(id);
    out << id << '\t' << template_name(g.tmpl) << '\t';
    for (std::size_t i = 0; i < g.qubits.size(); ++i) out << (i ? "," : "") << g.qubits[i];
    out << '\t' << g.angle << '\n';
  }
}

Vocabulary build_vocabulary(const PoolConfig& cfg) { return Vocabulary(cfg); }

Rotation token_to_gate(const Vocabulary& v, int id) { return to_rotation(v.gate(id)); }

}  // namespace spingqe
