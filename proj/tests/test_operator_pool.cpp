#include <doctest.h>

#include <cmath>
#include <numbers>
#include <set>
#include <sstream>

#include "spingqe/error.hpp"
#include "spingqe/operator_pool.hpp"

using namespace spingqe;

namespace {

// Independent count: enumerate the standard pool's (template, target)
// combinations by hand, times the 10 angles, plus BOS.
int enumerate_standard(int n) {
  int targets = 0;
  for (int q = 0; q < n; ++q) ++targets;  // Z on each qubit
  for (int t = 0; t < 3; ++t)
    for (int i = 0; i + 1 < n; ++i) ++targets;  // XX, YY, ZZ on (i, i+1)
  return 1 + 10 * targets;
}

PoolConfig pool(int n, PoolVariant v = PoolVariant::Standard) {
  PoolConfig c;
  c.n_qubits = n;
  c.variant = v;
  return c;
}

}  // namespace

TEST_CASE("standard vocabulary sizes") {
  CHECK(build_vocabulary(pool(4)).size() == 131);
  CHECK(build_vocabulary(pool(2)).size() == 51);
  for (int n = 2; n <= 8; ++n) CHECK(build_vocabulary(pool(n)).size() == enumerate_standard(n));
}

TEST_CASE("angles") {
  const auto angles = pool_angles({1, 2, 3, 4, 5});
  CHECK(angles.size() == 10);
  CHECK(angles.front() == -std::numbers::pi / 2);
  CHECK(angles.back() == std::numbers::pi / 2);
  for (const auto& g : build_vocabulary(pool(4, PoolVariant::Enlarged)).gates()) {
    CHECK(std::abs(g.angle) >= std::numbers::pi / 32 - 1e-15);
    CHECK(std::abs(g.angle) <= std::numbers::pi / 2 + 1e-15);
  }
  PoolConfig empty = pool(4);
  empty.angle_exponents.clear();
  CHECK_THROWS_AS(build_vocabulary(empty), Error);
  CHECK_THROWS_AS(build_vocabulary(pool(1)), Error);
}

TEST_CASE("token ids round-trip") {
  const Vocabulary v = build_vocabulary(pool(4));
  std::set<std::tuple<GateTemplate, std::vector<int>, double>> seen;
  for (int id = 1; id < v.size(); ++id) {
    const Gate& g = v.gate(id);
    CHECK(v.encode(g) == id);
    seen.emplace(g.tmpl, g.qubits, g.angle);
    const Rotation r = token_to_gate(v, id);
    CHECK(r.angle == g.angle);
    if (g.qubits.size() == 2) CHECK(std::abs(g.qubits[0] - g.qubits[1]) == 1);
    CHECK(g.tmpl != GateTemplate::X);
    CHECK(g.tmpl != GateTemplate::Y);
  }
  CHECK(seen.size() == 130);

  try {
    token_to_gate(v, kBosToken);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()) == "BOS has no gate");
  }
  CHECK_THROWS_AS(token_to_gate(v, 131), Error);
  CHECK_THROWS_AS(token_to_gate(v, -1), Error);
}

TEST_CASE("ordering is by template, qubits, angle and deterministic") {
  const Vocabulary a = build_vocabulary(pool(5)), b = build_vocabulary(pool(5));
  CHECK(a.gates() == b.gates());
  for (std::size_t i = 1; i < a.gates().size(); ++i) {
    const auto& p = a.gates()[i - 1];
    const auto& q = a.gates()[i];
    CHECK(std::tie(p.tmpl, p.qubits, p.angle) < std::tie(q.tmpl, q.qubits, q.angle));
  }
}

TEST_CASE("enlarged pool") {
  const Vocabulary standard = build_vocabulary(pool(4));
  const Vocabulary enlarged = build_vocabulary(pool(4, PoolVariant::Enlarged));
  const Gate far{GateTemplate::XX, {0, 2}, std::numbers::pi / 4};
  CHECK(enlarged.find(far).has_value());
  CHECK_FALSE(standard.find(far).has_value());
  for (const auto& g : standard.gates()) CHECK(enlarged.find(g).has_value());
  // 3 single templates x 4 qubits + 3 pair templates x (3 + 2) pairs, 10 angles each.
  CHECK(enlarged.size() == 1 + 10 * (3 * 4 + 3 * 5));
}

TEST_CASE("vocabulary dump") {
  std::ostringstream out;
  build_vocabulary(pool(2)).dump(out);
  std::istringstream in(out.str());
  std::string line;
  std::getline(in, line);
  CHECK(line == "id\ttemplate\tqubits\tangle");
  std::getline(in, line);
  CHECK(line == "0\tBOS\t-\t-");
  std::getline(in, line);
  CHECK(line.rfind("1\tZ\t0\t-1.57", 0) == 0);
  int rows = 3;
  while (std::getline(in, line)) ++rows;
  CHECK(rows == 52);
}

TEST_CASE("gate validation") {
  CHECK_THROWS_AS(validate_gate({GateTemplate::XX, {1, 1}, 0.1}, 4), Error);
  CHECK_THROWS_AS(validate_gate({GateTemplate::Z, {4}, 0.1}, 4), Error);
  CHECK_THROWS_AS(validate_gate({GateTemplate::Z, {0, 1}, 0.1}, 4), Error);
  CHECK_NOTHROW(validate_gate({GateTemplate::YY, {0, 3}, 0.1}, 4));
}
