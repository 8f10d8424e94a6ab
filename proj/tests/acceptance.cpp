// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "oracles.hpp"
#include "spingqe/experiments.hpp"
#include "spingqe/hamiltonian.hpp"
#include "spingqe/operator_pool.hpp"
#include "spingqe/postprocess.hpp"
#include "spingqe/trainer.hpp"

using namespace spingqe;

namespace {

// Tolerances and limits.
constexpr double kAfmReference = -64.641;
constexpr double kAfmTolerance = 1e-3;
constexpr double kPlateauRelTolerance = 1e-9;
constexpr double kFieldTolerance = 1e-9;
constexpr double kShiftGradTolerance = 1e-6;
constexpr double kFdStep = 1e-5;
constexpr double kBackpropRelTolerance = 1e-3;
constexpr double kBackpropFdStep = 1e-4;
constexpr double kLossExample = 0.851115;
constexpr double kLossTolerance = 1e-6;
constexpr double kPostprocessTarget = -64.0;
constexpr double kAfmTrainingTarget = -55.0;
constexpr double kFieldTrainingTarget = -36.5;
constexpr double kVariationalSlack = 1e-8;
constexpr double kStageSlack = 1e-12;

constexpr double kLimit1 = 1.0, kLimit2 = 5.0, kLimit3 = 1.0, kLimit4 = 120.0, kLimit6 = 600.0,
                 kLimit7 = 3600.0;

// Worst (energy - exact ground energy) seen anywhere in this run.
double g_worst_gap = std::numeric_limits<double>::infinity();
long g_energies_checked = 0;

void note_energy(double energy, double ground) {
  g_worst_gap = std::min(g_worst_gap, energy - ground);
  ++g_energies_checked;
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

int g_failures = 0;

void run(int id, const std::string& title, double limit_s, const std::function<Outcome()>& body) {
  const auto start = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (limit_s > 0 && secs > limit_s) {
    o.pass = false;
    o.detail += "; over the " + format_number(limit_s) + " s limit";
  }
  if (!o.pass) ++g_failures;
  std::printf("criterion %2d %s  %s (%s; %.2f s)\n", id, o.pass ? "PASS" : "FAIL", title.c_str(),
              o.detail.c_str(), secs);
  std::fflush(stdout);
}

std::string fmt(double x, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, x);
  return buf;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome criterion1() {
  const double e0 = exact_ground_energy(build_heisenberg({10, 10, 4})).energy;
  return {std::abs(e0 - kAfmReference) <= kAfmTolerance, "E0 = " + fmt(e0)};
}

Outcome criterion2() {
  std::vector<double> e;
  for (double r : {0.01, 0.1, 0.5, 1.0}) e.push_back(exact_ground_energy(build_heisenberg({10, 10 * r, 4})).energy);
  double spread = 0.0;
  for (double x : e) spread = std::max(spread, std::abs(x - e[0]) / std::abs(e[0]));
  return {spread <= kPlateauRelTolerance, "max relative spread " + format_number(spread)};
}

Outcome criterion3() {
  const Hamiltonian h = build_heisenberg({1, 10, 4});
  const double e0 = exact_ground_energy(h).energy;
  const oracle::CMatrix H = oracle::hamiltonian_matrix(h);
  oracle::CVector v = oracle::CVector::Zero(16);
  v(15) = 1.0;  // every spin down
  const double residual = (H * v - (-37.0) * v).norm();
  return {std::abs(e0 + 37.0) <= kFieldTolerance && residual <= kFieldTolerance,
          "E0 = " + fmt(e0, 9) + ", eigen-residual of |1111> " + format_number(residual)};
}

double toy_loss(const TransformerModel& m, const std::vector<std::vector<int>>& seqs,
                const std::vector<std::vector<double>>& targets) {
  double loss = 0.0;
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    const auto l = cumulative_logits_for(m, seqs[i]);
    for (std::size_t t = 0; t < l.size(); ++t) loss += 0.5 * (l[t] - targets[i][t]) * (l[t] - targets[i][t]);
  }
  return loss;
}

Outcome criterion4() {
  std::mt19937_64 rng(404);
  const Hamiltonian h = build_heisenberg({10, 10, 4});
  const double e0 = exact_ground_energy(h).energy;
  double worst_shift = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const auto c = oracle::random_circuit(4, 12, rng);
    note_energy(circuit_energy(c, h, StateVector(4)), e0);
    const auto g = energy_gradient(c, h, StateVector(4));
    const auto fd = oracle::finite_difference_gradient(c, h, kFdStep);
    for (std::size_t j = 0; j < g.size(); ++j) worst_shift = std::max(worst_shift, std::abs(g[j] - fd[j]));
  }

  TransformerModel m(ModelConfig{2, 2, 16, 64, 51, 13, 17});
  const std::vector<std::vector<int>> seqs{{3, 9, 27, 50, 1, 2, 8, 8}, {44, 43, 12, 5, 16, 30}};
  const std::vector<std::vector<double>> targets{{0.3, -1, 2, 0.5, -0.2, 1, 1.5, -2}, {1, 2, -1, 0, 0.5, -0.5}};
  std::vector<double> grad(m.parameter_count(), 0.0);
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    const auto pass = teacher_forced(m, seqs[i]);
    std::vector<double> d(pass.cumulative_logits.size());
    for (std::size_t t = 0; t < d.size(); ++t) d[t] = pass.cumulative_logits[t] - targets[i][t];
    cumulative_logits_backward(m, pass, d, grad);
  }
  std::vector<std::size_t> picks;
  for (const auto& t : m.tensors()) picks.push_back(t.offset + rng() % t.size());
  for (int i = 0; i < 50; ++i) picks.push_back(rng() % m.parameter_count());
  double worst_rel = 0.0;
  auto params = m.parameters();
  for (std::size_t idx : picks) {
    const double saved = params[idx];
    params[idx] = saved + kBackpropFdStep;
    const double up = toy_loss(m, seqs, targets);
    params[idx] = saved - kBackpropFdStep;
    const double down = toy_loss(m, seqs, targets);
    params[idx] = saved;
    const double fd = (up - down) / (2 * kBackpropFdStep);
    const double denom = std::max({std::abs(fd), std::abs(grad[idx]), 1e-6});
    worst_rel = std::max(worst_rel, std::abs(fd - grad[idx]) / denom);
  }
  return {worst_shift <= kShiftGradTolerance && worst_rel <= kBackpropRelTolerance,
          "parameter shift max abs error " + format_number(worst_shift) + " over 50 circuits; backprop max rel error " +
              format_number(worst_rel) + " over " + std::to_string(picks.size()) + " parameters"};
}

Outcome criterion5() {
  const std::vector<SequenceTargets> example{{{1, 2}, {0, 1}}};
  const std::vector<SequenceTargets> matched{{{-3, 5, 1.25}, {-3, 5, 1.25}}, {{7, 2}, {7, 2}}};
  const double loss = weighted_mse_loss(example, 0.3);
  const double zero = weighted_mse_loss(matched, 0.3);
  return {std::abs(loss - kLossExample) <= kLossTolerance && zero == 0.0,
          "loss " + fmt(loss) + ", matched loss " + format_number(zero)};
}

Outcome criterion6() {
  const Vocabulary vocab(PoolConfig{});
  const Hamiltonian h = build_heisenberg({10, 10, 4});
  const double e0 = exact_ground_energy(h).energy;
  const TransformerModel model(desk_config(static_cast<int>(vocab.size()), 13));
  Rng rng(1);
  const auto r = postprocess_best_of(model, vocab, h, 20, 12, 0.5, RefineConfig{}, rng);
  bool monotone = true;
  int hits = 0;
  for (const auto& s : r.all) {
    monotone = monotone && s.refined_energy <= s.base_energy + kStageSlack &&
               s.final_energy <= s.refined_energy + kStageSlack;
    for (double e : {s.base_energy, s.refined_energy, s.final_energy}) note_energy(e, e0);
    hits += s.final_energy <= kPostprocessTarget;
  }
  return {r.best.final_energy <= kPostprocessTarget && monotone,
          "best " + fmt(r.best.final_energy) + " (base " + fmt(r.best.base_energy) + ", refined " +
              fmt(r.best.refined_energy) + "); " + std::to_string(hits) + "/20 samples reach " +
              format_number(kPostprocessTarget) + "; stages non-increasing: " + (monotone ? "yes" : "no")};
}

struct SeedRun {
  std::vector<double> per_epoch_min;
  double best = 0.0;
};

SeedRun train_seed(const HeisenbergSpec& spec, std::uint64_t seed, int epochs) {
  ExperimentConfig cfg;
  cfg.hamiltonian = spec;
  cfg.train.epochs = epochs;
  cfg.train.seed = seed;
  const Hamiltonian h = build_heisenberg(spec);
  const double e0 = exact_ground_energy(h).energy;
  const Vocabulary vocab(cfg.pool_config());
  const auto result = train(TransformerModel(cfg.model_config()), h, vocab, cfg.train);
  SeedRun run;
  run.best = std::numeric_limits<double>::infinity();
  for (const auto& rec : result.records) {
    run.per_epoch_min.push_back(rec.min_energy);
    run.best = std::min(run.best, rec.min_energy);
    for (double e : rec.energies_final) note_energy(e, e0);
  }
  return run;
}

Outcome criterion7() {
  constexpr int kEpochs = 200, kWindow = 50;
  const std::uint64_t seeds[] = {1, 2, 3};

  std::vector<SeedRun> afm;
  for (auto s : seeds) afm.push_back(train_seed({10, 10, 4}, s, kEpochs));
  std::vector<double> windows;
  for (int w = 0; w < kEpochs / kWindow; ++w) {
    double sum = 0.0;
    for (int e = w * kWindow; e < (w + 1) * kWindow; ++e) {
      std::vector<double> at;
      for (const auto& r : afm) at.push_back(r.per_epoch_min[static_cast<std::size_t>(e)]);
      sum += median(at);
    }
    windows.push_back(sum / kWindow);
  }
  bool monotone = true;
  for (std::size_t w = 1; w < windows.size(); ++w) monotone = monotone && windows[w] <= windows[w - 1];
  std::vector<double> afm_best;
  for (const auto& r : afm) afm_best.push_back(r.best);
  const double afm_median = median(afm_best);

  std::vector<double> field_best;
  for (auto s : seeds) field_best.push_back(train_seed({1, 10, 4}, s, kEpochs).best);
  const double field_median = median(field_best);

  std::string detail = "(10,10,4) best per seed";
  for (double b : afm_best) detail += " " + fmt(b, 2);
  detail += ", median " + fmt(afm_median, 2) + " (target <= " + format_number(kAfmTrainingTarget) + ")";
  detail += "; 50-epoch window means of the per-epoch median";
  for (double w : windows) detail += " " + fmt(w, 2);
  detail += monotone ? " (monotone)" : " (not monotone)";
  detail += "; (1,10,4) median best " + fmt(field_median, 4) + " (target <= " + format_number(kFieldTrainingTarget) + ")";
  return {monotone && afm_median <= kAfmTrainingTarget && field_median <= kFieldTrainingTarget, detail};
}

Outcome criterion8() {
  // Add random and refined circuits on several Hamiltonians to the energies
  // gathered by the other criteria.
  std::mt19937_64 rng(808);
  for (HeisenbergSpec spec : {HeisenbergSpec{10, 10, 4}, HeisenbergSpec{1, 10, 4}, HeisenbergSpec{-2, 0.5, 5}}) {
    const Hamiltonian h = build_heisenberg(spec);
    const double e0 = exact_ground_energy(h).energy;
    for (int trial = 0; trial < 300; ++trial) {
      note_energy(circuit_energy(oracle::random_circuit(spec.N, 12, rng), h, StateVector(spec.N)), e0);
    }
    for (int trial = 0; trial < 5; ++trial) {
      const auto r = angle_refinement(make_refinable(oracle::random_gates(spec.N, 12, rng), h), h, RefineConfig{});
      note_energy(r.circuit.energy, e0);
    }
  }
  return {g_worst_gap >= -kVariationalSlack,
          std::to_string(g_energies_checked) + " energies, smallest E - E0 = " + format_number(g_worst_gap)};
}

Outcome criterion9() {
  const fs::path root = fs::temp_directory_path() / "spingqe_acceptance_determinism";
  fs::remove_all(root);
  ExperimentConfig cfg;
  cfg.train.epochs = 10;
  cfg.train.checkpoint_every = 5;
  cfg.train.eval_samples = 20;
  cfg.train.seed = 99;
  std::string csv[2], heat[2];
  for (int k = 0; k < 2; ++k) {
    cfg.output_dir = root / ("train" + std::to_string(k));
    csv[k] = slurp(run_train(cfg).convergence_csv);
    ExperimentConfig g = cfg;
    g.train.epochs = 4;
    g.output_dir = root / ("grid" + std::to_string(k));
    run_gridsearch(g, {0.3, 1.0}, {10, 25}, 1 + k);
    heat[k] = slurp(g.output_dir / "heatmap.csv");
  }
  fs::remove_all(root);
  const bool same = csv[0] == csv[1] && heat[0] == heat[1] && !csv[0].empty() && !heat[0].empty();
  return {same, std::string("convergence.csv ") + (csv[0] == csv[1] ? "identical" : "differs") + ", heatmap.csv " +
                    (heat[0] == heat[1] ? "identical" : "differs") + " (second grid run used 2 jobs)"};
}

Outcome criterion10() {
  const Vocabulary standard(PoolConfig{4, PoolVariant::Standard});
  const Vocabulary enlarged(PoolConfig{4, PoolVariant::Enlarged});
  bool superset = enlarged.size() > standard.size();
  for (const auto& g : standard.gates()) superset = superset && enlarged.find(g).has_value();
  return {standard.size() == 131 && superset, "standard " + std::to_string(standard.size()) + " tokens, enlarged " +
                                                 std::to_string(enlarged.size()) +
                                                 (superset ? " (strict superset)" : " (not a superset)")};
}

}  // namespace

int main() {
  run(1, "exact ground energy of Heisenberg(10,10,4)", kLimit1, criterion1);
  run(2, "symmetry-protected plateau for h/J <= 1", kLimit2, criterion2);
  run(3, "field-dominated ground energy and polarized eigenstate", kLimit3, criterion3);
  run(4, "parameter-shift and backprop gradients", kLimit4, criterion4);
  run(5, "weighted MSE loss arithmetic", 0, criterion5);
  run(6, "post-processing from an untrained model", kLimit6, criterion6);
  run(7, "desk-scale training", kLimit7, criterion7);
  run(8, "variational bound over every simulated energy", 0, criterion8);
  run(9, "deterministic train and gridsearch CSVs", 0, criterion9);
  run(10, "vocabulary counting", 0, criterion10);
  std::printf("%d criterion(s) failed\n", g_failures);
  return g_failures == 0 ? 0 : 1;
}
