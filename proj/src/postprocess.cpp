#include "spingqe/postprocess.hpp"

#include <gsl/gsl_errno.h>
#include <gsl/gsl_multimin.h>

#include <cmath>
#include <limits>
#include <memory>
#include <string>

#include "spingqe/error.hpp"

namespace spingqe {

namespace {

struct Objective {
  const std::vector<Gate>* gates;
  const Hamiltonian* h;
  int n_qubits;
  double best_energy = std::numeric_limits<double>::infinity();
  std::vector<double> best_angles;

  Circuit circuit_at(const gsl_vector* x) const {
    Circuit c = to_circuit(*gates);
    for (std::size_t j = 0; j < c.size(); ++j) c[j].angle = gsl_vector_get(x, j);
    return c;
  }

  void record(const gsl_vector* x, double e) {
    if (std::isfinite(e) && e < best_energy) {
      best_energy = e;
      best_angles.assign(x->data, x->data + x->size);
    }
  }

  double f(const gsl_vector* x) {
    const double e = circuit_energy(circuit_at(x), *h, StateVector(n_qubits));
    record(x, e);
    return e;
  }

  void df(const gsl_vector* x, gsl_vector* g) {
    const auto grad = energy_gradient(circuit_at(x), *h, StateVector(n_qubits));
    for (std::size_t j = 0; j < grad.size(); ++j) gsl_vector_set(g, j, grad[j]);
  }
};

double obj_f(const gsl_vector* x, void* p) { return static_cast<Objective*>(p)->f(x); }
void obj_df(const gsl_vector* x, void* p, gsl_vector* g) { static_cast<Objective*>(p)->df(x, g); }
void obj_fdf(const gsl_vector* x, void* p, double* f, gsl_vector* g) {
  *f = obj_f(x, p);
  obj_df(x, p, g);
}

struct VectorDeleter {
  void operator()(gsl_vector* v) const { gsl_vector_free(v); }
};
using VectorPtr = std::unique_ptr<gsl_vector, VectorDeleter>;

VectorPtr angles_of(const std::vector<Gate>& gates) {
  VectorPtr x(gsl_vector_alloc(gates.size()));
  for (std::size_t j = 0; j < gates.size(); ++j) gsl_vector_set(x.get(), j, gates[j].angle);
  return x;
}

double norm(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

// Returns (converged, iterations).
std::pair<bool, int> run_bfgs(Objective& obj, const std::vector<Gate>& gates, const RefineConfig& cfg) {
  const std::size_t n = gates.size();
  gsl_multimin_function_fdf fn{&obj_f, &obj_df, &obj_fdf, n, &obj};
  std::unique_ptr<gsl_multimin_fdfminimizer, decltype(&gsl_multimin_fdfminimizer_free)> s(
      gsl_multimin_fdfminimizer_alloc(gsl_multimin_fdfminimizer_vector_bfgs2, n),
      &gsl_multimin_fdfminimizer_free);
  VectorPtr x = angles_of(gates);
  gsl_multimin_fdfminimizer_set(s.get(), &fn, x.get(), 0.1, 0.1);
  if (gsl_multimin_test_gradient(s->gradient, cfg.gradient_tolerance) == GSL_SUCCESS) return {true, 0};

  for (int it = 1; it <= cfg.max_iters; ++it) {
    const int status = gsl_multimin_fdfminimizer_iterate(s.get());
    if (gsl_multimin_test_gradient(s->gradient, cfg.gradient_tolerance) == GSL_SUCCESS) return {true, it};
    // The line search stalls at the roundoff floor, typically with a
    // gradient norm near 1e-6; accept that as a stationary point.
    if (status == GSL_ENOPROG)
      return {gsl_multimin_test_gradient(s->gradient, 1e3 * cfg.gradient_tolerance) == GSL_SUCCESS, it};
    if (status != GSL_SUCCESS) return {false, it};
  }
  return {false, cfg.max_iters};
}

std::pair<bool, int> run_simplex(Objective& obj, const std::vector<Gate>& gates, const RefineConfig& cfg) {
  const std::size_t n = gates.size();
  gsl_multimin_function fn{&obj_f, n, &obj};
  std::unique_ptr<gsl_multimin_fminimizer, decltype(&gsl_multimin_fminimizer_free)> s(
      gsl_multimin_fminimizer_alloc(gsl_multimin_fminimizer_nmsimplex2, n), &gsl_multimin_fminimizer_free);
  VectorPtr x = angles_of(gates);
  VectorPtr step(gsl_vector_alloc(n));
  int total = 0;
  // Restart from the best vertex until a restart no longer lowers the energy.
  for (double last = std::numeric_limits<double>::infinity();;) {
    gsl_vector_set_all(step.get(), 0.5);
    gsl_multimin_fminimizer_set(s.get(), &fn, x.get(), step.get());
    bool done = false;
    while (!done) {
      if (total >= cfg.max_iters * static_cast<int>(n + 1)) return {false, total};
      ++total;
      if (gsl_multimin_fminimizer_iterate(s.get()) != GSL_SUCCESS) break;
      const double size = gsl_multimin_fminimizer_size(s.get());
      done = gsl_multimin_test_size(size, 1e-7) == GSL_SUCCESS;
    }
    if (s->fval > last - cfg.energy_tolerance) return {true, total};
    last = s->fval;
    gsl_vector_memcpy(x.get(), s->x);
  }
}

}  // namespace

void validate(const RefineConfig& cfg) {
  std::string bad;
  if (cfg.max_iters < 0) bad += " max_iters must be >= 0;";
  if (!(cfg.gradient_tolerance > 0)) bad += " gradient_tolerance must be > 0;";
  if (!(cfg.energy_tolerance > 0)) bad += " energy_tolerance must be > 0;";
  if (!bad.empty()) throw Error(ErrorKind::InvalidArgument, "refine config:" + bad);
}

double evaluate(const std::vector<Gate>& gates, const Hamiltonian& h) {
  for (const auto& g : gates) validate_gate(g, h.n_qubits());
  return circuit_energy(to_circuit(gates), h, StateVector(h.n_qubits()));
}

RefinableCircuit make_refinable(std::vector<Gate> gates, const Hamiltonian& h) {
  const double e = evaluate(gates, h);
  return {std::move(gates), e};
}

RefineResult angle_refinement(const RefinableCircuit& circuit, const Hamiltonian& h,
                              const RefineConfig& cfg) {
  validate(cfg);
  RefineResult out;
  out.circuit.gates = circuit.gates;
  out.circuit.energy = evaluate(circuit.gates, h);
  if (circuit.gates.empty()) return out;

  gsl_error_handler_t* old = gsl_set_error_handler_off();
  Objective obj{&circuit.gates, &h, h.n_qubits(), std::numeric_limits<double>::infinity(), {}};
  std::pair<bool, int> status;
  try {
    status = cfg.method == RefineMethod::QuasiNewton ? run_bfgs(obj, circuit.gates, cfg)
                                                     : run_simplex(obj, circuit.gates, cfg);
  } catch (...) {
    gsl_set_error_handler(old);
    throw;
  }
  gsl_set_error_handler(old);

  out.converged = status.first;
  out.iterations = status.second;
  if (obj.best_energy < out.circuit.energy) {
    for (std::size_t j = 0; j < out.circuit.gates.size(); ++j) out.circuit.gates[j].angle = obj.best_angles[j];
    out.circuit.energy = obj.best_energy;
  }
  out.gradient_norm =
      norm(energy_gradient(to_circuit(out.circuit.gates), h, StateVector(h.n_qubits())));
  return out;
}

std::vector<std::vector<int>> qubit_combinations(int n_qubits, int arity) {
  std::vector<std::vector<int>> out;
  if (arity == 1) {
    for (int i = 0; i < n_qubits; ++i) out.push_back({i});
  } else if (arity == 2) {
    for (int i = 0; i < n_qubits; ++i)
      for (int j = i + 1; j < n_qubits; ++j) out.push_back({i, j});
  } else {
    throw Error(ErrorKind::InvalidArgument, "unsupported gate arity " + std::to_string(arity));
  }
  return out;
}

WireSwapResult wire_swap_loop(const RefinableCircuit& circuit, const Hamiltonian& h,
                              const RefineConfig& cfg) {
  validate(cfg);
  WireSwapResult out;
  out.base_energy = evaluate(circuit.gates, h);

  RefineResult first = angle_refinement(circuit, h, cfg);
  out.all_converged = first.converged;
  RefinableCircuit current = std::move(first.circuit);
  out.refined_energy = current.energy;

  for (bool improved = true; improved;) {
    improved = false;
    ++out.passes;
    for (std::size_t i = 0; i < current.gates.size(); ++i) {
      const Gate op = current.gates[i];
      for (const auto& q : qubit_combinations(h.n_qubits(), template_arity(op.tmpl))) {
        RefinableCircuit trial = current;
        trial.gates[i] = Gate{op.tmpl, q, op.angle};
        trial.energy = evaluate(trial.gates, h);
        RefineResult r = angle_refinement(trial, h, cfg);
        out.all_converged = out.all_converged && r.converged;
        if (r.circuit.energy < current.energy) {
          current = std::move(r.circuit);
          out.accepted_energies.push_back(current.energy);
          improved = true;
        }
      }
    }
    if (!cfg.repeat_until_converged) break;
  }
  out.final_energy = current.energy;
  out.circuit = std::move(current);
  return out;
}

BestOfResult postprocess_best_of(const TransformerModel& model, const Vocabulary& vocab,
                                 const Hamiltonian& h, int n_samples, int T, double tau,
                                 const RefineConfig& cfg, Rng& rng) {
  if (n_samples < 1) throw Error(ErrorKind::InvalidArgument, "n_samples must be >= 1");
  if (vocab.n_qubits() != h.n_qubits())
    throw Error(ErrorKind::DimensionMismatch, "vocabulary and Hamiltonian qubit counts differ");
  BestOfResult out;
  for (const auto& s : sample_circuits(model, vocab, n_samples, T, tau, rng)) {
    std::vector<Gate> gates;
    for (int id : s.token_ids) gates.push_back(vocab.gate(id));
    out.all.push_back(wire_swap_loop(make_refinable(std::move(gates), h), h, cfg));
    out.sampled_tokens.push_back(s.token_ids);
  }
  std::size_t best = 0;
  for (std::size_t k = 1; k < out.all.size(); ++k)
    if (out.all[k].final_energy < out.all[best].final_energy) best = k;
  out.best = out.all[best];
  return out;
}

}  // namespace spingqe
