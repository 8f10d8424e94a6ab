#include "spingqe/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "spingqe/error.hpp"

namespace spingqe {

void validate(const TrainConfig& cfg) {
  std::vector<std::string> problems;
  if (!(cfg.beta > 0.0)) problems.push_back("beta must be > 0");
  if (cfg.M < 1) problems.push_back("M must be >= 1");
  if (cfg.T < 1) problems.push_back("T must be >= 1");
  if (!(cfg.tau > 0.0)) problems.push_back("tau must be > 0");
  if (!(cfg.lr > 0.0)) problems.push_back("lr must be > 0");
  if (!(cfg.weight_decay >= 0.0)) problems.push_back("weight_decay must be >= 0");
  if (cfg.epochs < 0) problems.push_back("epochs must be >= 0");
  if (cfg.checkpoint_every < 1) problems.push_back("checkpoint_every must be >= 1");
  if (cfg.n_best_checkpoints < 1) problems.push_back("n_best_checkpoints must be >= 1");
  if (cfg.eval_samples < 1) problems.push_back("eval_samples must be >= 1");
  if (!problems.empty()) {
    std::string msg = "invalid training config:";
    for (const auto& p : problems) msg += " " + p + ";";
    throw Error(ErrorKind::InvalidArgument, msg);
  }
}

double energy_weight(double energy, double beta) {
  const double x = beta * energy;
  if (x > 700.0) return 0.0;
  if (x < -700.0) return 1.0;
  return 1.0 / (1.0 + std::exp(x));
}

namespace {

void check_lengths(std::span<const SequenceTargets> batch) {
  if (batch.empty()) throw Error(ErrorKind::InvalidArgument, "loss needs a non-empty batch");
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& s = batch[i];
    if (s.cumulative_logits.size() != s.prefix_energies.size() || s.prefix_energies.empty()) {
      throw Error(ErrorKind::DimensionMismatch,
                  "sequence " + std::to_string(i) + ": " +
                      std::to_string(s.cumulative_logits.size()) + " logits vs " +
                      std::to_string(s.prefix_energies.size()) + " energies");
    }
  }
}

}  // namespace

double weighted_mse_loss(std::span<const SequenceTargets> batch, double beta) {
  check_lengths(batch);
  double total = 0.0;
  for (const auto& s : batch) {
    const double w = energy_weight(s.prefix_energies.back(), beta);
    double sq = 0.0;
    for (std::size_t t = 0; t < s.prefix_energies.size(); ++t) {
      const double r = s.cumulative_logits[t] - s.prefix_energies[t];
      sq += r * r;
    }
    total += w * sq;
  }
  return total / static_cast<double>(batch.size());
}

std::vector<std::vector<double>> weighted_mse_gradient(std::span<const SequenceTargets> batch,
                                                       double beta) {
  check_lengths(batch);
  const double scale = 2.0 / static_cast<double>(batch.size());
  std::vector<std::vector<double>> out;
  out.reserve(batch.size());
  for (const auto& s : batch) {
    const double w = energy_weight(s.prefix_energies.back(), beta);
    std::vector<double> g(s.prefix_energies.size());
    for (std::size_t t = 0; t < g.size(); ++t) {
      g[t] = scale * w * (s.cumulative_logits[t] - s.prefix_energies[t]);
    }
    out.push_back(std::move(g));
  }
  return out;
}

AdamW::AdamW(std::size_t n_params, double lr, double weight_decay, double beta1, double beta2,
             double eps)
    : lr_(lr),
      weight_decay_(weight_decay),
      beta1_(beta1),
      beta2_(beta2),
      eps_(eps),
      m_(n_params, 0.0),
      v_(n_params, 0.0) {}

void AdamW::step(std::span<double> params, std::span<const double> grad) {
  if (params.size() != m_.size() || grad.size() != m_.size()) {
    throw Error(ErrorKind::DimensionMismatch, "AdamW buffer size mismatch");
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    params[i] -= lr_ * weight_decay_ * params[i];
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grad[i];
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grad[i] * grad[i];
    const double m_hat = m_[i] / bc1;
    const double v_hat = v_[i] / bc2;
    params[i] -= lr_ * m_hat / (std::sqrt(v_hat) + eps_);
  }
}

std::vector<double> sequence_energies(std::span<const int> tokens, const Vocabulary& vocab,
                                      const Hamiltonian& h) {
  Circuit circuit;
  circuit.reserve(tokens.size());
  for (int id : tokens) circuit.push_back(token_to_gate(vocab, id));
  return prefix_energies(circuit, h, StateVector(h.n_qubits()));
}

namespace {

std::string describe_batch(const std::vector<SequenceTargets>& batch,
                           const std::vector<std::vector<int>>& sequences) {
  std::ostringstream out;
  out.precision(17);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    out << "\n  sequence " << i << ": tokens";
    for (int id : sequences[i]) out << ' ' << id;
    out << " | logits";
    for (double l : batch[i].cumulative_logits) out << ' ' << l;
    out << " | energies";
    for (double e : batch[i].prefix_energies) out << ' ' << e;
  }
  return out.str();
}

std::filesystem::path checkpoint_path(const std::filesystem::path& dir, int epoch) {
  char name[64];
  std::snprintf(name, sizeof name, "checkpoint_epoch_%05d.bin", epoch);
  return dir / name;
}

}  // namespace

TrainResult train(TransformerModel model, const Hamiltonian& h, const Vocabulary& vocab,
                  const TrainConfig& cfg) {
  validate(cfg);
  if (vocab.n_qubits() != h.n_qubits()) {
    throw Error(ErrorKind::ConfigMismatch, "vocabulary is for " + std::to_string(vocab.n_qubits()) +
                                               " qubits, Hamiltonian has " +
                                               std::to_string(h.n_qubits()));
  }
  if (vocab.size() != model.config().vocab_size) {
    throw Error(ErrorKind::ConfigMismatch, "model vocab_size does not match the operator pool");
  }
  if (cfg.T > model.config().max_seq_len) {
    throw Error(ErrorKind::ConfigMismatch, "T exceeds the model's max_seq_len");
  }
  if (!cfg.checkpoint_dir.empty()) std::filesystem::create_directories(cfg.checkpoint_dir);

  TrainResult result{std::move(model), {}, {}};
  TransformerModel& m = result.model;
  AdamW opt(m.parameter_count(), cfg.lr, cfg.weight_decay);
  Rng rng(cfg.seed);
  std::vector<double> grad(m.parameter_count());

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto samples = sample_circuits(m, vocab, cfg.M, cfg.T, cfg.tau, rng);

    std::vector<TeacherForcedPass> passes;
    std::vector<SequenceTargets> batch;
    EpochRecord rec;
    rec.epoch = epoch;
    for (const auto& s : samples) {
      passes.push_back(teacher_forced(m, s.token_ids));
      batch.push_back({passes.back().cumulative_logits, sequence_energies(s.token_ids, vocab, h)});
      rec.sequences.push_back(s.token_ids);
      rec.energies_final.push_back(batch.back().prefix_energies.back());
    }

    rec.loss = weighted_mse_loss(batch, cfg.beta);
    if (!std::isfinite(rec.loss)) {
      throw Error(ErrorKind::NonFinite, "non-finite loss at epoch " + std::to_string(epoch) +
                                            describe_batch(batch, rec.sequences));
    }
    const auto d_logits = weighted_mse_gradient(batch, cfg.beta);
    std::fill(grad.begin(), grad.end(), 0.0);
    for (std::size_t i = 0; i < passes.size(); ++i) {
      cumulative_logits_backward(m, passes[i], d_logits[i], grad);
    }
    opt.step(m.parameters(), grad);

    const auto& e = rec.energies_final;
    rec.min_energy = *std::min_element(e.begin(), e.end());
    rec.max_energy = *std::max_element(e.begin(), e.end());
    rec.mean_energy = std::accumulate(e.begin(), e.end(), 0.0) / static_cast<double>(e.size());
    result.records.push_back(std::move(rec));

    if (!cfg.checkpoint_dir.empty() && epoch % cfg.checkpoint_every == 0) {
      const auto path = checkpoint_path(cfg.checkpoint_dir, epoch);
      save_checkpoint(m, path);
      result.checkpoints.push_back(path);
    }
  }
  return result;
}

namespace {

double min_sampled_energy(const TransformerModel& model, const Hamiltonian& h,
                          const Vocabulary& vocab, const TrainConfig& cfg, std::uint64_t stream) {
  Rng rng(cfg.seed * 0x9E3779B97F4A7C15ULL + stream + 1);
  const auto samples = sample_circuits(model, vocab, cfg.eval_samples, cfg.T, cfg.tau, rng);
  double best = std::numeric_limits<double>::infinity();
  for (const auto& s : samples) {
    best = std::min(best, sequence_energies(s.token_ids, vocab, h).back());
  }
  return best;
}

}  // namespace

namespace {

// (min sampled energy, index) ascending; stable on ties so earlier
// checkpoints win.
std::vector<std::pair<double, std::size_t>> rank_models(std::span<const TransformerModel> models,
                                                        const Hamiltonian& h,
                                                        const Vocabulary& vocab,
                                                        const TrainConfig& cfg) {
  validate(cfg);
  if (static_cast<int>(models.size()) < cfg.n_best_checkpoints) {
    throw Error(ErrorKind::InvalidArgument, "need at least " +
                                                std::to_string(cfg.n_best_checkpoints) +
                                                " checkpoints, got " +
                                                std::to_string(models.size()));
  }
  std::vector<std::pair<double, std::size_t>> scored;
  for (std::size_t i = 0; i < models.size(); ++i) {
    scored.emplace_back(min_sampled_energy(models[i], h, vocab, cfg, i), i);
  }
  std::stable_sort(scored.begin(), scored.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  return scored;
}

SelectionResult average_top(std::span<const TransformerModel> models,
                            const std::vector<std::pair<double, std::size_t>>& scored,
                            int n_best) {
  std::vector<TransformerModel> best;
  for (int r = 0; r < n_best; ++r) best.push_back(models[scored[r].second]);
  SelectionResult out{average_checkpoints(best), {}};
  for (const auto& [energy, index] : scored) out.ranking.push_back({{}, energy});
  return out;
}

}  // namespace

SelectionResult select_and_average_best(std::span<const TransformerModel> models,
                                        const Hamiltonian& h, const Vocabulary& vocab,
                                        const TrainConfig& cfg) {
  const auto scored = rank_models(models, h, vocab, cfg);
  return average_top(models, scored, cfg.n_best_checkpoints);
}

SelectionResult select_and_average_best(std::span<const std::filesystem::path> checkpoints,
                                        const Hamiltonian& h, const Vocabulary& vocab,
                                        const TrainConfig& cfg) {
  std::vector<TransformerModel> models;
  for (const auto& p : checkpoints) models.push_back(load_checkpoint(p));
  const auto scored = rank_models(models, h, vocab, cfg);
  SelectionResult out = average_top(models, scored, cfg.n_best_checkpoints);
  for (std::size_t r = 0; r < scored.size(); ++r) out.ranking[r].path = checkpoints[scored[r].second];
  return out;
}

GateStatistics gate_statistics(const TransformerModel& model, const Vocabulary& vocab,
                               int n_samples, int T, double tau, Rng& rng) {
  if (n_samples < 1) throw Error(ErrorKind::InvalidArgument, "n_samples must be >= 1");
  GateStatistics stats;
  for (const auto& s : sample_circuits(model, vocab, n_samples, T, tau, rng)) {
    for (int id : s.token_ids) {
      const Gate& g = vocab.gate(id);
      GateSlot slot{g.tmpl, g.qubits};
      ++stats.slot_counts[slot];
      ++stats.angle_counts[slot][g.angle];
      ++stats.total;
    }
  }
  return stats;
}

}  // namespace spingqe
