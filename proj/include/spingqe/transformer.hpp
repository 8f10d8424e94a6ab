#pragma once

// Decoder-only transformer over the gate vocabulary, with hand-written
// backpropagation.
//
// Architecture: learned token and positional embeddings, n_layers pre-norm
// residual blocks (causal multi-head self-attention, GELU feed-forward),
// a final layer norm and a linear projection to vocab_size logits.
//
// Sign convention: logits are regressed onto energies, so a LOW logit means a
// LOW predicted energy. Sampling therefore draws token k with probability
// proportional to exp(-logit_k / tau).

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "spingqe/operator_pool.hpp"

namespace spingqe {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Rng = std::mt19937_64;

struct ModelConfig {
  int n_layers = 4;
  int n_heads = 4;
  int d_model = 128;
  int d_ff = 512;
  int vocab_size = 131;
  int max_seq_len = 13;
  std::uint64_t seed = 0;

  bool operator==(const ModelConfig&) const = default;
};

void validate(const ModelConfig& cfg);

// Equal in every field except the initialization seed.
bool same_architecture(const ModelConfig& a, const ModelConfig& b);

// Desk-scale default (about 1M parameters with the 4-qubit pool).
ModelConfig desk_config(int vocab_size, int max_seq_len);

// Exact parameter count for cfg without allocating.
std::size_t parameter_count(const ModelConfig& cfg);

struct TensorInfo {
  std::string name;
  int rows = 0;
  int cols = 0;
  std::size_t offset = 0;

  std::size_t size() const { return static_cast<std::size_t>(rows) * cols; }
};

// Intermediate activations of one forward pass, consumed by backward().
struct ActivationCache {
  struct Layer {
    Matrix x_in;       // residual stream entering the block
    Matrix ln1_hat;    // normalized, before gain/bias
    Eigen::VectorXd ln1_rstd;
    Matrix ln1_out;
    Matrix qkv;
    std::vector<Matrix> probs;  // per head, S x S
    Matrix attn_concat;
    Matrix x_mid;      // after the attention residual
    Matrix ln2_hat;
    Eigen::VectorXd ln2_rstd;
    Matrix ln2_out;
    Matrix ff_pre;     // before GELU
    Matrix ff_act;
  };
  std::vector<int> tokens;
  std::vector<Layer> layers;
  Matrix final_hat;
  Eigen::VectorXd final_rstd;
  Matrix final_out;
  Matrix logits;
};

class TransformerModel {
 public:
  // Random initialization driven by cfg.seed.
  explicit TransformerModel(const ModelConfig& cfg);

  const ModelConfig& config() const { return cfg_; }
  std::size_t parameter_count() const { return params_.size(); }
  const std::vector<TensorInfo>& tensors() const { return tensors_; }
  void set_seed(std::uint64_t seed) { cfg_.seed = seed; }

  std::span<const double> parameters() const { return params_; }
  std::span<double> parameters() { return params_; }

  const TensorInfo& info(std::string_view name) const;
  std::span<double> tensor(std::string_view name);
  std::span<const double> tensor(std::string_view name) const;

  // Next-token logits for every position, shape (tokens.size(), vocab_size).
  Matrix forward(std::span<const int> tokens) const;
  ActivationCache forward_cached(std::span<const int> tokens) const;

  // Accumulates d(loss)/d(parameters) into grad given d(loss)/d(logits).
  void backward(const ActivationCache& cache, const Matrix& d_logits,
                std::span<double> grad) const;

 private:
  friend class IncrementalDecoder;
  void check_tokens(std::span<const int> tokens) const;
  Eigen::Map<const Matrix> view(const TensorInfo& t) const;

  ModelConfig cfg_;
  std::vector<TensorInfo> tensors_;
  std::vector<double> params_;
};

// Autoregressive decoding with cached keys and values; each push() costs one
// position instead of a full forward over the prefix.
class IncrementalDecoder {
 public:
  explicit IncrementalDecoder(const TransformerModel& model);

  // Appends token and returns next-token logits at the new position.
  const Eigen::RowVectorXd& push(int token);
  int length() const { return length_; }

 private:
  const TransformerModel& model_;
  int length_ = 0;
  std::vector<Matrix> keys_;    // per layer, max_seq_len x d_model
  std::vector<Matrix> values_;
  Eigen::RowVectorXd logits_;
};

struct SampledSequence {
  std::vector<int> token_ids;            // no BOS
  std::vector<double> per_step_logits;   // logit of the chosen token
  std::vector<double> cumulative_logits; // running sums of per_step_logits
};

// Draws one token from probabilities proportional to exp(-logit/tau),
// skipping BOS.
int sample_token(std::span<const double> logits, double tau, Rng& rng);

std::vector<SampledSequence> sample_circuits(const TransformerModel& model,
                                             const Vocabulary& vocab, int M, int T, double tau,
                                             Rng& rng);

// Teacher-forced pass over BOS + sequence.
std::vector<double> cumulative_logits_for(const TransformerModel& model,
                                          std::span<const int> sequence);

struct TeacherForcedPass {
  std::vector<int> sequence;
  std::vector<double> cumulative_logits;
  ActivationCache cache;
};

TeacherForcedPass teacher_forced(const TransformerModel& model, std::span<const int> sequence);

// Backpropagates d(loss)/d(l_t) through the cumulative sums into grad.
void cumulative_logits_backward(const TransformerModel& model, const TeacherForcedPass& pass,
                                std::span<const double> d_cumulative, std::span<double> grad);

TransformerModel average_checkpoints(std::span<const TransformerModel> checkpoints);

void save_checkpoint(const TransformerModel& model, const std::filesystem::path& path);
TransformerModel load_checkpoint(const std::filesystem::path& path);
// Loads into an existing model; the stored architecture must match.
void load_checkpoint(TransformerModel& model, const std::filesystem::path& path);

}  // namespace spingqe
