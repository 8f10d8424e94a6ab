#include "spingqe/transformer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numbers>

#include "spingqe/error.hpp"

namespace spingqe {

namespace {

constexpr double kLayerNormEps = 1e-5;
constexpr double kInitStd = 0.02;

using MatrixMap = Eigen::Map<Matrix>;
using ConstMatrixMap = Eigen::Map<const Matrix>;
using RowMap = Eigen::Map<Eigen::RowVectorXd>;
using ConstRowMap = Eigen::Map<const Eigen::RowVectorXd>;

std::vector<TensorInfo> layout(const ModelConfig& cfg) {
  std::vector<TensorInfo> out;
  std::size_t offset = 0;
  auto add = [&](std::string name, int rows, int cols) {
    out.push_back({std::move(name), rows, cols, offset});
    offset += out.back().size();
  };
  const int d = cfg.d_model;
  add("tok_emb", cfg.vocab_size, d);
  add("pos_emb", cfg.max_seq_len, d);
  for (int l = 0; l < cfg.n_layers; ++l) {
    const std::string p = "h" + std::to_string(l) + ".";
    add(p + "ln1.g", 1, d);
    add(p + "ln1.b", 1, d);
    add(p + "attn.w_qkv", d, 3 * d);
    add(p + "attn.b_qkv", 1, 3 * d);
    add(p + "attn.w_o", d, d);
    add(p + "attn.b_o", 1, d);
    add(p + "ln2.g", 1, d);
    add(p + "ln2.b", 1, d);
    add(p + "mlp.w_in", d, cfg.d_ff);
    add(p + "mlp.b_in", 1, cfg.d_ff);
    add(p + "mlp.w_out", cfg.d_ff, d);
    add(p + "mlp.b_out", 1, d);
  }
  add("ln_f.g", 1, d);
  add("ln_f.b", 1, d);
  add("head.w", d, cfg.vocab_size);
  add("head.b", 1, cfg.vocab_size);
  return out;
}

bool ends_with(std::string_view s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

Matrix layer_norm(const Matrix& x, const ConstRowMap& gain, const ConstRowMap& bias, Matrix& hat,
                  Eigen::VectorXd& rstd) {
  const Eigen::Index rows = x.rows();
  const double inv_d = 1.0 / static_cast<double>(x.cols());
  hat.resize(rows, x.cols());
  rstd.resize(rows);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const double mean = x.row(i).sum() * inv_d;
    const double var = (x.row(i).array() - mean).square().sum() * inv_d;
    rstd(i) = 1.0 / std::sqrt(var + kLayerNormEps);
    hat.row(i) = (x.row(i).array() - mean) * rstd(i);
  }
  Matrix out = hat.array().rowwise() * gain.array();
  out.rowwise() += bias;
  return out;
}

// Returns d(input); accumulates gain/bias gradients.
Matrix layer_norm_backward(const Matrix& d_out, const Matrix& hat, const Eigen::VectorXd& rstd,
                           const ConstRowMap& gain, RowMap d_gain, RowMap d_bias) {
  d_gain += (d_out.array() * hat.array()).colwise().sum().matrix();
  d_bias += d_out.colwise().sum();
  const Matrix d_hat = d_out.array().rowwise() * gain.array();
  const double inv_d = 1.0 / static_cast<double>(hat.cols());
  Matrix d_in(hat.rows(), hat.cols());
  for (Eigen::Index i = 0; i < hat.rows(); ++i) {
    const double mean_dh = d_hat.row(i).sum() * inv_d;
    const double mean_dh_hat = d_hat.row(i).dot(hat.row(i)) * inv_d;
    d_in.row(i) =
        rstd(i) * (d_hat.row(i).array() - mean_dh - hat.row(i).array() * mean_dh_hat);
  }
  return d_in;
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)

double gelu(double x) {
  return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + 0.044715 * x * x * x)));
}

double gelu_grad(double x) {
  const double u = kGeluC * (x + 0.044715 * x * x * x);
  const double t = std::tanh(u);
  const double du = kGeluC * (1.0 + 3.0 * 0.044715 * x * x);
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
}

}  // namespace

void validate(const ModelConfig& cfg) {
  if (cfg.n_layers < 1 || cfg.n_heads < 1 || cfg.d_model < 1 || cfg.d_ff < 1 ||
      cfg.vocab_size < 2 || cfg.max_seq_len < 1) {
    throw Error(ErrorKind::InvalidArgument, "model dimensions must be positive");
  }
  if (cfg.d_model % cfg.n_heads != 0) {
    throw Error(ErrorKind::InvalidArgument, "d_model " + std::to_string(cfg.d_model) +
                                                " is not divisible by n_heads " +
                                                std::to_string(cfg.n_heads));
  }
}

bool same_architecture(const ModelConfig& a, const ModelConfig& b) {
  return a.n_layers == b.n_layers && a.n_heads == b.n_heads && a.d_model == b.d_model &&
         a.d_ff == b.d_ff && a.vocab_size == b.vocab_size && a.max_seq_len == b.max_seq_len;
}

ModelConfig desk_config(int vocab_size, int max_seq_len) {
  ModelConfig cfg;
  cfg.vocab_size = vocab_size;
  cfg.max_seq_len = max_seq_len;
  return cfg;
}

std::size_t parameter_count(const ModelConfig& cfg) {
  validate(cfg);
  const auto t = layout(cfg);
  return t.back().offset + t.back().size();
}

TransformerModel::TransformerModel(const ModelConfig& cfg) : cfg_(cfg) {
  validate(cfg);
  tensors_ = layout(cfg);
  params_.assign(tensors_.back().offset + tensors_.back().size(), 0.0);

  Rng rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  // Residual output projections are scaled down with depth.
  const double residual_std = kInitStd / std::sqrt(2.0 * cfg.n_layers);
  for (const auto& t : tensors_) {
    auto values = std::span<double>(params_).subspan(t.offset, t.size());
    if (ends_with(t.name, ".g")) {
      std::fill(values.begin(), values.end(), 1.0);
    } else if (t.rows == 1) {
      std::fill(values.begin(), values.end(), 0.0);
    } else {
      const bool residual = ends_with(t.name, "attn.w_o") || ends_with(t.name, "mlp.w_out");
      const double std = residual ? residual_std : kInitStd;
      for (double& v : values) v = std * normal(rng);
    }
  }
}

const TensorInfo& TransformerModel::info(std::string_view name) const {
  for (const auto& t : tensors_) {
    if (t.name == name) return t;
  }
  throw Error(ErrorKind::InvalidArgument, "no tensor named " + std::string(name));
}

std::span<double> TransformerModel::tensor(std::string_view name) {
  const auto& t = info(name);
  return std::span<double>(params_).subspan(t.offset, t.size());
}

std::span<const double> TransformerModel::tensor(std::string_view name) const {
  const auto& t = info(name);
  return std::span<const double>(params_).subspan(t.offset, t.size());
}

Eigen::Map<const Matrix> TransformerModel::view(const TensorInfo& t) const {
  return ConstMatrixMap(params_.data() + t.offset, t.rows, t.cols);
}

void TransformerModel::check_tokens(std::span<const int> tokens) const {
  if (tokens.empty()) {
    throw Error(ErrorKind::InvalidArgument, "forward needs at least one token");
  }
  if (static_cast<int>(tokens.size()) > cfg_.max_seq_len) {
    throw Error(ErrorKind::InvalidArgument, "sequence of length " + std::to_string(tokens.size()) +
                                                " exceeds max_seq_len " +
                                                std::to_string(cfg_.max_seq_len));
  }
  for (int id : tokens) {
    if (id < 0 || id >= cfg_.vocab_size) {
      throw Error(ErrorKind::UnknownToken, "token id " + std::to_string(id) +
                                               " outside vocabulary of size " +
                                               std::to_string(cfg_.vocab_size));
    }
  }
}

Matrix TransformerModel::forward(std::span<const int> tokens) const {
  return forward_cached(tokens).logits;
}

ActivationCache TransformerModel::forward_cached(std::span<const int> tokens) const {
  check_tokens(tokens);
  const int seq = static_cast<int>(tokens.size());
  const int d = cfg_.d_model;
  const int heads = cfg_.n_heads;
  const int dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  auto row = [&](const TensorInfo& t) { return ConstRowMap(params_.data() + t.offset, t.cols); };

  ActivationCache cache;
  cache.tokens.assign(tokens.begin(), tokens.end());
  cache.layers.resize(cfg_.n_layers);

  std::size_t ti = 0;
  const auto tok_emb = view(tensors_[ti++]);
  const auto pos_emb = view(tensors_[ti++]);
  Matrix x(seq, d);
  for (int i = 0; i < seq; ++i) x.row(i) = tok_emb.row(tokens[i]) + pos_emb.row(i);

  for (int l = 0; l < cfg_.n_layers; ++l) {
    auto& c = cache.layers[l];
    const auto& ln1_g = tensors_[ti++];
    const auto& ln1_b = tensors_[ti++];
    const auto& w_qkv = tensors_[ti++];
    const auto& b_qkv = tensors_[ti++];
    const auto& w_o = tensors_[ti++];
    const auto& b_o = tensors_[ti++];
    const auto& ln2_g = tensors_[ti++];
    const auto& ln2_b = tensors_[ti++];
    const auto& w_in = tensors_[ti++];
    const auto& b_in = tensors_[ti++];
    const auto& w_out = tensors_[ti++];
    const auto& b_out = tensors_[ti++];

    c.x_in = x;
    c.ln1_out = layer_norm(x, row(ln1_g), row(ln1_b), c.ln1_hat, c.ln1_rstd);
    c.qkv = c.ln1_out * view(w_qkv);
    c.qkv.rowwise() += row(b_qkv);

    c.attn_concat.resize(seq, d);
    c.probs.resize(heads);
    for (int h = 0; h < heads; ++h) {
      const auto q = c.qkv.middleCols(h * dh, dh);
      const auto k = c.qkv.middleCols(d + h * dh, dh);
      const auto v = c.qkv.middleCols(2 * d + h * dh, dh);
      Matrix p = (q * k.transpose()) * scale;
      for (int i = 0; i < seq; ++i) {
        const double mx = p.row(i).head(i + 1).maxCoeff();
        double sum = 0.0;
        for (int j = 0; j <= i; ++j) {
          p(i, j) = std::exp(p(i, j) - mx);
          sum += p(i, j);
        }
        for (int j = 0; j <= i; ++j) p(i, j) /= sum;
        for (int j = i + 1; j < seq; ++j) p(i, j) = 0.0;
      }
      c.attn_concat.middleCols(h * dh, dh) = p * v;
      c.probs[h] = std::move(p);
    }
    x = c.x_in + c.attn_concat * view(w_o);
    x.rowwise() += row(b_o);
    c.x_mid = x;

    c.ln2_out = layer_norm(x, row(ln2_g), row(ln2_b), c.ln2_hat, c.ln2_rstd);
    c.ff_pre = c.ln2_out * view(w_in);
    c.ff_pre.rowwise() += row(b_in);
    c.ff_act = c.ff_pre.unaryExpr(&gelu);
    x += c.ff_act * view(w_out);
    x.rowwise() += row(b_out);
  }

  const auto& lnf_g = tensors_[ti++];
  const auto& lnf_b = tensors_[ti++];
  const auto& head_w = tensors_[ti++];
  const auto& head_b = tensors_[ti++];
  cache.final_out = layer_norm(x, row(lnf_g), row(lnf_b), cache.final_hat, cache.final_rstd);
  cache.logits = cache.final_out * view(head_w);
  cache.logits.rowwise() += row(head_b);
  return cache;
}

void TransformerModel::backward(const ActivationCache& cache, const Matrix& d_logits,
                                std::span<double> grad) const {
  if (grad.size() != params_.size()) {
    throw Error(ErrorKind::DimensionMismatch, "gradient buffer does not match parameter count");
  }
  if (d_logits.rows() != cache.logits.rows() || d_logits.cols() != cache.logits.cols()) {
    throw Error(ErrorKind::DimensionMismatch, "logit gradient shape does not match forward pass");
  }
  const int seq = static_cast<int>(cache.tokens.size());
  const int d = cfg_.d_model;
  const int heads = cfg_.n_heads;
  const int dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  auto g_mat = [&](const TensorInfo& t) { return MatrixMap(grad.data() + t.offset, t.rows, t.cols); };
  auto g_row = [&](const TensorInfo& t) { return RowMap(grad.data() + t.offset, t.cols); };
  auto p_row = [&](const TensorInfo& t) { return ConstRowMap(params_.data() + t.offset, t.cols); };

  std::size_t ti = tensors_.size();
  const auto& head_b = tensors_[--ti];
  const auto& head_w = tensors_[--ti];
  const auto& lnf_b = tensors_[--ti];
  const auto& lnf_g = tensors_[--ti];

  g_mat(head_w).noalias() += cache.final_out.transpose() * d_logits;
  g_row(head_b) += d_logits.colwise().sum();
  const Matrix d_final = d_logits * view(head_w).transpose();
  Matrix dx = layer_norm_backward(d_final, cache.final_hat, cache.final_rstd, p_row(lnf_g),
                                  g_row(lnf_g), g_row(lnf_b));

  for (int l = cfg_.n_layers - 1; l >= 0; --l) {
    const auto& c = cache.layers[l];
    const auto& b_out = tensors_[--ti];
    const auto& w_out = tensors_[--ti];
    const auto& b_in = tensors_[--ti];
    const auto& w_in = tensors_[--ti];
    const auto& ln2_b = tensors_[--ti];
    const auto& ln2_g = tensors_[--ti];
    const auto& b_o = tensors_[--ti];
    const auto& w_o = tensors_[--ti];
    const auto& b_qkv = tensors_[--ti];
    const auto& w_qkv = tensors_[--ti];
    const auto& ln1_b = tensors_[--ti];
    const auto& ln1_g = tensors_[--ti];

    // Feed-forward branch.
    g_mat(w_out).noalias() += c.ff_act.transpose() * dx;
    g_row(b_out) += dx.colwise().sum();
    Matrix d_pre = dx * view(w_out).transpose();
    d_pre.array() *= c.ff_pre.unaryExpr(&gelu_grad).array();
    g_mat(w_in).noalias() += c.ln2_out.transpose() * d_pre;
    g_row(b_in) += d_pre.colwise().sum();
    const Matrix d_ln2 = d_pre * view(w_in).transpose();
    dx += layer_norm_backward(d_ln2, c.ln2_hat, c.ln2_rstd, p_row(ln2_g), g_row(ln2_g),
                              g_row(ln2_b));

    // Attention branch.
    g_mat(w_o).noalias() += c.attn_concat.transpose() * dx;
    g_row(b_o) += dx.colwise().sum();
    const Matrix d_concat = dx * view(w_o).transpose();
    Matrix d_qkv = Matrix::Zero(seq, 3 * d);
    for (int h = 0; h < heads; ++h) {
      const Matrix& p = c.probs[h];
      const auto q = c.qkv.middleCols(h * dh, dh);
      const auto k = c.qkv.middleCols(d + h * dh, dh);
      const auto v = c.qkv.middleCols(2 * d + h * dh, dh);
      const auto d_o = d_concat.middleCols(h * dh, dh);
      const Matrix d_p = d_o * v.transpose();
      d_qkv.middleCols(2 * d + h * dh, dh).noalias() = p.transpose() * d_o;
      const Eigen::VectorXd inner = (d_p.array() * p.array()).rowwise().sum();
      Matrix d_s = p.array() * (d_p.array().colwise() - inner.array());
      d_s *= scale;
      d_qkv.middleCols(h * dh, dh).noalias() = d_s * k;
      d_qkv.middleCols(d + h * dh, dh).noalias() = d_s.transpose() * q;
    }
    g_mat(w_qkv).noalias() += c.ln1_out.transpose() * d_qkv;
    g_row(b_qkv) += d_qkv.colwise().sum();
    const Matrix d_ln1 = d_qkv * view(w_qkv).transpose();
    dx += layer_norm_backward(d_ln1, c.ln1_hat, c.ln1_rstd, p_row(ln1_g), g_row(ln1_g),
                              g_row(ln1_b));
  }

  const auto& pos_emb = tensors_[--ti];
  const auto& tok_emb = tensors_[--ti];
  auto d_tok = g_mat(tok_emb);
  auto d_pos = g_mat(pos_emb);
  for (int i = 0; i < seq; ++i) {
    d_tok.row(cache.tokens[i]) += dx.row(i);
    d_pos.row(i) += dx.row(i);
  }
}

IncrementalDecoder::IncrementalDecoder(const TransformerModel& model) : model_(model) {
  const auto& cfg = model.config();
  keys_.assign(cfg.n_layers, Matrix(cfg.max_seq_len, cfg.d_model));
  values_.assign(cfg.n_layers, Matrix(cfg.max_seq_len, cfg.d_model));
}

const Eigen::RowVectorXd& IncrementalDecoder::push(int token) {
  const auto& cfg = model_.config();
  if (length_ >= cfg.max_seq_len) {
    throw Error(ErrorKind::InvalidArgument, "decoder exceeded max_seq_len " +
                                                std::to_string(cfg.max_seq_len));
  }
  if (token < 0 || token >= cfg.vocab_size) {
    throw Error(ErrorKind::UnknownToken, "token id " + std::to_string(token) +
                                             " outside vocabulary of size " +
                                             std::to_string(cfg.vocab_size));
  }
  const int pos = length_;
  const int d = cfg.d_model;
  const int dh = d / cfg.n_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const auto& tensors = model_.tensors_;
  auto row = [&](const TensorInfo& t) {
    return ConstRowMap(model_.params_.data() + t.offset, t.cols);
  };
  auto norm = [](const Eigen::RowVectorXd& x, const ConstRowMap& g, const ConstRowMap& b) {
    const double mean = x.mean();
    const double var = (x.array() - mean).square().mean();
    const double rstd = 1.0 / std::sqrt(var + kLayerNormEps);
    Eigen::RowVectorXd out = ((x.array() - mean) * rstd * g.array()).matrix() + b;
    return out;
  };

  std::size_t ti = 0;
  const auto tok_emb = model_.view(tensors[ti++]);
  const auto pos_emb = model_.view(tensors[ti++]);
  Eigen::RowVectorXd x = tok_emb.row(token) + pos_emb.row(pos);

  for (int l = 0; l < cfg.n_layers; ++l) {
    const auto& ln1_g = tensors[ti++];
    const auto& ln1_b = tensors[ti++];
    const auto& w_qkv = tensors[ti++];
    const auto& b_qkv = tensors[ti++];
    const auto& w_o = tensors[ti++];
    const auto& b_o = tensors[ti++];
    const auto& ln2_g = tensors[ti++];
    const auto& ln2_b = tensors[ti++];
    const auto& w_in = tensors[ti++];
    const auto& b_in = tensors[ti++];
    const auto& w_out = tensors[ti++];
    const auto& b_out = tensors[ti++];

    const Eigen::RowVectorXd a = norm(x, row(ln1_g), row(ln1_b));
    const Eigen::RowVectorXd qkv = a * model_.view(w_qkv) + row(b_qkv);
    keys_[l].row(pos) = qkv.segment(d, d);
    values_[l].row(pos) = qkv.segment(2 * d, d);

    Eigen::RowVectorXd concat(d);
    for (int h = 0; h < cfg.n_heads; ++h) {
      const auto q = qkv.segment(h * dh, dh);
      const auto k = keys_[l].block(0, h * dh, pos + 1, dh);
      const auto v = values_[l].block(0, h * dh, pos + 1, dh);
      Eigen::RowVectorXd p = (q * k.transpose()) * scale;
      p = (p.array() - p.maxCoeff()).exp().matrix();
      p /= p.sum();
      concat.segment(h * dh, dh) = p * v;
    }
    x += concat * model_.view(w_o) + row(b_o);

    const Eigen::RowVectorXd c = norm(x, row(ln2_g), row(ln2_b));
    const Eigen::RowVectorXd act = (c * model_.view(w_in) + row(b_in)).unaryExpr(&gelu);
    x += act * model_.view(w_out) + row(b_out);
  }
  const auto& lnf_g = tensors[ti++];
  const auto& lnf_b = tensors[ti++];
  const auto& head_w = tensors[ti++];
  const auto& head_b = tensors[ti++];
  logits_ = norm(x, row(lnf_g), row(lnf_b)) * model_.view(head_w) + row(head_b);
  ++length_;
  return logits_;
}

int sample_token(std::span<const double> logits, double tau, Rng& rng) {
  if (!(tau > 0.0)) throw Error(ErrorKind::InvalidArgument, "temperature must be positive");
  if (logits.size() < 2) throw Error(ErrorKind::InvalidArgument, "no non-BOS tokens to sample");
  double lowest = std::numeric_limits<double>::infinity();
  for (std::size_t k = 1; k < logits.size(); ++k) {
    if (!std::isfinite(logits[k]))
      throw Error(ErrorKind::NonFinite, "non-finite logit for token " + std::to_string(k));
    lowest = std::min(lowest, logits[k]);
  }
  std::vector<double> weights(logits.size(), 0.0);
  for (std::size_t k = 1; k < logits.size(); ++k) {
    weights[k] = std::exp(-(logits[k] - lowest) / tau);
  }
  std::discrete_distribution<int> dist(weights.begin(), weights.end());
  return dist(rng);
}

std::vector<SampledSequence> sample_circuits(const TransformerModel& model,
                                             const Vocabulary& vocab, int M, int T, double tau,
                                             Rng& rng) {
  if (M < 1 || T < 1) throw Error(ErrorKind::InvalidArgument, "need M >= 1 and T >= 1");
  if (vocab.size() != model.config().vocab_size) {
    throw Error(ErrorKind::ConfigMismatch, "vocabulary size " + std::to_string(vocab.size()) +
                                               " does not match model vocab_size " +
                                               std::to_string(model.config().vocab_size));
  }
  std::vector<SampledSequence> out(M);
  for (auto& seq : out) {
    IncrementalDecoder decoder(model);
    const Eigen::RowVectorXd* logits = &decoder.push(kBosToken);
    double running = 0.0;
    for (int t = 0; t < T; ++t) {
      const std::span<const double> row(logits->data(), static_cast<std::size_t>(logits->size()));
      const int id = sample_token(row, tau, rng);
      running += row[id];
      seq.token_ids.push_back(id);
      seq.per_step_logits.push_back(row[id]);
      seq.cumulative_logits.push_back(running);
      if (t + 1 < T) logits = &decoder.push(id);
    }
  }
  return out;
}

TeacherForcedPass teacher_forced(const TransformerModel& model, std::span<const int> sequence) {
  if (sequence.empty()) throw Error(ErrorKind::InvalidArgument, "sequence must be non-empty");
  for (int id : sequence) {
    if (id <= kBosToken || id >= model.config().vocab_size) {
      throw Error(ErrorKind::UnknownToken, "token id " + std::to_string(id) +
                                               " is not a gate token of this model");
    }
  }
  // Logits at position s predict token s+1; the last token needs no successor.
  std::vector<int> input{kBosToken};
  input.insert(input.end(), sequence.begin(), sequence.end() - 1);
  TeacherForcedPass pass;
  pass.sequence.assign(sequence.begin(), sequence.end());
  pass.cache = model.forward_cached(input);
  double running = 0.0;
  for (std::size_t s = 0; s < sequence.size(); ++s) {
    running += pass.cache.logits(static_cast<Eigen::Index>(s), sequence[s]);
    pass.cumulative_logits.push_back(running);
  }
  return pass;
}

std::vector<double> cumulative_logits_for(const TransformerModel& model,
                                          std::span<const int> sequence) {
  return teacher_forced(model, sequence).cumulative_logits;
}

void cumulative_logits_backward(const TransformerModel& model, const TeacherForcedPass& pass,
                                std::span<const double> d_cumulative, std::span<double> grad) {
  const std::size_t T = pass.sequence.size();
  if (d_cumulative.size() != T) {
    throw Error(ErrorKind::DimensionMismatch, "gradient length does not match sequence length");
  }
  // l_t = sum_{s<=t} z_s, so dL/dz_s = sum_{t>=s} dL/dl_t.
  Matrix d_logits = Matrix::Zero(pass.cache.logits.rows(), pass.cache.logits.cols());
  double suffix = 0.0;
  for (std::size_t s = T; s-- > 0;) {
    suffix += d_cumulative[s];
    d_logits(static_cast<Eigen::Index>(s), pass.sequence[s]) = suffix;
  }
  model.backward(pass.cache, d_logits, grad);
}

TransformerModel average_checkpoints(std::span<const TransformerModel> checkpoints) {
  if (checkpoints.empty()) {
    throw Error(ErrorKind::InvalidArgument, "average_checkpoints needs at least one model");
  }
  TransformerModel out = checkpoints.front();
  for (const auto& m : checkpoints.subspan(1)) {
    if (!same_architecture(m.config(), out.config())) {
      throw Error(ErrorKind::ConfigMismatch, "cannot average checkpoints with different configs");
    }
  }
  auto acc = out.parameters();
  for (const auto& m : checkpoints.subspan(1)) {
    const auto p = m.parameters();
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += p[i];
  }
  const double inv = 1.0 / static_cast<double>(checkpoints.size());
  for (double& v : acc) v *= inv;
  return out;
}

namespace {

constexpr char kMagic[8] = {'S', 'G', 'Q', 'E', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kFormatVersion = 1;

template <typename T>
void put(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in, const std::filesystem::path& path) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw Error(ErrorKind::Corrupt, path.string() + ": truncated checkpoint");
  return v;
}

struct RawCheckpoint {
  ModelConfig config;
  std::vector<std::pair<TensorInfo, std::vector<double>>> tensors;
};

RawCheckpoint read_raw(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open checkpoint " + path.string());

  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0) {
    throw Error(ErrorKind::Corrupt, path.string() + ": not a checkpoint file");
  }
  const auto version = get<std::uint32_t>(in, path);
  if (version != kFormatVersion) {
    throw Error(ErrorKind::VersionMismatch, path.string() + ": checkpoint format version " +
                                                std::to_string(version) + ", expected " +
                                                std::to_string(kFormatVersion));
  }
  RawCheckpoint raw;
  auto& c = raw.config;
  c.n_layers = static_cast<int>(get<std::int64_t>(in, path));
  c.n_heads = static_cast<int>(get<std::int64_t>(in, path));
  c.d_model = static_cast<int>(get<std::int64_t>(in, path));
  c.d_ff = static_cast<int>(get<std::int64_t>(in, path));
  c.vocab_size = static_cast<int>(get<std::int64_t>(in, path));
  c.max_seq_len = static_cast<int>(get<std::int64_t>(in, path));
  c.seed = get<std::uint64_t>(in, path);

  const auto count = get<std::uint64_t>(in, path);
  if (count > 100000) throw Error(ErrorKind::Corrupt, path.string() + ": implausible tensor count");
  for (std::uint64_t i = 0; i < count; ++i) {
    TensorInfo info;
    const auto name_len = get<std::uint32_t>(in, path);
    if (name_len > 4096) throw Error(ErrorKind::Corrupt, path.string() + ": bad tensor name");
    info.name.resize(name_len);
    in.read(info.name.data(), name_len);
    if (!in) throw Error(ErrorKind::Corrupt, path.string() + ": truncated checkpoint");
    info.rows = static_cast<int>(get<std::uint64_t>(in, path));
    info.cols = static_cast<int>(get<std::uint64_t>(in, path));
    if (info.rows < 0 || info.cols < 0 || info.size() > (std::size_t{1} << 32)) {
      throw Error(ErrorKind::Corrupt, path.string() + ": bad tensor shape");
    }
    std::vector<double> data(info.size());
    in.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(double)));
    if (!in) throw Error(ErrorKind::Corrupt, path.string() + ": truncated checkpoint");
    raw.tensors.emplace_back(std::move(info), std::move(data));
  }
  return raw;
}

void copy_tensors(TransformerModel& model, const RawCheckpoint& raw,
                  const std::filesystem::path& path) {
  const auto& expected = model.tensors();
  if (raw.tensors.size() != expected.size()) {
    throw Error(ErrorKind::Corrupt, path.string() + ": tensor count does not match config");
  }
  auto params = model.parameters();
  for (std::size_t i = 0; i < expected.size(); ++i) {
    const auto& [info, data] = raw.tensors[i];
    if (info.name != expected[i].name || info.rows != expected[i].rows ||
        info.cols != expected[i].cols) {
      throw Error(ErrorKind::Corrupt, path.string() + ": unexpected tensor " + info.name);
    }
    std::copy(data.begin(), data.end(), params.begin() + static_cast<std::ptrdiff_t>(expected[i].offset));
  }
}

}  // namespace

void save_checkpoint(const TransformerModel& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::Io, "cannot write checkpoint " + path.string());
  out.write(kMagic, sizeof kMagic);
  put(out, kFormatVersion);
  const auto& c = model.config();
  for (int v : {c.n_layers, c.n_heads, c.d_model, c.d_ff, c.vocab_size, c.max_seq_len}) {
    put(out, static_cast<std::int64_t>(v));
  }
  put(out, c.seed);
  put(out, static_cast<std::uint64_t>(model.tensors().size()));
  const auto params = model.parameters();
  for (const auto& t : model.tensors()) {
    put(out, static_cast<std::uint32_t>(t.name.size()));
    out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    put(out, static_cast<std::uint64_t>(t.rows));
    put(out, static_cast<std::uint64_t>(t.cols));
    out.write(reinterpret_cast<const char*>(params.data() + t.offset),
              static_cast<std::streamsize>(t.size() * sizeof(double)));
  }
  if (!out) throw Error(ErrorKind::Io, "failed writing checkpoint " + path.string());
}

TransformerModel load_checkpoint(const std::filesystem::path& path) {
  const RawCheckpoint raw = read_raw(path);
  try {
    validate(raw.config);
  } catch (const Error& e) {
    throw Error(ErrorKind::Corrupt, path.string() + ": " + e.what());
  }
  TransformerModel model(raw.config);
  copy_tensors(model, raw, path);
  return model;
}

void load_checkpoint(TransformerModel& model, const std::filesystem::path& path) {
  const RawCheckpoint raw = read_raw(path);
  const auto& want = model.config();
  const auto& got = raw.config;
  if (!same_architecture(got, want)) {
    throw Error(ErrorKind::ConfigMismatch,
                path.string() + ": stored config (layers " + std::to_string(got.n_layers) +
                    ", heads " + std::to_string(got.n_heads) + ", d_model " +
                    std::to_string(got.d_model) + ", vocab_size " + std::to_string(got.vocab_size) +
                    ") does not match the target model (vocab_size " +
                    std::to_string(want.vocab_size) + ")");
  }
  copy_tensors(model, raw, path);
  model.set_seed(got.seed);
}

}  // namespace spingqe
