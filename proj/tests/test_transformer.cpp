#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "spingqe/error.hpp"
#include "spingqe/transformer.hpp"

using namespace spingqe;

namespace {

ModelConfig tiny_config(std::uint64_t seed = 1) {
  ModelConfig c;
  c.n_layers = 2;
  c.n_heads = 2;
  c.d_model = 16;
  c.d_ff = 64;
  c.vocab_size = 51;
  c.max_seq_len = 12;
  c.seed = seed;
  return c;
}

void zero_head(TransformerModel& m) {
  for (auto name : {"head.w", "head.b"}) {
    auto t = m.tensor(name);
    std::fill(t.begin(), t.end(), 0.0);
  }
}

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("spingqe_" + name);
}

// Scalar loss over cumulative logits with fixed random targets.
double toy_loss(const TransformerModel& m, const std::vector<std::vector<int>>& seqs,
                const std::vector<std::vector<double>>& targets) {
  double loss = 0.0;
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    const auto l = cumulative_logits_for(m, seqs[i]);
    for (std::size_t t = 0; t < l.size(); ++t) loss += 0.5 * (l[t] - targets[i][t]) * (l[t] - targets[i][t]);
  }
  return loss;
}

}  // namespace

TEST_CASE("forward shape and zero head") {
  TransformerModel m(tiny_config());
  const std::vector<int> prefix{0, 4, 9, 20};
  const Matrix logits = m.forward(prefix);
  CHECK(logits.rows() == 4);
  CHECK(logits.cols() == 51);
  zero_head(m);
  CHECK(m.forward(prefix).cwiseAbs().maxCoeff() == 0.0);
  CHECK(cumulative_logits_for(m, std::vector<int>{3, 7, 11}) == std::vector<double>{0.0, 0.0, 0.0});
}

TEST_CASE("forward errors") {
  TransformerModel m(tiny_config());
  CHECK_THROWS_AS(m.forward(std::vector<int>(13, 1)), Error);
  try {
    m.forward(std::vector<int>{0, 51});
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::UnknownToken);
  }
  CHECK_THROWS_AS(cumulative_logits_for(m, std::vector<int>{0, 3}), Error);
}

TEST_CASE("causal mask: suffix edits leave earlier logits bitwise unchanged") {
  TransformerModel m(tiny_config(7));
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> tok(1, 50);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<int> a{0};
    for (int i = 0; i < 11; ++i) a.push_back(tok(rng));
    const int t = 1 + trial % 11;
    std::vector<int> b = a;
    b[t] = 1 + (b[t] % 50);
    const Matrix la = m.forward(a), lb = m.forward(b);
    CHECK(la.topRows(t) == lb.topRows(t));
  }
}

TEST_CASE("forward is deterministic for a fixed seed") {
  const std::vector<int> prefix{0, 5, 6, 7};
  CHECK(TransformerModel(tiny_config(42)).forward(prefix) == TransformerModel(tiny_config(42)).forward(prefix));
  CHECK(TransformerModel(tiny_config(42)).forward(prefix) != TransformerModel(tiny_config(43)).forward(prefix));
}

TEST_CASE("incremental decoder matches the full forward pass") {
  TransformerModel m(tiny_config(5));
  const std::vector<int> seq{0, 12, 40, 3, 3, 17, 29, 50, 1};
  const Matrix full = m.forward(seq);
  IncrementalDecoder dec(m);
  for (std::size_t i = 0; i < seq.size(); ++i) {
    const auto& row = dec.push(seq[i]);
    CHECK((row - full.row(static_cast<Eigen::Index>(i))).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("cumulative logits") {
  TransformerModel m(tiny_config(9));
  const std::vector<int> seq{4, 8, 15, 16, 23, 42};
  const auto l = cumulative_logits_for(m, seq);
  std::vector<int> input{0};
  input.insert(input.end(), seq.begin(), seq.end() - 1);
  const Matrix logits = m.forward(input);
  CHECK(l[0] == logits(0, 4));
  CHECK(l[5] - l[4] == doctest::Approx(logits(5, 42)).epsilon(1e-12));
  CHECK(cumulative_logits_for(m, std::vector<int>{4})[0] == logits(0, 4));
}

TEST_CASE("sampling records per-step and cumulative logits consistently") {
  TransformerModel m(tiny_config(11));
  PoolConfig pc;
  pc.n_qubits = 2;
  const Vocabulary v(pc);
  Rng rng(1);
  const auto samples = sample_circuits(m, v, 5, 12, 0.5, rng);
  REQUIRE(samples.size() == 5);
  for (const auto& s : samples) {
    REQUIRE(s.token_ids.size() == 12);
    double run = 0.0;
    for (std::size_t t = 0; t < 12; ++t) {
      CHECK(s.token_ids[t] != kBosToken);
      run += s.per_step_logits[t];
      CHECK(s.cumulative_logits[t] == run);
    }
    const auto replay = cumulative_logits_for(m, s.token_ids);
    for (std::size_t t = 0; t < 12; ++t) CHECK(std::abs(replay[t] - s.cumulative_logits[t]) < 1e-9);
  }
}

TEST_CASE("temperature sampling statistics") {
  SUBCASE("equal logits are uniform over non-BOS tokens") {
    std::vector<double> logits(131, 0.25);
    Rng rng(2);
    std::vector<long> counts(131, 0);
    const int draws = 100000;
    for (int i = 0; i < draws; ++i) ++counts[static_cast<std::size_t>(sample_token(logits, 0.5, rng))];
    CHECK(counts[0] == 0);
    const double p = 1.0 / 130, mean = draws * p, sd = std::sqrt(draws * p * (1 - p));
    for (int k = 1; k < 131; ++k) CHECK(std::abs(counts[static_cast<std::size_t>(k)] - mean) < 4 * sd);
  }
  SUBCASE("logit gap of tau*ln2 gives a 2:1 ratio") {
    const double tau = 0.5, a = 1.7;
    std::vector<double> logits{0.0, a, a + tau * std::log(2.0)};
    Rng rng(4);
    const int draws = 100000;
    long low = 0;
    for (int i = 0; i < draws; ++i) low += sample_token(logits, tau, rng) == 1;
    const double p = 2.0 / 3.0, sd = std::sqrt(draws * p * (1 - p));
    CHECK(std::abs(low - draws * p) < 4 * sd);
  }
  SUBCASE("tau -> 0 picks the argmin logit") {
    std::mt19937_64 gen(8);
    std::uniform_real_distribution<double> u(-1, 1);
    std::vector<double> logits(131);
    for (auto& l : logits) l = u(gen);
    const auto argmin = std::min_element(logits.begin() + 1, logits.end()) - logits.begin();
    Rng rng(5);
    int hits = 0;
    for (int i = 0; i < 10000; ++i) hits += sample_token(logits, 1e-6, rng) == argmin;
    CHECK(hits > 9990);
  }
}

TEST_CASE("backprop matches central finite differences") {
  TransformerModel m(tiny_config(17));
  const std::vector<std::vector<int>> seqs{{3, 9, 27, 50, 1, 2, 8, 8}, {44, 43, 12, 5, 16, 30}};
  const std::vector<std::vector<double>> targets{{0.3, -1, 2, 0.5, -0.2, 1, 1.5, -2}, {1, 2, -1, 0, 0.5, -0.5}};

  std::vector<double> grad(m.parameter_count(), 0.0);
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    const auto pass = teacher_forced(m, seqs[i]);
    std::vector<double> d(pass.cumulative_logits.size());
    for (std::size_t t = 0; t < d.size(); ++t) d[t] = pass.cumulative_logits[t] - targets[i][t];
    cumulative_logits_backward(m, pass, d, grad);
  }

  std::mt19937_64 rng(23);
  // Spot-check every tensor plus 20 uniformly random entries.
  std::vector<std::size_t> picks;
  for (const auto& t : m.tensors()) picks.push_back(t.offset + rng() % t.size());
  for (int i = 0; i < 20; ++i) picks.push_back(rng() % m.parameter_count());

  const double step = 1e-4;
  auto params = m.parameters();
  for (std::size_t idx : picks) {
    const double saved = params[idx];
    params[idx] = saved + step;
    const double up = toy_loss(m, seqs, targets);
    params[idx] = saved - step;
    const double down = toy_loss(m, seqs, targets);
    params[idx] = saved;
    const double fd = (up - down) / (2 * step);
    const double denom = std::max({std::abs(fd), std::abs(grad[idx]), 1e-6});
    INFO("param " << idx);
    CHECK(std::abs(fd - grad[idx]) / denom < 1e-3);
  }
}

TEST_CASE("checkpoint averaging") {
  TransformerModel a(tiny_config(1));
  SUBCASE("single checkpoint") {
    const auto avg = average_checkpoints(std::vector<TransformerModel>{a});
    CHECK(std::equal(avg.parameters().begin(), avg.parameters().end(), a.parameters().begin()));
  }
  SUBCASE("theta and -theta cancel") {
    TransformerModel b = a;
    for (double& v : b.parameters()) v = -v;
    const auto avg = average_checkpoints(std::vector<TransformerModel>{a, b});
    for (double v : avg.parameters()) CHECK(v == 0.0);
  }
  SUBCASE("three random checkpoints") {
    const std::vector<TransformerModel> ms{TransformerModel(tiny_config(1)), TransformerModel(tiny_config(2)),
                                           TransformerModel(tiny_config(3))};
    const auto avg = average_checkpoints(ms);
    std::mt19937_64 rng(1);
    for (int i = 0; i < 100; ++i) {
      const std::size_t k = rng() % avg.parameter_count();
      const double mean = (ms[0].parameters()[k] + ms[1].parameters()[k] + ms[2].parameters()[k]) / 3.0;
      CHECK(avg.parameters()[k] == doctest::Approx(mean).epsilon(1e-15));
    }
  }
  SUBCASE("config mismatch") {
    ModelConfig other = tiny_config();
    other.vocab_size = 52;
    try {
      average_checkpoints(std::vector<TransformerModel>{a, TransformerModel(other)});
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::ConfigMismatch);
    }
  }
}

TEST_CASE("checkpoint persistence") {
  const auto path = temp_file("ckpt.bin");
  TransformerModel m(tiny_config(31));
  save_checkpoint(m, path);

  SUBCASE("round trip is bitwise") {
    const TransformerModel loaded = load_checkpoint(path);
    CHECK(loaded.config() == m.config());
    CHECK(std::equal(loaded.parameters().begin(), loaded.parameters().end(), m.parameters().begin()));
    const std::vector<int> prefix{0, 1, 2, 3};
    CHECK(loaded.forward(prefix) == m.forward(prefix));
  }
  SUBCASE("truncated file is a corruption error") {
    const auto bad = temp_file("ckpt_trunc.bin");
    std::filesystem::copy_file(path, bad, std::filesystem::copy_options::overwrite_existing);
    std::filesystem::resize_file(bad, std::filesystem::file_size(path) / 2);
    try {
      load_checkpoint(bad);
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::Corrupt);
    }
  }
  SUBCASE("vocab mismatch is a config error") {
    ModelConfig other = tiny_config();
    other.vocab_size = 131;
    TransformerModel target(other);
    try {
      load_checkpoint(target, path);
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::ConfigMismatch);
    }
  }
  SUBCASE("version and i/o errors are distinguishable") {
    const auto bad = temp_file("ckpt_version.bin");
    std::filesystem::copy_file(path, bad, std::filesystem::copy_options::overwrite_existing);
    {
      std::fstream f(bad, std::ios::in | std::ios::out | std::ios::binary);
      f.seekp(8);
      const std::uint32_t v = 99;
      f.write(reinterpret_cast<const char*>(&v), sizeof v);
    }
    try {
      load_checkpoint(bad);
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::VersionMismatch);
    }
    try {
      load_checkpoint(temp_file("does_not_exist.bin"));
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::Io);
    }
  }
}

TEST_CASE("parameter counts") {
  const ModelConfig desk = desk_config(131, 12);
  CHECK(parameter_count(desk) == TransformerModel(desk).parameter_count());
  CHECK(parameter_count(desk) > 500000);
  CHECK(parameter_count(desk) < 1500000);

  ModelConfig large;
  large.n_layers = 12;
  large.n_heads = 8;
  large.d_model = 512;
  large.d_ff = 2048;
  large.vocab_size = 131;
  large.max_seq_len = 12;
  const std::size_t n = parameter_count(large);
  MESSAGE("12-layer, 8-head, d_model 512 config: " << n << " parameters (reference figure 37.83M)");
  CHECK(n > 30000000);
  CHECK(n < 45000000);
}
