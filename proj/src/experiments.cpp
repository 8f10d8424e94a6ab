#include "spingqe/experiments.hpp"

#include <yaml-cpp/yaml.h>

#include <atomic>
#include <charconv>
#include <cmath>
#include <exception>
#include <fstream>
#include <functional>
#include <json.hpp>
#include <limits>
#include <map>
#include <mutex>
#include <random>
#include <sstream>
#include <thread>

#include "spingqe/error.hpp"

namespace spingqe {

namespace {

using json = nlohmann::json;

template <class T>
bool parse_number(const std::string& s, T& out) {
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && ptr == end;
}

struct Key {
  std::string name;
  std::string doc;
  std::function<bool(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

template <class T, class Member>
Key number(std::string name, std::string doc, Member member) {
  return {std::move(name), std::move(doc),
          [member](ExperimentConfig& c, const std::string& v) { return parse_number<T>(v, member(c)); },
          [member](const ExperimentConfig& c) {
            if constexpr (std::is_floating_point_v<T>) {
              return format_number(member(c));
            } else {
              return std::to_string(member(c));
            }
          }};
}

std::string pool_name(PoolVariant v) { return v == PoolVariant::Standard ? "standard" : "enlarged"; }

std::string method_name(RefineMethod m) {
  return m == RefineMethod::QuasiNewton ? "quasi-newton" : "derivative-free";
}

const std::vector<Key>& keys() {
  using C = ExperimentConfig;
  static const std::vector<Key> all = {
      number<double>("J", "exchange coupling", [](auto& c) -> auto& { return c.hamiltonian.J; }),
      number<double>("h", "magnetic field", [](auto& c) -> auto& { return c.hamiltonian.h; }),
      number<int>("N", "number of spins (qubits)", [](auto& c) -> auto& { return c.hamiltonian.N; }),
      {"pool", "operator pool: standard | enlarged",
       [](C& c, const std::string& v) {
         if (v == "standard") c.pool = PoolVariant::Standard;
         else if (v == "enlarged") c.pool = PoolVariant::Enlarged;
         else return false;
         return true;
       },
       [](const C& c) { return pool_name(c.pool); }},
      number<int>("n_layers", "transformer blocks", [](auto& c) -> auto& { return c.model.n_layers; }),
      number<int>("n_heads", "attention heads", [](auto& c) -> auto& { return c.model.n_heads; }),
      number<int>("d_model", "embedding width", [](auto& c) -> auto& { return c.model.d_model; }),
      number<int>("d_ff", "feed-forward width", [](auto& c) -> auto& { return c.model.d_ff; }),
      number<int>("max_seq_len", "positions the model accepts", [](auto& c) -> auto& { return c.model.max_seq_len; }),
      number<double>("beta", "energy weighting sharpness", [](auto& c) -> auto& { return c.train.beta; }),
      number<int>("M", "circuits per epoch", [](auto& c) -> auto& { return c.train.M; }),
      number<int>("T", "gates per circuit", [](auto& c) -> auto& { return c.train.T; }),
      number<double>("tau", "sampling temperature", [](auto& c) -> auto& { return c.train.tau; }),
      number<double>("lr", "AdamW learning rate", [](auto& c) -> auto& { return c.train.lr; }),
      number<double>("weight_decay", "AdamW weight decay", [](auto& c) -> auto& { return c.train.weight_decay; }),
      number<int>("epochs", "training epochs", [](auto& c) -> auto& { return c.train.epochs; }),
      number<int>("checkpoint_every", "epochs between checkpoints", [](auto& c) -> auto& { return c.train.checkpoint_every; }),
      number<int>("n_best_checkpoints", "checkpoints averaged into the final model",
                  [](auto& c) -> auto& { return c.train.n_best_checkpoints; }),
      number<int>("eval_samples", "circuits sampled per checkpoint for ranking",
                  [](auto& c) -> auto& { return c.train.eval_samples; }),
      number<std::uint64_t>("seed", "seed for initialization and sampling", [](auto& c) -> auto& { return c.train.seed; }),
      {"refine_method", "angle refinement: quasi-newton | derivative-free",
       [](C& c, const std::string& v) {
         if (v == "quasi-newton") c.refine.method = RefineMethod::QuasiNewton;
         else if (v == "derivative-free") c.refine.method = RefineMethod::DerivativeFree;
         else return false;
         return true;
       },
       [](const C& c) { return method_name(c.refine.method); }},
      number<int>("max_iters", "refinement iteration cap", [](auto& c) -> auto& { return c.refine.max_iters; }),
      number<double>("gradient_tolerance", "refinement gradient-norm tolerance",
                     [](auto& c) -> auto& { return c.refine.gradient_tolerance; }),
      number<double>("energy_tolerance", "refinement energy tolerance",
                     [](auto& c) -> auto& { return c.refine.energy_tolerance; }),
      {"repeat_until_converged", "repeat wire-swap passes until none improves: true | false",
       [](C& c, const std::string& v) {
         if (v == "true") c.refine.repeat_until_converged = true;
         else if (v == "false") c.refine.repeat_until_converged = false;
         else return false;
         return true;
       },
       [](const C& c) { return std::string(c.refine.repeat_until_converged ? "true" : "false"); }},
      number<int>("samples", "circuits drawn for post-processing, scans and statistics",
                  [](auto& c) -> auto& { return c.samples; }),
      {"output_dir", "directory for all outputs",
       [](C& c, const std::string& v) {
         c.output_dir = v;
         return !v.empty();
       },
       [](const C& c) { return c.output_dir.string(); }},
  };
  return all;
}

const Key* find_key(const std::string& name) {
  for (const auto& k : keys())
    if (k.name == name) return &k;
  return nullptr;
}

// Runs a validator and collects its message instead of throwing.
template <class F>
void collect(std::vector<std::string>& problems, F&& check) {
  try {
    check();
  } catch (const Error& e) {
    problems.emplace_back(e.what());
  }
}

std::string join(const std::vector<std::string>& parts, const std::string& sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) out += (i ? sep : "") + parts[i];
  return out;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::Io, "cannot create " + dir.string() + ": " + ec.message());
}

std::ofstream open_out(const fs::path& path) {
  ensure_dir(path.parent_path().empty() ? fs::path(".") : path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  return out;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Independent generator for a (purpose, index) pair under one seed.
Rng stream_rng(std::uint64_t seed, std::uint64_t purpose, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(purpose), static_cast<std::uint32_t>(index)};
  return Rng(seq);
}

enum Purpose : std::uint64_t { kPostprocess = 1, kScanModel = 2, kScanPost = 3, kStats = 4 };

std::string qubits_str(const std::vector<int>& q) {
  std::string s;
  for (std::size_t i = 0; i < q.size(); ++i) s += (i ? "-" : "") + std::to_string(q[i]);
  return s;
}

struct TrainedModel {
  TrainResult run;
  TransformerModel final_model;
  int models_averaged = 0;
};

// Trains and averages the best checkpoints. With fewer checkpoints than
// n_best_checkpoints it averages all of them; with none it keeps the last
// model.
TrainedModel train_and_select(const ExperimentConfig& cfg, const Hamiltonian& h,
                              const Vocabulary& vocab, const fs::path& checkpoint_dir) {
  TrainConfig tc = cfg.train;
  tc.checkpoint_dir = checkpoint_dir;
  TrainResult run = train(TransformerModel(cfg.model_config()), h, vocab, tc);
  if (run.checkpoints.empty()) {
    TransformerModel last = run.model;
    return {std::move(run), std::move(last), 0};
  }
  tc.n_best_checkpoints = std::min<int>(tc.n_best_checkpoints, static_cast<int>(run.checkpoints.size()));
  SelectionResult sel = select_and_average_best(run.checkpoints, h, vocab, tc);
  return {std::move(run), std::move(sel.model), tc.n_best_checkpoints};
}

double best_of(const std::vector<EpochRecord>& records) {
  double best = std::numeric_limits<double>::quiet_NaN();
  for (const auto& r : records)
    if (!(r.min_energy >= best)) best = r.min_energy;
  return best;
}

TransformerModel load_for(const ExperimentConfig& cfg, const Vocabulary& vocab, const fs::path& path) {
  TransformerModel m = load_checkpoint(path);
  if (m.config().vocab_size != vocab.size()) {
    throw Error(ErrorKind::ConfigMismatch, "model " + path.string() + " has vocab_size " +
                                               std::to_string(m.config().vocab_size) + ", the " +
                                               pool_name(cfg.pool) + " pool for N=" +
                                               std::to_string(cfg.hamiltonian.N) + " has " +
                                               std::to_string(vocab.size()));
  }
  return m;
}

void write_stages(const fs::path& path, const std::string& meta, const WireSwapResult& r) {
  auto out = open_out(path);
  CsvWriter csv(out, meta, {"stage", "energy"});
  csv.row({"base", format_number(r.base_energy)});
  csv.row({"angle_refinement", format_number(r.refined_energy)});
  csv.row({"wire_swap", format_number(r.final_energy)});
}

CircuitFile to_file(const RefinableCircuit& c, int n_qubits) { return {n_qubits, c.gates, c.energy}; }

}  // namespace

PoolConfig ExperimentConfig::pool_config() const {
  PoolConfig p;
  p.n_qubits = hamiltonian.N;
  p.variant = pool;
  return p;
}

ModelConfig ExperimentConfig::model_config() const {
  ModelConfig m = model;
  m.vocab_size = static_cast<int>(Vocabulary(pool_config()).size());
  m.seed = train.seed;
  return m;
}

void validate(const ExperimentConfig& cfg) {
  std::vector<std::string> problems;
  collect(problems, [&] { validate(cfg.hamiltonian); });
  if (cfg.hamiltonian.N > kMaxDenseQubits)
    problems.push_back("N: at most " + std::to_string(kMaxDenseQubits) + " qubits are supported");
  collect(problems, [&] { validate(cfg.train); });
  collect(problems, [&] { validate(cfg.refine); });
  if (cfg.hamiltonian.N >= 2 && cfg.hamiltonian.N <= kMaxDenseQubits) {
    collect(problems, [&] { validate(cfg.model_config()); });
  }
  if (cfg.train.T > cfg.model.max_seq_len) problems.push_back("T: exceeds max_seq_len");
  if (cfg.samples < 1) problems.push_back("samples: must be >= 1");
  if (cfg.output_dir.empty()) problems.push_back("output_dir: must not be empty");
  if (!problems.empty()) throw Error(ErrorKind::Schema, "invalid config: " + join(problems, "; "));
}

ExperimentConfig parse_config(const std::string& text) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::Exception& e) {
    throw Error(ErrorKind::Schema, std::string("config is not valid YAML: ") + e.what());
  }
  ExperimentConfig cfg;
  if (root.IsNull()) return cfg;
  if (!root.IsMap()) throw Error(ErrorKind::Schema, "config must be a mapping of key: value");
  std::vector<std::string> problems;
  for (const auto& entry : root) {
    const auto name = entry.first.as<std::string>();
    const Key* key = find_key(name);
    if (!key) {
      problems.push_back(name + ": unknown key");
    } else if (!entry.second.IsScalar()) {
      problems.push_back(name + ": expected a scalar");
    } else if (!key->set(cfg, entry.second.Scalar())) {
      problems.push_back(name + ": cannot parse '" + entry.second.Scalar() + "'");
    }
  }
  if (!problems.empty()) throw Error(ErrorKind::Schema, "invalid config: " + join(problems, "; "));
  return cfg;
}

ExperimentConfig load_config(const fs::path& path) { return parse_config(read_file(path)); }

void apply_override(ExperimentConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw Error(ErrorKind::Schema, "override '" + assignment + "' is not key=value");
  const std::string name = assignment.substr(0, eq), value = assignment.substr(eq + 1);
  const Key* key = find_key(name);
  if (!key) throw Error(ErrorKind::Schema, name + ": unknown key");
  if (!key->set(cfg, value)) throw Error(ErrorKind::Schema, name + ": cannot parse '" + value + "'");
}

std::string describe(const ExperimentConfig& cfg) {
  std::vector<std::string> parts;
  for (const auto& k : keys())
    if (k.name != "output_dir") parts.push_back(k.name + "=" + k.get(cfg));
  return join(parts, " ");
}

std::string default_config_yaml() {
  const ExperimentConfig cfg;
  std::string out;
  for (const auto& k : keys()) out += "# " + k.doc + "\n" + k.name + ": " + k.get(cfg) + "\n";
  return out;
}

std::string format_number(double x) {
  if (std::isnan(x)) return "nan";
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, ptr);
}

CsvWriter::CsvWriter(std::ostream& out, const std::string& config_line,
                     const std::vector<std::string>& header)
    : out_(out), columns_(header.size()) {
  out_ << "# config: " << config_line << "\n";
  row(header);
}

void CsvWriter::row(const std::vector<std::string>& cells) {
  if (cells.size() != columns_) {
    throw Error(ErrorKind::DimensionMismatch, "CSV row has " + std::to_string(cells.size()) +
                                                  " cells, header has " + std::to_string(columns_));
  }
  out_ << join(cells, ",") << "\n";
}

std::string to_json(const CircuitFile& c) {
  json doc;
  doc["n_qubits"] = c.n_qubits;
  doc["gates"] = json::array();
  for (const auto& g : c.gates) {
    doc["gates"].push_back({{"template", std::string(template_name(g.tmpl))}, {"qubits", g.qubits}, {"angle", g.angle}});
  }
  if (c.energy) doc["energy"] = *c.energy;
  return doc.dump(2) + "\n";
}

CircuitFile circuit_from_json(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::Schema, std::string("circuit file is not valid JSON: ") + e.what());
  }
  auto fail = [](const std::string& field, const std::string& why) {
    throw Error(ErrorKind::Schema, "circuit file: " + field + ": " + why);
  };
  if (!doc.is_object()) fail("(root)", "expected an object");
  for (const auto& [k, v] : doc.items())
    if (k != "n_qubits" && k != "gates" && k != "energy") fail(k, "unknown field");

  CircuitFile c;
  if (!doc.contains("n_qubits")) fail("n_qubits", "missing");
  if (!doc["n_qubits"].is_number_integer()) fail("n_qubits", "expected an integer");
  c.n_qubits = doc["n_qubits"].get<int>();
  if (c.n_qubits < 1 || c.n_qubits > kMaxDenseQubits) fail("n_qubits", "must be in 1.." + std::to_string(kMaxDenseQubits));

  if (!doc.contains("gates")) fail("gates", "missing");
  if (!doc["gates"].is_array()) fail("gates", "expected an array");
  for (std::size_t i = 0; i < doc["gates"].size(); ++i) {
    const json& g = doc["gates"][i];
    const std::string at = "gates[" + std::to_string(i) + "]";
    if (!g.is_object()) fail(at, "expected an object");
    for (const auto& [k, v] : g.items())
      if (k != "template" && k != "qubits" && k != "angle") fail(at + "." + k, "unknown field");
    if (!g.contains("template") || !g["template"].is_string()) fail(at + ".template", "expected a string");
    const auto tmpl = parse_template(g["template"].get<std::string>());
    if (!tmpl) fail(at + ".template", "unknown template '" + g["template"].get<std::string>() + "'");
    if (!g.contains("qubits") || !g["qubits"].is_array()) fail(at + ".qubits", "expected an array");
    Gate gate{*tmpl, {}, 0.0};
    for (const auto& q : g["qubits"]) {
      if (!q.is_number_integer()) fail(at + ".qubits", "expected integers");
      gate.qubits.push_back(q.get<int>());
    }
    if (!g.contains("angle") || !g["angle"].is_number()) fail(at + ".angle", "expected a number");
    gate.angle = g["angle"].get<double>();
    if (!std::isfinite(gate.angle)) fail(at + ".angle", "must be finite");
    try {
      validate_gate(gate, c.n_qubits);
    } catch (const Error& e) {
      fail(at + ".qubits", e.what());
    }
    c.gates.push_back(std::move(gate));
  }
  if (doc.contains("energy")) {
    if (!doc["energy"].is_number()) fail("energy", "expected a number");
    c.energy = doc["energy"].get<double>();
  }
  return c;
}

void write_circuit(const CircuitFile& c, const fs::path& path) { open_out(path) << to_json(c); }

CircuitFile read_circuit(const fs::path& path) { return circuit_from_json(read_file(path)); }

ExactResult run_exact(const HeisenbergSpec& spec, const fs::path& output_dir) {
  validate(spec);
  const auto gs = exact_ground_energy(build_heisenberg(spec));
  json doc{{"J", spec.J}, {"h", spec.h}, {"N", spec.N}, {"energy", gs.energy}};
  doc["amplitudes"] = json::array();
  for (std::size_t i = 0; i < gs.state.dim(); ++i) doc["amplitudes"].push_back({gs.state[i].real(), gs.state[i].imag()});
  ExactResult r{gs.energy, output_dir / "ground_state.json"};
  open_out(r.summary) << doc.dump(2) << "\n";
  return r;
}

TrainRunResult run_train(const ExperimentConfig& cfg) {
  validate(cfg);
  const Hamiltonian h = build_heisenberg(cfg.hamiltonian);
  const Vocabulary vocab(cfg.pool_config());
  TrainedModel t = train_and_select(cfg, h, vocab, cfg.output_dir / "checkpoints");

  TrainRunResult out;
  out.convergence_csv = cfg.output_dir / "convergence.csv";
  {
    auto f = open_out(out.convergence_csv);
    CsvWriter csv(f, describe(cfg), {"epoch", "loss", "min_energy", "mean_energy", "max_energy"});
    for (const auto& r : t.run.records) {
      csv.row({std::to_string(r.epoch), format_number(r.loss), format_number(r.min_energy),
               format_number(r.mean_energy), format_number(r.max_energy)});
    }
  }
  out.final_model = cfg.output_dir / "final_model.bin";
  save_checkpoint(t.final_model, out.final_model);
  out.checkpoints = t.run.checkpoints;
  out.models_averaged = t.models_averaged;
  out.best_energy = best_of(t.run.records);
  return out;
}

PostprocessRunResult run_postprocess_circuit(const ExperimentConfig& cfg, const CircuitFile& input) {
  validate(cfg);
  if (input.n_qubits != cfg.hamiltonian.N) {
    throw Error(ErrorKind::ConfigMismatch, "circuit has " + std::to_string(input.n_qubits) +
                                               " qubits, the Hamiltonian has " + std::to_string(cfg.hamiltonian.N));
  }
  if (input.gates.empty()) throw Error(ErrorKind::InvalidArgument, "circuit has no gates");
  const Hamiltonian h = build_heisenberg(cfg.hamiltonian);
  PostprocessRunResult out;
  out.best = wire_swap_loop(make_refinable(input.gates, h), h, cfg.refine);
  out.circuit = cfg.output_dir / "refined_circuit.json";
  out.stages_csv = cfg.output_dir / "stages.csv";
  write_circuit(to_file(out.best.circuit, input.n_qubits), out.circuit);
  write_stages(out.stages_csv, describe(cfg), out.best);
  return out;
}

PostprocessRunResult run_postprocess_model(const ExperimentConfig& cfg, const fs::path& model_path) {
  validate(cfg);
  const Hamiltonian h = build_heisenberg(cfg.hamiltonian);
  const Vocabulary vocab(cfg.pool_config());
  const TransformerModel model = load_for(cfg, vocab, model_path);
  Rng rng = stream_rng(cfg.train.seed, kPostprocess, 0);
  const BestOfResult r =
      postprocess_best_of(model, vocab, h, cfg.samples, cfg.train.T, cfg.train.tau, cfg.refine, rng);

  PostprocessRunResult out;
  out.best = r.best;
  out.circuit = cfg.output_dir / "refined_circuit.json";
  out.stages_csv = cfg.output_dir / "stages.csv";
  write_circuit(to_file(r.best.circuit, cfg.hamiltonian.N), out.circuit);
  write_stages(out.stages_csv, describe(cfg), r.best);
  auto f = open_out(cfg.output_dir / "samples.csv");
  CsvWriter csv(f, describe(cfg), {"sample", "base", "angle_refinement", "wire_swap"});
  for (std::size_t i = 0; i < r.all.size(); ++i) {
    csv.row({std::to_string(i), format_number(r.all[i].base_energy), format_number(r.all[i].refined_energy),
             format_number(r.all[i].final_energy)});
  }
  return out;
}

std::vector<ScanRow> run_scan(const ExperimentConfig& cfg, const std::vector<double>& h_over_J,
                              bool postprocess, int jobs) {
  validate(cfg);
  if (h_over_J.empty()) throw Error(ErrorKind::InvalidArgument, "scan grid is empty");
  std::vector<ScanRow> rows(h_over_J.size());
  parallel_for(static_cast<int>(h_over_J.size()), jobs, [&](int i) {
    ExperimentConfig c = cfg;
    c.hamiltonian.h = h_over_J[static_cast<std::size_t>(i)] * cfg.hamiltonian.J;
    validate(c.hamiltonian);
    const Hamiltonian h = build_heisenberg(c.hamiltonian);
    const Vocabulary vocab(c.pool_config());
    const fs::path dir = cfg.output_dir / ("scan_" + std::to_string(i));
    const TransformerModel model =
        c.train.epochs > 0 ? train_and_select(c, h, vocab, dir / "checkpoints").final_model
                           : TransformerModel(c.model_config());

    ScanRow& row = rows[static_cast<std::size_t>(i)];
    row.h_over_J = h_over_J[static_cast<std::size_t>(i)];
    Rng rng = stream_rng(c.train.seed, kScanModel, static_cast<std::uint64_t>(i));
    row.e_model = std::numeric_limits<double>::infinity();
    for (const auto& s : sample_circuits(model, vocab, c.samples, c.train.T, c.train.tau, rng))
      row.e_model = std::min(row.e_model, sequence_energies(s.token_ids, vocab, h).back());
    if (postprocess) {
      Rng prng = stream_rng(c.train.seed, kScanPost, static_cast<std::uint64_t>(i));
      row.e_postprocessed =
          postprocess_best_of(model, vocab, h, c.samples, c.train.T, c.train.tau, c.refine, prng).best.final_energy;
    }
    row.e_exact = exact_ground_energy(h).energy;
  });

  auto f = open_out(cfg.output_dir / "scan.csv");
  CsvWriter csv(f, describe(cfg), {"h_over_J", "E_model", "E_postprocessed", "E_exact"});
  for (const auto& r : rows) {
    csv.row({format_number(r.h_over_J), format_number(r.e_model),
             r.e_postprocessed ? format_number(*r.e_postprocessed) : "", format_number(r.e_exact)});
  }
  return rows;
}

std::vector<GridCell> run_gridsearch(const ExperimentConfig& cfg, const std::vector<double>& betas,
                                     const std::vector<int>& Ms, int jobs) {
  validate(cfg);
  if (betas.empty() || Ms.empty()) throw Error(ErrorKind::InvalidArgument, "grid is empty");
  std::vector<GridCell> cells;
  for (double b : betas)
    for (int m : Ms) cells.push_back({b, m, 0.0});
  for (const auto& c : cells) {
    ExperimentConfig probe = cfg;
    probe.train.beta = c.beta;
    probe.train.M = c.M;
    validate(probe);
  }
  parallel_for(static_cast<int>(cells.size()), jobs, [&](int i) {
    GridCell& cell = cells[static_cast<std::size_t>(i)];
    ExperimentConfig c = cfg;
    c.train.beta = cell.beta;
    c.train.M = cell.M;
    const Hamiltonian h = build_heisenberg(c.hamiltonian);
    const Vocabulary vocab(c.pool_config());
    TrainConfig tc = c.train;
    tc.checkpoint_dir.clear();
    cell.best_energy = best_of(train(TransformerModel(c.model_config()), h, vocab, tc).records);
  });

  auto f = open_out(cfg.output_dir / "heatmap.csv");
  CsvWriter csv(f, describe(cfg), {"beta", "M", "best_energy"});
  for (const auto& c : cells) csv.row({format_number(c.beta), std::to_string(c.M), format_number(c.best_energy)});
  return cells;
}

StatsRunResult run_stats(const ExperimentConfig& cfg, const fs::path& model_path) {
  validate(cfg);
  const Vocabulary vocab(cfg.pool_config());
  const TransformerModel model = load_for(cfg, vocab, model_path);
  Rng rng = stream_rng(cfg.train.seed, kStats, 0);
  StatsRunResult out;
  out.stats = gate_statistics(model, vocab, cfg.samples, cfg.train.T, cfg.train.tau, rng);
  out.pairs_csv = cfg.output_dir / "gate_pairs.csv";
  out.angles_csv = cfg.output_dir / "angle_histogram.csv";
  {
    auto f = open_out(out.pairs_csv);
    CsvWriter csv(f, describe(cfg), {"template", "qubits", "count"});
    for (const auto& [slot, n] : out.stats.slot_counts)
      csv.row({std::string(template_name(slot.first)), qubits_str(slot.second), std::to_string(n)});
  }
  auto f = open_out(out.angles_csv);
  CsvWriter csv(f, describe(cfg), {"template", "qubits", "angle", "count"});
  for (const auto& [slot, hist] : out.stats.angle_counts)
    for (const auto& [angle, n] : hist)
      csv.row({std::string(template_name(slot.first)), qubits_str(slot.second), format_number(angle), std::to_string(n)});
  return out;
}

void parallel_for(int n, int jobs, const std::function<void(int)>& fn) {
  if (jobs < 1) throw Error(ErrorKind::InvalidArgument, "jobs must be >= 1");
  std::atomic<int> next{0};
  std::mutex mu;
  int failed_at = n;
  std::exception_ptr failure;
  auto worker = [&] {
    for (int i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(mu);
        if (i < failed_at) {
          failed_at = i;
          failure = std::current_exception();
        }
      }
    }
  };
  std::vector<std::thread> pool;
  for (int t = 1; t < std::min(jobs, n); ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace spingqe
