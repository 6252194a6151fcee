#include "ccnn/train.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>

#include "ccnn/errors.hpp"
#include "ccnn/normal.hpp"

namespace ccnn {
namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  return splitmix(splitmix(splitmix(seed) ^ a) ^ (b * 0x2545f4914f6cdd1dULL));
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream ss(s);
  while (std::getline(ss, cur, sep)) out.push_back(trim(cur));
  return out;
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

}  // namespace

std::string to_string(BalanceCriterion c) {
  switch (c) {
    case BalanceCriterion::Subject: return "subject";
    case BalanceCriterion::Level: return "level";
    case BalanceCriterion::Cooccurrence: return "cooccurrence";
  }
  return "?";
}

std::string to_string(BalanceWeighting w) { return w == BalanceWeighting::Importance ? "importance" : "none"; }

BalanceWeighting parse_balance_weighting(const std::string& text) {
  if (text == "importance") return BalanceWeighting::Importance;
  if (text == "none") return BalanceWeighting::None;
  throw ConfigError("balance_weighting must be 'importance' or 'none', got '" + text + "'");
}

BalancedBatchStream::BalancedBatchStream(std::span<const LabeledInstance> rows, BalanceCriterion criterion,
                                         int batch_size, std::uint64_t seed, std::span<const CopulaEdgeParams> edges,
                                         BalanceWeighting weighting)
    : criterion_(criterion), batch_size_(batch_size), weighting_(weighting), row_count_(rows.size()), rng_(seed) {
  if (rows.empty()) throw ArgumentError("cannot build balanced batches from an empty dataset");
  if (batch_size < 1) throw ArgumentError("batch size must be positive");

  std::map<std::string, std::vector<std::size_t>> subjects;
  std::map<std::tuple<int, int, int>, std::vector<std::size_t>> keyed;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    switch (criterion) {
      case BalanceCriterion::Subject: subjects[r.subject].push_back(i); break;
      case BalanceCriterion::Level:
        for (std::size_t q = 0; q < r.labels.size(); ++q)
          if (r.labels[q] != kMissing) keyed[{static_cast<int>(q), r.labels[q], 0}].push_back(i);
        break;
      case BalanceCriterion::Cooccurrence:
        for (std::size_t e = 0; e < edges.size(); ++e) {
          const Level a = r.labels.at(edges[e].r), b = r.labels.at(edges[e].s);
          if (a != kMissing && b != kMissing) keyed[{static_cast<int>(e), a, b}].push_back(i);
        }
        break;
    }
  }
  for (auto& [name, m] : subjects) {
    labels_.push_back(name);
    members_.push_back(std::move(m));
  }
  for (auto& [key, m] : keyed) {
    const auto [a, b, c] = key;
    if (criterion == BalanceCriterion::Level)
      labels_.push_back("node" + std::to_string(a) + "=" + std::to_string(b + 1));
    else
      labels_.push_back("edge" + std::to_string(a) + "=" + std::to_string(b + 1) + "," + std::to_string(c + 1));
    members_.push_back(std::move(m));
  }
  if (members_.empty()) throw ArgumentError("no " + to_string(criterion) + " stratum has any support");

  inclusion_.assign(rows.size(), 0.0);
  const double k = static_cast<double>(members_.size());
  for (const auto& m : members_)
    for (std::size_t i : m) inclusion_[i] += 1.0 / (k * static_cast<double>(m.size()));
}

SampledBatch BalancedBatchStream::next() {
  SampledBatch b;
  b.indices.reserve(batch_size_);
  b.strata.reserve(batch_size_);
  b.weights.reserve(batch_size_);
  std::uniform_int_distribution<int> pick_stratum(0, stratum_count() - 1);
  for (int j = 0; j < batch_size_; ++j) {
    const int s = pick_stratum(rng_);
    const auto& m = members_[s];
    std::uniform_int_distribution<std::size_t> pick(0, m.size() - 1);
    const std::size_t i = m[pick(rng_)];
    b.indices.push_back(i);
    b.strata.push_back(s);
    b.weights.push_back(weighting_ == BalanceWeighting::Importance
                            ? 1.0 / (static_cast<double>(row_count_) * inclusion_[i])
                            : 1.0);
  }
  return b;
}

BatchInterleaver::BatchInterleaver(int datasets, std::uint64_t seed) : k_(datasets), rng_(seed) {
  if (datasets < 1) throw ArgumentError("interleaving needs at least one dataset");
}

int BatchInterleaver::next() {
  if (pos_ == 0) start_ = std::uniform_int_distribution<int>(0, k_ - 1)(rng_);
  const int d = (start_ + pos_) % k_;
  pos_ = (pos_ + 1) % k_;
  return d;
}

std::vector<int> interleave_order(int datasets, int cycles, std::uint64_t seed) {
  BatchInterleaver il(datasets, seed);
  std::vector<int> order;
  for (int i = 0; i < datasets * cycles; ++i) order.push_back(il.next());
  return order;
}

void sgd_momentum_step(std::span<double> params, std::span<const double> grads, std::span<double> velocity,
                       double learning_rate, double momentum) {
  if (params.size() != grads.size() || params.size() != velocity.size())
    throw ArgumentError("parameter, gradient and velocity shapes differ");
  for (std::size_t i = 0; i < params.size(); ++i) {
    velocity[i] = momentum * velocity[i] - learning_rate * grads[i];
    params[i] += velocity[i];
  }
}

OptState OptState::for_model(const CrfModel& model, double learning_rate, double momentum) {
  OptState s;
  s.learning_rate = learning_rate;
  s.momentum = momentum;
  s.velocity = ModelGradient::zeros_like(model);
  return s;
}

void sgd_momentum_step(CrfModel& model, const ModelGradient& grad, OptState& state, GradientRequest blocks,
                       int context) {
  std::vector<bool> active(model.unaries.size(), context < 0);
  if (context >= 0)
    for (int id : model.contexts.at(context).nodes) active[id] = true;
  if (blocks.encoder) {
    auto p = model.encoder.blocks();
    auto v = state.velocity.encoder.blocks();
    const auto g = grad.encoder.blocks();
    for (std::size_t b = 0; b < p.size(); ++b) sgd_momentum_step(p[b], g[b], v[b], state.learning_rate, state.momentum);
  }
  if (blocks.unary)
    for (std::size_t q = 0; q < model.unaries.size(); ++q)
      if (active[q])
        sgd_momentum_step(model.unaries[q].raw(), grad.unaries[q], state.velocity.unaries[q], state.learning_rate,
                          state.momentum);
  if (blocks.pairwise)
    for (std::size_t c = 0; c < model.contexts.size(); ++c) {
      if (context >= 0 && static_cast<int>(c) != context) continue;
      for (std::size_t e = 0; e < model.contexts[c].edges.size(); ++e) {
        double& v = state.velocity.thetas[c][e];
        v = state.momentum * v - state.learning_rate * grad.thetas[c][e];
        model.contexts[c].edges[e].theta += v;
      }
    }
  ++state.iterations;
}

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning_rate must be >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
  if (batch_size < 1) throw ConfigError("batch_size must be positive");
  if (!(lambda >= 0.0)) throw ConfigError("lambda must be >= 0");
  for (const auto& [n, l] : node_lambda)
    if (!(l >= 0.0)) throw ConfigError("lambda." + n + " must be >= 0");
  if (phase_steps < 1) throw ConfigError("phase_steps must be positive");
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (!(theta_max > 0.0 && theta_max <= kDefaultThetaMax))
    throw ConfigError("theta_max must lie in (0, " + format_double(kDefaultThetaMax) + "]");
  if (patience < 1) throw ConfigError("patience must be positive");
  if (!(validation_fraction >= 0.0 && validation_fraction < 1.0))
    throw ConfigError("validation_fraction must lie in [0, 1)");
  if (!(crop_fraction > 0.0 && crop_fraction <= 1.0)) throw ConfigError("crop_fraction must lie in (0, 1]");
  if (trace_samples < 1) throw ConfigError("trace_samples must be positive");
  if (!(init_beta_std >= 0.0)) throw ConfigError("init_beta_std must be >= 0");
}

namespace {

double to_double(const std::string& key, const std::string& v, int line) {
  double out = 0.0;
  const char* end = v.data() + v.size();
  auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end || !std::isfinite(out))
    throw ConfigError("line " + std::to_string(line) + ": " + key + " expects a number, got '" + v + "'");
  return out;
}

long long to_int(const std::string& key, const std::string& v, int line) {
  long long out = 0;
  const char* end = v.data() + v.size();
  auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end)
    throw ConfigError("line " + std::to_string(line) + ": " + key + " expects an integer, got '" + v + "'");
  return out;
}

bool to_bool(const std::string& key, const std::string& v, int line) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("line " + std::to_string(line) + ": " + key + " expects true or false, got '" + v + "'");
}

}  // namespace

TrainConfig parse_train_config(std::istream& in) {
  TrainConfig c;
  int line_no = 0;
  std::set<std::string> seen;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    if (key.empty() || value.empty())
      throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
    if (!seen.insert(key).second) throw ConfigError("line " + std::to_string(line_no) + ": duplicate key " + key);
    if (key == "learning_rate") c.learning_rate = to_double(key, value, line_no);
    else if (key == "momentum") c.momentum = to_double(key, value, line_no);
    else if (key == "batch_size") c.batch_size = static_cast<int>(to_int(key, value, line_no));
    else if (key == "lambda") c.lambda = to_double(key, value, line_no);
    else if (key.rfind("lambda.", 0) == 0 && key.size() > 7) c.node_lambda[key.substr(7)] = to_double(key, value, line_no);
    else if (key == "phase_steps") c.phase_steps = static_cast<int>(to_int(key, value, line_no));
    else if (key == "epochs") c.epochs = static_cast<int>(to_int(key, value, line_no));
    else if (key == "seed") c.seed = static_cast<std::uint64_t>(to_int(key, value, line_no));
    else if (key == "edge_topology") c.edge_topology = value;
    else if (key == "theta_max") c.theta_max = to_double(key, value, line_no);
    else if (key == "patience") c.patience = static_cast<int>(to_int(key, value, line_no));
    else if (key == "validation_fraction") c.validation_fraction = to_double(key, value, line_no);
    else if (key == "encoder") c.encoder = value;
    else if (key == "crop_fraction") c.crop_fraction = to_double(key, value, line_no);
    else if (key == "balance_weighting") c.balance_weighting = parse_balance_weighting(value);
    else if (key == "trace_samples") c.trace_samples = static_cast<int>(to_int(key, value, line_no));
    else if (key == "fix_sigma") c.fix_sigma = to_bool(key, value, line_no);
    else if (key == "init_beta_std") c.init_beta_std = to_double(key, value, line_no);
    else throw ConfigError("line " + std::to_string(line_no) + ": unknown key '" + key + "'");
  }
  c.validate();
  return c;
}

TrainConfig load_train_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path.string() + "'");
  try {
    return parse_train_config(in);
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::vector<std::pair<std::string, std::string>> config_entries(const TrainConfig& c) {
  std::vector<std::pair<std::string, std::string>> e = {
      {"learning_rate", format_double(c.learning_rate)},
      {"momentum", format_double(c.momentum)},
      {"batch_size", std::to_string(c.batch_size)},
      {"lambda", format_double(c.lambda)},
  };
  for (const auto& [n, l] : c.node_lambda) e.emplace_back("lambda." + n, format_double(l));
  e.insert(e.end(), {
                        {"phase_steps", std::to_string(c.phase_steps)},
                        {"epochs", std::to_string(c.epochs)},
                        {"seed", std::to_string(c.seed)},
                        {"edge_topology", c.edge_topology},
                        {"theta_max", format_double(c.theta_max)},
                        {"patience", std::to_string(c.patience)},
                        {"validation_fraction", format_double(c.validation_fraction)},
                        {"encoder", c.encoder},
                        {"crop_fraction", format_double(c.crop_fraction)},
                        {"balance_weighting", to_string(c.balance_weighting)},
                        {"trace_samples", std::to_string(c.trace_samples)},
                        {"fix_sigma", c.fix_sigma ? "true" : "false"},
                        {"init_beta_std", format_double(c.init_beta_std)},
                    });
  return e;
}

std::vector<std::pair<int, int>> topology_edges(const std::string& topology, const std::vector<std::string>& nodes) {
  const int n = static_cast<int>(nodes.size());
  if (topology == "full") return fully_connected_edges(n);
  if (topology == "none") return {};
  std::set<std::pair<int, int>> out;
  for (const auto& item : split(topology, ',')) {
    const auto parts = split(item, ':');
    if (parts.size() != 2 || parts[0].empty() || parts[1].empty())
      throw ConfigError("edge_topology entry '" + item + "' is not of the form a:b");
    const auto a = std::find(nodes.begin(), nodes.end(), parts[0]);
    const auto b = std::find(nodes.begin(), nodes.end(), parts[1]);
    if (a == nodes.end() || b == nodes.end()) continue;  // belongs to another dataset
    int r = static_cast<int>(a - nodes.begin()), s = static_cast<int>(b - nodes.begin());
    if (r == s) throw ConfigError("edge_topology entry '" + item + "' joins a node to itself");
    if (r > s) std::swap(r, s);
    if (!out.insert({r, s}).second) throw ConfigError("edge_topology lists '" + item + "' twice");
  }
  return {out.begin(), out.end()};
}

CrfModel build_model(std::span<const Dataset> datasets, const TrainConfig& config) {
  config.validate();
  if (datasets.empty()) throw ConfigError("training needs at least one dataset");
  const Dataset& first = datasets.front();
  std::set<std::string> ids;
  for (const auto& d : datasets) {
    if (d.input_kind != first.input_kind || !(d.input_shape == first.input_shape))
      throw ConfigError("dataset '" + d.id + "' has a different input layout than '" + first.id + "'");
    if (!ids.insert(d.id).second) throw ConfigError("duplicate dataset id '" + d.id + "'");
  }

  CrfModel m;
  Shape in = first.input_shape;
  if (config.crop_fraction < 1.0) {
    if (first.input_kind != InputKind::Image) throw ConfigError("crop_fraction applies only to image datasets");
    in = cropped_shape(in, config.crop_fraction);
  }
  const std::uint64_t enc_seed = derive_seed(config.seed, 1);
  if (config.encoder == "passthrough") {
    if (config.crop_fraction < 1.0) throw ConfigError("crop_fraction needs a convolutional encoder");
    m.encoder = EncoderParams::passthrough(static_cast<int>(in.size()));
  } else if (config.encoder == "default") {
    m.encoder = EncoderParams::build(in, EncoderParams::default_layer_specs(), enc_seed);
  } else {
    m.encoder = EncoderParams::build(in, parse_layer_specs(config.encoder), enc_seed);
  }
  m.crop_fraction = config.crop_fraction;
  m.lambda = config.lambda;
  m.theta_max = config.theta_max;

  std::map<std::string, std::vector<double>> counts;
  for (const auto& d : datasets)
    for (std::size_t q = 0; q < d.nodes.size(); ++q) {
      m.add_node(d.nodes[q].name, d.nodes[q].levels);
      auto& c = counts[d.nodes[q].name];
      c.resize(d.nodes[q].levels, 0.0);
      for (const auto& r : d.rows)
        if (r.labels[q] != kMissing) c[r.labels[q]] += 1.0;
    }

  std::mt19937_64 rng(derive_seed(config.seed, 2));
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (std::size_t q = 0; q < m.nodes.size(); ++q) {
    const auto& c = counts[m.nodes[q].name];
    const double total = std::accumulate(c.begin(), c.end(), 0.0) + 0.5 * static_cast<double>(c.size());
    std::vector<double> psi;
    double cum = 0.0;
    for (std::size_t k = 0; k + 1 < c.size(); ++k) {
      cum += c[k] + 0.5;
      double t = normal_quantile(std::clamp(cum / total, 0.01, 0.99));
      if (!psi.empty()) t = std::max(t, psi.back() + 1e-3);
      psi.push_back(t);
    }
    m.unaries[q].set_thresholds(psi);
    for (auto& b : m.unaries[q].beta()) b = config.init_beta_std * gauss(rng);
  }

  m.node_lambda.assign(m.nodes.size(), std::nullopt);
  for (const auto& [name, l] : config.node_lambda) {
    const int id = m.find_node(name);
    if (id < 0) throw ConfigError("lambda." + name + " names an unknown node");
    m.node_lambda[id] = l;
  }

  std::size_t listed_edges = 0;
  for (const auto& d : datasets) {
    const auto edges = topology_edges(config.edge_topology, d.node_names());
    listed_edges += edges.size();
    m.add_context(d.id, d.node_names(), edges, 0.0);
  }
  if (config.edge_topology != "full" && config.edge_topology != "none" && listed_edges == 0)
    throw ConfigError("edge_topology '" + config.edge_topology + "' matches no dataset");
  m.validate();
  return m;
}

std::string to_string(Phase p) {
  switch (p) {
    case Phase::Encoder: return "S1";
    case Phase::Unary: return "S2";
    case Phase::Pairwise: return "S3";
  }
  return "?";
}

namespace {

struct ContextData {
  int context = 0;
  std::vector<LabeledInstance> train;
  std::vector<LabeledInstance> validation;
  std::vector<std::size_t> trace_rows;
  std::vector<FeatureVector> cache;  // features of `train` under the current encoder
};

void check_compatible(const CrfModel& model, const Dataset& d, int ctx) {
  const auto& g = model.contexts[ctx];
  if (static_cast<int>(d.nodes.size()) != g.size())
    throw ConfigError("dataset '" + d.id + "' has " + std::to_string(d.nodes.size()) + " nodes, model context has " +
                      std::to_string(g.size()));
  for (std::size_t q = 0; q < d.nodes.size(); ++q) {
    const auto& n = model.nodes[g.nodes[q]];
    if (n.name != d.nodes[q].name)
      throw ConfigError("dataset '" + d.id + "' node '" + d.nodes[q].name + "' does not match model node '" + n.name +
                        "'");
    if (n.levels != d.nodes[q].levels)
      throw ConfigError("node '" + n.name + "' has " + std::to_string(d.nodes[q].levels) + " levels in dataset '" +
                        d.id + "' but " + std::to_string(n.levels) + " in the model");
  }
  const Shape enc = model.encoder.input_shape();
  if (model.encoder.is_passthrough()) {
    if (d.input_shape.size() != static_cast<std::size_t>(model.feature_dim()))
      throw ConfigError("dataset '" + d.id + "' input size differs from the model feature_dim");
  } else {
    const Shape want = model.crop_fraction < 1.0 ? cropped_shape(d.input_shape, model.crop_fraction) : d.input_shape;
    if (!(want == enc)) throw ConfigError("dataset '" + d.id + "' input shape does not match the encoder");
  }
}

void refresh_cache(const CrfModel& model, ContextData& cd) {
  cd.cache.resize(cd.train.size());
  for (std::size_t i = 0; i < cd.train.size(); ++i)
    cd.cache[i] = forward(inference_input(model, cd.train[i].input), model.encoder);
}

double objective_on(const CrfModel& model, const ContextData& cd, std::span<const std::size_t> rows,
                    const std::vector<LabeledInstance>& source, bool use_cache) {
  std::vector<BatchItem> items;
  items.reserve(rows.size());
  for (std::size_t i : rows) items.push_back({&source[i], 1.0, use_cache ? &cd.cache[i] : nullptr});
  return composite_nll(model, cd.context, items);
}

bool finite_model(const CrfModel& m) {
  for (auto b : m.encoder.blocks())
    for (double v : b)
      if (!std::isfinite(v)) return false;
  for (const auto& u : m.unaries)
    for (double v : u.raw())
      if (!std::isfinite(v)) return false;
  for (const auto& c : m.contexts)
    for (const auto& e : c.edges)
      if (!std::isfinite(e.theta)) return false;
  return true;
}

}  // namespace

TrainResult ibb_train(CrfModel& model, std::span<const Dataset> datasets, const TrainConfig& config,
                      const TrainOptions& options) {
  config.validate();
  model.validate();
  if (datasets.empty()) throw ConfigError("training needs at least one dataset");

  std::vector<ContextData> data;
  for (std::size_t k = 0; k < datasets.size(); ++k) {
    const Dataset& d = datasets[k];
    const int ctx = model.find_context(d.id);
    if (ctx < 0) throw ConfigError("model has no context for dataset '" + d.id + "'");
    check_compatible(model, d, ctx);
    ContextData cd;
    cd.context = ctx;
    if (config.validation_fraction > 0.0) {
      auto [tr, va] = split_by_subject(d, 1.0 - config.validation_fraction, derive_seed(config.seed, 3, k));
      cd.train = std::move(tr.rows);
      cd.validation = std::move(va.rows);
    } else {
      cd.train = d.rows;
    }
    std::vector<std::size_t> all(cd.train.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    if (all.size() > static_cast<std::size_t>(config.trace_samples)) {
      std::mt19937_64 rng(derive_seed(config.seed, 4, k));
      std::shuffle(all.begin(), all.end(), rng);
      all.resize(config.trace_samples);
      std::sort(all.begin(), all.end());
    }
    cd.trace_rows = std::move(all);
    data.push_back(std::move(cd));
  }

  const bool train_encoder = !model.encoder.is_passthrough();
  bool any_edges = false;
  for (const auto& cd : data) any_edges = any_edges || !model.contexts[cd.context].edges.empty();
  // S2 and S3 see the encoder frozen, so features are computed once per
  // encoder state. Random crops are drawn only in S1.
  const bool use_cache = true;

  std::vector<std::optional<BalancedBatchStream>> by_subject(data.size()), by_level(data.size()),
      by_pair(data.size());
  for (std::size_t k = 0; k < data.size(); ++k) {
    const auto& cd = data[k];
    const int B = config.batch_size;
    if (train_encoder)
      by_subject[k].emplace(cd.train, BalanceCriterion::Subject, B, derive_seed(config.seed, 5, k),
                            std::span<const CopulaEdgeParams>{}, config.balance_weighting);
    by_level[k].emplace(cd.train, BalanceCriterion::Level, B, derive_seed(config.seed, 6, k),
                        std::span<const CopulaEdgeParams>{}, config.balance_weighting);
    const auto& edges = model.contexts[cd.context].edges;
    if (!edges.empty()) {
      try {
        by_pair[k].emplace(cd.train, BalanceCriterion::Cooccurrence, B, derive_seed(config.seed, 7, k), edges,
                           config.balance_weighting);
      } catch (const ArgumentError&) {
        // no instance has both labels of any edge; nothing to learn for theta here
      }
    }
  }

  std::vector<Phase> phases;
  if (train_encoder) phases.push_back(Phase::Encoder);
  phases.push_back(Phase::Unary);
  if (any_edges) phases.push_back(Phase::Pairwise);

  BatchInterleaver interleaver(static_cast<int>(data.size()), derive_seed(config.seed, 8));
  std::mt19937_64 crop_rng(derive_seed(config.seed, 9));
  OptState opt = OptState::for_model(model, config.learning_rate, config.momentum);
  bool cache_valid = false;

  auto ensure_cache = [&] {
    if (!use_cache || cache_valid) return;
    for (auto& cd : data) refresh_cache(model, cd);
    cache_valid = true;
  };
  auto train_objective = [&] {
    ensure_cache();
    double total = 0.0;
    for (const auto& cd : data) total += objective_on(model, cd, cd.trace_rows, cd.train, use_cache);
    return total;
  };
  auto validation_objective = [&]() -> std::optional<double> {
    double total = 0.0;
    bool any = false;
    for (const auto& cd : data) {
      if (cd.validation.empty()) continue;
      std::vector<std::size_t> rows(cd.validation.size());
      std::iota(rows.begin(), rows.end(), std::size_t{0});
      total += objective_on(model, cd, rows, cd.validation, false);
      any = true;
    }
    if (!any) return std::nullopt;
    return total;
  };

  TrainResult result;
  int iteration = 0;
  {
    const double l0 = train_objective();
    if (!std::isfinite(l0)) throw DivergenceError("initial training objective is not finite");
    result.trace.push_back({0, 0, "init", l0, validation_objective()});
  }
  std::optional<double> best = result.trace.back().validation;
  CrfModel best_model = model;
  int bad_epochs = 0;

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    for (Phase phase : phases) {
      GradientRequest request{phase == Phase::Encoder, phase == Phase::Unary, phase == Phase::Pairwise};
      std::optional<CrfModel> before;
      if (options.on_phase) before = model;
      if (phase != Phase::Encoder) ensure_cache();

      for (int step = 0; step < config.phase_steps; ++step) {
        const int k = interleaver.next();
        auto& cd = data[k];
        auto& stream = phase == Phase::Encoder ? by_subject[k] : phase == Phase::Unary ? by_level[k] : by_pair[k];
        if (!stream) continue;
        const SampledBatch sb = stream->next();

        std::vector<LabeledInstance> cropped;
        std::vector<BatchItem> items;
        items.reserve(sb.indices.size());
        if (phase == Phase::Encoder && model.crop_fraction < 1.0) {
          cropped.reserve(sb.indices.size());
          for (std::size_t i : sb.indices) {
            LabeledInstance inst = cd.train[i];
            inst.input = random_crop(inst.input, model.crop_fraction, crop_rng());
            cropped.push_back(std::move(inst));
          }
          for (std::size_t j = 0; j < cropped.size(); ++j) items.push_back({&cropped[j], sb.weights[j], nullptr});
        } else {
          const bool cached = phase != Phase::Encoder && use_cache;
          for (std::size_t j = 0; j < sb.indices.size(); ++j)
            items.push_back({&cd.train[sb.indices[j]], sb.weights[j], cached ? &cd.cache[sb.indices[j]] : nullptr});
        }

        ModelGradient grad = ModelGradient::zeros_like(model);
        const double loss = composite_nll(model, cd.context, items, &grad, request);
        if (!std::isfinite(loss))
          throw DivergenceError("batch objective became " + format_double(loss) + " in epoch " +
                                std::to_string(epoch) + " phase " + to_string(phase) + " step " +
                                std::to_string(step + 1));
        if (phase == Phase::Unary && config.fix_sigma)
          for (std::size_t q = 0; q < model.unaries.size(); ++q) grad.unaries[q][model.unaries[q].sigma_index()] = 0.0;
        std::optional<CrfModel> step_before;
        if (options.on_step) step_before = model;
        sgd_momentum_step(model, grad, opt, request, cd.context);
        if (phase == Phase::Pairwise)
          for (auto& c : model.contexts)
            for (auto& e : c.edges) e.theta = std::clamp(e.theta, -model.theta_max, model.theta_max);
        if (options.on_step) options.on_step(phase, cd.context, *step_before, model);
      }
      if (phase == Phase::Encoder) cache_valid = false;
      if (!finite_model(model))
        throw DivergenceError("non-finite parameters after epoch " + std::to_string(epoch) + " phase " +
                              to_string(phase));
      const double loss = train_objective();
      if (!std::isfinite(loss))
        throw DivergenceError("training objective became " + format_double(loss) + " after epoch " +
                              std::to_string(epoch) + " phase " + to_string(phase));
      result.trace.push_back({++iteration, epoch, to_string(phase), loss, std::nullopt});
      if (options.on_phase) options.on_phase(phase, *before, model);
    }
    result.epochs_run = epoch;

    const auto v = validation_objective();
    if (!v) continue;
    result.trace.back().validation = v;
    if (!best || *v < *best) {
      best = v;
      best_model = model;
      bad_epochs = 0;
    } else if (++bad_epochs >= config.patience) {
      result.stopped_early = true;
      break;
    }
  }
  if (best) {
    model = std::move(best_model);
    result.best_validation = best;
  }
  return result;
}

void write_trace_csv(const TrainResult& result, std::ostream& out) {
  out << "# format_version=1\n";
  out << "iter,epoch,phase,loss,validation\n";
  for (const auto& t : result.trace) {
    out << t.iteration << ',' << t.epoch << ',' << t.phase << ',' << format_double(t.loss) << ',';
    if (t.validation) out << format_double(*t.validation);
    out << '\n';
  }
}

double GradCheckReport::max_rel_error() const {
  double m = 0.0;
  for (const auto& b : blocks) m = std::max(m, b.max_rel_error);
  return m;
}

namespace {

double rel_error(double a, double n) { return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-6}); }

struct Probe {
  double loss = 0.0;
  std::vector<std::uint64_t> signatures;
};

Probe probe(const CrfModel& model, int context, std::span<const LabeledInstance> batch) {
  Probe p;
  std::vector<FeatureVector> feats(batch.size());
  std::vector<BatchItem> items;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    ForwardTrace trace;
    feats[i] = forward(inference_input(model, batch[i].input), model.encoder, &trace);
    p.signatures.push_back(trace.activation_signature());
    items.push_back({&batch[i], 1.0, &feats[i]});
  }
  p.loss = composite_nll(model, context, items);
  return p;
}

}  // namespace

GradCheckReport compare_gradients(const CrfModel& model, int context, std::span<const LabeledInstance> batch,
                                  const ModelGradient& analytic, double epsilon) {
  if (batch.empty()) throw ArgumentError("gradient check needs a non-empty batch");
  if (!(epsilon > 0.0)) throw ArgumentError("gradient check step must be positive");
  CrfModel m = model;
  GradCheckReport rep;

  if (!m.encoder.is_passthrough()) {
    const auto base = probe(m, context, batch);
    auto& layers = m.encoder.layers();
    const auto& glayers = analytic.encoder.layers();
    for (std::size_t li = 0; li < layers.size(); ++li) {
      for (int part = 0; part < 2; ++part) {
        auto& vals = part == 0 ? layers[li].weights : layers[li].bias;
        const auto& gvals = part == 0 ? glayers[li].weights : glayers[li].bias;
        if (vals.empty()) continue;
        BlockCheck bc{"encoder." + std::to_string(li) + (part == 0 ? ".weights" : ".bias"), 0.0, 0, 0};
        for (std::size_t i = 0; i < vals.size(); ++i) {
          const double orig = vals[i];
          vals[i] = orig + epsilon;
          const auto up = probe(m, context, batch);
          vals[i] = orig - epsilon;
          const auto down = probe(m, context, batch);
          vals[i] = orig;
          if (up.signatures != base.signatures || down.signatures != base.signatures) {
            ++bc.skipped;
            continue;
          }
          bc.max_rel_error = std::max(bc.max_rel_error, rel_error(gvals[i], (up.loss - down.loss) / (2 * epsilon)));
          ++bc.checked;
        }
        rep.blocks.push_back(bc);
      }
    }
  }

  // The encoder is fixed below, so its features can be reused.
  std::vector<FeatureVector> feats(batch.size());
  std::vector<BatchItem> items;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    feats[i] = forward(inference_input(m, batch[i].input), m.encoder);
    items.push_back({&batch[i], 1.0, &feats[i]});
  }
  auto loss = [&] { return composite_nll(m, context, items); };

  const auto& g = m.contexts.at(context);
  for (int node : g.nodes) {
    auto raw = m.unaries[node].raw();
    BlockCheck bc{"unary." + m.nodes[node].name, 0.0, 0, 0};
    for (std::size_t i = 0; i < raw.size(); ++i) {
      const double orig = raw[i];
      raw[i] = orig + epsilon;
      const double up = loss();
      raw[i] = orig - epsilon;
      const double down = loss();
      raw[i] = orig;
      bc.max_rel_error = std::max(bc.max_rel_error, rel_error(analytic.unaries[node][i], (up - down) / (2 * epsilon)));
      ++bc.checked;
    }
    rep.blocks.push_back(bc);
  }
  if (!g.edges.empty()) {
    BlockCheck bc{"theta." + g.context, 0.0, 0, 0};
    auto& edges = m.contexts[context].edges;
    for (std::size_t e = 0; e < edges.size(); ++e) {
      const double orig = edges[e].theta;
      edges[e].theta = orig + epsilon;
      const double up = loss();
      edges[e].theta = orig - epsilon;
      const double down = loss();
      edges[e].theta = orig;
      bc.max_rel_error = std::max(bc.max_rel_error, rel_error(analytic.thetas[context][e], (up - down) / (2 * epsilon)));
      ++bc.checked;
    }
    rep.blocks.push_back(bc);
  }
  return rep;
}

GradCheckReport grad_check(const CrfModel& model, int context, std::span<const LabeledInstance> batch,
                           double epsilon) {
  ModelGradient g = ModelGradient::zeros_like(model);
  composite_nll(model, context, batch, &g);
  return compare_gradients(model, context, batch, g, epsilon);
}

void write_grad_check(const GradCheckReport& report, std::ostream& out) {
  out << "# format_version=1\n";
  out << "block,max_rel_error,checked,skipped\n";
  for (const auto& b : report.blocks)
    out << b.block << ',' << format_double(b.max_rel_error) << ',' << b.checked << ',' << b.skipped << '\n';
}

}  // namespace ccnn
