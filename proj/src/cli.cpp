#include "ccnn/cli.hpp"

#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "ccnn/data.hpp"
#include "ccnn/errors.hpp"
#include "ccnn/infer.hpp"
#include "ccnn/io.hpp"
#include "ccnn/metrics.hpp"
#include "ccnn/train.hpp"

namespace ccnn {
namespace {

namespace fs = std::filesystem;

struct RunConfig {
  std::vector<std::string> data;
  std::string config;
  std::string model_in;
  std::string model_out;
  std::string decoder = "dd";
  std::optional<std::uint64_t> seed;
  std::string out_dir = ".";
  std::string predictions;
  std::string spec;
  std::string output;
  int rows = 8;
  double epsilon = 1e-5;
};

Dataset load_input(const std::string& path) {
  Dataset d = load_dataset(path);
  normalize_images(d);
  return d;
}

fs::path output_path(const RunConfig& rc, const std::string& fallback) {
  const fs::path p = rc.output.empty() ? fs::path(rc.out_dir) / fallback : fs::path(rc.output);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  return p;
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw ConfigError("cannot write '" + p.string() + "'");
  return f;
}

// Context for a dataset: same id, else the context with the same node list.
int resolve_context(const CrfModel& model, const Dataset& d) {
  int ctx = model.find_context(d.id);
  const auto names = d.node_names();
  if (ctx < 0)
    for (std::size_t c = 0; c < model.contexts.size() && ctx < 0; ++c) {
      std::vector<std::string> cn;
      for (int id : model.contexts[c].nodes) cn.push_back(model.nodes[id].name);
      if (cn == names) ctx = static_cast<int>(c);
    }
  if (ctx < 0) {
    for (const auto& n : d.nodes)
      if (model.find_node(n.name) < 0) throw ConfigError("dataset node '" + n.name + "' is not in the model");
    throw ConfigError("no model context matches the nodes of dataset '" + d.id + "'");
  }
  const auto& g = model.contexts[ctx];
  for (std::size_t q = 0; q < d.nodes.size(); ++q) {
    if (q >= g.nodes.size()) throw ConfigError("dataset node '" + d.nodes[q].name + "' is not in the model context");
    const auto& n = model.nodes[g.nodes[q]];
    if (n.name != d.nodes[q].name)
      throw ConfigError("dataset node '" + d.nodes[q].name + "' does not match model node '" + n.name + "'");
    if (n.levels != d.nodes[q].levels)
      throw ConfigError("node '" + n.name + "' has " + std::to_string(d.nodes[q].levels) +
                        " levels in the dataset but " + std::to_string(n.levels) + " in the model");
  }
  if (g.nodes.size() != d.nodes.size())
    throw ConfigError("model node '" + model.nodes[g.nodes[d.nodes.size()]].name + "' is missing from the dataset");
  const Shape want = model.crop_fraction < 1.0 && !model.encoder.is_passthrough()
                         ? cropped_shape(d.input_shape, model.crop_fraction)
                         : d.input_shape;
  if (model.encoder.is_passthrough() ? want.size() != static_cast<std::size_t>(model.feature_dim())
                                     : !(want == model.encoder.input_shape()))
    throw ConfigError("dataset '" + d.id + "' input does not match the model encoder");
  return ctx;
}

int cmd_train(const RunConfig& rc, std::ostream& out) {
  TrainConfig cfg = rc.config.empty() ? TrainConfig{} : load_train_config(rc.config);
  if (rc.seed) cfg.seed = *rc.seed;
  std::vector<Dataset> data;
  for (const auto& p : rc.data) data.push_back(load_input(p));
  CrfModel model = build_model(data, cfg);
  const auto result = ibb_train(model, data, cfg);

  fs::create_directories(rc.out_dir);
  const fs::path model_path = rc.model_out.empty() ? fs::path(rc.out_dir) / "model.json" : fs::path(rc.model_out);
  if (model_path.has_parent_path()) fs::create_directories(model_path.parent_path());
  save_model(model, model_path, config_entries(cfg));
  const fs::path trace_path = fs::path(rc.out_dir) / "trace.csv";
  auto trace = open_out(trace_path);
  write_trace_csv(result, trace);

  out << "trained " << result.epochs_run << " epochs" << (result.stopped_early ? " (early stop)" : "")
      << "; objective " << result.trace.front().loss << " -> " << result.trace.back().loss << '\n';
  out << "model: " << model_path.string() << "\ntrace: " << trace_path.string() << '\n';
  return kExitOk;
}

int cmd_predict(const RunConfig& rc, std::ostream& out) {
  if (rc.data.size() != 1) throw ConfigError("predict takes exactly one --data file");
  const auto artifact = load_model(rc.model_in);
  const CrfModel& model = artifact.model;
  const Dataset d = load_input(rc.data.front());
  const int ctx = resolve_context(model, d);
  const DecodeMethod method = parse_decode_method(rc.decoder);

  Predictions p;
  p.decoder = to_string(method);
  p.nodes = d.node_names();
  for (const auto& row : d.rows) {
    const auto f = forward(inference_input(model, row.input), model.encoder);
    const auto r = decode(build_potentials(model, ctx, f), method);
    p.rows.push_back({row.subject, r.labels, r.score, r.certificate});
  }
  const auto path = output_path(rc, "predictions.csv");
  auto f = open_out(path);
  write_predictions(p, f);
  out << "wrote " << p.rows.size() << " predictions to " << path.string() << '\n';
  return kExitOk;
}

int cmd_eval(const RunConfig& rc, std::ostream& out) {
  if (rc.data.size() != 1) throw ConfigError("eval takes exactly one --data file");
  const Dataset d = load_dataset(rc.data.front());
  const Predictions p = load_predictions(rc.predictions);
  if (p.rows.size() != d.rows.size())
    throw DataError("predictions have " + std::to_string(p.rows.size()) + " rows, dataset has " +
                    std::to_string(d.rows.size()));
  if (p.nodes != d.node_names()) throw DataError("prediction columns do not match the dataset nodes");
  std::vector<std::vector<Level>> truth, pred;
  for (std::size_t i = 0; i < d.rows.size(); ++i) {
    if (p.rows[i].subject != d.rows[i].subject)
      throw DataError("row " + std::to_string(i + 1) + ": subject '" + p.rows[i].subject + "' differs from '" +
                      d.rows[i].subject + "'");
    truth.push_back(d.rows[i].labels);
    pred.push_back(p.rows[i].labels);
  }
  const auto report = evaluate(d.id, p.decoder, p.nodes, truth, pred);
  const auto path = output_path(rc, "eval.csv");
  auto f = open_out(path);
  write_eval_csv(report, f);
  write_eval_csv(report, out);
  return kExitOk;
}

int cmd_synth(const RunConfig& rc, std::ostream& out) {
  SynthSpec spec = load_synth_spec(rc.spec);
  if (rc.seed) spec.seed = *rc.seed;
  const Dataset d = synth_sample(spec);
  const auto path = output_path(rc, spec.dataset_id + ".txt");
  save_dataset(d, path);
  out << "wrote " << d.rows.size() << " rows to " << path.string() << '\n';
  return kExitOk;
}

int cmd_gradcheck(const RunConfig& rc, std::ostream& out) {
  if (rc.data.empty()) throw ConfigError("gradcheck needs a --data file");
  std::vector<Dataset> data;
  for (const auto& p : rc.data) data.push_back(load_input(p));
  CrfModel model;
  if (!rc.model_in.empty()) {
    model = load_model(rc.model_in).model;
  } else {
    TrainConfig cfg = rc.config.empty() ? TrainConfig{} : load_train_config(rc.config);
    if (rc.seed) cfg.seed = *rc.seed;
    model = build_model(data, cfg);
  }
  if (rc.rows < 1) throw ConfigError("--rows must be positive");
  bool ok = true;
  for (const auto& d : data) {
    const int ctx = resolve_context(model, d);
    const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(rc.rows), d.rows.size());
    const auto report = grad_check(model, ctx, std::span(d.rows).first(n), rc.epsilon);
    out << "# context " << model.contexts[ctx].context << '\n';
    write_grad_check(report, out);
    ok = ok && report.passed(kGradCheckTolerance);
  }
  out << (ok ? "gradient check passed" : "gradient check FAILED") << " (tolerance " << kGradCheckTolerance << ")\n";
  return ok ? kExitOk : kExitFailure;
}

int cmd_inspect(const RunConfig& rc, std::ostream& out) {
  const auto artifact = load_model(rc.model_in);
  write_model_summary(artifact.model, out);
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Joint estimation of dependent ordinal outputs with copula CRFs", "ccnn"};
  app.require_subcommand(1);
  RunConfig rc;

  auto seed_opt = [&](CLI::App* c) {
    c->add_option_function<std::uint64_t>("--seed", [&](const std::uint64_t& s) { rc.seed = s; },
                                          "Override the random seed");
  };
  auto* train = app.add_subcommand("train", "Train a model on one or more datasets");
  train->add_option("--data", rc.data, "Dataset file (repeat for several datasets)")->required();
  train->add_option("--config", rc.config, "Training config (key = value)");
  train->add_option("--model-out", rc.model_out, "Model file (default <out-dir>/model.json)");
  train->add_option("--out-dir", rc.out_dir, "Directory for outputs");
  seed_opt(train);

  auto* predict = app.add_subcommand("predict", "Decode labels for a dataset");
  predict->add_option("--model-in", rc.model_in, "Model file")->required();
  predict->add_option("--data", rc.data, "Dataset file")->required();
  predict->add_option("--decoder", rc.decoder, "exact, dd or unary")->check(CLI::IsMember({"exact", "dd", "unary"}));
  predict->add_option("--out-dir", rc.out_dir, "Directory for outputs");
  predict->add_option("--output", rc.output, "Predictions file (default <out-dir>/predictions.csv)");

  auto* eval = app.add_subcommand("eval", "Score predictions against a dataset");
  eval->add_option("--data", rc.data, "Dataset file with true labels")->required();
  eval->add_option("--predictions", rc.predictions, "Predictions file")->required();
  eval->add_option("--out-dir", rc.out_dir, "Directory for outputs");
  eval->add_option("--output", rc.output, "Report file (default <out-dir>/eval.csv)");

  auto* synth = app.add_subcommand("synth", "Sample a synthetic dataset");
  synth->add_option("--spec", rc.spec, "Generator spec (JSON)")->required();
  synth->add_option("--out-dir", rc.out_dir, "Directory for outputs");
  synth->add_option("--output", rc.output, "Dataset file (default <out-dir>/<dataset_id>.txt)");
  seed_opt(synth);

  auto* gradcheck = app.add_subcommand("gradcheck", "Compare analytic and numeric gradients");
  gradcheck->add_option("--data", rc.data, "Dataset file")->required();
  gradcheck->add_option("--model-in", rc.model_in, "Model file (default: fresh model from --config)");
  gradcheck->add_option("--config", rc.config, "Training config used to build a fresh model");
  gradcheck->add_option("--rows", rc.rows, "Number of leading rows in the batch");
  gradcheck->add_option("--epsilon", rc.epsilon, "Finite-difference step");
  seed_opt(gradcheck);

  auto* inspect = app.add_subcommand("inspect", "Summarize a model");
  inspect->add_option("--model-in", rc.model_in, "Model file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (train->parsed()) return cmd_train(rc, out);
    if (predict->parsed()) return cmd_predict(rc, out);
    if (eval->parsed()) return cmd_eval(rc, out);
    if (synth->parsed()) return cmd_synth(rc, out);
    if (gradcheck->parsed()) return cmd_gradcheck(rc, out);
    if (inspect->parsed()) return cmd_inspect(rc, out);
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const DivergenceError& e) {
    err << "divergence: " << e.what() << '\n';
    return kExitDivergence;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const ArgumentError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const CapacityError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitFailure;
}

}  // namespace ccnn
