#include "ccnn/io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <ostream>
#include <sstream>

#include "json.hpp"

#include "ccnn/errors.hpp"

namespace ccnn {
namespace {

using nlohmann::json;

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

json encoder_json(const EncoderParams& e) {
  json j;
  const Shape s = e.input_shape();
  j["input_shape"] = {s.channels, s.height, s.width};
  if (e.is_passthrough()) {
    j["layers"] = "";
    return j;
  }
  j["layers"] = format_layer_specs(e.specs());
  j["weights"] = json::array();
  for (const auto& l : e.layers()) j["weights"].push_back({{"weights", l.weights}, {"bias", l.bias}});
  return j;
}

EncoderParams encoder_from_json(const json& j) {
  const auto s = j.at("input_shape").get<std::vector<int>>();
  if (s.size() != 3) throw ConfigError("encoder input_shape needs 3 entries");
  const Shape shape{s[0], s[1], s[2]};
  const auto layers = j.at("layers").get<std::string>();
  if (layers.empty()) return EncoderParams::passthrough(static_cast<int>(shape.size()));
  auto e = EncoderParams::build(shape, parse_layer_specs(layers), 0);
  const auto& w = j.at("weights");
  if (w.size() != e.layers().size()) throw ConfigError("encoder weight list does not match its layers");
  for (std::size_t i = 0; i < e.layers().size(); ++i) {
    auto& l = e.layers()[i];
    auto weights = w[i].at("weights").get<std::vector<double>>();
    auto bias = w[i].at("bias").get<std::vector<double>>();
    if (weights.size() != l.weights.size() || bias.size() != l.bias.size())
      throw ConfigError("encoder layer " + std::to_string(i) + " has the wrong number of parameters");
    l.weights = std::move(weights);
    l.bias = std::move(bias);
  }
  return e;
}

}  // namespace

std::string model_to_json(const CrfModel& model, const ConfigSnapshot& config) {
  model.validate();
  json j;
  j["format_version"] = kModelFormatVersion;
  j["encoder"] = encoder_json(model.encoder);
  j["crop_fraction"] = model.crop_fraction;
  j["lambda"] = model.lambda;
  j["theta_max"] = model.theta_max;
  j["nodes"] = json::array();
  for (std::size_t q = 0; q < model.nodes.size(); ++q) {
    const auto raw = model.unaries[q].raw();
    json n{{"name", model.nodes[q].name},
           {"levels", model.nodes[q].levels},
           {"raw", std::vector<double>(raw.begin(), raw.end())},
           {"thresholds", model.unaries[q].thresholds()},
           {"sigma", model.unaries[q].sigma()}};
    if (q < model.node_lambda.size() && model.node_lambda[q]) n["lambda"] = *model.node_lambda[q];
    j["nodes"].push_back(std::move(n));
  }
  j["contexts"] = json::array();
  for (const auto& c : model.contexts) {
    json cj{{"name", c.context}, {"nodes", json::array()}, {"edges", json::array()}};
    for (int id : c.nodes) cj["nodes"].push_back(model.nodes[id].name);
    for (const auto& e : c.edges)
      cj["edges"].push_back({{"r", model.nodes[c.nodes[e.r]].name}, {"s", model.nodes[c.nodes[e.s]].name}, {"theta", e.theta}});
    j["contexts"].push_back(std::move(cj));
  }
  j["config"] = json::object();
  for (const auto& [k, v] : config) j["config"][k] = v;
  return j.dump(2) + "\n";
}

ModelArtifact model_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("model file is not valid JSON: ") + e.what());
  }
  try {
    const int version = j.at("format_version").get<int>();
    if (version > kModelFormatVersion || version < 1)
      throw ConfigError("unsupported model format_version " + std::to_string(version) + " (this build reads up to " +
                        std::to_string(kModelFormatVersion) + ")");
    ModelArtifact a;
    CrfModel& m = a.model;
    m.encoder = encoder_from_json(j.at("encoder"));
    m.crop_fraction = j.value("crop_fraction", 1.0);
    m.lambda = j.at("lambda").get<double>();
    m.theta_max = j.value("theta_max", kDefaultThetaMax);
    for (const auto& n : j.at("nodes")) {
      const int id = m.add_node(n.at("name").get<std::string>(), n.at("levels").get<int>());
      const auto raw = n.at("raw").get<std::vector<double>>();
      auto dst = m.unaries[id].raw();
      if (raw.size() != dst.size())
        throw ConfigError("node '" + m.nodes[id].name + "' has " + std::to_string(raw.size()) +
                          " parameters, expected " + std::to_string(dst.size()));
      std::copy(raw.begin(), raw.end(), dst.begin());
      m.node_lambda.resize(m.nodes.size());
      if (n.contains("lambda")) m.node_lambda[id] = n.at("lambda").get<double>();
    }
    m.node_lambda.resize(m.nodes.size());
    for (const auto& c : j.at("contexts")) {
      const auto names = c.at("nodes").get<std::vector<std::string>>();
      std::vector<std::pair<int, int>> edges;
      std::vector<double> thetas;
      for (const auto& e : c.at("edges")) {
        const auto r = std::find(names.begin(), names.end(), e.at("r").get<std::string>());
        const auto s = std::find(names.begin(), names.end(), e.at("s").get<std::string>());
        if (r == names.end() || s == names.end()) throw ConfigError("edge references a node outside its context");
        edges.emplace_back(static_cast<int>(r - names.begin()), static_cast<int>(s - names.begin()));
        thetas.push_back(e.at("theta").get<double>());
      }
      const int ctx = m.add_context(c.at("name").get<std::string>(), names, edges);
      for (std::size_t e = 0; e < thetas.size(); ++e) m.contexts[ctx].edges[e].theta = thetas[e];
    }
    if (j.contains("config"))
      for (const auto& [k, v] : j.at("config").items()) a.config.emplace_back(k, v.get<std::string>());
    m.validate();
    return a;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed model file: ") + e.what());
  }
}

void save_model(const CrfModel& model, const std::filesystem::path& path, const ConfigSnapshot& config) {
  const auto text = model_to_json(model, config);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write model '" + path.string() + "'");
  out << text;
}

ModelArtifact load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open model '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return model_from_json(ss.str());
}

std::string dependence_label(double theta) {
  if (std::abs(theta) < kIndependenceTheta) return "independence";
  return theta > 0 ? "positive dependence" : "negative dependence";
}

void write_model_summary(const CrfModel& model, std::ostream& out) {
  out << "encoder: ";
  if (model.encoder.is_passthrough()) out << "passthrough, feature_dim " << model.feature_dim() << '\n';
  else {
    const Shape s = model.encoder.input_shape();
    out << format_layer_specs(model.encoder.specs()) << " on " << s.channels << "x" << s.height << "x" << s.width
        << ", " << model.encoder.parameter_count() << " parameters\n";
  }
  out << "nodes: " << model.nodes.size() << '\n';
  for (std::size_t q = 0; q < model.nodes.size(); ++q) {
    const auto& u = model.unaries[q];
    out << "  " << model.nodes[q].name << " (" << model.nodes[q].levels << " levels) thresholds";
    for (double t : u.thresholds()) out << ' ' << format_double(t);
    out << " sigma " << format_double(u.sigma()) << '\n';
  }
  for (const auto& c : model.contexts) {
    out << "context " << c.context << ": " << c.nodes.size() << " nodes, " << c.edges.size() << " edges\n";
    for (const auto& e : c.edges)
      out << "  " << model.nodes[c.nodes[e.r]].name << " - " << model.nodes[c.nodes[e.s]].name << " theta "
          << format_double(e.theta) << " (" << dependence_label(e.theta) << ")\n";
  }
}

void write_predictions(const Predictions& p, std::ostream& out) {
  out << "# format_version=" << kPredictionFormatVersion << " decoder=" << p.decoder << '\n';
  out << "row,subject";
  for (const auto& n : p.nodes) out << ',' << n;
  out << ",score,certificate\n";
  for (std::size_t i = 0; i < p.rows.size(); ++i) {
    const auto& r = p.rows[i];
    out << i + 1 << ',' << r.subject;
    for (Level l : r.labels) out << ',' << l + 1;
    out << ',' << format_double(r.score) << ',' << (r.certificate ? 1 : 0) << '\n';
  }
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream ss(line);
  while (std::getline(ss, cur, ',')) out.push_back(cur);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

Predictions read_predictions(std::istream& in) {
  Predictions p;
  std::string line;
  int line_no = 1;
  if (!std::getline(in, line) || line.rfind("# format_version=", 0) != 0)
    throw DataError("predictions file lacks a format_version header", line_no);
  {
    std::istringstream ss(line.substr(2));
    for (std::string tok; ss >> tok;) {
      const auto eq = tok.find('=');
      if (eq == std::string::npos) continue;
      const auto key = tok.substr(0, eq), val = tok.substr(eq + 1);
      if (key == "format_version") {
        int v = 0;
        const auto [ptr, ec] = std::from_chars(val.data(), val.data() + val.size(), v);
        if (ec != std::errc() || ptr != val.data() + val.size())
          throw DataError("bad predictions format_version '" + val + "'", line_no);
        if (v > kPredictionFormatVersion) throw DataError("unsupported predictions format_version " + val, line_no);
      }
      if (key == "decoder") p.decoder = val;
    }
  }
  ++line_no;
  if (!std::getline(in, line)) throw DataError("predictions file lacks a column header", line_no);
  const auto head = split_csv(line);
  if (head.size() < 5 || head[0] != "row" || head[1] != "subject" || head[head.size() - 2] != "score" ||
      head.back() != "certificate")
    throw DataError("unexpected predictions column header", line_no);
  p.nodes.assign(head.begin() + 2, head.end() - 2);
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != head.size())
      throw DataError("expected " + std::to_string(head.size()) + " fields, found " + std::to_string(f.size()), line_no);
    PredictionRow r;
    r.subject = f[1];
    try {
      for (std::size_t q = 0; q < p.nodes.size(); ++q) r.labels.push_back(std::stoi(f[2 + q]) - 1);
      r.score = std::stod(f[f.size() - 2]);
    } catch (const std::exception&) {
      throw DataError("malformed predictions row", line_no);
    }
    r.certificate = f.back() == "1";
    p.rows.push_back(std::move(r));
  }
  return p;
}

Predictions load_predictions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open predictions '" + path.string() + "'");
  try {
    return read_predictions(in);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

}  // namespace ccnn
