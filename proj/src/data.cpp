#include "ccnn/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <random>
#include <span>
#include <set>
#include <sstream>

#include "json.hpp"
#include <opencv2/imgcodecs.hpp>

#include "ccnn/errors.hpp"

namespace ccnn {
namespace {

std::vector<std::string> split_ws(const std::string& line) {
  std::istringstream ss(line);
  std::vector<std::string> out;
  for (std::string t; ss >> t;) out.push_back(t);
  return out;
}

bool parse_double(const std::string& s, double& out) {
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && ptr == end && std::isfinite(out);
}

bool parse_int(const std::string& s, int& out) {
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && ptr == end;
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

ImageTensor read_gray_image(const std::filesystem::path& path, Shape expected, int line) {
  cv::Mat img = cv::imread(path.string(), cv::IMREAD_GRAYSCALE);
  if (img.empty()) throw DataError("cannot read image '" + path.string() + "'", line);
  if (img.rows != expected.height || img.cols != expected.width)
    throw DataError("image '" + path.string() + "' is " + std::to_string(img.rows) + "x" +
                        std::to_string(img.cols) + ", header declares " + std::to_string(expected.height) + "x" +
                        std::to_string(expected.width),
                    line);
  ImageTensor t(1, img.rows, img.cols);
  for (int y = 0; y < img.rows; ++y)
    for (int x = 0; x < img.cols; ++x) t.at(0, y, x) = img.at<unsigned char>(y, x) / 255.0;
  return t;
}

}  // namespace

std::vector<std::string> Dataset::node_names() const {
  std::vector<std::string> n;
  for (const auto& x : nodes) n.push_back(x.name);
  return n;
}

std::vector<std::string> Dataset::subjects() const {
  std::set<std::string> s;
  for (const auto& r : rows) s.insert(r.subject);
  return {s.begin(), s.end()};
}

Dataset parse_dataset(std::istream& in, const std::filesystem::path& base_dir) {
  Dataset d;
  bool have_magic = false, have_input = false, in_rows = false;
  int line_no = 0, row_no = 0;
  std::set<std::string> names;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto tok = split_ws(line);
    if (tok.empty() || tok[0][0] == '#') continue;

    if (!have_magic) {
      int version = 0;
      if (tok.size() != 2 || tok[0] != "ccnn-dataset" || !parse_int(tok[1], version))
        throw DataError("expected 'ccnn-dataset <version>' header", line_no);
      if (version > kDatasetFormatVersion || version < 1)
        throw DataError("unsupported dataset format_version " + tok[1], line_no);
      have_magic = true;
      continue;
    }

    if (!in_rows) {
      if (tok[0] == "dataset" && tok.size() == 2) {
        d.id = tok[1];
      } else if (tok[0] == "input" && tok.size() == 3 && tok[1] == "features") {
        int dim = 0;
        if (!parse_int(tok[2], dim) || dim < 1) throw DataError("feature dimension must be a positive integer", line_no);
        d.input_kind = InputKind::Features;
        d.input_shape = Shape{dim, 1, 1};
        have_input = true;
      } else if (tok[0] == "input" && tok.size() == 4 && tok[1] == "image") {
        int h = 0, w = 0;
        if (!parse_int(tok[2], h) || !parse_int(tok[3], w) || h < 1 || w < 1)
          throw DataError("image dimensions must be positive integers", line_no);
        d.input_kind = InputKind::Image;
        d.input_shape = Shape{1, h, w};
        have_input = true;
      } else if (tok[0] == "node" && tok.size() == 3) {
        int levels = 0;
        if (!parse_int(tok[2], levels) || levels < 2)
          throw DataError("node '" + tok[1] + "' needs at least 2 levels", line_no);
        if (!names.insert(tok[1]).second) throw DataError("duplicate node '" + tok[1] + "'", line_no);
        d.nodes.push_back({tok[1], levels});
      } else if (tok[0] == "rows" && tok.size() == 1) {
        if (d.id.empty()) throw DataError("missing 'dataset <id>' line", line_no);
        if (!have_input) throw DataError("missing 'input' line", line_no);
        if (d.nodes.empty()) throw DataError("no 'node' lines", line_no);
        in_rows = true;
      } else {
        throw DataError("unrecognized header line '" + line + "'", line_no);
      }
      continue;
    }

    ++row_no;
    const std::string where = "row " + std::to_string(row_no);
    const std::size_t Q = d.nodes.size();
    const std::size_t expected =
        1 + Q + (d.input_kind == InputKind::Features ? d.input_shape.size() : std::size_t{1});
    if (tok.size() != expected) {
      if (d.input_kind == InputKind::Features && tok.size() > 1 + Q)
        throw DataError(where + ": feature dimension " + std::to_string(tok.size() - 1 - Q) + ", header declares " +
                            std::to_string(d.input_shape.size()),
                        line_no);
      throw DataError(where + ": expected " + std::to_string(expected) + " fields, found " +
                          std::to_string(tok.size()),
                      line_no);
    }
    LabeledInstance inst;
    inst.subject = tok[0];
    inst.dataset = d.id;
    bool any_label = false;
    for (std::size_t q = 0; q < Q; ++q) {
      const auto& t = tok[1 + q];
      if (t == "?") {
        inst.labels.push_back(kMissing);
        continue;
      }
      int l = 0;
      if (!parse_int(t, l)) throw DataError(where + ": bad label '" + t + "'", line_no);
      if (l < 1 || l > d.nodes[q].levels)
        throw DataError(where + ": label " + t + " outside 1.." + std::to_string(d.nodes[q].levels) + " for node '" +
                            d.nodes[q].name + "'",
                        line_no);
      inst.labels.push_back(l - 1);
      any_label = true;
    }
    if (!any_label) throw DataError(where + ": every label is missing", line_no);
    if (d.input_kind == InputKind::Features) {
      std::vector<double> f(d.input_shape.size());
      for (std::size_t k = 0; k < f.size(); ++k)
        if (!parse_double(tok[1 + Q + k], f[k]))
          throw DataError(where + ": bad feature value '" + tok[1 + Q + k] + "'", line_no);
      inst.input = ImageTensor(d.input_shape, std::move(f));
    } else {
      inst.source = tok.back();
      inst.input = read_gray_image(base_dir / inst.source, d.input_shape, line_no);
    }
    d.rows.push_back(std::move(inst));
  }
  if (!have_magic) throw DataError("empty dataset file");
  if (!in_rows) throw DataError("missing 'rows' line");
  if (d.rows.empty()) throw DataError("dataset has no rows");
  return d;
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset '" + path.string() + "'");
  try {
    return parse_dataset(in, path.parent_path());
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

void write_dataset(const Dataset& data, std::ostream& out) {
  out << "ccnn-dataset " << kDatasetFormatVersion << '\n';
  out << "dataset " << data.id << '\n';
  if (data.input_kind == InputKind::Features) out << "input features " << data.input_shape.size() << '\n';
  else out << "input image " << data.input_shape.height << ' ' << data.input_shape.width << '\n';
  for (const auto& n : data.nodes) out << "node " << n.name << ' ' << n.levels << '\n';
  out << "rows\n";
  for (const auto& r : data.rows) {
    out << r.subject;
    for (Level l : r.labels) {
      out << ' ';
      if (l == kMissing) out << '?';
      else out << l + 1;
    }
    if (data.input_kind == InputKind::Features)
      for (double v : r.input.values) out << ' ' << format_double(v);
    else
      out << ' ' << r.source;
    out << '\n';
  }
}

void save_dataset(const Dataset& data, const std::filesystem::path& path) {
  validate_dataset(data);
  std::ofstream out(path);
  if (!out) throw DataError("cannot write dataset '" + path.string() + "'");
  write_dataset(data, out);
}

void validate_dataset(const Dataset& data) {
  if (data.rows.empty()) throw DataError("dataset has no rows");
  if (data.nodes.empty()) throw DataError("dataset has no nodes");
  for (std::size_t i = 0; i < data.rows.size(); ++i) {
    const auto& r = data.rows[i];
    const std::string where = "row " + std::to_string(i + 1);
    if (r.labels.size() != data.nodes.size()) throw DataError(where + ": label count mismatch");
    bool any = false;
    for (std::size_t q = 0; q < r.labels.size(); ++q) {
      if (r.labels[q] == kMissing) continue;
      any = true;
      if (r.labels[q] < 0 || r.labels[q] >= data.nodes[q].levels) throw DataError(where + ": label out of range");
    }
    if (!any) throw DataError(where + ": every label is missing");
    if (r.input.values.size() != data.input_shape.size()) throw DataError(where + ": input size mismatch");
    for (double v : r.input.values)
      if (!std::isfinite(v)) throw DataError(where + ": non-finite input value");
    if (data.input_kind == InputKind::Image && r.source.empty()) throw DataError(where + ": image row without a path");
  }
}

void normalize_images(Dataset& data) {
  if (data.input_kind != InputKind::Image) return;
  for (auto& r : data.rows) r.input = contrast_normalize(r.input).image;
}

std::pair<Dataset, Dataset> split_by_subject(const Dataset& data, double train_fraction, std::uint64_t seed) {
  auto subjects = data.subjects();
  if (subjects.size() < 2) throw ArgumentError("splitting by subject needs at least 2 subjects");
  if (!(train_fraction > 0.0 && train_fraction <= 1.0)) throw ArgumentError("train fraction must lie in (0, 1]");
  std::mt19937_64 rng(seed);
  std::shuffle(subjects.begin(), subjects.end(), rng);
  const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(subjects.size())));
  if (n_train == 0) throw ArgumentError("split leaves the training partition empty");
  if (n_train >= subjects.size()) throw ArgumentError("split leaves the test partition empty");
  const std::set<std::string> train_set(subjects.begin(), subjects.begin() + static_cast<std::ptrdiff_t>(n_train));
  Dataset train = data, test = data;
  train.rows.clear();
  test.rows.clear();
  for (const auto& r : data.rows) (train_set.count(r.subject) ? train : test).rows.push_back(r);
  return {std::move(train), std::move(test)};
}

std::vector<OrdinalUnaryParams> SynthSpec::unaries() const {
  std::vector<OrdinalUnaryParams> u;
  for (const auto& n : nodes) u.push_back(OrdinalUnaryParams::from_natural(n.thresholds, n.beta, n.sigma));
  return u;
}

void validate_synth_spec(const SynthSpec& spec) {
  if (spec.nodes.empty()) throw ConfigError("synth spec has no nodes");
  if (spec.feature_dim < 1) throw ConfigError("synth feature_dim must be positive");
  if (spec.samples < 1) throw ConfigError("synth samples must be positive");
  if (spec.subjects < 1) throw ConfigError("synth subjects must be positive");
  if (spec.fixed_feature && static_cast<int>(spec.fixed_feature->size()) != spec.feature_dim)
    throw ConfigError("fixed_feature length differs from feature_dim");
  std::set<std::string> names;
  for (const auto& n : spec.nodes) {
    if (!names.insert(n.name).second) throw ConfigError("duplicate synth node '" + n.name + "'");
    if (n.thresholds.empty()) throw ConfigError("synth node '" + n.name + "' needs thresholds");
    if (static_cast<int>(n.beta.size()) != spec.feature_dim)
      throw ConfigError("synth node '" + n.name + "' beta length differs from feature_dim");
  }
  spec.unaries();  // threshold ordering and sigma checks
  std::set<std::string> used;
  for (const auto& e : spec.edges) {
    if (!names.count(e.r) || !names.count(e.s)) throw ConfigError("synth edge references an unknown node");
    if (e.r == e.s) throw ConfigError("synth edge joins a node to itself");
    if (!used.insert(e.r).second || !used.insert(e.s).second)
      throw ConfigError("synth edges must be node-disjoint pairs (node shared by two edges)");
    if (!std::isfinite(e.theta)) throw ConfigError("synth theta must be finite");
  }
}

namespace {

int node_pos(const SynthSpec& spec, const std::string& name) {
  for (std::size_t i = 0; i < spec.nodes.size(); ++i)
    if (spec.nodes[i].name == name) return static_cast<int>(i);
  return -1;
}

int sample_index(std::span<const double> probs, double u) {
  double acc = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    acc += probs[i];
    if (u < acc) return static_cast<int>(i);
  }
  // u landed in the rounding slack above the total; take the last non-empty cell
  for (std::size_t i = probs.size(); i-- > 0;)
    if (probs[i] > 0.0) return static_cast<int>(i);
  return 0;
}

}  // namespace

Dataset synth_sample(const SynthSpec& spec) {
  validate_synth_spec(spec);
  const auto unaries = spec.unaries();
  Dataset d;
  d.id = spec.dataset_id;
  for (const auto& n : spec.nodes) d.nodes.push_back({n.name, static_cast<int>(n.thresholds.size()) + 1});
  d.input_kind = InputKind::Features;
  d.input_shape = Shape{spec.feature_dim, 1, 1};

  std::vector<bool> paired(spec.nodes.size(), false);
  std::vector<std::pair<int, int>> edges;
  for (const auto& e : spec.edges) {
    edges.emplace_back(node_pos(spec, e.r), node_pos(spec, e.s));
    paired[edges.back().first] = paired[edges.back().second] = true;
  }

  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const int width = std::max(2, static_cast<int>(std::to_string(spec.subjects).size()));
  d.rows.reserve(spec.samples);
  for (int i = 0; i < spec.samples; ++i) {
    FeatureVector f(spec.feature_dim);
    if (spec.fixed_feature) f = *spec.fixed_feature;
    else
      for (auto& v : f) v = spec.feature_std * gauss(rng);

    LabeledInstance inst;
    inst.dataset = d.id;
    std::string sid = std::to_string(i % spec.subjects);
    inst.subject = "s" + std::string(width - std::min<int>(width, static_cast<int>(sid.size())), '0') + sid;
    inst.labels.assign(spec.nodes.size(), kMissing);
    for (std::size_t e = 0; e < edges.size(); ++e) {
      const auto [r, s] = edges[e];
      const auto table = pairwise_joint_table(f, unaries[r], unaries[s], spec.edges[e].theta);
      const int cell = sample_index(table.probs, unif(rng) * table.total());
      inst.labels[r] = cell / table.cols;
      inst.labels[s] = cell % table.cols;
    }
    for (std::size_t q = 0; q < spec.nodes.size(); ++q) {
      if (paired[q]) continue;
      const auto p = level_probs(f, unaries[q]);
      inst.labels[q] = sample_index(p, unif(rng));
    }
    if (spec.feature_noise > 0.0)
      for (auto& v : f) v += spec.feature_noise * gauss(rng);
    inst.input = ImageTensor::from_features(f);
    d.rows.push_back(std::move(inst));
  }
  return d;
}

SynthSpec load_synth_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open synth spec '" + path.string() + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("synth spec '" + path.string() + "' is not valid JSON: " + e.what());
  }
  try {
    const int version = j.value("format_version", 1);
    if (version > 1) throw ConfigError("unsupported synth spec format_version " + std::to_string(version));
    SynthSpec s;
    s.dataset_id = j.value("dataset_id", s.dataset_id);
    s.feature_dim = j.at("feature_dim").get<int>();
    s.feature_std = j.value("feature_std", s.feature_std);
    s.feature_noise = j.value("feature_noise", s.feature_noise);
    if (j.contains("fixed_feature")) s.fixed_feature = j.at("fixed_feature").get<std::vector<double>>();
    s.samples = j.value("samples", s.samples);
    s.subjects = j.value("subjects", s.subjects);
    s.seed = j.value("seed", s.seed);
    for (const auto& n : j.at("nodes")) {
      SynthNode node;
      node.name = n.at("name").get<std::string>();
      node.thresholds = n.at("thresholds").get<std::vector<double>>();
      node.beta = n.value("beta", std::vector<double>(s.feature_dim, 0.0));
      node.sigma = n.value("sigma", 1.0);
      s.nodes.push_back(std::move(node));
    }
    if (j.contains("edges"))
      for (const auto& e : j.at("edges"))
        s.edges.push_back({e.at("r").get<std::string>(), e.at("s").get<std::string>(), e.at("theta").get<double>()});
    validate_synth_spec(s);
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("synth spec '" + path.string() + "': " + e.what());
  }
}

void save_synth_spec(const SynthSpec& spec, const std::filesystem::path& path) {
  nlohmann::json j;
  j["format_version"] = 1;
  j["dataset_id"] = spec.dataset_id;
  j["feature_dim"] = spec.feature_dim;
  j["feature_std"] = spec.feature_std;
  j["feature_noise"] = spec.feature_noise;
  if (spec.fixed_feature) j["fixed_feature"] = *spec.fixed_feature;
  j["samples"] = spec.samples;
  j["subjects"] = spec.subjects;
  j["seed"] = spec.seed;
  j["nodes"] = nlohmann::json::array();
  for (const auto& n : spec.nodes)
    j["nodes"].push_back({{"name", n.name}, {"thresholds", n.thresholds}, {"beta", n.beta}, {"sigma", n.sigma}});
  j["edges"] = nlohmann::json::array();
  for (const auto& e : spec.edges) j["edges"].push_back({{"r", e.r}, {"s", e.s}, {"theta", e.theta}});
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write synth spec '" + path.string() + "'");
  out << j.dump(2) << '\n';
}

}  // namespace ccnn
