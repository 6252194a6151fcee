#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "doctest.h"

#include "ccnn/copula.hpp"
#include "ccnn/data.hpp"
#include "ccnn/errors.hpp"
#include "support.hpp"

using namespace ccnn;

namespace {

const char* kSmall =
    "ccnn-dataset 1\n"
    "# two nodes\n"
    "dataset faces\n"
    "input features 2\n"
    "node smile 3\n"
    "node brow 2\n"
    "rows\n"
    "s1 1 2 0.5 -0.25\n"
    "s1 ? 1 1e-3 2\n"
    "s2 3 ? -1 0.1\n";

Dataset parse(const std::string& text) {
  std::istringstream in(text);
  return parse_dataset(in);
}

std::string serialize(const Dataset& d) {
  std::ostringstream out;
  write_dataset(d, out);
  return out.str();
}

SynthSpec pair_spec(double theta, int levels) {
  SynthSpec s;
  std::vector<double> t;
  for (int k = 0; k < levels - 1; ++k) t.push_back(-0.8 + 1.6 * k / std::max(1, levels - 2));
  if (levels == 2) t = {0.0};
  s.nodes = {{"a", t, {0.0}}, {"b", t, {0.0}}};
  s.edges = {{"a", "b", theta}};
  s.fixed_feature = FeatureVector{0.0};
  s.samples = 1000;
  return s;
}

std::vector<double> empirical(const Dataset& d, int rows, int cols) {
  std::vector<double> t(static_cast<std::size_t>(rows) * cols, 0.0);
  for (const auto& r : d.rows) t[r.labels[0] * cols + r.labels[1]] += 1.0;
  for (auto& v : t) v /= static_cast<double>(d.rows.size());
  return t;
}

}  // namespace

TEST_CASE("text dataset parses labels, missing entries and features") {
  const auto d = parse(kSmall);
  CHECK(d.id == "faces");
  CHECK(d.node_names() == std::vector<std::string>{"smile", "brow"});
  CHECK(d.input_shape == Shape{2, 1, 1});
  REQUIRE(d.rows.size() == 3);
  CHECK(d.rows[0].labels == std::vector<Level>{0, 1});
  CHECK(d.rows[1].labels[0] == kMissing);
  CHECK(d.rows[2].labels[1] == kMissing);
  CHECK(d.rows[1].input.values == std::vector<double>{1e-3, 2.0});
  CHECK(d.subjects() == std::vector<std::string>{"s1", "s2"});
}

TEST_CASE("write then read is bit-identical") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g(0.0, 1.0);
  auto d = parse(kSmall);
  for (auto& r : d.rows)
    for (auto& v : r.input.values) v = g(rng) * 1e3 / 7.0;
  const auto text = serialize(d);
  const auto back = parse(text);
  REQUIRE(back.rows.size() == d.rows.size());
  for (std::size_t i = 0; i < d.rows.size(); ++i) {
    CHECK(back.rows[i].input.values == d.rows[i].input.values);
    CHECK(back.rows[i].labels == d.rows[i].labels);
    CHECK(back.rows[i].subject == d.rows[i].subject);
  }
  CHECK(serialize(back) == text);
  const auto dir = testing::scratch_dir("data_roundtrip");
  save_dataset(d, dir / "d.txt");
  CHECK(serialize(load_dataset(dir / "d.txt")) == text);
}

TEST_CASE("malformed rows report their line") {
  std::string text = kSmall;
  text += "s3 1 1 0.5\n";  // line 11, one feature short
  try {
    parse(text);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("line 11") != std::string::npos);
    CHECK(msg.find("row 4") != std::string::npos);
    CHECK(msg.find("feature dimension 1, header declares 2") != std::string::npos);
  }
  CHECK_THROWS_AS(parse(std::string(kSmall) + "s3 4 1 0 0\n"), DataError);
  CHECK_THROWS_AS(parse(std::string(kSmall) + "s3 0 1 0 0\n"), DataError);
  CHECK_THROWS_AS(parse(std::string(kSmall) + "s3 ? ? 0 0\n"), DataError);
  CHECK_THROWS_AS(parse(std::string(kSmall) + "s3 1 1 0 abc\n"), DataError);
  CHECK_THROWS_AS(parse("ccnn-dataset 2\n"), DataError);
  CHECK_THROWS_AS(parse("dataset x\n"), DataError);
  CHECK_THROWS_AS(parse("ccnn-dataset 1\ndataset x\ninput features 1\nrows\n"), DataError);
  CHECK_THROWS_AS(load_dataset("/nonexistent/data.txt"), DataError);
}

TEST_CASE("image rows load from grayscale files") {
  const auto dir = testing::scratch_dir("data_images");
  {
    std::ofstream pgm(dir / "a.pgm", std::ios::binary);
    pgm << "P5\n3 2\n255\n";
    const unsigned char px[] = {0, 51, 102, 153, 204, 255};
    pgm.write(reinterpret_cast<const char*>(px), sizeof px);
  }
  {
    std::ofstream f(dir / "d.txt");
    f << "ccnn-dataset 1\ndataset img\ninput image 2 3\nnode au 2\nrows\nsubj 2 a.pgm\n";
  }
  auto d = load_dataset(dir / "d.txt");
  REQUIRE(d.rows.size() == 1);
  CHECK(d.input_kind == InputKind::Image);
  CHECK(d.rows[0].input.shape == Shape{1, 2, 3});
  CHECK(d.rows[0].input.at(0, 0, 1) == doctest::Approx(0.2));
  CHECK(d.rows[0].input.at(0, 1, 2) == doctest::Approx(1.0));
  normalize_images(d);
  CHECK(d.rows[0].input.at(0, 0, 0) == doctest::Approx(0.0));
  CHECK(serialize(d).find("a.pgm") != std::string::npos);
  {
    std::ofstream f(dir / "bad.txt");
    f << "ccnn-dataset 1\ndataset img\ninput image 4 4\nnode au 2\nrows\nsubj 2 a.pgm\n";
  }
  CHECK_THROWS_AS(load_dataset(dir / "bad.txt"), DataError);
  {
    std::ofstream f(dir / "missing.txt");
    f << "ccnn-dataset 1\ndataset img\ninput image 2 3\nnode au 2\nrows\nsubj 2 nothere.pgm\n";
  }
  CHECK_THROWS_AS(load_dataset(dir / "missing.txt"), DataError);
}

TEST_CASE("subject split") {
  Dataset d = parse(kSmall);
  d.rows.clear();
  for (int s = 0; s < 27; ++s)
    for (int k = 0; k < 3; ++k) {
      LabeledInstance r;
      r.input = ImageTensor::from_features(std::vector<double>{double(s), double(k)});
      r.labels = {Level(k), 0};
      r.subject = "p" + std::to_string(s);
      d.rows.push_back(r);
    }
  const auto [train, test] = split_by_subject(d, 2.0 / 3.0, 5);
  CHECK(train.subjects().size() == 18);
  CHECK(test.subjects().size() == 9);
  CHECK(train.rows.size() + test.rows.size() == d.rows.size());
  const auto train_subjects = train.subjects();
  const std::set<std::string> a(train_subjects.begin(), train_subjects.end());
  for (const auto& s : test.subjects()) CHECK(a.count(s) == 0);
  const auto again = split_by_subject(d, 2.0 / 3.0, 5);
  CHECK(again.first.subjects() == train.subjects());
  CHECK(split_by_subject(d, 2.0 / 3.0, 6).first.subjects() != train.subjects());
  CHECK_THROWS_AS(split_by_subject(d, 1.0, 5), ArgumentError);
  CHECK_THROWS_AS(split_by_subject(d, 0.0, 5), ArgumentError);
  Dataset one = d;
  for (auto& r : one.rows) r.subject = "only";
  CHECK_THROWS_AS(split_by_subject(one, 0.5, 5), ArgumentError);
}

TEST_CASE("synthetic pairs at independence pass a chi-square test") {
  auto spec = pair_spec(0.0, 4);
  spec.samples = 20000;
  const auto d = synth_sample(spec);
  const auto u = spec.unaries();
  const auto pa = level_probs(*spec.fixed_feature, u[0]), pb = level_probs(*spec.fixed_feature, u[1]);
  const auto emp = empirical(d, 4, 4);
  // cell probabilities are known, nothing is estimated: df = 16 - 1
  // chi2 quantile 0.99 at df 15 = 30.57791416689249
  double chi = 0.0;
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) {
      const double e = pa[i] * pb[j] * spec.samples;
      const double o = emp[i * 4 + j] * spec.samples;
      chi += (o - e) * (o - e) / e;
    }
  CHECK(chi < 30.57791416689249);
}

TEST_CASE("synthetic binary pair at theta 5 fills the diagonal") {
  auto spec = pair_spec(5.0, 2);
  spec.samples = 50000;
  const auto emp = empirical(synth_sample(spec), 2, 2);
  CHECK(std::abs(emp[0] + emp[3] - 2 * 0.3771485107465208627) < 0.01);
}

TEST_CASE("synthetic frequencies converge to the joint table") {
  auto spec = pair_spec(2.0, 3);
  spec.samples = 100000;
  const auto emp = empirical(synth_sample(spec), 3, 3);
  const auto u = spec.unaries();
  const auto t = pairwise_joint_table(*spec.fixed_feature, u[0], u[1], 2.0);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      const double p = t.at(i, j);
      CHECK(std::abs(emp[i * 3 + j] - p) <= 3.0 * std::sqrt(p * (1 - p) / spec.samples));
    }
}

TEST_CASE("synthetic generation is seed deterministic") {
  auto spec = pair_spec(-2.0, 3);
  spec.fixed_feature.reset();
  spec.nodes[0].beta = {0.7};
  spec.feature_noise = 0.3;
  const auto a = serialize(synth_sample(spec));
  CHECK(serialize(synth_sample(spec)) == a);
  spec.seed = 2;
  CHECK(serialize(synth_sample(spec)) != a);
  const auto d = synth_sample(spec);
  CHECK(d.subjects().size() == 10);
  CHECK(d.rows.size() == 1000);
}

TEST_CASE("synth spec validation and JSON round trip") {
  auto spec = pair_spec(1.5, 3);
  spec.nodes.push_back({"c", {0.0}, {0.2}, 1.3});
  const auto dir = testing::scratch_dir("synth_spec");
  save_synth_spec(spec, dir / "s.json");
  const auto back = load_synth_spec(dir / "s.json");
  CHECK(back.nodes.size() == 3);
  CHECK(back.nodes[2].sigma == 1.3);
  CHECK(back.edges[0].theta == 1.5);
  CHECK(back.fixed_feature == spec.fixed_feature);
  CHECK(serialize(synth_sample(back)) == serialize(synth_sample(spec)));

  auto shared = spec;
  shared.edges.push_back({"b", "c", 1.0});
  CHECK_THROWS_AS(validate_synth_spec(shared), ConfigError);
  auto unknown = spec;
  unknown.edges[0].s = "zz";
  CHECK_THROWS_AS(validate_synth_spec(unknown), ConfigError);
  auto unordered = spec;
  unordered.nodes[0].thresholds = {0.5, 0.1};
  CHECK_THROWS_AS(validate_synth_spec(unordered), ConfigError);
}
