#include "ccnn/encoder.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#include "ccnn/errors.hpp"

namespace ccnn {
namespace {

int conv_pad(const LayerSpec& s) { return s.padding == Padding::Same ? (s.size - 1) / 2 : 0; }

Shape output_shape(const LayerSpec& spec, Shape in) {
  switch (spec.kind) {
    case LayerKind::Conv: {
      if (spec.units <= 0 || spec.size <= 0) throw ConfigError("conv layer needs positive filters and size");
      if (spec.padding == Padding::Same && spec.size % 2 == 0)
        throw ConfigError("same padding requires an odd filter size");
      const int pad = conv_pad(spec);
      Shape out{spec.units, in.height + 2 * pad - spec.size + 1, in.width + 2 * pad - spec.size + 1};
      if (out.height <= 0 || out.width <= 0)
        throw ConfigError("conv filter of size " + std::to_string(spec.size) + " does not fit a " +
                          std::to_string(in.height) + "x" + std::to_string(in.width) + " input");
      return out;
    }
    case LayerKind::Relu:
      return in;
    case LayerKind::MaxPool: {
      if (spec.size <= 0) throw ConfigError("maxpool window must be positive");
      Shape out{in.channels, in.height / spec.size, in.width / spec.size};
      if (out.height <= 0 || out.width <= 0)
        throw ConfigError("maxpool window larger than its " + std::to_string(in.height) + "x" +
                          std::to_string(in.width) + " input");
      return out;
    }
    case LayerKind::FullyConnected:
      if (spec.units <= 0) throw ConfigError("fc layer needs a positive output count");
      return Shape{spec.units, 1, 1};
  }
  return in;
}

void conv_forward(const Layer& L, const double* in, double* out) {
  const int C = L.in.channels, H = L.in.height, W = L.in.width;
  const int F = L.out.channels, OH = L.out.height, OW = L.out.width;
  const int K = L.spec.size, pad = conv_pad(L.spec);
  for (int f = 0; f < F; ++f) {
    double* o = out + static_cast<std::size_t>(f) * OH * OW;
    std::fill(o, o + OH * OW, L.bias[f]);
    for (int c = 0; c < C; ++c) {
      const double* ic = in + static_cast<std::size_t>(c) * H * W;
      const double* w = L.weights.data() + (static_cast<std::size_t>(f) * C + c) * K * K;
      for (int i = 0; i < K; ++i) {
        const int y0 = std::max(0, pad - i), y1 = std::min(OH, H + pad - i);
        for (int j = 0; j < K; ++j) {
          const double wij = w[i * K + j];
          const int x0 = std::max(0, pad - j), x1 = std::min(OW, W + pad - j);
          for (int y = y0; y < y1; ++y) {
            const double* row = ic + static_cast<std::size_t>(y + i - pad) * W + (j - pad);
            double* orow = o + static_cast<std::size_t>(y) * OW;
            for (int x = x0; x < x1; ++x) orow[x] += wij * row[x];
          }
        }
      }
    }
  }
}

void conv_backward(const Layer& L, const double* in, const double* dout, Layer& g, double* din) {
  const int C = L.in.channels, H = L.in.height, W = L.in.width;
  const int F = L.out.channels, OH = L.out.height, OW = L.out.width;
  const int K = L.spec.size, pad = conv_pad(L.spec);
  for (int f = 0; f < F; ++f) {
    const double* d = dout + static_cast<std::size_t>(f) * OH * OW;
    double sb = 0.0;
    for (int t = 0; t < OH * OW; ++t) sb += d[t];
    g.bias[f] += sb;
    for (int c = 0; c < C; ++c) {
      const double* ic = in + static_cast<std::size_t>(c) * H * W;
      double* dic = din ? din + static_cast<std::size_t>(c) * H * W : nullptr;
      const std::size_t woff = (static_cast<std::size_t>(f) * C + c) * K * K;
      for (int i = 0; i < K; ++i) {
        const int y0 = std::max(0, pad - i), y1 = std::min(OH, H + pad - i);
        for (int j = 0; j < K; ++j) {
          const int x0 = std::max(0, pad - j), x1 = std::min(OW, W + pad - j);
          const double wij = L.weights[woff + i * K + j];
          double acc = 0.0;
          for (int y = y0; y < y1; ++y) {
            const std::size_t irow = static_cast<std::size_t>(y + i - pad) * W + (j - pad);
            const double* drow = d + static_cast<std::size_t>(y) * OW;
            for (int x = x0; x < x1; ++x) acc += drow[x] * ic[irow + x];
            if (dic)
              for (int x = x0; x < x1; ++x) dic[irow + x] += drow[x] * wij;
          }
          g.weights[woff + i * K + j] += acc;
        }
      }
    }
  }
}

void pool_forward(const Layer& L, const double* in, double* out, std::uint32_t* argmax) {
  const int H = L.in.height, W = L.in.width, S = L.spec.size;
  const int OH = L.out.height, OW = L.out.width;
  for (int c = 0; c < L.in.channels; ++c) {
    for (int y = 0; y < OH; ++y) {
      for (int x = 0; x < OW; ++x) {
        double best = -std::numeric_limits<double>::infinity();
        std::uint32_t at = 0;
        for (int i = 0; i < S; ++i) {
          for (int j = 0; j < S; ++j) {
            const std::uint32_t idx =
                static_cast<std::uint32_t>((static_cast<std::size_t>(c) * H + y * S + i) * W + x * S + j);
            if (in[idx] > best) {
              best = in[idx];
              at = idx;
            }
          }
        }
        const std::size_t o = (static_cast<std::size_t>(c) * OH + y) * OW + x;
        out[o] = best;
        argmax[o] = at;
      }
    }
  }
}

void fc_forward(const Layer& L, const double* in, double* out) {
  const std::size_t n = L.in.size();
  for (int o = 0; o < L.out.channels; ++o) {
    const double* w = L.weights.data() + static_cast<std::size_t>(o) * n;
    double acc = L.bias[o];
    for (std::size_t i = 0; i < n; ++i) acc += w[i] * in[i];
    out[o] = acc;
  }
}

void fc_backward(const Layer& L, const double* in, const double* dout, Layer& g, double* din) {
  const std::size_t n = L.in.size();
  for (int o = 0; o < L.out.channels; ++o) {
    const double d = dout[o];
    g.bias[o] += d;
    if (d == 0.0) continue;
    const double* w = L.weights.data() + static_cast<std::size_t>(o) * n;
    double* gw = g.weights.data() + static_cast<std::size_t>(o) * n;
    for (std::size_t i = 0; i < n; ++i) gw[i] += d * in[i];
    if (din)
      for (std::size_t i = 0; i < n; ++i) din[i] += d * w[i];
  }
}

std::string trim(std::string s) {
  auto notspace = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), notspace));
  s.erase(std::find_if(s.rbegin(), s.rend(), notspace).base(), s.end());
  return s;
}

int parse_int(const std::string& s, const std::string& item) {
  try {
    std::size_t used = 0;
    const int v = std::stoi(trim(s), &used);
    if (used != trim(s).size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("bad integer in layer spec '" + item + "'");
  }
}

}  // namespace

std::vector<LayerSpec> parse_layer_specs(const std::string& text) {
  std::vector<std::string> items;
  std::string cur;
  int depth = 0;
  for (char ch : text) {
    if (ch == '(') ++depth;
    if (ch == ')') --depth;
    if (ch == ',' && depth == 0) {
      items.push_back(trim(cur));
      cur.clear();
    } else {
      cur += ch;
    }
  }
  if (!trim(cur).empty()) items.push_back(trim(cur));

  std::vector<LayerSpec> specs;
  for (const auto& item : items) {
    const auto open = item.find('(');
    const std::string name = trim(item.substr(0, open));
    std::vector<std::string> args;
    if (open != std::string::npos) {
      if (item.back() != ')') throw ConfigError("unterminated layer spec '" + item + "'");
      std::stringstream ss(item.substr(open + 1, item.size() - open - 2));
      for (std::string a; std::getline(ss, a, ',');) args.push_back(trim(a));
    }
    if (name == "relu" && args.empty()) {
      specs.push_back(LayerSpec::relu());
    } else if (name == "maxpool" && args.size() <= 1) {
      specs.push_back(LayerSpec::maxpool(args.empty() ? 2 : parse_int(args[0], item)));
    } else if (name == "fc" && args.size() == 1) {
      specs.push_back(LayerSpec::fc(parse_int(args[0], item)));
    } else if (name == "conv" && args.size() == 2) {
      Padding pad = Padding::Same;
      std::string size = args[1];
      if (const auto colon = size.find(':'); colon != std::string::npos) {
        const std::string mode = trim(size.substr(colon + 1));
        if (mode == "valid") pad = Padding::Valid;
        else if (mode != "same") throw ConfigError("unknown padding '" + mode + "'");
        size = size.substr(0, colon);
      }
      specs.push_back(LayerSpec::conv(parse_int(args[0], item), parse_int(size, item), pad));
    } else {
      throw ConfigError("unknown layer spec '" + item + "'");
    }
  }
  return specs;
}

std::string format_layer_specs(std::span<const LayerSpec> specs) {
  std::string out;
  for (const auto& s : specs) {
    if (!out.empty()) out += ',';
    switch (s.kind) {
      case LayerKind::Conv:
        out += "conv(" + std::to_string(s.units) + ',' + std::to_string(s.size) +
               (s.padding == Padding::Valid ? ":valid)" : ")");
        break;
      case LayerKind::Relu: out += "relu"; break;
      case LayerKind::MaxPool: out += "maxpool(" + std::to_string(s.size) + ')'; break;
      case LayerKind::FullyConnected: out += "fc(" + std::to_string(s.units) + ')'; break;
    }
  }
  return out;
}

EncoderParams EncoderParams::passthrough(int feature_dim) {
  if (feature_dim < 1) throw ConfigError("feature_dim must be at least 1");
  EncoderParams p;
  p.input_ = Shape{feature_dim, 1, 1};
  return p;
}

EncoderParams EncoderParams::build(Shape input, std::span<const LayerSpec> specs, std::uint64_t seed) {
  if (input.channels <= 0 || input.height <= 0 || input.width <= 0)
    throw ConfigError("encoder input dimensions must be positive");
  EncoderParams p;
  p.input_ = input;
  std::mt19937_64 rng(seed);
  Shape cur = input;
  for (const auto& spec : specs) {
    Layer layer;
    layer.spec = spec;
    layer.in = cur;
    layer.out = output_shape(spec, cur);
    std::size_t fan_in = 0;
    if (spec.kind == LayerKind::Conv) {
      fan_in = static_cast<std::size_t>(cur.channels) * spec.size * spec.size;
      layer.weights.resize(static_cast<std::size_t>(spec.units) * fan_in);
      layer.bias.assign(spec.units, 0.0);
    } else if (spec.kind == LayerKind::FullyConnected) {
      fan_in = cur.size();
      layer.weights.resize(static_cast<std::size_t>(spec.units) * fan_in);
      layer.bias.assign(spec.units, 0.0);
    }
    if (fan_in > 0) {
      const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
      std::uniform_real_distribution<double> dist(-limit, limit);
      for (auto& w : layer.weights) w = dist(rng);
    }
    cur = layer.out;
    p.layers_.push_back(std::move(layer));
  }
  return p;
}

std::vector<LayerSpec> EncoderParams::default_layer_specs() {
  return {LayerSpec::conv(32, 9), LayerSpec::relu(), LayerSpec::maxpool(2),
          LayerSpec::conv(64, 9), LayerSpec::relu(), LayerSpec::maxpool(2),
          LayerSpec::conv(128, 9), LayerSpec::relu(), LayerSpec::maxpool(2),
          LayerSpec::fc(128)};
}

EncoderParams EncoderParams::default_architecture(Shape input, std::uint64_t seed) {
  const auto specs = default_layer_specs();
  return build(input, specs, seed);
}

int EncoderParams::feature_dim() const {
  return static_cast<int>(layers_.empty() ? input_.size() : layers_.back().out.size());
}

std::vector<LayerSpec> EncoderParams::specs() const {
  std::vector<LayerSpec> out;
  for (const auto& l : layers_) out.push_back(l.spec);
  return out;
}

std::vector<std::span<double>> EncoderParams::blocks() {
  std::vector<std::span<double>> out;
  for (auto& l : layers_) {
    if (l.spec.kind != LayerKind::Conv && l.spec.kind != LayerKind::FullyConnected) continue;
    out.emplace_back(l.weights);
    out.emplace_back(l.bias);
  }
  return out;
}

std::vector<std::span<const double>> EncoderParams::blocks() const {
  std::vector<std::span<const double>> out;
  for (const auto& l : layers_) {
    if (l.spec.kind != LayerKind::Conv && l.spec.kind != LayerKind::FullyConnected) continue;
    out.emplace_back(l.weights);
    out.emplace_back(l.bias);
  }
  return out;
}

std::size_t EncoderParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& b : blocks()) n += b.size();
  return n;
}

EncoderParams EncoderParams::zeros_like() const {
  EncoderParams z = *this;
  for (auto& l : z.layers_) {
    std::fill(l.weights.begin(), l.weights.end(), 0.0);
    std::fill(l.bias.begin(), l.bias.end(), 0.0);
  }
  return z;
}

std::uint64_t ForwardTrace::activation_signature() const {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&h](std::uint64_t v) {
    h ^= v;
    h *= 1099511628211ull;
  };
  for (const auto& a : activations)
    for (double v : a) mix(v > 0.0 ? 1u : 0u);
  for (const auto& p : pool_argmax)
    for (auto v : p) mix(v);
  return h;
}

FeatureVector forward(const ImageTensor& x, const EncoderParams& params, ForwardTrace* trace) {
  if (!(x.shape == params.input_shape())) {
    // A feature vector given in any flat layout is accepted by a passthrough encoder.
    if (!(params.is_passthrough() && x.values.size() == params.input_shape().size()))
      throw ConfigError("input shape " + std::to_string(x.shape.channels) + "x" +
                        std::to_string(x.shape.height) + "x" + std::to_string(x.shape.width) +
                        " does not match encoder input " + std::to_string(params.input_shape().channels) +
                        "x" + std::to_string(params.input_shape().height) + "x" +
                        std::to_string(params.input_shape().width));
  }
  std::vector<double> cur = x.values;
  if (trace) {
    trace->activations.clear();
    trace->pool_argmax.assign(params.layers().size(), {});
  }
  for (std::size_t li = 0; li < params.layers().size(); ++li) {
    const Layer& L = params.layers()[li];
    std::vector<double> next(L.out.size());
    switch (L.spec.kind) {
      case LayerKind::Conv: conv_forward(L, cur.data(), next.data()); break;
      case LayerKind::Relu:
        for (std::size_t i = 0; i < cur.size(); ++i) next[i] = cur[i] > 0.0 ? cur[i] : 0.0;
        break;
      case LayerKind::MaxPool: {
        std::vector<std::uint32_t> argmax(L.out.size());
        pool_forward(L, cur.data(), next.data(), argmax.data());
        if (trace) trace->pool_argmax[li] = std::move(argmax);
        break;
      }
      case LayerKind::FullyConnected: fc_forward(L, cur.data(), next.data()); break;
    }
    if (trace) trace->activations.push_back(std::move(cur));
    cur = std::move(next);
  }
  if (trace) trace->activations.push_back(cur);
  return cur;
}

void backward(const EncoderParams& params, const ForwardTrace& trace, std::span<const double> upstream,
              EncoderParams& grad, std::vector<double>* input_grad) {
  const auto& layers = params.layers();
  if (upstream.size() != static_cast<std::size_t>(params.feature_dim()))
    throw ConfigError("upstream gradient length does not match feature_dim");
  if (trace.activations.size() != layers.size() + 1) throw ConfigError("forward trace does not match encoder");
  if (grad.layers().size() != layers.size()) throw ConfigError("gradient accumulator does not match encoder");

  std::vector<double> d(upstream.begin(), upstream.end());
  for (std::size_t li = layers.size(); li-- > 0;) {
    const Layer& L = layers[li];
    const auto& in = trace.activations[li];
    const bool need_din = li > 0 || input_grad != nullptr;
    std::vector<double> din(need_din ? L.in.size() : 0, 0.0);
    switch (L.spec.kind) {
      case LayerKind::Conv:
        conv_backward(L, in.data(), d.data(), grad.layers()[li], need_din ? din.data() : nullptr);
        break;
      case LayerKind::Relu:
        for (std::size_t i = 0; i < din.size(); ++i) din[i] = in[i] > 0.0 ? d[i] : 0.0;
        break;
      case LayerKind::MaxPool: {
        const auto& argmax = trace.pool_argmax[li];
        for (std::size_t o = 0; o < d.size() && need_din; ++o) din[argmax[o]] += d[o];
        break;
      }
      case LayerKind::FullyConnected:
        fc_backward(L, in.data(), d.data(), grad.layers()[li], need_din ? din.data() : nullptr);
        break;
    }
    d = std::move(din);
  }
  if (input_grad) {
    if (layers.empty()) *input_grad = std::vector<double>(upstream.begin(), upstream.end());
    else *input_grad = std::move(d);
  }
}

EncoderGradient backward(const ImageTensor& x, const EncoderParams& params, std::span<const double> upstream) {
  ForwardTrace trace;
  forward(x, params, &trace);
  EncoderGradient g{params.zeros_like(), {}};
  backward(params, trace, upstream, g.params, &g.input);
  return g;
}

NormalizedImage contrast_normalize(const ImageTensor& x) {
  NormalizedImage out{x, false};
  const auto& v = x.values;
  if (v.empty()) throw ArgumentError("cannot normalize an empty image");
  const double n = static_cast<double>(v.size());
  double mean = 0.0;
  for (double a : v) mean += a;
  mean /= n;
  double var = 0.0;
  for (double a : v) var += (a - mean) * (a - mean);
  const double sd = std::sqrt(var / n);
  const auto [lo_it, hi_it] = std::minmax_element(v.begin(), v.end());
  if (sd == 0.0 || *lo_it == *hi_it) {
    std::fill(out.image.values.begin(), out.image.values.end(), 0.5);
    out.degenerate = true;
    return out;
  }
  const double zlo = (*lo_it - mean) / sd, zhi = (*hi_it - mean) / sd;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double z = (v[i] - mean) / sd;
    out.image.values[i] = (z - zlo) / (zhi - zlo);
  }
  return out;
}

Shape cropped_shape(Shape s, double fraction) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ArgumentError("crop fraction must lie in (0, 1]");
  // The epsilon absorbs representation error, e.g. 0.85 * 100 -> 85.
  auto side = [fraction](int n) { return std::max(1, static_cast<int>(std::floor(fraction * n + 1e-9))); };
  return Shape{s.channels, side(s.height), side(s.width)};
}

namespace {
ImageTensor crop_at(const ImageTensor& x, Shape out, int y0, int x0) {
  ImageTensor r(out.channels, out.height, out.width);
  for (int c = 0; c < out.channels; ++c)
    for (int y = 0; y < out.height; ++y)
      for (int xx = 0; xx < out.width; ++xx) r.at(c, y, xx) = x.at(c, y + y0, xx + x0);
  return r;
}
}  // namespace

ImageTensor random_crop(const ImageTensor& x, double fraction, std::uint64_t seed) {
  const Shape out = cropped_shape(x.shape, fraction);
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> dy(0, x.height() - out.height), dx(0, x.width() - out.width);
  const int y0 = dy(rng);
  const int x0 = dx(rng);
  return crop_at(x, out, y0, x0);
}

ImageTensor center_crop(const ImageTensor& x, double fraction) {
  const Shape out = cropped_shape(x.shape, fraction);
  return crop_at(x, out, (x.height() - out.height) / 2, (x.width() - out.width) / 2);
}

}  // namespace ccnn
