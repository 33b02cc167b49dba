#include "ems/network.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>

#include "ems/error.hpp"
#include "ems/simd/kernels.hpp"

namespace ems::nn {
namespace {

constexpr std::string_view kMagic = "ems-dense-network";
constexpr std::string_view kVersion = "v1";

void apply_activation(Activation a, std::vector<double>& y) {
  switch (a) {
    case Activation::linear: return;
    case Activation::tanh: simd::active().tanh_forward(y.size(), y.data()); return;
    case Activation::sigmoid:
      for (double& v : y) v = 1.0 / (1.0 + std::exp(-v));
      return;
    case Activation::relu:
      for (double& v : y) v = v > 0.0 ? v : 0.0;
      return;
  }
}

// g *= f'(x) expressed through the activation output y.
void activation_backward(Activation a, const std::vector<double>& y, std::vector<double>& g) {
  switch (a) {
    case Activation::linear: return;
    case Activation::tanh: simd::active().tanh_backward(g.size(), y.data(), g.data()); return;
    case Activation::sigmoid:
      for (std::size_t k = 0; k < g.size(); ++k) g[k] *= y[k] * (1.0 - y[k]);
      return;
    case Activation::relu:
      for (std::size_t k = 0; k < g.size(); ++k) g[k] = y[k] > 0.0 ? g[k] : 0.0;
      return;
  }
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// Line-oriented token reader that reports positions in errors.
class Reader {
 public:
  Reader(std::istream& in, std::string_view source) : in_(in), source_(source) {}

  std::vector<std::string> next_line(const std::string& expecting) {
    std::string line;
    while (std::getline(in_, line)) {
      ++line_no_;
      std::istringstream ss(line);
      std::vector<std::string> tokens;
      std::string t;
      while (ss >> t) tokens.push_back(t);
      if (!tokens.empty()) return tokens;
    }
    throw fail("unexpected end of file, expected " + expecting);
  }

  ParseError fail(const std::string& msg) const {
    return ParseError(std::string(source_) + ":" + std::to_string(line_no_) + ": " + msg);
  }

  double number(const std::string& token, const std::string& field) const {
    double v = 0.0;
    const auto* end = token.data() + token.size();
    auto [ptr, ec] = std::from_chars(token.data(), end, v);
    if (ec != std::errc() || ptr != end || !std::isfinite(v))
      throw fail("bad number '" + token + "' in " + field);
    return v;
  }

  std::size_t count(const std::string& token, const std::string& field) const {
    std::size_t v = 0;
    const auto* end = token.data() + token.size();
    auto [ptr, ec] = std::from_chars(token.data(), end, v);
    if (ec != std::errc() || ptr != end) throw fail("bad integer '" + token + "' in " + field);
    return v;
  }

 private:
  std::istream& in_;
  std::string_view source_;
  std::size_t line_no_ = 0;
};

void check_same_shape(const DenseNetwork& a, const DenseNetwork& b) {
  if (!a.same_shape(b)) throw Error("networks differ in shape");
}

}  // namespace

std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::linear: return "linear";
    case Activation::tanh: return "tanh";
    case Activation::sigmoid: return "sigmoid";
    case Activation::relu: return "relu";
  }
  return "?";
}

Activation parse_activation(std::string_view name) {
  if (name == "linear") return Activation::linear;
  if (name == "tanh") return Activation::tanh;
  if (name == "sigmoid") return Activation::sigmoid;
  if (name == "relu") return Activation::relu;
  throw Error("unknown activation '" + std::string(name) + "'");
}

void GradientSet::zero() {
  for (auto& w : weights) std::fill(w.begin(), w.end(), 0.0);
  for (auto& b : bias) std::fill(b.begin(), b.end(), 0.0);
}

void GradientSet::scale(double s) {
  for (auto& w : weights)
    for (double& v : w) v *= s;
  for (auto& b : bias)
    for (double& v : b) v *= s;
}

double GradientSet::max_abs() const {
  double m = 0.0;
  for (const auto& w : weights)
    for (double v : w) m = std::max(m, std::abs(v));
  for (const auto& b : bias)
    for (double v : b) m = std::max(m, std::abs(v));
  return m;
}

DenseNetwork::DenseNetwork(const std::vector<std::size_t>& sizes, Activation hidden,
                           Activation output) {
  if (sizes.size() < 2) throw Error("a network needs at least input and output widths");
  for (std::size_t s : sizes)
    if (s == 0) throw Error("layer widths must be positive");
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    Layer layer;
    layer.in = sizes[l];
    layer.out = sizes[l + 1];
    layer.weights.assign(layer.in * layer.out, 0.0);
    layer.bias.assign(layer.out, 0.0);
    layer.activation = l + 2 == sizes.size() ? output : hidden;
    layers_.push_back(std::move(layer));
  }
}

void DenseNetwork::init_uniform(std::mt19937_64& rng, double output_scale) {
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    auto& layer = layers_[l];
    const double bound = l + 1 == layers_.size() ? output_scale : 1.0 / std::sqrt(static_cast<double>(layer.in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (double& w : layer.weights) w = dist(rng);
    for (double& b : layer.bias) b = dist(rng);
  }
}

std::size_t DenseNetwork::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += l.weights.size() + l.bias.size();
  return n;
}

std::vector<std::size_t> DenseNetwork::sizes() const {
  std::vector<std::size_t> s;
  if (layers_.empty()) return s;
  s.push_back(layers_.front().in);
  for (const auto& l : layers_) s.push_back(l.out);
  return s;
}

void DenseNetwork::freeze_all_but_output() {
  for (std::size_t l = 0; l < layers_.size(); ++l) layers_[l].frozen = l + 1 != layers_.size();
}

void DenseNetwork::unfreeze_all() {
  for (auto& l : layers_) l.frozen = false;
}

void DenseNetwork::forward(std::span<const double> inputs, std::size_t rows, ForwardCache& cache) const {
  if (inputs.size() != rows * input_size()) throw Error("forward input has the wrong length");
  const auto& k = simd::active();
  cache.rows = rows;
  cache.acts.resize(layers_.size() + 1);
  cache.acts[0].assign(inputs.begin(), inputs.end());
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& layer = layers_[l];
    auto& y = cache.acts[l + 1];
    y.resize(rows * layer.out);
    k.layer_forward(rows, layer.in, layer.out, cache.acts[l].data(), layer.weights.data(),
                    layer.bias.data(), y.data());
    apply_activation(layer.activation, y);
  }
}

std::vector<double> DenseNetwork::forward(std::span<const double> input) const {
  ForwardCache cache;
  forward(input, 1, cache);
  return cache.acts.back();
}

GradientSet DenseNetwork::make_gradients() const {
  GradientSet g;
  for (const auto& l : layers_) {
    g.weights.emplace_back(l.weights.size(), 0.0);
    g.bias.emplace_back(l.bias.size(), 0.0);
  }
  return g;
}

void DenseNetwork::backward(const ForwardCache& cache, std::span<const double> upstream,
                            GradientSet& grads, std::vector<double>* input_grad) const {
  const std::size_t rows = cache.rows;
  if (upstream.size() != rows * output_size()) throw Error("upstream gradient has the wrong length");
  if (grads.weights.size() != layers_.size()) grads = make_gradients();
  const auto& k = simd::active();
  std::vector<double> delta(upstream.begin(), upstream.end());
  std::vector<double> next;
  for (std::size_t l = layers_.size(); l-- > 0;) {
    const auto& layer = layers_[l];
    activation_backward(layer.activation, cache.acts[l + 1], delta);
    k.layer_backward_params(rows, layer.in, layer.out, cache.acts[l].data(), delta.data(),
                            grads.weights[l].data(), grads.bias[l].data());
    if (l > 0 || input_grad != nullptr) {
      next.resize(rows * layer.in);
      k.layer_backward_input(rows, layer.in, layer.out, delta.data(), layer.weights.data(), next.data());
      delta.swap(next);
    }
  }
  if (input_grad != nullptr) *input_grad = std::move(delta);
}

void DenseNetwork::backward_input(const ForwardCache& cache, std::span<const double> upstream,
                                  std::vector<double>& input_grad) const {
  const std::size_t rows = cache.rows;
  if (upstream.size() != rows * output_size()) throw Error("upstream gradient has the wrong length");
  const auto& k = simd::active();
  std::vector<double> delta(upstream.begin(), upstream.end());
  std::vector<double> next;
  for (std::size_t l = layers_.size(); l-- > 0;) {
    const auto& layer = layers_[l];
    activation_backward(layer.activation, cache.acts[l + 1], delta);
    next.resize(rows * layer.in);
    k.layer_backward_input(rows, layer.in, layer.out, delta.data(), layer.weights.data(), next.data());
    delta.swap(next);
  }
  input_grad = std::move(delta);
}

std::vector<double> DenseNetwork::parameters() const {
  std::vector<double> p;
  p.reserve(parameter_count());
  for (const auto& l : layers_) {
    p.insert(p.end(), l.weights.begin(), l.weights.end());
    p.insert(p.end(), l.bias.begin(), l.bias.end());
  }
  return p;
}

void DenseNetwork::set_parameters(std::span<const double> flat) {
  if (flat.size() != parameter_count()) throw Error("parameter vector has the wrong length");
  std::size_t o = 0;
  for (auto& l : layers_) {
    std::copy_n(flat.begin() + o, l.weights.size(), l.weights.begin());
    o += l.weights.size();
    std::copy_n(flat.begin() + o, l.bias.size(), l.bias.begin());
    o += l.bias.size();
  }
}

bool DenseNetwork::same_shape(const DenseNetwork& other) const {
  if (layers_.size() != other.layers_.size()) return false;
  for (std::size_t l = 0; l < layers_.size(); ++l)
    if (layers_[l].in != other.layers_[l].in || layers_[l].out != other.layers_[l].out) return false;
  return true;
}

bool DenseNetwork::operator==(const DenseNetwork& other) const {
  if (!same_shape(other)) return false;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& a = layers_[l];
    const auto& b = other.layers_[l];
    if (a.activation != b.activation || a.frozen != b.frozen || a.weights != b.weights || a.bias != b.bias)
      return false;
  }
  return true;
}

void DenseNetwork::save(std::ostream& out) const {
  out << kMagic << ' ' << kVersion << '\n';
  out << "layers " << layers_.size() << '\n';
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& layer = layers_[l];
    out << "layer " << l << ' ' << layer.in << ' ' << layer.out << ' ' << to_string(layer.activation)
        << ' ' << (layer.frozen ? 1 : 0) << '\n';
    for (std::size_t i = 0; i < layer.in; ++i) {
      out << 'w';
      for (std::size_t j = 0; j < layer.out; ++j) out << ' ' << format_double(layer.weights[i * layer.out + j]);
      out << '\n';
    }
    out << 'b';
    for (double v : layer.bias) out << ' ' << format_double(v);
    out << '\n';
  }
  out << "end\n";
}

void DenseNetwork::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  save(out);
  if (!out) throw Error("failed writing " + path.string());
}

DenseNetwork DenseNetwork::load(std::istream& in, std::string_view source) {
  Reader r(in, source);
  auto header = r.next_line("header");
  if (header.size() != 2 || header[0] != kMagic || header[1] != kVersion)
    throw r.fail("not an ems-dense-network v1 file");
  auto count_line = r.next_line("layer count");
  if (count_line.size() != 2 || count_line[0] != "layers") throw r.fail("expected 'layers <n>'");
  const std::size_t n = r.count(count_line[1], "layer count");
  if (n == 0) throw r.fail("network has no layers");

  DenseNetwork net;
  for (std::size_t l = 0; l < n; ++l) {
    const std::string where = "layer " + std::to_string(l);
    auto head = r.next_line(where + " header");
    if (head.size() != 6 || head[0] != "layer" || r.count(head[1], where) != l)
      throw r.fail("expected 'layer " + std::to_string(l) + " <in> <out> <activation> <frozen>'");
    Layer layer;
    layer.in = r.count(head[2], where + " input width");
    layer.out = r.count(head[3], where + " output width");
    if (layer.in == 0 || layer.out == 0) throw r.fail(where + " has zero width");
    try {
      layer.activation = parse_activation(head[4]);
    } catch (const Error&) {
      throw r.fail("unknown activation '" + head[4] + "' in " + where);
    }
    if (head[5] != "0" && head[5] != "1") throw r.fail("frozen flag must be 0 or 1 in " + where);
    layer.frozen = head[5] == "1";
    if (!net.layers_.empty() && net.layers_.back().out != layer.in)
      throw r.fail(where + " input width does not match the previous layer");
    layer.weights.reserve(layer.in * layer.out);
    for (std::size_t i = 0; i < layer.in; ++i) {
      const std::string field = where + " weights row " + std::to_string(i);
      auto row = r.next_line(field);
      if (row[0] != "w" || row.size() != layer.out + 1)
        throw r.fail("expected " + std::to_string(layer.out) + " values in " + field);
      for (std::size_t j = 1; j < row.size(); ++j) layer.weights.push_back(r.number(row[j], field));
    }
    auto bias = r.next_line(where + " bias");
    if (bias[0] != "b" || bias.size() != layer.out + 1)
      throw r.fail("expected " + std::to_string(layer.out) + " values in " + where + " bias");
    for (std::size_t j = 1; j < bias.size(); ++j) layer.bias.push_back(r.number(bias[j], where + " bias"));
    net.layers_.push_back(std::move(layer));
  }
  auto tail = r.next_line("'end'");
  if (tail.size() != 1 || tail[0] != "end") throw r.fail("expected 'end'");
  return net;
}

DenseNetwork DenseNetwork::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  return load(in, path.string());
}

BackwardResult backward(const DenseNetwork& net, std::span<const double> input,
                        std::span<const double> upstream) {
  ForwardCache cache;
  net.forward(input, 1, cache);
  BackwardResult out;
  out.grads = net.make_gradients();
  net.backward(cache, upstream, out.grads, &out.input_grad);
  return out;
}

void apply_update(DenseNetwork& net, const GradientSet& grads, double learning_rate) {
  if (grads.weights.size() != net.layer_count()) throw Error("gradient set does not match network");
  const auto& k = simd::active();
  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    auto& layer = net.layer(l);
    if (layer.frozen) continue;
    if (grads.weights[l].size() != layer.weights.size() || grads.bias[l].size() != layer.bias.size())
      throw Error("gradient set does not match network");
    k.axpy(layer.weights.size(), -learning_rate, grads.weights[l].data(), layer.weights.data());
    k.axpy(layer.bias.size(), -learning_rate, grads.bias[l].data(), layer.bias.data());
  }
}

Optimizer::Optimizer(const DenseNetwork& net, UpdateRule rule) : rule_(rule) {
  if (!(rule.learning_rate > 0.0)) throw Error("learning rate must be positive");
  for (const auto& l : net.layers()) {
    m_w_.emplace_back(l.weights.size(), 0.0);
    v_w_.emplace_back(l.weights.size(), 0.0);
    m_b_.emplace_back(l.bias.size(), 0.0);
    v_b_.emplace_back(l.bias.size(), 0.0);
  }
}

void Optimizer::reset() {
  for (auto* group : {&m_w_, &v_w_, &m_b_, &v_b_})
    for (auto& v : *group) std::fill(v.begin(), v.end(), 0.0);
  t_ = 0;
}

void Optimizer::step(DenseNetwork& net, const GradientSet& grads) {
  if (rule_.kind == UpdateRule::Kind::sgd) {
    apply_update(net, grads, rule_.learning_rate);
    return;
  }
  if (m_w_.size() != net.layer_count() || grads.weights.size() != net.layer_count())
    throw Error("optimizer state does not match network");
  ++t_;
  const double t = static_cast<double>(t_);
  const double lr_t = rule_.learning_rate * std::sqrt(1.0 - std::pow(rule_.beta2, t)) /
                      (1.0 - std::pow(rule_.beta1, t));
  const auto& k = simd::active();
  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    auto& layer = net.layer(l);
    if (layer.frozen) continue;
    k.adam(layer.weights.size(), lr_t, rule_.beta1, rule_.beta2, rule_.epsilon, grads.weights[l].data(),
           m_w_[l].data(), v_w_[l].data(), layer.weights.data());
    k.adam(layer.bias.size(), lr_t, rule_.beta1, rule_.beta2, rule_.epsilon, grads.bias[l].data(),
           m_b_[l].data(), v_b_[l].data(), layer.bias.data());
  }
}

void soft_update(DenseNetwork& target, const DenseNetwork& source, double tau) {
  if (!(tau >= 0.0 && tau <= 1.0)) throw Error("tau must lie in [0, 1]");
  check_same_shape(target, source);
  if (tau == 1.0) {
    hard_update(target, source);
    return;
  }
  const auto& k = simd::active();
  for (std::size_t l = 0; l < target.layer_count(); ++l) {
    auto& t = target.layer(l);
    const auto& s = source.layer(l);
    k.lerp(t.weights.size(), tau, s.weights.data(), t.weights.data());
    k.lerp(t.bias.size(), tau, s.bias.data(), t.bias.data());
  }
}

void hard_update(DenseNetwork& target, const DenseNetwork& source) {
  check_same_shape(target, source);
  for (std::size_t l = 0; l < target.layer_count(); ++l) {
    target.layer(l).weights = source.layer(l).weights;
    target.layer(l).bias = source.layer(l).bias;
  }
}

}  // namespace ems::nn

namespace ems::nn {

GradCheckResult gradient_check(const GradCheckOptions& opt) {
  if (opt.networks == 0 || opt.max_input == 0 || opt.max_hidden == 0 || opt.max_hidden_layers == 0 || opt.rows == 0)
    throw Error("gradient check sizes must be positive");
  std::mt19937_64 rng(opt.seed);
  auto pick = [&](std::size_t hi) { return std::uniform_int_distribution<std::size_t>(1, hi)(rng); };
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const Activation outs[] = {Activation::linear, Activation::tanh, Activation::sigmoid};

  GradCheckResult res;
  auto rel = [&](double g, double fd) {
    return std::abs(g - fd) / std::max({std::abs(g), std::abs(fd), opt.floor});
  };
  for (std::size_t n = 0; n < opt.networks; ++n) {
    std::vector<std::size_t> sizes{pick(opt.max_input)};
    const std::size_t hidden_layers = pick(opt.max_hidden_layers);
    for (std::size_t h = 0; h < hidden_layers; ++h) sizes.push_back(pick(opt.max_hidden));
    sizes.push_back(1);
    DenseNetwork net(sizes, Activation::tanh, outs[rng() % 3]);
    net.init_uniform(rng, 1.0);

    const std::size_t in = sizes.front();
    std::vector<double> x(opt.rows * in), up(opt.rows);
    for (auto& v : x) v = u(rng);
    for (auto& v : up) v = u(rng);

    // f = sum_r up_r * y_r
    auto loss = [&](const DenseNetwork& m, const std::vector<double>& xs) {
      ForwardCache c;
      m.forward(xs, opt.rows, c);
      double f = 0.0;
      for (std::size_t r = 0; r < opt.rows; ++r) f += up[r] * c.output()[r];
      return f;
    };

    ForwardCache cache;
    net.forward(x, opt.rows, cache);
    auto grads = net.make_gradients();
    std::vector<double> gx;
    net.backward(cache, up, grads, &gx);

    std::vector<double> g;
    for (std::size_t l = 0; l < net.layer_count(); ++l) {
      g.insert(g.end(), grads.weights[l].begin(), grads.weights[l].end());
      g.insert(g.end(), grads.bias[l].begin(), grads.bias[l].end());
    }
    const auto p = net.parameters();
    auto q = p;
    DenseNetwork probe = net;
    double worst = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      q[i] = p[i] + opt.step;
      probe.set_parameters(q);
      const double f1 = loss(probe, x);
      q[i] = p[i] - opt.step;
      probe.set_parameters(q);
      const double f0 = loss(probe, x);
      q[i] = p[i];
      worst = std::max(worst, rel(g[i], (f1 - f0) / (2.0 * opt.step)));
    }
    for (std::size_t i = 0; i < x.size(); ++i) {
      auto xs = x;
      xs[i] = x[i] + opt.step;
      const double f1 = loss(net, xs);
      xs[i] = x[i] - opt.step;
      const double f0 = loss(net, xs);
      worst = std::max(worst, rel(gx[i], (f1 - f0) / (2.0 * opt.step)));
    }
    res.checked += p.size() + x.size();
    ++res.networks;
    if (worst >= res.max_rel_error) {
      res.max_rel_error = worst;
      res.worst = sizes;
    }
  }
  return res;
}

}  // namespace ems::nn
