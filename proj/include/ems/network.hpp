#pragma once

// Dense feed-forward networks with explicit forward/backward passes,
// per-layer freezing, target-network updates and lossless text storage.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <random>
#include <span>
#include <string_view>
#include <vector>

namespace ems::nn {

enum class Activation { linear, tanh, sigmoid, relu };

std::string_view to_string(Activation a);
Activation parse_activation(std::string_view name);

struct Layer {
  std::size_t in = 0;
  std::size_t out = 0;
  std::vector<double> weights;  // input-major: weights[i * out + j]
  std::vector<double> bias;
  Activation activation = Activation::linear;
  bool frozen = false;
};

// Activations of every layer for one batch; acts[0] is the input.
struct ForwardCache {
  std::size_t rows = 0;
  std::vector<std::vector<double>> acts;

  std::span<const double> output() const { return acts.back(); }
};

struct GradientSet {
  std::vector<std::vector<double>> weights;
  std::vector<std::vector<double>> bias;

  void zero();
  void scale(double s);
  double max_abs() const;
};

class DenseNetwork {
 public:
  DenseNetwork() = default;
  // sizes = {input, hidden..., output}
  DenseNetwork(const std::vector<std::size_t>& sizes, Activation hidden, Activation output);

  // U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for hidden layers; the output layer
  // uses U(-output_scale, output_scale).
  void init_uniform(std::mt19937_64& rng, double output_scale = 3e-3);

  std::size_t input_size() const { return layers_.front().in; }
  std::size_t output_size() const { return layers_.back().out; }
  std::size_t layer_count() const { return layers_.size(); }
  std::size_t parameter_count() const;
  std::vector<std::size_t> sizes() const;
  const Layer& layer(std::size_t i) const { return layers_[i]; }
  Layer& layer(std::size_t i) { return layers_[i]; }
  const std::vector<Layer>& layers() const { return layers_; }

  void set_frozen(std::size_t i, bool frozen) { layers_[i].frozen = frozen; }
  void freeze_all_but_output();
  void unfreeze_all();

  std::vector<double> forward(std::span<const double> input) const;
  void forward(std::span<const double> inputs, std::size_t rows, ForwardCache& cache) const;

  GradientSet make_gradients() const;
  // Accumulates the gradients of sum_r <upstream_r, output_r> into grads and
  // optionally writes d/d input (rows x input_size).
  void backward(const ForwardCache& cache, std::span<const double> upstream, GradientSet& grads,
                std::vector<double>* input_grad) const;
  // d/d input only; parameter gradients are not formed.
  void backward_input(const ForwardCache& cache, std::span<const double> upstream,
                      std::vector<double>& input_grad) const;

  // Flat parameter view (layer by layer, weights then bias).
  std::vector<double> parameters() const;
  void set_parameters(std::span<const double> flat);

  bool same_shape(const DenseNetwork& other) const;
  bool operator==(const DenseNetwork& other) const;

  void save(std::ostream& out) const;
  void save(const std::filesystem::path& path) const;
  static DenseNetwork load(std::istream& in, std::string_view source = "<stream>");
  static DenseNetwork load(const std::filesystem::path& path);

 private:
  std::vector<Layer> layers_;
};

// Single-input convenience form: forward then backward.
struct BackwardResult {
  GradientSet grads;
  std::vector<double> input_grad;
};
BackwardResult backward(const DenseNetwork& net, std::span<const double> input,
                        std::span<const double> upstream);

struct UpdateRule {
  enum class Kind { sgd, adam };
  Kind kind = Kind::sgd;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// p -= lr * g on every non-frozen layer.
void apply_update(DenseNetwork& net, const GradientSet& grads, double learning_rate);

// Stateful form of UpdateRule (Adam moments live here).
class Optimizer {
 public:
  Optimizer() = default;
  Optimizer(const DenseNetwork& net, UpdateRule rule);

  void step(DenseNetwork& net, const GradientSet& grads);
  const UpdateRule& rule() const { return rule_; }
  void reset();

 private:
  UpdateRule rule_;
  std::vector<std::vector<double>> m_w_, v_w_, m_b_, v_b_;
  std::size_t t_ = 0;
};

// p' = (1 - tau) p' + tau p
void soft_update(DenseNetwork& target, const DenseNetwork& source, double tau);
void hard_update(DenseNetwork& target, const DenseNetwork& source);

// Backward pass against central differences on random networks of
// input-h1[-h2]-1 shape (tanh hidden, linear/tanh/sigmoid output). The
// relative error is |g - fd| / max(|g|, |fd|, floor).
struct GradCheckOptions {
  std::size_t networks = 100;
  std::size_t max_input = 4;
  std::size_t max_hidden = 16;
  std::size_t max_hidden_layers = 2;
  std::size_t rows = 3;  // batch rows per check
  double step = 1e-5;
  double floor = 1e-4;
  std::uint64_t seed = 1;
};

struct GradCheckResult {
  std::size_t networks = 0;
  std::size_t checked = 0;         // parameter and input partials compared
  double max_rel_error = 0.0;
  std::vector<std::size_t> worst;  // sizes of the worst network
};

GradCheckResult gradient_check(const GradCheckOptions& opt = {});

}  // namespace ems::nn
