#pragma once

// Reverse-mode automatic differentiation over dense 64-bit tensors.
//
// A Graph records every operation applied to its Vars on a tape. Calling
// Graph::backward on a scalar Var walks the tape in reverse and accumulates
// adjoints; adjoints reaching a Parameter leaf are added into
// Parameter::grad. Tensors are rank 1 (column vectors) or rank 2 (row-major
// matrices).

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <map>
#include <memory>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace vdanlg::ad {

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);
  Tensor(std::vector<std::size_t> shape, std::vector<double> values);

  static Tensor vector(std::initializer_list<double> values);
  static Tensor vector(std::vector<double> values);
  static Tensor matrix(std::size_t rows, std::size_t cols,
                       std::vector<double> values);
  static Tensor scalar(double value) { return vector({value}); }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }
  std::size_t rows() const { return shape_.empty() ? 0 : shape_[0]; }
  std::size_t cols() const { return shape_.size() == 2 ? shape_[1] : 1; }

  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }
  double& at(std::size_t r, std::size_t c) { return values_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const {
    return values_[r * cols() + c];
  }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  std::vector<double>& data() { return values_; }
  const std::vector<double>& data() const { return values_; }

  void fill(double v);
  bool all_finite() const;
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  std::string shape_string() const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> values_;
};

std::string shape_string(const std::vector<std::size_t>& shape);

// `grad` is an accumulation buffer written by Graph::backward; it is mutable
// so read-only models can still be bound into graphs.
struct Parameter {
  std::string name;
  Tensor value;
  mutable Tensor grad;
};

// Named parameter tensors. Addresses are stable for the store's lifetime, and
// iteration is in lexicographic name order so anything derived from it is
// deterministic.
class ParamStore {
 public:
  ParamStore() = default;
  ParamStore(const ParamStore& other);
  ParamStore& operator=(const ParamStore& other);
  ParamStore(ParamStore&&) noexcept = default;
  ParamStore& operator=(ParamStore&&) noexcept = default;

  Parameter& add(const std::string& name, std::vector<std::size_t> shape);
  Parameter& add(const std::string& name, Tensor value);
  Parameter& get(const std::string& name);
  const Parameter& get(const std::string& name) const;
  bool contains(const std::string& name) const;
  std::size_t size() const { return params_.size(); }

  std::vector<Parameter*> with_prefix(const std::string& prefix);
  std::vector<Parameter*> all();
  std::vector<const Parameter*> all() const;

  void zero_grad();
  // Uniform in [-scale, scale].
  void init_uniform(std::mt19937_64& rng, double scale);

 private:
  std::map<std::string, std::unique_ptr<Parameter>> params_;
};

class Graph;

// Handle to a node on a Graph tape.
class Var {
 public:
  Var() = default;
  Var(Graph* graph, std::size_t id) : graph_(graph), id_(id) {}

  Graph& graph() const { return *graph_; }
  std::size_t id() const { return id_; }
  bool valid() const { return graph_ != nullptr; }
  const Tensor& value() const;
  const Tensor& grad() const;

 private:
  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

struct GradReverseConfig {
  double lambda_p = 1.0;
};

class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, std::size_t)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor value);
  // Leaf bound to a parameter; repeated calls for the same parameter return
  // the same node.
  Var param(const Parameter& p);

  // Seeds d(loss)/d(loss) = 1 and propagates adjoints. Parameter adjoints
  // are added into Parameter::grad (not cleared first).
  void backward(Var loss);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  Tensor& grad(std::size_t id) { return nodes_[id].grad; }
  const Tensor& grad(std::size_t id) const { return nodes_[id].grad; }
  std::size_t input(std::size_t id, std::size_t k) const {
    return nodes_[id].inputs[k];
  }
  std::size_t num_inputs(std::size_t id) const {
    return nodes_[id].inputs.size();
  }
  std::size_t size() const { return nodes_.size(); }
  bool backward_done() const { return backward_done_; }

  Var record(const char* op, Tensor value, std::vector<std::size_t> inputs,
             BackwardFn backward);

 private:
  struct Node {
    const char* op = "";
    Tensor value;
    Tensor grad;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    const Parameter* param = nullptr;
  };

  // Deque keeps references returned by value() valid as the tape grows.
  std::deque<Node> nodes_;
  std::map<const Parameter*, std::size_t> param_nodes_;
  bool backward_done_ = false;
};

// Primitive operators. Rank-1 tensors act as column vectors.

// [m x n] * [n] -> [m]; [m x n] * [n x p] -> [m x p]
Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
Var add_scalar(Var a, double offset);
Var concat(std::span<const Var> parts);
Var concat(std::initializer_list<Var> parts);
Var slice(Var a, std::size_t offset, std::size_t length);
Var sigmoid(Var a);
Var tanh(Var a);
Var relu(Var a);
Var exp(Var a);
Var abs(Var a);
Var sum(Var a);
// Stacks equal-length vectors as the rows of a matrix.
Var stack(std::span<const Var> rows);
Var transpose(Var a);
// Mean over the sequence (row) axis: [L x d] -> [d].
Var mean_pool(Var a);
// Row `row` of a matrix as a vector; adjoint is scattered back into that row.
Var lookup(Var table, std::size_t row);
Var softmax(Var a);
// -log softmax(logits)[target]; computed with log-sum-exp stabilization.
Var softmax_cross_entropy(Var logits, std::size_t target);
// Inverted dropout: kept entries are scaled by 1/keep. keep == 1 is identity.
Var dropout(Var a, double keep, std::mt19937_64& rng);
// Identity forward; backward multiplies the upstream adjoint by -lambda_p.
Var grad_reverse(Var a, GradReverseConfig cfg);

// Numerically stable helpers shared with inference code.
std::vector<double> log_softmax(std::span<const double> logits);

class NonDeterministicGraph : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using GraphBuilder = std::function<Var(Graph&)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

// Compares analytic gradients of the scalar built by `f` against central
// finite differences (f(p+eps) - f(p-eps)) / (2 eps), elementwise over
// `params`. Relative error uses denominator max(|a|, |n|, 1e-8). The
// analytic gradient is compared against expected_scale * numeric, which
// lets callers check graphs routed through grad_reverse (scale -lambda_p).
// Throws NonDeterministicGraph when two evaluations disagree.
GradCheckResult check_gradients(const GraphBuilder& f,
                                std::span<Parameter* const> params, double eps,
                                double expected_scale = 1.0);

}  // namespace vdanlg::ad
