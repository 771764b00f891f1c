#include "vdanlg/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace vdanlg::ad {

namespace {

std::size_t product(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (auto d : shape) {
    n *= d;
  }
  return n;
}

void validate_shape(const std::vector<std::size_t>& shape) {
  if (shape.empty() || shape.size() > 2) {
    throw ShapeError("tensor rank must be 1 or 2, got shape " +
                     shape_string(shape));
  }
  for (auto d : shape) {
    if (d == 0) {
      throw ShapeError("tensor dimensions must be positive, got shape " +
                       shape_string(shape));
    }
  }
}

[[noreturn]] void mismatch(const char* op, const Tensor& a, const Tensor& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " +
                   a.shape_string() + " and " + b.shape_string());
}

bool is_vector(const Tensor& t) { return t.rank() == 1; }

Graph& graph_of(Var a) {
  if (!a.valid()) {
    throw std::invalid_argument("operation on an unbound Var");
  }
  return a.graph();
}

Graph& graph_of(Var a, Var b) {
  Graph& g = graph_of(a);
  if (&graph_of(b) != &g) {
    throw std::invalid_argument("operands belong to different graphs");
  }
  return g;
}

void accumulate(Tensor& dst, const Tensor& src) {
  auto d = dst.values();
  auto s = src.values();
  for (std::size_t i = 0; i < d.size(); ++i) {
    d[i] += s[i];
  }
}

template <typename Fn>
Var unary(const char* op, Var a, Fn&& forward,
          std::function<double(double x, double y)> derivative) {
  Graph& g = graph_of(a);
  Tensor out = a.value();
  for (auto& v : out.values()) {
    v = forward(v);
  }
  return g.record(op, std::move(out), {a.id()},
                  [derivative](Graph& g, std::size_t self) {
                    const std::size_t in = g.input(self, 0);
                    const auto x = g.value(in).values();
                    const auto y = g.value(self).values();
                    const auto gy = g.grad(self).values();
                    auto gx = g.grad(in).values();
                    for (std::size_t i = 0; i < gx.size(); ++i) {
                      gx[i] += gy[i] * derivative(x[i], y[i]);
                    }
                  });
}

}  // namespace

std::string shape_string(const std::vector<std::size_t>& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(std::vector<std::size_t> shape, double fill)
    : shape_(std::move(shape)) {
  validate_shape(shape_);
  values_.assign(product(shape_), fill);
}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  validate_shape(shape_);
  if (product(shape_) != values_.size()) {
    throw ShapeError("shape " + ad::shape_string(shape_) + " needs " +
                     std::to_string(product(shape_)) + " values, got " +
                     std::to_string(values_.size()));
  }
}

Tensor Tensor::vector(std::initializer_list<double> values) {
  return vector(std::vector<double>(values));
}

Tensor Tensor::vector(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor({n}, std::move(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols,
                      std::vector<double> values) {
  return Tensor({rows, cols}, std::move(values));
}

void Tensor::fill(double v) { std::fill(values_.begin(), values_.end(), v); }

bool Tensor::all_finite() const {
  return std::all_of(values_.begin(), values_.end(),
                     [](double v) { return std::isfinite(v); });
}

std::string Tensor::shape_string() const {
  return vdanlg::ad::shape_string(shape_);
}

// ---------------------------------------------------------------------------
// ParamStore

ParamStore::ParamStore(const ParamStore& other) { *this = other; }

ParamStore& ParamStore::operator=(const ParamStore& other) {
  if (this == &other) return *this;
  params_.clear();
  for (const auto& [name, p] : other.params_) {
    params_.emplace(name, std::make_unique<Parameter>(*p));
  }
  return *this;
}

Parameter& ParamStore::add(const std::string& name,
                           std::vector<std::size_t> shape) {
  return add(name, Tensor(std::move(shape)));
}

Parameter& ParamStore::add(const std::string& name, Tensor value) {
  if (params_.count(name)) {
    throw std::invalid_argument("duplicate parameter name: " + name);
  }
  auto p = std::make_unique<Parameter>();
  p->name = name;
  p->grad = Tensor(value.shape());
  p->value = std::move(value);
  auto& ref = *p;
  params_.emplace(name, std::move(p));
  return ref;
}

Parameter& ParamStore::get(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) {
    throw std::out_of_range("unknown parameter: " + name);
  }
  return *it->second;
}

const Parameter& ParamStore::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) {
    throw std::out_of_range("unknown parameter: " + name);
  }
  return *it->second;
}

bool ParamStore::contains(const std::string& name) const {
  return params_.count(name) != 0;
}

std::vector<Parameter*> ParamStore::with_prefix(const std::string& prefix) {
  std::vector<Parameter*> out;
  for (auto& [name, p] : params_) {
    if (name.compare(0, prefix.size(), prefix) == 0) {
      out.push_back(p.get());
    }
  }
  return out;
}

std::vector<Parameter*> ParamStore::all() {
  std::vector<Parameter*> out;
  out.reserve(params_.size());
  for (auto& [name, p] : params_) out.push_back(p.get());
  return out;
}

std::vector<const Parameter*> ParamStore::all() const {
  std::vector<const Parameter*> out;
  out.reserve(params_.size());
  for (const auto& [name, p] : params_) out.push_back(p.get());
  return out;
}

void ParamStore::zero_grad() {
  for (auto& [name, p] : params_) p->grad.fill(0.0);
}

void ParamStore::init_uniform(std::mt19937_64& rng, double scale) {
  std::uniform_real_distribution<double> dist(-scale, scale);
  for (auto& [name, p] : params_) {
    for (auto& v : p->value.values()) v = dist(rng);
  }
}

// ---------------------------------------------------------------------------
// Graph

const Tensor& Var::value() const { return graph_->value(id_); }
const Tensor& Var::grad() const { return graph_->grad(id_); }

Var Graph::record(const char* op, Tensor value,
                  std::vector<std::size_t> inputs, BackwardFn backward) {
  Node node;
  node.op = op;
  node.value = std::move(value);
  node.inputs = std::move(inputs);
  node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Graph::constant(Tensor value) {
  return record("constant", std::move(value), {}, nullptr);
}

Var Graph::param(const Parameter& p) {
  auto it = param_nodes_.find(&p);
  if (it != param_nodes_.end()) {
    return Var(this, it->second);
  }
  Var v = record("param", p.value, {}, nullptr);
  nodes_[v.id()].param = &p;
  param_nodes_.emplace(&p, v.id());
  return v;
}

void Graph::backward(Var loss) {
  if (&loss.graph() != this) {
    throw std::invalid_argument("backward: loss belongs to another graph");
  }
  if (loss.value().size() != 1) {
    throw ShapeError("backward: loss must be a scalar, got shape " +
                     loss.value().shape_string());
  }
  if (backward_done_) {
    throw std::logic_error("backward: graph already differentiated");
  }
  backward_done_ = true;
  for (std::size_t i = 0; i <= loss.id(); ++i) {
    nodes_[i].grad = Tensor(nodes_[i].value.shape());
  }
  nodes_[loss.id()].grad[0] = 1.0;
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (node.param != nullptr) {
      if (node.param->grad.empty()) {
        node.param->grad = Tensor(node.param->value.shape());
      }
      accumulate(node.param->grad, node.grad);
    } else if (node.backward) {
      // No nodes are recorded during backward, so `node` stays valid.
      node.backward(*this, i);
    }
  }
}

// ---------------------------------------------------------------------------
// Primitives

Var matmul(Var a, Var b) {
  Graph& g = graph_of(a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.rank() != 2 || B.rows() != A.cols()) mismatch("matmul", A, B);
  const std::size_t m = A.rows(), n = A.cols(), p = B.cols();
  Tensor out = is_vector(B) ? Tensor({m}) : Tensor({m, p});
  const double* ad = A.data().data();
  const double* bd = B.data().data();
  double* od = out.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = ad + i * n;
    double* orow = od + i * p;
    for (std::size_t k = 0; k < n; ++k) {
      const double aik = arow[k];
      const double* brow = bd + k * p;
      for (std::size_t j = 0; j < p; ++j) orow[j] += aik * brow[j];
    }
  }
  return g.record("matmul", std::move(out), {a.id(), b.id()},
                  [m, n, p](Graph& g, std::size_t self) {
                    const std::size_t ia = g.input(self, 0);
                    const std::size_t ib = g.input(self, 1);
                    const double* ad = g.value(ia).data().data();
                    const double* bd = g.value(ib).data().data();
                    const double* gd = g.grad(self).data().data();
                    double* gad = g.grad(ia).data().data();
                    double* gbd = g.grad(ib).data().data();
                    for (std::size_t i = 0; i < m; ++i) {
                      const double* grow = gd + i * p;
                      const double* arow = ad + i * n;
                      double* garow = gad + i * n;
                      for (std::size_t k = 0; k < n; ++k) {
                        const double* brow = bd + k * p;
                        double* gbrow = gbd + k * p;
                        double acc = 0.0;
                        const double aik = arow[k];
                        for (std::size_t j = 0; j < p; ++j) {
                          acc += grow[j] * brow[j];
                          gbrow[j] += aik * grow[j];
                        }
                        garow[k] += acc;
                      }
                    }
                  });
}

Var add(Var a, Var b) {
  Graph& g = graph_of(a, b);
  if (!a.value().same_shape(b.value())) mismatch("add", a.value(), b.value());
  Tensor out = a.value();
  accumulate(out, b.value());
  return g.record("add", std::move(out), {a.id(), b.id()},
                  [](Graph& g, std::size_t self) {
                    accumulate(g.grad(g.input(self, 0)), g.grad(self));
                    accumulate(g.grad(g.input(self, 1)), g.grad(self));
                  });
}

Var sub(Var a, Var b) {
  Graph& g = graph_of(a, b);
  if (!a.value().same_shape(b.value())) mismatch("sub", a.value(), b.value());
  Tensor out = a.value();
  auto o = out.values();
  auto bv = b.value().values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] -= bv[i];
  return g.record("sub", std::move(out), {a.id(), b.id()},
                  [](Graph& g, std::size_t self) {
                    accumulate(g.grad(g.input(self, 0)), g.grad(self));
                    auto gb = g.grad(g.input(self, 1)).values();
                    auto gy = g.grad(self).values();
                    for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= gy[i];
                  });
}

Var mul(Var a, Var b) {
  Graph& g = graph_of(a, b);
  if (!a.value().same_shape(b.value())) mismatch("mul", a.value(), b.value());
  Tensor out = a.value();
  auto o = out.values();
  auto bv = b.value().values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] *= bv[i];
  return g.record("mul", std::move(out), {a.id(), b.id()},
                  [](Graph& g, std::size_t self) {
                    const std::size_t ia = g.input(self, 0);
                    const std::size_t ib = g.input(self, 1);
                    auto av = g.value(ia).values();
                    auto bv = g.value(ib).values();
                    auto gy = g.grad(self).values();
                    auto ga = g.grad(ia).values();
                    auto gb = g.grad(ib).values();
                    for (std::size_t i = 0; i < gy.size(); ++i) {
                      ga[i] += gy[i] * bv[i];
                      gb[i] += gy[i] * av[i];
                    }
                  });
}

Var scale(Var a, double factor) {
  Graph& g = graph_of(a);
  Tensor out = a.value();
  for (auto& v : out.values()) v *= factor;
  return g.record("scale", std::move(out), {a.id()},
                  [factor](Graph& g, std::size_t self) {
                    auto gx = g.grad(g.input(self, 0)).values();
                    auto gy = g.grad(self).values();
                    for (std::size_t i = 0; i < gx.size(); ++i) {
                      gx[i] += factor * gy[i];
                    }
                  });
}

Var add_scalar(Var a, double offset) {
  Graph& g = graph_of(a);
  Tensor out = a.value();
  for (auto& v : out.values()) v += offset;
  return g.record("add_scalar", std::move(out), {a.id()},
                  [](Graph& g, std::size_t self) {
                    accumulate(g.grad(g.input(self, 0)), g.grad(self));
                  });
}

Var concat(std::initializer_list<Var> parts) {
  return concat(std::span<const Var>(parts.begin(), parts.size()));
}

Var concat(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  Graph& g = graph_of(parts.front());
  std::vector<double> values;
  std::vector<std::size_t> inputs;
  for (const Var& p : parts) {
    if (&graph_of(p) != &g) {
      throw std::invalid_argument("concat: operands from different graphs");
    }
    if (!is_vector(p.value())) {
      throw ShapeError("concat: expected vectors, got " +
                       p.value().shape_string());
    }
    const auto v = p.value().values();
    values.insert(values.end(), v.begin(), v.end());
    inputs.push_back(p.id());
  }
  return g.record("concat", Tensor::vector(std::move(values)),
                  std::move(inputs), [](Graph& g, std::size_t self) {
                    auto gy = g.grad(self).values();
                    std::size_t offset = 0;
                    for (std::size_t k = 0; k < g.num_inputs(self); ++k) {
                      auto gx = g.grad(g.input(self, k)).values();
                      for (std::size_t i = 0; i < gx.size(); ++i) {
                        gx[i] += gy[offset + i];
                      }
                      offset += gx.size();
                    }
                  });
}

Var slice(Var a, std::size_t offset, std::size_t length) {
  Graph& g = graph_of(a);
  const Tensor& x = a.value();
  if (!is_vector(x) || length == 0 || offset + length > x.size()) {
    throw ShapeError("slice: range [" + std::to_string(offset) + ", " +
                     std::to_string(offset + length) + ") outside " +
                     x.shape_string());
  }
  std::vector<double> values(x.data().begin() + offset,
                             x.data().begin() + offset + length);
  return g.record("slice", Tensor::vector(std::move(values)), {a.id()},
                  [offset](Graph& g, std::size_t self) {
                    auto gx = g.grad(g.input(self, 0)).values();
                    auto gy = g.grad(self).values();
                    for (std::size_t i = 0; i < gy.size(); ++i) {
                      gx[offset + i] += gy[i];
                    }
                  });
}

Var sigmoid(Var a) {
  return unary(
      "sigmoid", a,
      [](double x) {
        if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var tanh(Var a) {
  return unary(
      "tanh", a, [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

Var relu(Var a) {
  return unary(
      "relu", a, [](double x) { return x > 0 ? x : 0.0; },
      [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

Var exp(Var a) {
  return unary(
      "exp", a, [](double x) { return std::exp(x); },
      [](double, double y) { return y; });
}

Var abs(Var a) {
  return unary(
      "abs", a, [](double x) { return std::fabs(x); },
      [](double x, double) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); });
}

Var sum(Var a) {
  Graph& g = graph_of(a);
  double total = 0.0;
  for (double v : a.value().values()) total += v;
  return g.record("sum", Tensor::scalar(total), {a.id()},
                  [](Graph& g, std::size_t self) {
                    const double gy = g.grad(self)[0];
                    for (auto& v : g.grad(g.input(self, 0)).values()) v += gy;
                  });
}

Var stack(std::span<const Var> rows) {
  if (rows.empty()) throw ShapeError("stack: no inputs");
  Graph& g = graph_of(rows.front());
  const std::size_t d = rows.front().value().size();
  std::vector<double> values;
  values.reserve(rows.size() * d);
  std::vector<std::size_t> inputs;
  for (const Var& r : rows) {
    if (&graph_of(r) != &g) {
      throw std::invalid_argument("stack: operands from different graphs");
    }
    if (!is_vector(r.value()) || r.value().size() != d) {
      mismatch("stack", rows.front().value(), r.value());
    }
    const auto v = r.value().values();
    values.insert(values.end(), v.begin(), v.end());
    inputs.push_back(r.id());
  }
  return g.record("stack", Tensor::matrix(rows.size(), d, std::move(values)),
                  std::move(inputs), [d](Graph& g, std::size_t self) {
                    auto gy = g.grad(self).values();
                    for (std::size_t k = 0; k < g.num_inputs(self); ++k) {
                      auto gx = g.grad(g.input(self, k)).values();
                      for (std::size_t i = 0; i < d; ++i) {
                        gx[i] += gy[k * d + i];
                      }
                    }
                  });
}

Var transpose(Var a) {
  Graph& g = graph_of(a);
  const Tensor& x = a.value();
  if (x.rank() != 2) {
    throw ShapeError("transpose: expected a matrix, got " + x.shape_string());
  }
  const std::size_t r = x.rows(), c = x.cols();
  Tensor out({c, r});
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) out.at(j, i) = x.at(i, j);
  }
  return g.record("transpose", std::move(out), {a.id()},
                  [r, c](Graph& g, std::size_t self) {
                    Tensor& gx = g.grad(g.input(self, 0));
                    const Tensor& gy = g.grad(self);
                    for (std::size_t i = 0; i < r; ++i) {
                      for (std::size_t j = 0; j < c; ++j) {
                        gx.at(i, j) += gy.at(j, i);
                      }
                    }
                  });
}

Var mean_pool(Var a) {
  Graph& g = graph_of(a);
  const Tensor& x = a.value();
  if (x.rank() != 2) {
    throw ShapeError("mean_pool: expected [L x d], got " + x.shape_string());
  }
  const std::size_t L = x.rows(), d = x.cols();
  Tensor out({d});
  for (std::size_t i = 0; i < L; ++i) {
    for (std::size_t j = 0; j < d; ++j) out[j] += x.at(i, j);
  }
  for (auto& v : out.values()) v /= static_cast<double>(L);
  return g.record("mean_pool", std::move(out), {a.id()},
                  [L, d](Graph& g, std::size_t self) {
                    Tensor& gx = g.grad(g.input(self, 0));
                    const Tensor& gy = g.grad(self);
                    const double inv = 1.0 / static_cast<double>(L);
                    for (std::size_t i = 0; i < L; ++i) {
                      for (std::size_t j = 0; j < d; ++j) {
                        gx.at(i, j) += gy[j] * inv;
                      }
                    }
                  });
}

Var lookup(Var table, std::size_t row) {
  Graph& g = graph_of(table);
  const Tensor& t = table.value();
  if (t.rank() != 2 || row >= t.rows()) {
    throw ShapeError("lookup: row " + std::to_string(row) + " outside " +
                     t.shape_string());
  }
  const std::size_t d = t.cols();
  std::vector<double> values(t.data().begin() + row * d,
                             t.data().begin() + (row + 1) * d);
  return g.record("lookup", Tensor::vector(std::move(values)), {table.id()},
                  [row, d](Graph& g, std::size_t self) {
                    auto gt = g.grad(g.input(self, 0)).values();
                    auto gy = g.grad(self).values();
                    for (std::size_t j = 0; j < d; ++j) gt[row * d + j] += gy[j];
                  });
}

std::vector<double> log_softmax(std::span<const double> logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (double v : logits) total += std::exp(v - mx);
  const double lse = mx + std::log(total);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
  return out;
}

Var softmax(Var a) {
  Graph& g = graph_of(a);
  const Tensor& x = a.value();
  if (!is_vector(x)) {
    throw ShapeError("softmax: expected a vector, got " + x.shape_string());
  }
  auto lp = log_softmax(x.values());
  std::vector<double> probs(lp.size());
  for (std::size_t i = 0; i < lp.size(); ++i) probs[i] = std::exp(lp[i]);
  return g.record("softmax", Tensor::vector(std::move(probs)), {a.id()},
                  [](Graph& g, std::size_t self) {
                    auto y = g.value(self).values();
                    auto gy = g.grad(self).values();
                    auto gx = g.grad(g.input(self, 0)).values();
                    double dot = 0.0;
                    for (std::size_t i = 0; i < y.size(); ++i) {
                      dot += y[i] * gy[i];
                    }
                    for (std::size_t i = 0; i < y.size(); ++i) {
                      gx[i] += y[i] * (gy[i] - dot);
                    }
                  });
}

Var softmax_cross_entropy(Var logits, std::size_t target) {
  Graph& g = graph_of(logits);
  const Tensor& x = logits.value();
  if (!is_vector(x) || target >= x.size()) {
    throw ShapeError("softmax_cross_entropy: target " +
                     std::to_string(target) + " outside logits " +
                     x.shape_string());
  }
  auto lp = log_softmax(x.values());
  Tensor loss = Tensor::scalar(-lp[target]);
  return g.record("softmax_cross_entropy", std::move(loss),
                  {logits.id()},
                  [target, lp = std::move(lp)](Graph& g, std::size_t self) {
                    const double gy = g.grad(self)[0];
                    auto gx = g.grad(g.input(self, 0)).values();
                    for (std::size_t i = 0; i < gx.size(); ++i) {
                      const double p = std::exp(lp[i]);
                      gx[i] += gy * (p - (i == target ? 1.0 : 0.0));
                    }
                  });
}

Var dropout(Var a, double keep, std::mt19937_64& rng) {
  if (!(keep > 0.0 && keep <= 1.0)) {
    throw std::invalid_argument("dropout: keep probability must be in (0, 1]");
  }
  if (keep == 1.0) return a;
  Graph& g = graph_of(a);
  std::bernoulli_distribution coin(keep);
  std::vector<double> mask(a.value().size());
  for (auto& m : mask) m = coin(rng) ? 1.0 / keep : 0.0;
  Tensor out = a.value();
  auto o = out.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] *= mask[i];
  return g.record("dropout", std::move(out), {a.id()},
                  [mask = std::move(mask)](Graph& g, std::size_t self) {
                    auto gx = g.grad(g.input(self, 0)).values();
                    auto gy = g.grad(self).values();
                    for (std::size_t i = 0; i < gx.size(); ++i) {
                      gx[i] += gy[i] * mask[i];
                    }
                  });
}

Var grad_reverse(Var a, GradReverseConfig cfg) {
  if (!(cfg.lambda_p >= 0.0 && cfg.lambda_p <= 1.0)) {
    throw std::invalid_argument("grad_reverse: lambda_p must be in [0, 1]");
  }
  Graph& g = graph_of(a);
  const double factor = -cfg.lambda_p;
  return g.record("grad_reverse", a.value(), {a.id()},
                  [factor](Graph& g, std::size_t self) {
                    auto gx = g.grad(g.input(self, 0)).values();
                    auto gy = g.grad(self).values();
                    for (std::size_t i = 0; i < gx.size(); ++i) {
                      gx[i] += factor * gy[i];
                    }
                  });
}

// ---------------------------------------------------------------------------
// Gradient check

namespace {

double evaluate(const GraphBuilder& f) {
  Graph g;
  Var loss = f(g);
  if (loss.value().size() != 1) {
    throw ShapeError("check_gradients: builder must return a scalar, got " +
                     loss.value().shape_string());
  }
  return loss.value()[0];
}

}  // namespace

GradCheckResult check_gradients(const GraphBuilder& f,
                                std::span<Parameter* const> params, double eps,
                                double expected_scale) {
  if (!(eps >= 1e-6 && eps <= 1e-3)) {
    throw std::invalid_argument("check_gradients: eps must be in [1e-6, 1e-3]");
  }
  for (Parameter* p : params) p->grad = Tensor(p->value.shape());
  {
    Graph g;
    Var loss = f(g);
    const double again = evaluate(f);
    if (loss.value()[0] != again) {
      throw NonDeterministicGraph(
          "check_gradients: two evaluations of the same graph differ; seed "
          "or disable dropout and sampling");
    }
    g.backward(loss);
  }
  GradCheckResult result;
  for (Parameter* p : params) {
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double original = p->value[i];
      p->value[i] = original + eps;
      const double up = evaluate(f);
      p->value[i] = original - eps;
      const double down = evaluate(f);
      p->value[i] = original;
      const double numeric = expected_scale * (up - down) / (2.0 * eps);
      const double analytic = p->grad[i];
      const double denom =
          std::max({std::fabs(analytic), std::fabs(numeric), 1e-8});
      const double err = std::fabs(analytic - numeric) / denom;
      if (result.worst_param.empty() || err > result.max_rel_error) {
        result.max_rel_error = err;
        result.worst_param = p->name;
        result.worst_index = i;
        result.analytic = analytic;
        result.numeric = numeric;
      }
    }
  }
  return result;
}

}  // namespace vdanlg::ad
