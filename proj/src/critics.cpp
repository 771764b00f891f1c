#include "vdanlg/critics.hpp"

#include <cmath>
#include <stdexcept>

namespace vdanlg::critics {

using ad::Graph;
using ad::Var;

Var sc_logit(Graph& g, const Model& model, const SimilarityPair& pair) {
  if (pair.y1.empty() || pair.y2.empty()) {
    throw std::invalid_argument("sc_score: empty utterance");
  }
  Var r1 = generator::encode_utterance(g, model, pair.y1, {}, "enc").pooled;
  Var r2 = generator::encode_utterance(g, model, pair.y2, {}, "sc.enc").pooled;
  Var features = ad::concat({ad::abs(ad::sub(r1, r2)), ad::mul(r1, r2)});
  return ad::add(ad::matmul(g.param(model.param("sc.w")), features),
                 g.param(model.param("sc.b")));
}

double sc_score(const Model& model, const SimilarityPair& pair) {
  Graph g;
  const double s = sc_logit(g, model, pair).value()[0];
  return s >= 0 ? 1.0 / (1.0 + std::exp(-s)) : std::exp(s) / (1.0 + std::exp(s));
}

Var sc_loss(Graph& g, const Model& model,
            std::span<const SimilarityPair> pairs) {
  if (pairs.empty()) throw std::invalid_argument("sc_loss: empty batch");
  std::vector<Var> losses;
  Var zero = g.constant(ad::Tensor({1}));
  for (const auto& pair : pairs) {
    if (pair.label != 0 && pair.label != 1) {
      throw std::invalid_argument("sc_loss: label must be 0 or 1");
    }
    // Two-way softmax over [0, s] gives sigmoid(s) for label 1.
    Var logits = ad::concat({zero, sc_logit(g, model, pair)});
    losses.push_back(ad::softmax_cross_entropy(
        logits, static_cast<std::size_t>(pair.label)));
  }
  return ad::scale(ad::sum(ad::concat(losses)),
                   1.0 / static_cast<double>(pairs.size()));
}

Var dc_logits(Graph& g, const Model& model, const DomainExample& ex,
              const DomainCriticOptions& opts) {
  auto enc_d = generator::encode_dialogue_act(g, model, ex.da);
  auto enc_y = generator::encode_utterance(g, model, ex.utterance);
  auto post =
      generator::approximate_posterior(g, model, enc_d.pooled, enc_y.pooled);
  Var features = ad::concat({enc_d.pooled, enc_y.pooled, post.mu});
  if (opts.reverse_gradient) {
    features = ad::grad_reverse(features, {opts.lambda_p});
  }
  auto P = [&](const char* name) { return g.param(model.param(name)); };
  Var h1 = ad::relu(ad::add(ad::matmul(P("dc.W1"), features), P("dc.b1")));
  Var h2 = ad::relu(ad::add(ad::matmul(P("dc.W2"), h1), P("dc.b2")));
  return ad::add(ad::matmul(P("dc.W3"), h2), P("dc.b3"));
}

std::vector<double> dc_distribution(const Model& model,
                                    const DomainExample& ex) {
  Graph g;
  Var probs = ad::softmax(dc_logits(g, model, ex, {}));
  const auto v = probs.value().values();
  return {v.begin(), v.end()};
}

Var dc_loss(Graph& g, const Model& model, std::span<const DomainExample> batch,
            const DomainCriticOptions& opts) {
  if (batch.empty()) throw std::invalid_argument("dc_loss: empty batch");
  std::vector<Var> losses;
  for (const auto& ex : batch) {
    losses.push_back(ad::softmax_cross_entropy(
        dc_logits(g, model, ex, opts), static_cast<std::size_t>(ex.label)));
  }
  return ad::scale(ad::sum(ad::concat(losses)),
                   1.0 / static_cast<double>(batch.size()));
}

std::vector<SimilarityPair> similarity_pairs(std::span<const int> target,
                                             std::span<const int> generated,
                                             std::span<const int> source) {
  auto vec = [](std::span<const int> s) { return std::vector<int>(s.begin(), s.end()); };
  return {
      {vec(target), vec(generated), 1},
      {vec(target), vec(source), 0},
      {vec(generated), vec(source), 0},
  };
}

}  // namespace vdanlg::critics
