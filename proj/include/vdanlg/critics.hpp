#pragma once

// Text similarity critic (SC) and domain critic (DC).
//
// SC is a Siamese pair classifier: y1 goes through the generator's shared
// BiLSTM, y2 through SC's own BiLSTM ("sc.enc"), and [|r1-r2|; r1*r2] feeds
// a single logistic unit. DC classifies a DA-utterance pair as source,
// target or generated from [h_D; h_Y; mu] (shared encoder and posterior),
// behind a gradient reversal layer and two relu layers.

#include <span>
#include <vector>

#include "vdanlg/autodiff.hpp"
#include "vdanlg/corpus.hpp"
#include "vdanlg/generator.hpp"

namespace vdanlg::critics {

struct SimilarityPair {
  std::vector<int> y1;  // encoded by the shared BiLSTM
  std::vector<int> y2;  // encoded by SC's own BiLSTM
  int label = 0;        // 1 similar, 0 unsimilar
};

enum class DomainLabel { Source = 0, Target = 1, Generated = 2 };

struct DomainExample {
  corpus::EncodedDa da;
  std::vector<int> utterance;
  DomainLabel label = DomainLabel::Source;
};

ad::Var sc_logit(ad::Graph& g, const Model& model, const SimilarityPair& pair);
double sc_score(const Model& model, const SimilarityPair& pair);
// Mean Bernoulli negative log-likelihood over the batch.
ad::Var sc_loss(ad::Graph& g, const Model& model,
                std::span<const SimilarityPair> pairs);

struct DomainCriticOptions {
  double lambda_p = 0.0;
  // When false the gradient reversal layer is left out (reference runs only).
  bool reverse_gradient = true;
};

// Unnormalized 3-way scores; softmax gives the class distribution.
ad::Var dc_logits(ad::Graph& g, const Model& model, const DomainExample& ex,
                  const DomainCriticOptions& opts);
std::vector<double> dc_distribution(const Model& model, const DomainExample& ex);
// Mean 3-way cross-entropy over the batch.
ad::Var dc_loss(ad::Graph& g, const Model& model,
                std::span<const DomainExample> batch,
                const DomainCriticOptions& opts);

// Pair sets for one target example: (y_T, y_G) similar; (y_T, y_S) and
// (y_G, y_S) unsimilar. The first element of each pair is the shared-encoder
// side.
std::vector<SimilarityPair> similarity_pairs(std::span<const int> target,
                                             std::span<const int> generated,
                                             std::span<const int> source);

}  // namespace vdanlg::critics
