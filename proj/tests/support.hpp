#pragma once

// Shared fixtures: seeded random tensors, a plain-loop LSTM reference, the
// 10-pair toy corpus and a synthetic two-domain corpus with a shared grammar.

#include <random>
#include <string>
#include <vector>

#include "vdanlg/autodiff.hpp"
#include "vdanlg/corpus.hpp"
#include "vdanlg/generator.hpp"

namespace vdanlg::testing {

ad::Tensor random_tensor(std::vector<std::size_t> shape, std::mt19937_64& rng,
                         double scale = 1.0);

using Vec = std::vector<double>;
using Mat = std::vector<Vec>;

Vec matvec(const Mat& W, const Vec& x);
Mat to_mat(const ad::Tensor& t);
Vec to_vec(const ad::Tensor& t);
double sigmoid(double x);

// One LSTM step with gates W [x; h] + b ordered (i, f, o, c~).
void lstm_step(const Mat& W, const Vec& b, const Vec& x, Vec& h, Vec& c);

// Ten DA/reference pairs in one domain.
std::vector<corpus::Example> toy_corpus();

struct TwoDomainCorpus {
  std::vector<corpus::Example> source;
  std::vector<corpus::Example> source_validation;
  std::vector<corpus::Example> target;
  std::vector<corpus::Example> target_validation;
  std::vector<corpus::Example> target_test;
};

// Both domains realize the same act types with the same sentence templates;
// slot names, slot values and a few domain nouns differ.
TwoDomainCorpus two_domain_corpus(std::uint64_t seed, std::size_t n_source,
                                  std::size_t n_target, std::size_t n_validation,
                                  std::size_t n_test);


// log p(ids) under prior-mean decoding, summed over every position of `ids`
// (EOS is an ordinary token here).
double prefix_log_prob(const Model& model, const corpus::EncodedDa& da,
                       std::span<const int> ids);

struct Enumerated {
  std::vector<int> ids;  // without EOS
  double log_prob = 0.0;
};

// Every EOS-terminated sequence with at most max_len tokens including EOS,
// scored step by step from the decoder.
std::vector<Enumerated> enumerate_finished(const Model& model,
                                           const corpus::EncodedDa& da,
                                           std::size_t max_len);

// Highest log_prob / (len + 1); the first in enumeration order wins ties.
Enumerated exhaustive_best(const std::vector<Enumerated>& all);

}  // namespace vdanlg::testing
