#pragma once

// The variational generator: a shared BiLSTM encoder for dialogue acts and
// utterances, a posterior approximator q(z|d,y) and an independent prior
// p(z|d), the latent projection h_e, the latent-conditioned decoder cell with
// additive attention over slot encodings, and beam-search decoding.

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "vdanlg/autodiff.hpp"
#include "vdanlg/corpus.hpp"

namespace vdanlg {

struct ModelConfig {
  std::size_t vocab_size = 0;
  std::size_t d_h = 80;
  std::size_t d_z = 16;
  // Width of h_e. Equal to d_h keeps the decoder weight square.
  std::size_t d_e = 80;
  std::size_t dc_hidden = 64;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Every trainable tensor of the generator and both critics, in one store.
// Critic-only tensors live under the reserved prefixes "dc." and "sc.".
class Model {
 public:
  Model() = default;
  // All parameters zero.
  explicit Model(const ModelConfig& config);

  static Model initialized(const ModelConfig& config, std::mt19937_64& rng,
                           double init_scale = 0.08);

  const ModelConfig& config() const { return config_; }
  ad::ParamStore& params() { return params_; }
  const ad::ParamStore& params() const { return params_; }
  const ad::Parameter& param(const std::string& name) const {
    return params_.get(name);
  }

  // Encoder, embedding, posterior, prior, latent projection, attention and
  // decoder.
  std::vector<ad::Parameter*> generator_params();
  // DC head plus the encoder/embedding/posterior tensors it shares.
  std::vector<ad::Parameter*> domain_critic_params();
  // Second BiLSTM and similarity head.
  std::vector<ad::Parameter*> similarity_critic_params();

  // Names of the tensors the domain critic shares with the generator.
  static bool is_shared_with_domain_critic(const std::string& name);

 private:
  ModelConfig config_;
  ad::ParamStore params_;
};

namespace generator {

struct Dropout {
  double keep = 1.0;
  std::mt19937_64* rng = nullptr;

  ad::Var apply(ad::Var x) const;
};

struct EncoderOutput {
  std::vector<ad::Var> states;  // forward + backward, per position
  ad::Var pooled;               // mean over positions
};

// BiLSTM over precomputed input vectors. Tensors are read from
// `<prefix>.fwd.{W,b}` and `<prefix>.bwd.{W,b}`.
EncoderOutput encode_sequence(ad::Graph& g, const Model& model,
                              const std::string& prefix,
                              std::span<const ad::Var> inputs);

std::vector<ad::Var> embed_tokens(ad::Graph& g, const Model& model,
                                  std::span<const int> ids,
                                  const Dropout& dropout = {});

// Act token first, then one vector per slot: embed(name) + embed(value).
std::vector<ad::Var> embed_dialogue_act(ad::Graph& g, const Model& model,
                                        const corpus::EncodedDa& da,
                                        const Dropout& dropout = {});

EncoderOutput encode_dialogue_act(ad::Graph& g, const Model& model,
                                  const corpus::EncodedDa& da,
                                  const Dropout& dropout = {});

EncoderOutput encode_utterance(ad::Graph& g, const Model& model,
                               std::span<const int> ids,
                               const Dropout& dropout = {},
                               const std::string& prefix = "enc");

struct GaussianVars {
  ad::Var mu;
  ad::Var log_var;
};

// h'_z = relu(Wz [h_D; h_Y] + bz); mu = Wmu h'_z + bmu;
// log_var = Wsig h'_z + bsig.
GaussianVars approximate_posterior(ad::Graph& g, const Model& model,
                                   ad::Var h_d, ad::Var h_y);
// Same pipeline over h_D alone, with its own tensors.
GaussianVars prior(ad::Graph& g, const Model& model, ad::Var h_d);

// h_z = mu + exp(0.5 log_var) * eps
ad::Var sample_latent(ad::Graph& g, const GaussianVars& gauss,
                      const ad::Tensor& eps);

// h_e = relu(We h_z + be)
ad::Var project_latent(ad::Graph& g, const Model& model, ad::Var h_z);

// Slot encodings plus their key projections, computed once per DA.
struct AttentionMemory {
  std::vector<ad::Var> states;
  std::vector<ad::Var> keys;  // U_a h_i
  ad::Var states_t;           // [d_h x L]
};

AttentionMemory prepare_attention(ad::Graph& g, const Model& model,
                                  std::span<const ad::Var> slot_states);

// e_i = v . tanh(W_a h_prev + U_a h_i); alpha = softmax(e);
// d_t = sum_i alpha_i h_i.
ad::Var attend_da(ad::Graph& g, const Model& model, const AttentionMemory& mem,
                  ad::Var h_prev);

struct DecoderState {
  ad::Var h;
  ad::Var c;
  std::size_t step = 0;
};

DecoderState initial_decoder_state(ad::Graph& g, const Model& model);

struct StepOutput {
  DecoderState state;
  ad::Var logits;  // softmax(logits) is the next-token distribution
};

// [i; f; o; c~] = [sig; sig; sig; tanh](W [h_e; d_t; h_prev; y_t]);
// c = f*c_prev + i*c~; h = o*tanh(c); logits = Wout h + bout.
StepOutput decode_step(ad::Graph& g, const Model& model, ad::Var y_embedded,
                       ad::Var h_e, ad::Var d_t, const DecoderState& state);

// Teacher-forced negative log-likelihood of `target` (EOS-terminated),
// starting from BOS with a zero decoder state.
ad::Var decoder_nll(ad::Graph& g, const Model& model,
                    const AttentionMemory& mem, ad::Var h_e,
                    std::span<const int> target, const Dropout& dropout = {});

// sum_t log p(y_t | y_<t, z, d). Throws on out-of-vocabulary ids or a
// target that does not end with EOS.
ad::Var sequence_log_prob(ad::Graph& g, const Model& model,
                          const corpus::EncodedDa& da,
                          std::span<const int> target, ad::Var h_z);

struct Candidate {
  corpus::Utterance tokens;  // without BOS/EOS
  double log_prob = 0.0;
  int missing = 0;
  int redundant = 0;
  double score = 0.0;
  bool finished = true;  // false when cut off at max_len without EOS
};

// Number of scored tokens: the emitted tokens plus EOS when finished.
std::size_t scored_length(const Candidate& c);
double normalized_log_prob(const Candidate& c);

// Length-expanding beam search with h_z fixed to the prior mean. Returns at
// most `width` candidates ordered by length-normalized log-probability.
// Finished hypotheses are retired as they emit EOS; if none finishes within
// max_len the truncated ones are returned with finished == false.
std::vector<Candidate> beam_search(const Model& model,
                                   const corpus::Vocab& vocab,
                                   const corpus::EncodedDa& da,
                                   std::size_t width, std::size_t max_len);

// Argmax decoding, used as the width-1 reference.
Candidate greedy_decode(const Model& model, const corpus::Vocab& vocab,
                        const corpus::EncodedDa& da, std::size_t max_len);

}  // namespace generator

// Versioned binary container: header (d_h, d_z, d_e, dc_hidden, vocab hash,
// training step), the vocabulary, then (name, shape, float64 values)
// triples. Round-trips bit-exactly.
struct Checkpoint {
  Model model;
  corpus::Vocab vocab;
  std::uint64_t train_steps = 0;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace vdanlg
