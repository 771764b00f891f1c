#pragma once

// Objectives, schedules, Adam, source pretraining and the adversarial
// adaptation loop.

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "vdanlg/autodiff.hpp"
#include "vdanlg/corpus.hpp"
#include "vdanlg/evaluation.hpp"
#include "vdanlg/generator.hpp"

namespace vdanlg::training {

struct TrainConfig {
  std::size_t d_h = 80;
  std::size_t d_z = 16;
  std::size_t dc_hidden = 64;
  std::size_t beam_width = 10;  // K, the over-generation size
  std::size_t top_k = 3;        // k, candidates kept after re-ranking
  std::size_t samples = 1;      // M, latent samples per reconstruction term
  double keep_dropout = 0.70;
  double lr = 0.001;
  double lr_decay = 0.95;
  std::size_t decay_start_epochs = 5;
  std::uint64_t num_steps = 8600;
  std::uint64_t kl_anneal_steps = 2000;
  std::size_t max_epochs = 20;
  std::size_t patience = 3;
  std::size_t max_len = 40;
  double penalty_weight = 1.0;
  double init_scale = 0.08;
  bool use_sc = true;
  bool use_dc = true;
  std::uint64_t seed = 1;

  // Throws std::invalid_argument naming the offending field.
  void validate() const;
  ModelConfig model_config(std::size_t vocab_size) const;
};

// A dialogue act and its delexicalized reference, encoded against a vocab.
struct TrainExample {
  corpus::DialogueAct act;
  corpus::EncodedDa da;
  std::vector<std::string> ref_tokens;
  std::vector<int> ref;  // without EOS
};

TrainExample encode_example(const corpus::Example& ex, const corpus::Vocab& vocab);
std::vector<TrainExample> encode_examples(std::span<const corpus::Example> examples,
                                          const corpus::Vocab& vocab);

// KL(q || p) between diagonal Gaussians given by mean and log-variance.
double kl_gaussians(std::span<const double> q_mu, std::span<const double> q_log_var,
                    std::span<const double> p_mu, std::span<const double> p_log_var);
ad::Var kl_gaussians(const generator::GaussianVars& q,
                     const generator::GaussianVars& p);

struct VaeTerms {
  ad::Var total;
  ad::Var kl;
  ad::Var recon;
};

// total = kl_weight * KL(q(z|d,y) || p(z|d)) + recon, where recon is the
// teacher-forced NLL with h_z drawn from the posterior using the given eps
// (one row per sample; recon is averaged over rows).
VaeTerms vae_loss(ad::Graph& g, const Model& model, const TrainExample& ex,
                  std::span<const ad::Tensor> eps, double kl_weight,
                  const generator::Dropout& dropout = {});
// Draws `samples` eps vectors from N(0, I) and applies dropout with `keep`.
VaeTerms vae_loss(ad::Graph& g, const Model& model, const TrainExample& ex,
                  double kl_weight, std::size_t samples, double keep,
                  std::mt19937_64& rng);

double kl_anneal_weight(std::uint64_t step, std::uint64_t anneal_steps);
double grl_lambda(std::uint64_t step, std::uint64_t num_steps);
// `epoch` is 1-based; the rate is constant through decay_start epochs.
double learning_rate(double base, double decay, std::size_t decay_start,
                     std::size_t epoch);

class NonFiniteGradient : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;
  std::map<std::string, std::pair<ad::Tensor, ad::Tensor>> moments;  // m, v
};

// One bias-corrected Adam update from each parameter's accumulated grad.
// Checks every gradient before touching any parameter.
void adam_step(std::span<ad::Parameter* const> params, AdamState& state,
               double lr);

struct TrainRecord {
  std::string phase;  // pretrain | gen | dc | sc
  std::uint64_t step = 0;
  std::size_t epoch = 0;
  std::size_t example = 0;
  std::optional<double> total, kl, recon, sc_loss, dc_loss;
  std::optional<double> kl_weight, lambda_p;
  std::optional<int> label;  // DC or SC label of the batch, when uniform
  std::size_t batch = 1;
  double lr = 0.0;
};

struct EpochSummary {
  std::string phase;  // pretrain | adapt
  std::size_t epoch = 0;
  double lr = 0.0;
  double mean_loss = 0.0;
  std::optional<double> validation_bleu;
};

// One record per optimizer step, append-only, optionally mirrored to a
// line-delimited stream. Epoch summaries are kept separately.
class TrainLog {
 public:
  TrainLog() = default;
  explicit TrainLog(std::ostream* sink) : sink_(sink) {}

  void append(TrainRecord record);
  void end_epoch(EpochSummary summary);
  const std::vector<TrainRecord>& records() const { return records_; }
  const std::vector<EpochSummary>& epochs() const { return epochs_; }

  static std::string to_json_line(const TrainRecord& r);

 private:
  std::ostream* sink_ = nullptr;
  std::vector<TrainRecord> records_;
  std::vector<EpochSummary> epochs_;
};

using ImprovementHook = std::function<void(const Model&, std::uint64_t steps)>;

struct TrainResult {
  Model model;
  std::uint64_t steps = 0;  // generator steps, continues across runs
  std::size_t epochs = 0;
  double best_bleu = -1.0;  // -1 when no validation set was given
};

// Corpus BLEU of the top re-ranked beam candidate for each example.
double validation_bleu(const Model& model, const corpus::Vocab& vocab,
                       std::span<const TrainExample> examples,
                       const TrainConfig& cfg,
                       const evaluation::PhraseLexicon& lexicon);

// Minimizes vae_loss on the source set, one example per step. With a
// validation set, stops after `patience` epochs without a BLEU improvement
// and returns the best-scoring parameters.
TrainResult pretrain_source(std::span<const TrainExample> train,
                            std::span<const TrainExample> validation,
                            const corpus::Vocab& vocab, const TrainConfig& cfg,
                            TrainLog& log, const ImprovementHook& on_improve = {});

// Counts of what the critics saw, per label.
struct AdaptStats {
  std::uint64_t dc_updates = 0;
  std::uint64_t sc_updates = 0;
  std::uint64_t gen_updates = 0;
  std::array<std::uint64_t, 3> dc_examples{};  // source, target, generated
  std::array<std::uint64_t, 2> sc_pairs{};     // unsimilar, similar
};

struct AdaptResult : TrainResult {
  AdaptStats stats;
};

// The adversarial loop: per target example, a DC step on one source and one
// target pair, a generator step on the target pair, an SC step on
// (target, source), then over-generation, re-ranking and critic steps on the
// top-k generated candidates. An empty target set returns `pretrained`.
AdaptResult adapt(std::span<const TrainExample> source,
                  std::span<const TrainExample> target,
                  std::span<const TrainExample> target_validation,
                  const Model& pretrained, std::uint64_t pretrained_steps,
                  const corpus::Vocab& vocab, const TrainConfig& cfg,
                  TrainLog& log, const ImprovementHook& on_improve = {});

}  // namespace vdanlg::training
