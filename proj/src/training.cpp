#include "vdanlg/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "json.hpp"
#include "vdanlg/critics.hpp"

namespace vdanlg::training {

using ad::Graph;
using ad::Tensor;
using ad::Var;

namespace {

void require(bool ok, const char* key, const std::string& rule) {
  if (!ok) throw std::invalid_argument(std::string("invalid value for ") + key + ": " + rule);
}

}  // namespace

void TrainConfig::validate() const {
  require(d_h > 0, "d_h", "must be positive");
  require(d_z > 0, "d_z", "must be positive");
  require(dc_hidden > 0, "dc_hidden", "must be positive");
  require(beam_width > 0, "beam_width", "must be positive");
  require(top_k > 0, "top_k", "must be positive");
  require(samples > 0, "samples", "must be positive");
  require(keep_dropout > 0 && keep_dropout <= 1, "keep_dropout", "must be in (0, 1]");
  require(lr > 0 && std::isfinite(lr), "lr", "must be positive");
  require(lr_decay > 0 && lr_decay <= 1, "lr_decay", "must be in (0, 1]");
  require(num_steps > 0, "num_steps", "must be positive");
  require(max_epochs > 0, "max_epochs", "must be positive");
  require(patience > 0, "patience", "must be positive");
  require(max_len > 0, "max_len", "must be positive");
  require(penalty_weight >= 0 && std::isfinite(penalty_weight), "penalty_weight",
          "must be non-negative");
  require(init_scale > 0 && std::isfinite(init_scale), "init_scale", "must be positive");
}

ModelConfig TrainConfig::model_config(std::size_t vocab_size) const {
  return {vocab_size, d_h, d_z, d_h, dc_hidden};
}

TrainExample encode_example(const corpus::Example& ex, const corpus::Vocab& vocab) {
  TrainExample out;
  out.act = ex.da;
  out.da = corpus::encode_dialogue_act(ex.da, vocab);
  out.ref_tokens = ex.reference.tokens;
  out.ref = vocab.ids(ex.reference.tokens);
  return out;
}

std::vector<TrainExample> encode_examples(std::span<const corpus::Example> examples,
                                          const corpus::Vocab& vocab) {
  std::vector<TrainExample> out;
  out.reserve(examples.size());
  for (const auto& ex : examples) out.push_back(encode_example(ex, vocab));
  return out;
}

double kl_gaussians(std::span<const double> q_mu, std::span<const double> q_log_var,
                    std::span<const double> p_mu, std::span<const double> p_log_var) {
  const std::size_t n = q_mu.size();
  if (q_log_var.size() != n || p_mu.size() != n || p_log_var.size() != n) {
    throw ad::ShapeError("kl_gaussians: dimensions " + std::to_string(n) + ", " +
                         std::to_string(q_log_var.size()) + ", " +
                         std::to_string(p_mu.size()) + ", " +
                         std::to_string(p_log_var.size()) + " differ");
  }
  double kl = 0;
  for (std::size_t j = 0; j < n; ++j) {
    const double d = q_mu[j] - p_mu[j];
    kl += 0.5 * (p_log_var[j] - q_log_var[j] +
                 (std::exp(q_log_var[j]) + d * d) / std::exp(p_log_var[j]) - 1.0);
  }
  return kl;
}

Var kl_gaussians(const generator::GaussianVars& q, const generator::GaussianVars& p) {
  Var diff = ad::sub(q.mu, p.mu);
  Var ratio = ad::mul(ad::add(ad::exp(q.log_var), ad::mul(diff, diff)),
                      ad::exp(ad::scale(p.log_var, -1.0)));
  Var terms = ad::add_scalar(ad::add(ad::sub(p.log_var, q.log_var), ratio), -1.0);
  return ad::scale(ad::sum(terms), 0.5);
}

VaeTerms vae_loss(Graph& g, const Model& model, const TrainExample& ex,
                  std::span<const Tensor> eps, double kl_weight,
                  const generator::Dropout& dropout) {
  if (eps.empty()) throw std::invalid_argument("vae_loss: no latent samples");
  auto enc_d = generator::encode_dialogue_act(g, model, ex.da, dropout);
  auto enc_y = generator::encode_utterance(g, model, ex.ref, dropout);
  auto post = generator::approximate_posterior(g, model, enc_d.pooled, enc_y.pooled);
  auto pri = generator::prior(g, model, enc_d.pooled);
  auto mem = generator::prepare_attention(g, model, enc_d.states);

  std::vector<int> target = ex.ref;
  target.push_back(corpus::kEos);
  std::vector<Var> recons;
  for (const Tensor& e : eps) {
    Var h_e = generator::project_latent(g, model, generator::sample_latent(g, post, e));
    recons.push_back(generator::decoder_nll(g, model, mem, h_e, target, dropout));
  }
  VaeTerms out;
  out.recon = recons.size() == 1
                  ? recons[0]
                  : ad::scale(ad::sum(ad::concat(recons)),
                              1.0 / static_cast<double>(recons.size()));
  out.kl = kl_gaussians(post, pri);
  out.total = ad::add(ad::scale(out.kl, kl_weight), out.recon);
  return out;
}

VaeTerms vae_loss(Graph& g, const Model& model, const TrainExample& ex,
                  double kl_weight, std::size_t samples, double keep,
                  std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<Tensor> eps;
  for (std::size_t s = 0; s < samples; ++s) {
    Tensor e({model.config().d_z});
    for (auto& v : e.values()) v = normal(rng);
    eps.push_back(std::move(e));
  }
  return vae_loss(g, model, ex, eps, kl_weight, {keep, &rng});
}

double kl_anneal_weight(std::uint64_t step, std::uint64_t anneal_steps) {
  if (anneal_steps == 0) return 1.0;
  return std::min(1.0, static_cast<double>(step) / static_cast<double>(anneal_steps));
}

double grl_lambda(std::uint64_t step, std::uint64_t num_steps) {
  if (num_steps == 0) throw std::invalid_argument("grl_lambda: num_steps must be positive");
  const double p = static_cast<double>(step) / static_cast<double>(num_steps);
  return 2.0 / (1.0 + std::exp(-10.0 * p)) - 1.0;
}

double learning_rate(double base, double decay, std::size_t decay_start,
                     std::size_t epoch) {
  const std::size_t k = epoch > decay_start ? epoch - decay_start : 0;
  return base * std::pow(decay, static_cast<double>(k));
}

void adam_step(std::span<ad::Parameter* const> params, AdamState& state, double lr) {
  for (const auto* p : params) {
    const auto grad = p->grad.values();
    for (std::size_t i = 0; i < grad.size(); ++i) {
      if (!std::isfinite(grad[i])) {
        throw NonFiniteGradient("non-finite gradient " + std::to_string(grad[i]) +
                                " in parameter " + p->name + " at index " +
                                std::to_string(i));
      }
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (auto* p : params) {
    auto [it, fresh] = state.moments.try_emplace(p->name);
    auto& [m, v] = it->second;
    if (fresh) {
      m = Tensor(p->value.shape());
      v = Tensor(p->value.shape());
    }
    const auto grad = p->grad.values();
    auto value = p->value.values();
    for (std::size_t i = 0; i < grad.size(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * grad[i];
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * grad[i] * grad[i];
      value[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + state.eps);
    }
  }
}

std::string TrainLog::to_json_line(const TrainRecord& r) {
  nlohmann::ordered_json j;
  j["phase"] = r.phase;
  j["step"] = r.step;
  j["epoch"] = r.epoch;
  j["example"] = r.example;
  j["batch"] = r.batch;
  j["lr"] = r.lr;
  auto put = [&j](const char* key, const std::optional<double>& v) {
    if (v) j[key] = *v;
  };
  put("total", r.total);
  put("kl", r.kl);
  put("recon", r.recon);
  put("sc_loss", r.sc_loss);
  put("dc_loss", r.dc_loss);
  put("kl_weight", r.kl_weight);
  put("lambda_p", r.lambda_p);
  if (r.label) j["label"] = *r.label;
  return j.dump();
}

void TrainLog::append(TrainRecord record) {
  if (sink_ != nullptr) *sink_ << to_json_line(record) << '\n';
  records_.push_back(std::move(record));
}

void TrainLog::end_epoch(EpochSummary summary) { epochs_.push_back(std::move(summary)); }

double validation_bleu(const Model& model, const corpus::Vocab& vocab,
                       std::span<const TrainExample> examples, const TrainConfig& cfg,
                       const evaluation::PhraseLexicon& lexicon) {
  std::vector<evaluation::Tokens> cands, refs;
  for (const auto& ex : examples) {
    auto ranked = evaluation::rerank(
        generator::beam_search(model, vocab, ex.da, cfg.beam_width, cfg.max_len),
        ex.act, cfg.penalty_weight, lexicon);
    cands.push_back(ranked.empty() ? evaluation::Tokens{} : ranked.front().tokens.tokens);
    refs.push_back(ex.ref_tokens);
  }
  return evaluation::bleu(cands, refs);
}

namespace {

// Tracks the best validation score and decides when to stop.
class EarlyStopping {
 public:
  EarlyStopping(std::size_t patience, bool enabled)
      : patience_(patience), enabled_(enabled) {}

  // Returns true when `bleu` is a new best.
  bool observe(double bleu) {
    if (bleu > best_) {
      best_ = bleu;
      stale_ = 0;
      return true;
    }
    ++stale_;
    return false;
  }
  bool should_stop() const { return enabled_ && stale_ >= patience_; }
  double best() const { return best_; }

 private:
  std::size_t patience_;
  bool enabled_;
  std::size_t stale_ = 0;
  double best_ = -1.0;
};

std::vector<std::size_t> shuffled_order(std::size_t n, std::mt19937_64& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

}  // namespace

TrainResult pretrain_source(std::span<const TrainExample> train,
                            std::span<const TrainExample> validation,
                            const corpus::Vocab& vocab, const TrainConfig& cfg,
                            TrainLog& log, const ImprovementHook& on_improve) {
  if (train.empty()) throw std::invalid_argument("pretrain_source: empty source dataset");
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  Model model = Model::initialized(cfg.model_config(vocab.size()), rng, cfg.init_scale);
  const auto params = model.generator_params();
  const auto lexicon = evaluation::default_lexicon();
  AdamState adam;
  EarlyStopping stopping(cfg.patience, !validation.empty());

  TrainResult result;
  std::uint64_t steps = 0;
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const double lr = learning_rate(cfg.lr, cfg.lr_decay, cfg.decay_start_epochs, epoch);
    double loss_sum = 0;
    for (std::size_t idx : shuffled_order(train.size(), rng)) {
      model.params().zero_grad();
      Graph g;
      const double w = kl_anneal_weight(steps, cfg.kl_anneal_steps);
      const VaeTerms terms =
          vae_loss(g, model, train[idx], w, cfg.samples, cfg.keep_dropout, rng);
      g.backward(terms.total);
      adam_step(params, adam, lr);
      ++steps;
      TrainRecord rec;
      rec.phase = "pretrain";
      rec.step = steps;
      rec.epoch = epoch;
      rec.example = idx;
      rec.lr = lr;
      rec.total = terms.total.value()[0];
      rec.kl = terms.kl.value()[0];
      rec.recon = terms.recon.value()[0];
      rec.kl_weight = w;
      loss_sum += *rec.total;
      log.append(std::move(rec));
    }
    EpochSummary summary{"pretrain", epoch, lr,
                         loss_sum / static_cast<double>(train.size()), std::nullopt};
    result.epochs = epoch;
    if (!validation.empty()) {
      const double bleu = validation_bleu(model, vocab, validation, cfg, lexicon);
      summary.validation_bleu = bleu;
      if (stopping.observe(bleu)) {
        result.model = model;
        result.steps = steps;
        result.best_bleu = bleu;
        if (on_improve) on_improve(model, steps);
      }
    }
    log.end_epoch(summary);
    if (stopping.should_stop()) break;
  }
  if (validation.empty()) {
    result.model = std::move(model);
    result.steps = steps;
    if (on_improve) on_improve(result.model, steps);
  }
  return result;
}

AdaptResult adapt(std::span<const TrainExample> source,
                  std::span<const TrainExample> target,
                  std::span<const TrainExample> target_validation,
                  const Model& pretrained, std::uint64_t pretrained_steps,
                  const corpus::Vocab& vocab, const TrainConfig& cfg, TrainLog& log,
                  const ImprovementHook& on_improve) {
  AdaptResult result;
  result.model = pretrained;
  result.steps = pretrained_steps;
  if (target.empty()) return result;
  cfg.validate();
  if (pretrained.config().vocab_size != vocab.size()) {
    throw std::invalid_argument("adapt: pretrained model does not match vocabulary");
  }
  const bool critics = cfg.use_dc || cfg.use_sc;
  if (critics && source.empty()) {
    throw std::invalid_argument("adapt: critics need a nonempty source dataset");
  }

  std::mt19937_64 rng(cfg.seed);
  Model model = pretrained;
  const auto gen_params = model.generator_params();
  const auto dc_params = model.domain_critic_params();
  const auto sc_params = model.similarity_critic_params();
  AdamState gen_adam, dc_adam, sc_adam;
  const auto lexicon = evaluation::default_lexicon();
  EarlyStopping stopping(cfg.patience, !target_validation.empty());
  std::uint64_t steps = pretrained_steps;
  std::uint64_t dc_steps = 0;
  std::uint64_t opt_steps = 0;
  AdaptStats& stats = result.stats;

  std::size_t epoch = 0;
  std::size_t example = 0;
  double lr = cfg.lr;
  auto base_record = [&](const char* phase, std::size_t batch) {
    TrainRecord rec;
    rec.phase = phase;
    rec.step = ++opt_steps;
    rec.epoch = epoch;
    rec.example = example;
    rec.batch = batch;
    rec.lr = lr;
    return rec;
  };

  // Reversed DC gradients on the shared parameters wait here and join the
  // next generator step, so lambda_p weighs them against the generator loss
  // under one optimizer state.
  std::map<std::string, Tensor> pending;
  std::vector<ad::Parameter*> dc_head;
  for (auto* p : dc_params) {
    if (!Model::is_shared_with_domain_critic(p->name)) dc_head.push_back(p);
  }

  auto dc_update = [&](const std::vector<critics::DomainExample>& batch) {
    const double lambda = grl_lambda(dc_steps, cfg.num_steps);
    model.params().zero_grad();
    Graph g;
    Var loss = critics::dc_loss(g, model, batch, {lambda, true});
    g.backward(loss);
    adam_step(dc_head, dc_adam, lr);
    for (auto* p : dc_params) {
      if (!Model::is_shared_with_domain_critic(p->name)) continue;
      auto [it, fresh] = pending.try_emplace(p->name, p->grad);
      if (fresh) continue;
      for (std::size_t i = 0; i < p->grad.size(); ++i) it->second[i] += p->grad[i];
    }
    ++dc_steps;
    ++stats.dc_updates;
    for (const auto& ex : batch) ++stats.dc_examples[static_cast<std::size_t>(ex.label)];
    TrainRecord rec = base_record("dc", batch.size());
    rec.dc_loss = loss.value()[0];
    rec.lambda_p = lambda;
    if (std::all_of(batch.begin(), batch.end(),
                    [&](const auto& ex) { return ex.label == batch.front().label; })) {
      rec.label = static_cast<int>(batch.front().label);
    }
    log.append(std::move(rec));
  };

  auto sc_update = [&](const std::vector<critics::SimilarityPair>& pairs) {
    model.params().zero_grad();
    Graph g;
    Var loss = critics::sc_loss(g, model, pairs);
    g.backward(loss);
    adam_step(sc_params, sc_adam, lr);
    ++stats.sc_updates;
    for (const auto& p : pairs) ++stats.sc_pairs[static_cast<std::size_t>(p.label)];
    TrainRecord rec = base_record("sc", pairs.size());
    rec.sc_loss = loss.value()[0];
    if (std::all_of(pairs.begin(), pairs.end(),
                    [&](const auto& p) { return p.label == pairs.front().label; })) {
      rec.label = pairs.front().label;
    }
    log.append(std::move(rec));
  };

  std::uniform_int_distribution<std::size_t> pick_source(
      0, source.empty() ? 0 : source.size() - 1);
  using critics::DomainLabel;

  for (epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    lr = learning_rate(cfg.lr, cfg.lr_decay, cfg.decay_start_epochs, epoch);
    double loss_sum = 0;
    for (std::size_t ti : shuffled_order(target.size(), rng)) {
      example = ti;
      const TrainExample& tgt = target[ti];
      // Drawn whether or not critics run, so the data order matches across
      // critic settings.
      const TrainExample* src = source.empty() ? nullptr : &source[pick_source(rng)];

      if (cfg.use_dc) {
        dc_update({{src->da, src->ref, DomainLabel::Source},
                   {tgt.da, tgt.ref, DomainLabel::Target}});
      }

      {
        model.params().zero_grad();
        Graph g;
        const double w = kl_anneal_weight(steps, cfg.kl_anneal_steps);
        const VaeTerms terms =
            vae_loss(g, model, tgt, w, cfg.samples, cfg.keep_dropout, rng);
        g.backward(terms.total);
        for (const auto& [name, grad] : pending) {
          Tensor& into = model.params().get(name).grad;
          for (std::size_t i = 0; i < grad.size(); ++i) into[i] += grad[i];
        }
        pending.clear();
        adam_step(gen_params, gen_adam, lr);
        ++steps;
        ++stats.gen_updates;
        TrainRecord rec = base_record("gen", 1);
        rec.total = terms.total.value()[0];
        rec.kl = terms.kl.value()[0];
        rec.recon = terms.recon.value()[0];
        rec.kl_weight = w;
        loss_sum += *rec.total;
        log.append(std::move(rec));
      }

      if (cfg.use_sc) sc_update({{tgt.ref, src->ref, 0}});
      if (!critics) continue;

      auto ranked = evaluation::rerank(
          generator::beam_search(model, vocab, tgt.da, cfg.beam_width, cfg.max_len),
          tgt.act, cfg.penalty_weight, lexicon);
      std::erase_if(ranked, [](const auto& c) { return c.tokens.indices.empty(); });
      if (ranked.size() > cfg.top_k) ranked.resize(cfg.top_k);
      for (const auto& cand : ranked) {
        const std::vector<int>& y_g = cand.tokens.indices;
        if (cfg.use_dc) dc_update({{tgt.da, y_g, DomainLabel::Generated}});
        if (cfg.use_sc) sc_update({{y_g, src->ref, 0}, {tgt.ref, y_g, 1}});
      }
    }

    EpochSummary summary{"adapt", epoch, lr,
                         loss_sum / static_cast<double>(target.size()), std::nullopt};
    result.epochs = epoch;
    if (!target_validation.empty()) {
      const double bleu = validation_bleu(model, vocab, target_validation, cfg, lexicon);
      summary.validation_bleu = bleu;
      if (stopping.observe(bleu)) {
        result.model = model;
        result.steps = steps;
        result.best_bleu = bleu;
        if (on_improve) on_improve(model, steps);
      }
    }
    log.end_epoch(summary);
    if (stopping.should_stop()) break;
  }
  if (target_validation.empty()) {
    result.model = std::move(model);
    result.steps = steps;
    if (on_improve) on_improve(result.model, steps);
  }
  return result;
}

}  // namespace vdanlg::training
