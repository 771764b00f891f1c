#include "vdanlg/generator.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace vdanlg {

using ad::Graph;
using ad::Tensor;
using ad::Var;

Model::Model(const ModelConfig& config) : config_(config) {
  const std::size_t V = config.vocab_size, H = config.d_h, Z = config.d_z,
                    E = config.d_e, C = config.dc_hidden;
  if (V == 0 || H == 0 || Z == 0 || E == 0 || C == 0) {
    throw std::invalid_argument("model dimensions must be positive");
  }
  auto& p = params_;
  p.add("embed", {V, H});
  for (const char* enc : {"enc", "sc.enc"}) {
    for (const char* dir : {"fwd", "bwd"}) {
      const std::string base = std::string(enc) + "." + dir;
      p.add(base + ".W", {4 * H, 2 * H});
      p.add(base + ".b", {4 * H});
    }
  }
  for (const char* inf : {"post", "prior"}) {
    const std::string base = inf;
    const std::size_t in = base == "post" ? 2 * H : H;
    p.add(base + ".Wz", {Z, in});
    p.add(base + ".bz", {Z});
    p.add(base + ".Wmu", {Z, Z});
    p.add(base + ".bmu", {Z});
    p.add(base + ".Wsig", {Z, Z});
    p.add(base + ".bsig", {Z});
  }
  p.add("latent.We", {E, Z});
  p.add("latent.be", {E});
  p.add("att.W", {H, H});
  p.add("att.U", {H, H});
  p.add("att.v", {1, H});
  p.add("dec.W", {4 * H, E + 3 * H});
  p.add("dec.Wout", {V, H});
  p.add("dec.bout", {V});
  p.add("dc.W1", {C, 2 * H + Z});
  p.add("dc.b1", {C});
  p.add("dc.W2", {C, C});
  p.add("dc.b2", {C});
  p.add("dc.W3", {3, C});
  p.add("dc.b3", {3});
  p.add("sc.w", {1, 2 * H});
  p.add("sc.b", {1});
}

Model Model::initialized(const ModelConfig& config, std::mt19937_64& rng,
                         double init_scale) {
  Model m(config);
  m.params_.init_uniform(rng, init_scale);
  return m;
}

std::vector<ad::Parameter*> Model::generator_params() {
  std::vector<ad::Parameter*> out;
  for (auto* p : params_.all()) {
    if (p->name.rfind("dc.", 0) != 0 && p->name.rfind("sc.", 0) != 0) {
      out.push_back(p);
    }
  }
  return out;
}

bool Model::is_shared_with_domain_critic(const std::string& name) {
  return name == "embed" || name.rfind("enc.", 0) == 0 ||
         name.rfind("post.", 0) == 0;
}

std::vector<ad::Parameter*> Model::domain_critic_params() {
  std::vector<ad::Parameter*> out;
  for (auto* p : params_.all()) {
    if (p->name.rfind("dc.", 0) == 0 || is_shared_with_domain_critic(p->name)) {
      out.push_back(p);
    }
  }
  return out;
}

std::vector<ad::Parameter*> Model::similarity_critic_params() {
  return params_.with_prefix("sc.");
}

namespace generator {

namespace {

Var P(Graph& g, const Model& m, const std::string& name) {
  return g.param(m.param(name));
}

struct LstmState {
  Var h;
  Var c;
};

LstmState lstm_cell(Graph& g, Var W, Var b, Var x, const LstmState& prev,
                    std::size_t H) {
  Var gates = ad::add(ad::matmul(W, ad::concat({x, prev.h})), b);
  Var i = ad::sigmoid(ad::slice(gates, 0, H));
  Var f = ad::sigmoid(ad::slice(gates, H, H));
  Var o = ad::sigmoid(ad::slice(gates, 2 * H, H));
  Var c_hat = ad::tanh(ad::slice(gates, 3 * H, H));
  Var c = ad::add(ad::mul(f, prev.c), ad::mul(i, c_hat));
  Var h = ad::mul(o, ad::tanh(c));
  (void)g;
  return {h, c};
}

void check_token(int id, const Model& model) {
  if (id < 0 || static_cast<std::size_t>(id) >= model.config().vocab_size) {
    throw std::out_of_range("token id " + std::to_string(id) +
                            " outside vocabulary of size " +
                            std::to_string(model.config().vocab_size));
  }
}

}  // namespace

Var Dropout::apply(Var x) const {
  if (keep >= 1.0 || rng == nullptr) return x;
  return ad::dropout(x, keep, *rng);
}

EncoderOutput encode_sequence(Graph& g, const Model& model,
                              const std::string& prefix,
                              std::span<const Var> inputs) {
  if (inputs.empty()) {
    throw std::invalid_argument("encode_sequence: empty sequence");
  }
  const std::size_t H = model.config().d_h;
  const std::size_t L = inputs.size();
  Var zero = g.constant(Tensor({H}));
  Var Wf = P(g, model, prefix + ".fwd.W"), bf = P(g, model, prefix + ".fwd.b");
  Var Wb = P(g, model, prefix + ".bwd.W"), bb = P(g, model, prefix + ".bwd.b");

  std::vector<Var> forward(L), backward(L);
  LstmState s{zero, zero};
  for (std::size_t i = 0; i < L; ++i) {
    s = lstm_cell(g, Wf, bf, inputs[i], s, H);
    forward[i] = s.h;
  }
  s = {zero, zero};
  for (std::size_t i = L; i-- > 0;) {
    s = lstm_cell(g, Wb, bb, inputs[i], s, H);
    backward[i] = s.h;
  }
  EncoderOutput out;
  out.states.reserve(L);
  for (std::size_t i = 0; i < L; ++i) {
    out.states.push_back(ad::add(forward[i], backward[i]));
  }
  out.pooled = ad::mean_pool(ad::stack(out.states));
  return out;
}

std::vector<Var> embed_tokens(Graph& g, const Model& model,
                              std::span<const int> ids,
                              const Dropout& dropout) {
  Var table = P(g, model, "embed");
  std::vector<Var> out;
  out.reserve(ids.size());
  for (int id : ids) {
    check_token(id, model);
    out.push_back(dropout.apply(ad::lookup(table, static_cast<std::size_t>(id))));
  }
  return out;
}

std::vector<Var> embed_dialogue_act(Graph& g, const Model& model,
                                    const corpus::EncodedDa& da,
                                    const Dropout& dropout) {
  Var table = P(g, model, "embed");
  std::vector<Var> out;
  check_token(da.act, model);
  out.push_back(
      dropout.apply(ad::lookup(table, static_cast<std::size_t>(da.act))));
  for (const auto& [name, value] : da.slots) {
    check_token(name, model);
    check_token(value, model);
    out.push_back(dropout.apply(
        ad::add(ad::lookup(table, static_cast<std::size_t>(name)),
                ad::lookup(table, static_cast<std::size_t>(value)))));
  }
  return out;
}

EncoderOutput encode_dialogue_act(Graph& g, const Model& model,
                                  const corpus::EncodedDa& da,
                                  const Dropout& dropout) {
  const auto inputs = embed_dialogue_act(g, model, da, dropout);
  return encode_sequence(g, model, "enc", inputs);
}

EncoderOutput encode_utterance(Graph& g, const Model& model,
                               std::span<const int> ids,
                               const Dropout& dropout,
                               const std::string& prefix) {
  if (ids.empty()) {
    throw std::invalid_argument("encode_utterance: empty utterance");
  }
  const auto inputs = embed_tokens(g, model, ids, dropout);
  return encode_sequence(g, model, prefix, inputs);
}

namespace {

GaussianVars gaussian_head(Graph& g, const Model& model,
                           const std::string& prefix, Var input) {
  Var hz = ad::relu(ad::add(ad::matmul(P(g, model, prefix + ".Wz"), input),
                            P(g, model, prefix + ".bz")));
  GaussianVars out;
  out.mu = ad::add(ad::matmul(P(g, model, prefix + ".Wmu"), hz),
                   P(g, model, prefix + ".bmu"));
  out.log_var = ad::add(ad::matmul(P(g, model, prefix + ".Wsig"), hz),
                        P(g, model, prefix + ".bsig"));
  return out;
}

}  // namespace

GaussianVars approximate_posterior(Graph& g, const Model& model, Var h_d,
                                   Var h_y) {
  return gaussian_head(g, model, "post", ad::concat({h_d, h_y}));
}

GaussianVars prior(Graph& g, const Model& model, Var h_d) {
  return gaussian_head(g, model, "prior", h_d);
}

Var sample_latent(Graph& g, const GaussianVars& gauss, const Tensor& eps) {
  if (eps.size() != gauss.mu.value().size()) {
    throw ad::ShapeError("sample_latent: eps " + eps.shape_string() +
                         " does not match mu " +
                         gauss.mu.value().shape_string());
  }
  Var sigma = ad::exp(ad::scale(gauss.log_var, 0.5));
  return ad::add(gauss.mu, ad::mul(sigma, g.constant(eps)));
}

Var project_latent(Graph& g, const Model& model, Var h_z) {
  return ad::relu(ad::add(ad::matmul(P(g, model, "latent.We"), h_z),
                          P(g, model, "latent.be")));
}

AttentionMemory prepare_attention(Graph& g, const Model& model,
                                  std::span<const Var> slot_states) {
  if (slot_states.empty()) {
    throw std::invalid_argument("prepare_attention: no slot states");
  }
  AttentionMemory mem;
  mem.states.assign(slot_states.begin(), slot_states.end());
  Var U = P(g, model, "att.U");
  for (const Var& h : mem.states) mem.keys.push_back(ad::matmul(U, h));
  mem.states_t = ad::transpose(ad::stack(mem.states));
  return mem;
}

Var attend_da(Graph& g, const Model& model, const AttentionMemory& mem,
              Var h_prev) {
  Var query = ad::matmul(P(g, model, "att.W"), h_prev);
  Var v = P(g, model, "att.v");
  std::vector<Var> energies;
  energies.reserve(mem.keys.size());
  for (const Var& key : mem.keys) {
    energies.push_back(ad::matmul(v, ad::tanh(ad::add(query, key))));
  }
  Var alpha = ad::softmax(ad::concat(energies));
  return ad::matmul(mem.states_t, alpha);
}

DecoderState initial_decoder_state(Graph& g, const Model& model) {
  Var zero = g.constant(Tensor({model.config().d_h}));
  return {zero, zero, 0};
}

StepOutput decode_step(Graph& g, const Model& model, Var y_embedded, Var h_e,
                       Var d_t, const DecoderState& state) {
  const std::size_t H = model.config().d_h;
  Var gates = ad::matmul(P(g, model, "dec.W"),
                         ad::concat({h_e, d_t, state.h, y_embedded}));
  Var i = ad::sigmoid(ad::slice(gates, 0, H));
  Var f = ad::sigmoid(ad::slice(gates, H, H));
  Var o = ad::sigmoid(ad::slice(gates, 2 * H, H));
  Var c_hat = ad::tanh(ad::slice(gates, 3 * H, H));
  StepOutput out;
  out.state.c = ad::add(ad::mul(f, state.c), ad::mul(i, c_hat));
  out.state.h = ad::mul(o, ad::tanh(out.state.c));
  out.state.step = state.step + 1;
  out.logits = ad::add(ad::matmul(P(g, model, "dec.Wout"), out.state.h),
                       P(g, model, "dec.bout"));
  return out;
}

Var decoder_nll(Graph& g, const Model& model, const AttentionMemory& mem,
                Var h_e, std::span<const int> target, const Dropout& dropout) {
  if (target.empty() || target.back() != corpus::kEos) {
    throw std::invalid_argument("decoder_nll: target must end with EOS");
  }
  for (int id : target) check_token(id, model);
  Var table = P(g, model, "embed");
  DecoderState state = initial_decoder_state(g, model);
  int previous = corpus::kBos;
  std::vector<Var> losses;
  losses.reserve(target.size());
  for (int id : target) {
    Var y = dropout.apply(ad::lookup(table, static_cast<std::size_t>(previous)));
    Var d_t = attend_da(g, model, mem, state.h);
    StepOutput step = decode_step(g, model, y, h_e, d_t, state);
    losses.push_back(
        ad::softmax_cross_entropy(step.logits, static_cast<std::size_t>(id)));
    state = step.state;
    previous = id;
  }
  return ad::sum(ad::concat(losses));
}

Var sequence_log_prob(Graph& g, const Model& model, const corpus::EncodedDa& da,
                      std::span<const int> target, Var h_z) {
  EncoderOutput enc = encode_dialogue_act(g, model, da);
  AttentionMemory mem = prepare_attention(g, model, enc.states);
  Var h_e = project_latent(g, model, h_z);
  return ad::scale(decoder_nll(g, model, mem, h_e, target), -1.0);
}

std::size_t scored_length(const Candidate& c) {
  return c.tokens.indices.size() + (c.finished ? 1 : 0);
}

double normalized_log_prob(const Candidate& c) {
  return c.log_prob /
         static_cast<double>(std::max<std::size_t>(1, scored_length(c)));
}

namespace {

// Decoding context shared by beam and greedy search: the DA encoding, the
// prior-mean latent projection and the attention memory.
struct DecodeContext {
  Graph g;
  const Model& model;
  Var h_e;
  Var table;
  AttentionMemory mem;

  DecodeContext(const Model& m, const corpus::EncodedDa& da) : model(m) {
    EncoderOutput enc = encode_dialogue_act(g, model, da);
    GaussianVars pri = prior(g, model, enc.pooled);
    h_e = project_latent(g, model, pri.mu);
    mem = prepare_attention(g, model, enc.states);
    table = g.param(model.param("embed"));
  }

  StepOutput step(int previous, const DecoderState& state) {
    Var y = ad::lookup(table, static_cast<std::size_t>(previous));
    Var d_t = attend_da(g, model, mem, state.h);
    return decode_step(g, model, y, h_e, d_t, state);
  }
};

Candidate make_candidate(const std::vector<int>& ids, double log_prob,
                         bool finished, const corpus::Vocab& vocab) {
  Candidate c;
  c.tokens.indices = ids;
  c.tokens.tokens = vocab.lookup(ids);
  c.log_prob = log_prob;
  c.finished = finished;
  c.score = normalized_log_prob(c);
  return c;
}

}  // namespace

std::vector<Candidate> beam_search(const Model& model,
                                   const corpus::Vocab& vocab,
                                   const corpus::EncodedDa& da,
                                   std::size_t width, std::size_t max_len) {
  if (width == 0) throw std::invalid_argument("beam_search: width must be >= 1");
  if (vocab.size() != model.config().vocab_size) {
    throw std::invalid_argument("beam_search: vocabulary does not match model");
  }
  DecodeContext ctx(model, da);

  struct Hypothesis {
    std::vector<int> ids;
    double log_prob = 0.0;
    DecoderState state;
    int last = corpus::kBos;
  };
  struct Expansion {
    std::size_t parent;
    int token;
    double log_prob;
  };

  std::vector<Hypothesis> alive(1);
  alive[0].state = initial_decoder_state(ctx.g, model);
  std::vector<Candidate> finished;

  for (std::size_t t = 0; t < max_len && !alive.empty(); ++t) {
    std::vector<StepOutput> outputs;
    std::vector<Expansion> expansions;
    outputs.reserve(alive.size());
    for (std::size_t k = 0; k < alive.size(); ++k) {
      outputs.push_back(ctx.step(alive[k].last, alive[k].state));
      const auto lp = ad::log_softmax(outputs.back().logits.value().values());
      for (std::size_t tok = 0; tok < lp.size(); ++tok) {
        // Continuations whose probability underflows to zero are not
        // hypotheses.
        if (std::exp(lp[tok]) == 0.0) continue;
        expansions.push_back({k, static_cast<int>(tok), alive[k].log_prob + lp[tok]});
      }
    }
    std::stable_sort(expansions.begin(), expansions.end(),
                     [](const Expansion& a, const Expansion& b) {
                       return a.log_prob > b.log_prob;
                     });
    if (expansions.size() > width) expansions.resize(width);

    std::vector<Hypothesis> next;
    for (const auto& e : expansions) {
      const Hypothesis& parent = alive[e.parent];
      if (e.token == corpus::kEos) {
        finished.push_back(make_candidate(parent.ids, e.log_prob, true, vocab));
        continue;
      }
      Hypothesis h;
      h.ids = parent.ids;
      h.ids.push_back(e.token);
      h.log_prob = e.log_prob;
      h.state = outputs[e.parent].state;
      h.last = e.token;
      next.push_back(std::move(h));
    }
    alive = std::move(next);
    if (finished.size() >= width) break;
  }

  std::vector<Candidate> out = std::move(finished);
  if (out.empty()) {
    for (const auto& h : alive) {
      out.push_back(make_candidate(h.ids, h.log_prob, false, vocab));
    }
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const Candidate& a, const Candidate& b) {
                     return normalized_log_prob(a) > normalized_log_prob(b);
                   });
  if (out.size() > width) out.resize(width);
  return out;
}

Candidate greedy_decode(const Model& model, const corpus::Vocab& vocab,
                        const corpus::EncodedDa& da, std::size_t max_len) {
  DecodeContext ctx(model, da);
  DecoderState state = initial_decoder_state(ctx.g, model);
  std::vector<int> ids;
  double log_prob = 0.0;
  int previous = corpus::kBos;
  for (std::size_t t = 0; t < max_len; ++t) {
    StepOutput out = ctx.step(previous, state);
    const auto lp = ad::log_softmax(out.logits.value().values());
    const auto best = static_cast<int>(
        std::max_element(lp.begin(), lp.end()) - lp.begin());
    log_prob += lp[static_cast<std::size_t>(best)];
    if (best == corpus::kEos) {
      return make_candidate(ids, log_prob, true, vocab);
    }
    ids.push_back(best);
    state = out.state;
    previous = best;
  }
  return make_candidate(ids, log_prob, false, vocab);
}

}  // namespace generator

}  // namespace vdanlg
